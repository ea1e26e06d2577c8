//! Report materialization: the fixed-column CSV, a text summary, an optional
//! JSON dump and one histogram image per subset.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::{EvalReport, HISTOGRAM_BINS};
use crate::imgproc::{save_rgb8, Rgb8};

pub const CSV_COLUMNS: [&str; 7] = ["Method", "Train", "Test", "Imgs test", "mIoU", "Stdv", "75p"];

/// Writes `report.csv`, `summary.txt`, `report.json` and
/// `hist_<subset>.png` files; returns every path written.
pub fn render_report(report: &EvalReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();

    let csv_path = out_dir.join("report.csv");
    {
        let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::Csv {
            path: csv_path.clone(),
            source: e,
        })?;
        w.write_record(CSV_COLUMNS).map_err(|e| Error::Csv {
            path: csv_path.clone(),
            source: e,
        })?;
        for row in &report.rows {
            if row.n_images == 0 {
                continue;
            }
            w.write_record([
                report.method.as_str(),
                report.train_label.as_str(),
                row.test_label.as_str(),
                &row.n_images.to_string(),
                &format!("{:.6}", row.miou),
                &format!("{:.6}", row.std),
                &format!("{:.6}", row.p75),
            ])
            .map_err(|e| Error::Csv {
                path: csv_path.clone(),
                source: e,
            })?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))?;
    }
    written.push(csv_path);

    let summary_path = out_dir.join("summary.txt");
    {
        let mut f = fs::File::create(&summary_path).map_err(|e| Error::io(&summary_path, e))?;
        writeln!(f, "method: {}  (train: {})", report.method, report.train_label)
            .map_err(|e| Error::io(&summary_path, e))?;
        for row in &report.rows {
            if row.n_images == 0 {
                writeln!(f, "  {}: empty subset, row omitted", row.test_label)
                    .map_err(|e| Error::io(&summary_path, e))?;
                continue;
            }
            writeln!(
                f,
                "  {:<5} n={:<6} mIoU={:.4} std={:.4} 75p={:.4}",
                row.test_label, row.n_images, row.miou, row.std, row.p75
            )
            .map_err(|e| Error::io(&summary_path, e))?;
        }
    }
    written.push(summary_path);

    let json_path = out_dir.join("report.json");
    fs::write(
        &json_path,
        serde_json::to_string_pretty(report).expect("serializable report"),
    )
    .map_err(|e| Error::io(&json_path, e))?;
    written.push(json_path);

    for row in &report.rows {
        if row.n_images == 0 {
            continue;
        }
        let img = histogram_image(&row.histogram, &format!("{} IoU", row.test_label));
        let path = out_dir.join(format!("hist_{}.png", row.test_label));
        save_rgb8(&path, &img)?;
        written.push(path);
    }
    Ok(written)
}

/// Simple bar chart of the 50-bin IoU histogram.
fn histogram_image(bins: &[u32], _title: &str) -> Rgb8 {
    let (width, height) = (620usize, 420usize);
    let margin = 40usize;
    let mut img = Rgb8::from_elem((height, width, 3), 255u8);
    let max = bins.iter().copied().max().unwrap_or(1).max(1);
    let plot_w = width - 2 * margin;
    let plot_h = height - 2 * margin;
    // axes
    for x in margin..width - margin {
        set(&mut img, height - margin, x, [0, 0, 0]);
    }
    for y in margin..height - margin {
        set(&mut img, y, margin, [0, 0, 0]);
    }
    let bar_w = plot_w / HISTOGRAM_BINS;
    for (i, &count) in bins.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let h = ((count as f64 / max as f64) * plot_h as f64).round() as usize;
        let x0 = margin + i * bar_w + 1;
        for y in (height - margin - h)..(height - margin) {
            for x in x0..(x0 + bar_w.saturating_sub(1)).min(width - margin) {
                set(&mut img, y, x, [70, 110, 180]);
            }
        }
    }
    // tick marks at 0, 0.5, 1.0
    for frac in [0.0f64, 0.5, 1.0] {
        let x = margin + (frac * plot_w as f64) as usize;
        for y in (height - margin)..(height - margin + 5).min(height) {
            set(&mut img, y, x.min(width - 1), [0, 0, 0]);
        }
    }
    img
}

fn set(img: &mut Rgb8, y: usize, x: usize, color: [u8; 3]) {
    for c in 0..3 {
        img[(y, x, c)] = color[c];
    }
}
