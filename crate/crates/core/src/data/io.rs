//! Dataset directory layout:
//!
//! ```text
//! dataset/
//!   images/<split>/<id>.png   (RGB)
//!   masks/<split>/<id>.png    (grayscale, 0 = background, 255 = card)
//!   meta.csv                  (source_id, country_card, capture_source, split, width, height)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{CaptureSource, CountryCard, Sample, SampleMeta, SegMask, Split};
use crate::error::{Error, Result};
use crate::imgproc::{load_mask_png, load_rgb8, save_mask_png, save_rgb8};

pub const META_CSV: &str = "meta.csv";
pub const META_HEADER: [&str; 6] = [
    "source_id",
    "country_card",
    "capture_source",
    "split",
    "width",
    "height",
];

pub fn image_path(root: &Path, meta: &SampleMeta) -> PathBuf {
    root.join("images")
        .join(meta.split.as_str())
        .join(format!("{}.png", meta.source_id))
}

pub fn mask_path(root: &Path, meta: &SampleMeta) -> PathBuf {
    root.join("masks")
        .join(meta.split.as_str())
        .join(format!("{}.png", meta.source_id))
}

/// Incremental dataset writer; rows land in `meta.csv` sorted by source id.
pub struct DatasetWriter {
    root: PathBuf,
    rows: Vec<(SampleMeta, usize, usize)>,
}

impl DatasetWriter {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for sub in ["images", "masks"] {
            for split in Split::ALL {
                let dir = root.join(sub).join(split.as_str());
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            }
        }
        Ok(DatasetWriter {
            root,
            rows: Vec::new(),
        })
    }

    pub fn add(&mut self, sample: &Sample) -> Result<()> {
        save_rgb8(&image_path(&self.root, &sample.meta), &sample.image)?;
        save_mask_png(&mask_path(&self.root, &sample.meta), sample.mask.labels())?;
        self.rows
            .push((sample.meta.clone(), sample.width(), sample.height()));
        Ok(())
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        let path = self.root.join(META_CSV);
        self.rows.sort_by(|a, b| a.0.source_id.cmp(&b.0.source_id));
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Csv {
            path: path.clone(),
            source: e,
        })?;
        w.write_record(META_HEADER).map_err(|e| Error::Csv {
            path: path.clone(),
            source: e,
        })?;
        for (meta, width, height) in &self.rows {
            w.write_record([
                meta.source_id.as_str(),
                meta.country_card.as_str(),
                meta.capture_source.as_str(),
                meta.split.as_str(),
                &width.to_string(),
                &height.to_string(),
            ])
            .map_err(|e| Error::Csv {
                path: path.clone(),
                source: e,
            })?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Reads `meta.csv` rows.
pub fn read_meta(root: &Path) -> Result<Vec<SampleMeta>> {
    let path = root.join(META_CSV);
    let mut rdr = csv::Reader::from_path(&path).map_err(|e| Error::Csv {
        path: path.clone(),
        source: e,
    })?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Csv {
            path: path.clone(),
            source: e,
        })?;
        if rec.len() < 4 {
            return Err(Error::Dataset(format!(
                "meta.csv row with {} fields, expected at least 4",
                rec.len()
            )));
        }
        out.push(SampleMeta {
            source_id: rec[0].to_string(),
            country_card: CountryCard::parse(&rec[1])?,
            capture_source: CaptureSource::parse(&rec[2])?,
            split: Split::parse(&rec[3])?,
        });
    }
    Ok(out)
}

/// Loads one sample (image + mask) given its metadata row.
pub fn load_sample(root: &Path, meta: &SampleMeta) -> Result<Sample> {
    let image = load_rgb8(&image_path(root, meta))?;
    let mask = SegMask::from_nonzero(load_mask_png(&mask_path(root, meta))?);
    Sample::new(image, mask, meta.clone())
}

/// Loads every sample of one split.
pub fn load_split(root: &Path, split: Split) -> Result<Vec<Sample>> {
    read_meta(root)?
        .into_iter()
        .filter(|m| m.split == split)
        .map(|m| load_sample(root, &m))
        .collect()
}
