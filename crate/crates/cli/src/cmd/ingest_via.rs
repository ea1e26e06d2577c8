use anyhow::{bail, Context, Result};
use clap::Args;
use std::collections::BTreeMap;
use std::path::PathBuf;

use idseg::data::io::DatasetWriter;
use idseg::data::{
    parse_via_project, rasterize_polygon, split_dataset, CaptureSource, CountryCard,
    PolygonAnnotation, Sample, SampleMeta, Split,
};
use idseg::imgproc::load_rgb8;

use crate::manifest::{check_outputs, RunManifest};

#[derive(Args)]
pub struct IngestArgs {
    /// VIA 2.x project file (JSON).
    #[arg(long)]
    pub project: PathBuf,
    /// Directory holding the annotated images.
    #[arg(long)]
    pub images: PathBuf,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Card type recorded in meta.csv for every ingested image.
    #[arg(long, default_value = "CHL1")]
    pub country_card: String,
    /// Capture source recorded in meta.csv.
    #[arg(long, default_value = "Digital")]
    pub capture_source: String,
    /// train/val/test fractions for the split assignment.
    #[arg(long, num_args = 3, default_values_t = [0.7, 0.1, 0.2])]
    pub ratios: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(args: IngestArgs) -> Result<()> {
    let country = CountryCard::parse(&args.country_card)?;
    let capture = CaptureSource::parse(&args.capture_source)?;
    let text = std::fs::read_to_string(&args.project)
        .with_context(|| format!("reading {}", args.project.display()))?;
    let outcome = parse_via_project(&text)?;
    if outcome.annotations.is_empty() {
        bail!("project contains no polygon annotations");
    }
    if outcome.skipped_regions > 0 {
        eprintln!(
            "warning: skipped {} non-polygon region(s)",
            outcome.skipped_regions
        );
    }
    for img in &outcome.images_without_polygons {
        eprintln!("warning: no polygon regions for {img}");
    }

    RunManifest::new(
        "ingest-via",
        serde_json::json!({
            "project": args.project,
            "images": args.images,
            "country_card": country.as_str(),
            "capture_source": capture.as_str(),
        }),
        serde_json::json!({ "seed": args.seed, "ratios": args.ratios }),
        vec![args.project.clone(), args.images.clone()],
        &args.out,
    )
    .write()?;

    // group polygons per image; multiple polygons on one image merge into one mask
    let mut by_image: BTreeMap<String, Vec<PolygonAnnotation>> = BTreeMap::new();
    for ann in outcome.annotations {
        by_image.entry(ann.image_id.clone()).or_default().push(ann);
    }
    let mut samples: Vec<Sample> = Vec::new();
    let mut skipped_missing = 0usize;
    for (image_id, anns) in by_image {
        let path = args.images.join(&image_id);
        let image = match load_rgb8(&path) {
            Ok(img) => img,
            Err(_) => {
                eprintln!("warning: image not found, skipping: {}", path.display());
                skipped_missing += 1;
                continue;
            }
        };
        let (h, w, _) = image.dim();
        let mut mask = idseg::data::SegMask::zeros(h, w);
        let mut all_empty = true;
        for ann in &anns {
            let outcome = rasterize_polygon(ann, w, h);
            if !outcome.empty {
                all_empty = false;
            }
            for (m, &v) in mask
                .labels_mut()
                .iter_mut()
                .zip(outcome.mask.labels().iter())
            {
                *m |= v;
            }
        }
        if all_empty {
            eprintln!("warning: polygon(s) cover no pixels in {image_id}");
        }
        let source_id = image_id
            .rsplit_once('.')
            .map(|(stem, _)| stem.to_string())
            .unwrap_or(image_id.clone());
        samples.push(Sample::new(
            image,
            mask,
            SampleMeta {
                source_id,
                country_card: country,
                capture_source: capture,
                split: Split::Train,
            },
        )?);
    }
    if samples.is_empty() {
        bail!("no annotated images matched files in {}", args.images.display());
    }
    if skipped_missing > 0 {
        eprintln!("warning: {skipped_missing} annotated image(s) missing on disk");
    }

    let metas: Vec<SampleMeta> = samples.iter().map(|s| s.meta.clone()).collect();
    let ratios = (args.ratios[0], args.ratios[1], args.ratios[2]);
    match split_dataset(&metas, ratios, args.seed) {
        Ok(assignment) => {
            for s in &mut samples {
                s.meta.split = assignment.split_of(&s.meta.source_id).unwrap();
            }
        }
        Err(idseg::Error::StratumTooSmall { .. }) => {
            eprintln!("warning: too few images for a split; keeping all in train");
        }
        Err(e) => return Err(e.into()),
    }

    let mut writer = DatasetWriter::create(&args.out)?;
    for s in &samples {
        writer.add(s)?;
    }
    let meta_csv = writer.finish()?;
    check_outputs(&[meta_csv])?;
    println!(
        "ingested {} image(s) into {}",
        samples.len(),
        args.out.display()
    );
    Ok(())
}
