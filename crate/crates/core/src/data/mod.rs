//! Dataset model: samples, masks, polygon annotations, stratified splits,
//! VIA project ingestion and the synthetic scene generator.

pub mod io;
pub mod raster;
pub mod split;
pub mod synth;
pub mod via;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::imgproc::Rgb8;

pub use raster::{rasterize_polygon, RasterOutcome};
pub use split::{split_dataset, SplitAssignment};
pub use synth::{generate_synthetic_sample, GeneratorConfig};
pub use via::{parse_via_project, via_project_json, ViaParseOutcome};

/// The five card types of the reference dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CountryCard {
    #[serde(rename = "ARG1")]
    Arg1,
    #[serde(rename = "ARG2")]
    Arg2,
    #[serde(rename = "CHL1")]
    Chl1,
    #[serde(rename = "CHL2")]
    Chl2,
    #[serde(rename = "MEX")]
    Mex,
}

impl CountryCard {
    pub const ALL: [CountryCard; 5] = [
        CountryCard::Arg1,
        CountryCard::Arg2,
        CountryCard::Chl1,
        CountryCard::Chl2,
        CountryCard::Mex,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CountryCard::Arg1 => "ARG1",
            CountryCard::Arg2 => "ARG2",
            CountryCard::Chl1 => "CHL1",
            CountryCard::Chl2 => "CHL2",
            CountryCard::Mex => "MEX",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Dataset(format!("unknown card type `{s}`")))
    }
}

impl fmt::Display for CountryCard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Capture provenance. Carried as metadata only; never a pixel label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CaptureSource {
    Digital,
    Composite,
    Printed,
    Display,
}

impl CaptureSource {
    pub const ALL: [CaptureSource; 4] = [
        CaptureSource::Digital,
        CaptureSource::Composite,
        CaptureSource::Printed,
        CaptureSource::Display,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CaptureSource::Digital => "Digital",
            CaptureSource::Composite => "Composite",
            CaptureSource::Printed => "Printed",
            CaptureSource::Display => "Display",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Dataset(format!("unknown capture source `{s}`")))
    }
}

impl fmt::Display for CaptureSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Dataset(format!("unknown split `{s}`")))
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub source_id: String,
    pub country_card: CountryCard,
    pub capture_source: CaptureSource,
    pub split: Split,
}

/// Binary per-pixel label map; 0 = background, 1 = card.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegMask {
    labels: Array2<u8>,
}

impl SegMask {
    pub const NUM_CLASSES: usize = 2;

    /// Wraps a label map, checking every element is in {0, 1}.
    pub fn new(labels: Array2<u8>) -> Result<Self> {
        if labels.iter().any(|&v| v > 1) {
            return Err(Error::Dataset("mask contains labels outside {0,1}".into()));
        }
        Ok(SegMask { labels })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        SegMask {
            labels: Array2::zeros((height, width)),
        }
    }

    /// Builds from any u8 map, treating nonzero as card.
    pub fn from_nonzero(labels: Array2<u8>) -> Self {
        SegMask {
            labels: labels.mapv(|v| (v != 0) as u8),
        }
    }

    pub fn labels(&self) -> &Array2<u8> {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut Array2<u8> {
        &mut self.labels
    }

    pub fn dim(&self) -> (usize, usize) {
        self.labels.dim()
    }

    /// Number of card pixels.
    pub fn card_pixels(&self) -> usize {
        self.labels.iter().filter(|&&v| v == 1).count()
    }
}

/// One training/evaluation record: photo, ground-truth mask and provenance.
#[derive(Clone, Debug)]
pub struct Sample {
    pub image: Rgb8,
    pub mask: SegMask,
    pub meta: SampleMeta,
}

impl Sample {
    pub fn new(image: Rgb8, mask: SegMask, meta: SampleMeta) -> Result<Self> {
        let (h, w, _) = image.dim();
        if mask.dim() != (h, w) {
            return Err(Error::ShapeMismatch(format!(
                "image is {h}×{w} but mask is {:?}",
                mask.dim()
            )));
        }
        Ok(Sample { image, mask, meta })
    }

    pub fn width(&self) -> usize {
        self.image.dim().1
    }

    pub fn height(&self) -> usize {
        self.image.dim().0
    }
}

/// Closed polygon card boundary in image pixel coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolygonAnnotation {
    pub image_id: String,
    /// Ordered vertices; the polygon closes implicitly (last connects to first).
    pub points: Vec<(f64, f64)>,
}

impl PolygonAnnotation {
    pub fn new(image_id: impl Into<String>, points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::DegeneratePolygon { got: points.len() });
        }
        if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::Annotation {
                entry: "<inline>".into(),
                msg: "polygon has non-finite coordinates".into(),
            });
        }
        Ok(PolygonAnnotation {
            image_id: image_id.into(),
            points,
        })
    }
}

/// Deterministic map from sample id to split.
pub type AssignmentMap = BTreeMap<String, Split>;
