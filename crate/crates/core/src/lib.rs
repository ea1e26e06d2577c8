//! ID card segmentation toolkit.
//!
//! Isolates an identity document from cluttered photo backgrounds with three
//! methods — a HOG + linear-SVM sliding-window baseline, a MobileNetV2-encoder
//! UNet (`MobileUNet`) and a compact densely connected network (`DenseNet10`)
//! — plus the surrounding machinery: polygon-annotation ingestion, synthetic
//! scene generation, mask-aware preprocessing, a 15-op augmentation pipeline,
//! a reproducible training loop and IoU-based evaluation/benchmark reports.
//!
//! The numeric core is generic over the scalar type ([`scalar::Real`], i.e.
//! `f32`/`f64`); concrete aliases for the common `f32` instantiations are
//! exported at the crate root.

pub mod augment;
pub mod data;
pub mod error;
pub mod eval;
pub mod imgproc;
pub mod models;
pub mod preprocess;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Real;

/// Default training scalar.
pub type Scalar = f32;

/// MobileUNet in the default training precision.
pub type MobileUNet = models::mobileunet::MobileUNetG<Scalar>;
/// DenseNet10 in the default training precision.
pub type DenseNet10 = models::densenet10::DenseNet10G<Scalar>;
/// Boxed segmentation network in the default training precision.
pub type BoxedSegNet = Box<dyn models::SegNet<Scalar>>;
