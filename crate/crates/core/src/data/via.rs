//! VGG Image Annotator (VIA) 2.x project ingestion.
//!
//! Accepts both a full project file (vertex data under `_via_img_metadata`)
//! and the bare metadata map that "Export Annotations (json)" produces. Only
//! polygon regions become annotations; other region shapes are counted and
//! skipped.

use serde::Deserialize;
use serde_json::Value;

use crate::data::PolygonAnnotation;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ViaParseOutcome {
    pub annotations: Vec<PolygonAnnotation>,
    /// Regions whose shape was not `polygon`.
    pub skipped_regions: usize,
    /// Image entries that declared no polygon region at all.
    pub images_without_polygons: Vec<String>,
}

#[derive(Deserialize)]
struct ViaImage {
    filename: String,
    #[serde(default)]
    regions: Vec<ViaRegion>,
}

#[derive(Deserialize)]
struct ViaRegion {
    shape_attributes: Value,
}

/// Parses a VIA 2.x project document into polygon annotations.
pub fn parse_via_project(document: &str) -> Result<ViaParseOutcome> {
    let root: Value = serde_json::from_str(document).map_err(|source| Error::Json {
        entry: None,
        source,
    })?;
    let metadata = match root.get("_via_img_metadata") {
        Some(m) => m,
        None => &root,
    };
    let map = metadata.as_object().ok_or_else(|| Error::Annotation {
        entry: "<root>".into(),
        msg: "expected an object mapping image keys to entries".into(),
    })?;

    let mut outcome = ViaParseOutcome {
        annotations: Vec::new(),
        skipped_regions: 0,
        images_without_polygons: Vec::new(),
    };
    // Deterministic order regardless of JSON map order.
    let mut keys: Vec<&String> = map.keys().collect();
    keys.sort();
    for key in keys {
        if key.starts_with("_via_") {
            continue; // settings blocks in flattened exports
        }
        let entry: ViaImage =
            serde_json::from_value(map[key].clone()).map_err(|source| Error::Json {
                entry: Some(key.clone()),
                source,
            })?;
        let mut polygons_here = 0usize;
        for region in &entry.regions {
            let shape = region
                .shape_attributes
                .get("name")
                .and_then(Value::as_str)
                .ok_or_else(|| Error::Annotation {
                    entry: key.clone(),
                    msg: "region without shape name".into(),
                })?;
            if shape != "polygon" {
                outcome.skipped_regions += 1;
                continue;
            }
            let xs = coord_list(&region.shape_attributes, "all_points_x", key)?;
            let ys = coord_list(&region.shape_attributes, "all_points_y", key)?;
            if xs.len() != ys.len() {
                return Err(Error::Annotation {
                    entry: key.clone(),
                    msg: format!(
                        "all_points_x has {} entries but all_points_y has {}",
                        xs.len(),
                        ys.len()
                    ),
                });
            }
            let points: Vec<(f64, f64)> = xs.into_iter().zip(ys).collect();
            if points.len() < 3 {
                return Err(Error::DegeneratePolygon { got: points.len() });
            }
            outcome
                .annotations
                .push(PolygonAnnotation::new(entry.filename.clone(), points)?);
            polygons_here += 1;
        }
        if polygons_here == 0 {
            outcome.images_without_polygons.push(entry.filename.clone());
        }
    }
    Ok(outcome)
}

fn coord_list(shape: &Value, field: &str, entry: &str) -> Result<Vec<f64>> {
    shape
        .get(field)
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Annotation {
            entry: entry.to_string(),
            msg: format!("polygon region missing `{field}`"),
        })?
        .iter()
        .map(|v| {
            v.as_f64().ok_or_else(|| Error::Annotation {
                entry: entry.to_string(),
                msg: format!("non-numeric coordinate in `{field}`"),
            })
        })
        .collect()
}

/// Serializes annotations back into a VIA 2.x metadata map (one entry per
/// image, one polygon region per annotation). Vertex values round-trip
/// exactly through [`parse_via_project`].
pub fn via_project_json(annotations: &[PolygonAnnotation]) -> String {
    let mut by_image: std::collections::BTreeMap<&str, Vec<&PolygonAnnotation>> =
        std::collections::BTreeMap::new();
    for ann in annotations {
        by_image.entry(&ann.image_id).or_default().push(ann);
    }
    let mut images = serde_json::Map::new();
    for (image_id, anns) in by_image {
        let regions: Vec<Value> = anns
            .iter()
            .map(|a| {
                serde_json::json!({
                    "shape_attributes": {
                        "name": "polygon",
                        "all_points_x": a.points.iter().map(|p| p.0).collect::<Vec<f64>>(),
                        "all_points_y": a.points.iter().map(|p| p.1).collect::<Vec<f64>>(),
                    },
                    "region_attributes": {}
                })
            })
            .collect();
        images.insert(
            format!("{image_id}-1"),
            serde_json::json!({
                "filename": image_id,
                "size": -1,
                "regions": regions,
                "file_attributes": {}
            }),
        );
    }
    serde_json::to_string_pretty(&serde_json::json!({ "_via_img_metadata": images }))
        .expect("serializable project")
}
