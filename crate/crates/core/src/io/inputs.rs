//! Point clouds, camera extrinsics, frame features and cut lists.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use super::json::{parse_document, Node};
use crate::error::{Error, FieldError, Result};
use crate::geom::FrameExtrinsics;
use crate::linalg::Mat3;
use crate::model::YAxis;
use crate::scenecut::CutList;
use crate::{CameraExtrinsics, FrameFeatures, GroundLine, PipelineConfig, PointCloud};

fn parse_y_axis(root: &Node<'_>) -> Result<YAxis> {
    match root.opt_field("y_axis")? {
        None => Ok(YAxis::Down),
        Some(n) => match n.str()? {
            "down" => Ok(YAxis::Down),
            "up" => Ok(YAxis::Up),
            other => Err(Error::schema(n.path(), format!("expected \"down\" or \"up\", found `{other}`"))),
        },
    }
}

fn y_axis_name(y: YAxis) -> &'static str {
    match y {
        YAxis::Down => "down",
        YAxis::Up => "up",
    }
}

/// `{"y_axis"?: "down" | "up", "points": [[x, y, z], …]}` in camera coordinates.
pub fn parse_pointcloud(bytes: &[u8]) -> Result<PointCloud> {
    let doc = parse_document(bytes)?;
    let root = Node::root(&doc);
    let y_axis = parse_y_axis(&root)?;
    let points = root.field("points")?.array()?.iter().map(Node::numbers::<3>).collect::<Result<Vec<_>>>()?;
    PointCloud::new(points, y_axis)
}

pub fn write_pointcloud(cloud: &PointCloud) -> Vec<u8> {
    serde_json::to_vec(&json!({ "y_axis": y_axis_name(cloud.y_axis()), "points": cloud.points() }))
        .expect("point cloud serializes")
}

/// Contents of `extrinsics.json`: an optional camera-to-world base transform,
/// the ground fit it came from, and per-frame camera motion.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExtrinsicsFile {
    pub base: Option<CameraExtrinsics>,
    pub ground: Option<GroundLine>,
    pub frames: FrameExtrinsics<f64>,
}

fn parse_transform(node: &Node<'_>) -> Result<CameraExtrinsics> {
    let r = node.field("rotation")?.numbers::<9>()?;
    let t = node.field("translation")?.numbers::<3>()?;
    let rotation = Mat3::from_row_major(&r).expect("nine entries");
    CameraExtrinsics::new(rotation, t).map_err(|e| Error::schema(node.path(), e.to_string()))
}

fn transform_json(e: &CameraExtrinsics) -> Value {
    json!({ "rotation": e.rotation.to_row_major(), "translation": e.translation })
}

/// Frames not listed in `frames` are identity.
pub fn parse_extrinsics(bytes: &[u8]) -> Result<ExtrinsicsFile> {
    let doc = parse_document(bytes)?;
    let root = Node::root(&doc);
    let base = root.opt_field("base")?.map(|n| parse_transform(&n)).transpose()?;
    let ground = match root.opt_field("ground")? {
        Some(g) => Some(GroundLine {
            slope: g.field("slope")?.f64()?,
            intercept: g.field("intercept")?.f64()?,
            inliers: g.field("inliers")?.array()?.iter().map(|i| i.u64().map(|v| v as usize)).collect::<Result<_>>()?,
            y_axis: parse_y_axis(&g)?,
        }),
        None => None,
    };
    let mut frames = BTreeMap::new();
    if let Some(list) = root.opt_field("frames")? {
        for f in list.array()? {
            let k = f.field("frame")?.u32()?;
            if frames.insert(k, parse_transform(&f)?).is_some() {
                return Err(Error::schema(f.path(), format!("frame {k} listed twice")));
            }
        }
    }
    Ok(ExtrinsicsFile { base, ground, frames: FrameExtrinsics { frames } })
}

pub fn write_extrinsics(file: &ExtrinsicsFile) -> Vec<u8> {
    let mut doc = json!({
        "frames": file.frames.frames.iter().map(|(k, e)| {
            let mut v = transform_json(e);
            v["frame"] = json!(k);
            v
        }).collect::<Vec<_>>(),
    });
    if let Some(b) = &file.base {
        doc["base"] = transform_json(b);
    }
    if let Some(g) = &file.ground {
        doc["ground"] = json!({
            "slope": g.slope,
            "intercept": g.intercept,
            "tilt_deg": g.tilt().to_degrees(),
            "y_axis": y_axis_name(g.y_axis),
            "inliers": g.inliers,
        });
    }
    serde_json::to_vec(&doc).expect("extrinsics serialize")
}

/// `{"features": [[…], …]}`, one normalized vector per frame.
pub fn parse_features(bytes: &[u8]) -> Result<FrameFeatures> {
    let doc = parse_document(bytes)?;
    let root = Node::root(&doc);
    let rows = root
        .field("features")?
        .array()?
        .iter()
        .map(|r| r.array()?.iter().map(Node::f64).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    FrameFeatures::new(rows)
}

pub fn write_features(features: &FrameFeatures) -> Vec<u8> {
    serde_json::to_vec(&json!({ "features": features.rows() })).expect("features serialize")
}

pub fn parse_cuts(bytes: &[u8]) -> Result<CutList> {
    let doc = parse_document(bytes)?;
    let root = Node::root(&doc);
    let cuts = root.field("cuts")?.array()?.iter().map(Node::u32).collect::<Result<Vec<_>>>()?;
    CutList::new(cuts)
}

pub fn write_cuts(cuts: &CutList) -> Vec<u8> {
    serde_json::to_vec(cuts).expect("cut list serializes")
}

/// A config document overriding [`PipelineConfig::default`] field by field.
///
/// Unknown fields, ill-typed values and invariant breaches all come back as
/// [`Error::Config`] with one entry per offending field.
pub fn parse_config(bytes: &[u8]) -> Result<PipelineConfig> {
    let doc = parse_document(bytes)?;
    let Value::Object(fields) = doc else {
        return Err(Error::schema("$", "config must be a JSON object"));
    };
    let known = serde_json::to_value(PipelineConfig::default()).expect("config serializes");
    let mut errors = Vec::new();
    for (key, value) in &fields {
        if known.get(key).is_none() && key != "roi_polygon" {
            errors.push(FieldError::new(key, "unknown field"));
            continue;
        }
        let single = Value::Object([(key.clone(), value.clone())].into_iter().collect());
        if let Err(e) = serde_json::from_value::<PipelineConfig>(single) {
            errors.push(FieldError::new(key, e.to_string()));
        }
    }
    if !errors.is_empty() {
        return Err(Error::config(errors));
    }
    let cfg: PipelineConfig = serde_json::from_value(Value::Object(fields)).map_err(|e| Error::config(vec![FieldError::new("$", e.to_string())]))?;
    cfg.validated()
}

pub fn write_config(cfg: &PipelineConfig) -> Vec<u8> {
    serde_json::to_vec_pretty(cfg).expect("config serializes")
}
