use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde_json::{json, Value};

use super::json::{parse_document, Node};
use crate::error::{Error, Result};
use crate::model::{validate, JointLayout};
use crate::{Detection, DetectionSequence, Frame, Skeleton};

pub(crate) fn parse_layout(node: &Node<'_>) -> Result<JointLayout> {
    let joint_count = node.field("joint_count")?.u32()? as usize;
    let pelvis_index = match node.opt_field("pelvis_index")? {
        Some(n) => n.u32()? as usize,
        None => 0,
    };
    let head_index = node.field("head_index")?.u32()? as usize;
    let joint_names = match node.opt_field("joint_names")? {
        Some(n) => Some(n.array()?.iter().map(|s| s.str().map(str::to_owned)).collect::<Result<Vec<_>>>()?),
        None => None,
    };
    let layout = JointLayout { joint_count, pelvis_index, head_index, joint_names };
    let v = layout.violations();
    if !v.is_empty() {
        return Err(Error::Validation(v));
    }
    Ok(layout)
}

pub(crate) fn layout_json(layout: &JointLayout) -> Value {
    let mut v = json!({
        "joint_count": layout.joint_count,
        "pelvis_index": layout.pelvis_index,
        "head_index": layout.head_index,
    });
    if let Some(names) = &layout.joint_names {
        v["joint_names"] = json!(names);
    }
    v
}

pub(crate) fn parse_points3(node: &Node<'_>) -> Result<Vec<[f64; 3]>> {
    node.array()?.iter().map(Node::numbers::<3>).collect()
}

pub(crate) fn parse_points2(node: &Node<'_>) -> Result<Vec<[f64; 2]>> {
    node.array()?.iter().map(Node::numbers::<2>).collect()
}

/// Parses and validates `detections.json`. Unknown fields are ignored.
pub fn parse_detections(bytes: &[u8]) -> Result<DetectionSequence> {
    let doc = parse_document(bytes)?;
    let root = Node::root(&doc);
    let video = root.field("video")?;
    let fps = video.field("fps")?.f64()?;
    let width = video.field("width")?.u32()?;
    let height = video.field("height")?.u32()?;
    let layout = parse_layout(&root.field("layout")?)?;
    let mut frames = Vec::new();
    for f in root.field("frames")?.array()? {
        let index = f.field("frame")?.u32()?;
        let mut detections = Vec::new();
        for d in f.field("detections")?.array()? {
            let score = d.field("score")?.f64()?;
            let joints3d = parse_points3(&d.field("kp3d")?)?;
            let joints2d = parse_points2(&d.field("kp2d")?)?;
            let body_params = match d.opt_field("body_params")? {
                Some(b) => Some(
                    BASE64.decode(b.str()?).map_err(|e| Error::schema(b.path(), format!("invalid base64: {e}")))?,
                ),
                None => None,
            };
            detections.push(Detection { skeleton: Skeleton { joints3d, joints2d }, score, body_params });
        }
        frames.push(Frame { index, detections });
    }
    let seq = DetectionSequence { fps, width, height, layout, frames };
    let violations = validate(&seq);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    Ok(seq)
}

pub fn write_detections(seq: &DetectionSequence) -> Vec<u8> {
    let frames: Vec<Value> = seq
        .frames
        .iter()
        .map(|f| {
            let dets: Vec<Value> = f
                .detections
                .iter()
                .map(|d| {
                    let mut v = json!({
                        "score": d.score,
                        "kp3d": d.skeleton.joints3d,
                        "kp2d": d.skeleton.joints2d,
                    });
                    if let Some(b) = &d.body_params {
                        v["body_params"] = json!(BASE64.encode(b));
                    }
                    v
                })
                .collect();
            json!({ "frame": f.index, "detections": dets })
        })
        .collect();
    let doc = json!({
        "version": 1,
        "video": { "fps": seq.fps, "width": seq.width, "height": seq.height },
        "layout": layout_json(&seq.layout),
        "frames": frames,
    });
    serde_json::to_vec(&doc).expect("detection document serializes")
}
