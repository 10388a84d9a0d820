use serde_json::{json, Value};

use super::detections::{layout_json, parse_layout, parse_points2, parse_points3};
use super::json::{parse_document, Node};
use crate::error::{Error, Result};
use crate::model::Provenance;
use crate::{Sample, Skeleton, Track, TrackSet};

pub const TRACKS_VERSION: u64 = 1;

fn provenance_name(p: Provenance) -> &'static str {
    match p {
        Provenance::Raw => "raw",
        Provenance::Fused => "fused",
        Provenance::Smoothed => "smoothed",
    }
}

/// Serializes a track set. Discarded tracks (`id == -1`) are an error unless
/// `include_discarded` is set.
pub fn write_tracks(ts: &TrackSet, include_discarded: bool) -> Result<Vec<u8>> {
    if !include_discarded {
        if let Some(pos) = ts.tracks.iter().position(Track::is_discarded) {
            return Err(Error::Input(format!(
                "tracks[{pos}] is discarded (id -1); filter it or set include-discarded"
            )));
        }
    }
    let tracks: Vec<Value> = ts
        .tracks
        .iter()
        .map(|t| {
            let samples: Vec<Value> = t
                .samples
                .iter()
                .map(|s| {
                    let mut v = json!({
                        "frame": s.frame,
                        "pelvis": s.pelvis,
                        "kp3d": s.skeleton.joints3d,
                        "kp2d": s.skeleton.joints2d,
                    });
                    if let Some(d) = s.detection {
                        v["detection"] = json!(d);
                    }
                    v
                })
                .collect();
            json!({ "id": t.id, "provenance": provenance_name(t.provenance), "samples": samples })
        })
        .collect();
    let doc = json!({
        "version": TRACKS_VERSION,
        "fps": ts.fps,
        "layout": layout_json(&ts.layout),
        "tracks": tracks,
    });
    Ok(serde_json::to_vec(&doc).expect("track document serializes"))
}

pub fn parse_tracks(bytes: &[u8]) -> Result<TrackSet> {
    let doc = parse_document(bytes)?;
    let root = Node::root(&doc);
    if let Some(v) = root.opt_field("version")? {
        if v.u64()? != TRACKS_VERSION {
            return Err(Error::schema(v.path(), format!("unsupported version, expected {TRACKS_VERSION}")));
        }
    }
    let fps = root.field("fps")?.f64()?;
    let layout = parse_layout(&root.field("layout")?)?;
    let mut tracks = Vec::new();
    for t in root.field("tracks")?.array()? {
        let id_node = t.field("id")?;
        let id = i32::try_from(id_node.i64()?).map_err(|_| Error::schema(id_node.path(), "id out of range"))?;
        let prov_node = t.field("provenance")?;
        let provenance = match prov_node.str()? {
            "raw" => Provenance::Raw,
            "fused" => Provenance::Fused,
            "smoothed" => Provenance::Smoothed,
            other => return Err(Error::schema(prov_node.path(), format!("unknown provenance `{other}`"))),
        };
        let mut samples = Vec::new();
        for s in t.field("samples")?.array()? {
            let detection = match s.opt_field("detection")? {
                Some(d) => Some(d.u32()?),
                None => None,
            };
            samples.push(Sample {
                frame: s.field("frame")?.u32()?,
                pelvis: s.field("pelvis")?.numbers::<3>()?,
                skeleton: Skeleton { joints3d: parse_points3(&s.field("kp3d")?)?, joints2d: parse_points2(&s.field("kp2d")?)? },
                detection,
            });
        }
        tracks.push(Track { id, samples, provenance });
    }
    let ts = TrackSet { fps, layout, tracks };
    let v = ts.violations();
    if !v.is_empty() {
        return Err(Error::Validation(v));
    }
    Ok(ts)
}
