//! Scene cut detection on per-frame feature vectors and sequence splitting.
//!
//! Features are normalized histograms supplied by an external extractor
//! (one per video frame, e.g. a 16-bin hue histogram). A cut is declared at
//! frame `k` when half the L1 distance between the histograms of frames
//! `k - 1` and `k` exceeds the threshold; for normalized histograms that
//! distance lies in `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DetectionSequence, Frame};
use crate::scalar::Real;

/// Per-frame nonnegative feature vectors, each summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures<T> {
    rows: Vec<Vec<T>>,
}

impl<T: Real> FrameFeatures<T> {
    pub fn new(rows: Vec<Vec<T>>) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if width == 0 {
            return Err(Error::Format("feature vectors must be nonempty".into()));
        }
        let tol = T::lit(1e-6);
        for (k, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::Format(format!(
                    "frame {k}: feature length {} differs from {width}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite() || *v < T::zero()) {
                return Err(Error::Format(format!("frame {k}: features must be finite and nonnegative")));
            }
            let sum: T = row.iter().copied().sum();
            if (sum - T::one()).abs() > tol {
                return Err(Error::Format(format!("frame {k}: features sum to {sum}, expected 1")));
            }
        }
        Ok(FrameFeatures { rows })
    }

    pub fn rows(&self) -> &[Vec<T>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutList {
    #[serde(rename = "cuts")]
    pub cut_frames: Vec<u32>,
}

impl CutList {
    pub fn new(cut_frames: Vec<u32>) -> Result<Self> {
        if cut_frames.first() == Some(&0) {
            return Err(Error::Input("cut at frame 0 is implicit".into()));
        }
        if cut_frames.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Input("cut frames must be strictly increasing".into()));
        }
        Ok(CutList { cut_frames })
    }

    pub fn scene_count(&self) -> usize {
        self.cut_frames.len() + 1
    }
}

/// Half the L1 distance between two feature vectors.
pub fn histogram_distance<T: Real>(a: &[T], b: &[T]) -> T {
    let l1: T = a.iter().zip(b).map(|(x, y)| (*x - *y).abs()).sum();
    l1 * T::lit(0.5)
}

/// Frames whose histogram distance to the previous frame exceeds `threshold`.
pub fn detect_cuts<T: Real, R: AsRef<[T]>>(features: &[R], threshold: T) -> Result<CutList> {
    let Some(first) = features.first() else {
        return Ok(CutList::default());
    };
    let width = first.as_ref().len();
    if let Some(k) = features.iter().position(|f| f.as_ref().len() != width) {
        return Err(Error::Format(format!(
            "frame {k}: feature length {} differs from {width}",
            features[k].as_ref().len()
        )));
    }
    let cut_frames = features
        .windows(2)
        .enumerate()
        .filter(|(_, w)| histogram_distance(w[0].as_ref(), w[1].as_ref()) > threshold)
        .map(|(k, _)| (k + 1) as u32)
        .collect();
    Ok(CutList { cut_frames })
}

/// One scene of a split sequence, renumbered from frame 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene<T> {
    /// Original index of this scene's frame 0.
    pub offset: u32,
    pub sequence: DetectionSequence<T>,
}

/// Splits at every cut; scene `i` covers original frames `[cut_{i-1}, cut_i)`.
pub fn split_sequence<T: Real>(seq: &DetectionSequence<T>, cuts: &CutList) -> Vec<Scene<T>> {
    let starts: Vec<u32> = std::iter::once(0).chain(cuts.cut_frames.iter().copied()).collect();
    let mut scenes: Vec<Scene<T>> = starts
        .iter()
        .map(|&offset| Scene {
            offset,
            sequence: DetectionSequence {
                fps: seq.fps,
                width: seq.width,
                height: seq.height,
                layout: seq.layout.clone(),
                frames: Vec::new(),
            },
        })
        .collect();
    for frame in &seq.frames {
        let scene = starts.partition_point(|&s| s <= frame.index) - 1;
        let offset = starts[scene];
        scenes[scene].sequence.frames.push(Frame { index: frame.index - offset, detections: frame.detections.clone() });
    }
    scenes
}
