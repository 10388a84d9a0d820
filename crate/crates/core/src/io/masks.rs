//! Run-length encoded person masks.
//!
//! Runs alternate background / foreground starting with background, in
//! row-major order; a mask starting with foreground has a leading zero run.

use serde_json::Value;

use super::json::{parse_document, Node};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RleMask {
    runs: Vec<u32>,
    area: u64,
}

/// Drops empty runs after the first and merges neighbours of equal colour,
/// giving the same runs `encode` would.
fn canonical(runs: &[u32]) -> Vec<u32> {
    let mut out: Vec<u32> = Vec::with_capacity(runs.len());
    for (i, &r) in runs.iter().enumerate() {
        if i > 0 && r == 0 {
            continue;
        }
        let n = out.len();
        if n > 0 && (n - 1) % 2 == i % 2 {
            out[n - 1] += r;
        } else {
            out.push(r);
        }
    }
    out
}

impl RleMask {
    /// Builds a mask, checking that the runs cover exactly `cells` cells.
    pub fn new(runs: Vec<u32>, cells: u64) -> Result<Self> {
        let total: u64 = runs.iter().map(|&r| u64::from(r)).sum();
        if total != cells {
            return Err(Error::Format(format!("run lengths sum to {total}, expected {cells}")));
        }
        let area = runs.iter().skip(1).step_by(2).map(|&r| u64::from(r)).sum();
        Ok(RleMask { runs, area })
    }

    /// Encodes a row-major binary raster.
    pub fn encode(cells: &[bool]) -> Self {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for &c in cells {
            if c != current {
                runs.push(len);
                current = c;
                len = 0;
            }
            len += 1;
        }
        runs.push(len);
        let area = cells.iter().filter(|&&c| c).count() as u64;
        RleMask { runs, area }
    }

    pub fn decode(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.cells() as usize);
        for (i, &r) in self.runs.iter().enumerate() {
            out.extend(std::iter::repeat_n(i % 2 == 1, r as usize));
        }
        out
    }

    /// Axis-aligned filled rectangle, inclusive pixel bounds, clipped to the image.
    pub fn rectangle(width: u32, height: u32, x0: i64, y0: i64, x1: i64, y1: i64) -> Self {
        let (w, h) = (i64::from(width), i64::from(height));
        let (x0, x1) = (x0.clamp(0, w), (x1 + 1).clamp(0, w));
        let (y0, y1) = (y0.clamp(0, h), (y1 + 1).clamp(0, h));
        if x0 >= x1 || y0 >= y1 {
            return RleMask { runs: vec![(w * h) as u32], area: 0 };
        }
        let mut runs = Vec::new();
        let mut background = (y0 * w + x0) as u32;
        for _ in y0..y1 {
            runs.push(background);
            runs.push((x1 - x0) as u32);
            background = (w - (x1 - x0)) as u32;
        }
        // Last row tail plus rows below.
        let tail = (w - x1) + (h - y1) * w;
        runs.push(tail as u32);
        let area = ((x1 - x0) * (y1 - y0)) as u64;
        RleMask { runs: canonical(&runs), area }
    }

    pub fn runs(&self) -> &[u32] {
        &self.runs
    }

    pub fn cells(&self) -> u64 {
        self.runs.iter().map(|&r| u64::from(r)).sum()
    }

    /// Foreground cell count.
    pub fn area(&self) -> u64 {
        self.area
    }

    pub fn contains(&self, cell: u64) -> bool {
        let mut end = 0u64;
        for (i, &r) in self.runs.iter().enumerate() {
            end += u64::from(r);
            if cell < end {
                return i % 2 == 1;
            }
        }
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskEntry {
    pub idsam: u32,
    pub mask: RleMask,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskFrame {
    pub frame: u32,
    pub masks: Vec<MaskEntry>,
}

/// Parses `masks.json`; every mask must cover exactly `width × height` cells.
pub fn parse_masks(bytes: &[u8], width: u32, height: u32) -> Result<Vec<MaskFrame>> {
    let doc = parse_document(bytes)?;
    let root = Node::root(&doc);
    let cells = u64::from(width) * u64::from(height);
    let mut frames: Vec<MaskFrame> = Vec::new();
    for f in root.field("frames")?.array()? {
        let frame = f.field("frame")?.u32()?;
        if frames.last().is_some_and(|p| p.frame >= frame) {
            return Err(Error::schema(f.field("frame")?.path(), "frames must be strictly increasing"));
        }
        let mut masks: Vec<MaskEntry> = Vec::new();
        for m in f.field("masks")?.array()? {
            let idsam = m.field("idsam")?.u32()?;
            if idsam > i32::MAX as u32 {
                return Err(Error::schema(m.field("idsam")?.path(), "idsam exceeds the track id range"));
            }
            if masks.iter().any(|e| e.idsam == idsam) {
                return Err(Error::Format(format!("frame {frame}: duplicate idsam {idsam}")));
            }
            let runs = m.field("rle")?.array()?.iter().map(Node::u32).collect::<Result<Vec<_>>>()?;
            let mask = RleMask::new(runs, cells)
                .map_err(|e| Error::Format(format!("frame {frame}, idsam {idsam}: {e}")))?;
            masks.push(MaskEntry { idsam, mask });
        }
        frames.push(MaskFrame { frame, masks });
    }
    Ok(frames)
}

pub fn write_masks(frames: &[MaskFrame]) -> Vec<u8> {
    let doc = serde_json::json!({
        "frames": frames.iter().map(|f| serde_json::json!({
            "frame": f.frame,
            "masks": f.masks.iter().map(|m| serde_json::json!({
                "idsam": m.idsam,
                "rle": m.mask.runs(),
            })).collect::<Vec<Value>>(),
        })).collect::<Vec<Value>>(),
    });
    serde_json::to_vec(&doc).expect("mask document serializes")
}
