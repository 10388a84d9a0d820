//! Domain types shared by every pipeline stage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, FieldError, Result, Violation};
use crate::linalg::{is_finite3, Vec2, Vec3};
use crate::scalar::Real;

/// Track id reserved for tracks the re-identification step rejected.
pub const DISCARDED: i32 = -1;

/// Skeleton topology as declared by the ingestion file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointLayout {
    pub joint_count: usize,
    pub pelvis_index: usize,
    pub head_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint_names: Option<Vec<String>>,
}

impl JointLayout {
    pub fn new(joint_count: usize, pelvis_index: usize, head_index: usize) -> Result<Self> {
        let layout = JointLayout { joint_count, pelvis_index, head_index, joint_names: None };
        let violations = layout.violations();
        if violations.is_empty() {
            Ok(layout)
        } else {
            Err(Error::Validation(violations))
        }
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.joint_count == 0 {
            out.push(Violation::new(None, "layout.joint_count", "must be positive"));
        }
        if self.pelvis_index >= self.joint_count {
            out.push(Violation::new(None, "layout.pelvis_index", "must be < joint_count"));
        }
        if self.head_index >= self.joint_count {
            out.push(Violation::new(None, "layout.head_index", "must be < joint_count"));
        }
        if let Some(names) = &self.joint_names {
            if names.len() != self.joint_count {
                out.push(Violation::new(None, "layout.joint_names", "length must equal joint_count"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton<T> {
    /// Camera or world coordinates, meters.
    pub joints3d: Vec<Vec3<T>>,
    /// Image coordinates, pixels.
    pub joints2d: Vec<Vec2<T>>,
}

impl<T: Real> Skeleton<T> {
    pub fn violations(&self, layout: &JointLayout, frame: Option<u32>, path: &str) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.joints3d.len() != layout.joint_count {
            out.push(Violation::new(frame, format!("{path}.kp3d"), "length must equal joint_count"));
        }
        if self.joints2d.len() != layout.joint_count {
            out.push(Violation::new(frame, format!("{path}.kp2d"), "length must equal joint_count"));
        }
        if !self.joints3d.iter().all(is_finite3) {
            out.push(Violation::new(frame, format!("{path}.kp3d"), "coordinates must be finite"));
        }
        if !self.joints2d.iter().all(|p| p[0].is_finite() && p[1].is_finite()) {
            out.push(Violation::new(frame, format!("{path}.kp2d"), "coordinates must be finite"));
        }
        out
    }

    pub fn head2d(&self, layout: &JointLayout) -> Vec2<T> {
        self.joints2d[layout.head_index]
    }
}

/// Root joint of a skeleton, the person's 3D anchor.
pub fn pelvis<T: Real>(skeleton: &Skeleton<T>, layout: &JointLayout) -> Vec3<T> {
    skeleton.joints3d[layout.pelvis_index]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection<T> {
    pub skeleton: Skeleton<T>,
    pub score: T,
    /// Body-model parameters, carried through untouched.
    pub body_params: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame<T> {
    pub index: u32,
    pub detections: Vec<Detection<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSequence<T> {
    pub fps: T,
    pub width: u32,
    pub height: u32,
    pub layout: JointLayout,
    pub frames: Vec<Frame<T>>,
}

impl<T: Real> DetectionSequence<T> {
    pub fn detection_count(&self) -> usize {
        self.frames.iter().map(|f| f.detections.len()).sum()
    }

    /// Fails with every violation when the sequence is not well formed.
    pub fn ensure_valid(&self) -> Result<()> {
        let v = validate(self);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

/// Lists every broken invariant of a detection sequence; empty means valid.
pub fn validate<T: Real>(seq: &DetectionSequence<T>) -> Vec<Violation> {
    let mut out = Vec::new();
    if !(seq.fps > T::zero() && seq.fps.is_finite()) {
        out.push(Violation::new(None, "video.fps", "must be positive and finite"));
    }
    let layout_violations = seq.layout.violations();
    let layout_ok = layout_violations.is_empty();
    out.extend(layout_violations);
    let mut previous: Option<u32> = None;
    for frame in &seq.frames {
        if let Some(prev) = previous {
            if frame.index <= prev {
                out.push(Violation::new(
                    Some(frame.index),
                    "frames.frame",
                    format!("frame indices must be strictly increasing (after {prev})"),
                ));
            }
        }
        previous = Some(frame.index);
        for (i, det) in frame.detections.iter().enumerate() {
            let path = format!("detections[{i}]");
            if !(det.score >= T::zero() && det.score <= T::one()) {
                out.push(Violation::new(Some(frame.index), format!("{path}.score"), "must lie in [0, 1]"));
            }
            if layout_ok {
                out.extend(det.skeleton.violations(&seq.layout, Some(frame.index), &path));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Raw,
    Fused,
    Smoothed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub frame: u32,
    pub skeleton: Skeleton<T>,
    pub pelvis: Vec3<T>,
    /// Index of the source detection within its frame, when there is one.
    pub detection: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track<T> {
    pub id: i32,
    pub samples: Vec<Sample<T>>,
    pub provenance: Provenance,
}

impl<T> Track<T> {
    pub fn is_discarded(&self) -> bool {
        self.id == DISCARDED
    }

    pub fn first_frame(&self) -> Option<u32> {
        self.samples.first().map(|s| s.frame)
    }

    pub fn last_frame(&self) -> Option<u32> {
        self.samples.last().map(|s| s.frame)
    }

    pub fn sample_at(&self, frame: u32) -> Option<&Sample<T>> {
        self.samples.binary_search_by_key(&frame, |s| s.frame).ok().map(|i| &self.samples[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackSet<T> {
    pub fps: T,
    pub layout: JointLayout,
    pub tracks: Vec<Track<T>>,
}

impl<T: Real> TrackSet<T> {
    pub fn empty(fps: T, layout: JointLayout) -> Self {
        TrackSet { fps, layout, tracks: Vec::new() }
    }

    pub fn active(&self) -> impl Iterator<Item = &Track<T>> {
        self.tracks.iter().filter(|t| !t.is_discarded())
    }

    pub fn sample_count(&self) -> usize {
        self.tracks.iter().map(|t| t.samples.len()).sum()
    }

    pub fn last_frame(&self) -> Option<u32> {
        self.active().filter_map(Track::last_frame).max()
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if !(self.fps > T::zero() && self.fps.is_finite()) {
            out.push(Violation::new(None, "fps", "must be positive and finite"));
        }
        out.extend(self.layout.violations());
        let mut seen = std::collections::BTreeSet::new();
        for (k, track) in self.tracks.iter().enumerate() {
            if track.id < DISCARDED {
                out.push(Violation::new(None, format!("tracks[{k}].id"), "must be >= -1"));
            }
            if !track.is_discarded() && !seen.insert(track.id) {
                out.push(Violation::new(None, format!("tracks[{k}].id"), format!("duplicate id {}", track.id)));
            }
            for pair in track.samples.windows(2) {
                if pair[1].frame <= pair[0].frame {
                    out.push(Violation::new(
                        Some(pair[1].frame),
                        format!("tracks[{k}].samples"),
                        "frames must be strictly increasing",
                    ));
                }
            }
        }
        out
    }
}

/// Piecewise-linear rule in fps between `(fps, value)` anchors, clamped outside.
#[derive(Debug, Clone, PartialEq)]
pub struct FpsRule<T> {
    anchors: Vec<(T, T)>,
}

impl<T: Real> FpsRule<T> {
    pub fn new(anchors: Vec<(T, T)>) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::Input("fps rule needs at least one anchor".into()));
        }
        if anchors.iter().any(|(f, v)| !(f.is_finite() && v.is_finite() && *f > T::zero())) {
            return Err(Error::Input("fps rule anchors must be finite with positive fps".into()));
        }
        if anchors.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Input("fps rule anchors must be sorted with distinct fps".into()));
        }
        Ok(FpsRule { anchors })
    }

    pub fn anchors(&self) -> &[(T, T)] {
        &self.anchors
    }

    pub fn eval(&self, fps: T) -> T {
        let first = self.anchors[0];
        let last = self.anchors[self.anchors.len() - 1];
        if fps <= first.0 {
            return first.1;
        }
        if fps >= last.0 {
            return last.1;
        }
        for pair in self.anchors.windows(2) {
            let ((f0, v0), (f1, v1)) = (pair[0], pair[1]);
            if fps <= f1 {
                let u = (fps - f0) / (f1 - f0);
                return v0 + (v1 - v0) * u;
            }
        }
        last.1
    }
}

/// Axis convention of camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YAxis {
    #[default]
    Down,
    Up,
}

/// Every tunable threshold of the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub ghost_min_separation: f64,
    pub track_threshold_anchors: Vec<(f64, f64)>,
    pub reid_min_len_anchors: Vec<(f64, f64)>,
    pub rbf_smoothing: f64,
    pub smooth_all_joints: bool,
    pub ground_quantile: f64,
    pub ground_bins: usize,
    pub ground_iterations: usize,
    pub cut_threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roi_polygon: Option<Vec<[f64; 2]>>,
    /// Relabel tracks from mask identities; requires a masks input.
    pub reid_fusion: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            ghost_min_separation: 0.40,
            track_threshold_anchors: vec![(30.0, 0.50), (100.0, 0.30)],
            reid_min_len_anchors: vec![(25.0, 10.0), (100.0, 30.0)],
            rbf_smoothing: 1e-3,
            smooth_all_joints: false,
            ground_quantile: 0.05,
            ground_bins: 50,
            ground_iterations: 3,
            cut_threshold: 0.3,
            roi_polygon: None,
            reid_fusion: true,
        }
    }
}

impl PipelineConfig {
    pub fn field_errors(&self) -> Vec<FieldError> {
        let mut out = Vec::new();
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.ghost_min_separation) {
            out.push(FieldError::new("ghost_min_separation", "must be a positive number of meters"));
        }
        for (name, anchors) in [
            ("track_threshold_anchors", &self.track_threshold_anchors),
            ("reid_min_len_anchors", &self.reid_min_len_anchors),
        ] {
            if anchors.is_empty() {
                out.push(FieldError::new(name, "needs at least one (fps, value) anchor"));
            } else if anchors.iter().any(|&(f, v)| !positive(f) || !positive(v)) {
                out.push(FieldError::new(name, "fps and values must be positive"));
            } else if anchors.windows(2).any(|w| w[1].0 <= w[0].0) {
                out.push(FieldError::new(name, "anchors must be sorted by fps with distinct fps"));
            }
        }
        if !(self.rbf_smoothing.is_finite() && self.rbf_smoothing >= 0.0) {
            out.push(FieldError::new("rbf_smoothing", "must be a nonnegative number"));
        }
        if !(self.ground_quantile > 0.0 && self.ground_quantile < 1.0) {
            out.push(FieldError::new("ground_quantile", "must lie strictly between 0 and 1"));
        }
        if self.ground_bins == 0 {
            out.push(FieldError::new("ground_bins", "must be positive"));
        }
        if self.ground_iterations == 0 {
            out.push(FieldError::new("ground_iterations", "must be positive"));
        }
        if !(self.cut_threshold.is_finite() && self.cut_threshold >= 0.0) {
            out.push(FieldError::new("cut_threshold", "must be a nonnegative number"));
        }
        if let Some(poly) = &self.roi_polygon {
            if poly.len() < 3 {
                out.push(FieldError::new("roi_polygon", "needs at least 3 vertices"));
            } else if poly.iter().flatten().any(|v| !v.is_finite()) {
                out.push(FieldError::new("roi_polygon", "vertices must be finite"));
            }
        }
        out
    }

    pub fn validated(self) -> Result<Self> {
        let errors = self.field_errors();
        if errors.is_empty() {
            Ok(self)
        } else {
            Err(Error::config(errors))
        }
    }

    pub fn track_threshold_rule<T: Real>(&self) -> Result<FpsRule<T>> {
        FpsRule::new(self.track_threshold_anchors.iter().map(|&(f, v)| (T::lit(f), T::lit(v))).collect())
    }

    pub fn reid_min_len_rule<T: Real>(&self) -> Result<FpsRule<T>> {
        FpsRule::new(self.reid_min_len_anchors.iter().map(|&(f, v)| (T::lit(f), T::lit(v))).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> JointLayout {
        JointLayout::new(3, 0, 2).unwrap()
    }

    fn skel(root: [f64; 3]) -> Skeleton<f64> {
        Skeleton {
            joints3d: vec![root, [root[0], root[1] - 0.5, root[2]], [root[0], root[1] - 0.8, root[2]]],
            joints2d: vec![[10.0, 20.0], [10.0, 15.0], [10.0, 10.0]],
        }
    }

    fn seq(frames: Vec<Frame<f64>>) -> DetectionSequence<f64> {
        DetectionSequence { fps: 25.0, width: 64, height: 48, layout: layout(), frames }
    }

    fn det(score: f64) -> Detection<f64> {
        Detection { skeleton: skel([0.0, 0.0, 3.0]), score, body_params: None }
    }

    #[test]
    fn pelvis_reads_declared_slot() {
        let s = Skeleton {
            joints3d: vec![[1.0, 2.0, 3.0], [9.0, 9.0, 9.0], [0.0, 0.0, 0.0]],
            joints2d: vec![[0.0; 2]; 3],
        };
        assert_eq!(pelvis(&s, &JointLayout::new(3, 0, 1).unwrap()), [1.0, 2.0, 3.0]);
        assert_eq!(pelvis(&s, &JointLayout::new(3, 2, 1).unwrap()), [0.0, 0.0, 0.0]);
        assert_eq!(pelvis(&skel([0.5, 0.9, 4.0]), &layout()), [0.5, 0.9, 4.0]);
    }

    #[test]
    fn layout_rejects_out_of_range_indices() {
        assert!(JointLayout::new(3, 3, 0).is_err());
        assert!(JointLayout::new(3, 0, 5).is_err());
        assert!(JointLayout::new(0, 0, 0).is_err());
    }

    #[test]
    fn validate_accepts_well_formed() {
        let s = seq(vec![
            Frame { index: 0, detections: vec![det(0.9)] },
            Frame { index: 1, detections: vec![det(0.8)] },
        ]);
        assert!(validate(&s).is_empty());
    }

    #[test]
    fn validate_flags_score() {
        let s = seq(vec![Frame { index: 0, detections: vec![det(1.5)] }]);
        let v = validate(&s);
        assert_eq!(v.len(), 1);
        assert!(v[0].field.contains("score"));
        assert_eq!(v[0].frame, Some(0));
    }

    #[test]
    fn validate_flags_duplicate_frame() {
        let s = seq(vec![
            Frame { index: 3, detections: vec![det(0.9)] },
            Frame { index: 3, detections: vec![det(0.9)] },
        ]);
        let v = validate(&s);
        assert_eq!(v.len(), 1);
        assert!(v[0].message.contains("strictly increasing"));
    }

    #[test]
    fn validate_flags_joint_count() {
        let mut d = det(0.5);
        d.skeleton.joints3d.pop();
        let v = validate(&seq(vec![Frame { index: 0, detections: vec![d] }]));
        assert_eq!(v.len(), 1);
        assert!(v[0].field.ends_with("kp3d"));
    }

    #[test]
    fn fps_rule_interpolates_and_clamps() {
        let rule = FpsRule::new(vec![(30.0, 0.50), (100.0, 0.30)]).unwrap();
        assert!((rule.eval(65.0f64) - 0.40).abs() < 1e-12);
        assert_eq!(rule.eval(10.0), 0.50);
        assert_eq!(rule.eval(500.0), 0.30);
        assert!(FpsRule::new(vec![(30.0, 0.5), (30.0, 0.3)]).is_err());
    }

    #[test]
    fn default_config_is_valid() {
        let cfg = PipelineConfig::default();
        assert!(cfg.field_errors().is_empty());
        assert_eq!(cfg.ghost_min_separation, 0.40);
    }

    #[test]
    fn config_names_bad_field() {
        let cfg = PipelineConfig { ghost_min_separation: -1.0, ..Default::default() };
        let errs = cfg.field_errors();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].field, "ghost_min_separation");
    }

    #[test]
    fn config_json_overrides_defaults() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"rbf_smoothing": 0.5}"#).unwrap();
        assert_eq!(cfg.rbf_smoothing, 0.5);
        assert_eq!(cfg.ground_bins, 50);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn trackset_flags_duplicate_ids() {
        let t = |id| Track::<f64> { id, samples: vec![], provenance: Provenance::Raw };
        let ts = TrackSet { fps: 25.0, layout: layout(), tracks: vec![t(1), t(1), t(-1), t(-1)] };
        assert_eq!(ts.violations().len(), 1);
    }
}
