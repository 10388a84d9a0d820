//! Ground-truth scenario generator.
//!
//! Dancers follow closed Catmull-Rom loops on the stage plane in world
//! coordinates (ground `y = 0`, `+y` up). A pinhole camera at height `h`
//! above the world origin looks toward `−z`, pitched down by the tilt angle,
//! so the stage sits around `z = −6`. Observations are the
//! truth mapped into camera coordinates (`x` right, `y` down, `z` forward)
//! and then degraded.

pub mod eval;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::FrameExtrinsics;
use crate::io::{self, ExtrinsicsFile, MaskEntry, MaskFrame, RleMask};
use crate::pipeline::InputPaths;
use crate::linalg::{add, Mat3, Vec2, Vec3};
use crate::model::{JointLayout, Provenance, YAxis};
use crate::scenecut::CutList;
use crate::{
    CameraExtrinsics, Detection, DetectionSequence, Frame, FrameFeatures, PointCloud, Sample, Skeleton, Track, TrackSet,
};

pub use eval::{depth_rmse, evaluate, EvalReport};

/// Joint offsets from the ground point below the pelvis, world meters.
const BODY: [(&str, [f64; 3]); 6] = [
    ("pelvis", [0.0, 0.95, 0.0]),
    ("spine", [0.0, 1.25, 0.0]),
    ("neck", [0.0, 1.50, 0.0]),
    ("head", [0.0, 1.70, 0.0]),
    ("left_foot", [-0.15, 0.05, 0.0]),
    ("right_foot", [0.15, 0.05, 0.0]),
];
const HEAD: usize = 3;
const DETECTION_SCORE: f64 = 0.9;
const MASK_MARGIN_PX: f64 = 12.0;
/// First idsam used for audience members.
pub const AUDIENCE_IDSAM: u32 = 100;

pub fn body_layout() -> JointLayout {
    JointLayout {
        joint_count: BODY.len(),
        pelvis_index: 0,
        head_index: HEAD,
        joint_names: Some(BODY.iter().map(|(n, _)| n.to_string()).collect()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DancerMotion {
    /// Closed loop of ground positions `(x, z)`, meters.
    pub waypoints: Vec<[f64; 2]>,
    /// Seconds per loop.
    pub period_s: f64,
    /// Starting position along the loop, fraction in `[0, 1)`.
    pub phase: f64,
    /// Maximum admissible ground speed, m/s.
    pub speed_limit: f64,
}

impl Default for DancerMotion {
    fn default() -> Self {
        DancerMotion { waypoints: vec![[0.0, -6.0]], period_s: 10.0, phase: 0.0, speed_limit: 3.0 }
    }
}

impl DancerMotion {
    /// Ground position at time `t`.
    pub fn position(&self, t: f64) -> [f64; 2] {
        let p = &self.waypoints;
        let m = p.len();
        if m == 1 {
            return p[0];
        }
        let s = (t / self.period_s + self.phase).rem_euclid(1.0) * m as f64;
        let j = (s.floor() as usize).min(m - 1);
        let u = s - j as f64;
        let at = |k: isize| p[k.rem_euclid(m as isize) as usize];
        let (p0, p1, p2, p3) = (at(j as isize - 1), at(j as isize), at(j as isize + 1), at(j as isize + 2));
        let mut out = [0.0; 2];
        for a in 0..2 {
            out[a] = 0.5
                * (2.0 * p1[a]
                    + (p2[a] - p0[a]) * u
                    + (2.0 * p0[a] - 5.0 * p1[a] + 4.0 * p2[a] - p3[a]) * u * u
                    + (3.0 * p1[a] - p0[a] - 3.0 * p2[a] + p3[a]) * u * u * u);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occlusion {
    pub dancer: usize,
    /// First hidden frame.
    pub start: u32,
    /// One past the last hidden frame.
    pub end: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Degradations {
    /// Per-detection rigid shift std-dev along camera x and y, meters.
    pub sigma_xy: f64,
    /// Per-detection rigid shift std-dev along camera z, meters.
    pub sigma_depth: f64,
    /// Probability, per dancer and frame, of one extra ghost detection.
    pub ghost_rate: f64,
    /// Horizontal distance of a ghost from its dancer, meters.
    pub ghost_offset: f64,
    pub ghost_score_penalty: f64,
    pub occlusions: Vec<Occlusion>,
    /// Probability per frame that two masks swap idsams.
    pub mask_corruption_rate: f64,
    /// Static spectators, world ground positions `(x, y, z)`.
    pub audience: Vec<[f64; 3]>,
}

impl Default for Degradations {
    fn default() -> Self {
        Degradations {
            sigma_xy: 0.0,
            sigma_depth: 0.0,
            ghost_rate: 0.0,
            ghost_offset: 0.25,
            ghost_score_penalty: 0.2,
            occlusions: Vec::new(),
            mask_corruption_rate: 0.0,
            audience: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSpec {
    pub height: f64,
    pub tilt_deg: f64,
    pub focal_px: f64,
    /// Rotation of the camera rig about world `+y`, degrees per second.
    pub pan_deg_per_s: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        CameraSpec { height: 2.5, tilt_deg: 15.0, focal_px: 700.0, pan_deg_per_s: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CloudSpec {
    pub points: usize,
    /// Fraction of points placed above the stage (bodies, props).
    pub clutter_fraction: f64,
    /// Std-dev of ground point height noise, meters.
    pub ground_noise: f64,
}

impl Default for CloudSpec {
    fn default() -> Self {
        CloudSpec { points: 5000, clutter_fraction: 0.3, ground_noise: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub dancer_count: usize,
    pub duration_s: f64,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    /// Explicit motions; when empty every dancer gets a default loop.
    pub dancers: Vec<DancerMotion>,
    /// Stage outline on the world ground plane, `(x, z)`.
    pub stage_polygon: Vec<[f64; 2]>,
    pub degradations: Degradations,
    pub camera: CameraSpec,
    pub cloud: CloudSpec,
    /// Frames at which the feature histograms jump to a new scene.
    pub scene_cuts: Vec<u32>,
    pub feature_bins: usize,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            dancer_count: 2,
            duration_s: 10.0,
            fps: 100.0,
            width: 1280,
            height: 720,
            dancers: Vec::new(),
            stage_polygon: vec![[-4.0, -9.0], [4.0, -9.0], [4.0, -3.0], [-4.0, -3.0]],
            degradations: Degradations::default(),
            camera: CameraSpec::default(),
            cloud: CloudSpec::default(),
            scene_cuts: Vec::new(),
            feature_bins: 16,
            seed: 0,
        }
    }
}

/// Loop for dancer `i` of `n`: an ellipse in its own lane across the stage.
pub fn default_motion(i: usize, n: usize) -> DancerMotion {
    let lane = 4.0 / n as f64;
    let cx = -2.0 + lane * (i as f64 + 0.5);
    let rx = (0.3 * lane).min(0.6);
    let waypoints = (0..8)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / 8.0;
            [cx + rx * a.cos(), -6.0 + 1.5 * a.sin()]
        })
        .collect();
    DancerMotion { waypoints, period_s: 10.0, phase: 0.0, speed_limit: 3.0 }
}

/// Origin of each generated detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "index")]
pub enum Source {
    Dancer(usize),
    Ghost(usize),
    Audience(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// World-coordinate dancer tracks at every frame; id = dancer index.
    pub truth: TrackSet,
    pub detections: DetectionSequence,
    /// Source of every detection, parallel to `detections.frames`.
    pub sources: Vec<Vec<Source>>,
    pub masks: Vec<MaskFrame>,
    pub cloud: PointCloud,
    pub features: FrameFeatures,
    pub cuts: CutList,
    /// Camera-to-world transform at frame 0.
    pub base: CameraExtrinsics,
    /// Per-frame rig motion; empty without panning.
    pub motion: FrameExtrinsics<f64>,
}

impl Scenario {
    /// Extrinsics file carrying the rig motion only; the base is left to the ground fit.
    pub fn extrinsics_file(&self) -> ExtrinsicsFile {
        ExtrinsicsFile { base: None, ground: None, frames: self.motion.clone() }
    }

    /// Camera optical axis in world coordinates.
    pub fn optical_axis(&self) -> Vec3<f64> {
        self.base.rotation.mul_vec([0.0, 0.0, 1.0])
    }

    pub fn ghost_count(&self) -> usize {
        self.sources.iter().flatten().filter(|s| matches!(s, Source::Ghost(_))).count()
    }

    /// Writes the pipeline inputs plus `truth.json` and `sources.json` into
    /// `dir` and returns the input paths.
    pub fn write_to(&self, dir: &Path) -> Result<InputPaths> {
        std::fs::create_dir_all(dir)?;
        let put = |name: &str, bytes: Vec<u8>| -> Result<PathBuf> {
            let p = dir.join(name);
            std::fs::write(&p, bytes)?;
            Ok(p)
        };
        let paths = InputPaths {
            detections: put("detections.json", io::write_detections(&self.detections))?,
            masks: Some(put("masks.json", io::write_masks(&self.masks))?),
            cloud: Some(put("cloud.json", io::write_pointcloud(&self.cloud))?),
            features: Some(put("features.json", io::write_features(&self.features))?),
            extrinsics: Some(put("extrinsics.json", io::write_extrinsics(&self.extrinsics_file()))?),
        };
        put(TRUTH_FILE, io::write_tracks(&self.truth, false)?)?;
        put("sources.json", serde_json::to_vec(&serde_json::json!({ "frames": self.sources })).expect("sources serialize"))?;
        Ok(paths)
    }
}

pub const TRUTH_FILE: &str = "truth.json";

pub fn scenario_error(msg: impl Into<String>) -> Error {
    Error::Scenario(msg.into())
}

impl ScenarioSpec {
    pub fn frame_count(&self) -> u32 {
        (self.duration_s * self.fps).round() as u32
    }

    pub fn motions(&self) -> Vec<DancerMotion> {
        if self.dancers.is_empty() {
            (0..self.dancer_count).map(|i| default_motion(i, self.dancer_count)).collect()
        } else {
            self.dancers.clone()
        }
    }

    /// Camera-to-world transform of the unpanned rig.
    pub fn base_extrinsics(&self) -> CameraExtrinsics {
        let tilt = self.camera.tilt_deg.to_radians();
        CameraExtrinsics { rotation: Mat3::rot_x(PI - tilt), translation: [0.0, self.camera.height, 0.0] }
    }

    pub fn check(&self) -> Result<()> {
        let prob = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(scenario_error("fps must be positive"));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) || self.frame_count() < 2 {
            return Err(scenario_error("duration must cover at least 2 frames"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(scenario_error("image size must be positive"));
        }
        let d = &self.degradations;
        if !prob(d.ghost_rate) || !prob(d.mask_corruption_rate) || !prob(self.cloud.clutter_fraction) {
            return Err(scenario_error("probabilities must lie in [0, 1]"));
        }
        if [d.sigma_xy, d.sigma_depth, d.ghost_offset, d.ghost_score_penalty, self.cloud.ground_noise]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(scenario_error("noise levels, offsets and penalties must be nonnegative"));
        }
        if !self.dancers.is_empty() && self.dancers.len() != self.dancer_count {
            return Err(scenario_error(format!(
                "{} motions given for {} dancers",
                self.dancers.len(),
                self.dancer_count
            )));
        }
        let frames = self.frame_count();
        for o in &d.occlusions {
            if o.dancer >= self.dancer_count || o.start >= o.end || o.end > frames {
                return Err(scenario_error(format!(
                    "occlusion of dancer {} over frames {}..{} is outside the scenario",
                    o.dancer, o.start, o.end
                )));
            }
        }
        if self.scene_cuts.iter().any(|&c| c == 0 || c >= frames) || self.scene_cuts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(scenario_error("scene cuts must be increasing frames inside the scenario"));
        }
        if self.feature_bins < 2 {
            return Err(scenario_error("feature_bins must be at least 2"));
        }
        if !(self.camera.focal_px > 0.0 && self.camera.height > 0.0 && self.camera.tilt_deg.abs() < 80.0) {
            return Err(scenario_error("camera needs positive focal length and height and |tilt| < 80°"));
        }
        if self.stage_polygon.len() < 3 {
            return Err(scenario_error("stage polygon needs at least 3 vertices"));
        }
        for (i, m) in self.motions().iter().enumerate() {
            if m.waypoints.is_empty() || !(m.period_s > 0.0) {
                return Err(scenario_error(format!("dancer {i}: needs waypoints and a positive period")));
            }
            let dt = 1.0 / self.fps;
            for k in 0..frames {
                let t = k as f64 * dt;
                let (a, b) = (m.position(t), m.position(t + dt));
                let speed = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt() / dt;
                if speed > m.speed_limit {
                    return Err(scenario_error(format!(
                        "dancer {i} moves at {speed:.3} m/s at frame {k}, above its limit {} m/s",
                        m.speed_limit
                    )));
                }
            }
        }
        Ok(())
    }
}

fn body_at(ground: [f64; 3]) -> Vec<Vec3<f64>> {
    BODY.iter().map(|(_, o)| add(ground, *o)).collect()
}

struct Camera {
    to_camera: CameraExtrinsics,
    focal: f64,
    center: Vec2<f64>,
}

impl Camera {
    fn project(&self, p: Vec3<f64>) -> Vec2<f64> {
        [self.center[0] + self.focal * p[0] / p[2], self.center[1] + self.focal * p[1] / p[2]]
    }

    fn observe(&self, world: &[Vec3<f64>]) -> Skeleton {
        let joints3d: Vec<Vec3<f64>> = world.iter().map(|&w| self.to_camera.apply(w)).collect();
        let joints2d = joints3d.iter().map(|&p| self.project(p)).collect();
        Skeleton { joints3d, joints2d }
    }
}

fn rig_motion(spec: &ScenarioSpec, frame: u32) -> CameraExtrinsics {
    let angle = (spec.camera.pan_deg_per_s * frame as f64 / spec.fps).to_radians();
    CameraExtrinsics { rotation: Mat3::rot_y(angle), translation: [0.0; 3] }
}

fn mask_around(spec: &ScenarioSpec, joints2d: &[Vec2<f64>]) -> RleMask {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in joints2d {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    RleMask::rectangle(
        spec.width,
        spec.height,
        (lo[0] - MASK_MARGIN_PX).floor() as i64,
        (lo[1] - MASK_MARGIN_PX).floor() as i64,
        (hi[0] + MASK_MARGIN_PX).ceil() as i64,
        (hi[1] + MASK_MARGIN_PX).ceil() as i64,
    )
}

fn features(spec: &ScenarioSpec, rng: &mut ChaCha8Rng) -> Result<FrameFeatures> {
    let bins = spec.feature_bins;
    let frames = spec.frame_count();
    let mut rows = Vec::with_capacity(frames as usize);
    let mut scene = 0usize;
    let base = |scene: usize| -> Vec<f64> {
        let mut h = vec![0.2 / bins as f64; bins];
        h[(2 * scene) % bins] += 0.4;
        h[(2 * scene + 1) % bins] += 0.4;
        h
    };
    let mut walk = base(0);
    for k in 0..frames {
        if spec.scene_cuts.contains(&k) {
            scene += 1;
            walk = base(scene);
        }
        for v in walk.iter_mut() {
            *v = (*v * (1.0 + 0.02 * (rng.random::<f64>() - 0.5))).max(1e-6);
        }
        let total: f64 = walk.iter().sum();
        walk.iter_mut().for_each(|v| *v /= total);
        rows.push(walk.clone());
    }
    FrameFeatures::new(rows)
}

fn point_cloud(spec: &ScenarioSpec, base: &CameraExtrinsics, rng: &mut ChaCha8Rng) -> Result<PointCloud> {
    let to_camera = base.inverse();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for v in &spec.stage_polygon {
        for a in 0..2 {
            lo[a] = lo[a].min(v[a]);
            hi[a] = hi[a].max(v[a]);
        }
    }
    let n = spec.cloud.points.max(1);
    let clutter = (n as f64 * spec.cloud.clutter_fraction).round() as usize;
    let noise = Normal::new(0.0, spec.cloud.ground_noise.max(0.0)).map_err(|e| scenario_error(e.to_string()))?;
    let points = (0..n)
        .map(|i| {
            let x = rng.random_range(lo[0]..=hi[0]);
            let z = rng.random_range(lo[1]..=hi[1]);
            let y = if i < clutter {
                rng.random_range(0.05..1.8)
            } else if spec.cloud.ground_noise > 0.0 {
                noise.sample(rng)
            } else {
                0.0
            };
            to_camera.apply([x, y, z])
        })
        .collect();
    PointCloud::new(points, YAxis::Down)
}

/// Generates a scenario; identical specs give identical scenarios.
pub fn generate(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Ghosts draw from their own stream, always consuming the same values, so
    // raising ghost_rate only adds ghosts.
    let mut ghost_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    ghost_rng.set_stream(1);
    let layout = body_layout();
    let base = spec.base_extrinsics();
    let motions = spec.motions();
    let frames = spec.frame_count();
    let d = &spec.degradations;
    let normal = |s: f64| Normal::new(0.0, s).map_err(|e| scenario_error(e.to_string()));
    let (nxy, nz) = (normal(d.sigma_xy)?, normal(d.sigma_depth)?);
    let jitter = |rng: &mut ChaCha8Rng| -> Vec3<f64> {
        if d.sigma_xy == 0.0 && d.sigma_depth == 0.0 {
            return [0.0; 3];
        }
        [nxy.sample(rng), nxy.sample(rng), nz.sample(rng)]
    };

    let mut truth: Vec<Track> =
        (0..spec.dancer_count).map(|i| Track { id: i as i32, samples: Vec::new(), provenance: Provenance::Raw }).collect();
    let mut seq_frames = Vec::with_capacity(frames as usize);
    let mut sources = Vec::with_capacity(frames as usize);
    let mut masks = Vec::with_capacity(frames as usize);
    let mut motion = BTreeMap::new();

    for k in 0..frames {
        let t = k as f64 / spec.fps;
        let rig = rig_motion(spec, k);
        if spec.camera.pan_deg_per_s != 0.0 {
            motion.insert(k, rig);
        }
        let camera = Camera {
            to_camera: rig.after(&base).inverse(),
            focal: spec.camera.focal_px,
            center: [spec.width as f64 / 2.0, spec.height as f64 / 2.0],
        };
        let mut dets: Vec<(Source, Detection)> = Vec::new();
        let mut frame_masks: Vec<MaskEntry> = Vec::new();
        for (i, m) in motions.iter().enumerate() {
            let g = m.position(t);
            let world = body_at([g[0], 0.0, g[1]]);
            let visible_truth = camera.observe(&world);
            truth[i].samples.push(Sample {
                frame: k,
                pelvis: world[0],
                skeleton: Skeleton { joints3d: world.clone(), joints2d: visible_truth.joints2d.clone() },
                detection: None,
            });
            if d.occlusions.iter().any(|o| o.dancer == i && (o.start..o.end).contains(&k)) {
                continue;
            }
            frame_masks.push(MaskEntry { idsam: i as u32 + 1, mask: mask_around(spec, &visible_truth.joints2d) });
            let shift = jitter(&mut rng);
            let shifted: Vec<Vec3<f64>> = visible_truth.joints3d.iter().map(|&p| add(p, shift)).collect();
            let skeleton = Skeleton { joints2d: shifted.iter().map(|&p| camera.project(p)).collect(), joints3d: shifted };
            dets.push((Source::Dancer(i), Detection { skeleton, score: DETECTION_SCORE, body_params: None }));
            let (u, a, shift) = if d.ghost_rate > 0.0 {
                (ghost_rng.random::<f64>(), ghost_rng.random_range(0.0..2.0 * PI), jitter(&mut ghost_rng))
            } else {
                (1.0, 0.0, [0.0; 3])
            };
            if u < d.ghost_rate {
                let ghost_world = body_at([g[0] + d.ghost_offset * a.cos(), 0.0, g[1] + d.ghost_offset * a.sin()]);
                let shifted: Vec<Vec3<f64>> =
                    camera.observe(&ghost_world).joints3d.iter().map(|&p| add(p, shift)).collect();
                let skeleton = Skeleton { joints2d: shifted.iter().map(|&p| camera.project(p)).collect(), joints3d: shifted };
                let score = (DETECTION_SCORE - d.ghost_score_penalty).clamp(0.0, 1.0);
                dets.push((Source::Ghost(i), Detection { skeleton, score, body_params: None }));
            }
        }
        for (a, pos) in d.audience.iter().enumerate() {
            let obs = camera.observe(&body_at(*pos));
            frame_masks.push(MaskEntry { idsam: AUDIENCE_IDSAM + a as u32, mask: mask_around(spec, &obs.joints2d) });
            dets.push((Source::Audience(a), Detection { skeleton: obs, score: DETECTION_SCORE, body_params: None }));
        }
        if d.mask_corruption_rate > 0.0 && frame_masks.len() >= 2 && rng.random::<f64>() < d.mask_corruption_rate {
            let a = rng.random_range(0..frame_masks.len());
            let mut b = rng.random_range(0..frame_masks.len() - 1);
            if b >= a {
                b += 1;
            }
            let (ia, ib) = (frame_masks[a].idsam, frame_masks[b].idsam);
            frame_masks[a].idsam = ib;
            frame_masks[b].idsam = ia;
        }
        frame_masks.sort_by_key(|m| m.idsam);
        if dets.len() > 1 {
            dets.shuffle(&mut rng);
        }
        sources.push(dets.iter().map(|(s, _)| *s).collect());
        seq_frames.push(Frame { index: k, detections: dets.into_iter().map(|(_, d)| d).collect() });
        masks.push(MaskFrame { frame: k, masks: frame_masks });
    }

    let detections = DetectionSequence { fps: spec.fps, width: spec.width, height: spec.height, layout: layout.clone(), frames: seq_frames };
    detections.ensure_valid()?;
    let cloud = point_cloud(spec, &base, &mut rng)?;
    let features = features(spec, &mut rng)?;
    Ok(Scenario {
        truth: TrackSet { fps: spec.fps, layout, tracks: truth },
        detections,
        sources,
        masks,
        cloud,
        features,
        cuts: CutList::new(spec.scene_cuts.clone())?,
        base,
        motion: FrameExtrinsics { frames: motion },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dist;

    fn short(mut spec: ScenarioSpec) -> ScenarioSpec {
        spec.duration_s = 2.0;
        spec.cloud.points = 500;
        spec
    }

    #[test]
    fn zero_degradation_is_truth_in_camera_frame() {
        let s = generate(&short(ScenarioSpec::default())).unwrap();
        let to_cam = s.base.inverse();
        for (f, frame) in s.detections.frames.iter().enumerate() {
            assert_eq!(frame.detections.len(), 2);
            for (src, det) in s.sources[f].iter().zip(&frame.detections) {
                let Source::Dancer(i) = *src else { panic!("unexpected source") };
                let world = &s.truth.tracks[i].samples[f].skeleton.joints3d;
                for (p, w) in det.skeleton.joints3d.iter().zip(world) {
                    assert_eq!(*p, to_cam.apply(*w));
                }
            }
        }
    }

    #[test]
    fn generator_root_is_pelvis() {
        let spec = ScenarioSpec {
            dancer_count: 1,
            dancers: vec![DancerMotion { waypoints: vec![[0.5, 4.0]], ..DancerMotion::default() }],
            ..short(ScenarioSpec::default())
        };
        let s = generate(&spec).unwrap();
        let sample = &s.truth.tracks[0].samples[0];
        assert_eq!(crate::model::pelvis(&sample.skeleton, &s.truth.layout), [0.5, 0.95, 4.0]);
    }

    #[test]
    fn full_ghost_rate_doubles_detections() {
        let mut spec = short(ScenarioSpec { dancer_count: 1, ..ScenarioSpec::default() });
        spec.degradations.ghost_rate = 1.0;
        let s = generate(&spec).unwrap();
        assert!(s.detections.frames.iter().all(|f| f.detections.len() == 2));
        assert_eq!(s.ghost_count(), s.detections.frames.len());
    }

    #[test]
    fn same_seed_same_scenario() {
        let mut spec = short(ScenarioSpec::default());
        spec.degradations.sigma_depth = 0.1;
        spec.degradations.ghost_rate = 0.3;
        spec.degradations.mask_corruption_rate = 0.2;
        spec.seed = 42;
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let mut other = spec.clone();
        other.seed = 43;
        assert_ne!(generate(&spec).unwrap().detections, generate(&other).unwrap().detections);
    }

    #[test]
    fn speed_limit_violation_is_rejected() {
        let mut spec = short(ScenarioSpec { dancer_count: 1, ..ScenarioSpec::default() });
        spec.dancers = vec![DancerMotion { waypoints: vec![[-3.0, -6.0], [3.0, -6.0]], period_s: 1.0, phase: 0.0, speed_limit: 2.0 }];
        assert!(matches!(generate(&spec), Err(Error::Scenario(_))));
    }

    #[test]
    fn bad_occlusion_rejected() {
        let mut spec = short(ScenarioSpec::default());
        spec.degradations.occlusions = vec![Occlusion { dancer: 0, start: 10, end: 10_000 }];
        assert!(matches!(generate(&spec), Err(Error::Scenario(_))));
    }

    #[test]
    fn occluded_dancer_has_no_detection_or_mask() {
        let mut spec = short(ScenarioSpec::default());
        spec.degradations.occlusions = vec![Occlusion { dancer: 1, start: 50, end: 60 }];
        let s = generate(&spec).unwrap();
        for k in 0..s.detections.frames.len() {
            let hidden = (50..60).contains(&k);
            assert_eq!(s.detections.frames[k].detections.len(), if hidden { 1 } else { 2 });
            assert_eq!(s.masks[k].masks.iter().any(|m| m.idsam == 2), !hidden);
        }
        assert_eq!(s.truth.tracks[1].samples.len(), s.detections.frames.len());
    }

    #[test]
    fn default_dancers_stay_apart_and_on_screen() {
        let s = generate(&ScenarioSpec { duration_s: 10.0, ..ScenarioSpec::default() }).unwrap();
        for f in 0..s.truth.tracks[0].samples.len() {
            let (a, b) = (&s.truth.tracks[0].samples[f], &s.truth.tracks[1].samples[f]);
            assert!(dist(a.pelvis, b.pelvis) > 0.6);
            for smp in [a, b] {
                let h = smp.skeleton.joints2d[HEAD];
                assert!(h[0] > 0.0 && h[0] < 1280.0 && h[1] > 0.0 && h[1] < 720.0);
            }
        }
    }

    #[test]
    fn masks_contain_true_heads() {
        let s = generate(&short(ScenarioSpec::default())).unwrap();
        for (k, mf) in s.masks.iter().enumerate() {
            for (i, t) in s.truth.tracks.iter().enumerate() {
                let id = crate::track::mask_at(mf, t.samples[k].skeleton.joints2d[HEAD], 1280, 720);
                assert_eq!(id, Some(i as u32 + 1));
            }
        }
    }

    #[test]
    fn cloud_ground_points_lie_on_world_plane() {
        let s = generate(&short(ScenarioSpec::default())).unwrap();
        let on_ground = s.cloud.points().iter().filter(|p| s.base.apply(**p)[1].abs() < 1e-12).count();
        assert_eq!(on_ground, 350);
    }

    #[test]
    fn scene_cuts_jump_features() {
        let mut spec = short(ScenarioSpec::default());
        spec.scene_cuts = vec![70, 120];
        let s = generate(&spec).unwrap();
        let cuts = crate::scenecut::detect_cuts(s.features.rows(), 0.3).unwrap();
        assert_eq!(cuts.cut_frames, vec![70, 120]);
    }

    #[test]
    fn catmull_rom_passes_through_waypoints() {
        let m = default_motion(0, 2);
        for (k, w) in m.waypoints.iter().enumerate() {
            let p = m.position(k as f64 / 8.0 * m.period_s);
            assert!((p[0] - w[0]).abs() < 1e-12 && (p[1] - w[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn spec_json_defaults() {
        let spec: ScenarioSpec = serde_json::from_str(r#"{"dancer_count": 3, "seed": 9}"#).unwrap();
        assert_eq!(spec.fps, 100.0);
        assert_eq!(spec.motions().len(), 3);
        assert!(serde_json::from_str::<ScenarioSpec>(r#"{"dancers_count": 3}"#).is_err());
    }
}
