//! End-to-end orchestration: scene cuts, then per scene cleanse, tracking,
//! world transform, mask assignment, re-ID fusion, ROI filtering and
//! smoothing; finally the track file, the stream binary and a manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cleanse::surviving_indices;
use crate::error::{Error, Result};
use crate::geom::{extrinsics_from_ground, fit_ground_line, to_world};
use crate::io::{self, ExtrinsicsFile, MaskFrame};
use crate::model::Frame;
use crate::scenecut::{detect_cuts, split_sequence, CutList};
use crate::smooth::smooth_tracks;
use crate::track::{assign_mask_ids, build_tracks, fuse_reid, min_len_from_rule, roi_filter};
use crate::{CameraExtrinsics, DetectionSequence, FrameFeatures, GroundLine, PipelineConfig, PointCloud, Track, TrackSet};

pub const TRACKS_FILE: &str = "tracks.json";
pub const STREAM_FILE: &str = "stream.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Load,
    Cuts,
    Ground,
    Cleanse,
    Track,
    ToWorld,
    AssignMaskIds,
    FuseReid,
    RoiFilter,
    Smooth,
    Write,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Load => "load",
            Stage::Cuts => "cuts",
            Stage::Ground => "ground",
            Stage::Cleanse => "cleanse",
            Stage::Track => "track",
            Stage::ToWorld => "to_world",
            Stage::AssignMaskIds => "assign_mask_ids",
            Stage::FuseReid => "fuse_reid",
            Stage::RoiFilter => "roi_filter",
            Stage::Smooth => "smooth",
            Stage::Write => "write",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A failure tagged with the stage that raised it.
#[derive(Debug, thiserror::Error)]
#[error("stage {stage}: {error}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub error: Error,
}

impl StageError {
    pub fn new(stage: Stage, error: Error) -> Self {
        StageError { stage, error }
    }

    /// 2 for a missing input file, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self.error {
            Error::MissingInput(_) => 2,
            _ => 1,
        }
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> Result<T, StageError> {
        self.map_err(|e| StageError::new(stage, e))
    }
}

/// Progress report: the stage just entered and the completed fraction of the run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Progress {
    pub stage: Stage,
    pub scene: Option<usize>,
    pub fraction: f64,
}

pub type Observer<'a> = &'a (dyn Fn(Progress) + Sync);

/// Parsed inputs of one run.
#[derive(Debug, Clone, Default)]
pub struct Inputs {
    pub detections: Option<DetectionSequence>,
    pub masks: Option<Vec<MaskFrame>>,
    pub cloud: Option<PointCloud>,
    pub features: Option<FrameFeatures>,
    pub extrinsics: Option<ExtrinsicsFile>,
}

/// Input file locations; only `detections` is mandatory.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputPaths {
    pub detections: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloud: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extrinsics: Option<PathBuf>,
}

impl InputPaths {
    fn listed(&self) -> Vec<(&'static str, &Path)> {
        let mut out = vec![("detections", self.detections.as_path())];
        for (name, p) in [
            ("masks", &self.masks),
            ("cloud", &self.cloud),
            ("features", &self.features),
            ("extrinsics", &self.extrinsics),
        ] {
            if let Some(p) = p {
                out.push((name, p.as_path()));
            }
        }
        out
    }
}

/// Reads an input file; a nonexistent path is a [`Error::MissingInput`].
pub fn read_input(name: &str, path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingInput(format!("{name}: {} does not exist", path.display())),
        _ => Error::Io(e),
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

/// Reads and parses every listed input, recording digests.
pub fn load_inputs(paths: &InputPaths) -> Result<(Inputs, BTreeMap<String, InputDigest>), StageError> {
    let mut digests = BTreeMap::new();
    let mut raw = BTreeMap::new();
    for (name, path) in paths.listed() {
        let bytes = read_input(name, path).at(Stage::Load)?;
        digests.insert(
            name.to_string(),
            InputDigest { path: path.to_path_buf(), sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 },
        );
        raw.insert(name, bytes);
    }
    let named = |name: &str, e: Error| StageError::new(Stage::Load, Error::Input(format!("{name}: {e}")));
    let seq = io::parse_detections(&raw["detections"]).map_err(|e| named("detections", e))?;
    let masks = raw.get("masks").map(|b| io::parse_masks(b, seq.width, seq.height)).transpose().map_err(|e| named("masks", e))?;
    let cloud = raw.get("cloud").map(|b| io::parse_pointcloud(b)).transpose().map_err(|e| named("cloud", e))?;
    let features = raw.get("features").map(|b| io::parse_features(b)).transpose().map_err(|e| named("features", e))?;
    let extrinsics =
        raw.get("extrinsics").map(|b| io::parse_extrinsics(b)).transpose().map_err(|e| named("extrinsics", e))?;
    Ok((Inputs { detections: Some(seq), masks, cloud, features, extrinsics }, digests))
}

/// One planned stage and why it runs or is skipped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlannedStage {
    pub stage: Stage,
    pub runs: bool,
    pub note: String,
}

/// Stage list for a run with the given inputs present, in execution order.
pub fn plan(cfg: &PipelineConfig, paths: &InputPaths) -> Vec<PlannedStage> {
    let step = |stage, runs, note: &str| PlannedStage { stage, runs, note: note.to_string() };
    let base_note = if paths.cloud.is_some() {
        "fit ground line to the point cloud"
    } else if paths.extrinsics.is_some() {
        "base transform from extrinsics file, identity if absent"
    } else {
        "no point cloud: identity base transform"
    };
    vec![
        step(Stage::Load, true, "parse and digest inputs"),
        step(Stage::Cuts, paths.features.is_some(), if paths.features.is_some() { "detect cuts in features" } else { "no features: single scene" }),
        step(Stage::Ground, paths.cloud.is_some(), base_note),
        step(Stage::Cleanse, true, "per scene"),
        step(Stage::Track, true, "per scene"),
        step(Stage::ToWorld, true, if paths.extrinsics.is_some() { "base then per-frame extrinsics" } else { "base transform only" }),
        step(Stage::AssignMaskIds, cfg.reid_fusion, if cfg.reid_fusion { "head point in masks" } else { "re-ID fusion disabled" }),
        step(Stage::FuseReid, cfg.reid_fusion, if cfg.reid_fusion { "majority idsam" } else { "re-ID fusion disabled" }),
        step(Stage::RoiFilter, cfg.roi_polygon.is_some(), if cfg.roi_polygon.is_some() { "stage polygon" } else { "no roi_polygon" }),
        step(Stage::Smooth, true, "linear-kernel RBF"),
        step(Stage::Write, true, "tracks.json, stream.bin, manifest.json"),
    ]
}

/// Everything a run computes, including intermediate track sets.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub cuts: CutList,
    pub ground: Option<GroundLine>,
    pub base: CameraExtrinsics,
    /// Surviving detection indices per frame after ghost removal.
    pub survivors: BTreeMap<u32, Vec<usize>>,
    /// Linked tracks in world coordinates, ids offset per scene.
    pub raw: TrackSet,
    /// Fused tracks including discarded ones, when fusion ran.
    pub fused: Option<TrackSet>,
    /// Final active tracks.
    pub tracks: TrackSet,
    pub timings_ms: BTreeMap<Stage, f64>,
}

struct SceneOut {
    survivors: BTreeMap<u32, Vec<usize>>,
    raw: TrackSet,
    fused: Option<TrackSet>,
    tracks: TrackSet,
}

struct Clock<'a> {
    timings: Mutex<BTreeMap<Stage, f64>>,
    done: AtomicUsize,
    total: usize,
    observer: Option<Observer<'a>>,
}

impl Clock<'_> {
    fn time<T>(&self, stage: Stage, scene: Option<usize>, f: impl FnOnce() -> Result<T>) -> Result<T, StageError> {
        if let Some(obs) = self.observer {
            let done = self.done.load(Ordering::SeqCst);
            obs(Progress { stage, scene, fraction: done as f64 / self.total as f64 });
        }
        let start = Instant::now();
        let out = f().at(stage);
        let ms = start.elapsed().as_secs_f64() * 1e3;
        *self.timings.lock().expect("timing lock").entry(stage).or_default() += ms;
        self.done.fetch_add(1, Ordering::SeqCst);
        out
    }
}

const SCENE_STAGES: usize = 7;

fn resolve_base(cfg: &PipelineConfig, inputs: &Inputs) -> Result<(Option<GroundLine>, CameraExtrinsics)> {
    if let Some(cloud) = &inputs.cloud {
        let line = fit_ground_line(cloud, cfg.ground_quantile, cfg.ground_bins, cfg.ground_iterations)?;
        let base = extrinsics_from_ground(&line);
        return Ok((Some(line), base));
    }
    let base = inputs.extrinsics.as_ref().and_then(|e| e.base).unwrap_or_else(CameraExtrinsics::identity);
    Ok((None, base))
}

fn process_scene(
    cfg: &PipelineConfig,
    inputs: &Inputs,
    base: &CameraExtrinsics,
    seq: &DetectionSequence,
    scene: usize,
    clock: &Clock<'_>,
) -> Result<SceneOut, StageError> {
    let s = Some(scene);
    let (cleaned, survivors) = clock.time(Stage::Cleanse, s, || {
        let mut survivors = BTreeMap::new();
        let frames = seq
            .frames
            .iter()
            .map(|f| {
                let keep = surviving_indices(&f.detections, cfg.ghost_min_separation, &seq.layout);
                let detections = keep.iter().map(|&i| f.detections[i].clone()).collect();
                survivors.insert(f.index, keep);
                Frame { index: f.index, detections }
            })
            .collect();
        Ok((DetectionSequence { frames, layout: seq.layout.clone(), ..*seq }, survivors))
    })?;
    let linked = clock.time(Stage::Track, s, || {
        let threshold = cfg.track_threshold_rule::<f64>()?.eval(seq.fps);
        Ok(build_tracks(&cleaned, threshold))
    })?;
    let per_frame = inputs.extrinsics.as_ref().map(|e| &e.frames);
    let raw = clock.time(Stage::ToWorld, s, || Ok(to_world(&linked, base, per_frame)))?;
    let fused = if cfg.reid_fusion {
        let masks = inputs.masks.as_deref().unwrap_or_default();
        let asg = clock.time(Stage::AssignMaskIds, s, || Ok(assign_mask_ids(masks, &cleaned)))?;
        Some(clock.time(Stage::FuseReid, s, || {
            let min_len = min_len_from_rule(&cfg.reid_min_len_rule::<f64>()?, seq.fps);
            Ok(fuse_reid(&raw, &asg, min_len))
        })?)
    } else {
        clock.done.fetch_add(2, Ordering::SeqCst);
        None
    };
    let active = |ts: &TrackSet| TrackSet {
        fps: ts.fps,
        layout: ts.layout.clone(),
        tracks: ts.active().cloned().collect(),
    };
    let mut tracks = active(fused.as_ref().unwrap_or(&raw));
    if let Some(poly) = &cfg.roi_polygon {
        tracks = clock.time(Stage::RoiFilter, s, || roi_filter(&tracks, poly))?;
    } else {
        clock.done.fetch_add(1, Ordering::SeqCst);
    }
    let tracks = clock.time(Stage::Smooth, s, || smooth_tracks(&tracks, cfg.rbf_smoothing, cfg.smooth_all_joints))?;
    Ok(SceneOut { survivors, raw, fused, tracks })
}

/// Concatenates per-scene track sets. With `by_label`, tracks sharing an id
/// across scenes become one track; otherwise each scene's ids are shifted
/// past the previous scene's. Discarded tracks go last.
fn merge_scenes(parts: Vec<TrackSet>, by_label: bool, fps: f64, layout: &crate::JointLayout) -> TrackSet {
    let mut labeled: BTreeMap<i32, Track> = BTreeMap::new();
    let mut discarded = Vec::new();
    let mut next = 0;
    for part in parts {
        let shift = next;
        for t in part.tracks {
            if t.is_discarded() {
                discarded.push(t);
                continue;
            }
            let id = if by_label { t.id } else { t.id + shift };
            next = next.max(id + 1);
            match labeled.get_mut(&id) {
                Some(existing) => existing.samples.extend(t.samples),
                None => {
                    labeled.insert(id, Track { id, ..t });
                }
            }
        }
    }
    let mut tracks: Vec<Track> = labeled.into_values().collect();
    tracks.extend(discarded);
    TrackSet { fps, layout: layout.clone(), tracks }
}

/// Runs every stage in memory.
pub fn process(cfg: &PipelineConfig, inputs: &Inputs, observer: Option<Observer<'_>>) -> Result<Outcome, StageError> {
    let cfg = cfg.clone().validated().at(Stage::Load)?;
    let seq = inputs
        .detections
        .as_ref()
        .ok_or_else(|| StageError::new(Stage::Load, Error::MissingInput("detections".into())))?;
    seq.ensure_valid().at(Stage::Load)?;
    if cfg.reid_fusion && inputs.masks.is_none() {
        return Err(StageError::new(
            Stage::Load,
            Error::MissingInput("masks: re-ID fusion is enabled but no masks were given (set reid_fusion to false to run without)".into()),
        ));
    }
    let mut clock = Clock { timings: Mutex::new(BTreeMap::new()), done: AtomicUsize::new(0), total: 3, observer };
    let cuts = clock.time(Stage::Cuts, None, || match &inputs.features {
        Some(features) => {
            let frames = seq.frames.last().map_or(0, |f| f.index as usize + 1);
            if features.len() < frames {
                return Err(Error::Input(format!("features cover {} frames, detections reach frame {}", features.len(), frames - 1)));
            }
            detect_cuts(features.rows(), cfg.cut_threshold)
        }
        None => CutList::new(Vec::new()),
    })?;
    clock.total = 3 + SCENE_STAGES * cuts.scene_count();
    let (ground, base) = clock.time(Stage::Ground, None, || resolve_base(&cfg, inputs))?;
    // Scenes keep original frame indices so masks and per-frame extrinsics line up.
    let scenes: Vec<DetectionSequence> = split_sequence(seq, &cuts)
        .into_iter()
        .map(|sc| {
            let mut s = sc.sequence;
            s.frames.iter_mut().for_each(|f| f.index += sc.offset);
            s
        })
        .collect();
    let results: Vec<Result<SceneOut, StageError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = scenes
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let (cfg, clock, base) = (&cfg, &clock, &base);
                scope.spawn(move || process_scene(cfg, inputs, base, s, k, clock))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("scene worker panicked")).collect()
    });
    let mut survivors = BTreeMap::new();
    let (mut raw, mut fused, mut tracks) = (Vec::new(), Vec::new(), Vec::new());
    for r in results {
        let out = r?;
        survivors.extend(out.survivors);
        raw.push(out.raw);
        if let Some(f) = out.fused {
            fused.push(f);
        }
        tracks.push(out.tracks);
    }
    let fusion = cfg.reid_fusion;
    let outcome = Outcome {
        cuts,
        ground,
        base,
        survivors,
        raw: merge_scenes(raw, false, seq.fps, &seq.layout),
        fused: fusion.then(|| merge_scenes(fused, true, seq.fps, &seq.layout)),
        tracks: merge_scenes(tracks, fusion, seq.fps, &seq.layout),
        timings_ms: std::mem::take(&mut *clock.timings.lock().expect("timing lock")),
    };
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundSummary {
    pub slope: f64,
    pub intercept: f64,
    pub tilt_deg: f64,
    pub camera_height: f64,
    pub inliers: usize,
}

/// Record of a finished run; together with the inputs it names, enough to
/// repeat the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: PipelineConfig,
    pub inputs: BTreeMap<String, InputDigest>,
    pub cuts: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground: Option<GroundSummary>,
    pub base: BaseTransform,
    pub track_count: usize,
    pub timings_ms: BTreeMap<String, f64>,
    pub outputs: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseTransform {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl RunManifest {
    /// Input paths as recorded.
    pub fn input_paths(&self) -> Result<InputPaths> {
        let get = |k: &str| self.inputs.get(k).map(|d| d.path.clone());
        Ok(InputPaths {
            detections: get("detections").ok_or_else(|| Error::MissingInput("manifest lists no detections".into()))?,
            masks: get("masks"),
            cloud: get("cloud"),
            features: get("features"),
            extrinsics: get("extrinsics"),
        })
    }

    /// Checks that the recorded inputs still have their recorded digests.
    pub fn verify_inputs(&self) -> Result<()> {
        for (name, d) in &self.inputs {
            let bytes = read_input(name, &d.path)?;
            let now = sha256_hex(&bytes);
            if now != d.sha256 {
                return Err(Error::Input(format!("{name}: {} changed since the run (sha256 {now}, recorded {})", d.path.display(), d.sha256)));
            }
        }
        Ok(())
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| Error::Format(format!("manifest: {e}")))
    }
}

/// Writes `bytes` to `dir/name` through a temporary sibling and a rename.
fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    let tmp = dir.join(format!(".{name}.partial"));
    let dest = dir.join(name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, &dest)?;
    Ok(dest)
}

/// Serialized outputs of an outcome: `tracks.json` and the stream binary.
pub fn render_outputs(outcome: &Outcome) -> Result<(Vec<u8>, Vec<u8>)> {
    Ok((io::write_tracks(&outcome.tracks, false)?, io::write_stream(&outcome.tracks, None)?))
}

/// Loads inputs, processes them and writes tracks, stream and manifest into
/// `out_dir`. On failure nothing from this run is left behind.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    paths: &InputPaths,
    out_dir: &Path,
    observer: Option<Observer<'_>>,
) -> Result<(RunManifest, Outcome), StageError> {
    let (inputs, digests) = load_inputs(paths)?;
    let outcome = process(cfg, &inputs, observer)?;
    if let Some(obs) = observer {
        obs(Progress { stage: Stage::Write, scene: None, fraction: 1.0 - 1e-9 });
    }
    let start = Instant::now();
    let written = (|| -> Result<RunManifest> {
        let (tracks, stream) = render_outputs(&outcome)?;
        fs::create_dir_all(out_dir)?;
        let mut outputs = BTreeMap::new();
        outputs.insert("tracks".to_string(), write_atomic(out_dir, TRACKS_FILE, &tracks)?);
        outputs.insert("stream".to_string(), write_atomic(out_dir, STREAM_FILE, &stream)?);
        let mut timings_ms: BTreeMap<String, f64> =
            outcome.timings_ms.iter().map(|(s, ms)| (s.name().to_string(), *ms)).collect();
        timings_ms.insert(Stage::Write.name().to_string(), start.elapsed().as_secs_f64() * 1e3);
        let manifest = RunManifest {
            tool: "stage-tracks".into(),
            version: crate::VERSION.into(),
            config: cfg.clone(),
            inputs: digests,
            cuts: outcome.cuts.cut_frames.clone(),
            ground: outcome.ground.as_ref().map(|g| GroundSummary {
                slope: g.slope,
                intercept: g.intercept,
                tilt_deg: g.tilt().to_degrees(),
                camera_height: outcome.base.camera_height(),
                inliers: g.inliers.len(),
            }),
            base: BaseTransform { rotation: outcome.base.rotation.to_row_major(), translation: outcome.base.translation },
            track_count: outcome.tracks.tracks.len(),
            timings_ms,
            outputs: outputs.clone(),
        };
        let bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        write_atomic(out_dir, MANIFEST_FILE, &bytes)?;
        Ok(manifest)
    })();
    match written {
        Ok(m) => Ok((m, outcome)),
        Err(e) => {
            for name in [TRACKS_FILE, STREAM_FILE, MANIFEST_FILE] {
                let _ = fs::remove_file(out_dir.join(format!(".{name}.partial")));
                let _ = fs::remove_file(out_dir.join(name));
            }
            Err(StageError::new(Stage::Write, e))
        }
    }
}
