//! Local HTTP service over a project directory: edit the config, start runs,
//! and read tracks and the playback stream of the latest finished run.
//!
//! A project directory holds the run inputs (`detections.json` and
//! optionally `masks.json`, `cloud.json` or `pointcloud.json`,
//! `features.json`, `extrinsics.json`), an optional `config.json`, and a
//! `runs/` directory with one numbered subdirectory per finished run. A run
//! is written to `runs/<n>.partial` and renamed when complete; readers hold
//! an `Arc` to the run they started with, so a swap never exposes partial
//! files.

pub mod range;

use std::fs;
use std::io::SeekFrom;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock, RwLockWriteGuard};

use axum::body::{Body, Bytes};
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::json;
use stage_tracks::io::{parse_config, write_config, StreamHeader, StreamReader};
use stage_tracks::pipeline::{run_pipeline, InputPaths, Progress, RunManifest, MANIFEST_FILE, STREAM_FILE, TRACKS_FILE};
use stage_tracks::{Error, PipelineConfig, VERSION};
use tokio::io::{AsyncReadExt, AsyncSeekExt};
use tokio_util::io::ReaderStream;

use range::{parse_range, ByteRange};

pub const VERSION_HEADER: &str = "x-stage-tracks-version";
const CONFIG_FILE: &str = "config.json";
const RUNS_DIR: &str = "runs";

/// A finished run directory and its stream index.
#[derive(Debug)]
pub struct RunView {
    pub number: u64,
    pub dir: PathBuf,
    pub manifest: Option<RunManifest>,
    pub header: StreamHeader,
    ranges: Vec<(u64, u64)>,
    stream_len: u64,
    retired: AtomicBool,
}

impl RunView {
    /// Opens a run directory containing `tracks.json` and `stream.bin`; the
    /// manifest is optional.
    pub fn load(dir: &Path, number: u64) -> stage_tracks::Result<Self> {
        let manifest = match fs::read(dir.join(MANIFEST_FILE)) {
            Ok(b) => Some(RunManifest::parse(&b)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(e.into()),
        };
        if !dir.join(TRACKS_FILE).is_file() {
            return Err(Error::MissingInput(format!("{} has no {TRACKS_FILE}", dir.display())));
        }
        let reader = StreamReader::open(fs::File::open(dir.join(STREAM_FILE))?)?;
        let header = *reader.header();
        let ranges = (0..header.frame_count as usize).map(|k| reader.frame_range(k).expect("index entry")).collect();
        Ok(RunView {
            number,
            dir: dir.to_path_buf(),
            manifest,
            header,
            ranges,
            stream_len: reader.byte_len(),
            retired: AtomicBool::new(false),
        })
    }

    pub fn frame_range(&self, k: usize) -> Option<(u64, u64)> {
        self.ranges.get(k).copied()
    }

    pub fn stream_len(&self) -> u64 {
        self.stream_len
    }
}

impl Drop for RunView {
    fn drop(&mut self) {
        if self.retired.load(Ordering::SeqCst) {
            if let Err(e) = fs::remove_dir_all(&self.dir) {
                log::warn!("could not remove superseded run {}: {e}", self.dir.display());
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Idle,
    Running { stage: String, progress: f64 },
    Failed { stage: String, message: String },
}

/// Shared service state: the config, the run status and the current run.
#[derive(Debug)]
pub struct AppState {
    project: PathBuf,
    config: RwLock<PipelineConfig>,
    status: Mutex<RunStatus>,
    current: RwLock<Option<Arc<RunView>>>,
    next_run: AtomicU64,
    gate: RwLock<()>,
}

fn first_existing(dir: &Path, names: &[&str]) -> Option<PathBuf> {
    names.iter().map(|n| dir.join(n)).find(|p| p.is_file())
}

impl AppState {
    /// Loads `config.json` if present and the newest finished run, and
    /// clears leftovers of interrupted runs.
    pub fn open(project: &Path) -> stage_tracks::Result<Self> {
        let config = match fs::read(project.join(CONFIG_FILE)) {
            Ok(b) => parse_config(&b)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => PipelineConfig::default(),
            Err(e) => return Err(e.into()),
        };
        let runs = project.join(RUNS_DIR);
        fs::create_dir_all(&runs)?;
        let mut newest: Option<u64> = None;
        let mut highest = 0;
        for entry in fs::read_dir(&runs)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.ends_with(".partial") {
                let _ = fs::remove_dir_all(entry.path());
                continue;
            }
            if let Ok(n) = name.parse::<u64>() {
                highest = highest.max(n);
                if entry.path().join(TRACKS_FILE).is_file() {
                    newest = newest.max(Some(n));
                }
            }
        }
        let current = match newest {
            Some(n) => Some(Arc::new(RunView::load(&runs.join(n.to_string()), n)?)),
            None => None,
        };
        Ok(AppState {
            project: project.to_path_buf(),
            config: RwLock::new(config),
            status: Mutex::new(RunStatus::Idle),
            current: RwLock::new(current),
            next_run: AtomicU64::new(highest + 1),
            gate: RwLock::new(()),
        })
    }

    pub fn config(&self) -> PipelineConfig {
        self.config.read().expect("config lock").clone()
    }

    pub fn status(&self) -> RunStatus {
        self.status.lock().expect("status lock").clone()
    }

    pub fn current(&self) -> Option<Arc<RunView>> {
        self.current.read().expect("run lock").clone()
    }

    /// Inputs found in the project directory right now.
    pub fn input_paths(&self) -> InputPaths {
        let p = &self.project;
        InputPaths {
            detections: p.join("detections.json"),
            masks: first_existing(p, &["masks.json"]),
            cloud: first_existing(p, &["cloud.json", "pointcloud.json"]),
            features: first_existing(p, &["features.json"]),
            extrinsics: first_existing(p, &["extrinsics.json"]),
        }
    }

    /// Holds every run at its next stage boundary until the guard drops.
    pub fn pause_runs(&self) -> RwLockWriteGuard<'_, ()> {
        self.gate.write().expect("gate lock")
    }

    fn is_running(&self) -> bool {
        matches!(*self.status.lock().expect("status lock"), RunStatus::Running { .. })
    }

    fn set_status(&self, s: RunStatus) {
        *self.status.lock().expect("status lock") = s;
    }

    /// Marks a run as started unless one is in flight.
    fn try_begin(&self) -> bool {
        let mut s = self.status.lock().expect("status lock");
        if matches!(*s, RunStatus::Running { .. }) {
            return false;
        }
        *s = RunStatus::Running { stage: "load".into(), progress: 0.0 };
        true
    }

    fn swap_in(&self, run: RunView) {
        let mut cur = self.current.write().expect("run lock");
        if let Some(old) = cur.take() {
            old.retired.store(true, Ordering::SeqCst);
        }
        *cur = Some(Arc::new(run));
    }

    /// Runs the pipeline synchronously into a fresh run directory.
    fn execute(self: &Arc<Self>) {
        let n = self.next_run.fetch_add(1, Ordering::SeqCst);
        let runs = self.project.join(RUNS_DIR);
        let partial = runs.join(format!("{n}.partial"));
        let done = runs.join(n.to_string());
        let cfg = self.config();
        let paths = self.input_paths();
        let me = Arc::clone(self);
        let observer = move |p: Progress| {
            drop(me.gate.read().expect("gate lock"));
            me.set_status(RunStatus::Running { stage: p.stage.name().into(), progress: p.fraction });
        };
        let result = run_pipeline(&cfg, &paths, &partial, Some(&observer))
            .map_err(|e| (e.stage.name().to_string(), e.error.to_string()))
            .and_then(|_| {
                fs::rename(&partial, &done).map_err(|e| ("write".to_string(), e.to_string()))?;
                RunView::load(&done, n).map_err(|e| ("write".to_string(), e.to_string()))
            });
        match result {
            Ok(view) => {
                self.swap_in(view);
                self.set_status(RunStatus::Idle);
                log::info!("run {n} finished");
            }
            Err((stage, message)) => {
                let _ = fs::remove_dir_all(&partial);
                let _ = fs::remove_dir_all(&done);
                log::error!("run {n} failed in {stage}: {message}");
                self.set_status(RunStatus::Failed { stage, message });
            }
        }
    }
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn no_run() -> Response {
    error(StatusCode::NOT_FOUND, "no finished run yet; POST /run first")
}

async fn get_config(State(st): State<Arc<AppState>>) -> Response {
    Json(st.config()).into_response()
}

async fn put_config(State(st): State<Arc<AppState>>, body: Bytes) -> Response {
    if st.is_running() {
        return error(StatusCode::CONFLICT, "a run is in progress; config changes are rejected until it ends");
    }
    let cfg = match parse_config(&body) {
        Ok(c) => c,
        Err(Error::Config(fields)) => {
            return (StatusCode::UNPROCESSABLE_ENTITY, Json(json!({ "errors": fields }))).into_response();
        }
        Err(e) => return (StatusCode::UNPROCESSABLE_ENTITY, Json(json!({ "errors": [{ "field": "$", "message": e.to_string() }] }))).into_response(),
    };
    {
        let mut guard = st.config.write().expect("config lock");
        if st.is_running() {
            return error(StatusCode::CONFLICT, "a run is in progress; config changes are rejected until it ends");
        }
        if let Err(e) = fs::write(st.project.join(CONFIG_FILE), write_config(&cfg)) {
            return error(StatusCode::INTERNAL_SERVER_ERROR, format!("could not save config: {e}"));
        }
        *guard = cfg.clone();
    }
    Json(cfg).into_response()
}

async fn post_run(State(st): State<Arc<AppState>>) -> Response {
    // Holding the config lock keeps a concurrent PUT from slipping in between.
    let started = {
        let _cfg = st.config.read().expect("config lock");
        st.try_begin()
    };
    if !started {
        return error(StatusCode::CONFLICT, "a run is already in progress");
    }
    let worker = Arc::clone(&st);
    tokio::task::spawn_blocking(move || worker.execute());
    let mut res = (StatusCode::ACCEPTED, Json(json!({ "status_url": "/status" }))).into_response();
    res.headers_mut().insert(header::LOCATION, HeaderValue::from_static("/status"));
    res
}

async fn get_status(State(st): State<Arc<AppState>>) -> Response {
    let mut body = serde_json::to_value(st.status()).expect("status serializes");
    let current = st.current();
    body["run"] = json!(current.as_ref().map(|r| r.number));
    body["manifest"] = json!(current.as_ref().and_then(|r| r.manifest.clone()));
    Json(body).into_response()
}

async fn get_tracks(State(st): State<Arc<AppState>>) -> Response {
    let Some(run) = st.current() else { return no_run() };
    match tokio::fs::read(run.dir.join(TRACKS_FILE)).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "application/json")], bytes).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn get_meta(State(st): State<Arc<AppState>>) -> Response {
    let Some(run) = st.current() else { return no_run() };
    let h = run.header;
    Json(json!({
        "magic": "STGTRKS",
        "version": h.version,
        "frame_count": h.frame_count,
        "max_persons": h.max_persons,
        "joint_count": h.joint_count,
        "vertex_count": h.vertex_count,
        "fps": h.fps,
        "byte_len": run.stream_len(),
        "run": run.number,
    }))
    .into_response()
}

async fn open_slice(run: &RunView, start: u64, len: u64) -> std::io::Result<tokio::io::Take<tokio::fs::File>> {
    let mut f = tokio::fs::File::open(run.dir.join(STREAM_FILE)).await?;
    f.seek(SeekFrom::Start(start)).await?;
    Ok(f.take(len))
}

async fn get_frame(State(st): State<Arc<AppState>>, UrlPath(k): UrlPath<String>) -> Response {
    let Some(run) = st.current() else { return no_run() };
    let Some((start, len)) = k.parse::<usize>().ok().and_then(|k| run.frame_range(k)) else {
        return error(StatusCode::NOT_FOUND, format!("unknown frame `{k}`; stream has {} frames", run.header.frame_count));
    };
    let mut buf = Vec::with_capacity(len as usize);
    match open_slice(&run, start, len).await {
        Ok(mut r) => {
            if let Err(e) = r.read_to_end(&mut buf).await {
                return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
            }
        }
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
    ([(header::CONTENT_TYPE, "application/octet-stream")], buf).into_response()
}

async fn get_stream(State(st): State<Arc<AppState>>, headers: HeaderMap) -> Response {
    let Some(run) = st.current() else { return no_run() };
    let total = run.stream_len();
    let requested = headers
        .get(header::RANGE)
        .and_then(|v| v.to_str().ok())
        .map_or(ByteRange::Full, |v| parse_range(v, total));
    let (status, start, len) = match requested {
        ByteRange::Full => (StatusCode::OK, 0, total),
        ByteRange::Partial { start, end } => (StatusCode::PARTIAL_CONTENT, start, end - start + 1),
        ByteRange::Unsatisfiable => {
            let mut res = error(StatusCode::RANGE_NOT_SATISFIABLE, format!("stream has {total} bytes"));
            res.headers_mut().insert(header::CONTENT_RANGE, HeaderValue::from_str(&format!("bytes */{total}")).unwrap());
            return res;
        }
    };
    let reader = match open_slice(&run, start, len).await {
        Ok(r) => r,
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    };
    // The stream keeps `run` alive (and its directory on disk) until sent.
    let keep = Arc::clone(&run);
    let body = Body::from_stream(tokio_stream_with(ReaderStream::new(reader), keep));
    let mut res = (status, body).into_response();
    let h = res.headers_mut();
    h.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/octet-stream"));
    h.insert(header::ACCEPT_RANGES, HeaderValue::from_static("bytes"));
    h.insert(header::CONTENT_LENGTH, HeaderValue::from(len));
    if status == StatusCode::PARTIAL_CONTENT {
        let v = format!("bytes {start}-{}/{total}", start + len - 1);
        h.insert(header::CONTENT_RANGE, HeaderValue::from_str(&v).unwrap());
    }
    res
}

/// Wraps a byte stream so that `guard` lives as long as the stream.
fn tokio_stream_with<S, G>(inner: S, guard: G) -> impl futures_core::Stream<Item = S::Item> + Send
where
    S: futures_core::Stream + Send + Unpin,
    G: Send + Unpin,
{
    struct Guarded<S, G>(S, #[allow(dead_code)] G);
    impl<S: futures_core::Stream + Unpin, G: Unpin> futures_core::Stream for Guarded<S, G> {
        type Item = S::Item;
        fn poll_next(mut self: std::pin::Pin<&mut Self>, cx: &mut std::task::Context<'_>) -> std::task::Poll<Option<Self::Item>> {
            std::pin::Pin::new(&mut self.0).poll_next(cx)
        }
    }
    Guarded(inner, guard)
}

async fn stamp(mut res: Response) -> Response {
    let h = res.headers_mut();
    h.insert(VERSION_HEADER, HeaderValue::from_static(VERSION));
    h.insert(header::ACCESS_CONTROL_ALLOW_ORIGIN, HeaderValue::from_static("*"));
    h.insert(header::ACCESS_CONTROL_EXPOSE_HEADERS, HeaderValue::from_static("content-range, x-stage-tracks-version"));
    res
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/config", get(get_config).put(put_config))
        .route("/run", post(post_run))
        .route("/status", get(get_status))
        .route("/tracks", get(get_tracks))
        .route("/stream", get(get_stream))
        .route("/stream/meta", get(get_meta))
        .route("/stream/frames/{k}", get(get_frame))
        .fallback(|| async { error(StatusCode::NOT_FOUND, "no such endpoint") })
        .layer(axum::middleware::map_response(stamp))
        .with_state(state)
}

/// Serves `project` on `addr` until the process ends.
pub async fn serve(project: &Path, addr: SocketAddr) -> std::io::Result<()> {
    let state = Arc::new(AppState::open(project).map_err(std::io::Error::other)?);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("serving {} on http://{}", project.display(), listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
