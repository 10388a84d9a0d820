use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use stage_tracks::cleanse::cleanse_sequence;
use stage_tracks::geom::{extrinsics_from_ground, fit_ground_line, to_world};
use stage_tracks::io::{
    parse_config, parse_detections, parse_extrinsics, parse_features, parse_masks, parse_pointcloud, parse_tracks, write_cuts,
    write_detections, write_extrinsics, write_tracks, ExtrinsicsFile,
};
use stage_tracks::pipeline::{plan, read_input, run_pipeline, InputPaths, Progress, RunManifest, StageError};
use stage_tracks::scenecut::detect_cuts;
use stage_tracks::smooth::smooth_tracks;
use stage_tracks::synth::{evaluate, generate, ScenarioSpec};
use stage_tracks::track::{assign_mask_ids, build_tracks, fuse_reid, min_len_from_rule, roi_filter};
use stage_tracks::{Error, PipelineConfig, VERSION};

#[derive(Parser)]
#[command(name = "stage-tracks", version = VERSION, about = "Clean, link and smooth multi-person 3D pose detections")]
struct Cli {
    /// Repeat for more log output (or set RUST_LOG).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the whole pipeline and write tracks.json, stream.bin and manifest.json.
    Run(RunArgs),
    /// Detect scene cuts from per-frame histograms.
    Cut {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        threshold: f64,
        #[arg(short, long, default_value = "cuts.json")]
        out: PathBuf,
    },
    /// Remove ghost detections from every frame.
    Cleanse {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0.40)]
        min_separation: f64,
        #[arg(short, long, default_value = "cleansed.json")]
        out: PathBuf,
    },
    /// Link detections into tracks, optionally fusing mask identities.
    Track(TrackArgs),
    /// Fit the ground line to a point cloud and derive the camera transform.
    Ground {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        quantile: Option<f64>,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(short, long, default_value = "extrinsics.json")]
        out: PathBuf,
    },
    /// Smooth track trajectories.
    Smooth {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        lambda: f64,
        #[arg(long)]
        all_joints: bool,
        #[arg(short, long, default_value = "smoothed.json")]
        out: PathBuf,
    },
    /// Generate a synthetic scenario with ground truth.
    Synth {
        /// Scenario description; defaults apply to omitted fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score a result against ground truth.
    Eval {
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(short, long, default_value = "report.json")]
        out: PathBuf,
    },
    /// Serve a project directory over HTTP.
    Serve {
        #[arg(long, default_value = ".")]
        project: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Repeat the run recorded in a manifest (config and inputs).
    #[arg(long, conflicts_with_all = ["config", "detections", "masks", "cloud", "features", "extrinsics"])]
    manifest: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    detections: Option<PathBuf>,
    #[arg(long)]
    masks: Option<PathBuf>,
    #[arg(long)]
    cloud: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    extrinsics: Option<PathBuf>,
    #[arg(long, required_unless_present = "dry_run")]
    out_dir: Option<PathBuf>,
    /// Print the resolved config and planned stages; write nothing.
    #[arg(long)]
    dry_run: bool,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Default)]
struct Overrides {
    /// Set any config field, e.g. `--set ground_bins=80`. Values are JSON.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    ghost_min_separation: Option<f64>,
    #[arg(long)]
    cut_threshold: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    all_joints: bool,
    #[arg(long)]
    no_reid_fusion: bool,
    /// Stage polygon file: `[[x, z], …]` or `{"polygon": [[x, z], …]}`.
    #[arg(long)]
    roi: Option<PathBuf>,
}

#[derive(Args)]
struct TrackArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Fuse mask identities into the tracks.
    #[arg(long)]
    masks: Option<PathBuf>,
    /// Transform to world coordinates before the ROI test.
    #[arg(long)]
    extrinsics: Option<PathBuf>,
    #[arg(long)]
    roi: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    keep_discarded: bool,
    #[arg(short, long, default_value = "tracks.json")]
    out: PathBuf,
}

fn read(name: &str, path: &Path) -> Result<Vec<u8>> {
    read_input(name, path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn read_polygon(path: &Path) -> Result<Value> {
    let v: Value = serde_json::from_slice(&read("roi", path)?).with_context(|| format!("parsing {}", path.display()))?;
    match v {
        Value::Array(_) => Ok(v),
        Value::Object(mut m) => match m.remove("polygon").or_else(|| m.remove("roi_polygon")) {
            Some(p) => Ok(p),
            None => bail!("{}: expected a polygon array or an object with `polygon`", path.display()),
        },
        _ => bail!("{}: expected a polygon array", path.display()),
    }
}

/// Defaults, then the config file, then `--set`, then the named flags.
fn resolve_config(file: Option<&Path>, o: &Overrides) -> Result<PipelineConfig> {
    let base = match file {
        Some(p) => parse_config(&read("config", p)?).with_context(|| format!("config {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    apply_overrides(base, o)
}

fn apply_overrides(base: PipelineConfig, o: &Overrides) -> Result<PipelineConfig> {
    let Value::Object(mut doc) = serde_json::to_value(base)? else { unreachable!("config is an object") };
    for kv in &o.set {
        let Some((k, v)) = kv.split_once('=') else { bail!("--set expects KEY=VALUE, got `{kv}`") };
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        doc.insert(k.trim().to_string(), value);
    }
    let mut put = |k: &str, v: Value| {
        doc.insert(k.to_string(), v);
    };
    if let Some(v) = o.ghost_min_separation {
        put("ghost_min_separation", json!(v));
    }
    if let Some(v) = o.cut_threshold {
        put("cut_threshold", json!(v));
    }
    if let Some(v) = o.lambda {
        put("rbf_smoothing", json!(v));
    }
    if o.all_joints {
        put("smooth_all_joints", json!(true));
    }
    if o.no_reid_fusion {
        put("reid_fusion", json!(false));
    }
    if let Some(p) = &o.roi {
        put("roi_polygon", read_polygon(p)?);
    }
    Ok(parse_config(&serde_json::to_vec(&Value::Object(doc))?)?)
}

fn run(args: RunArgs) -> Result<()> {
    let (cfg, paths) = match &args.manifest {
        Some(m) => {
            let manifest = RunManifest::parse(&read("manifest", m)?)?;
            manifest.verify_inputs().context("inputs changed since the manifest was written")?;
            (apply_overrides(manifest.config.clone(), &args.overrides)?, manifest.input_paths()?)
        }
        None => {
            let cfg = resolve_config(args.config.as_deref(), &args.overrides)?;
            let paths = InputPaths {
                detections: args.detections.clone().expect("required by clap"),
                masks: args.masks.clone(),
                cloud: args.cloud.clone(),
                features: args.features.clone(),
                extrinsics: args.extrinsics.clone(),
            };
            (cfg, paths)
        }
    };
    if args.dry_run {
        let report = json!({ "config": cfg, "inputs": paths, "stages": plan(&cfg, &paths) });
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    let out = args.out_dir.expect("required by clap");
    let observer = |p: Progress| match p.scene {
        Some(s) => log::debug!("{:>5.1}% {} (scene {s})", 100.0 * p.fraction, p.stage),
        None => log::info!("{:>5.1}% {}", 100.0 * p.fraction, p.stage),
    };
    let (manifest, _) = run_pipeline(&cfg, &paths, &out, Some(&observer))?;
    println!(
        "{} tracks, {} scenes written to {}",
        manifest.track_count,
        manifest.cuts.len() + 1,
        out.display()
    );
    Ok(())
}

fn track(a: TrackArgs) -> Result<()> {
    let mut cfg = resolve_config(a.config.as_deref(), &Overrides::default())?;
    if let Some(p) = &a.roi {
        let mut doc = serde_json::to_value(&cfg)?;
        doc["roi_polygon"] = read_polygon(p)?;
        cfg = parse_config(&serde_json::to_vec(&doc)?)?;
    }
    let seq = parse_detections(&read("detections", &a.input)?)?;
    let threshold = cfg.track_threshold_rule::<f64>()?.eval(seq.fps);
    let mut ts = build_tracks(&seq, threshold);
    if let Some(p) = &a.extrinsics {
        let e = parse_extrinsics(&read("extrinsics", p)?)?;
        ts = to_world(&ts, &e.base.unwrap_or_else(stage_tracks::CameraExtrinsics::identity), Some(&e.frames));
    }
    if let Some(p) = &a.masks {
        let masks = parse_masks(&read("masks", p)?, seq.width, seq.height)?;
        let asg = assign_mask_ids(&masks, &seq);
        let min_len = min_len_from_rule(&cfg.reid_min_len_rule::<f64>()?, seq.fps);
        ts = fuse_reid(&ts, &asg, min_len);
    }
    if let Some(poly) = &cfg.roi_polygon {
        ts = roi_filter(&ts, poly)?;
    }
    write(&a.out, &write_tracks(&ts, a.keep_discarded)?)?;
    println!("{} tracks written to {}", ts.active().count(), a.out.display());
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run(args) => run(args),
        Command::Track(args) => track(args),
        Command::Cut { features, threshold, out } => {
            let f = parse_features(&read("features", &features)?)?;
            let cuts = detect_cuts(f.rows(), threshold)?;
            write(&out, &write_cuts(&cuts))?;
            println!("{} cuts written to {}", cuts.cut_frames.len(), out.display());
            Ok(())
        }
        Command::Cleanse { input, min_separation, out } => {
            if !(min_separation.is_finite() && min_separation > 0.0) {
                bail!("--min-separation must be a positive number of meters");
            }
            let seq = parse_detections(&read("detections", &input)?)?;
            let before: usize = seq.frames.iter().map(|f| f.detections.len()).sum();
            let clean = cleanse_sequence(&seq, min_separation);
            let after: usize = clean.frames.iter().map(|f| f.detections.len()).sum();
            write(&out, &write_detections(&clean))?;
            println!("kept {after} of {before} detections; written to {}", out.display());
            Ok(())
        }
        Command::Ground { cloud, quantile, bins, iterations, out } => {
            let d = PipelineConfig::default();
            let c = parse_pointcloud(&read("cloud", &cloud)?)?;
            let line = fit_ground_line(
                &c,
                quantile.unwrap_or(d.ground_quantile),
                bins.unwrap_or(d.ground_bins),
                iterations.unwrap_or(d.ground_iterations),
            )?;
            let base = extrinsics_from_ground(&line);
            let tilt = line.tilt().to_degrees();
            let file = ExtrinsicsFile { base: Some(base), ground: Some(line), frames: Default::default() };
            write(&out, &write_extrinsics(&file))?;
            println!("tilt {tilt:.3} deg; written to {}", out.display());
            Ok(())
        }
        Command::Smooth { input, lambda, all_joints, out } => {
            let ts = parse_tracks(&read("tracks", &input)?)?;
            let smoothed = smooth_tracks(&ts, lambda, all_joints)?;
            write(&out, &write_tracks(&smoothed, true)?)?;
            println!("{} tracks written to {}", smoothed.tracks.len(), out.display());
            Ok(())
        }
        Command::Synth { spec, out_dir } => {
            let spec: ScenarioSpec = match spec {
                Some(p) => serde_json::from_slice(&read("spec", &p)?).with_context(|| format!("parsing {}", p.display()))?,
                None => ScenarioSpec::default(),
            };
            let sc = generate(&spec)?;
            sc.write_to(&out_dir)?;
            println!("{} frames, {} dancers written to {}", sc.detections.frames.len(), sc.truth.tracks.len(), out_dir.display());
            Ok(())
        }
        Command::Eval { result, truth, out } => {
            let r = parse_tracks(&read("result", &result)?)?;
            let t = parse_tracks(&read("truth", &truth)?)?;
            let report = evaluate(&r, &t);
            let bytes = serde_json::to_vec_pretty(&report)?;
            write(&out, &bytes)?;
            println!("{}", String::from_utf8(bytes)?);
            Ok(())
        }
        Command::Serve { project, host, port } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(stage_tracks_serve::serve(&project, SocketAddr::new(host, port)))?;
            Ok(())
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if let Some(se) = e.downcast_ref::<StageError>() {
        return se.exit_code() as u8;
    }
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(Error::MissingInput(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_flags_beat_set_which_beats_base() {
        let o = Overrides {
            set: vec!["cut_threshold=0.1".into(), "rbf_smoothing=0.5".into()],
            cut_threshold: Some(0.2),
            no_reid_fusion: true,
            ..Overrides::default()
        };
        let base = PipelineConfig { cut_threshold: 0.7, ground_bins: 9, ..PipelineConfig::default() };
        let cfg = apply_overrides(base, &o).unwrap();
        assert_eq!(cfg.cut_threshold, 0.2);
        assert_eq!(cfg.rbf_smoothing, 0.5);
        assert_eq!(cfg.ground_bins, 9);
        assert!(!cfg.reid_fusion);
    }

    #[test]
    fn bad_overrides_are_config_errors() {
        let o = Overrides { set: vec!["ground_bin=3".into()], ..Overrides::default() };
        let e = apply_overrides(PipelineConfig::default(), &o).unwrap_err();
        assert!(format!("{e:#}").contains("ground_bin"));
        assert_eq!(exit_code(&e), 1);
        let o = Overrides { set: vec!["novalue".into()], ..Overrides::default() };
        assert!(apply_overrides(PipelineConfig::default(), &o).is_err());
    }

    #[test]
    fn polygon_files_accept_both_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let bare = dir.path().join("a.json");
        let wrapped = dir.path().join("b.json");
        fs::write(&bare, "[[0,0],[1,0],[0,1]]").unwrap();
        fs::write(&wrapped, r#"{"polygon": [[0,0],[1,0],[0,1]]}"#).unwrap();
        assert_eq!(read_polygon(&bare).unwrap(), read_polygon(&wrapped).unwrap());
        fs::write(&wrapped, r#"{"points": []}"#).unwrap();
        assert!(read_polygon(&wrapped).is_err());
    }

    #[test]
    fn missing_input_maps_to_two() {
        let e = read("masks", Path::new("/nonexistent/masks.json")).unwrap_err();
        assert_eq!(exit_code(&e), 2);
    }
}
