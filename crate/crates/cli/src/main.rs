use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use groupact::data::{CourtBounds, DataError};
use groupact::geometry::{
    refine_calibration, solve_extrinsics, sync_offset, read_raw_audio, triangulate, Camera, CameraFile,
    GeometryError, LmConfig, Pixel, Point3, SyncConfig, TriangulateConfig,
};
use groupact::par::Parallelism;
use groupact::pipeline::{run_eval, run_train, PipelineError, RunConfig, TRAIN_LOG};
use groupact::synthgen::{generate_corpus, load_corpus, CorpusKind, GenParams, SynthError};

#[derive(Parser)]
#[command(name = "groupact", version, about = "Skeleton group activity recognition and localization toolkit")]
struct Cli {
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthetic corpus generation.
    #[command(subcommand)]
    Synth(SynthCmd),
    /// Train a model from a run config.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Dataset checks.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Camera calibration and triangulation.
    #[command(subcommand)]
    Geom(GeomCmd),
    /// Frame offset between two recordings from their audio.
    Sync(SyncArgs),
    /// Report helpers.
    #[command(subcommand)]
    Report(ReportCmd),
}

#[derive(Subcommand)]
enum SynthCmd {
    /// Write a seeded synthetic corpus.
    Gen(GenArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Gar,
    Tgal,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long)]
    rounds: usize,
    #[arg(long)]
    seed: u64,
    /// Number of categories to draw from.
    #[arg(long, default_value_t = 6)]
    classes: usize,
    /// Most activities per TGAL round.
    #[arg(long, default_value_t = 3)]
    max_activities: usize,
    /// Geometric long-tail decay for category weights (uniform when unset).
    #[arg(long)]
    long_tail: Option<f64>,
    /// Per-joint noise, meters.
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    run_dir: PathBuf,
    /// Config override, `dotted.key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Corpus to evaluate in full; the config's held-out split when unset.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum DatasetCmd {
    /// Load and check every round of a corpus.
    Validate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 18)]
        classes: usize,
    },
}

#[derive(Subcommand)]
enum GeomCmd {
    /// Solve a camera pose from landmark correspondences.
    Calibrate {
        /// Camera file with intrinsics (extrinsics are ignored).
        #[arg(long)]
        camera: PathBuf,
        /// CSV with columns x, y, z, u, v.
        #[arg(long)]
        points: PathBuf,
        /// Also refine focal length and principal point on off-plane points.
        #[arg(long)]
        refine: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Triangulate points seen by several calibrated cameras.
    Triangulate {
        /// Camera files; a camera's index is its position in this list.
        #[arg(long, required = true, num_args = 1..)]
        cameras: Vec<PathBuf>,
        /// CSV with columns point, camera, u, v.
        #[arg(long)]
        observations: PathBuf,
        /// CSV with columns point, x, y, z, residual.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SyncArgs {
    /// Raw mono binary32 little-endian samples.
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    sample_rate: u32,
    #[arg(long, default_value_t = 50)]
    fps: u32,
    #[arg(long, default_value_t = 150)]
    max_lag: usize,
    /// Write the correlation curve as CSV (lag, ncc).
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ReportCmd {
    /// Merge the training logs and metric curves of several runs into one
    /// long-format CSV (run, series, x, y).
    PlotData {
        #[arg(long, required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Usage mistakes that clap cannot see.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<PipelineError>() {
            return e.exit_code() as u8;
        }
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<SynthError>() {
            return if matches!(e, SynthError::InvalidParams(_)) { 2 } else { 3 };
        }
        if let Some(e) = cause.downcast_ref::<GeometryError>() {
            return match e {
                GeometryError::Degenerate(_) => 4,
                _ => 3,
            };
        }
        if cause.is::<DataError>() || cause.is::<std::io::Error>() || cause.is::<csv::Error>() {
            return 3;
        }
    }
    3
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let par = if cli.sequential { Parallelism::Sequential } else { Parallelism::Parallel };
    match run(cli.cmd, par) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cmd: Cmd, par: Parallelism) -> Result<()> {
    match cmd {
        Cmd::Synth(SynthCmd::Gen(a)) => synth_gen(a, par),
        Cmd::Train(a) => {
            let mut cfg = load_config(&a.config, &a.overrides)?;
            if par == Parallelism::Sequential {
                cfg.parallelism = par;
            }
            let out = run_train(&cfg, &a.run_dir)?;
            println!("trained {} samples, held out {}", out.train_size, out.test_size);
            if let Some(e) = out.reached {
                println!("target score reached at epoch {e}");
            }
            println!("score {:.2}; artifacts in {}", out.eval.score, out.run_dir.display());
            Ok(())
        }
        Cmd::Eval(a) => {
            let mut cfg = load_config(&a.config, &a.overrides)?;
            if par == Parallelism::Sequential {
                cfg.parallelism = par;
            }
            let out = run_eval(&cfg, &a.checkpoint, a.data.as_deref(), &a.out)?;
            println!("score {:.2}; reports in {}", out.score, a.out.display());
            Ok(())
        }
        Cmd::Dataset(DatasetCmd::Validate { data, classes }) => validate(&data, classes, par),
        Cmd::Geom(GeomCmd::Calibrate { camera, points, refine, out }) => calibrate(&camera, &points, refine, &out),
        Cmd::Geom(GeomCmd::Triangulate { cameras, observations, out }) => triangulate_points(&cameras, &observations, &out),
        Cmd::Sync(a) => sync(a),
        Cmd::Report(ReportCmd::PlotData { runs, out }) => plot_data(&runs, &out),
    }
}

fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    for o in overrides {
        cfg = cfg.with_override(o)?;
    }
    Ok(cfg)
}

fn synth_gen(a: GenArgs, par: Parallelism) -> Result<()> {
    let mut params = GenParams {
        seed: a.seed,
        category_weights: match a.long_tail {
            Some(d) => GenParams::long_tail_weights(a.classes, d),
            None => GenParams::uniform_weights(a.classes),
        },
        ..Default::default()
    };
    if let Some(n) = a.noise {
        params.noise_sigma = n;
    }
    let kind = match a.kind {
        Kind::Gar => CorpusKind::Gar,
        Kind::Tgal => CorpusKind::Tgal,
    };
    let m = generate_corpus(&params, kind, a.rounds, a.max_activities, &a.out, par)?;
    println!("wrote {} rounds to {}", m.rounds.len(), a.out.display());
    Ok(())
}

fn validate(dir: &Path, classes: usize, par: Parallelism) -> Result<()> {
    let (manifest, rounds) = load_corpus(dir, par)?;
    let bounds = CourtBounds::default();
    for r in &rounds {
        r.validate(&bounds, classes).with_context(|| format!("round {}", r.round_id))?;
    }
    let hist = manifest.category_histogram(classes);
    let frames: usize = rounds.iter().map(|r| r.sequence.frames()).sum();
    println!("{} rounds, {frames} frames, all valid", rounds.len());
    for (c, n) in hist.iter().enumerate().filter(|(_, n)| **n > 0) {
        println!("  category {c}: {n} instance(s)");
    }
    Ok(())
}

fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .with_context(|| format!("parsing {}", path.display()))
}

#[derive(serde::Deserialize)]
struct Correspondence {
    x: f64,
    y: f64,
    z: f64,
    u: f64,
    v: f64,
}

fn calibrate(camera: &Path, points: &Path, refine: bool, out: &Path) -> Result<()> {
    let file = CameraFile::load(camera)?;
    let rows: Vec<Correspondence> = read_rows(points)?;
    let (ground, off): (Vec<&Correspondence>, Vec<&Correspondence>) = rows.iter().partition(|c| c.z.abs() <= 1e-9);
    let land: Vec<Point3> = ground.iter().map(|c| Point3::new(c.x, c.y, 0.0)).collect();
    let obs: Vec<Pixel> = ground.iter().map(|c| [c.u, c.v]).collect();
    let fit = solve_extrinsics(&land, &obs, &file.intrinsics)?;
    let mut cam = Camera {
        intrinsics: file.intrinsics,
        extrinsics: fit.extrinsics,
    };
    let mut err = fit.mean_error;
    println!("pose from {} ground points: mean reprojection error {err:.3} px", land.len());
    if refine {
        if off.is_empty() {
            return Err(UsageError("--refine needs landmarks off the z = 0 plane".into()).into());
        }
        let pts: Vec<Point3> = rows.iter().map(|c| Point3::new(c.x, c.y, c.z)).collect();
        let obs: Vec<Pixel> = rows.iter().map(|c| [c.u, c.v]).collect();
        let r = refine_calibration(&cam, &pts, &obs, &LmConfig::default())?;
        if r.stalled {
            log::warn!("refinement stalled; keeping its best iterate");
        }
        cam = r.camera;
        err = r.mean_error;
        println!("refined on {} points: mean reprojection error {err:.3} px", pts.len());
    }
    CameraFile::from_camera(&cam, Some(err)).save(out)?;
    Ok(())
}

#[derive(serde::Deserialize)]
struct Observation {
    point: String,
    camera: usize,
    u: f64,
    v: f64,
}

fn triangulate_points(cameras: &[PathBuf], observations: &Path, out: &Path) -> Result<()> {
    let cams = cameras
        .iter()
        .map(|p| {
            CameraFile::load(p)?
                .camera()
                .ok_or_else(|| anyhow!(UsageError(format!("{} has no extrinsics; calibrate it first", p.display()))))
        })
        .collect::<Result<Vec<Camera>>>()?;
    let rows: Vec<Observation> = read_rows(observations)?;
    let mut by_point: BTreeMap<&str, Vec<(Camera, Pixel)>> = BTreeMap::new();
    for o in &rows {
        let cam = cams
            .get(o.camera)
            .ok_or_else(|| anyhow!(DataError::Invariant {
                field: "camera".into(),
                msg: format!("index {} but {} camera file(s) given", o.camera, cams.len()),
            }))?;
        by_point.entry(&o.point).or_default().push((*cam, [o.u, o.v]));
    }
    let mut w = csv::Writer::from_path(out).with_context(|| format!("writing {}", out.display()))?;
    w.write_record(["point", "x", "y", "z", "residual"])?;
    let cfg = TriangulateConfig::default();
    for (id, views) in &by_point {
        let t = triangulate(views, &cfg).with_context(|| format!("point {id}"))?;
        let p = t.point;
        w.write_record([id.to_string(), format!("{:.6}", p.x), format!("{:.6}", p.y), format!("{:.6}", p.z), format!("{:.4}", t.residual)])?;
    }
    w.flush()?;
    println!("triangulated {} point(s) into {}", by_point.len(), out.display());
    Ok(())
}

fn sync(a: SyncArgs) -> Result<()> {
    let (sa, sb) = (read_raw_audio(&a.a)?, read_raw_audio(&a.b)?);
    let mut cfg = SyncConfig {
        max_lag: a.max_lag,
        ..Default::default()
    };
    cfg.mfcc.fps = a.fps;
    let r = sync_offset(&sa, &sb, a.sample_rate, &cfg)?;
    println!(
        "offset {} frame(s) (b lags a when positive), confidence {:.2}{}",
        r.offset,
        r.confidence,
        if r.reliable { "" } else { ", UNRELIABLE" }
    );
    if let Some(path) = a.curve {
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record(["lag", "ncc"])?;
        for (lag, v) in &r.curve {
            w.write_record([lag.to_string(), format!("{v:.6}")])?;
        }
        w.flush()?;
    }
    Ok(())
}

fn plot_data(runs: &[PathBuf], out: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(out).with_context(|| format!("writing {}", out.display()))?;
    w.write_record(["run", "series", "x", "y"])?;
    for run in runs {
        let name = run.file_name().map_or_else(|| run.display().to_string(), |n| n.to_string_lossy().into_owned());
        let mut found = false;
        let log = run.join(TRAIN_LOG);
        if log.exists() {
            found = true;
            let rows: Vec<BTreeMap<String, String>> = read_rows(&log)?;
            for r in rows {
                let epoch = &r["epoch"];
                w.write_record([name.as_str(), "loss", epoch, &r["loss"]])?;
                if !r["score"].is_empty() {
                    w.write_record([name.as_str(), "score", epoch, &r["score"]])?;
                }
            }
        }
        for dir in [run.join("eval"), run.clone()] {
            let curve = dir.join(groupact::metrics::MAP_CURVE_CSV);
            if curve.exists() {
                found = true;
                let rows: Vec<BTreeMap<String, String>> = read_rows(&curve)?;
                for r in rows {
                    w.write_record([name.as_str(), "map_vs_tiou", &r["tiou"], &r["mAP"]])?;
                }
            }
            let summary = dir.join(groupact::metrics::SUMMARY_CSV);
            if summary.exists() {
                found = true;
                let rows: Vec<BTreeMap<String, String>> = read_rows(&summary)?;
                for r in rows {
                    w.write_record([name.as_str(), &r["metric"], "", &r["value"]])?;
                }
                break;
            }
        }
        if !found {
            bail!(UsageError(format!("{} holds no training log or reports", run.display())));
        }
    }
    w.flush()?;
    println!("plot data for {} run(s) in {}", runs.len(), out.display());
    Ok(())
}
