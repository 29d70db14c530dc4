//! `interdyad` command-line entry point: curation, evaluation, connector
//! training, gradient auditing, guidance dumps, and the end-to-end demo.
//!
//! Exit codes: 0 success, 1 validation error (including usage errors), 2 I/O
//! error. Logging is controlled by `INTERDYAD_LOG` (error, info, debug).

mod manifest;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use interdyad_core::align::{
    gradient_check, read_alignment_dir, train_connector, write_loss_trace, AlignmentBatch,
    ConnectorDims, ConnectorParams, TrainConfig,
};
use interdyad_core::curation::{
    build_report, curate_record, parse_record_line, CurationThresholds,
};
use interdyad_core::demo::{guidance_fields, run_demo, write_roles_csv, DemoConfig};
use interdyad_core::guidance::{role_timeline, GuidanceConfig};
use interdyad_core::latent::write_idlt;
use interdyad_core::metrics::{
    aggregate_rows, di_sali, di_sali_normalized, di_sync, load_segments, write_aggregate,
    write_report, LandmarkTrack, MetricsRow,
};
use interdyad_core::scene::{load_scene, DyadicScene};
use interdyad_core::{Error, Result};
use manifest::RunManifest;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "interdyad",
    version,
    about = "Dyadic conversational video toolkit: curation, metrics, guidance and training utilities"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the cascaded clip-curation pipeline over a JSONL record file.
    Curate(CurateArgs),
    /// Compute DI-Sync and DI-Sali for a scene and its segment file.
    Eval(EvalArgs),
    /// Train the temporal connector on an alignment data directory.
    TrainAlign(TrainAlignArgs),
    /// Audit analytic connector gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Emit per-frame guidance-scale fields and the role timeline.
    GuideDump(GuideDumpArgs),
    /// End-to-end synthetic pipeline: scene, motion, sampling, guidance,
    /// metrics.
    Demo(DemoArgs),
}

#[derive(Args, Serialize)]
struct CurateArgs {
    /// Input records, one JSON object per line.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output directory (decisions.jsonl, summary.json, manifest.json).
    #[arg(long)]
    out: PathBuf,
    /// Parallel record-processing bound.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    /// Scene JSON file.
    #[arg(long)]
    scene: PathBuf,
    /// Segment JSON file (single record or a list).
    #[arg(long)]
    segments: PathBuf,
    /// Social-latency compensation in seconds.
    #[arg(long, default_value_t = interdyad_core::metrics::DEFAULT_SYNC_DELTA)]
    delta: f64,
    /// Report CSV path; the aggregate and manifest land next to it.
    #[arg(long)]
    out: PathBuf,
    /// Optional spatial unit to divide DI-Sali by.
    #[arg(long)]
    normalize_sali: Option<f64>,
}

#[derive(Args, Serialize)]
struct TrainAlignArgs {
    /// Data directory with manifest.json plus hidden_*/target_* IDLT pairs.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (loss.csv, params.json, manifest.json).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct GradcheckArgs {
    /// Random instances to audit.
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Optional directory for gradcheck.json and the run manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct GuideDumpArgs {
    /// Scene JSON file.
    #[arg(long)]
    scene: PathBuf,
    /// Guidance config JSON; defaults apply when omitted.
    #[arg(long)]
    cfg: Option<PathBuf>,
    /// Output directory (guidance.idlt, roles.csv, manifest.json).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct DemoArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Total frames to generate.
    #[arg(long, default_value_t = 153)]
    frames: usize,
}

fn main() {
    std::process::exit(dispatch(std::env::args_os()));
}

fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(
        env_logger::Env::default().filter_or("INTERDYAD_LOG", "error"),
    )
    .try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io(_) => 2,
                _ => 1,
            }
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Curate(args) => curate(args),
        Command::Eval(args) => eval(args),
        Command::TrainAlign(args) => train_align(args),
        Command::Gradcheck(args) => gradcheck(args),
        Command::GuideDump(args) => guide_dump(args),
        Command::Demo(args) => demo(args),
    }
}

fn snapshot<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).unwrap_or(serde_json::Value::Null)
}

fn curate(args: CurateArgs) -> Result<()> {
    let start = Instant::now();
    if args.jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    let thresholds = CurationThresholds::default();
    thresholds.validate()?;
    let reader = BufReader::new(File::open(&args.input)?);
    let lines: Vec<(usize, String)> = reader
        .lines()
        .enumerate()
        .map(|(i, l)| Ok((i + 1, l?)))
        .collect::<Result<_>>()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    // Indexed parallel map keeps the output order equal to the input order.
    let outcomes: Vec<_> = pool.install(|| {
        use rayon::prelude::*;
        lines
            .par_iter()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, l)| {
                (
                    *n,
                    parse_record_line(l).map(|rec| curate_record(&rec, &thresholds)),
                )
            })
            .collect()
    });

    let mut decisions = Vec::new();
    let mut diagnostics = Vec::new();
    for (line_no, outcome) in outcomes {
        match outcome {
            Ok(decision) => decisions.push(decision),
            Err(e) => {
                log::warn!("line {line_no}: skipped malformed record: {e}");
                diagnostics.push((line_no, e));
            }
        }
    }
    let parsed = decisions.len();
    let report = build_report(decisions, parsed, diagnostics);

    std::fs::create_dir_all(&args.out)?;
    let decisions_path = args.out.join("decisions.jsonl");
    let mut out = BufWriter::new(File::create(&decisions_path)?);
    for d in &report.decisions {
        serde_json::to_writer(&mut out, d)
            .map_err(|e| Error::format(&decisions_path, e.to_string()))?;
        writeln!(out)?;
    }
    out.flush()?;
    let summary_path = args.out.join("summary.json");
    write_json(&summary_path, &report.summary)?;
    log::info!(
        "curated {} records: {} -> {} -> {} survivors",
        report.summary.input,
        report.summary.pass_stage1,
        report.summary.pass_stage2,
        report.summary.pass_stage3
    );

    RunManifest::new("curate", snapshot(&args))
        .inputs([&args.input])
        .outputs([&decisions_path, &summary_path])
        .finish(start, args.out.join("manifest.json"))
}

fn eye_track(scene: &DyadicScene<f64>, person: usize) -> LandmarkTrack<f64> {
    let p = &scene.persons[person];
    let eyes = &scene.layout.eyes;
    let track = ndarray::Array3::from_shape_fn((scene.frames, eyes.len(), 2), |(t, e, c)| {
        p.landmarks[(t, eyes[e], c)]
    });
    LandmarkTrack::new(track, scene.fps).expect("scene tracks are valid")
}

fn eval(args: EvalArgs) -> Result<()> {
    let start = Instant::now();
    let scene: DyadicScene<f64> = load_scene(&args.scene)?;
    let records = load_segments(&args.segments)?;
    if records.is_empty() {
        return Err(Error::Invalid("segment file holds no records".into()));
    }
    let speaker_track = eye_track(&scene, 0);
    let listener_track = eye_track(&scene, 1);
    let sali = match args.normalize_sali {
        Some(unit) => di_sali_normalized(&speaker_track, &listener_track, unit)?,
        None => di_sali(&speaker_track, &listener_track)?,
    };
    let rows: Vec<MetricsRow> = records
        .iter()
        .map(|rec| {
            Ok(MetricsRow {
                clip_id: rec.clip_id.clone(),
                di_sync: di_sync(
                    &rec.audio_set::<f64>()?,
                    &rec.video_set::<f64>()?,
                    args.delta,
                ),
                di_sali: sali,
            })
        })
        .collect::<Result<_>>()?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_report(&args.out, &rows)?;
    let aggregate_path = sibling(&args.out, "aggregate.json");
    write_aggregate(&aggregate_path, &aggregate_rows(&rows))?;
    for row in &rows {
        log::info!(
            "{}: di_sync {:.4} di_sali {:.4}",
            row.clip_id,
            row.di_sync,
            row.di_sali
        );
    }

    RunManifest::new("eval", snapshot(&args))
        .inputs([&args.scene, &args.segments])
        .outputs([&args.out, &aggregate_path])
        .finish(start, sibling(&args.out, "manifest.json"))
}

/// `report.csv -> report.<suffix>` next to the original file.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn train_align(args: TrainAlignArgs) -> Result<()> {
    let start = Instant::now();
    let (data_manifest, dataset) = read_alignment_dir::<f64>(&args.data)?;
    let cfg = TrainConfig {
        steps: args.steps,
        lr: args.lr,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let outcome = train_connector(&dataset, &cfg)?;
    log::info!(
        "trained {} batches (N={} D={} D_m={}): loss {} -> {}",
        dataset.len(),
        data_manifest.n,
        data_manifest.d,
        data_manifest.d_m,
        outcome.trace.first().unwrap(),
        outcome.trace.last().unwrap()
    );

    std::fs::create_dir_all(&args.out)?;
    let loss_path = args.out.join("loss.csv");
    write_loss_trace(&loss_path, &outcome.trace)?;
    let params_path = args.out.join("params.json");
    write_json(&params_path, &params_json(&outcome.params))?;

    RunManifest::new("train-align", snapshot(&args))
        .seed(args.seed)
        .inputs([&args.data])
        .outputs([&loss_path, &params_path])
        .finish(start, args.out.join("manifest.json"))
}

fn params_json(params: &ConnectorParams<f64>) -> serde_json::Value {
    let dims = params.dims();
    serde_json::json!({
        "kernel": dims.kernel,
        "hidden": dims.hidden,
        "motion": dims.motion,
        "conv_w": params.conv_w.iter().copied().collect::<Vec<f64>>(),
        "conv_b": params.conv_b.to_vec(),
        "wq": params.wq.iter().copied().collect::<Vec<f64>>(),
        "wk": params.wk.iter().copied().collect::<Vec<f64>>(),
        "wv": params.wv.iter().copied().collect::<Vec<f64>>(),
        "wo": params.wo.iter().copied().collect::<Vec<f64>>(),
        "lin_w": params.lin_w.iter().copied().collect::<Vec<f64>>(),
        "lin_b": params.lin_b.to_vec(),
    })
}

fn gradcheck(args: GradcheckArgs) -> Result<()> {
    let start = Instant::now();
    if args.trials == 0 {
        return Err(Error::Config("--trials must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut worst = 0.0f64;
    for trial in 0..args.trials {
        let n = rng.gen_range(1..=8usize);
        let d = rng.gen_range(2..=16usize);
        let dm = rng.gen_range(1..=8usize);
        let dims = ConnectorDims::new(3, d, dm)?;
        let params = ConnectorParams::<f64>::init(dims, args.seed.wrapping_add(trial as u64), 0.3);
        let batch = AlignmentBatch::new(
            Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0)),
            Array2::from_shape_fn((n, dm), |_| rng.gen_range(-1.0..1.0)),
        )?;
        let err = gradient_check(&params, &batch, args.eps)?;
        log::debug!("trial {trial}: N={n} D={d} D_m={dm} rel err {err:.3e}");
        worst = worst.max(err);
    }
    println!(
        "max relative error = {worst:.3e} over {} trials (eps = {})",
        args.trials, args.eps
    );
    let passed = worst < 1e-5;
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        let result_path = out.join("gradcheck.json");
        write_json(
            &result_path,
            &serde_json::json!({
                "max_relative_error": worst,
                "trials": args.trials,
                "eps": args.eps,
                "passed": passed,
            }),
        )?;
        RunManifest::new("gradcheck", snapshot(&args))
            .seed(args.seed)
            .outputs([&result_path])
            .finish(start, out.join("manifest.json"))?;
    }
    if passed {
        Ok(())
    } else {
        Err(Error::Invalid(format!(
            "gradient audit failed: max relative error {worst:.3e} >= 1e-5"
        )))
    }
}

fn guide_dump(args: GuideDumpArgs) -> Result<()> {
    let start = Instant::now();
    let scene: DyadicScene<f64> = load_scene(&args.scene)?;
    let cfg: GuidanceConfig<f64> = match &args.cfg {
        Some(path) => serde_json::from_reader(BufReader::new(File::open(path)?))
            .map_err(|e| Error::format(path, e.to_string()))?,
        None => GuidanceConfig::default(),
    };
    cfg.validate()?;
    let timeline = role_timeline(&scene.persons[0].vad, &scene.persons[1].vad, &cfg)?;
    let fields = guidance_fields(&scene, &timeline, &cfg)?;

    std::fs::create_dir_all(&args.out)?;
    let fields_path = args.out.join("guidance.idlt");
    write_idlt(&fields_path, &fields)?;
    let roles_path = args.out.join("roles.csv");
    write_roles_csv(&roles_path, &timeline)?;
    log::info!("wrote guidance fields for {} frames", scene.frames);

    let mut inputs = vec![args.scene.clone()];
    if let Some(cfg_path) = &args.cfg {
        inputs.push(cfg_path.clone());
    }
    RunManifest::new("guide-dump", snapshot(&args))
        .inputs(inputs.iter())
        .outputs([&fields_path, &roles_path])
        .finish(start, args.out.join("manifest.json"))
}

fn demo(args: DemoArgs) -> Result<()> {
    let start = Instant::now();
    let cfg = DemoConfig {
        seed: args.seed,
        frames: args.frames,
        ..DemoConfig::default()
    };
    let outcome = run_demo(&cfg, &args.out)?;
    log::info!(
        "demo seed {}: {} chunks, di_sync {:.4}, di_sali {:.4}",
        args.seed,
        outcome.sample.chunks.len(),
        outcome.rows[0].di_sync,
        outcome.rows[0].di_sali
    );
    RunManifest::new("demo", snapshot(&args))
        .seed(args.seed)
        .outputs(outcome.written.iter())
        .finish(start, args.out.join("manifest.json"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(out, value).map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sibling_paths_replace_the_extension() {
        assert_eq!(
            sibling(Path::new("x/report.csv"), "manifest.json"),
            PathBuf::from("x/report.manifest.json")
        );
        assert_eq!(
            sibling(Path::new("report.csv"), "aggregate.json"),
            PathBuf::from("report.aggregate.json")
        );
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(dispatch(["interdyad", "--no-such-flag"]), 1);
        assert_eq!(dispatch(["interdyad", "frobnicate"]), 1);
        assert_eq!(dispatch(["interdyad", "--help"]), 0);
    }
}
