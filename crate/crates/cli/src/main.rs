mod dataset;
mod record;

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::de::DeserializeOwned;

use mpntrack::encoders::{AppearanceProvider, FeatureSet};
use mpntrack::experiments::{format_rows, run_ablation, Ablation, Benchmark, STEP_SWEEP};
use mpntrack::io::tables::{format_labeled_edges, graph_from_scored_edges};
use mpntrack::io::{self, generate_synthetic, SyntheticConfig};
use mpntrack::metrics::{evaluate, format_summary, format_table, TableRow, DEFAULT_IOU};
use mpntrack::mpn::{ModelConfig, UpdateMode};
use mpntrack::nn::{Checkpoint, GradCheckOptions};
use mpntrack::pipeline::{track_sequence, PipelineConfig};
use mpntrack::rng::stream_rng;
use mpntrack::rounding::{objective, round, threshold, violated_subgraph, RoundingMethod};
use mpntrack::trainer::{check_gradients, format_log, gradcheck_clip, train_with, TrainConfig, LOG_HEADER};

use record::write_record;

#[derive(Parser)]
#[command(
    name = "mpntrack",
    version,
    about = "Learned data association for multi-object tracking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Synth(SynthArgs),
    /// Train a model on dataset directories.
    Train(TrainArgs),
    /// Track a detection file with a trained model.
    Track(TrackArgs),
    /// Evaluate tracking results against ground truth.
    Eval(EvalArgs),
    /// Round a scored edge list into a feasible solution.
    Round(RoundArgs),
    /// Check back-propagated gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Run an ablation study on synthetic data.
    Ablate(AblateArgs),
}

fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_toml_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read_toml)
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// TOML file with generator settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tracks: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    miss_prob: Option<f64>,
    #[arg(long)]
    fp_rate: Option<f64>,
    /// Appearance noise.
    #[arg(long)]
    sigma: Option<f64>,
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut cfg: SyntheticConfig = read_toml_or_default(args.config.as_deref())?;
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.tracks {
        cfg.n_tracks = v;
    }
    if let Some(v) = args.frames {
        cfg.n_frames = v;
    }
    if let Some(v) = args.miss_prob {
        cfg.miss_prob = v;
    }
    if let Some(v) = args.fp_rate {
        cfg.fp_rate = v;
    }
    if let Some(v) = args.sigma {
        cfg.appearance_sigma = v;
    }
    let seq = generate_synthetic(&cfg)?;
    dataset::write(&args.out, &seq, cfg.width, cfg.height)?;
    write_record(&args.out.join("synth"), "synth", Some(cfg.seed), &cfg)?;
    println!(
        "wrote {} detections of {} tracks over {} frames to {}",
        seq.detections.len(),
        seq.ground_truth.len(),
        seq.n_frames,
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directories.
    #[arg(long = "data", required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    /// Checkpoint to write; the best held-out checkpoint goes to `<out>.best`.
    #[arg(long)]
    out: PathBuf,
    /// TOML file with training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training log CSV; defaults to `<out>.log.csv`.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<UpdateMode>,
}

fn parse_mode(s: &str) -> Result<UpdateMode, String> {
    s.parse().map_err(|e: mpntrack::Error| e.to_string())
}

fn parse_rounding(s: &str) -> Result<RoundingMethod, String> {
    s.parse().map_err(|e: mpntrack::Error| e.to_string())
}

fn parse_features(s: &str) -> Result<FeatureSet, String> {
    s.parse().map_err(|e: mpntrack::Error| e.to_string())
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = read_toml_or_default(args.config.as_deref())?;
    if let Some(v) = args.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.steps {
        cfg.model.steps = v;
    }
    if let Some(v) = args.mode {
        cfg.model.mode = v;
    }
    let mut sequences = Vec::new();
    for dir in &args.data {
        let data = dataset::read(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
        if data
            .detections
            .first()
            .is_some_and(|d| d.appearance.len() != cfg.model.appearance_dim)
        {
            bail!(
                "{} has {}-dimensional appearance vectors but the model expects {}",
                dir.display(),
                data.detections[0].appearance.len(),
                cfg.model.appearance_dim
            );
        }
        sequences.push(data.training_sequence());
    }

    let log_path = args.log.clone().unwrap_or_else(|| suffixed(&args.out, ".log.csv"));
    fs::write(&log_path, format!("{LOG_HEADER}\n"))?;
    let mut log_file = OpenOptions::new().append(true).open(&log_path)?;
    let mut write_error = None;
    let outcome = train_with(&sequences, &cfg, |row| {
        let line = format_log(std::slice::from_ref(row));
        let body = line.split_once('\n').map_or("", |(_, rest)| rest);
        if let Err(e) = log_file.write_all(body.as_bytes()) {
            write_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_error {
        return Err(e).context("writing training log");
    }

    let mut meta = cfg.model.to_meta();
    meta.insert("seed".into(), cfg.seed.to_string());
    meta.insert("iterations".into(), cfg.iterations.to_string());
    Checkpoint {
        meta: meta.clone(),
        params: outcome.params,
    }
    .save(&args.out)?;
    if let Some((iteration, params)) = outcome.best {
        meta.insert("best_iteration".into(), iteration.to_string());
        Checkpoint { meta, params }.save(&suffixed(&args.out, ".best"))?;
    }
    write_record(&args.out, "train", Some(cfg.seed), &cfg)?;
    println!("wrote {} and {}", args.out.display(), log_path.display());
    Ok(())
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Args)]
struct TrackArgs {
    /// Detections in MOT format.
    #[arg(long = "in")]
    input: PathBuf,
    /// Trained checkpoint.
    #[arg(long)]
    params: PathBuf,
    /// Results file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_rounding)]
    rounding: Option<RoundingMethod>,
    /// TOML file with pipeline settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Appearance vectors keyed by detection ordinal. Without it, synthetic
    /// appearance is drawn from the id column of the detections.
    #[arg(long)]
    appearance: Option<PathBuf>,
    /// Noise of synthetic appearance.
    #[arg(long, default_value_t = 0.3)]
    appearance_sigma: f64,
    #[arg(long, default_value_t = 0)]
    appearance_seed: u64,
    /// Native frame rate of the sequence.
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    #[arg(long)]
    moving_camera: bool,
    /// Diagnostics JSON; defaults to `<out>.diag.json`.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

fn load_model(path: &Path) -> Result<(mpntrack::nn::ModelParams, ModelConfig)> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let model = ModelConfig::from_meta(&ckpt.meta)?;
    Ok((ckpt.params, model))
}

fn track(args: TrackArgs) -> Result<()> {
    let mut cfg: PipelineConfig = read_toml_or_default(args.config.as_deref())?;
    if let Some(r) = args.rounding {
        cfg.rounding = r;
    }
    if args.moving_camera {
        cfg.moving_camera = true;
    }
    let (params, model) = load_model(&args.params)?;
    let mut detections = io::read_detections(&args.input)?;
    let provider = match &args.appearance {
        Some(path) => AppearanceProvider::File(io::read_appearance(path)?),
        None => AppearanceProvider::Synthetic {
            dim: model.appearance_dim,
            sigma: args.appearance_sigma,
            seed: args.appearance_seed,
        },
    };
    provider.assign(&mut detections)?;
    let result = track_sequence(&detections, args.fps, &params, &model, &cfg)?;
    io::write_results(&args.out, &result.trajectories)?;
    let diag_path = args
        .diagnostics
        .clone()
        .unwrap_or_else(|| suffixed(&args.out, ".diag.json"));
    fs::write(&diag_path, serde_json::to_string_pretty(&result.diagnostics)? + "\n")?;
    write_record(&args.out, "track", None, &cfg)?;
    let d = &result.diagnostics;
    println!(
        "{} trajectories from {} detections ({} windows, constraint satisfaction {:.2}%)",
        d.trajectories,
        d.input_detections,
        d.windows,
        100.0 * d.constraint_satisfaction
    );
    Ok(())
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Also write the metrics table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_IOU)]
    iou: f64,
    /// Diagnostics JSON of the tracking run, for the Constr column.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

fn eval(args: EvalArgs) -> Result<()> {
    let gt = io::read_ground_truth(&args.gt)?;
    let pred = io::read_ground_truth(&args.pred)?;
    let result = evaluate(&gt, &pred, args.iou)?;
    let constraint_satisfaction = match &args.diagnostics {
        Some(path) => {
            let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path)?)?;
            v.get("constraint_satisfaction").and_then(serde_json::Value::as_f64)
        }
        None => None,
    };
    let name = args
        .pred
        .file_stem()
        .map_or("result".into(), |s| s.to_string_lossy().into_owned());
    let rows = vec![TableRow {
        name,
        result,
        constraint_satisfaction,
    }];
    print!("{}", format_summary(&rows));
    if let Some(csv) = &args.csv {
        fs::write(csv, format_table(&rows))?;
    }
    Ok(())
}

#[derive(Args)]
struct RoundArgs {
    /// Scored edges, `src,dst,score` per line.
    #[arg(long)]
    edges: PathBuf,
    #[arg(long, value_parser = parse_rounding, default_value = "exact")]
    method: RoundingMethod,
    /// Output `src,dst,score,label` lines.
    #[arg(long)]
    out: PathBuf,
    /// Also dump the violated subgraph with its rounded labels.
    #[arg(long)]
    dump_violated: Option<PathBuf>,
}

fn round_edges(args: RoundArgs) -> Result<()> {
    let scored = io::read_scored_edges(&args.edges)?;
    let (graph, scores) = graph_from_scored_edges(&scored)?;
    let (_, report) = threshold(&graph, &scores, 0.5)?;
    let solution = round(&graph, &scores, args.method)?;
    fs::write(
        &args.out,
        format_labeled_edges(&graph, &scores, &solution.labels.values),
    )?;
    if let Some(path) = &args.dump_violated {
        let sub = violated_subgraph(&graph, &scores, 0.5)?;
        let labels: Vec<bool> = sub.parent_edges.iter().map(|&e| solution.labels.values[e]).collect();
        fs::write(path, sub.format(&labels))?;
    }
    println!(
        "{} edges, {} of {} constraints violated after thresholding; {} rounding keeps {} edges, objective {}",
        graph.num_edges(),
        report.violated,
        report.total_constraints,
        args.method,
        solution.labels.num_active(),
        objective(&scores, &solution.labels)
    );
    Ok(())
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 2)]
    steps: usize,
    #[arg(long, value_parser = parse_mode, default_value = "time_aware")]
    mode: UpdateMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Check only this many randomly chosen parameters.
    #[arg(long)]
    max_coords: Option<usize>,
}

fn gradcheck(args: GradcheckArgs) -> Result<bool> {
    let model = ModelConfig {
        mode: args.mode,
        steps: args.steps,
        ..ModelConfig::default()
    };
    let clip = gradcheck_clip(model.appearance_dim, args.seed)?;
    let mut params = model.init_params(&mut stream_rng(args.seed, 1))?;
    let first = model.default_first_supervised_step();
    let opts = GradCheckOptions {
        tolerance: args.tolerance,
        max_coords: args.max_coords,
        seed: args.seed,
        ..GradCheckOptions::default()
    };
    let report = check_gradients(&mut params, &model, &clip, first, 1.0, &opts)?;
    println!(
        "checked {} parameters of a {}-step {} model: max relative error {:.3e} ({})",
        report.checked,
        model.steps,
        model.mode,
        report.max_rel_error,
        if report.passed { "pass" } else { "FAIL" }
    );
    if let Some(c) = report.worst.filter(|_| !report.passed) {
        println!(
            "worst coordinate {c:?}: analytic {:.6e}, numeric {:.6e}",
            report.analytic_at_worst, report.numeric_at_worst
        );
    }
    Ok(report.passed)
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long, value_parser = parse_ablation)]
    mode: Ablation,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
    /// TOML file with benchmark settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    /// Step counts for `--mode steps`.
    #[arg(long, value_delimiter = ',')]
    steps: Option<Vec<usize>>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Edge features of the base model.
    #[arg(long, value_parser = parse_features)]
    features: Option<FeatureSet>,
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse().map_err(|e: mpntrack::Error| e.to_string())
}

fn ablate(args: AblateArgs) -> Result<()> {
    let mut bench: Benchmark = read_toml_or_default(args.config.as_deref())?;
    if let Some(v) = args.iterations {
        bench.train.iterations = v;
    }
    if let Some(v) = args.features {
        bench.train.model.features = v;
    }
    let steps = args.steps.clone().unwrap_or_else(|| STEP_SWEEP.to_vec());
    info!("running {:?} ablation over seeds {:?}", args.mode, args.seeds);
    let rows = run_ablation(&bench, args.mode, &steps, &args.seeds)?;
    fs::write(&args.out, format_rows(&rows))?;
    write_record(&args.out, "ablate", args.seeds.first().copied(), &bench)?;
    print!("{}", format_rows(&rows));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Track(a) => track(a),
        Command::Eval(a) => eval(a),
        Command::Round(a) => round_edges(a),
        Command::Gradcheck(a) => match gradcheck(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(1),
            Err(e) => Err(e),
        },
        Command::Ablate(a) => ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
