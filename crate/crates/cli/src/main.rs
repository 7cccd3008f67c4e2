mod plot;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use emg_forge::config::{RunConfig, CONFIG_ENV};
use emg_forge::dataio::{
    build_segments, load_dataset_dir, load_recording, load_recording_pair, split_dataset, write_unified, MergedSegment,
    Motion,
};
use emg_forge::model::{
    forward, forward_streaming, load_checkpoint, load_checkpoint_expecting, save_checkpoint, Checkpoint, ModelWeights,
    StreamState, IMU_CHANNELS,
};
use emg_forge::synthgen::{generate_recording, write_sessions, MotionProfile};
use emg_forge::tensor::Tensor;
use emg_forge::train::{evaluate_predictions, predict_segments, train};
use emg_forge::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_EMPTY: u8 = 3;
const EXIT_DIVERGED: u8 = 4;
const EXIT_INVARIANT: u8 = 5;

#[derive(Parser)]
#[command(
    name = "emg-forge",
    version,
    about = "IMU-to-sEMG envelope synthesis with a sliding-window WaveNet"
)]
struct Cli {
    /// Run configuration file (TOML).
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,

    /// Restrict to one motion class.
    #[arg(long, global = true)]
    motion: Option<Motion>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic recording sessions with ground-truth sidecars.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        reps: usize,
        #[arg(long, default_value_t = 4)]
        sessions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Turn one raw recording into a unified segment CSV.
    Preprocess {
        /// Recording CSV; holds the EMG column, and the IMU columns unless --imu is given.
        #[arg(long = "in")]
        input: PathBuf,
        /// Separate IMU CSV.
        #[arg(long)]
        imu: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split, train with early stopping, and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint and write the metrics report.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Write one SVG overlay per segment here.
        #[arg(long)]
        plots: Option<PathBuf>,
        /// Evaluate every segment instead of the checkpoint's held-out split.
        #[arg(long)]
        all: bool,
    },
    /// Stream synthetic samples through the model and time each step.
    StreamBench {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        seconds: u64,
        /// Seed of the synthetic input stream (defaults to the config value).
        #[arg(long)]
        seed: Option<u64>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let code = match err {
            Error::Divergence { .. } | Error::NonFiniteGradient { .. } => EXIT_DIVERGED,
            Error::NoActivity(_) => EXIT_EMPTY,
            _ => EXIT_USAGE,
        };
        Failure {
            code,
            message: err.to_string(),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| fail(EXIT_USAGE, format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| fail(EXIT_USAGE, format!("cannot write {}: {e}", path.display())))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}{suffix}"))
}

fn motion_filter(cli_motion: Option<Motion>, cfg: &RunConfig) -> Option<Motion> {
    cli_motion.or(cfg.data.motion)
}

fn load_segments(dir: &Path, cfg: &RunConfig, motion: Option<Motion>) -> CliResult<Vec<MergedSegment>> {
    let all = load_dataset_dir(dir, &cfg.data.schema, &cfg.pipeline())?;
    let total = all.len();
    let picked: Vec<MergedSegment> = match motion {
        Some(m) => all.into_iter().filter(|s| s.meta.motion == Some(m)).collect(),
        None => all,
    };
    if picked.is_empty() {
        let m = motion.map_or("any", |m| m.as_str());
        return Err(fail(
            EXIT_EMPTY,
            format!("none of the {total} segments in {} match motion {m}", dir.display()),
        ));
    }
    log::info!("loaded {} of {total} segments from {}", picked.len(), dir.display());
    Ok(picked)
}

fn synth_data(
    cfg: &RunConfig,
    motion: Option<Motion>,
    out: &Path,
    reps: usize,
    sessions: usize,
    seed: u64,
) -> CliResult {
    if reps < 1 {
        return Err(fail(EXIT_USAGE, "--reps must be at least 1"));
    }
    if sessions < 1 {
        return Err(fail(EXIT_USAGE, "--sessions must be at least 1"));
    }
    let base = match motion {
        Some(m) if m != cfg.synth.motion => MotionProfile {
            noise: cfg.synth.noise,
            mains: cfg.synth.mains,
            ..MotionProfile::for_motion(m)
        },
        _ => cfg.synth.clone(),
    };
    let profile = MotionProfile { n_reps: reps, ..base };
    let paths = write_sessions(out, &profile, sessions, seed)?;
    for p in &paths {
        println!("{}", p.display());
    }
    println!(
        "wrote {} {} sessions of {reps} repetitions to {}",
        paths.len(),
        profile.motion,
        out.display()
    );
    Ok(())
}

fn preprocess(cfg: &RunConfig, motion: Option<Motion>, input: &Path, imu: Option<&Path>, out: &Path) -> CliResult {
    let mut rec = match imu {
        Some(imu) => load_recording_pair(input, imu, &cfg.data.schema)?,
        None => load_recording(input, &cfg.data.schema)?,
    };
    if motion.is_some() {
        rec.meta.motion = motion;
    }
    let segments = build_segments(&rec, &cfg.pipeline())?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| fail(EXIT_USAGE, format!("cannot create {}: {e}", parent.display())))?;
    }
    write_unified(&segments, out)?;
    println!("{} segments written to {}", segments.len(), out.display());
    Ok(())
}

fn run_metadata(cfg: &RunConfig, summary: &BTreeMap<String, String>) -> CliResult<String> {
    let mut text = String::from("[summary]\n");
    for (k, v) in summary {
        let _ = writeln!(text, "{k} = {v}");
    }
    let config = cfg.to_toml()?;
    let mut table: toml::Table =
        toml::from_str(&config).map_err(|e| fail(EXIT_USAGE, format!("cannot encode config: {e}")))?;
    let mut wrapper = toml::Table::new();
    wrapper.insert("config".into(), toml::Value::Table(std::mem::take(&mut table)));
    text.push('\n');
    text.push_str(&toml::to_string(&wrapper).map_err(|e| fail(EXIT_USAGE, format!("cannot encode config: {e}")))?);
    Ok(text)
}

fn train_cmd(cfg: &RunConfig, motion: Option<Motion>, data: &Path, out: &Path) -> CliResult {
    let segments = load_segments(data, cfg, motion)?;
    let t = &cfg.train;
    let split = split_dataset(segments, t.train_fraction, t.seed)?;
    log::info!(
        "split: {} train / {} validation segments",
        split.train.len(),
        split.test.len()
    );
    let initial = ModelWeights::init_for_training(&cfg.model, cfg.init_seed)?;
    let started = Instant::now();
    let outcome = train(initial, &split, t)?;
    let h = &outcome.history;
    log::info!("training took {:.1}s", started.elapsed().as_secs_f64());

    let mut meta = BTreeMap::new();
    meta.insert("motion".to_string(), motion.map_or("all", |m| m.as_str()).to_string());
    meta.insert("split_seed".to_string(), split.seed.to_string());
    meta.insert("train_fraction".to_string(), split.train_fraction.to_string());
    meta.insert("train_seed".to_string(), t.seed.to_string());
    meta.insert("init_seed".to_string(), cfg.init_seed.to_string());
    meta.insert("train_segments".to_string(), split.train.len().to_string());
    meta.insert("val_segments".to_string(), split.test.len().to_string());
    meta.insert("best_epoch".to_string(), h.best_epoch.to_string());
    meta.insert("stopped_epoch".to_string(), h.stopped_epoch.to_string());
    meta.insert("best_val_loss".to_string(), format!("{:.17e}", h.best_val_loss()));
    let ckpt = Checkpoint {
        weights: outcome.weights,
        meta: meta.clone(),
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| fail(EXIT_USAGE, format!("cannot create {}: {e}", parent.display())))?;
    }
    save_checkpoint(&ckpt, out)?;
    let history_path = sibling(out, ".history.csv");
    write_file(&history_path, h.to_csv(false))?;

    let mut summary: BTreeMap<String, String> = meta
        .into_iter()
        .map(|(k, v)| {
            let quoted = if k == "motion" { format!("\"{v}\"") } else { v };
            (k, quoted)
        })
        .collect();
    summary.insert("early_stopped".to_string(), h.early_stopped.to_string());
    summary.insert("checkpoint".to_string(), format!("{:?}", out.display().to_string()));
    let run_path = sibling(out, ".run.toml");
    write_file(&run_path, run_metadata(cfg, &summary)?)?;

    println!(
        "best validation loss {:.6e} at epoch {} (stopped at {}{})",
        h.best_val_loss(),
        h.best_epoch,
        h.stopped_epoch,
        if h.early_stopped { ", early stop" } else { "" }
    );
    println!("checkpoint {}", out.display());
    println!("history {}", history_path.display());
    println!("run metadata {}", run_path.display());
    Ok(())
}

fn segment_csv(seg: &MergedSegment, pred: &[f64]) -> String {
    let mut s = String::from("t,true,predicted\n");
    for (i, (y, p)) in seg.target.iter().zip(pred).enumerate() {
        let _ = writeln!(s, "{},{y},{p}", i as f64 / seg.meta.fs);
    }
    s
}

fn eval_cmd(
    cfg: &RunConfig,
    motion: Option<Motion>,
    data: &Path,
    ckpt_path: &Path,
    report_path: &Path,
    plots: Option<&Path>,
    all: bool,
) -> CliResult {
    let ckpt = load_checkpoint_expecting(ckpt_path, &cfg.model)?;
    let motion = motion.or_else(|| ckpt.meta.get("motion").and_then(|m| m.parse().ok()));
    let segments = load_segments(data, cfg, motion)?;
    let split_params = ckpt
        .meta
        .get("split_seed")
        .zip(ckpt.meta.get("train_fraction"))
        .and_then(|(s, f)| Some((s.parse::<u64>().ok()?, f.parse::<f64>().ok()?)));
    let segments = match split_params {
        Some((seed, fraction)) if !all => {
            let held_out = split_dataset(segments, fraction, seed)?.test;
            log::info!(
                "evaluating the {} held-out segments of the training split",
                held_out.len()
            );
            held_out
        }
        _ => segments,
    };

    let predictions = predict_segments(&ckpt.weights, &segments)?;
    let mut report = evaluate_predictions(&segments, &predictions, cfg.eval.include_dc)?;
    report.motion = motion.map_or("all", |m| m.as_str()).to_string();
    write_file(report_path, report.to_csv())?;

    let seg_dir = sibling(report_path, "_segments");
    for (i, (seg, pred)) in segments.iter().zip(&predictions).enumerate() {
        let name = format!("{i:03}_{}", seg.id());
        write_file(&seg_dir.join(format!("{name}.csv")), segment_csv(seg, pred))?;
        if let Some(dir) = plots {
            let t: Vec<f64> = (0..seg.len()).map(|k| k as f64 / seg.meta.fs).collect();
            let svg = plot::overlay_svg(&seg.id(), &t, &seg.target, pred);
            write_file(&dir.join(format!("{name}.svg")), svg)?;
        }
    }
    print!("{}", report.table());
    println!("report {}", report_path.display());
    println!("per-segment traces {}", seg_dir.display());
    if let Some(dir) = plots {
        println!("plots {}", dir.display());
    }
    Ok(())
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() as f64 - 1.0) * q).round() as usize;
    sorted[idx]
}

fn synthetic_stream(profile: &MotionProfile, samples: usize, seed: u64) -> CliResult<Tensor> {
    let mut rows: [Vec<f64>; IMU_CHANNELS] = std::array::from_fn(|_| Vec::with_capacity(samples));
    let mut session = 0u64;
    while rows[0].len() < samples {
        let rec = generate_recording(profile, seed.wrapping_add(session), "bench", session as u32 + 1)?;
        for (row, ch) in rows.iter_mut().zip(&rec.recording.imu) {
            let take = (samples - row.len()).min(ch.len());
            row.extend_from_slice(&ch.samples[..take]);
        }
        session += 1;
    }
    Ok(Tensor::from_vec(IMU_CHANNELS, samples, rows.concat())?)
}

fn checksum(values: &[f64]) -> u64 {
    let mut h = DefaultHasher::new();
    for v in values {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

fn stream_bench(
    cfg: &RunConfig,
    motion: Option<Motion>,
    ckpt_path: &Path,
    seconds: u64,
    seed: Option<u64>,
) -> CliResult {
    let weights = load_checkpoint(ckpt_path)?.weights;
    let profile = match motion {
        Some(m) => MotionProfile::for_motion(m),
        None => cfg.synth.clone(),
    };
    let samples = (seconds as f64 * profile.fs).round() as usize;
    let seed = seed.unwrap_or(cfg.stream.seed);
    let x = synthetic_stream(&profile, samples, seed)?;
    let batch = forward(&weights, &x)?;

    let mut state = StreamState::new(&weights.config)?;
    let mut latencies = Vec::with_capacity(samples);
    let mut outputs = Vec::with_capacity(samples);
    let mut max_dev = 0.0f64;
    let mut frame = [0.0; IMU_CHANNELS];
    let started = Instant::now();
    for t in 0..samples {
        for (c, f) in frame.iter_mut().enumerate() {
            *f = x.get(c, t);
        }
        let t0 = Instant::now();
        let y = forward_streaming(&weights, &mut state, &frame)?;
        latencies.push(t0.elapsed().as_secs_f64() * 1e6);
        let dev = (y - batch.data()[t]).abs();
        if dev.is_nan() || dev > cfg.stream.tolerance {
            return Err(fail(
                EXIT_INVARIANT,
                format!(
                    "streaming output at sample {t} deviates from batch by {dev:e} (tolerance {:e})",
                    cfg.stream.tolerance
                ),
            ));
        }
        max_dev = max_dev.max(dev);
        outputs.push(y);
    }
    let total = started.elapsed().as_secs_f64();
    latencies.sort_by(f64::total_cmp);
    let mean = latencies.iter().sum::<f64>() / samples as f64;
    println!("samples {samples} ({seconds} s at {} Hz), seed {seed}", profile.fs);
    println!(
        "latency us: mean {mean:.1} p50 {:.1} p90 {:.1} p99 {:.1} max {:.1}",
        percentile(&latencies, 0.5),
        percentile(&latencies, 0.9),
        percentile(&latencies, 0.99),
        latencies[samples - 1]
    );
    println!("real-time factor {:.1}x", seconds as f64 / total);
    println!(
        "batch equivalence: max deviation {max_dev:e} (tolerance {:e}) ok",
        cfg.stream.tolerance
    );
    println!("input checksum {:016x}", checksum(x.data()));
    println!("output checksum {:016x}", checksum(&outputs));
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    let cfg = RunConfig::resolve(cli.config.as_deref())?;
    let motion = motion_filter(cli.motion, &cfg);
    match cli.command {
        Command::SynthData {
            out,
            reps,
            sessions,
            seed,
        } => synth_data(&cfg, cli.motion, &out, reps, sessions, seed),
        Command::Preprocess { input, imu, out } => preprocess(&cfg, motion, &input, imu.as_deref(), &out),
        Command::Train { data, out } => train_cmd(&cfg, motion, &data, &out),
        Command::Eval {
            data,
            ckpt,
            report,
            plots,
            all,
        } => eval_cmd(&cfg, motion, &data, &ckpt, &report, plots.as_deref(), all),
        Command::StreamBench { ckpt, seconds, seed } => stream_bench(&cfg, cli.motion, &ckpt, seconds, seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
