//! Command-line entry points. Each subcommand is also callable as a plain
//! function so scripts and tests can skip argument parsing.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or invalid config.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{presets, EngineConfig};
use crate::corpus::{gesture_corpus, CorpusSpec};
use crate::engine::runtime::{EngineHandle, Runtime, RuntimeOptions};
use crate::engine::{build_dataset, session_files, BuildStats, Dataset};
use crate::mdrnn::{self, load_weights, save_weights, EpochLoss, MdrnnParams, ModelShape, TrainHyper};
use crate::midi::{MidiBackend, SystemMidi, VirtualMidi, VirtualPort};
use crate::service::{self, AppState};
use crate::{ContinuousFrame, Error};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "impsy", version, about = "Real-time MIDI co-performance with a mixture density RNN")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the engine, MIDI routing, network feed and web service.
    Run(RunArgs),
    /// Train a model from session logs or a packed dataset.
    Train(TrainArgs),
    /// Time predict_next across model sizes.
    Bench(BenchArgs),
    /// Pack session logs into a training dataset.
    Dataset(DatasetArgs),
    /// Generate the synthetic 1-D gesture corpus.
    Corpus(CorpusArgs),
    /// Write a preset config file.
    Preset(PresetArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, env = "IMPSY_CONFIG")]
    pub config: PathBuf,
    /// Use in-process virtual MIDI ports named after the config's devices.
    #[arg(long = "virtual")]
    pub virtual_midi: bool,
    /// Stop after this many seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Do not start the HTTP service.
    #[arg(long)]
    pub no_service: bool,
    /// Bind the service on all interfaces instead of the configured address.
    #[arg(long)]
    pub lan: bool,
    /// Directory with the built web UI.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    /// Do not write a session log.
    #[arg(long)]
    pub no_log: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Log directory or packed dataset file.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub dim: usize,
    #[arg(long, default_value_t = 64)]
    pub units: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 5)]
    pub mixtures: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 50)]
    pub seq_len: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1.0)]
    pub clip: f64,
    #[arg(long, default_value_t = 0.1)]
    pub val_split: f64,
    #[arg(long, default_value_t = 5.0)]
    pub dt_max: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Weight file to write.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Loss history JSON; defaults to the weight file with a .json extension.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "64,128,256,512")]
    pub units: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    pub dims: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 5)]
    pub mixtures: usize,
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the results as CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    #[arg(long)]
    pub logs: PathBuf,
    #[arg(long)]
    pub dim: usize,
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5.0)]
    pub dt_max: f64,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 300.0)]
    pub seconds: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PresetName {
    Volca,
    FastInterleave,
    Daw,
    MultiDevice,
}

#[derive(Debug, Args)]
pub struct PresetArgs {
    #[arg(value_enum)]
    pub name: PresetName,
    #[arg(long, default_value = "model.mdrn")]
    pub model: String,
    #[arg(long, short)]
    pub out: PathBuf,
}

pub fn preset(name: PresetName, model: &str) -> EngineConfig {
    match name {
        PresetName::Volca => presets::volca(model),
        PresetName::FastInterleave => presets::fast_interleave(model),
        PresetName::Daw => presets::daw(model),
        PresetName::MultiDevice => presets::multi_device(model),
    }
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::Config(_)) | Some(Error::Training(_)) => EXIT_USAGE,
                _ if e.downcast_ref::<UsageError>().is_some() => EXIT_USAGE,
                _ => EXIT_FAILURE,
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn dispatch(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Run(a) => run(a),
        Command::Train(a) => {
            let out = train(&a)?;
            println!("trained {} epochs in {:.1} s; best epoch {}", a.epochs, out.wall_time_s, out.best_epoch);
            for h in &out.history {
                println!("  epoch {:>3}  train {:>10.4}  val {}", h.epoch, h.train_loss, fmt_opt(h.val_loss));
            }
            Ok(())
        }
        Command::Bench(a) => {
            let rows = bench(&BenchSpec {
                units: a.units.clone(),
                dimension: a.dims,
                layers: a.layers,
                mixtures: a.mixtures,
                iters: a.iters,
                warmup: 50,
                seed: a.seed,
            })?;
            print!("{}", bench_table(&rows));
            let csv = bench_csv(&rows);
            match &a.csv {
                Some(p) => std::fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?,
                None => print!("\n{csv}"),
            }
            Ok(())
        }
        Command::Dataset(a) => {
            let stats = dataset(&a.logs, a.dim, a.dt_max, &a.out)?;
            for w in &stats.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "{}",
                serde_json::json!({ "files": stats.files, "records": stats.records, "skipped_lines": stats.skipped_lines, "out": a.out })
            );
            Ok(())
        }
        Command::Corpus(a) => {
            let spec = CorpusSpec { total_s: a.seconds, ..Default::default() };
            let ds = gesture_corpus(&spec, &mut ChaCha8Rng::seed_from_u64(a.seed));
            ds.save(&a.out)?;
            println!("{} gestures, {} frames -> {}", ds.sequences.len(), ds.frame_count(), a.out.display());
            Ok(())
        }
        Command::Preset(a) => {
            let cfg = preset(a.name, &a.model);
            std::fs::write(&a.out, cfg.to_json_pretty() + "\n").with_context(|| format!("writing {}", a.out.display()))?;
            Ok(())
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

/// Build a packed dataset from every session file in `logs`.
pub fn dataset(logs: &Path, dim: usize, dt_max: f64, out: &Path) -> anyhow::Result<BuildStats> {
    let files = session_files(logs).with_context(|| format!("listing {}", logs.display()))?;
    let (ds, stats) = build_dataset(&files, dim, dt_max)?;
    ds.save(out)?;
    Ok(stats)
}

fn load_training_data(path: &Path, dim: usize, dt_max: f64) -> anyhow::Result<Dataset> {
    let ds = if path.is_dir() {
        let files = session_files(path)?;
        let (ds, stats) = build_dataset(&files, dim, dt_max)?;
        for w in &stats.warnings {
            log::warn!("{w}");
        }
        ds
    } else {
        Dataset::load(path)?
    };
    if ds.dimension != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: ds.dimension }.into());
    }
    Ok(ds)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainOutcome {
    pub shape: ModelShape,
    pub hyper: TrainHyper,
    pub seed: u64,
    pub sequences: usize,
    pub frames: usize,
    pub history: Vec<EpochLoss>,
    pub best_epoch: usize,
    pub wall_time_s: f64,
}

/// Train and write the weight file plus a JSON report.
pub fn train(a: &TrainArgs) -> anyhow::Result<TrainOutcome> {
    let started = Instant::now();
    let ds = load_training_data(&a.data, a.dim, a.dt_max)?;
    let shape = ModelShape::new(a.dim, a.layers, a.units, a.mixtures)?;
    let hyper = TrainHyper {
        seq_len: a.seq_len,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        epochs: a.epochs,
        clip_norm: a.clip,
        validation_split: a.val_split,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let report = mdrnn::train(&ds, shape, &hyper, None, &mut rng)?;
    save_weights(&report.params, &a.out)?;
    let outcome = TrainOutcome {
        shape,
        hyper,
        seed: a.seed,
        sequences: ds.sequences.len(),
        frames: ds.frame_count(),
        history: report.history,
        best_epoch: report.best_epoch,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    let report_path = a.report.clone().unwrap_or_else(|| a.out.with_extension("json"));
    std::fs::write(&report_path, serde_json::to_string_pretty(&outcome)? + "\n")
        .with_context(|| format!("writing {}", report_path.display()))?;
    Ok(outcome)
}

#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub units: Vec<usize>,
    pub dimension: usize,
    pub layers: usize,
    pub mixtures: usize,
    pub iters: usize,
    pub warmup: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub units: usize,
    pub layers: usize,
    pub dimension: usize,
    pub mixtures: usize,
    pub iters: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
}

pub const MIN_BENCH_ITERS: usize = 100;

/// Time `iters` chained predict_next calls per size after a warmup.
pub fn bench(spec: &BenchSpec) -> anyhow::Result<Vec<BenchRow>> {
    if spec.iters < MIN_BENCH_ITERS {
        return Err(UsageError(format!("--iters must be at least {MIN_BENCH_ITERS}, got {}", spec.iters)).into());
    }
    let mut rows = Vec::new();
    for &units in &spec.units {
        let shape = ModelShape::new(spec.dimension, spec.layers, units, spec.mixtures)?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let params = MdrnnParams::init(shape, &mut rng);
        let mut state = params.new_state();
        let mut prev = ContinuousFrame::neutral(spec.dimension);
        let mut times = Vec::with_capacity(spec.iters);
        for i in 0..spec.warmup + spec.iters {
            let t0 = Instant::now();
            let (next, s) = mdrnn::predict_next(&params, &state, &prev, 1.0, 1.0, 5.0, &mut rng)?;
            let el = t0.elapsed();
            std::hint::black_box(&next);
            if i >= spec.warmup {
                times.push(el.as_secs_f64() * 1e3);
            }
            state = s;
            prev = next;
        }
        let mean = times.iter().sum::<f64>() / times.len() as f64;
        times.sort_by(f64::total_cmp);
        let pct = |p: f64| times[((times.len() - 1) as f64 * p).round() as usize];
        rows.push(BenchRow {
            units,
            layers: spec.layers,
            dimension: spec.dimension,
            mixtures: spec.mixtures,
            iters: spec.iters,
            mean_ms: mean,
            p50_ms: pct(0.5),
            p99_ms: pct(0.99),
        });
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("units,layers,dimension,mixtures,iters,mean_ms,p50_ms,p99_ms\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6}\n",
            r.units, r.layers, r.dimension, r.mixtures, r.iters, r.mean_ms, r.p50_ms, r.p99_ms
        ));
    }
    s
}

pub fn bench_table(rows: &[BenchRow]) -> String {
    let mut s = format!("{:>7} {:>6} {:>4} {:>10} {:>10} {:>10}\n", "units", "layers", "D", "mean ms", "p50 ms", "p99 ms");
    for r in rows {
        s.push_str(&format!(
            "{:>7} {:>6} {:>4} {:>10.4} {:>10.4} {:>10.4}\n",
            r.units, r.layers, r.dimension, r.mean_ms, r.p50_ms, r.p99_ms
        ));
    }
    s
}

/// Virtual ports for every device the config names; outputs are drained in
/// the background so a long run does not accumulate bytes.
fn virtual_backend(config: &EngineConfig) -> (Arc<VirtualMidi>, Vec<VirtualPort>) {
    let vm = Arc::new(VirtualMidi::new());
    let mut names = config.input_devices();
    for d in config.output_devices() {
        if !names.contains(&d) {
            names.push(d);
        }
    }
    let ports = names.iter().map(|n| vm.create_port(n)).collect();
    (vm, ports)
}

pub fn load_config(path: &Path) -> anyhow::Result<(EngineConfig, PathBuf)> {
    let config = EngineConfig::from_file(path).with_context(|| format!("config {}", path.display()))?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
    Ok((config, base))
}

fn run(a: RunArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    let (mut config, base) = load_config(&a.config)?;
    config.check_model(&base)?;
    let model = load_weights(&config.model_path(&base))?;
    if a.lan {
        let port = config.net.http_bind.rsplit(':').next().unwrap_or("4000").to_string();
        config.net.http_bind = format!("0.0.0.0:{port}");
    }
    let (backend, ports): (Arc<dyn MidiBackend>, Vec<VirtualPort>) = if a.virtual_midi {
        let (vm, ports) = virtual_backend(&config);
        (vm, ports)
    } else {
        (Arc::new(SystemMidi::new()), Vec::new())
    };
    let (feed, _) = tokio::sync::broadcast::channel(256);
    let bind: std::net::SocketAddr = config.net.http_bind.parse().context("net.http_bind")?;
    let rt = Runtime::start(
        config.clone(),
        Arc::new(model),
        config.model_file.display().to_string(),
        backend,
        RuntimeOptions { base_dir: base.clone(), duration: a.duration, feed: Some(feed.clone()), logging: !a.no_log },
    )?;
    println!("ready in {:.1} ms", started.elapsed().as_secs_f64() * 1e3);

    let drain_stop = Arc::new(std::sync::atomic::AtomicBool::new(false));
    let drainer = {
        let stop = drain_stop.clone();
        std::thread::spawn(move || {
            while !stop.load(std::sync::atomic::Ordering::Relaxed) {
                for p in &ports {
                    p.drain_output();
                }
                std::thread::sleep(Duration::from_millis(50));
            }
        })
    };

    let tokio_rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
    let handle = rt.handle();
    let duration = a.duration;
    tokio_rt.block_on(async move {
        let stop = stop_signal(duration, handle.clone());
        if a.no_service {
            stop.await;
            Ok::<_, anyhow::Error>(())
        } else {
            let state = AppState {
                handle,
                config_path: a.config.clone(),
                base_dir: base,
                feed,
                static_dir: a.static_dir.clone(),
                write_lock: Default::default(),
            };
            service::serve(state, bind, stop).await.with_context(|| format!("serving on {bind}"))
        }
    })?;
    let summary = rt.stop();
    drain_stop.store(true, std::sync::atomic::Ordering::Relaxed);
    let _ = drainer.join();
    println!(
        "{}",
        serde_json::json!({
            "status": summary.status,
            "log": summary.log_path,
            "log_dropped": summary.log_dropped,
            "input_dropped": summary.input_dropped,
            "output_errors": summary.output_errors,
        })
    );
    Ok(())
}

/// Resolves on Ctrl-C, after `duration`, or when the engine stops.
async fn stop_signal(duration: Option<f64>, handle: EngineHandle) {
    let timer = async {
        match duration {
            Some(d) => tokio::time::sleep(Duration::from_secs_f64(d)).await,
            None => std::future::pending().await,
        }
    };
    let engine_gone = async {
        while handle.status().await.is_some() {
            tokio::time::sleep(Duration::from_millis(500)).await;
        }
    };
    tokio::select! {
        _ = tokio::signal::ctrl_c() => {}
        _ = timer => {}
        _ = engine_gone => {}
    }
}
