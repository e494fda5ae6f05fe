//! Implementations of the four subcommands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde_json::json;

use squint_core::baselines::{amo_design, av_single, fully_digital, AmoConfig};
use squint_core::channel::{generate_dataset, ChannelDataset, ChannelRealization, SystemConfig};
use squint_core::gnn::{GnnModel, ModelDims};
use squint_core::system::{spectral_efficiency, LinkBudget};

use crate::spec::{Designer, ExperimentKind, ExperimentSpec, TrainSpec};

pub type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

/// Command-line overrides layered over an experiment file.
#[derive(Clone, Debug, Default)]
pub struct SweepOverrides {
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub designers: Option<Vec<Designer>>,
    pub grid: Option<Vec<f64>>,
    pub realizations: Option<usize>,
    pub seed: Option<u64>,
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

pub fn cmd_gen(config: &Path, count: usize, seed: u64, out: &Path) -> CliResult<()> {
    let cfg: SystemConfig = read_json(config)?;
    cfg.validate()?;
    info!("drawing {count} channels, seed {seed}");
    let dataset = generate_dataset(&cfg, count, seed)?;
    dataset.write(out)?;

    // Per-subcarrier mean of ‖H‖²/(n_tx·n_rx); the ray model aims this at 1.
    let scale = (cfg.n_tx() * cfg.n_rx()) as f64;
    let mut sum = 0.0;
    let mut terms = 0usize;
    for sample in dataset.samples() {
        for h in sample.subcarriers() {
            sum += h.frob_norm_sq() / scale;
            terms += 1;
        }
    }
    if terms == 0 {
        println!("wrote 0 samples to {}", out.display());
    } else {
        println!(
            "wrote {} samples to {}; mean per-antenna channel gain {:.4} (unit target)",
            dataset.len(),
            out.display(),
            sum / terms as f64,
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

pub fn cmd_train(
    dataset_path: &Path,
    config: &Path,
    model_out: &Path,
    trace_out: &Path,
    seed_override: Option<u64>,
) -> CliResult<()> {
    let spec: TrainSpec = read_json(config)?;
    let (cfg, mut samples) = ChannelDataset::read(dataset_path)?.into_parts();
    if spec.holdout > samples.len() {
        return Err(format!(
            "holdout {} exceeds the dataset's {} samples",
            spec.holdout,
            samples.len()
        )
        .into());
    }
    let holdout = samples.split_off(samples.len() - spec.holdout);
    let training = samples;

    let dims = ModelDims::new(cfg.n_tx(), cfg.n_rx(), cfg.n_rf, cfg.n_streams)?;
    let mut model = GnnModel::new(dims, spec.rounds, spec.model_seed)?;
    let mut schedule = spec.train;
    if let Some(seed) = seed_override {
        schedule.seed = seed;
    }
    let budget = LinkBudget::new(spec.snr_db)?;

    info!(
        "training {} epochs on {} samples ({} held out)",
        schedule.epochs,
        training.len(),
        holdout.len()
    );
    let trace = model.train(&training, &holdout, &schedule, budget)?;
    model.save(model_out)?;

    let meta = json!({
        "command": "train",
        "dataset": dataset_path.display().to_string(),
        "system": cfg,
        "rounds": spec.rounds,
        "model_seed": spec.model_seed,
        "snr_db": spec.snr_db,
        "schedule": schedule,
    });
    let mut text = format!("# {meta}\nepoch,lr,train_loss,holdout_SE\n");
    for r in &trace {
        let _ = writeln!(
            text,
            "{},{},{},{}",
            r.epoch, r.learning_rate, r.train_loss, r.holdout_se
        );
    }
    fs::write(trace_out, text).map_err(|e| format!("{}: {e}", trace_out.display()))?;

    match trace.last() {
        Some(last) => println!(
            "trained {} epochs; final loss {:.4}, held-out rate {:.4} bits/s/Hz",
            trace.len(),
            last.train_loss,
            last.holdout_se,
        ),
        None => println!("trained 0 epochs; wrote the freshly initialized model"),
    }
    println!("model -> {}", model_out.display());
    println!("trace -> {}", trace_out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

pub fn cmd_eval(config: &Path, overrides: SweepOverrides) -> CliResult<()> {
    let (spec, model, out) = load_experiment(config, &overrides)?;
    match spec.kind {
        ExperimentKind::SnrSweep | ExperimentKind::SquintSweep => {}
        ExperimentKind::Convergence => {
            return Err("convergence traces come from `squint train`, not `eval`".into())
        }
        ExperimentKind::Runtime => {
            return Err("runtime experiments go through `squint bench`".into())
        }
    }

    let mut records = Vec::with_capacity(spec.grid.len() * spec.designers.len());
    for &g in &spec.grid {
        let (cfg, budget) = grid_point(&spec, g)?;
        // Seeding the draw identically at every grid point pairs the
        // realizations, so sweep curves differ only through the swept knob.
        let dataset = generate_dataset(&cfg, spec.realizations, spec.seed)?;
        let channels = dataset.samples();
        for &designer in &spec.designers {
            info!("grid {g}: {} over {} realizations", designer.label(), channels.len());
            let runs = map_indexed(channels.len(), |i| {
                run_designer(designer, &cfg, model.as_ref(), &channels[i], budget, spec.seed, i)
            });
            records.push(summarize(designer, g, runs, None)?);
        }
    }
    write_records(&out, &metadata(&spec, "eval"), &records)?;
    println!("wrote {} rows to {}", records.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

/// Calls discarded before timing starts, so allocator pools and caches are
/// warm for every measured run.
const BENCH_WARMUP: usize = 3;

pub fn cmd_bench(config: &Path, overrides: SweepOverrides) -> CliResult<()> {
    let (spec, model, out) = load_experiment(config, &overrides)?;
    if spec.kind != ExperimentKind::Runtime {
        return Err(format!(
            "bench wants a runtime experiment, got {}; use `eval` for rate sweeps",
            spec.kind.label()
        )
        .into());
    }

    let mut records = Vec::with_capacity(spec.grid.len() * spec.designers.len());
    for &g in &spec.grid {
        let (cfg, budget) = grid_point(&spec, g)?;
        let dataset = generate_dataset(&cfg, spec.realizations, spec.seed)?;
        let channels = dataset.samples();
        for &designer in &spec.designers {
            info!("grid {g}: timing {} ({BENCH_WARMUP} warmup calls)", designer.label());
            for _ in 0..BENCH_WARMUP {
                run_designer(designer, &cfg, model.as_ref(), &channels[0], budget, spec.seed, 0)?;
            }
            // Timings run strictly one at a time: a designer's latency is
            // the quantity under test, and contention would corrupt it.
            let mut peak = 0u64;
            let mut runs = Vec::with_capacity(channels.len());
            for (i, channel) in channels.iter().enumerate() {
                crate::alloc::reset_peak();
                let run = run_designer(designer, &cfg, model.as_ref(), channel, budget, spec.seed, i);
                peak = peak.max(crate::alloc::peak_above_reset());
                runs.push(run);
            }
            records.push(summarize(designer, g, runs, Some(peak))?);
        }
    }
    write_records(&out, &metadata(&spec, "bench"), &records)?;
    println!("wrote {} rows to {}", records.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// Shared machinery
// ---------------------------------------------------------------------------

/// One output row: a designer's rate and latency statistics at a grid point.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub designer: Designer,
    pub grid: f64,
    pub mean_se: f64,
    /// Standard error of the mean rate over the realizations.
    pub se_stderr: f64,
    pub mean_seconds: f64,
    pub seconds_std: f64,
    /// Worst heap growth of a single designer call; `bench` only.
    pub peak_alloc_bytes: Option<u64>,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()).into())
}

/// Load a spec, apply command-line overrides, validate, and resolve the
/// model and output path the experiment needs.
fn load_experiment(
    config: &Path,
    overrides: &SweepOverrides,
) -> CliResult<(ExperimentSpec, Option<GnnModel>, PathBuf)> {
    let mut spec: ExperimentSpec = read_json(config)?;
    if let Some(designers) = &overrides.designers {
        spec.designers = designers.clone();
    }
    if let Some(grid) = &overrides.grid {
        spec.grid = grid.clone();
    }
    if let Some(n) = overrides.realizations {
        spec.realizations = n;
    }
    if let Some(seed) = overrides.seed {
        spec.seed = seed;
    }
    spec.validate()?;

    let out = overrides
        .out
        .clone()
        .or_else(|| spec.out.clone())
        .ok_or("no output path: pass --out or set `out` in the experiment file")?;

    let model = if spec.designers.contains(&Designer::Gnn) {
        let path = overrides
            .model
            .as_deref()
            .ok_or("the gnn designer needs --model <file>")?;
        let model = GnnModel::load(path)?;
        let want = ModelDims::new(
            spec.system.n_tx(),
            spec.system.n_rx(),
            spec.system.n_rf,
            spec.system.n_streams,
        )?;
        if model.dims() != want {
            return Err(format!(
                "model at {} was built for {:?}, experiment needs {:?}",
                path.display(),
                model.dims(),
                want
            )
            .into());
        }
        Some(model)
    } else {
        None
    };
    Ok((spec, model, out))
}

/// Resolve one grid value into the system and operating point it denotes.
fn grid_point(spec: &ExperimentSpec, g: f64) -> CliResult<(SystemConfig, LinkBudget)> {
    match spec.kind {
        ExperimentKind::SnrSweep | ExperimentKind::Runtime => {
            Ok((spec.system.clone(), LinkBudget::new(g)?))
        }
        ExperimentKind::SquintSweep => {
            let mut cfg = spec.system.clone();
            cfg.bandwidth_hz = g * cfg.carrier_hz;
            cfg.validate()?;
            Ok((cfg, LinkBudget::new(spec.snr_db)?))
        }
        ExperimentKind::Convergence => Err("convergence has no grid to sweep".into()),
    }
}

/// Decorrelates per-realization designer seeds without reusing the channel
/// stream; the stride is the usual 64-bit golden-ratio constant.
fn designer_seed(base: u64, realization: usize) -> u64 {
    base.wrapping_add((realization as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Salt so a model's starting point never shares a seed with the manifold
/// optimizer's starting phases on the same realization.
const GNN_INIT_SALT: u64 = 0x676e_6e5f_696e_6974;

/// Run one designer on one channel; returns its rate and the wall-clock of
/// the design call alone (rate evaluation happens outside the timer).
fn run_designer(
    designer: Designer,
    cfg: &SystemConfig,
    model: Option<&GnnModel>,
    channel: &ChannelRealization,
    budget: LinkBudget,
    base_seed: u64,
    realization: usize,
) -> squint_core::Result<(f64, f64)> {
    match designer {
        Designer::FullyDigital => {
            let start = Instant::now();
            let design = fully_digital(channel, cfg.n_streams, budget)?;
            Ok((design.se, start.elapsed().as_secs_f64()))
        }
        Designer::AvSingle => {
            let start = Instant::now();
            let bf = av_single(cfg, channel, budget)?;
            let secs = start.elapsed().as_secs_f64();
            Ok((spectral_efficiency(channel, &bf, budget)?, secs))
        }
        Designer::Amo => {
            let amo = AmoConfig::default();
            let seed = designer_seed(base_seed, realization);
            let start = Instant::now();
            let result = amo_design(channel, cfg.n_rf, cfg.n_streams, &amo, budget, seed)?;
            let secs = start.elapsed().as_secs_f64();
            Ok((spectral_efficiency(channel, &result.beamformer, budget)?, secs))
        }
        Designer::Gnn => {
            let model = model.expect("resolved before dispatch");
            let seed = designer_seed(base_seed ^ GNN_INIT_SALT, realization);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let start = Instant::now();
            let bf = model.forward(channel, &mut rng, budget)?;
            let secs = start.elapsed().as_secs_f64();
            Ok((spectral_efficiency(channel, &bf, budget)?, secs))
        }
    }
}

/// Fold per-realization (rate, seconds) results into one record.
fn summarize(
    designer: Designer,
    grid: f64,
    runs: Vec<squint_core::Result<(f64, f64)>>,
    peak_alloc_bytes: Option<u64>,
) -> CliResult<RunRecord> {
    let mut ses = Vec::with_capacity(runs.len());
    let mut secs = Vec::with_capacity(runs.len());
    for run in runs {
        let (se, s) = run?;
        ses.push(se);
        secs.push(s);
    }
    let (mean_se, se_std) = mean_std(&ses);
    let (mean_seconds, seconds_std) = mean_std(&secs);
    Ok(RunRecord {
        designer,
        grid,
        mean_se,
        se_stderr: se_std / (ses.len() as f64).sqrt(),
        mean_seconds,
        seconds_std,
        peak_alloc_bytes,
    })
}

/// Mean and sample standard deviation; a single observation has zero spread.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn metadata(spec: &ExperimentSpec, command: &str) -> serde_json::Value {
    json!({ "command": command, "spec": spec })
}

/// CSV with a one-line `# {json}` provenance comment, then fixed columns:
/// `designer,grid,mean_se,se_stderr,mean_seconds,seconds_std,peak_alloc_bytes`.
/// Floats print through `Display`, which round-trips exactly, so re-running
/// an experiment reproduces the file byte for byte.
fn write_records(path: &Path, meta: &serde_json::Value, records: &[RunRecord]) -> CliResult<()> {
    let mut text = format!("# {meta}\n");
    text.push_str("designer,grid,mean_se,se_stderr,mean_seconds,seconds_std,peak_alloc_bytes\n");
    for r in records {
        let peak = r.peak_alloc_bytes.map(|b| b.to_string()).unwrap_or_default();
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{}",
            r.designer.label(),
            r.grid,
            r.mean_se,
            r.se_stderr,
            r.mean_seconds,
            r.seconds_std,
            peak,
        );
    }
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()).into())
}

#[cfg(feature = "parallel")]
fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}
