//! `squint` — generate channel datasets, train the graph beamformer, and
//! sweep or benchmark the designers, all driven by JSON files on disk.

mod alloc;
mod run;
mod spec;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use run::SweepOverrides;
use spec::Designer;

#[global_allocator]
static ALLOC: alloc::CountingAlloc = alloc::CountingAlloc;

const GEN_HELP: &str = "\
Writes a binary channel dataset (magic \"SQCH\") drawn from the clustered ray
model of the system config, and prints the dataset's mean per-antenna channel
gain, which the model normalizes to 1. The draw is fully determined by
--seed: identical invocations produce identical files.";

const TRAIN_HELP: &str = "\
The training spec is JSON: {\"rounds\", \"model_seed\", \"holdout\", \"snr_db\",
\"train\": {learning_rate, halving_period, batch_size, batches_per_epoch,
epochs, beta1, beta2, epsilon, seed}}. The last `holdout` dataset samples are
held out for the per-epoch score; the rest train.

Writes the model (magic \"SQNN\") and an epoch trace CSV whose first line is a
'# {json}' provenance comment followed by these columns, in order:

    epoch,lr,train_loss,holdout_SE

With epochs = 0 the freshly initialized model is written and the trace has no
rows. --seed overrides the shuffling seed in the spec.";

const EVAL_HELP: &str = "\
The experiment file is JSON: {\"kind\", \"system\", \"designers\", \"grid\",
\"realizations\", \"seed\", \"snr_db\", \"out\"}. Kinds accepted here:
snr-sweep (grid in dB) and squint-sweep (grid = bandwidth/carrier, operating
at the spec's snr_db). Channel draws are seeded identically at every grid
point, so the realizations are paired across the sweep. Realizations run in
parallel when built with the default `parallel` feature; results do not
depend on the feature.

The output CSV starts with a '# {json}' provenance comment, then one row per
(designer, grid point) with these columns, in order:

    designer,grid,mean_se,se_stderr,mean_seconds,seconds_std,peak_alloc_bytes

mean_se averages bits/s/Hz over the realizations and se_stderr is its
standard error; mean_seconds/seconds_std describe the wall-clock of the
design call alone. peak_alloc_bytes is left empty here — `bench` fills it.
Rates are deterministic given the spec, so re-running reproduces the SE
columns exactly.";

const BENCH_HELP: &str = "\
Takes the same experiment JSON as `eval` but requires kind = runtime (grid in
dB). Runs strictly single-threaded: each designer is warmed up with three
discarded calls, then every realization is timed around the design call
alone. peak_alloc_bytes reports the worst single-call heap growth, measured
by allocator instrumentation. Columns match `eval`:

    designer,grid,mean_se,se_stderr,mean_seconds,seconds_std,peak_alloc_bytes

With one realization the spread columns are exactly 0.";

#[derive(Parser)]
#[command(
    name = "squint",
    version,
    about = "Design and benchmark wideband hybrid beamformers"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw a channel dataset from a system config.
    #[command(after_help = GEN_HELP)]
    Gen {
        /// System config JSON file.
        #[arg(long)]
        config: PathBuf,
        /// Number of channel realizations to draw.
        #[arg(long)]
        count: usize,
        /// Seed for the draw.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output dataset file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the graph model on a dataset; writes model + epoch trace CSV.
    #[command(after_help = TRAIN_HELP)]
    Train {
        /// Channel dataset produced by `gen`.
        #[arg(long)]
        dataset: PathBuf,
        /// Training spec JSON file.
        #[arg(long)]
        config: PathBuf,
        /// Output model file.
        #[arg(long)]
        model: PathBuf,
        /// Output epoch trace CSV.
        #[arg(long)]
        out: PathBuf,
        /// Override the spec's shuffling seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sweep designer rates over SNR or fractional bandwidth.
    #[command(after_help = EVAL_HELP)]
    Eval(SweepArgs),
    /// Time designers per channel update, single-threaded and warm-started.
    #[command(after_help = BENCH_HELP)]
    Bench(SweepArgs),
}

#[derive(Args)]
struct SweepArgs {
    /// Experiment spec JSON file.
    #[arg(long)]
    config: PathBuf,
    /// Trained model file; required when the designers include `gnn`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output CSV; overrides the spec's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Designer subset, comma-separated (e.g. `gnn,amo`).
    #[arg(long, value_delimiter = ',')]
    designers: Option<Vec<Designer>>,
    /// Grid override, comma-separated (use `--grid=-10,0,10` for negatives).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    grid: Option<Vec<f64>>,
    /// Realization count override.
    #[arg(long)]
    realizations: Option<usize>,
    /// Channel seed override.
    #[arg(long)]
    seed: Option<u64>,
}

impl From<SweepArgs> for SweepOverrides {
    fn from(a: SweepArgs) -> Self {
        SweepOverrides {
            model: a.model,
            out: a.out,
            designers: a.designers,
            grid: a.grid,
            realizations: a.realizations,
            seed: a.seed,
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Gen { config, count, seed, out } => run::cmd_gen(&config, count, seed, &out),
        Cmd::Train { dataset, config, model, out, seed } => {
            run::cmd_train(&dataset, &config, &model, &out, seed)
        }
        Cmd::Eval(args) => {
            let config = args.config.clone();
            run::cmd_eval(&config, args.into())
        }
        Cmd::Bench(args) => {
            let config = args.config.clone();
            run::cmd_bench(&config, args.into())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
