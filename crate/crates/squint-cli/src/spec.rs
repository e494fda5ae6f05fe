//! Experiment descriptions loaded from JSON.

use std::path::PathBuf;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use squint_core::channel::SystemConfig;

/// What an experiment sweeps or measures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Rate versus operating SNR; the grid holds dB values.
    SnrSweep,
    /// Rate versus fractional bandwidth b = B/f_c at a fixed SNR; the grid
    /// holds b values and the carrier stays put.
    SquintSweep,
    /// Training curve. Produced by the `train` subcommand's epoch trace,
    /// not by `eval`; the variant exists so experiment files can name it.
    Convergence,
    /// Wall-clock per CSI update; the grid holds dB values.
    Runtime,
}

impl ExperimentKind {
    pub fn label(self) -> &'static str {
        match self {
            ExperimentKind::SnrSweep => "snr-sweep",
            ExperimentKind::SquintSweep => "squint-sweep",
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::Runtime => "runtime",
        }
    }
}

/// One of the four precoder designers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Designer {
    /// Unconstrained per-subcarrier water-filling bound.
    FullyDigital,
    /// Array-vector steering at the center frequency.
    AvSingle,
    /// Alternating manifold optimization of the factorization.
    Amo,
    /// The trained graph model (needs `--model`).
    Gnn,
}

impl Designer {
    pub fn label(self) -> &'static str {
        match self {
            Designer::FullyDigital => "fully-digital",
            Designer::AvSingle => "av-single",
            Designer::Amo => "amo",
            Designer::Gnn => "gnn",
        }
    }
}

/// A sweep or benchmark: which designers, over which grid, how many channel
/// draws, and where the rows go.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub system: SystemConfig,
    pub designers: Vec<Designer>,
    /// Sweep points: dB for `snr-sweep`/`runtime`, fractional bandwidth for
    /// `squint-sweep`.
    pub grid: Vec<f64>,
    pub realizations: usize,
    pub seed: u64,
    /// Operating SNR in dB for sweeps whose grid is not in dB.
    #[serde(default)]
    pub snr_db: f64,
    /// Default output path; `--out` overrides it.
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), String> {
        self.system.validate().map_err(|e| e.to_string())?;
        if self.designers.is_empty() {
            return Err("the designer list is empty".into());
        }
        if self.grid.is_empty() {
            return Err("the sweep grid is empty".into());
        }
        if self.realizations == 0 {
            return Err("realizations must be at least 1".into());
        }
        if !self.snr_db.is_finite() {
            return Err(format!("snr_db = {} is not finite", self.snr_db));
        }
        for &g in &self.grid {
            if !g.is_finite() {
                return Err(format!("grid value {g} is not finite"));
            }
            if self.kind == ExperimentKind::SquintSweep && g <= 0.0 {
                return Err(format!("fractional bandwidth {g} must be positive"));
            }
        }
        Ok(())
    }
}

/// Model construction plus training schedule for `train`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSpec {
    /// Message-passing rounds of the model.
    pub rounds: usize,
    /// Seed for the weight initialization.
    pub model_seed: u64,
    /// How many samples at the end of the dataset are held out for the
    /// per-epoch score; the rest train.
    pub holdout: usize,
    /// Operating SNR in dB the loss is evaluated at.
    #[serde(default)]
    pub snr_db: f64,
    pub train: squint_core::gnn::TrainConfig,
}
