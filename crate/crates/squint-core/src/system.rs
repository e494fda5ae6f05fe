//! Beamformer domain types, constraint checks, and the spectral-efficiency
//! objective — the one quantity every designer in this crate optimizes or is
//! judged by.
//!
//! A hybrid beamformer is an analog phase-shifter matrix shared by all
//! subcarriers plus one digital precoder per subcarrier, subject to the
//! unit-modulus constraint on the analog entries and a unit transmit-power
//! budget per subcarrier. The objective is the subcarrier-averaged log-det
//! rate; [`trace_negative_se`] appends the same quantity (negated, as a
//! training loss) to an autodiff tape.

use crate::autodiff::{NodeId, Tape};
use crate::channel::ChannelRealization;
use crate::linalg::ComplexMatrix;
use crate::{Error, Result};

/// Default tolerance for the beamformer constraints; designer outputs are
/// expected to satisfy them far more tightly than this.
pub const CONSTRAINT_TOL: f64 = 1e-9;

/// Hermitian-deviation tolerance accepted when factorizing the Gram form.
const GRAM_HERM_TOL: f64 = 1e-9;

/// Cascades with Frobenius norm at or below this cannot be normalized.
const POWER_EPS: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Analog phase-shifter matrix plus per-subcarrier digital precoders.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridBeamformer {
    /// `n_tx × n_rf`, every entry of unit modulus.
    pub analog: ComplexMatrix,
    /// One `n_rf × n_streams` precoder per subcarrier, each scaled so the
    /// cascade `analog · digital[k]` has unit Frobenius norm.
    pub digital: Vec<ComplexMatrix>,
}

impl HybridBeamformer {
    pub fn n_tx(&self) -> usize {
        self.analog.rows()
    }

    pub fn n_rf(&self) -> usize {
        self.analog.cols()
    }

    pub fn n_subcarriers(&self) -> usize {
        self.digital.len()
    }
}

/// Transmit SNR; noise power is fixed to one, so the linear power ratio is
/// `10^(snr_db/10)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkBudget {
    snr_db: f64,
}

impl LinkBudget {
    pub fn new(snr_db: f64) -> Result<Self> {
        if !snr_db.is_finite() {
            return Err(Error::Config(format!("SNR must be finite, got {snr_db} dB")));
        }
        Ok(LinkBudget { snr_db })
    }

    pub fn snr_db(&self) -> f64 {
        self.snr_db
    }

    /// Linear transmit power over unit noise power.
    pub fn power_ratio(&self) -> f64 {
        10f64.powf(self.snr_db / 10.0)
    }
}

// ---------------------------------------------------------------------------
// Constraints
// ---------------------------------------------------------------------------

/// Worst-case deviations from the two beamformer constraints.
#[derive(Clone, Copy, Debug)]
pub struct ConstraintReport {
    /// `max |  |analog entry| − 1  |` over all entries.
    pub worst_modulus_error: f64,
    /// `max |  ‖analog·digital[k]‖_F − 1  |` over all subcarriers.
    pub worst_power_error: f64,
    pub tol: f64,
}

impl ConstraintReport {
    pub fn passes(&self) -> bool {
        // NaN deviations must fail, so compare through <=.
        self.worst_modulus_error <= self.tol && self.worst_power_error <= self.tol
    }
}

/// Measure how far a beamformer strays from unit-modulus analog entries and
/// unit per-subcarrier transmit power.
pub fn validate_beamformer(bf: &HybridBeamformer, tol: f64) -> Result<ConstraintReport> {
    let mut worst_modulus = 0.0f64;
    for (re, im) in bf.analog.re().data().iter().zip(bf.analog.im().data()) {
        let dev = (re * re + im * im).sqrt() - 1.0;
        worst_modulus = worst_modulus.max(dev.abs());
        if !dev.is_finite() {
            worst_modulus = f64::NAN;
            break;
        }
    }
    let mut worst_power = 0.0f64;
    for d in &bf.digital {
        let norm = bf.analog.matmul(d)?.frob_norm();
        let dev = (norm - 1.0).abs();
        if !dev.is_finite() {
            worst_power = f64::NAN;
            break;
        }
        worst_power = worst_power.max(dev);
    }
    Ok(ConstraintReport { worst_modulus_error: worst_modulus, worst_power_error: worst_power, tol })
}

/// Scale a digital precoder so the cascade `analog · digital` has unit
/// Frobenius norm. The analog matrix is untouched; only the returned digital
/// matrix absorbs the normalization.
pub fn project_power(analog: &ComplexMatrix, digital: &ComplexMatrix) -> Result<ComplexMatrix> {
    let norm = analog.matmul(digital)?.frob_norm();
    if !norm.is_finite() || norm <= POWER_EPS {
        return Err(Error::Degenerate(format!(
            "cascade norm {norm} is too small to normalize against"
        )));
    }
    Ok(digital.scale(1.0 / norm))
}

// ---------------------------------------------------------------------------
// Spectral efficiency
// ---------------------------------------------------------------------------

/// Average `log₂ det(I + ρ·G[k]·G[k]ᴴ)` over subcarriers for the effective
/// per-subcarrier transmit matrices `G[k] = H[k]·F[k]`.
fn mean_logdet_rate(
    channel: &ChannelRealization,
    effective: &[ComplexMatrix],
    rho: f64,
) -> Result<f64> {
    let k_count = channel.n_subcarriers();
    let mut sum = 0.0;
    for (h, f) in channel.subcarriers().iter().zip(effective) {
        let g = h.matmul(f)?;
        let gram = g.matmul(&g.adjoint())?.scale(rho).add_identity()?;
        sum += gram.cholesky(GRAM_HERM_TOL)?.log_det();
    }
    Ok(sum / (k_count as f64 * std::f64::consts::LN_2))
}

/// Subcarrier-averaged spectral efficiency of a hybrid beamformer, in
/// bits/s/Hz.
///
/// The beamformer must satisfy its constraints within [`CONSTRAINT_TOL`];
/// rates of constraint-violating precoders would not be comparable across
/// designers.
pub fn spectral_efficiency(
    channel: &ChannelRealization,
    bf: &HybridBeamformer,
    budget: LinkBudget,
) -> Result<f64> {
    if bf.digital.len() != channel.n_subcarriers() {
        return Err(Error::dim(
            "spectral_efficiency",
            format!(
                "{} digital precoders for {} subcarriers",
                bf.digital.len(),
                channel.n_subcarriers()
            ),
        ));
    }
    let report = validate_beamformer(bf, CONSTRAINT_TOL)?;
    if !report.passes() {
        return Err(Error::Contract(format!(
            "beamformer violates constraints: modulus error {:.3e}, power error {:.3e}",
            report.worst_modulus_error, report.worst_power_error
        )));
    }
    let effective: Vec<ComplexMatrix> = bf
        .digital
        .iter()
        .map(|d| bf.analog.matmul(d))
        .collect::<Result<_>>()?;
    mean_logdet_rate(channel, &effective, budget.power_ratio())
}

/// Spectral efficiency of unconstrained (fully digital) per-subcarrier
/// precoders, each of which must carry unit transmit power.
pub fn spectral_efficiency_digital(
    channel: &ChannelRealization,
    precoders: &[ComplexMatrix],
    budget: LinkBudget,
) -> Result<f64> {
    if precoders.len() != channel.n_subcarriers() {
        return Err(Error::dim(
            "spectral_efficiency_digital",
            format!("{} precoders for {} subcarriers", precoders.len(), channel.n_subcarriers()),
        ));
    }
    for f in precoders {
        let dev = (f.frob_norm() - 1.0).abs();
        if !(dev <= CONSTRAINT_TOL) {
            return Err(Error::Contract(format!("precoder power off budget by {dev:.3e}")));
        }
    }
    mean_logdet_rate(channel, precoders, budget.power_ratio())
}

// ---------------------------------------------------------------------------
// Traced objective
// ---------------------------------------------------------------------------

/// Append the negated spectral efficiency of traced precoders to a tape and
/// return the scalar loss node.
///
/// `analog` must hold a complex `n_tx × n_rf` value and `digital[k]` complex
/// `n_rf × n_streams` values; the channel matrices enter as constants. The
/// loss equals `−spectral_efficiency` of the same precoders, so minimizing
/// it maximizes the rate.
pub fn trace_negative_se(
    tape: &mut Tape,
    channel: &ChannelRealization,
    analog: NodeId,
    digital: &[NodeId],
    budget: LinkBudget,
) -> Result<NodeId> {
    if digital.len() != channel.n_subcarriers() {
        return Err(Error::dim(
            "trace_negative_se",
            format!(
                "{} digital nodes for {} subcarriers",
                digital.len(),
                channel.n_subcarriers()
            ),
        ));
    }
    let rho = budget.power_ratio();
    let mut logdets = Vec::with_capacity(digital.len());
    for (h, &d) in channel.subcarriers().iter().zip(digital) {
        let h_node = tape.constant_complex(h.clone());
        let eff = tape.matmul(analog, d)?;
        let g = tape.matmul(h_node, eff)?;
        let g_adj = tape.adjoint(g)?;
        let gram = tape.matmul(g, g_adj)?;
        let scaled = tape.scale_const(gram, rho);
        let m = tape.add_identity(scaled)?;
        logdets.push(tape.log_det_hpd(m)?);
    }
    let total = tape.add_n(&logdets)?;
    let scale = -1.0 / (digital.len() as f64 * std::f64::consts::LN_2);
    Ok(tape.scale_const(total, scale))
}

// ---------------------------------------------------------------------------
