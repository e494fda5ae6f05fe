//! Reference designers: the fully digital water-filling upper bound, the
//! alternating manifold-optimization (AMO) hybrid designer, and the
//! center-frequency array-vector heuristic (AV-single).
//!
//! Fully digital precoding ignores the hardware split and upper-bounds every
//! hybrid scheme. AMO approximates the digital optimum with a unit-modulus
//! analog matrix times per-subcarrier digital matrices by alternating a
//! least-squares digital fit with Riemannian descent over the analog phases.
//! AV-single points its analog columns straight at the strongest rays using
//! the *center* wavelength only, which is exactly why it degrades once the
//! fractional bandwidth grows.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{array_response, ChannelRealization, SystemConfig};
use crate::linalg::{Complex64, ComplexMatrix};
use crate::system::{
    project_power, spectral_efficiency_digital, HybridBeamformer, LinkBudget,
};
use crate::{Error, Result, SPEED_OF_LIGHT};

/// Ridge added to the analog Gram matrix when its Cholesky factorization
/// fails during the AMO digital step.
const LS_RIDGE: f64 = 1e-10;

/// Hermitian-deviation tolerance for the small Gram factorizations here.
const HERM_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Water-filling
// ---------------------------------------------------------------------------

/// Split `budget` across parallel channels with the given power gains so
/// that `Σ log(1 + pᵢ·gᵢ)` is maximal: `pᵢ = max(0, μ − 1/gᵢ)` with the
/// water level `μ` found by bisection. Zero gains receive nothing; the
/// returned powers sum to the budget exactly up to rounding.
pub fn water_filling(gains: &[f64], budget: f64) -> Result<Vec<f64>> {
    if gains.is_empty() {
        return Err(Error::Config("water-filling over an empty gain set".into()));
    }
    if !(budget.is_finite() && budget > 0.0) {
        return Err(Error::Config(format!("water-filling budget must be positive, got {budget}")));
    }
    if gains.iter().any(|g| !g.is_finite() || *g < 0.0) {
        return Err(Error::Config(format!(
            "gains must be finite and non-negative, got {gains:?}"
        )));
    }
    let g_max = gains.iter().cloned().fold(0.0f64, f64::max);
    if g_max <= 0.0 {
        return Err(Error::Degenerate("no positive gain to allocate power to".into()));
    }
    let fill = |level: f64| -> f64 {
        gains.iter().filter(|g| **g > 0.0).map(|g| (level - 1.0 / g).max(0.0)).sum()
    };
    // The strongest mode alone absorbs the budget at this level, so the
    // root lies inside [0, hi].
    let mut lo = 0.0f64;
    let mut hi = budget + 1.0 / g_max;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if fill(mid) < budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let level = 0.5 * (lo + hi);
    let mut powers: Vec<f64> = gains
        .iter()
        .map(|g| if *g > 0.0 { (level - 1.0 / g).max(0.0) } else { 0.0 })
        .collect();
    let total: f64 = powers.iter().sum();
    for p in &mut powers {
        *p *= budget / total;
    }
    Ok(powers)
}

/// `v · diag(√powers)`, column by column.
fn scaled_columns(v: &ComplexMatrix, powers: &[f64]) -> ComplexMatrix {
    ComplexMatrix::from_fn(v.rows(), powers.len(), |i, j| v.get(i, j) * powers[j].sqrt())
}

/// The first `cols` canonical basis vectors as columns.
fn canonical_columns(rows: usize, cols: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |i, j| {
        if i == j {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

// ---------------------------------------------------------------------------
// Fully digital upper bound
// ---------------------------------------------------------------------------

/// Unconstrained per-subcarrier precoders plus the rate they achieve.
#[derive(Clone, Debug)]
pub struct DigitalDesign {
    /// One `n_tx × n_streams` precoder per subcarrier, unit Frobenius norm.
    pub precoders: Vec<ComplexMatrix>,
    /// Spectral efficiency of those precoders in bits/s/Hz.
    pub se: f64,
}

/// Optimal unconstrained design: per subcarrier, beamform along the top
/// right singular vectors of the channel and water-fill the power over the
/// corresponding eigen-modes.
pub fn fully_digital(
    channel: &ChannelRealization,
    n_streams: usize,
    budget: LinkBudget,
) -> Result<DigitalDesign> {
    let h0 = channel.subcarrier(0);
    let (n_rx, n_tx) = (h0.rows(), h0.cols());
    if n_streams == 0 || n_streams > n_rx.min(n_tx) {
        return Err(Error::Config(format!(
            "n_streams must lie in 1..=min(n_rx={n_rx}, n_tx={n_tx}), got {n_streams}"
        )));
    }
    let rho = budget.power_ratio();
    let mut precoders = Vec::with_capacity(channel.n_subcarriers());
    for h in channel.subcarriers() {
        let (sigma, v) = h.top_right_singular(n_streams)?;
        let f = if sigma[0] > 0.0 {
            let gains: Vec<f64> = sigma.iter().map(|s| rho * s * s).collect();
            let powers = water_filling(&gains, 1.0)?;
            scaled_columns(&v, &powers)
        } else {
            // A silent subcarrier carries no information; any unit-power
            // precoder attains the zero rate.
            canonical_columns(n_tx, n_streams).scale(1.0 / (n_streams as f64).sqrt())
        };
        precoders.push(f);
    }
    let se = spectral_efficiency_digital(channel, &precoders, budget)?;
    Ok(DigitalDesign { precoders, se })
}

// ---------------------------------------------------------------------------
// AV-single
// ---------------------------------------------------------------------------

/// Hybrid design that steers each analog column at one of the strongest
/// rays using the center-frequency wavelength only.
///
/// The analog columns are phase-only transmit array responses (scaled to
/// unit modulus) of the `n_rf` rays with the largest gain magnitudes, ties
/// broken by ray index. Per subcarrier the digital precoder eigen-beamforms
/// the effective channel `H[k]·F_RF` with water-filled powers, then takes a
/// final power normalization. Because the steering ignores every wavelength
/// but the center one, the design loses rate as the fractional bandwidth
/// grows — it is the squint-sensitive reference.
pub fn av_single(
    cfg: &SystemConfig,
    channel: &ChannelRealization,
    budget: LinkBudget,
) -> Result<HybridBeamformer> {
    cfg.validate()?;
    channel.matches_config(cfg)?;
    let rays = channel.rays();
    if cfg.n_rf > rays.len() {
        return Err(Error::Config(format!(
            "{} RF chains but only {} rays to steer at",
            cfg.n_rf,
            rays.len()
        )));
    }

    let mut order: Vec<usize> = (0..rays.len()).collect();
    order.sort_by(|&a, &b| {
        rays[b]
            .gain
            .norm()
            .partial_cmp(&rays[a].gain.norm())
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });

    let lambda_center = SPEED_OF_LIGHT / cfg.carrier_hz;
    let unit_scale = (cfg.n_tx() as f64).sqrt();
    let mut analog = ComplexMatrix::zeros(cfg.n_tx(), cfg.n_rf);
    for (col, &ray) in order.iter().take(cfg.n_rf).enumerate() {
        let a = &rays[ray].angles;
        let steering = array_response(
            cfg.tx_array,
            cfg.spacing_m,
            lambda_center,
            a.aod_azimuth,
            a.aod_elevation,
        )
        .scale(unit_scale);
        for row in 0..cfg.n_tx() {
            analog.set(row, col, steering.get(row, 0));
        }
    }

    let rho = budget.power_ratio();
    let mut digital = Vec::with_capacity(channel.n_subcarriers());
    for h in channel.subcarriers() {
        let effective = h.matmul(&analog)?;
        let (sigma, v) = effective.top_right_singular(cfg.n_streams)?;
        let c = if sigma[0] > 0.0 {
            let gains: Vec<f64> = sigma.iter().map(|s| rho * s * s).collect();
            let powers = water_filling(&gains, 1.0)?;
            scaled_columns(&v, &powers)
        } else {
            canonical_columns(cfg.n_rf, cfg.n_streams)
        };
        digital.push(project_power(&analog, &c)?);
    }
    Ok(HybridBeamformer { analog, digital })
}

// ---------------------------------------------------------------------------
// Alternating manifold optimization
// ---------------------------------------------------------------------------

/// Knobs of the AMO designer.
#[derive(Clone, Copy, Debug)]
pub struct AmoConfig {
    /// Outer alternations between the digital fit and the analog descent.
    pub max_outer: usize,
    /// Riemannian descent steps per analog phase.
    pub max_inner: usize,
    pub initial_step: f64,
    /// Armijo backtracking ratio, strictly inside (0, 1).
    pub contraction: f64,
    /// Armijo sufficient-decrease coefficient.
    pub sufficient_decrease: f64,
    /// Stop the descent when the tangent gradient norm falls below this.
    pub grad_tol: f64,
    /// Stop alternating when the objective improves by less than this.
    pub objective_tol: f64,
}

impl Default for AmoConfig {
    fn default() -> Self {
        AmoConfig {
            max_outer: 100,
            max_inner: 50,
            initial_step: 1.0,
            contraction: 0.5,
            sufficient_decrease: 1e-4,
            grad_tol: 1e-6,
            objective_tol: 1e-6,
        }
    }
}

impl AmoConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_outer >= 1
            && self.max_inner >= 1
            && self.initial_step.is_finite()
            && self.initial_step > 0.0
            && self.contraction > 0.0
            && self.contraction < 1.0
            && self.sufficient_decrease.is_finite()
            && self.sufficient_decrease > 0.0
            && self.grad_tol.is_finite()
            && self.grad_tol > 0.0
            && self.objective_tol.is_finite()
            && self.objective_tol > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid AMO parameters: {self:?}")))
        }
    }
}

/// AMO output: the hybrid beamformer plus the objective values that drove
/// the alternation.
#[derive(Clone, Debug)]
pub struct AmoResult {
    pub beamformer: HybridBeamformer,
    /// `Σ_k ‖target[k] − F_RF·F_BB[k]‖_F²` after each outer alternation;
    /// entry 0 is the value right after the initial digital fit. The
    /// sequence is non-increasing by construction.
    pub objective_trace: Vec<f64>,
}

/// Entrywise projection onto the unit circle. Entries already within a few
/// ulps of unit modulus are returned untouched, which makes the projection
/// exactly idempotent bit for bit; everything else is divided by its
/// modulus.
pub fn retract_unit_modulus(m: &ComplexMatrix) -> ComplexMatrix {
    let mut out = m.clone();
    let (re, im) = out.parts_mut();
    for i in 0..re.len() {
        let n2 = re[i] * re[i] + im[i] * im[i];
        if (n2 - 1.0).abs() <= 16.0 * f64::EPSILON {
            continue;
        }
        let inv = 1.0 / n2.sqrt();
        re[i] *= inv;
        im[i] *= inv;
    }
    out
}

/// `Σ_k ‖target[k] − analog·digital[k]‖_F²`.
fn frob_objective(
    analog: &ComplexMatrix,
    digital: &[ComplexMatrix],
    targets: &[ComplexMatrix],
) -> Result<f64> {
    let mut sum = 0.0;
    for (t, d) in targets.iter().zip(digital) {
        sum += t.sub(&analog.matmul(d)?)?.frob_norm_sq();
    }
    Ok(sum)
}

/// Euclidean gradient of the Frobenius objective in the analog matrix:
/// `−2·Σ_k (target[k] − analog·digital[k])·digital[k]ᴴ`.
fn euclidean_gradient(
    analog: &ComplexMatrix,
    digital: &[ComplexMatrix],
    targets: &[ComplexMatrix],
) -> Result<ComplexMatrix> {
    let mut grad = ComplexMatrix::zeros(analog.rows(), analog.cols());
    for (t, d) in targets.iter().zip(digital) {
        let residual = t.sub(&analog.matmul(d)?)?;
        grad = grad.sub(&residual.matmul(&d.adjoint())?.scale(2.0))?;
    }
    Ok(grad)
}

/// Project a Euclidean gradient onto the tangent space of the unit-modulus
/// manifold at `analog`: `T = G − Re{G ∘ conj(analog)} ∘ analog`.
fn tangent_project(grad: &ComplexMatrix, analog: &ComplexMatrix) -> ComplexMatrix {
    let mut t = grad.clone();
    let (a_re, a_im) = (analog.re().data(), analog.im().data());
    let (t_re, t_im) = t.parts_mut();
    for i in 0..t_re.len() {
        let radial = t_re[i] * a_re[i] + t_im[i] * a_im[i];
        t_re[i] -= radial * a_re[i];
        t_im[i] -= radial * a_im[i];
    }
    t
}

/// Least-squares digital fit `(F_RFᴴF_RF)⁻¹·F_RFᴴ·target[k]` for every
/// subcarrier, with a ridge fallback when the Gram matrix is numerically
/// singular.
fn ls_digital(analog: &ComplexMatrix, targets: &[ComplexMatrix]) -> Result<Vec<ComplexMatrix>> {
    let adjoint = analog.adjoint();
    let gram = adjoint.matmul(analog)?;
    let factor = match gram.cholesky(HERM_TOL) {
        Ok(f) => f,
        Err(_) => {
            log::warn!(
                "analog Gram matrix is numerically singular; solving with ridge {LS_RIDGE:e}"
            );
            gram.add(&ComplexMatrix::identity(gram.rows()).scale(LS_RIDGE))?.cholesky(HERM_TOL)?
        }
    };
    targets.iter().map(|t| factor.solve(&adjoint.matmul(t)?)).collect()
}

/// Armijo-backtracked Riemannian descent of the Frobenius objective over
/// the unit-modulus analog entries, digital matrices held fixed.
fn riemannian_descent(
    mut analog: ComplexMatrix,
    digital: &[ComplexMatrix],
    targets: &[ComplexMatrix],
    amo: &AmoConfig,
) -> Result<ComplexMatrix> {
    for _ in 0..amo.max_inner {
        let objective = frob_objective(&analog, digital, targets)?;
        let grad = euclidean_gradient(&analog, digital, targets)?;
        let tangent = tangent_project(&grad, &analog);
        let tangent_norm_sq = tangent.frob_norm_sq();
        if tangent_norm_sq.sqrt() <= amo.grad_tol {
            break;
        }
        let mut step = amo.initial_step;
        let mut moved = false;
        for _ in 0..60 {
            let candidate = retract_unit_modulus(&analog.sub(&tangent.scale(step))?);
            let value = frob_objective(&candidate, digital, targets)?;
            if value <= objective - amo.sufficient_decrease * step * tangent_norm_sq {
                analog = candidate;
                moved = true;
                break;
            }
            step *= amo.contraction;
        }
        if !moved {
            break;
        }
    }
    Ok(analog)
}

/// Factor per-subcarrier target precoders into one unit-modulus analog
/// matrix times per-subcarrier digital matrices, starting the analog
/// descent from `analog_init`.
///
/// Alternates an exact least-squares digital fit with Riemannian descent on
/// the analog phases until the objective improvement drops below the
/// tolerance or `max_outer` alternations have run; both half-steps can only
/// lower the objective. The returned digital matrices carry a final power
/// normalization so the beamformer meets the unit-power budget.
pub fn amo_factorize(
    targets: &[ComplexMatrix],
    amo: &AmoConfig,
    analog_init: ComplexMatrix,
) -> Result<AmoResult> {
    amo.validate()?;
    let Some(first) = targets.first() else {
        return Err(Error::Config("AMO needs at least one target precoder".into()));
    };
    let (n_tx, n_streams) = (first.rows(), first.cols());
    for t in targets {
        if t.rows() != n_tx || t.cols() != n_streams {
            return Err(Error::dim(
                "amo_factorize",
                format!("{}x{} target among {n_tx}x{n_streams} targets", t.rows(), t.cols()),
            ));
        }
        if !t.is_all_finite() {
            return Err(Error::Numerical("non-finite target precoder entry".into()));
        }
    }
    if analog_init.rows() != n_tx {
        return Err(Error::dim(
            "amo_factorize",
            format!("analog init has {} rows for {n_tx}-antenna targets", analog_init.rows()),
        ));
    }
    let mut analog = retract_unit_modulus(&analog_init);
    if !analog.is_all_finite() {
        return Err(Error::Contract(
            "analog initializer has a zero or non-finite entry".into(),
        ));
    }

    let mut digital = ls_digital(&analog, targets)?;
    let mut trace = vec![frob_objective(&analog, &digital, targets)?];
    for _ in 0..amo.max_outer {
        analog = riemannian_descent(analog, &digital, targets, amo)?;
        digital = ls_digital(&analog, targets)?;
        let objective = frob_objective(&analog, &digital, targets)?;
        let previous = *trace.last().expect("trace starts non-empty");
        trace.push(objective);
        if previous - objective < amo.objective_tol {
            break;
        }
    }

    let normalized = digital
        .iter()
        .map(|d| project_power(&analog, d))
        .collect::<Result<Vec<_>>>()?;
    Ok(AmoResult {
        beamformer: HybridBeamformer { analog, digital: normalized },
        objective_trace: trace,
    })
}

/// Full AMO designer: compute the fully digital per-subcarrier optima, then
/// factor them into a hybrid beamformer starting from seeded random analog
/// phases (uniform on [0, 2π)).
pub fn amo_design(
    channel: &ChannelRealization,
    n_rf: usize,
    n_streams: usize,
    amo: &AmoConfig,
    budget: LinkBudget,
    seed: u64,
) -> Result<AmoResult> {
    let n_tx = channel.subcarrier(0).cols();
    if n_rf == 0 || n_rf > n_tx || n_streams > n_rf {
        return Err(Error::Config(format!(
            "need n_streams <= n_rf <= n_tx, got {n_streams} / {n_rf} / {n_tx}"
        )));
    }
    let targets = fully_digital(channel, n_streams, budget)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = ComplexMatrix::from_fn(n_tx, n_rf, |_, _| {
        Complex64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU)
    });
    amo_factorize(&targets.precoders, amo, init)
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_channel, ArrayGeometry, Ray, RayAngles};
    use crate::system::{spectral_efficiency, validate_beamformer};

    fn small_config() -> SystemConfig {
        SystemConfig::new(
            ArrayGeometry::new(2, 2),
            ArrayGeometry::new(2, 1),
            2,
            2,
            3,
            300e9,
            30e9,
        )
        .unwrap()
    }

    fn random_complex(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> ComplexMatrix {
        ComplexMatrix::from_fn(rows, cols, |_, _| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        })
    }

    fn random_phases(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> ComplexMatrix {
        ComplexMatrix::from_fn(rows, cols, |_, _| {
            Complex64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU)
        })
    }

    // 1. two-mode water-filling against the closed form, plus the edge
    //    where the weak mode stays dry
    #[test]
    fn water_filling_matches_closed_form() {
        // both modes active: μ = (1 + 1/2 + 1/1)/2, p = μ − 1/g
        let p = water_filling(&[2.0, 1.0], 1.0).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-9, "{p:?}");
        assert!((p[1] - 0.25).abs() < 1e-9, "{p:?}");
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        // the weak mode's 1/g exceeds any feasible level
        let p = water_filling(&[2.0, 0.01], 1.0).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12, "{p:?}");
        assert_eq!(p[1], 0.0);

        // high gains: nearly equal split, difference 1/g₂ − 1/g₁
        let p = water_filling(&[2000.0, 1000.0], 1.0).unwrap();
        assert!(((p[0] - p[1]) - (1e-3 - 5e-4)).abs() < 1e-12, "{p:?}");

        // zero gains receive nothing
        let p = water_filling(&[1.0, 0.0], 1.0).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert_eq!(p[1], 0.0);

        assert!(matches!(water_filling(&[0.0, 0.0], 1.0), Err(Error::Degenerate(_))));
        assert!(matches!(water_filling(&[], 1.0), Err(Error::Config(_))));
        assert!(matches!(water_filling(&[1.0], -1.0), Err(Error::Config(_))));
    }

    // 2. scalar channel: the digital optimum is log₂(1 + ρ|h|²)
    #[test]
    fn fully_digital_scalar_closed_form() {
        let mut cfg = small_config();
        cfg.tx_array = ArrayGeometry::new(1, 1);
        cfg.rx_array = ArrayGeometry::new(1, 1);
        cfg.n_rf = 1;
        cfg.n_streams = 1;
        cfg.n_clusters = 1;
        cfg.n_rays = 1;
        cfg.cluster_powers = vec![1.0];
        cfg.n_subcarriers = 1;
        let gain = Complex64::new(1.2, 0.9);
        let angles = RayAngles {
            aod_azimuth: 0.0,
            aod_elevation: 1.0,
            aoa_azimuth: 0.0,
            aoa_elevation: 1.0,
        };
        let channel =
            ChannelRealization::from_rays(&cfg, vec![Ray { gain, angles }]).unwrap();
        let budget = LinkBudget::new(7.0).unwrap();
        let design = fully_digital(&channel, 1, budget).unwrap();
        let want = (1.0 + budget.power_ratio() * gain.norm_sqr()).log2();
        assert!((design.se - want).abs() < 1e-9, "{} vs {want}", design.se);
    }

    // 3. diagonal two-mode channel against the closed-form allocation
    #[test]
    fn fully_digital_diagonal_closed_form() {
        let h = ComplexMatrix::from_fn(2, 2, |i, j| {
            if i == j {
                Complex64::new(if i == 0 { 2.0 } else { 1.0 }, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let channel = ChannelRealization::from_matrices(vec![h]).unwrap();
        let budget = LinkBudget::new(30.0).unwrap();
        let rho = budget.power_ratio();
        let design = fully_digital(&channel, 2, budget).unwrap();

        let (g1, g2) = (rho * 4.0, rho * 1.0);
        let level = (1.0 + 1.0 / g1 + 1.0 / g2) / 2.0;
        let want = (1.0 + (level - 1.0 / g1) * g1).log2() + (1.0 + (level - 1.0 / g2) * g2).log2();
        assert!((design.se - want).abs() < 1e-9, "{} vs {want}", design.se);
    }

    // 4. hybrid designs never beat the digital bound, and both pass the
    //    constraint check
    #[test]
    fn hybrid_designs_respect_digital_bound() {
        let cfg = small_config();
        let budget = LinkBudget::new(0.0).unwrap();
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let channel = generate_channel(&cfg, &mut rng).unwrap();
            let digital = fully_digital(&channel, cfg.n_streams, budget).unwrap();

            let av = av_single(&cfg, &channel, budget).unwrap();
            assert!(validate_beamformer(&av, 1e-9).unwrap().passes());
            let av_se = spectral_efficiency(&channel, &av, budget).unwrap();
            assert!(av_se <= digital.se + 1e-9, "AV {av_se} vs digital {}", digital.se);

            let amo = amo_design(&channel, cfg.n_rf, cfg.n_streams, &AmoConfig::default(), budget, seed)
                .unwrap();
            assert!(validate_beamformer(&amo.beamformer, 1e-9).unwrap().passes());
            let amo_se = spectral_efficiency(&channel, &amo.beamformer, budget).unwrap();
            assert!(amo_se <= digital.se + 1e-9, "AMO {amo_se} vs digital {}", digital.se);
        }
    }

    // 5. AV-single picks the strongest rays, ties by index
    #[test]
    fn av_single_steers_at_strongest_rays() {
        let mut cfg = small_config();
        cfg.n_subcarriers = 1;
        cfg.bandwidth_hz = 0.0;
        let magnitudes = [0.1, 2.0, 0.5, 1.0];
        let rays: Vec<Ray> = magnitudes
            .iter()
            .enumerate()
            .map(|(i, &m)| Ray {
                gain: Complex64::new(m, 0.0),
                angles: RayAngles {
                    aod_azimuth: 0.3 * i as f64,
                    aod_elevation: 0.5 + 0.2 * i as f64,
                    aoa_azimuth: -0.4 * i as f64,
                    aoa_elevation: 1.0 + 0.1 * i as f64,
                },
            })
            .collect();
        let channel = ChannelRealization::from_rays(&cfg, rays.clone()).unwrap();
        let bf = av_single(&cfg, &channel, LinkBudget::new(0.0).unwrap()).unwrap();

        let lambda = SPEED_OF_LIGHT / cfg.carrier_hz;
        let scale = (cfg.n_tx() as f64).sqrt();
        // strongest first: ray 1 (|2.0|) then ray 3 (|1.0|)
        for (col, ray_idx) in [1usize, 3usize].iter().enumerate() {
            let a = &rays[*ray_idx].angles;
            let want =
                array_response(cfg.tx_array, cfg.spacing_m, lambda, a.aod_azimuth, a.aod_elevation)
                    .scale(scale);
            for row in 0..cfg.n_tx() {
                assert!(
                    (bf.analog.get(row, col) - want.get(row, 0)).norm() < 1e-12,
                    "column {col} row {row}"
                );
            }
        }

        // equal gains fall back to ray order
        let tied: Vec<Ray> = rays
            .iter()
            .map(|r| Ray { gain: Complex64::new(0.0, 1.0), angles: r.angles })
            .collect();
        let channel = ChannelRealization::from_rays(&cfg, tied.clone()).unwrap();
        let bf = av_single(&cfg, &channel, LinkBudget::new(0.0).unwrap()).unwrap();
        for (col, ray_idx) in [0usize, 1usize].iter().enumerate() {
            let a = &tied[*ray_idx].angles;
            let want =
                array_response(cfg.tx_array, cfg.spacing_m, lambda, a.aod_azimuth, a.aod_elevation)
                    .scale(scale);
            for row in 0..cfg.n_tx() {
                assert!((bf.analog.get(row, col) - want.get(row, 0)).norm() < 1e-12);
            }
        }
    }

    // 6. more RF chains than rays is a configuration error
    #[test]
    fn av_single_rejects_too_few_rays() {
        let mut cfg = small_config();
        cfg.tx_array = ArrayGeometry::new(4, 2);
        cfg.n_rf = 5;
        cfg.n_streams = 1;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let channel = generate_channel(&cfg, &mut rng).unwrap();
        assert!(matches!(
            av_single(&cfg, &channel, LinkBudget::new(0.0).unwrap()),
            Err(Error::Config(_))
        ));
    }

    // 7. on a single-ray channel, center-frequency steering is optimal
    #[test]
    fn av_single_matches_digital_on_one_ray() {
        let mut cfg = small_config();
        cfg.n_rf = 1;
        cfg.n_streams = 1;
        cfg.n_clusters = 1;
        cfg.n_rays = 1;
        cfg.cluster_powers = vec![1.0];
        cfg.n_subcarriers = 1;
        cfg.bandwidth_hz = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let channel = generate_channel(&cfg, &mut rng).unwrap();
        let budget = LinkBudget::new(5.0).unwrap();
        let digital = fully_digital(&channel, 1, budget).unwrap();
        let bf = av_single(&cfg, &channel, budget).unwrap();
        let se = spectral_efficiency(&channel, &bf, budget).unwrap();
        assert!((se - digital.se).abs() < 1e-6, "{se} vs {}", digital.se);
    }

    // 8. the AMO objective never increases across outer alternations
    #[test]
    fn amo_objective_trace_is_monotone() {
        let cfg = small_config();
        let budget = LinkBudget::new(0.0).unwrap();
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let channel = generate_channel(&cfg, &mut rng).unwrap();
            let result =
                amo_design(&channel, cfg.n_rf, cfg.n_streams, &AmoConfig::default(), budget, seed)
                    .unwrap();
            assert!(result.objective_trace.len() >= 2);
            for pair in result.objective_trace.windows(2) {
                assert!(
                    pair[1] <= pair[0] + 1e-12,
                    "objective rose from {} to {}",
                    pair[0],
                    pair[1]
                );
            }
        }
    }

    // 9. factorizable targets are a fixed point: zero residual, cascades
    //    reproduce the targets
    #[test]
    fn amo_recovers_factorizable_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (n_tx, n_rf, n_streams, k) = (8, 3, 2, 4);
        let anchor = random_phases(&mut rng, n_tx, n_rf);
        let targets: Vec<ComplexMatrix> = (0..k)
            .map(|_| {
                let b = random_complex(&mut rng, n_rf, n_streams);
                let d = project_power(&anchor, &b).unwrap();
                anchor.matmul(&d).unwrap()
            })
            .collect();

        let result = amo_factorize(&targets, &AmoConfig::default(), anchor.clone()).unwrap();
        assert!(result.objective_trace[0] < 1e-12, "{:?}", result.objective_trace);
        assert!(*result.objective_trace.last().unwrap() < 1e-12);
        for (t, d) in targets.iter().zip(&result.beamformer.digital) {
            let cascade = result.beamformer.analog.matmul(d).unwrap();
            for i in 0..n_tx {
                for j in 0..n_streams {
                    assert!((cascade.get(i, j) - t.get(i, j)).norm() < 1e-9);
                }
            }
        }
    }

    // 10. the retraction is exactly idempotent and lands on unit modulus
    #[test]
    fn retraction_is_bitwise_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let x = ComplexMatrix::from_fn(5, 4, |_, _| {
                Complex64::new(
                    (rng.random::<f64>() - 0.5) * 10.0,
                    (rng.random::<f64>() - 0.5) * 10.0,
                )
            });
            let once = retract_unit_modulus(&x);
            for i in 0..5 {
                for j in 0..4 {
                    assert!((once.get(i, j).norm() - 1.0).abs() < 1e-12);
                }
            }
            let twice = retract_unit_modulus(&once);
            assert_eq!(once, twice);
        }
    }

    // 11. stream counts beyond the channel rank bound are rejected
    #[test]
    fn fully_digital_rejects_excess_streams() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let channel = generate_channel(&cfg, &mut rng).unwrap();
        // n_rx = 2, so three streams cannot fit
        assert!(matches!(
            fully_digital(&channel, 3, LinkBudget::new(0.0).unwrap()),
            Err(Error::Config(_))
        ));
    }

    // 12. a zero channel still yields a valid unit-power design at zero rate
    #[test]
    fn fully_digital_handles_silent_channel() {
        let h = ComplexMatrix::zeros(2, 4);
        let channel = ChannelRealization::from_matrices(vec![h]).unwrap();
        let design = fully_digital(&channel, 2, LinkBudget::new(10.0).unwrap()).unwrap();
        assert_eq!(design.se, 0.0);
        assert!((design.precoders[0].frob_norm() - 1.0).abs() < 1e-12);
    }
}
