//! Wideband clustered-ray channel generation for uniform planar arrays.
//!
//! A realization draws a handful of propagation rays (clustered in angle,
//! complex Gaussian gains) and evaluates the transmit/receive array response
//! at every subcarrier's own wavelength. The rays themselves are
//! frequency-flat; only the wavelength inside the array response changes per
//! subcarrier, which is exactly the beam-squint mechanism the designers have
//! to cope with at wide fractional bandwidths.
//!
//! Datasets of realizations are persisted in a little binary container (see
//! [`ChannelDataset::write`]) so training and evaluation can share corpora.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::linalg::{Complex64, ComplexMatrix};
use crate::{io, parallel, Error, Result, SPEED_OF_LIGHT};

const DATASET_MAGIC: [u8; 4] = *b"SQCH";
const DATASET_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Rectangular antenna grid of a uniform planar array.
///
/// `horizontal` counts elements along the azimuth-sensitive axis,
/// `vertical` along the axis whose phase depends on elevation alone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub horizontal: usize,
    pub vertical: usize,
}

impl ArrayGeometry {
    pub fn new(horizontal: usize, vertical: usize) -> Self {
        ArrayGeometry { horizontal, vertical }
    }

    pub fn elements(&self) -> usize {
        self.horizontal * self.vertical
    }
}

/// Every dimension and physical parameter of one link setup.
///
/// The same struct configures channel generation, the designers, and the
/// file formats, so a dataset or model file always carries its full context.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub tx_array: ArrayGeometry,
    pub rx_array: ArrayGeometry,
    /// Transmit RF chains; bounds the digital precoder's inner dimension.
    pub n_rf: usize,
    /// Spatial streams per subcarrier.
    pub n_streams: usize,
    pub n_subcarriers: usize,
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    /// Element spacing in meters, for both arrays.
    pub spacing_m: f64,
    pub n_clusters: usize,
    /// Rays per cluster.
    pub n_rays: usize,
    /// Laplacian scale of the per-ray angle offsets (radians).
    pub angular_spread_rad: f64,
    /// Average gain power per cluster; length must equal `n_clusters`.
    pub cluster_powers: Vec<f64>,
}

impl SystemConfig {
    /// Configuration with half-wavelength spacing at the carrier and the
    /// usual clustered-ray defaults: two clusters of two rays, 10° angular
    /// spread, unit cluster powers.
    pub fn new(
        tx_array: ArrayGeometry,
        rx_array: ArrayGeometry,
        n_rf: usize,
        n_streams: usize,
        n_subcarriers: usize,
        carrier_hz: f64,
        bandwidth_hz: f64,
    ) -> Result<Self> {
        let cfg = SystemConfig {
            tx_array,
            rx_array,
            n_rf,
            n_streams,
            n_subcarriers,
            carrier_hz,
            bandwidth_hz,
            spacing_m: SPEED_OF_LIGHT / (2.0 * carrier_hz),
            n_clusters: 2,
            n_rays: 2,
            angular_spread_rad: 10f64.to_radians(),
            cluster_powers: vec![1.0; 2],
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn n_tx(&self) -> usize {
        self.tx_array.elements()
    }

    pub fn n_rx(&self) -> usize {
        self.rx_array.elements()
    }

    /// Total ray count per realization.
    pub fn rays_total(&self) -> usize {
        self.n_clusters * self.n_rays
    }

    pub fn subcarrier_frequencies(&self) -> Vec<f64> {
        subcarrier_frequencies(self.carrier_hz, self.bandwidth_hz, self.n_subcarriers)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.tx_array.elements() == 0 || self.rx_array.elements() == 0 {
            return bad(format!(
                "array grids must be non-empty, got tx {:?} rx {:?}",
                self.tx_array, self.rx_array
            ));
        }
        if self.n_streams == 0 {
            return bad("at least one stream is required".into());
        }
        if self.n_streams > self.n_rf || self.n_rf > self.n_tx() {
            return bad(format!(
                "need n_streams <= n_rf <= n_tx, got {} / {} / {}",
                self.n_streams,
                self.n_rf,
                self.n_tx()
            ));
        }
        if self.n_subcarriers == 0 {
            return bad("at least one subcarrier is required".into());
        }
        if !(self.carrier_hz.is_finite() && self.carrier_hz > 0.0) {
            return bad(format!("carrier frequency must be positive, got {}", self.carrier_hz));
        }
        if !(self.bandwidth_hz.is_finite() && self.bandwidth_hz >= 0.0) {
            return bad(format!("bandwidth must be non-negative, got {}", self.bandwidth_hz));
        }
        if self.bandwidth_hz >= 2.0 * self.carrier_hz {
            return bad(format!(
                "bandwidth {} reaches non-positive frequencies around carrier {}",
                self.bandwidth_hz, self.carrier_hz
            ));
        }
        if !(self.spacing_m.is_finite() && self.spacing_m > 0.0) {
            return bad(format!("element spacing must be positive, got {}", self.spacing_m));
        }
        if self.n_clusters == 0 || self.n_rays == 0 {
            return bad("need at least one cluster and one ray per cluster".into());
        }
        if !(self.angular_spread_rad.is_finite() && self.angular_spread_rad >= 0.0) {
            return bad(format!(
                "angular spread must be non-negative, got {}",
                self.angular_spread_rad
            ));
        }
        if self.cluster_powers.len() != self.n_clusters {
            return bad(format!(
                "{} cluster powers for {} clusters",
                self.cluster_powers.len(),
                self.n_clusters
            ));
        }
        if self.cluster_powers.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return bad(format!("cluster powers must be positive, got {:?}", self.cluster_powers));
        }
        Ok(())
    }
}

/// The K tone frequencies `f_k = f_c − B/2 + (k − ½)·B/K`: symmetric about
/// the carrier, spaced `B/K`, with no tone exactly on a band edge.
pub fn subcarrier_frequencies(carrier_hz: f64, bandwidth_hz: f64, count: usize) -> Vec<f64> {
    let step = bandwidth_hz / count as f64;
    let start = carrier_hz - bandwidth_hz / 2.0;
    (0..count).map(|k| start + (k as f64 + 0.5) * step).collect()
}

// ---------------------------------------------------------------------------
// Array response
// ---------------------------------------------------------------------------

/// Unit-norm response of a planar array to a plane wave.
///
/// Entry for grid position `(p, q)` — `p` along the horizontal axis, `q`
/// along the vertical, stored at row `p·vertical + q` of the returned column
/// vector — is
///
/// ```text
/// (1/√(MN)) · exp(j · (2π/λ) · d · (p·sin φ·sin θ + q·cos θ))
/// ```
///
/// with azimuth `φ` and elevation `θ` measured from the vertical axis. The
/// wavelength is a parameter precisely so that wideband callers can evaluate
/// one physical array (fixed `d`) at each subcarrier's own `λ`.
pub fn array_response(
    geometry: ArrayGeometry,
    spacing_m: f64,
    wavelength_m: f64,
    azimuth: f64,
    elevation: f64,
) -> ComplexMatrix {
    let vertical = geometry.vertical;
    let count = geometry.elements();
    let norm = 1.0 / (count as f64).sqrt();
    let wave_number = std::f64::consts::TAU / wavelength_m * spacing_m;
    let horiz_term = azimuth.sin() * elevation.sin();
    let vert_term = elevation.cos();
    ComplexMatrix::from_fn(count, 1, |idx, _| {
        let p = (idx / vertical) as f64;
        let q = (idx % vertical) as f64;
        let phase = wave_number * (p * horiz_term + q * vert_term);
        Complex64::new(norm * phase.cos(), norm * phase.sin())
    })
}

// ---------------------------------------------------------------------------
// Ray sampling
// ---------------------------------------------------------------------------

/// Departure/arrival directions of one propagation ray, in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RayAngles {
    pub aod_azimuth: f64,
    pub aod_elevation: f64,
    pub aoa_azimuth: f64,
    pub aoa_elevation: f64,
}

/// One propagation ray: complex small-scale gain plus its four angles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub gain: Complex64,
    pub angles: RayAngles,
}

fn uniform_azimuth<R: Rng>(rng: &mut R) -> f64 {
    (rng.random::<f64>() - 0.5) * std::f64::consts::TAU
}

fn uniform_elevation<R: Rng>(rng: &mut R) -> f64 {
    rng.random::<f64>() * std::f64::consts::PI
}

/// Zero-mean Laplacian draw via the inverse CDF. The `max` guard keeps the
/// log argument positive when the uniform lands exactly on −½.
fn sample_laplace<R: Rng>(rng: &mut R, scale: f64) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    let u = rng.random::<f64>() - 0.5;
    let t = (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE);
    -scale * u.signum() * t.ln()
}

/// Draw `n_clusters · n_rays` ray directions, cluster-major.
///
/// Each cluster gets mean azimuths uniform on [−π, π) and mean elevations
/// uniform on [0, π); each ray offsets all four angles from its cluster mean
/// by independent Laplacian(0, `spread_rad`) draws. The RNG consumption
/// order is fixed — per cluster the four means (AoD azimuth, AoD elevation,
/// AoA azimuth, AoA elevation), then per ray the four offsets in the same
/// order — so seeded runs reproduce exactly. Offsets can push angles outside
/// the mean ranges; they are reported unwrapped since the array response is
/// periodic in them.
pub fn sample_ray_angles<R: Rng>(
    rng: &mut R,
    n_clusters: usize,
    n_rays: usize,
    spread_rad: f64,
) -> Vec<RayAngles> {
    let mut out = Vec::with_capacity(n_clusters * n_rays);
    for _ in 0..n_clusters {
        let mean = RayAngles {
            aod_azimuth: uniform_azimuth(rng),
            aod_elevation: uniform_elevation(rng),
            aoa_azimuth: uniform_azimuth(rng),
            aoa_elevation: uniform_elevation(rng),
        };
        for _ in 0..n_rays {
            out.push(RayAngles {
                aod_azimuth: mean.aod_azimuth + sample_laplace(rng, spread_rad),
                aod_elevation: mean.aod_elevation + sample_laplace(rng, spread_rad),
                aoa_azimuth: mean.aoa_azimuth + sample_laplace(rng, spread_rad),
                aoa_elevation: mean.aoa_elevation + sample_laplace(rng, spread_rad),
            });
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Channel realizations
// ---------------------------------------------------------------------------

/// `h += alpha · u · vᴴ` for column vectors `u` (rows of `h`) and `v`
/// (columns of `h`).
fn add_scaled_outer(h: &mut ComplexMatrix, alpha: Complex64, u: &ComplexMatrix, v: &ComplexMatrix) {
    let (rows, cols) = (h.rows(), h.cols());
    let (u_re, u_im) = (u.re().data(), u.im().data());
    let (v_re, v_im) = (v.re().data(), v.im().data());
    let (h_re, h_im) = h.parts_mut();
    for r in 0..rows {
        let left = alpha * Complex64::new(u_re[r], u_im[r]);
        for c in 0..cols {
            h_re[r * cols + c] += left.re * v_re[c] + left.im * v_im[c];
            h_im[r * cols + c] += left.im * v_re[c] - left.re * v_im[c];
        }
    }
}

/// One channel draw: the K per-subcarrier matrices plus the rays that
/// generated them.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    /// Per-subcarrier channel matrices, each `n_rx × n_tx`.
    subcarriers: Vec<ComplexMatrix>,
    /// Generating rays, cluster-major.
    rays: Vec<Ray>,
}

impl ChannelRealization {
    /// Assemble the per-subcarrier matrices from explicit rays.
    ///
    /// For subcarrier frequency `f_k` the wavelength `λ_k = c/f_k` enters
    /// both array responses; gains and angles are shared by all subcarriers,
    /// so the wavelength is the only frequency dependence. Each matrix is
    ///
    /// ```text
    /// H[k] = √(n_tx·n_rx / rays_total) · Σ gain · a_rx(λ_k) · a_tx(λ_k)ᴴ
    /// ```
    pub fn from_rays(cfg: &SystemConfig, rays: Vec<Ray>) -> Result<Self> {
        cfg.validate()?;
        if rays.len() != cfg.rays_total() {
            return Err(Error::dim(
                "ChannelRealization::from_rays",
                format!(
                    "{} rays for {} clusters x {} rays",
                    rays.len(),
                    cfg.n_clusters,
                    cfg.n_rays
                ),
            ));
        }
        for ray in &rays {
            let a = &ray.angles;
            let finite = ray.gain.re.is_finite()
                && ray.gain.im.is_finite()
                && a.aod_azimuth.is_finite()
                && a.aod_elevation.is_finite()
                && a.aoa_azimuth.is_finite()
                && a.aoa_elevation.is_finite();
            if !finite {
                return Err(Error::Numerical("non-finite ray gain or angle".into()));
            }
        }
        let (n_rx, n_tx) = (cfg.n_rx(), cfg.n_tx());
        let scale = ((n_tx * n_rx) as f64 / cfg.rays_total() as f64).sqrt();
        let mut subcarriers = Vec::with_capacity(cfg.n_subcarriers);
        for f_k in cfg.subcarrier_frequencies() {
            let wavelength = SPEED_OF_LIGHT / f_k;
            let mut h = ComplexMatrix::zeros(n_rx, n_tx);
            for ray in &rays {
                let a_rx = array_response(
                    cfg.rx_array,
                    cfg.spacing_m,
                    wavelength,
                    ray.angles.aoa_azimuth,
                    ray.angles.aoa_elevation,
                );
                let a_tx = array_response(
                    cfg.tx_array,
                    cfg.spacing_m,
                    wavelength,
                    ray.angles.aod_azimuth,
                    ray.angles.aod_elevation,
                );
                add_scaled_outer(&mut h, ray.gain * scale, &a_rx, &a_tx);
            }
            subcarriers.push(h);
        }
        Ok(ChannelRealization { subcarriers, rays })
    }

    /// Wrap explicit per-subcarrier matrices as a realization without ray
    /// metadata, for synthetic channels built directly in matrix form.
    /// Designers that need ray geometry see an empty ray list and reject it.
    pub fn from_matrices(subcarriers: Vec<ComplexMatrix>) -> Result<Self> {
        let Some(first) = subcarriers.first() else {
            return Err(Error::Config("a realization needs at least one subcarrier".into()));
        };
        let (rows, cols) = (first.rows(), first.cols());
        for h in &subcarriers {
            if h.rows() != rows || h.cols() != cols {
                return Err(Error::dim(
                    "ChannelRealization::from_matrices",
                    format!("{}x{} matrix among {rows}x{cols} subcarriers", h.rows(), h.cols()),
                ));
            }
            if !h.is_all_finite() {
                return Err(Error::Numerical("non-finite channel entry".into()));
            }
        }
        Ok(ChannelRealization { subcarriers, rays: Vec::new() })
    }

    /// Check that this realization has the subcarrier count and matrix
    /// dimensions the configuration promises.
    pub fn matches_config(&self, cfg: &SystemConfig) -> Result<()> {
        if self.subcarriers.len() != cfg.n_subcarriers {
            return Err(Error::dim(
                "ChannelRealization::matches_config",
                format!("{} subcarriers, config has {}", self.subcarriers.len(), cfg.n_subcarriers),
            ));
        }
        for h in &self.subcarriers {
            if h.rows() != cfg.n_rx() || h.cols() != cfg.n_tx() {
                return Err(Error::dim(
                    "ChannelRealization::matches_config",
                    format!("{}x{} matrix, config wants {}x{}", h.rows(), h.cols(), cfg.n_rx(), cfg.n_tx()),
                ));
            }
        }
        Ok(())
    }

    pub fn subcarriers(&self) -> &[ComplexMatrix] {
        &self.subcarriers
    }

    pub fn subcarrier(&self, k: usize) -> &ComplexMatrix {
        &self.subcarriers[k]
    }

    pub fn n_subcarriers(&self) -> usize {
        self.subcarriers.len()
    }

    pub fn rays(&self) -> &[Ray] {
        &self.rays
    }
}

/// Draw one realization.
///
/// RNG consumption order: all ray angles first (see [`sample_ray_angles`]),
/// then per ray, cluster-major, the real and imaginary gain parts as
/// independent `N(0, σᵢ²/2)` draws — a circularly symmetric complex Gaussian
/// whose variance is the ray's cluster power.
pub fn generate_channel<R: Rng>(cfg: &SystemConfig, rng: &mut R) -> Result<ChannelRealization> {
    cfg.validate()?;
    let angle_draws = sample_ray_angles(rng, cfg.n_clusters, cfg.n_rays, cfg.angular_spread_rad);
    let mut rays = Vec::with_capacity(angle_draws.len());
    for (idx, angles) in angle_draws.into_iter().enumerate() {
        let power = cfg.cluster_powers[idx / cfg.n_rays];
        let normal = Normal::new(0.0, (power / 2.0).sqrt()).expect("validated cluster power");
        let re = normal.sample(rng);
        let im = normal.sample(rng);
        rays.push(Ray { gain: Complex64::new(re, im), angles });
    }
    ChannelRealization::from_rays(cfg, rays)
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// An ordered corpus of realizations drawn under one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelDataset {
    config: SystemConfig,
    samples: Vec<ChannelRealization>,
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    config: SystemConfig,
    samples: u64,
    endianness: String,
}

impl ChannelDataset {
    pub fn new(config: SystemConfig, samples: Vec<ChannelRealization>) -> Result<Self> {
        config.validate()?;
        for (i, sample) in samples.iter().enumerate() {
            check_sample_dims(&config, sample).map_err(|e| Error::Dimension {
                op: "ChannelDataset::new",
                detail: format!("sample {i}: {e}"),
            })?;
        }
        Ok(ChannelDataset { config, samples })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn samples(&self) -> &[ChannelRealization] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_parts(self) -> (SystemConfig, Vec<ChannelRealization>) {
        (self.config, self.samples)
    }

    /// Persist to the binary dataset format: magic `SQCH`, version, a JSON
    /// header (config, sample count, endianness tag), then per sample the
    /// ray table (six little-endian f64 per ray: gain re/im, AoD azimuth,
    /// AoD elevation, AoA azimuth, AoA elevation) followed by every
    /// subcarrier matrix as row-major re/im-interleaved f64.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let header = serde_json::to_vec(&DatasetHeader {
            config: self.config.clone(),
            samples: self.samples.len() as u64,
            endianness: "LE".into(),
        })?;
        io::write_frame_start(&mut w, &DATASET_MAGIC, DATASET_VERSION, &header)?;
        for sample in &self.samples {
            let mut rays = Vec::with_capacity(sample.rays.len() * 6);
            for ray in &sample.rays {
                rays.extend_from_slice(&[
                    ray.gain.re,
                    ray.gain.im,
                    ray.angles.aod_azimuth,
                    ray.angles.aod_elevation,
                    ray.angles.aoa_azimuth,
                    ray.angles.aoa_elevation,
                ]);
            }
            io::write_f64s(&mut w, &rays)?;
            let mut entries = Vec::new();
            for h in &sample.subcarriers {
                entries.clear();
                entries.reserve(h.re().numel() * 2);
                for (re, im) in h.re().data().iter().zip(h.im().data()) {
                    entries.push(*re);
                    entries.push(*im);
                }
                io::write_f64s(&mut w, &entries)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Inverse of [`ChannelDataset::write`]; round-trips are bit-exact.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let what = "channel dataset";
        let mut r = BufReader::new(File::open(path)?);
        let header = io::read_frame_start(&mut r, &DATASET_MAGIC, DATASET_VERSION, what)?;
        let header: DatasetHeader = serde_json::from_slice(&header)?;
        if header.endianness != "LE" {
            return Err(Error::Format(format!(
                "{what}: unsupported endianness tag {:?}",
                header.endianness
            )));
        }
        let config = header.config;
        config.validate()?;
        let (n_rx, n_tx) = (config.n_rx(), config.n_tx());
        let mut samples = Vec::new();
        for _ in 0..header.samples {
            let table = io::read_f64s(&mut r, config.rays_total() * 6, what)?;
            let rays = table
                .chunks_exact(6)
                .map(|c| Ray {
                    gain: Complex64::new(c[0], c[1]),
                    angles: RayAngles {
                        aod_azimuth: c[2],
                        aod_elevation: c[3],
                        aoa_azimuth: c[4],
                        aoa_elevation: c[5],
                    },
                })
                .collect();
            let mut subcarriers = Vec::with_capacity(config.n_subcarriers);
            for _ in 0..config.n_subcarriers {
                let entries = io::read_f64s(&mut r, n_rx * n_tx * 2, what)?;
                let mut h = ComplexMatrix::zeros(n_rx, n_tx);
                let (h_re, h_im) = h.parts_mut();
                for (i, pair) in entries.chunks_exact(2).enumerate() {
                    h_re[i] = pair[0];
                    h_im[i] = pair[1];
                }
                subcarriers.push(h);
            }
            samples.push(ChannelRealization { subcarriers, rays });
        }
        io::expect_eof(&mut r, what)?;
        Ok(ChannelDataset { config, samples })
    }
}

fn check_sample_dims(cfg: &SystemConfig, sample: &ChannelRealization) -> Result<()> {
    if sample.rays.len() != cfg.rays_total() {
        return Err(Error::dim(
            "check_sample_dims",
            format!("{} rays, config has {}", sample.rays.len(), cfg.rays_total()),
        ));
    }
    sample.matches_config(cfg)
}

/// Draw `count` independent realizations. Sample `i` uses its own stream
/// seeded with `seed.wrapping_add(i)`, so the result is identical whether
/// the loop runs sequentially or fans out across the rayon pool.
pub fn generate_dataset(cfg: &SystemConfig, count: usize, seed: u64) -> Result<ChannelDataset> {
    cfg.validate()?;
    let samples: Result<Vec<_>> = parallel::map_indexed(count, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        generate_channel(cfg, &mut rng)
    })
    .into_iter()
    .collect();
    Ok(ChannelDataset { config: cfg.clone(), samples: samples? })
}

// ---------------------------------------------------------------------------
