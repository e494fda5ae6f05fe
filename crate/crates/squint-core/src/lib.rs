//! Designers for hybrid analog/digital beamformers on wideband MIMO-OFDM
//! links, plus everything needed to benchmark them against each other.
//!
//! The toolkit covers four designers:
//!
//! * a graph neural beamformer trained directly against spectral efficiency
//!   ([`gnn`]),
//! * alternating manifold optimization over the unit-modulus analog weights
//!   ([`baselines::amo_design`]),
//! * a center-frequency array-vector heuristic ([`baselines::av_single`]),
//! * the fully digital water-filling upper bound ([`baselines::fully_digital`]).
//!
//! Channels come from a frequency-selective clustered ray model in which the
//! array response is evaluated at each subcarrier's own wavelength, so wide
//! bandwidths exhibit beam squint ([`channel`]). Training runs on a small
//! reverse-mode tape over split-complex matrices ([`autodiff`]).
//!
//! With the default `parallel` feature, dataset generation, batch gradients
//! and sweep evaluation fan out across a rayon pool; disabling the feature
//! swaps in sequential loops with identical results.

pub mod autodiff;
pub mod baselines;
pub mod channel;
mod error;
pub mod gnn;
mod io;
pub mod linalg;
mod parallel;
pub mod system;
pub mod tensor;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Speed of light in vacuum (m/s), used to turn carrier frequencies into
/// wavelengths and element spacings.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
