//! Spherical mixture of Gaussians: PSD covariances, sampling and density.

pub mod covariance;
pub mod mixture;
pub mod sphere;

pub use covariance::{build_covariance_clamped, build_covariance_rotdiag, eigenvalues_2x2, Cov2};
pub use mixture::{likelihood, sample_smog, SmogParams, SmogSamples};
pub use sphere::{cart_to_sph, sph_to_cart, SphericalCoord};
