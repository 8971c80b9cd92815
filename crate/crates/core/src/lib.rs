//! Arbitrary-ratio point cloud upsampling.
//!
//! A sparse cloud is mapped to a mixture of Gaussians on the unit sphere
//! (one component per input point). Any number of samples can be drawn from
//! that mixture; each sample is Fourier-encoded and used as a query for a
//! transformer decoder that maps it back onto the surface. A local-attention
//! residual block refines the decoded coordinates.
//!
//! The crate is self-contained: it ships its own reverse-mode autodiff
//! engine ([`autodiff`]), geometry utilities ([`geometry`]), the mixture
//! machinery ([`smog`]), the network ([`network`]), the losses and metrics
//! ([`losses`]), and the training loop ([`trainer`]).

pub mod autodiff;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod losses;
pub mod network;
pub mod smog;
pub mod trainer;

pub use error::{Error, Result};
pub use geometry::{NormalizationTransform, Patch, Point3, PointCloud, TriangleMesh};
