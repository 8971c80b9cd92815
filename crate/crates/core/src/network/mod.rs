//! Learnable components: point transformer backbone, mixture head,
//! Fourier query encoding, attention encoder/decoder and refinement.

pub mod attention;
pub mod config;
pub mod fourier;
pub mod layers;
pub mod model;
pub mod ptl;

pub use config::{ComponentMode, ModelConfig, SamplingMode};
pub use fourier::{fourier_encode, fourier_features};
pub use model::{output_count, Encoded, Model, Refined, Upsampled};
pub use ptl::{neighbor_table, ptl_forward, PtlParams};
