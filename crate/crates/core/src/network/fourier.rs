//! Dyadic Fourier features of 3D points.
//!
//! Column layout of the `M × 6L` output: the first `3L` columns are
//! `sin(2ˡ·π·c)` and the last `3L` are `cos(2ˡ·π·c)`, each block ordered by
//! coordinate `c` then frequency `l`.

use std::f64::consts::PI;

use crate::autodiff::{Graph, Real, Var};
use crate::error::{Error, Result};
use crate::geometry::cloud::Point3;

pub fn feature_count(num_freqs: usize) -> usize {
    6 * num_freqs
}

/// Reference evaluation on plain values.
pub fn fourier_features(points: &[Point3], num_freqs: usize) -> Vec<f64> {
    let l = num_freqs;
    let mut out = vec![0.0; points.len() * 6 * l];
    for (row, p) in points.iter().enumerate() {
        let base = row * 6 * l;
        for c in 0..3 {
            for f in 0..l {
                let arg = (1u64 << f) as f64 * PI * p[c];
                out[base + c * l + f] = arg.sin();
                out[base + 3 * l + c * l + f] = arg.cos();
            }
        }
    }
    out
}

/// `[M, 3]` → `[M, 6L]` on the tape.
pub fn fourier_encode<T: Real>(g: &mut Graph<T>, points: Var, num_freqs: usize) -> Result<Var> {
    if num_freqs == 0 {
        return Err(Error::InvalidArgument(
            "at least one frequency is required".into(),
        ));
    }
    let s = g.shape(points);
    if s.len() != 2 || s[1] != 3 {
        return Err(Error::ShapeMismatch {
            op: "fourier_encode",
            lhs: s.to_vec(),
            rhs: vec![3],
        });
    }
    let l = num_freqs;
    let mut freq = vec![T::zero(); 3 * 3 * l];
    for c in 0..3 {
        for f in 0..l {
            freq[c * 3 * l + c * l + f] = T::from_f64((1u64 << f) as f64 * PI);
        }
    }
    let freq = g.constant(freq, &[3, 3 * l])?;
    let args = g.matmul(points, freq)?;
    let s = g.sin(args)?;
    let c = g.cos(args)?;
    g.concat(&[s, c], 1)
}
