use std::f64::consts::PI;

use crate::autodiff::{Checkpoint, ParamStore, Real};
use crate::error::{Error, Result};

/// Hyperparameters of the AdamW update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.1,
        }
    }
}

/// `lr_end + ½(lr_start − lr_end)(1 + cos(π·t/(T−1)))`, with `t` clamped to `[0, T−1]`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_start: f64, lr_end: f64) -> f64 {
    if total_steps <= 1 {
        return lr_start;
    }
    let last = total_steps - 1;
    let t = step.min(last);
    if t == 0 {
        return lr_start;
    }
    if t == last {
        return lr_end;
    }
    lr_end + 0.5 * (lr_start - lr_end) * (1.0 + (PI * t as f64 / last as f64).cos())
}

/// Global L2 norm of a gradient set.
pub fn global_norm<T: Real>(grads: &[Vec<T>]) -> f64 {
    grads
        .iter()
        .flatten()
        .map(|g| {
            let v = g.as_f64();
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so the global norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [Vec<T>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm.is_finite() {
        let s = T::from_f64(max_norm / norm);
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

/// First and second moments per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    /// Number of applied updates.
    pub t: u64,
    /// Number of updates skipped because of non-finite gradients.
    pub skipped: u64,
}

pub const MOMENT1_PREFIX: &str = "adam.m.";
pub const MOMENT2_PREFIX: &str = "adam.v.";

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<T>> = params
            .iter()
            .map(|(_, p)| vec![T::zero(); p.values.len()])
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            skipped: 0,
        }
    }

    /// Appends the moments to a checkpoint, keyed by parameter name.
    pub fn write_to(&self, params: &ParamStore<T>, ck: &mut Checkpoint) {
        for ((_, p), (m, v)) in params.iter().zip(self.m.iter().zip(&self.v)) {
            ck.push_tensor(format!("{MOMENT1_PREFIX}{}", p.name), &p.shape, m);
            ck.push_tensor(format!("{MOMENT2_PREFIX}{}", p.name), &p.shape, v);
        }
        ck.header.insert("adam.t".into(), self.t.to_string());
        ck.header
            .insert("adam.skipped".into(), self.skipped.to_string());
    }

    pub fn read_from(params: &ParamStore<T>, ck: &Checkpoint) -> Result<Self> {
        let mut st = Self::new(params);
        let read = |name: &str, shape: &[usize]| -> Result<Vec<T>> {
            let t = ck
                .tensor(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing optimizer tensor {name}")))?;
            if t.shape != shape {
                return Err(Error::Checkpoint(format!(
                    "optimizer tensor {name} has shape {:?}",
                    t.shape
                )));
            }
            Ok(t.values.iter().map(|&x| T::from_f64(x as f64)).collect())
        };
        for (i, (_, p)) in params.iter().enumerate() {
            st.m[i] = read(&format!("{MOMENT1_PREFIX}{}", p.name), &p.shape)?;
            st.v[i] = read(&format!("{MOMENT2_PREFIX}{}", p.name), &p.shape)?;
        }
        let num = |k: &str| -> Result<u64> {
            ck.header
                .get(k)
                .ok_or_else(|| Error::Checkpoint(format!("missing header key {k}")))?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad value for {k}")))
        };
        st.t = num("adam.t")?;
        st.skipped = num("adam.skipped")?;
        Ok(st)
    }
}

/// One AdamW update with decoupled weight decay. Returns `false` and leaves
/// everything but the skip counter untouched when a gradient is non-finite.
pub fn adamw_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &[Vec<T>],
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<bool> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "{} gradient tensors and {} moment tensors for {} parameters",
            grads.len(),
            state.m.len(),
            params.len()
        )));
    }
    if grads.iter().flatten().any(|g| !g.is_finite()) {
        state.skipped += 1;
        return Ok(false);
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - lr * cfg.weight_decay;
    for (i, (_, p)) in params.iter_mut().enumerate() {
        let (m, v, g) = (&mut state.m[i], &mut state.v[i], &grads[i]);
        for j in 0..p.values.len() {
            let gj = g[j].as_f64();
            let mj = cfg.beta1 * m[j].as_f64() + (1.0 - cfg.beta1) * gj;
            let vj = cfg.beta2 * v[j].as_f64() + (1.0 - cfg.beta2) * gj * gj;
            m[j] = T::from_f64(mj);
            v[j] = T::from_f64(vj);
            let update = lr * (mj / bc1) / ((vj / bc2).sqrt() + cfg.eps);
            p.values[j] = T::from_f64(p.values[j].as_f64() * decay - update);
        }
    }
    Ok(true)
}
