use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Real, Var};
use crate::error::Result;

/// Affine map `x·W + b`, with `W` stored `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Weights and biases uniform in `±1/√fan_in`.
    pub fn new(
        store: &mut ParamStore<f64>,
        rng: &mut ChaCha8Rng,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Result<Self> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        let b = (0..fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
        Self::with_values(store, name, fan_in, fan_out, w, b)
    }

    pub fn zeros(
        store: &mut ParamStore<f64>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Result<Self> {
        Self::with_values(
            store,
            name,
            fan_in,
            fan_out,
            vec![0.0; fan_in * fan_out],
            vec![0.0; fan_out],
        )
    }

    fn with_values(
        store: &mut ParamStore<f64>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        w: Vec<f64>,
        b: Vec<f64>,
    ) -> Result<Self> {
        Ok(Self {
            weight: store.add(format!("{name}.weight"), &[fan_in, fan_out], w)?,
            bias: store.add(format!("{name}.bias"), &[fan_out], b)?,
            fan_in,
            fan_out,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(x, w)?;
        g.add(y, b)
    }
}

/// Linear layers with ReLU between them (not after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `widths = [in, hidden.., out]`.
    pub fn new(
        store: &mut ParamStore<f64>,
        rng: &mut ChaCha8Rng,
        name: &str,
        widths: &[usize],
    ) -> Result<Self> {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, rng, &format!("{name}.{i}"), w[0], w[1]))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    /// Like [`Mlp::new`] but the final layer starts at zero.
    pub fn zero_last(
        store: &mut ParamStore<f64>,
        rng: &mut ChaCha8Rng,
        name: &str,
        widths: &[usize],
    ) -> Result<Self> {
        let n = widths.len() - 1;
        let mut layers = Vec::with_capacity(n);
        for (i, w) in widths.windows(2).enumerate() {
            let lname = format!("{name}.{i}");
            layers.push(if i + 1 == n {
                Linear::zeros(store, &lname, w[0], w[1])?
            } else {
                Linear::new(store, rng, &lname, w[0], w[1])?
            });
        }
        Ok(Self { layers })
    }

    pub fn out_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                h = g.relu(h)?;
            }
            h = layer.forward(g, store, h)?;
        }
        Ok(h)
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Layer normalization over the last axis with learned gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore<f64>, name: &str, width: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add(format!("{name}.gain"), &[width], vec![1.0; width])?,
            bias: store.add(format!("{name}.bias"), &[width], vec![0.0; width])?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let n = g.layer_norm(x, LAYER_NORM_EPS)?;
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        let y = g.mul(n, gain)?;
        g.add(y, bias)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn linear_matches_manual() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = Linear::new(&mut store, &mut rng, "l", 3, 2).unwrap();
        let w = store.get(l.weight).values.clone();
        let b = store.get(l.bias).values.clone();
        let bound = 1.0 / 3f64.sqrt();
        assert!(w.iter().chain(&b).all(|v| v.abs() <= bound));
        let mut g = Graph::<f64>::new();
        let x = g.constant(vec![1.0, 2.0, 3.0], &[1, 3]).unwrap();
        let y = l.forward(&mut g, &store, x).unwrap();
        for j in 0..2 {
            let want = b[j] + (0..3).map(|i| (i + 1) as f64 * w[i * 2 + j]).sum::<f64>();
            assert!((g.value(y)[j] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_last_outputs_zero() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Mlp::zero_last(&mut store, &mut rng, "m", &[3, 5, 2]).unwrap();
        let mut g = Graph::<f64>::new();
        let x = g
            .constant(vec![0.3, -1.0, 2.0, 1.0, 1.0, 1.0], &[2, 3])
            .unwrap();
        let y = m.forward(&mut g, &store, x).unwrap();
        assert!(g.value(y).iter().all(|&v| v == 0.0));
        assert_eq!(m.out_width(), 2);
    }

    #[test]
    fn layer_norm_identity_affine() {
        let mut store = ParamStore::new();
        let ln = LayerNorm::new(&mut store, "ln", 4).unwrap();
        let mut g = Graph::<f64>::new();
        let x = g.constant(vec![1.0, 2.0, 3.0, 4.0], &[1, 4]).unwrap();
        let y = ln.forward(&mut g, &store, x).unwrap();
        let mean: f64 = g.value(y).iter().sum::<f64>() / 4.0;
        let var: f64 = g.value(y).iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }
}
