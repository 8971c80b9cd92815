use rand_chacha::ChaCha8Rng;

use super::layers::{LayerNorm, Linear, Mlp};
use crate::autodiff::{Graph, ParamStore, Real, Var};
use crate::error::{Error, Result};

/// Scaled dot-product attention with `heads` heads of width `width / heads`.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub width: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore<f64>,
        rng: &mut ChaCha8Rng,
        name: &str,
        width: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::Config(format!(
                "width {width} not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            query: Linear::new(store, rng, &format!("{name}.query"), width, width)?,
            key: Linear::new(store, rng, &format!("{name}.key"), width, width)?,
            value: Linear::new(store, rng, &format!("{name}.value"), width, width)?,
            output: Linear::new(store, rng, &format!("{name}.output"), width, width)?,
            heads,
            width,
        })
    }

    /// `queries` is `[M, width]`, `context` is `[N, width]`; returns `[M, width]`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        queries: Var,
        context: Var,
    ) -> Result<Var> {
        for v in [queries, context] {
            let s = g.shape(v);
            if s.len() != 2 || s[1] != self.width {
                return Err(Error::ShapeMismatch {
                    op: "attention",
                    lhs: s.to_vec(),
                    rhs: vec![self.width],
                });
            }
        }
        let q = self.query.forward(g, store, queries)?;
        let k = self.key.forward(g, store, context)?;
        let v = self.value.forward(g, store, context)?;
        let dh = self.width / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.narrow(q, 1, h * dh, dh)?;
            let kh = g.narrow(k, 1, h * dh, dh)?;
            let vh = g.narrow(v, 1, h * dh, dh)?;
            outs.push(g.attention(qh, kh, vh, scale)?);
        }
        let joined = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat(&outs, 1)?
        };
        self.output.forward(g, store, joined)
    }
}

/// Pre-norm self-attention block followed by a pre-norm MLP block.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub norm_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm_mlp: LayerNorm,
    pub mlp: Mlp,
}

impl EncoderLayer {
    pub fn new(
        store: &mut ParamStore<f64>,
        rng: &mut ChaCha8Rng,
        name: &str,
        width: usize,
        heads: usize,
        hidden: usize,
    ) -> Result<Self> {
        Ok(Self {
            norm_attn: LayerNorm::new(store, &format!("{name}.norm_attn"), width)?,
            attn: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), width, heads)?,
            norm_mlp: LayerNorm::new(store, &format!("{name}.norm_mlp"), width)?,
            mlp: Mlp::new(store, rng, &format!("{name}.mlp"), &[width, hidden, width])?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.norm_attn.forward(g, store, x)?;
        let a = self.attn.forward(g, store, h, h)?;
        let x = g.add(x, a)?;
        let h = self.norm_mlp.forward(g, store, x)?;
        let m = self.mlp.forward(g, store, h)?;
        g.add(x, m)
    }
}

/// Pre-norm self-attention over queries, cross-attention to memory, then MLP.
#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub norm_self: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub norm_cross: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub norm_mlp: LayerNorm,
    pub mlp: Mlp,
}

impl DecoderLayer {
    pub fn new(
        store: &mut ParamStore<f64>,
        rng: &mut ChaCha8Rng,
        name: &str,
        width: usize,
        heads: usize,
        hidden: usize,
    ) -> Result<Self> {
        Ok(Self {
            norm_self: LayerNorm::new(store, &format!("{name}.norm_self"), width)?,
            self_attn: MultiHeadAttention::new(
                store,
                rng,
                &format!("{name}.self_attn"),
                width,
                heads,
            )?,
            norm_cross: LayerNorm::new(store, &format!("{name}.norm_cross"), width)?,
            cross_attn: MultiHeadAttention::new(
                store,
                rng,
                &format!("{name}.cross_attn"),
                width,
                heads,
            )?,
            norm_mlp: LayerNorm::new(store, &format!("{name}.norm_mlp"), width)?,
            mlp: Mlp::new(store, rng, &format!("{name}.mlp"), &[width, hidden, width])?,
        })
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        memory: Var,
    ) -> Result<Var> {
        let h = self.norm_self.forward(g, store, x)?;
        let a = self.self_attn.forward(g, store, h, h)?;
        let x = g.add(x, a)?;
        let h = self.norm_cross.forward(g, store, x)?;
        let c = self.cross_attn.forward(g, store, h, memory)?;
        let x = g.add(x, c)?;
        let h = self.norm_mlp.forward(g, store, x)?;
        let m = self.mlp.forward(g, store, h)?;
        g.add(x, m)
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub layers: Vec<EncoderLayer>,
    pub norm: LayerNorm,
}

impl Encoder {
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let mut h = x;
        for l in &self.layers {
            h = l.forward(g, store, h)?;
        }
        self.norm.forward(g, store, h)
    }
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub layers: Vec<DecoderLayer>,
    pub norm: LayerNorm,
}

impl Decoder {
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        queries: Var,
        memory: Var,
    ) -> Result<Var> {
        let mut h = queries;
        for l in &self.layers {
            h = l.forward(g, store, h, memory)?;
        }
        self.norm.forward(g, store, h)
    }
}
