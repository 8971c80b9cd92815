use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::attention::{Decoder, DecoderLayer, Encoder, EncoderLayer};
use super::config::{ComponentMode, ModelConfig, SamplingMode};
use super::fourier::{feature_count, fourier_encode};
use super::layers::{LayerNorm, Linear, Mlp};
use super::ptl::{neighbor_table, ptl_forward, PtlParams};
use crate::autodiff::{Checkpoint, Graph, ParamStore, Real, Var};
use crate::error::{Error, Result};
use crate::geometry::cloud::{normalize, Point3, PointCloud};
use crate::geometry::fps::farthest_point_sample_slice;
use crate::smog::{build_covariance_clamped, sample_smog, SmogParams, SmogSamples};

/// Guard added to the mean norm before dividing.
pub const MEAN_NORM_GUARD: f64 = 1e-8;
/// Raw mean vectors shorter than this are rejected.
pub const DEGENERATE_MEAN_NORM: f64 = 1e-12;

/// Prefix of optimizer tensors that may share a checkpoint with the model.
pub const OPTIMIZER_PREFIX: &str = "adam.";

/// Parameter handles of every sub-network.
#[derive(Debug, Clone)]
pub struct Layout {
    pub embed: Mlp,
    pub backbone: PtlParams,
    pub smog_trunk: Mlp,
    pub smog_mean: Linear,
    pub smog_cov: Linear,
    pub encoder: Encoder,
    pub query_proj: Linear,
    pub decoder: Decoder,
    pub coord_head: Mlp,
    pub refine_in: Linear,
    pub refine_ptl: PtlParams,
    pub refine_out: Linear,
    pub refine_head: Mlp,
}

impl Layout {
    fn build(c: &ModelConfig, store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) -> Result<Self> {
        let d = c.width;
        let embed = Mlp::new(store, rng, "backbone.embed", &[3, d, d])?;
        let backbone = PtlParams::new(store, rng, "backbone.ptl", d, d)?;
        let smog_trunk = Mlp::new(store, rng, "smog.trunk", &[d, d, d])?;
        let smog_mean = Linear::new(store, rng, "smog.mean", d, 3)?;
        let smog_cov = Linear::new(store, rng, "smog.cov", d, 3)?;
        let encoder = Encoder {
            layers: (0..c.encoder_layers)
                .map(|i| {
                    EncoderLayer::new(
                        store,
                        rng,
                        &format!("encoder.{i}"),
                        d,
                        c.heads,
                        c.encoder_mlp,
                    )
                })
                .collect::<Result<_>>()?,
            norm: LayerNorm::new(store, "encoder.norm", d)?,
        };
        let query_proj = Linear::new(
            store,
            rng,
            "decoder.query",
            feature_count(c.fourier_freqs),
            d,
        )?;
        let decoder = Decoder {
            layers: (0..c.decoder_layers)
                .map(|i| {
                    DecoderLayer::new(
                        store,
                        rng,
                        &format!("decoder.{i}"),
                        d,
                        c.heads,
                        c.decoder_mlp,
                    )
                })
                .collect::<Result<_>>()?,
            norm: LayerNorm::new(store, "decoder.norm", d)?,
        };
        let coord_head = Mlp::new(store, rng, "coord", &[d, d, 3])?;
        let refine_in = Linear::new(store, rng, "refine.in", d, d)?;
        let refine_ptl = PtlParams::new(store, rng, "refine.ptl", d, d)?;
        let refine_out = Linear::new(store, rng, "refine.out", d, d)?;
        let refine_head = Mlp::zero_last(store, rng, "refine.head", &[d, d, 3])?;
        Ok(Self {
            embed,
            backbone,
            smog_trunk,
            smog_mean,
            smog_cov,
            encoder,
            query_proj,
            decoder,
            coord_head,
            refine_in,
            refine_ptl,
            refine_out,
            refine_head,
        })
    }
}

/// Tape handles produced by [`Model::encode`].
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    /// Normalized input coordinates `[N, 3]`.
    pub positions: Var,
    /// Backbone features `[N, D]`.
    pub features: Var,
    /// Encoder output `[N, D]`, the decoder's memory.
    pub memory: Var,
    /// Unit mixture means `[N, 3]`.
    pub means: Var,
    /// Unconstrained covariance outputs `[N, 3]`.
    pub raw_cov: Var,
    /// Backbone neighbourhood size actually used.
    pub backbone_k: usize,
    /// Set when the cloud had fewer points than the configured neighbourhood.
    pub backbone_k_reduced: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct Refined {
    pub points: Var,
    pub k: usize,
    pub k_reduced: bool,
}

/// Result of [`Model::upsample`], in the input's coordinate frame.
#[derive(Debug, Clone)]
pub struct Upsampled {
    pub points: PointCloud,
    pub coarse: PointCloud,
    pub samples: SmogSamples,
    pub smog: SmogParams,
    pub refine_k: usize,
    pub warnings: Vec<String>,
}

/// Number of output points for ratio `r`: `round(r·N)`.
pub fn output_count(n: usize, ratio: f64) -> Result<usize> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "ratio must be positive, got {ratio}"
        )));
    }
    let m = (ratio * n as f64).round();
    if m < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "ratio {ratio} yields no points for N = {n}"
        )));
    }
    Ok(m as usize)
}

/// Converts `[M, 3]` tape values into a cloud.
pub fn to_cloud<T: Real>(values: &[T]) -> Result<PointCloud> {
    let flat: Vec<f64> = values.iter().map(|v| v.as_f64()).collect();
    PointCloud::from_flat(&flat)
}

pub fn points_constant<T: Real>(g: &mut Graph<T>, points: &[Point3]) -> Result<Var> {
    let flat = points.iter().flatten().map(|&v| T::from_f64(v)).collect();
    g.constant(flat, &[points.len(), 3])
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    layout: Layout,
    params: ParamStore<T>,
}

impl<T: Real> Model<T> {
    /// Fresh model with weights drawn from `config.init_seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let layout = Layout::build(&config, &mut store, &mut rng)?;
        Ok(Self {
            config,
            layout,
            params: store.cast(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Same model with parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.cast(),
        }
    }

    /// Coordinate embedding followed by one point transformer layer.
    /// `points` should already be normalized.
    pub fn extract_features(
        &self,
        g: &mut Graph<T>,
        points: &[Point3],
    ) -> Result<(Var, Var, usize)> {
        let (table, k) = neighbor_table(points, self.config.backbone_k)?;
        let pos = points_constant(g, points)?;
        let emb = self.layout.embed.forward(g, &self.params, pos)?;
        let f = ptl_forward(g, &self.params, &self.layout.backbone, pos, emb, &table, k)?;
        Ok((pos, f, k))
    }

    /// Backbone, mixture head and encoder on a normalized cloud.
    pub fn encode(&self, g: &mut Graph<T>, cloud: &PointCloud) -> Result<Encoded> {
        let (positions, features, k) = self.extract_features(g, cloud.points())?;
        let p = &self.params;
        let h = self.layout.smog_trunk.forward(g, p, features)?;
        let h = g.relu(h)?;
        let raw_mean = self.layout.smog_mean.forward(g, p, h)?;
        let raw_cov = self.layout.smog_cov.forward(g, p, h)?;
        let sq = g.square(raw_mean)?;
        let norm2 = g.sum(sq, 1)?;
        if g.value(norm2)
            .iter()
            .any(|v| v.as_f64().sqrt() < DEGENERATE_MEAN_NORM)
        {
            return Err(Error::DegenerateMean);
        }
        let norm = g.sqrt(norm2)?;
        let norm = g.add_scalar(norm, MEAN_NORM_GUARD)?;
        let norm = g.reshape(norm, &[cloud.len(), 1])?;
        let means = g.div(raw_mean, norm)?;
        let memory = self.layout.encoder.forward(g, p, features)?;
        Ok(Encoded {
            positions,
            features,
            memory,
            means,
            raw_cov,
            backbone_k: k,
            backbone_k_reduced: k < self.config.backbone_k,
        })
    }

    /// Mixture parameters read off the tape; means are renormalized exactly.
    pub fn smog_params(&self, g: &Graph<T>, enc: &Encoded) -> Result<SmogParams> {
        let mv = g.value(enc.means);
        let cv = g.value(enc.raw_cov);
        let n = mv.len() / 3;
        let mut means = Vec::with_capacity(n);
        let mut covs = Vec::with_capacity(n);
        for i in 0..n {
            let m = [
                mv[3 * i].as_f64(),
                mv[3 * i + 1].as_f64(),
                mv[3 * i + 2].as_f64(),
            ];
            let len = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt();
            if len < DEGENERATE_MEAN_NORM {
                return Err(Error::DegenerateMean);
            }
            means.push([m[0] / len, m[1] / len, m[2] / len]);
            covs.push(build_covariance_clamped(
                cv[3 * i].as_f64(),
                cv[3 * i + 1].as_f64(),
                cv[3 * i + 2].as_f64(),
            ));
        }
        SmogParams::uniform(means, covs)
    }

    /// Sphere queries `[M, 3]` → coarse points `[M, 3]`.
    pub fn decode(&self, g: &mut Graph<T>, enc: &Encoded, queries: Var) -> Result<Var> {
        let p = &self.params;
        let f = fourier_encode(g, queries, self.config.fourier_freqs)?;
        let q = self.layout.query_proj.forward(g, p, f)?;
        let h = self.layout.decoder.forward(g, p, q, enc.memory)?;
        self.layout.coord_head.forward(g, p, h)
    }

    /// Residual refinement of `coarse` (`[M, 3]`); point `j` carries the
    /// backbone feature of mixture component `components[j]`.
    pub fn refine(
        &self,
        g: &mut Graph<T>,
        enc: &Encoded,
        coarse: Var,
        components: &[usize],
        ratio: f64,
    ) -> Result<Refined> {
        let m = g.shape(coarse)[0];
        if components.len() != m {
            return Err(Error::InvalidArgument(format!(
                "{} component indices for {m} coarse points",
                components.len()
            )));
        }
        let want = self.config.refine_k(ratio);
        let pts: Vec<Point3> = g
            .value(coarse)
            .chunks_exact(3)
            .map(|c| [c[0].as_f64(), c[1].as_f64(), c[2].as_f64()])
            .collect();
        let (table, k) = neighbor_table(&pts, want)?;
        let p = &self.params;
        let l = &self.layout;
        let feats = g.gather(enc.features, components)?;
        let h = l.refine_in.forward(g, p, feats)?;
        let h = g.relu(h)?;
        let h = ptl_forward(g, p, &l.refine_ptl, coarse, h, &table, k)?;
        let h = g.relu(h)?;
        let h = l.refine_out.forward(g, p, h)?;
        let y = g.add(feats, h)?;
        let delta = l.refine_head.forward(g, p, y)?;
        Ok(Refined {
            points: g.add(coarse, delta)?,
            k,
            k_reduced: k < want,
        })
    }

    /// Sphere queries for one upsampling pass, honouring the sampling and
    /// component modes. Component indices refer to the full mixture.
    pub fn draw_queries(&self, smog: &SmogParams, m: usize, seed: u64) -> Result<SmogSamples> {
        let active: Vec<usize> = match self.config.components {
            ComponentMode::All => (0..smog.len()).collect(),
            ComponentMode::Quarter => {
                let count = (smog.len() / 4).max(1);
                farthest_point_sample_slice(smog.means(), count, 0)?
            }
        };
        match self.config.sampling {
            SamplingMode::Smog => {
                let sub = if active.len() == smog.len() {
                    smog.clone()
                } else {
                    smog.subset(&active)?
                };
                let mut s = sample_smog(&sub, m, seed)?;
                s.components.iter_mut().for_each(|c| *c = active[*c]);
                Ok(s)
            }
            SamplingMode::Uniform => {
                let means = smog.means();
                let mut points = Vec::with_capacity(m);
                let mut components = Vec::with_capacity(m);
                for j in 0..m {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(j as u64);
                    let q = loop {
                        let v: [f64; 3] = [
                            rng.sample(StandardNormal),
                            rng.sample(StandardNormal),
                            rng.sample(StandardNormal),
                        ];
                        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                        if n > 1e-9 {
                            break [v[0] / n, v[1] / n, v[2] / n];
                        }
                    };
                    let best = active
                        .iter()
                        .copied()
                        .max_by(|&a, &b| {
                            let da = crate::geometry::cloud::dot(&means[a], &q);
                            let db = crate::geometry::cloud::dot(&means[b], &q);
                            da.total_cmp(&db).then(b.cmp(&a))
                        })
                        .ok_or(Error::Empty("mixture components"))?;
                    points.push(q);
                    components.push(best);
                }
                Ok(SmogSamples { points, components })
            }
        }
    }

    /// Full pipeline producing exactly `round(r·N)` points.
    pub fn upsample(&self, cloud: &PointCloud, ratio: f64, seed: u64) -> Result<Upsampled> {
        if cloud.is_empty() {
            return Err(Error::Empty("input cloud"));
        }
        let m = output_count(cloud.len(), ratio)?;
        let (normed, tf) = normalize(cloud)?;
        let mut g = Graph::<T>::inference();
        let enc = self.encode(&mut g, &normed)?;
        let smog = self.smog_params(&g, &enc)?;
        let samples = self.draw_queries(&smog, m, seed)?;
        let queries = points_constant(&mut g, &samples.points)?;
        let coarse = self.decode(&mut g, &enc, queries)?;
        let mut warnings = Vec::new();
        if enc.backbone_k_reduced {
            warnings.push(format!(
                "backbone neighbourhood reduced to {}",
                enc.backbone_k
            ));
        }
        let (out, refine_k) = if self.config.refine {
            let r = self.refine(&mut g, &enc, coarse, &samples.components, ratio)?;
            if r.k_reduced {
                warnings.push(format!("refinement neighbourhood reduced to {}", r.k));
            }
            (r.points, r.k)
        } else {
            (coarse, 0)
        };
        Ok(Upsampled {
            points: tf.invert(&to_cloud(g.value(out))?),
            coarse: tf.invert(&to_cloud(g.value(coarse))?),
            samples,
            smog,
            refine_k,
            warnings,
        })
    }

    /// Mixture predicted for `cloud` (normalized internally).
    pub fn mixture(&self, cloud: &PointCloud) -> Result<SmogParams> {
        let (normed, _) = normalize(cloud)?;
        let mut g = Graph::<T>::inference();
        let enc = self.encode(&mut g, &normed)?;
        self.smog_params(&g, &enc)
    }

    /// Decodes the mixture means back to `N` points (the reconstruction path).
    pub fn reconstruct(&self, cloud: &PointCloud) -> Result<PointCloud> {
        let (normed, tf) = normalize(cloud)?;
        let mut g = Graph::<T>::inference();
        let enc = self.encode(&mut g, &normed)?;
        let out = self.decode(&mut g, &enc, enc.means)?;
        Ok(tf.invert(&to_cloud(g.value(out))?))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut header = self.config.to_header();
        header.insert("format".into(), "smog-model".into());
        Checkpoint::from_store(header, &self.params)
    }

    /// Rebuilds a model from a checkpoint; optimizer tensors are ignored.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = ModelConfig::from_header(&ck.header)?;
        let mut model = Self::new(config)?;
        let mut seen = 0;
        for (_, p) in model.params.iter_mut() {
            let t = ck
                .tensor(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", p.name)))?;
            if t.shape != p.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    p.name, t.shape, p.shape
                )));
            }
            p.values = t.values.iter().map(|&v| T::from_f64(v as f64)).collect();
            seen += 1;
        }
        let model_tensors = ck
            .tensors
            .iter()
            .filter(|t| !t.name.starts_with(OPTIMIZER_PREFIX))
            .count();
        if model_tensors != seen {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {model_tensors} model tensors, architecture expects {seen}"
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
