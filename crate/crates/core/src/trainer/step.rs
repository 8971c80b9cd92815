use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::augment::{augment, TrainingPair};
use super::config::{TrainConfig, UpsamplingLoss};
use crate::autodiff::{Graph, Real, Var};
use crate::error::{Error, Result};
use crate::geometry::cloud::{normalize, PointCloud};
use crate::losses::tape;
use crate::network::model::{output_count, points_constant};
use crate::network::{Encoded, Model};
use crate::smog::SmogSamples;

/// Loss nodes of one training item.
#[derive(Debug, Clone, Copy)]
pub struct ItemTerms {
    pub total: Var,
    /// Upsampling distance of the decoded (coarse) points to the target.
    pub coarse: Var,
    /// Upsampling distance of the refined points, absent when refinement is off.
    pub refined: Option<Var>,
    /// ACD between the decoded mixture means and the input.
    pub recon: Var,
}

/// Per-item random stream derived from `(seed, step, item)`.
pub fn item_rng(seed: u64, step: usize, item: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((step as u64) << 24) | (item as u64 & 0xff_ffff));
    rng
}

/// Normalizes the pair by the input's centroid and radius, then augments.
pub fn prepare_pair<R: Rng + ?Sized>(
    pair: &TrainingPair,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainingPair> {
    let (input, tf) = normalize(&pair.input)?;
    let normed = TrainingPair {
        input,
        target: tf.apply(&pair.target),
    };
    let sigma = cfg.augment_jitter.then_some(cfg.perturbation_sigma);
    augment(&normed, cfg.augment_rotation, sigma, rng)
}

fn upsampling_term<T: Real>(
    g: &mut Graph<T>,
    pred: Var,
    target: Var,
    cfg: &TrainConfig,
) -> Result<Var> {
    match cfg.upsampling_loss {
        UpsamplingLoss::Projection => tape::projection_loss(g, pred, target, &cfg.projection),
        UpsamplingLoss::Acd => tape::acd(g, pred, target),
    }
}

/// Both forward passes of one item on a shared encoding.
/// `input` and `target` are expected in the training frame.
pub fn item_graph<T: Real>(
    g: &mut Graph<T>,
    model: &Model<T>,
    input: &PointCloud,
    target: &PointCloud,
    cfg: &TrainConfig,
    sample_seed: u64,
) -> Result<ItemTerms> {
    cfg.weights.validate()?;
    let enc = model.encode(g, input)?;
    let smog = model.smog_params(g, &enc)?;
    let m = output_count(input.len(), cfg.train_ratio)?;
    let samples = model.draw_queries(&smog, m, sample_seed)?;
    item_terms(g, model, &enc, input, target, cfg, &samples)
}

/// Like [`item_graph`] with the sphere samples supplied by the caller.
/// The samples enter the graph as constants, exactly as in training.
pub fn item_graph_with_samples<T: Real>(
    g: &mut Graph<T>,
    model: &Model<T>,
    input: &PointCloud,
    target: &PointCloud,
    cfg: &TrainConfig,
    samples: &SmogSamples,
) -> Result<ItemTerms> {
    cfg.weights.validate()?;
    let enc = model.encode(g, input)?;
    item_terms(g, model, &enc, input, target, cfg, samples)
}

fn item_terms<T: Real>(
    g: &mut Graph<T>,
    model: &Model<T>,
    enc: &Encoded,
    input: &PointCloud,
    target: &PointCloud,
    cfg: &TrainConfig,
    samples: &SmogSamples,
) -> Result<ItemTerms> {
    let enc = *enc;
    let queries = points_constant(g, &samples.points)?;
    let gt = points_constant(g, target.points())?;
    let input_var = points_constant(g, input.points())?;

    let coarse_pts = model.decode(g, &enc, queries)?;
    let coarse = upsampling_term(g, coarse_pts, gt, cfg)?;
    let refined = if model.config().refine {
        let r = model.refine(g, &enc, coarse_pts, &samples.components, cfg.train_ratio)?;
        Some(upsampling_term(g, r.points, gt, cfg)?)
    } else {
        None
    };

    let recon_pts = model.decode(g, &enc, enc.means)?;
    let recon = tape::acd(g, recon_pts, input_var)?;

    let w = &cfg.weights;
    let mut total = g.scale(coarse, w.lambda1)?;
    if let Some(r) = refined {
        let t = g.scale(r, w.lambda2)?;
        total = g.add(total, t)?;
    }
    let t = g.scale(recon, w.lambda3)?;
    total = g.add(total, t)?;
    Ok(ItemTerms {
        total,
        coarse,
        refined,
        recon,
    })
}

/// Scalar losses and parameter gradients of one item.
#[derive(Debug, Clone)]
pub struct ItemResult<T> {
    pub loss: f64,
    pub coarse: f64,
    pub refined: Option<f64>,
    pub recon: f64,
    pub grads: Vec<Vec<T>>,
}

/// Prepares, runs and differentiates batch item `item` of step `step`.
pub fn item_step<T: Real>(
    model: &Model<T>,
    pair: &TrainingPair,
    cfg: &TrainConfig,
    step: usize,
    item: usize,
) -> Result<ItemResult<T>> {
    let mut rng = item_rng(cfg.seed, step, item);
    let prepared = prepare_pair(pair, cfg, &mut rng)?;
    let sample_seed: u64 = rng.gen();
    let mut g = Graph::new();
    let terms = item_graph(
        &mut g,
        model,
        &prepared.input,
        &prepared.target,
        cfg,
        sample_seed,
    )?;
    let val = |v: Var| g.scalar(v).as_f64();
    let loss = val(terms.total);
    if !loss.is_finite() {
        return Err(Error::Diverged {
            step,
            item,
            reason: format!(
                "loss {loss} (upsampling {}, reconstruction {})",
                val(terms.coarse),
                val(terms.recon)
            ),
        });
    }
    let grads = g.backward(terms.total)?.params(model.params());
    Ok(ItemResult {
        loss,
        coarse: val(terms.coarse),
        refined: terms.refined.map(val),
        recon: val(terms.recon),
        grads,
    })
}
