//! Differentiable versions of the training losses.
//!
//! Neighbour indices are found on the forward values and held fixed, so the
//! gradient is that of the piecewise-smooth branch selected by the forward pass.

use super::metrics::{nearest_indices, LossWeights, ProjectionConfig};
use crate::autodiff::{Graph, Real, Var};
use crate::error::{Error, Result};
use crate::geometry::cloud::Point3;
use crate::geometry::KdTree;

fn points_of<T: Real>(g: &Graph<T>, v: Var) -> Result<Vec<Point3>> {
    let s = g.shape(v);
    if s.len() != 2 || s[1] != 3 {
        return Err(Error::ShapeMismatch {
            op: "point tensor",
            lhs: s.to_vec(),
            rhs: vec![3],
        });
    }
    if s[0] == 0 {
        return Err(Error::Empty("point tensor"));
    }
    Ok(g.value(v)
        .chunks_exact(3)
        .map(|c| [c[0].as_f64(), c[1].as_f64(), c[2].as_f64()])
        .collect())
}

/// d_Π(X, Z) for `x: [n, 3]`, `z: [m, 3]`.
pub fn projection_distance<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    z: Var,
    cfg: &ProjectionConfig,
) -> Result<Var> {
    cfg.validate()?;
    let xs = points_of(g, x)?;
    let zs = points_of(g, z)?;
    let (n, k) = (xs.len(), cfg.neighbor_count.min(zs.len()));
    let tree = KdTree::new(&zs);
    let mut idx = Vec::with_capacity(n * k);
    for p in &xs {
        idx.extend(tree.knn(p, k)?);
    }
    let centers: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat(i).take(k)).collect();
    let zg = g.gather(z, &idx)?;
    let xg = g.gather(x, &centers)?;
    let diff = g.sub(xg, zg)?;
    let sq = g.square(diff)?;
    let d2 = g.sum(sq, 1)?;
    let logits = g.scale(d2, -cfg.sharpness)?;
    let logits = g.reshape(logits, &[n, k])?;
    let w = g.softmax(logits, 1)?;
    let w = g.reshape(w, &[n, k, 1])?;
    let zg = g.reshape(zg, &[n, k, 3])?;
    let weighted = g.mul(zg, w)?;
    let proj = g.sum(weighted, 1)?;
    let dev = g.sub(x, proj)?;
    let dev = g.square(dev)?;
    let total = g.sum_all(dev)?;
    g.scale(total, 1.0 / n as f64)
}

/// L_Π(X, Z) = d_Π(X, Z) + d_Π(Z, X).
pub fn projection_loss<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    z: Var,
    cfg: &ProjectionConfig,
) -> Result<Var> {
    let a = projection_distance(g, x, z, cfg)?;
    let b = projection_distance(g, z, x, cfg)?;
    g.add(a, b)
}

/// Mean over `source` of the squared distance to its nearest point in `target`.
pub fn directed_mean_min_sq<T: Real>(g: &mut Graph<T>, source: Var, target: Var) -> Result<Var> {
    let s = points_of(g, source)?;
    let t = points_of(g, target)?;
    let nn = nearest_indices(&s, &t)?;
    let matched = g.gather(target, &nn)?;
    let diff = g.sub(source, matched)?;
    let sq = g.square(diff)?;
    let total = g.sum_all(sq)?;
    g.scale(total, 1.0 / s.len() as f64)
}

/// ACD: the larger directed term (ties take the first).
pub fn acd<T: Real>(g: &mut Graph<T>, x: Var, z: Var) -> Result<Var> {
    let a = directed_mean_min_sq(g, x, z)?;
    let b = directed_mean_min_sq(g, z, x)?;
    g.maximum(a, b)
}

pub fn chamfer<T: Real>(g: &mut Graph<T>, x: Var, z: Var) -> Result<Var> {
    let a = directed_mean_min_sq(g, x, z)?;
    let b = directed_mean_min_sq(g, z, x)?;
    g.add(a, b)
}

/// The three weighted terms and their sum, all on the tape.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub proj_coarse: Var,
    pub proj_refined: Option<Var>,
    pub recon: Var,
}

/// λ₁·L_Π(coarse, gt) + λ₂·L_Π(refined, gt) + λ₃·ACD(recon, input).
/// The refined term is dropped when `refined` is `None`.
pub fn total_loss<T: Real>(
    g: &mut Graph<T>,
    coarse: Var,
    refined: Option<Var>,
    gt: Var,
    recon: Var,
    input: Var,
    w: &LossWeights,
    cfg: &ProjectionConfig,
) -> Result<LossTerms> {
    w.validate()?;
    let proj_coarse = projection_loss(g, coarse, gt, cfg)?;
    let proj_refined = refined
        .map(|r| projection_loss(g, r, gt, cfg))
        .transpose()?;
    let recon_term = acd(g, recon, input)?;
    let mut total = g.scale(proj_coarse, w.lambda1)?;
    if let Some(r) = proj_refined {
        let t = g.scale(r, w.lambda2)?;
        total = g.add(total, t)?;
    }
    let t = g.scale(recon_term, w.lambda3)?;
    total = g.add(total, t)?;
    Ok(LossTerms {
        total,
        proj_coarse,
        proj_refined,
        recon: recon_term,
    })
}
