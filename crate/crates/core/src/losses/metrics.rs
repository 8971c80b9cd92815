//! Losses and metrics on plain point clouds.

use crate::error::{Error, Result};
use crate::geometry::cloud::{dist2, Point3, PointCloud, TriangleMesh};
use crate::geometry::{point_mesh_distance, KdTree};

/// Parameters of the soft projection Π.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionConfig {
    /// α in `w = exp(−α‖x − z‖²)`.
    pub sharpness: f64,
    pub neighbor_count: usize,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            sharpness: 1e3,
            neighbor_count: 4,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sharpness > 0.0 && self.sharpness.is_finite()) {
            return Err(Error::Config(format!(
                "projection sharpness must be positive, got {}",
                self.sharpness
            )));
        }
        if self.neighbor_count == 0 {
            return Err(Error::Config(
                "projection neighbor_count must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Weights of the three training terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.01,
            lambda2: 0.01,
            lambda3: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

fn non_empty(c: &PointCloud, what: &'static str) -> Result<()> {
    if c.is_empty() {
        Err(Error::Empty(what))
    } else {
        Ok(())
    }
}

/// Softmax-normalized weights `exp(−α d²)` over the given squared distances.
pub(crate) fn projection_weights(d2: &[f64], sharpness: f64) -> Vec<f64> {
    let lo = d2.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = d2.iter().map(|&d| (-sharpness * (d - lo)).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

fn project_with(tree: &KdTree, z: &[Point3], x: &Point3, cfg: &ProjectionConfig) -> Result<Point3> {
    let k = cfg.neighbor_count.min(z.len());
    let idx = tree.knn(x, k)?;
    let d2: Vec<f64> = idx.iter().map(|&j| dist2(x, &z[j])).collect();
    let w = projection_weights(&d2, cfg.sharpness);
    let mut p = [0.0; 3];
    for (&j, &wj) in idx.iter().zip(&w) {
        for a in 0..3 {
            p[a] += wj * z[j][a];
        }
    }
    Ok(p)
}

/// Π(x, Z): weighted average of the k nearest points of Z.
pub fn project_point(x: &Point3, z: &PointCloud, cfg: &ProjectionConfig) -> Result<Point3> {
    non_empty(z, "projection target")?;
    cfg.validate()?;
    project_with(&KdTree::new(z.points()), z.points(), x, cfg)
}

/// d_Π(X, Z): mean of `‖x − Π(x, Z)‖²` over X.
pub fn projection_distance(x: &PointCloud, z: &PointCloud, cfg: &ProjectionConfig) -> Result<f64> {
    non_empty(x, "projection source")?;
    non_empty(z, "projection target")?;
    cfg.validate()?;
    let tree = KdTree::new(z.points());
    let mut total = 0.0;
    for p in x.points() {
        total += dist2(p, &project_with(&tree, z.points(), p, cfg)?);
    }
    Ok(total / x.len() as f64)
}

/// L_Π(X, Z) = d_Π(X, Z) + d_Π(Z, X).
pub fn projection_loss(x: &PointCloud, z: &PointCloud, cfg: &ProjectionConfig) -> Result<f64> {
    Ok(projection_distance(x, z, cfg)? + projection_distance(z, x, cfg)?)
}

/// Index of the nearest point of `target` for each point of `source`.
pub fn nearest_indices(source: &[Point3], target: &[Point3]) -> Result<Vec<usize>> {
    if target.is_empty() {
        return Err(Error::Empty("nearest-neighbour target"));
    }
    let tree = KdTree::new(target);
    source.iter().map(|p| Ok(tree.knn(p, 1)?[0])).collect()
}

fn min_sq_distances(source: &PointCloud, target: &PointCloud) -> Result<Vec<f64>> {
    let idx = nearest_indices(source.points(), target.points())?;
    Ok(source
        .points()
        .iter()
        .zip(idx)
        .map(|(p, j)| dist2(p, &target.points()[j]))
        .collect())
}

/// Mean over `source` of the squared distance to the nearest point of `target`.
pub fn directed_mean_min_sq(source: &PointCloud, target: &PointCloud) -> Result<f64> {
    non_empty(source, "source cloud")?;
    non_empty(target, "target cloud")?;
    let d = min_sq_distances(source, target)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// Augmented Chamfer distance: the larger of the two directed terms.
pub fn acd(x: &PointCloud, z: &PointCloud) -> Result<f64> {
    Ok(directed_mean_min_sq(x, z)?.max(directed_mean_min_sq(z, x)?))
}

/// Chamfer distance: the sum of the two directed terms.
pub fn chamfer(x: &PointCloud, z: &PointCloud) -> Result<f64> {
    Ok(directed_mean_min_sq(x, z)? + directed_mean_min_sq(z, x)?)
}

fn directed_hausdorff(source: &PointCloud, target: &PointCloud) -> Result<f64> {
    let d = min_sq_distances(source, target)?;
    Ok(d.into_iter().fold(0.0, f64::max).sqrt())
}

/// Symmetric Hausdorff distance (unsquared).
pub fn hausdorff(x: &PointCloud, z: &PointCloud) -> Result<f64> {
    non_empty(x, "first cloud")?;
    non_empty(z, "second cloud")?;
    Ok(directed_hausdorff(x, z)?.max(directed_hausdorff(z, x)?))
}

/// Mean and population standard deviation of point-to-surface distances.
pub fn p2f(x: &PointCloud, mesh: &TriangleMesh) -> Result<(f64, f64)> {
    non_empty(x, "point cloud")?;
    let d = x
        .points()
        .iter()
        .map(|p| point_mesh_distance(p, mesh))
        .collect::<Result<Vec<f64>>>()?;
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// λ₁·L_Π(coarse, gt) + λ₂·L_Π(refined, gt) + λ₃·ACD(recon, input).
pub fn total_loss(
    coarse: &PointCloud,
    refined: &PointCloud,
    gt: &PointCloud,
    recon: &PointCloud,
    input: &PointCloud,
    w: &LossWeights,
    cfg: &ProjectionConfig,
) -> Result<f64> {
    w.validate()?;
    Ok(w.lambda1 * projection_loss(coarse, gt, cfg)?
        + w.lambda2 * projection_loss(refined, gt, cfg)?
        + w.lambda3 * acd(recon, input)?)
}
