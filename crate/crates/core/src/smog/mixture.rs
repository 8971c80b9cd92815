use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::covariance::{Cov2, JITTER};
use super::sphere::{angle_diff, cart_to_sph, sph_to_cart, SphericalCoord};
use crate::error::{Error, Result};
use crate::geometry::cloud::{norm, Point3};

/// Tolerance on `‖μᵢ‖ = 1`.
pub const MEAN_UNIT_TOLERANCE: f64 = 1e-6;
/// Most negative eigenvalue accepted as PSD.
pub const PSD_TOLERANCE: f64 = -1e-9;
const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;
const SINGULAR_DET: f64 = 1e-18;

/// Mixture of Gaussians on the unit sphere, covariances in (θ, ϕ).
#[derive(Debug, Clone, PartialEq)]
pub struct SmogParams {
    means: Vec<Point3>,
    covariances: Vec<Cov2>,
    weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmogSamples {
    pub points: Vec<Point3>,
    pub components: Vec<usize>,
}

impl SmogParams {
    pub fn new(means: Vec<Point3>, covariances: Vec<Cov2>, weights: Vec<f64>) -> Result<Self> {
        if means.is_empty() {
            return Err(Error::Empty("mixture components"));
        }
        if covariances.len() != means.len() || weights.len() != means.len() {
            return Err(Error::InvalidArgument(format!(
                "{} means, {} covariances, {} weights",
                means.len(),
                covariances.len(),
                weights.len()
            )));
        }
        for m in &means {
            let n = norm(m);
            if !n.is_finite() || (n - 1.0).abs() > MEAN_UNIT_TOLERANCE {
                return Err(Error::NonUnitVector(n));
            }
        }
        for (index, c) in covariances.iter().enumerate() {
            let (_, min_eigenvalue) = c.eigenvalues();
            if !(min_eigenvalue >= PSD_TOLERANCE) {
                return Err(Error::NotPositiveSemidefinite {
                    index,
                    min_eigenvalue,
                });
            }
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidArgument(
                "negative or NaN mixture weight".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "mixture weights sum to {total}"
            )));
        }
        Ok(Self {
            means,
            covariances,
            weights,
        })
    }

    /// Equal weights `1/K`.
    pub fn uniform(means: Vec<Point3>, covariances: Vec<Cov2>) -> Result<Self> {
        let k = means.len().max(1);
        let w = 1.0 / k as f64;
        Self::new(means, covariances, vec![w; k])
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn means(&self) -> &[Point3] {
        &self.means
    }

    pub fn covariances(&self) -> &[Cov2] {
        &self.covariances
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Keeps only the listed components, renormalizing weights.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut means = Vec::with_capacity(indices.len());
        let mut covs = Vec::with_capacity(indices.len());
        let mut weights = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.len(),
                });
            }
            means.push(self.means[i]);
            covs.push(self.covariances[i]);
            weights.push(self.weights[i]);
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidArgument(
                "subset has zero total weight".into(),
            ));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Self::new(means, covs, weights)
    }

    /// Debug dump with columns `i,mu_x,mu_y,mu_z,var_theta,var_phi,cov,weight`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "i,mu_x,mu_y,mu_z,var_theta,var_phi,cov,weight")?;
        for (i, ((m, c), w)) in self
            .means
            .iter()
            .zip(&self.covariances)
            .zip(&self.weights)
            .enumerate()
        {
            writeln!(
                out,
                "{i},{},{},{},{},{},{},{}",
                m[0], m[1], m[2], c.var_theta, c.var_phi, c.cov, w
            )?;
        }
        Ok(())
    }
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn pick_component(cumulative: &[f64], u: f64) -> usize {
    let target = u * cumulative[cumulative.len() - 1];
    cumulative
        .partition_point(|&c| c <= target)
        .min(cumulative.len() - 1)
}

/// Draws `m` points. Sample `j` uses its own stream derived from `(seed, j)`,
/// so any split of the index range reproduces the same output.
pub fn sample_smog(params: &SmogParams, m: usize, seed: u64) -> Result<SmogSamples> {
    if m == 0 {
        return Err(Error::InvalidArgument(
            "sample count must be positive".into(),
        ));
    }
    let centers = params
        .means
        .iter()
        .map(cart_to_sph)
        .collect::<Result<Vec<_>>>()?;
    let factors: Vec<[f64; 3]> = params.covariances.iter().map(Cov2::cholesky).collect();
    let mut cumulative = Vec::with_capacity(params.len());
    let mut acc = 0.0;
    for w in &params.weights {
        acc += w;
        cumulative.push(acc);
    }

    let mut points = Vec::with_capacity(m);
    let mut components = Vec::with_capacity(m);
    for j in 0..m {
        let mut rng = sample_rng(seed, j);
        let i = pick_component(&cumulative, rng.gen::<f64>());
        let e1: f64 = rng.sample(StandardNormal);
        let e2: f64 = rng.sample(StandardNormal);
        let [l11, l21, l22] = factors[i];
        let c = centers[i];
        let s = SphericalCoord::canonical(c.theta + l11 * e1, c.phi + l21 * e1 + l22 * e2);
        points.push(sph_to_cart(&s));
        components.push(i);
    }
    Ok(SmogSamples { points, components })
}

/// `(Δθ, Δϕ)` of `z` from the centre, θ difference taken the short way round.
pub fn offset(center: &SphericalCoord, z: &SphericalCoord) -> (f64, f64) {
    (angle_diff(z.theta, center.theta), z.phi - center.phi)
}

/// Bivariate normal density of `(dt, dp)` under `c`, jittered when singular.
pub fn gaussian_density(c: &Cov2, dt: f64, dp: f64) -> f64 {
    let mut c = *c;
    if c.determinant() < SINGULAR_DET {
        c.var_theta += JITTER;
        c.var_phi += JITTER;
    }
    let det = c.determinant();
    let q = (c.var_phi * dt * dt - 2.0 * c.cov * dt * dp + c.var_theta * dp * dp) / det;
    (-0.5 * q).exp() / (2.0 * PI * det.sqrt())
}

/// Mixture density at a unit vector, in (θ, ϕ) measure.
pub fn likelihood(params: &SmogParams, z: &Point3) -> Result<f64> {
    let zs = cart_to_sph(z)?;
    let mut total = 0.0;
    for ((m, c), w) in params
        .means
        .iter()
        .zip(&params.covariances)
        .zip(&params.weights)
    {
        let (dt, dp) = offset(&cart_to_sph(m)?, &zs);
        total += w * gaussian_density(c, dt, dp);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(mean: Point3, c: Cov2) -> SmogParams {
        SmogParams::uniform(vec![mean], vec![c]).unwrap()
    }

    #[test]
    fn rejects_invalid() {
        let c = Cov2::diagonal(0.1, 0.1);
        assert!(SmogParams::uniform(vec![[2.0, 0.0, 0.0]], vec![c]).is_err());
        let bad = Cov2 {
            var_theta: 0.1,
            var_phi: 0.1,
            cov: 0.5,
        };
        assert!(matches!(
            SmogParams::uniform(vec![[1.0, 0.0, 0.0]], vec![bad]),
            Err(Error::NotPositiveSemidefinite { index: 0, .. })
        ));
        assert!(SmogParams::new(vec![[1.0, 0.0, 0.0]], vec![c], vec![0.5]).is_err());
        assert!(SmogParams::uniform(vec![], vec![]).is_err());
    }

    #[test]
    fn uniform_weights_exact() {
        let p = SmogParams::uniform(vec![[1.0, 0.0, 0.0]; 3], vec![Cov2::diagonal(0.1, 0.1); 3])
            .unwrap();
        assert!(p.weights().iter().all(|&w| w == 1.0 / 3.0));
    }

    #[test]
    fn near_zero_variance_stays_close() {
        let p = single([1.0, 0.0, 0.0], Cov2::diagonal(1e-6, 1e-6));
        let s = sample_smog(&p, 5, 3).unwrap();
        assert_eq!(s.points.len(), 5);
        for q in &s.points {
            let d = ((q[0] - 1.0).powi(2) + q[1] * q[1] + q[2] * q[2]).sqrt();
            assert!(d < 0.01);
        }
    }

    #[test]
    fn sample_count_independent_of_components() {
        let p = SmogParams::uniform(vec![[0.0, 0.0, 1.0]; 7], vec![Cov2::diagonal(0.2, 0.3); 7])
            .unwrap();
        for m in [1, 3, 7, 20] {
            assert_eq!(sample_smog(&p, m, 0).unwrap().points.len(), m);
        }
        assert!(sample_smog(&p, 0, 0).is_err());
    }

    #[test]
    fn prefix_of_longer_draw() {
        let p = SmogParams::uniform(
            vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![Cov2::diagonal(0.05, 0.02); 2],
        )
        .unwrap();
        let a = sample_smog(&p, 10, 42).unwrap();
        let b = sample_smog(&p, 25, 42).unwrap();
        assert_eq!(a.points[..], b.points[..10]);
        assert_eq!(a.components[..], b.components[..10]);
    }

    #[test]
    fn peak_density() {
        let c = Cov2 {
            var_theta: 0.04,
            var_phi: 0.01,
            cov: 0.005,
        };
        let p = single([1.0, 0.0, 0.0], c);
        let d = likelihood(&p, &[1.0, 0.0, 0.0]).unwrap();
        assert!((d - 1.0 / (2.0 * PI * c.determinant().sqrt())).abs() < 1e-12);
    }

    #[test]
    fn singular_is_jittered() {
        let c = Cov2 {
            var_theta: 0.01,
            var_phi: 0.04,
            cov: 0.02,
        };
        let p = single([0.0, 1.0, 0.0], c);
        let d = likelihood(&p, &[0.0, 1.0, 0.0]).unwrap();
        assert!(d.is_finite() && d > 0.0);
    }

    #[test]
    fn csv_dump() {
        let p = single([1.0, 0.0, 0.0], Cov2::diagonal(0.5, 0.25));
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "i,mu_x,mu_y,mu_z,var_theta,var_phi,cov,weight\n0,1,0,0,0.5,0.25,0,1\n"
        );
    }
}
