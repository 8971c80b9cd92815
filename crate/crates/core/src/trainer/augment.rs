use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::cloud::{Point3, PointCloud};

pub type Rotation = [[f64; 3]; 3];

pub const IDENTITY: Rotation = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// A sparse input patch and its dense ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub input: PointCloud,
    pub target: PointCloud,
}

impl TrainingPair {
    pub fn new(input: PointCloud, target: PointCloud) -> Result<Self> {
        if input.is_empty() {
            return Err(Error::Empty("training input"));
        }
        if target.is_empty() {
            return Err(Error::Empty("training target"));
        }
        Ok(Self { input, target })
    }
}

/// Rotation matrix of the unit quaternion `(w, x, y, z)`.
pub fn quaternion_to_matrix(q: [f64; 4]) -> Rotation {
    let [w, x, y, z] = q;
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

/// Uniform draw from SO(3) via a normalized 4D Gaussian quaternion.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-9 {
            return quaternion_to_matrix(q.map(|v| v / n));
        }
    }
}

pub fn rotate_point(r: &Rotation, p: &Point3) -> Point3 {
    std::array::from_fn(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2])
}

pub fn rotate(r: &Rotation, cloud: &PointCloud) -> PointCloud {
    PointCloud::new(cloud.points().iter().map(|p| rotate_point(r, p)).collect())
        .expect("rotation of finite points is finite")
}

/// Applies `rotation` to both clouds and adds N(0, σ²) noise to the input only.
pub fn augment_with<R: Rng + ?Sized>(
    pair: &TrainingPair,
    rotation: &Rotation,
    sigma: f64,
    rng: &mut R,
) -> Result<TrainingPair> {
    let target = rotate(rotation, &pair.target);
    let mut input = rotate(rotation, &pair.input);
    if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let pts = input
            .points()
            .iter()
            .map(|p| std::array::from_fn(|i| p[i] + noise.sample(rng)))
            .collect();
        input = PointCloud::new(pts)?;
    }
    Ok(TrainingPair { input, target })
}

/// Random rotation (if enabled) and input jitter (if enabled).
pub fn augment<R: Rng + ?Sized>(
    pair: &TrainingPair,
    rotation: bool,
    jitter_sigma: Option<f64>,
    rng: &mut R,
) -> Result<TrainingPair> {
    let r = if rotation {
        random_rotation(rng)
    } else {
        IDENTITY
    };
    augment_with(pair, &r, jitter_sigma.unwrap_or(0.0), rng)
}
