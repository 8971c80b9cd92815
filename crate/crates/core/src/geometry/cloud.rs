use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

#[inline]
pub fn sub(a: &Point3, b: &Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: &Point3, b: &Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: &Point3, s: f64) -> Point3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: &Point3, b: &Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: &Point3, b: &Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: &Point3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let d = sub(a, b);
    dot(&d, &d)
}

/// An ordered list of 3D points. Every coordinate is finite.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::NonFiniteCoordinate(i));
        }
        Ok(Self { points })
    }

    pub fn empty() -> Self {
        Self { points: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn get(&self, i: usize) -> Option<&Point3> {
        self.points.get(i)
    }

    /// Points at the given indices, in order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
        }
    }

    pub fn centroid(&self) -> Option<Point3> {
        if self.points.is_empty() {
            return None;
        }
        let mut c = [0.0; 3];
        for p in &self.points {
            c = add(&c, p);
        }
        Some(scale(&c, 1.0 / self.points.len() as f64))
    }

    /// Largest distance from the origin.
    pub fn max_norm(&self) -> f64 {
        self.points.iter().map(norm).fold(0.0, f64::max)
    }

    /// Coordinates flattened row-major, `[x0, y0, z0, x1, ...]`.
    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| p.iter().copied()).collect()
    }

    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() % 3 != 0 {
            return Err(Error::InvalidArgument(format!(
                "flat coordinate buffer length {} is not a multiple of 3",
                values.len()
            )));
        }
        Self::new(values.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    /// Concatenates several clouds in order.
    pub fn concat<'a>(clouds: impl IntoIterator<Item = &'a PointCloud>) -> PointCloud {
        PointCloud {
            points: clouds
                .into_iter()
                .flat_map(|c| c.points.iter().copied())
                .collect(),
        }
    }
}

impl TryFrom<Vec<Point3>> for PointCloud {
    type Error = Error;

    fn try_from(points: Vec<Point3>) -> Result<Self> {
        Self::new(points)
    }
}

/// Centering and isotropic scaling that maps a cloud into the unit ball.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationTransform {
    pub centroid: Point3,
    pub scale: f64,
}

impl NormalizationTransform {
    pub fn identity() -> Self {
        Self {
            centroid: [0.0; 3],
            scale: 1.0,
        }
    }

    pub fn apply_point(&self, p: &Point3) -> Point3 {
        scale(&sub(p, &self.centroid), 1.0 / self.scale)
    }

    pub fn invert_point(&self, p: &Point3) -> Point3 {
        add(&scale(p, self.scale), &self.centroid)
    }

    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud {
            points: cloud.points.iter().map(|p| self.apply_point(p)).collect(),
        }
    }

    pub fn invert(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud {
            points: cloud.points.iter().map(|p| self.invert_point(p)).collect(),
        }
    }
}

/// Centers the cloud on its centroid and scales it so the farthest point
/// lies on the unit sphere. A cloud whose points all coincide keeps scale 1.
pub fn normalize(cloud: &PointCloud) -> Result<(PointCloud, NormalizationTransform)> {
    let centroid = cloud.centroid().ok_or(Error::Empty("point cloud"))?;
    let radius = cloud
        .points
        .iter()
        .map(|p| norm(&sub(p, &centroid)))
        .fold(0.0, f64::max);
    let scale = if radius > 0.0 && radius.is_finite() {
        radius
    } else {
        1.0
    };
    let transform = NormalizationTransform { centroid, scale };
    Ok((transform.apply(cloud), transform))
}

/// A triangle mesh with validated face indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Point3>,
    faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        for (fi, f) in faces.iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&i| i >= vertices.len()) {
                return Err(Error::InvalidMesh(format!(
                    "face {fi} references vertex {bad}, mesh has {} vertices",
                    vertices.len()
                )));
            }
            if f[0] == f[1] && f[1] == f[2] {
                return Err(Error::InvalidMesh(format!(
                    "face {fi} is degenerate ({} repeated)",
                    f[0]
                )));
            }
        }
        if let Some(i) = vertices
            .iter()
            .position(|p| p.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::NonFiniteCoordinate(i));
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn triangle(&self, face: usize) -> [Point3; 3] {
        let f = self.faces[face];
        [
            self.vertices[f[0]],
            self.vertices[f[1]],
            self.vertices[f[2]],
        ]
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.triangle(face);
        0.5 * norm(&cross(&sub(&b, &a), &sub(&c, &a)))
    }
}

/// A fixed-size neighborhood cut from a larger cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub cloud: PointCloud,
    pub seed_index: usize,
    /// Indices of the patch points in the parent cloud.
    pub indices: Vec<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn rejects_non_finite() {
        assert!(PointCloud::new(vec![[0.0, f64::NAN, 0.0]]).is_err());
        assert!(PointCloud::new(vec![[0.0, 1.0, f64::INFINITY]]).is_err());
    }

    #[test]
    fn normalize_two_points() {
        let cloud = PointCloud::new(vec![[2.0, 0.0, 0.0], [4.0, 0.0, 0.0]]).unwrap();
        let (out, t) = normalize(&cloud).unwrap();
        assert_eq!(out.points(), &[[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert_eq!(t.centroid, [3.0, 0.0, 0.0]);
        assert_eq!(t.scale, 1.0);
    }

    #[test]
    fn normalize_identical_points() {
        let cloud = PointCloud::new(vec![[1.0, 2.0, 3.0]; 4]).unwrap();
        let (out, t) = normalize(&cloud).unwrap();
        assert_eq!(t.scale, 1.0);
        assert_eq!(t.centroid, [1.0, 2.0, 3.0]);
        assert!(out.points().iter().all(|p| *p == [0.0; 3]));
    }

    #[test]
    fn normalize_empty_fails() {
        assert!(normalize(&PointCloud::empty()).is_err());
    }

    #[test]
    fn normalize_is_idempotent_on_normalized_cloud() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let cloud = PointCloud::new(
            (0..64)
                .map(|_| {
                    [
                        rng.gen_range(-5.0..5.0),
                        rng.gen_range(0.0..1.0),
                        rng.gen_range(-1.0..3.0),
                    ]
                })
                .collect(),
        )
        .unwrap();
        let (once, _) = normalize(&cloud).unwrap();
        let (twice, t) = normalize(&once).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-9);
        for (a, b) in once.points().iter().zip(twice.points()) {
            assert!(norm(&sub(a, b)) < 1e-9);
        }
    }

    #[test]
    fn mesh_validation() {
        let v = vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert!(TriangleMesh::new(v.clone(), vec![[0, 1, 3]]).is_err());
        assert!(TriangleMesh::new(v.clone(), vec![[1, 1, 1]]).is_err());
        let m = TriangleMesh::new(v, vec![[0, 1, 2]]).unwrap();
        assert!((m.face_area(0) - 0.5).abs() < 1e-15);
    }
}
