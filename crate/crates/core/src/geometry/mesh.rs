use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cloud::{add, dot, scale, sub, Point3, PointCloud, TriangleMesh};
use crate::error::{Error, Result};

/// Draws `n` points uniformly over the mesh surface: faces are picked with
/// probability proportional to area, then a uniform barycentric point.
pub fn sample_mesh(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud> {
    sample_mesh_with_faces(mesh, n, seed).map(|(cloud, _)| cloud)
}

/// Like [`sample_mesh`], also returning the face each point was drawn from.
pub fn sample_mesh_with_faces(
    mesh: &TriangleMesh,
    n: usize,
    seed: u64,
) -> Result<(PointCloud, Vec<usize>)> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "sample count must be at least 1".into(),
        ));
    }
    let mut cumulative = Vec::with_capacity(mesh.faces().len());
    let mut total = 0.0;
    for f in 0..mesh.faces().len() {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::InvalidMesh("mesh has zero total area".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut faces = Vec::with_capacity(n);
    for _ in 0..n {
        let target = rng.gen::<f64>() * total;
        let face = cumulative
            .partition_point(|&c| c <= target)
            .min(cumulative.len() - 1);
        let [a, b, c] = mesh.triangle(face);
        let r1: f64 = rng.gen::<f64>().sqrt();
        let r2: f64 = rng.gen();
        let p = add(
            &add(&scale(&a, 1.0 - r1), &scale(&b, r1 * (1.0 - r2))),
            &scale(&c, r1 * r2),
        );
        points.push(p);
        faces.push(face);
    }
    Ok((PointCloud::new(points)?, faces))
}

/// Closest point on triangle `abc` to `p`, by Voronoi-region classification.
pub fn closest_point_on_triangle(p: &Point3, a: &Point3, b: &Point3, c: &Point3) -> Point3 {
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(&ab, &ap);
    let d2 = dot(&ac, &ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = sub(p, b);
    let d3 = dot(&ab, &bp);
    let d4 = dot(&ac, &bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return add(a, &scale(&ab, v));
    }
    let cp = sub(p, c);
    let d5 = dot(&ab, &cp);
    let d6 = dot(&ac, &cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return add(a, &scale(&ac, w));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return add(b, &scale(&sub(c, b), w));
    }
    let denom = va + vb + vc;
    if denom == 0.0 {
        // Collinear triangle: the edge cases above cover every segment except this fallback.
        return [a, b, c]
            .into_iter()
            .copied()
            .min_by(|x, y| super::cloud::dist2(p, x).total_cmp(&super::cloud::dist2(p, y)))
            .unwrap_or(*a);
    }
    let v = vb / denom;
    let w = vc / denom;
    add(&add(a, &scale(&ab, v)), &scale(&ac, w))
}

pub fn point_triangle_distance(p: &Point3, a: &Point3, b: &Point3, c: &Point3) -> f64 {
    let q = closest_point_on_triangle(p, a, b, c);
    super::cloud::norm(&sub(p, &q))
}

/// Minimum distance from `p` to any face of the mesh.
pub fn point_mesh_distance(p: &Point3, mesh: &TriangleMesh) -> Result<f64> {
    if mesh.faces().is_empty() {
        return Err(Error::InvalidMesh("mesh has no faces".into()));
    }
    Ok((0..mesh.faces().len())
        .map(|f| {
            let [a, b, c] = mesh.triangle(f);
            point_triangle_distance(p, &a, &b, &c)
        })
        .fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_right_triangle() -> TriangleMesh {
        TriangleMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn samples_inside_triangle() {
        let cloud = sample_mesh(&unit_right_triangle(), 1000, 7).unwrap();
        assert_eq!(cloud.len(), 1000);
        for p in cloud.points() {
            assert!(p[0] >= 0.0 && p[1] >= 0.0 && p[0] + p[1] <= 1.0 + 1e-12);
            assert_eq!(p[2], 0.0);
        }
    }

    #[test]
    fn deterministic() {
        let m = unit_right_triangle();
        assert_eq!(
            sample_mesh(&m, 50, 9).unwrap(),
            sample_mesh(&m, 50, 9).unwrap()
        );
        assert_ne!(
            sample_mesh(&m, 50, 9).unwrap(),
            sample_mesh(&m, 50, 10).unwrap()
        );
    }

    #[test]
    fn zero_area_rejected() {
        let m = TriangleMesh::new(
            vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(sample_mesh(&m, 10, 0).is_err());
    }

    #[test]
    fn distance_regions() {
        let [a, b, c] = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        // interior, above the face
        assert!((point_triangle_distance(&[0.2, 0.2, 0.5], &a, &b, &c) - 0.5).abs() < 1e-15);
        // vertex regions
        assert!(
            (point_triangle_distance(&[-1.0, -1.0, 0.0], &a, &b, &c) - 2f64.sqrt()).abs() < 1e-15
        );
        assert!((point_triangle_distance(&[2.0, 0.0, 0.0], &a, &b, &c) - 1.0).abs() < 1e-15);
        assert!((point_triangle_distance(&[0.0, 3.0, 0.0], &a, &b, &c) - 2.0).abs() < 1e-15);
        // edge regions
        assert!((point_triangle_distance(&[0.5, -2.0, 0.0], &a, &b, &c) - 2.0).abs() < 1e-15);
        assert!((point_triangle_distance(&[-3.0, 0.5, 0.0], &a, &b, &c) - 3.0).abs() < 1e-15);
        assert!(
            (point_triangle_distance(&[1.0, 1.0, 0.0], &a, &b, &c) - 0.5f64.sqrt()).abs() < 1e-15
        );
    }
}
