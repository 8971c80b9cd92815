//! Overlapping geodesic patches and their recombination.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::cloud::{dist2, NormalizationTransform, Patch, PointCloud};
use super::fps::farthest_point_sample_slice;
use super::knn::KdTree;
use crate::error::{Error, Result};

/// Neighbor count of the graph used for geodesic distances.
pub const GRAPH_NEIGHBORS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Dist(u64);

fn key(d: f64) -> Dist {
    // Non-negative finite doubles order the same as their bit patterns.
    Dist(d.to_bits())
}

/// Symmetric kNN graph with Euclidean edge lengths.
fn knn_graph(cloud: &PointCloud, k: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    let pts = cloud.points();
    let n = pts.len();
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let k = k.min(n.saturating_sub(1));
    if k == 0 {
        return Ok(adj);
    }
    let tree = KdTree::new(pts);
    for (i, p) in pts.iter().enumerate() {
        // k + 1 because the query point itself is returned first (or a duplicate of it).
        for j in tree.knn(p, k + 1)? {
            if j == i {
                continue;
            }
            let w = dist2(p, &pts[j]).sqrt();
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
    }
    for list in &mut adj {
        list.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        list.dedup_by_key(|e| e.0);
    }
    Ok(adj)
}

/// The `size` nodes closest to `seed` in graph distance, or `None` if the
/// seed's component holds fewer than `size` nodes.
fn geodesic_neighborhood(
    adj: &[Vec<(usize, f64)>],
    seed: usize,
    size: usize,
) -> Option<Vec<usize>> {
    let n = adj.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    let mut out = Vec::with_capacity(size);
    let mut heap = BinaryHeap::new();
    dist[seed] = 0.0;
    heap.push(Reverse((key(0.0), seed)));
    while let Some(Reverse((_, u))) = heap.pop() {
        if done[u] {
            continue;
        }
        done[u] = true;
        out.push(u);
        if out.len() == size {
            return Some(out);
        }
        for &(v, w) in &adj[u] {
            let nd = dist[u] + w;
            if !done[v] && nd < dist[v] {
                dist[v] = nd;
                heap.push(Reverse((key(nd), v)));
            }
        }
    }
    None
}

/// Cuts the cloud into overlapping patches of `patch_size` points.
///
/// Seeds are chosen by farthest-point sampling until the patches can cover
/// the cloud `target_coverage` times over; each patch collects the points
/// nearest its seed in graph distance over a kNN graph. Seeds whose graph
/// component is too small fall back to Euclidean kNN. Extra patches are
/// added at uncovered points until every point belongs to a patch.
pub fn extract_patches(
    cloud: &PointCloud,
    patch_size: usize,
    target_coverage: usize,
) -> Result<Vec<Patch>> {
    let n = cloud.len();
    if patch_size == 0 {
        return Err(Error::EmptyQuery);
    }
    if patch_size > n {
        return Err(Error::InsufficientPoints {
            needed: patch_size,
            available: n,
        });
    }
    if target_coverage == 0 {
        return Err(Error::InvalidArgument(
            "target coverage must be at least 1".into(),
        ));
    }
    let adj = knn_graph(cloud, GRAPH_NEIGHBORS)?;
    let tree = KdTree::new(cloud.points());
    let seed_count = (target_coverage * n).div_ceil(patch_size).min(n);
    let seeds = farthest_point_sample_slice(cloud.points(), seed_count, 0)?;

    let make_patch = |seed: usize| -> Result<Patch> {
        let indices = match geodesic_neighborhood(&adj, seed, patch_size) {
            Some(idx) => idx,
            None => tree.knn(&cloud.points()[seed], patch_size)?,
        };
        Ok(Patch {
            cloud: cloud.select(&indices),
            seed_index: seed,
            indices,
        })
    };

    let mut covered = vec![false; n];
    let mut patches = Vec::with_capacity(seeds.len());
    for &s in &seeds {
        let p = make_patch(s)?;
        p.indices.iter().for_each(|&i| covered[i] = true);
        patches.push(p);
    }
    while let Some(s) = covered.iter().position(|c| !c) {
        let p = make_patch(s)?;
        p.indices.iter().for_each(|&i| covered[i] = true);
        patches.push(p);
    }
    Ok(patches)
}

/// De-normalizes each patch output, concatenates them, and reduces the
/// union to exactly `target_count` points by farthest-point sampling.
pub fn merge_patches(
    upsampled_patches: &[PointCloud],
    transforms: &[NormalizationTransform],
    target_count: usize,
) -> Result<PointCloud> {
    if upsampled_patches.is_empty() {
        return Err(Error::Empty("patch list"));
    }
    if upsampled_patches.len() != transforms.len() {
        return Err(Error::InvalidArgument(format!(
            "{} patches but {} transforms",
            upsampled_patches.len(),
            transforms.len()
        )));
    }
    let restored: Vec<PointCloud> = upsampled_patches
        .iter()
        .zip(transforms)
        .map(|(p, t)| t.invert(p))
        .collect();
    let all = PointCloud::concat(restored.iter());
    if target_count > all.len() {
        return Err(Error::InsufficientPoints {
            needed: target_count,
            available: all.len(),
        });
    }
    let idx = farthest_point_sample_slice(all.points(), target_count, 0)?;
    Ok(all.select(&idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| {
                    [
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ]
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn whole_cloud_patch() {
        let cloud = random_cloud(256, 1);
        let patches = extract_patches(&cloud, 256, 1).unwrap();
        assert_eq!(patches.len(), 1);
        let mut idx = patches[0].indices.clone();
        idx.sort();
        assert_eq!(idx, (0..256).collect::<Vec<_>>());
    }

    #[test]
    fn patch_larger_than_cloud() {
        assert!(extract_patches(&random_cloud(10, 1), 11, 1).is_err());
    }

    #[test]
    fn merge_errors() {
        assert!(merge_patches(&[], &[], 1).is_err());
        let p = random_cloud(1024, 2);
        let t = NormalizationTransform::identity();
        let four = vec![p.clone(), p.clone(), p.clone(), p.clone()];
        assert!(matches!(
            merge_patches(&four, &[t; 4], 8192),
            Err(Error::InsufficientPoints { .. })
        ));
    }

    #[test]
    fn merge_single_identity() {
        let p = random_cloud(1024, 3);
        let out = merge_patches(&[p.clone()], &[NormalizationTransform::identity()], 1024).unwrap();
        let mut a = out.into_points();
        let mut b = p.into_points();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(a, b);
    }
}
