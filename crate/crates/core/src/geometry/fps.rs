use super::cloud::{dist2, Point3, PointCloud};
use crate::error::{Error, Result};

/// Greedy farthest-point sampling.
///
/// The first selected index is `start_index`; every following pick maximizes
/// the squared distance to the already-selected set, lower index first on ties.
pub fn farthest_point_sample(
    points: &PointCloud,
    m: usize,
    start_index: usize,
) -> Result<Vec<usize>> {
    farthest_point_sample_slice(points.points(), m, start_index)
}

pub fn farthest_point_sample_slice(
    points: &[Point3],
    m: usize,
    start_index: usize,
) -> Result<Vec<usize>> {
    let n = points.len();
    if m == 0 {
        return Err(Error::EmptyQuery);
    }
    if m > n {
        return Err(Error::InsufficientPoints {
            needed: m,
            available: n,
        });
    }
    if start_index >= n {
        return Err(Error::IndexOutOfRange {
            index: start_index,
            len: n,
        });
    }
    let mut selected = Vec::with_capacity(m);
    let mut min_d = vec![f64::INFINITY; n];
    let mut taken = vec![false; n];
    let mut current = start_index;
    for _ in 0..m {
        selected.push(current);
        taken[current] = true;
        let c = points[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let d = dist2(p, &c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        if best == usize::MAX {
            break;
        }
        current = best;
    }
    Ok(selected)
}
