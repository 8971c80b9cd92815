//! Point Transformer Layer with vector attention.
//!
//! For point `i` with neighbours `j ∈ N(i)`:
//!
//! ```text
//! δᵢⱼ = η(pᵢ − pⱼ)
//! fᵢ  = Σⱼ softmaxⱼ(γ(β(xᵢ) − ψ(xⱼ) + δᵢⱼ)) ⊙ (α(xⱼ) + δᵢⱼ)
//! ```
//!
//! The softmax runs over the neighbour axis separately for every channel.

use rand_chacha::ChaCha8Rng;

use super::layers::{Linear, Mlp};
use crate::autodiff::{Graph, ParamStore, Real, Var};
use crate::error::{Error, Result};
use crate::geometry::cloud::Point3;
use crate::geometry::KdTree;

#[derive(Debug, Clone)]
pub struct PtlParams {
    pub alpha: Linear,
    pub beta: Linear,
    pub psi: Linear,
    /// Attention MLP.
    pub gamma: Mlp,
    /// Positional MLP on relative coordinates.
    pub eta: Mlp,
    pub width: usize,
}

impl PtlParams {
    pub fn new(
        store: &mut ParamStore<f64>,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_width: usize,
        width: usize,
    ) -> Result<Self> {
        Ok(Self {
            alpha: Linear::new(store, rng, &format!("{name}.alpha"), in_width, width)?,
            beta: Linear::new(store, rng, &format!("{name}.beta"), in_width, width)?,
            psi: Linear::new(store, rng, &format!("{name}.psi"), in_width, width)?,
            gamma: Mlp::new(store, rng, &format!("{name}.gamma"), &[width, width, width])?,
            eta: Mlp::new(store, rng, &format!("{name}.eta"), &[3, width, width])?,
            width,
        })
    }
}

/// Flattened `N×k` table of the k nearest points (self included) of every point.
/// Returns the neighbourhood size actually used, which is `min(k, N)`.
pub fn neighbor_table(points: &[Point3], k: usize) -> Result<(Vec<usize>, usize)> {
    if points.is_empty() {
        return Err(Error::Empty("point set"));
    }
    if k == 0 {
        return Err(Error::EmptyQuery);
    }
    let k = k.min(points.len());
    let tree = KdTree::new(points);
    let mut flat = Vec::with_capacity(points.len() * k);
    for q in points {
        flat.extend(tree.knn(q, k)?);
    }
    Ok((flat, k))
}

/// Vector attention over a precomputed neighbour table.
///
/// `positions` is `[N, 3]`, `features` is `[N, C]`, `neighbors` holds `N·k`
/// indices with point `i`'s neighbours at `i·k..(i+1)·k`.
pub fn ptl_forward<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    p: &PtlParams,
    positions: Var,
    features: Var,
    neighbors: &[usize],
    k: usize,
) -> Result<Var> {
    let n = g.shape(features)[0];
    if g.shape(positions) != [n, 3] {
        return Err(Error::ShapeMismatch {
            op: "ptl_forward",
            lhs: g.shape(positions).to_vec(),
            rhs: vec![n, 3],
        });
    }
    if k == 0 || neighbors.len() != n * k {
        return Err(Error::InvalidArgument(format!(
            "neighbour table has {} entries, expected {n}×{k}",
            neighbors.len()
        )));
    }
    let a = p.alpha.forward(g, store, features)?;
    let b = p.beta.forward(g, store, features)?;
    let c = p.psi.forward(g, store, features)?;

    if g.is_frozen() && n * k * p.width > CHUNK_ELEMENTS {
        return ptl_chunked(g, store, p, positions, [a, b, c], neighbors, k);
    }
    let centers: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat(i).take(k)).collect();
    let pi = g.gather(positions, &centers)?;
    let pj = g.gather(positions, neighbors)?;
    let bi = g.gather(b, &centers)?;
    let cj = g.gather(c, neighbors)?;
    let aj = g.gather(a, neighbors)?;
    attend(g, store, p, [pi, pj, bi, cj, aj], n, k)
}

/// Neighbourhood working-set size above which forward-only passes are chunked.
const CHUNK_ELEMENTS: usize = 1 << 20;

/// Attention given per-pair tensors `[pᵢ, pⱼ, β(xᵢ), ψ(xⱼ), α(xⱼ)]`, each `[rows·k, ·]`.
fn attend<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    p: &PtlParams,
    pairs: [Var; 5],
    rows: usize,
    k: usize,
) -> Result<Var> {
    let [pi, pj, bi, cj, aj] = pairs;
    let d = p.width;
    let rel = g.sub(pi, pj)?;
    let delta = p.eta.forward(g, store, rel)?;
    let logits = g.sub(bi, cj)?;
    let logits = g.add(logits, delta)?;
    let logits = p.gamma.forward(g, store, logits)?;
    let logits = g.reshape(logits, &[rows, k, d])?;
    let weights = g.softmax(logits, 1)?;
    let values = g.add(aj, delta)?;
    let values = g.reshape(values, &[rows, k, d])?;
    let weighted = g.mul(weights, values)?;
    g.sum(weighted, 1)
}

/// Same result as the dense path, evaluated block by block on scratch tapes.
fn ptl_chunked<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    p: &PtlParams,
    positions: Var,
    [a, b, c]: [Var; 3],
    neighbors: &[usize],
    k: usize,
) -> Result<Var> {
    let n = g.shape(a)[0];
    let d = p.width;
    let rows_per_chunk = (CHUNK_ELEMENTS / (k * d)).max(1);
    let gather = |src: &[T], width: usize, idx: &mut dyn Iterator<Item = usize>| -> Vec<T> {
        let mut out = Vec::new();
        for i in idx {
            out.extend_from_slice(&src[i * width..(i + 1) * width]);
        }
        out
    };
    let (pv, av, bv, cv) = (g.value(positions), g.value(a), g.value(b), g.value(c));
    let mut out = Vec::with_capacity(n * d);
    let mut start = 0;
    while start < n {
        let end = (start + rows_per_chunk).min(n);
        let rows = end - start;
        let nb = &neighbors[start * k..end * k];
        let mut centers = (start..end).flat_map(|i| std::iter::repeat(i).take(k));
        let mut sub = Graph::<T>::inference();
        let pi = sub.constant(gather(pv, 3, &mut centers.clone()), &[rows * k, 3])?;
        let pj = sub.constant(gather(pv, 3, &mut nb.iter().copied()), &[rows * k, 3])?;
        let bi = sub.constant(gather(bv, d, &mut centers), &[rows * k, d])?;
        let cj = sub.constant(gather(cv, d, &mut nb.iter().copied()), &[rows * k, d])?;
        let aj = sub.constant(gather(av, d, &mut nb.iter().copied()), &[rows * k, d])?;
        let r = attend(&mut sub, store, p, [pi, pj, bi, cj, aj], rows, k)?;
        out.extend_from_slice(sub.value(r));
        start = end;
    }
    g.constant(out, &[n, d])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn table_includes_self_and_caps_k() {
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [5.0, 0.0, 0.0]];
        let (t, k) = neighbor_table(&pts, 2).unwrap();
        assert_eq!(k, 2);
        assert_eq!(t, vec![0, 1, 1, 0, 2, 1]);
        let (t, k) = neighbor_table(&pts, 10).unwrap();
        assert_eq!(k, 3);
        assert_eq!(t.len(), 9);
    }

    #[test]
    fn zero_weights_zero_output() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = PtlParams::new(&mut store, &mut rng, "ptl", 4, 4).unwrap();
        for (_, t) in store.iter_mut() {
            t.values.iter_mut().for_each(|v| *v = 0.0);
        }
        let pts: Vec<Point3> = (0..5)
            .map(|i| [i as f64, (i * i) as f64 * 0.1, 0.0])
            .collect();
        let (nb, k) = neighbor_table(&pts, 3).unwrap();
        let mut g = Graph::<f64>::new();
        let pos = g
            .constant(pts.iter().flatten().copied().collect(), &[5, 3])
            .unwrap();
        let f = g
            .constant((0..20).map(|i| i as f64 * 0.1).collect(), &[5, 4])
            .unwrap();
        let out = ptl_forward(&mut g, &store, &p, pos, f, &nb, k).unwrap();
        assert_eq!(g.shape(out), &[5, 4]);
        assert!(g.value(out).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bad_table_rejected() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = PtlParams::new(&mut store, &mut rng, "ptl", 2, 2).unwrap();
        let mut g = Graph::<f64>::new();
        let pos = g.constant(vec![0.0; 6], &[2, 3]).unwrap();
        let f = g.constant(vec![0.0; 4], &[2, 2]).unwrap();
        assert!(ptl_forward(&mut g, &store, &p, pos, f, &[0, 1, 1], 2).is_err());
    }
}
