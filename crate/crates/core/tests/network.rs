use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smog_core::autodiff::{gradcheck_params, Graph, ParamStore};
use smog_core::geometry::cloud::{normalize, Point3, PointCloud};
use smog_core::network::attention::MultiHeadAttention;
use smog_core::network::fourier::{fourier_encode, fourier_features};
use smog_core::network::layers::{Linear, Mlp};
use smog_core::network::model::points_constant;
use smog_core::network::{neighbor_table, ptl_forward, Encoded, Model, ModelConfig, PtlParams};

fn linear(store: &ParamStore<f64>, l: &Linear, x: &[f64]) -> Vec<f64> {
    let w = &store.get(l.weight).values;
    let b = &store.get(l.bias).values;
    (0..l.fan_out)
        .map(|o| {
            b[o] + (0..l.fan_in)
                .map(|i| x[i] * w[i * l.fan_out + o])
                .sum::<f64>()
        })
        .collect()
}

fn mlp(store: &ParamStore<f64>, m: &Mlp, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for (i, l) in m.layers.iter().enumerate() {
        if i > 0 {
            h.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        h = linear(store, l, &h);
    }
    h
}

fn random_points(n: usize, seed: u64) -> Vec<Point3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ]
        })
        .collect()
}

fn brute_knn(pts: &[Point3], i: usize, k: usize) -> Vec<usize> {
    let d = |j: usize| (0..3).map(|a| (pts[i][a] - pts[j][a]).powi(2)).sum::<f64>();
    let mut idx: Vec<usize> = (0..pts.len()).collect();
    idx.sort_by(|&a, &b| d(a).total_cmp(&d(b)).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn ptl_oracle(
    store: &ParamStore<f64>,
    p: &PtlParams,
    pts: &[Point3],
    feats: &[Vec<f64>],
    k: usize,
) -> Vec<Vec<f64>> {
    let d = p.width;
    (0..pts.len())
        .map(|i| {
            let nb = brute_knn(pts, i, k);
            let bi = linear(store, &p.beta, &feats[i]);
            let mut logits = Vec::new();
            let mut values = Vec::new();
            for &j in &nb {
                let rel: Vec<f64> = (0..3).map(|a| pts[i][a] - pts[j][a]).collect();
                let delta = mlp(store, &p.eta, &rel);
                let cj = linear(store, &p.psi, &feats[j]);
                let aj = linear(store, &p.alpha, &feats[j]);
                let pre: Vec<f64> = (0..d).map(|c| bi[c] - cj[c] + delta[c]).collect();
                logits.push(mlp(store, &p.gamma, &pre));
                values.push((0..d).map(|c| aj[c] + delta[c]).collect::<Vec<f64>>());
            }
            (0..d)
                .map(|c| {
                    let mx = logits
                        .iter()
                        .map(|l| l[c])
                        .fold(f64::NEG_INFINITY, f64::max);
                    let w: Vec<f64> = logits.iter().map(|l| (l[c] - mx).exp()).collect();
                    let z: f64 = w.iter().sum();
                    w.iter().zip(&values).map(|(wj, v)| wj / z * v[c]).sum()
                })
                .collect()
        })
        .collect()
}

fn run_ptl(
    store: &ParamStore<f64>,
    p: &PtlParams,
    pts: &[Point3],
    feats: &[f64],
    k: usize,
    frozen: bool,
) -> Vec<f64> {
    let (nb, k) = neighbor_table(pts, k).unwrap();
    let mut g = if frozen {
        Graph::inference()
    } else {
        Graph::new()
    };
    let pos = points_constant(&mut g, pts).unwrap();
    let f = g
        .constant(feats.to_vec(), &[pts.len(), feats.len() / pts.len()])
        .unwrap();
    let out = ptl_forward(&mut g, store, p, pos, f, &nb, k).unwrap();
    g.value(out).to_vec()
}

#[test]
fn ptl_matches_dense_loop_oracle() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = PtlParams::new(&mut store, &mut rng, "ptl", 4, 4).unwrap();
    let pts = random_points(6, 5);
    let feats: Vec<Vec<f64>> = (0..6)
        .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let flat: Vec<f64> = feats.iter().flatten().copied().collect();
    let got = run_ptl(&store, &p, &pts, &flat, 3, false);
    let want = ptl_oracle(&store, &p, &pts, &feats, 3);
    for (a, b) in got.iter().zip(want.iter().flatten()) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn ptl_permutation_equivariance() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = PtlParams::new(&mut store, &mut rng, "ptl", 5, 8).unwrap();
    let pts = random_points(40, 9);
    let feats: Vec<f64> = (0..40 * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let base = run_ptl(&store, &p, &pts, &feats, 6, false);
    for _ in 0..20 {
        let mut perm: Vec<usize> = (0..40).collect();
        perm.shuffle(&mut rng);
        let pp: Vec<Point3> = perm.iter().map(|&i| pts[i]).collect();
        let pf: Vec<f64> = perm
            .iter()
            .flat_map(|&i| feats[i * 5..(i + 1) * 5].to_vec())
            .collect();
        let out = run_ptl(&store, &p, &pp, &pf, 6, false);
        for (r, &i) in perm.iter().enumerate() {
            for c in 0..8 {
                assert!((out[r * 8 + c] - base[i * 8 + c]).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn chunked_forward_matches_dense() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = PtlParams::new(&mut store, &mut rng, "ptl", 3, 16).unwrap();
    let n = 4500;
    let pts = random_points(n, 1);
    let feats: Vec<f64> = pts.iter().flatten().copied().collect();
    let dense = run_ptl(&store, &p, &pts, &feats, 16, false);
    let chunked = run_ptl(&store, &p, &pts, &feats, 16, true);
    assert_eq!(dense.len(), chunked.len());
    for (a, b) in dense.iter().zip(&chunked) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn extract_features_equivariant_and_translation_free() {
    let model = Model::<f64>::new(ModelConfig::toy()).unwrap();
    let raw = PointCloud::new(random_points(64, 3)).unwrap();
    let (cloud, _) = normalize(&raw).unwrap();
    let feats = |pts: &[Point3]| {
        let mut g = Graph::inference();
        let (_, f, _) = model.extract_features(&mut g, pts).unwrap();
        assert_eq!(g.shape(f), &[pts.len(), 16]);
        g.value(f).to_vec()
    };
    let base = feats(cloud.points());
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let mut perm: Vec<usize> = (0..64).collect();
        perm.shuffle(&mut rng);
        let out = feats(&perm.iter().map(|&i| cloud.points()[i]).collect::<Vec<_>>());
        for (r, &i) in perm.iter().enumerate() {
            for c in 0..16 {
                assert!((out[r * 16 + c] - base[i * 16 + c]).abs() < 1e-6);
            }
        }
    }
    let shifted = PointCloud::new(
        raw.points()
            .iter()
            .map(|p| [p[0] + 3.0, p[1] - 1.0, p[2] + 0.5])
            .collect(),
    )
    .unwrap();
    let (shifted, _) = normalize(&shifted).unwrap();
    for (a, b) in feats(shifted.points()).iter().zip(&base) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn multi_head_attention_matches_reference() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mha = MultiHeadAttention::new(&mut store, &mut rng, "attn", 8, 2).unwrap();
    let q: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let ctx: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();

    let mut g = Graph::new();
    let qv = g
        .constant(q.iter().flatten().copied().collect(), &[2, 8])
        .unwrap();
    let cv = g
        .constant(ctx.iter().flatten().copied().collect(), &[3, 8])
        .unwrap();
    let out = mha.forward(&mut g, &store, qv, cv).unwrap();

    let qs: Vec<Vec<f64>> = q.iter().map(|x| linear(&store, &mha.query, x)).collect();
    let ks: Vec<Vec<f64>> = ctx.iter().map(|x| linear(&store, &mha.key, x)).collect();
    let vs: Vec<Vec<f64>> = ctx.iter().map(|x| linear(&store, &mha.value, x)).collect();
    let scale = 1.0 / 2.0;
    for i in 0..2 {
        let mut joined = vec![0.0; 8];
        for h in 0..2 {
            let r = h * 4..(h + 1) * 4;
            let s: Vec<f64> = ks
                .iter()
                .map(|k| scale * r.clone().map(|t| qs[i][t] * k[t]).sum::<f64>())
                .collect();
            let z: f64 = s.iter().map(|v| v.exp()).sum();
            for t in r.clone() {
                joined[t] = s.iter().zip(&vs).map(|(sj, v)| sj.exp() / z * v[t]).sum();
            }
        }
        let want = linear(&store, &mha.output, &joined);
        for t in 0..8 {
            assert!((g.value(out)[i * 8 + t] - want[t]).abs() < 1e-12);
        }
    }
}

fn sphere(n: usize) -> PointCloud {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    PointCloud::new(
        (0..n)
            .map(|i| {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let t = golden * i as f64;
                [r * t.cos(), r * t.sin(), z]
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn decoder_any_query_count_and_memory_order_free() {
    let model = Model::<f64>::new(ModelConfig::toy()).unwrap();
    let cloud = sphere(24);
    let mut g = Graph::inference();
    let enc = model.encode(&mut g, &cloud).unwrap();
    for m in [1usize, 7, 613] {
        let q = points_constant(&mut g, &sphere(m).points().to_vec()).unwrap();
        let out = model.decode(&mut g, &enc, q).unwrap();
        assert_eq!(g.shape(out), &[m, 3]);
    }
    let q = points_constant(&mut g, sphere(9).points()).unwrap();
    let base = model.decode(&mut g, &enc, q).unwrap();
    let mut perm: Vec<usize> = (0..24).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    let memory = g.gather(enc.memory, &perm).unwrap();
    let shuffled = Encoded { memory, ..enc };
    let out = model.decode(&mut g, &shuffled, q).unwrap();
    for (a, b) in g.value(out).iter().zip(g.value(base)) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn refine_is_permutation_equivariant() {
    let mut model = Model::<f64>::new(ModelConfig::toy()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for (_, p) in model.params_mut().iter_mut() {
        if p.name.starts_with("refine.head") {
            p.values
                .iter_mut()
                .for_each(|v| *v = rng.gen_range(-0.3..0.3));
        }
    }
    let cloud = sphere(20);
    let coarse_pts = random_points(50, 4);
    let comps: Vec<usize> = (0..50).map(|i| i % 20).collect();
    let run = |pts: &[Point3], comps: &[usize]| {
        let mut g = Graph::new();
        let enc = model.encode(&mut g, &cloud).unwrap();
        let c = points_constant(&mut g, pts).unwrap();
        let r = model.refine(&mut g, &enc, c, comps, 2.0).unwrap();
        g.value(r.points).to_vec()
    };
    let base = run(&coarse_pts, &comps);
    assert!(base
        .iter()
        .zip(coarse_pts.iter().flatten())
        .any(|(a, b)| a != b));
    let mut perm: Vec<usize> = (0..50).collect();
    perm.shuffle(&mut rng);
    let out = run(
        &perm.iter().map(|&i| coarse_pts[i]).collect::<Vec<_>>(),
        &perm.iter().map(|&i| comps[i]).collect::<Vec<_>>(),
    );
    for (r, &i) in perm.iter().enumerate() {
        for a in 0..3 {
            assert!((out[r * 3 + a] - base[i * 3 + a]).abs() < 1e-9);
        }
    }
}

#[test]
fn fourier_contract() {
    let z = fourier_features(&[[0.0; 3]], 8);
    assert!(z[..24].iter().all(|&v| v == 0.0));
    assert!(z[24..].iter().all(|&v| v == 1.0));

    let pts = random_points(50, 6);
    let reference = fourier_features(&pts, 8);
    assert!(reference.iter().all(|v| v.abs() <= 1.0));
    let mut g = Graph::<f64>::new();
    let x = points_constant(&mut g, &pts).unwrap();
    let enc = fourier_encode(&mut g, x, 8).unwrap();
    for (a, b) in g.value(enc).iter().zip(&reference) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn fourier_collision_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut unit = || loop {
        let v: [f64; 3] = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-3 && n <= 1.0 {
            break [v[0] / n, v[1] / n, v[2] / n];
        }
    };
    for _ in 0..10_000 {
        let (a, b) = (unit(), unit());
        let fa = fourier_features(&[a], 8);
        let fb = fourier_features(&[b], 8);
        let d: f64 = fa.iter().zip(&fb).map(|(x, y)| (x - y).powi(2)).sum();
        assert!(d > 0.0, "collision between {a:?} and {b:?}");
    }
}

#[test]
fn coord_head_gradcheck() {
    let model = Model::<f64>::new(ModelConfig::toy()).unwrap();
    let head = model.layout().coord_head.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<f64> = (0..4 * 16).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let report = gradcheck_params(
        model.params(),
        |g, s| {
            let xv = g.constant(x.clone(), &[4, 16])?;
            let y = head.forward(g, s, xv)?;
            let sq = g.square(y)?;
            g.sum_all(sq)
        },
        1e-6,
        8,
    )
    .unwrap();
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}
