use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smog_core::autodiff::{gradcheck, Graph};
use smog_core::geometry::cloud::{Point3, PointCloud, TriangleMesh};
use smog_core::losses::{self, tape, LossWeights, ProjectionConfig};

fn d2(a: &Point3, b: &Point3) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

fn brute_min(p: &Point3, z: &[Point3]) -> f64 {
    z.iter().map(|q| d2(p, q)).fold(f64::INFINITY, f64::min)
}

fn brute_directed(x: &[Point3], z: &[Point3]) -> f64 {
    x.iter().map(|p| brute_min(p, z)).sum::<f64>() / x.len() as f64
}

fn brute_hausdorff(x: &[Point3], z: &[Point3]) -> f64 {
    let h =
        |a: &[Point3], b: &[Point3]| a.iter().map(|p| brute_min(p, b)).fold(0.0, f64::max).sqrt();
    h(x, z).max(h(z, x))
}

fn brute_projection(x: &[Point3], z: &[Point3], alpha: f64, k: usize) -> f64 {
    let mut total = 0.0;
    for p in x {
        let mut idx: Vec<usize> = (0..z.len()).collect();
        idx.sort_by(|&a, &b| d2(p, &z[a]).total_cmp(&d2(p, &z[b])).then(a.cmp(&b)));
        idx.truncate(k.min(z.len()));
        let w: Vec<f64> = idx.iter().map(|&j| (-alpha * d2(p, &z[j])).exp()).collect();
        let s: f64 = w.iter().sum();
        let mut proj = [0.0; 3];
        for (&j, wj) in idx.iter().zip(&w) {
            for a in 0..3 {
                proj[a] += wj / s * z[j][a];
            }
        }
        total += d2(p, &proj);
    }
    total / x.len() as f64
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
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

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-300)
}

#[test]
fn metrics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let cfg = ProjectionConfig {
        sharpness: 10.0,
        neighbor_count: 4,
    };
    for _ in 0..100 {
        let (n, m) = (rng.gen_range(1..200), rng.gen_range(1..200));
        let x = random_cloud(&mut rng, n);
        let z = random_cloud(&mut rng, m);
        let (xc, zc) = (
            PointCloud::new(x.clone()).unwrap(),
            PointCloud::new(z.clone()).unwrap(),
        );
        let (dxz, dzx) = (brute_directed(&x, &z), brute_directed(&z, &x));
        assert!(close(losses::chamfer(&xc, &zc).unwrap(), dxz + dzx));
        assert!(close(losses::acd(&xc, &zc).unwrap(), dxz.max(dzx)));
        assert!(close(
            losses::hausdorff(&xc, &zc).unwrap(),
            brute_hausdorff(&x, &z)
        ));
        assert!(close(
            losses::projection_distance(&xc, &zc, &cfg).unwrap(),
            brute_projection(&x, &z, cfg.sharpness, cfg.neighbor_count)
        ));
    }
}

#[test]
fn sharp_projection_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = ProjectionConfig::default();
    let x = random_cloud(&mut rng, 120);
    let z = random_cloud(&mut rng, 90);
    let got = losses::projection_distance(
        &PointCloud::new(x.clone()).unwrap(),
        &PointCloud::new(z.clone()).unwrap(),
        &cfg,
    )
    .unwrap();
    let want = brute_projection(&x, &z, cfg.sharpness, cfg.neighbor_count);
    assert!(close(got, want), "{got} vs {want}");
}

#[test]
fn p2f_single_triangle() {
    let mesh = TriangleMesh::new(
        vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        vec![[0, 1, 2]],
    )
    .unwrap();
    let pts = PointCloud::new(vec![[0.2, 0.2, 0.5], [0.1, 0.1, -1.5], [2.0, 0.0, 0.0]]).unwrap();
    let (mean, std) = losses::p2f(&pts, &mesh).unwrap();
    let d = [0.5, 1.5, 1.0];
    let m = d.iter().sum::<f64>() / 3.0;
    let s = (d.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 3.0).sqrt();
    assert!((mean - m).abs() < 1e-12 && (std - s).abs() < 1e-12);
}

#[test]
fn tape_losses_match_plain() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = ProjectionConfig::default();
    let x = random_cloud(&mut rng, 40);
    let z = random_cloud(&mut rng, 55);
    let (xc, zc) = (
        PointCloud::new(x.clone()).unwrap(),
        PointCloud::new(z.clone()).unwrap(),
    );
    let mut g = Graph::<f64>::new();
    let xv = g.constant(xc.flat(), &[40, 3]).unwrap();
    let zv = g.constant(zc.flat(), &[55, 3]).unwrap();
    let pairs = [
        (
            tape::chamfer(&mut g, xv, zv).unwrap(),
            losses::chamfer(&xc, &zc).unwrap(),
        ),
        (
            tape::acd(&mut g, xv, zv).unwrap(),
            losses::acd(&xc, &zc).unwrap(),
        ),
        (
            tape::projection_loss(&mut g, xv, zv, &cfg).unwrap(),
            losses::projection_loss(&xc, &zc, &cfg).unwrap(),
        ),
    ];
    for (v, want) in pairs {
        assert!(close(g.value(v)[0], want));
    }
}

#[test]
fn tape_losses_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let z = random_cloud(&mut rng, 30);
    let zf: Vec<f64> = z.iter().flatten().copied().collect();
    let x: Vec<f64> = random_cloud(&mut rng, 20).into_iter().flatten().collect();
    let cfg = ProjectionConfig {
        sharpness: 20.0,
        neighbor_count: 4,
    };
    let err = gradcheck(
        |g, v| {
            let zv = g.constant(zf.clone(), &[30, 3])?;
            tape::projection_loss(g, v, zv, &cfg)
        },
        &x,
        &[20, 3],
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-5, "projection {err}");
    let err = gradcheck(
        |g, v| {
            let zv = g.constant(zf.clone(), &[30, 3])?;
            tape::chamfer(g, v, zv)
        },
        &x,
        &[20, 3],
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-5, "chamfer {err}");
    let err = gradcheck(
        |g, v| {
            let zv = g.constant(zf.clone(), &[30, 3])?;
            tape::acd(g, v, zv)
        },
        &x,
        &[20, 3],
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-5, "acd {err}");
}

#[test]
fn zero_projection_weights_leave_acd() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = PointCloud::new(random_cloud(&mut rng, 12)).unwrap();
    let b = PointCloud::new(random_cloud(&mut rng, 15)).unwrap();
    let w = LossWeights {
        lambda1: 0.0,
        lambda2: 0.0,
        lambda3: 2.0,
    };
    let total = losses::total_loss(&a, &a, &b, &a, &b, &w, &ProjectionConfig::default()).unwrap();
    assert_eq!(total, 2.0 * losses::acd(&a, &b).unwrap());
}

fn cloud_strategy() -> impl Strategy<Value = Vec<Point3>> {
    prop::collection::vec(prop::array::uniform3(-5.0..5.0f64), 1..40)
}

proptest! {
    #[test]
    fn metric_symmetry_and_bounds(x in cloud_strategy(), z in cloud_strategy()) {
        let (xc, zc) = (PointCloud::new(x).unwrap(), PointCloud::new(z).unwrap());
        let cd = losses::chamfer(&xc, &zc).unwrap();
        let acd = losses::acd(&xc, &zc).unwrap();
        let hd = losses::hausdorff(&xc, &zc).unwrap();
        prop_assert_eq!(cd, losses::chamfer(&zc, &xc).unwrap());
        prop_assert_eq!(hd, losses::hausdorff(&zc, &xc).unwrap());
        prop_assert!(acd <= cd && cd <= 2.0 * acd + 1e-12);
        prop_assert!(acd <= hd * hd + 1e-12);
        prop_assert_eq!(losses::chamfer(&xc, &xc).unwrap(), 0.0);
    }
}
