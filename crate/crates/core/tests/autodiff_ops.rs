use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smog_core::autodiff::{gradcheck, Bound, Graph, Var};
use smog_core::Result;

type OpFn = fn(&mut Graph<f64>, Var) -> Result<Var>;

fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Weighted sum with fixed irregular weights so every output coordinate matters.
fn weighted_sum(g: &mut Graph<f64>, y: Var) -> Result<Var> {
    let n = g.value(y).len();
    let w: Vec<f64> = (0..n)
        .map(|i| ((i * 7 + 3) % 11) as f64 / 5.0 - 1.0)
        .collect();
    let shape = g.shape(y).to_vec();
    let wv = g.constant(w, &shape)?;
    let p = g.mul(y, wv)?;
    g.sum_all(p)
}

fn check_op(name: &str, op: OpFn, shape: &[usize], lo: f64, hi: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 31 + shape.len() as u64);
    let n: usize = shape.iter().product();
    for trial in 0..10 {
        let x = random_vec(&mut rng, n, lo, hi);
        let err = gradcheck(
            |g, v| {
                let y = op(g, v)?;
                weighted_sum(g, y)
            },
            &x,
            shape,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{name} trial {trial}: relative error {err}");
    }
}

#[test]
fn elementwise_primitives() {
    check_op("relu", |g, x| g.relu(x), &[3, 4], -1.0, 1.0);
    check_op("softplus", |g, x| g.softplus(x), &[3, 4], -4.0, 4.0);
    check_op("exp", |g, x| g.exp(x), &[3, 4], -2.0, 2.0);
    check_op("sin", |g, x| g.sin(x), &[3, 4], -3.0, 3.0);
    check_op("cos", |g, x| g.cos(x), &[3, 4], -3.0, 3.0);
    check_op("sqrt", |g, x| g.sqrt(x), &[3, 4], 0.5, 3.0);
    check_op("square", |g, x| g.square(x), &[3, 4], -2.0, 2.0);
    check_op("scale", |g, x| g.scale(x, -2.5), &[5], -1.0, 1.0);
    check_op("add_scalar", |g, x| g.add_scalar(x, 0.7), &[5], -1.0, 1.0);
    check_op(
        "clamp",
        |g, x| g.clamp(x, Bound::Const(-0.5), Bound::Const(0.5)),
        &[3, 4],
        -1.0,
        1.0,
    );
}

#[test]
fn binary_primitives_with_broadcast() {
    // x is [4, 3]: rows split into a [2,3] lhs and a [3] / [2,1] rhs.
    check_op(
        "add",
        |g, x| {
            let a = g.narrow(x, 0, 0, 2)?;
            let b = g.narrow(x, 0, 2, 1)?;
            let b = g.reshape(b, &[3])?;
            g.add(a, b)
        },
        &[4, 3],
        -1.0,
        1.0,
    );
    check_op(
        "sub",
        |g, x| {
            let a = g.narrow(x, 0, 0, 2)?;
            let b = g.narrow(x, 0, 2, 2)?;
            g.sub(a, b)
        },
        &[4, 3],
        -1.0,
        1.0,
    );
    check_op(
        "mul_prefix",
        |g, x| {
            let a = g.narrow(x, 0, 0, 2)?;
            let b = g.narrow(x, 0, 2, 1)?;
            let b = g.narrow(b, 1, 0, 2)?;
            let b = g.reshape(b, &[2, 1])?;
            g.mul(a, b)
        },
        &[3, 3],
        -1.0,
        1.0,
    );
    check_op(
        "div",
        |g, x| {
            let a = g.narrow(x, 0, 0, 2)?;
            let b = g.narrow(x, 0, 2, 1)?;
            let b = g.reshape(b, &[3])?;
            g.div(a, b)
        },
        &[3, 3],
        0.5,
        2.0,
    );
    check_op(
        "maximum",
        |g, x| {
            let a = g.narrow(x, 0, 0, 1)?;
            let b = g.narrow(x, 0, 1, 1)?;
            g.maximum(a, b)
        },
        &[2, 6],
        -1.0,
        1.0,
    );
    check_op(
        "clamp_tensor_bounds",
        |g, x| {
            let v = g.narrow(x, 0, 0, 1)?;
            let hi = g.narrow(x, 0, 1, 1)?;
            let hi = g.square(hi)?;
            let lo = g.scale(hi, -1.0)?;
            g.clamp(v, Bound::Var(lo), Bound::Var(hi))
        },
        &[2, 8],
        -1.0,
        1.0,
    );
}

#[test]
fn structural_primitives() {
    check_op(
        "matmul",
        |g, x| {
            let a = g.narrow(x, 0, 0, 2)?;
            let b = g.narrow(x, 0, 2, 3)?;
            g.matmul(a, b)
        },
        &[5, 3],
        -1.0,
        1.0,
    );
    check_op(
        "matmul_t",
        |g, x| {
            let a = g.narrow(x, 0, 0, 2)?;
            let b = g.narrow(x, 0, 2, 3)?;
            g.matmul_t(a, b)
        },
        &[5, 3],
        -1.0,
        1.0,
    );
    check_op("transpose", |g, x| g.transpose(x), &[3, 4], -1.0, 1.0);
    check_op(
        "concat",
        |g, x| {
            let a = g.narrow(x, 1, 0, 1)?;
            let b = g.narrow(x, 1, 1, 3)?;
            g.concat(&[b, a, b], 1)
        },
        &[3, 4],
        -1.0,
        1.0,
    );
    check_op(
        "gather",
        |g, x| g.gather(x, &[2, 0, 2, 1, 2]),
        &[3, 4],
        -1.0,
        1.0,
    );
    check_op("sum_axis1", |g, x| g.sum(x, 1), &[2, 3, 4], -1.0, 1.0);
    check_op("mean_axis0", |g, x| g.mean(x, 0), &[2, 3, 4], -1.0, 1.0);
    check_op("softmax_last", |g, x| g.softmax(x, 1), &[3, 4], -2.0, 2.0);
    check_op(
        "softmax_middle",
        |g, x| g.softmax(x, 1),
        &[2, 3, 4],
        -2.0,
        2.0,
    );
    check_op(
        "layer_norm",
        |g, x| g.layer_norm(x, 1e-5),
        &[3, 5],
        -2.0,
        2.0,
    );
    check_op(
        "attention",
        |g, x| {
            let q = g.narrow(x, 0, 0, 2)?;
            let k = g.narrow(x, 0, 2, 3)?;
            let v = g.narrow(x, 0, 5, 3)?;
            g.attention(q, k, v, 0.7)
        },
        &[8, 4],
        -1.5,
        1.5,
    );
}

#[test]
fn fused_attention_matches_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut g = Graph::<f64>::new();
    let q = g
        .leaf(random_vec(&mut rng, 12, -1.0, 1.0), &[3, 4])
        .unwrap();
    let k = g
        .leaf(random_vec(&mut rng, 20, -1.0, 1.0), &[5, 4])
        .unwrap();
    let v = g
        .leaf(random_vec(&mut rng, 10, -1.0, 1.0), &[5, 2])
        .unwrap();
    let fused = g.attention(q, k, v, 0.5).unwrap();
    let s = g.matmul_t(q, k).unwrap();
    let s = g.scale(s, 0.5).unwrap();
    let p = g.softmax(s, 1).unwrap();
    let plain = g.matmul(p, v).unwrap();
    for (a, b) in g.value(fused).iter().zip(g.value(plain)) {
        assert!((a - b).abs() < 1e-14);
    }
    let mut fg = Graph::<f64>::inference();
    let q2 = fg.constant(g.value(q).to_vec(), &[3, 4]).unwrap();
    let k2 = fg.constant(g.value(k).to_vec(), &[5, 4]).unwrap();
    let v2 = fg.constant(g.value(v).to_vec(), &[5, 2]).unwrap();
    let o2 = fg.attention(q2, k2, v2, 0.5).unwrap();
    assert_eq!(fg.value(o2), g.value(fused));
}

#[test]
fn softmax_cross_like_composite() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let x = random_vec(&mut rng, 12, -1.0, 1.0);
    let err = gradcheck(
        |g, v| {
            let w = g.constant((0..16).map(|i| (i as f64 * 0.37).sin()).collect(), &[4, 4])?;
            let logits = g.matmul_t(v, w)?;
            let p = g.softmax(logits, 1)?;
            let t = g.constant(
                vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
                &[3, 4],
            )?;
            let tp = g.mul(p, t)?;
            let s = g.sum(tp, 1)?;
            let sq = g.sqrt(s)?;
            let neg = g.scale(sq, -1.0)?;
            g.sum_all(neg)
        },
        &x,
        &[3, 4],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random_vec(&mut rng, 6, -1.0, 1.0);
    let b = random_vec(&mut rng, 6, -1.0, 1.0);
    let mut g = Graph::<f64>::new();
    let av = g.constant(a.clone(), &[2, 3]).unwrap();
    let bv = g.constant(b.clone(), &[3, 2]).unwrap();
    let c = g.matmul(av, bv).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            let mut want = 0.0;
            for p in 0..3 {
                want += a[i * 3 + p] * b[p * 2 + j];
            }
            assert!((g.value(c)[i * 2 + j] - want).abs() < 1e-14);
        }
    }
}

#[test]
fn backward_is_deterministic() {
    let run = || {
        let mut g = Graph::<f64>::new();
        let x = g
            .leaf((0..24).map(|i| (i as f64 * 0.61).cos()).collect(), &[4, 6])
            .unwrap();
        let s = g.softmax(x, 1).unwrap();
        let n = g.layer_norm(s, 1e-5).unwrap();
        let t = g.matmul_t(n, x).unwrap();
        let l = g.sum_all(t).unwrap();
        let grads = g.backward(l).unwrap();
        grads.wrt(&g, x)
    };
    let a = run();
    let b = run();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn gather_concat_roundtrip() {
    let mut g = Graph::<f64>::new();
    let x = g
        .constant((0..15).map(|i| i as f64).collect(), &[5, 3])
        .unwrap();
    let even = [0, 2, 4];
    let odd = [1, 3];
    let a = g.gather(x, &even).unwrap();
    let b = g.gather(x, &odd).unwrap();
    let joined = g.concat(&[a, b], 0).unwrap();
    let order: Vec<usize> = even.iter().chain(&odd).copied().collect();
    for (row, &src) in order.iter().enumerate() {
        assert_eq!(
            &g.value(joined)[row * 3..row * 3 + 3],
            &g.value(x)[src * 3..src * 3 + 3]
        );
    }
}
