use dzsl::numcore::{
    gaussian, grad_check, max_relative_error, numeric_gradient, uniform, Graph, ParamId, ParamSet,
    Rng, Tensor, Var,
};
use dzsl::Result;
use proptest::prelude::*;

fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (r, k) = a.dims2().unwrap();
    let (_, c) = b.dims2().unwrap();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            let mut s = 0.0;
            for p in 0..k {
                s += a.get2(i, p) * b.get2(p, j);
            }
            out[i * c + j] = s;
        }
    }
    Tensor::new([r, c], out).unwrap()
}

/// Random tensor whose entries stay at least `gap` away from zero.
fn away_from_zero(rng: &mut Rng, shape: &[usize], gap: f64) -> Tensor {
    let t: Tensor = gaussian(rng, shape.to_vec());
    t.map(|v| if v.abs() < gap { v.signum() * gap + v } else { v })
}

fn check(ps: &ParamSet, f: impl FnMut(&ParamSet, &mut Graph) -> Result<Var>) -> f64 {
    grad_check(ps, 1e-5, f).unwrap()
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = Rng::new(1, 0);
    for _ in 0..10 {
        let a: Tensor = gaussian(&mut rng, [4, 5]);
        let b: Tensor = gaussian(&mut rng, [5, 3]);
        let fast = a.matmul(&b).unwrap();
        assert!(fast.max_abs_diff(&naive_matmul(&a, &b)).unwrap() <= 1e-12);
    }
}

#[test]
fn every_op_matches_finite_differences() {
    let mut rng = Rng::new(2, 0);
    let mut ps = ParamSet::new();
    let a = ps.add("a", away_from_zero(&mut rng, &[3, 4], 1e-3));
    let b = ps.add("b", gaussian(&mut rng, [4, 2]));
    let c = ps.add("c", gaussian(&mut rng, [3, 4]));
    let bias = ps.add("bias", gaussian(&mut rng, [2]));
    let s = ps.add("s", gaussian(&mut rng, [3]));
    let pos = ps.add("pos", uniform(&mut rng, [3, 4], 0.5, 2.0));
    let w = ps.add("w", gaussian(&mut rng, [3, 4, 2]));

    type Builder = fn(&mut Graph, [Var; 7]) -> Result<Var>;
    let cases: Vec<(&str, Builder)> = vec![
        ("matmul", |g, [a, b, ..]| {
            let m = g.matmul(a, b)?;
            let sq = g.mul(m, m)?;
            g.sum(sq)
        }),
        ("transpose", |g, [a, _, c, ..]| {
            let t = g.transpose(a)?;
            let m = g.matmul(c, t)?;
            let m = g.tanh(m)?;
            g.sum(m)
        }),
        ("add_sub_mul", |g, [a, _, c, ..]| {
            let x = g.add(a, c)?;
            let y = g.sub(x, c)?;
            let z = g.mul(y, c)?;
            let z = g.mul(z, a)?;
            g.sum(z)
        }),
        ("scale_add_scalar", |g, [a, ..]| {
            let x = g.scale(a, 1.7)?;
            let x = g.add_scalar(x, 0.3)?;
            let x = g.mul(x, x)?;
            g.mean(x)
        }),
        ("add_row", |g, [a, b, _, bias, ..]| {
            let m = g.matmul(a, b)?;
            let m = g.add_row(m, bias)?;
            let m = g.tanh(m)?;
            let m = g.mul(m, m)?;
            g.sum(m)
        }),
        ("mul_col", |g, [a, _, _, _, s, ..]| {
            let m = g.mul_col(a, s)?;
            let m = g.sigmoid(m)?;
            g.sum(m)
        }),
        ("relu", |g, [a, _, c, ..]| {
            let r = g.relu(a)?;
            let r = g.mul(r, c)?;
            g.sum(r)
        }),
        ("exp_log", |g, [a, .., pos, _]| {
            let l = g.log(pos)?;
            let e = g.exp(a)?;
            let m = g.mul(l, e)?;
            g.sum(m)
        }),
        ("softplus", |g, [a, _, c, ..]| {
            let x = g.scale(a, 3.0)?;
            let sp = g.softplus(x)?;
            let m = g.mul(sp, c)?;
            g.sum(m)
        }),
        ("softmax_axis0", |g, [a, _, c, ..]| {
            let s = g.softmax(a, 0)?;
            let m = g.mul(s, c)?;
            g.sum(m)
        }),
        ("softmax_axis1", |g, [a, _, c, ..]| {
            let s = g.softmax(a, 1)?;
            let m = g.mul(s, c)?;
            g.sum(m)
        }),
        ("log_softmax", |g, [a, _, c, ..]| {
            let s = g.log_softmax(a, 1)?;
            let m = g.mul(s, c)?;
            g.sum(m)
        }),
        ("sum_mean_axis", |g, [a, _, c, ..]| {
            let x = g.mul(a, c)?;
            let s0 = g.sum_axis(x, 0)?;
            let s1 = g.mean_axis(x, 1)?;
            let q0 = g.squared_l2(s0)?;
            let q1 = g.squared_l2(s1)?;
            g.add(q0, q1)
        }),
        ("concat_slice", |g, [a, _, c, ..]| {
            let x = g.concat(&[a, c], 1)?;
            let x = g.tanh(x)?;
            let y = g.slice(x, 1, 2, 5)?;
            let y = g.mul(y, y)?;
            g.sum(y)
        }),
        ("max_axis", |g, [a, _, c, ..]| {
            let x = g.mul(a, c)?;
            let (m, _) = g.max_axis(x, 1)?;
            let m = g.mul(m, m)?;
            g.sum(m)
        }),
        ("reshape", |g, [a, b, ..]| {
            let x = g.reshape(a, [4, 3])?;
            let bt = g.transpose(b)?;
            let y = g.matmul(bt, x)?;
            let y = g.tanh(y)?;
            g.sum(y)
        }),
        ("l2_norm", |g, [a, ..]| {
            let n = g.l2_norm(a)?;
            let n = g.add_scalar(n, -1.0)?;
            g.mul(n, n)
        }),
        ("grouped_linear", |g, [a, .., w]| {
            let y = g.grouped_linear(a, w)?;
            let y = g.tanh(y)?;
            let y = g.mul(y, y)?;
            g.sum(y)
        }),
    ];

    for (name, build) in cases {
        let err = check(&ps, |ps, g| {
            let vars = [a, b, c, bias, s, pos, w].map(|id| g.param(ps, id).unwrap());
            build(g, vars)
        });
        assert!(err <= 1e-6, "{name}: max relative error {err}");
    }
}

#[test]
fn shared_parameter_accumulates_both_branches() {
    let mut rng = Rng::new(3, 0);
    let mut ps = ParamSet::new();
    let x = ps.add("x", gaussian(&mut rng, [2, 3]));
    let err = check(&ps, |ps, g| {
        // Two separate leaves for the same parameter plus reuse of one leaf.
        let x1 = g.param(ps, x)?;
        let x2 = g.param(ps, x)?;
        let t = g.tanh(x1)?;
        let e = g.mul(x2, x2)?;
        let both = g.add(t, e)?;
        let both = g.mul(both, x1)?;
        g.sum(both)
    });
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn three_layer_composite_matches_finite_differences() {
    let mut rng = Rng::new(4, 0);
    let mut ps = ParamSet::new();
    let x: Tensor = gaussian(&mut rng, [5, 6]);
    let w1 = ps.add("w1", gaussian::<f64>(&mut rng, [6, 8]).map(|v| v * 0.4));
    let b1 = ps.add("b1", gaussian(&mut rng, [8]));
    let w2 = ps.add("w2", gaussian::<f64>(&mut rng, [8, 7]).map(|v| v * 0.4));
    let w3 = ps.add("w3", gaussian::<f64>(&mut rng, [7, 3]).map(|v| v * 0.4));
    let err = check(&ps, |ps, g| {
        let xi = g.constant(x.clone())?;
        let w1v = g_param(g, ps, w1);
        let h = g.matmul(xi, w1v)?;
        let bb = g.param(ps, b1)?;
        let h = g.add_row(h, bb)?;
        let h = g.tanh(h)?;
        let w2v = g.param(ps, w2)?;
        let h = g.matmul(h, w2v)?;
        let h = g.sigmoid(h)?;
        let w3v = g.param(ps, w3)?;
        let o = g.matmul(h, w3v)?;
        let o = g.log_softmax(o, 1)?;
        g.mean(o)
    });
    assert!(err <= 1e-6, "{err}");
}

fn g_param(g: &mut Graph, ps: &ParamSet, id: ParamId) -> Var {
    g.param(ps, id).unwrap()
}

#[test]
fn linear_function_check_is_exact() {
    let mut rng = Rng::new(5, 0);
    let mut ps = ParamSet::new();
    let w = ps.add("w", gaussian(&mut rng, [4, 3]));
    let x: Tensor = gaussian(&mut rng, [2, 4]);
    // Central differences are exact for linear maps at any step; a wide step
    // keeps cancellation error out of the comparison.
    let err = grad_check(&ps, 1e-2, |ps, g| {
        let xi = g.constant(x.clone())?;
        let wv = g.param(ps, w)?;
        let y = g.matmul(xi, wv)?;
        let y = g.scale(y, 2.5)?;
        g.sum(y)
    })
    .unwrap();
    assert!(err <= 1e-10, "{err}");
}

fn softmax_ce(ps: &ParamSet, g: &mut Graph, x: &Tensor, onehot: &Tensor) -> Result<Var> {
    let xi = g.constant(x.clone())?;
    let w = g.param(ps, ParamId(0))?;
    let b = g.param(ps, ParamId(1))?;
    let z = g.matmul(xi, w)?;
    let z = g.add_row(z, b)?;
    let lp = g.log_softmax(z, 1)?;
    let y = g.constant(onehot.clone())?;
    let picked = g.mul(lp, y)?;
    let s = g.sum(picked)?;
    g.scale(s, -1.0 / x.shape()[0] as f64)
}

#[test]
fn softmax_cross_entropy_head_and_fault_detection() {
    let mut rng = Rng::new(6, 0);
    let mut ps = ParamSet::new();
    ps.add("w", gaussian(&mut rng, [5, 4]));
    ps.add("b", gaussian(&mut rng, [4]));
    let x: Tensor = gaussian(&mut rng, [6, 5]);
    let mut onehot = Tensor::zeros([6, 4]).unwrap();
    for i in 0..6 {
        onehot.data_mut()[i * 4 + i % 4] = 1.0;
    }
    let err = check(&ps, |ps, g| softmax_ce(ps, g, &x, &onehot));
    assert!(err <= 1e-6, "{err}");

    let mut g = Graph::new();
    let root = softmax_ce(&ps, &mut g, &x, &onehot).unwrap();
    let corrupted: Vec<Tensor> = g
        .backward(root)
        .unwrap()
        .for_params(&ps)
        .into_iter()
        .map(|t| t.map(|v| v * 1.01))
        .collect();
    let numeric = numeric_gradient(&ps, 1e-5, |ps, g| softmax_ce(ps, g, &x, &onehot)).unwrap();
    assert!(max_relative_error(&corrupted, &numeric) > 1e-3);
}

#[test]
fn max_routes_gradient_to_argmax_only() {
    let mut ps = ParamSet::new();
    let id = ps.add("x", Tensor::vector(vec![0.1, 0.7, 0.2]).unwrap());
    let mut g = Graph::new();
    let x = g.param(&ps, id).unwrap();
    let (m, _) = g.max_axis(x, 0).unwrap();
    let grads = g.backward(m).unwrap().for_params(&ps);
    assert_eq!(grads[0].data(), &[0.0, 1.0, 0.0]);
}

#[test]
fn relu_subgradient_at_zero_is_zero() {
    let mut ps = ParamSet::new();
    let id = ps.add("x", Tensor::vector(vec![0.0, 1.0]).unwrap());
    let mut g = Graph::new();
    let x = g.param(&ps, id).unwrap();
    let r = g.relu(x).unwrap();
    let s = g.sum(r).unwrap();
    let grads = g.backward(s).unwrap().for_params(&ps);
    assert_eq!(grads[0].data(), &[0.0, 1.0]);
}

#[test]
fn single_precision_instantiation_runs() {
    let mut ps = ParamSet::<f32>::new();
    let id = ps.add("x", Tensor::<f32>::scalar(3.0));
    let mut g = Graph::<f32>::new();
    let x = g.param(&ps, id).unwrap();
    let y = g.mul(x, x).unwrap();
    let grads = g.backward(y).unwrap().for_params(&ps);
    assert_eq!(grads[0].item().unwrap(), 6.0f32);
}

proptest! {
    #[test]
    fn softmax_rows_are_probability_vectors(
        data in proptest::collection::vec(-50.0f64..50.0, 12),
        shift in -100.0f64..100.0,
    ) {
        let x = Tensor::new([3, 4], data).unwrap();
        let mut g = Graph::new();
        let xv = g.constant(x.clone()).unwrap();
        let s = g.softmax(xv, 1).unwrap();
        let shifted = g.add_scalar(xv, shift).unwrap();
        let s2 = g.softmax(shifted, 1).unwrap();
        for i in 0..3 {
            let row = g.value(s).row(i);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|&p| p > 0.0));
        }
        prop_assert!(g.value(s).max_abs_diff(g.value(s2)).unwrap() <= 1e-12);
    }

    #[test]
    fn matmul_agrees_with_naive_on_arbitrary_shapes(
        r in 1usize..6, k in 1usize..6, c in 1usize..6, seed in 0u64..1000,
    ) {
        let mut rng = Rng::new(seed, 0);
        let a: Tensor = gaussian(&mut rng, [r, k]);
        let b: Tensor = gaussian(&mut rng, [k, c]);
        prop_assert!(a.matmul(&b).unwrap().max_abs_diff(&naive_matmul(&a, &b)).unwrap() <= 1e-12);
    }
}
