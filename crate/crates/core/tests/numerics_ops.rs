use aio_core::numerics::{grad_check, Graph, ParamStore, Tensor, Var};
use aio_core::selftest;
use aio_core::{Error, Result};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;


fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Weighted sum against a fixed random tensor so every output coordinate
/// contributes a distinct gradient.
fn probe(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_tensor(&mut rng, g.shape(y));
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn t2(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
    Tensor::new(vec![rows, cols], v.to_vec()).unwrap()
}

#[test]
fn matmul_examples() {
    let mut g = Graph::<f64>::new();
    let a = g.input(t2(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    let b = g.input(t2(2, 2, &[5.0, 6.0, 7.0, 8.0]));
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[19.0, 22.0, 43.0, 50.0]);

    let i = g.constant(Tensor::eye(2));
    let ia = g.matmul(i, a).unwrap();
    assert_eq!(g.value(ia), g.value(a));

    let z = g.input(Tensor::zeros(&[2, 3]));
    let az = g.matmul(a, z).unwrap();
    assert!(g.value(az).data().iter().all(|&v| v == 0.0));
    let zero_up = g.constant(Tensor::zeros(&[2, 3]));
    let m = g.mul(az, zero_up).unwrap();
    let s = g.sum(m);
    g.backward(s).unwrap();
    assert!(g.grad(z).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut g = Graph::<f64>::new();
    let a = g.input(Tensor::zeros(&[2, 3]));
    let b = g.input(Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Shape(_)));
    assert!(msg.contains("[2, 3]"), "{msg}");
}

#[test]
fn softmax_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::new(vec![3], vec![0.0; 3]).unwrap());
    let s = g.softmax(x, 0).unwrap();
    for &v in g.value(s).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
    }
    let x = g.input(Tensor::new(vec![2], vec![3f64.ln(), 0.0]).unwrap());
    let s = g.softmax(x, 0).unwrap();
    assert!((g.value(s).data()[0] - 0.75).abs() < 1e-12);
    assert!((g.value(s).data()[1] - 0.25).abs() < 1e-12);
    let x = g.input(Tensor::new(vec![2], vec![1000.0, 0.0]).unwrap());
    let s = g.softmax(x, 0).unwrap();
    assert!(g.value(s).is_finite());
    assert!((g.value(s).data()[0] - 1.0).abs() < 1e-12);
    assert!(g.value(s).data()[1] < 1e-300 + 1e-12);

    let bad = g.input(Tensor::new(vec![2], vec![f64::NAN, 0.0]).unwrap());
    assert!(matches!(g.softmax(bad, 0), Err(Error::NumericDomain(_))));
}

#[test]
fn smooth_l1_examples() {
    let mut g = Graph::<f64>::new();
    let p = g.input(t2(1, 3, &[0.1, 0.2, 0.3]));
    let l = g.smooth_l1(p, p, 1.0).unwrap();
    assert_eq!(g.value(l).item(), 0.0);
    let a = g.input(Tensor::scalar(0.5));
    let z = g.constant(Tensor::scalar(0.0));
    let l = g.smooth_l1(a, z, 1.0).unwrap();
    assert!((g.value(l).item() - 0.125).abs() < 1e-15);
    let a = g.input(Tensor::scalar(2.0));
    let l = g.smooth_l1(a, z, 1.0).unwrap();
    assert!((g.value(l).item() - 1.5).abs() < 1e-15);
    let q = g.input(Tensor::zeros(&[2, 2]));
    assert!(matches!(g.smooth_l1(p, q, 1.0), Err(Error::Shape(_))));
}

#[test]
fn grad_check_examples() {
    let x = Tensor::scalar(3.0);
    let err = grad_check(
        |g, x| {
            let sq = g.mul(x, x)?;
            Ok(g.sum(sq))
        },
        &x,
        1e-4,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");

    // smooth_l1 against zero at (2, 0.5): per-element derivative (1, 0.5),
    // mean-reduced over two elements -> (0.5, 0.25); test the sum-reduced form.
    let x = Tensor::new(vec![2], vec![2.0, 0.5]).unwrap();
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let z = g.constant(Tensor::zeros(&[2]));
    let l = g.smooth_l1(xv, z, 1.0).unwrap();
    let l = g.scale(l, 2.0);
    g.backward(l).unwrap();
    assert_eq!(g.grad(xv).unwrap().data(), &[1.0, 0.5]);
    let err = grad_check(
        |g, x| {
            let z = g.constant(Tensor::zeros(&[2]));
            g.smooth_l1(x, z, 1.0)
        },
        &x,
        1e-4,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = rand_tensor(&mut rng, &[5]);
    let err = grad_check(
        |g, x| {
            let s = g.softmax(x, 0)?;
            probe(g, s, 3)
        },
        &x,
        1e-4,
    )
    .unwrap();
    assert!(err <= 1e-3, "{err}");
}

#[test]
fn grad_check_rejects_non_scalar() {
    let x = Tensor::zeros(&[2]);
    let r = grad_check(|_, x| Ok(x), &x, 1e-4);
    assert!(matches!(r, Err(Error::Contract(_))));
}

/// Every registered differentiable op, at random small shapes.
#[test]
fn every_op_passes_grad_check() {
    let report = selftest::op_grad_suite().unwrap();
    assert!(report.passed(), "{}", report.line());
    assert!(report.cases >= 40);
}

#[test]
fn bilinear_upsampling_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.input(t2(2, 1, &[0.0, 1.0]));
    let y = g.upsample_bilinear(x, 1, 2, 2).unwrap();
    assert_eq!(g.shape(y), &[8, 1]);
    assert_eq!(g.value(y).data(), &[0.0, 0.25, 0.75, 1.0, 0.0, 0.25, 0.75, 1.0]);

    let c = g.input(Tensor::full(&[6, 2], 0.3));
    let u = g.upsample_bilinear(c, 2, 3, 4).unwrap();
    assert!(g.value(u).data().iter().all(|&v| (v - 0.3).abs() < 1e-15));

    // the adjoint conserves mass: each source spreads total weight f²
    let s = g.sum(u);
    g.backward(s).unwrap();
    assert!(g.grad(c).unwrap().data().iter().all(|&v| (v - 16.0).abs() < 1e-12));
}

#[test]
fn fan_out_accumulates_additively() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x0 = rand_tensor(&mut rng, &[3, 3]);
    let f1 = |g: &mut Graph<f64>, x: Var| -> Var {
        let y = g.gelu(x);
        g.sum(y)
    };
    let f2 = |g: &mut Graph<f64>, x: Var| -> Var {
        let y = g.mul(x, x).unwrap();
        g.mean(y)
    };
    let grad_of = |which: u8| {
        let mut g = Graph::new();
        let x = g.input(x0.clone());
        let out = match which {
            1 => f1(&mut g, x),
            2 => f2(&mut g, x),
            _ => {
                let a = f1(&mut g, x);
                let b = f2(&mut g, x);
                g.add(a, b).unwrap()
            }
        };
        g.backward(out).unwrap();
        g.grad(x).unwrap().clone()
    };
    let (g1, g2, g12) = (grad_of(1), grad_of(2), grad_of(3));
    for i in 0..9 {
        assert_eq!(g12.data()[i], g1.data()[i] + g2.data()[i]);
    }
}

#[test]
fn backward_reaches_every_param_and_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::<f32>::new();
        let w = store.insert_normal("w", &[4, 3], 0.5, &mut rng).unwrap();
        let b = store.insert_normal("b", &[3], 0.5, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[2, 4], 0.3));
        let wv = g.param(&store, w);
        let bv = g.param(&store, b);
        let y = g.matmul(x, wv).unwrap();
        let y = g.add_bias(y, bv).unwrap();
        let y = g.gelu(y);
        let l = g.mean(y);
        g.backward(l).unwrap();
        let grads: Vec<_> = g.param_grads().into_iter().map(|(id, t)| (id, t.clone())).collect();
        assert_eq!(grads.len(), 2);
        grads
    };
    let a = run();
    let b = run();
    for ((ia, ta), (ib, tb)) in a.iter().zip(&b) {
        assert_eq!(ia, ib);
        let ba: Vec<u32> = ta.data().iter().map(|v| v.to_bits()).collect();
        let bb: Vec<u32> = tb.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(ba, bb);
    }
}

#[test]
fn frozen_params_get_no_grad() {
    let mut store = ParamStore::<f64>::new();
    let w = store.insert_const("enc.w", &[2, 2], 0.5).unwrap();
    store.set_frozen("enc.", true);
    let mut g = Graph::new();
    let x = g.input(Tensor::full(&[1, 2], 1.0));
    let wv = g.param(&store, w);
    let y = g.matmul(x, wv).unwrap();
    let l = g.sum(y);
    g.backward(l).unwrap();
    assert!(g.grad(wv).is_none());
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0]);
}

#[test]
fn graph_records_are_topologically_ordered() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::full(&[2, 2], 1.0));
    let y = g.mul(x, x).unwrap();
    let z = g.softmax(y, 1).unwrap();
    let _ = g.sum(z);
    for rec in g.records() {
        assert!(rec.inputs.iter().all(|i| i.index() < rec.output.index()));
    }
}

#[test]
fn broadcasting_is_rejected() {
    let mut g = Graph::<f64>::new();
    let a = g.input(Tensor::zeros(&[2, 3]));
    let b = g.input(Tensor::zeros(&[3]));
    assert!(matches!(g.add(a, b), Err(Error::Shape(_))));
    let bad_bias = g.input(Tensor::zeros(&[2]));
    assert!(matches!(g.add_bias(a, bad_bias), Err(Error::Shape(_))));
    let even = g.input(Tensor::zeros(&[2, 2, 3, 3]));
    let map = g.input(Tensor::zeros(&[4, 3]));
    assert!(matches!(g.conv2d(map, even, 2, 2), Err(Error::Shape(_))));
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(v in proptest::collection::vec(-500.0f64..500.0, 1..40)) {
        let mut g = Graph::<f64>::new();
        let n = v.len();
        let x = g.input(Tensor::new(vec![n], v).unwrap());
        let s = g.softmax(x, 0).unwrap();
        let total: f64 = g.value(s).data().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-6);
        prop_assert!(g.value(s).data().iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn space_to_depth_round_trips(h in 1usize..4, w in 1usize..4, c in 1usize..4, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = rand_tensor(&mut rng, &[4 * h * w, c]);
        let mut g = Graph::<f64>::new();
        let x = g.input(x0.clone());
        let d = g.space_to_depth(x, 2 * h, 2 * w, 2).unwrap();
        let back = g.depth_to_space(d, h, w, 2).unwrap();
        prop_assert_eq!(g.value(back), &x0);
    }
}
