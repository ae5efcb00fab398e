use dehaze_core::gradcheck::{grad_check, Probe};
use dehaze_core::kernels::{conv2d, conv_transpose2d};
use dehaze_core::{Activation, ConvGeom, Eager, Graph, NormStats, Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn linear_graph_gradient_is_exact() {
    let x = randn(&[5], 1);
    let r = grad_check(&[x], 1e-6, Probe::All, |t, v| {
        let three = t.constant(Tensor::full(&[5], 3.0));
        let y = t.mul(&v[0], &three)?;
        t.sum(&y)
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-8, "{}", r.max_rel_error);
    assert_eq!(r.checked, 5);
}

#[test]
fn relu_away_from_the_kink() {
    // every sample at least 10·eps from zero
    let x = randn(&[64], 2).map(|v| {
        if v.abs() < 1e-5 {
            1e-5f64.copysign(v) * 2.0
        } else {
            v
        }
    });
    let r = grad_check(&[x], 1e-6, Probe::All, |t, v| {
        let y = t.activation(&v[0], Activation::Relu)?;
        let sq = t.mul(&y, &y)?;
        t.sum(&sq)
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-4);
}

#[test]
fn backward_visits_shared_nodes_additively() {
    // y = x·x + x  ⇒  dy/dx = 2x + 1
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap(), true);
    let sq = t.mul(&x, &x).unwrap();
    let y = t.add(&sq, &x).unwrap();
    let s = t.sum(&y).unwrap();
    t.backward(s).unwrap();
    assert_eq!(t.grad(&x).unwrap().data(), &[3.0, -3.0, 2.0]);
}

#[test]
fn batchnorm_train_output_is_standardized() {
    let x = randn(&[4, 3, 5, 5], 3).map(|v| 3.0 * v + 2.0);
    let mut g = Eager;
    let xn = Graph::<f64>::constant(&mut g, x);
    let gamma = Graph::<f64>::constant(&mut g, Tensor::ones(&[3]));
    let beta = Graph::<f64>::constant(&mut g, Tensor::zeros(&[3]));
    let (y, stats) = g
        .batch_norm(&xn, &gamma, &beta, NormStats::Batch, 1e-5)
        .unwrap();
    assert!(stats.is_some());
    let y = Graph::<f64>::value(&g, &y);
    for c in 0..3 {
        let vals: Vec<f64> = (0..4)
            .flat_map(|n| y.data()[(n * 3 + c) * 25..(n * 3 + c + 1) * 25].to_vec())
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(
            m.abs() < 1e-4 && (v - 1.0).abs() < 1e-3,
            "channel {c}: mean {m}, var {v}"
        );
    }
}

#[test]
fn batchnorm_eval_ignores_the_batch() {
    let mut g = Eager;
    let gamma = Graph::<f64>::constant(&mut g, Tensor::from_vec(&[2], vec![2.0, 1.0]).unwrap());
    let beta = Graph::<f64>::constant(&mut g, Tensor::from_vec(&[2], vec![0.5, 0.0]).unwrap());
    let stats = || NormStats::Running {
        mean: &[1.0, 0.0],
        var: &[4.0, 1.0],
    };
    let a = Graph::<f64>::constant(&mut g, randn(&[1, 2, 2, 2], 4));
    let (ya, sa) = g.batch_norm(&a, &gamma, &beta, stats(), 0.0).unwrap();
    assert!(sa.is_none());
    let ya = Graph::<f64>::value(&g, &ya).clone();
    let xa = Graph::<f64>::value(&g, &a).clone();
    for (i, (&x, &y)) in xa.data().iter().zip(ya.data()).enumerate() {
        let expect = if i < 4 {
            2.0 * (x - 1.0) / 2.0 + 0.5
        } else {
            x
        };
        assert!((y - expect).abs() < 1e-12);
    }
}

#[test]
fn squashing_activations_stay_inside_open_ranges() {
    let x = Tensor::from_vec(&[6], vec![-1e4, -30.0, -1e-9, 0.0, 30.0, 1e4]).unwrap();
    let mut g = Eager;
    let xn = Graph::<f32>::constant(&mut g, x.cast::<f32>());
    let th = g.activation(&xn, Activation::Tanh).unwrap();
    let sg = g.activation(&xn, Activation::Sigmoid).unwrap();
    assert!(Graph::<f32>::value(&g, &sg)
        .data()
        .iter()
        .all(|&v| v > 0.0 && v < 1.0));
    assert!(Graph::<f32>::value(&g, &th)
        .data()
        .iter()
        .all(|&v| v > -1.0 && v < 1.0));
}

#[test]
fn nan_survives_rectifiers_and_clamps() {
    let x = Tensor::from_vec(&[1], vec![f32::NAN]).unwrap();
    let mut g = Eager;
    let xn = Graph::<f32>::constant(&mut g, x);
    for act in [
        Activation::Relu,
        Activation::LeakyRelu(0.2),
        Activation::Tanh,
        Activation::Sigmoid,
    ] {
        let y = g.activation(&xn, act).unwrap();
        assert!(Graph::<f32>::value(&g, &y).data()[0].is_nan(), "{act:?}");
    }
}

#[test]
fn convolution_is_bit_deterministic() {
    let x = randn(&[2, 4, 9, 7], 5);
    let w = randn(&[3, 4, 3, 3], 6);
    let a = conv2d(&x, &w, None, ConvGeom::new(2, 1)).unwrap();
    let b = conv2d(&x, &w, None, ConvGeom::new(2, 1)).unwrap();
    assert!(a
        .data()
        .iter()
        .zip(b.data())
        .all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn shape_errors_name_the_operation() {
    let x = randn(&[1, 3, 4, 4], 7);
    let w = randn(&[2, 4, 3, 3], 8);
    let e = conv2d(&x, &w, None, ConvGeom::new(1, 1))
        .unwrap_err()
        .to_string();
    assert!(e.contains("conv2d"), "{e}");
}

proptest! {
    #[test]
    fn same_padding_preserves_extents(h in 1usize..10, w in 1usize..10, c in 1usize..3, seed in any::<u64>()) {
        let x = randn(&[1, c, h, w], seed);
        let k = randn(&[2, c, 3, 3], seed ^ 1);
        let y = conv2d(&x, &k, None, ConvGeom::new(1, 1)).unwrap();
        prop_assert_eq!(y.shape(), &[1, 2, h, w]);
        let z = conv_transpose2d(&y, &randn(&[2, c, 3, 3], seed ^ 2), None, ConvGeom::new(1, 1)).unwrap();
        prop_assert_eq!(z.shape(), &[1, c, h, w]);
    }

    #[test]
    fn transposed_convolution_is_the_adjoint(
        n in 1usize..3, c in 1usize..4, o in 1usize..4, k in 1usize..4,
        stride in 1usize..3, pad in 0usize..2, half in 2usize..5, seed in any::<u64>(),
    ) {
        let pad = pad.min(k - 1);
        // choose H so the stride divides H + 2p − k and the transpose lands back on H
        let h = stride * half + k - 2 * pad;
        let w = stride * (half + 1) + k - 2 * pad;
        let u = randn(&[n, c, h, w], seed);
        let kern = randn(&[o, c, k, k], seed ^ 3);
        let geom = ConvGeom::new(stride, pad);
        let cu = conv2d(&u, &kern, None, geom).unwrap();
        let v = randn(cu.shape(), seed ^ 4);
        let tv = conv_transpose2d(&v, &kern, None, geom).unwrap();
        prop_assert_eq!(tv.shape(), u.shape());
        let lhs = cu.dot(&v).unwrap();
        let rhs = u.dot(&tv).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-4 * lhs.abs().max(rhs.abs()).max(1.0), "{} vs {}", lhs, rhs);
    }
}
