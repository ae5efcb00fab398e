use dehaze_core::gradcheck::{grad_check, Probe};
use dehaze_core::loss::{
    adversarial_d_loss, adversarial_g_loss, combined_loss, feature_loss, l2_loss, smooth_l1_loss,
    LossComponents, LossWeights, Variant, PROB_EPS,
};
use dehaze_core::nn::{ConvLayer, FeatureNet, FeatureNetConfig, Module};
use dehaze_core::{ConvGeom, Eager, Graph, Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Node = <Eager as Graph<f64>>::Node;

fn t(shape: &[usize], v: Vec<f64>) -> Tensor<f64> {
    Tensor::from_vec(shape, v).unwrap()
}

fn full(n: usize, v: f64) -> Tensor<f64> {
    Tensor::full(&[n], v)
}

fn pair<F>(y: Tensor<f64>, o: Tensor<f64>, f: F) -> f64
where
    F: FnOnce(&mut Eager, &Node, &Node) -> dehaze_core::Result<Node>,
{
    let mut g = Eager;
    let (y, o) = (
        Graph::<f64>::constant(&mut g, y),
        Graph::<f64>::constant(&mut g, o),
    );
    let out = f(&mut g, &y, &o).unwrap();
    Graph::<f64>::scalar_value(&g, &out)
}

fn rand(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::uniform(shape, lo, hi, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn l2_examples() {
    let y = rand(&[1, 3, 4, 4], 1, -1.0, 1.0);
    assert_eq!(pair(y.clone(), y, l2_loss), 0.0);
    assert_eq!(pair(full(2, 1.0), full(2, 0.0), l2_loss), 1.0);
    assert!(
        pair(full(3, 1.0), t(&[3], vec![1.0, 2.0, 0.0]), |g, a, b| {
            l2_loss(g, a, b)
        }) > 0.0
    );
}

#[test]
fn l2_gradient_is_two_d_over_n() {
    let y = rand(&[6], 2, -1.0, 1.0);
    let o = rand(&[6], 3, -1.0, 1.0);
    let mut tape = Tape::<f64>::new();
    let yv = tape.leaf(y.clone(), false);
    let ov = tape.leaf(o.clone(), true);
    let l = l2_loss(&mut tape, &yv, &ov).unwrap();
    tape.backward(l).unwrap();
    let grad = tape.grad(&ov).unwrap();
    for i in 0..6 {
        let expect = 2.0 * (o.data()[i] - y.data()[i]) / 6.0;
        assert!((grad.data()[i] - expect).abs() < 1e-12);
    }
}

#[test]
fn smooth_l1_examples() {
    let s = |d: f64| pair(full(4, d), full(4, 0.0), smooth_l1_loss);
    assert!((s(0.5) - 0.125).abs() < 1e-12);
    assert!((s(2.0) - 1.5).abs() < 1e-12);
    assert!((s(1.0) - 0.5).abs() < 1e-12);
    assert!((s(1.0 - 1e-9) - 0.5).abs() < 1e-8 && (s(1.0 + 1e-9) - 0.5).abs() < 1e-8);
    assert!((s(-2.0) - 1.5).abs() < 1e-12);
}

#[test]
fn adversarial_examples() {
    let map = |v: f64| full(4, v);
    let d = |r: f64, f: f64| pair(map(r), map(f), adversarial_d_loss);
    let gl = |f: f64| pair(map(f), map(f), |g, a, _| adversarial_g_loss(g, a));
    let ln2 = std::f64::consts::LN_2;
    assert!((d(0.5, 0.5) - 2.0 * ln2).abs() < 1e-12);
    assert!((d(0.9, 0.1) - 0.21072).abs() < 1e-5);
    assert!(d(1.0, 0.0) < 1e-6);
    assert!((d(1.0, 0.0) - 2.0 * (1.0 / (1.0 - PROB_EPS)).ln()).abs() < 1e-9);
    assert!((gl(0.5) - ln2).abs() < 1e-12);
    assert!(gl(1.0 - PROB_EPS) < 1e-6);
    assert!((gl(0.1) - std::f64::consts::LN_10).abs() < 1e-5);
    // clamping keeps saturated inputs finite
    assert!(d(0.0, 1.0).is_finite() && gl(0.0).is_finite());
}

fn delta_feature_net() -> FeatureNet<f64> {
    let mut w = Tensor::zeros(&[3, 3, 3, 3]);
    for c in 0..3 {
        w.data_mut()[((c * 3 + c) * 3 + 1) * 3 + 1] = 1.0;
    }
    let layer =
        ConvLayer::from_tensors(w, Tensor::zeros(&[3]), ConvGeom::new(1, 1), false).unwrap();
    FeatureNet::from_layers(vec![layer]).unwrap()
}

fn pool2(x: &Tensor<f64>) -> Tensor<f64> {
    let [n, c, h, w] = x.dims4("pool").unwrap();
    let mut out = Tensor::zeros(&[n, c, h / 2, w / 2]);
    for p in 0..n * c {
        for i in 0..h / 2 {
            for j in 0..w / 2 {
                let at = |di: usize, dj: usize| x.data()[(p * h + 2 * i + di) * w + 2 * j + dj];
                out.data_mut()[(p * (h / 2) + i) * (w / 2) + j] =
                    (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) / 4.0;
            }
        }
    }
    out
}

#[test]
fn delta_kernel_feature_loss_is_pooled_mse() {
    let net = delta_feature_net();
    // non-negative images pass the ReLU unchanged
    let y = rand(&[2, 3, 8, 6], 4, 0.0, 1.0);
    let o = rand(&[2, 3, 8, 6], 5, 0.0, 1.0);
    let (py, po) = (pool2(&y), pool2(&o));
    let oracle = py
        .data()
        .iter()
        .zip(po.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / py.len() as f64;
    let got = pair(y, o, |g, a, b| {
        let p = net.bind(g, false);
        feature_loss(g, &net, &p, a, b, 1)
    });
    assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
}

#[test]
fn feature_loss_of_identical_images_is_zero_and_taps_are_checked() {
    let net = FeatureNet::<f64>::new(&FeatureNetConfig {
        widths: vec![4, 4, 4, 4],
        seed: 3,
    })
    .unwrap();
    let y = rand(&[1, 3, 16, 16], 6, -1.0, 1.0);
    let same = pair(y.clone(), y.clone(), |g, a, b| {
        let p = net.bind(g, false);
        feature_loss(g, &net, &p, a, b, 3)
    });
    assert_eq!(same, 0.0);
    let mut g = Eager;
    let p = net.bind(&mut g, false);
    let a = Graph::<f64>::constant(&mut g, y);
    assert!(feature_loss(&mut g, &net, &p, &a, &a, 5).is_err());
}

#[test]
fn every_loss_gradient_matches_differences_at_16x16() {
    let net = FeatureNet::<f64>::new(&FeatureNetConfig::default()).unwrap();
    let y = rand(&[1, 3, 16, 16], 7, -1.0, 1.0);
    let o = rand(&[1, 3, 16, 16], 8, -1.0, 1.0);
    let probe = Probe::Sample {
        per_input: 64,
        seed: 1,
    };
    type LossFn = Box<
        dyn Fn(
            &mut Tape<f64>,
            &dehaze_core::Var,
            &dehaze_core::Var,
        ) -> dehaze_core::Result<dehaze_core::Var>,
    >;
    let cases: Vec<(&str, LossFn)> = vec![
        ("l2", Box::new(l2_loss)),
        ("smooth_l1", Box::new(smooth_l1_loss)),
        (
            "feature",
            Box::new(move |g, a, b| {
                let p = net.bind(g, false);
                feature_loss(g, &net, &p, a, b, 2)
            }),
        ),
    ];
    for (name, f) in &cases {
        let yc = y.clone();
        let r = grad_check(std::slice::from_ref(&o), 1e-6, probe, |tape, v| {
            let target = tape.constant(yc.clone());
            f(tape, &target, &v[0])
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-3, "{name}: {}", r.max_rel_error);
    }
    let d = rand(&[1, 1, 16, 16], 9, 0.05, 0.95);
    let r = grad_check(&[d.clone(), d.map(|v| 1.0 - v)], 1e-6, probe, |g, v| {
        adversarial_d_loss(g, &v[0], &v[1])
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-3);
    let r = grad_check(&[d], 1e-6, probe, |g, v| adversarial_g_loss(g, &v[0])).unwrap();
    assert!(r.max_rel_error < 1e-3);
}

fn components(
    g: &mut Eager,
    y: &Node,
    o: &Node,
    fake: &Node,
    feat: Option<Node>,
) -> LossComponents<Node> {
    LossComponents {
        adv: Some(adversarial_g_loss(g, fake).unwrap()),
        l2: Some(l2_loss(g, y, o).unwrap()),
        s1: Some(smooth_l1_loss(g, y, o).unwrap()),
        feat,
    }
}

#[test]
fn combined_loss_weighting() {
    let mut g = Eager;
    let y = Graph::<f64>::constant(&mut g, rand(&[1, 3, 4, 4], 10, -1.0, 1.0));
    let o = Graph::<f64>::constant(&mut g, rand(&[1, 3, 4, 4], 11, -2.0, 2.0));
    let fake = Graph::<f64>::constant(&mut g, rand(&[1, 1, 2, 2], 12, 0.1, 0.9));
    let feat = Graph::<f64>::constant(&mut g, Tensor::scalar(0.3));
    let parts = components(&mut g, &y, &o, &fake, Some(feat));

    // GEN: adversarial and smooth-L1 contribute nothing, but both are reported
    let (_, gen) = combined_loss(&mut g, &Variant::Gen.weights(), &parts).unwrap();
    assert_eq!(gen.total, gen.l2.unwrap() + gen.feat.unwrap());
    assert!(gen.adv.is_some() && gen.s1.is_some());

    let only_l2 = LossWeights {
        adv: 0.0,
        l2: 1.0,
        s1: 0.0,
        feat: 0.0,
        tap: 2,
    };
    let (_, r) = combined_loss(&mut g, &only_l2, &parts).unwrap();
    assert_eq!(r.total, r.l2.unwrap());

    let w1 = LossWeights {
        adv: 0.0,
        l2: 0.0,
        s1: 0.0,
        feat: 1.0,
        tap: 2,
    };
    let w2 = LossWeights { feat: 2.0, ..w1 };
    let (_, a) = combined_loss(&mut g, &w1, &parts).unwrap();
    let (_, b) = combined_loss(&mut g, &w2, &parts).unwrap();
    assert!((b.total - 2.0 * a.total).abs() < 1e-15);

    let (_, c) = combined_loss(&mut g, &Variant::CandyL1_9P.weights(), &parts).unwrap();
    assert!((c.total - (c.adv.unwrap() + c.s1.unwrap() + c.feat.unwrap())).abs() < 1e-12);

    // a positively weighted term that was not computed is an error
    let no_feat = components(&mut g, &y, &o, &fake, None);
    assert!(combined_loss(&mut g, &Variant::CandyL2_23P.weights(), &no_feat).is_err());
}

#[test]
fn presets() {
    let w = |v: &str| v.parse::<Variant>().unwrap().weights();
    assert_eq!(
        w("GEN"),
        LossWeights {
            adv: 0.0,
            l2: 1.0,
            s1: 0.0,
            feat: 1.0,
            tap: 2
        }
    );
    assert_eq!(
        w("candy-l1-9p"),
        LossWeights {
            adv: 1.0,
            l2: 0.0,
            s1: 1.0,
            feat: 1.0,
            tap: 2
        }
    );
    assert_eq!(
        w("CANDY-L2-9P"),
        LossWeights {
            adv: 1.0,
            l2: 1.0,
            s1: 0.0,
            feat: 1.0,
            tap: 2
        }
    );
    assert_eq!(w("CANDY-L1-23P").tap, 4);
    assert_eq!(
        w("CANDY-L2-23P"),
        LossWeights {
            tap: 4,
            ..w("CANDY-L2-9P")
        }
    );
    assert!("CANDY".parse::<Variant>().is_err());
    for v in Variant::ALL {
        assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        v.weights().validate().unwrap();
    }
    assert!(LossWeights {
        adv: 0.0,
        l2: 0.0,
        s1: 0.0,
        feat: 0.0,
        tap: 2
    }
    .validate()
    .is_err());
    assert!(LossWeights {
        l2: -1.0,
        ..w("GEN")
    }
    .validate()
    .is_err());
}

proptest! {
    #[test]
    fn smooth_l1_is_bounded_by_half_l2_and_has_unit_slope(d in prop::collection::vec(-50.0f64..50.0, 1..32)) {
        let n = d.len();
        let y = Tensor::from_vec(&[n], d.clone()).unwrap();
        let zero = Tensor::zeros(&[n]);
        let s1 = pair(y.clone(), zero.clone(), smooth_l1_loss);
        let l2 = pair(y.clone(), zero.clone(), l2_loss);
        prop_assert!(s1 <= l2 / 2.0 + 0.5 + 1e-12);

        let mut tape = Tape::<f64>::new();
        let yv = tape.leaf(y, false);
        let ov = tape.leaf(zero, true);
        let l = smooth_l1_loss(&mut tape, &yv, &ov).unwrap();
        tape.backward(l).unwrap();
        // per-element slope is the gradient scaled back by n
        for g in tape.grad(&ov).unwrap().data() {
            prop_assert!((g * n as f64).abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn content_losses_are_non_negative_and_vanish_only_on_equality(
        a in prop::collection::vec(-1.0f64..1.0, 4), b in prop::collection::vec(-1.0f64..1.0, 4),
    ) {
        let (ta, tb) = (Tensor::from_vec(&[4], a.clone()).unwrap(), Tensor::from_vec(&[4], b.clone()).unwrap());
        let l2 = pair(ta.clone(), tb.clone(), l2_loss);
        let s1 = pair(ta, tb, smooth_l1_loss);
        prop_assert!(l2 >= 0.0 && s1 >= 0.0);
        prop_assert_eq!(l2 == 0.0, a == b);
        prop_assert_eq!(s1 == 0.0, a == b);
    }
}
