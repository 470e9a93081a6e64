//! Central finite-difference checks for every differentiable operation,
//! in double precision: eps 1e-4, max relative error < 1e-4, at least 20
//! random instances per op.

mod common;

use common::rand_vec_f64;
use tan_core::graph::Graph;
use tan_core::ops;
use tan_core::ops::PoolGeom;
use tan_core::rng::SplitMix64;
use tan_core::tensor::Tensor;

const EPS: f64 = 1e-4;
const TOL: f64 = 1e-4;
const CASES: usize = 20;

/// Check analytic gradients of `build`'s output against central finite
/// differences, projecting the output with a random mask so every output
/// element contributes.
fn gradcheck(name: &str, inputs: &[Tensor<f64>], build: &dyn Fn(&mut Graph<f64>) -> Tensor<f64>) {
    let probe = build(&mut Graph::inference());
    let mut mask_rng = SplitMix64::new(0xA5A5 ^ probe.numel() as u64);
    let mask = Tensor::from_vec(
        probe.shape().to_vec(),
        rand_vec_f64(&mut mask_rng, probe.numel(), -1.0, 1.0),
    )
    .unwrap();

    let loss_of = |g: &mut Graph<f64>| {
        let out = build(g);
        let m = ops::mul(g, &out, &mask).unwrap();
        ops::sum(g, &m).unwrap()
    };

    for t in inputs {
        t.zero_grad();
    }
    let mut g = Graph::recording();
    let loss = loss_of(&mut g);
    g.backward(&loss).unwrap();

    for (idx, input) in inputs.iter().enumerate() {
        let analytic = input
            .grad()
            .unwrap_or_else(|| panic!("{name}: input {idx} has no gradient"));
        let orig = input.to_vec();
        for i in 0..orig.len() {
            let mut bumped = orig.clone();
            bumped[i] = orig[i] + EPS;
            input.set_data(&bumped);
            let fp = loss_of(&mut Graph::inference()).item();
            bumped[i] = orig[i] - EPS;
            input.set_data(&bumped);
            let fm = loss_of(&mut Graph::inference()).item();
            input.set_data(&orig);

            let fd = (fp - fm) / (2.0 * EPS);
            let a = analytic[i];
            let denom = a.abs().max(fd.abs());
            let ok = if denom > 1e-6 {
                (a - fd).abs() / denom < TOL
            } else {
                (a - fd).abs() < 1e-7
            };
            assert!(
                ok,
                "{name}: input {idx} element {i}: analytic {a} vs finite-diff {fd}"
            );
        }
    }
}

fn param(rng: &mut SplitMix64, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::param(shape, rand_vec_f64(rng, n, lo, hi)).unwrap()
}

#[test]
fn conv2d_gradients() {
    let mut rng = SplitMix64::new(101);
    for case in 0..CASES {
        let (t, cin, cout) = (
            rng.next_range(1, 2),
            rng.next_range(1, 3),
            rng.next_range(1, 3),
        );
        let k = if case % 3 == 0 { 1 } else { 3 };
        let stride = rng.next_range(1, 2);
        let pad = rng.next_range(0, 1);
        let h = rng.next_range(k.max(3), 6);
        let w = rng.next_range(k.max(3), 6);
        let x = param(&mut rng, vec![t, cin, h, w], -1.0, 1.0);
        let wt = param(&mut rng, vec![cout, cin, k, k], -1.0, 1.0);
        let b = param(&mut rng, vec![cout], -0.5, 0.5);
        gradcheck("conv2d_per_frame", &[x.clone(), wt.clone(), b.clone()], &|g| {
            ops::conv2d_per_frame(g, &x, &wt, &b, stride, pad).unwrap()
        });
    }
}

#[test]
fn conv1d_temporal_gradients() {
    let mut rng = SplitMix64::new(202);
    for case in 0..CASES {
        let (t, c, cout) = (
            rng.next_range(2, 8),
            rng.next_range(1, 3),
            rng.next_range(1, 3),
        );
        let k = if case % 4 == 0 { 1 } else { 3 };
        let d = rng.next_range(1, 4);
        let (h, w) = (rng.next_range(1, 2), rng.next_range(1, 3));
        let x = param(&mut rng, vec![t, c, h, w], -1.0, 1.0);
        let wt = param(&mut rng, vec![cout, c, k], -1.0, 1.0);
        let b = param(&mut rng, vec![cout], -0.5, 0.5);
        gradcheck("conv1d_temporal", &[x.clone(), wt.clone(), b.clone()], &|g| {
            ops::conv1d_temporal(g, &x, &wt, &b, d).unwrap()
        });
    }
}

#[test]
fn conv3d_gradients() {
    let mut rng = SplitMix64::new(303);
    for case in 0..CASES {
        let (t, cin, cout) = (
            rng.next_range(1, 4),
            rng.next_range(1, 2),
            rng.next_range(1, 2),
        );
        let kt = if case % 2 == 0 { 3 } else { 1 };
        let k = 3;
        let stride = rng.next_range(1, 2);
        let pad = rng.next_range(0, 1);
        let (h, w) = (rng.next_range(3, 5), rng.next_range(3, 5));
        let x = param(&mut rng, vec![t, cin, h, w], -1.0, 1.0);
        let wt = param(&mut rng, vec![cout, cin, kt, k, k], -1.0, 1.0);
        let b = param(&mut rng, vec![cout], -0.5, 0.5);
        gradcheck("conv3d", &[x.clone(), wt.clone(), b.clone()], &|g| {
            ops::conv3d(g, &x, &wt, &b, stride, pad).unwrap()
        });
    }
}

#[test]
fn maxpool_gradients() {
    let mut rng = SplitMix64::new(404);
    for case in 0..CASES {
        let kt = if case % 2 == 0 { 2 } else { 1 };
        let geom = PoolGeom {
            kt,
            st: kt,
            ks: rng.next_range(2, 3),
            ss: 2,
            pad_s: if case % 3 == 0 { 1 } else { 0 },
        };
        let t = rng.next_range(kt, 4).max(kt);
        let c = rng.next_range(1, 2);
        let side = rng.next_range(geom.ks + 1, 6);
        // Values spread far apart so a +-eps bump never flips an argmax.
        let x = param(&mut rng, vec![t, c, side, side], -50.0, 50.0);
        gradcheck("maxpool3d", &[x.clone()], &|g| {
            ops::maxpool3d(g, &x, geom).unwrap()
        });
    }
}

#[test]
fn avgpool_gradients() {
    let mut rng = SplitMix64::new(505);
    for case in 0..CASES {
        let kt = if case % 2 == 0 { 2 } else { 1 };
        let geom = PoolGeom {
            kt,
            st: kt,
            ks: 3,
            ss: 2,
            pad_s: rng.next_range(0, 1),
        };
        let t = rng.next_range(kt, 4).max(kt);
        let side = rng.next_range(4, 7);
        let x = param(&mut rng, vec![t, 2, side, side], -1.0, 1.0);
        gradcheck("avgpool3d", &[x.clone()], &|g| {
            ops::avgpool3d(g, &x, geom).unwrap()
        });
    }
}

#[test]
fn relu_gradients() {
    let mut rng = SplitMix64::new(606);
    for _ in 0..CASES {
        let n = rng.next_range(4, 32);
        // Keep inputs away from the kink at zero.
        let data: Vec<f64> = (0..n)
            .map(|_| {
                let v = rng.next_f64() * 2.0 - 1.0;
                v.signum() * (v.abs() + 0.01)
            })
            .collect();
        let x = Tensor::param(vec![n], data).unwrap();
        gradcheck("relu", &[x.clone()], &|g| ops::relu(g, &x).unwrap());
    }
}

#[test]
fn sigmoid_gradients() {
    let mut rng = SplitMix64::new(707);
    for _ in 0..CASES {
        let n = rng.next_range(4, 32);
        let x = param(&mut rng, vec![n], -4.0, 4.0);
        gradcheck("sigmoid", &[x.clone()], &|g| ops::sigmoid(g, &x).unwrap());
    }
}

#[test]
fn add_and_mul_gradients() {
    let mut rng = SplitMix64::new(808);
    for _ in 0..CASES {
        let n = rng.next_range(4, 24);
        let x = param(&mut rng, vec![n], -2.0, 2.0);
        let y = param(&mut rng, vec![n], -2.0, 2.0);
        gradcheck("add", &[x.clone(), y.clone()], &|g| {
            ops::add(g, &x, &y).unwrap()
        });
        let a = param(&mut rng, vec![n], -2.0, 2.0);
        let b = param(&mut rng, vec![n], -2.0, 2.0);
        gradcheck("mul", &[a.clone(), b.clone()], &|g| {
            ops::mul(g, &a, &b).unwrap()
        });
    }
}

#[test]
fn linear_gradients() {
    let mut rng = SplitMix64::new(909);
    for _ in 0..CASES {
        let (t, c, k) = (
            rng.next_range(1, 5),
            rng.next_range(1, 6),
            rng.next_range(1, 5),
        );
        let x = param(&mut rng, vec![t, c], -1.0, 1.0);
        let w = param(&mut rng, vec![k, c], -1.0, 1.0);
        let b = param(&mut rng, vec![k], -0.5, 0.5);
        gradcheck("linear", &[x.clone(), w.clone(), b.clone()], &|g| {
            ops::linear(g, &x, &w, &b).unwrap()
        });
    }
}

#[test]
fn spatial_avgpool_gradients() {
    let mut rng = SplitMix64::new(1010);
    for _ in 0..CASES {
        let dims = vec![
            rng.next_range(1, 3),
            rng.next_range(1, 3),
            rng.next_range(1, 4),
            rng.next_range(1, 4),
        ];
        let x = param(&mut rng, dims, -1.0, 1.0);
        gradcheck("spatial_avgpool", &[x.clone()], &|g| {
            ops::spatial_avgpool(g, &x).unwrap()
        });
    }
}

#[test]
fn bce_loss_gradients() {
    let mut rng = SplitMix64::new(1111);
    for _ in 0..CASES {
        let (t, k) = (rng.next_range(1, 4), rng.next_range(1, 4));
        let z = param(&mut rng, vec![t, k], -3.0, 3.0);
        let targets: Vec<f64> = (0..t * k)
            .map(|_| if rng.next_f32() < 0.5 { 0.0 } else { 1.0 })
            .collect();
        // Already scalar; no mask projection needed, check it directly.
        z.zero_grad();
        let mut g = Graph::recording();
        let loss = ops::bce_multilabel_loss(&mut g, &z, &targets).unwrap();
        g.backward(&loss).unwrap();
        let analytic = z.grad().unwrap();
        let orig = z.to_vec();
        for i in 0..orig.len() {
            let mut bumped = orig.clone();
            bumped[i] = orig[i] + EPS;
            z.set_data(&bumped);
            let fp = ops::bce_multilabel_loss(&mut Graph::inference(), &z, &targets)
                .unwrap()
                .item();
            bumped[i] = orig[i] - EPS;
            z.set_data(&bumped);
            let fm = ops::bce_multilabel_loss(&mut Graph::inference(), &z, &targets)
                .unwrap()
                .item();
            z.set_data(&orig);
            let fd = (fp - fm) / (2.0 * EPS);
            let denom = analytic[i].abs().max(fd.abs());
            assert!(
                if denom > 1e-6 {
                    (analytic[i] - fd).abs() / denom < TOL
                } else {
                    (analytic[i] - fd).abs() < 1e-7
                },
                "bce element {i}: analytic {} vs fd {fd}",
                analytic[i]
            );
        }
    }
}

/// Sum is linear; its gradient is exactly ones regardless of input.
#[test]
fn sum_gradients() {
    let mut rng = SplitMix64::new(1212);
    for _ in 0..CASES {
        let n = rng.next_range(1, 40);
        let x = param(&mut rng, vec![n], -3.0, 3.0);
        let mut g = Graph::recording();
        let s = ops::sum(&mut g, &x).unwrap();
        g.backward(&s).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; n]);
    }
}
