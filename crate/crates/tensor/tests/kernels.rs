use sacl_tensor::suite::{kernel_suite, rand_tensor};
use sacl_tensor::{gelu, Graph, NormMode, Tensor, TensorError};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 20;

#[test]
fn every_kernel_passes_gradient_checks() {
    let suite = kernel_suite(SEEDS).unwrap();
    assert!(suite.len() >= 20);
    for (name, report) in &suite {
        assert!(
            report.passed(),
            "{name}: max rel err {:.3e} (worst {:?}) over {} coords",
            report.max_rel_err,
            report.worst,
            report.checked
        );
    }
}

#[test]
fn matmul_examples() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::from_f64([2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap());
    let b = g.constant(Tensor::from_f64([2, 2], &[5.0, 6.0, 7.0, 8.0]).unwrap());
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[5.0, 6.0, 7.0, 8.0]);

    let a = g.constant(Tensor::from_f64([1, 2], &[1.0, 2.0]).unwrap());
    let b = g.constant(Tensor::from_f64([2, 1], &[3.0, 4.0]).unwrap());
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[11.0]);

    let bad = g.constant(Tensor::zeros([3, 1]));
    assert!(matches!(g.matmul(a, bad), Err(TensorError::Dimension { .. })));
}

#[test]
fn conv2d_examples() {
    let mut g = Graph::<f64>::new();
    let vals: Vec<f64> = (1..=9).map(f64::from).collect();
    let x = g.constant(Tensor::from_f64([1, 1, 3, 3], &vals).unwrap());
    let one = g.constant(Tensor::ones([1, 1, 1, 1]));
    let y = g.conv2d(x, one, None, 1, 0).unwrap();
    assert_eq!(g.value(y).data(), vals.as_slice());

    let ones = g.constant(Tensor::ones([1, 1, 3, 3]));
    let k = g.constant(Tensor::ones([1, 1, 3, 3]));
    let y = g.conv2d(ones, k, None, 1, 0).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 1, 1]);
    assert_eq!(g.value(y).data(), &[9.0]);

    let big = g.constant(Tensor::ones([1, 1, 5, 5]));
    let y = g.conv2d(ones, big, None, 1, 0);
    assert!(matches!(y, Err(TensorError::Dimension { .. })));
}

#[test]
fn conv2d_output_extent_formula() {
    let mut g = Graph::<f64>::new();
    for (h, k, s, p) in [(7, 3, 2, 1), (8, 3, 1, 1), (9, 2, 2, 0), (5, 5, 1, 2)] {
        let x = g.constant(Tensor::zeros([1, 2, h, h]));
        let w = g.constant(Tensor::zeros([3, 2, k, k]));
        let y = g.conv2d(x, w, None, s, p).unwrap();
        let expect = (h + 2 * p - k) / s + 1;
        assert_eq!(g.shape(y), &[1, 3, expect, expect]);
    }
}

#[test]
fn gelu_values() {
    assert_eq!(gelu(0.0f64), 0.0);
    // 1·Φ(1) with Φ(1) = 0.841344746...
    assert!((gelu(1.0f64) - 0.841_344_746).abs() < 1e-6);
    assert!(gelu(-10.0f64).abs() < 1e-6);
    let mut prev = f64::NEG_INFINITY;
    for i in -300..300 {
        let v = gelu(i as f64 / 100.0);
        // gelu has its minimum near -0.7518 and is non-decreasing above it
        if i >= -74 {
            assert!(v >= prev);
        }
        prev = v;
    }
}

#[test]
fn max_of_tie_rule() {
    let mut g = Graph::<f64>::new();
    let a = g.param(Tensor::from_f64([2], &[1.0, 3.0]).unwrap());
    let b = g.param(Tensor::from_f64([2], &[1.0, 2.0]).unwrap());
    let m = g.max_of(&[a, b]).unwrap();
    let s = g.sum(m);
    g.backward(s).unwrap();
    // tie on the first coordinate goes to the earliest operand
    assert_eq!(g.grad(a).unwrap().data(), &[1.0, 1.0]);
    assert_eq!(g.grad(b).unwrap().data(), &[0.0, 0.0]);
}

#[test]
fn batch_norm_statistics() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::from_f64([2, 1, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
    let gamma = g.constant(Tensor::ones([1]));
    let beta = g.constant(Tensor::zeros([1]));
    let (y, stats) = g.batch_norm(x, gamma, beta, NormMode::Train { eps: 0.0 }).unwrap();
    let stats = stats.unwrap();
    assert_eq!(stats.mean, vec![2.5]);
    assert!((stats.var[0] - 5.0 / 3.0).abs() < 1e-12);
    let out = g.value(y).data();
    assert!((out.iter().sum::<f64>()).abs() < 1e-12);

    // an all-zero input stays finite thanks to eps
    let z = g.constant(Tensor::zeros([2, 1, 2]));
    let (y, _) = g.batch_norm(z, gamma, beta, NormMode::Train { eps: 1e-5 }).unwrap();
    assert!(g.value(y).all_finite());
}

proptest! {
    #[test]
    fn concat_then_narrow_recovers_operands(
        axis in 0usize..3,
        la in 1usize..4,
        lb in 1usize..4,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::<f64>::new();
        let mut sa = vec![2, 3, 4];
        let mut sb = sa.clone();
        sa[axis] = la;
        sb[axis] = lb;
        let a = g.constant(rand_tensor(&mut rng, &sa));
        let b = g.constant(rand_tensor(&mut rng, &sb));
        let c = g.concat(&[a, b], axis).unwrap();
        let a2 = g.narrow(c, axis, 0, la).unwrap();
        let b2 = g.narrow(c, axis, la, lb).unwrap();
        prop_assert_eq!(g.value(a2), g.value(a));
        prop_assert_eq!(g.value(b2), g.value(b));
    }

    #[test]
    fn nearest_upsampling_is_block_constant(f in 1usize..5, h in 1usize..4, w in 1usize..4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::<f64>::new();
        let x = g.constant(rand_tensor(&mut rng, &[2, h, w]));
        let y = g.upsample_nearest(x, f).unwrap();
        prop_assert_eq!(g.shape(y), &[2, f * h, f * w]);
        let (xv, yv) = (g.value(x).data(), g.value(y).data());
        for c in 0..2 {
            for oy in 0..f * h {
                for ox in 0..f * w {
                    prop_assert_eq!(yv[(c * f * h + oy) * f * w + ox], xv[(c * h + oy / f) * w + ox / f]);
                }
            }
        }
    }
}

#[test]
fn upsample_nearest_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::from_f64([1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
    let same = g.upsample_nearest(x, 1).unwrap();
    assert_eq!(g.value(same), g.value(x));
    let seven = g.constant(Tensor::full([1, 1, 1], 7.0));
    let up = g.upsample_nearest(seven, 2).unwrap();
    assert_eq!(g.value(up).data(), &[7.0; 4]);
    let up = g.upsample_nearest(x, 2).unwrap();
    assert_eq!(
        g.value(up).data(),
        &[
            1.0, 1.0, 2.0, 2.0, //
            1.0, 1.0, 2.0, 2.0, //
            3.0, 3.0, 4.0, 4.0, //
            3.0, 3.0, 4.0, 4.0,
        ]
    );
    assert!(matches!(g.upsample_nearest(x, 0), Err(TensorError::Argument { .. })));
}

#[test]
fn backward_contract() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::scalar(3.0));
    let sq = g.mul(x, x).unwrap();
    g.backward(sq).unwrap();
    assert_eq!(g.grad(x).unwrap().item(), 6.0);
    g.backward(sq).unwrap();
    assert_eq!(g.grad(x).unwrap().item(), 12.0);
    g.zero_grad();
    assert!(g.grad(x).is_none());

    let v = g.param(Tensor::zeros([2]));
    assert!(matches!(g.backward(v), Err(TensorError::Argument { .. })));
}

#[test]
fn forward_is_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut g = Graph::<f32>::new();
        let x = g.constant(rand_tensor(&mut rng, &[2, 3, 6, 6]).cast());
        let w = g.param(rand_tensor(&mut rng, &[4, 3, 3, 3]).cast());
        let y = g.conv2d(x, w, None, 2, 1).unwrap();
        let p = g.max_pool2d(y, 2).unwrap();
        let s = g.gelu(p);
        let t = g.sum(s);
        g.backward(t).unwrap();
        (g.value(s).clone(), g.grad(w).unwrap().clone())
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert_eq!(
        a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(ga, gb);
}
