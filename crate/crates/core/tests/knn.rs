use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sacl_core::sacl::{distance, knn_graph};
use sacl_core::Metric;

const METRICS: [Metric; 3] = [Metric::Euclidean, Metric::Manhattan, Metric::Cosine];

/// Repeated arg-min selection over the full distance matrix.
fn oracle(x: &[f64], n: usize, d: usize, k: usize, m: Metric) -> Vec<Vec<usize>> {
    let row = |i: usize| &x[i * d..(i + 1) * d];
    (0..n)
        .map(|i| {
            let dist: Vec<f64> = (0..n).map(|j| distance(m, row(i), row(j))).collect();
            let mut taken = vec![false; n];
            taken[i] = true;
            let mut out = Vec::new();
            for _ in 0..k {
                let mut best: Option<usize> = None;
                for j in 0..n {
                    if !taken[j] && best.is_none_or(|b| dist[j] < dist[b]) {
                        best = Some(j);
                    }
                }
                let b = best.unwrap();
                taken[b] = true;
                out.push(b);
            }
            out
        })
        .collect()
}

fn instance(rng: &mut ChaCha8Rng, idx: usize) -> (Vec<f64>, usize, usize, usize) {
    let n = rng.gen_range(2..=32);
    let d = rng.gen_range(1..=64);
    let k = rng.gen_range(1..n);
    let x: Vec<f64> = match idx % 4 {
        // continuous
        0 | 1 => (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        // small integer lattice: many exact ties
        2 => (0..n * d).map(|_| rng.gen_range(-2..=2) as f64).collect(),
        // duplicated rows: zero distances and full ties
        _ => {
            let base: Vec<f64> = (0..3 * d).map(|_| rng.gen_range(-1..=1) as f64).collect();
            (0..n).flat_map(|i| base[(i % 3) * d..(i % 3 + 1) * d].to_vec()).collect()
        }
    };
    (x, n, d, k)
}

#[test]
fn matches_brute_force_on_200_instances_per_metric() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for idx in 0..200 {
        let (x, n, d, k) = instance(&mut rng, idx);
        for m in METRICS {
            let got = knn_graph(&x, n, d, k, m).unwrap();
            assert_eq!(got.adjacency, oracle(&x, n, d, k, m), "instance {idx} metric {m:?}");
            for (i, row) in got.adjacency.iter().enumerate() {
                let mut r = row.clone();
                r.sort();
                r.dedup();
                assert_eq!(r.len(), k);
                assert!(!row.contains(&i));
            }
        }
    }
}

#[test]
fn full_neighbourhood_when_k_is_n_minus_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<f64> = (0..7 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let g = knn_graph(&x, 7, 3, 6, Metric::Cosine).unwrap();
    for (i, row) in g.adjacency.iter().enumerate() {
        let mut r = row.clone();
        r.sort();
        assert_eq!(r, (0..7).filter(|&j| j != i).collect::<Vec<_>>());
    }
}

proptest! {
    #[test]
    fn translation_and_scale_invariant(
        seed in any::<u64>(),
        shift in -5i32..5,
        scale in 1i32..4,
        metric_idx in 0usize..2,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, d) = (rng.gen_range(3..12), rng.gen_range(1..5));
        let k = rng.gen_range(1..n);
        let m = METRICS[metric_idx];
        let x: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-3..=3) as f64).collect();
        let base = knn_graph(&x, n, d, k, m).unwrap();
        let moved: Vec<f64> = x.iter().map(|v| v + shift as f64).collect();
        let scaled: Vec<f64> = x.iter().map(|v| v * scale as f64).collect();
        prop_assert_eq!(&knn_graph(&moved, n, d, k, m).unwrap().adjacency, &base.adjacency);
        prop_assert_eq!(&knn_graph(&scaled, n, d, k, m).unwrap().adjacency, &base.adjacency);
    }

    #[test]
    fn permutation_equivariant(seed in any::<u64>(), metric_idx in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // one-dimensional cosine distances are all 0 or 2, i.e. tied
        let (n, d) = (rng.gen_range(3..16), rng.gen_range(2..6));
        let k = rng.gen_range(1..n);
        let m = METRICS[metric_idx];
        let x: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        // node i is stored at position perm[i]
        let mut y = vec![0.0; n * d];
        for i in 0..n {
            y[perm[i] * d..(perm[i] + 1) * d].copy_from_slice(&x[i * d..(i + 1) * d]);
        }
        let gx = knn_graph(&x, n, d, k, m).unwrap();
        let gy = knn_graph(&y, n, d, k, m).unwrap();
        for i in 0..n {
            let mapped: Vec<usize> = gx.adjacency[i].iter().map(|&j| perm[j]).collect();
            prop_assert_eq!(&gy.adjacency[perm[i]], &mapped);
        }
    }
}
