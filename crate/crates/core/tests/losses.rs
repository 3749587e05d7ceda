use proptest::prelude::*;
use sacl_core::losses::{
    class_weights, dice_term, landmark_loss, total_loss_graph, weighted_asymmetric_loss, weighted_dice_loss,
};
use sacl_core::metrics::{f1_and_accuracy, f1_score};
use sacl_core::LossConfig;
use sacl_tensor::{Graph, Tensor};

proptest! {
    #[test]
    fn class_weights_sum_to_n_and_favour_rare_aus(rates in prop::collection::vec(0.001f64..1.0, 1..20)) {
        let w = class_weights(&rates).unwrap();
        prop_assert!((w.iter().sum::<f64>() - rates.len() as f64).abs() < 1e-12);
        for i in 0..rates.len() {
            for j in 0..rates.len() {
                if rates[i] < rates[j] {
                    prop_assert!(w[i] > w[j]);
                }
            }
        }
    }

    #[test]
    fn dice_term_is_bounded(y in 0.0f64..=1.0, p in 0.0f64..=1.0) {
        let d = dice_term(y, p, 1.0);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!(dice_term(p, p, 1.0).abs() < 1e-15);
    }

    #[test]
    fn asymmetric_loss_is_non_negative(
        cells in prop::collection::vec((0u8..2, 0.0f64..=1.0, 0.01f64..5.0), 1..30),
    ) {
        let y: Vec<f64> = cells.iter().map(|c| c.0 as f64).collect();
        let p: Vec<f64> = cells.iter().map(|c| c.1).collect();
        let w: Vec<f64> = cells.iter().map(|c| c.2).collect();
        prop_assert!(weighted_asymmetric_loss(&y, &p, &w, 1e-7).unwrap() >= 0.0);
        prop_assert!(weighted_dice_loss(&y, &p, &w, 1.0).unwrap() >= 0.0);
    }

    #[test]
    fn landmark_loss_is_similarity_invariant(
        pts in prop::collection::vec(-100.0f64..100.0, 8),
        noise in prop::collection::vec(-3.0f64..3.0, 8),
        s in 0.1f64..10.0,
    ) {
        let pred: Vec<f64> = pts.iter().zip(&noise).map(|(a, b)| a + b).collect();
        let base = landmark_loss(&pts, &pred, 20.0).unwrap();
        let sp: Vec<f64> = pts.iter().map(|v| v * s + 7.0).collect();
        let spred: Vec<f64> = pred.iter().map(|v| v * s + 7.0).collect();
        let scaled = landmark_loss(&sp, &spred, 20.0 * s).unwrap();
        prop_assert!((base - scaled).abs() <= 1e-9 * base.max(1.0));
    }

    #[test]
    fn f1_is_at_most_one(tp in 0usize..50, fp in 0usize..50, fn_ in 0usize..50) {
        let f = f1_score(tp, fp, fn_);
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert_eq!(f == 1.0, tp > 0 && fp == 0 && fn_ == 0);
    }

    #[test]
    fn total_loss_is_linear_in_lambda(
        l1 in 0.0f64..3.0, l2 in 0.0f64..3.0, l3 in 0.0f64..3.0, k in 0.1f64..4.0,
    ) {
        let run = |lambda: [f64; 3]| {
            let cfg = LossConfig { lambda1: lambda[0], lambda2: lambda[1], lambda3: lambda[2], ..LossConfig::default() };
            let mut g = Graph::<f64>::new();
            let p = g.constant(Tensor::from_f64([2, 3], &[0.2, 0.7, 0.9, 0.4, 0.1, 0.6]).unwrap());
            let y = Tensor::from_f64([2, 3], &[0.0, 1.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
            let lm = g.constant(Tensor::from_f64([2, 4], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap());
            let gt = Tensor::from_f64([2, 4], &[1.5, 2.0, 2.0, 4.0, 5.0, 6.5, 7.0, 9.0]).unwrap();
            let t = total_loss_graph(&mut g, &cfg, p, &y, &[0.5, 1.0, 1.5], lm, &gt, &[2.0, 3.0]).unwrap();
            g.value(t.total).item()
        };
        let a = run([l1, l2, l3]);
        let b = run([k * l1, k * l2, k * l3]);
        prop_assert!((b - k * a).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn metric_report_csv_layout() {
    let labels = [true, false, true, true, false, false];
    let preds = [true, true, true, false, false, false];
    let r = f1_and_accuracy(&preds, &labels, &[1, 12]).unwrap();
    assert_eq!(r.per_au[0].f1, 1.0);
    assert_eq!(r.per_au[1].f1, 0.0);
    let csv = r.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "au_id,f1,accuracy");
    assert_eq!(lines[1], "1,1.0000,1.0000");
    assert_eq!(lines[3], "mean,0.5000,0.6667");
}
