//! Training objectives: weighted asymmetric loss, weighted dice loss,
//! normalised landmark loss and their weighted sum.
//!
//! Each has a plain `f64` form for reporting and a graph form that
//! differentiates through the network. Batched graph losses average the
//! per-sample values over the batch.

// `!(x > 0.0)` style checks also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use sacl_tensor::{Graph, Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    #[serde(alias = "λ1")]
    pub lambda1: f64,
    #[serde(alias = "λ2")]
    pub lambda2: f64,
    #[serde(alias = "λ3")]
    pub lambda3: f64,
    /// Dice smoothing term.
    pub dice_eps: f64,
    /// Probabilities are clamped to `[c, 1 - c]` before logarithms.
    pub prob_clamp: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 0.5,
            dice_eps: 1.0,
            prob_clamp: 1e-7,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda1, self.lambda2, self.lambda3].iter().any(|l| !(*l >= 0.0)) {
            return Err(CoreError::Config("loss weights must be non-negative".into()));
        }
        if !(self.dice_eps > 0.0) || !(self.prob_clamp > 0.0 && self.prob_clamp < 0.5) {
            return Err(CoreError::Config("dice_eps must be positive, prob_clamp in (0, 0.5)".into()));
        }
        Ok(())
    }

    pub fn combine(&self, wa: f64, dice: f64, land: f64) -> f64 {
        self.lambda1 * wa + self.lambda2 * dice + self.lambda3 * land
    }
}

/// `ω_i = N (1/r_i) / Σ_j (1/r_j)`
pub fn class_weights(rates: &[f64]) -> Result<Vec<f64>> {
    if rates.is_empty() {
        return Err(CoreError::Argument("no occurrence rates".into()));
    }
    if let Some(bad) = rates.iter().find(|&&r| !(r > 0.0) || !r.is_finite()) {
        return Err(CoreError::Argument(format!("occurrence rate {bad} must be positive")));
    }
    let inv_sum: f64 = rates.iter().map(|r| 1.0 / r).sum();
    let n = rates.len() as f64;
    Ok(rates.iter().map(|r| n * (1.0 / r) / inv_sum).collect())
}

fn check_lens(y: &[f64], p: &[f64], w: &[f64]) -> Result<()> {
    if y.len() != p.len() || y.len() != w.len() || y.is_empty() {
        return Err(CoreError::Argument(format!(
            "labels {}, probabilities {}, weights {}",
            y.len(),
            p.len(),
            w.len()
        )));
    }
    Ok(())
}

pub fn weighted_asymmetric_loss(y: &[f64], p: &[f64], w: &[f64], clamp: f64) -> Result<f64> {
    check_lens(y, p, w)?;
    let s: f64 = y
        .iter()
        .zip(p)
        .zip(w)
        .map(|((&y, &p), &w)| {
            let p = p.clamp(clamp, 1.0 - clamp);
            w * (y * p.ln() + (1.0 - y) * p * (1.0 - p).ln())
        })
        .sum();
    Ok(-s / y.len() as f64)
}

pub fn dice_term(y: f64, p: f64, eps: f64) -> f64 {
    1.0 - (2.0 * y * p + eps) / (y * y + p * p + eps)
}

pub fn weighted_dice_loss(y: &[f64], p: &[f64], w: &[f64], eps: f64) -> Result<f64> {
    check_lens(y, p, w)?;
    let s: f64 = y.iter().zip(p).zip(w).map(|((&y, &p), &w)| w * dice_term(y, p, eps)).sum();
    Ok(s / y.len() as f64)
}

/// `(1 / 2d_o²) Σ (Δx² + Δy²)` over flattened `x1, y1, ...` coordinates.
pub fn landmark_loss(gt: &[f64], pred: &[f64], d_o: f64) -> Result<f64> {
    if gt.len() != pred.len() {
        return Err(CoreError::Argument(format!("{} vs {} coordinates", gt.len(), pred.len())));
    }
    if !(d_o > 0.0) {
        return Err(CoreError::DegenerateScale(format!("inter-ocular distance {d_o}")));
    }
    let s: f64 = gt.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / (2.0 * d_o * d_o))
}

fn tile_rows<T: Scalar>(row: &[f64], batch: usize) -> Tensor<T> {
    let data: Vec<T> = (0..batch).flat_map(|_| row.iter().map(|&v| T::of(v))).collect();
    Tensor::new([batch, row.len()], data).expect("tiled shape")
}

fn check_batch<T: Scalar>(g: &Graph<T>, p: Var, y: &Tensor<T>, omega: &[f64]) -> Result<usize> {
    let s = g.shape(p);
    if s.len() != 2 || s != y.shape() || s[1] != omega.len() {
        return Err(CoreError::Argument(format!(
            "probabilities {s:?}, labels {:?}, {} weights",
            y.shape(),
            omega.len()
        )));
    }
    Ok(s[0])
}

/// Graph form of the weighted asymmetric loss for `p, y: [B, N_AU]`.
pub fn wa_loss_graph<T: Scalar>(g: &mut Graph<T>, p: Var, y: &Tensor<T>, omega: &[f64], clamp: f64) -> Result<Var> {
    let batch = check_batch(g, p, y, omega)?;
    let p = g.clamp(p, T::of(clamp), T::of(1.0 - clamp));
    let y_v = g.constant(y.clone());
    let not_y = g.constant(y.map(|v| T::one() - v));
    let w = g.constant(tile_rows(omega, batch));
    let log_p = g.log(p);
    let one_minus = g.rsub_scalar(T::one(), p);
    let log_q = g.log(one_minus);
    let pos = g.mul(y_v, log_p)?;
    let neg = g.mul(not_y, p)?;
    let neg = g.mul(neg, log_q)?;
    let t = g.add(pos, neg)?;
    let t = g.mul(t, w)?;
    let m = g.mean(t);
    Ok(g.scale(m, -T::one()))
}

pub fn dice_loss_graph<T: Scalar>(g: &mut Graph<T>, p: Var, y: &Tensor<T>, omega: &[f64], eps: f64) -> Result<Var> {
    let batch = check_batch(g, p, y, omega)?;
    let y_v = g.constant(y.clone());
    let y_sq = g.constant(y.map(|v| v * v));
    let w = g.constant(tile_rows(omega, batch));
    let yp = g.mul(y_v, p)?;
    let num = g.scale(yp, T::of(2.0));
    let num = g.add_scalar(num, T::of(eps));
    let p_sq = g.mul(p, p)?;
    let den = g.add(p_sq, y_sq)?;
    let den = g.add_scalar(den, T::of(eps));
    let ratio = g.div(num, den)?;
    let term = g.rsub_scalar(T::one(), ratio);
    let term = g.mul(term, w)?;
    Ok(g.mean(term))
}

/// `pred, gt: [B, 2·N_land]`, `d_o`: per-sample ground-truth scale.
pub fn landmark_loss_graph<T: Scalar>(g: &mut Graph<T>, pred: Var, gt: &Tensor<T>, d_o: &[f64]) -> Result<Var> {
    let s = g.shape(pred).to_vec();
    if s.len() != 2 || s != gt.shape() || s[0] != d_o.len() {
        return Err(CoreError::Argument(format!(
            "landmarks {s:?} vs {:?} with {} scales",
            gt.shape(),
            d_o.len()
        )));
    }
    if let Some(bad) = d_o.iter().find(|&&d| !(d > 0.0)) {
        return Err(CoreError::DegenerateScale(format!("inter-ocular distance {bad}")));
    }
    let (batch, n) = (s[0], s[1]);
    let factors: Vec<T> = d_o
        .iter()
        .flat_map(|&d| std::iter::repeat_n(T::of(1.0 / (2.0 * d * d * batch as f64)), n))
        .collect();
    let gt_v = g.constant(gt.clone());
    let f = g.constant(Tensor::new([batch, n], factors)?);
    let diff = g.sub(pred, gt_v)?;
    let sq = g.mul(diff, diff)?;
    let weighted = g.mul(sq, f)?;
    Ok(g.sum(weighted))
}

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub wa: Var,
    pub dice: Var,
    pub land: Var,
}

#[allow(clippy::too_many_arguments)]
pub fn total_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &LossConfig,
    probs: Var,
    labels: &Tensor<T>,
    omega: &[f64],
    pred_landmarks: Var,
    gt_landmarks: &Tensor<T>,
    d_o: &[f64],
) -> Result<LossTerms> {
    let wa = wa_loss_graph(g, probs, labels, omega, cfg.prob_clamp)?;
    let dice = dice_loss_graph(g, probs, labels, omega, cfg.dice_eps)?;
    let land = landmark_loss_graph(g, pred_landmarks, gt_landmarks, d_o)?;
    let a = g.scale(wa, T::of(cfg.lambda1));
    let b = g.scale(dice, T::of(cfg.lambda2));
    let c = g.scale(land, T::of(cfg.lambda3));
    let ab = g.add(a, b)?;
    let total = g.add(ab, c)?;
    Ok(LossTerms { total, wa, dice, land })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_examples() {
        assert_eq!(class_weights(&[1.0 / 3.0; 3]).unwrap(), vec![1.0, 1.0, 1.0]);
        let w = class_weights(&[0.5, 0.25, 0.25]).unwrap();
        for (a, b) in w.iter().zip([0.6, 1.2, 1.2]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(class_weights(&[0.5, 0.0]).is_err());
        assert!(class_weights(&[-0.1]).is_err());
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn asymmetric_examples() {
        let c = 1e-7;
        assert!((weighted_asymmetric_loss(&[1.0], &[0.5], &[1.0], c).unwrap() - 0.693147).abs() < 1e-6);
        assert!((weighted_asymmetric_loss(&[0.0], &[0.5], &[1.0], c).unwrap() - 0.346574).abs() < 1e-6);
        assert!(weighted_asymmetric_loss(&[1.0, 0.0], &[1.0, 0.0], &[1.0, 1.0], c).unwrap() < 1e-6);
    }

    #[test]
    fn dice_examples() {
        assert_eq!(dice_term(0.0, 0.0, 1.0), 0.0);
        assert_eq!(dice_term(1.0, 1.0, 1.0), 0.0);
        assert_eq!(dice_term(1.0, 0.0, 1.0), 0.5);
    }

    #[test]
    fn landmark_examples() {
        assert_eq!(landmark_loss(&[0.0, 0.0], &[3.0, 4.0], 5.0).unwrap(), 0.5);
        assert_eq!(landmark_loss(&[1.0, 2.0], &[1.0, 2.0], 5.0).unwrap(), 0.0);
        assert!(matches!(landmark_loss(&[0.0], &[1.0], 0.0), Err(CoreError::DegenerateScale(_))));
    }

    #[test]
    fn graph_forms_match_plain_forms() {
        let y = [1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        let p = [0.9, 0.2, 0.4, 0.7, 0.05, 0.6];
        let w = [0.5, 1.0, 1.5];
        let mut g = Graph::<f64>::new();
        let pv = g.constant(Tensor::from_f64([2, 3], &p).unwrap());
        let yt = Tensor::from_f64([2, 3], &y).unwrap();
        let wa = wa_loss_graph(&mut g, pv, &yt, &w, 1e-7).unwrap();
        let dice = dice_loss_graph(&mut g, pv, &yt, &w, 1.0).unwrap();
        let plain = |f: &dyn Fn(&[f64], &[f64]) -> f64| (f(&y[..3], &p[..3]) + f(&y[3..], &p[3..])) / 2.0;
        let wa_ref = plain(&|y, p| weighted_asymmetric_loss(y, p, &w, 1e-7).unwrap());
        let dice_ref = plain(&|y, p| weighted_dice_loss(y, p, &w, 1.0).unwrap());
        assert!((g.value(wa).item() - wa_ref).abs() < 1e-12);
        assert!((g.value(dice).item() - dice_ref).abs() < 1e-12);

        let gt = Tensor::from_f64([2, 2], &[0.0, 0.0, 1.0, 1.0]).unwrap();
        let pr = g.constant(Tensor::from_f64([2, 2], &[3.0, 4.0, 1.0, 1.0]).unwrap());
        let land = landmark_loss_graph(&mut g, pr, &gt, &[5.0, 2.0]).unwrap();
        assert!((g.value(land).item() - 0.25).abs() < 1e-15);
    }
}
