//! SGD with (Nesterov) momentum and L2 weight decay, plus global-norm
//! gradient clipping.

use sacl_core::{ParamKind, ParamStore};
use sacl_tensor::{Scalar, Tensor};

use crate::error::{PipelineError, Result};

/// Gradients keyed by parameter-store index.
pub type Grads<T> = Vec<(usize, Tensor<T>)>;

pub fn global_norm<T: Scalar>(grads: &[(usize, Tensor<T>)]) -> f64 {
    grads
        .iter()
        .flat_map(|(_, g)| g.data())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescale so the global L2 norm is at most `max_norm`; returns the norm
/// before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [(usize, Tensor<T>)], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let c = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            for v in g.data_mut() {
                *v = T::of(v.as_f64() * c);
            }
        }
    }
    norm
}

pub fn check_finite<T: Scalar>(store: &ParamStore<T>, grads: &[(usize, Tensor<T>)], step: usize) -> Result<()> {
    match grads.iter().find(|(_, g)| !g.all_finite()) {
        Some((i, _)) => Err(PipelineError::NonFinite {
            param: store.entries()[*i].name.clone(),
            step,
        }),
        None => Ok(()),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sgd<T> {
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
    /// Momentum buffer per store slot, created on first update.
    pub buffers: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(slots: usize, momentum: f64, nesterov: bool, weight_decay: f64) -> Self {
        Self {
            momentum,
            nesterov,
            weight_decay,
            buffers: vec![None; slots],
        }
    }

    /// One update:
    ///
    /// ```text
    /// g ← g + wd·w
    /// b ← g (first step) or μ·b + g
    /// d ← g + μ·b (Nesterov) or b
    /// w ← w − lr·d
    /// ```
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(usize, Tensor<T>)], lr: f64) {
        let (mu, wd) = (self.momentum, self.weight_decay);
        for (slot, grad) in grads {
            let entry = &mut store.entries_mut()[*slot];
            debug_assert_eq!(entry.kind, ParamKind::Trainable);
            let w = entry.value.data_mut();
            let g: Vec<f64> = grad.data().iter().zip(w.iter()).map(|(g, w)| g.as_f64() + wd * w.as_f64()).collect();
            let dir: Vec<f64> = if mu == 0.0 {
                g
            } else {
                let buf = match &mut self.buffers[*slot] {
                    Some(b) => {
                        for (b, gi) in b.data_mut().iter_mut().zip(&g) {
                            *b = T::of(mu * b.as_f64() + gi);
                        }
                        b
                    }
                    slot_buf @ None => slot_buf.insert(Tensor::new(grad.shape().to_vec(), g.iter().map(|&v| T::of(v)).collect()).expect("gradient shape")),
                };
                if self.nesterov {
                    g.iter().zip(buf.data()).map(|(gi, b)| gi + mu * b.as_f64()).collect()
                } else {
                    buf.data().iter().map(|b| b.as_f64()).collect()
                }
            };
            for (w, d) in w.iter_mut().zip(dir) {
                *w = T::of(w.as_f64() - lr * d);
            }
        }
    }
}
