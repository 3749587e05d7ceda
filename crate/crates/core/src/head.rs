//! Token fusion and AU classifier.

use rand::Rng;
use sacl_tensor::{Scalar, Var};

use crate::error::{config_err, Result};
use crate::params::{Ctx, Linear, ParamStore};

#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub d_model: usize,
    pub hidden: Option<Linear>,
    pub fc: Linear,
}

#[derive(Clone, Copy, Debug)]
pub struct HeadOutput {
    /// `C: [B, N_MS + N_ROI, D]`
    pub fused: Var,
    pub logits: Var,
    pub probs: Var,
}

impl Head {
    pub fn new(d_model: usize, hidden: Option<usize>, n_au: usize) -> Self {
        let hidden_layer = hidden.map(|h| Linear::new("head.hidden", d_model, h));
        let d_in = hidden.unwrap_or(d_model);
        Self {
            d_model,
            hidden: hidden_layer,
            fc: Linear::new("head.fc", d_in, n_au),
        }
    }

    pub fn init<T: Scalar, R: Rng>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        if let Some(h) = &self.hidden {
            h.init(store, rng);
        }
        self.fc.init(store, rng);
    }

    pub fn param_count(&self) -> usize {
        self.hidden.as_ref().map_or(0, Linear::param_count) + self.fc.param_count()
    }

    /// `tokens: [B, N_MS, D]`, `nodes: [B·N_ROI, D]` → probabilities `[B, N_AU]`.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, tokens: Var, nodes: Var) -> Result<HeadOutput> {
        let ts = ctx.g.shape(tokens).to_vec();
        let ns = ctx.g.shape(nodes).to_vec();
        if ts.len() != 3 || ns.len() != 2 || ts[2] != self.d_model || ns[1] != self.d_model || !ns[0].is_multiple_of(ts[0]) {
            return Err(config_err(format!(
                "head expects tokens [B,N,{d}] and nodes [B·N_ROI,{d}], got {ts:?} and {ns:?}",
                d = self.d_model
            )));
        }
        let nodes = ctx.g.reshape(nodes, &[ts[0], ns[0] / ts[0], self.d_model])?;
        let fused = ctx.g.concat(&[tokens, nodes], 1)?;
        let mut x = ctx.g.mean_axis(fused, 1)?;
        if let Some(h) = &self.hidden {
            let y = h.forward(ctx, x)?;
            x = ctx.g.gelu(y);
        }
        let logits = self.fc.forward(ctx, x)?;
        let probs = ctx.g.sigmoid(logits);
        Ok(HeadOutput { fused, logits, probs })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sacl_tensor::{Graph, Tensor};

    #[test]
    fn zero_classifier_gives_one_half() {
        let head = Head::new(4, None, 3);
        let mut store = ParamStore::<f64>::new();
        store.insert("head.fc.weight", crate::ParamKind::Trainable, Tensor::zeros([4, 3]));
        store.insert("head.fc.bias", crate::ParamKind::Trainable, Tensor::zeros([3]));
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &store, false);
        let t = ctx.g.constant(Tensor::ones([2, 5, 4]));
        let n = ctx.g.constant(Tensor::ones([4, 4]));
        let out = head.forward(&mut ctx, t, n).unwrap();
        assert_eq!(ctx.g.shape(out.fused), &[2, 7, 4]);
        assert!(ctx.g.value(out.probs).data().iter().all(|&p| p == 0.5));
        let bad = ctx.g.constant(Tensor::ones([4, 3]));
        assert!(head.forward(&mut ctx, t, bad).is_err());
    }
}
