//! Named parameter storage and the per-forward binding context.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use sacl_tensor::{BatchStats, Graph, NormMode, Scalar, Tensor, Var};

use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    /// Non-trainable state such as batch-norm running statistics.
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry<T> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<T>,
}

/// Insertion-ordered collection of named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<Entry<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, kind: ParamKind, value: Tensor<T>) {
        match self.index.get(name) {
            Some(&i) => self.entries[i] = Entry { name: name.to_string(), kind, value },
            None => {
                self.index.insert(name.to_string(), self.entries.len());
                self.entries.push(Entry {
                    name: name.to_string(),
                    kind,
                    value,
                });
            }
        }
    }

    pub fn entries(&self) -> &[Entry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Entry<T>] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.position(name)
            .map(|i| &self.entries[i].value)
            .ok_or_else(|| CoreError::Argument(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        match self.position(name) {
            Some(i) => Ok(&mut self.entries[i].value),
            None => Err(CoreError::Argument(format!("unknown parameter `{name}`"))),
        }
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| e.value.len())
            .sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    kind: e.kind,
                    value: e.value.cast(),
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Fold training-mode batch statistics into the running buffers.
    pub fn apply_norm_updates(&mut self, updates: &[NormUpdate<T>], momentum: f64) {
        let m = T::of(momentum);
        for u in updates {
            for (slot, fresh) in [(u.mean_slot, &u.stats.mean), (u.var_slot, &u.stats.var)] {
                let buf = self.entries[slot].value.data_mut();
                for (b, &f) in buf.iter_mut().zip(fresh) {
                    *b = (T::one() - m) * *b + m * f;
                }
            }
        }
    }
}

pub fn uniform_tensor<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let dist = Uniform::new_inclusive(-bound, bound);
    Tensor::new(shape.to_vec(), (0..n).map(|_| T::of(dist.sample(rng))).collect())
        .expect("shape and data agree")
}

pub fn normal_tensor<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize], std: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("positive std");
    Tensor::new(shape.to_vec(), (0..n).map(|_| T::of(dist.sample(rng))).collect())
        .expect("shape and data agree")
}

/// A recorded training-mode batch-norm call.
#[derive(Clone, Debug)]
pub struct NormUpdate<T> {
    pub mean_slot: usize,
    pub var_slot: usize,
    pub stats: BatchStats<T>,
}

/// Binds stored parameters onto a graph for one forward pass.
pub struct Ctx<'a, T: Scalar> {
    pub g: &'a mut Graph<T>,
    store: &'a ParamStore<T>,
    bound: Vec<Option<Var>>,
    pub train: bool,
    pub bn_eps: f64,
    norm_updates: Vec<NormUpdate<T>>,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    pub fn new(g: &'a mut Graph<T>, store: &'a ParamStore<T>, train: bool) -> Self {
        Self {
            g,
            store,
            bound: vec![None; store.len()],
            train,
            bn_eps: 1e-5,
            norm_updates: Vec::new(),
        }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.bn_eps = eps;
        self
    }

    /// Use an existing graph node in place of a stored parameter.
    pub fn bind(&mut self, name: &str, var: Var) -> Result<()> {
        let i = self
            .store
            .position(name)
            .ok_or_else(|| CoreError::Argument(format!("unknown parameter `{name}`")))?;
        self.bound[i] = Some(var);
        Ok(())
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        let i = self
            .store
            .position(name)
            .ok_or_else(|| CoreError::Argument(format!("unknown parameter `{name}`")))?;
        if let Some(v) = self.bound[i] {
            return Ok(v);
        }
        let entry = &self.store.entries()[i];
        let v = self.g.leaf(entry.value.clone(), entry.kind == ParamKind::Trainable);
        self.bound[i] = Some(v);
        Ok(v)
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    /// Batch norm over axis 1 using `{prefix}.gamma/beta/running_mean/running_var`.
    pub fn batch_norm(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        let mean_name = format!("{prefix}.running_mean");
        let var_name = format!("{prefix}.running_var");
        let eps = T::of(self.bn_eps);
        if self.train {
            let (y, stats) = self.g.batch_norm(x, gamma, beta, NormMode::Train { eps })?;
            let mean_slot = self.store.position(&mean_name).expect("buffer registered with layer");
            let var_slot = self.store.position(&var_name).expect("buffer registered with layer");
            self.norm_updates.push(NormUpdate {
                mean_slot,
                var_slot,
                stats: stats.expect("train mode yields statistics"),
            });
            Ok(y)
        } else {
            let store = self.store;
            let mean = store.get(&mean_name)?.data();
            let var = store.get(&var_name)?.data();
            let (y, _) = self.g.batch_norm(x, gamma, beta, NormMode::Eval { mean, var, eps })?;
            Ok(y)
        }
    }

    /// `(store index, graph var)` for every trainable parameter used so far.
    pub fn bound_params(&self) -> Vec<(usize, Var)> {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (i, v)))
            .filter(|(i, _)| self.store.entries()[*i].kind == ParamKind::Trainable)
            .collect()
    }

    pub fn take_norm_updates(&mut self) -> Vec<NormUpdate<T>> {
        std::mem::take(&mut self.norm_updates)
    }
}

/// Fully connected layer: `weight: [d_in, d_out]`, `bias: [d_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub name: String,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, d_in: usize, d_out: usize) -> Self {
        Self {
            name: name.into(),
            d_in,
            d_out,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init<T: Scalar, R: Rng>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        self.init_scaled(store, rng, 1.0);
    }

    /// Default init with the weight range multiplied by `gain`.
    pub fn init_scaled<T: Scalar, R: Rng>(&self, store: &mut ParamStore<T>, rng: &mut R, gain: f64) {
        let bound = 1.0 / (self.d_in as f64).sqrt();
        store.insert(
            &self.weight_name(),
            ParamKind::Trainable,
            uniform_tensor(rng, &[self.d_in, self.d_out], gain * bound),
        );
        store.insert(
            &self.bias_name(),
            ParamKind::Trainable,
            uniform_tensor(rng, &[self.d_out], bound),
        );
    }

    pub fn param_count(&self) -> usize {
        self.d_in * self.d_out + self.d_out
    }

    /// `x: [m, d_in] -> [m, d_out]`
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = ctx.param(&self.weight_name())?;
        let b = ctx.param(&self.bias_name())?;
        Ok(ctx.g.linear(x, w, Some(b))?)
    }
}

/// Convolution (no bias) → batch norm → ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBnRelu {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvBnRelu {
    pub fn new(name: impl Into<String>, c_in: usize, c_out: usize, stride: usize) -> Self {
        Self {
            name: name.into(),
            c_in,
            c_out,
            kernel: 3,
            stride,
            pad: 1,
        }
    }

    pub fn init<T: Scalar, R: Rng>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        let fan_in = (self.c_in * self.kernel * self.kernel) as f64;
        store.insert(
            &format!("{}.conv.weight", self.name),
            ParamKind::Trainable,
            normal_tensor(rng, &[self.c_out, self.c_in, self.kernel, self.kernel], (2.0 / fan_in).sqrt()),
        );
        let c = self.c_out;
        store.insert(&format!("{}.bn.gamma", self.name), ParamKind::Trainable, Tensor::ones([c]));
        store.insert(&format!("{}.bn.beta", self.name), ParamKind::Trainable, Tensor::zeros([c]));
        store.insert(&format!("{}.bn.running_mean", self.name), ParamKind::Buffer, Tensor::zeros([c]));
        store.insert(&format!("{}.bn.running_var", self.name), ParamKind::Buffer, Tensor::ones([c]));
    }

    pub fn param_count(&self) -> usize {
        self.c_out * self.c_in * self.kernel * self.kernel + 2 * self.c_out
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = ctx.param(&format!("{}.conv.weight", self.name))?;
        let y = ctx.g.conv2d(x, w, None, self.stride, self.pad)?;
        let y = ctx.batch_norm(&format!("{}.bn", self.name), y)?;
        Ok(ctx.g.relu(y))
    }
}
