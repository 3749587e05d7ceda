//! Mini-batch training of the network.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sacl_core::checkpoint::{read_store, restore_into, write_store};
use sacl_core::geometry::{interocular_scale, LandmarkRole, LandmarkSet};
use sacl_core::losses::class_weights;
use sacl_core::model::Targets;
use sacl_core::{Ctx, Network, ParamKind, ParamStore};
use sacl_tensor::{Graph, Tensor};
use serde::{Deserialize, Serialize};

use crate::augment::{Augmenter, View};
use crate::config::RunConfig;
use crate::data::Dataset;
use crate::error::{PipelineError, Result};
use crate::optim::{check_finite, clip_grad_norm, Grads, Sgd};
use crate::schedule::CosineWarmup;

const MOMENTUM_PREFIX: &str = "momentum:";

/// Network inputs for a list of views: images scaled to `[-1, 1]`.
pub fn batch_tensors(views: &[View], labels: &[&[u8]], inner_eye: [usize; 2]) -> Result<(Tensor<f32>, Targets<f32>)> {
    let b = views.len();
    let size = views[0].image.width;
    let mut img = Vec::with_capacity(b * 3 * size * size);
    let mut lm = Vec::with_capacity(b * views[0].landmarks.len());
    let mut d_o = Vec::with_capacity(b);
    for v in views {
        img.extend(v.image.data.iter().map(|x| (x - 0.5) * 2.0));
        lm.extend(v.landmarks.iter().map(|&x| x as f32));
        let set = LandmarkSet::from_flat(&v.landmarks, LandmarkRole::GroundTruth)?;
        d_o.push(interocular_scale(&set, inner_eye)?);
    }
    let n_au = labels[0].len();
    let y: Vec<f32> = labels.iter().flat_map(|l| l.iter().map(|&v| f32::from(v))).collect();
    Ok((
        Tensor::new([b, 3, size, size], img)?,
        Targets {
            labels: Tensor::new([b, n_au], y)?,
            landmarks: Tensor::new([b, lm.len() / b], lm)?,
            d_o,
        },
    ))
}

/// Inverse-frequency AU weights from the training split. AUs that never
/// occur are counted as occurring once.
pub fn training_weights(data: &Dataset, idx: &[usize]) -> Result<Vec<f64>> {
    let floor = 1.0 / idx.len().max(1) as f64;
    let rates: Vec<f64> = data.occurrence_rates(idx).into_iter().map(|r| r.max(floor)).collect();
    Ok(class_weights(&rates)?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub wa: f64,
    pub dice: f64,
    pub land: f64,
    pub grad_norm: f64,
}

/// Everything needed to continue training bit-for-bit.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub step: usize,
    pub epoch: usize,
    pub params: ParamStore<f32>,
    pub sgd: Sgd<f32>,
    pub rng: ChaCha8Rng,
    pub best_metric: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    step: usize,
    epoch: usize,
    best_metric: Option<f64>,
    rng_seed: Vec<u8>,
    rng_stream: String,
    rng_word_pos: String,
}

impl TrainState {
    pub fn new(net: &Network, cfg: &RunConfig) -> Self {
        let params = net.init_params::<f32>(cfg.init_seed());
        let t = &cfg.train;
        Self {
            step: 0,
            epoch: 0,
            sgd: Sgd::new(params.len(), t.momentum, t.nesterov, t.weight_decay),
            params,
            rng: ChaCha8Rng::seed_from_u64(t.seed),
            best_metric: None,
        }
    }

    /// Parameters, momentum buffers and counters in one checkpoint file.
    pub fn save<W: Write>(&self, w: &mut W) -> Result<()> {
        let mut store = self.params.clone();
        for (e, buf) in self.params.entries().iter().zip(&self.sgd.buffers) {
            if let Some(b) = buf {
                store.insert(&format!("{MOMENTUM_PREFIX}{}", e.name), ParamKind::Buffer, b.clone());
            }
        }
        let meta = StateMeta {
            step: self.step,
            epoch: self.epoch,
            best_metric: self.best_metric,
            rng_seed: self.rng.get_seed().to_vec(),
            rng_stream: self.rng.get_stream().to_string(),
            rng_word_pos: self.rng.get_word_pos().to_string(),
        };
        let meta = serde_json::to_string(&meta).expect("state metadata serialises");
        Ok(write_store(w, &store, &meta)?)
    }

    /// Restore into a freshly constructed state for the same network.
    pub fn load<R: Read>(&mut self, r: &mut R) -> Result<()> {
        let (stored, meta) = read_store::<f32, _>(r)?;
        let meta: StateMeta =
            serde_json::from_str(&meta).map_err(|e| PipelineError::Config(format!("state metadata: {e}")))?;
        let mut params = ParamStore::new();
        let mut buffers = vec![None; self.params.len()];
        for e in stored.entries() {
            match e.name.strip_prefix(MOMENTUM_PREFIX) {
                Some(name) => {
                    let slot = self
                        .params
                        .position(name)
                        .ok_or_else(|| PipelineError::Config(format!("momentum for unknown parameter `{name}`")))?;
                    buffers[slot] = Some(e.value.clone());
                }
                None => params.insert(&e.name, e.kind, e.value.clone()),
            }
        }
        restore_into(&mut self.params, &params)?;
        self.sgd.buffers = buffers;
        let seed: [u8; 32] = meta
            .rng_seed
            .try_into()
            .map_err(|_| PipelineError::Config("state rng seed must be 32 bytes".into()))?;
        let parse = |s: &str| s.parse::<u128>().map_err(|e| PipelineError::Config(format!("state rng: {e}")));
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(parse(&meta.rng_stream)? as u64);
        rng.set_word_pos(parse(&meta.rng_word_pos)?);
        self.rng = rng;
        self.step = meta.step;
        self.epoch = meta.epoch;
        self.best_metric = meta.best_metric;
        Ok(())
    }
}

pub struct Trainer<'a> {
    pub cfg: &'a RunConfig,
    pub net: &'a Network,
    pub data: &'a Dataset,
    pub train_idx: Vec<usize>,
    pub omega: Vec<f64>,
    pub schedule: CosineWarmup,
    pub augment: Augmenter,
    pub state: TrainState,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a RunConfig, net: &'a Network, data: &'a Dataset, train_idx: Vec<usize>) -> Result<Self> {
        if train_idx.is_empty() {
            return Err(PipelineError::Config("no training samples".into()));
        }
        let t = &cfg.train;
        let per_epoch = train_idx.len().div_ceil(t.batch_size);
        Ok(Self {
            omega: training_weights(data, &train_idx)?,
            schedule: CosineWarmup::new(t.lr_max, per_epoch, t.warmup_epochs, t.epochs),
            augment: Augmenter::from_config(cfg)?,
            state: TrainState::new(net, cfg),
            cfg,
            net,
            data,
            train_idx,
        })
    }

    pub fn finished(&self) -> bool {
        self.state.epoch >= self.cfg.train.epochs || self.cfg.train.max_steps.is_some_and(|m| self.state.step >= m)
    }

    /// One optimiser step on the given samples.
    pub fn step(&mut self, batch: &[usize]) -> Result<StepLog> {
        let samples: Vec<_> = batch.iter().map(|&i| &self.data.samples[i]).collect();
        let views: Vec<View> = samples.iter().map(|s| self.augment.random(s, &mut self.state.rng)).collect();
        let labels: Vec<&[u8]> = samples.iter().map(|s| s.labels.as_slice()).collect();
        let (images, targets) = batch_tensors(&views, &labels, self.cfg.model.inner_eye)?;

        let mut g = Graph::new();
        let (mut grads, updates, values): (Grads<f32>, _, [f64; 4]) = {
            let mut ctx = Ctx::new(&mut g, &self.state.params, true).with_eps(self.cfg.model.bn_eps);
            let img = ctx.g.constant(images);
            let (_, terms) = self.net.loss(&mut ctx, img, &targets, &self.cfg.loss, &self.omega)?;
            ctx.g.backward(terms.total)?;
            let grads = ctx
                .bound_params()
                .into_iter()
                .filter_map(|(i, v)| ctx.g.grad(v).map(|t| (i, t.clone())))
                .collect();
            let values = [terms.total, terms.wa, terms.dice, terms.land].map(|v| f64::from(ctx.g.value(v).item()));
            (grads, ctx.take_norm_updates(), values)
        };
        check_finite(&self.state.params, &grads, self.state.step)?;
        let grad_norm = clip_grad_norm(&mut grads, self.cfg.train.clip_norm);
        let lr = self.schedule.lr(self.state.step);
        self.state.sgd.step(&mut self.state.params, &grads, lr);
        self.state.params.apply_norm_updates(&updates, self.cfg.model.bn_momentum);
        let log = StepLog {
            step: self.state.step,
            epoch: self.state.epoch,
            lr,
            loss: values[0],
            wa: values[1],
            dice: values[2],
            land: values[3],
            grad_norm,
        };
        self.state.step += 1;
        Ok(log)
    }

    /// Shuffle and run one epoch, stopping early at `max_steps`.
    pub fn epoch(&mut self) -> Result<Vec<StepLog>> {
        let mut order = self.train_idx.clone();
        order.shuffle(&mut self.state.rng);
        let mut logs = Vec::new();
        for chunk in order.chunks(self.cfg.train.batch_size) {
            if self.cfg.train.max_steps.is_some_and(|m| self.state.step >= m) {
                break;
            }
            logs.push(self.step(chunk)?);
        }
        self.state.epoch += 1;
        Ok(logs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthSpec};

    fn tiny() -> (RunConfig, Dataset) {
        let mut cfg = RunConfig::toy();
        cfg.data.synth_samples = 6;
        cfg.train.batch_size = 3;
        cfg.train.epochs = 4;
        let spec = SynthSpec::from_config(&cfg).unwrap();
        let raw = generate(&spec, 3).unwrap();
        let ds = Dataset::from_raw(raw, &spec.aus, &cfg).unwrap();
        (cfg, ds)
    }

    #[test]
    fn resumed_training_matches_uninterrupted_training() {
        let (cfg, ds) = tiny();
        let net = Network::new(cfg.model.clone()).unwrap();
        let idx: Vec<usize> = (0..6).collect();

        let mut a = Trainer::new(&cfg, &net, &ds, idx.clone()).unwrap();
        for _ in 0..3 {
            a.epoch().unwrap();
        }

        let mut b = Trainer::new(&cfg, &net, &ds, idx.clone()).unwrap();
        b.epoch().unwrap();
        let mut bytes = Vec::new();
        b.state.save(&mut bytes).unwrap();
        let mut c = Trainer::new(&cfg, &net, &ds, idx).unwrap();
        c.state.load(&mut bytes.as_slice()).unwrap();
        assert_eq!(c.state.step, 2);
        for _ in 0..2 {
            c.epoch().unwrap();
        }
        assert_eq!(a.state.params, c.state.params);
        assert_eq!(a.state.sgd, c.state.sgd);
    }

    #[test]
    fn weights_follow_training_rates() {
        let (_, ds) = tiny();
        let idx: Vec<usize> = (0..6).collect();
        let w = training_weights(&ds, &idx).unwrap();
        assert!((w.iter().sum::<f64>() - 3.0).abs() < 1e-12);
    }
}
