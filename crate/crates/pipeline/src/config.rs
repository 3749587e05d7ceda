//! Run configuration: one flat TOML document holding the model, loss,
//! optimiser and data settings side by side.

// `!(x > 0.0)` style checks also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeSet;
use std::path::Path;

use sacl_core::geometry::N_LANDMARKS;
use sacl_core::template::{flip_permutation, FLIP_PAIRS};
use sacl_core::{LossConfig, ModelConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, PipelineError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub lr_max: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub deterministic: bool,
    /// Stop after this many optimiser steps even if epochs remain.
    pub max_steps: Option<usize>,
    /// Seed of the parameter initialisation; defaults to `seed`.
    pub init_seed: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            epochs: 12,
            warmup_epochs: 1,
            lr_max: 1e-3,
            momentum: 0.9,
            nesterov: true,
            weight_decay: 5e-4,
            clip_norm: 5.0,
            seed: 0,
            deterministic: false,
            max_steps: None,
            init_seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Side of the aligned face images; training crops `input_size` from it.
    pub aligned_size: usize,
    /// 1-based landmarks fitted by the similarity alignment.
    pub align_anchors: Vec<usize>,
    /// Left/right landmark pairs swapped by a horizontal flip (1-based).
    pub flip_pairs: Vec<[usize; 2]>,
    pub augment: bool,
    pub flip_prob: f64,
    /// Brightness factor drawn from `[1 - b, 1 + b]`.
    pub brightness: f64,
    /// Contrast factor drawn from `[1 - c, 1 + c]`.
    pub contrast: f64,
    pub folds: usize,
    pub synth_samples: usize,
    pub synth_subjects: usize,
    /// Per-AU occurrence rates; defaults to 0.5 for every AU.
    pub synth_rates: Option<Vec<f64>>,
    /// AU deformation size as a fraction of the inter-ocular distance.
    pub synth_offset: f64,
    pub synth_noise: f64,
    /// Pose jitter: max rotation (degrees), relative scale and shift.
    pub synth_rotation: f64,
    pub synth_scale: f64,
    pub synth_shift: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            aligned_size: 256,
            align_anchors: vec![19, 22, 25, 28, 31, 37],
            flip_pairs: FLIP_PAIRS.to_vec(),
            augment: true,
            flip_prob: 0.5,
            brightness: 0.2,
            contrast: 0.2,
            folds: 3,
            synth_samples: 96,
            synth_subjects: 6,
            synth_rates: None,
            synth_offset: 0.35,
            synth_noise: 0.03,
            synth_rotation: 8.0,
            synth_scale: 0.05,
            synth_shift: 0.03,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

fn section<T: DeserializeOwned>(value: &toml::Value, ignored: &mut BTreeSet<String>) -> Result<T> {
    serde_ignored::deserialize(value.clone(), |path| {
        ignored.insert(path.to_string());
    })
    .map_err(|e: toml::de::Error| PipelineError::Config(e.to_string()))
}

fn merge_into(table: &mut toml::Table, part: impl Serialize) -> Result<()> {
    match toml::Value::try_from(part).map_err(|e| PipelineError::Config(e.to_string()))? {
        toml::Value::Table(t) => table.extend(t),
        _ => unreachable!("config sections serialise to tables"),
    }
    Ok(())
}

impl RunConfig {
    pub fn toy() -> Self {
        Self {
            model: ModelConfig::toy(),
            loss: LossConfig::default(),
            train: TrainConfig {
                epochs: 30,
                lr_max: 0.05,
                ..TrainConfig::default()
            },
            data: DataConfig {
                aligned_size: 36,
                synth_samples: 48,
                ..DataConfig::default()
            },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let value: toml::Value = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        // a key is unknown when every section ignores it
        let mut sets = [BTreeSet::new(), BTreeSet::new(), BTreeSet::new(), BTreeSet::new()];
        let cfg = Self {
            model: section(&value, &mut sets[0])?,
            loss: section(&value, &mut sets[1])?,
            train: section(&value, &mut sets[2])?,
            data: section(&value, &mut sets[3])?,
        };
        let unknown: Vec<&String> = sets[0]
            .iter()
            .filter(|k| sets[1..].iter().all(|s| s.contains(*k)))
            .collect();
        if !unknown.is_empty() {
            return Err(PipelineError::Config(format!("unknown keys: {unknown:?}")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        let mut table = toml::Table::new();
        merge_into(&mut table, &self.model)?;
        merge_into(&mut table, self.loss)?;
        merge_into(&mut table, &self.train)?;
        merge_into(&mut table, &self.data)?;
        toml::to_string(&table).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn init_seed(&self) -> u64 {
        self.train.init_seed.unwrap_or(self.train.seed)
    }

    pub fn flip_permutation(&self) -> Result<Vec<usize>> {
        flip_permutation(&self.data.flip_pairs, N_LANDMARKS)
            .ok_or_else(|| PipelineError::Config("flip_pairs must be disjoint pairs of landmarks 1..=49".into()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        let t = &self.train;
        let bad = |m: &str| Err(PipelineError::Config(m.into()));
        if t.batch_size == 0 || t.epochs == 0 || t.warmup_epochs > t.epochs {
            return bad("batch_size and epochs must be positive, warmup_epochs at most epochs");
        }
        if !(t.lr_max > 0.0) || !(0.0..1.0).contains(&t.momentum) || !(t.weight_decay >= 0.0) || !(t.clip_norm > 0.0) {
            return bad("lr_max and clip_norm must be positive, momentum in [0, 1), weight_decay non-negative");
        }
        let d = &self.data;
        if d.aligned_size < self.model.input_size {
            return bad("aligned_size must be at least input_size");
        }
        let anchors: BTreeSet<usize> = d.align_anchors.iter().copied().collect();
        if anchors.len() < 2 || anchors.len() != d.align_anchors.len() || anchors.iter().any(|&a| a == 0 || a > N_LANDMARKS) {
            return bad("align_anchors needs two or more distinct landmarks in 1..=49");
        }
        self.flip_permutation()?;
        if !(0.0..=1.0).contains(&d.flip_prob) || !(0.0..1.0).contains(&d.brightness) || !(0.0..1.0).contains(&d.contrast) {
            return bad("flip_prob in [0, 1], brightness and contrast in [0, 1)");
        }
        if d.folds == 0 || d.synth_subjects == 0 {
            return bad("folds and synth_subjects must be positive");
        }
        if let Some(r) = &d.synth_rates {
            if r.len() != self.model.au_list()?.len() || r.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return bad("synth_rates needs one rate in [0, 1] per AU");
            }
        }
        Ok(())
    }
}
