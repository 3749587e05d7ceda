use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::geometry::{RoiGrid, RoiLayout, BP4D_AUS, DISFA_AUS, INNER_EYE_CORNERS, N_LANDMARKS};

/// Distance used to rank KNN neighbours.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    Manhattan,
    /// `1 - cosine similarity`
    Cosine,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Manhattan => "manhattan",
            Metric::Cosine => "cosine",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Nearest,
    Bilinear,
}

/// Graph convolution operator. Only max-relative aggregation is provided.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GcnType {
    #[default]
    MaxRelative,
}

/// Which landmarks position the ROI windows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoiSource {
    #[default]
    Predicted,
    GroundTruth,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    #[default]
    Bp4d,
    Disfa,
    Custom,
}

/// Network hyper-parameters. Field names in the config file follow the
/// parameter table (`S`, `L`, `eta`, `xi`, `D`, `d0`, `K`, `N_land`, ...).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub dataset: DatasetKind,
    /// Explicit AU list; required for `custom`, otherwise must match the dataset.
    pub aus: Option<Vec<u32>>,
    /// Input height and width (square).
    pub input_size: usize,
    pub d0: usize,
    /// Channels of the first stem convolution.
    pub stem_width: usize,
    pub blocks_per_stage: usize,
    /// Channel widths of the three landmark-predictor blocks.
    pub lp_widths: [usize; 3],
    #[serde(rename = "N_land")]
    pub n_land: usize,
    pub eta: f64,
    pub xi: f64,
    #[serde(rename = "S")]
    pub stages: usize,
    #[serde(rename = "L")]
    pub blocks: Vec<usize>,
    #[serde(rename = "K")]
    pub k: usize,
    pub metric: Metric,
    pub gcn: GcnType,
    #[serde(rename = "D")]
    pub d_model: usize,
    /// Per-stage node dimensions; defaults to `D/2^(S-1), ..., D/2, D`.
    pub stage_dims: Option<Vec<usize>>,
    pub ffn_ratio: usize,
    pub interpolation: Interpolation,
    pub head_hidden: Option<usize>,
    pub roi_landmarks: RoiSource,
    pub inner_eye: [usize; 2],
    pub bn_momentum: f64,
    pub bn_eps: f64,
    /// Optional cross-checks against derived values.
    #[serde(rename = "N_ROI")]
    pub n_roi: Option<usize>,
    #[serde(rename = "N_AU")]
    pub n_au: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::bp4d()
    }
}

impl ModelConfig {
    pub fn bp4d() -> Self {
        Self {
            dataset: DatasetKind::Bp4d,
            aus: None,
            input_size: 224,
            d0: 64,
            stem_width: 32,
            blocks_per_stage: 1,
            lp_widths: [64, 64, 64],
            n_land: N_LANDMARKS,
            eta: 0.25,
            xi: 0.14,
            stages: 4,
            blocks: vec![2, 2, 6, 2],
            k: 9,
            metric: Metric::Euclidean,
            gcn: GcnType::MaxRelative,
            d_model: 960,
            stage_dims: None,
            ffn_ratio: 4,
            interpolation: Interpolation::Nearest,
            head_hidden: None,
            roi_landmarks: RoiSource::Predicted,
            inner_eye: INNER_EYE_CORNERS,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            n_roi: None,
            n_au: None,
        }
    }

    pub fn disfa() -> Self {
        Self {
            dataset: DatasetKind::Disfa,
            ..Self::bp4d()
        }
    }

    /// Desk-scale network: 32×32 inputs, d0 = 8, two SACL stages, three AUs.
    pub fn toy() -> Self {
        Self {
            dataset: DatasetKind::Custom,
            aus: Some(vec![1, 12, 25]),
            input_size: 32,
            d0: 8,
            stem_width: 4,
            blocks_per_stage: 1,
            lp_widths: [8, 8, 8],
            eta: 0.25,
            xi: 0.25,
            stages: 2,
            blocks: vec![1, 1],
            k: 3,
            d_model: 120,
            ffn_ratio: 2,
            ..Self::bp4d()
        }
    }

    pub fn au_list(&self) -> Result<Vec<u32>> {
        let preset: Option<&[u32]> = match self.dataset {
            DatasetKind::Bp4d => Some(&BP4D_AUS),
            DatasetKind::Disfa => Some(&DISFA_AUS),
            DatasetKind::Custom => None,
        };
        match (preset, &self.aus) {
            (Some(p), None) => Ok(p.to_vec()),
            (Some(p), Some(a)) if a.as_slice() == p => Ok(a.clone()),
            (Some(_), Some(_)) => Err(config_err("`aus` disagrees with the dataset preset; use dataset = \"custom\"")),
            (None, Some(a)) if !a.is_empty() => Ok(a.clone()),
            (None, _) => Err(config_err("custom dataset needs a non-empty `aus` list")),
        }
    }

    pub fn roi_layout(&self) -> Result<RoiLayout> {
        RoiLayout::new(&self.au_list()?)
    }

    pub fn feature_extent(&self) -> usize {
        self.input_size / 4
    }

    pub fn roi_grid(&self) -> RoiGrid {
        let e = self.feature_extent();
        RoiGrid::new(self.d0, e, e, self.eta, self.xi)
    }

    /// Node dimension of each SACL stage.
    pub fn sacl_dims(&self) -> Vec<usize> {
        match &self.stage_dims {
            Some(d) => d.clone(),
            None => (0..self.stages)
                .map(|i| self.d_model >> (self.stages - 1 - i))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || !self.input_size.is_multiple_of(32) {
            return Err(config_err(format!(
                "input size {} must be a positive multiple of 32",
                self.input_size
            )));
        }
        if self.d0 == 0 || self.stem_width == 0 || self.blocks_per_stage == 0 {
            return Err(config_err("d0, stem_width and blocks_per_stage must be positive"));
        }
        if self.lp_widths.contains(&0) {
            return Err(config_err("lp_widths must be positive"));
        }
        if self.d_model != 15 * self.d0 {
            return Err(config_err(format!(
                "D = {} but the fused pyramid has 15·d0 = {} channels",
                self.d_model,
                15 * self.d0
            )));
        }
        if self.stages == 0 || self.blocks.len() != self.stages {
            return Err(config_err(format!(
                "S = {} needs {} entries in L, got {:?}",
                self.stages, self.stages, self.blocks
            )));
        }
        let dims = self.sacl_dims();
        if dims.len() != self.stages || dims.contains(&0) {
            return Err(config_err(format!("stage dims {dims:?} invalid for S = {}", self.stages)));
        }
        if *dims.last().unwrap() != self.d_model {
            return Err(config_err(format!("last stage dim {dims:?} must equal D = {}", self.d_model)));
        }
        if self.stage_dims.is_none() && !self.d_model.is_multiple_of(1 << (self.stages - 1)) {
            return Err(config_err("D must be divisible by 2^(S-1) for the doubling schedule"));
        }
        if self.ffn_ratio == 0 {
            return Err(config_err("ffn_ratio must be positive"));
        }
        if self.n_land != N_LANDMARKS {
            return Err(config_err(format!(
                "AU-centre geometry uses {N_LANDMARKS} landmarks, N_land = {}",
                self.n_land
            )));
        }
        if !(self.eta > 0.0 && self.xi > 0.0 && self.xi <= 1.0) {
            return Err(config_err("eta must be positive and xi in (0, 1]"));
        }
        if self.inner_eye.iter().any(|&i| i == 0 || i > self.n_land) || self.inner_eye[0] == self.inner_eye[1] {
            return Err(config_err(format!("inner_eye {:?} invalid", self.inner_eye)));
        }
        let layout = self.roi_layout()?;
        if self.k == 0 || self.k >= layout.len() {
            return Err(config_err(format!(
                "K = {} must be in [1, N_ROI) with N_ROI = {}",
                self.k,
                layout.len()
            )));
        }
        if let Some(n) = self.n_roi {
            if n != layout.len() {
                return Err(config_err(format!("N_ROI = {n} but the AU list yields {}", layout.len())));
            }
        }
        if let Some(n) = self.n_au {
            if n != layout.aus.len() {
                return Err(config_err(format!("N_AU = {n} but {} AUs are listed", layout.aus.len())));
            }
        }
        if !(self.bn_eps > 0.0 && (0.0..=1.0).contains(&self.bn_momentum)) {
            return Err(config_err("bn_eps must be positive, bn_momentum in [0, 1]"));
        }
        Ok(())
    }
}
