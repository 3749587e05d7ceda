//! The assembled network: pyramid, landmark predictor, ROI graph branch,
//! multi-scale tokens and classifier.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sacl_tensor::{Scalar, Tensor, Var};

use crate::backbone::Backbone;
use crate::config::{ModelConfig, RoiSource};
use crate::error::{CoreError, Result};
use crate::geometry::{compute_au_centers, crop_rois, interocular_scale, LandmarkRole, LandmarkSet, RoiGrid, RoiLayout};
use crate::head::Head;
use crate::losses::{total_loss_graph, LossConfig, LossTerms};
use crate::msfl::{flatten_tokens, fuse};
use crate::params::{Ctx, ParamStore};
use crate::sacl::{Sacl, SaclOutput};

/// Supervision for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets<T> {
    /// `[B, N_AU]` in `{0, 1}`.
    pub labels: Tensor<T>,
    /// `[B, 2·N_land]` ground-truth landmarks in input pixels.
    pub landmarks: Tensor<T>,
    /// Per-sample ground-truth inter-ocular distance.
    pub d_o: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub cfg: ModelConfig,
    pub layout: RoiLayout,
    pub grid: RoiGrid,
    pub backbone: Backbone,
    pub sacl: Sacl,
    pub head: Head,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub probs: Var,
    pub logits: Var,
    /// `[B, 2·N_land]`, input pixels.
    pub landmarks: Var,
    /// Basic features `F`.
    pub base: Var,
    /// Fused multi-scale map `A`.
    pub msfl: Var,
    /// `A′: [B, N_MS, D]`
    pub tokens: Var,
    /// ROI nodes `[B·N_ROI, d1]`.
    pub rois: Var,
    pub sacl: SaclOutput,
    /// `C: [B, N_MS + N_ROI, D]`
    pub fused: Var,
    pub centers: Vec<Vec<[f64; 2]>>,
    pub roi_origins: Vec<(usize, usize)>,
}

impl ForwardOutput {
    /// Fingerprint of every discrete choice made in the pass (crop origins
    /// and all KNN graphs). Equal fingerprints mean the same smooth piece.
    pub fn regime(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.roi_origins.hash(&mut h);
        for s in &self.sacl.snapshots {
            s.graphs.hash(&mut h);
        }
        h.finish()
    }
}

impl Network {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = cfg.roi_layout()?;
        let grid = cfg.roi_grid();
        let backbone = Backbone::new(&cfg);
        let sacl = Sacl::new(&cfg, grid.node_dim(), layout.len());
        let head = Head::new(cfg.d_model, cfg.head_hidden, layout.aus.len());
        Ok(Self {
            cfg,
            layout,
            grid,
            backbone,
            sacl,
            head,
        })
    }

    /// Deterministic initial parameters. Values are drawn in `f64` and
    /// rounded, so every precision starts from the same point.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> ParamStore<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        self.backbone.init(&mut store, &mut rng);
        self.sacl.init(&mut store, &mut rng);
        self.head.init(&mut store, &mut rng);
        store
    }

    pub fn param_count(&self) -> usize {
        self.backbone.param_count() + self.sacl.param_count() + self.head.param_count()
    }

    pub fn n_au(&self) -> usize {
        self.layout.aus.len()
    }

    pub fn node_labels(&self) -> Vec<String> {
        self.layout.labels()
    }

    /// `images: [B,3,H,W]`. Ground-truth landmarks (flattened, `B·98`) are
    /// needed only when ROIs are placed from ground truth.
    pub fn forward<T: Scalar>(
        &self,
        ctx: &mut Ctx<'_, T>,
        images: Var,
        gt_landmarks: Option<&[f64]>,
    ) -> Result<ForwardOutput> {
        let pyr = self.backbone.pyramid(ctx, images)?;
        let landmarks = self.backbone.lp_forward(ctx, pyr.base)?;
        let batch = ctx.g.shape(images)[0];
        let per = 2 * self.cfg.n_land;

        let source: Vec<f64> = match (self.cfg.roi_landmarks, gt_landmarks) {
            (RoiSource::Predicted, _) => ctx.g.value(landmarks).to_f64_vec(),
            (RoiSource::GroundTruth, Some(gt)) if gt.len() == batch * per => gt.to_vec(),
            (RoiSource::GroundTruth, _) => {
                return Err(CoreError::Argument(format!(
                    "ground-truth ROI placement needs {} landmark values",
                    batch * per
                )))
            }
        };
        let mut centers = Vec::with_capacity(batch);
        for flat in source.chunks(per) {
            let lm = LandmarkSet::from_flat(flat, LandmarkRole::Predicted).or_else(|_| {
                // non-finite predictions: fall back to the image centre
                let c = self.cfg.input_size as f64 / 2.0;
                LandmarkSet::from_flat(&vec![c; per], LandmarkRole::Predicted)
            })?;
            let scale = interocular_scale(&lm, self.cfg.inner_eye).unwrap_or(0.0);
            centers.push(compute_au_centers(&lm, &self.layout, scale));
        }
        let (rois, roi_origins) = crop_rois(ctx.g, pyr.base, &self.grid, &centers)?;
        let sacl = self.sacl.forward(ctx, rois)?;

        let msfl = fuse(ctx.g, &pyr.levels, self.cfg.interpolation)?;
        let tokens = flatten_tokens(ctx.g, msfl)?;
        let head = self.head.forward(ctx, tokens, sacl.features)?;
        Ok(ForwardOutput {
            probs: head.probs,
            logits: head.logits,
            landmarks,
            base: pyr.base,
            msfl,
            tokens,
            rois,
            sacl,
            fused: head.fused,
            centers,
            roi_origins,
        })
    }
}

impl Network {
    /// Forward pass plus the weighted training objective.
    pub fn loss<T: Scalar>(
        &self,
        ctx: &mut Ctx<'_, T>,
        images: Var,
        targets: &Targets<T>,
        loss_cfg: &LossConfig,
        omega: &[f64],
    ) -> Result<(ForwardOutput, LossTerms)> {
        let gt = targets.landmarks.to_f64_vec();
        let out = self.forward(ctx, images, Some(&gt))?;
        let terms = total_loss_graph(
            ctx.g,
            loss_cfg,
            out.probs,
            &targets.labels,
            omega,
            out.landmarks,
            &targets.landmarks,
            &targets.d_o,
        )?;
        Ok((out, terms))
    }
}
