//! Convolutional pyramid (stem + four stages) and the landmark predictor.

use rand::Rng;
use sacl_tensor::{Scalar, Tensor, Var};

use crate::config::ModelConfig;
use crate::error::{config_err, Result};
use crate::params::{Ctx, Linear, ParamKind, ParamStore};
use crate::params::ConvBnRelu;
use crate::template::template_pixels;

/// Basic features `F` and the four pyramid levels `F1..F4`, each `[B,C,H,W]`.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    pub base: Var,
    pub levels: [Var; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    pub input_size: usize,
    pub d0: usize,
    pub stem: [ConvBnRelu; 2],
    pub stages: Vec<Vec<ConvBnRelu>>,
    pub lp_blocks: Vec<[ConvBnRelu; 2]>,
    pub lp_fc: Linear,
    pub n_land: usize,
}

impl Backbone {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d0 = cfg.d0;
        let stem = [
            ConvBnRelu::new("stem.0", 3, cfg.stem_width, 2),
            ConvBnRelu::new("stem.1", cfg.stem_width, d0, 2),
        ];
        let mut stages = Vec::with_capacity(4);
        let mut c = d0;
        for s in 0..4 {
            let c_out = d0 << s;
            let blocks = (0..cfg.blocks_per_stage)
                .map(|b| {
                    let stride = if s > 0 && b == 0 { 2 } else { 1 };
                    let block = ConvBnRelu::new(format!("stage{}.{b}", s + 1), c, c_out, stride);
                    c = c_out;
                    block
                })
                .collect();
            stages.push(blocks);
        }
        let mut c = d0;
        let lp_blocks = cfg
            .lp_widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let pair = [
                    ConvBnRelu::new(format!("lp.{i}.0"), c, w, 1),
                    ConvBnRelu::new(format!("lp.{i}.1"), w, w, 1),
                ];
                c = w;
                pair
            })
            .collect();
        let cells = (cfg.input_size / 32).pow(2);
        Self {
            input_size: cfg.input_size,
            d0,
            stem,
            stages,
            lp_blocks,
            lp_fc: Linear::new("lp.fc", c * cells, 2 * cfg.n_land),
            n_land: cfg.n_land,
        }
    }

    fn convs(&self) -> impl Iterator<Item = &ConvBnRelu> {
        self.stem
            .iter()
            .chain(self.stages.iter().flatten())
            .chain(self.lp_blocks.iter().flatten())
    }

    /// Registers parameters. The landmark head starts at the mean face: its
    /// bias is the template in pixels and its weights are scaled down.
    pub fn init<T: Scalar, R: Rng>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        for c in self.convs() {
            c.init(store, rng);
        }
        self.lp_fc.init_scaled(store, rng, 0.1);
        let mut bias = template_pixels(self.input_size);
        bias.truncate(2 * self.n_land);
        bias.resize(2 * self.n_land, self.input_size as f64 / 2.0);
        store.insert(
            &self.lp_fc.bias_name(),
            ParamKind::Trainable,
            Tensor::from_f64([2 * self.n_land], &bias).expect("length matches"),
        );
    }

    pub fn param_count(&self) -> usize {
        self.convs().map(ConvBnRelu::param_count).sum::<usize>() + self.lp_fc.param_count()
    }

    /// `image: [B,3,H,W]` → `F: [B,d0,H/4,W/4]`.
    pub fn stem_forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, image: Var) -> Result<Var> {
        let s = ctx.g.shape(image).to_vec();
        if s.len() != 4 || s[1] != 3 {
            return Err(config_err(format!("expected a [B,3,H,W] image batch, got {s:?}")));
        }
        if !s[2].is_multiple_of(32) || !s[3].is_multiple_of(32) || s[2] != self.input_size || s[3] != self.input_size {
            return Err(config_err(format!(
                "image extents {}×{} must equal the configured {} (a multiple of 32)",
                s[2], s[3], self.input_size
            )));
        }
        let mut x = image;
        for c in &self.stem {
            x = c.forward(ctx, x)?;
        }
        Ok(x)
    }

    pub fn stages_forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, f: Var) -> Result<[Var; 4]> {
        let mut x = f;
        let mut out = [f; 4];
        for (s, blocks) in self.stages.iter().enumerate() {
            for b in blocks {
                x = b.forward(ctx, x)?;
            }
            out[s] = x;
        }
        Ok(out)
    }

    pub fn pyramid<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, image: Var) -> Result<FeaturePyramid> {
        let base = self.stem_forward(ctx, image)?;
        let levels = self.stages_forward(ctx, base)?;
        Ok(FeaturePyramid { base, levels })
    }

    /// `F` → `[B, 2·N_land]` landmark coordinates in input pixels.
    pub fn lp_forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, f: Var) -> Result<Var> {
        let mut x = f;
        for pair in &self.lp_blocks {
            for c in pair {
                x = c.forward(ctx, x)?;
            }
            x = ctx.g.max_pool2d(x, 2)?;
        }
        let x = ctx.g.flatten(x)?;
        self.lp_fc.forward(ctx, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use sacl_tensor::Graph;

    fn run(cfg: &ModelConfig, batch: usize) -> (Vec<Vec<usize>>, Vec<usize>, Vec<usize>) {
        let bb = Backbone::new(cfg);
        let mut store = ParamStore::<f32>::new();
        bb.init(&mut store, &mut ChaCha8Rng::seed_from_u64(3));
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &store, false);
        let n = cfg.input_size;
        let img = ctx.g.constant(Tensor::zeros([batch, 3, n, n]));
        let p = bb.pyramid(&mut ctx, img).unwrap();
        let lm = bb.lp_forward(&mut ctx, p.base).unwrap();
        assert!(ctx.g.value(lm).all_finite());
        let shapes = p.levels.iter().map(|&v| ctx.g.shape(v).to_vec()).collect();
        (shapes, ctx.g.shape(p.base).to_vec(), ctx.g.shape(lm).to_vec())
    }

    #[test]
    fn toy_pyramid_shapes() {
        let (levels, base, lm) = run(&ModelConfig::toy(), 2);
        assert_eq!(base, vec![2, 8, 8, 8]);
        assert_eq!(
            levels,
            vec![vec![2, 8, 8, 8], vec![2, 16, 4, 4], vec![2, 32, 2, 2], vec![2, 64, 1, 1]]
        );
        assert_eq!(lm, vec![2, 98]);
    }

    #[test]
    fn lp_starts_at_the_template() {
        let cfg = ModelConfig::toy();
        let bb = Backbone::new(&cfg);
        let mut store = ParamStore::<f64>::new();
        bb.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0));
        let bias = store.get("lp.fc.bias").unwrap().data().to_vec();
        assert_eq!(bias, template_pixels(32));
    }

    #[test]
    fn rejects_bad_extents() {
        let cfg = ModelConfig::toy();
        let bb = Backbone::new(&cfg);
        let mut store = ParamStore::<f64>::new();
        bb.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0));
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &store, false);
        let img = ctx.g.constant(Tensor::zeros([1, 3, 48, 48]));
        assert!(bb.stem_forward(&mut ctx, img).is_err());
    }
}
