//! Random crop, horizontal flip and colour jitter.

use rand::Rng;

use crate::config::RunConfig;
use crate::data::Sample;
use crate::error::Result;
use crate::imaging::Image;

/// A network-sized view of a sample with landmarks in its pixel frame.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub image: Image,
    pub landmarks: Vec<f64>,
}

/// Concrete draw of every augmentation parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub x0: usize,
    pub y0: usize,
    pub flip: bool,
    pub brightness: f32,
    pub contrast: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Augmenter {
    pub input: usize,
    pub enabled: bool,
    pub flip_prob: f64,
    pub brightness: f64,
    pub contrast: f64,
    /// 0-based flip permutation: new landmark `i` is old `perm[i]`.
    pub perm: Vec<usize>,
}

/// Mirror landmarks across the vertical centre line and swap left/right.
pub fn flip_landmarks(lm: &[f64], width: usize, perm: &[usize]) -> Vec<f64> {
    let w = width as f64;
    perm.iter().flat_map(|&j| [w - lm[2 * j], lm[2 * j + 1]]).collect()
}

impl Augmenter {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        Ok(Self {
            input: cfg.model.input_size,
            enabled: cfg.data.augment,
            flip_prob: cfg.data.flip_prob,
            brightness: cfg.data.brightness,
            contrast: cfg.data.contrast,
            perm: cfg.flip_permutation()?,
        })
    }

    pub fn center_params(&self, size: usize) -> AugmentParams {
        let off = (size - self.input) / 2;
        AugmentParams {
            x0: off,
            y0: off,
            flip: false,
            brightness: 1.0,
            contrast: 1.0,
        }
    }

    /// Draw parameters; with augmentation off this is the centre crop and
    /// consumes no randomness.
    pub fn draw<R: Rng>(&self, size: usize, rng: &mut R) -> AugmentParams {
        if !self.enabled {
            return self.center_params(size);
        }
        let span = size - self.input;
        let factor = |rng: &mut R, r: f64| if r > 0.0 { rng.gen_range(1.0 - r..=1.0 + r) as f32 } else { 1.0 };
        AugmentParams {
            x0: rng.gen_range(0..=span),
            y0: rng.gen_range(0..=span),
            flip: rng.gen_bool(self.flip_prob),
            brightness: factor(rng, self.brightness),
            contrast: factor(rng, self.contrast),
        }
    }

    pub fn apply(&self, sample: &Sample, p: AugmentParams) -> View {
        let mut image = sample.image.crop(p.x0, p.y0, self.input);
        let mut landmarks: Vec<f64> = sample
            .landmarks
            .chunks(2)
            .flat_map(|c| [c[0] - p.x0 as f64, c[1] - p.y0 as f64])
            .collect();
        if p.flip {
            image = image.flip_horizontal();
            landmarks = flip_landmarks(&landmarks, self.input, &self.perm);
        }
        if p.contrast != 1.0 || p.brightness != 1.0 {
            let mean = image.data.iter().sum::<f32>() / image.data.len() as f32;
            for v in &mut image.data {
                *v = (((*v - mean) * p.contrast + mean) * p.brightness).clamp(0.0, 1.0);
            }
        }
        View { image, landmarks }
    }

    pub fn center(&self, sample: &Sample) -> View {
        self.apply(sample, self.center_params(sample.image.width))
    }

    pub fn random<R: Rng>(&self, sample: &Sample, rng: &mut R) -> View {
        let p = self.draw(sample.image.width, rng);
        self.apply(sample, p)
    }
}
