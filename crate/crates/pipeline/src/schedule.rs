/// Per-step linear warm-up to `lr_max`, then half-cosine decay to zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineWarmup {
    pub lr_max: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl CosineWarmup {
    pub fn new(lr_max: f64, steps_per_epoch: usize, warmup_epochs: usize, epochs: usize) -> Self {
        Self {
            lr_max,
            warmup_steps: steps_per_epoch * warmup_epochs,
            total_steps: steps_per_epoch * epochs,
        }
    }

    /// Rate used by the optimiser step with 0-based index `step`. The last
    /// warm-up step runs at exactly `lr_max`, the last step at zero.
    pub fn lr(&self, step: usize) -> f64 {
        let (w, t) = (self.warmup_steps, self.total_steps);
        if step < w {
            return self.lr_max * ((step + 1) as f64 / w as f64);
        }
        if t <= w {
            return self.lr_max;
        }
        let progress = ((step + 1 - w) as f64 / (t - w) as f64).min(1.0);
        self.lr_max * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}
