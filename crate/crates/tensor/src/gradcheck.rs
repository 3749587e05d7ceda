//! Central finite-difference checks of [`Graph::backward`].
//!
//! The numeric side only ever runs forward passes, so it is independent of
//! the reverse-mode code it audits.

use crate::error::TensorError;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    /// Perturbation half-width.
    pub step: f64,
    /// Pass threshold on the relative error.
    pub tolerance: f64,
    /// Denominator floor so that vanishing gradients are compared absolutely.
    pub floor: f64,
    /// Check at most this many coordinates per input (evenly strided).
    pub max_coords_per_input: Option<usize>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-4,
            max_coords_per_input: None,
        }
    }
}

/// Result of one probe evaluation: the scalar root and a tag describing the
/// piecewise-constant regime (for example a KNN adjacency hash). Coordinates
/// whose ± perturbations land in different regimes are skipped.
pub struct Probe {
    pub root: Var,
    pub regime: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckReport {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
    /// `(input, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_err < self.tolerance
    }

    pub fn merge(&mut self, other: &CheckReport) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        self.tolerance = other.tolerance;
        if other.max_rel_err >= self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Check a function with no discontinuity regimes.
pub fn check_gradients<F, E>(inputs: &[Tensor<f64>], opts: CheckOptions, mut f: F) -> Result<CheckReport, E>
where
    F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    check_gradients_piecewise(inputs, opts, |g, vars| {
        Ok(Probe {
            root: f(g, vars)?,
            regime: 0,
        })
    })
}

/// Like [`check_gradients`] but skips coordinates whose perturbations change
/// the probe's regime tag. Errors of any type convertible from
/// [`TensorError`] pass through.
pub fn check_gradients_piecewise<F, E>(inputs: &[Tensor<f64>], opts: CheckOptions, mut f: F) -> Result<CheckReport, E>
where
    F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Probe, E>,
    E: From<TensorError>,
{
    let eval = |f: &mut F, values: &[Tensor<f64>]| -> Result<(f64, u64), E> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let probe = f(&mut g, &vars)?;
        Ok((g.value(probe.root).item(), probe.regime))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let probe = f(&mut g, &vars)?;
    let base_regime = probe.regime;
    g.backward(probe.root)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
        .collect();
    drop(g);

    let mut report = CheckReport {
        tolerance: opts.tolerance,
        ..CheckReport::default()
    };
    let mut values: Vec<Tensor<f64>> = inputs.to_vec();
    for (which, input) in inputs.iter().enumerate() {
        let n = input.len();
        let stride = match opts.max_coords_per_input {
            Some(limit) if limit > 0 && n > limit => n.div_ceil(limit),
            _ => 1,
        };
        for idx in (0..n).step_by(stride) {
            let orig = input.data()[idx];
            values[which].data_mut()[idx] = orig + opts.step;
            let (plus, r_plus) = eval(&mut f, &values)?;
            values[which].data_mut()[idx] = orig - opts.step;
            let (minus, r_minus) = eval(&mut f, &values)?;
            values[which].data_mut()[idx] = orig;
            if r_plus != base_regime || r_minus != base_regime {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[which].data()[idx];
            let err = relative_error(a, numeric, opts.floor);
            let err = if err.is_nan() { f64::INFINITY } else { err };
            report.checked += 1;
            if err >= report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((which, idx, a, numeric));
            }
        }
    }
    Ok(report)
}
