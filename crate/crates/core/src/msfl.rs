//! Multi-scale fusion: upsample every pyramid level to the stride-4 grid and
//! concatenate on channels.

use sacl_tensor::{Graph, Scalar, Var};

use crate::config::Interpolation;
use crate::error::{CoreError, Result};

/// `[F1, F2, F3, F4]` → `A: [B, 15·d0, H/4, W/4]`, channels in level order.
pub fn fuse<T: Scalar>(g: &mut Graph<T>, levels: &[Var; 4], mode: Interpolation) -> Result<Var> {
    let target = g.shape(levels[0]).to_vec();
    let mut parts = Vec::with_capacity(4);
    for (i, &level) in levels.iter().enumerate() {
        let factor = 1usize << i;
        let up = match (factor, mode) {
            (1, _) => level,
            (_, Interpolation::Nearest) => g.upsample_nearest(level, factor)?,
            (_, Interpolation::Bilinear) => g.upsample_bilinear(level, factor)?,
        };
        let s = g.shape(up);
        if s.len() != 4 || s[0] != target[0] || s[2..] != target[2..] {
            return Err(CoreError::Argument(format!(
                "level {} upsampled to {s:?}, expected spatial {:?}",
                i + 1,
                &target[2..]
            )));
        }
        parts.push(up);
    }
    Ok(g.concat(&parts, 1)?)
}

/// `A: [B,D,h,w]` → tokens `[B, h·w, D]`, spatial positions row-major.
pub fn flatten_tokens<T: Scalar>(g: &mut Graph<T>, a: Var) -> Result<Var> {
    let s = g.shape(a).to_vec();
    if s.len() != 4 {
        return Err(CoreError::Argument(format!("expected [B,D,h,w], got {s:?}")));
    }
    let flat = g.reshape(a, &[s[0], s[1], s[2] * s[3]])?;
    Ok(g.transpose(flat)?)
}
