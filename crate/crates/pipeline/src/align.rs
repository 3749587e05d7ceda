//! Similarity alignment of faces to the template frame.

use sacl_core::template::template_pixels;

use crate::error::{PipelineError, Result};
use crate::imaging::Image;

/// `p ↦ z·p + t` with `z = a + ib` acting on `x + iy`: rotation, uniform
/// scale and translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub a: f64,
    pub b: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Similarity {
    pub fn identity() -> Self {
        Self {
            a: 1.0,
            b: 0.0,
            tx: 0.0,
            ty: 0.0,
        }
    }

    /// Rotate by `degrees` and scale by `scale` about `center`, then shift.
    pub fn about(center: [f64; 2], degrees: f64, scale: f64, shift: [f64; 2]) -> Self {
        let (s, c) = degrees.to_radians().sin_cos();
        let (a, b) = (scale * c, scale * s);
        Self {
            a,
            b,
            tx: center[0] - (a * center[0] - b * center[1]) + shift[0],
            ty: center[1] - (b * center[0] + a * center[1]) + shift[1],
        }
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.a * p[0] - self.b * p[1] + self.tx,
            self.b * p[0] + self.a * p[1] + self.ty,
        ]
    }

    pub fn apply_flat(&self, flat: &[f64]) -> Vec<f64> {
        flat.chunks(2).flat_map(|c| self.apply([c[0], c[1]])).collect()
    }

    pub fn inverse(&self) -> Self {
        let n = self.a * self.a + self.b * self.b;
        let (a, b) = (self.a / n, -self.b / n);
        Self {
            a,
            b,
            tx: -(a * self.tx - b * self.ty),
            ty: -(b * self.tx + a * self.ty),
        }
    }

    pub fn scale(&self) -> f64 {
        self.a.hypot(self.b)
    }

    pub fn degrees(&self) -> f64 {
        self.b.atan2(self.a).to_degrees()
    }
}

/// Least-squares similarity taking `src` onto `dst`.
pub fn fit_similarity(src: &[[f64; 2]], dst: &[[f64; 2]]) -> Result<Similarity> {
    if src.len() != dst.len() || src.len() < 2 {
        return Err(PipelineError::Alignment("need two or more matched points".into()));
    }
    let n = src.len() as f64;
    let mean = |pts: &[[f64; 2]]| {
        let s = pts.iter().fold([0.0, 0.0], |acc, p| [acc[0] + p[0], acc[1] + p[1]]);
        [s[0] / n, s[1] / n]
    };
    let (ps, qs) = (mean(src), mean(dst));
    let (mut num_a, mut num_b, mut den) = (0.0, 0.0, 0.0);
    for (p, q) in src.iter().zip(dst) {
        let (px, py) = (p[0] - ps[0], p[1] - ps[1]);
        let (qx, qy) = (q[0] - qs[0], q[1] - qs[1]);
        num_a += px * qx + py * qy;
        num_b += px * qy - py * qx;
        den += px * px + py * py;
    }
    if den <= 1e-12 {
        return Err(PipelineError::Alignment("anchor landmarks coincide".into()));
    }
    let (a, b) = (num_a / den, num_b / den);
    Ok(Similarity {
        a,
        b,
        tx: qs[0] - (a * ps[0] - b * ps[1]),
        ty: qs[1] - (b * ps[0] + a * ps[1]),
    })
}

/// Map a face onto the template at `size × size` using the anchor
/// landmarks (1-based). Returns the aligned image, its landmarks and the
/// transform used.
pub fn align_face(img: &Image, landmarks: &[f64], anchors: &[usize], size: usize) -> Result<(Image, Vec<f64>, Similarity)> {
    let template = template_pixels(size);
    let pick = |flat: &[f64]| -> Vec<[f64; 2]> {
        anchors.iter().map(|&k| [flat[2 * k - 2], flat[2 * k - 1]]).collect()
    };
    let sim = fit_similarity(&pick(landmarks), &pick(&template))?;
    Ok((img.warp(&sim, size), sim.apply_flat(landmarks), sim))
}
