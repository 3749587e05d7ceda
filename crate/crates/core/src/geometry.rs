//! AU-centre geometry and ROI cropping.
//!
//! Landmarks follow a 49-point scheme addressed by the 1-based indices used in
//! the AU-centre table below: index `k` is the `k`-th `(x, y)` pair of a
//! landmark CSV row. Brows occupy 1..=9 (plus 49 for the outer end of the
//! right brow), the nose bridge 10..=13, the nose bottom 14..=18, the right eye
//! 19..=24 (19 outer corner, 22 inner corner, 23/24 lower lid), the left eye
//! 25..=30 (25 inner corner, 28 outer corner, 29/30 lower lid), the outer lip
//! contour 31..=42 (31 and 37 the corners, 34 upper centre, 40 lower centre)
//! and the inner lip 43..=48.
//!
//! Each AU row yields two centres, one per listed landmark. Rows that share
//! both landmarks and offset rule (for example AU12/14/15 at the lip corners)
//! produce a single pair of windows, which is what gives 18 ROIs for the
//! twelve BP4D AUs and 16 for the eight DISFA AUs.

use sacl_tensor::{Graph, Scalar, Var};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const N_LANDMARKS: usize = 49;

/// Default inner eye corners (1-based) for the `scale` unit.
pub const INNER_EYE_CORNERS: [usize; 2] = [22, 25];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandmarkRole {
    GroundTruth,
    Predicted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSet {
    points: Vec<[f64; 2]>,
    pub role: LandmarkRole,
}

impl LandmarkSet {
    pub fn new(points: Vec<[f64; 2]>, role: LandmarkRole) -> Result<Self> {
        if points.len() != N_LANDMARKS {
            return Err(CoreError::Argument(format!(
                "expected {N_LANDMARKS} landmarks, got {}",
                points.len()
            )));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(CoreError::Argument("non-finite landmark coordinate".into()));
        }
        Ok(Self { points, role })
    }

    /// From interleaved `x1, y1, x2, y2, ...`.
    pub fn from_flat(flat: &[f64], role: LandmarkRole) -> Result<Self> {
        if !flat.len().is_multiple_of(2) {
            return Err(CoreError::Argument("odd number of landmark coordinates".into()));
        }
        Self::new(flat.chunks(2).map(|c| [c[0], c[1]]).collect(), role)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p[0], p[1]]).collect()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    /// 1-based access matching the table indices.
    pub fn point(&self, index: usize) -> [f64; 2] {
        self.points[index - 1]
    }

    pub fn map(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        Self {
            points: self.points.iter().map(|&p| f(p)).collect(),
            role: self.role,
        }
    }
}

/// Vertical offset of an AU centre in units of the interocular scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OffsetRule {
    /// `(x, y - scale/2)`
    HalfAbove,
    /// `(x, y - scale/3)`
    ThirdAbove,
    /// `(x, y + scale/3)`
    ThirdBelow,
    /// `(x, y + scale)`
    OneBelow,
    /// `(x, y)`
    OnLandmark,
    /// `(x, y + scale/2)`
    HalfBelow,
}

impl OffsetRule {
    pub fn factor(self) -> f64 {
        match self {
            OffsetRule::HalfAbove => -0.5,
            OffsetRule::ThirdAbove => -1.0 / 3.0,
            OffsetRule::ThirdBelow => 1.0 / 3.0,
            OffsetRule::OneBelow => 1.0,
            OffsetRule::OnLandmark => 0.0,
            OffsetRule::HalfBelow => 0.5,
        }
    }

    pub fn apply(self, p: [f64; 2], scale: f64) -> [f64; 2] {
        [p[0], p[1] + self.factor() * scale]
    }

    pub fn formula(self) -> &'static str {
        match self {
            OffsetRule::HalfAbove => "(x, y-scale/2)",
            OffsetRule::ThirdAbove => "(x, y-scale/3)",
            OffsetRule::ThirdBelow => "(x, y+scale/3)",
            OffsetRule::OneBelow => "(x, y+scale)",
            OffsetRule::OnLandmark => "(x, y)",
            OffsetRule::HalfBelow => "(x, y+scale/2)",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AuCenterSpec {
    pub au: u32,
    pub description: &'static str,
    pub location: &'static str,
    pub landmarks: [usize; 2],
    pub rule: OffsetRule,
}

const fn row(
    au: u32,
    description: &'static str,
    location: &'static str,
    landmarks: [usize; 2],
    rule: OffsetRule,
) -> AuCenterSpec {
    AuCenterSpec {
        au,
        description,
        location,
        landmarks,
        rule,
    }
}

pub const AU_CENTER_TABLE: [AuCenterSpec; 15] = [
    row(1, "Inner brow raiser", "1/2 scale above inner brow", [4, 5], OffsetRule::HalfAbove),
    row(2, "Outer brow raiser", "1/3 scale above outer brow", [1, 8], OffsetRule::ThirdAbove),
    row(4, "Brow lowerer", "1/3 scale below brow center", [2, 7], OffsetRule::ThirdBelow),
    row(6, "Cheek raiser", "1 scale below eye bottom", [24, 29], OffsetRule::OneBelow),
    row(7, "Lid tightener", "Eye", [21, 26], OffsetRule::OnLandmark),
    row(9, "Nose wrinkler", "1/2 scale above nose bottom", [15, 17], OffsetRule::HalfAbove),
    row(10, "Upper lip raiser", "Upper lip center", [43, 45], OffsetRule::OnLandmark),
    row(12, "Lip corner puller", "Lip corner", [31, 37], OffsetRule::OnLandmark),
    row(14, "Dimpler", "Lip corner", [31, 37], OffsetRule::OnLandmark),
    row(15, "Lip corner depressor", "Lip corner", [31, 37], OffsetRule::OnLandmark),
    row(17, "Chin raiser", "1/2 scale below lip", [39, 41], OffsetRule::HalfBelow),
    row(23, "Lip tightener", "Lip center", [34, 40], OffsetRule::OnLandmark),
    row(24, "Lip pressor", "Lip center", [34, 40], OffsetRule::OnLandmark),
    row(25, "Lips part", "Lip center", [34, 40], OffsetRule::OnLandmark),
    row(26, "Jaw drop", "1/2 scale below lip", [39, 41], OffsetRule::HalfBelow),
];

pub const BP4D_AUS: [u32; 12] = [1, 2, 4, 6, 7, 10, 12, 14, 15, 17, 23, 24];
pub const DISFA_AUS: [u32; 8] = [1, 2, 4, 6, 9, 12, 25, 26];

pub fn au_spec(au: u32) -> Option<&'static AuCenterSpec> {
    AU_CENTER_TABLE.iter().find(|s| s.au == au)
}

/// One ROI window definition after de-duplication.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoiDef {
    /// 1-based landmark index.
    pub landmark: usize,
    pub rule: OffsetRule,
    /// AUs that share this window, in AU-list order.
    pub aus: Vec<u32>,
}

impl RoiDef {
    pub fn label(&self) -> String {
        let aus: Vec<String> = self.aus.iter().map(|a| format!("AU{a}")).collect();
        format!("{}@L{}", aus.join("/"), self.landmark)
    }
}

/// The canonical ROI order for an AU list: AUs in list order, each row's two
/// landmarks in table order, duplicates dropped at their second appearance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoiLayout {
    pub aus: Vec<u32>,
    pub rois: Vec<RoiDef>,
}

impl RoiLayout {
    pub fn new(aus: &[u32]) -> Result<Self> {
        let mut rois: Vec<RoiDef> = Vec::new();
        for &au in aus {
            let spec = au_spec(au).ok_or_else(|| {
                CoreError::Config(format!("AU{au} has no centre definition"))
            })?;
            for &lm in &spec.landmarks {
                match rois
                    .iter_mut()
                    .find(|r| r.landmark == lm && r.rule == spec.rule)
                {
                    Some(existing) => existing.aus.push(au),
                    None => rois.push(RoiDef {
                        landmark: lm,
                        rule: spec.rule,
                        aus: vec![au],
                    }),
                }
            }
        }
        Ok(Self {
            aus: aus.to_vec(),
            rois,
        })
    }

    pub fn len(&self) -> usize {
        self.rois.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rois.is_empty()
    }

    pub fn labels(&self) -> Vec<String> {
        self.rois.iter().map(RoiDef::label).collect()
    }

    pub fn max_landmark(&self) -> usize {
        self.rois.iter().map(|r| r.landmark).max().unwrap_or(0)
    }
}

/// Distance between the two configured inner eye corners.
pub fn interocular_scale(lm: &LandmarkSet, pair: [usize; 2]) -> Result<f64> {
    for &i in &pair {
        if i == 0 || i > lm.points.len() {
            return Err(CoreError::Argument(format!("landmark index {i} out of range")));
        }
    }
    let (a, b) = (lm.point(pair[0]), lm.point(pair[1]));
    let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    if d <= f64::EPSILON {
        return Err(CoreError::DegenerateScale(format!(
            "landmarks {} and {} coincide",
            pair[0], pair[1]
        )));
    }
    Ok(d)
}

/// AU centres in image pixels, one per ROI of `layout`.
pub fn compute_au_centers(lm: &LandmarkSet, layout: &RoiLayout, scale: f64) -> Vec<[f64; 2]> {
    layout
        .rois
        .iter()
        .map(|r| r.rule.apply(lm.point(r.landmark), scale))
        .collect()
}

pub fn round_half_up(v: f64) -> i64 {
    (v + 0.5).floor() as i64
}

/// Window side in feature cells: `round(ξ · extent)`, at least one cell and
/// at most the extent.
pub fn roi_side(xi: f64, extent: usize) -> usize {
    round_half_up(xi * extent as f64).clamp(1, extent as i64) as usize
}

/// Grid geometry for cropping square-ish windows out of a `c × h × w` map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoiGrid {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub side_h: usize,
    pub side_w: usize,
    /// Pixel → feature-grid scale factor.
    pub eta: f64,
}

impl RoiGrid {
    pub fn new(channels: usize, h: usize, w: usize, eta: f64, xi: f64) -> Self {
        Self {
            channels,
            h,
            w,
            side_h: roi_side(xi, h),
            side_w: roi_side(xi, w),
            eta,
        }
    }

    /// Flattened length of one window, `side_h · side_w · channels`.
    pub fn node_dim(&self) -> usize {
        self.side_h * self.side_w * self.channels
    }

    /// Top-left cell of the window centred on a pixel-space centre, clamped
    /// so the whole window lies on the grid.
    pub fn window_origin(&self, center: [f64; 2]) -> (usize, usize) {
        let gx = center[0] * self.eta;
        let gy = center[1] * self.eta;
        let x0 = round_half_up(gx - self.side_w as f64 / 2.0).clamp(0, (self.w - self.side_w) as i64);
        let y0 = round_half_up(gy - self.side_h as f64 / 2.0).clamp(0, (self.h - self.side_h) as i64);
        (y0 as usize, x0 as usize)
    }

    /// Flat indices into a `[batch, c, h, w]` map for one window of sample
    /// `sample`, ordered channel-major then row then column.
    pub fn window_indices(&self, sample: usize, origin: (usize, usize), out: &mut Vec<usize>) {
        let plane = self.h * self.w;
        let base = sample * self.channels * plane;
        for c in 0..self.channels {
            for dy in 0..self.side_h {
                for dx in 0..self.side_w {
                    out.push(base + c * plane + (origin.0 + dy) * self.w + origin.1 + dx);
                }
            }
        }
    }
}

/// Cut one window per centre out of `f: [B, c, h, w]`, giving
/// `[B·centres, d1]` rows (sample-major). Returns the clamped origins too.
pub fn crop_rois<T: Scalar>(
    g: &mut Graph<T>,
    f: Var,
    grid: &RoiGrid,
    centers: &[Vec<[f64; 2]>],
) -> Result<(Var, Vec<(usize, usize)>)> {
    let s = g.shape(f);
    if s.len() != 4 || s[0] != centers.len() || s[1] != grid.channels || s[2] != grid.h || s[3] != grid.w {
        return Err(CoreError::Argument(format!(
            "feature map {s:?} does not fit {} samples on a {}×{}×{} grid",
            centers.len(),
            grid.channels,
            grid.h,
            grid.w
        )));
    }
    let per = centers.first().map_or(0, Vec::len);
    let mut index = Vec::with_capacity(centers.len() * per * grid.node_dim());
    let mut origins = Vec::with_capacity(centers.len() * per);
    for (b, cs) in centers.iter().enumerate() {
        for &c in cs {
            let o = grid.window_origin(c);
            grid.window_indices(b, o, &mut index);
            origins.push(o);
        }
    }
    let v = g.gather(f, index, &[centers.len() * per, grid.node_dim()])?;
    Ok((v, origins))
}
