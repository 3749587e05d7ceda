//! Procedural faces standing in for the licensed datasets.
//!
//! Each AU label moves a fixed set of landmarks by a multiple of the
//! configured offset, and the renderer draws every facial part from the
//! landmarks, so labels are visible in the pixels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sacl_core::geometry::INNER_EYE_CORNERS;
use sacl_core::template::template_pixels;

use crate::align::Similarity;
use crate::config::RunConfig;
use crate::error::{PipelineError, Result};
use crate::imaging::Image;

/// `(landmark, dx, dy)` in units of the AU offset; landmarks are 1-based.
pub fn au_displacements(au: u32) -> &'static [(usize, f64, f64)] {
    match au {
        1 => &[(4, 0.0, -1.0), (5, 0.0, -1.0), (3, 0.0, -0.5), (6, 0.0, -0.5)],
        2 => &[(49, 0.0, -1.0), (1, 0.0, -1.0), (8, 0.0, -1.0), (9, 0.0, -1.0), (2, 0.0, -0.5), (7, 0.0, -0.5)],
        4 => &[
            (3, 0.2, 0.6),
            (4, 0.4, 0.8),
            (5, -0.4, 0.8),
            (6, -0.2, 0.6),
            (2, 0.0, 0.4),
            (7, 0.0, 0.4),
        ],
        6 => &[(23, 0.0, -0.5), (24, 0.0, -0.5), (29, 0.0, -0.5), (30, 0.0, -0.5)],
        7 => &[
            (20, 0.0, 0.5),
            (21, 0.0, 0.5),
            (26, 0.0, 0.5),
            (27, 0.0, 0.5),
            (23, 0.0, -0.3),
            (24, 0.0, -0.3),
            (29, 0.0, -0.3),
            (30, 0.0, -0.3),
        ],
        9 => &[(14, 0.0, -0.5), (15, 0.0, -0.5), (16, 0.0, -0.5), (17, 0.0, -0.5), (18, 0.0, -0.5), (13, 0.0, -0.3)],
        10 => &[(32, 0.0, -0.6), (33, 0.0, -0.6), (34, 0.0, -0.6), (35, 0.0, -0.6), (36, 0.0, -0.6), (44, 0.0, -0.4)],
        12 => &[(31, -0.4, -0.6), (37, 0.4, -0.6)],
        14 => &[(31, 0.4, 0.0), (37, -0.4, 0.0), (43, 0.2, 0.0), (45, -0.2, 0.0)],
        15 => &[(31, 0.0, 0.7), (37, 0.0, 0.7)],
        17 => &[(38, 0.0, -0.5), (39, 0.0, -0.5), (40, 0.0, -0.5), (41, 0.0, -0.5), (42, 0.0, -0.5)],
        23 => &[(33, 0.0, 0.3), (34, 0.0, 0.3), (35, 0.0, 0.3), (39, 0.0, -0.3), (40, 0.0, -0.3), (41, 0.0, -0.3)],
        24 => &[(43, 0.0, 0.3), (44, 0.0, 0.3), (45, 0.0, 0.3), (46, 0.0, -0.3), (47, 0.0, -0.3), (48, 0.0, -0.3)],
        25 => &[(46, 0.0, 0.6), (47, 0.0, 0.6), (48, 0.0, 0.6), (38, 0.0, 0.4), (39, 0.0, 0.4), (40, 0.0, 0.4), (41, 0.0, 0.4), (42, 0.0, 0.4)],
        26 => &[(38, 0.0, 1.0), (39, 0.0, 1.0), (40, 0.0, 1.0), (41, 0.0, 1.0), (42, 0.0, 1.0), (46, 0.0, 0.9), (47, 0.0, 0.9), (48, 0.0, 0.9)],
        _ => &[],
    }
}

/// Move landmarks (flattened, pixels) for every active AU.
pub fn deform(landmarks: &mut [f64], aus: &[u32], labels: &[u8], offset: f64) {
    for (&au, &on) in aus.iter().zip(labels) {
        if on == 0 {
            continue;
        }
        for &(k, dx, dy) in au_displacements(au) {
            landmarks[2 * k - 2] += dx * offset;
            landmarks[2 * k - 1] += dy * offset;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaceStyle {
    pub background: [f32; 3],
    pub skin: [f32; 3],
    pub feature: [f32; 3],
    pub lip: [f32; 3],
}

impl FaceStyle {
    pub fn neutral() -> Self {
        Self {
            background: [0.35, 0.4, 0.45],
            skin: [0.85, 0.68, 0.57],
            feature: [0.15, 0.1, 0.08],
            lip: [0.7, 0.3, 0.3],
        }
    }

    fn random(rng: &mut ChaCha8Rng) -> Self {
        let mut jitter = |c: [f32; 3], r: f32| c.map(|v| (v + rng.gen_range(-r..=r)).clamp(0.0, 1.0));
        let n = Self::neutral();
        Self {
            background: jitter(n.background, 0.15),
            skin: jitter(n.skin, 0.08),
            feature: jitter(n.feature, 0.05),
            lip: jitter(n.lip, 0.08),
        }
    }
}

fn point(lm: &[f64], k: usize) -> [f64; 2] {
    [lm[2 * k - 2], lm[2 * k - 1]]
}

fn inside_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0] {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

fn near_polyline(p: [f64; 2], pts: &[[f64; 2]], half_width: f64) -> bool {
    pts.windows(2).any(|w| segment_distance(p, w[0], w[1]) <= half_width)
}

/// Draw a face whose parts follow `landmarks` (flattened, pixels). `pose`
/// maps the template frame to the image and places the head outline.
pub fn render_face(landmarks: &[f64], style: &FaceStyle, size: usize, pose: &Similarity) -> Image {
    let s = size as f64;
    let unpose = pose.inverse();
    let polygon = |ks: &[usize]| -> Vec<[f64; 2]> { ks.iter().map(|&k| point(landmarks, k)).collect() };
    let brows = [polygon(&[49, 1, 2, 3, 4]), polygon(&[5, 6, 7, 8, 9])];
    let nose = [polygon(&[10, 11, 12, 13]), polygon(&[14, 15, 16, 17, 18])];
    let eyes = [polygon(&[19, 20, 21, 22, 23, 24]), polygon(&[25, 26, 27, 28, 29, 30])];
    let outer_lip = polygon(&(31..=42).collect::<Vec<_>>());
    let inner_lip = polygon(&[31, 43, 44, 45, 37, 46, 47, 48]);
    let scale = pose.scale();
    let brow_w = (0.018 * s * scale).max(0.6);
    let nose_w = (0.008 * s * scale).max(0.5);

    let mut img = Image::filled(size, size, style.background);
    for y in 0..size {
        for x in 0..size {
            let p = [x as f64 + 0.5, y as f64 + 0.5];
            let c = unpose.apply(p);
            let (ex, ey) = ((c[0] / s - 0.5) / 0.36, (c[1] / s - 0.55) / 0.45);
            if ex * ex + ey * ey > 1.0 {
                continue;
            }
            let mut rgb = style.skin;
            if nose.iter().any(|n| near_polyline(p, n, nose_w)) {
                rgb = style.skin.map(|v| v * 0.75);
            }
            if inside_polygon(p, &outer_lip) {
                rgb = style.lip;
            }
            if inside_polygon(p, &inner_lip) {
                rgb = style.feature;
            }
            if eyes.iter().any(|e| inside_polygon(p, e)) || brows.iter().any(|b| near_polyline(p, b, brow_w)) {
                rgb = style.feature;
            }
            img.set_rgb(y, x, rgb);
        }
    }
    img
}

/// A generated face before alignment.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSample {
    pub id: String,
    pub subject: String,
    pub image: Image,
    pub landmarks: Vec<f64>,
    pub labels: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub aus: Vec<u32>,
    pub rates: Vec<f64>,
    pub samples: usize,
    pub subjects: usize,
    pub size: usize,
    pub offset: f64,
    pub noise: f64,
    pub rotation: f64,
    pub scale: f64,
    pub shift: f64,
}

impl SynthSpec {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let aus = cfg.model.au_list()?;
        let d = &cfg.data;
        Ok(Self {
            rates: d.synth_rates.clone().unwrap_or_else(|| vec![0.5; aus.len()]),
            aus,
            samples: d.synth_samples,
            subjects: d.synth_subjects,
            size: d.aligned_size,
            offset: d.synth_offset,
            noise: d.synth_noise,
            rotation: d.synth_rotation,
            scale: d.synth_scale,
            shift: d.synth_shift,
        })
    }

    /// Offset in pixels: a fraction of the template's inter-ocular distance.
    pub fn offset_pixels(&self) -> f64 {
        let t = template_pixels(self.size);
        let [a, b] = INNER_EYE_CORNERS;
        let d = (t[2 * a - 2] - t[2 * b - 2]).hypot(t[2 * a - 1] - t[2 * b - 1]);
        self.offset * d
    }
}

pub fn generate(spec: &SynthSpec, seed: u64) -> Result<Vec<RawSample>> {
    if spec.rates.len() != spec.aus.len() || spec.subjects == 0 {
        return Err(PipelineError::Config("synthetic spec needs one rate per AU and a subject".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = spec.size as f64;
    let base = template_pixels(spec.size);
    // per-subject face shape and colours
    let subjects: Vec<(Vec<f64>, FaceStyle)> = (0..spec.subjects)
        .map(|_| {
            let shape = base.iter().map(|v| v + rng.gen_range(-0.008..=0.008) * s).collect();
            (shape, FaceStyle::random(&mut rng))
        })
        .collect();
    let offset = spec.offset_pixels();
    let mut out = Vec::with_capacity(spec.samples);
    for i in 0..spec.samples {
        let subject = i % spec.subjects;
        let labels: Vec<u8> = spec.rates.iter().map(|&r| u8::from(rng.gen_bool(r))).collect();
        let (shape, style) = &subjects[subject];
        let mut lm = shape.clone();
        deform(&mut lm, &spec.aus, &labels, offset);
        let pose = Similarity::about(
            [s / 2.0, s / 2.0],
            rng.gen_range(-1.0..=1.0) * spec.rotation,
            1.0 + rng.gen_range(-1.0..=1.0) * spec.scale,
            [rng.gen_range(-1.0..=1.0) * spec.shift * s, rng.gen_range(-1.0..=1.0) * spec.shift * s],
        );
        let lm = pose.apply_flat(&lm);
        let mut image = render_face(&lm, style, spec.size, &pose);
        if spec.noise > 0.0 {
            let n = spec.noise as f32;
            for v in &mut image.data {
                *v = (*v + rng.gen_range(-n..=n)).clamp(0.0, 1.0);
            }
        }
        out.push(RawSample {
            id: format!("s{subject:02}_{i:05}"),
            subject: format!("S{subject:02}"),
            image,
            landmarks: lm,
            labels,
        });
    }
    Ok(out)
}
