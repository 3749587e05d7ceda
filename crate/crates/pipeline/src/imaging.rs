//! Planar RGB images in `[0, 1]`, with pixel centres at `i + 0.5`.

use std::path::Path;

use image::{ImageBuffer, Rgb};

use crate::align::Similarity;
use crate::error::{PipelineError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// `[3, height, width]`, channel-major.
    pub data: Vec<f32>,
}

impl Image {
    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let plane = width * height;
        let mut data = vec![0.0; 3 * plane];
        for (c, v) in rgb.iter().enumerate() {
            data[c * plane..(c + 1) * plane].fill(*v);
        }
        Self { width, height, data }
    }

    fn plane(&self) -> usize {
        self.width * self.height
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[c * self.plane() + y * self.width + x]
    }

    pub fn set_rgb(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let p = self.plane();
        for (c, v) in rgb.iter().enumerate() {
            self.data[c * p + y * self.width + x] = *v;
        }
    }

    /// Bilinear sample at continuous pixel coordinates, clamping to the edge.
    pub fn sample(&self, c: usize, x: f64, y: f64) -> f32 {
        let fx = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (tx, ty) = ((fx - x0 as f64) as f32, (fy - y0 as f64) as f32);
        let top = self.get(c, y0, x0) * (1.0 - tx) + self.get(c, y0, x1) * tx;
        let bottom = self.get(c, y1, x0) * (1.0 - tx) + self.get(c, y1, x1) * tx;
        top * (1.0 - ty) + bottom * ty
    }

    /// Resample into a `size × size` image; `to_out` maps source pixel
    /// coordinates to output coordinates.
    pub fn warp(&self, to_out: &Similarity, size: usize) -> Image {
        let inv = to_out.inverse();
        let mut out = Image::filled(size, size, [0.0; 3]);
        for y in 0..size {
            for x in 0..size {
                let p = inv.apply([x as f64 + 0.5, y as f64 + 0.5]);
                let rgb = [0, 1, 2].map(|c| self.sample(c, p[0], p[1]));
                out.set_rgb(y, x, rgb);
            }
        }
        out
    }

    pub fn crop(&self, x0: usize, y0: usize, size: usize) -> Image {
        assert!(x0 + size <= self.width && y0 + size <= self.height, "crop outside image");
        let mut data = Vec::with_capacity(3 * size * size);
        for c in 0..3 {
            for y in y0..y0 + size {
                let row = c * self.plane() + y * self.width;
                data.extend_from_slice(&self.data[row + x0..row + x0 + size]);
            }
        }
        Image {
            width: size,
            height: size,
            data,
        }
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for row in out.data.chunks_mut(self.width) {
            row.reverse();
        }
        out
    }

    pub fn load(path: &Path) -> Result<Image> {
        let img = image::open(path)
            .map_err(|source| PipelineError::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Image::filled(w, h, [0.0; 3]);
        for (x, y, px) in img.enumerate_pixels() {
            out.set_rgb(y as usize, x as usize, px.0.map(|v| f32::from(v) / 255.0));
        }
        Ok(out)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf = ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            Rgb([0, 1, 2].map(|c| (self.get(c, y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8))
        });
        buf.save(path).map_err(|source| PipelineError::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}
