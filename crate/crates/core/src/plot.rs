//! 8-bit grayscale rasters of 2D samples and densities, written as binary PGM.
//!
//! The image covers `[-5, 5]²` with `x` to the right and `y` upward.

use crate::error::{Error, Result};
use crate::losses::BetaWeights;
use crate::metrics::{elbo_values, log_sum_exp};
use crate::nn::VaeModel;
use crate::rng::{stream, Rng};
use crate::tensor::Tensor;

pub const RASTER_SIZE: usize = 512;
pub const PLOT_BOX: f64 = 5.0;
/// Shade used when every cell has the same density.
pub const FLAT_SHADE: u8 = 128;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    /// Row-major, top row first.
    pub pixels: Vec<u8>,
}

impl Raster {
    pub fn blank(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0; width * height],
        }
    }

    /// `P5` bytes.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_pgm(&self, path: &std::path::Path) -> Result<()> {
        crate::report::write_atomic(path, &self.to_pgm())
    }
}

fn pixel_size() -> f64 {
    2.0 * PLOT_BOX / RASTER_SIZE as f64
}

/// Pixel containing `(x, y)`, or `None` outside the box.
pub fn pixel_of(x: f64, y: f64) -> Option<(usize, usize)> {
    if !(x.abs() <= PLOT_BOX && y.abs() <= PLOT_BOX) {
        return None;
    }
    let h = pixel_size();
    let col = (((x + PLOT_BOX) / h) as usize).min(RASTER_SIZE - 1);
    let row = (((PLOT_BOX - y) / h) as usize).min(RASTER_SIZE - 1);
    Some((row, col))
}

/// Centers of all pixels, in raster order.
pub fn pixel_centers() -> Result<Tensor> {
    let h = pixel_size();
    let mut data = Vec::with_capacity(2 * RASTER_SIZE * RASTER_SIZE);
    for r in 0..RASTER_SIZE {
        for c in 0..RASTER_SIZE {
            data.push(-PLOT_BOX + (c as f64 + 0.5) * h);
            data.push(PLOT_BOX - (r as f64 + 0.5) * h);
        }
    }
    Tensor::matrix(RASTER_SIZE * RASTER_SIZE, 2, data)
}

/// White dots for every sample inside the box on a black background.
pub fn render_samples(samples: &Tensor) -> Result<Raster> {
    if !samples.is_empty() && samples.cols() != 2 {
        return Err(Error::Dimension(format!("expected 2 columns, got {}", samples.cols())));
    }
    let mut img = Raster::blank(RASTER_SIZE, RASTER_SIZE);
    for i in 0..samples.rows() {
        let p = samples.row(i);
        if let Some((r, c)) = pixel_of(p[0], p[1]) {
            img.pixels[r * RASTER_SIZE + c] = 255;
        }
    }
    Ok(img)
}

/// Min-max shading of per-pixel log densities given in raster order.
///
/// Values are normalized over the raster and exponentiated before shading.
pub fn render_log_density(log_density: &[f64]) -> Result<Raster> {
    if log_density.len() != RASTER_SIZE * RASTER_SIZE {
        return Err(Error::Dimension(format!(
            "expected {} values, got {}",
            RASTER_SIZE * RASTER_SIZE,
            log_density.len()
        )));
    }
    if log_density.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::Domain("density has NaN or +inf entries".into()));
    }
    let h = pixel_size();
    let log_z = log_sum_exp(log_density) + (h * h).ln();
    let v: Vec<f64> = log_density.iter().map(|l| (l - log_z).exp()).collect();
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pixels = if hi > lo {
        v.iter()
            .map(|x| (255.0 * (x - lo) / (hi - lo)).round() as u8)
            .collect()
    } else {
        vec![FLAT_SHADE; v.len()]
    };
    Ok(Raster {
        width: RASTER_SIZE,
        height: RASTER_SIZE,
        pixels,
    })
}

/// `exp(ELBO)` density estimate of a 2D model, shaded per pixel.
pub fn render_model_density(model: &VaeModel, w: &BetaWeights, seed: u64) -> Result<Raster> {
    if model.data_dim != 2 {
        return Err(Error::Dimension(format!("density plots need a 2D model, got {}", model.data_dim)));
    }
    let pts = pixel_centers()?;
    let mut rng = Rng::substream(seed, stream::EVAL);
    let mut elbo = Vec::with_capacity(pts.rows());
    let chunk = 4096;
    let mut start = 0;
    while start < pts.rows() {
        let end = (start + chunk).min(pts.rows());
        elbo.extend(elbo_values(model, w, &pts.slice_rows(start, end)?, &mut rng)?);
        start = end;
    }
    render_log_density(&elbo)
}
