//! Noise residual extraction from decoded luma pictures.

mod wavelet;

use crate::plane::Plane;

/// Samples at or above this level are treated as clipped.
pub const SATURATION_HIGH: u8 = 250;
/// Samples at or below this level are treated as clipped.
pub const SATURATION_LOW: u8 = 5;

/// A decoded luma picture.
#[derive(Debug, Clone, PartialEq)]
pub struct Picture {
    pub luma: Plane<u8>,
    pub frame_idx: u32,
}

impl Picture {
    pub fn new(luma: Plane<u8>, frame_idx: u32) -> Self {
        Picture { luma, frame_idx }
    }

    pub fn width(&self) -> usize {
        self.luma.width()
    }

    pub fn height(&self) -> usize {
        self.luma.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.luma.dims()
    }
}

/// Picture minus its denoised version, row/column zero-meaned.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseResidual {
    pub values: Plane<f64>,
    /// Set when the source picture was constant; `values` is then all zero.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Denoiser {
    /// Multi-level wavelet decomposition with subband-adaptive Wiener shrinkage.
    Wavelet { levels: usize },
    /// Local 3x3 Wiener filter in the pixel domain.
    SpatialWiener,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiseConfig {
    pub denoiser: Denoiser,
    /// Noise variance assumed by the Wiener stage, in squared sample units.
    pub noise_variance: f64,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        DenoiseConfig {
            denoiser: Denoiser::Wavelet { levels: 4 },
            noise_variance: 3.0,
        }
    }
}

/// Reflect-pads `p` up to `w x h`.
fn pad_symmetric(p: &Plane<f64>, w: usize, h: usize) -> Plane<f64> {
    let (pw, ph) = p.dims();
    let reflect = |i: usize, n: usize| -> usize {
        let period = 2 * n;
        let m = i % period;
        if m < n {
            m
        } else {
            period - 1 - m
        }
    };
    Plane::from_fn(w, h, |x, y| *p.get(reflect(x, pw), reflect(y, ph)))
}

fn spatial_wiener_residual(p: &Plane<f64>, noise_var: f64) -> Plane<f64> {
    let (w, h) = p.dims();
    Plane::from_fn(w, h, |x, y| {
        let (mut sum, mut sq, mut n) = (0.0, 0.0, 0.0);
        for yy in y.saturating_sub(1)..(y + 2).min(h) {
            for xx in x.saturating_sub(1)..(x + 2).min(w) {
                let v = *p.get(xx, yy);
                sum += v;
                sq += v * v;
                n += 1.0;
            }
        }
        let mean = sum / n;
        let var = (sq / n - mean * mean).max(0.0);
        let v = *p.get(x, y);
        // residual of wiener2: (x - mu) * min(1, s0 / var)
        if var <= noise_var {
            v - mean
        } else {
            (v - mean) * noise_var / var
        }
    })
}

/// Subtracts row means, then column means. After both passes every row and
/// every column sums to zero.
pub fn zero_mean_rows_cols(p: &mut Plane<f64>) {
    let (w, h) = p.dims();
    for y in 0..h {
        let row = p.row_mut(y);
        let mean = row.iter().sum::<f64>() / w as f64;
        row.iter_mut().for_each(|v| *v -= mean);
    }
    let mut col = vec![0.0; w];
    for y in 0..h {
        for (c, v) in col.iter_mut().zip(p.row(y)) {
            *c += v;
        }
    }
    col.iter_mut().for_each(|c| *c /= h as f64);
    for y in 0..h {
        for (v, c) in p.row_mut(y).iter_mut().zip(&col) {
            *v -= c;
        }
    }
}

/// Extracts the noise residual `W = I - F(I)` of a picture.
pub fn extract_residual(picture: &Picture, config: &DenoiseConfig) -> NoiseResidual {
    let (w, h) = picture.dims();
    let samples = picture.luma.as_slice();
    let constant = samples.first().is_none_or(|&first| samples.iter().all(|&v| v == first));
    if constant {
        return NoiseResidual {
            values: Plane::zeros(w, h),
            degenerate: true,
        };
    }
    let input = picture.luma.to_f64();
    let mut values = match config.denoiser {
        Denoiser::SpatialWiener => spatial_wiener_residual(&input, config.noise_variance),
        Denoiser::Wavelet { levels } => {
            let block = 1usize << levels;
            let (pw, ph) = (w.div_ceil(block) * block, h.div_ceil(block) * block);
            let levels = wavelet::usable_levels(pw, ph, levels);
            if levels == 0 {
                spatial_wiener_residual(&input, config.noise_variance)
            } else if (pw, ph) == (w, h) {
                wavelet::residual(&input, levels, config.noise_variance)
            } else {
                let padded = wavelet::residual(&pad_symmetric(&input, pw, ph), levels, config.noise_variance);
                Plane::from_fn(w, h, |x, y| *padded.get(x, y))
            }
        }
    };
    zero_mean_rows_cols(&mut values);
    NoiseResidual {
        values,
        degenerate: false,
    }
}

/// 1 where the sample is inside (SATURATION_LOW, SATURATION_HIGH), else 0.
pub fn saturation_mask(picture: &Picture) -> Plane<f64> {
    picture
        .luma
        .map(|&v| if v >= SATURATION_HIGH || v <= SATURATION_LOW { 0.0 } else { 1.0 })
}
