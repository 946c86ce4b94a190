//! Desk-scale generative model: synthetic scenes, a multiplicative sensor
//! pattern with read noise, and a block codec with known distortion.

pub mod codec;
mod dct;
pub mod scene;

pub use codec::{
    code_block, encode_block, encode_sequence, oracle_weight_d, quant_step, skip_block, Block, BlockDecision,
    BlockTruth, CodecConfig, EncodeResult, Mode, RateMode,
};
pub use scene::{flat_field, render_scene, Motion, SceneConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::noise::Picture;
use crate::par;
use crate::plane::Plane;
use crate::trace::MB_SIZE;

/// Upper bound on |K| for a physically plausible pattern.
pub const MAX_ABS_K: f64 = 0.1;

/// Ground-truth sensor: per-pixel gain deviation and additive read noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorModel {
    k_true: Plane<f64>,
    read_noise_sigma: f64,
}

impl SensorModel {
    pub fn new(k_true: Plane<f64>, read_noise_sigma: f64) -> Result<Self> {
        let (w, h) = k_true.dims();
        if w == 0 || h == 0 || w % MB_SIZE != 0 || h % MB_SIZE != 0 {
            return Err(Error::Config(format!("sensor size {w}x{h} is not a positive multiple of {MB_SIZE}")));
        }
        if let Some(v) = k_true.as_slice().iter().find(|v| !(v.abs() < MAX_ABS_K)) {
            return Err(Error::range("|K|", v));
        }
        if !(read_noise_sigma >= 0.0 && read_noise_sigma.is_finite()) {
            return Err(Error::range("read noise sigma", read_noise_sigma));
        }
        Ok(SensorModel {
            k_true,
            read_noise_sigma,
        })
    }

    /// White Gaussian pattern with standard deviation `sigma_k`, clipped just
    /// inside `MAX_ABS_K`.
    pub fn random(width: usize, height: usize, sigma_k: f64, read_noise_sigma: f64, seed: u64) -> Result<Self> {
        let dist = Normal::new(0.0, sigma_k).map_err(|_| Error::range("sigma_k", sigma_k))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let limit = MAX_ABS_K * 0.99;
        let k = Plane::from_fn(width, height, |_, _| dist.sample(&mut rng).clamp(-limit, limit));
        SensorModel::new(k, read_noise_sigma)
    }

    pub fn k_true(&self) -> &Plane<f64> {
        &self.k_true
    }

    pub fn read_noise_sigma(&self) -> f64 {
        self.read_noise_sigma
    }

    pub fn dims(&self) -> (usize, usize) {
        self.k_true.dims()
    }

    /// Same pattern scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        SensorModel::new(self.k_true.map(|v| v * factor), self.read_noise_sigma)
    }
}

/// `clip(round(clean * (1 + K) + n))` with `n ~ N(0, sigma^2)`. Frame `i`
/// draws its noise from stream `i` of the seeded generator, so output does
/// not depend on how frames are scheduled.
pub fn simulate_capture(model: &SensorModel, clean: &[Picture], seed: u64) -> Result<Vec<Picture>> {
    for p in clean {
        p.luma.ensure_dims(model.dims())?;
    }
    let noise = Normal::new(0.0, model.read_noise_sigma).map_err(|_| Error::range("read noise sigma", model.read_noise_sigma))?;
    Ok(par::map_range(clean.len(), |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let src = &clean[i];
        let (w, h) = src.dims();
        let luma = Plane::from_fn(w, h, |x, y| {
            let mut v = f64::from(*src.luma.get(x, y)) * (1.0 + model.k_true.get(x, y));
            if model.read_noise_sigma > 0.0 {
                v += noise.sample(&mut rng);
            }
            v.round().clamp(0.0, 255.0) as u8
        });
        Picture::new(luma, src.frame_idx)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(v: u8, n: usize) -> Vec<Picture> {
        (0..n).map(|i| Picture::new(Plane::filled(16, 16, v), i as u32)).collect()
    }

    #[test]
    fn identity_without_pattern_or_noise() {
        let m = SensorModel::new(Plane::zeros(16, 16), 0.0).unwrap();
        let clean: Vec<Picture> = (0..2).map(|i| Picture::new(Plane::from_fn(16, 16, |x, y| (x * 9 + y + i) as u8), i as u32)).collect();
        assert_eq!(simulate_capture(&m, &clean, 1).unwrap(), clean);
    }

    #[test]
    fn single_pixel_gain() {
        let mut k = Plane::zeros(16, 16);
        *k.get_mut(3, 4) = 0.05;
        let m = SensorModel::new(k, 0.0).unwrap();
        let out = simulate_capture(&m, &flat(128, 1), 1).unwrap();
        assert_eq!(*out[0].luma.get(3, 4), 134);
        assert_eq!(*out[0].luma.get(0, 0), 128);
    }

    #[test]
    fn read_noise_variance() {
        let sigma = 3.0;
        let m = SensorModel::new(Plane::zeros(16, 16), sigma).unwrap();
        let out = simulate_capture(&m, &flat(128, 1000), 42).unwrap();
        let var_at = |p: usize| {
            let vals: Vec<f64> = out.iter().map(|f| f64::from(f.luma.as_slice()[p])).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64
        };
        // a single pixel: sampling spread of the variance is ~4.5% here
        let one = var_at(37);
        assert!((one - sigma * sigma).abs() < 0.1 * sigma * sigma, "{one}");
        // rounding to integers adds 1/12 to every pixel
        let mean_var = (0..256).map(var_at).sum::<f64>() / 256.0 - 1.0 / 12.0;
        assert!((mean_var - sigma * sigma).abs() < 0.02 * sigma * sigma, "{mean_var}");
    }

    #[test]
    fn model_invariants() {
        assert!(SensorModel::new(Plane::filled(16, 16, 0.1), 1.0).is_err());
        assert!(SensorModel::new(Plane::zeros(20, 16), 1.0).is_err());
        let m = SensorModel::random(32, 16, 0.5, 1.0, 3).unwrap();
        assert!(m.k_true().as_slice().iter().all(|v| v.abs() < MAX_ABS_K));
        let bad = SensorModel::new(Plane::zeros(16, 16), 1.0).unwrap();
        assert!(simulate_capture(&bad, &[Picture::new(Plane::filled(32, 16, 1), 0)], 0).is_err());
    }

    #[test]
    fn capture_is_reproducible_for_any_worker_count() {
        let m = SensorModel::random(32, 32, 0.02, 2.0, 5).unwrap();
        let clean: Vec<Picture> = (0..6).map(|i| Picture::new(Plane::filled(32, 32, 100), i)).collect();
        let a = par::with_workers(1, || simulate_capture(&m, &clean, 9).unwrap());
        let b = par::with_workers(3, || simulate_capture(&m, &clean, 9).unwrap());
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
    }
}
