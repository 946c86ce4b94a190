//! Clean synthetic scenes: a panorama of smooth shading, flat patches and
//! textured patches, viewed through a moving window.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::noise::Picture;
use crate::plane::Plane;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Motion {
    Static,
    /// Constant velocity in pixels per frame.
    Pan { vx: f64, vy: f64 },
    /// Random walk with per-frame steps up to `step` pixels on each axis.
    Handheld { step: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub motion: Motion,
    /// Share of the panorama covered by textured patches, in [0, 1].
    pub texture: f64,
    /// Peak-to-peak amplitude of the texture.
    pub texture_contrast: f64,
    pub seed: u64,
}

impl SceneConfig {
    pub fn new(width: usize, height: usize, frames: usize, motion: Motion, seed: u64) -> Self {
        SceneConfig {
            width,
            height,
            frames,
            motion,
            texture: 0.4,
            texture_contrast: 60.0,
            seed,
        }
    }
}

fn offsets(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let mut pos = (0.0, 0.0);
    (0..cfg.frames)
        .map(|t| match cfg.motion {
            Motion::Static => (0.0, 0.0),
            Motion::Pan { vx, vy } => (vx * t as f64, vy * t as f64),
            Motion::Handheld { step } => {
                if t > 0 {
                    pos.0 += rng.random_range(-step..=step);
                    pos.1 += rng.random_range(-step..=step);
                }
                pos
            }
        })
        .collect()
}

/// Box-blurred white noise, rescaled to span `contrast`.
fn texture_field(w: usize, h: usize, contrast: f64, rng: &mut ChaCha8Rng) -> Plane<f64> {
    let raw: Plane<f64> = Plane::from_fn(w, h, |_, _| rng.random_range(-1.0..1.0));
    let r = 1usize;
    let blurred = Plane::from_fn(w, h, |x, y| {
        let (mut s, mut n) = (0.0, 0.0);
        for yy in y.saturating_sub(r)..(y + r + 1).min(h) {
            for xx in x.saturating_sub(r)..(x + r + 1).min(w) {
                s += raw.get(xx, yy);
                n += 1.0;
            }
        }
        s / n
    });
    let peak = blurred.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    blurred.map(|v| v / peak * contrast / 2.0)
}

fn panorama(cfg: &SceneConfig, pw: usize, ph: usize, rng: &mut ChaCha8Rng) -> Plane<f64> {
    // low-frequency shading
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.005..0.03),
                rng.random_range(0.005..0.03),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(8.0..20.0),
            )
        })
        .collect();
    let level = rng.random_range(100.0..150.0);
    let mut pano = Plane::from_fn(pw, ph, |x, y| {
        level + waves.iter().map(|&(fx, fy, ph0, a)| a * (fx * x as f64 + fy * y as f64 + ph0).sin()).sum::<f64>()
    });
    // flat patches with hard edges
    for _ in 0..6 {
        let (rw, rh) = (rng.random_range(pw / 8..pw / 3), rng.random_range(ph / 8..ph / 3));
        let (x0, y0) = (rng.random_range(0..pw - rw), rng.random_range(0..ph - rh));
        let v = rng.random_range(60.0..200.0);
        for y in y0..y0 + rh {
            pano.row_mut(y)[x0..x0 + rw].iter_mut().for_each(|p| *p = v);
        }
    }
    // textured patches until the requested coverage is reached
    let tex = texture_field(pw, ph, cfg.texture_contrast, rng);
    let mut covered = Plane::filled(pw, ph, false);
    let target = (cfg.texture.clamp(0.0, 1.0) * (pw * ph) as f64) as usize;
    let mut count = 0usize;
    let mut guard = 0;
    while count < target && guard < 10_000 {
        guard += 1;
        let (rw, rh) = (rng.random_range(pw / 10..pw / 3 + 1), rng.random_range(ph / 10..ph / 3 + 1));
        let (x0, y0) = (rng.random_range(0..pw - rw), rng.random_range(0..ph - rh));
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                if !*covered.get(x, y) {
                    *covered.get_mut(x, y) = true;
                    *pano.get_mut(x, y) += tex.get(x, y);
                    count += 1;
                }
            }
        }
    }
    pano
}

fn bilinear(p: &Plane<f64>, x: f64, y: f64) -> f64 {
    let (w, h) = p.dims();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = p.get(x0, y0) * (1.0 - fx) + p.get(x1, y0) * fx;
    let bottom = p.get(x0, y1) * (1.0 - fx) + p.get(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Renders the clean frames of a scene. Deterministic in `cfg`.
pub fn render_scene(cfg: &SceneConfig) -> Result<Vec<Picture>> {
    if cfg.width == 0 || cfg.height == 0 || cfg.frames == 0 {
        return Err(Error::Config("scene needs positive size and frame count".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let offs = offsets(cfg, &mut rng);
    let (min_x, max_x) = offs.iter().fold((0.0f64, 0.0f64), |(a, b), o| (a.min(o.0), b.max(o.0)));
    let (min_y, max_y) = offs.iter().fold((0.0f64, 0.0f64), |(a, b), o| (a.min(o.1), b.max(o.1)));
    let pw = cfg.width + (max_x - min_x).ceil() as usize + 2;
    let ph = cfg.height + (max_y - min_y).ceil() as usize + 2;
    let pano = panorama(cfg, pw, ph, &mut rng);
    Ok(offs
        .iter()
        .enumerate()
        .map(|(t, &(ox, oy))| {
            let luma = Plane::from_fn(cfg.width, cfg.height, |x, y| {
                bilinear(&pano, x as f64 + ox - min_x, y as f64 + oy - min_y).round().clamp(0.0, 255.0) as u8
            });
            Picture::new(luma, t as u32)
        })
        .collect())
}

/// Smooth, unsaturated, content-free frames for reference estimation; each
/// frame has a slightly different exposure.
pub fn flat_field(width: usize, height: usize, frames: usize, seed: u64) -> Vec<Picture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..frames)
        .map(|t| {
            let level = rng.random_range(140.0..190.0);
            let (gx, gy) = (rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
            let luma = Plane::from_fn(width, height, |x, y| {
                (level + gx * x as f64 + gy * y as f64).round().clamp(0.0, 255.0) as u8
            });
            Picture::new(luma, t as u32)
        })
        .collect()
}
