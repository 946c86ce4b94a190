//! Periodized orthonormal 2-D wavelet transform (Daubechies, 8 taps) and the
//! subband-adaptive Wiener residual.

use crate::plane::Plane;

/// Daubechies 4-vanishing-moment scaling filter.
const DB4_LO: [f64; 8] = [
    0.230_377_813_308_896_5,
    0.714_846_570_552_915_4,
    0.630_880_767_929_858_9,
    -0.027_983_769_416_859_9,
    -0.187_034_811_719_093_1,
    0.030_841_381_835_560_7,
    0.032_883_011_666_885_2,
    -0.010_597_401_785_069_0,
];

/// Local-variance windows used by the adaptive Wiener estimate.
const WINDOWS: [usize; 4] = [3, 5, 7, 9];

fn hi_filter() -> [f64; 8] {
    let mut g = [0.0; 8];
    for (k, v) in g.iter_mut().enumerate() {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        *v = sign * DB4_LO[7 - k];
    }
    g
}

fn analyze(x: &[f64], lo: &mut [f64], hi: &mut [f64], g: &[f64; 8]) {
    let n = x.len();
    for i in 0..n / 2 {
        let (mut a, mut d) = (0.0, 0.0);
        for k in 0..8 {
            let v = x[(2 * i + k) % n];
            a += DB4_LO[k] * v;
            d += g[k] * v;
        }
        lo[i] = a;
        hi[i] = d;
    }
}

fn synthesize(lo: &[f64], hi: &[f64], x: &mut [f64], g: &[f64; 8]) {
    let n = x.len();
    x.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..n / 2 {
        for k in 0..8 {
            x[(2 * i + k) % n] += DB4_LO[k] * lo[i] + g[k] * hi[i];
        }
    }
}

/// In-place Mallat decomposition of the top-left `w x h` region.
fn forward_level(p: &mut Plane<f64>, w: usize, h: usize, g: &[f64; 8]) {
    let mut line = vec![0.0; w.max(h)];
    let mut lo = vec![0.0; w.max(h) / 2];
    let mut hi = vec![0.0; w.max(h) / 2];
    for y in 0..h {
        line[..w].copy_from_slice(&p.row(y)[..w]);
        analyze(&line[..w], &mut lo[..w / 2], &mut hi[..w / 2], g);
        let row = p.row_mut(y);
        row[..w / 2].copy_from_slice(&lo[..w / 2]);
        row[w / 2..w].copy_from_slice(&hi[..w / 2]);
    }
    for x in 0..w {
        for y in 0..h {
            line[y] = *p.get(x, y);
        }
        analyze(&line[..h], &mut lo[..h / 2], &mut hi[..h / 2], g);
        for y in 0..h / 2 {
            *p.get_mut(x, y) = lo[y];
            *p.get_mut(x, y + h / 2) = hi[y];
        }
    }
}

fn inverse_level(p: &mut Plane<f64>, w: usize, h: usize, g: &[f64; 8]) {
    let mut line = vec![0.0; w.max(h)];
    let mut lo = vec![0.0; w.max(h) / 2];
    let mut hi = vec![0.0; w.max(h) / 2];
    for x in 0..w {
        for y in 0..h / 2 {
            lo[y] = *p.get(x, y);
            hi[y] = *p.get(x, y + h / 2);
        }
        synthesize(&lo[..h / 2], &hi[..h / 2], &mut line[..h], g);
        for y in 0..h {
            *p.get_mut(x, y) = line[y];
        }
    }
    for y in 0..h {
        let row = p.row_mut(y);
        lo[..w / 2].copy_from_slice(&row[..w / 2]);
        hi[..w / 2].copy_from_slice(&row[w / 2..w]);
        synthesize(&lo[..w / 2], &hi[..w / 2], &mut line[..w], g);
        row[..w].copy_from_slice(&line[..w]);
    }
}

pub(crate) fn forward(p: &mut Plane<f64>, levels: usize) {
    let g = hi_filter();
    let (mut w, mut h) = p.dims();
    for _ in 0..levels {
        forward_level(p, w, h, &g);
        w /= 2;
        h /= 2;
    }
}

pub(crate) fn inverse(p: &mut Plane<f64>, levels: usize) {
    let g = hi_filter();
    let (w, h) = p.dims();
    for l in (0..levels).rev() {
        inverse_level(p, w >> l, h >> l, &g);
    }
}

/// Deepest usable decomposition for a padded `w x h` plane.
pub(crate) fn usable_levels(w: usize, h: usize, requested: usize) -> usize {
    let mut levels = 0;
    while levels < requested && (w >> levels) % 2 == 0 && (h >> levels) % 2 == 0 && (w >> (levels + 1)) >= 4 && (h >> (levels + 1)) >= 4 {
        levels += 1;
    }
    levels
}

/// Replaces the subband at (x0, y0, w, h) with its Wiener residual
/// `c * s0 / (var + s0)`, where `var` is the smallest local variance estimate
/// over the fixed window set.
fn wiener_residual_subband(p: &mut Plane<f64>, x0: usize, y0: usize, w: usize, h: usize, noise_var: f64) {
    // integral image of squared coefficients, (w+1) x (h+1)
    let stride = w + 1;
    let mut integral = vec![0.0; stride * (h + 1)];
    for y in 0..h {
        let mut run = 0.0;
        for x in 0..w {
            let c = *p.get(x0 + x, y0 + y);
            run += c * c;
            integral[(y + 1) * stride + x + 1] = integral[y * stride + x + 1] + run;
        }
    }
    let boxed = |xa: usize, ya: usize, xb: usize, yb: usize| -> f64 {
        integral[yb * stride + xb] - integral[ya * stride + xb] - integral[yb * stride + xa]
            + integral[ya * stride + xa]
    };
    for y in 0..h {
        for x in 0..w {
            let mut var = f64::INFINITY;
            for &win in &WINDOWS {
                let r = win / 2;
                let (xa, ya) = (x.saturating_sub(r), y.saturating_sub(r));
                let (xb, yb) = ((x + r + 1).min(w), (y + r + 1).min(h));
                let count = ((xb - xa) * (yb - ya)) as f64;
                let local = (boxed(xa, ya, xb, yb) / count - noise_var).max(0.0);
                var = var.min(local);
            }
            let c = p.get_mut(x0 + x, y0 + y);
            *c *= noise_var / (var + noise_var);
        }
    }
}

/// Noise residual (input minus wavelet-Wiener estimate) of a plane whose
/// dimensions are divisible by `2^levels`.
pub(crate) fn residual(input: &Plane<f64>, levels: usize, noise_var: f64) -> Plane<f64> {
    let mut coeffs = input.clone();
    forward(&mut coeffs, levels);
    let (w, h) = coeffs.dims();
    for l in 0..levels {
        let (bw, bh) = (w >> (l + 1), h >> (l + 1));
        wiener_residual_subband(&mut coeffs, bw, 0, bw, bh, noise_var);
        wiener_residual_subband(&mut coeffs, 0, bh, bw, bh, noise_var);
        wiener_residual_subband(&mut coeffs, bw, bh, bw, bh, noise_var);
    }
    let (aw, ah) = (w >> levels, h >> levels);
    for y in 0..ah {
        coeffs.row_mut(y)[..aw].iter_mut().for_each(|v| *v = 0.0);
    }
    inverse(&mut coeffs, levels);
    coeffs
}
