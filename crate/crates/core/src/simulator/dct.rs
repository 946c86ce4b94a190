//! Orthonormal 8x8 type-II DCT.

use std::sync::OnceLock;

pub const N: usize = 8;

fn basis() -> &'static [[f64; N]; N] {
    static BASIS: OnceLock<[[f64; N]; N]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut c = [[0.0; N]; N];
        for (k, row) in c.iter_mut().enumerate() {
            let scale = if k == 0 { (1.0 / N as f64).sqrt() } else { (2.0 / N as f64).sqrt() };
            for (n, v) in row.iter_mut().enumerate() {
                *v = scale * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / (2 * N) as f64).cos();
            }
        }
        c
    })
}

/// Row-major 8x8 forward transform: `C * X * C^T`.
pub fn forward(x: &[f64; N * N]) -> [f64; N * N] {
    let c = basis();
    let mut tmp = [0.0; N * N];
    for i in 0..N {
        for j in 0..N {
            tmp[i * N + j] = (0..N).map(|k| c[i][k] * x[k * N + j]).sum();
        }
    }
    let mut out = [0.0; N * N];
    for i in 0..N {
        for j in 0..N {
            out[i * N + j] = (0..N).map(|k| tmp[i * N + k] * c[j][k]).sum();
        }
    }
    out
}

/// `C^T * Y * C`.
pub fn inverse(y: &[f64; N * N]) -> [f64; N * N] {
    let c = basis();
    let mut tmp = [0.0; N * N];
    for i in 0..N {
        for j in 0..N {
            tmp[i * N + j] = (0..N).map(|k| c[k][i] * y[k * N + j]).sum();
        }
    }
    let mut out = [0.0; N * N];
    for i in 0..N {
        for j in 0..N {
            out[i * N + j] = (0..N).map(|k| tmp[i * N + k] * c[k][j]).sum();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_energy() {
        let x: [f64; 64] = std::array::from_fn(|i| ((i * 37) % 11) as f64 - 5.0);
        let y = forward(&x);
        let ex: f64 = x.iter().map(|v| v * v).sum();
        let ey: f64 = y.iter().map(|v| v * v).sum();
        assert!((ex - ey).abs() < 1e-9);
        let back = inverse(&y);
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_block_is_pure_dc() {
        let y = forward(&[3.0; 64]);
        assert!((y[0] - 24.0).abs() < 1e-12);
        assert!(y[1..].iter().all(|v| v.abs() < 1e-12));
    }
}
