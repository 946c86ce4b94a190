//! Peak-to-correlation energy between fingerprints over cyclic shifts.

use std::fmt::Write as _;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::par;
use crate::plane::Plane;
use crate::prnu::Fingerprint;

/// Conventional decision threshold.
pub const DEFAULT_THRESHOLD: f64 = 60.0;
/// Half width of the square excluded around the peak (11x11).
pub const DEFAULT_EXCLUSION_HALF_WIDTH: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchWindow {
    /// Peak is the largest-magnitude correlation over every cyclic shift.
    FullPlane,
    /// Peak is the zero-shift correlation; for pre-aligned inputs.
    ZeroShift,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PceConfig {
    pub exclusion_half_width: usize,
    pub search: SearchWindow,
    pub threshold: f64,
}

impl Default for PceConfig {
    fn default() -> Self {
        PceConfig {
            exclusion_half_width: DEFAULT_EXCLUSION_HALF_WIDTH,
            search: SearchWindow::FullPlane,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl PceConfig {
    pub fn zero_shift() -> Self {
        PceConfig {
            search: SearchWindow::ZeroShift,
            ..PceConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchReport {
    /// Signed: the peak's sign times its square, over the off-peak mean energy.
    pub pce: f64,
    /// Shift (dx, dy) such that the reference is the test moved by it,
    /// wrapped into (-w/2, w/2] x (-h/2, h/2].
    pub peak_offset: (i64, i64),
    pub correlation_peak: f64,
    pub decision: bool,
    pub threshold: f64,
}

/// A plane's 2-D spectrum, computed once and reusable across pairs.
#[derive(Debug, Clone)]
pub struct Spectrum {
    width: usize,
    height: usize,
    bins: Vec<Complex64>,
}

/// Cached FFT plans for one plane size.
#[derive(Clone)]
pub struct Correlator {
    width: usize,
    height: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Correlator {
    pub fn new(width: usize, height: usize) -> Self {
        let mut planner = FftPlanner::new();
        Correlator {
            width,
            height,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    fn transform(&self, data: &mut [Complex64], rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        let (w, h) = (self.width, self.height);
        rows.process(data);
        let mut column = vec![Complex64::default(); h];
        for x in 0..w {
            for y in 0..h {
                column[y] = data[y * w + x];
            }
            cols.process(&mut column);
            for y in 0..h {
                data[y * w + x] = column[y];
            }
        }
    }

    pub fn spectrum(&self, plane: &Plane<f64>) -> Result<Spectrum> {
        plane.ensure_dims((self.width, self.height))?;
        let mut bins: Vec<Complex64> = plane.as_slice().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut bins, &self.row_fwd, &self.col_fwd);
        Ok(Spectrum {
            width: self.width,
            height: self.height,
            bins,
        })
    }

    /// `c[s] = sum_x reference[x] * test[x - s]` over cyclic shifts `s`.
    pub fn cross_correlation(&self, test: &Spectrum, reference: &Spectrum) -> Result<Plane<f64>> {
        let dims = (self.width, self.height);
        for s in [test, reference] {
            if (s.width, s.height) != dims {
                return Err(Error::DimensionMismatch {
                    expected: dims,
                    found: (s.width, s.height),
                });
            }
        }
        let mut prod: Vec<Complex64> = reference.bins.iter().zip(&test.bins).map(|(r, t)| r * t.conj()).collect();
        self.transform(&mut prod, &self.row_inv, &self.col_inv);
        let scale = 1.0 / (self.width * self.height) as f64;
        Plane::from_vec(self.width, self.height, prod.iter().map(|c| c.re * scale).collect())
    }

    pub fn pce_spectra(&self, test: &Spectrum, reference: &Spectrum, config: &PceConfig) -> Result<MatchReport> {
        if is_zero(test) || is_zero(reference) {
            return Err(Error::DegenerateFingerprint);
        }
        let c = self.cross_correlation(test, reference)?;
        pce_from_correlation(&c, config)
    }

    pub fn pce_planes(&self, test: &Plane<f64>, reference: &Plane<f64>, config: &PceConfig) -> Result<MatchReport> {
        test.ensure_dims(reference.dims())?;
        self.pce_spectra(&self.spectrum(test)?, &self.spectrum(reference)?, config)
    }
}

fn is_zero(s: &Spectrum) -> bool {
    s.bins.iter().all(|c| c.norm_sqr() == 0.0)
}

fn wrap(i: usize, n: usize) -> i64 {
    if i > n / 2 {
        i as i64 - n as i64
    } else {
        i as i64
    }
}

/// PCE from a correlation plane.
pub fn pce_from_correlation(c: &Plane<f64>, config: &PceConfig) -> Result<MatchReport> {
    let (w, h) = c.dims();
    let r = config.exclusion_half_width;
    let (ew, eh) = ((2 * r + 1).min(w), (2 * r + 1).min(h));
    if ew * eh >= w * h {
        return Err(Error::Config(format!("exclusion half width {r} covers the whole {w}x{h} plane")));
    }
    let (px, py) = match config.search {
        SearchWindow::ZeroShift => (0, 0),
        SearchWindow::FullPlane => {
            let mut best = (0usize, f64::NEG_INFINITY);
            for (i, v) in c.as_slice().iter().enumerate() {
                if v.abs() > best.1 {
                    best = (i, v.abs());
                }
            }
            (best.0 % w, best.0 / w)
        }
    };
    let peak = *c.get(px, py);
    // cyclic distance test on each axis
    let near = |d: usize, n: usize, e: usize| {
        let d = d.min(n - d);
        2 * d < e || (e == n)
    };
    let (mut energy, mut count) = (0.0, 0usize);
    for y in 0..h {
        let ny = near((y + h - py) % h, h, eh);
        for (x, v) in c.row(y).iter().enumerate() {
            if ny && near((x + w - px) % w, w, ew) {
                continue;
            }
            energy += v * v;
            count += 1;
        }
    }
    let mean = energy / count as f64;
    if !(mean > 0.0) {
        return Err(Error::DegenerateFingerprint);
    }
    let pce = peak.signum() * peak * peak / mean;
    Ok(MatchReport {
        pce,
        peak_offset: (wrap(px, w), wrap(py, h)),
        correlation_peak: peak,
        decision: pce > config.threshold,
        threshold: config.threshold,
    })
}

pub fn pce(test: &Fingerprint, reference: &Fingerprint, config: &PceConfig) -> Result<MatchReport> {
    test.k().ensure_dims(reference.dims())?;
    let (w, h) = test.dims();
    Correlator::new(w, h).pce_planes(test.k(), reference.k(), config)
}

/// Every (test, reference) pair, row-major by test. Failures stay in their
/// cell; the rest of the batch still runs.
pub fn batch_match(tests: &[Fingerprint], references: &[Fingerprint], config: &PceConfig) -> Result<Vec<Vec<Result<MatchReport>>>> {
    if tests.is_empty() || references.is_empty() {
        return Err(Error::EmptyInput("batch needs at least one test and one reference"));
    }
    let spectra = |fps: &[Fingerprint]| -> Vec<Spectrum> {
        par::map(fps, |fp| {
            let (w, h) = fp.dims();
            Correlator::new(w, h).spectrum(fp.k()).expect("correlator sized to the plane")
        })
    };
    let test_spectra = spectra(tests);
    let ref_spectra = spectra(references);
    let n_ref = references.len();
    let cells = par::map_range(tests.len() * n_ref, |i| {
        let (t, r) = (i / n_ref, i % n_ref);
        let (ts, rs) = (&test_spectra[t], &ref_spectra[r]);
        if (ts.width, ts.height) != (rs.width, rs.height) {
            return Err(Error::DimensionMismatch {
                expected: (rs.width, rs.height),
                found: (ts.width, ts.height),
            });
        }
        Correlator::new(ts.width, ts.height).pce_spectra(ts, rs, config)
    });
    let mut it = cells.into_iter();
    Ok((0..tests.len()).map(|_| it.by_ref().take(n_ref).collect()).collect())
}

/// `test_id,reference_id,pce,dx,dy,decision` lines. Failed cells carry
/// empty numeric fields and `error` as the decision.
pub fn format_reports(tests: &[Fingerprint], references: &[Fingerprint], matrix: &[Vec<Result<MatchReport>>]) -> String {
    let mut out = String::new();
    for (t, row) in tests.iter().zip(matrix) {
        for (r, cell) in references.iter().zip(row) {
            match cell {
                Ok(m) => writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    t.source_id(),
                    r.source_id(),
                    m.pce,
                    m.peak_offset.0,
                    m.peak_offset.1,
                    m.decision
                ),
                Err(_) => writeln!(out, "{},{},,,,error", t.source_id(), r.source_id()),
            }
            .expect("writing to a String");
        }
    }
    out
}
