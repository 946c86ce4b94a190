//! Empirical weight tables: QP tables from per-QP mean PCE, and rate tables
//! from frames spliced together by per-block λR rank.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::matching::{Correlator, PceConfig};
use crate::noise::{saturation_mask, NoiseResidual, Picture};
use crate::plane::Plane;
use crate::prnu::Fingerprint;
use crate::trace::{lambda_rate, FrameBlockMap, MAX_QP, MB_SIZE};
use crate::weighting::{Mask, TableScheme, WeightTable, DEFAULT_ANCHOR_LAMBDA_RATE, DEFAULT_ANCHOR_QP};

/// Normalized PCE values below this are raised to it before the square root.
pub const PCE_FLOOR: f64 = 1e-3;
pub const DEFAULT_BUCKETS: usize = 20;

/// Per-frame contribution to the fingerprint numerator, `I * W`, with
/// clipped pixels zeroed. Spliced frames live in this domain.
pub fn prnu_domain(picture: &Picture, residual: &NoiseResidual) -> Result<Plane<f64>> {
    residual.values.ensure_dims(picture.dims())?;
    let sat = saturation_mask(picture);
    let (w, h) = picture.dims();
    Ok(Plane::from_fn(w, h, |x, y| {
        f64::from(*picture.luma.get(x, y)) * residual.values.get(x, y) * sat.get(x, y)
    }))
}

/// Frames assembled from same-rank blocks. Skip blocks are left out of
/// the ranking (their residual is a copy), so position `p` is filled only in
/// the first `n_p` spliced frames, `n_p` being its count of coded blocks;
/// unfilled positions are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SplicedFrameSet {
    pub frames: Vec<Plane<f64>>,
    /// Mean λR over the blocks filling each spliced frame; NaN when empty.
    pub mean_lambda_rate: Vec<f64>,
    /// `source[j][p]`: source frame of block position `p` in spliced frame `j`.
    pub source: Vec<Vec<Option<usize>>>,
    pub mb_cols: usize,
    pub mb_rows: usize,
}

impl SplicedFrameSet {
    /// Share of block positions filled in spliced frame `j`.
    pub fn fill_fraction(&self, j: usize) -> f64 {
        let s = &self.source[j];
        s.iter().filter(|v| v.is_some()).count() as f64 / s.len() as f64
    }
}

/// For every block position independently, orders the coded blocks of the
/// N source frames by ascending λR (ties by frame index) and gives rank j to
/// spliced frame j.
pub fn splice_by_lambda_rate(frames: &[Plane<f64>], blocks: &[FrameBlockMap]) -> Result<SplicedFrameSet> {
    let n = frames.len();
    if n < 2 {
        return Err(Error::InsufficientFrames { needed: 2, got: n });
    }
    if blocks.len() != n {
        return Err(Error::FrameCountMismatch {
            expected: n,
            found: blocks.len(),
        });
    }
    let dims = frames[0].dims();
    let (cols, rows) = (blocks[0].mb_cols, blocks[0].mb_rows);
    for (f, b) in frames.iter().zip(blocks) {
        f.ensure_dims(dims)?;
        if (b.mb_cols, b.mb_rows) != (cols, rows) {
            return Err(Error::DimensionMismatch {
                expected: (cols, rows),
                found: (b.mb_cols, b.mb_rows),
            });
        }
    }
    if cols * MB_SIZE > dims.0 || rows * MB_SIZE > dims.1 {
        return Err(Error::DimensionMismatch {
            expected: (cols * MB_SIZE, rows * MB_SIZE),
            found: dims,
        });
    }
    let positions = cols * rows;
    let mut source = vec![vec![None; positions]; n];
    let mut lr = vec![vec![0.0f64; positions]; n];
    for p in 0..positions {
        let (bx, by) = (p % cols, p / cols);
        let mut order: Vec<(f64, usize)> = blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| !b.get(bx, by).is_skip())
            .map(|(i, b)| (lambda_rate(b.get(bx, by)), i))
            .collect();
        // stable: equal λR keeps frame order
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (j, &(v, i)) in order.iter().enumerate() {
            source[j][p] = Some(i);
            lr[j][p] = v;
        }
    }
    let mut spliced = Vec::with_capacity(n);
    let mut mean_lambda_rate = Vec::with_capacity(n);
    for j in 0..n {
        let mut plane = Plane::zeros(dims.0, dims.1);
        let mut sum = 0.0;
        let mut count = 0usize;
        for p in 0..positions {
            let Some(i) = source[j][p] else { continue };
            let (bx, by) = (p % cols, p / cols);
            for y in by * MB_SIZE..(by + 1) * MB_SIZE {
                let range = bx * MB_SIZE..(bx + 1) * MB_SIZE;
                plane.row_mut(y)[range.clone()].copy_from_slice(&frames[i].row(y)[range]);
            }
            sum += lr[j][p];
            count += 1;
        }
        spliced.push(plane);
        mean_lambda_rate.push(if count == 0 { f64::NAN } else { sum / count as f64 });
    }
    Ok(SplicedFrameSet {
        frames: spliced,
        mean_lambda_rate,
        source,
        mb_cols: cols,
        mb_rows: rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpObservation {
    pub camera_id: String,
    pub qp: u8,
    pub pce: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaRateObservation {
    pub camera_id: String,
    pub lambda_rate: f64,
    pub pce: f64,
}

/// One row of the audit report.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationRow {
    pub key: f64,
    /// (camera, mean raw PCE, normalized PCE) for cameras observing this key.
    pub per_camera: Vec<(String, f64, f64)>,
    pub averaged: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub table: WeightTable,
    pub rows: Vec<CalibrationRow>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Per camera: mean PCE per condition divided by the anchor's; then the
/// unweighted mean over cameras.
fn normalize_and_average(
    groups: &BTreeMap<String, BTreeMap<usize, Vec<f64>>>,
    anchor: usize,
    anchor_missing: impl Fn(&str) -> Error,
) -> Result<BTreeMap<usize, (Vec<(String, f64, f64)>, f64)>> {
    let mut per_key: BTreeMap<usize, Vec<(String, f64, f64)>> = BTreeMap::new();
    for (camera, conds) in groups {
        let anchor_pce = conds.get(&anchor).map(|v| mean(v)).ok_or_else(|| anchor_missing(camera))?;
        if !(anchor_pce > 0.0) || !anchor_pce.is_finite() {
            return Err(Error::InsufficientData(format!("camera {camera} has anchor PCE {anchor_pce}")));
        }
        for (&k, v) in conds {
            let raw = mean(v);
            per_key.entry(k).or_default().push((camera.clone(), raw, raw / anchor_pce));
        }
    }
    Ok(per_key
        .into_iter()
        .map(|(k, cams)| {
            let avg = cams.iter().map(|c| c.2).sum::<f64>() / cams.len() as f64;
            (k, (cams, avg))
        })
        .collect())
}

fn weight_of(normalized: f64) -> f64 {
    normalized.max(PCE_FLOOR).sqrt()
}

/// QP table over 0..=51 from per-QP PCE observations. Untested QPs are
/// linearly interpolated between tested neighbours (held flat past the
/// ends); the weight is the square root of the averaged normalized PCE.
pub fn calibrate_qp(observations: &[QpObservation], include_skip: bool, anchor_qp: u8) -> Result<Calibration> {
    if observations.is_empty() {
        return Err(Error::InsufficientData("no QP observations".into()));
    }
    let mut groups: BTreeMap<String, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for o in observations {
        if o.qp > MAX_QP {
            return Err(Error::range("QP", o.qp));
        }
        if !o.pce.is_finite() {
            return Err(Error::InsufficientData(format!("non-finite PCE for camera {}", o.camera_id)));
        }
        groups.entry(o.camera_id.clone()).or_default().entry(o.qp as usize).or_default().push(o.pce);
    }
    let averaged = normalize_and_average(&groups, anchor_qp as usize, |c| Error::MissingAnchor(format!("QP {anchor_qp} for camera {c}")))?;
    let tested: Vec<(usize, f64)> = averaged.iter().map(|(&k, (_, a))| (k, *a)).collect();
    let curve: Vec<f64> = (0..=MAX_QP as usize)
        .map(|q| {
            let hi = tested.partition_point(|&(k, _)| k < q);
            if hi < tested.len() && tested[hi].0 == q {
                tested[hi].1
            } else if hi == 0 {
                tested[0].1
            } else if hi == tested.len() {
                tested[hi - 1].1
            } else {
                let ((k0, v0), (k1, v1)) = (tested[hi - 1], tested[hi]);
                v0 + (v1 - v0) * (q - k0) as f64 / (k1 - k0) as f64
            }
        })
        .collect();
    let mut weights: Vec<f64> = curve.iter().map(|&v| weight_of(v)).collect();
    weights[anchor_qp as usize] = 1.0;
    let scheme = if include_skip { TableScheme::QpAll } else { TableScheme::QpNoSkip };
    let table = WeightTable::new(scheme, (0..=MAX_QP).map(f64::from).collect(), weights.clone(), f64::from(anchor_qp))?;
    let rows = (0..=MAX_QP as usize)
        .map(|q| CalibrationRow {
            key: q as f64,
            per_camera: averaged.get(&q).map(|(c, _)| c.clone()).unwrap_or_default(),
            averaged: curve[q],
            weight: weights[q],
        })
        .collect();
    Ok(Calibration { table, rows })
}

pub fn calibrate_qp_default(observations: &[QpObservation], include_skip: bool) -> Result<Calibration> {
    calibrate_qp(observations, include_skip, DEFAULT_ANCHOR_QP)
}

/// Equal-population bucket boundaries over pooled values: bucket `b` holds
/// values in `[edges[b], edges[b+1])`, the last bucket is closed.
pub fn quantile_edges(values: &[f64], buckets: usize) -> Vec<f64> {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut edges = vec![sorted[0]];
    for b in 1..buckets {
        let e = sorted[b * n / buckets];
        if e > *edges.last().unwrap() {
            edges.push(e);
        }
    }
    edges.push(sorted[n - 1]);
    edges
}

fn bucket_of(edges: &[f64], x: f64) -> usize {
    let last = edges.len() - 2;
    edges[1..edges.len() - 1].partition_point(|&e| e <= x).min(last)
}

/// Rate table from (mean λR, PCE) observations of spliced frames.
/// Each camera is normalized at the bucket holding `anchor`; the anchor
/// bucket's key is set to `anchor` itself, other keys are bucket means.
pub fn calibrate_lambda_rate(observations: &[LambdaRateObservation], buckets: usize, anchor: f64) -> Result<Calibration> {
    let obs: Vec<&LambdaRateObservation> = observations.iter().filter(|o| o.lambda_rate.is_finite()).collect();
    if obs.len() < 2 || buckets == 0 {
        return Err(Error::InsufficientData("need at least two finite λR observations".into()));
    }
    if let Some(o) = obs.iter().find(|o| !o.pce.is_finite()) {
        return Err(Error::InsufficientData(format!("non-finite PCE for camera {}", o.camera_id)));
    }
    let values: Vec<f64> = obs.iter().map(|o| o.lambda_rate).collect();
    let edges = quantile_edges(&values, buckets);
    if edges.len() < 3 {
        return Err(Error::InsufficientData("λR observations do not span two buckets".into()));
    }
    let (lo, hi) = (edges[0], edges[edges.len() - 1]);
    if !(lo..=hi).contains(&anchor) {
        return Err(Error::InsufficientData(format!("anchor λR {anchor} outside observed range [{lo}, {hi}]")));
    }
    let anchor_bucket = bucket_of(&edges, anchor);
    let mut groups: BTreeMap<String, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    let mut members: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for o in &obs {
        let b = bucket_of(&edges, o.lambda_rate);
        groups.entry(o.camera_id.clone()).or_default().entry(b).or_default().push(o.pce);
        members.entry(b).or_default().push(o.lambda_rate);
    }
    let averaged = normalize_and_average(&groups, anchor_bucket, |c| Error::EmptyBucket(c.to_string()))?;
    let mut keys = Vec::new();
    let mut weights = Vec::new();
    let mut rows = Vec::new();
    for (b, (cams, avg)) in &averaged {
        let key = if *b == anchor_bucket { anchor } else { mean(&members[b]) };
        let weight = if *b == anchor_bucket { 1.0 } else { weight_of(*avg) };
        keys.push(key);
        weights.push(weight);
        rows.push(CalibrationRow {
            key,
            per_camera: cams.clone(),
            averaged: *avg,
            weight,
        });
    }
    let table = WeightTable::new(TableScheme::LambdaR, keys, weights, anchor)?;
    Ok(Calibration { table, rows })
}

pub fn calibrate_lambda_rate_default(observations: &[LambdaRateObservation]) -> Result<Calibration> {
    calibrate_lambda_rate(observations, DEFAULT_BUCKETS, DEFAULT_ANCHOR_LAMBDA_RATE)
}

/// Tab-free text listing raw and normalized PCE per condition.
pub fn format_report(cal: &Calibration) -> String {
    let mut out = format!("#scheme={} anchor_key={}\n", cal.table.scheme(), cal.table.anchor_key());
    out.push_str("key,camera,raw_pce,normalized_pce\n");
    for row in &cal.rows {
        for (cam, raw, norm) in &row.per_camera {
            writeln!(out, "{},{},{},{}", row.key, cam, raw, norm).expect("write to String");
        }
    }
    out.push_str("key,averaged,weight\n");
    for row in &cal.rows {
        writeln!(out, "{},{},{}", row.key, row.averaged, row.weight).expect("write to String");
    }
    out
}

/// Mean single-frame PCE of a video against a reference. Each frame's
/// contribution `I * W * M` is correlated with the reference; with
/// `include_skip == false` skip blocks are masked out.
pub fn video_frame_pce(
    pictures: &[Picture],
    residuals: &[NoiseResidual],
    blocks: &[FrameBlockMap],
    reference: &Fingerprint,
    include_skip: bool,
    config: &PceConfig,
) -> Result<f64> {
    if pictures.is_empty() {
        return Err(Error::EmptyInput("no frames"));
    }
    if residuals.len() != pictures.len() || blocks.len() != pictures.len() {
        return Err(Error::FrameCountMismatch {
            expected: pictures.len(),
            found: residuals.len().min(blocks.len()),
        });
    }
    let (w, h) = reference.dims();
    let cor = Correlator::new(w, h);
    let reference_spectrum = cor.spectrum(reference.k())?;
    let mut total = 0.0;
    for ((p, r), b) in pictures.iter().zip(residuals).zip(blocks) {
        let mask = if include_skip {
            Mask::from_blocks(b, w, h, |_| 1.0)
        } else {
            crate::weighting::mask_skip_eliminate(b, w, h)
        };
        let mut contribution = prnu_domain(p, r)?;
        for (v, m) in contribution.as_mut_slice().iter_mut().zip(mask.values().as_slice()) {
            *v *= m;
        }
        total += match cor.pce_spectra(&cor.spectrum(&contribution)?, &reference_spectrum, config) {
            Ok(m) => m.pce,
            // a fully skipped frame carries nothing
            Err(Error::DegenerateFingerprint) => 0.0,
            Err(e) => return Err(e),
        };
    }
    Ok(total / pictures.len() as f64)
}

/// (mean λR, PCE) for every non-empty spliced frame of one video. PCE grows
/// linearly with the number of contributing pixels, so each value is divided
/// by the frame's fill fraction to compare partly filled frames with full
/// ones.
pub fn spliced_observations(
    camera_id: &str,
    pictures: &[Picture],
    residuals: &[NoiseResidual],
    blocks: &[FrameBlockMap],
    reference: &Fingerprint,
    config: &PceConfig,
) -> Result<Vec<LambdaRateObservation>> {
    let domain = pictures.iter().zip(residuals).map(|(p, r)| prnu_domain(p, r)).collect::<Result<Vec<_>>>()?;
    let set = splice_by_lambda_rate(&domain, blocks)?;
    let (w, h) = reference.dims();
    let cor = Correlator::new(w, h);
    let reference_spectrum = cor.spectrum(reference.k())?;
    let mut out = Vec::new();
    for j in 0..set.frames.len() {
        if set.mean_lambda_rate[j].is_nan() {
            continue;
        }
        let pce = match cor.pce_spectra(&cor.spectrum(&set.frames[j])?, &reference_spectrum, config) {
            Ok(m) => m.pce / set.fill_fraction(j),
            Err(Error::DegenerateFingerprint) => continue,
            Err(e) => return Err(e),
        };
        out.push(LambdaRateObservation {
            camera_id: camera_id.to_string(),
            lambda_rate: set.mean_lambda_rate[j],
            pce,
        });
    }
    Ok(out)
}
