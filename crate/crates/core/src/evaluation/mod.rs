//! Scheme comparison grids, attribution tables by bits-per-pixel, ROC
//! curves and skip-rate summaries.

pub mod cohort;

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::bitstream::TraceFile;
use crate::error::{Error, ErrorClass, Result};
use crate::matching::{Correlator, MatchReport, PceConfig};
use crate::noise::{extract_residual, saturation_mask, Picture};
use crate::par;
use crate::prnu::{EstimateConfig, Fingerprint, FingerprintAccumulator};
use crate::trace::{skipped_block_rate, FrameBlockMap};
use crate::weighting::{SchemeConfig, WeightTable, WeightingScheme};

/// Default bits-per-pixel group edges.
pub const BPP_EDGES: [f64; 4] = [0.024, 0.052, 0.084, 0.172];

/// The six compared columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    Conventional,
    /// Conventional estimation on deblocking-compensated frames. The
    /// simulator has no loop filter, so there it equals `Conventional`.
    LoopFilterOnly,
    SkipEliminate,
    QpAll,
    QpNoSkip,
    LambdaR,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [
        Scheme::Conventional,
        Scheme::LoopFilterOnly,
        Scheme::SkipEliminate,
        Scheme::QpAll,
        Scheme::QpNoSkip,
        Scheme::LambdaR,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Conventional => "conventional",
            Scheme::LoopFilterOnly => "loop_filter_only",
            Scheme::SkipEliminate => "skip_eliminate",
            Scheme::QpAll => "qp_all",
            Scheme::QpNoSkip => "qp_noskip",
            Scheme::LambdaR => "lambda_r",
        }
    }

    pub fn weighting(self) -> WeightingScheme {
        match self {
            Scheme::Conventional | Scheme::LoopFilterOnly => WeightingScheme::Conventional,
            Scheme::SkipEliminate => WeightingScheme::SkipEliminate,
            Scheme::QpAll => WeightingScheme::QpAll,
            Scheme::QpNoSkip => WeightingScheme::QpNoSkip,
            Scheme::LambdaR => WeightingScheme::LambdaR,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme `{s}`")))
    }
}

/// Tables for the table-driven schemes.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeTables {
    pub qp_all: WeightTable,
    pub qp_noskip: WeightTable,
    pub lambda_r: WeightTable,
}

impl SchemeTables {
    pub fn config(&self, scheme: Scheme) -> Result<SchemeConfig> {
        let table = match scheme.weighting() {
            WeightingScheme::QpAll => Some(self.qp_all.clone()),
            WeightingScheme::QpNoSkip => Some(self.qp_noskip.clone()),
            WeightingScheme::LambdaR => Some(self.lambda_r.clone()),
            _ => None,
        };
        SchemeConfig::new(scheme.weighting(), table)
    }
}

fn scheme_config(scheme: Scheme, tables: Option<&SchemeTables>) -> Result<SchemeConfig> {
    match tables {
        Some(t) => t.config(scheme),
        None => SchemeConfig::new(scheme.weighting(), None),
    }
}

/// A failed cell, kept as its class and message.
#[derive(Debug, Clone, PartialEq)]
pub struct CellError {
    pub class: ErrorClass,
    pub message: String,
}

impl From<&Error> for CellError {
    fn from(e: &Error) -> Self {
        CellError {
            class: e.class(),
            message: e.to_string(),
        }
    }
}

pub type Cell = std::result::Result<MatchReport, CellError>;

/// A reference a video is compared against.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceRef<'a> {
    pub fingerprint: &'a Fingerprint,
    /// Whether the video really comes from this reference's camera.
    pub matching: bool,
}

/// One decoded video with its block maps and the references to test.
#[derive(Debug, Clone)]
pub struct GridInput<'a> {
    pub video_id: String,
    pub camera_id: String,
    /// Free-form condition label, e.g. the bitrate.
    pub group: String,
    pub pictures: &'a [Picture],
    pub blocks: &'a [FrameBlockMap],
    pub bpp: f64,
    pub sbr: f64,
    pub references: Vec<ReferenceRef<'a>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub video_id: String,
    pub camera_id: String,
    pub reference_id: String,
    pub matching: bool,
    pub group: String,
    pub bpp: f64,
    pub sbr: f64,
    /// One per grid scheme, in grid order.
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeSummary {
    pub scheme: Scheme,
    pub cells: usize,
    pub mean_pce: f64,
    /// Mean PCE over the conventional mean; NaN without a conventional column.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentGrid {
    pub schemes: Vec<Scheme>,
    pub threshold: f64,
    pub rows: Vec<GridRow>,
}

/// Fingerprints of one video under each scheme, sharing one denoising pass.
pub fn scheme_fingerprints(
    pictures: &[Picture],
    blocks: &[FrameBlockMap],
    schemes: &[Scheme],
    tables: Option<&SchemeTables>,
    config: &EstimateConfig,
    source_id: &str,
) -> Result<Vec<Result<Fingerprint>>> {
    if pictures.is_empty() {
        return Err(Error::EmptyInput("no frames"));
    }
    if pictures.len() != blocks.len() {
        return Err(Error::FrameCountMismatch {
            expected: blocks.len(),
            found: pictures.len(),
        });
    }
    let (w, h) = pictures[0].dims();
    let configs: Vec<Result<SchemeConfig>> = schemes.iter().map(|&s| scheme_config(s, tables)).collect();
    let prepared = par::map(pictures, |p| -> Result<_> {
        p.luma.ensure_dims((w, h))?;
        let residual = extract_residual(p, &config.denoise);
        let sat = config.saturation_masking.then(|| saturation_mask(p));
        Ok((residual, sat))
    });
    let prepared: Vec<_> = prepared.into_iter().collect::<Result<_>>()?;
    Ok(par::map(&configs, |cfg| {
        let cfg = cfg.as_ref().map_err(|e| Error::Config(e.to_string()))?;
        let mut acc = FingerprintAccumulator::new(w, h);
        for ((p, (r, sat)), b) in pictures.iter().zip(&prepared).zip(blocks) {
            acc.accumulate(p, r, &cfg.build_mask(b, w, h)?, sat.as_ref())?;
        }
        acc.finalize(config.floor, source_id)
    }))
}

/// Estimates every scheme's fingerprint for every input and matches it
/// against the input's references. Failures stay inside their cells.
pub fn run_grid(
    inputs: &[GridInput<'_>],
    schemes: &[Scheme],
    tables: Option<&SchemeTables>,
    estimate: &EstimateConfig,
    pce: &PceConfig,
) -> Result<ExperimentGrid> {
    if schemes.is_empty() {
        return Err(Error::EmptyInput("no schemes"));
    }
    let per_input = par::map(inputs, |input| -> Vec<GridRow> {
        let fps = scheme_fingerprints(input.pictures, input.blocks, schemes, tables, estimate, &input.video_id);
        input
            .references
            .iter()
            .map(|r| {
                let cells = match &fps {
                    Err(e) => vec![Err(CellError::from(e)); schemes.len()],
                    Ok(fps) => fps
                        .iter()
                        .map(|fp| match fp {
                            Err(e) => Err(CellError::from(e)),
                            Ok(fp) => crate::matching::pce(fp, r.fingerprint, pce).map_err(|e| CellError::from(&e)),
                        })
                        .collect(),
                };
                GridRow {
                    video_id: input.video_id.clone(),
                    camera_id: input.camera_id.clone(),
                    reference_id: r.fingerprint.source_id().to_string(),
                    matching: r.matching,
                    group: input.group.clone(),
                    bpp: input.bpp,
                    sbr: input.sbr,
                    cells,
                }
            })
            .collect()
    });
    Ok(ExperimentGrid {
        schemes: schemes.to_vec(),
        threshold: pce.threshold,
        rows: per_input.into_iter().flatten().collect(),
    })
}

/// Matches precomputed fingerprints (one per scheme) against a reference;
/// used when fingerprints come from elsewhere.
pub fn match_all(fingerprints: &[Fingerprint], reference: &Fingerprint, config: &PceConfig) -> Vec<Cell> {
    let (w, h) = reference.dims();
    let cor = Correlator::new(w, h);
    let reference_spectrum = cor.spectrum(reference.k());
    fingerprints
        .iter()
        .map(|fp| {
            let rs = reference_spectrum.as_ref().map_err(CellError::from)?;
            cor.spectrum(fp.k())
                .and_then(|s| cor.pce_spectra(&s, rs, config))
                .map_err(|e| CellError::from(&e))
        })
        .collect()
}

/// Formats a number with three significant digits.
pub fn sig3(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0.00".into();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (2 - magnitude).max(0) as usize;
    let rounded = format!("{x:.decimals$}");
    // rounding can bump the magnitude (9.996 -> 10.00)
    let back: f64 = rounded.parse().unwrap_or(x);
    if back != 0.0 && back.abs().log10().floor() as i32 > magnitude && decimals > 0 {
        let d = decimals - 1;
        format!("{x:.d$}")
    } else {
        rounded
    }
}

impl ExperimentGrid {
    pub fn column(&self, scheme: Scheme) -> Option<usize> {
        self.schemes.iter().position(|&s| s == scheme)
    }

    /// Successful PCE values of a column over the rows passing `filter`.
    pub fn pces(&self, scheme: Scheme, filter: impl Fn(&GridRow) -> bool) -> Vec<f64> {
        let Some(c) = self.column(scheme) else {
            return Vec::new();
        };
        self.rows
            .iter()
            .filter(|r| filter(r))
            .filter_map(|r| r.cells[c].as_ref().ok().map(|m| m.pce))
            .collect()
    }

    pub fn mean_pce(&self, scheme: Scheme, filter: impl Fn(&GridRow) -> bool) -> Option<f64> {
        let v = self.pces(scheme, filter);
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Per-scheme mean PCE and improvement over conventional.
    pub fn summary(&self, filter: impl Fn(&GridRow) -> bool) -> Vec<SchemeSummary> {
        let base = self.mean_pce(Scheme::Conventional, &filter);
        self.schemes
            .iter()
            .map(|&s| {
                let v = self.pces(s, &filter);
                let mean = if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
                SchemeSummary {
                    scheme: s,
                    cells: v.len(),
                    mean_pce: mean,
                    ratio: base.map_or(f64::NAN, |b| mean / b),
                }
            })
            .collect()
    }

    /// Long format: one line per (row, scheme).
    pub fn to_text(&self) -> String {
        let mut out = format!("#threshold={}\n", self.threshold);
        out.push_str("video,camera,reference,matching,group,bpp,sbr,scheme,pce,dx,dy,peak,error\n");
        for r in &self.rows {
            for (s, cell) in self.schemes.iter().zip(&r.cells) {
                let head = format!(
                    "{},{},{},{},{},{},{},{}",
                    r.video_id, r.camera_id, r.reference_id, r.matching, r.group, r.bpp, r.sbr, s
                );
                match cell {
                    Ok(m) => writeln!(out, "{head},{},{},{},{},", m.pce, m.peak_offset.0, m.peak_offset.1, m.correlation_peak),
                    Err(e) => writeln!(out, "{head},,,,,{}", e.message.replace([',', '\n'], ";")),
                }
                .expect("write to String");
            }
        }
        out
    }

    /// Reads [`ExperimentGrid::to_text`] output. Rows keep first-seen order;
    /// every row must carry every scheme that appears in the file.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let threshold = match lines.next() {
            Some((_, l)) => l
                .strip_prefix("#threshold=")
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::schema(1, "expected `#threshold=<value>`"))?,
            None => return Err(Error::schema(1, "empty grid file")),
        };
        match lines.next() {
            Some((_, l)) if l.starts_with("video,") => {}
            _ => return Err(Error::schema(2, "missing column header")),
        }
        type Key = (String, String, String);
        let mut schemes: Vec<Scheme> = Vec::new();
        let mut rows: Vec<(Key, bool, String, f64, f64, Vec<(Scheme, Cell)>)> = Vec::new();
        for (i, line) in lines {
            let ln = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 13 {
                return Err(Error::schema(ln, format!("expected 13 fields, found {}", f.len())));
            }
            let num = |s: &str, what: &str| s.parse::<f64>().map_err(|_| Error::schema(ln, format!("bad {what} `{s}`")));
            let matching = f[3].parse::<bool>().map_err(|_| Error::schema(ln, "bad matching flag"))?;
            let (bpp, sbr) = (num(f[5], "bpp")?, num(f[6], "sbr")?);
            let scheme: Scheme = f[7].parse().map_err(|_| Error::schema(ln, format!("unknown scheme `{}`", f[7])))?;
            let cell = if f[8].is_empty() {
                Err(CellError {
                    class: ErrorClass::Degenerate,
                    message: f[12].to_string(),
                })
            } else {
                let pce = num(f[8], "pce")?;
                let int = |s: &str| s.parse::<i64>().map_err(|_| Error::schema(ln, format!("bad offset `{s}`")));
                Ok(MatchReport {
                    pce,
                    peak_offset: (int(f[9])?, int(f[10])?),
                    correlation_peak: num(f[11], "peak")?,
                    decision: pce > threshold,
                    threshold,
                })
            };
            if !schemes.contains(&scheme) {
                schemes.push(scheme);
            }
            let key = (f[0].to_string(), f[1].to_string(), f[2].to_string());
            match rows.iter_mut().find(|r| r.0 == key) {
                Some(r) => {
                    if r.5.iter().any(|c| c.0 == scheme) {
                        return Err(Error::schema(ln, format!("duplicate cell for scheme {scheme}")));
                    }
                    r.5.push((scheme, cell));
                }
                None => rows.push((key, matching, f[4].to_string(), bpp, sbr, vec![(scheme, cell)])),
            }
        }
        let rows = rows
            .into_iter()
            .map(|((video_id, camera_id, reference_id), matching, group, bpp, sbr, cells)| {
                let cells = schemes
                    .iter()
                    .map(|s| {
                        cells
                            .iter()
                            .find(|c| c.0 == *s)
                            .map(|c| c.1.clone())
                            .ok_or_else(|| Error::schema(0, format!("video {video_id} lacks scheme {s}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(GridRow {
                    video_id,
                    camera_id,
                    reference_id,
                    matching,
                    group,
                    bpp,
                    sbr,
                    cells,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ExperimentGrid {
            schemes,
            threshold,
            rows,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCounts {
    pub label: String,
    pub population: usize,
    pub counts: Vec<usize>,
}

/// Counts of matching videos with PCE above threshold, per bpp group.
#[derive(Debug, Clone, PartialEq)]
pub struct CountsTable {
    pub schemes: Vec<Scheme>,
    pub groups: Vec<GroupCounts>,
}

impl CountsTable {
    pub fn totals(&self) -> GroupCounts {
        GroupCounts {
            label: "total".into(),
            population: self.groups.iter().map(|g| g.population).sum(),
            counts: (0..self.schemes.len()).map(|i| self.groups.iter().map(|g| g.counts[i]).sum()).collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("bpp");
        for s in &self.schemes {
            out.push(',');
            out.push_str(s.as_str());
        }
        out.push_str(",videos\n");
        for g in self.groups.iter().chain(std::iter::once(&self.totals())) {
            out.push_str(&g.label);
            for c in &g.counts {
                write!(out, ",{c}").expect("write to String");
            }
            writeln!(out, ",{}", g.population).expect("write to String");
        }
        out
    }
}

/// Group labels for `edges`: `<e0`, `<e1`, ..., `>e_last`. A value equal
/// to an edge belongs to the group above it.
pub fn group_labels(edges: &[f64]) -> Vec<String> {
    let mut v: Vec<String> = edges.iter().map(|e| format!("<{e}")).collect();
    if let Some(last) = edges.last() {
        v.push(format!(">{last}"));
    } else {
        v.push("all".into());
    }
    v
}

pub fn group_of(edges: &[f64], bpp: f64) -> usize {
    edges.partition_point(|&e| e <= bpp)
}

/// Table of PCE > `threshold` counts over matching rows, grouped by bpp.
/// Failed cells count as misses.
pub fn threshold_table(grid: &ExperimentGrid, edges: &[f64], threshold: f64) -> CountsTable {
    let labels = group_labels(edges);
    let mut groups: Vec<GroupCounts> = labels
        .into_iter()
        .map(|label| GroupCounts {
            label,
            population: 0,
            counts: vec![0; grid.schemes.len()],
        })
        .collect();
    for row in grid.rows.iter().filter(|r| r.matching) {
        let g = &mut groups[group_of(edges, row.bpp)];
        g.population += 1;
        for (count, cell) in g.counts.iter_mut().zip(&row.cells) {
            if matches!(cell, Ok(m) if m.pce > threshold) {
                *count += 1;
            }
        }
    }
    CountsTable {
        schemes: grid.schemes.clone(),
        groups,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// Detector curve; a score is positive when `score >= threshold`. Points run
/// from threshold -inf (1, 1) up to +inf (0, 0).
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

pub fn roc(matching: &[f64], nonmatching: &[f64]) -> Result<RocCurve> {
    if matching.is_empty() || nonmatching.is_empty() {
        return Err(Error::EmptyInput("ROC needs matching and non-matching scores"));
    }
    if matching.iter().chain(nonmatching).any(|v| v.is_nan()) {
        return Err(Error::InsufficientData("NaN score".into()));
    }
    let mut thresholds: Vec<f64> = matching.iter().chain(nonmatching).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let rate = |set: &[f64], t: f64| set.iter().filter(|&&v| v >= t).count() as f64 / set.len() as f64;
    let mut points = vec![RocPoint {
        threshold: f64::NEG_INFINITY,
        tpr: 1.0,
        fpr: 1.0,
    }];
    points.extend(thresholds.iter().map(|&t| RocPoint {
        threshold: t,
        tpr: rate(matching, t),
        fpr: rate(nonmatching, t),
    }));
    points.push(RocPoint {
        threshold: f64::INFINITY,
        tpr: 0.0,
        fpr: 0.0,
    });
    Ok(RocCurve { points })
}

impl RocCurve {
    /// Trapezoidal area; tied scores get half credit.
    pub fn auc(&self) -> f64 {
        self.points.windows(2).map(|w| (w[0].fpr - w[1].fpr) * (w[0].tpr + w[1].tpr) / 2.0).sum()
    }

    /// Rates at an arbitrary threshold.
    pub fn at(&self, threshold: f64) -> (f64, f64) {
        // first point whose threshold is >= the query
        let p = self.points.iter().find(|p| p.threshold >= threshold).expect("+inf endpoint");
        (p.tpr, p.fpr)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("threshold,tpr,fpr\n");
        for p in &self.points {
            writeln!(out, "{},{},{}", p.threshold, p.tpr, p.fpr).expect("write to String");
        }
        out
    }
}

/// Five-number summary of a group of skipped-block rates.
#[derive(Debug, Clone, PartialEq)]
pub struct SbrSummary {
    pub label: String,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted data (the common "type 7").
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn sbr_summary_values(groups: &[(String, Vec<f64>)]) -> Result<Vec<SbrSummary>> {
    groups
        .iter()
        .map(|(label, values)| {
            if values.is_empty() {
                return Err(Error::EmptyInput("SBR group without traces"));
            }
            let mut v = values.clone();
            v.sort_by(f64::total_cmp);
            Ok(SbrSummary {
                label: label.clone(),
                n: v.len(),
                min: v[0],
                q1: quantile(&v, 0.25),
                median: quantile(&v, 0.5),
                q3: quantile(&v, 0.75),
                max: v[v.len() - 1],
            })
        })
        .collect()
}

/// SBR distribution per group of traces.
pub fn sbr_summary(groups: &[(String, Vec<TraceFile>)]) -> Result<Vec<SbrSummary>> {
    let values = groups
        .iter()
        .map(|(label, traces)| Ok((label.clone(), traces.iter().map(|t| skipped_block_rate(&t.frames())).collect::<Result<Vec<_>>>()?)))
        .collect::<Result<Vec<_>>>()?;
    sbr_summary_values(&values)
}

pub fn format_sbr(summaries: &[SbrSummary]) -> String {
    let mut out = String::from("group,n,min,q1,median,q3,max\n");
    for s in summaries {
        writeln!(out, "{},{},{},{},{},{},{}", s.label, s.n, s.min, s.q1, s.median, s.q3, s.max).expect("write to String");
    }
    out
}

pub fn format_summary(summary: &[SchemeSummary]) -> String {
    let mut out = String::from("scheme,cells,mean_pce,ratio\n");
    for s in summary {
        writeln!(out, "{},{},{},{}", s.scheme, s.cells, sig3(s.mean_pce), sig3(s.ratio)).expect("write to String");
    }
    out
}
