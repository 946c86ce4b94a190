//! Per-frame pixel masks that weight each macroblock's contribution to the
//! fingerprint estimate, and the weight tables that drive them.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::plane::Plane;
use crate::trace::{lambda_rate, BlockRecord, FrameBlockMap, MAX_QP, MB_SIZE};

/// Tolerance on the anchor weight.
pub const ANCHOR_TOLERANCE: f64 = 1e-9;
/// Default anchor QP for QP tables.
pub const DEFAULT_ANCHOR_QP: u8 = 15;
/// Default anchor for rate tables.
pub const DEFAULT_ANCHOR_LAMBDA_RATE: f64 = 60.0;

/// Which statistic a table is keyed on and how skip blocks are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TableScheme {
    SkipEliminate,
    QpAll,
    QpNoSkip,
    LambdaR,
}

impl TableScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            TableScheme::SkipEliminate => "skip_eliminate",
            TableScheme::QpAll => "qp_all",
            TableScheme::QpNoSkip => "qp_noskip",
            TableScheme::LambdaR => "lambda_r",
        }
    }

    pub fn is_qp(self) -> bool {
        matches!(self, TableScheme::QpAll | TableScheme::QpNoSkip)
    }
}

impl fmt::Display for TableScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TableScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "skip_eliminate" => Ok(TableScheme::SkipEliminate),
            "qp_all" => Ok(TableScheme::QpAll),
            "qp_noskip" => Ok(TableScheme::QpNoSkip),
            "lambda_r" => Ok(TableScheme::LambdaR),
            other => Err(Error::InvalidTable(format!("unknown scheme `{other}`"))),
        }
    }
}

/// Calibrated map from a block statistic to a weight, anchored at weight 1.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    scheme: TableScheme,
    keys: Vec<f64>,
    weights: Vec<f64>,
    anchor_key: f64,
}

impl WeightTable {
    pub fn new(scheme: TableScheme, keys: Vec<f64>, weights: Vec<f64>, anchor_key: f64) -> Result<Self> {
        if keys.is_empty() {
            return Err(Error::InvalidTable("no entries".into()));
        }
        if keys.len() != weights.len() {
            return Err(Error::InvalidTable(format!(
                "{} keys but {} weights",
                keys.len(),
                weights.len()
            )));
        }
        if keys.iter().any(|k| !k.is_finite()) || keys.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidTable("keys must be finite and strictly increasing".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidTable(format!("weight {w} is negative or not finite")));
        }
        let idx = keys
            .iter()
            .position(|&k| k == anchor_key)
            .ok_or_else(|| Error::InvalidTable(format!("anchor key {anchor_key} is not a table key")))?;
        if (weights[idx] - 1.0).abs() > ANCHOR_TOLERANCE {
            return Err(Error::InvalidTable(format!(
                "weight at anchor {anchor_key} is {}, expected 1",
                weights[idx]
            )));
        }
        Ok(WeightTable {
            scheme,
            keys,
            weights,
            anchor_key,
        })
    }

    /// All-ones QP table over 0..=51 (reduces every QP scheme to the
    /// unweighted estimate).
    pub fn uniform_qp(scheme: TableScheme) -> Self {
        let keys: Vec<f64> = (0..=MAX_QP).map(f64::from).collect();
        let weights = vec![1.0; keys.len()];
        WeightTable::new(scheme, keys, weights, f64::from(DEFAULT_ANCHOR_QP)).expect("valid by construction")
    }

    pub fn scheme(&self) -> TableScheme {
        self.scheme
    }

    pub fn keys(&self) -> &[f64] {
        &self.keys
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn anchor_key(&self) -> f64 {
        self.anchor_key
    }

    /// Exact lookup; QP tables must be dense over 0..=51.
    pub fn weight_at_qp(&self, qp: u8) -> Result<f64> {
        let key = f64::from(qp);
        self.keys
            .binary_search_by(|k| k.total_cmp(&key))
            .map(|i| self.weights[i])
            .map_err(|_| Error::MissingKey(key))
    }

    /// Piecewise-linear interpolation, clamped at both ends.
    pub fn interpolate(&self, x: f64) -> f64 {
        let n = self.keys.len();
        if x.is_nan() || x <= self.keys[0] {
            return self.weights[0];
        }
        if x >= self.keys[n - 1] {
            return self.weights[n - 1];
        }
        // first key strictly greater than x
        let hi = self.keys.partition_point(|&k| k <= x);
        let lo = hi - 1;
        let t = (x - self.keys[lo]) / (self.keys[hi] - self.keys[lo]);
        self.weights[lo] + t * (self.weights[hi] - self.weights[lo])
    }

    /// Monotone least-squares fit (pool-adjacent-violators) renormalized at the
    /// anchor. QP tables become non-increasing in QP, rate tables
    /// non-decreasing in λR.
    pub fn monotone_smoothed(&self) -> Result<Self> {
        let decreasing = self.scheme != TableScheme::LambdaR;
        let input: Vec<f64> = if decreasing {
            self.weights.iter().map(|w| -w).collect()
        } else {
            self.weights.clone()
        };
        let mut fitted = pava_non_decreasing(&input);
        if decreasing {
            fitted.iter_mut().for_each(|w| *w = -*w);
        }
        let idx = self.keys.iter().position(|&k| k == self.anchor_key).expect("anchor is a key");
        let scale = fitted[idx];
        if scale <= 0.0 {
            return Err(Error::InvalidTable("smoothed weight at anchor is zero".into()));
        }
        fitted.iter_mut().for_each(|w| *w /= scale);
        fitted[idx] = 1.0;
        WeightTable::new(self.scheme, self.keys.clone(), fitted, self.anchor_key)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("#scheme={} anchor_key={}\n", self.scheme, self.anchor_key);
        for (k, w) in self.keys.iter().zip(&self.weights) {
            out.push_str(&format!("{k},{w}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::schema(1, "empty weight table"))?;
        let header = header
            .strip_prefix('#')
            .ok_or_else(|| Error::schema(1, "header must start with `#`"))?;
        let (mut scheme, mut anchor) = (None, None);
        for field in header.split_whitespace() {
            match field.split_once('=') {
                Some(("scheme", v)) => scheme = Some(v.parse::<TableScheme>()?),
                Some(("anchor_key", v)) => {
                    anchor = Some(
                        v.parse::<f64>()
                            .map_err(|_| Error::schema(1, format!("bad anchor_key `{v}`")))?,
                    )
                }
                _ => return Err(Error::schema(1, format!("unexpected header field `{field}`"))),
            }
        }
        let scheme = scheme.ok_or_else(|| Error::schema(1, "missing scheme"))?;
        let anchor = anchor.ok_or_else(|| Error::schema(1, "missing anchor_key"))?;
        let (mut keys, mut weights) = (Vec::new(), Vec::new());
        for (i, line) in lines {
            let (k, w) = line
                .split_once(',')
                .ok_or_else(|| Error::schema(i + 1, "expected `key,weight`"))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::schema(i + 1, format!("bad number `{s}`")))
            };
            keys.push(parse(k)?);
            weights.push(parse(w)?);
        }
        WeightTable::new(scheme, keys, weights, anchor)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        WeightTable::parse(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Pool-adjacent-violators: least-squares non-decreasing fit.
fn pava_non_decreasing(values: &[f64]) -> Vec<f64> {
    // (mean, count) blocks
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (m2, c2) = blocks[blocks.len() - 1];
            let (m1, c1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let c = c1 + c2;
            *blocks.last_mut().unwrap() = ((m1 * c1 as f64 + m2 * c2 as f64) / c as f64, c);
        }
    }
    blocks.into_iter().flat_map(|(m, c)| std::iter::repeat_n(m, c)).collect()
}

/// Non-negative per-pixel weights, constant over each macroblock footprint.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    values: Plane<f64>,
}

impl Mask {
    /// Paints `weight(block)` over each macroblock footprint. Pixels outside
    /// the full macroblock grid (partial edge blocks) get 0.
    pub fn from_blocks(frame: &FrameBlockMap, width: usize, height: usize, mut weight: impl FnMut(&BlockRecord) -> f64) -> Self {
        let per_block: Vec<f64> = frame.blocks().iter().map(&mut weight).collect();
        let cols = frame.mb_cols;
        let (gw, gh) = (cols * MB_SIZE, frame.mb_rows * MB_SIZE);
        let values = Plane::from_fn(width, height, |x, y| {
            if x < gw && y < gh {
                per_block[(y / MB_SIZE) * cols + x / MB_SIZE]
            } else {
                0.0
            }
        });
        Mask { values }
    }

    pub fn ones(width: usize, height: usize) -> Self {
        Mask {
            values: Plane::filled(width, height, 1.0),
        }
    }

    pub fn from_plane(values: Plane<f64>) -> Result<Self> {
        if let Some(v) = values.as_slice().iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::range("mask value", v));
        }
        Ok(Mask { values })
    }

    pub fn values(&self) -> &Plane<f64> {
        &self.values
    }

    pub fn into_plane(self) -> Plane<f64> {
        self.values
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dims()
    }
}

pub fn mask_skip_eliminate(frame: &FrameBlockMap, width: usize, height: usize) -> Mask {
    Mask::from_blocks(frame, width, height, |b| if b.is_skip() { 0.0 } else { 1.0 })
}

/// QP-indexed mask. Skip blocks use their inherited QP unless `exclude_skip`.
pub fn mask_qp(frame: &FrameBlockMap, width: usize, height: usize, table: &WeightTable, exclude_skip: bool) -> Result<Mask> {
    if !table.scheme().is_qp() {
        return Err(Error::Config(format!("QP mask needs a QP table, got {}", table.scheme())));
    }
    let per_block = frame
        .blocks()
        .iter()
        .map(|b| {
            if exclude_skip && b.is_skip() {
                Ok(0.0)
            } else {
                table.weight_at_qp(b.qp)
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut i = 0;
    Ok(Mask::from_blocks(frame, width, height, |_| {
        i += 1;
        per_block[i - 1]
    }))
}

/// λR-indexed mask; skip blocks get 0.
pub fn mask_lambda_rate(frame: &FrameBlockMap, width: usize, height: usize, table: &WeightTable) -> Mask {
    Mask::from_blocks(frame, width, height, |b| {
        if b.is_skip() {
            0.0
        } else {
            table.interpolate(lambda_rate(b))
        }
    })
}

/// The estimation schemes selectable for a fingerprint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightingScheme {
    /// All-ones masks.
    Conventional,
    SkipEliminate,
    QpAll,
    QpNoSkip,
    LambdaR,
}

impl WeightingScheme {
    pub const ALL: [WeightingScheme; 5] = [
        WeightingScheme::Conventional,
        WeightingScheme::SkipEliminate,
        WeightingScheme::QpAll,
        WeightingScheme::QpNoSkip,
        WeightingScheme::LambdaR,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WeightingScheme::Conventional => "conventional",
            WeightingScheme::SkipEliminate => "skip_eliminate",
            WeightingScheme::QpAll => "qp_all",
            WeightingScheme::QpNoSkip => "qp_noskip",
            WeightingScheme::LambdaR => "lambda_r",
        }
    }

    pub fn needs_table(self) -> bool {
        matches!(self, WeightingScheme::QpAll | WeightingScheme::QpNoSkip | WeightingScheme::LambdaR)
    }
}

impl fmt::Display for WeightingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WeightingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WeightingScheme::ALL
            .into_iter()
            .find(|w| w.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme `{s}`")))
    }
}

/// A scheme plus the table it needs.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig {
    pub scheme: WeightingScheme,
    pub table: Option<WeightTable>,
}

impl SchemeConfig {
    pub fn new(scheme: WeightingScheme, table: Option<WeightTable>) -> Result<Self> {
        let cfg = SchemeConfig { scheme, table };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn conventional() -> Self {
        SchemeConfig {
            scheme: WeightingScheme::Conventional,
            table: None,
        }
    }

    pub fn skip_eliminate() -> Self {
        SchemeConfig {
            scheme: WeightingScheme::SkipEliminate,
            table: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.scheme, &self.table) {
            (WeightingScheme::QpAll | WeightingScheme::QpNoSkip, Some(t)) if t.scheme().is_qp() => Ok(()),
            (WeightingScheme::LambdaR, Some(t)) if t.scheme() == TableScheme::LambdaR => Ok(()),
            (WeightingScheme::Conventional | WeightingScheme::SkipEliminate, _) => Ok(()),
            (s, Some(t)) => Err(Error::Config(format!("scheme {s} cannot use a {} table", t.scheme()))),
            (s, None) => Err(Error::Config(format!("scheme {s} requires a weight table"))),
        }
    }

    pub fn build_mask(&self, frame: &FrameBlockMap, width: usize, height: usize) -> Result<Mask> {
        self.validate()?;
        let table = || self.table.as_ref().expect("validated");
        match self.scheme {
            WeightingScheme::Conventional => Ok(Mask::from_blocks(frame, width, height, |_| 1.0)),
            WeightingScheme::SkipEliminate => Ok(mask_skip_eliminate(frame, width, height)),
            WeightingScheme::QpAll => mask_qp(frame, width, height, table(), false),
            WeightingScheme::QpNoSkip => mask_qp(frame, width, height, table(), true),
            WeightingScheme::LambdaR => Ok(mask_lambda_rate(frame, width, height, table())),
        }
    }
}
