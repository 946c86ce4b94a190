//! A small block codec: 8x8 DCT inside 16x16 macroblocks, uniform
//! quantization, a CODE/SKIP rate-distortion decision and a per-frame rate
//! controller. Not bit-compatible with any standard; it exists to produce
//! decoded frames and traces with known distortion, rate and cost.

use crate::bitstream::{TraceFile, TraceHeader};
use crate::error::{Error, Result};
use crate::noise::Picture;
use crate::par;
use crate::plane::Plane;
use crate::trace::{lambda_of_qp, BlockRecord, BlockType, RdCost, MAX_QP, MB_SIZE};
use crate::weighting::Mask;

use std::sync::OnceLock;

use super::dct;

pub const BLOCK_PIXELS: usize = MB_SIZE * MB_SIZE;
/// Signalling cost of a skipped block.
pub const SKIP_RATE_BITS: u32 = 1;
/// Per-block header cost of a coded block.
pub const HEADER_BITS: u32 = 8;
/// Largest per-frame QP change made by the rate controller.
pub const MAX_QP_STEP: i32 = 4;

pub type Block = [u8; BLOCK_PIXELS];

/// Step doubles every 6 QP; QP 4 has unit step.
pub fn quant_step(qp: u8) -> f64 {
    2f64.powf((f64::from(qp) - 4.0) / 6.0)
}

fn ue_len(v: u64) -> u32 {
    2 * (63 - (v + 1).leading_zeros()) + 1
}

fn se_len(level: i64) -> u32 {
    ue_len(if level > 0 { 2 * level as u64 - 1 } else { 2 * level.unsigned_abs() })
}

/// Zigzag scan order of an 8x8 block, low frequencies first.
fn zigzag() -> &'static [usize; 64] {
    static ORDER: OnceLock<[usize; 64]> = OnceLock::new();
    ORDER.get_or_init(|| {
        let mut idx: Vec<usize> = (0..64).collect();
        idx.sort_by_key(|&i| {
            let (r, c) = (i / 8, i % 8);
            let d = r + c;
            (d, if d % 2 == 0 { c } else { r })
        });
        std::array::from_fn(|i| idx[i])
    })
}

/// Run-level entropy estimate for one 8x8 block of quantized levels: a coded
/// flag, then ue(count - 1) and (ue(run), se(level)) per nonzero level in
/// zigzag order.
fn levels_bits(levels: &[i64; 64]) -> u32 {
    let mut bits = 1;
    let mut run = 0u64;
    let mut count = 0u64;
    for &i in zigzag() {
        if levels[i] == 0 {
            run += 1;
        } else {
            bits += ue_len(run) + se_len(levels[i]);
            run = 0;
            count += 1;
        }
    }
    if count > 0 {
        bits += ue_len(count - 1);
    }
    bits
}

fn sse(a: &Block, b: &Block) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Code,
    Skip,
}

/// Outcome of one block's mode decision. `distortion` is the sum of squared
/// errors over the block, so `cost.j_value == distortion + lambda * rate`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDecision {
    pub mode: Mode,
    pub recon: Block,
    pub distortion: f64,
    pub rate: u32,
    pub lambda: f64,
    pub j: f64,
}

impl BlockDecision {
    fn new(mode: Mode, recon: Block, distortion: f64, rate: u32, lambda: f64) -> Self {
        let j = distortion + lambda * f64::from(rate);
        BlockDecision {
            mode,
            recon,
            distortion,
            rate,
            lambda,
            j,
        }
    }

    pub fn mse(&self) -> f64 {
        self.distortion / BLOCK_PIXELS as f64
    }
}

/// Transform-codes `block - prediction` at `qp`.
pub fn code_block(block: &Block, prediction: &Block, qp: u8, lambda: f64) -> BlockDecision {
    let step = quant_step(qp);
    let mut recon = [0u8; BLOCK_PIXELS];
    let mut rate = HEADER_BITS;
    for sub in 0..4 {
        let (ox, oy) = ((sub % 2) * 8, (sub / 2) * 8);
        let idx = |i: usize| (oy + i / 8) * MB_SIZE + ox + i % 8;
        let residual: [f64; 64] = std::array::from_fn(|i| f64::from(block[idx(i)]) - f64::from(prediction[idx(i)]));
        let coefs = dct::forward(&residual);
        let levels: [i64; 64] = std::array::from_fn(|i| (coefs[i] / step).round() as i64);
        rate += levels_bits(&levels);
        let deq: [f64; 64] = std::array::from_fn(|i| levels[i] as f64 * step);
        let back = dct::inverse(&deq);
        for (i, v) in back.iter().enumerate() {
            recon[idx(i)] = (f64::from(prediction[idx(i)]) + v).round().clamp(0.0, 255.0) as u8;
        }
    }
    BlockDecision::new(Mode::Code, recon, sse(block, &recon), rate, lambda)
}

pub fn skip_block(block: &Block, reference: &Block, lambda: f64) -> BlockDecision {
    BlockDecision::new(Mode::Skip, *reference, sse(block, reference), SKIP_RATE_BITS, lambda)
}

/// Picks the cheaper of CODE and SKIP by `J = D + lambda * R`; ties go to
/// CODE.
pub fn encode_block(block: &Block, reference: &Block, qp: u8, lambda: f64) -> BlockDecision {
    let code = code_block(block, reference, qp, lambda);
    let skip = skip_block(block, reference, lambda);
    if skip.j < code.j {
        skip
    } else {
        code
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateMode {
    FixedQp(u8),
    /// Per-frame budget in bits; QP starts at `initial_qp` and moves by at
    /// most `MAX_QP_STEP` per frame, driven by cumulative spend over
    /// cumulative budget.
    TargetBits { bits_per_frame: f64, initial_qp: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodecConfig {
    pub rate: RateMode,
    /// Distance between intra frames; 1 makes every frame intra.
    pub gop: usize,
}

impl CodecConfig {
    pub fn fixed_qp(qp: u8, gop: usize) -> Self {
        CodecConfig {
            rate: RateMode::FixedQp(qp),
            gop,
        }
    }

    pub fn target_bits(bits_per_frame: f64, gop: usize) -> Self {
        CodecConfig {
            rate: RateMode::TargetBits {
                bits_per_frame,
                initial_qp: 30,
            },
            gop,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gop == 0 {
            return Err(Error::Config("gop must be at least 1".into()));
        }
        match self.rate {
            RateMode::FixedQp(qp) | RateMode::TargetBits { initial_qp: qp, .. } if qp > MAX_QP => {
                Err(Error::Config(format!("QP {qp} outside 0..=51")))
            }
            RateMode::TargetBits { bits_per_frame, .. } if !(bits_per_frame > 0.0 && bits_per_frame.is_finite()) => {
                Err(Error::Config(format!("target {bits_per_frame} bits/frame must be positive")))
            }
            _ => Ok(()),
        }
    }
}

/// Ground truth for one encoded block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTruth {
    pub mode: Mode,
    pub qp: u8,
    pub cost: RdCost,
    /// Mean squared error over the block's pixels.
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeResult {
    pub decoded: Vec<Picture>,
    pub trace: TraceFile,
    /// Row-major block truth, one vector per frame.
    pub truth: Vec<Vec<BlockTruth>>,
    pub frame_qps: Vec<u8>,
}

fn read_block(p: &Plane<u8>, bx: usize, by: usize) -> Block {
    let mut b = [0u8; BLOCK_PIXELS];
    for y in 0..MB_SIZE {
        let row = &p.row(by * MB_SIZE + y)[bx * MB_SIZE..(bx + 1) * MB_SIZE];
        b[y * MB_SIZE..(y + 1) * MB_SIZE].copy_from_slice(row);
    }
    b
}

fn write_block(p: &mut Plane<u8>, bx: usize, by: usize, b: &Block) {
    for y in 0..MB_SIZE {
        p.row_mut(by * MB_SIZE + y)[bx * MB_SIZE..(bx + 1) * MB_SIZE].copy_from_slice(&b[y * MB_SIZE..(y + 1) * MB_SIZE]);
    }
}

/// Flat predictor from the mean of the decoded left and top neighbours.
fn intra_prediction(decoded: &Plane<u8>, bx: usize, by: usize) -> Block {
    let mut sum = 0u64;
    let mut n = 0u64;
    if bx > 0 {
        sum += read_block(decoded, bx - 1, by).iter().map(|&v| u64::from(v)).sum::<u64>();
        n += BLOCK_PIXELS as u64;
    }
    if by > 0 {
        sum += read_block(decoded, bx, by - 1).iter().map(|&v| u64::from(v)).sum::<u64>();
        n += BLOCK_PIXELS as u64;
    }
    let mean = if n == 0 { 128 } else { ((sum + n / 2) / n) as u8 };
    [mean; BLOCK_PIXELS]
}

fn encode_intra(frame: &Plane<u8>, qp: u8, lambda: f64) -> (Plane<u8>, Vec<BlockDecision>) {
    let (w, h) = frame.dims();
    let (cols, rows) = (w / MB_SIZE, h / MB_SIZE);
    let mut decoded = Plane::filled(w, h, 0u8);
    let mut out: Vec<Option<BlockDecision>> = vec![None; cols * rows];
    // anti-diagonal wavefront: a block needs only its left and top neighbours
    for d in 0..cols + rows - 1 {
        let cells: Vec<(usize, usize)> = (0..=d).map(|bx| (bx, d - bx)).filter(|&(bx, by)| bx < cols && by < rows).collect();
        let decoded_ref = &decoded;
        let decisions = par::map(&cells, |&(bx, by)| {
            let pred = intra_prediction(decoded_ref, bx, by);
            code_block(&read_block(frame, bx, by), &pred, qp, lambda)
        });
        for (&(bx, by), dec) in cells.iter().zip(decisions) {
            write_block(&mut decoded, bx, by, &dec.recon);
            out[by * cols + bx] = Some(dec);
        }
    }
    (decoded, out.into_iter().map(|d| d.expect("every block visited")).collect())
}

fn encode_inter(frame: &Plane<u8>, reference: &Plane<u8>, qp: u8, lambda: f64) -> (Plane<u8>, Vec<BlockDecision>) {
    let (w, h) = frame.dims();
    let cols = w / MB_SIZE;
    let decisions = par::map_range(cols * (h / MB_SIZE), |i| {
        let (bx, by) = (i % cols, i / cols);
        encode_block(&read_block(frame, bx, by), &read_block(reference, bx, by), qp, lambda)
    });
    let mut decoded = Plane::filled(w, h, 0u8);
    for (i, d) in decisions.iter().enumerate() {
        write_block(&mut decoded, i % cols, i / cols, &d.recon);
    }
    (decoded, decisions)
}

/// Encodes a sequence. Frame 0 and every `gop`-th frame are intra coded;
/// the rest predict each block from the same position in the previous
/// decoded frame, choosing CODE or SKIP by rate-distortion cost.
pub fn encode_sequence(frames: &[Picture], config: &CodecConfig) -> Result<EncodeResult> {
    config.validate()?;
    let first = frames.first().ok_or(Error::EmptyInput("no frames to encode"))?;
    let (w, h) = first.dims();
    if w == 0 || h == 0 || w % MB_SIZE != 0 || h % MB_SIZE != 0 {
        return Err(Error::Config(format!("frame size {w}x{h} is not a positive multiple of {MB_SIZE}")));
    }
    let cols = w / MB_SIZE;
    let mut qp = match config.rate {
        RateMode::FixedQp(q) => q,
        RateMode::TargetBits { initial_qp, .. } => initial_qp,
    };
    let mut decoded: Vec<Picture> = Vec::with_capacity(frames.len());
    let mut records = Vec::with_capacity(frames.len() * cols * (h / MB_SIZE));
    let mut truth = Vec::with_capacity(frames.len());
    let mut frame_qps = Vec::with_capacity(frames.len());
    let mut spent = 0u64;
    for (f, picture) in frames.iter().enumerate() {
        picture.luma.ensure_dims((w, h))?;
        let lambda = lambda_of_qp(qp)?;
        let intra = f % config.gop == 0;
        let (plane, decisions) = if intra {
            encode_intra(&picture.luma, qp, lambda)
        } else {
            encode_inter(&picture.luma, &decoded[f - 1].luma, qp, lambda)
        };
        let mut frame_bits = 0u64;
        let mut frame_truth = Vec::with_capacity(decisions.len());
        for (i, d) in decisions.iter().enumerate() {
            let block_type = match (d.mode, intra) {
                (Mode::Skip, _) => BlockType::Skip,
                (Mode::Code, true) => BlockType::I,
                (Mode::Code, false) => BlockType::P,
            };
            let cost = RdCost::from_rate(qp, d.rate)?.with_distortion(d.distortion);
            assert_eq!(cost.j_value, Some(d.distortion + cost.lambda_rate), "J = D + lambda R");
            assert_eq!(d.j, cost.j_value.unwrap(), "J = D + lambda R");
            frame_bits += u64::from(d.rate);
            records.push(BlockRecord::new(f as u32, (i % cols) as u32, (i / cols) as u32, block_type, qp, d.rate)?);
            frame_truth.push(BlockTruth {
                mode: d.mode,
                qp,
                cost,
                mse: d.mse(),
            });
        }
        decoded.push(Picture::new(plane, picture.frame_idx));
        truth.push(frame_truth);
        frame_qps.push(qp);
        spent += frame_bits;
        if let RateMode::TargetBits { bits_per_frame, .. } = config.rate {
            // integral control on the running budget: overspending (an
            // expensive intra frame, say) keeps QP up until it is repaid
            let budget = bits_per_frame * (f + 1) as f64;
            let delta = (6.0 * (spent as f64 / budget).log2()).round() as i32;
            qp = (i32::from(qp) + delta.clamp(-MAX_QP_STEP, MAX_QP_STEP)).clamp(0, i32::from(MAX_QP)) as u8;
        }
    }
    let header = TraceHeader::new(w as u32, h as u32, frames.len() as u32);
    let trace = TraceFile::new(header, records)?;
    Ok(EncodeResult {
        decoded,
        trace,
        truth,
        frame_qps,
    })
}

/// Oracle mask from true block distortion: weight `1 / (1 + mse)`.
/// Only a simulator can build this; decoders never see distortion.
pub fn oracle_weight_d(truth: &[BlockTruth], width: usize, height: usize) -> Result<Mask> {
    let cols = width / MB_SIZE;
    if truth.len() != cols * (height / MB_SIZE) {
        return Err(Error::DimensionMismatch {
            expected: (cols, height / MB_SIZE),
            found: (truth.len(), 1),
        });
    }
    let (gw, gh) = (cols * MB_SIZE, (height / MB_SIZE) * MB_SIZE);
    Mask::from_plane(Plane::from_fn(width, height, |x, y| {
        if x < gw && y < gh {
            1.0 / (1.0 + truth[(y / MB_SIZE) * cols + x / MB_SIZE].mse)
        } else {
            0.0
        }
    }))
}
