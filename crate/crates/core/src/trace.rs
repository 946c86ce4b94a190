//! Block-level coding model: block records, the Lagrangian multiplier,
//! rate-distortion cost and per-frame statistics.

use std::fmt;
use std::str::FromStr;

use crate::bitstream::TraceFile;
use crate::error::{Error, Result};

/// Luma macroblock edge length in pixels.
pub const MB_SIZE: usize = 16;
pub const MAX_QP: u8 = 51;
/// Upper bound (exclusive) on the bits a skipped block may spend on signaling.
pub const SKIP_BITS_LIMIT: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockType {
    I,
    P,
    B,
    Skip,
}

impl BlockType {
    pub fn is_skip(self) -> bool {
        self == BlockType::Skip
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BlockType::I => "I",
            BlockType::P => "P",
            BlockType::B => "B",
            BlockType::Skip => "SKIP",
        }
    }
}

impl fmt::Display for BlockType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BlockType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "I" => Ok(BlockType::I),
            "P" => Ok(BlockType::P),
            "B" => Ok(BlockType::B),
            "SKIP" => Ok(BlockType::Skip),
            other => Err(format!("unknown block type {other:?}")),
        }
    }
}

/// Decode metadata of one 16x16 macroblock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockRecord {
    pub frame_idx: u32,
    pub mb_x: u32,
    pub mb_y: u32,
    pub block_type: BlockType,
    /// Quantization parameter. Skipped blocks carry the QP of their reference.
    pub qp: u8,
    /// Coded bits spent on the block (R).
    pub bits: u32,
}

impl BlockRecord {
    pub fn new(
        frame_idx: u32,
        mb_x: u32,
        mb_y: u32,
        block_type: BlockType,
        qp: u8,
        bits: u32,
    ) -> Result<Self> {
        let rec = BlockRecord {
            frame_idx,
            mb_x,
            mb_y,
            block_type,
            qp,
            bits,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.qp > MAX_QP {
            return Err(Error::range("qp", self.qp));
        }
        if self.block_type.is_skip() && self.bits >= SKIP_BITS_LIMIT {
            return Err(Error::range("skip block bits", self.bits));
        }
        Ok(())
    }

    pub fn is_skip(&self) -> bool {
        self.block_type.is_skip()
    }
}

/// Lagrangian multiplier of the H.264 mode decision, `0.852^((qp - 12) / 3)`.
pub fn lambda_of_qp(qp: u8) -> Result<f64> {
    if qp > MAX_QP {
        return Err(Error::range("qp", qp));
    }
    Ok(0.852f64.powf((qp as f64 - 12.0) / 3.0))
}

/// Decoder-observable rate cost `lambda * R` of a block.
pub fn lambda_rate(record: &BlockRecord) -> f64 {
    // qp is validated on construction and on trace load
    let lambda = 0.852f64.powf((record.qp.min(MAX_QP) as f64 - 12.0) / 3.0);
    lambda * record.bits as f64
}

/// Rate-distortion cost of a coded block. Distortion and total cost are only
/// known at the encoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdCost {
    pub lambda_value: f64,
    pub rate_bits: u32,
    pub lambda_rate: f64,
    pub distortion: Option<f64>,
    pub j_value: Option<f64>,
}

impl RdCost {
    /// Decoder-side cost: rate and multiplier only.
    pub fn from_rate(qp: u8, rate_bits: u32) -> Result<Self> {
        let lambda_value = lambda_of_qp(qp)?;
        Ok(RdCost {
            lambda_value,
            rate_bits,
            lambda_rate: lambda_value * rate_bits as f64,
            distortion: None,
            j_value: None,
        })
    }

    /// Encoder-side cost `J = D + lambda * R`.
    pub fn with_distortion(mut self, distortion: f64) -> Self {
        self.distortion = Some(distortion);
        self.j_value = Some(distortion + self.lambda_rate);
        self
    }
}

/// Dense grid of block records for one frame, row-major in macroblock units.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBlockMap {
    pub frame_idx: u32,
    pub mb_cols: usize,
    pub mb_rows: usize,
    blocks: Vec<BlockRecord>,
}

impl FrameBlockMap {
    /// Builds a map from records given in any order. Every grid cell must be
    /// covered exactly once.
    pub fn from_records(
        frame_idx: u32,
        mb_cols: usize,
        mb_rows: usize,
        records: impl IntoIterator<Item = BlockRecord>,
    ) -> Result<Self> {
        let mut slots: Vec<Option<BlockRecord>> = vec![None; mb_cols * mb_rows];
        for rec in records {
            rec.validate()?;
            if rec.frame_idx != frame_idx {
                return Err(Error::range("frame index", rec.frame_idx));
            }
            let (x, y) = (rec.mb_x as usize, rec.mb_y as usize);
            if x >= mb_cols || y >= mb_rows {
                return Err(Error::range("macroblock position", format!("({x}, {y})")));
            }
            let slot = &mut slots[y * mb_cols + x];
            if slot.is_some() {
                return Err(Error::range(
                    "duplicate block",
                    format!("(frame {frame_idx}, {x}, {y})"),
                ));
            }
            *slot = Some(rec);
        }
        let mut blocks = Vec::with_capacity(slots.len());
        for (i, slot) in slots.into_iter().enumerate() {
            match slot {
                Some(rec) => blocks.push(rec),
                None => {
                    return Err(Error::CoverageGap {
                        frame: frame_idx,
                        mb_x: (i % mb_cols) as u32,
                        mb_y: (i / mb_cols) as u32,
                    })
                }
            }
        }
        Ok(FrameBlockMap {
            frame_idx,
            mb_cols,
            mb_rows,
            blocks,
        })
    }

    #[inline]
    pub fn get(&self, mb_x: usize, mb_y: usize) -> &BlockRecord {
        &self.blocks[mb_y * self.mb_cols + mb_x]
    }

    pub fn blocks(&self) -> &[BlockRecord] {
        &self.blocks
    }

    pub fn skip_count(&self) -> usize {
        self.blocks.iter().filter(|b| b.is_skip()).count()
    }
}

/// Fraction of skipped blocks over all blocks of the given frames.
pub fn skipped_block_rate(frames: &[FrameBlockMap]) -> Result<f64> {
    let total: usize = frames.iter().map(|f| f.blocks.len()).sum();
    if total == 0 {
        return Err(Error::EmptyInput("no blocks"));
    }
    let skipped: usize = frames.iter().map(FrameBlockMap::skip_count).sum();
    Ok(skipped as f64 / total as f64)
}

/// Total coded bits divided by total pixel count.
pub fn bits_per_pixel(trace: &TraceFile) -> Result<f64> {
    let h = &trace.header;
    let pixels = h.width as u64 * h.height as u64 * h.frame_count as u64;
    if pixels == 0 {
        return Err(Error::EmptyInput("zero pixels"));
    }
    let bits: u64 = trace.records.iter().map(|r| r.bits as u64).sum();
    Ok(bits as f64 / pixels as f64)
}
