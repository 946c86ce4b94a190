//! The per-block metadata trace format.
//!
//! ```text
//! #w=<px> h=<px> mb=16 frames=<n>
//! frame_idx,mb_x,mb_y,type,qp,bits
//! ```
//!
//! Macroblock grid is `floor(w / 16) x floor(h / 16)`; pixels of partial
//! edge blocks are outside the analysis area.

use std::fmt::Write as _;
use std::path::Path;

use super::params::SliceHeaderInfo;
use crate::error::{Error, Result};
use crate::trace::{BlockRecord, BlockType, FrameBlockMap, MAX_QP, MB_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceHeader {
    pub width: u32,
    pub height: u32,
    pub mb_size: u32,
    pub frame_count: u32,
}

impl TraceHeader {
    pub fn new(width: u32, height: u32, frame_count: u32) -> Self {
        TraceHeader {
            width,
            height,
            mb_size: MB_SIZE as u32,
            frame_count,
        }
    }

    pub fn mb_cols(&self) -> usize {
        (self.width / self.mb_size) as usize
    }

    pub fn mb_rows(&self) -> usize {
        (self.height / self.mb_size) as usize
    }

    pub fn blocks_per_frame(&self) -> usize {
        self.mb_cols() * self.mb_rows()
    }

    fn parse(line: &str) -> Result<Self> {
        let body = line
            .strip_prefix('#')
            .ok_or_else(|| Error::schema(1, "header must start with '#'"))?;
        let mut fields = [None; 4];
        for tok in body.split_whitespace() {
            let (key, value) = tok
                .split_once('=')
                .ok_or_else(|| Error::schema(1, format!("header token {tok:?} is not key=value")))?;
            let slot = match key {
                "w" => 0,
                "h" => 1,
                "mb" => 2,
                "frames" => 3,
                other => return Err(Error::schema(1, format!("unknown header key {other:?}"))),
            };
            let v: u32 = value
                .parse()
                .map_err(|_| Error::schema(1, format!("header value {value:?} for {key}")))?;
            if fields[slot].replace(v).is_some() {
                return Err(Error::schema(1, format!("duplicate header key {key}")));
            }
        }
        let [Some(width), Some(height), Some(mb_size), Some(frame_count)] = fields else {
            return Err(Error::schema(1, "header needs w, h, mb and frames"));
        };
        if mb_size != MB_SIZE as u32 {
            return Err(Error::schema(1, format!("macroblock size {mb_size} (only 16 supported)")));
        }
        if width < mb_size || height < mb_size {
            return Err(Error::schema(1, "frame smaller than one macroblock"));
        }
        Ok(TraceHeader {
            width,
            height,
            mb_size,
            frame_count,
        })
    }
}

/// A validated trace: complete coverage, records in canonical
/// (frame, mb_y, mb_x) order.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub header: TraceHeader,
    pub records: Vec<BlockRecord>,
}

impl TraceFile {
    /// Validates records against the header and sorts them canonically.
    pub fn new(header: TraceHeader, records: Vec<BlockRecord>) -> Result<Self> {
        let (cols, rows) = (header.mb_cols(), header.mb_rows());
        let per_frame = cols * rows;
        let total = per_frame * header.frame_count as usize;
        let mut slots: Vec<Option<BlockRecord>> = vec![None; total];
        for rec in records {
            rec.validate()?;
            if rec.frame_idx >= header.frame_count {
                return Err(Error::range("frame index", rec.frame_idx));
            }
            if rec.mb_x as usize >= cols || rec.mb_y as usize >= rows {
                return Err(Error::range(
                    "macroblock position",
                    format!("({}, {})", rec.mb_x, rec.mb_y),
                ));
            }
            let i = rec.frame_idx as usize * per_frame + rec.mb_y as usize * cols + rec.mb_x as usize;
            if slots[i].replace(rec).is_some() {
                return Err(Error::range(
                    "duplicate block",
                    format!("(frame {}, {}, {})", rec.frame_idx, rec.mb_x, rec.mb_y),
                ));
            }
        }
        let mut sorted = Vec::with_capacity(total);
        for (i, slot) in slots.into_iter().enumerate() {
            match slot {
                Some(rec) => sorted.push(rec),
                None => {
                    let within = i % per_frame;
                    return Err(Error::CoverageGap {
                        frame: (i / per_frame) as u32,
                        mb_x: (within % cols) as u32,
                        mb_y: (within / cols) as u32,
                    });
                }
            }
        }
        Ok(TraceFile {
            header,
            records: sorted,
        })
    }

    /// Per-frame block maps in frame order.
    pub fn frames(&self) -> Vec<FrameBlockMap> {
        let per_frame = self.header.blocks_per_frame();
        if per_frame == 0 {
            return Vec::new();
        }
        self.records
            .chunks(per_frame)
            .enumerate()
            .map(|(f, chunk)| {
                FrameBlockMap::from_records(
                    f as u32,
                    self.header.mb_cols(),
                    self.header.mb_rows(),
                    chunk.iter().copied(),
                )
                .expect("validated on construction")
            })
            .collect()
    }
}

fn parse_record(line: &str, line_no: usize) -> Result<BlockRecord> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 6 {
        return Err(Error::schema(
            line_no,
            format!("expected 6 comma-separated fields, found {}", fields.len()),
        ));
    }
    let num = |i: usize, name: &str| -> Result<u32> {
        fields[i]
            .parse::<u32>()
            .map_err(|_| Error::schema(line_no, format!("{name} {:?} is not an integer", fields[i])))
    };
    let block_type: BlockType = fields[3]
        .parse()
        .map_err(|e: String| Error::schema(line_no, e))?;
    let qp = num(4, "qp")?;
    if qp > MAX_QP as u32 {
        return Err(Error::range("qp", qp));
    }
    Ok(BlockRecord {
        frame_idx: num(0, "frame_idx")?,
        mb_x: num(1, "mb_x")?,
        mb_y: num(2, "mb_y")?,
        block_type,
        qp: qp as u8,
        bits: num(5, "bits")?,
    })
}

/// Parses trace text.
pub fn parse_trace(text: &str) -> Result<TraceFile> {
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((_, l)) => break TraceHeader::parse(l.trim())?,
            None => return Err(Error::schema(1, "missing header")),
        }
    };
    let mut records = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        records.push(parse_record(line, i + 1)?);
    }
    TraceFile::new(header, records)
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<TraceFile> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_trace(&text)
}

/// Canonical text form: normalized header, records in (frame, mb_y, mb_x)
/// order, one trailing newline.
pub fn serialize_trace(trace: &TraceFile) -> String {
    let h = &trace.header;
    let mut out = String::with_capacity(32 + trace.records.len() * 20);
    let _ = writeln!(
        out,
        "#w={} h={} mb={} frames={}",
        h.width, h.height, h.mb_size, h.frame_count
    );
    for r in &trace.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.frame_idx, r.mb_x, r.mb_y, r.block_type, r.qp, r.bits
        );
    }
    out
}

pub fn write_trace(trace: &TraceFile, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, serialize_trace(trace))?;
    Ok(())
}

/// Non-fatal findings of the trace/bitstream cross-check.
#[derive(Debug, Clone, PartialEq)]
pub struct QpWarning {
    pub frame_idx: u32,
    pub mb_x: u32,
    pub mb_y: u32,
    pub block_qp: u8,
    pub slice_qp: u8,
}

/// Largest block QP deviation from its slice base QP that passes silently.
pub const QP_PLAUSIBILITY_SPAN: u8 = 26;

/// Cross-checks a trace against the slice headers of its stream. A picture
/// count mismatch is an error; block QPs further than
/// [`QP_PLAUSIBILITY_SPAN`] from the picture's first-slice base QP are
/// returned as warnings.
pub fn cross_check(trace: &TraceFile, slices: &[SliceHeaderInfo]) -> Result<Vec<QpWarning>> {
    let pictures = super::params::picture_count(slices);
    if pictures != trace.header.frame_count as usize {
        return Err(Error::FrameCountMismatch {
            expected: trace.header.frame_count as usize,
            found: pictures,
        });
    }
    let mut base = vec![None; pictures];
    for s in slices {
        base[s.frame_index as usize].get_or_insert(s.base_qp);
    }
    let mut warnings = Vec::new();
    for r in &trace.records {
        if let Some(slice_qp) = base[r.frame_idx as usize] {
            if r.qp.abs_diff(slice_qp) > QP_PLAUSIBILITY_SPAN {
                warnings.push(QpWarning {
                    frame_idx: r.frame_idx,
                    mb_x: r.mb_x,
                    mb_y: r.mb_y,
                    block_qp: r.qp,
                    slice_qp,
                });
            }
        }
    }
    Ok(warnings)
}
