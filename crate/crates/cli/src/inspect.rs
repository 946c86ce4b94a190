use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use blockprnu::bitstream::{cross_check, parse_slices, parse_trace, split_nal_units, SliceHeaderInfo, SliceType, TraceFile};
use blockprnu::trace::{bits_per_pixel, lambda_rate, skipped_block_rate};

use crate::util::{emit, read_bytes, read_text, CliError, CliResult};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Block trace (`#w= h= mb=16 frames=` header, `frame_idx,mb_x,mb_y,type,qp,bits` rows).
    trace: Option<PathBuf>,

    /// H.264 Annex-B stream; its slice headers are listed and, with a trace,
    /// cross-checked against it.
    #[arg(long)]
    stream: Option<PathBuf>,

    /// Output file; stdout by default.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

pub fn load(path: &Path) -> CliResult<TraceFile> {
    parse_trace(&read_text(path)?).map_err(CliError::at(path.display()))
}

fn trace_summary(trace: &TraceFile, out: &mut String) -> CliResult {
    let h = &trace.header;
    let frames = trace.frames();
    let sbr = skipped_block_rate(&frames)?;
    let bpp = bits_per_pixel(trace)?;
    let mut types: BTreeMap<&str, usize> = BTreeMap::new();
    let mut qps: BTreeMap<u8, usize> = BTreeMap::new();
    for r in &trace.records {
        *types.entry(r.block_type.as_str()).or_default() += 1;
        *qps.entry(r.qp).or_default() += 1;
    }
    let lr: Vec<f64> = trace.records.iter().filter(|r| !r.is_skip()).map(lambda_rate).collect();
    writeln!(out, "size {}x{}", h.width, h.height).unwrap();
    writeln!(out, "frames {}", h.frame_count).unwrap();
    writeln!(out, "blocks {}", trace.records.len()).unwrap();
    for (t, n) in &types {
        writeln!(out, "type {t} {n}").unwrap();
    }
    writeln!(out, "sbr {sbr:.6}").unwrap();
    writeln!(out, "bpp {bpp:.6}").unwrap();
    if let (Some((lo, _)), Some((hi, _))) = (qps.first_key_value(), qps.last_key_value()) {
        writeln!(out, "qp {lo}..{hi}").unwrap();
    }
    if !lr.is_empty() {
        let mean = lr.iter().sum::<f64>() / lr.len() as f64;
        writeln!(out, "lambda_rate_mean_coded {mean:.6}").unwrap();
    }
    Ok(())
}

fn slice_type(t: SliceType) -> &'static str {
    match t {
        SliceType::I => "I",
        SliceType::P => "P",
        SliceType::B => "B",
    }
}

fn stream_summary(slices: &[SliceHeaderInfo], out: &mut String) {
    writeln!(out, "slices {}", slices.len()).unwrap();
    writeln!(out, "frame,type,first_mb,base_qp,deblocking_disabled,idr").unwrap();
    for s in slices {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            s.frame_index,
            slice_type(s.slice_type),
            s.first_mb_in_slice,
            s.base_qp,
            s.deblocking_disabled,
            s.idr
        )
        .unwrap();
    }
}

pub fn run(args: Args) -> CliResult {
    if args.trace.is_none() && args.stream.is_none() {
        return Err(CliError::usage("inspect needs a trace, a --stream, or both"));
    }
    let mut out = String::new();
    let trace = args.trace.as_deref().map(load).transpose()?;
    if let Some(t) = &trace {
        trace_summary(t, &mut out)?;
    }
    if let Some(path) = &args.stream {
        let at = CliError::at(path.display());
        let slices = split_nal_units(&read_bytes(path)?).and_then(|u| parse_slices(&u)).map_err(at)?;
        stream_summary(&slices, &mut out);
        if let Some(t) = &trace {
            let warnings = cross_check(t, &slices).map_err(CliError::at("cross-check"))?;
            writeln!(out, "qp_warnings {}", warnings.len()).unwrap();
            for w in warnings {
                writeln!(out, "warning frame {} mb ({}, {}) qp {} vs slice {}", w.frame_idx, w.mb_x, w.mb_y, w.block_qp, w.slice_qp).unwrap();
            }
        }
    }
    emit(args.output.as_deref(), &out)
}
