use std::path::PathBuf;

use blockprnu::bitstream::YuvReader;
use blockprnu::prnu::{estimate_fingerprint, EstimateConfig};
use blockprnu::weighting::{SchemeConfig, WeightTable, WeightingScheme};
use serde::Serialize;

use crate::util::{read_bytes, read_text, sha256_hex, write_file, CliError, CliResult};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Decoded frames, planar 8-bit 4:2:0; size comes from the trace header.
    #[arg(long)]
    video: PathBuf,

    /// Block trace of the same frames.
    #[arg(long)]
    trace: PathBuf,

    /// conventional, skip_eliminate, qp_all, qp_noskip or lambda_r.
    #[arg(long, default_value = "conventional")]
    scheme: String,

    /// Weight table; required by qp_all, qp_noskip and lambda_r.
    #[arg(long)]
    table: Option<PathBuf>,

    /// Fingerprint file to write; run metadata goes to `<output>.json`.
    #[arg(short, long)]
    output: PathBuf,

    /// Source id stored in the fingerprint; defaults to the video file stem.
    #[arg(long)]
    id: Option<String>,

    /// Frames denoised together before being folded in.
    #[arg(long, default_value_t = 16)]
    batch: usize,
}

#[derive(Debug, Serialize)]
struct Sidecar<'a> {
    source_id: &'a str,
    scheme: &'a str,
    width: usize,
    height: usize,
    frames: usize,
    config_hash: String,
    video_sha256: String,
    trace_sha256: String,
    table_sha256: Option<String>,
}

pub fn run(args: Args) -> CliResult {
    let scheme: WeightingScheme = args.scheme.parse()?;
    let table_text = args.table.as_deref().map(read_text).transpose()?;
    let table = match (&table_text, &args.table) {
        (Some(t), Some(p)) => Some(WeightTable::parse(t).map_err(CliError::at(p.display()))?),
        _ => None,
    };
    // settle the scheme before touching the video
    let scheme_cfg = SchemeConfig::new(scheme, table)?;
    if !scheme.needs_table() && args.table.is_some() {
        log::warn!("scheme {scheme} ignores --table");
    }
    let config = EstimateConfig {
        batch: args.batch.max(1),
        ..EstimateConfig::default()
    };

    let trace_text = read_text(&args.trace)?;
    let trace = blockprnu::bitstream::parse_trace(&trace_text).map_err(CliError::at(args.trace.display()))?;
    let blocks = trace.frames();
    let (w, h) = (trace.header.width as usize, trace.header.height as usize);
    let id = args.id.clone().unwrap_or_else(|| {
        args.video.file_stem().map_or_else(|| "video".into(), |s| s.to_string_lossy().into_owned())
    });
    let reader = YuvReader::open(&args.video, w, h).map_err(CliError::at(args.video.display()))?;
    let fp = estimate_fingerprint(reader, &blocks, (w, h), &scheme_cfg, &config, &id).map_err(CliError::at(args.video.display()))?;
    write_file(&args.output, &fp.to_bytes())?;

    let config_text = format!("scheme={scheme}\ntable={}\nestimate={:?}\n", table_text.as_deref().unwrap_or(""), EstimateConfig { batch: 0, ..config });
    let sidecar = Sidecar {
        source_id: &id,
        scheme: scheme.as_str(),
        width: w,
        height: h,
        frames: blocks.len(),
        config_hash: sha256_hex(config_text.as_bytes()),
        video_sha256: sha256_hex(&read_bytes(&args.video)?),
        trace_sha256: sha256_hex(trace_text.as_bytes()),
        table_sha256: table_text.as_deref().map(|t| sha256_hex(t.as_bytes())),
    };
    let mut json = serde_json::to_string_pretty(&sidecar).expect("plain struct serializes");
    json.push('\n');
    let mut side = args.output.clone().into_os_string();
    side.push(".json");
    write_file(&PathBuf::from(side), json.as_bytes())
}
