use std::path::{Path, PathBuf};

use blockprnu::calibration::{calibrate_lambda_rate, calibrate_qp, format_report, LambdaRateObservation, QpObservation, DEFAULT_BUCKETS};
use blockprnu::weighting::{TableScheme, DEFAULT_ANCHOR_LAMBDA_RATE, DEFAULT_ANCHOR_QP};

use crate::util::{emit, read_text, write_file, CliError, CliResult};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// CSV with header `camera,qp,pce` (QP schemes) or `camera,lambda_rate,pce`.
    #[arg(long)]
    observations: PathBuf,

    /// qp_all, qp_noskip or lambda_r.
    #[arg(long)]
    scheme: String,

    /// Anchor condition whose weight is 1; QP 15 or λR 60 by default.
    #[arg(long)]
    anchor: Option<f64>,

    /// Equal-population λR buckets.
    #[arg(long, default_value_t = DEFAULT_BUCKETS)]
    buckets: usize,

    /// Replace the raw weights by their monotone least-squares fit.
    #[arg(long)]
    monotone: bool,

    /// Weight table to write.
    #[arg(short, long)]
    output: PathBuf,

    /// Audit report (raw and normalized PCE per condition); stdout by default.
    #[arg(long)]
    report: Option<PathBuf>,
}

struct Row {
    camera: String,
    key: f64,
    pce: f64,
}

fn parse_observations(path: &Path, key_column: &str) -> CliResult<Vec<Row>> {
    let text = read_text(path)?;
    let bad = |line: usize, m: String| CliError::input(format!("{}:{line}: {m}", path.display()));
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
    let want = format!("camera,{key_column},pce");
    if header.replace(' ', "") != want {
        return Err(bad(1, format!("header must be `{want}`, found `{header}`")));
    }
    lines
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 3 {
                return Err(bad(i + 1, format!("expected 3 fields, found {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 1, format!("bad number `{s}`")));
            Ok(Row {
                camera: f[0].to_string(),
                key: num(f[1])?,
                pce: num(f[2])?,
            })
        })
        .collect()
}

pub fn run(args: Args) -> CliResult {
    let scheme = match args.scheme.parse::<TableScheme>() {
        Ok(s) if s != TableScheme::SkipEliminate => s,
        _ => return Err(CliError::usage(format!("--scheme must be qp_all, qp_noskip or lambda_r, not `{}`", args.scheme))),
    };
    let cal = if scheme.is_qp() {
        let anchor = args.anchor.unwrap_or(f64::from(DEFAULT_ANCHOR_QP));
        if !(anchor.fract() == 0.0 && (0.0..=51.0).contains(&anchor)) {
            return Err(CliError::usage(format!("QP anchor {anchor} is not an integer in 0..=51")));
        }
        let obs = parse_observations(&args.observations, "qp")?
            .into_iter()
            .map(|r| {
                if r.key.fract() != 0.0 || !(0.0..=51.0).contains(&r.key) {
                    return Err(CliError::input(format!("QP {} is not an integer in 0..=51", r.key)));
                }
                Ok(QpObservation {
                    camera_id: r.camera,
                    qp: r.key as u8,
                    pce: r.pce,
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        calibrate_qp(&obs, scheme == TableScheme::QpAll, anchor as u8)?
    } else {
        let obs: Vec<_> = parse_observations(&args.observations, "lambda_rate")?
            .into_iter()
            .map(|r| LambdaRateObservation {
                camera_id: r.camera,
                lambda_rate: r.key,
                pce: r.pce,
            })
            .collect();
        calibrate_lambda_rate(&obs, args.buckets, args.anchor.unwrap_or(DEFAULT_ANCHOR_LAMBDA_RATE))?
    };
    let table = if args.monotone { cal.table.monotone_smoothed()? } else { cal.table.clone() };
    write_file(&args.output, table.to_text().as_bytes())?;
    emit(args.report.as_deref(), &format_report(&cal))
}
