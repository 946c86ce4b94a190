use std::path::PathBuf;

use blockprnu::matching::{batch_match, format_reports, PceConfig, SearchWindow, DEFAULT_EXCLUSION_HALF_WIDTH, DEFAULT_THRESHOLD};
use blockprnu::prnu::Fingerprint;

use crate::util::{emit, read_bytes, CliError, CliResult};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Test fingerprints.
    #[arg(long, required = true, num_args = 1..)]
    test: Vec<PathBuf>,

    /// Reference fingerprints.
    #[arg(long, required = true, num_args = 1..)]
    reference: Vec<PathBuf>,

    /// Decision threshold on PCE.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,

    /// Side of the square excluded around the peak; odd.
    #[arg(long, default_value_t = 2 * DEFAULT_EXCLUSION_HALF_WIDTH + 1)]
    exclusion: usize,

    /// Take the peak at zero shift instead of searching every cyclic shift.
    #[arg(long)]
    zero_shift: bool,

    /// Output file; stdout by default.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn load(path: &PathBuf) -> CliResult<Fingerprint> {
    Fingerprint::from_bytes(&read_bytes(path)?).map_err(CliError::at(path.display()))
}

pub fn run(args: Args) -> CliResult {
    if args.exclusion % 2 == 0 {
        return Err(CliError::usage(format!("--exclusion {} must be odd", args.exclusion)));
    }
    if !(args.threshold.is_finite()) {
        return Err(CliError::usage("--threshold must be finite"));
    }
    let config = PceConfig {
        exclusion_half_width: args.exclusion / 2,
        search: if args.zero_shift { SearchWindow::ZeroShift } else { SearchWindow::FullPlane },
        threshold: args.threshold,
    };
    let tests = args.test.iter().map(load).collect::<CliResult<Vec<_>>>()?;
    let refs = args.reference.iter().map(load).collect::<CliResult<Vec<_>>>()?;
    let matrix = batch_match(&tests, &refs, &config)?;
    let mut out = String::from("test,reference,pce,dx,dy,decision\n");
    out.push_str(&format_reports(&tests, &refs, &matrix));
    emit(args.output.as_deref(), &out)?;
    // a batch in which nothing could be scored has no answer
    let cells: Vec<_> = matrix.into_iter().flatten().collect();
    match cells.iter().find_map(|c| c.as_ref().err()) {
        Some(e) if cells.iter().all(Result::is_err) => Err(CliError::classed(e.class(), format!("every pair failed: {e}"))),
        _ => Ok(()),
    }
}
