use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use blockprnu::evaluation::cohort::{calibrate_cohort, run_cohort, CohortConfig};
use blockprnu::evaluation::{format_sbr, format_summary, roc, sbr_summary, threshold_table, ExperimentGrid, BPP_EDGES};
use blockprnu::matching::DEFAULT_THRESHOLD;

use crate::inspect;
use crate::util::{create_dir, emit, read_text, write_file, CliError, CliResult};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Grid file, or a directory whose `*.grid` files are merged in name order.
    #[arg(required_unless_present = "cohort")]
    grid: Option<PathBuf>,

    /// Run the simulated cohort study instead of reading a grid.
    #[arg(long, conflicts_with = "grid")]
    cohort: bool,

    /// Cohort cameras (each video is also matched against the next camera).
    #[arg(long, default_value_t = 20)]
    cameras: usize,

    /// Videos per cohort camera.
    #[arg(long, default_value_t = 2)]
    videos_per_camera: usize,

    /// Held-out cameras used to calibrate the weight tables.
    #[arg(long, default_value_t = 4)]
    calibration_cameras: usize,

    /// Target bits per frame, comma separated; one encode per value.
    #[arg(long, value_delimiter = ',', default_values_t = CohortConfig::default().bitrates)]
    bitrates: Vec<f64>,

    /// Cohort base seed.
    #[arg(long, default_value_t = CohortConfig::default().seed)]
    seed: u64,

    /// Write the cohort grid here.
    #[arg(long, requires = "cohort")]
    grid_out: Option<PathBuf>,

    /// Write the calibrated cohort tables into this directory.
    #[arg(long, requires = "cohort")]
    tables_out: Option<PathBuf>,

    /// Bits-per-pixel group edges, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = BPP_EDGES.to_vec())]
    edges: Vec<f64>,

    /// Count threshold; the grid's own threshold by default.
    #[arg(long)]
    threshold: Option<f64>,

    /// Write one ROC curve per scheme into this directory.
    #[arg(long)]
    roc_out: Option<PathBuf>,

    /// LABEL=PATH; SBR distribution of a trace file or a directory of `*.txt` traces.
    #[arg(long)]
    sbr: Vec<String>,

    /// Output file; stdout by default.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn files_with_extension(dir: &Path, ext: &str) -> CliResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
    let mut v: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == ext))
        .collect();
    v.sort();
    if v.is_empty() {
        return Err(CliError::input(format!("{}: no *.{ext} files", dir.display())));
    }
    Ok(v)
}

fn load_grid(path: &Path) -> CliResult<ExperimentGrid> {
    let files = if path.is_dir() { files_with_extension(path, "grid")? } else { vec![path.to_path_buf()] };
    let mut merged: Option<ExperimentGrid> = None;
    for f in files {
        let g = ExperimentGrid::parse(&read_text(&f)?).map_err(CliError::at(f.display()))?;
        match &mut merged {
            None => merged = Some(g),
            Some(m) => {
                if m.schemes != g.schemes || m.threshold != g.threshold {
                    return Err(CliError::input(format!("{}: schemes or threshold differ from the first grid", f.display())));
                }
                m.rows.extend(g.rows);
            }
        }
    }
    Ok(merged.expect("at least one file"))
}

fn cohort(args: &Args) -> CliResult<ExperimentGrid> {
    let cfg = CohortConfig {
        cameras: args.cameras,
        videos_per_camera: args.videos_per_camera,
        calibration_cameras: args.calibration_cameras,
        bitrates: args.bitrates.clone(),
        seed: args.seed,
        ..CohortConfig::default()
    };
    if cfg.cameras < 2 || cfg.videos_per_camera == 0 || cfg.bitrates.is_empty() {
        return Err(CliError::usage("cohort needs at least 2 cameras, 1 video and 1 bitrate"));
    }
    let cal = calibrate_cohort(&cfg)?;
    if let Some(dir) = &args.tables_out {
        create_dir(dir)?;
        for (name, t) in [("qp_all", &cal.tables.qp_all), ("qp_noskip", &cal.tables.qp_noskip), ("lambda_r", &cal.tables.lambda_r)] {
            write_file(&dir.join(format!("{name}.table")), t.to_text().as_bytes())?;
        }
    }
    let grid = run_cohort(&cfg, &cal.tables)?;
    if let Some(p) = &args.grid_out {
        write_file(p, grid.to_text().as_bytes())?;
    }
    Ok(grid)
}

fn sbr_section(specs: &[String], out: &mut String) -> CliResult {
    let mut groups = Vec::new();
    for spec in specs {
        let (label, path) = spec
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--sbr `{spec}` is not LABEL=PATH")))?;
        let path = Path::new(path);
        let files = if path.is_dir() { files_with_extension(path, "txt")? } else { vec![path.to_path_buf()] };
        let traces = files.iter().map(|f| inspect::load(f)).collect::<CliResult<Vec<_>>>()?;
        groups.push((label.to_string(), traces));
    }
    out.push_str("# skipped-block rate\n");
    out.push_str(&format_sbr(&sbr_summary(&groups)?));
    Ok(())
}

pub fn run(args: Args) -> CliResult {
    let grid = match &args.grid {
        Some(p) => load_grid(p)?,
        None => cohort(&args)?,
    };
    if args.edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(CliError::usage("--edges must be strictly increasing"));
    }
    let threshold = args.threshold.unwrap_or(if grid.threshold.is_finite() { grid.threshold } else { DEFAULT_THRESHOLD });
    let mut out = String::new();
    writeln!(out, "# matching videos with pce > {threshold}, by bits per pixel").unwrap();
    out.push_str(&threshold_table(&grid, &args.edges, threshold).to_text());

    out.push_str("\n# mean pce, matching pairs\n");
    out.push_str(&format_summary(&grid.summary(|r| r.matching)));
    out.push_str("\n# mean pce, non-matching pairs\n");
    out.push_str(&format_summary(&grid.summary(|r| !r.matching)));
    let mut labels: Vec<&str> = Vec::new();
    for r in &grid.rows {
        if !labels.contains(&r.group.as_str()) {
            labels.push(&r.group);
        }
    }
    if labels.len() > 1 {
        for l in labels {
            writeln!(out, "\n# mean pce, matching pairs, group {l}").unwrap();
            out.push_str(&format_summary(&grid.summary(|r| r.matching && r.group == l)));
        }
    }

    out.push_str("\n# roc\nscheme,auc\n");
    if let Some(dir) = &args.roc_out {
        create_dir(dir)?;
    }
    for &s in &grid.schemes {
        match roc(&grid.pces(s, |r| r.matching), &grid.pces(s, |r| !r.matching)) {
            Ok(curve) => {
                writeln!(out, "{s},{}", curve.auc()).unwrap();
                if let Some(dir) = &args.roc_out {
                    write_file(&dir.join(format!("roc_{s}.csv")), curve.to_text().as_bytes())?;
                }
            }
            Err(_) => writeln!(out, "{s},").unwrap(),
        }
    }
    if !args.sbr.is_empty() {
        out.push('\n');
        sbr_section(&args.sbr, &mut out)?;
    }
    emit(args.output.as_deref(), &out)
}

