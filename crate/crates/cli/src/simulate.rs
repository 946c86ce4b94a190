use std::fmt::Write as _;
use std::path::PathBuf;

use blockprnu::bitstream::{serialize_trace, write_yuv420};
use blockprnu::evaluation::cohort::{derive_seed, encode, reference_fingerprint};
use blockprnu::prnu::EstimateConfig;
use blockprnu::simulator::{render_scene, simulate_capture, CodecConfig, Motion, SceneConfig, SensorModel};
use blockprnu::Error;

use crate::util::{create_dir, emit, write_file, CliError, CliResult};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Directory receiving video.yuv, trace.txt and reference.fp.
    #[arg(long)]
    out: PathBuf,

    /// Frame width in pixels; a multiple of 16.
    #[arg(long, default_value_t = 128)]
    width: usize,

    /// Frame height in pixels; a multiple of 16.
    #[arg(long, default_value_t = 128)]
    height: usize,

    #[arg(long, default_value_t = 30)]
    frames: usize,

    /// Intra period in frames.
    #[arg(long, default_value_t = 10)]
    gop: usize,

    /// Encode every frame at this QP.
    #[arg(long, conflicts_with = "bits")]
    qp: Option<u8>,

    /// Target bits per frame for the rate controller (the default mode).
    #[arg(long, default_value_t = 2000.0)]
    bits: f64,

    /// Standard deviation of the sensor's PRNU pattern.
    #[arg(long, default_value_t = 0.03)]
    sigma_k: f64,

    /// Additive read noise, in 8-bit sample units.
    #[arg(long, default_value_t = 2.0)]
    read_noise: f64,

    /// Sensor seed: the same value gives the same sensor and reference.
    #[arg(long, default_value_t = 1)]
    sensor: u64,

    /// Scene and capture-noise seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// static, pan:VX:VY or handheld:STEP.
    #[arg(long, default_value = "handheld:3")]
    motion: String,

    /// Share of the scene covered by texture, 0 to 1.
    #[arg(long, default_value_t = 0.4)]
    texture: f64,

    /// Flat-field frames behind the reference fingerprint.
    #[arg(long, default_value_t = 40)]
    reference_frames: usize,

    /// Also write the uncompressed capture as captured.yuv.
    #[arg(long)]
    keep_captured: bool,
}

pub fn parse_motion(s: &str) -> CliResult<Motion> {
    let bad = || CliError::usage(format!("--motion `{s}` is not static, pan:VX:VY or handheld:STEP"));
    let parts: Vec<&str> = s.split(':').collect();
    let num = |t: &str| t.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(bad);
    match parts.as_slice() {
        ["static"] => Ok(Motion::Static),
        ["pan", vx, vy] => Ok(Motion::Pan { vx: num(vx)?, vy: num(vy)? }),
        ["handheld", step] => Ok(Motion::Handheld { step: num(step)? }),
        _ => Err(bad()),
    }
}

pub fn run(args: Args) -> CliResult {
    let motion = parse_motion(&args.motion)?;
    let codec = match args.qp {
        Some(q) => CodecConfig::fixed_qp(q, args.gop),
        None => CodecConfig::target_bits(args.bits, args.gop),
    };
    codec.validate()?;
    if !(0.0..=1.0).contains(&args.texture) {
        return Err(Error::Config(format!("--texture {} is outside [0, 1]", args.texture)).into());
    }
    let model = SensorModel::random(args.width, args.height, args.sigma_k, args.read_noise, derive_seed(args.sensor, &[0]))
        .map_err(|e| CliError::classed(blockprnu::ErrorClass::Usage, e.to_string()))?;
    let scene = SceneConfig {
        texture: args.texture,
        ..SceneConfig::new(args.width, args.height, args.frames, motion, derive_seed(args.seed, &[2, args.sensor]))
    };
    let captured = simulate_capture(&model, &render_scene(&scene)?, derive_seed(args.seed, &[3, args.sensor]))?;
    let video = encode(&captured, &codec)?;
    let id = format!("sensor{}", args.sensor);
    let reference = reference_fingerprint(&model, args.reference_frames, derive_seed(args.sensor, &[1]), &EstimateConfig::default(), &id)?;

    create_dir(&args.out)?;
    let at = |name: &str| args.out.join(name);
    write_yuv420(at("video.yuv"), &video.pictures).map_err(CliError::at(at("video.yuv").display()))?;
    if args.keep_captured {
        write_yuv420(at("captured.yuv"), &captured).map_err(CliError::at(at("captured.yuv").display()))?;
    }
    write_file(&at("trace.txt"), serialize_trace(&video.trace).as_bytes())?;
    write_file(&at("reference.fp"), &reference.to_bytes())?;

    let mut out = String::new();
    writeln!(out, "frames {}", video.pictures.len()).unwrap();
    writeln!(out, "sbr {:.6}", video.sbr).unwrap();
    writeln!(out, "bpp {:.6}", video.bpp).unwrap();
    emit(None, &out)
}
