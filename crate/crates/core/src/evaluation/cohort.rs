//! Simulated camera cohorts: calibration on held-out cameras, then the
//! six-scheme grid over several bitrates.

use crate::bitstream::TraceFile;
use crate::calibration::{calibrate_lambda_rate, calibrate_qp, spliced_observations, video_frame_pce, Calibration, LambdaRateObservation, QpObservation};
use crate::error::{Error, Result};
use crate::matching::PceConfig;
use crate::noise::{extract_residual, NoiseResidual, Picture};
use crate::par;
use crate::prnu::{EstimateConfig, Fingerprint, FingerprintAccumulator};
use crate::simulator::{encode_sequence, flat_field, render_scene, simulate_capture, CodecConfig, EncodeResult, Motion, SceneConfig, SensorModel};
use crate::trace::{bits_per_pixel, skipped_block_rate, FrameBlockMap};
use crate::weighting::{Mask, DEFAULT_ANCHOR_LAMBDA_RATE, DEFAULT_ANCHOR_QP};

use super::{run_grid, ExperimentGrid, GridInput, ReferenceRef, Scheme, SchemeTables};

#[derive(Debug, Clone, PartialEq)]
pub struct CohortConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub gop: usize,
    pub cameras: usize,
    pub videos_per_camera: usize,
    /// Held-out cameras used only to calibrate the weight tables.
    pub calibration_cameras: usize,
    /// Target bits per frame, one encode per value.
    pub bitrates: Vec<f64>,
    pub calibration_qps: Vec<u8>,
    pub sigma_k: f64,
    pub read_noise: f64,
    /// Flat-field frames behind each reference fingerprint.
    pub reference_frames: usize,
    pub motion: Motion,
    pub texture: f64,
    pub buckets: usize,
    pub anchor_qp: u8,
    pub anchor_lambda_rate: f64,
    pub seed: u64,
    pub estimate: EstimateConfig,
    /// Matching statistic of the grid.
    pub pce: PceConfig,
    /// Statistic used during calibration; aligned, so unbiased near zero.
    pub calibration_pce: PceConfig,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            width: 128,
            height: 128,
            frames: 30,
            gop: 10,
            cameras: 20,
            videos_per_camera: 2,
            calibration_cameras: 4,
            bitrates: vec![1000.0, 2000.0, 3000.0, 6000.0, 9000.0],
            calibration_qps: vec![10, 15, 20, 25, 30, 35, 40, 45, 51],
            sigma_k: 0.03,
            read_noise: 2.0,
            reference_frames: 40,
            motion: Motion::Handheld { step: 3.0 },
            texture: 0.4,
            buckets: crate::calibration::DEFAULT_BUCKETS,
            anchor_qp: DEFAULT_ANCHOR_QP,
            anchor_lambda_rate: DEFAULT_ANCHOR_LAMBDA_RATE,
            seed: 2017,
            estimate: EstimateConfig::default(),
            pce: PceConfig::default(),
            calibration_pce: PceConfig::zero_shift(),
        }
    }
}

/// splitmix64 over a base seed and a path of indices.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut z = base;
    for &p in path {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(p.wrapping_mul(0xD1B5_4A32_D192_ED69));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

pub const TAG_CAMERA: u64 = 1;
pub const TAG_CALIBRATION: u64 = 2;

#[derive(Debug, Clone)]
pub struct Camera {
    pub id: String,
    pub model: SensorModel,
    pub reference: Fingerprint,
    seed: u64,
}

/// Conventional fingerprint from uncompressed flat-field captures.
pub fn reference_fingerprint(model: &SensorModel, frames: usize, seed: u64, config: &EstimateConfig, id: &str) -> Result<Fingerprint> {
    let (w, h) = model.dims();
    let clean = flat_field(w, h, frames, derive_seed(seed, &[0]));
    let captured = simulate_capture(model, &clean, derive_seed(seed, &[1]))?;
    let residuals = par::map(&captured, |p| extract_residual(p, &config.denoise));
    let mut acc = FingerprintAccumulator::new(w, h);
    let ones = Mask::ones(w, h);
    for (p, r) in captured.iter().zip(&residuals) {
        let sat = config.saturation_masking.then(|| crate::noise::saturation_mask(p));
        acc.accumulate(p, r, &ones, sat.as_ref())?;
    }
    acc.finalize(config.floor, id)
}

pub fn make_camera(cfg: &CohortConfig, tag: u64, index: usize) -> Result<Camera> {
    let seed = derive_seed(cfg.seed, &[tag, index as u64]);
    let prefix = if tag == TAG_CALIBRATION { "cal" } else { "cam" };
    let id = format!("{prefix}{index:02}");
    let model = SensorModel::random(cfg.width, cfg.height, cfg.sigma_k, cfg.read_noise, derive_seed(seed, &[0]))?;
    let reference = reference_fingerprint(&model, cfg.reference_frames, derive_seed(seed, &[1]), &cfg.estimate, &id)?;
    Ok(Camera { id, model, reference, seed })
}

/// Captured (uncompressed) frames of video `video` of a camera.
pub fn capture_video(cfg: &CohortConfig, camera: &Camera, video: usize) -> Result<Vec<Picture>> {
    let scene_seed = derive_seed(camera.seed, &[2, video as u64]);
    let scene = SceneConfig {
        texture: cfg.texture,
        ..SceneConfig::new(cfg.width, cfg.height, cfg.frames, cfg.motion, scene_seed)
    };
    simulate_capture(&camera.model, &render_scene(&scene)?, derive_seed(camera.seed, &[3, video as u64]))
}

/// Decoded frames with their block maps and per-video statistics.
#[derive(Debug, Clone)]
pub struct DecodedVideo {
    pub pictures: Vec<Picture>,
    pub blocks: Vec<FrameBlockMap>,
    pub trace: TraceFile,
    pub bpp: f64,
    pub sbr: f64,
}

impl DecodedVideo {
    pub fn from_encode(result: EncodeResult) -> Result<Self> {
        let blocks = result.trace.frames();
        Ok(DecodedVideo {
            bpp: bits_per_pixel(&result.trace)?,
            sbr: skipped_block_rate(&blocks)?,
            pictures: result.decoded,
            blocks,
            trace: result.trace,
        })
    }

    pub fn residuals(&self, config: &EstimateConfig) -> Vec<NoiseResidual> {
        par::map(&self.pictures, |p| extract_residual(p, &config.denoise))
    }
}

pub fn encode(captured: &[Picture], codec: &CodecConfig) -> Result<DecodedVideo> {
    DecodedVideo::from_encode(encode_sequence(captured, codec)?)
}

#[derive(Debug, Clone)]
pub struct CalibrationOutcome {
    pub tables: SchemeTables,
    pub qp_all: Calibration,
    pub qp_noskip: Calibration,
    pub lambda_r: Calibration,
}

/// QP tables from fixed-QP encodes and the rate table from spliced frames
/// of target-bitrate encodes, all on held-out cameras.
pub fn calibrate_cohort(cfg: &CohortConfig) -> Result<CalibrationOutcome> {
    if cfg.calibration_cameras == 0 {
        return Err(Error::Config("calibration needs at least one camera".into()));
    }
    let per_camera = par::map_range(cfg.calibration_cameras, |i| -> Result<_> {
        let camera = make_camera(cfg, TAG_CALIBRATION, i)?;
        let captured = capture_video(cfg, &camera, 0)?;
        let mut qp_all = Vec::new();
        let mut qp_noskip = Vec::new();
        for &qp in &cfg.calibration_qps {
            let v = encode(&captured, &CodecConfig::fixed_qp(qp, cfg.gop))?;
            let r = v.residuals(&cfg.estimate);
            for (include_skip, out) in [(true, &mut qp_all), (false, &mut qp_noskip)] {
                out.push(QpObservation {
                    camera_id: camera.id.clone(),
                    qp,
                    pce: video_frame_pce(&v.pictures, &r, &v.blocks, &camera.reference, include_skip, &cfg.calibration_pce)?,
                });
            }
        }
        let mut rate = Vec::new();
        for &bits in &cfg.bitrates {
            let v = encode(&captured, &CodecConfig::target_bits(bits, cfg.gop))?;
            let r = v.residuals(&cfg.estimate);
            rate.extend(spliced_observations(&camera.id, &v.pictures, &r, &v.blocks, &camera.reference, &cfg.calibration_pce)?);
        }
        Ok((qp_all, qp_noskip, rate))
    });
    let mut qp_all: Vec<QpObservation> = Vec::new();
    let mut qp_noskip: Vec<QpObservation> = Vec::new();
    let mut rate: Vec<LambdaRateObservation> = Vec::new();
    for item in per_camera {
        let (a, b, c) = item?;
        qp_all.extend(a);
        qp_noskip.extend(b);
        rate.extend(c);
    }
    let qp_all = calibrate_qp(&qp_all, true, cfg.anchor_qp)?;
    let qp_noskip = calibrate_qp(&qp_noskip, false, cfg.anchor_qp)?;
    let lambda_r = calibrate_lambda_rate(&rate, cfg.buckets, cfg.anchor_lambda_rate)?;
    Ok(CalibrationOutcome {
        tables: SchemeTables {
            qp_all: qp_all.table.clone(),
            qp_noskip: qp_noskip.table.clone(),
            lambda_r: lambda_r.table.clone(),
        },
        qp_all,
        qp_noskip,
        lambda_r,
    })
}

/// Label of bitrate index `i`.
pub fn bitrate_label(i: usize) -> String {
    format!("b{i}")
}

/// Encodes every cohort video at every bitrate and runs the grid. Each
/// video is matched against its own camera's reference and against the
/// next camera's.
pub fn run_cohort(cfg: &CohortConfig, tables: &SchemeTables) -> Result<ExperimentGrid> {
    if cfg.cameras < 2 {
        return Err(Error::Config("a cohort needs at least two cameras".into()));
    }
    let cameras = par::map_range(cfg.cameras, |i| make_camera(cfg, TAG_CAMERA, i)).into_iter().collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize, usize)> = (0..cfg.cameras)
        .flat_map(|c| (0..cfg.videos_per_camera).flat_map(move |v| (0..cfg.bitrates.len()).map(move |b| (c, v, b))))
        .collect();
    let videos = par::map(&jobs, |&(c, v, b)| -> Result<DecodedVideo> {
        let captured = capture_video(cfg, &cameras[c], v)?;
        encode(&captured, &CodecConfig::target_bits(cfg.bitrates[b], cfg.gop))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let inputs: Vec<GridInput<'_>> = jobs
        .iter()
        .zip(&videos)
        .map(|(&(c, v, b), video)| GridInput {
            video_id: format!("{}-v{v}-{}", cameras[c].id, bitrate_label(b)),
            camera_id: cameras[c].id.clone(),
            group: bitrate_label(b),
            pictures: &video.pictures,
            blocks: &video.blocks,
            bpp: video.bpp,
            sbr: video.sbr,
            references: vec![
                ReferenceRef {
                    fingerprint: &cameras[c].reference,
                    matching: true,
                },
                ReferenceRef {
                    fingerprint: &cameras[(c + 1) % cameras.len()].reference,
                    matching: false,
                },
            ],
        })
        .collect();
    run_grid(&inputs, &Scheme::ALL, Some(tables), &cfg.estimate, &cfg.pce)
}

/// Static-content skip-rate sweep: tripod shots of a fixed scene with live
/// sensor noise, one encode per (scene, bitrate). Returns SBR values per
/// bitrate index.
pub fn static_sbr_sweep(cfg: &CohortConfig, scenes: usize) -> Result<Vec<Vec<f64>>> {
    let camera = make_camera(cfg, TAG_CAMERA, 0)?;
    let videos = (0..scenes)
        .map(|s| {
            let scene = SceneConfig {
                texture: cfg.texture,
                ..SceneConfig::new(cfg.width, cfg.height, cfg.frames, Motion::Static, derive_seed(cfg.seed, &[4, s as u64]))
            };
            simulate_capture(&camera.model, &render_scene(&scene)?, derive_seed(cfg.seed, &[5, s as u64]))
        })
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.bitrates.len()).flat_map(|b| (0..scenes).map(move |s| (b, s))).collect();
    let sbr = par::map(&jobs, |&(b, s)| -> Result<f64> { Ok(encode(&videos[s], &CodecConfig::target_bits(cfg.bitrates[b], cfg.gop))?.sbr) });
    let mut out = vec![Vec::with_capacity(scenes); cfg.bitrates.len()];
    for (&(b, _), v) in jobs.iter().zip(sbr) {
        out[b].push(v?);
    }
    Ok(out)
}

/// Mean zero-shift PCE against the true pattern for sensors whose pattern is
/// the base pattern scaled by each factor. Every factor sees the same scenes
/// and the same read noise, so trials are paired. Returned in factor order.
pub fn energy_ratio_pce(cfg: &CohortConfig, factors: &[f64], trials: usize, qp: u8) -> Result<Vec<f64>> {
    if trials == 0 || factors.is_empty() {
        return Err(Error::Config("energy sweep needs factors and trials".into()));
    }
    let (w, h) = (cfg.width, cfg.height);
    let jobs: Vec<(usize, usize)> = (0..trials).flat_map(|t| (0..factors.len()).map(move |f| (t, f))).collect();
    let pces = par::map(&jobs, |&(t, f)| -> Result<f64> {
        let seed = derive_seed(cfg.seed, &[6, t as u64]);
        let base = SensorModel::random(w, h, cfg.sigma_k, cfg.read_noise, derive_seed(seed, &[0]))?;
        let model = base.scaled(factors[f])?;
        let truth = Fingerprint::from_parts(base.k_true().clone(), crate::plane::Plane::filled(w, h, true), "truth".into())?;
        let scene = SceneConfig {
            texture: cfg.texture,
            ..SceneConfig::new(w, h, cfg.frames, cfg.motion, derive_seed(seed, &[1]))
        };
        let captured = simulate_capture(&model, &render_scene(&scene)?, derive_seed(seed, &[2]))?;
        let video = encode(&captured, &CodecConfig::fixed_qp(qp, cfg.gop))?;
        let ones = Mask::ones(w, h);
        let mut acc = FingerprintAccumulator::new(w, h);
        for (p, r) in video.pictures.iter().zip(video.residuals(&cfg.estimate)) {
            let sat = cfg.estimate.saturation_masking.then(|| crate::noise::saturation_mask(p));
            acc.accumulate(p, &r, &ones, sat.as_ref())?;
        }
        let estimate = acc.finalize(cfg.estimate.floor, "query")?;
        Ok(crate::matching::pce(&estimate, &truth, &cfg.calibration_pce)?.pce)
    });
    let mut sums = vec![0.0; factors.len()];
    for (&(_, f), v) in jobs.iter().zip(pces) {
        sums[f] += v?;
    }
    Ok(sums.into_iter().map(|s| s / trials as f64).collect())
}
