//! One worker against the default pool, for the two hot paths: streaming
//! estimation (denoising dominates) and batch PCE matching (FFTs).
//!
//! `cargo bench -p blockprnu` compares pool sizes; adding
//! `--no-default-features` runs the same bodies on the sequential fallback.

use std::hint::black_box;

use blockprnu::evaluation::cohort::{capture_video, encode, make_camera, CohortConfig, TAG_CAMERA};
use blockprnu::matching::{batch_match, PceConfig};
use blockprnu::par;
use blockprnu::prnu::{estimate_fingerprint, EstimateConfig, Fingerprint};
use blockprnu::simulator::CodecConfig;
use blockprnu::weighting::{SchemeConfig, WeightingScheme};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn pools() -> [(&'static str, usize); 2] {
    [("one_worker", 1), ("default_pool", 0)]
}

fn estimation(c: &mut Criterion) {
    let cfg = CohortConfig {
        frames: 16,
        ..CohortConfig::default()
    };
    let camera = make_camera(&cfg, TAG_CAMERA, 0).unwrap();
    let video = encode(&capture_video(&cfg, &camera, 0).unwrap(), &CodecConfig::fixed_qp(24, cfg.gop)).unwrap();
    let scheme = SchemeConfig::new(WeightingScheme::SkipEliminate, None).unwrap();
    let est = EstimateConfig::default();

    let mut group = c.benchmark_group("estimate_128x128x16");
    group.sample_size(10);
    for (name, workers) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                par::with_workers(workers, || {
                    let frames = video.pictures.iter().cloned().map(Ok);
                    black_box(estimate_fingerprint(frames, &video.blocks, (cfg.width, cfg.height), &scheme, &est, "bench").unwrap())
                })
            })
        });
    }
    group.finish();
}

fn matching(c: &mut Criterion) {
    let cfg = CohortConfig::default();
    let fps: Vec<Fingerprint> = (0..8).map(|i| make_camera(&cfg, TAG_CAMERA, i).unwrap().reference).collect();
    let pce = PceConfig::default();

    let mut group = c.benchmark_group("batch_match_8x8");
    group.sample_size(10);
    for (name, workers) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::with_workers(workers, || black_box(batch_match(&fps, &fps, &pce).unwrap())))
        });
    }
    group.finish();
}

criterion_group!(benches, estimation, matching);
criterion_main!(benches);
