//! Masked aggregation of noise residuals into a sensor fingerprint
//! `K = sum(I * W * M) / sum(I^2 * M)`, its normalization, and its file form.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::noise::{extract_residual, saturation_mask, DenoiseConfig, NoiseResidual, Picture};
use crate::par;
use crate::plane::Plane;
use crate::trace::FrameBlockMap;
use crate::weighting::{Mask, SchemeConfig};

const MAGIC: &[u8; 4] = b"PRFP";

/// Default relative floor: a pixel joins the support when its denominator
/// is at least this fraction of the mean nonzero denominator.
pub const DEFAULT_RELATIVE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DenominatorFloor {
    /// Fraction of the mean over nonzero denominator entries.
    Relative(f64),
    Absolute(f64),
}

impl Default for DenominatorFloor {
    fn default() -> Self {
        DenominatorFloor::Relative(DEFAULT_RELATIVE_FLOOR)
    }
}

/// Running numerator and denominator sums.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintAccumulator {
    numerator: Plane<f64>,
    denominator: Plane<f64>,
    frames_ingested: usize,
}

/// Un-normalized ratio and its support.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEstimate {
    pub k: Plane<f64>,
    pub support: Plane<bool>,
}

impl FingerprintAccumulator {
    pub fn new(width: usize, height: usize) -> Self {
        FingerprintAccumulator {
            numerator: Plane::zeros(width, height),
            denominator: Plane::zeros(width, height),
            frames_ingested: 0,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.numerator.dims()
    }

    pub fn frames_ingested(&self) -> usize {
        self.frames_ingested
    }

    pub fn numerator(&self) -> &Plane<f64> {
        &self.numerator
    }

    pub fn denominator(&self) -> &Plane<f64> {
        &self.denominator
    }

    /// Adds one frame. The effective mask is `mask * sat`; pass `None` for
    /// `sat` to skip saturation masking.
    pub fn accumulate(&mut self, picture: &Picture, residual: &NoiseResidual, mask: &Mask, sat: Option<&Plane<f64>>) -> Result<()> {
        let dims = self.dims();
        picture.luma.ensure_dims(dims)?;
        residual.values.ensure_dims(dims)?;
        mask.values().ensure_dims(dims)?;
        if let Some(s) = sat {
            s.ensure_dims(dims)?;
        }
        let i = picture.luma.as_slice();
        let w = residual.values.as_slice();
        let m = mask.values().as_slice();
        let num = self.numerator.as_mut_slice();
        let den = self.denominator.as_mut_slice();
        for p in 0..num.len() {
            let eff = match sat {
                Some(s) => m[p] * s.as_slice()[p],
                None => m[p],
            };
            if eff == 0.0 {
                continue;
            }
            let ip = f64::from(i[p]);
            num[p] += ip * w[p] * eff;
            den[p] += ip * ip * eff;
        }
        self.frames_ingested += 1;
        Ok(())
    }

    /// Adds another accumulator's sums into this one.
    pub fn merge(&mut self, other: &FingerprintAccumulator) -> Result<()> {
        other.numerator.ensure_dims(self.dims())?;
        for (a, b) in self.numerator.as_mut_slice().iter_mut().zip(other.numerator.as_slice()) {
            *a += b;
        }
        for (a, b) in self.denominator.as_mut_slice().iter_mut().zip(other.denominator.as_slice()) {
            *a += b;
        }
        self.frames_ingested += other.frames_ingested;
        Ok(())
    }

    /// Absolute floor implied by `floor` for the current sums.
    pub fn floor_value(&self, floor: DenominatorFloor) -> f64 {
        match floor {
            DenominatorFloor::Absolute(v) => v,
            DenominatorFloor::Relative(frac) => {
                let (mut sum, mut n) = (0.0, 0usize);
                for &d in self.denominator.as_slice() {
                    if d > 0.0 {
                        sum += d;
                        n += 1;
                    }
                }
                if n == 0 {
                    f64::INFINITY
                } else {
                    frac * sum / n as f64
                }
            }
        }
    }

    /// Ratio of the sums where the denominator clears the floor.
    pub fn ratio(&self, floor: DenominatorFloor) -> Result<RawEstimate> {
        if self.frames_ingested == 0 {
            return Err(Error::EmptyAccumulator);
        }
        let limit = self.floor_value(floor);
        let (w, h) = self.dims();
        let support = Plane::from_vec(
            w,
            h,
            self.denominator.as_slice().iter().map(|&d| d > 0.0 && d >= limit).collect(),
        )?;
        if !support.as_slice().iter().any(|&s| s) {
            return Err(Error::AllMaskedOut);
        }
        let k = Plane::from_fn(w, h, |x, y| {
            if *support.get(x, y) {
                self.numerator.get(x, y) / self.denominator.get(x, y)
            } else {
                0.0
            }
        });
        Ok(RawEstimate { k, support })
    }

    /// Ratio, then zero mean and unit energy over the support.
    pub fn finalize(&self, floor: DenominatorFloor, source_id: impl Into<String>) -> Result<Fingerprint> {
        let raw = self.ratio(floor)?;
        Fingerprint::from_raw(raw.k, raw.support, source_id.into())
    }
}

/// A finalized, normalized fingerprint.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    k: Plane<f64>,
    support: Plane<bool>,
    source_id: String,
}

impl Fingerprint {
    /// Zero-means `k` over `support`, scales it to unit energy and zeroes it
    /// off support.
    pub fn from_raw(mut k: Plane<f64>, support: Plane<bool>, source_id: String) -> Result<Self> {
        k.ensure_dims(support.dims())?;
        let (mut sum, mut n) = (0.0, 0usize);
        for (v, &s) in k.as_slice().iter().zip(support.as_slice()) {
            if s {
                sum += v;
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::AllMaskedOut);
        }
        let mean = sum / n as f64;
        for (v, &s) in k.as_mut_slice().iter_mut().zip(support.as_slice()) {
            *v = if s { *v - mean } else { 0.0 };
        }
        let energy = k.energy();
        if !(energy > 0.0) || !energy.is_finite() {
            return Err(Error::DegenerateFingerprint);
        }
        let scale = energy.sqrt().recip();
        k.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
        Ok(Fingerprint { k, support, source_id })
    }

    /// Wraps already-normalized values without touching them.
    pub fn from_parts(k: Plane<f64>, support: Plane<bool>, source_id: String) -> Result<Self> {
        k.ensure_dims(support.dims())?;
        Ok(Fingerprint { k, support, source_id })
    }

    pub fn k(&self) -> &Plane<f64> {
        &self.k
    }

    pub fn support(&self) -> &Plane<bool> {
        &self.support
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn dims(&self) -> (usize, usize) {
        self.k.dims()
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = id.into();
        self
    }

    /// K rounded to the 32-bit precision used on disk.
    pub fn quantized(&self) -> Fingerprint {
        Fingerprint {
            k: self.k.map(|&v| f64::from(v as f32)),
            support: self.support.clone(),
            source_id: self.source_id.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (w, h) = self.dims();
        let id = self.source_id.as_bytes();
        let mut out = Vec::with_capacity(16 + id.len() + 4 * w * h + (w * h).div_ceil(8));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(w as u32).to_le_bytes());
        out.extend_from_slice(&(h as u32).to_le_bytes());
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id);
        for &v in self.k.as_slice() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        let mut bits = vec![0u8; (w * h).div_ceil(8)];
        for (i, &s) in self.support.as_slice().iter().enumerate() {
            if s {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        out.extend_from_slice(&bits);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::BadFingerprintFile(m.to_string());
        let mut pos = 0;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = pos + n;
            let s = bytes.get(pos..end).ok_or_else(|| bad("truncated"))?;
            pos = end;
            Ok(s)
        };
        if take(4)? != MAGIC {
            return Err(bad("bad magic"));
        }
        let mut u32_field = || -> Result<usize> { Ok(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize) };
        let w = u32_field()?;
        let h = u32_field()?;
        let id_len = u32_field()?;
        let n = w.checked_mul(h).ok_or_else(|| bad("dimensions overflow"))?;
        let expected = 16usize
            .checked_add(id_len)
            .and_then(|v| v.checked_add(n.checked_mul(4)?))
            .and_then(|v| v.checked_add(n.div_ceil(8)))
            .ok_or_else(|| bad("dimensions overflow"))?;
        if bytes.len() != expected {
            return Err(bad(&format!("expected {expected} bytes, found {}", bytes.len())));
        }
        let source_id = String::from_utf8(bytes[16..16 + id_len].to_vec()).map_err(|_| bad("source id is not UTF-8"))?;
        let body = &bytes[16 + id_len..];
        let k: Vec<f64> = body[..4 * n]
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        if k.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite value"));
        }
        let bits = &body[4 * n..];
        let support: Vec<bool> = (0..n).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();
        Ok(Fingerprint {
            k: Plane::from_vec(w, h, k)?,
            support: Plane::from_vec(w, h, support)?,
            source_id,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Fingerprint::from_bytes(&fs::read(path)?)
    }
}

/// Geometric alignment applied before aggregation (stabilized video).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeometricTransform {
    Identity,
    /// Row-major 2x3 matrix mapping output to input coordinates.
    Affine([f64; 6]),
}

/// Only the identity is implemented; anything else is rejected.
pub fn apply_inverse_transform(plane: &Plane<f64>, transform: &GeometricTransform) -> Result<Plane<f64>> {
    match transform {
        GeometricTransform::Identity => Ok(plane.clone()),
        GeometricTransform::Affine(m) if *m == [1.0, 0.0, 0.0, 0.0, 1.0, 0.0] => Ok(plane.clone()),
        GeometricTransform::Affine(_) => Err(Error::Unsupported("non-identity inverse transform".into())),
    }
}

/// Settings for the streaming estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateConfig {
    pub denoise: DenoiseConfig,
    pub saturation_masking: bool,
    pub floor: DenominatorFloor,
    /// Frames denoised concurrently before being folded in, in order.
    pub batch: usize,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            denoise: DenoiseConfig::default(),
            saturation_masking: true,
            floor: DenominatorFloor::default(),
            batch: 16,
        }
    }
}

/// Streams pictures, weights them with `scheme` using the matching frame
/// block maps, and finalizes a fingerprint. Memory is bounded by `batch`.
pub fn estimate_fingerprint<I>(
    pictures: I,
    blocks: &[FrameBlockMap],
    (width, height): (usize, usize),
    scheme: &SchemeConfig,
    config: &EstimateConfig,
    source_id: &str,
) -> Result<Fingerprint>
where
    I: IntoIterator<Item = Result<Picture>>,
{
    scheme.validate()?;
    let mut acc = FingerprintAccumulator::new(width, height);
    let mut iter = pictures.into_iter();
    let batch = config.batch.max(1);
    let mut seen = 0usize;
    loop {
        let chunk: Vec<Picture> = iter.by_ref().take(batch).collect::<Result<_>>()?;
        if chunk.is_empty() {
            break;
        }
        if seen + chunk.len() > blocks.len() {
            return Err(Error::FrameCountMismatch {
                expected: blocks.len(),
                found: seen + chunk.len() + iter.count(),
            });
        }
        let prepared = par::map_range(chunk.len(), |i| -> Result<_> {
            let picture = &chunk[i];
            picture.luma.ensure_dims((width, height))?;
            let residual = extract_residual(picture, &config.denoise);
            let mask = scheme.build_mask(&blocks[seen + i], width, height)?;
            let sat = config.saturation_masking.then(|| saturation_mask(picture));
            Ok((residual, mask, sat))
        });
        for (picture, item) in chunk.iter().zip(prepared) {
            let (residual, mask, sat) = item?;
            if residual.degenerate {
                log::debug!("frame {} is constant; residual is zero", picture.frame_idx);
            }
            acc.accumulate(picture, &residual, &mask, sat.as_ref())?;
        }
        seen += chunk.len();
    }
    if seen != blocks.len() {
        return Err(Error::FrameCountMismatch {
            expected: blocks.len(),
            found: seen,
        });
    }
    acc.finalize(config.floor, source_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{BlockRecord, BlockType};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn residual(values: Plane<f64>) -> NoiseResidual {
        NoiseResidual {
            values,
            degenerate: false,
        }
    }

    fn random_frame(rng: &mut ChaCha8Rng, w: usize, h: usize) -> (Picture, NoiseResidual, Mask) {
        let pic = Picture::new(Plane::from_fn(w, h, |_, _| rng.random_range(0..=255)), 0);
        let res = residual(Plane::from_fn(w, h, |_, _| rng.random_range(-4.0..4.0)));
        let mask = Mask::from_plane(Plane::from_fn(w, h, |_, _| {
            if rng.random_bool(0.2) {
                0.0
            } else {
                rng.random_range(0.0..2.0)
            }
        }))
        .unwrap();
        (pic, res, mask)
    }

    #[test]
    fn zero_mask_leaves_sums_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (p, r, _) = random_frame(&mut rng, 16, 16);
        let mut acc = FingerprintAccumulator::new(16, 16);
        acc.accumulate(&p, &r, &Mask::from_plane(Plane::zeros(16, 16)).unwrap(), None).unwrap();
        assert!(acc.numerator().as_slice().iter().all(|&v| v == 0.0));
        assert!(acc.denominator().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_constant_frame_gives_w_over_c() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = 100.0;
        let w = Plane::from_fn(16, 8, |_, _| rng.random_range(-3.0..3.0));
        let mut acc = FingerprintAccumulator::new(16, 8);
        let pic = Picture::new(Plane::filled(16, 8, c as u8), 0);
        acc.accumulate(&pic, &residual(w.clone()), &Mask::ones(16, 8), None).unwrap();
        let raw = acc.ratio(DenominatorFloor::default()).unwrap();
        assert!(raw.support.as_slice().iter().all(|&s| s));
        for (k, w) in raw.k.as_slice().iter().zip(w.as_slice()) {
            assert!((k - w / c).abs() < 1e-15);
        }
        let fp = acc.finalize(DenominatorFloor::default(), "x").unwrap();
        assert!(fp.k().sum().abs() < 1e-9);
        assert!((fp.k().energy() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_direct_whole_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frames: Vec<_> = (0..2).map(|_| random_frame(&mut rng, 12, 10)).collect();
        let mut acc = FingerprintAccumulator::new(12, 10);
        for (p, r, m) in &frames {
            acc.accumulate(p, r, m, None).unwrap();
        }
        let raw = acc.ratio(DenominatorFloor::Absolute(1e-12)).unwrap();
        for px in 0..120 {
            let num: f64 = frames
                .iter()
                .map(|(p, r, m)| f64::from(p.luma.as_slice()[px]) * r.values.as_slice()[px] * m.values().as_slice()[px])
                .sum();
            let den: f64 = frames
                .iter()
                .map(|(p, _, m)| f64::from(p.luma.as_slice()[px]).powi(2) * m.values().as_slice()[px])
                .sum();
            let expected = if den >= 1e-12 { num / den } else { 0.0 };
            assert!((raw.k.as_slice()[px] - expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn floor_and_empty_errors() {
        let acc = FingerprintAccumulator::new(4, 4);
        assert!(matches!(acc.ratio(DenominatorFloor::default()), Err(Error::EmptyAccumulator)));
        let mut acc = FingerprintAccumulator::new(4, 4);
        let pic = Picture::new(Plane::filled(4, 4, 10), 0);
        acc.accumulate(&pic, &residual(Plane::zeros(4, 4)), &Mask::ones(4, 4), None).unwrap();
        assert!(matches!(acc.ratio(DenominatorFloor::Absolute(1e9)), Err(Error::AllMaskedOut)));
        // saturated everywhere
        let mut acc = FingerprintAccumulator::new(4, 4);
        let pic = Picture::new(Plane::filled(4, 4, 255), 0);
        let sat = saturation_mask(&pic);
        acc.accumulate(&pic, &residual(Plane::zeros(4, 4)), &Mask::ones(4, 4), Some(&sat)).unwrap();
        assert!(matches!(acc.ratio(DenominatorFloor::default()), Err(Error::AllMaskedOut)));
    }

    #[test]
    fn dimension_mismatch() {
        let mut acc = FingerprintAccumulator::new(8, 8);
        let pic = Picture::new(Plane::filled(8, 4, 10), 0);
        let r = acc.accumulate(&pic, &residual(Plane::zeros(8, 8)), &Mask::ones(8, 8), None);
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn merge_equals_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let frames: Vec<_> = (0..4).map(|_| random_frame(&mut rng, 8, 8)).collect();
        let mut all = FingerprintAccumulator::new(8, 8);
        let (mut a, mut b) = (FingerprintAccumulator::new(8, 8), FingerprintAccumulator::new(8, 8));
        for (i, (p, r, m)) in frames.iter().enumerate() {
            all.accumulate(p, r, m, None).unwrap();
            if i < 2 { &mut a } else { &mut b }.accumulate(p, r, m, None).unwrap();
        }
        a.merge(&b).unwrap();
        assert_eq!(a.frames_ingested(), 4);
        for (x, y) in a.numerator().as_slice().iter().zip(all.numerator().as_slice()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    /// Golden value recorded at first run: correlation 0.80 for this seed.
    #[test]
    fn recovers_ground_truth_pattern() {
        let (w, h) = (64, 64);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let kn = Normal::new(0.0, 0.02).unwrap();
        let k_true = Plane::from_fn(w, h, |_, _| kn.sample(&mut rng));
        let noise = Normal::new(0.0, 2.0).unwrap();
        let mut acc = FingerprintAccumulator::new(w, h);
        for f in 0..50 {
            let base = 60.0 + 3.0 * f as f64;
            let clean = Plane::from_fn(w, h, |x, y| base + 40.0 * ((x as f64 / 9.0).sin() * (y as f64 / 13.0).cos()));
            let pic = Picture::new(
                Plane::from_fn(w, h, |x, y| {
                    let v = clean.get(x, y) * (1.0 + k_true.get(x, y)) + noise.sample(&mut rng);
                    v.round().clamp(0.0, 255.0) as u8
                }),
                f,
            );
            let r = extract_residual(&pic, &DenoiseConfig::default());
            acc.accumulate(&pic, &r, &Mask::ones(w, h), Some(&saturation_mask(&pic))).unwrap();
        }
        let fp = acc.finalize(DenominatorFloor::default(), "gt").unwrap();
        let corr = fp.k().normalized_correlation(&k_true).unwrap();
        assert!(corr > 0.5, "correlation {corr}");
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let k = Plane::from_fn(13, 7, |_, _| rng.random_range(-1.0..1.0));
        let support = Plane::from_fn(13, 7, |x, y| (x + y) % 3 != 0);
        let fp = Fingerprint::from_raw(k, support, "cam-7 ü".into()).unwrap();
        let bytes = fp.to_bytes();
        let back = Fingerprint::from_bytes(&bytes).unwrap();
        assert_eq!(back, fp.quantized());
        assert_eq!(back.to_bytes(), bytes);
        assert!(Fingerprint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Fingerprint::from_bytes(&bad), Err(Error::BadFingerprintFile(_))));
    }

    #[test]
    fn inverse_transform_stub() {
        let p = Plane::from_fn(4, 4, |x, y| (x * y) as f64);
        assert_eq!(apply_inverse_transform(&p, &GeometricTransform::Identity).unwrap(), p);
        let empty = Plane::zeros(0, 0);
        assert_eq!(apply_inverse_transform(&empty, &GeometricTransform::Identity).unwrap(), empty);
        let rot = GeometricTransform::Affine([0.0, -1.0, 0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(apply_inverse_transform(&p, &rot), Err(Error::Unsupported(_))));
    }

    #[test]
    fn streaming_estimator_checks_frame_count() {
        let recs = |f| (0..4u32).map(move |i| BlockRecord::new(f, i % 2, i / 2, BlockType::I, 20, 100).unwrap());
        let blocks = vec![FrameBlockMap::from_records(0, 2, 2, recs(0)).unwrap()];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pics: Vec<Result<Picture>> = (0..2)
            .map(|i| Ok(Picture::new(Plane::from_fn(32, 32, |_, _| rng.random_range(20..200)), i)))
            .collect();
        let r = estimate_fingerprint(pics, &blocks, (32, 32), &SchemeConfig::conventional(), &EstimateConfig::default(), "a");
        assert!(matches!(r, Err(Error::FrameCountMismatch { expected: 1, found: 2 })));
    }
}
