//! Test-time feature corruptions with five severity levels.
//!
//! Ten kinds cover noise, blur, digital, and geometric families. The
//! severity parameter tables below are fixed constants owned by this
//! registry; every report stamps the kind count so results are never
//! compared across different registries. Stochastic kinds (the noises and
//! elastic_shift) are deterministic per seed; the rest ignore the seed.

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::rng::{derive_seed, seeded_rng};
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use std::path::Path;

/// Registered corruption kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CorruptionKind {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    GaussianBlur,
    BoxBlur,
    Pixelate,
    Contrast,
    Brightness,
    Saturate,
    ElasticShift,
}

/// Severity tables, indexed by `severity - 1`.
///
/// Standard deviation of additive Gaussian pixel noise.
pub const GAUSSIAN_NOISE_SIGMA: [f64; 5] = [0.04, 0.08, 0.12, 0.18, 0.26];
/// Photon-count scale for shot noise; lower is noisier.
pub const SHOT_NOISE_SCALE: [f64; 5] = [60.0, 25.0, 12.0, 5.0, 3.0];
/// Fraction of pixels replaced by salt or pepper.
pub const IMPULSE_NOISE_FRACTION: [f64; 5] = [0.03, 0.06, 0.09, 0.17, 0.27];
/// Gaussian blur standard deviation in pixels.
pub const GAUSSIAN_BLUR_SIGMA: [f64; 5] = [0.4, 0.6, 0.9, 1.3, 1.8];
/// Box blur radius in pixels.
pub const BOX_BLUR_RADIUS: [usize; 5] = [1, 2, 3, 4, 5];
/// Pixelation block size.
pub const PIXELATE_BLOCK: [usize; 5] = [2, 3, 4, 6, 8];
/// Contrast scale toward the per-channel mean; lower is flatter.
pub const CONTRAST_FACTOR: [f64; 5] = [0.75, 0.6, 0.45, 0.3, 0.15];
/// Additive brightness offset; severity 1 is the zero-offset entry.
pub const BRIGHTNESS_OFFSET: [f64; 5] = [0.0, 0.1, 0.2, 0.3, 0.4];
/// Saturation scale away from gray.
pub const SATURATE_FACTOR: [f64; 5] = [1.3, 1.6, 2.0, 2.5, 3.0];
/// Elastic displacement amplitude in pixels.
pub const ELASTIC_AMPLITUDE: [f64; 5] = [0.6, 1.1, 1.7, 2.4, 3.2];

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 10] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ShotNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::GaussianBlur,
        CorruptionKind::BoxBlur,
        CorruptionKind::Pixelate,
        CorruptionKind::Contrast,
        CorruptionKind::Brightness,
        CorruptionKind::Saturate,
        CorruptionKind::ElasticShift,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::ShotNoise => "shot_noise",
            CorruptionKind::ImpulseNoise => "impulse_noise",
            CorruptionKind::GaussianBlur => "gaussian_blur",
            CorruptionKind::BoxBlur => "box_blur",
            CorruptionKind::Pixelate => "pixelate",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::Saturate => "saturate",
            CorruptionKind::ElasticShift => "elastic_shift",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .find(|k| k.as_str() == s)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown corruption kind '{s}'")))
    }

    /// True for kinds whose output depends on the seed.
    pub fn is_stochastic(&self) -> bool {
        matches!(
            self,
            CorruptionKind::GaussianNoise
                | CorruptionKind::ShotNoise
                | CorruptionKind::ImpulseNoise
                | CorruptionKind::ElasticShift
        )
    }
}

/// A corruption kind at one of the five severities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8) -> Result<Self> {
        if !(1..=5).contains(&severity) {
            return Err(Error::invalid(format!(
                "severity must be in 1..=5, got {severity}"
            )));
        }
        Ok(CorruptionSpec { kind, severity })
    }

    fn level(&self) -> usize {
        self.severity as usize - 1
    }
}

/// Applies one corruption; same shape, values in `[0, 1]`.
pub fn corrupt(x: &ImageTensor, spec: &CorruptionSpec, seed: u64) -> Result<ImageTensor> {
    if !(1..=5).contains(&spec.severity) {
        return Err(Error::invalid(format!(
            "severity must be in 1..=5, got {}",
            spec.severity
        )));
    }
    let s = spec.level();
    let out = match spec.kind {
        CorruptionKind::GaussianNoise => {
            let normal = Normal::new(0.0, GAUSSIAN_NOISE_SIGMA[s]).expect("valid sigma");
            let mut rng = seeded_rng(derive_seed(seed, &[1]));
            let data = x.data().iter().map(|&v| v + normal.sample(&mut rng)).collect();
            x.with_clipped_data(data)
        }
        CorruptionKind::ShotNoise => {
            let scale = SHOT_NOISE_SCALE[s];
            let mut rng = seeded_rng(derive_seed(seed, &[2]));
            let data = x
                .data()
                .iter()
                .map(|&v| {
                    let lambda = v * scale;
                    if lambda <= 0.0 {
                        0.0
                    } else {
                        Poisson::new(lambda).expect("positive lambda").sample(&mut rng) / scale
                    }
                })
                .collect();
            x.with_clipped_data(data)
        }
        CorruptionKind::ImpulseNoise => {
            let frac = IMPULSE_NOISE_FRACTION[s];
            let mut rng = seeded_rng(derive_seed(seed, &[3]));
            let (h, w, c) = x.shape();
            let mut out = x.clone();
            for hy in 0..h {
                for wx in 0..w {
                    let u: f64 = rng.random_range(0.0..1.0);
                    if u < frac {
                        let v = if u < frac / 2.0 { 0.0 } else { 1.0 };
                        for ch in 0..c {
                            out.set(hy, wx, ch, v);
                        }
                    }
                }
            }
            out
        }
        CorruptionKind::GaussianBlur => gaussian_blur(x, GAUSSIAN_BLUR_SIGMA[s]),
        CorruptionKind::BoxBlur => box_blur(x, BOX_BLUR_RADIUS[s]),
        CorruptionKind::Pixelate => pixelate(x, PIXELATE_BLOCK[s]),
        CorruptionKind::Contrast => scale_around_reference(x, CONTRAST_FACTOR[s], RefPoint::ChannelMean),
        CorruptionKind::Brightness => {
            let offset = BRIGHTNESS_OFFSET[s];
            let data = x.data().iter().map(|&v| v + offset).collect();
            x.with_clipped_data(data)
        }
        CorruptionKind::Saturate => scale_around_reference(x, SATURATE_FACTOR[s], RefPoint::PixelGray),
        CorruptionKind::ElasticShift => elastic_shift(x, ELASTIC_AMPLITUDE[s], seed),
    };
    Ok(out)
}

enum RefPoint {
    /// Per-channel image mean (contrast).
    ChannelMean,
    /// Per-pixel gray value: channel mean for color, mid-gray for
    /// single-channel images (saturate).
    PixelGray,
}

fn scale_around_reference(x: &ImageTensor, factor: f64, reference: RefPoint) -> ImageTensor {
    let (h, w, c) = x.shape();
    let n = h * w;
    let mut data = x.data().to_vec();
    match reference {
        RefPoint::ChannelMean => {
            for ch in 0..c {
                let mean: f64 = (0..n).map(|i| data[i * c + ch]).sum::<f64>() / n as f64;
                for i in 0..n {
                    data[i * c + ch] = mean + (data[i * c + ch] - mean) * factor;
                }
            }
        }
        RefPoint::PixelGray => {
            for i in 0..n {
                let gray = if c == 3 {
                    (data[i * c] + data[i * c + 1] + data[i * c + 2]) / 3.0
                } else {
                    0.5
                };
                for ch in 0..c {
                    data[i * c + ch] = gray + (data[i * c + ch] - gray) * factor;
                }
            }
        }
    }
    x.with_clipped_data(data)
}

/// Separable Gaussian convolution with clamp-to-edge boundaries.
fn gaussian_blur(x: &ImageTensor, sigma: f64) -> ImageTensor {
    let radius = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-0.5 * (d as f64 / sigma).powi(2)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.into_iter().map(|k| k / norm).collect();
    convolve_separable(x, &kernel, radius)
}

/// Mean filter of radius `r` with clamp-to-edge boundaries.
fn box_blur(x: &ImageTensor, radius: usize) -> ImageTensor {
    let width = 2 * radius + 1;
    let kernel = vec![1.0 / width as f64; width];
    convolve_separable(x, &kernel, radius as i64)
}

fn convolve_separable(x: &ImageTensor, kernel: &[f64], radius: i64) -> ImageTensor {
    let (h, w, c) = x.shape();
    let clamp = |v: i64, hi: usize| v.clamp(0, hi as i64 - 1) as usize;
    // horizontal pass
    let mut tmp = vec![0.0; h * w * c];
    for hy in 0..h {
        for wx in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (ki, k) in kernel.iter().enumerate() {
                    let sx = clamp(wx as i64 + ki as i64 - radius, w);
                    acc += k * x.get(hy, sx, ch);
                }
                tmp[(hy * w + wx) * c + ch] = acc;
            }
        }
    }
    // vertical pass
    let mut out = vec![0.0; h * w * c];
    for hy in 0..h {
        for wx in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (ki, k) in kernel.iter().enumerate() {
                    let sy = clamp(hy as i64 + ki as i64 - radius, h);
                    acc += k * tmp[(sy * w + wx) * c + ch];
                }
                out[(hy * w + wx) * c + ch] = acc;
            }
        }
    }
    x.with_clipped_data(out)
}

/// Averages each `b x b` block and fills the block with the mean; edge
/// blocks may be smaller.
fn pixelate(x: &ImageTensor, block: usize) -> ImageTensor {
    let (h, w, c) = x.shape();
    let mut out = x.clone();
    let mut by = 0;
    while by < h {
        let bh = block.min(h - by);
        let mut bx = 0;
        while bx < w {
            let bw = block.min(w - bx);
            for ch in 0..c {
                let mut acc = 0.0;
                for dy in 0..bh {
                    for dx in 0..bw {
                        acc += x.get(by + dy, bx + dx, ch);
                    }
                }
                let mean = acc / (bh * bw) as f64;
                for dy in 0..bh {
                    for dx in 0..bw {
                        out.set(by + dy, bx + dx, ch, mean);
                    }
                }
            }
            bx += block;
        }
        by += block;
    }
    out
}

/// Smooth random displacement: a coarse grid of Gaussian offsets is
/// bilinearly upsampled to a per-pixel field, then the image is resampled.
fn elastic_shift(x: &ImageTensor, amplitude: f64, seed: u64) -> ImageTensor {
    const GRID: usize = 4;
    let mut rng = seeded_rng(derive_seed(seed, &[4]));
    let normal = Normal::new(0.0, amplitude).expect("valid amplitude");
    let field: Vec<(f64, f64)> = (0..GRID * GRID)
        .map(|_| (normal.sample(&mut rng), normal.sample(&mut rng)))
        .collect();
    let (h, w, c) = x.shape();
    let sample_field = |fy: f64, fx: f64| -> (f64, f64) {
        // bilinear interpolation on the coarse grid
        let gy = fy * (GRID - 1) as f64;
        let gx = fx * (GRID - 1) as f64;
        let (y0, x0) = (gy.floor() as usize, gx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(GRID - 1), (x0 + 1).min(GRID - 1));
        let (dy, dx) = (gy - y0 as f64, gx - x0 as f64);
        let at = |yy: usize, xx: usize| field[yy * GRID + xx];
        let lerp2 = |a: (f64, f64), b: (f64, f64), t: f64| {
            (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t)
        };
        let top = lerp2(at(y0, x0), at(y0, x1), dx);
        let bot = lerp2(at(y1, x0), at(y1, x1), dx);
        lerp2(top, bot, dy)
    };
    let mut data = Vec::with_capacity(h * w * c);
    for hy in 0..h {
        for wx in 0..w {
            let (dy, dx) = sample_field(
                hy as f64 / (h - 1).max(1) as f64,
                wx as f64 / (w - 1).max(1) as f64,
            );
            for ch in 0..c {
                data.push(x.sample_bilinear(hy as f64 + dy, wx as f64 + dx, ch));
            }
        }
    }
    x.with_clipped_data(data)
}

/// Corrupted copies of a test set: one set per (kind, severity).
#[derive(Debug, Clone)]
pub struct CorruptedSuite {
    kinds: Vec<CorruptionKind>,
    // sets[kind][severity - 1][image]
    sets: Vec<Vec<Vec<ImageTensor>>>,
}

impl CorruptedSuite {
    pub fn kinds(&self) -> &[CorruptionKind] {
        &self.kinds
    }

    pub fn n_sets(&self) -> usize {
        self.kinds.len() * 5
    }

    pub fn severity_set(&self, kind_index: usize, severity: u8) -> &[ImageTensor] {
        &self.sets[kind_index][severity as usize - 1]
    }

    /// Writes `{kind}/{severity}/{index}.ppm` under `dir`.
    pub fn export_ppm(&self, dir: &Path) -> Result<()> {
        for (ki, kind) in self.kinds.iter().enumerate() {
            for severity in 1..=5u8 {
                let sub = dir.join(kind.as_str()).join(severity.to_string());
                std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
                for (i, img) in self.severity_set(ki, severity).iter().enumerate() {
                    img.write_ppm(&sub.join(format!("{i}.ppm")))?;
                }
            }
        }
        Ok(())
    }
}

/// Builds the full suite: every kind at severities 1-5 applied to every
/// test image, with per-image seeds derived from `(seed, kind, severity,
/// index)`.
pub fn build_corrupted_suite(
    test_images: &[ImageTensor],
    kinds: &[CorruptionKind],
    seed: u64,
) -> Result<CorruptedSuite> {
    if test_images.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    if kinds.is_empty() {
        return Err(Error::invalid("no corruption kinds configured"));
    }
    let mut sets = Vec::with_capacity(kinds.len());
    for (ki, kind) in kinds.iter().enumerate() {
        let mut by_severity = Vec::with_capacity(5);
        for severity in 1..=5u8 {
            let spec = CorruptionSpec::new(*kind, severity)?;
            let images = test_images
                .iter()
                .enumerate()
                .map(|(i, img)| {
                    let s = derive_seed(seed, &[ki as u64, severity as u64, i as u64]);
                    corrupt(img, &spec, s)
                })
                .collect::<Result<Vec<_>>>()?;
            by_severity.push(images);
        }
        sets.push(by_severity);
    }
    Ok(CorruptedSuite {
        kinds: kinds.to_vec(),
        sets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::AugmentOp;

    fn test_image(side: usize, seed: u64) -> ImageTensor {
        let mut rng = seeded_rng(seed);
        let mut data: Vec<f64> = (0..side * side)
            .map(|i| {
                let (y, x) = (i / side, i % side);
                0.5 + 0.3 * ((x as f64) * 0.8).sin() * ((y as f64) * 0.6).cos()
            })
            .collect();
        for v in data.iter_mut() {
            *v = (*v + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0);
        }
        ImageTensor::new(side, side, 1, data).unwrap()
    }

    fn mean_abs_dev(a: &ImageTensor, b: &ImageTensor) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / a.data().len() as f64
    }

    #[test]
    fn brightness_severity_one_is_identity() {
        let img = test_image(16, 0);
        let spec = CorruptionSpec::new(CorruptionKind::Brightness, 1).unwrap();
        assert_eq!(corrupt(&img, &spec, 9).unwrap(), img);
    }

    #[test]
    fn gaussian_noise_grows_with_severity() {
        let mut worse = 0;
        for seed in 0..100u64 {
            let img = test_image(16, seed);
            let lo = corrupt(
                &img,
                &CorruptionSpec::new(CorruptionKind::GaussianNoise, 1).unwrap(),
                seed,
            )
            .unwrap();
            let hi = corrupt(
                &img,
                &CorruptionSpec::new(CorruptionKind::GaussianNoise, 5).unwrap(),
                seed,
            )
            .unwrap();
            if mean_abs_dev(&hi, &img) > mean_abs_dev(&lo, &img) {
                worse += 1;
            }
        }
        assert_eq!(worse, 100);
    }

    #[test]
    fn severity_monotone_for_every_kind() {
        let images: Vec<ImageTensor> = (0..100).map(|s| test_image(16, s)).collect();
        for kind in CorruptionKind::ALL {
            let mut prev = -1.0;
            for severity in 1..=5u8 {
                let spec = CorruptionSpec::new(kind, severity).unwrap();
                let mut total = 0.0;
                for (i, img) in images.iter().enumerate() {
                    let out = corrupt(img, &spec, i as u64).unwrap();
                    total += mean_abs_dev(&out, img);
                }
                let mean = total / images.len() as f64;
                assert!(
                    mean >= prev - 1e-12,
                    "{} severity {severity}: {mean} < {prev}",
                    kind.as_str()
                );
                prev = mean;
            }
        }
    }

    #[test]
    fn pixelate_is_blockwise_constant() {
        let img = test_image(16, 3);
        let spec = CorruptionSpec::new(CorruptionKind::Pixelate, 3).unwrap();
        let b = PIXELATE_BLOCK[2];
        let out = corrupt(&img, &spec, 0).unwrap();
        for by in (0..16).step_by(b) {
            for bx in (0..16).step_by(b) {
                let v = out.get(by, bx, 0);
                for dy in 0..b.min(16 - by) {
                    for dx in 0..b.min(16 - bx) {
                        assert!((out.get(by + dy, bx + dx, 0) - v).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn all_kinds_preserve_shape_and_range() {
        let img = test_image(13, 5);
        for kind in CorruptionKind::ALL {
            for severity in 1..=5u8 {
                let spec = CorruptionSpec::new(kind, severity).unwrap();
                let out = corrupt(&img, &spec, 7).unwrap();
                assert_eq!(out.shape(), img.shape(), "{}", kind.as_str());
                assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn stochastic_kinds_are_deterministic_per_seed() {
        let img = test_image(16, 1);
        for kind in CorruptionKind::ALL.iter().filter(|k| k.is_stochastic()) {
            let spec = CorruptionSpec::new(*kind, 4).unwrap();
            let a = corrupt(&img, &spec, 42).unwrap();
            let b = corrupt(&img, &spec, 42).unwrap();
            assert_eq!(a, b, "{}", kind.as_str());
        }
    }

    #[test]
    fn severity_out_of_range_rejected() {
        assert!(CorruptionSpec::new(CorruptionKind::Contrast, 0).is_err());
        assert!(CorruptionSpec::new(CorruptionKind::Contrast, 6).is_err());
        assert!(CorruptionKind::parse("fog").is_err());
    }

    #[test]
    fn suite_cardinality_and_determinism() {
        let images: Vec<ImageTensor> = (0..4).map(|s| test_image(8, s)).collect();
        let kinds = [CorruptionKind::GaussianNoise, CorruptionKind::Pixelate];
        let suite = build_corrupted_suite(&images, &kinds, 11).unwrap();
        assert_eq!(suite.n_sets(), 10);
        for ki in 0..kinds.len() {
            for sev in 1..=5u8 {
                assert_eq!(suite.severity_set(ki, sev).len(), images.len());
            }
        }
        let again = build_corrupted_suite(&images, &kinds, 11).unwrap();
        for ki in 0..kinds.len() {
            for sev in 1..=5u8 {
                assert_eq!(suite.severity_set(ki, sev), again.severity_set(ki, sev));
            }
        }
        assert!(build_corrupted_suite(&[], &kinds, 0).is_err());
    }

    #[test]
    fn registry_does_not_overlap_augment_ops() {
        for kind in CorruptionKind::ALL {
            for op in AugmentOp::ALL {
                assert_ne!(kind.as_str(), op.as_str());
            }
        }
    }
}
