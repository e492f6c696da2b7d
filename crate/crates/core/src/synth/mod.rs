//! A synthetic camera. It runs a simple ISP backwards (inverse gamma, uneven
//! exposure, CFA sampling, black pedestal, quantization) to turn RGB scenes
//! into raw frames, and provides the frequency test patterns used for the
//! aliasing analysis.

mod dataset;
mod pattern;
mod scene;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cfa::mosaic;
use crate::io::{CfaPattern, IoError, RawImage, RgbImage};
use crate::tensor::Tensor;

pub use dataset::{
    generate_dataset, generate_pairs, read_manifest, sample_seeds, ManifestRecord, Pair,
    SampleSeeds, MANIFEST_NAME,
};
pub use pattern::{aliasing_energy, nyquist_demo, zone_plate, zone_plate_plane, NyquistReport};
pub use scene::{random_scene, zone_plate_scene, SceneKind};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("even dimensions required, got {width}x{height}")]
    OddDimensions { width: usize, height: usize },
    #[error("invalid synthesis parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("manifest: {0}")]
    Manifest(String),
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthParams {
    pub pattern: CfaPattern,
    pub black_level: u16,
    pub bit_depth: u8,
    /// Darkest value of the illumination field; 1 disables it.
    pub s_min: f64,
    pub gamma: f64,
    /// Gaussian read noise in DN.
    pub noise_sigma: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            pattern: CfaPattern::Rggb,
            black_level: 63,
            bit_depth: 12,
            s_min: 0.2,
            gamma: 2.2,
            noise_sigma: 0.0,
        }
    }
}

impl SynthParams {
    pub fn white_level(&self) -> u16 {
        ((1u32 << self.bit_depth) - 1) as u16
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Params(m));
        if self.bit_depth == 0 || self.bit_depth > 16 {
            return bad(format!("bit depth {} outside 1..=16", self.bit_depth));
        }
        if self.black_level >= self.white_level() {
            return bad(format!(
                "black level {} must be below {}",
                self.black_level,
                self.white_level()
            ));
        }
        if !(self.s_min > 0.0 && self.s_min <= 1.0) {
            return bad(format!("s_min must be in (0, 1], got {}", self.s_min));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!(
                "noise sigma must be non-negative, got {}",
                self.noise_sigma
            ));
        }
        Ok(())
    }
}

/// Display values to linear light: `v -> v^gamma` on `[0, 1]`.
pub fn linearize(rgb: &RgbImage, gamma: f64) -> Tensor<f64> {
    rgb.to_tensor().map(|v| v.powf(gamma))
}

/// Smooth exposure multiplier over the frame, with values in `[s_min, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct IlluminationField {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl IlluminationField {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

/// Three random Gaussian bumps over a random linear ramp, rescaled so that
/// the darkest point is `s_min` and the brightest is 1. Bump widths are at
/// least a quarter of the shorter side, so the field carries no detail
/// finer than that.
pub fn make_illumination(height: usize, width: usize, seed: u64, s_min: f64) -> IlluminationField {
    if s_min >= 1.0 {
        return IlluminationField {
            width,
            height,
            data: vec![1.0; width * height],
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = height.min(width) as f64;
    let (gx, gy) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let bumps: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let cy = rng.random_range(0.0..height as f64);
            let cx = rng.random_range(0.0..width as f64);
            let sigma = rng.random_range(0.25..0.6) * side;
            let amp = rng.random_range(0.5..1.5);
            (cy, cx, sigma, amp)
        })
        .collect();
    let raw: Vec<f64> = (0..height * width)
        .map(|i| {
            let (y, x) = ((i / width) as f64, (i % width) as f64);
            let ramp = gx * x / width as f64 + gy * y / height as f64;
            let bump: f64 = bumps
                .iter()
                .map(|&(cy, cx, s, a)| {
                    a * (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * s * s)).exp()
                })
                .sum();
            ramp + bump
        })
        .collect();
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let data = raw
        .into_iter()
        .map(|v| (s_min + (1.0 - s_min) * (v - lo) / span).clamp(s_min, 1.0))
        .collect();
    IlluminationField {
        width,
        height,
        data,
    }
}

/// Quantizes `linear` (3xHxW, `[0, 1]`) into a raw frame: exposure field,
/// CFA sampling, scale to `[black, white]`, optional read noise, then
/// round-half-up and clip to the code range.
pub fn synthesize_linear(
    linear: &Tensor<f64>,
    params: &SynthParams,
    seed: u64,
) -> Result<RawImage, SynthError> {
    params.validate()?;
    let (_, h, w) = linear
        .chw()
        .map_err(|_| SynthError::Params(format!("not 3xHxW: {:?}", linear.shape())))?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(SynthError::OddDimensions {
            width: w,
            height: h,
        });
    }
    let seeds = SampleSeeds::from_seed(seed);
    let field = make_illumination(h, w, seeds.illumination, params.s_min);
    let lit = Tensor::from_fn(linear.shape(), |i| {
        linear.data()[i] * field.data[i % (h * w)]
    });
    let plane = mosaic(&lit, params.pattern).map_err(|e| SynthError::Params(e.to_string()))?;

    let (black, white) = (
        f64::from(params.black_level),
        f64::from(params.white_level()),
    );
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seeds.noise);
    let normal = Normal::new(0.0, params.noise_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let data = plane
        .data
        .iter()
        .map(|&v| {
            let mut dn = v * (white - black) + black;
            if params.noise_sigma > 0.0 {
                dn += normal.sample(&mut noise_rng);
            }
            (dn + 0.5).floor().clamp(0.0, white) as u16
        })
        .collect();
    Ok(RawImage::new(
        w as u32,
        h as u32,
        params.pattern,
        params.black_level,
        params.white_level(),
        params.bit_depth,
        data,
    )?)
}

/// Raw frame for an sRGB scene plus its target, which is the scene itself.
pub fn synthesize_raw(
    rgb: &RgbImage,
    params: &SynthParams,
    seed: u64,
) -> Result<(RawImage, RgbImage), SynthError> {
    let (w, h) = (rgb.width as usize, rgb.height as usize);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(SynthError::OddDimensions {
            width: w,
            height: h,
        });
    }
    params.validate()?;
    let raw = synthesize_linear(&linearize(rgb, params.gamma), params, seed)?;
    Ok((raw, rgb.clone()))
}
