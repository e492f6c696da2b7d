//! The composite training loss
//! `theta * L1 + eta * perceptual + lambda * (1 - SSIM) + gamma * color`,
//! built on a [`Graph`] so that it can be differentiated with the model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, GraphError, Var};
use crate::metrics::{gaussian_kernel, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
use crate::tensor::{Scalar, Tensor};

pub const COLOR_WINDOW: usize = 21;
pub const COLOR_SIGMA: f64 = 3.0;
/// Seed of the default perceptual feature extractor.
pub const PROXY_SEED: u64 = 0x7667_6731;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub theta: f64,
    pub eta: f64,
    pub lambda: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            theta: 1.0,
            eta: 0.01,
            lambda: 0.2,
            gamma: 0.5,
        }
    }
}

impl LossWeights {
    pub fn l1_only() -> Self {
        Self {
            theta: 1.0,
            eta: 0.0,
            lambda: 0.0,
            gamma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("theta", self.theta),
            ("eta", self.eta),
            ("lambda", self.lambda),
            ("gamma", self.gamma),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(format!(
                    "loss weight {name} must be finite and non-negative, got {v}"
                ));
            }
        }
        Ok(())
    }
}

pub fn l1_loss<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var, GraphError> {
    let d = g.sub(pred, target)?;
    let d = g.abs(d);
    Ok(g.mean(d))
}

pub fn mse_loss<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var, GraphError> {
    let d = g.sub(a, b)?;
    let d = g.square(d);
    Ok(g.mean(d))
}

fn kernel<T: Scalar>(size: usize, sigma: f64) -> Vec<T> {
    gaussian_kernel(size, sigma)
        .into_iter()
        .map(T::of)
        .collect()
}

/// Mean SSIM over channels and valid positions of an 11x11 Gaussian window.
pub fn ssim<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var, GraphError> {
    let k = kernel::<T>(SSIM_WINDOW, SSIM_SIGMA);
    let mx = g.blur_valid(pred, &k)?;
    let my = g.blur_valid(target, &k)?;
    let xx = g.square(pred);
    let yy = g.square(target);
    let xy = g.mul(pred, target)?;
    let exx = g.blur_valid(xx, &k)?;
    let eyy = g.blur_valid(yy, &k)?;
    let exy = g.blur_valid(xy, &k)?;

    let mx2 = g.square(mx);
    let my2 = g.square(my);
    let mxy = g.mul(mx, my)?;
    let vx = g.sub(exx, mx2)?;
    let vy = g.sub(eyy, my2)?;
    let cxy = g.sub(exy, mxy)?;

    let two = T::of(2.0);
    let a = g.mul_scalar(mxy, two);
    let a = g.add_scalar(a, T::of(SSIM_C1));
    let b = g.mul_scalar(cxy, two);
    let b = g.add_scalar(b, T::of(SSIM_C2));
    let num = g.mul(a, b)?;
    let c = g.add(mx2, my2)?;
    let c = g.add_scalar(c, T::of(SSIM_C1));
    let d = g.add(vx, vy)?;
    let d = g.add_scalar(d, T::of(SSIM_C2));
    let den = g.mul(c, d)?;
    let map = g.div(num, den)?;
    Ok(g.mean(map))
}

pub fn ssim_loss<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var, GraphError> {
    let s = ssim(g, pred, target)?;
    let neg = g.mul_scalar(s, -T::one());
    Ok(g.add_scalar(neg, T::one()))
}

/// MSE between 21x21 Gaussian-blurred (sigma 3) copies of both images.
pub fn color_loss<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var, GraphError> {
    let k = kernel::<T>(COLOR_WINDOW, COLOR_SIGMA);
    let bp = g.blur_valid(pred, &k)?;
    let bt = g.blur_valid(target, &k)?;
    mse_loss(g, bp, bt)
}

/// Source of feature maps for the perceptual term.
pub trait FeatureExtractor<T: Scalar> {
    /// Feature maps of `x` at each stage; the extractor's own weights must
    /// enter the graph as constants.
    fn features(&self, g: &mut Graph<T>, x: Var) -> Result<Vec<Var>, GraphError>;
}

/// Four stride-2 3x3 convolutions with relu, random and frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct PerceptualProxy {
    stages: Vec<(Tensor<f64>, Tensor<f64>)>,
}

impl Default for PerceptualProxy {
    fn default() -> Self {
        Self::new(PROXY_SEED)
    }
}

impl PerceptualProxy {
    pub const CHANNELS: [usize; 5] = [3, 8, 8, 16, 16];

    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stages = Self::CHANNELS
            .windows(2)
            .map(|io| {
                let (cin, cout) = (io[0], io[1]);
                let bound = (6.0 / (9 * cin) as f64).sqrt();
                let w = Tensor::from_fn(&[cout, cin, 3, 3], |_| rng.random_range(-bound..bound));
                (w, Tensor::zeros(&[cout]))
            })
            .collect();
        Self { stages }
    }
}

impl<T: Scalar> FeatureExtractor<T> for PerceptualProxy {
    fn features(&self, g: &mut Graph<T>, x: Var) -> Result<Vec<Var>, GraphError> {
        let mut h = x;
        let mut out = Vec::with_capacity(self.stages.len());
        for (w, b) in &self.stages {
            let w = g.input(w.cast());
            let b = g.input(b.cast());
            h = g.conv2d(h, w, Some(b), 2, 1)?;
            h = g.relu(h);
            out.push(h);
        }
        Ok(out)
    }
}

/// Mean over stages of the feature MSE.
pub fn perceptual_loss<T: Scalar>(
    g: &mut Graph<T>,
    pred: Var,
    target: Var,
    extractor: &dyn FeatureExtractor<T>,
) -> Result<Var, GraphError> {
    let fp = extractor.features(g, pred)?;
    let ft = extractor.features(g, target)?;
    let n = fp.len();
    let mut total: Option<Var> = None;
    for (a, b) in fp.into_iter().zip(ft) {
        let m = mse_loss(g, a, b)?;
        total = Some(match total {
            None => m,
            Some(t) => g.add(t, m)?,
        });
    }
    let total = total.expect("extractor yields at least one stage");
    Ok(g.mul_scalar(total, T::of(1.0 / n as f64)))
}

/// Handles of the total and of every term whose weight is non-zero.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub l1: Option<Var>,
    pub perceptual: Option<Var>,
    pub ssim: Option<Var>,
    pub color: Option<Var>,
}

/// Builds the weighted sum. Terms with weight zero are left out of the graph.
pub fn total_loss<T: Scalar>(
    g: &mut Graph<T>,
    pred: Var,
    target: Var,
    weights: &LossWeights,
    extractor: &dyn FeatureExtractor<T>,
) -> Result<LossTerms, GraphError> {
    let l1 = (weights.theta != 0.0)
        .then(|| l1_loss(g, pred, target))
        .transpose()?;
    let perceptual = (weights.eta != 0.0)
        .then(|| perceptual_loss(g, pred, target, extractor))
        .transpose()?;
    let ssim = (weights.lambda != 0.0)
        .then(|| ssim_loss(g, pred, target))
        .transpose()?;
    let color = (weights.gamma != 0.0)
        .then(|| color_loss(g, pred, target))
        .transpose()?;

    let mut total: Option<Var> = None;
    for (term, w) in [
        (l1, weights.theta),
        (perceptual, weights.eta),
        (ssim, weights.lambda),
        (color, weights.gamma),
    ] {
        if let Some(t) = term {
            let scaled = g.mul_scalar(t, T::of(w));
            total = Some(match total {
                None => scaled,
                Some(acc) => g.add(acc, scaled)?,
            });
        }
    }
    let total = match total {
        Some(t) => t,
        None => {
            let z = g.input(Tensor::scalar(T::zero()));
            g.mul_scalar(z, T::one())
        }
    };
    Ok(LossTerms {
        total,
        l1,
        perceptual,
        ssim,
        color,
    })
}
