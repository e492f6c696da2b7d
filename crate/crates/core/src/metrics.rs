//! Image quality metrics on `[0, 1]` images, evaluated in double precision.

use crate::autodiff::separable_valid;
use crate::tensor::{Scalar, Tensor};

/// SSIM window side.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape(Vec<usize>, Vec<usize>),
    #[error("{height}x{width} image is smaller than the {window}x{window} window")]
    TooSmall {
        height: usize,
        width: usize,
        window: usize,
    },
}

/// Normalized 1-D Gaussian taps, centred, `size` odd.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

fn check<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(), MetricError> {
    if a.shape() != b.shape() || a.chw().is_err() {
        return Err(MetricError::Shape(a.shape().to_vec(), b.shape().to_vec()));
    }
    Ok(())
}

pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64, MetricError> {
    check(a, b)?;
    let d = Tensor::from_fn(a.shape(), |i| {
        (a.data()[i].as_f64() - b.data()[i].as_f64()).powi(2)
    });
    Ok(d.mean())
}

/// `10 log10(1 / MSE)`; identical images give `f64::INFINITY`.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64, MetricError> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * m.log10()
    })
}

/// Mean SSIM over channels and valid window positions.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64, MetricError> {
    check(a, b)?;
    let (c, h, w) = a.chw().expect("checked rank");
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(MetricError::TooSmall {
            height: h,
            width: w,
            window: SSIM_WINDOW,
        });
    }
    let x: Vec<f64> = a.data().iter().map(|v| v.as_f64()).collect();
    let y: Vec<f64> = b.data().iter().map(|v| v.as_f64()).collect();
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let blur = |v: &[f64]| separable_valid(v, c, h, w, &k);
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(a, b)| a * b).collect() };
    let (mx, my) = (blur(&x), blur(&y));
    let (sxx, syy, sxy) = (
        blur(&prod(&x, &x)),
        blur(&prod(&y, &y)),
        blur(&prod(&x, &y)),
    );
    let map: Vec<f64> = (0..mx.len())
        .map(|i| {
            let (mx, my) = (mx[i], my[i]);
            let vx = sxx[i] - mx * mx;
            let vy = syy[i] - my * my;
            let cxy = sxy[i] - mx * my;
            ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
        })
        .collect();
    let n = map.len();
    Ok(Tensor::new(&[n], map).expect("sized").mean())
}
