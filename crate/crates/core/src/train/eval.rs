use crate::cfa::bilinear_demosaic;
use crate::metrics::{psnr, ssim};
use crate::model::Model;
use crate::tensor::Tensor;

use super::data::Sample;
use super::TrainError;

/// Gamma of the no-op baseline rendering.
pub const BASELINE_GAMMA: f64 = 2.2;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalRow {
    pub index: usize,
    #[serde(with = "super::finite_or_inf")]
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    #[serde(with = "super::finite_or_inf")]
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl EvalReport {
    pub fn from_rows(rows: Vec<EvalRow>) -> Self {
        let n = rows.len() as f64;
        let mean_psnr = rows.iter().map(|r| r.psnr).sum::<f64>() / n;
        let mean_ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / n;
        Self {
            rows,
            mean_psnr,
            mean_ssim,
        }
    }
}

/// Scores `predict(sample)` against each sample's target.
pub fn evaluate_with(
    samples: &[Sample],
    mut predict: impl FnMut(&Sample) -> Result<Tensor<f64>, TrainError>,
) -> Result<EvalReport, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::Data("nothing to evaluate".into()));
    }
    let mut rows = Vec::with_capacity(samples.len());
    for (index, s) in samples.iter().enumerate() {
        let pred = predict(s)?;
        rows.push(EvalRow {
            index,
            psnr: psnr(&pred, &s.target)?,
            ssim: ssim(&pred, &s.target)?,
        });
    }
    Ok(EvalReport::from_rows(rows))
}

pub fn evaluate(model: &Model<f32>, samples: &[Sample]) -> Result<EvalReport, TrainError> {
    let mode = model.config().split_mode;
    evaluate_with(samples, |s| Ok(model.infer(&s.packed(mode))?.cast()))
}

/// Bilinear demosaic followed by display gamma, clamped to `[0, 1]`.
pub fn baseline_prediction(sample: &Sample) -> Tensor<f64> {
    bilinear_demosaic(&sample.plane, sample.pattern)
        .map(|v| v.clamp(0.0, 1.0).powf(1.0 / BASELINE_GAMMA))
}

pub fn evaluate_baseline(samples: &[Sample]) -> Result<EvalReport, TrainError> {
    evaluate_with(samples, |s| Ok(baseline_prediction(s)))
}
