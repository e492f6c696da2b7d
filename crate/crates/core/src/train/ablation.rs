use crate::cfa::SplitMode;
use crate::synth::{generate_pairs, SceneKind, SynthParams};

use super::data::{samples_from_pairs, split_dataset, Sample};
use super::eval::{evaluate, EvalReport};
use super::schedule::Schedule;
use super::trainer::Trainer;
use super::{TrainConfig, TrainError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    /// Three-channel packing against four-channel packing, on zone plates.
    Split,
    /// Tone mapping on against off, under uneven illumination.
    Tonemap,
    /// Two copies of the base configuration.
    Control,
}

impl std::str::FromStr for AblationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "split" | "split_mode" => Ok(Self::Split),
            "tonemap" | "tone_mapping" => Ok(Self::Tonemap),
            "control" => Ok(Self::Control),
            _ => Err(format!(
                "unknown ablation kind {s:?} (split, tonemap, control)"
            )),
        }
    }
}

/// Data and compute shared by both arms.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AblationBudget {
    /// Adam steps per arm.
    pub steps: usize,
    /// Synthetic pairs before the 9:1 split.
    pub pairs: usize,
    pub size: usize,
    pub patch: usize,
    pub batch_size: usize,
}

impl Default for AblationBudget {
    fn default() -> Self {
        Self {
            steps: 300,
            pairs: 20,
            size: 48,
            patch: 32,
            batch_size: 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VariantReport {
    pub name: String,
    pub final_loss: f64,
    pub eval: EvalReport,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AblationReport {
    pub kind: AblationKind,
    pub seed: u64,
    /// The full configuration.
    pub reference: VariantReport,
    /// The ablated configuration.
    pub ablated: VariantReport,
    /// `reference - ablated`.
    pub delta_psnr: f64,
    pub delta_ssim: f64,
}

/// Scene kind and synthesis parameters each ablation trains on.
pub fn ablation_data(kind: AblationKind) -> (SceneKind, SynthParams) {
    match kind {
        AblationKind::Split => (
            SceneKind::ZonePlate,
            SynthParams {
                s_min: 1.0,
                ..SynthParams::default()
            },
        ),
        AblationKind::Tonemap | AblationKind::Control => (SceneKind::Mixed, SynthParams::default()),
    }
}

fn train_arm(
    name: &str,
    config: TrainConfig,
    train: &[Sample],
    test: &[Sample],
) -> Result<VariantReport, TrainError> {
    let mut trainer = Trainer::new(config)?;
    let history = trainer.fit(train, |_, _| Ok(()))?;
    let final_loss = history.last().map_or(f64::NAN, |r| r.loss);
    let eval = evaluate(trainer.model(), test)?;
    Ok(VariantReport {
        name: name.to_string(),
        final_loss,
        eval,
    })
}

/// Trains both arms from the same seed on the same split and scores them
/// on the held-out tenth.
pub fn run_ablation(
    kind: AblationKind,
    base: &TrainConfig,
    budget: &AblationBudget,
    seed: u64,
) -> Result<AblationReport, TrainError> {
    let (scene, params) = ablation_data(kind);
    let pairs = generate_pairs(budget.pairs, budget.size, &params, seed, scene)
        .map_err(|e| TrainError::Data(e.to_string()))?;
    let split = split_dataset(&samples_from_pairs(&pairs)?, seed);
    if split.train.is_empty() || split.test.is_empty() {
        return Err(TrainError::Data(format!(
            "{} pairs is too few to split 9:1",
            budget.pairs
        )));
    }
    let per_epoch = split.train.len().div_ceil(budget.batch_size.max(1));
    let epochs = budget.steps.div_ceil(per_epoch).max(1);
    let config = TrainConfig {
        epochs,
        batch_size: budget.batch_size,
        patch: budget.patch,
        seed,
        schedule: Schedule {
            period: epochs,
            ..base.schedule
        },
        checkpoint_every: 0,
        ..base.clone()
    };
    let mut reference = config.clone();
    let mut ablated = config;
    let names = match kind {
        AblationKind::Split => {
            reference.model.split_mode = SplitMode::ThreeChannel;
            ablated.model.split_mode = SplitMode::FourChannel;
            ("three_channel", "four_channel")
        }
        AblationKind::Tonemap => {
            reference.model.tone_mapping = true;
            ablated.model.tone_mapping = false;
            ("tone_mapping", "no_tone_mapping")
        }
        AblationKind::Control => ("base", "base_copy"),
    };
    let reference = train_arm(names.0, reference, &split.train, &split.test)?;
    let ablated = train_arm(names.1, ablated, &split.train, &split.test)?;
    Ok(AblationReport {
        kind,
        seed,
        delta_psnr: reference.eval.mean_psnr - ablated.eval.mean_psnr,
        delta_ssim: reference.eval.mean_ssim - ablated.eval.mean_ssim,
        reference,
        ablated,
    })
}
