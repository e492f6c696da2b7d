//! Overfits the tiny preset to eight synthetic pairs and compares it with the
//! bilinear baseline.
//!
//! cargo run --release --example overfit -- [steps] [restart_period]

use std::time::Instant;

use rmfa::synth::{generate_pairs, SceneKind, SynthParams};
use rmfa::train::{
    evaluate, evaluate_baseline, samples_from_pairs, Schedule, TrainConfig, Trainer,
};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(Ok(2000), |s| s.parse())?;
    let period: usize = args.next().map_or(Ok(100), |s| s.parse())?;
    let pairs = generate_pairs(8, 64, &SynthParams::default(), 7, SceneKind::Mixed)?;
    let data = samples_from_pairs(&pairs)?;
    let config = TrainConfig {
        epochs: steps,
        batch_size: 8,
        schedule: Schedule {
            period,
            ..Schedule::default()
        },
        seed: 7,
        checkpoint_every: 0,
        threads: std::env::var("RMFA_THREADS")
            .ok()
            .and_then(|s| s.parse().ok())
            .unwrap_or(1),
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let mut trainer = Trainer::new(config)?;
    trainer.fit(&data, |rec, _| {
        if rec.epoch % 100 == 0 {
            println!(
                "epoch {:4}  lr {:.2e}  loss {:.5}  psnr {:.2}",
                rec.epoch, rec.lr, rec.loss, rec.psnr
            );
        }
        Ok(())
    })?;
    let windows: Vec<String> = trainer
        .step_losses
        .chunks(100)
        .map(|w| format!("{:.5}", w.iter().sum::<f64>() / w.len() as f64))
        .collect();
    println!("100-step mean loss: {}", windows.join(" "));
    let model = evaluate(trainer.model(), &data)?;
    let base = evaluate_baseline(&data)?;
    println!("{:.1}s", start.elapsed().as_secs_f64());
    println!(
        "model    psnr {:.2}  ssim {:.4}",
        model.mean_psnr, model.mean_ssim
    );
    println!(
        "baseline psnr {:.2}  ssim {:.4}",
        base.mean_psnr, base.mean_ssim
    );
    Ok(())
}
