//! One paired ablation run at a small budget.
//!
//! cargo run --release --example ablation -- [split|tonemap|control] [steps]

use rmfa::train::{run_ablation, AblationBudget, AblationKind, TrainConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let kind: AblationKind = args
        .next()
        .as_deref()
        .unwrap_or("tonemap")
        .parse()
        .map_err(anyhow::Error::msg)?;
    let steps = args.next().map_or(Ok(200), |s| s.parse())?;
    let budget = AblationBudget {
        steps,
        ..AblationBudget::default()
    };
    let r = run_ablation(kind, &TrainConfig::default(), &budget, 0)?;
    for v in [&r.reference, &r.ablated] {
        println!(
            "{:<16} PSNR {:.3}  SSIM {:.4}  final loss {:.5}",
            v.name, v.eval.mean_psnr, v.eval.mean_ssim, v.final_loss
        );
    }
    println!(
        "delta PSNR {:+.3} dB, delta SSIM {:+.4}",
        r.delta_psnr, r.delta_ssim
    );
    Ok(())
}
