//! Black-level correction, the two packings, and the bilinear baseline on
//! one synthetic frame.

use rmfa::cfa::{bilinear_demosaic, black_level_correct, split_four, split_three};
use rmfa::metrics::{psnr, ssim};
use rmfa::synth::{generate_pairs, SceneKind, SynthParams};

fn main() -> anyhow::Result<()> {
    let params = SynthParams {
        s_min: 1.0,
        ..SynthParams::default()
    };
    let pair = generate_pairs(1, 64, &params, 3, SceneKind::Mixed)?.remove(0);
    let plane = black_level_correct(&pair.raw)?;
    let three = split_three(&plane, pair.raw.pattern);
    let four = split_four(&plane, pair.raw.pattern);
    println!(
        "raw {}x{} {} -> three-channel {:?}, four-channel {:?}",
        plane.width,
        plane.height,
        pair.raw.pattern,
        three.tensor.shape(),
        four.tensor.shape()
    );
    let filled = three.tensor.data().iter().filter(|&&v| v == 1.0).count();
    println!(
        "three-channel sites filled with 1: {filled} of {}",
        three.tensor.len()
    );

    let linear = bilinear_demosaic(&plane, pair.raw.pattern);
    let display = linear.map(|v| v.clamp(0.0, 1.0).powf(1.0 / 2.2));
    let target = pair.target.to_tensor();
    println!(
        "bilinear + gamma vs target: PSNR {:.2} dB, SSIM {:.4}",
        psnr(&display, &target)?,
        ssim(&display, &target)?
    );
    Ok(())
}
