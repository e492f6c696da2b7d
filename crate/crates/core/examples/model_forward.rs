//! Preset sizes and one untrained forward pass in each packing mode.

use rmfa::cfa::{black_level_correct, pack, SplitMode};
use rmfa::model::{Model, ModelConfig};
use rmfa::synth::{generate_pairs, SceneKind, SynthParams};

fn main() -> anyhow::Result<()> {
    for (name, c) in [
        ("tiny", ModelConfig::tiny()),
        ("medium", ModelConfig::medium()),
        ("large-W16", ModelConfig::large(16)),
        ("large-W32", ModelConfig::large(32)),
        ("large-W64", ModelConfig::large(64)),
    ] {
        println!("{name:<10} {:>9} parameters", c.param_count());
    }
    let pair = generate_pairs(1, 32, &SynthParams::default(), 1, SceneKind::Mixed)?.remove(0);
    let plane = black_level_correct(&pair.raw)?;
    for mode in [SplitMode::ThreeChannel, SplitMode::FourChannel] {
        let model = Model::<f32>::init(
            ModelConfig {
                split_mode: mode,
                ..ModelConfig::tiny()
            },
            9,
        )?;
        let input = pack(&plane, pair.raw.pattern, mode);
        let out = model.infer(&input)?;
        let (lo, hi) = out
            .data()
            .iter()
            .fold((1.0f32, 0.0f32), |(a, b), &v| (a.min(v), b.max(v)));
        println!(
            "{mode}: input {:?} -> output {:?} in [{lo:.4}, {hi:.4}]",
            input.tensor.shape(),
            out.shape()
        );
    }
    Ok(())
}
