//! Trains a tiny model briefly, saves it, and reconstructs a raw frame from
//! disk with the loaded weights.
//!
//! cargo run --release --example reconstruct -- [out_dir]

use rmfa::cfa::{black_level_correct, pack};
use rmfa::io::{load_raw, save_ppm, save_raw, RgbImage};
use rmfa::model::Model;
use rmfa::synth::{generate_pairs, SceneKind, SynthParams};
use rmfa::train::{samples_from_pairs, Schedule, TrainConfig, Trainer};

fn main() -> anyhow::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("rmfa_reconstruct"), Into::into);
    std::fs::create_dir_all(&out)?;
    let pairs = generate_pairs(4, 32, &SynthParams::default(), 5, SceneKind::Mixed)?;
    let config = TrainConfig {
        epochs: 50,
        batch_size: 4,
        schedule: Schedule {
            period: 50,
            ..Schedule::default()
        },
        checkpoint_every: 0,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(config)?;
    trainer.fit(&samples_from_pairs(&pairs)?, |_, _| Ok(()))?;
    let weights = out.join("tiny.rmfw");
    trainer.model().save(&weights)?;
    save_raw(&pairs[0].raw, out.join("frame.rawi"))?;

    let model = Model::load(&weights)?;
    let raw = load_raw(out.join("frame.rawi"))?;
    let plane = black_level_correct(&raw)?;
    let pred = model.infer(&pack(&plane, raw.pattern, model.config().split_mode))?;
    save_ppm(&RgbImage::from_tensor(&pred)?, out.join("frame.ppm"))?;
    println!("wrote {}", out.join("frame.ppm").display());
    Ok(())
}
