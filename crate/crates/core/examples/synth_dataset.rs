//! Generates a small synthetic dataset and reads its manifest back.
//!
//! cargo run --release --example synth_dataset -- [out_dir]

use rmfa::synth::{generate_dataset, read_manifest, SceneKind, SynthParams, MANIFEST_NAME};

fn main() -> anyhow::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("rmfa_synth"), Into::into);
    let params = SynthParams {
        noise_sigma: 2.0,
        ..SynthParams::default()
    };
    let records = generate_dataset(&out, 4, 64, &params, 42, SceneKind::Mixed)?;
    for r in &records {
        println!("{}  {}  seed {}", r.raw, r.rgb, r.seed);
    }
    let pairs = read_manifest(&out.join(MANIFEST_NAME))?;
    println!(
        "{} pairs listed in {}",
        pairs.len(),
        out.join(MANIFEST_NAME).display()
    );
    Ok(())
}
