//! Aliasing of the green samples under the two packings of a zone plate.

use rmfa::io::CfaPattern;
use rmfa::synth::nyquist_demo;

fn main() {
    println!(
        "{:>6} {:>12} {:>12} {:>7}",
        "k_max", "four", "three", "ratio"
    );
    for k_max in [0.25, 0.5, 0.75, 1.0] {
        let r = nyquist_demo(128, k_max, CfaPattern::Rggb, 0.125);
        println!(
            "{k_max:>6.2} {:>12.4e} {:>12.4e} {:>7.2}",
            r.four_channel,
            r.three_channel,
            r.ratio()
        );
    }
}
