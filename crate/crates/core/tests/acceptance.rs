//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rmfa::autodiff::{primitive_cases, GRAD_TOLERANCE};
use rmfa::cfa::{pack, NormalizedPlane, SplitMode};
use rmfa::io::{read_ppm, read_raw, write_ppm, write_raw, CfaPattern, RawImage, RgbImage};
use rmfa::metrics::ssim;
use rmfa::model::checks::composed_cases;
use rmfa::model::{read_weights, write_weights, Model, ModelConfig};
use rmfa::synth::{generate_pairs, nyquist_demo, SceneKind, SynthParams};
use rmfa::train::{
    evaluate, evaluate_baseline, run_ablation, samples_from_pairs, AblationBudget, AblationKind,
    Adam, Schedule, TrainConfig, Trainer,
};
use rmfa::Tensor;

/// Per-arm budget for the two ablation criteria.
const ABLATION_BUDGET: AblationBudget = AblationBudget {
    steps: 1500,
    pairs: 40,
    size: 48,
    patch: 32,
    batch_size: 6,
};
const ABLATION_SEEDS: [u64; 5] = [100, 101, 102, 103, 104];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn c1_not_reproducible() -> Outcome {
    outcome(
        true,
        "headline 25.1 dB / 0.889 SSIM needs the 24,000-pair UltraISP set and 1000 epochs; \
         replaced by the synthetic criteria below",
    )
}

fn c2_gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut cases = primitive_cases();
    cases.extend(composed_cases());
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for case in &cases {
        match case.check() {
            Ok(r) => {
                worst = worst.max(r.max_rel_error);
                if !r.passed(GRAD_TOLERANCE) {
                    failures.push(format!("{} ({:.2e})", case.name, r.max_rel_error));
                }
            }
            Err(e) => failures.push(format!("{}: {e}", case.name)),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let has_block = cases.iter().any(|c| c.name.contains("block"));
    outcome(
        failures.is_empty() && secs < 60.0 && has_block,
        format!(
            "{} cases, worst rel err {worst:.2e}, {secs:.1}s, failures {failures:?}",
            cases.len()
        ),
    )
}

/// Direct sliding-window SSIM: a fresh 11x11 Gaussian (sigma 1.5) at every
/// valid position, statistics summed in place.
fn brute_ssim(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let (c, h, w) = a.chw().unwrap();
    let mut win = [[0.0f64; 11]; 11];
    let mut norm = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            norm += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (mut total, mut count) = (0.0, 0usize);
    for ch in 0..c {
        let (pa, pb) = (a.channel(ch), b.channel(ch));
        for y in 0..=h - 11 {
            for x in 0..=w - 11 {
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let k = win[i][j] / norm;
                        ma += k * pa[(y + i) * w + x + j];
                        mb += k * pb[(y + i) * w + x + j];
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let k = win[i][j] / norm;
                        let (da, db) = (pa[(y + i) * w + x + j] - ma, pb[(y + i) * w + x + j] - mb);
                        va += k * da * da;
                        vb += k * db * db;
                        cov += k * da * db;
                    }
                }
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    total / count as f64
}

fn c3_ssim_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let a = Tensor::from_fn(&[3, 32, 32], |_| rng.random::<f64>());
        let mix = if trial % 4 == 0 {
            0.0
        } else {
            rng.random::<f64>()
        };
        let b = Tensor::from_fn(&[3, 32, 32], |i| {
            (mix * a.data()[i] + (1.0 - mix) * rng.random::<f64>() + 0.05 * rng.random::<f64>())
                .min(1.0)
        });
        let lib = ssim(&a, &b).unwrap();
        worst = worst.max((lib - brute_ssim(&a, &b)).abs());
    }
    outcome(
        worst <= 1e-6,
        format!("100 random 32x32 pairs, max |diff| {worst:.2e}"),
    )
}

fn c4_overfit() -> Outcome {
    let start = Instant::now();
    let pairs = generate_pairs(8, 64, &SynthParams::default(), 7, SceneKind::Mixed).unwrap();
    let data = samples_from_pairs(&pairs).unwrap();
    let steps = 2000;
    let config = TrainConfig {
        model: ModelConfig::tiny(),
        epochs: steps,
        batch_size: 8,
        schedule: Schedule {
            period: steps,
            ..Schedule::default()
        },
        seed: 7,
        patch: 0,
        checkpoint_every: 0,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(config).unwrap();
    trainer.fit(&data, |_, _| Ok(())).unwrap();
    let windows: Vec<f64> = trainer
        .step_losses
        .chunks(100)
        .map(|w| w.iter().sum::<f64>() / w.len() as f64)
        .collect();
    let rise = windows.windows(2).position(|w| w[1] >= w[0]);
    let decreasing = rise.is_none();
    let model = evaluate(trainer.model(), &data).unwrap();
    let base = evaluate_baseline(&data).unwrap();
    let gain = model.mean_psnr - base.mean_psnr;
    outcome(
        decreasing && gain >= 5.0 && trainer.step_losses.len() <= 2000,
        format!(
            "{} steps; window means {:.4} -> {:.4} ({}); train PSNR {:.2} vs baseline {:.2} (+{gain:.2} dB); {:.0}s",
            trainer.step_losses.len(),
            windows[0],
            windows[windows.len() - 1],
            match rise {
                None => "strictly decreasing".to_string(),
                Some(i) => format!("NOT strictly decreasing, window {i} -> {}", i + 1),
            },
            model.mean_psnr,
            base.mean_psnr,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn ablation_criterion(kind: AblationKind) -> Outcome {
    let start = Instant::now();
    let base = TrainConfig::default();
    let deltas: Vec<f64> = ABLATION_SEEDS
        .iter()
        .map(|&s| {
            run_ablation(kind, &base, &ABLATION_BUDGET, s)
                .unwrap()
                .delta_psnr
        })
        .collect();
    let wins = deltas.iter().filter(|&&d| d >= 0.0).count();
    let shown: Vec<String> = deltas.iter().map(|d| format!("{d:+.3}")).collect();
    outcome(
        wins >= 4,
        format!(
            "reference >= ablated in {wins} of 5; dPSNR [{}] dB; {} steps/arm; {:.0}s",
            shown.join(", "),
            ABLATION_BUDGET.steps,
            start.elapsed().as_secs_f64()
        ),
    )
}

/// Separable direct DFT, then the energy fraction with radial frequency in
/// `[0, hi)` cycles per sample.
fn dft_low_fraction(plane: &[f64], n: usize, hi: f64) -> f64 {
    let tw: Vec<(f64, f64)> = (0..n)
        .map(|k| std::f64::consts::TAU * k as f64 / n as f64)
        .map(|t| (t.cos(), -t.sin()))
        .collect();
    let mut rows = vec![(0.0, 0.0); n * n];
    for y in 0..n {
        for k in 0..n {
            let (mut re, mut im) = (0.0, 0.0);
            for x in 0..n {
                let (c, s) = tw[(k * x) % n];
                re += plane[y * n + x] * c;
                im += plane[y * n + x] * s;
            }
            rows[y * n + k] = (re, im);
        }
    }
    let (mut low, mut total) = (0.0, 0.0);
    let f = |k: usize| {
        if k <= n / 2 {
            k as f64 / n as f64
        } else {
            (k as f64 - n as f64) / n as f64
        }
    };
    for kx in 0..n {
        for ky in 0..n {
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..n {
                let (c, s) = tw[(ky * y) % n];
                let (a, b) = rows[y * n + kx];
                re += a * c - b * s;
                im += a * s + b * c;
            }
            let e = re * re + im * im;
            total += e;
            if f(ky).hypot(f(kx)) < hi {
                low += e;
            }
        }
    }
    low / total
}

fn c7_nyquist() -> Outcome {
    let (n, band) = (128usize, 0.125);
    let c = (n as f64 - 1.0) / 2.0;
    let a = std::f64::consts::PI / (2.0 * (2.0 * c * c).sqrt());
    let plate = |y: usize, x: usize| {
        let (dy, dx) = (y as f64 - c, x as f64 - c);
        0.5 + 0.5 * (a * (dy * dy + dx * dx)).sin()
    };
    // RGGB: green where row + col is odd; Gr on even rows.
    let mut gr: Vec<f64> = (0..n / 2)
        .flat_map(|y| (0..n / 2).map(move |x| (2 * y, 2 * x + 1)))
        .map(|(y, x)| plate(y, x))
        .collect();
    let m = gr.iter().sum::<f64>() / gr.len() as f64;
    gr.iter_mut().for_each(|v| *v -= m);
    let green = |y: usize, x: usize| (y + x) % 2 == 1;
    let gm = (0..n * n)
        .filter(|i| green(i / n, i % n))
        .map(|i| plate(i / n, i % n))
        .sum::<f64>()
        / (n * n / 2) as f64;
    let full: Vec<f64> = (0..n * n)
        .map(|i| {
            if green(i / n, i % n) {
                plate(i / n, i % n) - gm
            } else {
                0.0
            }
        })
        .collect();
    let four = dft_low_fraction(&gr, n / 2, 2.0 * band);
    let three = dft_low_fraction(&full, n, band);
    let lib = nyquist_demo(n, 1.0, CfaPattern::Rggb, band);
    let agree = (lib.four_channel - four).abs() < 1e-9 && (lib.three_channel - three).abs() < 1e-9;
    let ratio = four / three;
    outcome(
        ratio >= 2.0 && agree,
        format!(
            "low-band fraction four {four:.4e} / three {three:.4e} = {ratio:.2}; library agrees with direct DFT: {agree}"
        ),
    )
}

fn c8_param_scaling() -> Outcome {
    let presets = [
        ("tiny", ModelConfig::tiny(), 0.022),
        ("medium", ModelConfig::medium(), 0.0798),
        ("large-W16", ModelConfig::large(16), 0.19),
        ("large-W32", ModelConfig::large(32), 0.7726),
        ("large-W64", ModelConfig::large(64), 3.16),
    ];
    let counts: Vec<usize> = presets.iter().map(|p| p.1.param_count()).collect();
    let ordered = counts.windows(2).all(|w| w[0] < w[1]);
    let detail: Vec<String> = presets
        .iter()
        .zip(&counts)
        .map(|((n, _, t), c)| format!("{n} {c} (table {t})"))
        .collect();
    outcome(ordered, detail.join(", "))
}

fn c9_schedule() -> Outcome {
    let s = Schedule::default();
    let start = s.lr(0.0);
    let end = s.lr(100.0 - 1e-9);
    let mid = s.lr(50.0);
    let closed = 1e-7 + 0.5 * (1e-3 - 1e-7) * (1.0 + (std::f64::consts::PI * 0.5).cos());
    let ok = start == 1e-3
        && (end - 1e-7).abs() < 1e-15
        && (mid - closed).abs() <= 1e-12
        && s.lr(100.0) == 1e-3;
    outcome(ok, format!("lr(0) = {start:e}, lr(100^-) = {end:.6e}, lr(50) = {mid:.6e} (closed form {closed:.6e})"))
}

fn random_raw(rng: &mut ChaCha8Rng) -> RawImage {
    let (w, h) = (
        2 * rng.random_range(1..=16u32),
        2 * rng.random_range(1..=16u32),
    );
    let patterns = [
        CfaPattern::Rggb,
        CfaPattern::Bggr,
        CfaPattern::Grbg,
        CfaPattern::Gbrg,
    ];
    let bit_depth = rng.random_range(1..=16u8);
    let max = ((1u32 << bit_depth) - 1) as u16;
    let white = rng.random_range(1..=max);
    let black = rng.random_range(0..white);
    let data = (0..w * h).map(|_| rng.random_range(0..=white)).collect();
    RawImage::new(
        w,
        h,
        patterns[rng.random_range(0..4)],
        black,
        white,
        bit_depth,
        data,
    )
    .unwrap()
}

fn random_model(rng: &mut ChaCha8Rng) -> Model<f32> {
    let width = 2 * rng.random_range(2..=5);
    let divisors: Vec<usize> = (1..=4).filter(|r| width % r == 0).collect();
    let config = ModelConfig {
        blocks: rng.random_range(1..=2),
        width,
        split_mode: if rng.random_bool(0.5) {
            SplitMode::ThreeChannel
        } else {
            SplitMode::FourChannel
        },
        tone_mapping: rng.random_bool(0.5),
        tm_levels: rng.random_range(1..=3),
        attention_reduction: divisors[rng.random_range(0..divisors.len())],
    };
    let mut model = Model::init(config, rng.random()).unwrap();
    for p in model.parameters_mut() {
        for v in p.data_mut() {
            if rng.random_bool(0.1) {
                *v = f32::from_bits(rng.random::<u32>() & 0xbf7f_ffff);
            }
        }
    }
    model
}

fn bits(model: &Model<f32>) -> Vec<u32> {
    model
        .parameters()
        .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
        .collect()
}

fn c10_round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut failures = Vec::new();
    for i in 0..1000 {
        let raw = random_raw(&mut rng);
        let mut buf = Vec::new();
        write_raw(&raw, &mut buf).unwrap();
        if read_raw(buf.as_slice()).ok().as_ref() != Some(&raw) {
            failures.push(format!("raw {i}"));
        }

        let (w, h) = (rng.random_range(1..=24u32), rng.random_range(1..=24u32));
        let ppm = RgbImage::new(w, h, (0..3 * w * h).map(|_| rng.random()).collect()).unwrap();
        let mut buf = Vec::new();
        write_ppm(&ppm, &mut buf).unwrap();
        if read_ppm(buf.as_slice()).ok().as_ref() != Some(&ppm) {
            failures.push(format!("ppm {i}"));
        }

        let model = random_model(&mut rng);
        let mut buf = Vec::new();
        write_weights(&model, &mut buf).unwrap();
        match read_weights(buf.as_slice()) {
            Ok(back) if back.config() == model.config() && bits(&back) == bits(&model) => {}
            _ => failures.push(format!("weights {i}")),
        }

        let model = random_model(&mut rng);
        let mut adam = Adam::new(model.parameters());
        adam.step = rng.random();
        for t in adam.m.iter_mut().chain(adam.v.iter_mut()) {
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        let epoch = rng.random_range(0..100_000);
        let config = TrainConfig {
            model: *model.config(),
            ..TrainConfig::default()
        };
        let trainer = Trainer::from_parts(config.clone(), model, adam, epoch).unwrap();
        let mut buf = Vec::new();
        trainer.write_checkpoint(&mut buf).unwrap();
        match Trainer::read_checkpoint(config, buf.as_slice()) {
            Ok(back)
                if back.epoch() == epoch
                    && back.adam() == trainer.adam()
                    && bits(back.model()) == bits(trainer.model()) => {}
            _ => failures.push(format!("checkpoint {i}")),
        }
    }
    let resume = resume_is_bit_identical();
    outcome(
        failures.is_empty() && resume,
        format!("1000 instances each of RAWI, PPM, weights, checkpoint; failures {failures:?}; resume bit-identical: {resume}"),
    )
}

fn resume_is_bit_identical() -> bool {
    let pairs = generate_pairs(6, 32, &SynthParams::default(), 12, SceneKind::Mixed).unwrap();
    let data = samples_from_pairs(&pairs).unwrap();
    let config = TrainConfig {
        model: ModelConfig {
            blocks: 1,
            width: 8,
            ..ModelConfig::tiny()
        },
        epochs: 6,
        batch_size: 4,
        schedule: Schedule {
            period: 6,
            ..Schedule::default()
        },
        seed: 12,
        patch: 24,
        checkpoint_every: 0,
        ..TrainConfig::default()
    };
    let mut straight = Trainer::new(config.clone()).unwrap();
    straight.fit(&data, |_, _| Ok(())).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.rmfc");
    let mut first = Trainer::new(config.clone()).unwrap();
    for _ in 0..3 {
        first.run_epoch(&data).unwrap();
    }
    first.save_checkpoint(&path).unwrap();
    let mut resumed = Trainer::load_checkpoint(config, &path).unwrap();
    resumed.fit(&data, |_, _| Ok(())).unwrap();
    let tail: Vec<u64> = straight.step_losses[first.step_losses.len()..]
        .iter()
        .map(|v| v.to_bits())
        .collect();
    bits(resumed.model()) == bits(straight.model())
        && resumed.adam() == straight.adam()
        && resumed
            .step_losses
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>()
            == tail
}

fn c11_output_fuzz() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut bad = Vec::new();
    let mut extremes = (f64::INFINITY, f64::NEG_INFINITY);
    for trial in 0..1000 {
        let mode = if trial % 2 == 0 {
            SplitMode::ThreeChannel
        } else {
            SplitMode::FourChannel
        };
        let config = ModelConfig {
            blocks: 1 + trial % 2,
            width: 8,
            split_mode: mode,
            ..ModelConfig::tiny()
        };
        let mut model = Model::<f32>::init(config, rng.random()).unwrap();
        let scale: f32 = [1.0, 1.0, 4.0, 25.0][trial % 4];
        for p in model.parameters_mut() {
            p.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
        let size = 8 * rng.random_range(1..=4usize);
        let data: Vec<f64> = (0..size * size)
            .map(|_| match rng.random_range(0..10) {
                0 => 0.0,
                1 => 1.0,
                2 => rng.random_range(-50.0..50.0),
                _ => rng.random::<f64>(),
            })
            .collect();
        let plane = NormalizedPlane::new(size, size, data).unwrap();
        let patterns = [
            CfaPattern::Rggb,
            CfaPattern::Bggr,
            CfaPattern::Grbg,
            CfaPattern::Gbrg,
        ];
        let input = pack(&plane, patterns[trial % 4], mode);
        let out = model.infer(&input).unwrap();
        let ok_shape = out.shape() == [3, size, size];
        let ok_range = out
            .data()
            .iter()
            .all(|&v| v.is_finite() && v > 0.0 && v < 1.0);
        for &v in out.data() {
            extremes = (extremes.0.min(f64::from(v)), extremes.1.max(f64::from(v)));
        }
        if !(ok_shape && ok_range) {
            bad.push(trial);
        }
    }
    outcome(
        bad.is_empty(),
        format!(
            "1000 trials, both split modes; output range [{:.3e}, {:.7}]; failing trials {bad:?}",
            extremes.0, extremes.1
        ),
    )
}

type Criterion = (usize, &'static str, fn() -> Outcome);

fn main() {
    let only: Vec<usize> = std::env::var("RMFA_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect())
        .unwrap_or_default();
    let criteria: [Criterion; 11] = [
        (
            1,
            "headline metrics not reproducible at desk scale",
            c1_not_reproducible,
        ),
        (2, "gradient suite", c2_gradient_suite),
        (3, "SSIM matches brute-force reference", c3_ssim_oracle),
        (4, "tiny preset overfits 8 pairs", c4_overfit),
        (
            5,
            "three-channel split beats four-channel on zone plates",
            || ablation_criterion(AblationKind::Split),
        ),
        (6, "tone mapping helps under uneven illumination", || {
            ablation_criterion(AblationKind::Tonemap)
        }),
        (
            7,
            "four-channel G sub-plane aliases at least twice as much",
            c7_nyquist,
        ),
        (8, "parameter count ordering", c8_param_scaling),
        (9, "cosine schedule with warm restarts", c9_schedule),
        (
            10,
            "format round trips and bit-identical resume",
            c10_round_trips,
        ),
        (11, "output contract under fuzzing", c11_output_fuzz),
    ];
    let mut failed = Vec::new();
    for (n, title, run) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let o = run();
        println!(
            "criterion {n:>2} [{}] {title}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.passed {
            failed.push(n);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
