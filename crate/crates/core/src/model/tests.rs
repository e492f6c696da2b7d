use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::blocks::*;
use super::*;
use crate::autodiff::GRAD_TOLERANCE;
use crate::cfa::PackedInput;
use crate::io::CfaPattern;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

fn conv(g: &mut Graph<f64>, w: Tensor<f64>, b: Tensor<f64>) -> ConvParams {
    ConvParams {
        w: g.input(w),
        b: g.input(b),
    }
}

fn zero_conv(g: &mut Graph<f64>, out: usize, inp: usize, k: usize) -> ConvParams {
    conv(g, Tensor::zeros(&[out, inp, k, k]), Tensor::zeros(&[out]))
}

fn rand_conv(
    g: &mut Graph<f64>,
    rng: &mut ChaCha8Rng,
    out: usize,
    inp: usize,
    k: usize,
    lo: f64,
    hi: f64,
) -> ConvParams {
    let w = random(rng, &[out, inp, k, k], lo, hi);
    let b = random(rng, &[out], lo, hi);
    conv(g, w, b)
}

#[test]
fn first_conv_count() {
    let spec = &ModelConfig::tiny().layout()[0];
    assert_eq!(spec.param_count(), 448);
}

#[test]
fn tiny_count_matches_hand_sum() {
    // Written out layer by layer from the declared shapes.
    let conv = |o: usize, i: usize, k: usize| o * i * k * k + o;
    let (w, h) = (16, 8);
    let block = conv(h, w, 1)
        + conv(h, w, 3)
        + 2 * conv(w, w, 3)
        + conv(w, 2 * w, 3)
        + conv(4, w, 1)
        + conv(w, 4, 1)
        + conv(1, 2, 7);
    let total = conv(w, 3, 3) + conv(w, w, 3) + 2 * block + conv(3, w, 3);
    assert_eq!(block, 10807);
    assert_eq!(total, 24817);
    assert_eq!(ModelConfig::tiny().param_count(), total);
    assert_eq!(
        Model::<f32>::zeros(ModelConfig::tiny())
            .unwrap()
            .param_count(),
        total
    );
}

#[test]
fn presets_grow() {
    let counts: Vec<usize> = ["tiny", "medium", "large16", "large32", "large64"]
        .iter()
        .map(|n| ModelConfig::by_name(n).unwrap().param_count())
        .collect();
    assert!(counts.windows(2).all(|w| w[0] < w[1]), "{counts:?}");
}

#[test]
fn count_grows_with_blocks_and_width() {
    for blocks in 1..6 {
        let a = ModelConfig {
            blocks,
            ..ModelConfig::tiny()
        };
        let b = ModelConfig {
            blocks: blocks + 1,
            ..a
        };
        let c = ModelConfig { width: 32, ..a };
        assert!(a.param_count() < b.param_count());
        assert!(a.param_count() < c.param_count());
    }
}

#[test]
fn four_channel_layout() {
    let cfg = ModelConfig {
        split_mode: SplitMode::FourChannel,
        ..ModelConfig::tiny()
    };
    let layout = cfg.layout();
    assert_eq!(layout[0].in_channels, 4);
    assert_eq!(layout.last().unwrap().out_channels, 12);
    let no_tm = ModelConfig {
        tone_mapping: false,
        ..ModelConfig::tiny()
    };
    assert!(!no_tm.layout().iter().any(|l| l.name.contains("tone")));
}

#[test]
fn invalid_configs() {
    let base = ModelConfig::tiny();
    for bad in [
        ModelConfig { blocks: 0, ..base },
        ModelConfig { width: 2, ..base },
        ModelConfig { width: 15, ..base },
        ModelConfig {
            tm_levels: 0,
            ..base
        },
        ModelConfig {
            attention_reduction: 3,
            ..base
        },
    ] {
        assert!(
            matches!(bad.validate(), Err(ModelError::Config(_))),
            "{bad:?}"
        );
    }
}

#[test]
fn input_module_range_and_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::new();
    let x = g.input(random(&mut rng, &[3, 64, 64], -5.0, 5.0));
    let c1 = rand_conv(&mut g, &mut rng, 16, 3, 3, -0.2, 0.2);
    let c2 = rand_conv(&mut g, &mut rng, 16, 16, 3, -0.1, 0.1);
    let y = input_module(&mut g, x, c1, c2).unwrap();
    assert_eq!(g.value(y).shape(), &[16, 64, 64]);
    assert!(g.value(y).data().iter().all(|v| v.abs() < 1.0));
}

#[test]
fn texture_shape_and_odd_width() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut g = Graph::new();
    let f = g.input(random(&mut rng, &[16, 32, 32], -1.0, 1.0));
    let a = rand_conv(&mut g, &mut rng, 8, 16, 1, -0.5, 0.5);
    let b = rand_conv(&mut g, &mut rng, 8, 16, 3, -0.5, 0.5);
    let y = texture_module(&mut g, f, a, b).unwrap();
    assert_eq!(g.value(y).shape(), &[16, 32, 32]);

    let odd = g.input(Tensor::zeros(&[5, 4, 4]));
    let a = zero_conv(&mut g, 2, 5, 1);
    let b = zero_conv(&mut g, 2, 5, 3);
    assert!(matches!(
        texture_module(&mut g, odd, a, b),
        Err(ModelError::OddWidth(5))
    ));
}

// Columns and rows touched when one input pixel changes.
fn support(before: &Tensor<f64>, after: &Tensor<f64>) -> (Vec<usize>, Vec<usize>) {
    let (c, h, w) = before.chw().unwrap();
    let mut rows = vec![];
    let mut cols = vec![];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let i = (ch * h + y) * w + x;
                if before.data()[i] != after.data()[i] {
                    rows.push(y);
                    cols.push(x);
                }
            }
        }
    }
    rows.sort();
    rows.dedup();
    cols.sort();
    cols.dedup();
    (rows, cols)
}

fn branch_responses(input: &Tensor<f64>, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new();
    let t = g.input(input.clone());
    // Positive weights and inputs keep every relu open, so a change anywhere
    // in the receptive field shows up in the output.
    let fine = rand_conv(&mut g, &mut rng, 8, 8, 1, 0.1, 0.5);
    let levels = [
        rand_conv(&mut g, &mut rng, 8, 8, 3, 0.1, 0.5),
        rand_conv(&mut g, &mut rng, 8, 8, 3, 0.1, 0.5),
    ];
    let a = conv_same(&mut g, t, fine).unwrap();
    let a = g.relu(a);
    let s = illumination(&mut g, t, &levels).unwrap();
    (g.value(a).clone(), g.value(s).clone())
}

#[test]
fn impulse_support_of_branches() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base = random(&mut rng, &[8, 32, 32], 0.2, 1.0);
    let mut bumped = base.clone();
    bumped.data_mut()[(3 * 32 + 13) * 32 + 18] += 0.5;
    let (a0, s0) = branch_responses(&base, 4);
    let (a1, s1) = branch_responses(&bumped, 4);

    assert_eq!(support(&a0, &a1), (vec![13], vec![18]));

    let (rows, cols) = support(&s0, &s1);
    let extent = |v: &[usize]| v.last().unwrap() - v.first().unwrap() + 1;
    assert!(
        extent(&rows) >= 4 && extent(&cols) >= 4,
        "{rows:?} {cols:?}"
    );
    assert!(rows.contains(&13) && cols.contains(&18));
}

#[test]
fn tone_mapping_zero_weights_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut g = Graph::new();
    let x = random(&mut rng, &[8, 16, 16], -1.0, 1.0);
    let t = g.input(x.clone());
    let levels = [zero_conv(&mut g, 8, 8, 3), zero_conv(&mut g, 8, 8, 3)];
    let r = tone_mapping_module(&mut g, t, &levels).unwrap();
    assert_eq!(g.value(r), &x);
}

#[test]
fn tone_mapping_is_t_minus_s() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut g = Graph::new();
    let t = g.input(random(&mut rng, &[8, 16, 16], 0.0, 1.0));
    let levels = [
        rand_conv(&mut g, &mut rng, 8, 8, 3, -0.3, 0.3),
        rand_conv(&mut g, &mut rng, 8, 8, 3, -0.3, 0.3),
    ];
    let s = illumination(&mut g, t, &levels).unwrap();
    let r = tone_mapping_module(&mut g, t, &levels).unwrap();
    let (tv, sv, rv) = (g.value(t), g.value(s), g.value(r));
    assert_eq!(rv.shape(), tv.shape());
    for i in 0..tv.len() {
        assert_eq!(rv.data()[i], tv.data()[i] - sv.data()[i]);
    }
}

#[test]
fn tone_mapping_rejects_indivisible() {
    let mut g = Graph::new();
    let t = g.input(Tensor::zeros(&[4, 6, 8]));
    let levels = [zero_conv(&mut g, 4, 4, 3), zero_conv(&mut g, 4, 4, 3)];
    assert!(matches!(
        tone_mapping_module(&mut g, t, &levels),
        Err(ModelError::NotDivisible {
            height: 6,
            width: 8,
            factor: 4
        })
    ));
}

#[test]
fn attention_zero_weights_halve() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut g = Graph::new();
    let x = random(&mut rng, &[8, 10, 10], -1.0, 1.0);
    let f = g.input(x.clone());
    let sq = rand_conv(&mut g, &mut rng, 2, 8, 1, -1.0, 1.0);
    let ex = zero_conv(&mut g, 8, 2, 1);
    let ca = channel_attention(&mut g, f, sq, ex).unwrap();
    let sp = zero_conv(&mut g, 1, 2, 7);
    let sa = spatial_attention(&mut g, f, sp).unwrap();
    let half = x.map(|v| v / 2.0);
    assert_eq!(g.value(ca), &half);
    assert_eq!(g.value(sa), &half);
}

#[test]
fn attention_scale_structure() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut g = Graph::new();
    let x = random(&mut rng, &[8, 10, 10], 0.5, 1.5);
    let f = g.input(x.clone());
    let sq = rand_conv(&mut g, &mut rng, 2, 8, 1, -1.0, 1.0);
    let ex = rand_conv(&mut g, &mut rng, 8, 2, 1, -1.0, 1.0);
    let sp = rand_conv(&mut g, &mut rng, 1, 2, 7, -0.3, 0.3);
    let ca = channel_attention(&mut g, f, sq, ex).unwrap();
    let sa = spatial_attention(&mut g, f, sp).unwrap();
    let (ca, sa) = (g.value(ca), g.value(sa));
    let n = 100;
    // Channel attention: one ratio per channel.
    for c in 0..8 {
        let r0 = ca.data()[c * n] / x.data()[c * n];
        assert!(r0 > 0.0 && r0 < 1.0);
        for i in 0..n {
            assert!((ca.data()[c * n + i] / x.data()[c * n + i] - r0).abs() < 1e-12);
        }
    }
    // Spatial attention: one ratio per position.
    for i in 0..n {
        let r0 = sa.data()[i] / x.data()[i];
        for c in 0..8 {
            assert!((sa.data()[c * n + i] / x.data()[c * n + i] - r0).abs() < 1e-12);
        }
    }
}

fn zero_block(g: &mut Graph<f64>, w: usize, levels: usize) -> BlockParams {
    BlockParams {
        texture_fine: zero_conv(g, w / 2, w, 1),
        texture_coarse: zero_conv(g, w / 2, w, 3),
        tone: (0..levels).map(|_| zero_conv(g, w, w, 3)).collect(),
        fuse: zero_conv(g, w, 2 * w, 3),
        squeeze: zero_conv(g, w / 4, w, 1),
        excite: zero_conv(g, w, w / 4, 1),
        spatial: zero_conv(g, 1, 2, 7),
    }
}

#[test]
fn zero_block_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for levels in [0, 2] {
        let mut g = Graph::new();
        let x = random(&mut rng, &[8, 16, 16], -3.0, 3.0);
        let f = g.input(x.clone());
        let p = zero_block(&mut g, 8, levels);
        let y = rmfa_block(&mut g, f, &p).unwrap();
        assert_eq!(g.value(y), &x);
    }
}

#[test]
fn zero_fuse_weights_bias_only() {
    // With the fuse convolution reduced to a bias b, z = relu(b) is constant
    // per channel, CA scales by 1/2 and SA by sigmoid(0) = 1/2 as well.
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut g = Graph::new();
    let x = random(&mut rng, &[8, 8, 8], -1.0, 1.0);
    let f = g.input(x.clone());
    let mut p = zero_block(&mut g, 8, 2);
    let bias: Vec<f64> = (0..8).map(|c| c as f64 * 0.25 - 0.5).collect();
    p.fuse = conv(
        &mut g,
        Tensor::zeros(&[8, 16, 3, 3]),
        Tensor::new(&[8], bias.clone()).unwrap(),
    );
    let y = rmfa_block(&mut g, f, &p).unwrap();
    let expected = Tensor::from_fn(&[8, 8, 8], |i| x.data()[i] + bias[i / 64].max(0.0) * 0.25);
    assert!(g.value(y).max_abs_diff(&expected) < 1e-15);
}

#[test]
fn composed_cases_pass_finite_differences() {
    for case in checks::composed_cases() {
        let report = case.check().unwrap();
        assert!(report.passed(GRAD_TOLERANCE), "{}: {report:?}", case.name);
    }
}

fn packed(mode: SplitMode, size: usize, rng: &mut ChaCha8Rng) -> PackedInput {
    let (c, s) = match mode {
        SplitMode::ThreeChannel => (3, size),
        SplitMode::FourChannel => (4, size / 2),
    };
    PackedInput {
        mode,
        pattern: CfaPattern::Rggb,
        tensor: random(rng, &[c, s, s], 0.0, 1.0),
    }
}

#[test]
fn forward_shapes_and_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for mode in [SplitMode::ThreeChannel, SplitMode::FourChannel] {
        let model = Model::<f32>::init(
            ModelConfig {
                split_mode: mode,
                ..ModelConfig::tiny()
            },
            1,
        )
        .unwrap();
        let y = model.infer(&packed(mode, 64, &mut rng)).unwrap();
        assert_eq!(y.shape(), &[3, 64, 64]);
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn forward_saturated_head_stays_open() {
    let mut model = Model::<f32>::init(ModelConfig::tiny(), 2).unwrap();
    let n = model.layers().len();
    for (sign, bias) in [(1.0f32, 1e4f32), (-1.0, -1e4)] {
        model.layers_mut()[n - 1].bias = Tensor::full(&[3], sign * bias);
        let y = model
            .infer(&packed(
                SplitMode::ThreeChannel,
                16,
                &mut ChaCha8Rng::seed_from_u64(0),
            ))
            .unwrap();
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn forward_mode_mismatch() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let model = Model::<f32>::init(ModelConfig::tiny(), 1).unwrap();
    let err = model
        .infer(&packed(SplitMode::FourChannel, 32, &mut rng))
        .unwrap_err();
    assert!(matches!(
        err,
        ModelError::ModeMismatch {
            expected: 3,
            got: 4,
            ..
        }
    ));

    let mut g = Graph::new();
    let x = g.input(Tensor::<f32>::zeros(&[4, 16, 16]));
    assert!(matches!(
        model.forward(&mut g, x),
        Err(ModelError::ModeMismatch { .. })
    ));
    let x = g.input(Tensor::<f32>::zeros(&[3, 18, 16]));
    assert!(matches!(
        model.forward(&mut g, x),
        Err(ModelError::NotDivisible { .. })
    ));
}

#[test]
fn forward_params_match_parameters() {
    let model = Model::<f64>::init(ModelConfig::tiny(), 3).unwrap();
    let mut g = Graph::new();
    let x = g.input(Tensor::full(&[3, 8, 8], 0.5));
    let pass = model.forward(&mut g, x).unwrap();
    assert_eq!(pass.params.len(), model.parameters().count());
    for (v, t) in pass.params.iter().zip(model.parameters()) {
        assert_eq!(g.value(*v), t);
        assert!(g.requires_grad(*v));
    }
}

#[test]
fn init_is_seeded() {
    let a = Model::<f32>::init(ModelConfig::tiny(), 7).unwrap();
    let b = Model::<f32>::init(ModelConfig::tiny(), 7).unwrap();
    let c = Model::<f32>::init(ModelConfig::tiny(), 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    for l in a.layers() {
        let fan_in = (l.spec.in_channels * l.spec.kernel * l.spec.kernel) as f32;
        assert!(l
            .weight
            .data()
            .iter()
            .all(|w| w.abs() <= 1.0 / fan_in.sqrt()));
        assert!(l.bias.data().iter().all(|&b| b == 0.0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = packed(SplitMode::ThreeChannel, 16, &mut rng);
    assert_eq!(a.infer(&x).unwrap(), b.infer(&x).unwrap());
}

#[test]
fn weight_file_size() {
    let m = Model::<f32>::zeros(ModelConfig::tiny()).unwrap();
    let mut buf = vec![];
    let n = write_weights(&m, &mut buf).unwrap();
    assert_eq!(n, WEIGHTS_HEADER_LEN + 4 * 24817);
    assert_eq!(&buf[..4], WEIGHTS_MAGIC);
}

#[test]
fn load_rejects_other_config() {
    let small = Model::<f32>::init(
        ModelConfig {
            blocks: 1,
            ..ModelConfig::tiny()
        },
        1,
    )
    .unwrap();
    let mut buf = vec![];
    write_weights(&small, &mut buf).unwrap();
    let mut tiny = Model::<f32>::zeros(ModelConfig::tiny()).unwrap();
    assert!(matches!(
        tiny.load_weights(&buf[..]),
        Err(ModelError::ConfigMismatch { .. })
    ));
    assert!(matches!(
        read_weights(&buf[..buf.len() - 1]),
        Err(ModelError::Format(_))
    ));
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(read_weights(&bad[..]), Err(ModelError::Format(_))));
    let mut bad = buf.clone();
    bad[12] ^= 1;
    assert!(matches!(read_weights(&bad[..]), Err(ModelError::Format(_))));
}

fn arb_config() -> impl Strategy<Value = ModelConfig> {
    (
        1usize..3,
        prop_oneof![Just(4usize), Just(8)],
        any::<bool>(),
        any::<bool>(),
        1usize..3,
    )
        .prop_map(
            |(blocks, width, four, tone_mapping, tm_levels)| ModelConfig {
                blocks,
                width,
                split_mode: if four {
                    SplitMode::FourChannel
                } else {
                    SplitMode::ThreeChannel
                },
                tone_mapping,
                tm_levels,
                attention_reduction: 2,
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn weights_round_trip(config in arb_config(), seed in any::<u64>()) {
        let mut model = Model::<f32>::init(config, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in model.parameters_mut() {
            for v in t.data_mut() {
                *v += rng.random_range(-0.1f32..0.1);
            }
        }
        let mut buf = vec![];
        write_weights(&model, &mut buf).unwrap();
        let back = read_weights(&buf[..]).unwrap();
        prop_assert_eq!(&back, &model);

        let mut into = Model::<f32>::zeros(config).unwrap();
        into.load_weights(&buf[..]).unwrap();
        prop_assert_eq!(&into, &model);

        let x = packed(config.split_mode, 16, &mut rng);
        let (a, b) = (model.infer(&x).unwrap(), back.infer(&x).unwrap());
        prop_assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}
