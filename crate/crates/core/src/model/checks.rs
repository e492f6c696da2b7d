//! Finite-difference cases over composed network pieces.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::blocks::{self, BlockParams, ConvParams};
use super::{Model, ModelConfig};
use crate::autodiff::{GradCase, Graph, Var};
use crate::cfa::SplitMode;
use crate::tensor::Tensor;

fn block_config(width: usize) -> ModelConfig {
    ModelConfig {
        blocks: 1,
        width,
        ..ModelConfig::tiny()
    }
}

/// One residual block with random weights on a random `width x size x size`
/// input. Inputs are `[f, w0, b0, w1, b1, ...]` in layout order.
pub fn block_case(width: usize, size: usize, seed: u64) -> GradCase {
    let config = block_config(width);
    let model = Model::<f64>::init(config, seed).expect("valid block config");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut inputs = vec![Tensor::from_fn(&[width, size, size], |_| {
        rng.random_range(-2.0..2.0)
    })];
    // Skip the input and output convolutions; keep only the block's layers.
    let layers = &model.layers()[2..model.layers().len() - 1];
    for layer in layers {
        inputs.push(layer.weight.clone());
        // Non-zero biases so that no unit sits exactly on a relu kink.
        inputs.push(Tensor::from_fn(layer.bias.shape(), |_| {
            rng.random_range(-0.1..0.1)
        }));
    }
    let tone = config.tm_levels;
    GradCase::new(
        format!("rmfa_block_w{width}_{size}x{size}"),
        inputs,
        move |g, v| {
            let conv = |i: usize| ConvParams {
                w: v[1 + 2 * i],
                b: v[2 + 2 * i],
            };
            let p = BlockParams {
                texture_fine: conv(0),
                texture_coarse: conv(1),
                tone: (0..tone).map(|l| conv(2 + l)).collect(),
                fuse: conv(2 + tone),
                squeeze: conv(3 + tone),
                excite: conv(4 + tone),
                spatial: conv(5 + tone),
            };
            let out = blocks::rmfa_block(g, v[0], &p).map_err(|e| match e {
                super::ModelError::Graph(ge) => ge,
                other => unreachable!("shapes fixed by a valid config: {other}"),
            })?;
            crate::autodiff::project(g, out, seed)
        },
    )
}

/// A whole model (input module, `blocks` blocks, head, sigmoid) on a packed
/// `size x size` input. Inputs are `[x, w0, b0, ...]` in layout order.
pub fn model_case(config: ModelConfig, size: usize, seed: u64) -> GradCase {
    let model = Model::<f64>::init(config, seed).expect("valid config");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xface);
    let (c, s) = match config.split_mode {
        SplitMode::ThreeChannel => (3, size),
        SplitMode::FourChannel => (4, size / 2),
    };
    let mut inputs = vec![Tensor::from_fn(&[c, s, s], |_| rng.random_range(0.0..1.0))];
    for layer in model.layers() {
        inputs.push(layer.weight.clone());
        inputs.push(Tensor::from_fn(layer.bias.shape(), |_| {
            rng.random_range(-0.1..0.1)
        }));
    }
    let name = format!(
        "model_{}blk_w{}_{}x{}_{}",
        config.blocks, config.width, size, size, config.split_mode
    );
    GradCase::new(name, inputs, move |g, v| {
        // Only the layer grouping of `m` is used; values come from `v`.
        let m = Model::<f64>::zeros(config).expect("valid config");
        let bound: Vec<ConvParams> = (0..m.layers().len())
            .map(|i| ConvParams {
                w: v[1 + 2 * i],
                b: v[2 + 2 * i],
            })
            .collect();
        let (c1, c2, blks, head) = m.structure(&bound);
        let run = |g: &mut Graph<f64>| -> Result<Var, super::ModelError> {
            let mut f = blocks::input_module(g, v[0], c1, c2)?;
            for b in &blks {
                f = blocks::rmfa_block(g, f, b)?;
            }
            let mut out = blocks::conv_same(g, f, head)?;
            if config.split_mode == SplitMode::FourChannel {
                out = g.pixel_shuffle(out, 2)?;
            }
            Ok(g.sigmoid(out))
        };
        let out = run(g).map_err(|e| match e {
            super::ModelError::Graph(ge) => ge,
            other => unreachable!("shapes fixed by a valid config: {other}"),
        })?;
        crate::autodiff::project(g, out, seed)
    })
}

/// Step for whole-model cases. Behind the output sigmoid some weight
/// gradients are near 1e-8, and at the default step the rounding of the
/// outputs alone moves the difference quotient by about 1e-4 of that.
pub const MODEL_EPS: f64 = 1e-3;

/// Cases run by the gradient suite on top of the primitive cases.
pub fn composed_cases() -> Vec<GradCase> {
    let tiny = ModelConfig {
        blocks: 1,
        width: 8,
        attention_reduction: 4,
        ..ModelConfig::tiny()
    };
    vec![
        block_case(8, 16, 11),
        model_case(tiny, 16, 12).with_eps(MODEL_EPS),
        model_case(
            ModelConfig {
                split_mode: SplitMode::FourChannel,
                ..tiny
            },
            16,
            13,
        )
        .with_eps(MODEL_EPS),
    ]
}
