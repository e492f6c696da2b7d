//! The residual multi-frequency attention network.
//!
//! A model is an input module (two 3x3 convolutions and `tanh`), a stack of
//! residual blocks, and an output convolution with a sigmoid. In four-channel
//! mode the head emits 12 channels at half resolution which a pixel shuffle
//! turns into full-resolution RGB.

pub mod blocks;
pub mod checks;
mod weights;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, GraphError, Var};
use crate::cfa::{PackedInput, SplitMode};
use crate::tensor::{Scalar, Tensor};

pub use blocks::{BlockParams, ConvParams};
pub use weights::{read_weights, write_weights, WEIGHTS_HEADER_LEN, WEIGHTS_MAGIC};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("texture module needs an even width, got {0}")]
    OddWidth(usize),
    #[error("{height}x{width} is not divisible by the illumination pyramid factor {factor}")]
    NotDivisible {
        height: usize,
        width: usize,
        factor: usize,
    },
    #[error("input has {got} channels but the model expects {expected} ({mode} split)")]
    ModeMismatch {
        expected: usize,
        got: usize,
        mode: SplitMode,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("weight file: {0}")]
    Format(String),
    #[error("weight file config {found:?} does not match model config {expected:?}")]
    ConfigMismatch {
        expected: ModelConfig,
        found: ModelConfig,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub blocks: usize,
    pub width: usize,
    pub split_mode: SplitMode,
    pub tone_mapping: bool,
    pub tm_levels: usize,
    pub attention_reduction: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::tiny()
    }
}

impl ModelConfig {
    fn preset(blocks: usize, width: usize) -> Self {
        Self {
            blocks,
            width,
            split_mode: SplitMode::ThreeChannel,
            tone_mapping: true,
            tm_levels: 2,
            attention_reduction: 4,
        }
    }

    /// Two blocks of width 16.
    pub fn tiny() -> Self {
        Self::preset(2, 16)
    }

    /// Eight blocks of width 16.
    pub fn medium() -> Self {
        Self::preset(8, 16)
    }

    /// Twenty blocks; the published widths are 16, 32 and 64.
    pub fn large(width: usize) -> Self {
        Self::preset(20, width)
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "tiny" => Some(Self::tiny()),
            "medium" => Some(Self::medium()),
            "large" | "large16" => Some(Self::large(16)),
            "large32" => Some(Self::large(32)),
            "large64" => Some(Self::large(64)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.blocks == 0 || self.blocks > u8::MAX as usize {
            return bad(format!("blocks must be in 1..=255, got {}", self.blocks));
        }
        if self.width < 4 || !self.width.is_multiple_of(2) || self.width > u16::MAX as usize {
            return bad(format!(
                "width must be even and at least 4, got {}",
                self.width
            ));
        }
        if self.tm_levels == 0 || self.tm_levels > 8 {
            return bad(format!(
                "tm_levels must be in 1..=8, got {}",
                self.tm_levels
            ));
        }
        let r = self.attention_reduction;
        if r == 0 || r > u8::MAX as usize || !self.width.is_multiple_of(r) {
            return bad(format!(
                "attention reduction {r} must divide width {}",
                self.width
            ));
        }
        Ok(())
    }

    /// Image sides must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        let pyramid = if self.tone_mapping {
            1 << self.tm_levels
        } else {
            1
        };
        match self.split_mode {
            SplitMode::ThreeChannel => pyramid.max(2),
            SplitMode::FourChannel => 2 * pyramid,
        }
    }

    pub fn output_channels(&self) -> usize {
        match self.split_mode {
            SplitMode::ThreeChannel => 3,
            SplitMode::FourChannel => 12,
        }
    }

    /// Every convolution in serialization order.
    pub fn layout(&self) -> Vec<LayerSpec> {
        let w = self.width;
        let mut layers = vec![
            LayerSpec::new("input.conv1", w, self.split_mode.channels(), 3),
            LayerSpec::new("input.conv2", w, w, 3),
        ];
        for b in 0..self.blocks {
            let name = |part: &str| format!("block{b}.{part}");
            layers.push(LayerSpec::new(name("texture_fine"), w / 2, w, 1));
            layers.push(LayerSpec::new(name("texture_coarse"), w / 2, w, 3));
            if self.tone_mapping {
                for l in 0..self.tm_levels {
                    layers.push(LayerSpec::new(name(&format!("tone{l}")), w, w, 3));
                }
            }
            layers.push(LayerSpec::new(name("fuse"), w, 2 * w, 3));
            layers.push(LayerSpec::new(
                name("squeeze"),
                w / self.attention_reduction,
                w,
                1,
            ));
            layers.push(LayerSpec::new(
                name("excite"),
                w,
                w / self.attention_reduction,
                1,
            ));
            layers.push(LayerSpec::new(name("spatial"), 1, 2, 7));
        }
        layers.push(LayerSpec::new("output", self.output_channels(), w, 3));
        layers
    }

    /// Number of scalar weights and biases.
    pub fn param_count(&self) -> usize {
        self.layout().iter().map(LayerSpec::param_count).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
}

impl LayerSpec {
    fn new(
        name: impl Into<String>,
        out_channels: usize,
        in_channels: usize,
        kernel: usize,
    ) -> Self {
        Self {
            name: name.into(),
            out_channels,
            in_channels,
            kernel,
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel,
            self.kernel,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel + self.out_channels
    }
}

/// One convolution's weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub spec: LayerSpec,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    layers: Vec<Layer<T>>,
}

/// Output of a forward pass plus the graph handles of every trainable
/// tensor, in the order of [`Model::parameters`].
pub struct ForwardPass {
    pub output: Var,
    pub params: Vec<Var>,
}

impl<T: Scalar> Model<T> {
    /// A model with all weights and biases zero.
    pub fn zeros(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let layers = config
            .layout()
            .into_iter()
            .map(|spec| Layer {
                weight: Tensor::zeros(&spec.weight_shape()),
                bias: Tensor::zeros(&[spec.out_channels]),
                spec,
            })
            .collect();
        Ok(Self { config, layers })
    }

    /// Uniform weights in `±1/sqrt(fan_in)`, zero biases. Deterministic in `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let mut model = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut model.layers {
            let fan_in = layer.spec.in_channels * layer.spec.kernel * layer.spec.kernel;
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in layer.weight.data_mut() {
                *v = T::of(rng.random_range(-bound..bound));
            }
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Weight and bias tensors interleaved in layer order.
    pub fn parameters(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config,
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    spec: l.spec.clone(),
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
        }
    }

    /// Registers every weight as a trainable leaf and returns the handles in
    /// layout order.
    pub fn bind(&self, g: &mut Graph<T>) -> Vec<ConvParams> {
        self.layers
            .iter()
            .map(|l| ConvParams {
                w: g.param(l.weight.clone()),
                b: g.param(l.bias.clone()),
            })
            .collect()
    }

    /// Groups bound handles into input, block and output parameters.
    pub fn structure(
        &self,
        bound: &[ConvParams],
    ) -> (ConvParams, ConvParams, Vec<BlockParams>, ConvParams) {
        let tone = if self.config.tone_mapping {
            self.config.tm_levels
        } else {
            0
        };
        let per_block = 6 + tone;
        let mut blocks = Vec::with_capacity(self.config.blocks);
        for b in 0..self.config.blocks {
            let p = &bound[2 + b * per_block..2 + (b + 1) * per_block];
            blocks.push(BlockParams {
                texture_fine: p[0],
                texture_coarse: p[1],
                tone: p[2..2 + tone].to_vec(),
                fuse: p[2 + tone],
                squeeze: p[3 + tone],
                excite: p[4 + tone],
                spatial: p[5 + tone],
            });
        }
        (bound[0], bound[1], blocks, bound[bound.len() - 1])
    }

    /// Builds the forward graph for a packed input already placed in `g`.
    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<ForwardPass, ModelError> {
        let (c, h, w) = g.value(x).chw().map_err(GraphError::from)?;
        let expected = self.config.split_mode.channels();
        if c != expected {
            return Err(ModelError::ModeMismatch {
                expected,
                got: c,
                mode: self.config.split_mode,
            });
        }
        if self.config.tone_mapping {
            let factor = 1 << self.config.tm_levels;
            if h % factor != 0 || w % factor != 0 {
                return Err(ModelError::NotDivisible {
                    height: h,
                    width: w,
                    factor,
                });
            }
        }
        let bound = self.bind(g);
        let (c1, c2, blocks, head) = self.structure(&bound);
        let mut f = blocks::input_module(g, x, c1, c2)?;
        for block in &blocks {
            f = blocks::rmfa_block(g, f, block)?;
        }
        let mut out = blocks::conv_same(g, f, head)?;
        if self.config.split_mode == SplitMode::FourChannel {
            out = g.pixel_shuffle(out, 2)?;
        }
        let output = g.sigmoid(out);
        let params = bound.iter().flat_map(|p| [p.w, p.b]).collect();
        Ok(ForwardPass { output, params })
    }

    /// Inference on a packed input: returns the 3xHxW reconstruction.
    pub fn infer(&self, input: &PackedInput) -> Result<Tensor<T>, ModelError> {
        if input.mode != self.config.split_mode {
            return Err(ModelError::ModeMismatch {
                expected: self.config.split_mode.channels(),
                got: input.mode.channels(),
                mode: self.config.split_mode,
            });
        }
        let mut g = Graph::new();
        let x = g.input(input.tensor.cast());
        let pass = self.forward(&mut g, x)?;
        Ok(g.value(pass.output).clone())
    }
}

#[cfg(test)]
mod tests;
