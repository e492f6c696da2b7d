//! The building blocks of the network, written against graph handles so each
//! one can be exercised and gradient-checked on its own.

use crate::autodiff::{Graph, Var};
use crate::tensor::Scalar;

use super::ModelError;

/// Weight `(out, in, k, k)` and bias `(out)` handles of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvParams {
    pub w: Var,
    pub b: Var,
}

/// Same-size convolution: stride 1 and padding `(k - 1) / 2`.
pub fn conv_same<T: Scalar>(g: &mut Graph<T>, x: Var, p: ConvParams) -> Result<Var, ModelError> {
    let k = g.value(p.w).shape()[2];
    Ok(g.conv2d(x, p.w, Some(p.b), 1, (k - 1) / 2)?)
}

/// Two 3x3 convolutions lifting the packed input to the feature width,
/// squashed into (-1, 1).
pub fn input_module<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    c1: ConvParams,
    c2: ConvParams,
) -> Result<Var, ModelError> {
    let h = conv_same(g, x, c1)?;
    let h = conv_same(g, h, c2)?;
    Ok(g.tanh(h))
}

/// Half the channels from a 1x1 branch, half from a 3x3 branch, both
/// rectified and concatenated back to the input width.
pub fn texture_module<T: Scalar>(
    g: &mut Graph<T>,
    f: Var,
    fine: ConvParams,
    coarse: ConvParams,
) -> Result<Var, ModelError> {
    let width = g.value(f).shape()[0];
    if !width.is_multiple_of(2) {
        return Err(ModelError::OddWidth(width));
    }
    let a = conv_same(g, f, fine)?;
    let a = g.relu(a);
    let b = conv_same(g, f, coarse)?;
    let b = g.relu(b);
    Ok(g.concat(&[a, b])?)
}

/// Illumination estimate: `levels.len()` rounds of 2x average pooling
/// followed by a rectified 3x3 convolution, then nearest upsampling back to
/// the input size.
pub fn illumination<T: Scalar>(
    g: &mut Graph<T>,
    t: Var,
    levels: &[ConvParams],
) -> Result<Var, ModelError> {
    let (_, h, w) = g
        .value(t)
        .chw()
        .map_err(crate::autodiff::GraphError::from)?;
    let factor = 1usize << levels.len();
    if levels.is_empty() || h % factor != 0 || w % factor != 0 {
        return Err(ModelError::NotDivisible {
            height: h,
            width: w,
            factor,
        });
    }
    let mut s = t;
    for &p in levels {
        s = g.avg_pool2d(s, 2)?;
        s = conv_same(g, s, p)?;
        s = g.relu(s);
    }
    Ok(g.upsample_nearest(s, factor)?)
}

/// Reflectance `t - S`, with `S` from [`illumination`].
pub fn tone_mapping_module<T: Scalar>(
    g: &mut Graph<T>,
    t: Var,
    levels: &[ConvParams],
) -> Result<Var, ModelError> {
    let s = illumination(g, t, levels)?;
    Ok(g.sub(t, s)?)
}

/// Squeeze-and-excitation gating: `f * sigmoid(W2 relu(W1 mean_hw(f)))`,
/// with the two dense layers as 1x1 convolutions.
pub fn channel_attention<T: Scalar>(
    g: &mut Graph<T>,
    f: Var,
    squeeze: ConvParams,
    excite: ConvParams,
) -> Result<Var, ModelError> {
    let pooled = g.global_avg_pool(f)?;
    let z = g.conv2d(pooled, squeeze.w, Some(squeeze.b), 1, 0)?;
    let z = g.relu(z);
    let z = g.conv2d(z, excite.w, Some(excite.b), 1, 0)?;
    let s = g.sigmoid(z);
    Ok(g.scale_channels(f, s)?)
}

/// Per-position gating from a 7x7 convolution over the channel mean and
/// channel max maps.
pub fn spatial_attention<T: Scalar>(
    g: &mut Graph<T>,
    f: Var,
    conv: ConvParams,
) -> Result<Var, ModelError> {
    let mean = g.channel_mean(f)?;
    let max = g.channel_max(f)?;
    let stats = g.concat(&[mean, max])?;
    let m = conv_same(g, stats, conv)?;
    let m = g.sigmoid(m);
    Ok(g.scale_positions(f, m)?)
}

/// Parameters of one residual block, in serialization order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockParams {
    pub texture_fine: ConvParams,
    pub texture_coarse: ConvParams,
    pub tone: Vec<ConvParams>,
    pub fuse: ConvParams,
    pub squeeze: ConvParams,
    pub excite: ConvParams,
    pub spatial: ConvParams,
}

/// `f + SA(CA(relu(conv([t, r]))))` where `t` is the texture response and
/// `r` its reflectance (or `t` again when tone mapping is off).
pub fn rmfa_block<T: Scalar>(g: &mut Graph<T>, f: Var, p: &BlockParams) -> Result<Var, ModelError> {
    let t = texture_module(g, f, p.texture_fine, p.texture_coarse)?;
    let r = if p.tone.is_empty() {
        t
    } else {
        tone_mapping_module(g, t, &p.tone)?
    };
    let z = g.concat(&[t, r])?;
    let z = conv_same(g, z, p.fuse)?;
    let z = g.relu(z);
    let z = channel_attention(g, z, p.squeeze, p.excite)?;
    let z = spatial_attention(g, z, p.spatial)?;
    Ok(g.add(f, z)?)
}
