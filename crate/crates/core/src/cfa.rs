//! Raw-domain preprocessing: black-level correction, the two network input
//! packings, and the forward mosaic used by the synthetic camera.

use crate::io::{CfaColor, CfaPattern, RawImage};
use crate::tensor::Tensor;

/// Value written at photosites that did not sample a color in the
/// three-channel packing.
pub const UNSAMPLED_FILL: f64 = 1.0;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CfaError {
    #[error("degenerate levels: black {black} must be below white {white}")]
    DegenerateLevels { black: u16, white: u16 },
    #[error("dimensions must be even, got {width}x{height}")]
    OddDimensions { width: usize, height: usize },
    #[error("expected a 3xHxW tensor, got {0:?}")]
    NotRgb(Vec<usize>),
    #[error("plane length {len} does not match {width}x{height}")]
    Length {
        width: usize,
        height: usize,
        len: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum SplitMode {
    /// Full-resolution R, G, B planes with unsampled sites set to 1.
    ThreeChannel,
    /// Half-resolution R, Gr, Gb, B planes.
    FourChannel,
}

impl SplitMode {
    pub fn channels(self) -> usize {
        match self {
            Self::ThreeChannel => 3,
            Self::FourChannel => 4,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Self::ThreeChannel => 0,
            Self::FourChannel => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::ThreeChannel),
            1 => Some(Self::FourChannel),
            _ => None,
        }
    }
}

impl std::str::FromStr for SplitMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "three" | "three_channel" | "3" => Ok(Self::ThreeChannel),
            "four" | "four_channel" | "4" => Ok(Self::FourChannel),
            _ => Err(format!("unknown split mode {s:?}")),
        }
    }
}

impl std::fmt::Display for SplitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ThreeChannel => "three",
            Self::FourChannel => "four",
        })
    }
}

/// Single-channel mosaic with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedPlane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl NormalizedPlane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, CfaError> {
        if !width.is_multiple_of(2) || !height.is_multiple_of(2) {
            return Err(CfaError::OddDimensions { width, height });
        }
        if data.len() != width * height {
            return Err(CfaError::Length {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data: data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Window with an even origin and even size, so the CFA phase is kept.
    pub fn crop(
        &self,
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    ) -> Result<Self, CfaError> {
        if !top.is_multiple_of(2)
            || !left.is_multiple_of(2)
            || !height.is_multiple_of(2)
            || !width.is_multiple_of(2)
        {
            return Err(CfaError::OddDimensions { width, height });
        }
        if top + height > self.height || left + width > self.width {
            return Err(CfaError::Length {
                width,
                height,
                len: self.data.len(),
            });
        }
        let data = (top..top + height)
            .flat_map(|r| self.data[r * self.width + left..][..width].iter().copied())
            .collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }
}

/// Network input after packing.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedInput {
    pub mode: SplitMode,
    pub pattern: CfaPattern,
    pub tensor: Tensor<f64>,
}

/// Subtracts the pedestal and rescales `[black, white]` onto `[0, 1]`.
/// Samples below black clamp to 0.
pub fn black_level_correct(raw: &RawImage) -> Result<NormalizedPlane, CfaError> {
    let (black, white) = (raw.black_level, raw.white_level);
    if black >= white {
        return Err(CfaError::DegenerateLevels { black, white });
    }
    let range = f64::from(white - black);
    let data = raw
        .data
        .iter()
        .map(|&v| (f64::from(v.saturating_sub(black)) / range).min(1.0))
        .collect();
    NormalizedPlane::new(raw.width as usize, raw.height as usize, data)
}

fn channel_index(color: CfaColor) -> usize {
    match color {
        CfaColor::Red => 0,
        CfaColor::Green => 1,
        CfaColor::Blue => 2,
    }
}

/// Three full-resolution planes (R, G, B). Each sample stays at its own
/// pixel location; every other entry is [`UNSAMPLED_FILL`].
pub fn split_three(plane: &NormalizedPlane, pattern: CfaPattern) -> PackedInput {
    let (h, w) = (plane.height, plane.width);
    let mut data = vec![UNSAMPLED_FILL; 3 * h * w];
    for r in 0..h {
        for c in 0..w {
            let ch = channel_index(pattern.color_at(r, c));
            data[(ch * h + r) * w + c] = plane.get(r, c);
        }
    }
    PackedInput {
        mode: SplitMode::ThreeChannel,
        pattern,
        tensor: Tensor::new(&[3, h, w], data).expect("3*h*w entries"),
    }
}

/// Four half-resolution planes in (R, Gr, Gb, B) order; entry `(c, i, j)`
/// is the matching site of tile `(i, j)`.
pub fn split_four(plane: &NormalizedPlane, pattern: CfaPattern) -> PackedInput {
    let (h2, w2) = (plane.height / 2, plane.width / 2);
    let mut data = Vec::with_capacity(4 * h2 * w2);
    for (dy, dx) in pattern.site_offsets() {
        for i in 0..h2 {
            data.extend((0..w2).map(|j| plane.get(2 * i + dy, 2 * j + dx)));
        }
    }
    PackedInput {
        mode: SplitMode::FourChannel,
        pattern,
        tensor: Tensor::new(&[4, h2, w2], data).expect("4*(h/2)*(w/2) entries"),
    }
}

pub fn pack(plane: &NormalizedPlane, pattern: CfaPattern, mode: SplitMode) -> PackedInput {
    match mode {
        SplitMode::ThreeChannel => split_three(plane, pattern),
        SplitMode::FourChannel => split_four(plane, pattern),
    }
}

/// Samples a 3xHxW image through the color filter array.
pub fn mosaic(rgb: &Tensor<f64>, pattern: CfaPattern) -> Result<NormalizedPlane, CfaError> {
    let (c, h, w) = rgb
        .chw()
        .map_err(|_| CfaError::NotRgb(rgb.shape().to_vec()))?;
    if c != 3 {
        return Err(CfaError::NotRgb(rgb.shape().to_vec()));
    }
    if h % 2 != 0 || w % 2 != 0 {
        return Err(CfaError::OddDimensions {
            width: w,
            height: h,
        });
    }
    let data = (0..h * w)
        .map(|idx| {
            let (r, col) = (idx / w, idx % w);
            let ch = channel_index(pattern.color_at(r, col));
            rgb.data()[(ch * h + r) * w + col]
        })
        .collect();
    NormalizedPlane::new(w, h, data)
}

/// `true` where channel `ch` of the three-channel packing holds a sample.
pub fn is_sampled(pattern: CfaPattern, ch: usize, row: usize, col: usize) -> bool {
    channel_index(pattern.color_at(row, col)) == ch
}

/// Bilinear demosaic: each missing sample is the weighted mean of the same
/// colour's samples in its 3x3 neighbourhood, with weight 2 for edge
/// neighbours and 1 for corners, renormalized at the border.
pub fn bilinear_demosaic(plane: &NormalizedPlane, pattern: CfaPattern) -> Tensor<f64> {
    let (h, w) = (plane.height, plane.width);
    let mut out = vec![0.0; 3 * h * w];
    for ch in 0..3 {
        for r in 0..h {
            for c in 0..w {
                if is_sampled(pattern, ch, r, c) {
                    out[(ch * h + r) * w + c] = plane.get(r, c);
                    continue;
                }
                let (mut acc, mut norm) = (0.0, 0.0);
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let (y, x) = (r as isize + dy, c as isize + dx);
                        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                            continue;
                        }
                        let (y, x) = (y as usize, x as usize);
                        if is_sampled(pattern, ch, y, x) {
                            let wgt = if dy == 0 || dx == 0 { 2.0 } else { 1.0 };
                            acc += wgt * plane.get(y, x);
                            norm += wgt;
                        }
                    }
                }
                out[(ch * h + r) * w + c] = acc / norm;
            }
        }
    }
    Tensor::new(&[3, h, w], out).expect("3*h*w entries")
}
