//! Bit-exact pixel containers and the two on-disk formats: `RAWI` for sensor
//! frames and binary PPM for RGB.

mod ppm;
mod raw;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

pub use ppm::{read_ppm, write_ppm, RgbImage};
pub use raw::{read_raw, write_raw, CfaColor, CfaPattern, RawImage, RAW_HEADER_LEN, RAW_MAGIC};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("dimensions must be even, got {width}x{height}")]
    OddDimensions { width: u32, height: u32 },
    #[error("bit depth {0} is outside 1..=16")]
    BitDepth(u8),
    #[error("white level {white} does not fit in {bit_depth} bits")]
    WhiteLevel { white: u16, bit_depth: u8 },
    #[error("black level {black} must be below white level {white}")]
    Levels { black: u16, white: u16 },
    #[error("expected {expected} samples, got {actual}")]
    Length { expected: usize, actual: usize },
    #[error("sample {index} has value {value} above white level {white}")]
    ValueAboveWhite {
        index: usize,
        value: u16,
        white: u16,
    },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic {
        expected: &'static str,
        found: Vec<u8>,
    },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown CFA pattern code {0}")]
    PatternCode(u8),
    #[error("unknown CFA pattern {0:?}")]
    UnknownPattern(String),
    #[error("unsupported PPM maxval {0}, only 255 is accepted")]
    UnsupportedMaxval(u32),
    #[error("malformed header field {0:?}")]
    Header(String),
    #[error("truncated stream")]
    Truncated,
    #[error("crop window exceeds image bounds")]
    CropBounds,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn save_raw(img: &RawImage, path: impl AsRef<Path>) -> Result<usize, IoError> {
    let mut out = BufWriter::new(File::create(path)?);
    let n = write_raw(img, &mut out)?;
    std::io::Write::flush(&mut out)?;
    Ok(n)
}

pub fn load_raw(path: impl AsRef<Path>) -> Result<RawImage, IoError> {
    read_raw(BufReader::new(File::open(path)?))
}

pub fn save_ppm(img: &RgbImage, path: impl AsRef<Path>) -> Result<usize, IoError> {
    let mut out = BufWriter::new(File::create(path)?);
    let n = write_ppm(img, &mut out)?;
    std::io::Write::flush(&mut out)?;
    Ok(n)
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<RgbImage, IoError> {
    read_ppm(File::open(path)?)
}
