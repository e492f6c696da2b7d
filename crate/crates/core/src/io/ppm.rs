use std::io::{BufRead, BufReader, Read, Write};

use super::raw::read_exact_or_truncated;
use super::IoError;
use crate::tensor::{Scalar, Tensor};

/// 8-bit interleaved RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, IoError> {
        let img = Self {
            width,
            height,
            data,
        };
        img.validate()?;
        Ok(img)
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(3 * width as usize * height as usize)
            .collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn validate(&self) -> Result<(), IoError> {
        let expected = 3 * self.width as usize * self.height as usize;
        if self.data.len() != expected {
            return Err(IoError::Length {
                expected,
                actual: self.data.len(),
            });
        }
        Ok(())
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = 3 * (row * self.width as usize + col);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Planar `3 x H x W` copy scaled to `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor<f64> {
        let (h, w) = (self.height as usize, self.width as usize);
        Tensor::from_fn(&[3, h, w], |i| {
            let (c, p) = (i / (h * w), i % (h * w));
            f64::from(self.data[3 * p + c]) / 255.0
        })
    }

    /// Interleaves a `3 x H x W` tensor, clamping to `[0, 1]` and rounding
    /// to the nearest code.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self, IoError> {
        let (c, h, w) = t.chw().map_err(|_| IoError::Length {
            expected: 3,
            actual: t.shape().len(),
        })?;
        if c != 3 {
            return Err(IoError::Length {
                expected: 3,
                actual: c,
            });
        }
        let mut data = vec![0u8; 3 * h * w];
        for (i, v) in t.data().iter().enumerate() {
            let (c, p) = (i / (h * w), i % (h * w));
            let v = v.as_f64();
            let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
            data[3 * p + c] = (v * 255.0 + 0.5).floor() as u8;
        }
        Ok(Self {
            width: w as u32,
            height: h as u32,
            data,
        })
    }
}

/// Writes binary PPM (`P6`, maxval 255) with single-byte separators and no comments.
pub fn write_ppm<W: Write>(img: &RgbImage, mut sink: W) -> Result<usize, IoError> {
    img.validate()?;
    let header = format!("P6\n{} {}\n255\n", img.width, img.height);
    sink.write_all(header.as_bytes())?;
    sink.write_all(&img.data)?;
    Ok(header.len() + img.data.len())
}

pub fn read_ppm<R: Read>(source: R) -> Result<RgbImage, IoError> {
    let mut reader = BufReader::new(source);
    let magic = header_token(&mut reader)?;
    if magic != "P6" {
        return Err(IoError::BadMagic {
            expected: "P6",
            found: magic.into_bytes(),
        });
    }
    let width = header_number(&mut reader)?;
    let height = header_number(&mut reader)?;
    let maxval = header_number(&mut reader)?;
    if maxval != 255 {
        return Err(IoError::UnsupportedMaxval(maxval));
    }
    let mut data = vec![0u8; 3 * width as usize * height as usize];
    read_exact_or_truncated(&mut reader, &mut data)?;
    RgbImage::new(width, height, data)
}

fn next_byte<R: BufRead>(reader: &mut R) -> Result<Option<u8>, IoError> {
    let buf = reader.fill_buf()?;
    let Some(&b) = buf.first() else {
        return Ok(None);
    };
    reader.consume(1);
    Ok(Some(b))
}

// Reads one whitespace-terminated token, skipping leading whitespace and
// `#` comments. The single terminating whitespace byte is consumed.
fn header_token<R: BufRead>(reader: &mut R) -> Result<String, IoError> {
    let mut token = Vec::new();
    loop {
        let Some(b) = next_byte(reader)? else {
            return Err(IoError::Truncated);
        };
        if token.is_empty() {
            if b.is_ascii_whitespace() {
                continue;
            }
            if b == b'#' {
                while let Some(c) = next_byte(reader)? {
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
                continue;
            }
            token.push(b);
        } else if b.is_ascii_whitespace() {
            break;
        } else {
            token.push(b);
        }
    }
    Ok(String::from_utf8_lossy(&token).into_owned())
}

fn header_number<R: BufRead>(reader: &mut R) -> Result<u32, IoError> {
    let token = header_token(reader)?;
    token.parse().map_err(|_| IoError::Header(token))
}
