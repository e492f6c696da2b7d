//! The `RAWI` container: a fixed 20-byte little-endian header followed by
//! one `u16` per photosite, row-major.
//!
//! ```text
//! offset size field
//!      0    4 magic "RAWI"
//!      4    1 version (1)
//!      5    1 pattern (0=RGGB 1=BGGR 2=GRBG 3=GBRG)
//!      6    1 bit depth
//!      7    1 reserved (0)
//!      8    4 width
//!     12    4 height
//!     16    2 black level
//!     18    2 white level
//!     20  2*n payload
//! ```

use std::io::{Read, Write};

use super::IoError;

pub const RAW_MAGIC: &[u8; 4] = b"RAWI";
pub const RAW_VERSION: u8 = 1;
pub const RAW_HEADER_LEN: usize = 20;

/// Bayer phase of the top-left 2x2 tile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum CfaPattern {
    Rggb,
    Bggr,
    Grbg,
    Gbrg,
}

/// Color of a single photosite.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CfaColor {
    Red,
    Green,
    Blue,
}

impl CfaPattern {
    pub const ALL: [CfaPattern; 4] = [Self::Rggb, Self::Bggr, Self::Grbg, Self::Gbrg];

    pub fn code(self) -> u8 {
        match self {
            Self::Rggb => 0,
            Self::Bggr => 1,
            Self::Grbg => 2,
            Self::Gbrg => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    /// Colors of the 2x2 tile in row-major order.
    pub fn tile(self) -> [CfaColor; 4] {
        use CfaColor::*;
        match self {
            Self::Rggb => [Red, Green, Green, Blue],
            Self::Bggr => [Blue, Green, Green, Red],
            Self::Grbg => [Green, Red, Blue, Green],
            Self::Gbrg => [Green, Blue, Red, Green],
        }
    }

    pub fn color_at(self, row: usize, col: usize) -> CfaColor {
        self.tile()[(row & 1) * 2 + (col & 1)]
    }

    /// Tile offsets `(dy, dx)` of the R, Gr, Gb and B sites. Gr is the green
    /// sharing a row with red.
    pub fn site_offsets(self) -> [(usize, usize); 4] {
        match self {
            Self::Rggb => [(0, 0), (0, 1), (1, 0), (1, 1)],
            Self::Bggr => [(1, 1), (1, 0), (0, 1), (0, 0)],
            Self::Grbg => [(0, 1), (0, 0), (1, 1), (1, 0)],
            Self::Gbrg => [(1, 0), (1, 1), (0, 0), (0, 1)],
        }
    }
}

impl std::fmt::Display for CfaPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Rggb => "RGGB",
            Self::Bggr => "BGGR",
            Self::Grbg => "GRBG",
            Self::Gbrg => "GBRG",
        })
    }
}

impl std::str::FromStr for CfaPattern {
    type Err = IoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "RGGB" => Ok(Self::Rggb),
            "BGGR" => Ok(Self::Bggr),
            "GRBG" => Ok(Self::Grbg),
            "GBRG" => Ok(Self::Gbrg),
            _ => Err(IoError::UnknownPattern(s.to_string())),
        }
    }
}

/// A Bayer sensor frame in digital numbers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImage {
    pub width: u32,
    pub height: u32,
    pub pattern: CfaPattern,
    pub black_level: u16,
    pub white_level: u16,
    pub bit_depth: u8,
    pub data: Vec<u16>,
}

impl RawImage {
    /// Builds a frame and checks every invariant.
    pub fn new(
        width: u32,
        height: u32,
        pattern: CfaPattern,
        black_level: u16,
        white_level: u16,
        bit_depth: u8,
        data: Vec<u16>,
    ) -> Result<Self, IoError> {
        let img = Self {
            width,
            height,
            pattern,
            black_level,
            white_level,
            bit_depth,
            data,
        };
        img.validate()?;
        Ok(img)
    }

    pub fn validate(&self) -> Result<(), IoError> {
        if !self.width.is_multiple_of(2) || !self.height.is_multiple_of(2) {
            return Err(IoError::OddDimensions {
                width: self.width,
                height: self.height,
            });
        }
        if self.bit_depth == 0 || self.bit_depth > 16 {
            return Err(IoError::BitDepth(self.bit_depth));
        }
        let max_code = ((1u32 << self.bit_depth) - 1) as u16;
        if self.white_level > max_code {
            return Err(IoError::WhiteLevel {
                white: self.white_level,
                bit_depth: self.bit_depth,
            });
        }
        if self.black_level >= self.white_level {
            return Err(IoError::Levels {
                black: self.black_level,
                white: self.white_level,
            });
        }
        let expected = self.width as usize * self.height as usize;
        if self.data.len() != expected {
            return Err(IoError::Length {
                expected,
                actual: self.data.len(),
            });
        }
        if let Some((index, &value)) = self
            .data
            .iter()
            .enumerate()
            .find(|(_, &v)| v > self.white_level)
        {
            return Err(IoError::ValueAboveWhite {
                index,
                value,
                white: self.white_level,
            });
        }
        Ok(())
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.data[row * self.width as usize + col]
    }

    /// Crop a window whose origin is on an even site, so the CFA phase is kept.
    pub fn crop(
        &self,
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    ) -> Result<Self, IoError> {
        if !top.is_multiple_of(2)
            || !left.is_multiple_of(2)
            || !height.is_multiple_of(2)
            || !width.is_multiple_of(2)
        {
            return Err(IoError::OddDimensions {
                width: width as u32,
                height: height as u32,
            });
        }
        if top + height > self.height as usize || left + width > self.width as usize {
            return Err(IoError::CropBounds);
        }
        let mut data = Vec::with_capacity(width * height);
        for r in top..top + height {
            let start = r * self.width as usize + left;
            data.extend_from_slice(&self.data[start..start + width]);
        }
        Ok(Self {
            width: width as u32,
            height: height as u32,
            data,
            ..self.clone()
        })
    }
}

/// Serializes `img`. Nothing is written if the image is invalid.
pub fn write_raw<W: Write>(img: &RawImage, mut sink: W) -> Result<usize, IoError> {
    img.validate()?;
    let mut buf = Vec::with_capacity(RAW_HEADER_LEN + 2 * img.data.len());
    buf.extend_from_slice(RAW_MAGIC);
    buf.push(RAW_VERSION);
    buf.push(img.pattern.code());
    buf.push(img.bit_depth);
    buf.push(0);
    buf.extend_from_slice(&img.width.to_le_bytes());
    buf.extend_from_slice(&img.height.to_le_bytes());
    buf.extend_from_slice(&img.black_level.to_le_bytes());
    buf.extend_from_slice(&img.white_level.to_le_bytes());
    for v in &img.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    sink.write_all(&buf)?;
    Ok(buf.len())
}

pub fn read_raw<R: Read>(mut source: R) -> Result<RawImage, IoError> {
    let mut header = [0u8; RAW_HEADER_LEN];
    read_exact_or_truncated(&mut source, &mut header)?;
    if &header[0..4] != RAW_MAGIC {
        return Err(IoError::BadMagic {
            expected: "RAWI",
            found: header[0..4].to_vec(),
        });
    }
    if header[4] != RAW_VERSION {
        return Err(IoError::UnsupportedVersion(header[4]));
    }
    let pattern = CfaPattern::from_code(header[5]).ok_or(IoError::PatternCode(header[5]))?;
    let bit_depth = header[6];
    let width = u32::from_le_bytes(header[8..12].try_into().unwrap());
    let height = u32::from_le_bytes(header[12..16].try_into().unwrap());
    let black_level = u16::from_le_bytes(header[16..18].try_into().unwrap());
    let white_level = u16::from_le_bytes(header[18..20].try_into().unwrap());

    let count = width as usize * height as usize;
    let mut payload = vec![0u8; 2 * count];
    read_exact_or_truncated(&mut source, &mut payload)?;
    let data = payload
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .collect();
    RawImage::new(
        width,
        height,
        pattern,
        black_level,
        white_level,
        bit_depth,
        data,
    )
}

pub(crate) fn read_exact_or_truncated<R: Read>(
    source: &mut R,
    buf: &mut [u8],
) -> Result<(), IoError> {
    source.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => IoError::Truncated,
        _ => IoError::Io(e),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RawImage {
        RawImage::new(
            2,
            2,
            CfaPattern::Rggb,
            63,
            4095,
            12,
            vec![63, 100, 200, 4095],
        )
        .unwrap()
    }

    #[test]
    fn header_and_payload_sizes() {
        let mut buf = Vec::new();
        let n = write_raw(&sample(), &mut buf).unwrap();
        assert_eq!(n, 28);
        assert_eq!(&buf[..4], b"RAWI");
        assert_eq!(buf[4..8], [1, 0, 12, 0]);
        assert_eq!(buf[8..12], 2u32.to_le_bytes());
        assert_eq!(buf[16..18], 63u16.to_le_bytes());
        assert_eq!(buf[18..20], 4095u16.to_le_bytes());
        assert_eq!(buf[20..22], 63u16.to_le_bytes());
        assert_eq!(buf[26..28], 4095u16.to_le_bytes());
        assert_eq!(read_raw(&buf[..]).unwrap(), sample());
    }

    #[test]
    fn odd_width_rejected_before_writing() {
        let img = RawImage {
            width: 3,
            data: vec![0; 6],
            ..sample()
        };
        let mut buf = Vec::new();
        let err = write_raw(&img, &mut buf).unwrap_err();
        assert!(err.to_string().contains("dimensions must be even"));
        assert!(buf.is_empty());
    }

    #[test]
    fn bad_magic() {
        let mut buf = Vec::new();
        write_raw(&sample(), &mut buf).unwrap();
        buf[..4].copy_from_slice(b"XXXX");
        assert!(matches!(read_raw(&buf[..]), Err(IoError::BadMagic { .. })));
    }

    #[test]
    fn bad_version() {
        let mut buf = Vec::new();
        write_raw(&sample(), &mut buf).unwrap();
        buf[4] = 2;
        assert!(matches!(
            read_raw(&buf[..]),
            Err(IoError::UnsupportedVersion(2))
        ));
    }

    #[test]
    fn truncated_payload() {
        let mut buf = Vec::new();
        write_raw(&sample(), &mut buf).unwrap();
        buf.truncate(buf.len() - 2);
        assert!(matches!(read_raw(&buf[..]), Err(IoError::Truncated)));
    }

    #[test]
    fn value_above_white_level_rejected_on_read() {
        let mut buf = Vec::new();
        write_raw(&sample(), &mut buf).unwrap();
        buf[18..20].copy_from_slice(&1000u16.to_le_bytes());
        assert!(matches!(
            read_raw(&buf[..]),
            Err(IoError::ValueAboveWhite { .. })
        ));
    }

    #[test]
    fn degenerate_levels() {
        let img = RawImage {
            black_level: 4095,
            ..sample()
        };
        assert!(matches!(img.validate(), Err(IoError::Levels { .. })));
    }

    #[test]
    fn pattern_tables_agree() {
        for p in CfaPattern::ALL {
            let [r, gr, gb, b] = p.site_offsets();
            assert_eq!(p.color_at(r.0, r.1), CfaColor::Red);
            assert_eq!(p.color_at(gr.0, gr.1), CfaColor::Green);
            assert_eq!(p.color_at(gb.0, gb.1), CfaColor::Green);
            assert_eq!(p.color_at(b.0, b.1), CfaColor::Blue);
            assert_eq!(gr.0, r.0, "Gr shares the red row");
            assert_eq!(p.to_string().parse::<CfaPattern>().unwrap(), p);
        }
    }
}
