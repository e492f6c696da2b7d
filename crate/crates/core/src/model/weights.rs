//! Weight file layout, little-endian:
//!
//! ```text
//! "RMFW" | version u8 | blocks u8 | width u16 | split_mode u8 | tone_mapping u8
//!        | tm_levels u8 | reduction u8 | weight count u32 | f32 * count
//! ```
//!
//! The payload walks layers in [`ModelConfig::layout`] order, weights before
//! bias for each layer.

use std::io::{Read, Write};

use super::{Model, ModelConfig, ModelError};
use crate::cfa::SplitMode;
use crate::tensor::Scalar;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"RMFW";
pub const WEIGHTS_VERSION: u8 = 1;
pub const WEIGHTS_HEADER_LEN: usize = 16;

fn header(config: &ModelConfig, count: usize) -> Vec<u8> {
    let mut buf = Vec::with_capacity(WEIGHTS_HEADER_LEN);
    buf.extend_from_slice(WEIGHTS_MAGIC);
    buf.push(WEIGHTS_VERSION);
    buf.push(config.blocks as u8);
    buf.extend_from_slice(&(config.width as u16).to_le_bytes());
    buf.push(config.split_mode.code());
    buf.push(config.tone_mapping as u8);
    buf.push(config.tm_levels as u8);
    buf.push(config.attention_reduction as u8);
    buf.extend_from_slice(&(count as u32).to_le_bytes());
    buf
}

/// Writes the model in single precision. Returns the number of bytes written.
pub fn write_weights<T: Scalar, W: Write>(
    model: &Model<T>,
    mut sink: W,
) -> Result<usize, ModelError> {
    let count = model.param_count();
    let mut buf = header(model.config(), count);
    buf.reserve(4 * count);
    for t in model.parameters() {
        for &v in t.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    sink.write_all(&buf)?;
    Ok(buf.len())
}

fn read_exact<R: Read>(source: &mut R, buf: &mut [u8]) -> Result<(), ModelError> {
    source.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => ModelError::Format("truncated".into()),
        _ => ModelError::Io(e),
    })
}

pub(crate) fn read_config<R: Read>(source: &mut R) -> Result<(ModelConfig, usize), ModelError> {
    let mut h = [0u8; WEIGHTS_HEADER_LEN];
    read_exact(source, &mut h)?;
    if &h[..4] != WEIGHTS_MAGIC {
        return Err(ModelError::Format(format!("bad magic {:?}", &h[..4])));
    }
    if h[4] != WEIGHTS_VERSION {
        return Err(ModelError::Format(format!("unsupported version {}", h[4])));
    }
    let split_mode = SplitMode::from_code(h[8])
        .ok_or_else(|| ModelError::Format(format!("unknown split mode {}", h[8])))?;
    let config = ModelConfig {
        blocks: h[5] as usize,
        width: u16::from_le_bytes([h[6], h[7]]) as usize,
        split_mode,
        tone_mapping: match h[9] {
            0 => false,
            1 => true,
            v => return Err(ModelError::Format(format!("tone mapping flag {v}"))),
        },
        tm_levels: h[10] as usize,
        attention_reduction: h[11] as usize,
    };
    config.validate()?;
    let count = u32::from_le_bytes(h[12..16].try_into().unwrap()) as usize;
    if count != config.param_count() {
        return Err(ModelError::Format(format!(
            "header declares {count} weights, config needs {}",
            config.param_count()
        )));
    }
    Ok((config, count))
}

pub(crate) fn read_payload<R: Read>(
    source: &mut R,
    model: &mut Model<f32>,
) -> Result<(), ModelError> {
    let mut bytes = vec![0u8; 4 * model.param_count()];
    read_exact(source, &mut bytes)?;
    let mut values = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
    for t in model.parameters_mut() {
        for v in t.data_mut() {
            *v = values.next().expect("payload sized from param count");
        }
    }
    Ok(())
}

/// Reads a weight file, rebuilding the model from its header.
pub fn read_weights<R: Read>(mut source: R) -> Result<Model<f32>, ModelError> {
    let (config, _) = read_config(&mut source)?;
    let mut model = Model::zeros(config)?;
    read_payload(&mut source, &mut model)?;
    Ok(model)
}

impl Model<f32> {
    /// Replaces this model's weights from a file whose header must match
    /// this model's config.
    pub fn load_weights<R: Read>(&mut self, mut source: R) -> Result<(), ModelError> {
        let (found, _) = read_config(&mut source)?;
        if found != self.config {
            return Err(ModelError::ConfigMismatch {
                expected: self.config,
                found,
            });
        }
        read_payload(&mut source, self)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<usize, ModelError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let n = write_weights(self, &mut out)?;
        out.flush()?;
        Ok(n)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, ModelError> {
        read_weights(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
