//! Synthetic pairs in memory and on disk.
//!
//! Seeds: sample `i` of a dataset with seed `s` uses sample seed `s + i`.
//! From a sample seed `t`, the scene uses `t`, the illumination field
//! `t + 2^40` and the read noise `t + 2^41` (all wrapping).

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::scene::{random_scene, zone_plate_scene, SceneKind};
use super::{synthesize_raw, SynthError, SynthParams};
use crate::io::{save_ppm, save_raw, RawImage, RgbImage};

pub const MANIFEST_NAME: &str = "manifest.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleSeeds {
    pub scene: u64,
    pub illumination: u64,
    pub noise: u64,
}

impl SampleSeeds {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            scene: seed,
            illumination: seed.wrapping_add(1 << 40),
            noise: seed.wrapping_add(1 << 41),
        }
    }
}

pub fn sample_seeds(dataset_seed: u64, index: usize) -> SampleSeeds {
    SampleSeeds::from_seed(dataset_seed.wrapping_add(index as u64))
}

/// A raw frame and its target rendering.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub raw: RawImage,
    pub target: RgbImage,
}

fn make_pair(
    size: usize,
    params: &SynthParams,
    seed: u64,
    kind: SceneKind,
) -> Result<Pair, SynthError> {
    if !size.is_multiple_of(2) || size == 0 {
        return Err(SynthError::OddDimensions {
            width: size,
            height: size,
        });
    }
    let scene = match kind {
        SceneKind::Mixed => random_scene(size, size, seed),
        SceneKind::ZonePlate => zone_plate_scene(size, size, seed),
    };
    let (raw, target) = synthesize_raw(&scene, params, seed)?;
    Ok(Pair { raw, target })
}

/// `count` square pairs of side `size`.
pub fn generate_pairs(
    count: usize,
    size: usize,
    params: &SynthParams,
    seed: u64,
    kind: SceneKind,
) -> Result<Vec<Pair>, SynthError> {
    (0..count)
        .map(|i| make_pair(size, params, seed.wrapping_add(i as u64), kind))
        .collect()
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ManifestRecord {
    /// Paths relative to the manifest's directory.
    pub raw: String,
    pub rgb: String,
    pub seed: u64,
    pub kind: SceneKind,
    pub params: SynthParams,
}

/// Writes `NNNN.rawi`, `NNNN.ppm` and [`MANIFEST_NAME`] into `dir`.
/// Output bytes depend only on the arguments.
pub fn generate_dataset(
    dir: &Path,
    count: usize,
    size: usize,
    params: &SynthParams,
    seed: u64,
    kind: SceneKind,
) -> Result<Vec<ManifestRecord>, SynthError> {
    params.validate()?;
    if !size.is_multiple_of(2) || size == 0 {
        return Err(SynthError::OddDimensions {
            width: size,
            height: size,
        });
    }
    std::fs::create_dir_all(dir).map_err(crate::io::IoError::from)?;
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let sample_seed = seed.wrapping_add(i as u64);
        let pair = make_pair(size, params, sample_seed, kind)?;
        let (raw, rgb) = (format!("{i:04}.rawi"), format!("{i:04}.ppm"));
        save_raw(&pair.raw, dir.join(&raw))?;
        save_ppm(&pair.target, dir.join(&rgb))?;
        records.push(ManifestRecord {
            raw,
            rgb,
            seed: sample_seed,
            kind,
            params: *params,
        });
    }
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(dir.join(MANIFEST_NAME)).map_err(crate::io::IoError::from)?,
    );
    for r in &records {
        let line = serde_json::to_string(r).expect("plain record");
        writeln!(out, "{line}").map_err(crate::io::IoError::from)?;
    }
    out.flush().map_err(crate::io::IoError::from)?;
    Ok(records)
}

/// Reads a manifest and resolves its paths against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<(PathBuf, PathBuf)>, SynthError> {
    let file = std::fs::File::open(path)
        .map_err(|e| SynthError::Manifest(format!("cannot open {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut pairs = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(crate::io::IoError::from)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line)
            .map_err(|e| SynthError::Manifest(format!("line {}: {e}", n + 1)))?;
        pairs.push((base.join(rec.raw), base.join(rec.rgb)));
    }
    Ok(pairs)
}
