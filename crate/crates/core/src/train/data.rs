use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cfa::{black_level_correct, pack, NormalizedPlane, PackedInput, SplitMode};
use crate::io::{load_ppm, load_raw, CfaPattern};
use crate::synth::Pair;
use crate::tensor::Tensor;

use super::TrainError;

/// Disjoint train and test subsets, 9:1.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub test: Vec<T>,
    pub seed: u64,
}

/// Seeded shuffle, then the first `round(n / 10)` items become the test set.
pub fn split_dataset<T: Clone>(items: &[T], seed: u64) -> DatasetSplit<T> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (items.len() + 5) / 10;
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect();
    DatasetSplit {
        test: pick(&order[..n_test]),
        train: pick(&order[n_test..]),
        seed,
    }
}

/// One split per seed, for the repeated-split protocol.
pub fn repeat_splits<T: Clone>(items: &[T], seeds: &[u64]) -> Vec<DatasetSplit<T>> {
    seeds.iter().map(|&s| split_dataset(items, s)).collect()
}

/// A black-level-corrected mosaic with its target, ready for packing.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub plane: NormalizedPlane,
    pub pattern: CfaPattern,
    /// `3 x H x W` in `[0, 1]`.
    pub target: Tensor<f64>,
}

impl Sample {
    pub fn from_pair(pair: &Pair) -> Result<Self, TrainError> {
        let plane = black_level_correct(&pair.raw).map_err(|e| TrainError::Data(e.to_string()))?;
        let target = pair.target.to_tensor();
        if target.shape() != [3, plane.height, plane.width] {
            return Err(TrainError::Data(format!(
                "target {:?} does not match raw {}x{}",
                target.shape(),
                plane.height,
                plane.width
            )));
        }
        Ok(Self {
            plane,
            pattern: pair.raw.pattern,
            target,
        })
    }

    pub fn load(raw: &Path, rgb: &Path) -> Result<Self, TrainError> {
        Self::from_pair(&Pair {
            raw: load_raw(raw)?,
            target: load_ppm(rgb)?,
        })
    }

    pub fn height(&self) -> usize {
        self.plane.height
    }

    pub fn width(&self) -> usize {
        self.plane.width
    }

    /// Square window at an even origin.
    pub fn crop(&self, top: usize, left: usize, size: usize) -> Result<Self, TrainError> {
        let plane = self
            .plane
            .crop(top, left, size, size)
            .map_err(|e| TrainError::Data(e.to_string()))?;
        let (h, w) = (self.height(), self.width());
        let target = Tensor::from_fn(&[3, size, size], |i| {
            let (c, y, x) = (i / (size * size), (i / size) % size, i % size);
            self.target.data()[(c * h + top + y) * w + left + x]
        });
        Ok(Self {
            plane,
            pattern: self.pattern,
            target,
        })
    }

    pub fn packed(&self, mode: SplitMode) -> PackedInput {
        pack(&self.plane, self.pattern, mode)
    }
}

pub fn samples_from_pairs(pairs: &[Pair]) -> Result<Vec<Sample>, TrainError> {
    pairs.iter().map(Sample::from_pair).collect()
}
