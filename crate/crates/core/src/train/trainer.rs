use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::loss::{total_loss, PerceptualProxy};
use crate::metrics::psnr;
use crate::model::{read_weights, write_weights, Model, ModelError};
use crate::tensor::Tensor;

use super::data::Sample;
use super::schedule::Adam;
use super::{TrainConfig, TrainError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RMFC";
pub const CHECKPOINT_VERSION: u8 = 1;

/// Summary of one epoch, written as one JSON line to the history file.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean over the epoch's optimizer steps of the batch loss.
    pub loss: f64,
    /// Mean PSNR of the epoch's training predictions.
    #[serde(with = "super::finite_or_inf")]
    pub psnr: f64,
    pub steps: usize,
}

struct SampleResult {
    loss: f64,
    psnr: f64,
    grads: Vec<Tensor<f32>>,
}

/// Training state: model, optimizer and the next epoch to run. Everything
/// random is drawn from `(seed, epoch)`, so this is all a resume needs.
pub struct Trainer {
    config: TrainConfig,
    model: Model<f32>,
    adam: Adam,
    epoch: usize,
    extractor: PerceptualProxy,
    /// Batch-mean loss of every optimizer step taken by this instance.
    pub step_losses: Vec<f64>,
}

/// RNG for `epoch`: seed `seed + (epoch + 1) * 2^20`, wrapping.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(((epoch as u64) + 1) << 20))
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let model = Model::init(config.model, config.seed)?;
        Ok(Self::with_model(config, model))
    }

    /// Starts from given weights with fresh optimizer state.
    pub fn with_model(config: TrainConfig, model: Model<f32>) -> Self {
        let adam = Adam::new(model.parameters());
        Self {
            config,
            model,
            adam,
            epoch: 0,
            extractor: PerceptualProxy::default(),
            step_losses: Vec::new(),
        }
    }

    /// Reassembles a trainer from saved state. Moment shapes must match the
    /// model's parameters.
    pub fn from_parts(
        config: TrainConfig,
        model: Model<f32>,
        adam: Adam,
        epoch: usize,
    ) -> Result<Self, TrainError> {
        let shapes_match = adam.m.len() == adam.v.len()
            && adam.m.len() == model.parameters().count()
            && model
                .parameters()
                .zip(adam.m.iter().zip(&adam.v))
                .all(|(p, (m, v))| p.shape() == m.shape() && p.shape() == v.shape());
        if !shapes_match {
            return Err(TrainError::Checkpoint(
                "optimizer moments do not match the model".into(),
            ));
        }
        let mut t = Self::with_model(config, model);
        t.adam = adam;
        t.epoch = epoch;
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn into_model(self) -> Model<f32> {
        self.model
    }

    pub fn adam(&self) -> &Adam {
        &self.adam
    }

    /// Index of the next epoch to run.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    fn sample_step(&self, sample: &Sample) -> Result<SampleResult, TrainError> {
        let mut g = Graph::<f32>::new();
        let x = g.input(sample.packed(self.config.model.split_mode).tensor.cast());
        let pass = self.model.forward(&mut g, x)?;
        let target = g.input(sample.target.cast());
        let terms = total_loss(
            &mut g,
            pass.output,
            target,
            &self.config.loss,
            &self.extractor,
        )?;
        let loss = f64::from(g.value(terms.total).data()[0]);
        let psnr = psnr(g.value(pass.output), g.value(target))
            .map_err(|e| TrainError::Data(e.to_string()))?;
        g.backward(terms.total)?;
        let grads = pass
            .params
            .iter()
            .map(|&p| {
                g.take_grad(p)
                    .unwrap_or_else(|| Tensor::zeros(g.value(p).shape()))
            })
            .collect();
        Ok(SampleResult { loss, psnr, grads })
    }

    fn batch_results(&self, batch: &[Sample]) -> Vec<Result<SampleResult, TrainError>> {
        let threads = self.config.threads.clamp(1, batch.len().max(1));
        if threads == 1 {
            return batch.iter().map(|s| self.sample_step(s)).collect();
        }
        let chunk = batch.len().div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .chunks(chunk)
                .map(|part| {
                    scope
                        .spawn(move || part.iter().map(|s| self.sample_step(s)).collect::<Vec<_>>())
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("worker panicked"))
                .collect()
        })
    }

    /// One pass over `data` in seeded, shuffled batches of random patches.
    pub fn run_epoch(&mut self, data: &[Sample]) -> Result<EpochRecord, TrainError> {
        if data.is_empty() {
            return Err(TrainError::Data("empty training set".into()));
        }
        let epoch = self.epoch;
        let lr = self.config.schedule.lr(epoch as f64);
        let mut rng = epoch_rng(self.config.seed, epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);

        let (mut loss_sum, mut psnr_sum, mut steps, mut seen) = (0.0, 0.0, 0, 0);
        for ids in order.chunks(self.config.batch_size) {
            let batch: Vec<Sample> = ids
                .iter()
                .map(|&i| self.patch(&data[i], &mut rng))
                .collect::<Result<_, _>>()?;
            let results = self.batch_results(&batch);
            let mut total: Option<Vec<Tensor<f32>>> = None;
            let mut batch_loss = 0.0;
            for r in results {
                let r = r?;
                if !r.loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        epoch,
                        lr,
                        batch: ids.to_vec(),
                    });
                }
                batch_loss += r.loss;
                psnr_sum += r.psnr;
                match &mut total {
                    None => total = Some(r.grads),
                    Some(acc) => acc
                        .iter_mut()
                        .zip(&r.grads)
                        .for_each(|(a, g)| a.add_assign(g)),
                }
            }
            let n = ids.len() as f32;
            let mut grads = total.expect("non-empty batch");
            grads
                .iter_mut()
                .for_each(|g| g.data_mut().iter_mut().for_each(|v| *v /= n));
            self.adam.update(self.model.parameters_mut(), &grads, lr);
            let mean = batch_loss / ids.len() as f64;
            self.step_losses.push(mean);
            loss_sum += mean;
            steps += 1;
            seen += ids.len();
        }
        self.epoch += 1;
        Ok(EpochRecord {
            epoch,
            lr,
            loss: loss_sum / steps as f64,
            psnr: psnr_sum / seen as f64,
            steps,
        })
    }

    fn patch(&self, sample: &Sample, rng: &mut ChaCha8Rng) -> Result<Sample, TrainError> {
        let p = self.config.patch;
        if p == 0 || (p == sample.height() && p == sample.width()) {
            return Ok(sample.clone());
        }
        if p > sample.height() || p > sample.width() {
            return Err(TrainError::Data(format!(
                "patch {p} larger than {}x{}",
                sample.height(),
                sample.width()
            )));
        }
        let top = 2 * rng.random_range(0..=(sample.height() - p) / 2);
        let left = 2 * rng.random_range(0..=(sample.width() - p) / 2);
        sample.crop(top, left, p)
    }

    /// Runs epochs until `config.epochs`, calling `on_epoch` after each.
    pub fn fit(
        &mut self,
        data: &[Sample],
        mut on_epoch: impl FnMut(&EpochRecord, &Trainer) -> Result<(), TrainError>,
    ) -> Result<Vec<EpochRecord>, TrainError> {
        let mut history = Vec::new();
        while self.epoch < self.config.epochs {
            let rec = self.run_epoch(data)?;
            on_epoch(&rec, self)?;
            history.push(rec);
        }
        Ok(history)
    }

    /// Weight file, then `"RMFC" | version u8 | step u64 | epoch u32 |
    /// count u32 | m f32 * count | v f32 * count`, little-endian.
    pub fn write_checkpoint<W: Write>(&self, mut sink: W) -> Result<usize, TrainError> {
        let mut buf = Vec::new();
        write_weights(&self.model, &mut buf)?;
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.push(CHECKPOINT_VERSION);
        buf.extend_from_slice(&self.adam.step.to_le_bytes());
        buf.extend_from_slice(&(self.epoch as u32).to_le_bytes());
        buf.extend_from_slice(&(self.model.param_count() as u32).to_le_bytes());
        for moments in [&self.adam.m, &self.adam.v] {
            for t in moments {
                for v in t.data() {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        sink.write_all(&buf)?;
        Ok(buf.len())
    }

    pub fn save_checkpoint(&self, path: impl AsRef<std::path::Path>) -> Result<usize, TrainError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let n = self.write_checkpoint(&mut out)?;
        out.flush()?;
        Ok(n)
    }

    /// Restores a trainer. The checkpoint's model must match `config.model`.
    pub fn read_checkpoint<R: Read>(
        config: TrainConfig,
        mut source: R,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        let model = read_weights(&mut source)?;
        if *model.config() != config.model {
            return Err(ModelError::ConfigMismatch {
                expected: config.model,
                found: *model.config(),
            }
            .into());
        }
        let bad = |m: &str| TrainError::Checkpoint(m.to_string());
        let mut head = [0u8; 21];
        source
            .read_exact(&mut head)
            .map_err(|_| bad("truncated optimizer block"))?;
        if &head[..4] != CHECKPOINT_MAGIC {
            return Err(bad("missing optimizer block magic"));
        }
        if head[4] != CHECKPOINT_VERSION {
            return Err(bad("unsupported optimizer block version"));
        }
        let step = u64::from_le_bytes(head[5..13].try_into().unwrap());
        let epoch = u32::from_le_bytes(head[13..17].try_into().unwrap()) as usize;
        let count = u32::from_le_bytes(head[17..21].try_into().unwrap()) as usize;
        if count != model.param_count() {
            return Err(bad("optimizer block size does not match the model"));
        }
        let mut trainer = Self::with_model(config, model);
        trainer.adam.step = step;
        trainer.epoch = epoch;
        let mut bytes = vec![0u8; 8 * count];
        source
            .read_exact(&mut bytes)
            .map_err(|_| bad("truncated optimizer block"))?;
        let mut values = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
        for moments in [&mut trainer.adam.m, &mut trainer.adam.v] {
            for t in moments.iter_mut() {
                t.data_mut()
                    .iter_mut()
                    .for_each(|v| *v = values.next().expect("sized"));
            }
        }
        let mut rest = [0u8; 1];
        if source.read(&mut rest)? != 0 {
            return Err(bad("trailing bytes after optimizer block"));
        }
        Ok(trainer)
    }

    pub fn load_checkpoint(
        config: TrainConfig,
        path: impl AsRef<std::path::Path>,
    ) -> Result<Self, TrainError> {
        Self::read_checkpoint(config, std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
