use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::MergedSegment;
use crate::error::{Error, Result};
use crate::model::IMU_CHANNELS;
use crate::tensor::Tensor;

/// Segment-level partition; no repetition contributes to both sides.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<MergedSegment>,
    pub test: Vec<MergedSegment>,
    pub seed: u64,
    pub train_fraction: f64,
}

/// Shuffles segment indices with `seed` and assigns the first
/// `round(train_fraction * n)` to training. Both sides keep input order.
pub fn split_dataset(segments: Vec<MergedSegment>, train_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    let n = segments.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 segments to split, got {n}"
        )));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_train = vec![false; n];
    for &i in &order[..n_train] {
        is_train[i] = true;
    }
    let (train, test) = segments.into_iter().zip(is_train).partition::<Vec<_>, _>(|(_, t)| *t);
    Ok(DatasetSplit {
        train: train.into_iter().map(|(s, _)| s).collect(),
        test: test.into_iter().map(|(s, _)| s).collect(),
        seed,
        train_fraction,
    })
}

/// Fixed-length training crops. `inputs[b]` is `[6 x L]`, `targets[b]` is
/// `[1 x L]`, and `sources[b]` names the segment (index into the sampled
/// list) and crop start; negative starts mean left zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub inputs: Vec<Tensor>,
    pub targets: Vec<Tensor>,
    pub sources: Vec<(usize, isize)>,
}

impl WindowBatch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Draws random crops from a fixed list of segments. One epoch holds
/// `ceil(len / L)` crops of every segment, shuffled, then cut into batches.
#[derive(Debug, Clone)]
pub struct WindowSampler<'a> {
    segments: &'a [MergedSegment],
    crop_len: usize,
    batch: usize,
    seed: u64,
}

/// Sampler over the training side of `split` only.
pub fn make_windows(
    split: &DatasetSplit,
    crop_len: usize,
    batch: usize,
    seed: u64,
    min_len: usize,
) -> Result<WindowSampler<'_>> {
    WindowSampler::new(&split.train, crop_len, batch, seed, min_len)
}

impl<'a> WindowSampler<'a> {
    /// `min_len` is the smallest admissible crop, normally the model's
    /// receptive field.
    pub fn new(
        segments: &'a [MergedSegment],
        crop_len: usize,
        batch: usize,
        seed: u64,
        min_len: usize,
    ) -> Result<Self> {
        if batch < 1 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        if crop_len < min_len.max(1) {
            return Err(Error::Config(format!(
                "crop length {crop_len} is shorter than the receptive field {min_len}"
            )));
        }
        let longest = segments.iter().map(MergedSegment::len).max().unwrap_or(0);
        if segments.is_empty() || longest == 0 {
            return Err(Error::InsufficientData("no training segments".into()));
        }
        if crop_len > longest {
            return Err(Error::Config(format!(
                "crop length {crop_len} exceeds the longest segment ({longest})"
            )));
        }
        Ok(Self {
            segments,
            crop_len,
            batch,
            seed,
        })
    }

    pub fn crops_per_epoch(&self) -> usize {
        self.segments.iter().map(|s| s.len().div_ceil(self.crop_len)).sum()
    }

    /// Batches for `epoch`; a function of `(seed, epoch)` only.
    pub fn epoch(&self, epoch: usize) -> Vec<WindowBatch> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch as u64);
        let l = self.crop_len;
        let mut crops: Vec<(usize, isize)> = Vec::with_capacity(self.crops_per_epoch());
        for (si, s) in self.segments.iter().enumerate() {
            for _ in 0..s.len().div_ceil(l) {
                let start = if s.len() >= l {
                    rng.random_range(0..=s.len() - l) as isize
                } else {
                    s.len() as isize - l as isize
                };
                crops.push((si, start));
            }
        }
        crops.shuffle(&mut rng);
        crops
            .chunks(self.batch)
            .map(|chunk| {
                let (inputs, targets) = chunk.iter().map(|&(si, start)| self.crop(si, start)).unzip();
                WindowBatch {
                    inputs,
                    targets,
                    sources: chunk.to_vec(),
                }
            })
            .collect()
    }

    fn crop(&self, si: usize, start: isize) -> (Tensor, Tensor) {
        let s = &self.segments[si];
        let l = self.crop_len;
        let pad = (-start).max(0) as usize;
        let from = start.max(0) as usize;
        let n = l - pad;
        let mut x = Tensor::zeros(IMU_CHANNELS, l);
        for c in 0..IMU_CHANNELS {
            x.row_mut(c)[pad..].copy_from_slice(&s.imu.row(c)[from..from + n]);
        }
        let mut y = Tensor::zeros(1, l);
        y.row_mut(0)[pad..].copy_from_slice(&s.target[from..from + n]);
        (x, y)
    }
}
