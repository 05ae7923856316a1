//! Minibatches, in-batch pair and triplet mining, and input noise.

use serde::{Deserialize, Serialize};

use crate::data_io::EmbeddingDataset;
use crate::losses::{PairBatch, TripletBatch};
use crate::tensor::{Matrix, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochPlan {
    pub batch_size: usize,
    pub drop_last: bool,
}

impl EpochPlan {
    pub fn new(batch_size: usize) -> Self {
        Self {
            batch_size,
            drop_last: false,
        }
    }
}

/// Index lists of one epoch: a seeded permutation of `0..n` cut into
/// consecutive chunks.
pub fn epoch_batches(n: usize, plan: EpochPlan, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::Data("cannot batch an empty dataset".into()));
    }
    if plan.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let order = rng.permutation(n);
    Ok(order
        .chunks(plan.batch_size)
        .filter(|c| !plan.drop_last || c.len() == plan.batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub x: Matrix,
    pub labels: Vec<usize>,
}

pub fn iterate_batches(dataset: &EmbeddingDataset, plan: EpochPlan, rng: &mut Rng) -> Result<Vec<Batch>> {
    epoch_batches(dataset.len(), plan, rng)?
        .into_iter()
        .map(|indices| {
            Ok(Batch {
                x: dataset.embeddings().select_rows(&indices)?,
                labels: indices.iter().map(|&i| dataset.labels()[i]).collect(),
                indices,
            })
        })
        .collect()
}

/// Pairs as positions within a batch. Row `i` of the batch is the first
/// member of pair `i`; `partner[i]` is the second. `y` is 0 for a similar
/// pair and 1 for a dissimilar one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairPlan {
    pub partner: Vec<usize>,
    pub y: Vec<u8>,
}

impl PairPlan {
    pub fn anchors(&self) -> Vec<usize> {
        (0..self.partner.len()).collect()
    }

    pub fn similar_count(&self) -> usize {
        self.y.iter().filter(|&&y| y == 0).count()
    }
}

/// Each row picks similar or dissimilar with equal odds, then a uniform
/// partner of that kind; if the kind is impossible for the row, the other
/// kind is used.
pub fn plan_pairs(labels: &[usize], rng: &mut Rng) -> Result<PairPlan> {
    let n = labels.len();
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    if labels.iter().all(|&y| y == labels[0]) {
        log::warn!("single-class batch of {n}; all pairs are similar");
    }
    let mut partner = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut same = Vec::with_capacity(n);
    let mut other = Vec::with_capacity(n);
    for i in 0..n {
        same.clear();
        other.clear();
        for j in 0..n {
            if j == i {
                continue;
            }
            if labels[j] == labels[i] {
                same.push(j);
            } else {
                other.push(j);
            }
        }
        let want_similar = rng.uniform() < 0.5;
        let similar = if same.is_empty() {
            false
        } else if other.is_empty() {
            true
        } else {
            want_similar
        };
        let pool = if similar { &same } else { &other };
        partner.push(pool[rng.below(pool.len())]);
        y.push(u8::from(!similar));
    }
    Ok(PairPlan { partner, y })
}

/// Pairs over the rows of `batch`, for standalone use outside the trainer.
pub fn sample_pairs(batch: &Matrix, labels: &[usize], rng: &mut Rng) -> Result<PairBatch> {
    check_rows(batch, labels)?;
    let plan = plan_pairs(labels, rng)?;
    PairBatch::new(batch.clone(), batch.select_rows(&plan.partner)?, plan.y)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletPlan {
    pub anchor: Vec<usize>,
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
}

/// Whether any row of the batch can anchor a triplet.
pub fn triplets_possible(labels: &[usize]) -> bool {
    valid_anchors(labels).next().is_some()
}

fn valid_anchors(labels: &[usize]) -> impl Iterator<Item = usize> + '_ {
    (0..labels.len()).filter(move |&i| {
        let same = labels.iter().filter(|&&y| y == labels[i]).count();
        same >= 2 && same < labels.len()
    })
}

/// As many triplets as rows: uniform valid anchor, uniform positive of the
/// anchor's class, uniform negative from the other classes.
pub fn plan_triplets(labels: &[usize], rng: &mut Rng) -> Result<TripletPlan> {
    let anchors: Vec<usize> = valid_anchors(labels).collect();
    if anchors.is_empty() {
        return Err(Error::Data(format!(
            "no triplet possible in a batch of {} with labels {:?}",
            labels.len(),
            summarize(labels)
        )));
    }
    let n = labels.len();
    let mut plan = TripletPlan {
        anchor: Vec::with_capacity(n),
        positive: Vec::with_capacity(n),
        negative: Vec::with_capacity(n),
    };
    let mut same = Vec::new();
    let mut other = Vec::new();
    for _ in 0..n {
        let a = anchors[rng.below(anchors.len())];
        same.clear();
        other.clear();
        for j in 0..n {
            if labels[j] != labels[a] {
                other.push(j);
            } else if j != a {
                same.push(j);
            }
        }
        plan.anchor.push(a);
        plan.positive.push(same[rng.below(same.len())]);
        plan.negative.push(other[rng.below(other.len())]);
    }
    Ok(plan)
}

pub fn sample_triplets(batch: &Matrix, labels: &[usize], rng: &mut Rng) -> Result<TripletBatch> {
    check_rows(batch, labels)?;
    let plan = plan_triplets(labels, rng)?;
    TripletBatch::new(
        batch.select_rows(&plan.anchor)?,
        batch.select_rows(&plan.positive)?,
        batch.select_rows(&plan.negative)?,
    )
}

fn check_rows(batch: &Matrix, labels: &[usize]) -> Result<()> {
    if batch.rows() != labels.len() {
        return Err(Error::Data(format!(
            "{} labels for a batch of {} rows",
            labels.len(),
            batch.rows()
        )));
    }
    Ok(())
}

fn summarize(labels: &[usize]) -> Vec<(usize, usize)> {
    let mut counts: Vec<(usize, usize)> = Vec::new();
    for &y in labels {
        match counts.iter_mut().find(|(c, _)| *c == y) {
            Some((_, k)) => *k += 1,
            None => counts.push((y, 1)),
        }
    }
    counts
}

/// Additive Gaussian noise at a fixed per-row SNR, active over a window of
/// the training schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub snr_db: f64,
    /// Window start as a fraction of the total epochs.
    pub window_start: f64,
    /// Window length as a fraction of the total epochs.
    pub active_fraction: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            snr_db: 20.0,
            window_start: 0.0,
            active_fraction: 0.3,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.snr_db.is_finite() {
            return Err(Error::Config(format!("snr_db must be finite, got {}", self.snr_db)));
        }
        for (name, v) in [
            ("window start", self.window_start),
            ("active fraction", self.active_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("noise {name} {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn is_active(&self, epoch: usize, total_epochs: usize) -> bool {
        let e = epoch as f64;
        let total = total_epochs as f64;
        e >= self.window_start * total && e < (self.window_start + self.active_fraction) * total
    }

    /// Noise power over signal power, `10^(−snr/10)`.
    pub fn power_ratio(&self) -> f64 {
        10f64.powf(-self.snr_db / 10.0)
    }
}

/// Adds noise with power `P_signal · 10^(−snr/10)` to each row, where
/// `P_signal` is the row's mean square. Zero rows and epochs outside the
/// window pass through untouched and draw nothing from `rng`.
pub fn add_noise(
    batch: &Matrix,
    config: &NoiseConfig,
    epoch: usize,
    total_epochs: usize,
    rng: &mut Rng,
) -> Result<Matrix> {
    config.validate()?;
    let mut out = batch.clone();
    if !config.is_active(epoch, total_epochs) || batch.cols() == 0 {
        return Ok(out);
    }
    let ratio = config.power_ratio();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let power = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
        if power == 0.0 {
            continue;
        }
        let std = (power * ratio).sqrt();
        for v in row.iter_mut() {
            *v += std * rng.standard_normal();
        }
    }
    if out.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("noise produced a non-finite input".into()));
    }
    Ok(out)
}
