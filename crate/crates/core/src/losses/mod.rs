//! Cross-entropy, contrastive and triplet losses with analytic gradients, and
//! the weighted multitask combination over output heads.

mod multitask;

pub use multitask::{combine, HeadTag, LossKind, MultitaskConfig, TermLoss, WeightedTerm};

use serde::{Deserialize, Serialize};

use crate::tensor::Matrix;
use crate::{Error, Result};

/// Stability constant under the square root of the distance.
pub const DISTANCE_EPSILON: f64 = 1e-6;
pub const DEFAULT_CONTRASTIVE_MARGIN: f64 = 1.0;
pub const DEFAULT_TRIPLET_MARGIN: f64 = 0.2;

/// Mean cross-entropy of softmax(`logits`) against integer `labels`, and its
/// gradient `(softmax − onehot) / N` with respect to the logits.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (n, classes) = logits.shape();
    if labels.len() != n {
        return Err(Error::Label(format!("{} labels for {n} logit rows", labels.len())));
    }
    if n == 0 {
        return Err(Error::Data("cross-entropy over an empty batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Label(format!("label {bad} outside [0, {classes})")));
    }
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(n * classes);
    for (row, &y) in logits.row_iter().zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        total += log_z - row[y];
        grad.extend(row.iter().enumerate().map(|(j, &v)| {
            let p = (v - log_z).exp();
            (p - if j == y { 1.0 } else { 0.0 }) * inv_n
        }));
    }
    Ok((total * inv_n, Matrix::from_vec(n, classes, grad)?))
}

/// `sqrt(Σ (a−b)² + eps)`.
pub fn euclidean_distance(a: &[f64], b: &[f64], eps: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Data(format!(
            "distance between vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sq + eps).sqrt())
}

/// Which pairs the hinge applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContrastiveConvention {
    /// Similar pairs (`y = 0`) pay `D²`; dissimilar pairs (`y = 1`) pay
    /// `max(m − D, 0)²`.
    #[default]
    Standard,
    /// The two terms exchanged: `y = 0` pays the hinge,
    /// `y = 1` pays `D²`. Kept for auditing only.
    Swapped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveParams {
    pub margin: f64,
    pub epsilon: f64,
    pub convention: ContrastiveConvention,
}

impl Default for ContrastiveParams {
    fn default() -> Self {
        Self {
            margin: DEFAULT_CONTRASTIVE_MARGIN,
            epsilon: DISTANCE_EPSILON,
            convention: ContrastiveConvention::Standard,
        }
    }
}

impl ContrastiveParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("contrastive margin {} must be > 0", self.margin)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon {} must be >= 0", self.epsilon)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletParams {
    pub margin: f64,
    /// `max(0, ·)` around each row's value; off reproduces the raw difference.
    pub hinge: bool,
    pub epsilon: f64,
}

impl Default for TripletParams {
    fn default() -> Self {
        Self {
            margin: DEFAULT_TRIPLET_MARGIN,
            hinge: true,
            epsilon: DISTANCE_EPSILON,
        }
    }
}

impl TripletParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("triplet margin {} must be >= 0", self.margin)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon {} must be >= 0", self.epsilon)));
        }
        Ok(())
    }
}

/// Row-aligned projections of two inputs and a similarity flag per row
/// (`0` similar, `1` dissimilar).
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub z1: Matrix,
    pub z2: Matrix,
    pub y: Vec<u8>,
}

impl PairBatch {
    pub fn new(z1: Matrix, z2: Matrix, y: Vec<u8>) -> Result<Self> {
        if z1.shape() != z2.shape() || y.len() != z1.rows() {
            return Err(Error::Data(format!(
                "pair batch shapes {:?}, {:?} with {} labels",
                z1.shape(),
                z2.shape(),
                y.len()
            )));
        }
        if let Some(&bad) = y.iter().find(|&&v| v > 1) {
            return Err(Error::Label(format!("pair label {bad} is not 0 or 1")));
        }
        Ok(Self { z1, z2, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch {
    pub anchor: Matrix,
    pub positive: Matrix,
    pub negative: Matrix,
}

impl TripletBatch {
    pub fn new(anchor: Matrix, positive: Matrix, negative: Matrix) -> Result<Self> {
        if anchor.shape() != positive.shape() || anchor.shape() != negative.shape() {
            return Err(Error::Data(format!(
                "triplet shapes {:?}, {:?}, {:?}",
                anchor.shape(),
                positive.shape(),
                negative.shape()
            )));
        }
        Ok(Self {
            anchor,
            positive,
            negative,
        })
    }

    pub fn len(&self) -> usize {
        self.anchor.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.anchor.rows() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairGrads {
    pub z1: Matrix,
    pub z2: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletGrads {
    pub anchor: Matrix,
    pub positive: Matrix,
    pub negative: Matrix,
}

/// `∂D/∂a` for `D = sqrt(|a−b|² + eps)`; zero where `D` vanishes.
fn distance_direction(diff: &[f64], dist: f64) -> impl Iterator<Item = f64> + '_ {
    let inv = if dist > 0.0 { 1.0 / dist } else { 0.0 };
    diff.iter().map(move |d| d * inv)
}

/// Mean contrastive loss over the batch and its gradients for `z1`, `z2`.
pub fn contrastive(batch: &PairBatch, params: &ContrastiveParams) -> Result<(f64, PairGrads)> {
    params.validate()?;
    let (n, dim) = batch.z1.shape();
    if n == 0 {
        return Err(Error::Data("contrastive loss over an empty batch".into()));
    }
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let mut g1 = Vec::with_capacity(n * dim);
    let mut diff = vec![0.0; dim];
    for i in 0..n {
        for (d, (a, b)) in diff.iter_mut().zip(batch.z1.row(i).iter().zip(batch.z2.row(i))) {
            *d = a - b;
        }
        let sq: f64 = diff.iter().map(|d| d * d).sum();
        let dist = (sq + params.epsilon).sqrt();
        let pull = matches!(
            (params.convention, batch.y[i]),
            (ContrastiveConvention::Standard, 0) | (ContrastiveConvention::Swapped, 1)
        );
        if pull {
            total += sq + params.epsilon;
            g1.extend(diff.iter().map(|d| 2.0 * d * inv_n));
        } else {
            let hinge = (params.margin - dist).max(0.0);
            total += hinge * hinge;
            let scale = -2.0 * hinge * inv_n;
            g1.extend(distance_direction(&diff, dist).map(|u| scale * u));
        }
    }
    let z1 = Matrix::from_vec(n, dim, g1)?;
    let z2 = z1.scale(-1.0)?;
    Ok((total * inv_n, PairGrads { z1, z2 }))
}

/// Mean of `D(a,p) − D(a,n) + margin` per row, hinged at zero when
/// `params.hinge`, with gradients for all three inputs.
pub fn triplet(batch: &TripletBatch, params: &TripletParams) -> Result<(f64, TripletGrads)> {
    params.validate()?;
    let (n, dim) = batch.anchor.shape();
    if n == 0 {
        return Err(Error::Data("triplet loss over an empty batch".into()));
    }
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let mut ga = Vec::with_capacity(n * dim);
    let mut gp = Vec::with_capacity(n * dim);
    let mut gn = Vec::with_capacity(n * dim);
    for i in 0..n {
        let a = batch.anchor.row(i);
        let dp: Vec<f64> = a.iter().zip(batch.positive.row(i)).map(|(x, y)| x - y).collect();
        let dn: Vec<f64> = a.iter().zip(batch.negative.row(i)).map(|(x, y)| x - y).collect();
        let dist_p = (dp.iter().map(|d| d * d).sum::<f64>() + params.epsilon).sqrt();
        let dist_n = (dn.iter().map(|d| d * d).sum::<f64>() + params.epsilon).sqrt();
        let value = dist_p - dist_n + params.margin;
        if params.hinge && value <= 0.0 {
            ga.extend(std::iter::repeat_n(0.0, dim));
            gp.extend(std::iter::repeat_n(0.0, dim));
            gn.extend(std::iter::repeat_n(0.0, dim));
            continue;
        }
        total += value;
        let up: Vec<f64> = distance_direction(&dp, dist_p).collect();
        let un: Vec<f64> = distance_direction(&dn, dist_n).collect();
        ga.extend(up.iter().zip(&un).map(|(p, q)| (p - q) * inv_n));
        gp.extend(up.iter().map(|p| -p * inv_n));
        gn.extend(un.iter().map(|q| q * inv_n));
    }
    Ok((
        total * inv_n,
        TripletGrads {
            anchor: Matrix::from_vec(n, dim, ga)?,
            positive: Matrix::from_vec(n, dim, gp)?,
            negative: Matrix::from_vec(n, dim, gn)?,
        },
    ))
}
