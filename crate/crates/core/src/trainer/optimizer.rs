use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::tensor::{Matrix, TensorError};
use crate::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// First and second moment estimates, one pair per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl AdamMoments {
    pub fn zeros_like(params: &[&Matrix]) -> Self {
        let zeros: Vec<Matrix> = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
        }
    }
}

fn check_shapes(params: &[&mut Matrix], grads: &[Matrix]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::State(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(TensorError::Shape {
                op: "optimizer_step",
                left: p.shape(),
                right: g.shape(),
            }
            .into());
        }
    }
    Ok(())
}

/// One bias-corrected Adam update at step `t` (1-based).
pub fn adam_step(
    params: &mut [&mut Matrix],
    grads: &[Matrix],
    moments: &mut AdamMoments,
    lr: f64,
    t: u64,
) -> Result<()> {
    check_shapes(params, grads)?;
    if t == 0 {
        return Err(Error::State("Adam step counter starts at 1".into()));
    }
    if moments.m.len() != params.len() || moments.v.len() != params.len() {
        return Err(Error::State("moment count does not match parameters".into()));
    }
    let t = i32::try_from(t).unwrap_or(i32::MAX);
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = moments.m[k].as_mut_slice();
        let v = moments.v[k].as_mut_slice();
        if m.len() != g.len() || v.len() != g.len() {
            return Err(Error::State(format!("moment {k} shape does not match its parameter")));
        }
        let p = p.as_mut_slice();
        for (i, &gi) in g.as_slice().iter().enumerate() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
        }
    }
    Ok(())
}

pub fn sgd_step(params: &mut [&mut Matrix], grads: &[Matrix], lr: f64) -> Result<()> {
    check_shapes(params, grads)?;
    for (p, g) in params.iter_mut().zip(grads) {
        for (pi, gi) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *pi -= lr * gi;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    moments: Option<AdamMoments>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &[&Matrix]) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        Ok(Self {
            kind,
            lr,
            step: 0,
            moments: (kind == OptimizerKind::Adam).then(|| AdamMoments::zeros_like(params)),
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> Option<&AdamMoments> {
        self.moments.as_ref()
    }

    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<()> {
        self.step += 1;
        match &mut self.moments {
            Some(moments) => adam_step(params, grads, moments, self.lr, self.step),
            None => sgd_step(params, grads, self.lr),
        }
    }
}
