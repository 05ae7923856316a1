use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Slope of LeakyReLU on the negative side.
pub const LEAKY_RELU_SLOPE: f64 = 0.01;
/// Width of the linear projection heads used by the metric losses.
pub const DEFAULT_PROJECTION_DIM: usize = 64;
/// Deepest trunk accepted.
pub const MAX_HIDDEN_LAYERS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Elu,
    Swish,
}

impl Activation {
    pub const ALL: [Activation; 4] = [
        Activation::Relu,
        Activation::LeakyRelu,
        Activation::Elu,
        Activation::Swish,
    ];

    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_RELU_SLOPE * z
                }
            }
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
            Activation::Swish => z * sigmoid(z),
        }
    }

    /// Derivative with respect to the pre-activation `z`.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAKY_RELU_SLOPE
                }
            }
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    z.exp()
                }
            }
            Activation::Swish => {
                let s = sigmoid(z);
                s + z * s * (1.0 - s)
            }
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::LeakyRelu => 1,
            Activation::Elu => 2,
            Activation::Swish => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(usize::from(code)).copied()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leakyrelu",
            Activation::Elu => "elu",
            Activation::Swish => "swish",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "relu" => Ok(Activation::Relu),
            "leakyrelu" => Ok(Activation::LeakyRelu),
            "elu" => Ok(Activation::Elu),
            "swish" | "silu" => Ok(Activation::Swish),
            _ => Err(Error::Config(format!("unknown activation {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadRole {
    /// Raw class logits; softmax lives in the loss.
    Classification,
    /// Linear embedding consumed by the contrastive or triplet loss.
    Projection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HeadConfig {
    pub role: HeadRole,
    pub output_dim: usize,
}

impl HeadConfig {
    pub fn classification(num_classes: usize) -> Self {
        Self {
            role: HeadRole::Classification,
            output_dim: num_classes,
        }
    }

    pub fn projection(dim: usize) -> Self {
        Self {
            role: HeadRole::Projection,
            output_dim: dim,
        }
    }
}

/// Shape of the trunk (Linear → BatchNorm → activation → dropout per hidden
/// layer) and of the output heads hanging off its last hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub dropout_rate: f64,
    pub batch_norm: bool,
    pub heads: Vec<HeadConfig>,
}

impl NetworkConfig {
    /// 256/128/64 trunk, ReLU, dropout 0.3, batch norm, one classification head.
    pub fn baseline(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_sizes: vec![256, 128, 64],
            activation: Activation::Relu,
            dropout_rate: 0.3,
            batch_norm: true,
            heads: vec![HeadConfig::classification(num_classes)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.len() > MAX_HIDDEN_LAYERS {
            return Err(Error::Config(format!(
                "expected 1 to {MAX_HIDDEN_LAYERS} hidden layers, got {}",
                self.hidden_sizes.len()
            )));
        }
        if let Some(i) = self.hidden_sizes.iter().position(|&w| w == 0) {
            return Err(Error::Config(format!("hidden layer {i} has zero width")));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.heads.is_empty() {
            return Err(Error::Config("at least one output head is required".into()));
        }
        if let Some(i) = self.heads.iter().position(|h| h.output_dim == 0) {
            return Err(Error::Config(format!("head {i} has zero width")));
        }
        Ok(())
    }

    pub fn trunk_width(&self) -> usize {
        *self.hidden_sizes.last().unwrap_or(&self.input_dim)
    }

    /// Index of the head used for prediction: the first classification head.
    pub fn prediction_head(&self) -> Option<usize> {
        self.heads.iter().position(|h| h.role == HeadRole::Classification)
    }
}
