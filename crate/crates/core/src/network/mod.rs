//! Multi-head feed-forward classifier with hand-written backprop.

mod checkpoint;
mod config;

pub use config::{
    Activation, HeadConfig, HeadRole, NetworkConfig, DEFAULT_PROJECTION_DIM, LEAKY_RELU_SLOPE, MAX_HIDDEN_LAYERS,
};

use crate::tensor::{Matrix, Rng};
use crate::{Error, Result};

/// Momentum of the batch-norm running statistics.
pub const BN_MOMENTUM: f64 = 0.1;
/// Variance epsilon inside batch normalization.
pub const BN_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `fan_in × fan_out`.
    pub weight: Matrix,
    /// `1 × fan_out`.
    pub bias: Matrix,
}

impl Linear {
    fn he_init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Result<Self> {
        let std = (2.0 / fan_in as f64).sqrt();
        Ok(Self {
            weight: Matrix::gaussian(rng, fan_in, fan_out, 0.0, std)?,
            bias: Matrix::zeros(1, fan_out),
        })
    }

    fn forward(&self, x: &Matrix) -> Result<Matrix> {
        Ok(x.matmul(&self.weight)?.add_row_broadcast(&self.bias)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Matrix,
    pub beta: Matrix,
    pub running_mean: Matrix,
    pub running_var: Matrix,
}

impl BatchNorm {
    fn new(width: usize) -> Result<Self> {
        Ok(Self {
            gamma: Matrix::filled(1, width, 1.0)?,
            beta: Matrix::zeros(1, width),
            running_mean: Matrix::zeros(1, width),
            running_var: Matrix::filled(1, width, 1.0)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer {
    pub linear: Linear,
    pub norm: Option<BatchNorm>,
}

/// Per-layer bookkeeping from a training-mode forward pass.
#[derive(Debug, Clone)]
struct LayerCache {
    input: Matrix,
    /// Normalized values `x̂` and `1/sqrt(var + eps)` per feature.
    normalized: Option<(Matrix, Vec<f64>)>,
    /// Input of the activation function.
    pre_activation: Matrix,
    /// Inverted-dropout mask, already scaled by `1/(1-p)`.
    mask: Option<Matrix>,
}

/// Everything `backward` needs from a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    trunk_output: Matrix,
    /// Batch mean and biased variance per batch-norm layer.
    batch_stats: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl ForwardCache {
    pub fn batch_rows(&self) -> usize {
        self.trunk_output.rows()
    }

    /// Batch-normalized values `x̂` of hidden layer `layer`, before scale and shift.
    pub fn normalized(&self, layer: usize) -> Option<&Matrix> {
        self.layers
            .get(layer)
            .and_then(|l| l.normalized.as_ref())
            .map(|(x, _)| x)
    }

    /// Input of hidden layer `layer`'s activation function.
    pub fn pre_activation(&self, layer: usize) -> Option<&Matrix> {
        self.layers.get(layer).map(|l| &l.pre_activation)
    }
}

/// Gradients for every trainable parameter (in [`Network::param_names`]
/// order) plus the gradient with respect to the network input.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<Matrix>,
    pub input: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    hidden: Vec<HiddenLayer>,
    heads: Vec<Linear>,
}

impl Network {
    /// He-normal weights, zero biases, unit batch-norm scale. Draw order is
    /// hidden layers first, then heads, each weight matrix row by row.
    pub fn init(config: NetworkConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut hidden = Vec::with_capacity(config.hidden_sizes.len());
        let mut fan_in = config.input_dim;
        for &width in &config.hidden_sizes {
            hidden.push(HiddenLayer {
                linear: Linear::he_init(fan_in, width, rng)?,
                norm: if config.batch_norm {
                    Some(BatchNorm::new(width)?)
                } else {
                    None
                },
            });
            fan_in = width;
        }
        let heads = config
            .heads
            .iter()
            .map(|h| Linear::he_init(fan_in, h.output_dim, rng))
            .collect::<Result<_>>()?;
        Ok(Self { config, hidden, heads })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn hidden_layers(&self) -> &[HiddenLayer] {
        &self.hidden
    }

    pub fn heads(&self) -> &[Linear] {
        &self.heads
    }

    /// Weight shapes of every linear map, trunk first then heads.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.hidden
            .iter()
            .map(|l| &l.linear)
            .chain(&self.heads)
            .map(|l| l.weight.shape())
            .collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, layer) in self.hidden.iter().enumerate() {
            names.push(format!("hidden{i}.weight"));
            names.push(format!("hidden{i}.bias"));
            if layer.norm.is_some() {
                names.push(format!("hidden{i}.bn_gamma"));
                names.push(format!("hidden{i}.bn_beta"));
            }
        }
        for i in 0..self.heads.len() {
            names.push(format!("head{i}.weight"));
            names.push(format!("head{i}.bias"));
        }
        names
    }

    /// Trainable parameters in declaration order.
    pub fn params(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        for layer in &self.hidden {
            out.push(&layer.linear.weight);
            out.push(&layer.linear.bias);
            if let Some(bn) = &layer.norm {
                out.push(&bn.gamma);
                out.push(&bn.beta);
            }
        }
        for head in &self.heads {
            out.push(&head.weight);
            out.push(&head.bias);
        }
        out
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for layer in &mut self.hidden {
            out.push(&mut layer.linear.weight);
            out.push(&mut layer.linear.bias);
            if let Some(bn) = &mut layer.norm {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        for head in &mut self.heads {
            out.push(&mut head.weight);
            out.push(&mut head.bias);
        }
        out
    }

    /// Replaces trainable parameter `index` with a matrix of the same shape.
    pub fn set_param(&mut self, index: usize, value: Matrix) -> Result<()> {
        let mut params = self.params_mut();
        let count = params.len();
        let slot = params
            .get_mut(index)
            .ok_or_else(|| Error::State(format!("parameter {index} out of {count}")))?;
        if slot.shape() != value.shape() {
            return Err(Error::State(format!(
                "parameter {index} has shape {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        **slot = value;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.config.input_dim {
            return Err(Error::Data(format!(
                "network expects {}-dimensional input, got {}",
                self.config.input_dim,
                x.cols()
            )));
        }
        Ok(())
    }

    /// Dispatches on `mode`; only training mode produces a cache and touches
    /// `rng` (dropout) and the running batch-norm statistics.
    pub fn forward(&mut self, x: &Matrix, mode: Mode, rng: &mut Rng) -> Result<(Vec<Matrix>, Option<ForwardCache>)> {
        match mode {
            Mode::Train => {
                let (outputs, cache) = self.forward_train(x, rng)?;
                Ok((outputs, Some(cache)))
            }
            Mode::Eval => Ok((self.forward_eval(x)?, None)),
        }
    }

    /// Training-mode pass: batch statistics, dropout, running-stat update.
    pub fn forward_train(&mut self, x: &Matrix, rng: &mut Rng) -> Result<(Vec<Matrix>, ForwardCache)> {
        let (outputs, cache) = self.forward_train_frozen(x, rng)?;
        self.update_running_stats(&cache)?;
        Ok((outputs, cache))
    }

    /// Training-mode pass that leaves the running statistics untouched.
    pub(crate) fn forward_train_frozen(&self, x: &Matrix, rng: &mut Rng) -> Result<(Vec<Matrix>, ForwardCache)> {
        self.check_input(x)?;
        let n = x.rows();
        if self.config.batch_norm && n < 2 {
            return Err(Error::BatchTooSmall(n));
        }
        let rate = self.config.dropout_rate;
        let act = self.config.activation;
        let mut layers = Vec::with_capacity(self.hidden.len());
        let mut batch_stats = Vec::with_capacity(self.hidden.len());
        let mut h = x.clone();
        for layer in &self.hidden {
            let lin = layer.linear.forward(&h)?;
            let (pre_activation, normalized, stats) = match &layer.norm {
                Some(bn) => {
                    let (xhat, inv_std, mean, var) = normalize_batch(&lin)?;
                    let y = xhat
                        .hadamard(&broadcast_rows(&bn.gamma, n))?
                        .add_row_broadcast(&bn.beta)?;
                    (y, Some((xhat, inv_std)), Some((mean, var)))
                }
                None => (lin, None, None),
            };
            let mut out = pre_activation.map(|z| act.apply(z))?;
            let mask = if rate > 0.0 {
                let keep = 1.0 / (1.0 - rate);
                let mut m = Matrix::zeros(out.rows(), out.cols());
                for v in m.as_mut_slice() {
                    *v = if rng.uniform() >= rate { keep } else { 0.0 };
                }
                out = out.hadamard(&m)?;
                Some(m)
            } else {
                None
            };
            layers.push(LayerCache {
                input: std::mem::replace(&mut h, out),
                normalized,
                pre_activation,
                mask,
            });
            batch_stats.push(stats);
        }
        let outputs = self
            .heads
            .iter()
            .map(|head| head.forward(&h))
            .collect::<Result<Vec<_>>>()?;
        Ok((
            outputs,
            ForwardCache {
                layers,
                trunk_output: h,
                batch_stats,
            },
        ))
    }

    fn update_running_stats(&mut self, cache: &ForwardCache) -> Result<()> {
        let n = cache.batch_rows() as f64;
        for (layer, stats) in self.hidden.iter_mut().zip(&cache.batch_stats) {
            let (Some(bn), Some((mean, var))) = (&mut layer.norm, stats) else {
                continue;
            };
            let rm = bn.running_mean.as_mut_slice();
            for (r, m) in rm.iter_mut().zip(mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
            }
            // Running variance tracks the unbiased estimate.
            let rv = bn.running_var.as_mut_slice();
            for (r, v) in rv.iter_mut().zip(var) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * n / (n - 1.0);
            }
        }
        Ok(())
    }

    /// Inference pass: running batch-norm statistics, no dropout. Pure.
    pub fn forward_eval(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        self.check_input(x)?;
        let act = self.config.activation;
        let mut h = x.clone();
        for layer in &self.hidden {
            let mut z = layer.linear.forward(&h)?;
            if let Some(bn) = &layer.norm {
                let w = z.cols();
                let scale: Vec<f64> = (0..w)
                    .map(|j| bn.gamma.as_slice()[j] / (bn.running_var.as_slice()[j] + BN_EPSILON).sqrt())
                    .collect();
                let mean = bn.running_mean.as_slice();
                let beta = bn.beta.as_slice();
                for r in 0..z.rows() {
                    for (j, v) in z.row_mut(r).iter_mut().enumerate() {
                        *v = (*v - mean[j]) * scale[j] + beta[j];
                    }
                }
            }
            h = z.map(|v| act.apply(v))?;
        }
        self.heads.iter().map(|head| head.forward(&h)).collect()
    }

    /// Backpropagates per-head output gradients (one matrix per head, zeros
    /// for heads that do not contribute) through heads and shared trunk.
    pub fn backward(&self, cache: &ForwardCache, head_grads: &[Matrix]) -> Result<Gradients> {
        let n = cache.batch_rows();
        if cache.layers.len() != self.hidden.len() {
            return Err(Error::State(format!(
                "cache has {} layers, network has {}",
                cache.layers.len(),
                self.hidden.len()
            )));
        }
        if head_grads.len() != self.heads.len() {
            return Err(Error::State(format!(
                "got {} head gradients for {} heads",
                head_grads.len(),
                self.heads.len()
            )));
        }
        for (i, (g, head)) in head_grads.iter().zip(&self.heads).enumerate() {
            if g.shape() != (n, head.weight.cols()) {
                return Err(Error::State(format!(
                    "head {i} gradient has shape {:?}, expected {:?}",
                    g.shape(),
                    (n, head.weight.cols())
                )));
            }
        }
        for (i, (lc, layer)) in cache.layers.iter().zip(&self.hidden).enumerate() {
            if lc.input.shape() != (n, layer.linear.weight.rows()) || lc.normalized.is_some() != layer.norm.is_some() {
                return Err(Error::State(format!("cache does not match hidden layer {i}")));
            }
        }

        let mut head_param_grads = Vec::with_capacity(2 * self.heads.len());
        let mut g = Matrix::zeros(n, self.config.trunk_width());
        for (head, hg) in self.heads.iter().zip(head_grads) {
            head_param_grads.push(cache.trunk_output.matmul_tn(hg)?);
            head_param_grads.push(hg.column_sums());
            g.add_assign(&hg.matmul_nt(&head.weight)?)?;
        }

        let act = self.config.activation;
        let mut layer_grads: Vec<Vec<Matrix>> = Vec::with_capacity(self.hidden.len());
        for (layer, lc) in self.hidden.iter().zip(&cache.layers).rev() {
            if let Some(mask) = &lc.mask {
                g = g.hadamard(mask)?;
            }
            g = g.zip_with("activation_backward", &lc.pre_activation, |gv, z| {
                gv * act.derivative(z)
            })?;
            let mut grads = Vec::with_capacity(4);
            let mut norm_grads = None;
            if let (Some(bn), Some((xhat, inv_std))) = (&layer.norm, &lc.normalized) {
                let dgamma = g.hadamard(xhat)?.column_sums();
                let dbeta = g.column_sums();
                let dxhat = g.hadamard(&broadcast_rows(&bn.gamma, n))?;
                g = batch_norm_backward(&dxhat, xhat, inv_std)?;
                norm_grads = Some((dgamma, dbeta));
            }
            grads.push(lc.input.matmul_tn(&g)?);
            grads.push(g.column_sums());
            if let Some((dgamma, dbeta)) = norm_grads {
                grads.push(dgamma);
                grads.push(dbeta);
            }
            g = g.matmul_nt(&layer.linear.weight)?;
            layer_grads.push(grads);
        }
        layer_grads.reverse();
        let mut params: Vec<Matrix> = layer_grads.into_iter().flatten().collect();
        params.extend(head_param_grads);
        Ok(Gradients { params, input: g })
    }

    /// Argmax of the first classification head in eval mode, ties to the
    /// lowest class index.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let head = self
            .config
            .prediction_head()
            .ok_or_else(|| Error::Config("network has no classification head".into()))?;
        let outputs = self.forward_eval(x)?;
        Ok(outputs[head].argmax_rows())
    }
}

fn broadcast_rows(row: &Matrix, n: usize) -> Matrix {
    let mut data = Vec::with_capacity(n * row.cols());
    for _ in 0..n {
        data.extend_from_slice(row.as_slice());
    }
    Matrix::from_vec(n, row.cols(), data).expect("finite row broadcast")
}

/// Returns `(x̂, 1/sqrt(var+eps), mean, biased var)` per column.
fn normalize_batch(x: &Matrix) -> Result<(Matrix, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = x.rows() as f64;
    let mean = x.column_means().into_vec();
    let mut var = vec![0.0; x.cols()];
    for r in x.row_iter() {
        for ((v, &xv), m) in var.iter_mut().zip(r).zip(&mean) {
            *v += (xv - m) * (xv - m);
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
    let mut xhat = x.clone();
    for r in 0..xhat.rows() {
        for (j, v) in xhat.row_mut(r).iter_mut().enumerate() {
            *v = (*v - mean[j]) * inv_std[j];
        }
    }
    Ok((xhat, inv_std, mean, var))
}

/// `dx = inv_std/N · (N·dx̂ − Σdx̂ − x̂·Σ(dx̂·x̂))`, column-wise.
fn batch_norm_backward(dxhat: &Matrix, xhat: &Matrix, inv_std: &[f64]) -> Result<Matrix> {
    let n = dxhat.rows() as f64;
    let sum_d = dxhat.column_sums().into_vec();
    let sum_dx = dxhat.hadamard(xhat)?.column_sums().into_vec();
    let mut out = dxhat.clone();
    for r in 0..out.rows() {
        let xr = xhat.row(r);
        for (j, v) in out.row_mut(r).iter_mut().enumerate() {
            *v = inv_std[j] / n * (n * *v - sum_d[j] - xr[j] * sum_dx[j]);
        }
    }
    Ok(out)
}
