//! The optimization loop and the gradient-check harness.

mod gradcheck;
mod objective;
mod optimizer;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data_io::{EmbeddingDataset, Splits};
use crate::losses::{ContrastiveParams, LossKind, MultitaskConfig, TripletParams};
use crate::network::{HeadConfig, Network, NetworkConfig, DEFAULT_PROJECTION_DIM};
use crate::report::{evaluate, fingerprint, EvalReport};
use crate::sampler::{add_noise, epoch_batches, plan_pairs, plan_triplets, triplets_possible, EpochPlan, NoiseConfig};
use crate::tensor::Rng;
use crate::{Error, Result};

pub use gradcheck::{
    compare_gradients, grad_check, gradient_suite, BlockError, GradCheckProblem, GradCheckReport, LossSpec, SuiteCase,
    GRADCHECK_STEP,
};
pub use objective::{batch_loss, BatchLoss, LossSetup, SamplePlan};
pub use optimizer::{adam_step, sgd_step, AdamMoments, Optimizer, OptimizerKind, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};

/// Validation accuracy within this of its maximum counts as plateaued.
pub const PLATEAU_TOLERANCE: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub losses: LossSetup,
    pub noise: Option<NoiseConfig>,
    /// Validation accuracy is measured every this many epochs and after the last.
    pub eval_every: usize,
    pub projection_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            batch_size: 64,
            epochs: 50,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            losses: LossSetup::default(),
            noise: None,
            eval_every: 1,
            projection_dim: DEFAULT_PROJECTION_DIM,
        }
    }
}

impl TrainConfig {
    pub fn with_multitask(mut self, multitask: MultitaskConfig) -> Self {
        self.losses.multitask = Some(multitask);
        self
    }

    pub fn with_margins(mut self, contrastive: ContrastiveParams, triplet: TripletParams) -> Self {
        self.losses.contrastive = contrastive;
        self.losses.triplet = triplet;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if self.projection_dim == 0 {
            return Err(Error::Config("projection dimension must be positive".into()));
        }
        if let Some(noise) = &self.noise {
            noise.validate()?;
        }
        self.losses.validate()
    }

    /// Output heads the loss configuration needs.
    pub fn heads(&self, num_classes: usize) -> Vec<HeadConfig> {
        match &self.losses.multitask {
            None => vec![HeadConfig::classification(num_classes)],
            Some(m) => m.head_layout(num_classes, self.projection_dim),
        }
    }

    /// `arch` with its heads replaced by the ones this configuration needs.
    pub fn network_config(&self, arch: &NetworkConfig, input_dim: usize, num_classes: usize) -> NetworkConfig {
        NetworkConfig {
            input_dim,
            heads: self.heads(num_classes),
            ..arch.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub terms: Vec<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean unweighted loss of each term over the epoch's steps.
    pub term_losses: Vec<f64>,
    pub total_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub steps: usize,
    pub noise_active: bool,
}

impl EpochRecord {
    pub fn tsv_header(term_names: &[String]) -> String {
        let mut cols = vec!["epoch".to_string()];
        cols.extend(term_names.iter().map(|n| format!("loss_{n}")));
        cols.extend(["loss_total", "train_acc", "val_acc"].map(String::from));
        cols.join("\t")
    }

    pub fn tsv_line(&self) -> String {
        let mut cols = vec![self.epoch.to_string()];
        cols.extend(self.term_losses.iter().map(|l| format!("{l:.6}")));
        cols.push(format!("{:.6}", self.total_loss));
        cols.push(format!("{:.4}", self.train_accuracy));
        cols.push(
            self.val_accuracy
                .map_or_else(|| "NA".to_string(), |v| format!("{v:.4}")),
        );
        cols.join("\t")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub epochs_completed: usize,
    pub history: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    /// Best validation accuracy and the 1-based epoch it was reached.
    pub best: Option<(f64, usize)>,
    pub optimizer: Optimizer,
    pub skipped_batches: usize,
}

impl TrainState {
    /// First epoch whose validation accuracy is within [`PLATEAU_TOLERANCE`]
    /// of the best seen over the run.
    pub fn plateau_epoch(&self) -> Option<usize> {
        let (best, _) = self.best?;
        self.history
            .iter()
            .find(|r| r.val_accuracy.is_some_and(|v| v >= best - PLATEAU_TOLERANCE))
            .map(|r| r.epoch)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-validation weights, or the final weights without a validation split.
    pub network: Network,
    pub state: TrainState,
    pub report: EvalReport,
}

/// Independent random streams for one run.
struct Streams {
    init: Rng,
    shuffle: Rng,
    dropout: Rng,
    sampling: Rng,
    noise: Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let mut master = Rng::new(seed);
        let mut next = || Rng::new(master.next_u64());
        Self {
            init: next(),
            shuffle: next(),
            dropout: next(),
            sampling: next(),
            noise: next(),
        }
    }
}

fn check_splits(splits: &Splits) -> Result<()> {
    let check = |name: &str, ds: &EmbeddingDataset| -> Result<()> {
        if ds.is_empty() {
            return Err(Error::Data(format!("{name} split is empty")));
        }
        if ds.dim() != splits.train.dim() {
            return Err(Error::Data(format!(
                "{name} split is {}-d, train split is {}-d",
                ds.dim(),
                splits.train.dim()
            )));
        }
        if ds.label_map() != splits.train.label_map() {
            return Err(Error::Label(format!("{name} split has a different label map")));
        }
        Ok(())
    };
    check("train", &splits.train)?;
    check("test", &splits.test)?;
    if let Some(val) = &splits.val {
        check("validation", val)?;
    }
    Ok(())
}

pub fn train(splits: &Splits, net_config: &NetworkConfig, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(splits, net_config, config, &mut |_| {})
}

/// [`train`], calling `on_epoch` after every epoch.
pub fn train_with(
    splits: &Splits,
    net_config: &NetworkConfig,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let started = Instant::now();
    config.validate()?;
    net_config.validate()?;
    check_splits(splits)?;
    let train_set = &splits.train;
    if net_config.input_dim != train_set.dim() {
        return Err(Error::Data(format!(
            "network expects {}-d input, data is {}-d",
            net_config.input_dim,
            train_set.dim()
        )));
    }
    let expected_heads = config.heads(train_set.num_classes());
    if net_config.heads != expected_heads {
        return Err(Error::Config(format!(
            "network heads {:?} do not match the loss configuration, which needs {:?}",
            net_config.heads, expected_heads
        )));
    }

    let mut rngs = Streams::new(config.seed);
    let mut network = Network::init(net_config.clone(), &mut rngs.init)?;
    let mut state = TrainState {
        epochs_completed: 0,
        history: Vec::with_capacity(config.epochs),
        steps: Vec::new(),
        best: None,
        optimizer: Optimizer::new(config.optimizer, config.learning_rate, &network.params())?,
        skipped_batches: 0,
    };
    let mut best_network: Option<Network> = None;
    let metric = config.losses.metric();
    let n_terms = config.losses.term_names().len();
    let plan = EpochPlan::new(config.batch_size);
    let x_all = train_set.embeddings();

    for epoch in 0..config.epochs {
        let noise_active = config.noise.is_some_and(|n| n.is_active(epoch, config.epochs));
        let mut sums = vec![0.0; n_terms];
        let mut total_sum = 0.0;
        let mut steps = 0usize;
        for indices in epoch_batches(train_set.len(), plan, &mut rngs.shuffle)? {
            if net_config.batch_norm && indices.len() < 2 {
                log::debug!("epoch {}: skipping a batch of {} row", epoch + 1, indices.len());
                state.skipped_batches += 1;
                continue;
            }
            let labels: Vec<usize> = indices.iter().map(|&i| train_set.labels()[i]).collect();
            let sample_plan = match metric {
                None => SamplePlan::Rows,
                Some(LossKind::Contrastive) => SamplePlan::Pairs(plan_pairs(&labels, &mut rngs.sampling)?),
                Some(_) => {
                    if !triplets_possible(&labels) {
                        log::warn!("epoch {}: no valid triplet in a batch; skipped", epoch + 1);
                        state.skipped_batches += 1;
                        continue;
                    }
                    SamplePlan::Triplets(plan_triplets(&labels, &mut rngs.sampling)?)
                }
            };
            let mut x = x_all.select_rows(&indices)?;
            if let (true, Some(noise)) = (noise_active, &config.noise) {
                x = add_noise(&x, noise, epoch, config.epochs, &mut rngs.noise)?;
            }
            let (outputs, cache) = network.forward_train(&x, &mut rngs.dropout)?;
            let loss = batch_loss(&config.losses, &outputs, &labels, &sample_plan)?;
            if !loss.total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss {} at epoch {} step {}; term losses {:?}",
                    loss.total,
                    epoch + 1,
                    steps + 1,
                    loss.terms
                )));
            }
            let grads = network.backward(&cache, &loss.head_grads)?;
            if let Some(bad) = grads
                .params
                .iter()
                .position(|g| g.as_slice().iter().any(|v| !v.is_finite()))
            {
                return Err(Error::NonFinite(format!(
                    "gradient of {} at epoch {}",
                    network.param_names()[bad],
                    epoch + 1
                )));
            }
            state.optimizer.step(&mut network.params_mut(), &grads.params)?;
            for (s, l) in sums.iter_mut().zip(&loss.terms) {
                *s += l;
            }
            total_sum += loss.total;
            steps += 1;
            state.steps.push(StepRecord {
                epoch: epoch + 1,
                terms: loss.terms,
                total: loss.total,
            });
        }
        if steps == 0 {
            return Err(Error::Data(format!("epoch {} had no usable batch", epoch + 1)));
        }
        let train_accuracy = evaluate(&network, train_set)?.accuracy;
        let measure = (epoch + 1) % config.eval_every == 0 || epoch + 1 == config.epochs;
        let val_accuracy = match (&splits.val, measure) {
            (Some(val), true) => Some(evaluate(&network, val)?.accuracy),
            _ => None,
        };
        if let Some(v) = val_accuracy {
            if state.best.is_none_or(|(b, _)| v > b) {
                state.best = Some((v, epoch + 1));
                best_network = Some(network.clone());
            }
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            term_losses: sums.iter().map(|s| s / steps as f64).collect(),
            total_loss: total_sum / steps as f64,
            train_accuracy,
            val_accuracy,
            steps,
            noise_active,
        };
        on_epoch(&record);
        state.history.push(record);
        state.epochs_completed = epoch + 1;
    }

    let selected_epoch = state.best.map_or(config.epochs, |(_, e)| e);
    let network = best_network.unwrap_or(network);
    let evaluation = evaluate(&network, &splits.test)?;
    let report = EvalReport {
        evaluation,
        fingerprint: fingerprint(&(net_config, config)),
        seed: config.seed,
        optimizer: config.optimizer,
        epochs_run: state.epochs_completed,
        selected_epoch,
        best_val_accuracy: state.best.map(|(v, _)| v),
        plateau_epoch: state.plateau_epoch(),
        final_train_accuracy: state.history.last().map_or(0.0, |r| r.train_accuracy),
        runtime_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome { network, state, report })
}
