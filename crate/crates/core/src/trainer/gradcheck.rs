//! Central finite differences against backpropagated gradients.

use serde::{Deserialize, Serialize};

use super::objective::{batch_loss, LossSetup, SamplePlan};
use crate::losses::{euclidean_distance, ContrastiveParams, LossKind, MultitaskConfig, TripletParams};
use crate::network::{Activation, HeadConfig, Network, NetworkConfig, MAX_HIDDEN_LAYERS};
use crate::sampler::{plan_pairs, plan_triplets};
use crate::tensor::{Matrix, Rng};
use crate::{Error, Result};

pub const GRADCHECK_STEP: f64 = 1e-5;

/// Gradient norms below this are compared in absolute terms. Central
/// differences at h=1e-5 carry about 1e-10 of round-off per entry, and some
/// blocks (biases feeding batch norm, head biases under a distance loss) have
/// an exact gradient of zero.
const NORM_FLOOR: f64 = 1e-4;

/// A step of h moves activation inputs by roughly h times a weight or input
/// entry, far below this.
pub const KINK_CLEARANCE: f64 = 1e-3;
const MAX_DRAWS: usize = 64;

const BATCH_ROWS: usize = 6;
const CLASSES: usize = 3;
const PROJECTION_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LossSpec {
    CrossEntropy,
    Contrastive,
    Triplet,
    Multitask(MultitaskConfig),
}

impl LossSpec {
    /// Margins are wide so that the hinges stay active on random inputs.
    pub fn setup(&self) -> LossSetup {
        let multitask = match self {
            LossSpec::CrossEntropy => None,
            LossSpec::Contrastive => Some(MultitaskConfig::new(&[(LossKind::Contrastive, 1.0)]).expect("valid")),
            LossSpec::Triplet => Some(MultitaskConfig::new(&[(LossKind::Triplet, 1.0)]).expect("valid")),
            LossSpec::Multitask(m) => Some(m.clone()),
        };
        LossSetup {
            multitask,
            contrastive: ContrastiveParams {
                margin: 2.0,
                ..ContrastiveParams::default()
            },
            triplet: TripletParams {
                margin: 1.0,
                ..TripletParams::default()
            },
        }
    }

    pub fn name(&self) -> String {
        match self {
            LossSpec::CrossEntropy => "ce".into(),
            LossSpec::Contrastive => "contrastive".into(),
            LossSpec::Triplet => "triplet".into(),
            LossSpec::Multitask(m) => format!("multitask({m})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockError {
    pub name: String,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, floor)`.
    pub relative_error: f64,
    pub max_abs_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockError>,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&BlockError> {
        self.blocks
            .iter()
            .max_by(|a, b| a.relative_error.total_cmp(&b.relative_error))
    }
}

/// A fixed network, batch and sample plan whose loss is differentiated.
#[derive(Debug, Clone)]
pub struct GradCheckProblem {
    pub network: Network,
    pub x: Matrix,
    pub labels: Vec<usize>,
    pub plan: SamplePlan,
    pub setup: LossSetup,
}

impl GradCheckProblem {
    /// `arch` supplies the trunk; heads follow from `spec`. Draws that put a
    /// ReLU input or a hinge within [`KINK_CLEARANCE`] of its breakpoint are
    /// redrawn, since a central difference straddling a kink is meaningless.
    pub fn new(arch: &NetworkConfig, spec: &LossSpec, rng: &mut Rng) -> Result<Self> {
        if arch.dropout_rate != 0.0 {
            return Err(Error::Config("gradient checks need dropout disabled".into()));
        }
        let mut last = None;
        for _ in 0..MAX_DRAWS {
            let problem = Self::draw(arch, spec, rng)?;
            if problem.kink_distance()? > KINK_CLEARANCE {
                return Ok(problem);
            }
            last = Some(problem);
        }
        Ok(last.expect("at least one draw"))
    }

    fn draw(arch: &NetworkConfig, spec: &LossSpec, rng: &mut Rng) -> Result<Self> {
        let setup = spec.setup();
        let heads = match &setup.multitask {
            None => vec![HeadConfig::classification(CLASSES)],
            Some(m) => m.head_layout(CLASSES, PROJECTION_DIM),
        };
        let config = NetworkConfig { heads, ..arch.clone() };
        let mut network = Network::init(config, rng)?;
        // Zero biases put every unit behind a dead ReLU layer exactly on the
        // kink, so offsets are randomized too.
        for (i, name) in network.param_names().iter().enumerate() {
            let shape = network.params()[i].shape();
            let value = if name.ends_with("bias") || name.ends_with("bn_beta") {
                Matrix::gaussian(rng, shape.0, shape.1, 0.0, 0.5)?
            } else if name.ends_with("bn_gamma") {
                Matrix::gaussian(rng, shape.0, shape.1, 1.0, 0.2)?
            } else {
                continue;
            };
            network.set_param(i, value)?;
        }
        let x = Matrix::gaussian(rng, BATCH_ROWS, arch.input_dim, 0.0, 1.0)?;
        let labels: Vec<usize> = (0..BATCH_ROWS).map(|i| i % CLASSES).collect();
        let plan = match setup.metric() {
            None => SamplePlan::Rows,
            Some(LossKind::Contrastive) => SamplePlan::Pairs(plan_pairs(&labels, rng)?),
            Some(_) => SamplePlan::Triplets(plan_triplets(&labels, rng)?),
        };
        Ok(Self {
            network,
            x,
            labels,
            plan,
            setup,
        })
    }

    /// Smallest distance from a non-smooth point: piecewise-linear
    /// activation inputs and active-or-not hinge arguments.
    fn kink_distance(&self) -> Result<f64> {
        let (outputs, cache) = self.network.forward_train_frozen(&self.x, &mut Rng::new(0))?;
        let mut nearest = f64::INFINITY;
        if matches!(
            self.network.config().activation,
            Activation::Relu | Activation::LeakyRelu
        ) {
            for layer in 0..self.network.hidden_layers().len() {
                if let Some(z) = cache.pre_activation(layer) {
                    nearest = z.as_slice().iter().fold(nearest, |m, v| m.min(v.abs()));
                }
            }
        }
        let Some(z) = outputs.last() else {
            return Ok(nearest);
        };
        let dist = |a: usize, b: usize, eps: f64| euclidean_distance(z.row(a), z.row(b), eps);
        match &self.plan {
            SamplePlan::Rows => {}
            SamplePlan::Pairs(p) => {
                let c = &self.setup.contrastive;
                for (i, &j) in p.partner.iter().enumerate() {
                    nearest = nearest.min((c.margin - dist(i, j, c.epsilon)?).abs());
                }
            }
            SamplePlan::Triplets(t) => {
                let c = &self.setup.triplet;
                for k in 0..t.anchor.len() {
                    let gap =
                        dist(t.anchor[k], t.positive[k], c.epsilon)? - dist(t.anchor[k], t.negative[k], c.epsilon)?;
                    nearest = nearest.min((gap + c.margin).abs());
                }
            }
        }
        Ok(nearest)
    }

    fn loss_at(&self, network: &Network, x: &Matrix) -> Result<f64> {
        // Dropout is off, so the stream is never drawn from.
        let (outputs, _) = network.forward_train_frozen(x, &mut Rng::new(0))?;
        Ok(batch_loss(&self.setup, &outputs, &self.labels, &self.plan)?.total)
    }

    pub fn block_names(&self) -> Vec<String> {
        let mut names = self.network.param_names();
        names.push("input".into());
        names
    }

    /// Backpropagated gradients of every parameter block, then the input.
    pub fn analytic(&self) -> Result<Vec<Matrix>> {
        let (outputs, cache) = self.network.forward_train_frozen(&self.x, &mut Rng::new(0))?;
        let loss = batch_loss(&self.setup, &outputs, &self.labels, &self.plan)?;
        let grads = self.network.backward(&cache, &loss.head_grads)?;
        let mut out = grads.params;
        out.push(grads.input);
        Ok(out)
    }

    /// Central differences with step `h`, same block order as [`Self::analytic`].
    pub fn numeric(&self, h: f64) -> Result<Vec<Matrix>> {
        let mut out = Vec::new();
        let mut network = self.network.clone();
        let params: Vec<Matrix> = self.network.params().into_iter().cloned().collect();
        for (b, original) in params.iter().enumerate() {
            let mut grad = Matrix::zeros(original.rows(), original.cols());
            let mut probe = original.clone();
            for i in 0..original.len() {
                let v = original.as_slice()[i];
                probe.as_mut_slice()[i] = v + h;
                network.set_param(b, probe.clone())?;
                let up = self.loss_at(&network, &self.x)?;
                probe.as_mut_slice()[i] = v - h;
                network.set_param(b, probe.clone())?;
                let down = self.loss_at(&network, &self.x)?;
                probe.as_mut_slice()[i] = v;
                grad.as_mut_slice()[i] = (up - down) / (2.0 * h);
            }
            network.set_param(b, original.clone())?;
            out.push(grad);
        }
        let mut grad = Matrix::zeros(self.x.rows(), self.x.cols());
        let mut probe = self.x.clone();
        for i in 0..self.x.len() {
            let v = self.x.as_slice()[i];
            probe.as_mut_slice()[i] = v + h;
            let up = self.loss_at(&self.network, &probe)?;
            probe.as_mut_slice()[i] = v - h;
            let down = self.loss_at(&self.network, &probe)?;
            probe.as_mut_slice()[i] = v;
            grad.as_mut_slice()[i] = (up - down) / (2.0 * h);
        }
        out.push(grad);
        Ok(out)
    }
}

pub fn compare_gradients(
    names: &[String],
    analytic: &[Matrix],
    numeric: &[Matrix],
    tolerance: f64,
) -> Result<GradCheckReport> {
    if names.len() != analytic.len() || analytic.len() != numeric.len() {
        return Err(Error::State("gradient block counts differ".into()));
    }
    let mut blocks = Vec::with_capacity(names.len());
    for ((name, a), n) in names.iter().zip(analytic).zip(numeric) {
        let diff = a.sub(n)?;
        let scale = a.frobenius_norm().max(n.frobenius_norm()).max(NORM_FLOOR);
        blocks.push(BlockError {
            name: name.clone(),
            relative_error: diff.frobenius_norm() / scale,
            max_abs_diff: a.max_abs_diff(n)?,
        });
    }
    let max_relative_error = blocks.iter().map(|b| b.relative_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        blocks,
        max_relative_error,
        tolerance,
        passed: max_relative_error < tolerance,
    })
}

pub fn grad_check(arch: &NetworkConfig, spec: &LossSpec, rng: &mut Rng, tolerance: f64) -> Result<GradCheckReport> {
    let problem = GradCheckProblem::new(arch, spec, rng)?;
    compare_gradients(
        &problem.block_names(),
        &problem.analytic()?,
        &problem.numeric(GRADCHECK_STEP)?,
        tolerance,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteCase {
    pub activation: Activation,
    pub batch_norm: bool,
    pub depth: usize,
    pub loss: LossSpec,
}

impl SuiteCase {
    pub fn label(&self) -> String {
        format!(
            "{} bn={} depth={} loss={}",
            self.activation,
            if self.batch_norm { "on" } else { "off" },
            self.depth,
            self.loss.name()
        )
    }

    pub fn arch(&self) -> NetworkConfig {
        NetworkConfig {
            input_dim: 5,
            hidden_sizes: [7, 6, 5, 4][..self.depth].to_vec(),
            activation: self.activation,
            dropout_rate: 0.0,
            batch_norm: self.batch_norm,
            heads: vec![HeadConfig::classification(CLASSES)],
        }
    }
}

/// Every activation × batch norm on/off × depth 1–4 × loss family. Two
/// multitask configurations are included, one per metric loss.
pub fn gradient_suite() -> Vec<SuiteCase> {
    let losses = [
        LossSpec::CrossEntropy,
        LossSpec::Contrastive,
        LossSpec::Triplet,
        LossSpec::Multitask("ce:0.35,ce:0.35,contrastive:0.3".parse().expect("valid")),
        LossSpec::Multitask("ce:0.2,ce:0.2,ce:0.2,triplet:0.4".parse().expect("valid")),
    ];
    let mut cases = Vec::new();
    for activation in Activation::ALL {
        for batch_norm in [false, true] {
            for depth in 1..=MAX_HIDDEN_LAYERS {
                for loss in &losses {
                    cases.push(SuiteCase {
                        activation,
                        batch_norm,
                        depth,
                        loss: loss.clone(),
                    });
                }
            }
        }
    }
    cases
}
