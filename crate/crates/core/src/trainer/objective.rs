//! Per-batch loss evaluation over network head outputs.

use serde::{Deserialize, Serialize};

use crate::losses::{
    combine, contrastive, cross_entropy, triplet, ContrastiveParams, HeadTag, LossKind, MultitaskConfig, PairBatch,
    TermLoss, TripletBatch, TripletParams,
};
use crate::sampler::{PairPlan, TripletPlan};
use crate::tensor::Matrix;
use crate::{Error, Result};

/// Which losses drive training and their hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct LossSetup {
    /// `None` trains a single cross-entropy head directly.
    pub multitask: Option<MultitaskConfig>,
    pub contrastive: ContrastiveParams,
    pub triplet: TripletParams,
}

impl LossSetup {
    pub fn metric(&self) -> Option<LossKind> {
        self.multitask.as_ref().and_then(MultitaskConfig::metric)
    }

    pub fn head_count(&self) -> usize {
        self.multitask
            .as_ref()
            .map_or(1, |m| m.ce_count() + usize::from(m.metric().is_some()))
    }

    pub fn term_names(&self) -> Vec<String> {
        match &self.multitask {
            None => vec!["ce".to_string()],
            Some(m) => m.terms().iter().map(|t| t.tag.to_string()).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.contrastive.validate()?;
        self.triplet.validate()
    }
}

/// Sample roles drawn for one batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SamplePlan {
    Rows,
    Pairs(PairPlan),
    Triplets(TripletPlan),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub total: f64,
    /// Unweighted loss of each term, in configuration order.
    pub terms: Vec<f64>,
    /// Weighted gradient for every head, in head order.
    pub head_grads: Vec<Matrix>,
}

/// Rows of the batch that cross-entropy slot `slot` sees, or `None` for
/// every row in order.
fn slot_rows(plan: &SamplePlan, slot: usize) -> Result<Option<&[usize]>> {
    match (plan, slot) {
        (SamplePlan::Rows, 0) | (SamplePlan::Pairs(_), 0) => Ok(None),
        (SamplePlan::Pairs(p), 1) => Ok(Some(&p.partner)),
        (SamplePlan::Triplets(t), 0) => Ok(Some(&t.anchor)),
        (SamplePlan::Triplets(t), 1) => Ok(Some(&t.positive)),
        (SamplePlan::Triplets(t), 2) => Ok(Some(&t.negative)),
        _ => Err(Error::Config(format!(
            "cross-entropy slot {slot} has no sample role under this plan"
        ))),
    }
}

fn gathered_ce(logits: &Matrix, labels: &[usize], rows: Option<&[usize]>) -> Result<(f64, Matrix)> {
    match rows {
        None => cross_entropy(logits, labels),
        Some(rows) => {
            let picked: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
            let (loss, g) = cross_entropy(&logits.select_rows(rows)?, &picked)?;
            let mut full = Matrix::zeros(logits.rows(), logits.cols());
            full.scatter_add_rows(rows, &g)?;
            Ok((loss, full))
        }
    }
}

/// Evaluates the configured losses on head `outputs` for a batch with
/// `labels`, using `plan` for pair or triplet roles.
pub fn batch_loss(setup: &LossSetup, outputs: &[Matrix], labels: &[usize], plan: &SamplePlan) -> Result<BatchLoss> {
    let Some(config) = &setup.multitask else {
        if outputs.len() != 1 {
            return Err(Error::Config(format!(
                "plain cross-entropy expects one head, network has {}",
                outputs.len()
            )));
        }
        let (loss, grad) = cross_entropy(&outputs[0], labels)?;
        return Ok(BatchLoss {
            total: loss,
            terms: vec![loss],
            head_grads: vec![grad],
        });
    };
    if outputs.len() != setup.head_count() {
        return Err(Error::Config(format!(
            "loss configuration needs {} heads, network has {}",
            setup.head_count(),
            outputs.len()
        )));
    }
    let plan_matches = matches!(
        (config.metric(), plan),
        (None, SamplePlan::Rows)
            | (Some(LossKind::Contrastive), SamplePlan::Pairs(_))
            | (Some(LossKind::Triplet), SamplePlan::Triplets(_))
    );
    if !plan_matches {
        return Err(Error::State("sample plan does not match the metric loss".into()));
    }
    let mut terms = Vec::with_capacity(config.terms().len());
    for wt in config.terms() {
        let head = config
            .head_index(wt.tag)
            .ok_or_else(|| Error::Config(format!("no head for loss term {}", wt.tag)))?;
        let out = &outputs[head];
        let (loss, grad) = match (wt.tag, plan) {
            (HeadTag::CrossEntropy(slot), _) => gathered_ce(out, labels, slot_rows(plan, slot)?)?,
            (HeadTag::Contrastive, SamplePlan::Pairs(p)) => {
                let batch = PairBatch::new(out.clone(), out.select_rows(&p.partner)?, p.y.clone())?;
                let (loss, g) = contrastive(&batch, &setup.contrastive)?;
                let mut full = g.z1;
                full.scatter_add_rows(&p.partner, &g.z2)?;
                (loss, full)
            }
            (HeadTag::Triplet, SamplePlan::Triplets(t)) => {
                let batch = TripletBatch::new(
                    out.select_rows(&t.anchor)?,
                    out.select_rows(&t.positive)?,
                    out.select_rows(&t.negative)?,
                )?;
                let (loss, g) = triplet(&batch, &setup.triplet)?;
                let mut full = Matrix::zeros(out.rows(), out.cols());
                full.scatter_add_rows(&t.anchor, &g.anchor)?;
                full.scatter_add_rows(&t.positive, &g.positive)?;
                full.scatter_add_rows(&t.negative, &g.negative)?;
                (loss, full)
            }
            (tag, _) => return Err(Error::State(format!("no sample plan for {tag}"))),
        };
        terms.push(TermLoss {
            tag: wt.tag,
            loss,
            grad,
        });
    }
    let (total, scaled) = combine(terms, config)?;
    let mut head_grads: Vec<Option<Matrix>> = vec![None; outputs.len()];
    let mut losses = Vec::with_capacity(scaled.len());
    for t in scaled {
        losses.push(t.loss);
        let head = config.head_index(t.tag).expect("checked above");
        head_grads[head] = Some(t.grad);
    }
    let head_grads = head_grads
        .into_iter()
        .zip(outputs)
        .map(|(g, out)| g.unwrap_or_else(|| Matrix::zeros(out.rows(), out.cols())))
        .collect();
    Ok(BatchLoss {
        total,
        terms: losses,
        head_grads,
    })
}
