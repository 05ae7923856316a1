use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::network::HeadConfig;
use crate::tensor::Matrix;
use crate::{Error, Result};

/// Weights must sum to one within this tolerance or they are rescaled.
const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[serde(rename = "ce")]
    CrossEntropy,
    Contrastive,
    Triplet,
}

impl LossKind {
    pub fn is_metric(self) -> bool {
        !matches!(self, LossKind::CrossEntropy)
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ce" | "cross-entropy" | "crossentropy" => Ok(LossKind::CrossEntropy),
            "contrastive" | "cl" => Ok(LossKind::Contrastive),
            "triplet" | "tl" => Ok(LossKind::Triplet),
            other => Err(Error::Config(format!("unknown loss {other:?}"))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::CrossEntropy => "ce",
            LossKind::Contrastive => "contrastive",
            LossKind::Triplet => "triplet",
        })
    }
}

/// Identifies one loss term and therefore one output head.
///
/// Cross-entropy slots are numbered in order of appearance and bound to
/// sample roles: slot 0 sees anchors (every batch row when no metric loss is
/// active), slot 1 the second pair member or the triplet positive, slot 2
/// the triplet negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HeadTag {
    CrossEntropy(usize),
    Contrastive,
    Triplet,
}

impl HeadTag {
    pub fn kind(self) -> LossKind {
        match self {
            HeadTag::CrossEntropy(_) => LossKind::CrossEntropy,
            HeadTag::Contrastive => LossKind::Contrastive,
            HeadTag::Triplet => LossKind::Triplet,
        }
    }
}

impl fmt::Display for HeadTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeadTag::CrossEntropy(slot) => write!(f, "ce{slot}"),
            HeadTag::Contrastive => f.write_str("contrastive"),
            HeadTag::Triplet => f.write_str("triplet"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedTerm {
    pub tag: HeadTag,
    pub weight: f64,
}

/// Loss terms with convex weights; one output head per term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultitaskConfig {
    terms: Vec<WeightedTerm>,
}

impl MultitaskConfig {
    /// Validates the term list. Weights that do not sum to one are rescaled
    /// with a warning.
    pub fn new(spec: &[(LossKind, f64)]) -> Result<Self> {
        if spec.is_empty() {
            return Err(Error::Config("multitask configuration has no terms".into()));
        }
        if let Some((kind, w)) = spec.iter().find(|(_, w)| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("weight {w} for {kind} must be finite and >= 0")));
        }
        let metrics: Vec<LossKind> = spec.iter().map(|(k, _)| *k).filter(|k| k.is_metric()).collect();
        if metrics.len() > 1 {
            return Err(Error::Config(
                "at most one of contrastive or triplet may be active".into(),
            ));
        }
        let ce_count = spec.len() - metrics.len();
        let max_ce = match metrics.first() {
            None => 1,
            Some(LossKind::Contrastive) => 2,
            Some(_) => 3,
        };
        if ce_count > max_ce {
            return Err(Error::Config(format!(
                "{ce_count} cross-entropy heads but only {max_ce} sample roles available{}",
                if metrics.is_empty() {
                    " without a metric loss"
                } else {
                    ""
                }
            )));
        }
        let sum: f64 = spec.iter().map(|(_, w)| w).sum();
        if sum <= 0.0 {
            return Err(Error::Config("loss weights sum to zero".into()));
        }
        let scale = if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            log::warn!("loss weights sum to {sum}; rescaling to 1");
            1.0 / sum
        } else {
            1.0
        };
        let mut slot = 0;
        let terms = spec
            .iter()
            .map(|&(kind, w)| {
                let tag = match kind {
                    LossKind::CrossEntropy => {
                        slot += 1;
                        HeadTag::CrossEntropy(slot - 1)
                    }
                    LossKind::Contrastive => HeadTag::Contrastive,
                    LossKind::Triplet => HeadTag::Triplet,
                };
                WeightedTerm {
                    tag,
                    weight: if scale == 1.0 { w } else { w * scale },
                }
            })
            .collect();
        Ok(Self { terms })
    }

    /// A single cross-entropy term with weight 1.
    pub fn cross_entropy_only() -> Self {
        Self {
            terms: vec![WeightedTerm {
                tag: HeadTag::CrossEntropy(0),
                weight: 1.0,
            }],
        }
    }

    pub fn terms(&self) -> &[WeightedTerm] {
        &self.terms
    }

    pub fn weight_sum(&self) -> f64 {
        self.terms.iter().map(|t| t.weight).sum()
    }

    pub fn metric(&self) -> Option<LossKind> {
        self.terms.iter().map(|t| t.tag.kind()).find(|k| k.is_metric())
    }

    pub fn ce_count(&self) -> usize {
        self.terms
            .iter()
            .filter(|t| matches!(t.tag, HeadTag::CrossEntropy(_)))
            .count()
    }

    /// Output heads in head-index order: cross-entropy slots, then the
    /// projection head for the metric loss if any.
    pub fn head_layout(&self, num_classes: usize, projection_dim: usize) -> Vec<HeadConfig> {
        let mut heads = vec![HeadConfig::classification(num_classes); self.ce_count()];
        if self.metric().is_some() {
            heads.push(HeadConfig::projection(projection_dim));
        }
        heads
    }

    pub fn head_index(&self, tag: HeadTag) -> Option<usize> {
        match tag {
            HeadTag::CrossEntropy(slot) if slot < self.ce_count() => Some(slot),
            HeadTag::CrossEntropy(_) => None,
            metric if self.metric() == Some(metric.kind()) => Some(self.ce_count()),
            _ => None,
        }
    }
}

impl FromStr for MultitaskConfig {
    type Err = Error;

    /// Parses `kind:weight` items separated by commas, e.g.
    /// `ce:0.35,ce:0.35,contrastive:0.3`.
    fn from_str(s: &str) -> Result<Self> {
        let spec = s
            .split(',')
            .filter(|item| !item.trim().is_empty())
            .map(|item| {
                let (kind, weight) = item
                    .split_once(':')
                    .ok_or_else(|| Error::Config(format!("expected kind:weight, got {item:?}")))?;
                let weight = weight
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("weight {weight:?}: {e}")))?;
                Ok((kind.parse::<LossKind>()?, weight))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(&spec)
    }
}

impl fmt::Display for MultitaskConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}:{}", t.tag.kind(), t.weight)?;
        }
        Ok(())
    }
}

/// One term's loss value and its gradient with respect to its head output.
#[derive(Debug, Clone, PartialEq)]
pub struct TermLoss {
    pub tag: HeadTag,
    pub loss: f64,
    pub grad: Matrix,
}

/// Weighted sum of term losses, accumulated in configuration order, and each
/// gradient scaled by its weight. Every configured tag must appear exactly once.
pub fn combine(terms: Vec<TermLoss>, config: &MultitaskConfig) -> Result<(f64, Vec<TermLoss>)> {
    for (i, t) in terms.iter().enumerate() {
        if config.terms.iter().all(|c| c.tag != t.tag) {
            return Err(Error::Config(format!("loss term {} is not configured", t.tag)));
        }
        if terms[..i].iter().any(|o| o.tag == t.tag) {
            return Err(Error::Config(format!("loss term {} given twice", t.tag)));
        }
    }
    let mut by_tag: Vec<Option<TermLoss>> = terms.into_iter().map(Some).collect();
    let mut total = 0.0;
    let mut scaled = Vec::with_capacity(config.terms.len());
    for wt in &config.terms {
        let term = by_tag
            .iter_mut()
            .find(|t| t.as_ref().is_some_and(|t| t.tag == wt.tag))
            .and_then(Option::take)
            .ok_or_else(|| Error::Config(format!("loss term {} is missing", wt.tag)))?;
        total += wt.weight * term.loss;
        scaled.push(TermLoss {
            tag: term.tag,
            loss: term.loss,
            grad: term.grad.scale(wt.weight)?,
        });
    }
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("combined loss {total}")));
    }
    Ok((total, scaled))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::HeadRole;
    use proptest::prelude::{prop_assert, proptest};

    fn term(tag: HeadTag, loss: f64, g: f64) -> TermLoss {
        TermLoss {
            tag,
            loss,
            grad: Matrix::filled(2, 2, g).unwrap(),
        }
    }

    #[test]
    fn parse_and_display() {
        let cfg: MultitaskConfig = "ce:0.35,ce:0.35,contrastive:0.3".parse().unwrap();
        assert_eq!(cfg.ce_count(), 2);
        assert_eq!(cfg.metric(), Some(LossKind::Contrastive));
        assert_eq!(cfg.to_string(), "ce:0.35,ce:0.35,contrastive:0.3");
        assert_eq!(cfg.head_index(HeadTag::CrossEntropy(1)), Some(1));
        assert_eq!(cfg.head_index(HeadTag::Contrastive), Some(2));
        assert_eq!(cfg.head_index(HeadTag::Triplet), None);
        let layout = cfg.head_layout(10, 64);
        assert_eq!(layout.len(), 3);
        assert_eq!(layout[2].role, HeadRole::Projection);
        assert_eq!(layout[2].output_dim, 64);
    }

    #[test]
    fn invalid_configurations() {
        for bad in [
            "",
            "ce:0.5,contrastive:0.25,triplet:0.25",
            "ce:0.5,ce:0.5",
            "ce:0.25,ce:0.25,ce:0.25,contrastive:0.25",
            "ce:-0.1,contrastive:1.1",
            "ce:0,contrastive:0",
            "ce:abc",
            "softmax:1",
        ] {
            assert!(bad.parse::<MultitaskConfig>().is_err(), "{bad:?} accepted");
        }
        assert!("ce:0.25,ce:0.25,ce:0.25,triplet:0.25"
            .parse::<MultitaskConfig>()
            .is_ok());
    }

    #[test]
    fn four_head_row_is_normalized() {
        let cfg: MultitaskConfig = "ce:0.23,ce:0.23,ce:0.23,triplet:0.3".parse().unwrap();
        assert!((cfg.weight_sum() - 1.0).abs() < 1e-12);
        assert!((cfg.terms()[3].weight - 0.3 / 0.99).abs() < 1e-15);
    }

    #[test]
    fn single_cross_entropy_passes_through() {
        let cfg = MultitaskConfig::cross_entropy_only();
        let t = term(HeadTag::CrossEntropy(0), 1.7, 0.3);
        let (total, grads) = combine(vec![t.clone()], &cfg).unwrap();
        assert_eq!(total, 1.7);
        assert_eq!(grads, vec![t]);
    }

    #[test]
    fn best_row_weighted_sum() {
        let cfg: MultitaskConfig = "ce:0.35,ce:0.35,contrastive:0.3".parse().unwrap();
        let (total, grads) = combine(
            vec![
                term(HeadTag::Contrastive, 0.8, 1.0),
                term(HeadTag::CrossEntropy(0), 2.0, 1.0),
                term(HeadTag::CrossEntropy(1), 1.5, 1.0),
            ],
            &cfg,
        )
        .unwrap();
        assert_eq!(total, 0.35 * 2.0 + 0.35 * 1.5 + 0.3 * 0.8);
        assert_eq!(grads[2].grad.get(0, 0), 0.3);
    }

    #[test]
    fn missing_or_extra_tags() {
        let cfg: MultitaskConfig = "ce:0.5,triplet:0.5".parse().unwrap();
        assert!(combine(vec![term(HeadTag::CrossEntropy(0), 1.0, 0.0)], &cfg).is_err());
        assert!(combine(
            vec![
                term(HeadTag::CrossEntropy(0), 1.0, 0.0),
                term(HeadTag::Triplet, 1.0, 0.0),
                term(HeadTag::Contrastive, 1.0, 0.0),
            ],
            &cfg
        )
        .is_err());
        assert!(combine(
            vec![
                term(HeadTag::CrossEntropy(0), 1.0, 0.0),
                term(HeadTag::CrossEntropy(0), 1.0, 0.0),
            ],
            &cfg
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn combine_is_linear(
            a in 0.0f64..10.0, b in 0.0f64..10.0, c in 0.0f64..10.0, k in 0.0f64..5.0,
        ) {
            let cfg: MultitaskConfig = "ce:0.35,ce:0.35,contrastive:0.3".parse().unwrap();
            let terms = |s: f64| vec![
                term(HeadTag::CrossEntropy(0), a * s, a * s),
                term(HeadTag::CrossEntropy(1), b * s, b * s),
                term(HeadTag::Contrastive, c * s, c * s),
            ];
            let (base, base_g) = combine(terms(1.0), &cfg).unwrap();
            let (scaled, scaled_g) = combine(terms(k), &cfg).unwrap();
            prop_assert!((scaled - k * base).abs() <= 1e-12 * (1.0 + scaled.abs()));
            for (s, g) in scaled_g.iter().zip(&base_g) {
                let want = g.grad.scale(k).unwrap();
                prop_assert!(s.grad.max_abs_diff(&want).unwrap() <= 1e-12 * (1.0 + k * 10.0));
            }
        }
    }
}
