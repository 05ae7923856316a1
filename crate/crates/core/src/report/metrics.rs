use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data_io::EmbeddingDataset;
use crate::network::Network;
use crate::{Error, Result};

/// Classification metrics of one model on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// `None` for classes absent from the split.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<usize>>,
    pub class_names: Vec<String>,
    /// Accuracy restricted to samples of each source dataset.
    pub per_source_accuracy: BTreeMap<String, f64>,
}

impl Evaluation {
    pub fn num_classes(&self) -> usize {
        self.confusion.len()
    }
}

fn display_names(dataset: &EmbeddingDataset) -> Vec<String> {
    let multi = dataset.label_map().iter().any(|e| e.source != dataset.source());
    dataset
        .label_map()
        .iter()
        .map(|e| {
            if multi {
                format!("{}:{}", e.source, e.name)
            } else {
                e.name.clone()
            }
        })
        .collect()
}

/// Scores `predictions` against the split's labels.
pub fn evaluate_predictions(predictions: &[usize], dataset: &EmbeddingDataset) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty split".into()));
    }
    if predictions.len() != dataset.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} samples",
            predictions.len(),
            dataset.len()
        )));
    }
    let k = dataset.num_classes();
    let mut confusion = vec![vec![0usize; k]; k];
    let mut by_source: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (&truth, &pred) in dataset.labels().iter().zip(predictions) {
        if pred >= k {
            return Err(Error::Label(format!("prediction {pred} outside {k} classes")));
        }
        confusion[truth][pred] += 1;
        let entry = by_source.entry(dataset.label_map()[truth].source.clone()).or_default();
        entry.0 += usize::from(truth == pred);
        entry.1 += 1;
    }
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let total = dataset.len();
    let per_class_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| row[c] as f64 / n as f64)
        })
        .collect();
    Ok(Evaluation {
        accuracy: correct as f64 / total as f64,
        correct,
        total,
        per_class_accuracy,
        confusion,
        class_names: display_names(dataset),
        per_source_accuracy: by_source
            .into_iter()
            .map(|(s, (c, n))| (s, c as f64 / n as f64))
            .collect(),
    })
}

pub fn evaluate(network: &Network, dataset: &EmbeddingDataset) -> Result<Evaluation> {
    if network.config().input_dim != dataset.dim() {
        return Err(Error::Data(format!(
            "network expects {}-d input, split is {}-d",
            network.config().input_dim,
            dataset.dim()
        )));
    }
    if dataset.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty split".into()));
    }
    let predictions = network.predict(dataset.embeddings())?;
    evaluate_predictions(&predictions, dataset)
}

/// Hex SHA-256 of the canonical JSON encoding of `value`.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("configuration serializes to JSON");
    let digest = Sha256::digest(&json);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;

    fn split(labels: Vec<usize>, classes: usize) -> EmbeddingDataset {
        let names: Vec<String> = (0..classes).map(|c| format!("c{c}")).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        EmbeddingDataset::with_class_names(Matrix::zeros(labels.len(), 1), labels, &names, "t").unwrap()
    }

    #[test]
    fn perfect_and_constant_predictors() {
        let labels: Vec<usize> = (0..50).map(|i| i % 10).collect();
        let ds = split(labels.clone(), 10);
        let perfect = evaluate_predictions(&labels, &ds).unwrap();
        assert_eq!(perfect.accuracy, 1.0);
        for (i, row) in perfect.confusion.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v, if i == j { 5 } else { 0 });
            }
        }
        let constant = evaluate_predictions(&[3; 50], &ds).unwrap();
        assert_eq!(constant.accuracy, 0.1);
    }

    #[test]
    fn four_samples_three_correct() {
        let ds = split(vec![0, 1, 1, 2], 3);
        let e = evaluate_predictions(&[0, 1, 2, 2], &ds).unwrap();
        assert_eq!(e.accuracy, 0.75);
        assert_eq!(e.confusion, vec![vec![1, 0, 0], vec![0, 1, 1], vec![0, 0, 1]]);
        assert_eq!(e.per_class_accuracy, vec![Some(1.0), Some(0.5), Some(1.0)]);
        let row_sums: Vec<usize> = e.confusion.iter().map(|r| r.iter().sum()).collect();
        assert_eq!(row_sums, ds.class_counts());
        let absent = evaluate_predictions(&[0, 0], &split(vec![0, 0], 2)).unwrap();
        assert_eq!(absent.per_class_accuracy, vec![Some(1.0), None]);
    }

    #[test]
    fn per_source_accuracy() {
        let a = split(vec![0, 1], 2);
        let b = EmbeddingDataset::with_class_names(Matrix::zeros(2, 1), vec![0, 0], &["x"], "u").unwrap();
        let merged = crate::data_io::merge_label_spaces(&a, &b).unwrap();
        let e = evaluate_predictions(&[0, 0, 2, 0], &merged).unwrap();
        assert_eq!(e.per_source_accuracy["t"], 0.5);
        assert_eq!(e.per_source_accuracy["u"], 0.5);
        assert_eq!(e.class_names, ["t:c0", "t:c1", "u:x"]);
    }

    #[test]
    fn errors() {
        let ds = split(vec![0, 1], 2);
        assert!(evaluate_predictions(&[0], &ds).is_err());
        assert!(evaluate_predictions(&[0, 5], &ds).is_err());
    }

    #[test]
    fn fingerprint_is_stable_hex() {
        let f = fingerprint(&("abc", 1u64));
        assert_eq!(f.len(), 64);
        assert_eq!(f, fingerprint(&("abc", 1u64)));
        assert_ne!(f, fingerprint(&("abc", 2u64)));
    }
}
