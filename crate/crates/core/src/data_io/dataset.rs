use serde::{Deserialize, Serialize};

use crate::tensor::Matrix;
use crate::{Error, Result};

/// One class of a dataset's label space.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelEntry {
    pub name: String,
    /// Dataset the class originally came from.
    pub source: String,
    /// Index of the class within its source dataset's label space.
    pub source_label: usize,
}

/// Embedding rows with one integer label each.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    embeddings: Matrix,
    labels: Vec<usize>,
    label_map: Vec<LabelEntry>,
    source: String,
}

impl EmbeddingDataset {
    pub fn new(
        embeddings: Matrix,
        labels: Vec<usize>,
        label_map: Vec<LabelEntry>,
        source: impl Into<String>,
    ) -> Result<Self> {
        if labels.len() != embeddings.rows() {
            return Err(Error::Data(format!(
                "{} labels for {} embedding rows",
                labels.len(),
                embeddings.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= label_map.len()) {
            return Err(Error::Label(format!(
                "label {bad} outside label map of {} classes",
                label_map.len()
            )));
        }
        Ok(Self {
            embeddings,
            labels,
            label_map,
            source: source.into(),
        })
    }

    /// A dataset whose classes are named `names`, all from `source`.
    pub fn with_class_names(embeddings: Matrix, labels: Vec<usize>, names: &[&str], source: &str) -> Result<Self> {
        let label_map = names
            .iter()
            .enumerate()
            .map(|(i, n)| LabelEntry {
                name: (*n).to_string(),
                source: source.to_string(),
                source_label: i,
            })
            .collect();
        Self::new(embeddings, labels, label_map, source)
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_map(&self) -> &[LabelEntry] {
        &self.label_map
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.label_map.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Rows at `indices`, same label map.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let embeddings = self.embeddings.select_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok(Self {
            embeddings,
            labels,
            label_map: self.label_map.clone(),
            source: self.source.clone(),
        })
    }

    /// Source dataset and original label of merged class `label`.
    pub fn origin_of(&self, label: usize) -> Option<(&str, usize)> {
        self.label_map.get(label).map(|e| (e.source.as_str(), e.source_label))
    }
}

/// Concatenates two datasets into one label space: `a`'s classes, then
/// `b`'s, never merged by name. Rows follow the same order.
pub fn merge_label_spaces(a: &EmbeddingDataset, b: &EmbeddingDataset) -> Result<EmbeddingDataset> {
    if !a.is_empty() && !b.is_empty() && a.dim() != b.dim() {
        return Err(Error::Data(format!(
            "cannot merge {}-dimensional {} with {}-dimensional {}",
            a.dim(),
            a.source,
            b.dim(),
            b.source
        )));
    }
    let offset = a.num_classes();
    let mut label_map = a.label_map.clone();
    label_map.extend(b.label_map.iter().cloned());
    let mut labels = a.labels.clone();
    labels.extend(b.labels.iter().map(|&y| y + offset));
    let embeddings = Matrix::vstack(&[&a.embeddings, &b.embeddings])?;
    let source = match (a.source.is_empty(), b.source.is_empty()) {
        (_, true) => a.source.clone(),
        (true, false) => b.source.clone(),
        (false, false) => format!("{}+{}", a.source, b.source),
    };
    EmbeddingDataset::new(embeddings, labels, label_map, source)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    fn dataset(source: &str, classes: usize, per_class: usize, dim: usize, seed: u64) -> EmbeddingDataset {
        let n = classes * per_class;
        let x = Matrix::gaussian(&mut Rng::new(seed), n, dim, 0.0, 1.0).unwrap();
        let labels = (0..n).map(|i| i % classes).collect();
        let names: Vec<String> = (0..classes).map(|c| format!("genre{c}")).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        EmbeddingDataset::with_class_names(x, labels, &names, source).unwrap()
    }

    #[test]
    fn rejects_inconsistent_construction() {
        let x = Matrix::zeros(3, 2);
        assert!(EmbeddingDataset::with_class_names(x.clone(), vec![0, 1], &["a", "b"], "s").is_err());
        assert!(matches!(
            EmbeddingDataset::with_class_names(x, vec![0, 1, 2], &["a", "b"], "s"),
            Err(Error::Label(_))
        ));
    }

    #[test]
    fn ten_plus_eight_gives_eighteen_classes() {
        let gtzan = dataset("gtzan", 10, 3, 4, 1);
        let fma = dataset("fma", 8, 2, 4, 2);
        let merged = merge_label_spaces(&gtzan, &fma).unwrap();
        assert_eq!(merged.num_classes(), 18);
        assert_eq!(merged.len(), gtzan.len() + fma.len());
        assert_eq!(merged.source(), "gtzan+fma");
        let mut seen = std::collections::HashSet::new();
        for label in 0..18 {
            let (src, orig) = merged.origin_of(label).unwrap();
            assert!(seen.insert((src.to_string(), orig)));
            let expected = if label < 10 {
                ("gtzan", label)
            } else {
                ("fma", label - 10)
            };
            assert_eq!((src, orig), expected);
        }
        // Same-named classes stay distinct.
        assert_eq!(merged.label_map()[0].name, merged.label_map()[10].name);
        let counts = merged.class_counts();
        assert_eq!(&counts[..10], gtzan.class_counts().as_slice());
        assert_eq!(&counts[10..], fma.class_counts().as_slice());
        for i in 0..fma.len() {
            assert_eq!(merged.embeddings().row(gtzan.len() + i), fma.embeddings().row(i));
        }
    }

    #[test]
    fn merge_with_empty_keeps_dataset() {
        let a = dataset("gtzan", 3, 2, 4, 1);
        let empty = EmbeddingDataset::new(Matrix::zeros(0, 4), vec![], vec![], "").unwrap();
        let merged = merge_label_spaces(&a, &empty).unwrap();
        assert_eq!(merged, a);
    }

    #[test]
    fn merge_dimension_mismatch() {
        let a = dataset("a", 2, 2, 4, 1);
        let b = dataset("b", 2, 2, 5, 2);
        assert!(matches!(merge_label_spaces(&a, &b), Err(Error::Data(_))));
    }
}
