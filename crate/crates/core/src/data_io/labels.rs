//! Labels TSV: one UTF-8 line per sample, `index<TAB>class_id<TAB>class_name`.
//!
//! Class order is first-appearance order in the file. A class name of the
//! form `source:name` carries its source dataset, which is how merged label
//! spaces survive a write/read cycle.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{EmbeddingDataset, LabelEntry};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LabelFile {
    pub labels: Vec<usize>,
    pub label_map: Vec<LabelEntry>,
}

pub fn parse_labels(text: &str, origin: &Path, default_source: &str) -> Result<LabelFile> {
    let mut labels = Vec::new();
    let mut label_map: Vec<LabelEntry> = Vec::new();
    let mut by_id: HashMap<u64, (usize, String)> = HashMap::new();
    let mut per_source: HashMap<String, usize> = HashMap::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let at = offset;
        offset += line.len() as u64;
        let line = line.trim_end_matches(['\n', '\r']);
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::format(origin, at, msg);
        let mut fields = line.split('\t');
        let (Some(index), Some(class_id), Some(name), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(bad(format!("expected 3 tab-separated fields in {line:?}")));
        };
        let index: usize = index
            .parse()
            .map_err(|_| bad(format!("sample index {index:?} is not an integer")))?;
        if index != labels.len() {
            return Err(bad(format!(
                "sample index {index} out of order, expected {}",
                labels.len()
            )));
        }
        let class_id: u64 = class_id
            .parse()
            .map_err(|_| bad(format!("class id {class_id:?} is not an integer")))?;
        if name.is_empty() {
            return Err(bad("empty class name".into()));
        }
        let label = match by_id.get(&class_id) {
            Some((label, known)) if known == name => *label,
            Some((_, known)) => return Err(bad(format!("class id {class_id} named both {known:?} and {name:?}"))),
            None => {
                if by_id.values().any(|(_, known)| known == name) {
                    return Err(bad(format!("class {name:?} appears under two ids")));
                }
                let (source, bare) = match name.split_once(':') {
                    Some((s, n)) if !s.is_empty() && !n.is_empty() => (s, n),
                    _ => (default_source, name),
                };
                let ordinal = per_source.entry(source.to_string()).or_insert(0);
                label_map.push(LabelEntry {
                    name: bare.to_string(),
                    source: source.to_string(),
                    source_label: *ordinal,
                });
                *ordinal += 1;
                by_id.insert(class_id, (label_map.len() - 1, name.to_string()));
                label_map.len() - 1
            }
        };
        labels.push(label);
    }
    Ok(LabelFile { labels, label_map })
}

pub fn read_labels(path: impl AsRef<Path>, default_source: &str) -> Result<LabelFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text, path, default_source)
}

/// Renders a dataset's labels; class names from another source than the
/// dataset's own are written as `source:name`.
pub fn format_labels(dataset: &EmbeddingDataset) -> Result<String> {
    let names: Vec<String> = dataset
        .label_map()
        .iter()
        .map(|e| {
            if e.name.contains(['\t', '\n', '\r']) {
                return Err(Error::Data(format!(
                    "class name {:?} contains a tab or newline",
                    e.name
                )));
            }
            Ok(if e.source == dataset.source() {
                e.name.clone()
            } else {
                format!("{}:{}", e.source, e.name)
            })
        })
        .collect::<Result<_>>()?;
    let mut out = String::with_capacity(dataset.len() * 16);
    for (i, &y) in dataset.labels().iter().enumerate() {
        writeln!(out, "{i}\t{y}\t{}", names[y]).expect("writing to a String");
    }
    Ok(out)
}

pub fn write_labels(path: impl AsRef<Path>, dataset: &EmbeddingDataset) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_labels(dataset)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::merge_label_spaces;
    use crate::tensor::Matrix;
    use std::path::PathBuf;

    fn origin() -> PathBuf {
        PathBuf::from("labels.tsv")
    }

    #[test]
    fn first_appearance_order() {
        let text = "0\t7\tjazz\n1\t2\tblues\n2\t7\tjazz\n3\t0\trock\n";
        let f = parse_labels(text, &origin(), "gtzan").unwrap();
        assert_eq!(f.labels, vec![0, 1, 0, 2]);
        let names: Vec<_> = f.label_map.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["jazz", "blues", "rock"]);
        assert!(f.label_map.iter().all(|e| e.source == "gtzan"));
    }

    #[test]
    fn malformed_lines() {
        for (text, at) in [
            ("0\t1\n", 0),
            ("0\t1\ta\n2\t1\ta\n", 6),
            ("0\tx\ta\n", 0),
            ("0\t1\ta\n1\t1\tb\n", 6),
            ("0\t1\ta\n1\t2\ta\n", 6),
            ("0\t1\t\n", 0),
        ] {
            match parse_labels(text, &origin(), "s") {
                Err(Error::Format { offset, .. }) => assert_eq!(offset, at, "{text:?}"),
                other => panic!("{text:?} gave {other:?}"),
            }
        }
    }

    #[test]
    fn merged_sources_survive_round_trip() {
        let a = EmbeddingDataset::with_class_names(Matrix::zeros(2, 1), vec![0, 1], &["pop", "jazz"], "gtzan").unwrap();
        let b = EmbeddingDataset::with_class_names(Matrix::zeros(2, 1), vec![0, 1], &["pop", "folk"], "fma").unwrap();
        let merged = merge_label_spaces(&a, &b).unwrap();
        let text = format_labels(&merged).unwrap();
        assert!(text.starts_with("0\t0\tgtzan:pop\n"));
        let back = parse_labels(&text, &origin(), merged.source()).unwrap();
        assert_eq!(back.labels, merged.labels());
        assert_eq!(back.label_map, merged.label_map());
    }
}
