//! Dataset manifests: flat UTF-8 `key=value` files.
//!
//! ```text
//! # comments and blank lines are ignored
//! name=gtzan
//! embeddings=gtzan.emb
//! labels=gtzan.labels.tsv
//! extractor=byol-a
//! splits=gtzan.splits.tsv      # optional, `index<TAB>train|val|test`
//! ```
//!
//! Relative paths resolve against the manifest's directory. Unknown keys are
//! kept and written back unchanged.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{
    merge_label_spaces, read_embeddings, read_header, read_labels, write_embeddings, write_labels, EmbeddingDataset,
    SplitIndices, SplitPart,
};
use crate::{Error, Result};

const KNOWN_KEYS: [&str; 5] = ["name", "embeddings", "labels", "extractor", "splits"];

/// Embedding width produced by a known extractor.
pub fn extractor_dim(extractor: &str) -> Option<usize> {
    match extractor.to_ascii_lowercase().as_str() {
        "byol-a" | "byola" | "byol_a" => Some(3072),
        "panns" => Some(2048),
        "vggish" => Some(128),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub name: String,
    pub embeddings: PathBuf,
    pub labels: PathBuf,
    pub extractor: String,
    pub splits: Option<PathBuf>,
    pub extra: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub dataset: EmbeddingDataset,
    pub splits: Option<SplitIndices>,
}

impl Manifest {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let base = origin.parent().unwrap_or(Path::new(""));
        let mut values: BTreeMap<String, String> = BTreeMap::new();
        let mut offset = 0u64;
        for raw in text.split_inclusive('\n') {
            let at = offset;
            offset += raw.len() as u64;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::format(origin, at, format!("expected key=value, got {line:?}")));
            };
            let key = key.trim().to_string();
            if values.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::format(origin, at, format!("duplicate key {key:?}")));
            }
        }
        let mut take = |key: &str| {
            values
                .remove(key)
                .filter(|v| !v.is_empty())
                .ok_or_else(|| Error::format(origin, 0, format!("missing key {key}")))
        };
        let name = take("name")?;
        let embeddings = base.join(take("embeddings")?);
        let labels = base.join(take("labels")?);
        let extractor = take("extractor")?;
        let splits = take("splits").ok().map(|p| base.join(p));
        Ok(Self {
            name,
            embeddings,
            labels,
            extractor,
            splits,
            extra: values,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Renders with paths relative to `dir` where possible.
    pub fn render(&self, dir: &Path) -> String {
        let rel = |p: &Path| p.strip_prefix(dir).unwrap_or(p).display().to_string();
        let mut out = String::new();
        let mut line = |k: &str, v: &str| writeln!(out, "{k}={v}").expect("writing to a String");
        line("name", &self.name);
        line("embeddings", &rel(&self.embeddings));
        line("labels", &rel(&self.labels));
        line("extractor", &self.extractor);
        if let Some(s) = &self.splits {
            line("splits", &rel(s));
        }
        for (k, v) in &self.extra {
            if !KNOWN_KEYS.contains(&k.as_str()) {
                line(k, v);
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let dir = path.parent().unwrap_or(Path::new(""));
        std::fs::write(path, self.render(dir)).map_err(|e| Error::io(path, e))
    }

    pub fn load_dataset(&self) -> Result<LoadedDataset> {
        let (header, _) = read_header(&self.embeddings)?;
        if let Some(dim) = extractor_dim(&self.extractor) {
            if header.dim as usize != dim {
                return Err(Error::Data(format!(
                    "{}: extractor {} produces {dim}-d embeddings, file has {}",
                    self.embeddings.display(),
                    self.extractor,
                    header.dim
                )));
            }
        }
        let x = read_embeddings(&self.embeddings)?;
        let labels = read_labels(&self.labels, &self.name)?;
        if labels.labels.len() != x.rows() {
            return Err(Error::Data(format!(
                "{} has {} rows but {} has {} labels",
                self.embeddings.display(),
                x.rows(),
                self.labels.display(),
                labels.labels.len()
            )));
        }
        let dataset = EmbeddingDataset::new(x, labels.labels, labels.label_map, self.name.clone())?;
        let splits = match &self.splits {
            Some(path) => {
                let s = read_splits(path)?;
                s.assignments(dataset.len())?;
                Some(s)
            }
            None => None,
        };
        Ok(LoadedDataset { dataset, splits })
    }
}

pub fn parse_splits(text: &str, origin: &Path) -> Result<SplitIndices> {
    let mut parts = Vec::new();
    let mut offset = 0u64;
    for raw in text.split_inclusive('\n') {
        let at = offset;
        offset += raw.len() as u64;
        let line = raw.trim_end_matches(['\n', '\r']);
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::format(origin, at, msg);
        let Some((index, part)) = line.split_once('\t') else {
            return Err(bad(format!("expected index<TAB>part, got {line:?}")));
        };
        if index.parse::<usize>().ok() != Some(parts.len()) {
            return Err(bad(format!("sample index {index:?}, expected {}", parts.len())));
        }
        parts.push(part.parse::<SplitPart>().map_err(|e| bad(e.to_string()))?);
    }
    Ok(SplitIndices::from_assignments(&parts))
}

pub fn read_splits(path: impl AsRef<Path>) -> Result<SplitIndices> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_splits(&text, path)
}

pub fn write_splits(path: impl AsRef<Path>, splits: &SplitIndices, n: usize) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (i, part) in splits.assignments(n)?.into_iter().enumerate() {
        writeln!(out, "{i}\t{part}").expect("writing to a String");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes `<stem>.emb`, `<stem>.labels.tsv`, an optional `<stem>.splits.tsv`
/// and the manifest itself at `manifest_path`.
pub fn write_dataset(
    manifest_path: impl AsRef<Path>,
    dataset: &EmbeddingDataset,
    extractor: &str,
    splits: Option<&SplitIndices>,
) -> Result<Manifest> {
    let manifest_path = manifest_path.as_ref();
    let dir = manifest_path.parent().unwrap_or(Path::new(""));
    let stem = manifest_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Config(format!("bad manifest path {}", manifest_path.display())))?;
    if !dir.as_os_str().is_empty() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let manifest = Manifest {
        name: dataset.source().to_string(),
        embeddings: dir.join(format!("{stem}.emb")),
        labels: dir.join(format!("{stem}.labels.tsv")),
        extractor: extractor.to_string(),
        splits: splits.map(|_| dir.join(format!("{stem}.splits.tsv"))),
        extra: BTreeMap::new(),
    };
    write_embeddings(&manifest.embeddings, dataset.embeddings())?;
    write_labels(&manifest.labels, dataset)?;
    if let (Some(path), Some(s)) = (&manifest.splits, splits) {
        write_splits(path, s, dataset.len())?;
    }
    manifest.save(manifest_path)?;
    Ok(manifest)
}

/// Unified label space of two manifests, written next to `out`. Predefined
/// splits carry over only when both inputs have them.
pub fn merge_manifests(a: &Manifest, b: &Manifest, out: impl AsRef<Path>) -> Result<Manifest> {
    if !a.extractor.eq_ignore_ascii_case(&b.extractor) {
        return Err(Error::Data(format!(
            "cannot merge {} ({}) with {} ({})",
            a.name, a.extractor, b.name, b.extractor
        )));
    }
    let la = a.load_dataset()?;
    let lb = b.load_dataset()?;
    let merged = merge_label_spaces(&la.dataset, &lb.dataset)?;
    let splits = match (la.splits, lb.splits) {
        (Some(mut sa), Some(sb)) => {
            sa.append(&sb, la.dataset.len());
            sa.train.sort_unstable();
            sa.val.sort_unstable();
            sa.test.sort_unstable();
            Some(sa)
        }
        _ => None,
    };
    write_dataset(out, &merged, &a.extractor, splits.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;

    #[test]
    fn parses_with_comments_and_relative_paths() {
        let text = "# gtzan\nname = gtzan\nembeddings=g.emb\nlabels=g.tsv # trailing\nextractor=byol-a\ncheckpoint=byola-2048\n\n";
        let m = Manifest::parse(text, Path::new("/data/g.mf")).unwrap();
        assert_eq!(m.name, "gtzan");
        assert_eq!(m.embeddings, PathBuf::from("/data/g.emb"));
        assert_eq!(m.labels, PathBuf::from("/data/g.tsv"));
        assert_eq!(m.splits, None);
        assert_eq!(m.extra.get("checkpoint").map(String::as_str), Some("byola-2048"));
        let again = Manifest::parse(&m.render(Path::new("/data")), Path::new("/data/g.mf")).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn parse_errors() {
        let origin = Path::new("x.mf");
        assert!(matches!(
            Manifest::parse("name=a\nbogus\n", origin),
            Err(Error::Format { offset: 7, .. })
        ));
        assert!(matches!(
            Manifest::parse("name=a\nname=b\n", origin),
            Err(Error::Format { .. })
        ));
        assert!(matches!(Manifest::parse("name=a\n", origin), Err(Error::Format { .. })));
    }

    #[test]
    fn extractor_dims() {
        assert_eq!(extractor_dim("BYOL-A"), Some(3072));
        assert_eq!(extractor_dim("panns"), Some(2048));
        assert_eq!(extractor_dim("vggish"), Some(128));
        assert_eq!(extractor_dim("synthetic"), None);
    }

    #[test]
    fn splits_file_round_trip() {
        let text = "0\ttrain\n1\ttest\n2\tval\n3\ttrain\n";
        let s = parse_splits(text, Path::new("s.tsv")).unwrap();
        assert_eq!(
            s,
            SplitIndices {
                train: vec![0, 3],
                val: vec![2],
                test: vec![1]
            }
        );
        assert!(parse_splits("0\ttrain\n2\ttest\n", Path::new("s.tsv")).is_err());
        assert!(parse_splits("0\tholdout\n", Path::new("s.tsv")).is_err());
    }

    #[test]
    fn dataset_round_trip_and_dim_check() {
        let dir = tempfile::tempdir().unwrap();
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap();
        let ds = EmbeddingDataset::with_class_names(x, vec![1, 0, 1], &["rock", "jazz"], "toy").unwrap();
        let splits = SplitIndices {
            train: vec![0, 1],
            val: vec![],
            test: vec![2],
        };
        let path = dir.path().join("toy.mf");
        let m = write_dataset(&path, &ds, "synthetic", Some(&splits)).unwrap();
        let loaded = Manifest::load(&path).unwrap().load_dataset().unwrap();
        assert_eq!(loaded.splits.as_ref(), Some(&splits));
        assert_eq!(loaded.dataset.embeddings(), ds.embeddings());
        let names: Vec<_> = loaded.dataset.label_map().iter().map(|e| e.name.clone()).collect();
        // Labels are re-read in first-appearance order.
        assert_eq!(names, ["jazz", "rock"]);
        let wrong = Manifest {
            extractor: "vggish".into(),
            ..m
        };
        assert!(matches!(wrong.load_dataset(), Err(Error::Data(_))));
    }

    #[test]
    fn count_mismatch_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let emb = dir.path().join("a.emb");
        let lab = dir.path().join("a.tsv");
        write_embeddings(&emb, &Matrix::zeros(3, 2)).unwrap();
        std::fs::write(&lab, "0\t0\ta\n1\t0\ta\n").unwrap();
        let m = Manifest {
            name: "a".into(),
            embeddings: emb,
            labels: lab,
            extractor: "x".into(),
            splits: None,
            extra: BTreeMap::new(),
        };
        assert!(matches!(m.load_dataset(), Err(Error::Data(_))));
    }
}
