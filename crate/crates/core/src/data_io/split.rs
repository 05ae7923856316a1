use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::EmbeddingDataset;
use crate::tensor::Rng;
use crate::{Error, Result};

/// Seed used when no split seed is given.
pub const DEFAULT_SPLIT_SEED: u64 = 20_240_901;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

impl SplitPart {
    pub const ALL: [SplitPart; 3] = [SplitPart::Train, SplitPart::Val, SplitPart::Test];
}

impl fmt::Display for SplitPart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitPart::Train => "train",
            SplitPart::Val => "val",
            SplitPart::Test => "test",
        })
    }
}

impl FromStr for SplitPart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitPart::Train),
            "val" | "valid" | "validation" => Ok(SplitPart::Val),
            "test" => Ok(SplitPart::Test),
            other => Err(Error::Config(format!("unknown split part {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    train: f64,
    val: f64,
    test: f64,
}

impl SplitFractions {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let parts = [train, val, test];
        if parts.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::Config(format!(
                "split fractions must be non-negative, got {train}/{val}/{test}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions sum to {sum}, not 1")));
        }
        Ok(Self { train, val, test })
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl FromStr for SplitFractions {
    type Err = Error;

    /// `0.8,0.1,0.1` or `80/10/10`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split([',', '/'])
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| Error::Config(format!("bad split fractions {s:?}")))?;
        let [a, b, c] = parts[..] else {
            return Err(Error::Config(format!("expected three split fractions in {s:?}")));
        };
        let total = a + b + c;
        if total > 1.0 + 1e-9 && (total - 100.0).abs() < 1e-9 {
            return Self::new(a / 100.0, b / 100.0, c / 100.0);
        }
        Self::new(a, b, c)
    }
}

/// Sorted sample indices of each part.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn part(&self, part: SplitPart) -> &[usize] {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Val => &self.val,
            SplitPart::Test => &self.test,
        }
    }

    fn part_mut(&mut self, part: SplitPart) -> &mut Vec<usize> {
        match part {
            SplitPart::Train => &mut self.train,
            SplitPart::Val => &mut self.val,
            SplitPart::Test => &mut self.test,
        }
    }

    pub fn from_assignments(parts: &[SplitPart]) -> Self {
        let mut out = Self::default();
        for (i, &p) in parts.iter().enumerate() {
            out.part_mut(p).push(i);
        }
        out
    }

    /// Part of every sample, or an error if the indices do not partition `0..n`.
    pub fn assignments(&self, n: usize) -> Result<Vec<SplitPart>> {
        let mut out = vec![None; n];
        for part in SplitPart::ALL {
            for &i in self.part(part) {
                match out.get_mut(i) {
                    Some(slot @ None) => *slot = Some(part),
                    Some(Some(_)) => return Err(Error::Data(format!("sample {i} in two splits"))),
                    None => return Err(Error::Data(format!("split index {i} beyond {n} samples"))),
                }
            }
        }
        out.into_iter()
            .enumerate()
            .map(|(i, p)| p.ok_or_else(|| Error::Data(format!("sample {i} in no split"))))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Concatenation for merged datasets: `other`'s indices shifted by `offset`.
    pub fn append(&mut self, other: &SplitIndices, offset: usize) {
        for part in SplitPart::ALL {
            self.part_mut(part).extend(other.part(part).iter().map(|&i| i + offset));
        }
    }

    pub fn materialize(&self, dataset: &EmbeddingDataset) -> Result<Splits> {
        self.assignments(dataset.len())?;
        Ok(Splits {
            train: dataset.subset(&self.train)?,
            val: if self.val.is_empty() {
                None
            } else {
                Some(dataset.subset(&self.val)?)
            },
            test: dataset.subset(&self.test)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: EmbeddingDataset,
    pub val: Option<EmbeddingDataset>,
    pub test: EmbeddingDataset,
}

/// Per-class proportional split with largest-remainder rounding.
///
/// Each class is shuffled independently, in class order, from one stream
/// seeded by `seed`. Leftover samples after flooring go to the parts with
/// the largest fractional quota, the earlier part winning ties. A class
/// with fewer samples than there are non-empty parts goes wholly to train.
pub fn stratified_split(dataset: &EmbeddingDataset, fractions: SplitFractions, seed: u64) -> SplitIndices {
    let fr = fractions.as_array();
    let active = fr.iter().filter(|&&f| f > 0.0).count();
    let mut by_class = vec![Vec::new(); dataset.num_classes()];
    for (i, &y) in dataset.labels().iter().enumerate() {
        by_class[y].push(i);
    }
    let mut rng = Rng::new(seed);
    let mut out = SplitIndices::default();
    for (class, mut members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        rng.shuffle(&mut members);
        let n = members.len();
        if n < active {
            log::warn!("class {class} has {n} samples for {active} split parts; all go to train");
            out.train.extend(members);
            continue;
        }
        let counts = allocate(n, fr);
        let mut rest = members.as_slice();
        for (part, count) in SplitPart::ALL.into_iter().zip(counts) {
            let (take, tail) = rest.split_at(count);
            out.part_mut(part).extend_from_slice(take);
            rest = tail;
        }
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    out
}

fn allocate(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let quotas = fractions.map(|f| f * n as f64);
    let mut counts = quotas.map(|q| (q + 1e-9).floor() as usize);
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..3).filter(|&i| fractions[i] > 0.0).collect();
    // Stable sort keeps the earlier part first on equal remainders.
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - counts[a] as f64;
        let rb = quotas[b] - counts[b] as f64;
        rb.total_cmp(&ra)
    });
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}
