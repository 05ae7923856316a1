use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EvalReport;
use crate::data_io::Splits;
use crate::losses::MultitaskConfig;
use crate::network::{Activation, NetworkConfig};
use crate::sampler::NoiseConfig;
use crate::trainer::{train, TrainConfig};
use crate::{Error, Result};

/// Hidden widths at multiplier 1 halve from this.
pub const BASE_WIDTH: f64 = 128.0;

pub const DEFAULT_MAX_POINTS: usize = 256;

/// One swept setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Depth(usize),
    /// Layer `k` gets `128 · m / 2^k` units.
    WidthMultiplier(f64),
    Dropout(f64),
    Activation(Activation),
    BatchNorm(bool),
    SnrDb(f64),
    /// Start and length of the noise window as fractions of the epochs.
    NoiseWindow(f64, f64),
    Weights(MultitaskConfig),
}

impl Setting {
    pub fn axis(&self) -> &'static str {
        match self {
            Setting::Depth(_) => "depth",
            Setting::WidthMultiplier(_) => "width",
            Setting::Dropout(_) => "dropout",
            Setting::Activation(_) => "activation",
            Setting::BatchNorm(_) => "batch_norm",
            Setting::SnrDb(_) => "snr_db",
            Setting::NoiseWindow(..) => "noise_window",
            Setting::Weights(_) => "weights",
        }
    }

    pub fn value(&self) -> String {
        match self {
            Setting::Depth(d) => d.to_string(),
            Setting::WidthMultiplier(m) => m.to_string(),
            Setting::Dropout(p) => p.to_string(),
            Setting::Activation(a) => a.to_string(),
            Setting::BatchNorm(b) => b.to_string(),
            Setting::SnrDb(s) => s.to_string(),
            Setting::NoiseWindow(s, l) => format!("{s}+{l}"),
            Setting::Weights(w) => w.to_string(),
        }
    }

    /// Numeric position for plotting, if the axis has one.
    pub fn x(&self) -> Option<f64> {
        match self {
            Setting::Depth(d) => Some(*d as f64),
            Setting::WidthMultiplier(v) | Setting::Dropout(v) | Setting::SnrDb(v) => Some(*v),
            Setting::NoiseWindow(start, _) => Some(*start),
            Setting::BatchNorm(b) => Some(f64::from(u8::from(*b))),
            Setting::Activation(_) | Setting::Weights(_) => None,
        }
    }

    fn apply(&self, arch: &mut NetworkConfig, cfg: &mut TrainConfig) {
        match self {
            Setting::Depth(d) => {
                let mult = arch.hidden_sizes.first().map_or(2.0, |&w| w as f64 / BASE_WIDTH);
                arch.hidden_sizes = widths(*d, mult);
            }
            Setting::WidthMultiplier(m) => arch.hidden_sizes = widths(arch.hidden_sizes.len(), *m),
            Setting::Dropout(p) => arch.dropout_rate = *p,
            Setting::Activation(a) => arch.activation = *a,
            Setting::BatchNorm(b) => arch.batch_norm = *b,
            Setting::SnrDb(s) => {
                cfg.noise = Some(NoiseConfig {
                    snr_db: *s,
                    ..cfg.noise.unwrap_or_default()
                })
            }
            Setting::NoiseWindow(start, len) => {
                cfg.noise = Some(NoiseConfig {
                    window_start: *start,
                    active_fraction: *len,
                    ..cfg.noise.unwrap_or_default()
                })
            }
            Setting::Weights(w) => cfg.losses.multitask = Some(w.clone()),
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.axis(), self.value())
    }
}

/// `depth` halving widths starting at `128 · mult`.
pub fn widths(depth: usize, mult: f64) -> Vec<usize> {
    (0..depth)
        .map(|k| ((BASE_WIDTH * mult / f64::from(1u32 << k)).round() as usize).max(1))
        .collect()
}

/// The cartesian product of its axes, applied over a base configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axes: Vec<Vec<Setting>>,
    pub max_points: usize,
}

impl SweepSpec {
    pub fn new(axes: Vec<Vec<Setting>>) -> Self {
        Self {
            axes,
            max_points: DEFAULT_MAX_POINTS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() {
            return Err(Error::Config("sweep has no axes".into()));
        }
        for axis in &self.axes {
            let Some(first) = axis.first() else {
                return Err(Error::Config("sweep axis has no values".into()));
            };
            if axis.iter().any(|s| s.axis() != first.axis()) {
                return Err(Error::Config(format!("axis {} mixes settings", first.axis())));
            }
        }
        for (i, a) in self.axes.iter().enumerate() {
            if self.axes[..i].iter().any(|b| b[0].axis() == a[0].axis()) {
                return Err(Error::Config(format!("axis {} given twice", a[0].axis())));
            }
        }
        let size = self.size();
        if size > self.max_points {
            return Err(Error::Config(format!(
                "sweep has {size} points, above the cap of {}",
                self.max_points
            )));
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn points(&self) -> Vec<SweepPoint> {
        let mut points = vec![Vec::new()];
        for axis in &self.axes {
            points = points
                .into_iter()
                .flat_map(|p: Vec<Setting>| {
                    axis.iter().map(move |s| {
                        let mut q = p.clone();
                        q.push(s.clone());
                        q
                    })
                })
                .collect();
        }
        points.into_iter().map(SweepPoint::new).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub settings: Vec<Setting>,
}

impl SweepPoint {
    pub fn new(mut settings: Vec<Setting>) -> Self {
        settings.sort_by(|a, b| a.axis().cmp(b.axis()));
        Self { settings }
    }

    /// Canonical encoding: settings sorted by axis name, `;`-separated.
    pub fn key(&self) -> String {
        self.settings
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(";")
    }

    /// Derived from the master seed and the key only, so enumeration order
    /// never changes a point's run.
    pub fn seed(&self, master_seed: u64) -> u64 {
        let mut h = Sha256::new();
        h.update(master_seed.to_le_bytes());
        h.update(self.key().as_bytes());
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    pub fn configure(
        &self,
        arch: &NetworkConfig,
        base: &TrainConfig,
        master_seed: u64,
    ) -> (NetworkConfig, TrainConfig) {
        let mut arch = arch.clone();
        let mut cfg = base.clone();
        for s in &self.settings {
            s.apply(&mut arch, &mut cfg);
        }
        cfg.seed = self.seed(master_seed);
        (arch, cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: SweepPoint,
    pub seed: u64,
    pub outcome: std::result::Result<EvalReport, String>,
}

impl SweepRow {
    pub fn accuracy(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|r| r.evaluation.accuracy)
    }
}

/// Trains every grid point on `splits`, up to `jobs` at a time. A failing
/// point is recorded and the others continue. Rows come back best first,
/// failures last, ties broken by key.
pub fn run_sweep(
    arch: &NetworkConfig,
    base: &TrainConfig,
    spec: &SweepSpec,
    splits: &Splits,
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let master = base.seed;
    let dim = splits.train.dim();
    let classes = splits.train.num_classes();
    let run = |point: &SweepPoint| {
        let (point_arch, cfg) = point.configure(arch, base, master);
        let net = cfg.network_config(&point_arch, dim, classes);
        let outcome = train(splits, &net, &cfg).map(|o| o.report).map_err(|e| {
            log::warn!("sweep point {} failed: {e}", point.key());
            e.to_string()
        });
        SweepRow {
            point: point.clone(),
            seed: cfg.seed,
            outcome,
        }
    };
    let points = spec.points();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut rows: Vec<SweepRow> = pool.install(|| points.par_iter().map(run).collect());
    rows.sort_by(|a, b| {
        let acc = |r: &SweepRow| r.accuracy().unwrap_or(f64::NEG_INFINITY);
        acc(b)
            .total_cmp(&acc(a))
            .then_with(|| a.point.key().cmp(&b.point.key()))
    });
    Ok(rows)
}

/// The multitask weight grid: two 2-head, fourteen 3-head and one 4-head
/// configurations.
pub fn multitask_weight_grid() -> Vec<MultitaskConfig> {
    const ROWS: [&str; 17] = [
        "ce:0.5,contrastive:0.5",
        "ce:0.5,triplet:0.5",
        "ce:0.45,ce:0.45,contrastive:0.1",
        "ce:0.40,ce:0.40,contrastive:0.2",
        "ce:0.35,ce:0.35,contrastive:0.3",
        "ce:0.30,ce:0.30,contrastive:0.4",
        "ce:0.25,ce:0.25,contrastive:0.5",
        "ce:0.20,ce:0.20,contrastive:0.6",
        "ce:0.15,ce:0.15,contrastive:0.7",
        "ce:0.10,ce:0.10,contrastive:0.8",
        "ce:0.05,ce:0.05,contrastive:0.9",
        "ce:0.07,ce:0.63,contrastive:0.3",
        "ce:0.21,ce:0.49,contrastive:0.3",
        "ce:0.49,ce:0.21,contrastive:0.3",
        "ce:0.63,ce:0.07,contrastive:0.3",
        "ce:0.35,ce:0.35,triplet:0.3",
        "ce:0.23,ce:0.23,ce:0.23,triplet:0.3",
    ];
    ROWS.iter().map(|r| r.parse().expect("grid rows are valid")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::{gaussian_clusters, stratified_split, ClusterSpec, SplitFractions};
    use std::collections::BTreeMap;

    #[test]
    fn weight_grid_shape() {
        let grid = multitask_weight_grid();
        let mut by_heads: BTreeMap<usize, usize> = BTreeMap::new();
        for cfg in &grid {
            *by_heads.entry(cfg.terms().len()).or_default() += 1;
            assert!((cfg.weight_sum() - 1.0).abs() < 1e-12);
        }
        assert_eq!(by_heads, BTreeMap::from([(2, 2), (3, 14), (4, 1)]));
    }

    #[test]
    fn widths_halve() {
        assert_eq!(widths(3, 1.0), [128, 64, 32]);
        assert_eq!(widths(3, 2.0), [256, 128, 64]);
        assert_eq!(widths(4, 0.5), [64, 32, 16, 8]);
    }

    #[test]
    fn grid_enumeration_and_seeds() {
        let spec = SweepSpec::new(vec![
            vec![Setting::Dropout(0.1), Setting::Dropout(0.3)],
            vec![Setting::Depth(1), Setting::Depth(2), Setting::Depth(3)],
        ]);
        let points = spec.points();
        assert_eq!(points.len(), 6);
        assert_eq!(points[0].key(), "depth=1;dropout=0.1");
        let reversed = SweepSpec::new(spec.axes.iter().rev().cloned().collect());
        let mut a: Vec<_> = points.iter().map(|p| (p.key(), p.seed(7))).collect();
        let mut b: Vec<_> = reversed.points().iter().map(|p| (p.key(), p.seed(7))).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert_ne!(points[0].seed(7), points[0].seed(8));
    }

    #[test]
    fn spec_validation() {
        assert!(SweepSpec::new(vec![]).validate().is_err());
        assert!(SweepSpec::new(vec![vec![]]).validate().is_err());
        assert!(SweepSpec::new(vec![vec![Setting::Depth(1), Setting::Dropout(0.1)]])
            .validate()
            .is_err());
        assert!(SweepSpec::new(vec![vec![Setting::Depth(1)], vec![Setting::Depth(2)]])
            .validate()
            .is_err());
        let big = SweepSpec {
            max_points: 3,
            ..SweepSpec::new(vec![(1..=4).map(Setting::Depth).collect()])
        };
        assert!(big.validate().is_err());
    }

    #[test]
    fn settings_apply() {
        let arch = NetworkConfig::baseline(8, 3);
        let base = TrainConfig::default();
        let point = SweepPoint::new(vec![
            Setting::Depth(2),
            Setting::SnrDb(10.0),
            Setting::Activation(Activation::Elu),
            Setting::Weights("ce:0.5,contrastive:0.5".parse().unwrap()),
        ]);
        let (a, c) = point.configure(&arch, &base, 1);
        assert_eq!(a.hidden_sizes, [256, 128]);
        assert_eq!(a.activation, Activation::Elu);
        assert_eq!(c.noise.unwrap().snr_db, 10.0);
        assert_eq!(c.noise.unwrap().active_fraction, 0.3);
        assert_eq!(c.heads(3).len(), 2);
        assert_eq!(c.seed, point.seed(1));
    }

    #[test]
    fn one_point_sweep_matches_direct_training() {
        let ds = gaussian_clusters(&ClusterSpec {
            classes: 3,
            per_class: 30,
            dim: 6,
            ..ClusterSpec::default()
        })
        .unwrap();
        let splits = stratified_split(&ds, SplitFractions::default(), 0)
            .materialize(&ds)
            .unwrap();
        let arch = NetworkConfig {
            hidden_sizes: vec![8],
            ..NetworkConfig::baseline(6, 3)
        };
        let base = TrainConfig {
            epochs: 2,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let spec = SweepSpec::new(vec![vec![Setting::Dropout(0.2)]]);
        let rows = run_sweep(&arch, &base, &spec, &splits, 2).unwrap();
        let (a, c) = spec.points()[0].configure(&arch, &base, base.seed);
        let direct = train(&splits, &c.network_config(&a, 6, 3), &c).unwrap();
        let json = |r: &EvalReport| serde_json::to_string(r).unwrap();
        assert_eq!(json(rows[0].outcome.as_ref().unwrap()), json(&direct.report));
    }

    #[test]
    fn failures_are_recorded() {
        let ds = gaussian_clusters(&ClusterSpec {
            classes: 2,
            per_class: 20,
            dim: 4,
            ..ClusterSpec::default()
        })
        .unwrap();
        let splits = stratified_split(&ds, SplitFractions::default(), 0)
            .materialize(&ds)
            .unwrap();
        let arch = NetworkConfig {
            hidden_sizes: vec![4],
            ..NetworkConfig::baseline(4, 2)
        };
        let base = TrainConfig {
            epochs: 1,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let spec = SweepSpec::new(vec![vec![Setting::Dropout(0.1), Setting::Dropout(1.5)]]);
        let rows = run_sweep(&arch, &base, &spec, &splits, 1).unwrap();
        assert!(rows[0].outcome.is_ok());
        assert!(rows[1].outcome.is_err());
    }
}
