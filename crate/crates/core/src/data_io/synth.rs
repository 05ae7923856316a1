use serde::{Deserialize, Serialize};

use super::EmbeddingDataset;
use crate::tensor::{Matrix, Rng};
use crate::{Error, Result};

/// Isotropic Gaussian clusters around random centres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Minimum distance between any two centres, in units of `sigma`.
    pub separation: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            per_class: 200,
            dim: 64,
            separation: 6.0,
            sigma: 1.0,
            seed: 0,
        }
    }
}

/// Draws centres from a standard normal, then rescales them so the closest
/// pair sits exactly `separation * sigma` apart. Samples are grouped by
/// class, class `c` occupying rows `c * per_class ..`.
pub fn gaussian_clusters(spec: &ClusterSpec) -> Result<EmbeddingDataset> {
    if spec.classes == 0 || spec.per_class == 0 || spec.dim == 0 {
        return Err(Error::Config(format!(
            "cluster spec needs positive classes, per_class and dim, got {}/{}/{}",
            spec.classes, spec.per_class, spec.dim
        )));
    }
    if !(spec.sigma > 0.0 && spec.separation > 0.0) || !spec.sigma.is_finite() || !spec.separation.is_finite() {
        return Err(Error::Config("sigma and separation must be positive".into()));
    }
    let mut rng = Rng::new(spec.seed);
    let mut centres = Matrix::gaussian(&mut rng, spec.classes, spec.dim, 0.0, 1.0)?;
    if spec.classes > 1 {
        let closest = min_pairwise_distance(&centres);
        if closest <= 0.0 {
            return Err(Error::Data("degenerate cluster centres".into()));
        }
        centres = centres.scale(spec.separation * spec.sigma / closest)?;
    }
    let n = spec.classes * spec.per_class;
    let noise = Matrix::gaussian(&mut rng, n, spec.dim, 0.0, spec.sigma)?;
    let labels: Vec<usize> = (0..n).map(|i| i / spec.per_class).collect();
    let x = noise.add(&centres.select_rows(&labels)?)?;
    let names: Vec<String> = (0..spec.classes).map(|c| format!("class{c}")).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    EmbeddingDataset::with_class_names(x, labels, &names, "synth")
}

pub fn min_pairwise_distance(points: &Matrix) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.rows() {
        for j in i + 1..points.rows() {
            let d2: f64 = points
                .row(i)
                .iter()
                .zip(points.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            best = best.min(d2.sqrt());
        }
    }
    best
}
