use genrenet_core::data_io::{
    gaussian_clusters, stratified_split, ClusterSpec, EmbeddingDataset, SplitFractions, Splits,
};
use genrenet_core::network::NetworkConfig;
use genrenet_core::trainer::{train, TrainConfig};

fn clusters(seed: u64) -> (EmbeddingDataset, Splits) {
    let ds = gaussian_clusters(&ClusterSpec {
        seed,
        ..ClusterSpec::default()
    })
    .unwrap();
    let splits = stratified_split(&ds, SplitFractions::default(), seed)
        .materialize(&ds)
        .unwrap();
    (ds, splits)
}

/// Nearest class mean fitted on `train`, scored on `test`.
fn nearest_centroid_accuracy(train: &EmbeddingDataset, test: &EmbeddingDataset) -> f64 {
    let k = train.num_classes();
    let d = train.dim();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (row, &y) in train.embeddings().row_iter().zip(train.labels()) {
        counts[y] += 1;
        for (s, v) in sums[y].iter_mut().zip(row) {
            *s += v;
        }
    }
    let centroids: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| s.into_iter().map(|v| v / c as f64).collect())
        .collect();
    let correct = test
        .embeddings()
        .row_iter()
        .zip(test.labels())
        .filter(|(row, &y)| {
            let dist = |c: &Vec<f64>| c.iter().zip(row.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            let best = (0..k)
                .min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])))
                .unwrap();
            best == y
        })
        .count();
    correct as f64 / test.len() as f64
}

#[test]
fn gaussian_clusters_converge() {
    for seed in 0..3 {
        let (_, splits) = clusters(seed);
        let oracle = nearest_centroid_accuracy(&splits.train, &splits.test);
        let net = NetworkConfig::baseline(64, 10);
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let out = train(&splits, &net, &cfg).unwrap();
        eprintln!(
            "seed {seed}: oracle {oracle:.4} test {:.4} sel {} plateau {:?} {:.1}s",
            out.report.evaluation.accuracy,
            out.report.selected_epoch,
            out.report.plateau_epoch,
            out.report.runtime_seconds
        );
        assert!(oracle >= 0.99);
        assert!(out.report.evaluation.accuracy >= 0.98);
    }
}
