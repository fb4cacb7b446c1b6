//! Evaluation over frozen encoders: exact 1-nearest-neighbor classification
//! and a linear probe, both on the pooled hidden embeddings (the projection
//! head is a contrastive artifact and is not used for evaluation).

use crate::data::{Modality, SkeletonSequence, Topology};
use crate::encoder::{encode, EncoderParams};
use crate::rng::rng_for;
use crate::tensor::{Graph, Result, Tensor, TensorError};
use crate::trainer::sgd_step;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use std::path::Path;

fn contract(op: &'static str, msg: impl Into<String>) -> TensorError {
    TensorError::Contract {
        op,
        msg: msg.into(),
    }
}

/// Feature matrix with labels and a provenance tag.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub source: String,
}

impl FeatureSet {
    pub fn new(features: Tensor, labels: Vec<usize>, source: impl Into<String>) -> Result<Self> {
        if features.rank() != 2 || features.rows() != labels.len() {
            return Err(contract(
                "feature_set",
                format!(
                    "{} feature rows vs {} labels",
                    if features.rank() == 2 { features.rows() } else { 0 },
                    labels.len()
                ),
            ));
        }
        if !features.is_finite() {
            return Err(contract("feature_set", "non-finite feature values"));
        }
        Ok(FeatureSet {
            features,
            labels,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows scaled to unit norm. Errors on degenerate rows.
    fn normalized_rows(&self) -> Result<Tensor> {
        let (n, c) = (self.features.rows(), self.features.cols());
        let mut data = self.features.data().to_vec();
        for r in 0..n {
            let row = &mut data[r * c..(r + 1) * c];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return Err(TensorError::DegenerateNorm {
                    op: "knn_eval",
                    norm,
                });
            }
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
        Tensor::matrix(n, c, data)
    }

    /// CSV export: a comment header with dim/count, then label + features.
    pub fn save_csv(&self, path: &Path) -> std::result::Result<(), crate::wire::FormatError> {
        let mut out = String::new();
        out.push_str(&format!(
            "# dim={} count={} source={}\n",
            self.dim(),
            self.len(),
            self.source
        ));
        for r in 0..self.len() {
            out.push_str(&format!("{}", self.labels[r]));
            for v in self.features.row_slice(r) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        crate::wire::write_atomic(path, out.as_bytes())
    }
}

/// Hidden embeddings of unaugmented sequences through the instance branch
/// (no cross-attention: neighbor retrieval does not exist after pretraining).
pub fn extract_features(
    params: &EncoderParams,
    sequences: &[SkeletonSequence],
    modality: Modality,
    topology: &Topology,
    source: impl Into<String>,
) -> Result<FeatureSet> {
    let adjacency = topology.normalized_adjacency();
    let rows: Vec<Result<(Vec<f64>, usize)>> = sequences
        .par_iter()
        .map(|seq| {
            let derived = modality.derive(seq, topology)?;
            let mut g = Graph::new();
            let vars = params.lift(&mut g, false);
            let (h, _z) = encode(&mut g, &vars, &derived, &adjacency, None)?;
            Ok((g.value(h).data().to_vec(), seq.label))
        })
        .collect();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for r in rows {
        let (row, label) = r?;
        data.extend_from_slice(&row);
        labels.push(label);
    }
    let features = Tensor::matrix(labels.len(), params.config.model_dim, data)?;
    FeatureSet::new(features, labels, source)
}

/// Predicted label per test row: the label of the single nearest training
/// row by cosine similarity, ties broken by the lower training index.
pub fn knn_predict(train: &FeatureSet, test: &FeatureSet) -> Result<Vec<usize>> {
    if train.is_empty() || test.is_empty() {
        return Err(contract("knn_eval", "empty feature set"));
    }
    if train.dim() != test.dim() {
        return Err(TensorError::DimMismatch {
            op: "knn_eval",
            lhs: vec![train.dim()],
            rhs: vec![test.dim()],
        });
    }
    let train_n = train.normalized_rows()?;
    let test_n = test.normalized_rows()?;
    let preds: Vec<usize> = (0..test.len())
        .into_par_iter()
        .map(|i| {
            let q = test_n.row_slice(i);
            let mut best = (f64::NEG_INFINITY, 0usize);
            for j in 0..train.len() {
                let s = crate::tensor::dot_slices(q, train_n.row_slice(j));
                if s > best.0 {
                    best = (s, j);
                }
            }
            train.labels[best.1]
        })
        .collect();
    Ok(preds)
}

/// Top-1 accuracy of 1-nearest-neighbor classification.
pub fn knn_eval(train: &FeatureSet, test: &FeatureSet) -> Result<f64> {
    let preds = knn_predict(train, test)?;
    let correct = preds
        .iter()
        .zip(&test.labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

#[derive(Debug, Clone)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Epochs at which the rate is multiplied by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        // 40 epochs with drops at 25 and 35: half the published probe
        // schedule, same drop ratios
        ProbeConfig {
            epochs: 40,
            learning_rate: 0.1,
            decay_epochs: vec![25, 35],
            decay_factor: 0.1,
            batch_size: 128,
            momentum: 0.9,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProbeReport {
    pub accuracy: f64,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains a single linear layer with softmax cross-entropy on frozen
/// features and reports test top-1 accuracy.
pub fn linear_probe(train: &FeatureSet, test: &FeatureSet, cfg: &ProbeConfig) -> Result<ProbeReport> {
    if train.is_empty() || test.is_empty() {
        return Err(contract("linear_probe", "empty feature set"));
    }
    if train.dim() != test.dim() {
        return Err(TensorError::DimMismatch {
            op: "linear_probe",
            lhs: vec![train.dim()],
            rhs: vec![test.dim()],
        });
    }
    let classes = train
        .labels
        .iter()
        .chain(&test.labels)
        .max()
        .map(|m| m + 1)
        .unwrap_or(1);
    let dim = train.dim();
    let mut rng = rng_for(cfg.seed, &[0x60]);
    let mut weight = Tensor::uniform(&mut rng, vec![dim, classes], -0.01, 0.01);
    let mut bias = Tensor::zeros(vec![classes]);
    let mut velocity = vec![
        Tensor::zeros(vec![dim, classes]),
        Tensor::zeros(vec![classes]),
    ];

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut lr = cfg.learning_rate;
    for epoch in 0..cfg.epochs {
        if cfg.decay_epochs.contains(&epoch) {
            lr *= cfg.decay_factor;
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut shuffle_rng = rng_for(cfg.seed, &[0x61, epoch as u64]);
        order.shuffle(&mut shuffle_rng);
        let mut losses = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            let b = chunk.len();
            let mut x = Vec::with_capacity(b * dim);
            let mut onehot = vec![0.0; b * classes];
            for (r, &i) in chunk.iter().enumerate() {
                x.extend_from_slice(train.features.row_slice(i));
                onehot[r * classes + train.labels[i]] = 1.0;
            }
            let mut g = Graph::new();
            let xv = g.constant(Tensor::matrix(b, dim, x)?);
            let wv = g.leaf(weight.clone(), true);
            let bv = g.leaf(bias.clone(), true);
            let logits = g.matmul(xv, wv)?;
            let logits = g.add_bias(logits, bv)?;
            let probs = g.softmax(logits)?;
            let logp = g.log(probs);
            let mask = g.constant(Tensor::matrix(b, classes, onehot)?);
            let picked = g.mul(logp, mask)?;
            let total = g.sum(picked);
            let loss = g.scale(total, -1.0 / b as f64);
            losses.push(g.value(loss).item());
            g.backward(loss)?;
            let mut grads = vec![
                g.grad(wv).expect("weight gradient"),
                g.grad(bv).expect("bias gradient"),
            ];
            sgd_step(
                &mut [&mut weight, &mut bias],
                &mut grads,
                &mut velocity,
                lr,
                cfg.momentum,
                0.0,
            )?;
        }
        epoch_losses.push(losses.iter().sum::<f64>() / losses.len() as f64);
    }

    // test accuracy: argmax logits, ties to the lower class index
    let mut correct = 0usize;
    for i in 0..test.len() {
        let x = test.features.row_slice(i);
        let mut best = (f64::NEG_INFINITY, 0usize);
        for k in 0..classes {
            let mut s = bias.data()[k];
            for (d, &xv) in x.iter().enumerate() {
                s += xv * weight.data()[d * classes + k];
            }
            if s > best.0 {
                best = (s, k);
            }
        }
        if best.1 == test.labels[i] {
            correct += 1;
        }
    }
    Ok(ProbeReport {
        accuracy: correct as f64 / test.len() as f64,
        epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{default_topology, generate_dataset, DatasetConfig};
    use crate::encoder::EncoderConfig;
    use rand::Rng;

    fn small_dataset() -> crate::data::Dataset {
        generate_dataset(&DatasetConfig {
            num_classes: 2,
            train_per_class: 4,
            test_per_class: 2,
            frames: 8,
            ..DatasetConfig::default()
        })
        .unwrap()
    }

    fn toy_params(frames: usize) -> EncoderParams {
        let mut rng = rng_for(71, &[]);
        EncoderParams::init(&EncoderConfig::toy(frames), &mut rng).unwrap()
    }

    #[test]
    fn extraction_is_deterministic_with_right_shape() {
        let ds = small_dataset();
        let params = toy_params(ds.frames_per_seq);
        let topo = default_topology();
        let a = extract_features(&params, &ds.train, Modality::Joint, &topo, "t").unwrap();
        let b = extract_features(&params, &ds.train, Modality::Joint, &topo, "t").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), ds.train.len());
        assert_eq!(a.dim(), 8);
    }

    #[test]
    fn knn_on_identical_sets_is_perfect() {
        let ds = small_dataset();
        let params = toy_params(ds.frames_per_seq);
        let topo = default_topology();
        let f = extract_features(&params, &ds.train, Modality::Joint, &topo, "t").unwrap();
        let acc = knn_eval(&f, &f).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn knn_separates_orthogonal_clusters() {
        let train = FeatureSet::new(
            Tensor::matrix(4, 2, vec![1.0, 0.0, 0.9, 0.1, 0.0, 1.0, 0.1, 0.9]).unwrap(),
            vec![0, 0, 1, 1],
            "train",
        )
        .unwrap();
        let test = FeatureSet::new(
            Tensor::matrix(2, 2, vec![0.95, 0.05, 0.02, 1.1]).unwrap(),
            vec![0, 1],
            "test",
        )
        .unwrap();
        assert_eq!(knn_eval(&train, &test).unwrap(), 1.0);
    }

    #[test]
    fn knn_matches_brute_force_double_loop() {
        let mut rng = rng_for(72, &[]);
        let n = 200;
        let dim = 9;
        let feats = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| {
            let data: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..5)).collect();
            FeatureSet::new(Tensor::matrix(n, dim, data).unwrap(), labels, "r").unwrap()
        };
        let train = feats(&mut rng, n);
        let test = feats(&mut rng, 50);
        let got = knn_predict(&train, &test).unwrap();

        // straight-line oracle with explicit cosine and tie handling
        let cos = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            dot / (na * nb)
        };
        for i in 0..test.len() {
            let mut best_j = 0;
            let mut best_s = f64::NEG_INFINITY;
            for j in 0..train.len() {
                let s = cos(test.features.row_slice(i), train.features.row_slice(j));
                if s > best_s {
                    best_s = s;
                    best_j = j;
                }
            }
            assert_eq!(got[i], train.labels[best_j], "test row {i}");
        }
    }

    #[test]
    fn knn_invariant_to_positive_rescaling() {
        let mut rng = rng_for(73, &[]);
        let data: Vec<f64> = (0..60 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let labels: Vec<usize> = (0..60).map(|_| rng.gen_range(0..3)).collect();
        let train = FeatureSet::new(Tensor::matrix(60, 4, data.clone()).unwrap(), labels.clone(), "a").unwrap();
        let test_data: Vec<f64> = (0..20 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let test_labels: Vec<usize> = (0..20).map(|_| rng.gen_range(0..3)).collect();
        let test = FeatureSet::new(Tensor::matrix(20, 4, test_data.clone()).unwrap(), test_labels.clone(), "b").unwrap();
        let base = knn_predict(&train, &test).unwrap();

        let scale = 3.7;
        let train_s = FeatureSet::new(
            Tensor::matrix(60, 4, data.iter().map(|v| v * scale).collect()).unwrap(),
            labels,
            "a",
        )
        .unwrap();
        let test_s = FeatureSet::new(
            Tensor::matrix(20, 4, test_data.iter().map(|v| v * scale).collect()).unwrap(),
            test_labels,
            "b",
        )
        .unwrap();
        assert_eq!(knn_predict(&train_s, &test_s).unwrap(), base);
    }

    #[test]
    fn knn_rejects_empty_or_mismatched() {
        let f = FeatureSet::new(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap(), vec![0], "x").unwrap();
        let empty = FeatureSet::new(Tensor::zeros(vec![0, 2]), vec![], "y").unwrap();
        assert!(knn_eval(&f, &empty).is_err());
        let wide = FeatureSet::new(Tensor::matrix(1, 3, vec![1.0, 0.0, 0.0]).unwrap(), vec![0], "z").unwrap();
        assert!(knn_eval(&f, &wide).is_err());
    }

    #[test]
    fn probe_solves_linearly_separable_classes() {
        let mut rng = rng_for(74, &[]);
        let make = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| {
            let mut data = Vec::new();
            let mut labels = Vec::new();
            for i in 0..n {
                let label = i % 2;
                let center = if label == 0 { 2.0 } else { -2.0 };
                data.push(center + rng.gen_range(-0.5..0.5));
                data.push(rng.gen_range(-0.5..0.5));
                labels.push(label);
            }
            FeatureSet::new(Tensor::matrix(n, 2, data).unwrap(), labels, "sep").unwrap()
        };
        let train = make(120, &mut rng);
        let test = make(40, &mut rng);
        let report = linear_probe(&train, &test, &ProbeConfig::default()).unwrap();
        assert!(report.accuracy > 0.99, "accuracy {}", report.accuracy);
    }

    #[test]
    fn probe_loss_descends_early() {
        let mut rng = rng_for(75, &[]);
        let data: Vec<f64> = (0..160 * 6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let labels: Vec<usize> = (0..160).map(|i| i % 4).collect();
        let train = FeatureSet::new(Tensor::matrix(160, 6, data).unwrap(), labels, "d").unwrap();
        let report = linear_probe(&train, &train, &ProbeConfig::default()).unwrap();
        for w in report.epoch_losses[..5].windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "loss went up: {:?}", &report.epoch_losses[..5]);
        }
    }

    #[test]
    fn probe_on_shuffled_labels_is_near_chance() {
        let mut rng = rng_for(76, &[]);
        let classes = 8;
        let n = 240;
        let data: Vec<f64> = (0..n * 10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let train = FeatureSet::new(Tensor::matrix(n, 10, data).unwrap(), labels, "shuf").unwrap();
        // fresh random features for test with fresh random labels: nothing to learn
        let tdata: Vec<f64> = (0..80 * 10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tlabels: Vec<usize> = (0..80).map(|_| rng.gen_range(0..classes)).collect();
        let test = FeatureSet::new(Tensor::matrix(80, 10, tdata).unwrap(), tlabels, "shuf").unwrap();
        let report = linear_probe(&train, &test, &ProbeConfig::default()).unwrap();
        let chance = 1.0 / classes as f64;
        assert!(
            report.accuracy <= 3.0 * chance,
            "accuracy {} vs 3x chance {}",
            report.accuracy,
            3.0 * chance
        );
    }

    #[test]
    fn probe_does_not_mutate_encoder() {
        let ds = small_dataset();
        let params = toy_params(ds.frames_per_seq);
        let topo = default_topology();
        let checksum = |p: &EncoderParams| -> Vec<Vec<f64>> {
            p.tensors.flatten().iter().map(|t| t.data().to_vec()).collect()
        };
        let before = checksum(&params);
        let train = extract_features(&params, &ds.train, Modality::Joint, &topo, "t").unwrap();
        let test = extract_features(&params, &ds.test, Modality::Joint, &topo, "e").unwrap();
        let _ = linear_probe(&train, &test, &ProbeConfig::default()).unwrap();
        assert_eq!(checksum(&params), before);
    }

    #[test]
    fn random_encoder_beats_chance_on_separable_data() {
        // the random-feature floor the pretraining gains are measured against
        let ds = generate_dataset(&DatasetConfig {
            num_classes: 4,
            train_per_class: 12,
            test_per_class: 6,
            frames: 16,
            ..DatasetConfig::default()
        })
        .unwrap();
        let params = {
            let mut rng = rng_for(77, &[]);
            EncoderParams::init(&EncoderConfig::toy(16), &mut rng).unwrap()
        };
        let topo = default_topology();
        let train = extract_features(&params, &ds.train, Modality::Joint, &topo, "t").unwrap();
        let test = extract_features(&params, &ds.test, Modality::Joint, &topo, "e").unwrap();
        let acc = knn_eval(&train, &test).unwrap();
        assert!(acc > 0.25, "random features at chance: {acc}");
    }

    #[test]
    fn feature_csv_has_header_and_rows() {
        let f = FeatureSet::new(
            Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
            vec![1, 0],
            "unit",
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        f.save_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].contains("dim=3 count=2"));
        assert!(lines[1].starts_with("1,"));
    }
}
