use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{shuffled_indices, WindowedDataset};
use super::network::{
    adam_step, loss_and_gradients, predict_proba, AdamConfig, AdamState, NetworkParams,
    NetworkShape,
};
use crate::error::{Error, Result};
use crate::synth::derive_seed;

pub const EVAL_SCHEMA_VERSION: u32 = 1;

const STREAM_INIT: u64 = 0x11;
const STREAM_EPOCH: u64 = 0x12;
const STREAM_FOLDS: u64 = 0x13;
const STREAM_FOLD_TRAIN: u64 = 0x14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub seed: u64,
    pub folds: usize,
    pub filters: usize,
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            adam: AdamConfig::default(),
            batch_size: 32,
            seed: 0,
            folds: 5,
            filters: 16,
            hidden: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be at least 1"));
        }
        if self.folds < 2 {
            return Err(Error::invalid("cross-validation needs at least 2 folds"));
        }
        if !(self.adam.lr > 0.0) || !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(Error::invalid("invalid Adam hyperparameters"));
        }
        Ok(())
    }

    pub fn shape_for(&self, ds: &WindowedDataset) -> NetworkShape {
        NetworkShape {
            filters: self.filters,
            hidden: self.hidden,
            ..NetworkShape::standard(ds.window_samples(), ds.num_channels(), ds.num_classes())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: NetworkParams,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Reciprocal RMS of every sample in the dataset (1 for an all-zero set).
pub fn input_scale(ds: &WindowedDataset) -> f64 {
    let (sum_sq, count) = ds.windows().iter().fold((0.0, 0usize), |(s, c), w| {
        (s + w.iter().map(|v| v * v).sum::<f64>(), c + w.len())
    });
    let rms = (sum_sq / count.max(1) as f64).sqrt();
    if rms > 0.0 && rms.is_finite() {
        1.0 / rms
    } else {
        1.0
    }
}

/// Mini-batch Adam training on reshuffled batches each epoch.
pub fn train(ds: &WindowedDataset, config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    if ds.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let shape = config.shape_for(ds);
    let mut params = NetworkParams::init(
        shape,
        input_scale(ds),
        derive_seed(config.seed, STREAM_INIT, 0),
    )?;
    let mut state = AdamState::new(&shape);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_EPOCH, epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let windows: Vec<ArrayView2<'_, f64>> =
                batch.iter().map(|&i| ds.windows()[i].view()).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| ds.labels()[i]).collect();
            let (loss, grads) = loss_and_gradients(&params, &windows, &labels)?;
            adam_step(&mut params, &grads, &mut state, &config.adam)?;
            total += loss * batch.len() as f64;
        }
        epoch_losses.push(total / ds.len() as f64);
    }
    Ok(TrainedModel {
        params,
        epoch_losses,
    })
}

/// Argmax class per window; ties go to the lower class index.
pub fn predict(params: &NetworkParams, ds: &WindowedDataset) -> Result<Vec<usize>> {
    let views: Vec<ArrayView2<'_, f64>> = ds.windows().iter().map(|w| w.view()).collect();
    let probs = predict_proba(params, &views)?;
    Ok(probs
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
                .0
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    /// Percent correct over every evaluated window (`trace / total`).
    pub accuracy: f64,
    /// Percent correct per fold; a single entry for a plain evaluation.
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// Sample standard deviation of the fold accuracies (0 for one fold).
    pub std_accuracy: f64,
    /// `confusion_matrix[true][predicted]` counts.
    pub confusion_matrix: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

impl EvalReport {
    pub fn total(&self) -> u64 {
        self.confusion_matrix.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.confusion_matrix.len())
            .map(|i| self.confusion_matrix[i][i])
            .sum()
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

fn report_from_confusion(confusion: Vec<Vec<u64>>, folds: Vec<f64>, names: Vec<String>) -> EvalReport {
    let total: u64 = confusion.iter().flatten().sum();
    let correct: u64 = (0..confusion.len()).map(|i| confusion[i][i]).sum();
    let accuracy = if total == 0 {
        0.0
    } else {
        100.0 * correct as f64 / total as f64
    };
    let folds = if folds.is_empty() { vec![accuracy] } else { folds };
    let (mean_accuracy, std_accuracy) = mean_std(&folds);
    EvalReport {
        schema_version: EVAL_SCHEMA_VERSION,
        accuracy,
        fold_accuracies: folds,
        mean_accuracy,
        std_accuracy,
        confusion_matrix: confusion,
        class_names: names,
    }
}

pub fn evaluate(params: &NetworkParams, test: &WindowedDataset) -> Result<EvalReport> {
    if test.num_classes() != params.shape.classes {
        return Err(Error::invalid(format!(
            "dataset has {} classes, network {}",
            test.num_classes(),
            params.shape.classes
        )));
    }
    let predicted = predict(params, test)?;
    let k = test.num_classes();
    let mut confusion = vec![vec![0u64; k]; k];
    for (&y, &p) in test.labels().iter().zip(&predicted) {
        confusion[y][p] += 1;
    }
    Ok(report_from_confusion(confusion, Vec::new(), test.class_names().to_vec()))
}

/// Shuffled partition into `k` folds; the first `n % k` folds get one extra window.
pub fn fold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::invalid("need at least 2 folds"));
    }
    if n < k {
        return Err(Error::invalid(format!("{n} windows cannot fill {k} folds")));
    }
    let idx = shuffled_indices(n, seed);
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(idx[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

/// Trains on all-but-one fold and evaluates on the held-out fold, for every fold.
pub fn cross_validate(ds: &WindowedDataset, config: &TrainConfig) -> Result<Vec<EvalReport>> {
    config.validate()?;
    let folds = fold_indices(ds.len(), config.folds, derive_seed(config.seed, STREAM_FOLDS, 0))?;
    let mut reports = Vec::with_capacity(folds.len());
    for (f, test_idx) in folds.iter().enumerate() {
        let train_idx: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != f)
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect();
        let fold_config = TrainConfig {
            seed: derive_seed(config.seed, STREAM_FOLD_TRAIN, f as u64),
            ..*config
        };
        let model = train(&ds.subset(&train_idx), &fold_config)?;
        reports.push(evaluate(&model.params, &ds.subset(test_idx))?);
    }
    Ok(reports)
}

/// Pools fold confusion matrices and summarizes fold accuracies.
pub fn summarize_folds(reports: &[EvalReport]) -> Result<EvalReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::invalid("no fold reports to summarize"))?;
    let k = first.confusion_matrix.len();
    let mut confusion = vec![vec![0u64; k]; k];
    for r in reports {
        if r.confusion_matrix.len() != k {
            return Err(Error::invalid("fold reports disagree on class count"));
        }
        for (dst, src) in confusion.iter_mut().zip(&r.confusion_matrix) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    let folds = reports.iter().map(|r| r.accuracy).collect();
    Ok(report_from_confusion(confusion, folds, first.class_names.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_cover_exactly_once_with_remainder_spread() {
        let folds = fold_indices(23, 5, 1).unwrap();
        let sizes: Vec<usize> = folds.iter().map(|f| f.len()).collect();
        assert_eq!(sizes, vec![5, 5, 5, 4, 4]);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert!(fold_indices(4, 5, 1).is_err());
    }

    #[test]
    fn summary_accuracy_is_trace_over_total() {
        let names = vec!["a".to_string(), "b".to_string()];
        let r1 = report_from_confusion(vec![vec![3, 1], vec![0, 4]], vec![], names.clone());
        let r2 = report_from_confusion(vec![vec![2, 0], vec![2, 4]], vec![], names);
        assert_eq!(r1.accuracy, 87.5);
        let s = summarize_folds(&[r1, r2]).unwrap();
        assert_eq!(s.confusion_matrix, vec![vec![5, 1], vec![2, 8]]);
        assert_eq!(s.accuracy, 100.0 * 13.0 / 16.0);
        assert_eq!(s.fold_accuracies, vec![87.5, 75.0]);
        assert_eq!(s.mean_accuracy, 81.25);
        assert!((s.std_accuracy - 12.5 / 2f64.sqrt()).abs() < 1e-12);
    }
}
