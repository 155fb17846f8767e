//! Stratified k-fold cross-validation and coordinate-wise grid search over
//! FC widths, optimizer, batch size and epochs (in that order).

use std::fmt::{self, Write as _};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{random_oversample_indices, Label};
use crate::error::{Error, Result};
use crate::evalx::{confusion_from_confidences, weighted_metrics};
use crate::model::{train_head, FeatureExtractor, ModelConfig};
use crate::nnkernel::{OptimizerKind, TrainingData};

pub const DEFAULT_FOLDS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    /// Fold index of every sample.
    pub fold_of: Vec<usize>,
}

impl FoldAssignment {
    /// `(rest, held)` index lists for fold `f`.
    pub fn split(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.fold_of.len()).partition(|&i| self.fold_of[i] != f)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.fold_of {
            s[f] += 1;
        }
        s
    }
}

fn labels_of(y: &[f64]) -> Vec<Label> {
    y.iter()
        .map(|&v| if v >= 0.5 { Label::Unripe } else { Label::Ripe })
        .collect()
}

/// Shuffles each class with the seed and deals it round-robin over the
/// folds. The second class starts where the first left off so fold totals
/// also stay within one of each other.
pub fn stratified_kfold(labels: &[Label], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Argument(format!("k-fold needs k >= 2, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0; labels.len()];
    let mut next = 0;
    for class in Label::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < k {
            return Err(Error::Argument(format!(
                "class {class:?} has {} samples, fewer than k = {k}",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for i in idx {
            fold_of[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok(FoldAssignment { k, seed, fold_of })
}

/// Splits the non-test part of a fold into training and early-stopping
/// validation rows: per class, `floor(n_c / max(k - 1, 2))` rows (at least
/// one, never all) go to validation.
pub fn carve_validation(rest: &[usize], labels: &[Label], k: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    let denom = (k.saturating_sub(1)).max(2);
    for class in Label::ALL {
        let mut idx: Vec<usize> = rest.iter().copied().filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let m = if n < 2 { 0 } else { (n / denom).clamp(1, n - 1) };
        val.extend_from_slice(&idx[..m]);
        train.extend_from_slice(&idx[m..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample (n - 1) standard deviation.
    pub fn of(values: &[f64]) -> MeanStd {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        MeanStd { mean, std }
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}±{:.3}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
    pub train_accuracy: MeanStd,
    pub test_accuracy: MeanStd,
    pub folds: Vec<FoldMetrics>,
    /// Number of models trained for this candidate.
    pub trainings: usize,
}

impl CandidateResult {
    pub fn from_folds(folds: Vec<FoldMetrics>) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::Argument("no fold results".into()));
        }
        let col = |f: fn(&FoldMetrics) -> f64| MeanStd::of(&folds.iter().map(f).collect::<Vec<_>>());
        Ok(CandidateResult {
            precision: col(|m| m.precision),
            recall: col(|m| m.recall),
            f1: col(|m| m.f1),
            train_accuracy: col(|m| m.train_accuracy),
            test_accuracy: col(|m| m.test_accuracy),
            trainings: folds.len(),
            folds,
        })
    }

    pub fn score(&self, metric: SelectionMetric) -> f64 {
        match metric {
            SelectionMetric::Precision => self.precision.mean,
            SelectionMetric::F1 => self.f1.mean,
            SelectionMetric::Accuracy => self.test_accuracy.mean,
        }
    }
}

fn accuracy(confidences: &[f64], y: &[f64]) -> f64 {
    let hits = confidences
        .iter()
        .zip(y)
        .filter(|(&p, &t)| (p >= 0.5) == (t >= 0.5))
        .count();
    hits as f64 / y.len() as f64
}

/// Trains one head per fold on precomputed features and tests it on the
/// held fold. Within each fold the rest is split by [`carve_validation`];
/// with `oversample` the training part is randomly oversampled first.
/// Folds run in parallel and fold `f` uses seed `config.seed + f`.
pub fn evaluate_candidate(
    config: &ModelConfig,
    data: &TrainingData,
    folds: &FoldAssignment,
    extractor: Arc<FeatureExtractor>,
    oversample: bool,
) -> Result<CandidateResult> {
    if folds.fold_of.len() != data.len() {
        return Err(Error::Argument(format!(
            "fold assignment covers {} samples, data has {}",
            folds.fold_of.len(),
            data.len()
        )));
    }
    let labels = labels_of(&data.y);
    let results = (0..folds.k)
        .into_par_iter()
        .map(|f| {
            let seed = config.seed.wrapping_add(f as u64);
            let (rest, held) = folds.split(f);
            let (train_idx, val_idx) = carve_validation(&rest, &labels, folds.k, seed);
            let fit_idx = if oversample {
                let sub: Vec<Label> = train_idx.iter().map(|&i| labels[i]).collect();
                random_oversample_indices(&sub, seed)?
                    .into_iter()
                    .map(|j| train_idx[j])
                    .collect()
            } else {
                train_idx.clone()
            };
            let cfg = ModelConfig {
                seed,
                ..config.clone()
            };
            let model = train_head(
                &data.subset(&fit_idx),
                &data.subset(&val_idx),
                &cfg,
                extractor.clone(),
                seed,
            )?;
            let test = data.subset(&held);
            let test_conf = model.predict_table(&test)?;
            let test_labels: Vec<Label> = held.iter().map(|&i| labels[i]).collect();
            let m = weighted_metrics(&confusion_from_confidences(&test_conf, &test_labels)?)?;
            let train = data.subset(&train_idx);
            let train_conf = model.predict_table(&train)?;
            Ok(FoldMetrics {
                precision: m.weighted_precision,
                recall: m.weighted_recall,
                f1: m.weighted_f1,
                train_accuracy: accuracy(&train_conf, &train.y),
                test_accuracy: m.accuracy,
            })
        })
        .enumerate()
        .map(|(f, r): (usize, Result<FoldMetrics>)| r.map_err(|e| e.context(format!("fold {}", f + 1))))
        .collect::<Result<Vec<_>>>()?;
    CandidateResult::from_folds(results)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMetric {
    Precision,
    #[default]
    F1,
    Accuracy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    FcLayer,
    Optimizer,
    BatchSize,
    Epoch,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::FcLayer => "FC Layer",
            Axis::Optimizer => "Optimization Function",
            Axis::BatchSize => "Batch Size",
            Axis::Epoch => "Epoch",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub fc: Vec<(usize, usize)>,
    pub optimizer: Vec<OptimizerKind>,
    pub batch_size: Vec<usize>,
    pub epochs: Vec<usize>,
    pub metric: SelectionMetric,
    pub k: usize,
    pub oversample: bool,
}

impl Default for GridSpec {
    /// The candidate values searched in the original study.
    fn default() -> Self {
        GridSpec {
            fc: vec![
                (256, 256),
                (512, 512),
                (1024, 1024),
                (2048, 2048),
                (256, 256),
                (512, 256),
                (1024, 256),
                (2048, 256),
            ],
            optimizer: vec![OptimizerKind::Adam, OptimizerKind::Sgd, OptimizerKind::AdaGrad],
            batch_size: vec![4, 6, 8, 10, 12, 14],
            epochs: vec![16, 20, 40, 60, 80],
            metric: SelectionMetric::F1,
            k: DEFAULT_FOLDS,
            oversample: true,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        for (axis, len) in [
            (Axis::FcLayer, self.fc.len()),
            (Axis::Optimizer, self.optimizer.len()),
            (Axis::BatchSize, self.batch_size.len()),
            (Axis::Epoch, self.epochs.len()),
        ] {
            if len == 0 {
                return Err(Error::Argument(format!("grid axis '{axis}' is empty")));
            }
        }
        Ok(())
    }

    pub fn evaluations(&self) -> usize {
        self.fc.len() + self.optimizer.len() + self.batch_size.len() + self.epochs.len()
    }

    fn candidates(&self, axis: Axis, current: &ModelConfig) -> Vec<(String, ModelConfig)> {
        let with = |f: &dyn Fn(&mut ModelConfig)| {
            let mut c = current.clone();
            f(&mut c);
            c
        };
        match axis {
            Axis::FcLayer => self
                .fc
                .iter()
                .map(|&fc| {
                    let c = with(&|c| c.fc = fc);
                    (c.fc_label(), c)
                })
                .collect(),
            // A new optimizer starts from its own default rate.
            Axis::Optimizer => self
                .optimizer
                .iter()
                .map(|&o| {
                    (
                        o.to_string(),
                        with(&|c| {
                            c.optimizer = o;
                            c.learning_rate = None;
                        }),
                    )
                })
                .collect(),
            Axis::BatchSize => self
                .batch_size
                .iter()
                .map(|&b| (b.to_string(), with(&|c| c.batch_size = b)))
                .collect(),
            Axis::Epoch => self
                .epochs
                .iter()
                .map(|&e| (e.to_string(), with(&|c| c.epochs = e)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneRow {
    pub axis: Axis,
    pub value: String,
    pub result: CandidateResult,
    pub chosen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub rows: Vec<TuneRow>,
    pub config: ModelConfig,
    pub metric: SelectionMetric,
}

impl TuneResult {
    pub fn evaluations(&self) -> usize {
        self.rows.len()
    }

    pub fn trainings(&self) -> usize {
        self.rows.iter().map(|r| r.result.trainings).sum()
    }

    pub fn chosen(&self, axis: Axis) -> Option<&str> {
        self.rows
            .iter()
            .find(|r| r.axis == axis && r.chosen)
            .map(|r| r.value.as_str())
    }

    /// One line per candidate; the axis name appears on its first row and
    /// the chosen candidate carries a `*`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(
            "hyperparameter\tvalue\tprecision\trecall\tf1\ttrain_accuracy\ttest_accuracy\tchosen\n",
        );
        let mut last = None;
        for r in &self.rows {
            let name = if last == Some(r.axis) { String::new() } else { r.axis.to_string() };
            last = Some(r.axis);
            let c = &r.result;
            let _ = writeln!(
                out,
                "{name}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.value,
                c.precision,
                c.recall,
                c.f1,
                c.train_accuracy,
                c.test_accuracy,
                if r.chosen { "*" } else { "" }
            );
        }
        out
    }
}

/// Coordinate-wise search with a caller-supplied evaluator: each axis in
/// turn is swept with the others held at their current values, the best
/// candidate by `grid.metric` is fixed (ties keep the earliest) and the
/// search moves on.
pub fn coordinate_search_with(
    grid: &GridSpec,
    base: &ModelConfig,
    mut evaluate: impl FnMut(&ModelConfig) -> Result<CandidateResult>,
) -> Result<TuneResult> {
    grid.validate()?;
    let mut current = base.clone();
    let mut rows = Vec::with_capacity(grid.evaluations());
    for axis in [Axis::FcLayer, Axis::Optimizer, Axis::BatchSize, Axis::Epoch] {
        let start = rows.len();
        let mut best: Option<(usize, f64, ModelConfig)> = None;
        for (value, cfg) in grid.candidates(axis, &current) {
            let result = evaluate(&cfg).map_err(|e| e.context(format!("{axis} = {value}")))?;
            let score = result.score(grid.metric);
            if best.as_ref().is_none_or(|(_, s, _)| score > *s) {
                best = Some((rows.len(), score, cfg));
            }
            rows.push(TuneRow {
                axis,
                value,
                result,
                chosen: false,
            });
        }
        let (at, _, cfg) = best.expect("axis validated non-empty");
        debug_assert!(at >= start);
        rows[at].chosen = true;
        current = cfg;
    }
    Ok(TuneResult {
        rows,
        config: current,
        metric: grid.metric,
    })
}

/// Coordinate search where every candidate runs k-fold cross-validation on
/// the feature table; folds are fixed once from `seed`.
pub fn coordinate_grid_search(
    grid: &GridSpec,
    base: &ModelConfig,
    data: &TrainingData,
    extractor: Arc<FeatureExtractor>,
    seed: u64,
) -> Result<TuneResult> {
    grid.validate()?;
    let folds = stratified_kfold(&labels_of(&data.y), grid.k, seed)?;
    coordinate_search_with(grid, base, |cfg| {
        evaluate_candidate(cfg, data, &folds, extractor.clone(), grid.oversample)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(ripe: usize, unripe: usize) -> Vec<Label> {
        [vec![Label::Ripe; ripe], vec![Label::Unripe; unripe]].concat()
    }

    fn per_fold_class(f: &FoldAssignment, l: &[Label], class: Label) -> Vec<usize> {
        let mut c = vec![0; f.k];
        for (i, &fo) in f.fold_of.iter().enumerate() {
            if l[i] == class {
                c[fo] += 1;
            }
        }
        c
    }

    #[test]
    fn balanced_kfold_is_exact() {
        let l = labels(20, 20);
        let f = stratified_kfold(&l, 10, 1).unwrap();
        assert!(per_fold_class(&f, &l, Label::Ripe).iter().all(|&c| c == 2));
        assert!(per_fold_class(&f, &l, Label::Unripe).iter().all(|&c| c == 2));
    }

    #[test]
    fn minority_folds_hold_three_or_four() {
        let l = labels(164, 37);
        let f = stratified_kfold(&l, 10, 3).unwrap();
        let u = per_fold_class(&f, &l, Label::Unripe);
        assert!(u.iter().all(|&c| c == 3 || c == 4));
        assert_eq!(u.iter().sum::<usize>(), 37);
        let sizes = f.fold_sizes();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert!(stratified_kfold(&labels(5, 3), 4, 0).is_err());
    }

    #[test]
    fn carve_keeps_both_classes() {
        let l = labels(12, 6);
        let rest: Vec<usize> = (0..18).collect();
        let (t, v) = carve_validation(&rest, &l, 2, 0);
        assert_eq!(v.len(), 9);
        assert_eq!(t.len() + v.len(), 18);
        let (t, v) = carve_validation(&rest, &l, 10, 0);
        assert_eq!(v.len(), 2);
        assert!(t.iter().all(|i| !v.contains(i)));
    }

    #[test]
    fn mean_std_format() {
        let m = MeanStd::of(&[0.9, 0.9, 0.9]);
        assert_eq!(m.std, 0.0);
        assert_eq!(m.to_string(), "0.900±0.000");
        assert_eq!(MeanStd { mean: 0.9234, std: 0.0481 }.to_string(), "0.923±0.048");
    }

    fn fake(score: f64) -> CandidateResult {
        let m = FoldMetrics {
            precision: score,
            recall: score,
            f1: score,
            train_accuracy: score,
            test_accuracy: score,
        };
        CandidateResult::from_folds(vec![m, m]).unwrap()
    }

    #[test]
    fn singleton_axes_return_config() {
        let grid = GridSpec {
            fc: vec![(8, 4)],
            optimizer: vec![OptimizerKind::Sgd],
            batch_size: vec![3],
            epochs: vec![7],
            ..GridSpec::default()
        };
        let mut calls = 0;
        let r = coordinate_search_with(&grid, &ModelConfig::default(), |_| {
            calls += 1;
            Ok(fake(0.5))
        })
        .unwrap();
        assert_eq!(calls, 4);
        assert_eq!(r.config.fc, (8, 4));
        assert_eq!(r.config.optimizer, OptimizerKind::Sgd);
        assert_eq!((r.config.batch_size, r.config.epochs), (3, 7));
    }

    #[test]
    fn dominant_candidate_propagates() {
        let grid = GridSpec {
            fc: vec![(4, 4), (16, 8), (32, 32)],
            optimizer: vec![OptimizerKind::Adam, OptimizerKind::Sgd],
            batch_size: vec![2, 4],
            epochs: vec![5, 9],
            ..GridSpec::default()
        };
        let mut seen = Vec::new();
        let r = coordinate_search_with(&grid, &ModelConfig::default(), |c| {
            seen.push(c.clone());
            // (16, 8) dominates, batch 2 edges ahead, epochs tie so the first wins.
            let noise = if c.batch_size == 2 { 1e-9 } else { 0.0 };
            Ok(fake(if c.fc == (16, 8) { 0.9 } else { 0.6 } + noise))
        })
        .unwrap();
        assert_eq!(r.evaluations(), grid.evaluations());
        assert_eq!(r.config.fc, (16, 8));
        assert!(seen[3..].iter().all(|c| c.fc == (16, 8)));
        assert_eq!(r.chosen(Axis::Optimizer), Some("adam"));
        assert_eq!(r.config.batch_size, 2);
        assert_eq!(r.config.epochs, 5);
        let tsv = r.to_tsv();
        assert!(tsv.lines().nth(1).unwrap().starts_with("FC Layer\tN^{4,4}"));
        assert!(tsv.lines().nth(2).unwrap().starts_with("\tN^{16,8}\t0.900±0.000"));
        assert!(tsv.lines().nth(2).unwrap().ends_with('*'));
    }

    #[test]
    fn empty_axis_rejected() {
        let grid = GridSpec {
            epochs: vec![],
            ..GridSpec::default()
        };
        assert!(matches!(
            coordinate_search_with(&grid, &ModelConfig::default(), |_| Ok(fake(0.1))),
            Err(Error::Argument(_))
        ));
    }
}
