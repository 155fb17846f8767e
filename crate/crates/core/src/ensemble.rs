//! Homogeneous bagged heads combined by stacking with a logistic
//! meta-learner fitted on the validation split.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{bootstrap_indices, BispectralSample, LabeledDataset};
use crate::error::{Error, Result};
use crate::model::{feature_table, train_head, FeatureExtractor, ModelConfig, TrainedModel};
use crate::nnkernel::{sigmoid, TrainingData};

pub const DEFAULT_RIDGE: f64 = 1e-3;
pub const META_MAX_ITERATIONS: usize = 10_000;
pub const META_GRAD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    /// Number of base learners.
    pub learners: usize,
    pub ridge: f64,
    pub seed: u64,
    pub base: ModelConfig,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            learners: 5,
            ridge: DEFAULT_RIDGE,
            seed: 0,
            base: ModelConfig::default(),
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learners < 2 {
            return Err(Error::Config(format!(
                "an ensemble needs at least 2 learners, got {}",
                self.learners
            )));
        }
        if !(self.ridge.is_finite() && self.ridge >= 0.0) {
            return Err(Error::Config(format!("ridge {} must be non-negative", self.ridge)));
        }
        self.base.validate()
    }

    /// Seed of learner `i` (1-based) for both its bootstrap draw and its
    /// initialisation.
    pub fn learner_seed(&self, i: usize) -> u64 {
        self.seed.wrapping_add(i as u64)
    }
}

/// Learner `i` trains on `bootstrap(train, seed + i)` with init and shuffle
/// seeds `seed + i`. Learners run in parallel.
pub fn train_base_learners(
    train: &TrainingData,
    val: &TrainingData,
    config: &EnsembleConfig,
    extractor: Arc<FeatureExtractor>,
) -> Result<Vec<TrainedModel>> {
    config.validate()?;
    (1..=config.learners)
        .into_par_iter()
        .map(|i| {
            let seed = config.learner_seed(i);
            let subset = train.subset(&bootstrap_indices(train.len(), seed)?);
            let base = ModelConfig {
                seed,
                ..config.base.clone()
            };
            train_head(&subset, val, &base, extractor.clone(), seed)
                .map_err(|e| e.context(format!("base learner {i}")))
        })
        .collect()
}

/// Rows are samples, columns are base-learner confidences.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedFeatures {
    rows: Vec<Vec<f64>>,
    labels: Vec<f64>,
}

impl StackedFeatures {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        if rows.is_empty() || rows.len() != labels.len() {
            return Err(Error::Argument(format!(
                "stack needs a label per row and at least one row ({} rows, {} labels)",
                rows.len(),
                labels.len()
            )));
        }
        let width = rows[0].len();
        if width == 0 || rows.iter().any(|r| r.len() != width) {
            return Err(Error::Dimension("stack rows must share a positive width".into()));
        }
        if rows.iter().flatten().chain(&labels).any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Argument("stack entries and labels must lie in [0, 1]".into()));
        }
        Ok(StackedFeatures { rows, labels })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn width(&self) -> usize {
        self.rows[0].len()
    }

    /// SHA-256 over the little-endian bytes of every entry and label.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.width() as u64).to_le_bytes());
        for (row, y) in self.rows.iter().zip(&self.labels) {
            for v in row {
                h.update(v.to_le_bytes());
            }
            h.update(y.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Confidence of every learner on every feature row.
pub fn stack_predictions(learners: &[TrainedModel], data: &TrainingData) -> Result<StackedFeatures> {
    if learners.is_empty() {
        return Err(Error::Argument("no learners to stack".into()));
    }
    let columns = learners
        .par_iter()
        .map(|m| m.predict_table(data))
        .collect::<Result<Vec<_>>>()?;
    let rows = (0..data.len())
        .map(|r| columns.iter().map(|c| c[r]).collect())
        .collect();
    StackedFeatures::new(rows, data.y.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaDiagnostics {
    pub iterations: usize,
    /// Mean negative log-likelihood at the returned coefficients.
    pub final_nll: f64,
    pub converged: bool,
    /// Penalized objective after every accepted step, starting at β = 0.
    #[serde(skip)]
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaLearner {
    pub beta0: f64,
    pub beta1: Vec<f64>,
    pub diagnostics: MetaDiagnostics,
}

impl MetaLearner {
    /// Unfitted state: every coefficient zero.
    pub fn zeros(width: usize) -> Self {
        MetaLearner {
            beta0: 0.0,
            beta1: vec![0.0; width],
            diagnostics: MetaDiagnostics {
                iterations: 0,
                final_nll: f64::NAN,
                converged: false,
                objective_trace: Vec::new(),
            },
        }
    }

    pub fn logit(&self, row: &[f64]) -> f64 {
        self.beta0 + self.beta1.iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
    }

    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.beta1.len() {
            return Err(Error::Dimension(format!(
                "meta-learner has {} coefficients, row has {} confidences",
                self.beta1.len(),
                row.len()
            )));
        }
        Ok(sigmoid(self.logit(row)))
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

struct MetaProblem<'a> {
    stack: &'a StackedFeatures,
    ridge: f64,
}

impl MetaProblem<'_> {
    fn nll(&self, beta: &[f64]) -> f64 {
        let n = self.stack.rows.len() as f64;
        self.stack
            .rows
            .iter()
            .zip(&self.stack.labels)
            .map(|(x, &y)| {
                let z = beta[0] + beta[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
                softplus(z) - y * z
            })
            .sum::<f64>()
            / n
    }

    fn objective(&self, beta: &[f64]) -> f64 {
        self.nll(beta) + 0.5 * self.ridge * beta[1..].iter().map(|b| b * b).sum::<f64>()
    }

    fn gradient(&self, beta: &[f64]) -> Vec<f64> {
        let n = self.stack.rows.len() as f64;
        let mut g = vec![0.0; beta.len()];
        for (x, &y) in self.stack.rows.iter().zip(&self.stack.labels) {
            let z = beta[0] + beta[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
            let r = (sigmoid(z) - y) / n;
            g[0] += r;
            for (gj, v) in g[1..].iter_mut().zip(x) {
                *gj += r * v;
            }
        }
        for (gj, b) in g[1..].iter_mut().zip(&beta[1..]) {
            *gj += self.ridge * b;
        }
        g
    }
}

/// Maximum-likelihood logistic regression on the stack with an L2 penalty
/// `ridge/2·‖β₁‖²` (the intercept is not penalized).
///
/// Gradient descent from β = 0. Each step tries a Barzilai-Borwein length
/// and halves it until the Armijo condition holds, so the penalized
/// objective never increases. Stops when the largest gradient component
/// drops below `1e-8` or after 10 000 iterations; hitting the cap is
/// reported through `diagnostics.converged`, not as an error.
pub fn fit_meta(stack: &StackedFeatures, ridge: f64) -> Result<MetaLearner> {
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(Error::Argument(format!("ridge {ridge} must be non-negative")));
    }
    let positives = stack.labels.iter().filter(|&&y| y >= 0.5).count();
    if positives == 0 || positives == stack.labels.len() {
        return Err(Error::Argument(
            "meta-learner needs both labels in the stack".into(),
        ));
    }
    let problem = MetaProblem { stack, ridge };
    let mut beta = vec![0.0; stack.width() + 1];
    let mut f = problem.objective(&beta);
    let mut g = problem.gradient(&beta);
    let mut trace = vec![f];
    let mut step = 1.0;
    let mut iterations = 0;
    let max_abs = |g: &[f64]| g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut converged = max_abs(&g) < META_GRAD_TOL;

    while !converged && iterations < META_MAX_ITERATIONS {
        iterations += 1;
        let g2: f64 = g.iter().map(|v| v * v).sum();
        let mut t = step;
        let (next, f_next) = loop {
            let cand: Vec<f64> = beta.iter().zip(&g).map(|(b, gi)| b - t * gi).collect();
            let fc = problem.objective(&cand);
            if fc <= f - 1e-4 * t * g2 || t < 1e-16 {
                break (cand, fc);
            }
            t *= 0.5;
        };
        if f_next > f {
            // Step underflowed without progress; nothing more to gain.
            break;
        }
        let g_next = problem.gradient(&next);
        let s: Vec<f64> = next.iter().zip(&beta).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_next.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        step = if sy > 0.0 { (ss / sy).clamp(1e-10, 1e10) } else { t * 2.0 };
        beta = next;
        f = f_next;
        g = g_next;
        trace.push(f);
        converged = max_abs(&g) < META_GRAD_TOL;
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Numeric {
            path: "meta.beta".into(),
            reason: "non-finite coefficient".into(),
        });
    }
    Ok(MetaLearner {
        beta0: beta[0],
        beta1: beta[1..].to_vec(),
        diagnostics: MetaDiagnostics {
            iterations,
            final_nll: problem.nll(&beta),
            converged,
            objective_trace: trace,
        },
    })
}

#[derive(Debug, Clone)]
pub struct EnsembleModel {
    pub learners: Vec<TrainedModel>,
    pub meta: MetaLearner,
    pub config: EnsembleConfig,
    /// Digest of the validation stack the meta-learner was fitted on.
    pub stack_digest: String,
}

impl EnsembleModel {
    pub fn new(
        learners: Vec<TrainedModel>,
        meta: MetaLearner,
        config: EnsembleConfig,
        stack_digest: String,
    ) -> Result<Self> {
        let Some(first) = learners.first() else {
            return Err(Error::Config("ensemble has no learners".into()));
        };
        for (i, m) in learners.iter().enumerate() {
            if m.head.fc() != first.head.fc() || m.extractor.digest() != first.extractor.digest() {
                return Err(Error::Config(format!(
                    "learner {} differs in architecture or extractor from learner 1",
                    i + 1
                )));
            }
        }
        if meta.beta1.len() != learners.len() {
            return Err(Error::Config(format!(
                "meta-learner has {} coefficients for {} learners",
                meta.beta1.len(),
                learners.len()
            )));
        }
        Ok(EnsembleModel {
            learners,
            meta,
            config,
            stack_digest,
        })
    }

    pub fn extractor(&self) -> &Arc<FeatureExtractor> {
        &self.learners[0].extractor
    }

    pub fn base_confidences(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.learners.iter().map(|m| m.forward_features(features)).collect()
    }

    pub fn predict_features(&self, features: &[f64]) -> Result<f64> {
        self.meta.predict(&self.base_confidences(features)?)
    }

    /// Ensemble confidence for every row of a feature table.
    pub fn predict_table(&self, data: &TrainingData) -> Result<Vec<f64>> {
        let stack = stack_predictions(&self.learners, data)?;
        stack.rows().iter().map(|r| self.meta.predict(r)).collect()
    }

    pub fn predict_dataset(&self, dataset: &LabeledDataset) -> Result<Vec<f64>> {
        self.predict_table(&feature_table(dataset, self.extractor())?)
    }

    /// Writes `learner_{i}.*` model files and `meta.toml` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        for (i, m) in self.learners.iter().enumerate() {
            written.extend(m.save(&dir.join(format!("learner_{}", i + 1)))?);
        }
        let meta = MetaFile {
            learners: self.learners.len(),
            beta0: self.meta.beta0,
            beta1: self.meta.beta1.clone(),
            stack_digest: self.stack_digest.clone(),
            ridge: self.config.ridge,
            seed: self.config.seed,
            iterations: self.meta.diagnostics.iterations,
            final_nll: self.meta.diagnostics.final_nll,
            converged: self.meta.diagnostics.converged,
        };
        let path = dir.join("meta.toml");
        let text = toml::to_string(&meta).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(written)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("meta.toml");
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: MetaFile =
            toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if meta.learners < 1 || meta.beta1.len() != meta.learners {
            return Err(Error::Format(format!(
                "{}: {} coefficients for {} learners",
                path.display(),
                meta.beta1.len(),
                meta.learners
            )));
        }
        let mut learners: Vec<TrainedModel> = Vec::with_capacity(meta.learners);
        for i in 1..=meta.learners {
            let shared = learners.first().map(|m| m.extractor.clone());
            learners.push(TrainedModel::load(&dir.join(format!("learner_{i}")), shared)?);
        }
        let config = EnsembleConfig {
            learners: meta.learners,
            ridge: meta.ridge,
            seed: meta.seed,
            base: learners[0].config.clone(),
        };
        let learner = MetaLearner {
            beta0: meta.beta0,
            beta1: meta.beta1,
            diagnostics: MetaDiagnostics {
                iterations: meta.iterations,
                final_nll: meta.final_nll,
                converged: meta.converged,
                objective_trace: Vec::new(),
            },
        };
        EnsembleModel::new(learners, learner, config, meta.stack_digest)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaFile {
    learners: usize,
    beta0: f64,
    beta1: Vec<f64>,
    stack_digest: String,
    ridge: f64,
    seed: u64,
    iterations: usize,
    final_nll: f64,
    converged: bool,
}

pub fn predict_ensemble(model: &EnsembleModel, sample: &BispectralSample) -> Result<f64> {
    let base = model
        .learners
        .iter()
        .map(|m| m.forward(sample))
        .collect::<Result<Vec<_>>>()?;
    model.meta.predict(&base)
}

/// Trains base learners on `train`, stacks their validation predictions and
/// fits the meta-learner on that stack.
pub fn train_ensemble(
    train: &TrainingData,
    val: &TrainingData,
    config: &EnsembleConfig,
    extractor: Arc<FeatureExtractor>,
) -> Result<EnsembleModel> {
    let learners = train_base_learners(train, val, config, extractor)?;
    let stack = stack_predictions(&learners, val)?;
    let meta = fit_meta(&stack, config.ridge)?;
    EnsembleModel::new(learners, meta, config.clone(), stack.digest())
}

/// Per-learner summary lines for logs.
pub fn describe(model: &EnsembleModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "beta0\t{:?}", model.meta.beta0);
    for (i, (m, b)) in model.learners.iter().zip(&model.meta.beta1).enumerate() {
        let _ = writeln!(out, "learner_{}\tbeta={b:?}\tbest_epoch={}", i + 1, m.best_epoch);
    }
    out
}
