//! Two-branch classifier: one shared frozen extractor applied to the 700 nm
//! and 770 nm images, concatenated features, two ReLU dense layers and a
//! sigmoid output.

mod extractor;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use extractor::{write_random_conv, ExtractorSpec, FeatureExtractor, DEFAULT_SURROGATE_DIM};

use crate::dataset::{BispectralSample, Label, LabeledDataset};
use crate::error::{Error, Result};
use crate::nnkernel::{
    fit, load_network, save_network, Activation, DenseLayer, EpochRecord, Network, OptimizerKind,
    OptimizerState, Tensor, TrainSchedule, TrainingData,
};

/// Decision rule: confidence ≥ 0.5 is unripe.
pub fn classify(confidence: f64) -> Result<Label> {
    if !(0.0..=1.0).contains(&confidence) {
        return Err(Error::Argument(format!(
            "confidence {confidence} outside [0, 1]"
        )));
    }
    Ok(if confidence >= 0.5 { Label::Unripe } else { Label::Ripe })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Widths of the two hidden dense layers.
    pub fc: (usize, usize),
    pub optimizer: OptimizerKind,
    /// Falls back to the optimizer's default rate when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            fc: (1024, 1024),
            optimizer: OptimizerKind::Adam,
            learning_rate: None,
            momentum: 0.0,
            batch_size: 10,
            epochs: 20,
            patience: 5,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let (n1, n2) = self.fc;
        if n1 == 0 || n2 == 0 || self.batch_size == 0 || self.epochs == 0 || self.patience == 0 {
            return Err(Error::Config(format!(
                "fc widths, batch_size, epochs and patience must be positive (fc=({n1}, {n2}), batch={}, epochs={}, patience={})",
                self.batch_size, self.epochs, self.patience
            )));
        }
        if let Some(lr) = self.learning_rate {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::Config(format!("learning_rate {lr} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        Ok(())
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
            .unwrap_or_else(|| self.optimizer.default_learning_rate())
    }

    pub fn optimizer_state(&self) -> Result<OptimizerState> {
        OptimizerState::new(self.optimizer, self.learning_rate())?.with_momentum(self.momentum)
    }

    pub fn schedule(&self) -> TrainSchedule {
        TrainSchedule {
            epochs: self.epochs,
            batch_size: self.batch_size,
            patience: self.patience,
        }
    }

    /// `N^{n1,n2}` label used in reports.
    pub fn fc_label(&self) -> String {
        format!("N^{{{},{}}}", self.fc.0, self.fc.1)
    }
}

/// fc1 (ReLU) → fc2 (ReLU) → out (sigmoid, width 1).
#[derive(Debug, Clone, PartialEq)]
pub struct MultiInputHead {
    network: Network,
}

impl MultiInputHead {
    /// He-uniform initialisation for a head over `feature_dim`-wide branches.
    pub fn init(feature_dim: usize, fc: (usize, usize), seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = vec![
            DenseLayer::he_uniform(2 * feature_dim, fc.0, Activation::Relu, &mut rng),
            DenseLayer::he_uniform(fc.0, fc.1, Activation::Relu, &mut rng),
            DenseLayer::he_uniform(fc.1, 1, Activation::Sigmoid, &mut rng),
        ];
        Self::from_network(Network::new(layers)?)
    }

    pub fn zeros(feature_dim: usize, fc: (usize, usize)) -> Result<Self> {
        Self::from_network(Network::new(vec![
            DenseLayer::zeros(2 * feature_dim, fc.0, Activation::Relu),
            DenseLayer::zeros(fc.0, fc.1, Activation::Relu),
            DenseLayer::zeros(fc.1, 1, Activation::Sigmoid),
        ])?)
    }

    pub fn from_network(network: Network) -> Result<Self> {
        let layers = network.layers();
        let acts: Vec<Activation> = layers.iter().map(|l| l.activation).collect();
        if acts != [Activation::Relu, Activation::Relu, Activation::Sigmoid]
            || network.output_width() != 1
            || !network.input_width().is_multiple_of(2)
        {
            return Err(Error::Config(format!(
                "head must be relu/relu/sigmoid with one output over an even input width, got {acts:?} {}→{}",
                network.input_width(),
                network.output_width()
            )));
        }
        Ok(MultiInputHead { network })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn into_network(self) -> Network {
        self.network
    }

    /// Width of one branch's feature vector.
    pub fn feature_dim(&self) -> usize {
        self.network.input_width() / 2
    }

    pub fn fc(&self) -> (usize, usize) {
        let l = self.network.layers();
        (l[0].outputs(), l[1].outputs())
    }

    /// Confidences for rows of concatenated features.
    pub fn predict(&self, features: &Tensor) -> Result<Vec<f64>> {
        Ok(self.network.predict(features)?.into_values())
    }
}

/// Both branch feature vectors of one sample.
pub fn extract_features(
    sample: &BispectralSample,
    extractor: &FeatureExtractor,
) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok((extractor.extract(sample.band700())?, extractor.extract(sample.band770())?))
}

/// Concatenated `[f700 | f770]` rows for a dataset, with labels as targets.
pub fn feature_table(dataset: &LabeledDataset, extractor: &FeatureExtractor) -> Result<TrainingData> {
    let dim = extractor.output_dim();
    let rows = dataset
        .samples()
        .par_iter()
        .map(|s| {
            let (a, b) = extract_features(s, extractor)?;
            Ok([a, b].concat())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let y = dataset.samples().iter().map(|s| s.label.as_f64()).collect();
    TrainingData::new(Tensor::matrix(rows.len(), 2 * dim, rows.concat())?, y)
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub extractor: Arc<FeatureExtractor>,
    pub head: MultiInputHead,
    pub config: ModelConfig,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept; 0 for untrained heads.
    pub best_epoch: usize,
}

impl TrainedModel {
    /// Pairs an extractor with a head, checking their widths agree.
    pub fn assemble(
        extractor: Arc<FeatureExtractor>,
        head: MultiInputHead,
        config: ModelConfig,
    ) -> Result<Self> {
        if head.feature_dim() != extractor.output_dim() {
            return Err(Error::Config(format!(
                "head expects {}-wide branch features, extractor produces {}",
                head.feature_dim(),
                extractor.output_dim()
            )));
        }
        Ok(TrainedModel {
            extractor,
            head,
            config,
            history: Vec::new(),
            best_epoch: 0,
        })
    }

    pub fn forward(&self, sample: &BispectralSample) -> Result<f64> {
        let (a, b) = extract_features(sample, &self.extractor)?;
        self.forward_features(&[a, b].concat())
    }

    pub fn forward_features(&self, row: &[f64]) -> Result<f64> {
        let x = Tensor::matrix(1, row.len(), row.to_vec())?;
        Ok(self.head.predict(&x)?[0])
    }

    pub fn predict_table(&self, data: &TrainingData) -> Result<Vec<f64>> {
        self.head.predict(&data.x)
    }

    pub fn predict_dataset(&self, dataset: &LabeledDataset) -> Result<Vec<f64>> {
        self.predict_table(&feature_table(dataset, &self.extractor)?)
    }

    /// Writes `stem.bstk`, the `stem.toml` sidecar and `stem.history.tsv`.
    pub fn save(&self, stem: &Path) -> Result<Vec<PathBuf>> {
        let weights = stem.with_extension("bstk");
        let sidecar = stem.with_extension("toml");
        let history = stem.with_extension("history.tsv");
        save_network(self.head.network(), &weights)?;
        let meta = Sidecar {
            weights: file_name(&weights),
            best_epoch: self.best_epoch,
            extractor_digest: self.extractor.digest().to_string(),
            config: self.config.clone(),
            extractor: self.extractor.spec().clone(),
        };
        let text = toml::to_string(&meta).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(&sidecar, text).map_err(|e| Error::io(&sidecar, e))?;
        std::fs::write(&history, history_tsv(&self.history)).map_err(|e| Error::io(&history, e))?;
        Ok(vec![weights, sidecar, history])
    }

    /// Reloads a model written by [`TrainedModel::save`]. When `extractor`
    /// is `None` it is rebuilt from the sidecar; either way its digest must
    /// match the recorded one.
    pub fn load(stem: &Path, extractor: Option<Arc<FeatureExtractor>>) -> Result<Self> {
        let sidecar = stem.with_extension("toml");
        if !sidecar.exists() {
            return Err(Error::MissingFile(sidecar));
        }
        let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let meta: Sidecar = toml::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", sidecar.display())))?;
        let extractor = match extractor {
            Some(x) => x,
            None => Arc::new(meta.extractor.build()?),
        };
        if extractor.digest() != meta.extractor_digest {
            return Err(Error::Config(format!(
                "{}: extractor digest {} does not match recorded {}",
                sidecar.display(),
                extractor.digest(),
                meta.extractor_digest
            )));
        }
        let dir = stem.parent().unwrap_or(Path::new("."));
        let head = MultiInputHead::from_network(load_network(&dir.join(&meta.weights))?)?;
        let mut model = TrainedModel::assemble(extractor, head, meta.config)?;
        model.best_epoch = meta.best_epoch;
        let history = stem.with_extension("history.tsv");
        if history.exists() {
            let text = std::fs::read_to_string(&history).map_err(|e| Error::io(&history, e))?;
            model.history = parse_history(&text)
                .map_err(|e| Error::Format(format!("{}: {e}", history.display())))?;
        }
        Ok(model)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    weights: String,
    best_epoch: usize,
    extractor_digest: String,
    config: ModelConfig,
    extractor: ExtractorSpec,
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn history_tsv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch\ttrain_loss\ttrain_accuracy\tval_loss\tval_accuracy\n");
    for r in history {
        // {:?} on f64 prints the shortest round-tripping form.
        let _ = writeln!(
            out,
            "{}\t{:?}\t{:?}\t{:?}\t{:?}",
            r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy
        );
    }
    out
}

fn parse_history(text: &str) -> std::result::Result<Vec<EpochRecord>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(format!("line {}: expected 5 fields, got {}", i + 1, f.len()));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| format!("line {}: {e}", i + 1));
        out.push(EpochRecord {
            epoch: f[0].parse().map_err(|e| format!("line {}: {e}", i + 1))?,
            train_loss: num(f[1])?,
            train_accuracy: num(f[2])?,
            val_loss: num(f[3])?,
            val_accuracy: num(f[4])?,
        });
    }
    Ok(out)
}

/// Trains a head on precomputed feature tables (see [`feature_table`]).
///
/// The head is initialised from `init_seed`, batches are shuffled from
/// `config.seed`, and the kept weights are rounded to f32 so the saved
/// model reloads bit-exactly.
pub fn train_head(
    train: &TrainingData,
    val: &TrainingData,
    config: &ModelConfig,
    extractor: Arc<FeatureExtractor>,
    init_seed: u64,
) -> Result<TrainedModel> {
    config.validate()?;
    let dim = extractor.output_dim();
    for (name, t) in [("train", train), ("validation", val)] {
        if t.width() != 2 * dim {
            return Err(Error::Dimension(format!(
                "{name} features are {} wide, extractor pair gives {}",
                t.width(),
                2 * dim
            )));
        }
    }
    let head = MultiInputHead::init(dim, config.fc, init_seed)?;
    let mut optimizer = config.optimizer_state()?;
    let outcome = fit(
        head.into_network(),
        train,
        val,
        config.schedule(),
        &mut optimizer,
        config.seed,
    )?;
    let mut network = outcome.network;
    network.round_to_f32();
    let mut model = TrainedModel::assemble(extractor, MultiInputHead::from_network(network)?, config.clone())?;
    model.history = outcome.history;
    model.best_epoch = outcome.best_epoch;
    Ok(model)
}

/// Extracts features for both splits and trains a head; the extractor is
/// shared read-only and never modified.
pub fn train_model(
    train: &LabeledDataset,
    val: &LabeledDataset,
    config: &ModelConfig,
    extractor: Arc<FeatureExtractor>,
) -> Result<TrainedModel> {
    let tr = feature_table(train, &extractor)?;
    let va = feature_table(val, &extractor)?;
    train_head(&tr, &va, config, extractor, config.seed)
}
