//! One function per subcommand. Each returns the files it wrote and a
//! short human-readable summary.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use super::config::{ConfidenceSource, RunConfig};
use crate::dataset::manifest::{
    is_stereo_manifest, load_dataset, prepare_bands, prepare_stereo, read_manifest,
    read_stereo_manifest, resolve, sample_from_bands, write_dataset, write_manifest,
};
use crate::dataset::{
    augment, random_oversample, stratified_split, AugmentationSpec, BispectralSample, Farm, Image,
    Label, LabeledDataset, StereoFrame,
};
use crate::ensemble::{describe, train_ensemble, EnsembleModel};
use crate::error::{Error, Result};
use crate::evalx::{
    confusion_from_confidences, load_sensory, pearson_matrix, pr_curve, roc_auc, sensory_report,
    weighted_metrics, MetricsReport,
};
use crate::model::{feature_table, train_model, TrainedModel};
use crate::spectral::{
    calibrate, load_cube, mean_spectrum, normalize_spectrum, select_wavelengths, spectra_table,
    SegmentationMask,
};
use crate::synth::{planted_scene, synth_dataset};
use crate::tuning::coordinate_grid_search;

pub struct Context {
    pub config: RunConfig,
    pub seed: u64,
    pub out: PathBuf,
}

pub struct Outcome {
    pub outputs: Vec<PathBuf>,
    pub summary: String,
}

impl Context {
    fn dir(&self, name: &str) -> Result<PathBuf> {
        let d = self.out.join(name);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        Ok(d)
    }

    /// A configured input path, or `default` under the output directory;
    /// it must exist.
    fn input(&self, configured: &Option<PathBuf>, default: &str) -> Result<PathBuf> {
        let p = configured.clone().unwrap_or_else(|| self.out.join(default));
        if !p.exists() {
            return Err(Error::MissingFile(p));
        }
        Ok(p)
    }
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>, outputs: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    outputs.push(path);
    Ok(())
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))
}

pub fn synth(ctx: &Context) -> Result<Outcome> {
    let mut outputs = Vec::new();
    let data_dir = ctx.dir("synth/dataset")?;
    let dataset = synth_dataset(&ctx.config.synth, ctx.seed)?;
    let rows = write_dataset(&dataset, &data_dir)?;
    let manifest = data_dir.join("manifest.csv");
    write_manifest(&rows, &manifest)?;
    outputs.push(manifest);

    let scene_dir = ctx.dir("synth/scene")?;
    let scene = planted_scene(ctx.seed)?;
    for (name, cube) in [("raw", &scene.raw), ("white", &scene.white), ("dark", &scene.dark)] {
        let (h, d) = (scene_dir.join(format!("{name}.hdr")), scene_dir.join(format!("{name}.bin")));
        cube.save(&h, &d)?;
        outputs.extend([h, d]);
    }
    for (class, mask) in &scene.masks {
        let p = scene_dir.join(format!("mask_{class}.png"));
        mask.save(&p)?;
        outputs.push(p);
    }
    let [ripe, unripe] = dataset.class_counts();
    Ok(Outcome {
        outputs,
        summary: format!("synthetic samples: {ripe} ripe, {unripe} unripe; planted scene with 5 classes"),
    })
}

pub fn select_wavelengths_cmd(ctx: &Context) -> Result<Outcome> {
    let p = &ctx.config.paths;
    let raw = load_cube(
        &ctx.input(&p.raw_header, "synth/scene/raw.hdr")?,
        &ctx.input(&p.raw_data, "synth/scene/raw.bin")?,
    )?;
    let white = load_cube(
        &ctx.input(&p.white_header, "synth/scene/white.hdr")?,
        &ctx.input(&p.white_data, "synth/scene/white.bin")?,
    )?;
    let dark = load_cube(
        &ctx.input(&p.dark_header, "synth/scene/dark.hdr")?,
        &ctx.input(&p.dark_data, "synth/scene/dark.bin")?,
    )?;
    let reflectance = calibrate(&raw, &white, &dark)?;

    let masks: Vec<(u8, PathBuf)> = if p.masks.is_empty() {
        (0..5u8)
            .map(|c| (c, ctx.out.join(format!("synth/scene/mask_{c}.png"))))
            .collect()
    } else {
        p.masks
            .iter()
            .map(|(k, v)| {
                k.parse::<u8>()
                    .map(|c| (c, v.clone()))
                    .map_err(|_| Error::Config(format!("mask key '{k}' is not a ripeness class")))
            })
            .collect::<Result<_>>()?
    };
    let mut spectra = Vec::with_capacity(masks.len());
    for (class, path) in &masks {
        let mask = SegmentationMask::load(path)
            .map_err(|e| e.context(format!("mask for class {class}")))?;
        spectra.push(normalize_spectrum(&mean_spectrum(&reflectance, &mask, *class)?)?);
    }
    let s = &ctx.config.spectral;
    let pair = select_wavelengths(&spectra, s.visible_range, s.nir_range)?;

    let dir = ctx.dir("wavelengths")?;
    let mut outputs = Vec::new();
    write(dir.join("spectra.tsv"), spectra_table(&spectra), &mut outputs)?;
    write(dir.join("wavelengths.json"), json(&pair)?, &mut outputs)?;
    Ok(Outcome {
        outputs,
        summary: format!("selected {} nm (visible) and {} nm (NIR)", pair.visible_nm, pair.nir_nm),
    })
}

fn load_raw_samples(manifest: &Path, equalize_770: bool) -> Result<LabeledDataset> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let label_of = |v: u8, id: &str| {
        Label::from_index(v).map_err(|e| Error::Format(format!("{}: berry {id}: {e}", manifest.display())))
    };
    let mut samples = Vec::new();
    if is_stereo_manifest(manifest)? {
        for row in read_stereo_manifest(manifest)? {
            let path = resolve(base, &row.stereo_path);
            let frame = StereoFrame::load(&path, &row.berry_id).map_err(|e| match e {
                Error::MissingFile(p) => Error::MissingFile(p),
                // A malformed frame is a precondition of the command.
                other => Error::Argument(format!("stereo frame {}: {}", path.display(), other.root())),
            })?;
            let (b700, b770) = prepare_stereo(&frame, equalize_770)?;
            let farm: Farm = row.farm.parse()?;
            samples.push(sample_from_bands(&b700, &b770, label_of(row.label, &row.berry_id)?, &row.berry_id, farm)?);
        }
    } else {
        for row in read_manifest(manifest)? {
            let raw700 = Image::load_gray(&resolve(base, &row.path_700))?;
            let raw770 = Image::load_gray(&resolve(base, &row.path_770))?;
            let (b700, b770) = prepare_bands(&raw700, &raw770, equalize_770)?;
            let farm: Farm = row.farm.parse()?;
            samples.push(sample_from_bands(&b700, &b770, label_of(row.label, &row.berry_id)?, &row.berry_id, farm)?);
        }
    }
    let ds = LabeledDataset::new(samples)
        .map_err(|_| Error::Argument(format!("{} lists no samples", manifest.display())))?;
    ds.ensure_unique_ids()?;
    Ok(ds)
}

pub fn prepare(ctx: &Context) -> Result<Outcome> {
    let manifest = ctx.input(&ctx.config.paths.manifest, "synth/dataset/manifest.csv")?;
    let prep = &ctx.config.prepare;
    let dataset = load_raw_samples(&manifest, prep.equalize_770)?;
    let split = stratified_split(&dataset, prep.ratios, ctx.seed)?;
    let oversampled = random_oversample(&split.train, ctx.seed)?;

    let dir = ctx.dir("prepare")?;
    let mut outputs = Vec::new();
    let mut counts = String::from("split\tripe\tunripe\n");
    for (name, ds) in [
        ("train", &split.train),
        ("val", &split.val),
        ("test", &split.test),
        ("train_oversampled", &oversampled),
    ] {
        let rows = write_dataset(ds, &dir)?;
        let path = dir.join(format!("{name}.csv"));
        write_manifest(&rows, &path)?;
        outputs.push(path);
        let [r, u] = ds.class_counts();
        let _ = writeln!(counts, "{name}\t{r}\t{u}");
    }
    write(dir.join("counts.tsv"), &counts, &mut outputs)?;
    Ok(Outcome {
        outputs,
        summary: counts.trim_end().to_string(),
    })
}

fn history_summary(model: &TrainedModel) -> String {
    match model.history.last() {
        Some(h) => format!(
            "{} epochs (best {}), train acc {:.3}, val acc {:.3}",
            model.history.len(),
            model.best_epoch,
            h.train_accuracy,
            h.val_accuracy
        ),
        None => "no epochs recorded".into(),
    }
}

pub fn train(ctx: &Context) -> Result<Outcome> {
    let p = &ctx.config.paths;
    let train = load_dataset(&ctx.input(&p.train_manifest, "prepare/train_oversampled.csv")?)?;
    let val = load_dataset(&ctx.input(&p.val_manifest, "prepare/val.csv")?)?;
    let extractor = Arc::new(ctx.config.extractor.build()?);
    let model = train_model(&train, &val, &ctx.config.model_config(ctx.seed), extractor)?;
    let dir = ctx.dir("train")?;
    let outputs = model.save(&dir.join("model"))?;
    Ok(Outcome {
        outputs,
        summary: history_summary(&model),
    })
}

pub fn tune(ctx: &Context) -> Result<Outcome> {
    let data = load_dataset(&ctx.input(&ctx.config.paths.tune_manifest, "prepare/train.csv")?)?;
    let extractor = Arc::new(ctx.config.extractor.build()?);
    let table = feature_table(&data, &extractor)?;
    let result = coordinate_grid_search(
        &ctx.config.tuning,
        &ctx.config.model_config(ctx.seed),
        &table,
        extractor,
        ctx.seed,
    )?;
    let dir = ctx.dir("tune")?;
    let mut outputs = Vec::new();
    write(dir.join("tune.tsv"), result.to_tsv(), &mut outputs)?;
    write(dir.join("tune.json"), json(&result)?, &mut outputs)?;
    let mut section = ctx.config.model.clone();
    let c = &result.config;
    (section.fc, section.optimizer, section.learning_rate) = (c.fc, c.optimizer, c.learning_rate);
    (section.batch_size, section.epochs) = (c.batch_size, c.epochs);
    let text = toml::to_string(&section).map_err(|e| Error::Format(e.to_string()))?;
    write(dir.join("model.toml"), format!("[model]\n{text}"), &mut outputs)?;
    Ok(Outcome {
        outputs,
        summary: format!(
            "{} candidates, {} trainings; chosen {} / {} / batch {} / {} epochs",
            result.evaluations(),
            result.trainings(),
            c.fc_label(),
            c.optimizer,
            c.batch_size,
            c.epochs
        ),
    })
}

pub fn train_ensemble_cmd(ctx: &Context) -> Result<Outcome> {
    let p = &ctx.config.paths;
    let train = load_dataset(&ctx.input(&p.train_manifest, "prepare/train_oversampled.csv")?)?;
    let val = load_dataset(&ctx.input(&p.val_manifest, "prepare/val.csv")?)?;
    let extractor = Arc::new(ctx.config.extractor.build()?);
    let tr = feature_table(&train, &extractor)?;
    let va = feature_table(&val, &extractor)?;
    let model = train_ensemble(&tr, &va, &ctx.config.ensemble_config(ctx.seed), extractor)?;
    let outputs = model.save(&ctx.out.join("ensemble"))?;
    Ok(Outcome {
        outputs,
        summary: describe(&model).trim_end().to_string(),
    })
}

enum Predictor {
    Single(TrainedModel),
    Ensemble(EnsembleModel),
}

impl Predictor {
    fn load(ctx: &Context) -> Result<Self> {
        let p = &ctx.config.paths;
        if let Some(stem) = &p.model {
            return Ok(Predictor::Single(TrainedModel::load(stem, None)?));
        }
        let dir = p.ensemble.clone().unwrap_or_else(|| ctx.out.join("ensemble"));
        if !dir.join("meta.toml").exists() {
            return Err(Error::MissingFile(dir.join("meta.toml")));
        }
        Ok(Predictor::Ensemble(EnsembleModel::load(&dir)?))
    }

    fn predict(&self, data: &LabeledDataset) -> Result<Vec<f64>> {
        match self {
            Predictor::Single(m) => m.predict_dataset(data),
            Predictor::Ensemble(e) => e.predict_dataset(data),
        }
    }
}

fn metrics_for(confidences: &[f64], labels: &[Label]) -> Result<MetricsReport> {
    weighted_metrics(&confusion_from_confidences(confidences, labels)?)
}

pub fn evaluate(ctx: &Context) -> Result<Outcome> {
    let predictor = Predictor::load(ctx)?;
    let test = load_dataset(&ctx.input(&ctx.config.paths.test_manifest, "prepare/test.csv")?)?;
    let labels = test.labels();
    let conf = predictor.predict(&test)?;
    let report = metrics_for(&conf, &labels)?;
    let dir = ctx.dir("evaluate")?;
    let mut outputs = Vec::new();
    write(dir.join("metrics.json"), json(&report)?, &mut outputs)?;
    write(dir.join("metrics.tsv"), report.to_tsv(), &mut outputs)?;
    write(dir.join("confusion.tsv"), report.confusion.to_tsv(), &mut outputs)?;
    let mut preds = String::from("berry_id\ttarget\tconfidence_pct\tpredicted\n");
    for (s, c) in test.samples().iter().zip(&conf) {
        let _ = writeln!(
            preds,
            "{}\t{}\t{:.2}\t{}",
            s.berry_id,
            s.label.index(),
            c * 100.0,
            (*c >= 0.5) as u8
        );
    }
    write(dir.join("predictions.tsv"), preds, &mut outputs)?;
    match roc_auc(&conf, &labels) {
        Ok(roc) => write(dir.join("roc.tsv"), roc.to_tsv(), &mut outputs)?,
        Err(e) => eprintln!("warning: ROC skipped: {e}"),
    }
    match pr_curve(&conf, &labels) {
        Ok(pr) => write(dir.join("pr.tsv"), pr.to_tsv(), &mut outputs)?,
        Err(e) => eprintln!("warning: PR curve skipped: {e}"),
    }
    if let Predictor::Ensemble(e) = &predictor {
        let table = feature_table(&test, e.extractor())?;
        let mut base = String::from("learner\tprecision\trecall\tf1\taccuracy\n");
        for (i, m) in e.learners.iter().enumerate() {
            let r = metrics_for(&m.predict_table(&table)?, &labels)?;
            let _ = writeln!(
                base,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                i + 1,
                r.weighted_precision,
                r.weighted_recall,
                r.weighted_f1,
                r.accuracy
            );
        }
        write(dir.join("base_learners.tsv"), base, &mut outputs)?;
    }
    if let Some(path) = &ctx.config.paths.sensory {
        let records = load_sensory(path)?;
        write(dir.join("sensory_report.tsv"), format!("{}\n", sensory_report(&records)?), &mut outputs)?;
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(Outcome {
        outputs,
        summary: format!(
            "precision {:.3} recall {:.3} f1 {:.3} accuracy {:.3}",
            report.weighted_precision, report.weighted_recall, report.weighted_f1, report.accuracy
        ),
    })
}

#[derive(Debug, Serialize)]
struct RobustnessRow {
    state: &'static str,
    precision: f64,
    recall: f64,
    f1: f64,
    accuracy: f64,
}

/// Augmented copy of every sample; sample `i` draws with seed
/// `seed + spec.seed + i`.
fn augmented(data: &LabeledDataset, spec: &AugmentationSpec, seed: u64) -> Result<LabeledDataset> {
    let samples = data
        .samples()
        .iter()
        .enumerate()
        .map(|(i, s)| augment(s, spec, seed.wrapping_add(spec.seed).wrapping_add(i as u64)))
        .collect::<Result<Vec<BispectralSample>>>()?;
    LabeledDataset::new(samples)
}

pub fn robustness(ctx: &Context) -> Result<Outcome> {
    let predictor = Predictor::load(ctx)?;
    let test = load_dataset(&ctx.input(&ctx.config.paths.test_manifest, "prepare/test.csv")?)?;
    let labels = test.labels();
    let full = ctx.config.augmentation;
    full.validate()?;
    let geometric = AugmentationSpec {
        brightness: (1.0, 1.0),
        ..full
    };
    let mut rows = Vec::new();
    for (state, data) in [
        ("No augmentation", test.clone()),
        ("Rotation+Zoom", augmented(&test, &geometric, ctx.seed)?),
        ("Rotation+Zoom+Brightness", augmented(&test, &full, ctx.seed)?),
    ] {
        let r = metrics_for(&predictor.predict(&data)?, &labels)?;
        rows.push(RobustnessRow {
            state,
            precision: r.weighted_precision,
            recall: r.weighted_recall,
            f1: r.weighted_f1,
            accuracy: r.accuracy,
        });
    }
    let mut tsv = String::from("state\tprecision\trecall\tf1\taccuracy\n");
    for r in &rows {
        let _ = writeln!(
            tsv,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            r.state, r.precision, r.recall, r.f1, r.accuracy
        );
    }
    let dir = ctx.dir("robustness")?;
    let mut outputs = Vec::new();
    write(dir.join("robustness.tsv"), &tsv, &mut outputs)?;
    write(dir.join("robustness.json"), json(&rows)?, &mut outputs)?;
    Ok(Outcome {
        outputs,
        summary: tsv.trim_end().to_string(),
    })
}

pub fn correlate(ctx: &Context) -> Result<Outcome> {
    let p = &ctx.config.paths;
    let path = p
        .sensory
        .as_ref()
        .ok_or_else(|| Error::Config("paths.sensory must name the sensory table".into()))?;
    let mut records = load_sensory(path)?;
    let mut joined = 0;
    if ctx.config.correlate.source == ConfidenceSource::Ensemble {
        let manifest = p.sensory_manifest.as_ref().ok_or_else(|| {
            Error::Config("paths.sensory_manifest is required when correlate.source = \"ensemble\"".into())
        })?;
        let data = load_dataset(&ctx.input(&Some(manifest.clone()), "")?)?;
        let predictor = Predictor::load(ctx)?;
        let conf: HashMap<&str, f64> = data
            .samples()
            .iter()
            .map(|s| s.berry_id.as_str())
            .zip(predictor.predict(&data)?)
            .collect();
        let missing: Vec<&str> = records
            .iter()
            .filter(|r| !conf.contains_key(r.berry_id.as_str()))
            .map(|r| r.berry_id.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Argument(format!(
                "no images for sensory berries: {}",
                missing.join(", ")
            )));
        }
        for r in &mut records {
            r.machine_confidence_pct = Some(conf[r.berry_id.as_str()] * 100.0);
            joined += 1;
        }
    }
    let vars: Vec<&str> = ctx.config.correlate.variables.iter().map(String::as_str).collect();
    let matrix = pearson_matrix(&records, &vars)?;
    let dir = ctx.dir("correlate")?;
    let mut outputs = Vec::new();
    write(dir.join("correlation.tsv"), matrix.to_tsv(), &mut outputs)?;
    write(dir.join("correlation.json"), json(&matrix)?, &mut outputs)?;
    let mut summary = format!("{} records, {} variables", records.len(), vars.len());
    if joined > 0 {
        let _ = write!(summary, ", {joined} confidences from the ensemble");
    }
    if records.iter().all(|r| r.machine_confidence_pct.is_some()) {
        let report = sensory_report(&records)?;
        let _ = write!(summary, ", agreement {:.3}", report.agreement);
        write(dir.join("sensory_report.tsv"), format!("{report}\n"), &mut outputs)?;
    }
    if let Some(r) = matrix.get("texture", "confidence") {
        let _ = write!(summary, ", r(texture, confidence) = {r:.3}");
    }
    Ok(Outcome { outputs, summary })
}
