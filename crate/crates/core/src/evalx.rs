//! Binary evaluation (unripe is the positive class), ROC / PR sweeps,
//! Pearson correlation over sensory tables and the human-vs-machine
//! comparison.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::model::classify;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Tab-separated 2×2 table, rows are true labels.
    pub fn to_tsv(&self) -> String {
        format!(
            "true\\predicted\tripe\tunripe\nripe\t{}\t{}\nunripe\t{}\t{}\n",
            self.tn, self.fp, self.fn_, self.tp
        )
    }
}

pub fn confusion(predictions: &[Label], labels: &[Label]) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in predictions.iter().zip(labels) {
        match (t, p) {
            (Label::Unripe, Label::Unripe) => cm.tp += 1,
            (Label::Ripe, Label::Unripe) => cm.fp += 1,
            (Label::Ripe, Label::Ripe) => cm.tn += 1,
            (Label::Unripe, Label::Ripe) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// Thresholds confidences with the ≥ 0.5 rule, then counts.
pub fn confusion_from_confidences(confidences: &[f64], labels: &[Label]) -> Result<ConfusionMatrix> {
    let predictions = confidences
        .iter()
        .map(|&c| classify(c))
        .collect::<Result<Vec<_>>>()?;
    confusion(&predictions, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub ripe: ClassMetrics,
    pub unripe: ClassMetrics,
    pub confusion: ConfusionMatrix,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn class_metrics(
    correct: usize,
    predicted: usize,
    support: usize,
    name: &str,
    warnings: &mut Vec<String>,
) -> ClassMetrics {
    let precision = if predicted == 0 {
        warnings.push(format!("no samples predicted {name}; its precision is taken as 0"));
        0.0
    } else {
        correct as f64 / predicted as f64
    };
    let recall = if support == 0 { 0.0 } else { correct as f64 / support as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ClassMetrics {
        precision,
        recall,
        f1,
        support,
    }
}

/// Accuracy plus support-weighted precision, recall and F1.
pub fn weighted_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Argument("confusion matrix is empty".into()));
    }
    let mut warnings = Vec::new();
    let ripe = class_metrics(cm.tn, cm.tn + cm.fn_, cm.tn + cm.fp, "ripe", &mut warnings);
    let unripe = class_metrics(cm.tp, cm.tp + cm.fp, cm.tp + cm.fn_, "unripe", &mut warnings);
    let n = total as f64;
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        (ripe.support as f64 * f(&ripe) + unripe.support as f64 * f(&unripe)) / n
    };
    let accuracy = (cm.tp + cm.tn) as f64 / n;
    Ok(MetricsReport {
        accuracy,
        weighted_precision: weighted(|c| c.precision),
        // Σ (support_c / n) · (correct_c / support_c) reduces to the
        // accuracy; computing it that way keeps the identity exact.
        weighted_recall: accuracy,
        weighted_f1: weighted(|c| c.f1),
        ripe,
        unripe,
        confusion: *cm,
        warnings,
    })
}

impl MetricsReport {
    pub fn to_tsv(&self) -> String {
        format!(
            "precision\trecall\tf1\taccuracy\n{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
            self.weighted_precision, self.weighted_recall, self.weighted_f1, self.accuracy
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    Roc,
    Pr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoints {
    pub kind: CurveKind,
    /// ROC: (false positive rate, true positive rate); PR: (recall, precision).
    pub points: Vec<(f64, f64)>,
    pub auc: Option<f64>,
}

impl CurvePoints {
    pub fn to_tsv(&self) -> String {
        let (x, y) = match self.kind {
            CurveKind::Roc => ("fpr", "tpr"),
            CurveKind::Pr => ("recall", "precision"),
        };
        let mut out = format!("{x}\t{y}\n");
        for (a, b) in &self.points {
            let _ = writeln!(out, "{a:.6}\t{b:.6}");
        }
        out
    }
}

/// Cumulative (tp, fp) after each distinct threshold, highest first.
fn sweep(confidences: &[f64], labels: &[Label]) -> Result<Vec<(usize, usize)>> {
    if confidences.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} confidences for {} labels",
            confidences.len(),
            labels.len()
        )));
    }
    if confidences.iter().any(|c| !c.is_finite()) {
        return Err(Error::Argument("confidences must be finite".into()));
    }
    let mut order: Vec<usize> = (0..confidences.len()).collect();
    order.sort_by(|&a, &b| confidences[b].total_cmp(&confidences[a]));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (k, &i) in order.iter().enumerate() {
        match labels[i] {
            Label::Unripe => tp += 1,
            Label::Ripe => fp += 1,
        }
        let last_of_tie = order
            .get(k + 1)
            .is_none_or(|&j| confidences[j] != confidences[i]);
        if last_of_tie {
            out.push((tp, fp));
        }
    }
    Ok(out)
}

/// ROC points over every distinct confidence and the trapezoidal area.
/// Tied scores move as one threshold, so they earn half credit.
pub fn roc_auc(confidences: &[f64], labels: &[Label]) -> Result<CurvePoints> {
    let pos = labels.iter().filter(|&&l| l == Label::Unripe).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Argument("ROC needs both classes among the labels".into()));
    }
    let steps = sweep(confidences, labels)?;
    let mut points = vec![(0.0, 0.0)];
    let mut area2 = 0u128; // twice the area, in units of 1/(pos·neg)
    let (mut ptp, mut pfp) = (0usize, 0usize);
    for &(tp, fp) in &steps {
        area2 += ((fp - pfp) * (tp + ptp)) as u128;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        (ptp, pfp) = (tp, fp);
    }
    let auc = area2 as f64 / (2.0 * pos as f64 * neg as f64);
    Ok(CurvePoints {
        kind: CurveKind::Roc,
        points,
        auc: Some(auc),
    })
}

/// (recall, precision) after each threshold of the same sweep.
pub fn pr_curve(confidences: &[f64], labels: &[Label]) -> Result<CurvePoints> {
    let pos = labels.iter().filter(|&&l| l == Label::Unripe).count();
    if pos == 0 {
        return Err(Error::Argument("PR curve needs at least one unripe label".into()));
    }
    let points = sweep(confidences, labels)?
        .into_iter()
        .map(|(tp, fp)| (tp as f64 / pos as f64, tp as f64 / (tp + fp) as f64))
        .collect();
    Ok(CurvePoints {
        kind: CurveKind::Pr,
        points,
        auc: None,
    })
}

/// Sample Pearson r over paired values; `None` with fewer than 3 pairs or
/// a constant variable.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 3 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// One row of a human sensory table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensoryRecord {
    pub berry_id: String,
    pub mass_g: Option<f64>,
    pub shininess: Option<f64>,
    pub colour_uniformity: Option<f64>,
    pub firmness: Option<f64>,
    /// Skin broken after handling.
    pub skin_strength: Option<bool>,
    pub flavor: Option<f64>,
    pub sweetness: Option<f64>,
    pub texture: Option<f64>,
    pub human_ripeness: Option<f64>,
    pub target: Label,
    pub machine_confidence_pct: Option<f64>,
}

/// Numeric columns, in table order.
pub const SENSORY_VARIABLES: [&str; 11] = [
    "mass_g",
    "shininess",
    "colour_uniformity",
    "firmness",
    "skin_strength",
    "flavor",
    "sweetness",
    "texture",
    "human_ripeness",
    "target",
    "confidence",
];

impl SensoryRecord {
    pub fn value(&self, variable: &str) -> Result<Option<f64>> {
        Ok(match variable {
            "mass_g" => self.mass_g,
            "shininess" => self.shininess,
            "colour_uniformity" => self.colour_uniformity,
            "firmness" => self.firmness,
            "skin_strength" => self.skin_strength.map(|b| b as u8 as f64),
            "flavor" => self.flavor,
            "sweetness" => self.sweetness,
            "texture" => self.texture,
            "human_ripeness" => self.human_ripeness,
            "target" => Some(self.target.as_f64()),
            "confidence" => self.machine_confidence_pct,
            other => return Err(Error::Argument(format!("unknown sensory variable '{other}'"))),
        })
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let scales = [
            ("shininess", self.shininess),
            ("colour_uniformity", self.colour_uniformity),
            ("firmness", self.firmness),
            ("flavor", self.flavor),
            ("sweetness", self.sweetness),
            ("texture", self.texture),
        ];
        for (name, v) in scales {
            if let Some(v) = v {
                if !(1.0..=5.0).contains(&v) {
                    return Err(format!("{name} {v} outside the 1-5 scale"));
                }
            }
        }
        if let Some(h) = self.human_ripeness {
            if !(0.0..=4.0).contains(&h) {
                return Err(format!("human ripeness {h} outside 0-4"));
            }
        }
        if let Some(c) = self.machine_confidence_pct {
            if !(0.0..=100.0).contains(&c) {
                return Err(format!("confidence {c}% outside 0-100"));
            }
        }
        if let Some(m) = self.mass_g {
            if m < 0.0 {
                return Err(format!("negative mass {m}"));
            }
        }
        Ok(())
    }
}

fn normalize_header(h: &str) -> String {
    let mut out = String::new();
    for ch in h.trim().chars() {
        if ch.is_ascii_alphanumeric() {
            out.push(ch.to_ascii_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

/// Reads a sensory table (comma- or tab-separated; `-` or empty marks a
/// missing value). Headers are matched case-insensitively with punctuation
/// folded to `_`, so both `Mass (g)` and `mass_g` work.
pub fn read_sensory<R: Read>(reader: R) -> Result<Vec<SensoryRecord>> {
    let mut text = String::new();
    let mut reader = reader;
    reader
        .read_to_string(&mut text)
        .map_err(|e| Error::Format(format!("sensory table: {e}")))?;
    let first = text.lines().next().unwrap_or("");
    let delimiter = if first.contains('\t') { b'\t' } else { b',' };
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Format(format!("sensory table header: {e}")))?
        .iter()
        .map(normalize_header)
        .collect();
    let col: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
    let find = |names: &[&str]| names.iter().find_map(|n| col.get(n).copied());
    let id_col = find(&["berry_id", "id"])
        .ok_or_else(|| Error::Format("sensory table lacks a berry_id column".into()))?;
    let target_col = find(&["target"])
        .ok_or_else(|| Error::Format("sensory table lacks a target column".into()))?;
    let conf_col = find(&["confidence", "confidence_pct", "machine_confidence_pct"]);

    let mut out = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let line = line + 2;
        let row = row.map_err(|e| Error::Format(format!("sensory table line {line}: {e}")))?;
        let cell = |c: Option<usize>| -> Option<&str> {
            c.and_then(|c| row.get(c)).filter(|s| !s.is_empty() && *s != "-")
        };
        let num = |names: &[&str]| -> Result<Option<f64>> {
            cell(find(names))
                .map(|s| {
                    s.parse::<f64>().map_err(|_| {
                        Error::Format(format!("sensory table line {line}: '{s}' is not a number"))
                    })
                })
                .transpose()
        };
        let skin = match cell(find(&["skin_strength"])) {
            None => None,
            Some("Y" | "y") => Some(true),
            Some("N" | "n") => Some(false),
            Some(other) => {
                return Err(Error::Format(format!(
                    "sensory table line {line}: skin strength '{other}' is not Y/N"
                )))
            }
        };
        let target = cell(Some(target_col))
            .ok_or_else(|| Error::Format(format!("sensory table line {line}: missing target")))?;
        let target = target
            .parse::<u8>()
            .map_err(|_| Error::Format(format!("sensory table line {line}: bad target '{target}'")))
            .and_then(Label::from_index)?;
        let record = SensoryRecord {
            berry_id: cell(Some(id_col))
                .ok_or_else(|| Error::Format(format!("sensory table line {line}: missing berry id")))?
                .to_string(),
            mass_g: num(&["mass_g", "mass"])?,
            shininess: num(&["shininess"])?,
            colour_uniformity: num(&["colour_uniformity", "color_uniformity"])?,
            firmness: num(&["firmness"])?,
            skin_strength: skin,
            flavor: num(&["flavor", "flavour"])?,
            sweetness: num(&["sweetness"])?,
            texture: num(&["texture"])?,
            human_ripeness: num(&["human_ripeness"])?,
            target,
            machine_confidence_pct: match conf_col {
                Some(c) => cell(Some(c))
                    .map(|s| {
                        s.parse::<f64>().map_err(|_| {
                            Error::Format(format!("sensory table line {line}: bad confidence '{s}'"))
                        })
                    })
                    .transpose()?,
                None => None,
            },
        };
        record
            .validate()
            .map_err(|e| Error::Format(format!("sensory table line {line}: {e}")))?;
        out.push(record);
    }
    Ok(out)
}

pub fn load_sensory(path: &Path) -> Result<Vec<SensoryRecord>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_sensory(f).map_err(|e| e.context(path.display().to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub variables: Vec<String>,
    /// `None` marks an undefined coefficient.
    pub r: Vec<Vec<Option<f64>>>,
    /// Complete pairs behind each coefficient.
    pub counts: Vec<Vec<usize>>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.variables.iter().position(|v| v == a)?;
        let j = self.variables.iter().position(|v| v == b)?;
        self.r[i][j]
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("variable");
        for v in &self.variables {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
        for (v, row) in self.variables.iter().zip(&self.r) {
            out.push_str(v);
            for c in row {
                match c {
                    Some(r) => {
                        let _ = write!(out, "\t{r:.4}");
                    }
                    None => out.push_str("\tNA"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Pairwise-complete Pearson matrix over the named variables.
pub fn pearson_matrix(records: &[SensoryRecord], variables: &[&str]) -> Result<CorrelationMatrix> {
    if records.len() < 3 {
        return Err(Error::Argument(format!(
            "correlation needs at least 3 records, got {}",
            records.len()
        )));
    }
    if variables.is_empty() {
        return Err(Error::Argument("no variables requested".into()));
    }
    let columns = variables
        .iter()
        .map(|v| records.iter().map(|r| r.value(v)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let k = variables.len();
    let mut r = vec![vec![None; k]; k];
    let mut counts = vec![vec![0; k]; k];
    for i in 0..k {
        for j in i..k {
            let (x, y): (Vec<f64>, Vec<f64>) = columns[i]
                .iter()
                .zip(&columns[j])
                .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
                .unzip();
            let value = if i == j {
                pearson(&x, &y).map(|_| 1.0)
            } else {
                pearson(&x, &y)
            };
            r[i][j] = value;
            r[j][i] = value;
            counts[i][j] = x.len();
            counts[j][i] = x.len();
        }
    }
    Ok(CorrelationMatrix {
        variables: variables.iter().map(|s| s.to_string()).collect(),
        r,
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensoryRow {
    pub berry_id: String,
    pub human_ripeness: Option<f64>,
    pub texture: Option<f64>,
    pub target: Label,
    pub confidence_pct: f64,
    pub machine_label: Label,
    pub agrees: bool,
    /// Confidence within 10 points of 50 %.
    pub near_boundary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensoryReport {
    pub rows: Vec<SensoryRow>,
    pub agreement: f64,
}

impl fmt::Display for SensoryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "berry_id\thuman_ripeness\ttexture\ttarget\tconfidence_pct\tmachine\tagree\tflag")?;
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| v.to_string());
        for r in &self.rows {
            let flag = match (r.agrees, r.near_boundary) {
                (false, true) => "disagree,near-boundary",
                (false, false) => "disagree",
                (true, true) => "near-boundary",
                (true, false) => "",
            };
            writeln!(
                f,
                "{}\t{}\t{}\t{}\t{:.2}\t{}\t{}\t{}",
                r.berry_id,
                opt(r.human_ripeness),
                opt(r.texture),
                r.target.index(),
                r.confidence_pct,
                r.machine_label.index(),
                if r.agrees { "Y" } else { "N" },
                flag
            )?;
        }
        write!(f, "# agreement {:.4}", self.agreement)
    }
}

/// Machine label (from confidence / 100), agreement with the human target,
/// and a flag for confidences within 10 points of 50 %.
pub fn sensory_report(records: &[SensoryRecord]) -> Result<SensoryReport> {
    if records.is_empty() {
        return Err(Error::Argument("sensory report needs at least one record".into()));
    }
    let mut rows = Vec::with_capacity(records.len());
    for r in records {
        let c = r.machine_confidence_pct.ok_or_else(|| {
            Error::Argument(format!("berry {} has no machine confidence", r.berry_id))
        })?;
        let machine_label = classify(c / 100.0)?;
        rows.push(SensoryRow {
            berry_id: r.berry_id.clone(),
            human_ripeness: r.human_ripeness,
            texture: r.texture,
            target: r.target,
            confidence_pct: c,
            machine_label,
            agrees: machine_label == r.target,
            near_boundary: (c - 50.0).abs() <= 10.0,
        });
    }
    let agreement = rows.iter().filter(|r| r.agrees).count() as f64 / rows.len() as f64;
    Ok(SensoryReport { rows, agreement })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Ripe as R, Unripe as U};

    #[test]
    fn confusion_examples() {
        let labels = [vec![R; 8], vec![U; 2]].concat();
        let cm = confusion(&labels, &labels).unwrap();
        assert_eq!((cm.tp, cm.tn, cm.fp, cm.fn_), (2, 8, 0, 0));

        let cm = confusion(&[R, U], &[U, R]).unwrap();
        assert_eq!((cm.tp, cm.fn_, cm.fp, cm.tn), (0, 1, 1, 0));

        let mut pred = labels.clone();
        pred[0] = U;
        let cm = confusion(&pred, &labels).unwrap();
        assert_eq!((cm.tp, cm.fp, cm.fn_, cm.tn), (2, 1, 0, 7));
        assert!(confusion(&[R], &[R, U]).is_err());
    }

    #[test]
    fn weighted_metric_example() {
        let cm = ConfusionMatrix { tp: 2, fp: 1, tn: 7, fn_: 0 };
        let m = weighted_metrics(&cm).unwrap();
        assert!((m.accuracy - 0.9).abs() < 1e-12);
        assert!((m.weighted_precision - 14.0 / 15.0).abs() < 1e-12);
        assert_eq!(m.weighted_recall, m.accuracy);
        assert!((m.weighted_f1 - 0.906667).abs() < 1e-6);
        assert!(m.warnings.is_empty());

        let perfect = ConfusionMatrix { tp: 3, fp: 0, tn: 5, fn_: 0 };
        let m = weighted_metrics(&perfect).unwrap();
        assert_eq!([m.accuracy, m.weighted_precision, m.weighted_recall, m.weighted_f1], [1.0; 4]);
        assert!(weighted_metrics(&ConfusionMatrix::default()).is_err());
    }

    #[test]
    fn zero_predictions_warn() {
        let cm = ConfusionMatrix { tp: 0, fp: 0, tn: 8, fn_: 2 };
        let m = weighted_metrics(&cm).unwrap();
        assert_eq!(m.unripe.precision, 0.0);
        assert_eq!(m.warnings.len(), 1);
    }

    #[test]
    fn auc_examples() {
        let labels = [R, R, U, U];
        let a = roc_auc(&[0.1, 0.4, 0.35, 0.8], &labels).unwrap();
        assert!((a.auc.unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(a.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(a.points.last(), Some(&(1.0, 1.0)));
        assert_eq!(roc_auc(&[0.0, 0.0, 1.0, 1.0], &labels).unwrap().auc, Some(1.0));
        assert_eq!(roc_auc(&[1.0, 1.0, 0.0, 0.0], &labels).unwrap().auc, Some(0.0));
        assert_eq!(roc_auc(&[0.5; 4], &labels).unwrap().auc, Some(0.5));
        assert!(roc_auc(&[0.5, 0.2], &[R, R]).is_err());
    }

    #[test]
    fn pr_examples() {
        let labels = [R, R, R, U];
        let pr = pr_curve(&[0.0, 0.1, 0.2, 0.9], &labels).unwrap();
        assert!(pr.points.contains(&(1.0, 1.0)));
        let flat = pr_curve(&[0.3; 4], &labels).unwrap();
        assert_eq!(flat.points, vec![(1.0, 0.25)]);
        assert!(pr.points.windows(2).all(|w| w[0].0 <= w[1].0));
        assert!(pr_curve(&[0.3; 2], &[R, R]).is_err());
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0];
        assert!((pearson(&x, &[2.0, 4.0, 7.0]).unwrap() - 0.993399).abs() < 1e-6);
        assert!((pearson(&x, &[2.0, 4.0, 8.0]).unwrap() - 0.98198).abs() < 1e-5);
        assert_eq!(pearson(&x, &x), Some(1.0));
        assert_eq!(pearson(&x, &[-1.0, -2.0, -3.0]), Some(-1.0));
        assert_eq!(pearson(&x, &[4.0; 3]), None);
        assert_eq!(pearson(&x[..2], &x[..2]), None);
    }

    #[test]
    fn header_normalization() {
        assert_eq!(normalize_header("Mass (g)"), "mass_g");
        assert_eq!(normalize_header("Confidence (%)"), "confidence");
        assert_eq!(normalize_header(" Colour Uniformity "), "colour_uniformity");
    }

    #[test]
    fn sensory_boundaries() {
        let rec = |id: &str, target, c| SensoryRecord {
            berry_id: id.into(),
            mass_g: None,
            shininess: None,
            colour_uniformity: None,
            firmness: None,
            skin_strength: None,
            flavor: None,
            sweetness: None,
            texture: None,
            human_ripeness: None,
            target,
            machine_confidence_pct: Some(c),
        };
        let r = sensory_report(&[rec("a", U, 2.49), rec("b", U, 99.99), rec("c", R, 50.0)]).unwrap();
        assert_eq!(r.rows[0].machine_label, R);
        assert!(!r.rows[0].agrees);
        assert!(r.rows[1].agrees);
        assert_eq!(r.rows[2].machine_label, U);
        assert!(r.rows[2].near_boundary);
    }
}
