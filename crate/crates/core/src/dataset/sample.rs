use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::image::Image;
use crate::error::{Error, Result};

pub const SAMPLE_SIZE: usize = 32;

/// Binary ripeness label. Unripe is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Ripe = 0,
    Unripe = 1,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Ripe, Label::Unripe];

    pub fn from_index(v: u8) -> Result<Label> {
        match v {
            0 => Ok(Label::Ripe),
            1 => Ok(Label::Unripe),
            other => Err(Error::Argument(format!("label {other} is not binary"))),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Farm {
    A,
    B,
    Synthetic,
}

impl fmt::Display for Farm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Farm::A => "A",
            Farm::B => "B",
            Farm::Synthetic => "synthetic",
        })
    }
}

impl FromStr for Farm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Farm> {
        match s {
            "A" | "a" => Ok(Farm::A),
            "B" | "b" => Ok(Farm::B),
            "synthetic" => Ok(Farm::Synthetic),
            other => Err(Error::Format(format!("unknown farm '{other}'"))),
        }
    }
}

/// Labeled pair of pseudo-coloured 32×32×3 images (700 nm, 770 nm).
#[derive(Debug, Clone, PartialEq)]
pub struct BispectralSample {
    band700: Image,
    band770: Image,
    pub label: Label,
    pub berry_id: String,
    pub farm: Farm,
}

impl BispectralSample {
    pub fn new(
        band700: Image,
        band770: Image,
        label: Label,
        berry_id: impl Into<String>,
        farm: Farm,
    ) -> Result<Self> {
        for (name, img) in [("700 nm", &band700), ("770 nm", &band770)] {
            if img.width() != SAMPLE_SIZE || img.height() != SAMPLE_SIZE || img.channels() != 3 {
                return Err(Error::Dimension(format!(
                    "{name} band must be 32x32x3, got {}x{}x{}",
                    img.width(),
                    img.height(),
                    img.channels()
                )));
            }
        }
        Ok(BispectralSample {
            band700,
            band770,
            label,
            berry_id: berry_id.into(),
            farm,
        })
    }

    pub fn band700(&self) -> &Image {
        &self.band700
    }

    pub fn band770(&self) -> &Image {
        &self.band770
    }
}

/// Non-empty list of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    samples: Vec<BispectralSample>,
}

impl LabeledDataset {
    pub fn new(samples: Vec<BispectralSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Argument("dataset must not be empty".into()));
        }
        Ok(LabeledDataset { samples })
    }

    pub fn samples(&self) -> &[BispectralSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<BispectralSample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `[ripe, unripe]` counts.
    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0; 2];
        for s in &self.samples {
            counts[s.label.index()] += 1;
        }
        counts
    }

    pub fn labels(&self) -> Vec<Label> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn select(&self, indices: &[usize]) -> Result<LabeledDataset> {
        LabeledDataset::new(indices.iter().map(|&i| self.samples[i].clone()).collect())
    }

    /// Checks that no berry id repeats.
    pub fn ensure_unique_ids(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for s in &self.samples {
            if !seen.insert(s.berry_id.as_str()) {
                return Err(Error::Argument(format!("duplicate berry id '{}'", s.berry_id)));
            }
        }
        Ok(())
    }
}
