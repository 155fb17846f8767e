//! Seeded synthetic data: a hyperspectral cube with planted class
//! differences, and bispectral samples whose class signal is the 700/770
//! intensity ratio under a shared drupelet texture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{BispectralSample, Farm, Image, Label, LabeledDataset, SAMPLE_SIZE};
use crate::dataset::pseudo_colour;
use crate::error::{Error, Result};
use crate::spectral::{HyperspectralCube, SegmentationMask};

/// Raw cube with its white and dark references and one mask per ripeness
/// class.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub raw: HyperspectralCube,
    pub white: HyperspectralCube,
    pub dark: HyperspectralCube,
    pub masks: Vec<(u8, SegmentationMask)>,
}

fn gaussian(x: f64, centre: f64, sigma: f64) -> f64 {
    (-(x - centre).powi(2) / (2.0 * sigma * sigma)).exp()
}

/// Reflectance of ripeness class `class` at wavelength `nm`.
///
/// All classes share a red-edge ramp pinned at both ends of the range, so
/// per-spectrum min-max normalization is the same affine map for every
/// class. Classes are spread apart around 700 nm, and the ripe class
/// carries an extra peak at 770 nm.
pub fn planted_reflectance(class: u8, nm: f64) -> f64 {
    let ramp = 0.05 + 0.85 * (nm - 600.0) / 375.0;
    let visible = 0.1 * class as f64 * gaussian(nm, 700.0, 15.0);
    let ripe_peak = if class == 3 { 0.15 * gaussian(nm, 770.0, 10.0) } else { 0.0 };
    ramp + visible + ripe_peak
}

/// 5 ripeness classes laid out as horizontal stripes of a 12×10 cube
/// sampled every 10 nm from 600 to 970 nm.
pub fn planted_scene(seed: u64) -> Result<SyntheticScene> {
    let wavelengths: Vec<f64> = (0..38).map(|i| 600.0 + 10.0 * i as f64).collect();
    let (width, height) = (12, 10);
    let rows_per_class = height / 5;
    let (white_level, dark_level) = (0.9, 0.05);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..width * height * wavelengths.len())
        .map(|_| rng.random_range(-0.002..0.002))
        .collect();
    let wl = wavelengths.clone();
    let raw = HyperspectralCube::from_fn(width, height, wavelengths.clone(), |x, y, b| {
        let class = (y / rows_per_class) as u8;
        let r = planted_reflectance(class, wl[b]) + noise[(b * height + y) * width + x];
        dark_level + r * (white_level - dark_level)
    })?;
    let white = HyperspectralCube::from_fn(width, height, wavelengths.clone(), |_, _, _| white_level)?;
    let dark = HyperspectralCube::from_fn(width, height, wavelengths, |_, _, _| dark_level)?;
    let masks = (0..5u8)
        .map(|c| {
            let mask = SegmentationMask::from_fn(width, height, |_, y| y / rows_per_class == c as usize);
            (c, mask)
        })
        .collect();
    Ok(SyntheticScene {
        raw,
        white,
        dark,
        masks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub samples: usize,
    pub unripe_fraction: f64,
    /// Standard deviation of additive per-pixel noise.
    pub noise: f64,
    /// Per-sample illumination factor range.
    pub illumination: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            samples: 400,
            unripe_fraction: 0.2,
            noise: 0.03,
            illumination: (0.3, 1.0),
        }
    }
}

/// 700/770 reflectance ratio ranges per class.
const RIPE_RATIO: (f64, f64) = (0.25, 0.45);
const UNRIPE_RATIO: (f64, f64) = (0.65, 0.9);

fn drupelet_texture(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = SAMPLE_SIZE;
    let spacing = rng.random_range(5.0..7.0);
    let phase: (f64, f64) = (rng.random_range(0.0..spacing), rng.random_range(0.0..spacing));
    let depth = rng.random_range(0.15..0.3);
    let mut t = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let u = ((x as f64 + phase.0) / spacing * std::f64::consts::TAU).cos();
            let v = ((y as f64 + phase.1) / spacing * std::f64::consts::TAU).cos();
            t.push(1.0 + depth * 0.5 * (u + v));
        }
    }
    t
}

fn gaussian_noise(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    // Box-Muller
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    sigma * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// One sample; deterministic in `(seed, index)`.
pub fn synth_sample(label: Label, index: usize, seed: u64, cfg: &SynthConfig) -> Result<BispectralSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let (lo, hi) = match label {
        Label::Ripe => RIPE_RATIO,
        Label::Unripe => UNRIPE_RATIO,
    };
    let ratio = rng.random_range(lo..hi);
    let illum = rng.random_range(cfg.illumination.0..=cfg.illumination.1);
    let level770 = illum * rng.random_range(0.55..0.8);
    let texture = drupelet_texture(&mut rng);
    let mut b700 = Vec::with_capacity(texture.len());
    let mut b770 = Vec::with_capacity(texture.len());
    for &t in &texture {
        let v770 = level770 * t + gaussian_noise(&mut rng, cfg.noise);
        let v700 = level770 * ratio * t + gaussian_noise(&mut rng, cfg.noise);
        b700.push(v700.clamp(0.0, 1.0));
        b770.push(v770.clamp(0.0, 1.0));
    }
    let id = format!("S{index:04}");
    BispectralSample::new(
        pseudo_colour(&Image::new(SAMPLE_SIZE, SAMPLE_SIZE, 1, b700)?)?,
        pseudo_colour(&Image::new(SAMPLE_SIZE, SAMPLE_SIZE, 1, b770)?)?,
        label,
        id,
        Farm::Synthetic,
    )
}

/// `cfg.samples` samples, `round(samples · unripe_fraction)` of them unripe,
/// interleaved deterministically.
pub fn synth_dataset(cfg: &SynthConfig, seed: u64) -> Result<LabeledDataset> {
    if cfg.samples == 0 || !(0.0..=1.0).contains(&cfg.unripe_fraction) {
        return Err(Error::Argument(format!(
            "synthetic set needs samples > 0 and unripe fraction in [0, 1], got {} / {}",
            cfg.samples, cfg.unripe_fraction
        )));
    }
    let (lo, hi) = cfg.illumination;
    if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
        return Err(Error::Argument(format!("illumination range ({lo}, {hi}) must lie in (0, 1]")));
    }
    let unripe = (cfg.samples as f64 * cfg.unripe_fraction).round() as usize;
    // Spread unripe indices evenly through the sequence.
    let labels: Vec<Label> = (0..cfg.samples)
        .map(|i| {
            let before = i * unripe / cfg.samples;
            let after = (i + 1) * unripe / cfg.samples;
            if after > before { Label::Unripe } else { Label::Ripe }
        })
        .collect();
    let samples = labels
        .par_iter()
        .enumerate()
        .map(|(i, &l)| synth_sample(l, i, seed, cfg))
        .collect::<Result<Vec<_>>>()?;
    LabeledDataset::new(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_counts_follow_fraction() {
        let cfg = SynthConfig { samples: 50, ..SynthConfig::default() };
        let d = synth_dataset(&cfg, 1).unwrap();
        assert_eq!(d.class_counts(), [40, 10]);
        d.ensure_unique_ids().unwrap();
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig { samples: 6, ..SynthConfig::default() };
        assert_eq!(synth_dataset(&cfg, 9).unwrap(), synth_dataset(&cfg, 9).unwrap());
        assert_ne!(synth_dataset(&cfg, 9).unwrap(), synth_dataset(&cfg, 10).unwrap());
    }

    #[test]
    fn ratio_signal_is_planted() {
        let cfg = SynthConfig { noise: 0.0, ..SynthConfig::default() };
        for (label, (lo, hi)) in [(Label::Ripe, RIPE_RATIO), (Label::Unripe, UNRIPE_RATIO)] {
            let s = synth_sample(label, 3, 5, &cfg).unwrap();
            let r = s.band700().mean() / s.band770().mean();
            assert!(r > lo - 1e-9 && r < hi + 1e-9, "{label:?}: {r}");
        }
    }

    #[test]
    fn scene_masks_cover_each_class() {
        let scene = planted_scene(0).unwrap();
        assert_eq!(scene.masks.len(), 5);
        assert!(scene.masks.iter().all(|(_, m)| m.count() == 24));
    }
}
