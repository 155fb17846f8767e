//! Plain-text dataset tables.
//!
//! A sample manifest is a CSV file with header
//! `berry_id,farm,label,path_700,path_770`; image paths are resolved
//! relative to the manifest's directory. A stereo manifest uses
//! `berry_id,farm,label,stereo_path` and points at side-by-side frames.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image::Image;
use super::ops::{crop_resize, hist_equalize, pseudo_colour, split_stereo, BBox, StereoFrame};
use super::sample::{BispectralSample, Farm, Label, LabeledDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub berry_id: String,
    pub farm: String,
    pub label: u8,
    pub path_700: String,
    pub path_770: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StereoRow {
    pub berry_id: String,
    pub farm: String,
    pub label: u8,
    pub stereo_path: String,
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, row) in reader.deserialize().enumerate() {
        rows.push(row.map_err(|e| {
            Error::Format(format!("{} row {}: {e}", path.display(), i + 1))
        })?);
    }
    Ok(rows)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    read_rows(path)
}

pub fn read_stereo_manifest(path: &Path) -> Result<Vec<StereoRow>> {
    read_rows(path)
}

pub fn write_manifest(rows: &[ManifestRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Whether a manifest file holds stereo frames rather than band pairs.
pub fn is_stereo_manifest(path: &Path) -> Result<bool> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(headers.iter().any(|h| h == "stereo_path"))
}

pub fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Builds a sample from two single-band 32×32 images.
pub fn sample_from_bands(
    band700: &Image,
    band770: &Image,
    label: Label,
    berry_id: &str,
    farm: Farm,
) -> Result<BispectralSample> {
    BispectralSample::new(
        pseudo_colour(band700)?,
        pseudo_colour(band770)?,
        label,
        berry_id,
        farm,
    )
}

/// Resizes raw band images to 32×32 and equalizes the 770 nm band.
pub fn prepare_bands(raw700: &Image, raw770: &Image, equalize_770: bool) -> Result<(Image, Image)> {
    let b700 = crop_resize(raw700, BBox::full(raw700))?;
    let mut b770 = crop_resize(raw770, BBox::full(raw770))?;
    if equalize_770 {
        b770 = hist_equalize(&b770);
    }
    Ok((b700, b770))
}

/// Splits and prepares one stereo frame.
pub fn prepare_stereo(frame: &StereoFrame, equalize_770: bool) -> Result<(Image, Image)> {
    let (left, right) = split_stereo(frame)?;
    prepare_bands(&left, &right, equalize_770)
}

/// Loads every sample of a band-pair manifest.
pub fn load_dataset(manifest: &Path) -> Result<LabeledDataset> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let rows = read_manifest(manifest)?;
    let mut samples = Vec::with_capacity(rows.len());
    for row in rows {
        let label = Label::from_index(row.label)
            .map_err(|e| Error::Format(format!("{}: {e}", row.berry_id)))?;
        let farm: Farm = row.farm.parse()?;
        let b700 = Image::load_gray(&resolve(base, &row.path_700))?;
        let b770 = Image::load_gray(&resolve(base, &row.path_770))?;
        let sample = sample_from_bands(&b700, &b770, label, &row.berry_id, farm)
            .map_err(|e| Error::Format(format!("{}: {e}", row.berry_id)))?;
        samples.push(sample);
    }
    LabeledDataset::new(samples).map_err(|_| {
        Error::Format(format!("{} lists no samples", manifest.display()))
    })
}

/// Writes the 700/770 bands of every sample as 8-bit PNGs under
/// `dir/images` and returns manifest rows with paths relative to `dir`.
pub fn write_dataset(dataset: &LabeledDataset, dir: &Path) -> Result<Vec<ManifestRow>> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut rows = Vec::with_capacity(dataset.len());
    for s in dataset.samples() {
        let p700 = format!("images/{}_700.png", s.berry_id);
        let p770 = format!("images/{}_770.png", s.berry_id);
        s.band700().channel(0).save_gray(&dir.join(&p700))?;
        s.band770().channel(0).save_gray(&dir.join(&p770))?;
        rows.push(ManifestRow {
            berry_id: s.berry_id.clone(),
            farm: s.farm.to_string(),
            label: s.label as u8,
            path_700: p700,
            path_770: p770,
        });
    }
    Ok(rows)
}
