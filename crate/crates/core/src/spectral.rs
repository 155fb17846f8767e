//! Hyperspectral cubes, white/dark calibration, class-mean spectra and
//! selection of the visible and near-infrared acquisition wavelengths.
//!
//! Cubes are stored as a plain-text header plus a band-sequential
//! little-endian `float32` data file. Header keys:
//!
//! ```text
//! width = 2
//! height = 2
//! bands = 3
//! wavelengths = 600, 700, 800
//! byte_order = little
//! dtype = float32
//! instrument_range = 600, 975   # optional override
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Instrument range of the line-scanning camera, in nm.
pub const INSTRUMENT_RANGE: (f64, f64) = (600.0, 975.0);
pub const VISIBLE_RANGE: (f64, f64) = (600.0, 750.0);
pub const NIR_RANGE: (f64, f64) = (750.0, 975.0);

#[derive(Debug, Clone, PartialEq)]
pub struct HyperspectralCube {
    width: usize,
    height: usize,
    wavelengths: Vec<f64>,
    /// Band-sequential: `band * width * height + y * width + x`.
    values: Vec<f64>,
}

fn check_wavelengths(wavelengths: &[f64], range: (f64, f64)) -> Result<()> {
    if wavelengths.is_empty() {
        return Err(Error::Format("cube has no bands".into()));
    }
    if let Some(w) = wavelengths.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::Format(format!(
            "wavelengths must be strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    let (lo, hi) = range;
    if let Some(w) = wavelengths.iter().find(|&&w| w < lo || w > hi) {
        return Err(Error::Format(format!(
            "wavelength {w} nm outside instrument range [{lo}, {hi}]"
        )));
    }
    Ok(())
}

impl HyperspectralCube {
    pub fn new(width: usize, height: usize, wavelengths: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::with_range(width, height, wavelengths, values, INSTRUMENT_RANGE)
    }

    pub fn with_range(
        width: usize,
        height: usize,
        wavelengths: Vec<f64>,
        values: Vec<f64>,
        range: (f64, f64),
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Format(format!("cube extent {width}x{height} must be positive")));
        }
        check_wavelengths(&wavelengths, range)?;
        let expected = width * height * wavelengths.len();
        if values.len() != expected {
            return Err(Error::Format(format!(
                "cube {width}x{height}x{} needs {expected} values, got {}",
                wavelengths.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("cube contains non-finite reflectance".into()));
        }
        Ok(HyperspectralCube {
            width,
            height,
            wavelengths,
            values,
        })
    }

    /// Builds a cube from a per-pixel function of `(x, y, band)`.
    pub fn from_fn(
        width: usize,
        height: usize,
        wavelengths: Vec<f64>,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let bands = wavelengths.len();
        let mut values = Vec::with_capacity(width * height * bands);
        for b in 0..bands {
            for y in 0..height {
                for x in 0..width {
                    values.push(f(x, y, b));
                }
            }
        }
        Self::new(width, height, wavelengths, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bands(&self) -> usize {
        self.wavelengths.len()
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize, band: usize) -> f64 {
        self.values[band * self.width * self.height + y * self.width + x]
    }

    fn same_geometry(&self, other: &HyperspectralCube) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.wavelengths == other.wavelengths
    }

    pub fn scaled(&self, factor: f64) -> HyperspectralCube {
        HyperspectralCube {
            values: self.values.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    pub fn header_text(&self) -> String {
        let wl: Vec<String> = self.wavelengths.iter().map(|w| w.to_string()).collect();
        format!(
            "width = {}\nheight = {}\nbands = {}\nwavelengths = {}\nbyte_order = little\ndtype = float32\n",
            self.width,
            self.height,
            self.bands(),
            wl.join(", ")
        )
    }

    pub fn save(&self, header_path: &Path, data_path: &Path) -> Result<()> {
        std::fs::write(header_path, self.header_text()).map_err(|e| Error::io(header_path, e))?;
        let mut buf = vec![0u8; self.values.len() * 4];
        for (chunk, &v) in buf.chunks_exact_mut(4).zip(&self.values) {
            LittleEndian::write_f32(chunk, v as f32);
        }
        std::fs::write(data_path, buf).map_err(|e| Error::io(data_path, e))
    }
}

fn parse_header(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("header line {}: expected key = value", n + 1)))?;
        map.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
    }
    Ok(map)
}

fn parse_list(v: &str, key: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("{key}: '{}' {e}", s.trim())))
        })
        .collect()
}

/// Reads a cube header and its band-sequential `float32` data.
pub fn load_cube(header_path: &Path, data_path: &Path) -> Result<HyperspectralCube> {
    for p in [header_path, data_path] {
        if !p.exists() {
            return Err(Error::MissingFile(p.to_path_buf()));
        }
    }
    let text = std::fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    let header = parse_header(&text)?;
    let get = |k: &str| {
        header
            .get(k)
            .ok_or_else(|| Error::Format(format!("header missing '{k}'")))
    };
    let int = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|e| Error::Format(format!("{k}: {e}")))
    };
    let width = int("width")?;
    let height = int("height")?;
    let bands = int("bands")?;
    let wavelengths = parse_list(get("wavelengths")?, "wavelengths")?;
    if wavelengths.len() != bands {
        return Err(Error::Format(format!(
            "header declares {bands} bands but lists {} wavelengths",
            wavelengths.len()
        )));
    }
    if let Some(order) = header.get("byte_order") {
        if order != "little" {
            return Err(Error::Format(format!("unsupported byte order '{order}'")));
        }
    }
    if let Some(dtype) = header.get("dtype") {
        if dtype != "float32" {
            return Err(Error::Format(format!("unsupported dtype '{dtype}'")));
        }
    }
    let range = match header.get("instrument_range") {
        Some(v) => match parse_list(v, "instrument_range")?.as_slice() {
            [lo, hi] if lo < hi => (*lo, *hi),
            _ => return Err(Error::Format("instrument_range needs 'lo, hi'".into())),
        },
        None => INSTRUMENT_RANGE,
    };
    let bytes = std::fs::read(data_path).map_err(|e| Error::io(data_path, e))?;
    let expected = width * height * bands * 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: expected {expected} bytes, found {}",
            data_path.display(),
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| LittleEndian::read_f32(c) as f64)
        .collect();
    HyperspectralCube::with_range(width, height, wavelengths, values, range)
}

/// Per-element `(raw − dark) / (white − dark)`; 0 where white equals dark.
pub fn calibrate(
    raw: &HyperspectralCube,
    white: &HyperspectralCube,
    dark: &HyperspectralCube,
) -> Result<HyperspectralCube> {
    if !raw.same_geometry(white) || !raw.same_geometry(dark) {
        return Err(Error::Argument(
            "raw, white and dark cubes must share dimensions and wavelengths".into(),
        ));
    }
    let values = raw
        .values
        .iter()
        .zip(white.values.iter().zip(&dark.values))
        .map(|(&r, (&w, &d))| if w == d { 0.0 } else { (r - d) / (w - d) })
        .collect();
    Ok(HyperspectralCube {
        values,
        ..raw.clone()
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMask {
    width: usize,
    height: usize,
    members: Vec<bool>,
}

impl SegmentationMask {
    pub fn new(width: usize, height: usize, members: Vec<bool>) -> Result<Self> {
        if members.len() != width * height {
            return Err(Error::Dimension(format!(
                "{width}x{height} mask needs {} entries, got {}",
                width * height,
                members.len()
            )));
        }
        Ok(SegmentationMask {
            width,
            height,
            members,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let members = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        SegmentationMask {
            width,
            height,
            members,
        }
    }

    /// Loads an 8-bit raster; nonzero pixels are members.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let img = image::open(path)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
            .into_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        Self::new(w, h, img.as_raw().iter().map(|&p| p != 0).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let px = self.members.iter().map(|&m| if m { 255 } else { 0 }).collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, px)
            .expect("sized buffer")
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn count(&self) -> usize {
        self.members.iter().filter(|&&m| m).count()
    }
}

/// Ripeness class 0..=4: raw, unripe, near ripe, ripe, overripe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpectrum {
    pub ripeness_class: u8,
    pub wavelengths: Vec<f64>,
    pub values: Vec<f64>,
    pub normalized: bool,
}

pub const NEAR_RIPE: u8 = 2;
pub const RIPE: u8 = 3;

/// Mean reflectance over the masked pixels, per band.
pub fn mean_spectrum(
    cube: &HyperspectralCube,
    mask: &SegmentationMask,
    ripeness_class: u8,
) -> Result<ClassSpectrum> {
    if ripeness_class > 4 {
        return Err(Error::Argument(format!("ripeness class {ripeness_class} outside 0..=4")));
    }
    if mask.width != cube.width || mask.height != cube.height {
        return Err(Error::Dimension(format!(
            "mask {}x{} does not match cube {}x{}",
            mask.width, mask.height, cube.width, cube.height
        )));
    }
    let count = mask.count();
    if count == 0 {
        return Err(Error::Argument("mask selects no pixels".into()));
    }
    let plane = cube.width * cube.height;
    let values = (0..cube.bands())
        .map(|b| {
            let band = &cube.values[b * plane..(b + 1) * plane];
            band.iter()
                .zip(&mask.members)
                .filter(|(_, &m)| m)
                .map(|(v, _)| v)
                .sum::<f64>()
                / count as f64
        })
        .collect();
    Ok(ClassSpectrum {
        ripeness_class,
        wavelengths: cube.wavelengths.clone(),
        values,
        normalized: false,
    })
}

/// Min-max scaling of one spectrum onto `[0, 1]`.
pub fn normalize_spectrum(spectrum: &ClassSpectrum) -> Result<ClassSpectrum> {
    let lo = spectrum.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = spectrum.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::Degenerate(format!(
            "class {} spectrum is constant",
            spectrum.ripeness_class
        )));
    }
    Ok(ClassSpectrum {
        values: spectrum.values.iter().map(|v| (v - lo) / (hi - lo)).collect(),
        normalized: true,
        ..spectrum.clone()
    })
}

fn find_class(spectra: &[ClassSpectrum], class: u8) -> Result<&ClassSpectrum> {
    spectra
        .iter()
        .find(|s| s.ripeness_class == class)
        .ok_or_else(|| Error::Argument(format!("no spectrum for ripeness class {class}")))
}

/// `|R_a(λ) − R_b(λ)|` per wavelength.
pub fn class_separation(spectra: &[ClassSpectrum], class_a: u8, class_b: u8) -> Result<Vec<f64>> {
    let a = find_class(spectra, class_a)?;
    let b = find_class(spectra, class_b)?;
    if a.wavelengths != b.wavelengths {
        return Err(Error::Argument(format!(
            "classes {class_a} and {class_b} use different wavelength grids"
        )));
    }
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y).abs())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WavelengthPair {
    pub visible_nm: f64,
    pub nir_nm: f64,
}

/// Candidate band indices inside `[lo, hi)`, or `[lo, hi]` when `closed`.
fn bands_in(wavelengths: &[f64], (lo, hi): (f64, f64), closed: bool) -> Vec<usize> {
    wavelengths
        .iter()
        .enumerate()
        .filter(|(_, &w)| w >= lo && (w < hi || (closed && w == hi)))
        .map(|(i, _)| i)
        .collect()
}

/// First index of the maximum score; ties go to the lower wavelength.
fn argmax(candidates: &[usize], score: impl Fn(usize) -> f64) -> usize {
    let mut best = candidates[0];
    let mut best_score = score(best);
    for &i in &candidates[1..] {
        let s = score(i);
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    best
}

/// NIR: the wavelength maximizing near-ripe vs ripe separation. Visible: the
/// wavelength maximizing the smallest pairwise separation over all classes
/// present. The visible range is half-open, the NIR range closed.
pub fn select_wavelengths(
    spectra: &[ClassSpectrum],
    visible_range: (f64, f64),
    nir_range: (f64, f64),
) -> Result<WavelengthPair> {
    if spectra.len() < 2 {
        return Err(Error::Argument("need spectra for at least two classes".into()));
    }
    if visible_range.0 >= visible_range.1 || nir_range.0 > nir_range.1 {
        return Err(Error::Argument("wavelength ranges must be increasing".into()));
    }
    if visible_range.1 > nir_range.0 {
        return Err(Error::Argument(format!(
            "visible range {visible_range:?} overlaps NIR range {nir_range:?}"
        )));
    }
    let wavelengths = &spectra[0].wavelengths;
    if spectra.iter().any(|s| &s.wavelengths != wavelengths) {
        return Err(Error::Argument("spectra must share one wavelength grid".into()));
    }
    let vis = bands_in(wavelengths, visible_range, false);
    let nir = bands_in(wavelengths, nir_range, true);
    if vis.is_empty() {
        return Err(Error::Argument(format!(
            "no cube wavelength inside visible range {visible_range:?}"
        )));
    }
    if nir.is_empty() {
        return Err(Error::Argument(format!(
            "no cube wavelength inside NIR range {nir_range:?}"
        )));
    }

    let nir_score = class_separation(spectra, NEAR_RIPE, RIPE)?;
    let nir_best = argmax(&nir, |i| nir_score[i]);

    let mut pair_scores = Vec::new();
    for (i, a) in spectra.iter().enumerate() {
        for b in &spectra[i + 1..] {
            pair_scores.push(class_separation(spectra, a.ripeness_class, b.ripeness_class)?);
        }
    }
    let vis_best = argmax(&vis, |band| {
        pair_scores
            .iter()
            .map(|s| s[band])
            .fold(f64::INFINITY, f64::min)
    });

    Ok(WavelengthPair {
        visible_nm: wavelengths[vis_best],
        nir_nm: wavelengths[nir_best],
    })
}

/// Tab-separated table: one row per wavelength, one column per class.
pub fn spectra_table(spectra: &[ClassSpectrum]) -> String {
    let mut out = String::from("wavelength_nm");
    for s in spectra {
        out.push_str(&format!("\tclass_{}", s.ripeness_class));
    }
    out.push('\n');
    if let Some(first) = spectra.first() {
        for (i, w) in first.wavelengths.iter().enumerate() {
            out.push_str(&w.to_string());
            for s in spectra {
                out.push_str(&format!("\t{:.6}", s.values[i]));
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spectrum(class: u8, wl: &[f64], values: &[f64]) -> ClassSpectrum {
        ClassSpectrum {
            ripeness_class: class,
            wavelengths: wl.to_vec(),
            values: values.to_vec(),
            normalized: true,
        }
    }

    #[test]
    fn cube_file_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let cube = HyperspectralCube::from_fn(2, 2, vec![600.0, 700.0, 800.0], |x, y, b| {
            (b * 4 + y * 2 + x) as f64 / 16.0
        })
        .unwrap();
        let (h, d) = (dir.path().join("c.hdr"), dir.path().join("c.raw"));
        cube.save(&h, &d).unwrap();
        let back = load_cube(&h, &d).unwrap();
        assert_eq!(back.values().len(), 12);
        assert_eq!(back, cube);

        let bytes = std::fs::read(&d).unwrap();
        std::fs::write(&d, &bytes[..40]).unwrap();
        let err = load_cube(&h, &d).unwrap_err().to_string();
        assert!(err.contains("48") && err.contains("40"), "{err}");

        std::fs::write(&d, &bytes).unwrap();
        let text = cube.header_text().replace("600, 700, 800", "600, 700, 700");
        std::fs::write(&h, text).unwrap();
        assert!(matches!(load_cube(&h, &d), Err(Error::Format(_))));
    }

    #[test]
    fn calibration_extremes_and_midpoint() {
        let wl = vec![650.0, 770.0];
        let c = |v: f64| HyperspectralCube::from_fn(2, 1, wl.clone(), |_, _, _| v).unwrap();
        let (white, dark) = (c(0.9), c(0.1));
        assert!(calibrate(&white, &white, &dark).unwrap().values().iter().all(|&v| v == 1.0));
        assert!(calibrate(&dark, &white, &dark).unwrap().values().iter().all(|&v| v == 0.0));
        let mid = calibrate(&c(0.5), &white, &dark).unwrap();
        assert!(mid.values().iter().all(|&v| (v - 0.5).abs() < 1e-12));
        assert!(calibrate(&c(0.5), &c(0.3), &c(0.3)).unwrap().values().iter().all(|&v| v == 0.0));
        let other = HyperspectralCube::from_fn(1, 1, wl.clone(), |_, _, _| 0.0).unwrap();
        assert!(matches!(calibrate(&other, &white, &dark), Err(Error::Argument(_))));
    }

    #[test]
    fn mean_spectrum_cases() {
        let wl = vec![700.0, 770.0];
        let cube = HyperspectralCube::from_fn(2, 1, wl.clone(), |x, _, b| {
            if x == 0 { 0.2 + b as f64 } else { 0.4 + b as f64 }
        })
        .unwrap();
        let one = mean_spectrum(&cube, &SegmentationMask::from_fn(2, 1, |x, _| x == 1), 3).unwrap();
        assert_eq!(one.values, vec![0.4, 1.4]);
        let both = mean_spectrum(&cube, &SegmentationMask::from_fn(2, 1, |_, _| true), 3).unwrap();
        assert!((both.values[0] - 0.3).abs() < 1e-12);
        let empty = SegmentationMask::from_fn(2, 1, |_, _| false);
        assert!(matches!(mean_spectrum(&cube, &empty, 3), Err(Error::Argument(_))));
    }

    #[test]
    fn normalization() {
        let s = spectrum(1, &[600.0, 700.0, 800.0], &[0.1, 0.5, 0.9]);
        let n = normalize_spectrum(&s).unwrap();
        for (a, b) in n.values.iter().zip([0.0, 0.5, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(n.normalized);
        let again = normalize_spectrum(&n).unwrap();
        assert_eq!(again.values[0], 0.0);
        assert_eq!(again.values[2], 1.0);
        let flat = spectrum(1, &[600.0, 700.0], &[0.4, 0.4]);
        assert!(matches!(normalize_spectrum(&flat), Err(Error::Degenerate(_))));
    }

    #[test]
    fn separation_scores() {
        let wl = [700.0, 770.0, 800.0];
        let a = spectrum(2, &wl, &[0.2, 0.5, 0.9]);
        let b = spectrum(3, &wl, &[0.2, 0.8, 0.9]);
        let s = class_separation(&[a.clone(), b.clone()], 2, 3).unwrap();
        assert_eq!(s[0], 0.0);
        assert!((s[1] - 0.3).abs() < 1e-12);
        assert_eq!(s[2], 0.0);
        assert_eq!(s, class_separation(&[a.clone(), b], 3, 2).unwrap());
        assert!(class_separation(&[a.clone(), a.clone()], 2, 2).unwrap().iter().all(|&v| v == 0.0));
        assert!(class_separation(&[a], 2, 4).is_err());
    }

    #[test]
    fn single_candidate_bands_and_ties() {
        let wl = [700.0, 800.0];
        let s = [spectrum(2, &wl, &[0.1, 0.2]), spectrum(3, &wl, &[0.4, 0.9])];
        let p = select_wavelengths(&s, VISIBLE_RANGE, NIR_RANGE).unwrap();
        assert_eq!((p.visible_nm, p.nir_nm), (700.0, 800.0));

        let wl = [700.0, 780.0, 790.0];
        let s = [spectrum(2, &wl, &[0.125, 0.25, 0.5]), spectrum(3, &wl, &[0.5, 0.75, 1.0])];
        let p = select_wavelengths(&s, VISIBLE_RANGE, NIR_RANGE).unwrap();
        assert_eq!(p.nir_nm, 780.0);
    }

    #[test]
    fn range_without_bands_rejected() {
        let wl = [760.0, 800.0];
        let s = [spectrum(2, &wl, &[0.1, 0.2]), spectrum(3, &wl, &[0.4, 0.9])];
        assert!(matches!(
            select_wavelengths(&s, VISIBLE_RANGE, NIR_RANGE),
            Err(Error::Argument(_))
        ));
        assert!(select_wavelengths(&s, (600.0, 800.0), NIR_RANGE).is_err());
    }
}
