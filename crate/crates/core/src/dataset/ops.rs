use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::Image;
use super::sample::{BispectralSample, SAMPLE_SIZE};
use crate::error::{Error, Result};

/// 8-bit side-by-side capture: left half 700 nm, right half 770 nm.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoFrame {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    pub berry_id: String,
}

impl StereoFrame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>, berry_id: impl Into<String>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Dimension(format!(
                "{width}x{height} frame needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if !width.is_multiple_of(2) {
            return Err(Error::Format(format!("stereo frame width {width} is odd")));
        }
        if width / 2 < SAMPLE_SIZE || height < SAMPLE_SIZE {
            return Err(Error::Format(format!(
                "stereo frame {width}x{height} is smaller than two 32x32 halves"
            )));
        }
        Ok(StereoFrame {
            width,
            height,
            pixels,
            berry_id: berry_id.into(),
        })
    }

    pub fn load(path: &std::path::Path, berry_id: impl Into<String>) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let img = image::open(path)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
            .into_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        StereoFrame::new(w, h, img.into_raw(), berry_id)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }
}

/// Splits a stereo frame into its (700 nm, 770 nm) halves.
pub fn split_stereo(frame: &StereoFrame) -> Result<(Image, Image)> {
    if !frame.width.is_multiple_of(2) {
        return Err(Error::Format(format!("stereo frame width {} is odd", frame.width)));
    }
    let half = frame.width / 2;
    let mut left = Vec::with_capacity(half * frame.height);
    let mut right = Vec::with_capacity(half * frame.height);
    for row in frame.pixels.chunks(frame.width) {
        left.extend(row[..half].iter().map(|&p| p as f64 / 255.0));
        right.extend(row[half..].iter().map(|&p| p as f64 / 255.0));
    }
    Ok((
        Image::new(half, frame.height, 1, left)?,
        Image::new(half, frame.height, 1, right)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl BBox {
    pub fn full(image: &Image) -> BBox {
        BBox {
            x: 0,
            y: 0,
            width: image.width(),
            height: image.height(),
        }
    }
}

/// Bilinear resample of `bbox` to 32×32 using pixel-centre alignment. The
/// sampling never reads outside the box.
pub fn crop_resize(image: &Image, bbox: BBox) -> Result<Image> {
    if bbox.width == 0
        || bbox.height == 0
        || bbox.x + bbox.width > image.width()
        || bbox.y + bbox.height > image.height()
    {
        return Err(Error::Argument(format!(
            "bbox {bbox:?} outside {}x{} image",
            image.width(),
            image.height()
        )));
    }
    let n = SAMPLE_SIZE;
    let ch = image.channels();
    let sx = bbox.width as f64 / n as f64;
    let sy = bbox.height as f64 / n as f64;
    let (x_lo, x_hi) = (bbox.x as f64, (bbox.x + bbox.width - 1) as f64);
    let (y_lo, y_hi) = (bbox.y as f64, (bbox.y + bbox.height - 1) as f64);
    let mut data = Vec::with_capacity(n * n * ch);
    for i in 0..n {
        let fy = (bbox.y as f64 + (i as f64 + 0.5) * sy - 0.5).clamp(y_lo, y_hi);
        for j in 0..n {
            let fx = (bbox.x as f64 + (j as f64 + 0.5) * sx - 0.5).clamp(x_lo, x_hi);
            for c in 0..ch {
                data.push(image.sample_bilinear(fx, fy, c));
            }
        }
    }
    Ok(Image::from_parts_unchecked(n, n, ch, data))
}

/// Histogram equalization per channel on 256 quantized levels:
/// `h(v) = round((cdf(v) − cdf_min) / (N − cdf_min) · 255)`.
/// Constant channels are returned unchanged.
pub fn hist_equalize(image: &Image) -> Image {
    let ch = image.channels();
    let n = image.width() * image.height();
    let mut out = image.data().to_vec();
    for c in 0..ch {
        let levels = image.to_u8(c);
        let mut hist = [0usize; 256];
        for &l in &levels {
            hist[l as usize] += 1;
        }
        let mut cdf = [0usize; 256];
        let mut acc = 0;
        for (v, &h) in hist.iter().enumerate() {
            acc += h;
            cdf[v] = acc;
        }
        let cdf_min = cdf[levels.iter().copied().min().unwrap() as usize];
        if cdf_min == n {
            continue;
        }
        let denom = (n - cdf_min) as f64;
        for (i, &l) in levels.iter().enumerate() {
            let mapped = ((cdf[l as usize] - cdf_min) as f64 / denom * 255.0).round();
            out[i * ch + c] = mapped / 255.0;
        }
    }
    Image::from_parts_unchecked(image.width(), image.height(), ch, out)
}

/// Replicates a single-band 32×32 image into three identical channels.
pub fn pseudo_colour(band: &Image) -> Result<Image> {
    if band.channels() != 1 || band.width() != SAMPLE_SIZE || band.height() != SAMPLE_SIZE {
        return Err(Error::Argument(format!(
            "pseudo-colouring needs a 32x32x1 band, got {}x{}x{}",
            band.width(),
            band.height(),
            band.channels()
        )));
    }
    let data = band.data().iter().flat_map(|&v| [v, v, v]).collect();
    Ok(Image::from_parts_unchecked(SAMPLE_SIZE, SAMPLE_SIZE, 3, data))
}

/// Random geometric/photometric perturbation ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationSpec {
    pub max_rotation_deg: f64,
    pub zoom: (f64, f64),
    pub brightness: (f64, f64),
    pub seed: u64,
}

impl Default for AugmentationSpec {
    /// 10° rotation, zoom 0.2–1.0, brightness 0.2–1.0.
    fn default() -> Self {
        AugmentationSpec {
            max_rotation_deg: 10.0,
            zoom: (0.2, 1.0),
            brightness: (0.2, 1.0),
            seed: 0,
        }
    }
}

impl AugmentationSpec {
    pub fn identity() -> Self {
        AugmentationSpec {
            max_rotation_deg: 0.0,
            zoom: (1.0, 1.0),
            brightness: (1.0, 1.0),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_rotation_deg.is_finite() && self.max_rotation_deg >= 0.0) {
            return Err(Error::Argument(format!(
                "max rotation {} must be non-negative",
                self.max_rotation_deg
            )));
        }
        for (name, (lo, hi)) in [("zoom", self.zoom), ("brightness", self.brightness)] {
            if !(lo > 0.0 && hi <= 2.0 && lo <= hi) {
                return Err(Error::Argument(format!(
                    "{name} range [{lo}, {hi}] must satisfy 0 < lo <= hi <= 2"
                )));
            }
        }
        Ok(())
    }

    pub fn sample_params(&self, seed: u64) -> Result<AugmentParams> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |lo: f64, hi: f64| {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo..=hi)
            }
        };
        Ok(AugmentParams {
            rotation_deg: draw(-self.max_rotation_deg, self.max_rotation_deg),
            zoom: draw(self.zoom.0, self.zoom.1),
            brightness: draw(self.brightness.0, self.brightness.1),
        })
    }
}

/// One concrete draw of augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    pub zoom: f64,
    pub brightness: f64,
}

impl AugmentParams {
    /// Rotation about the centre, then zoom, then brightness. Identity
    /// parameters leave pixels bit-identical.
    pub fn apply(&self, image: &Image) -> Image {
        let mut img = image.clone();
        if self.rotation_deg != 0.0 {
            img = rotate(&img, self.rotation_deg);
        }
        if self.zoom != 1.0 {
            img = zoom(&img, self.zoom);
        }
        if self.brightness != 1.0 {
            let b = self.brightness;
            img = img.map_values(|v| v * b);
        }
        img
    }
}

fn resample(image: &Image, map: impl Fn(f64, f64) -> (f64, f64)) -> Image {
    let (w, h, ch) = (image.width(), image.height(), image.channels());
    let mut data = Vec::with_capacity(w * h * ch);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = map(x as f64, y as f64);
            for c in 0..ch {
                data.push(image.sample_bilinear(sx, sy, c));
            }
        }
    }
    Image::from_parts_unchecked(w, h, ch, data)
}

fn centre(image: &Image) -> (f64, f64) {
    (
        (image.width() as f64 - 1.0) / 2.0,
        (image.height() as f64 - 1.0) / 2.0,
    )
}

/// Rotation about the image centre; uncovered corners replicate the border.
fn rotate(image: &Image, degrees: f64) -> Image {
    let (cx, cy) = centre(image);
    let (s, c) = degrees.to_radians().sin_cos();
    resample(image, |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        (cx + c * dx + s * dy, cy - s * dx + c * dy)
    })
}

/// `z < 1` crops the central `z` fraction and enlarges it; `z > 1` pads
/// with replicated borders and shrinks.
fn zoom(image: &Image, z: f64) -> Image {
    let (cx, cy) = centre(image);
    resample(image, |x, y| (cx + (x - cx) * z, cy + (y - cy) * z))
}

/// Applies one shared parameter draw to both bands.
pub fn augment(sample: &BispectralSample, spec: &AugmentationSpec, seed: u64) -> Result<BispectralSample> {
    let params = spec.sample_params(seed)?;
    Ok(augment_with(sample, &params))
}

pub fn augment_with(sample: &BispectralSample, params: &AugmentParams) -> BispectralSample {
    BispectralSample::new(
        params.apply(sample.band700()),
        params.apply(sample.band770()),
        sample.label,
        sample.berry_id.clone(),
        sample.farm,
    )
    .expect("augmentation preserves shape")
}

/// Empirical CDF of the quantized levels of channel 0.
pub fn level_cdf(image: &Image) -> [f64; 256] {
    let levels = image.to_u8(0);
    let mut hist = [0usize; 256];
    for &l in &levels {
        hist[l as usize] += 1;
    }
    let mut cdf = [0.0; 256];
    let mut acc = 0;
    for v in 0..256 {
        acc += hist[v];
        cdf[v] = acc as f64 / levels.len() as f64;
    }
    cdf
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::sample::{Farm, Label};

    fn frame(width: usize, height: usize, f: impl Fn(usize, usize) -> u8) -> StereoFrame {
        let mut px = Vec::new();
        for y in 0..height {
            for x in 0..width {
                px.push(f(x, y));
            }
        }
        StereoFrame::new(width, height, px, "b1").unwrap()
    }

    #[test]
    fn stereo_frame_halves() {
        let f = frame(64, 32, |x, _| if x < 32 { 0 } else { 255 });
        let (l, r) = split_stereo(&f).unwrap();
        assert_eq!((l.width(), l.height(), r.width(), r.height()), (32, 32, 32, 32));
        assert!(l.data().iter().all(|&v| v == 0.0));
        assert!(r.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn odd_width_frame_is_format_error() {
        let r = StereoFrame::new(63, 32, vec![0; 63 * 32], "odd");
        assert!(matches!(r, Err(Error::Format(_))));
    }

    #[test]
    fn exact_crop_is_identity() {
        let img = Image::from_fn(40, 40, |x, y| ((x * 7 + y * 3) % 256) as f64 / 255.0).unwrap();
        let bbox = BBox { x: 5, y: 3, width: 32, height: 32 };
        let out = crop_resize(&img, bbox).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                assert_eq!(out.get(x, y, 0), img.get(x + 5, y + 3, 0));
            }
        }
    }

    #[test]
    fn constant_crop_stays_constant() {
        let img = Image::filled(50, 70, 1, 0.37);
        let out = crop_resize(&img, BBox { x: 2, y: 9, width: 45, height: 13 }).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.37).abs() < 1e-15));
    }

    #[test]
    fn checkerboard_mean_preserved() {
        let img = Image::from_fn(64, 64, |x, y| ((x + y) % 2) as f64).unwrap();
        let out = crop_resize(&img, BBox::full(&img)).unwrap();
        // brute-force mean of the source crop
        let src_mean: f64 = img.data().iter().sum::<f64>() / 4096.0;
        assert!((out.mean() - src_mean).abs() <= 1.0 / 255.0);
    }

    #[test]
    fn bbox_out_of_bounds_rejected() {
        let img = Image::filled(32, 32, 1, 0.0);
        let r = crop_resize(&img, BBox { x: 1, y: 0, width: 32, height: 32 });
        assert!(matches!(r, Err(Error::Argument(_))));
    }

    #[test]
    fn equalize_constant_and_two_level() {
        let c = Image::filled(8, 8, 1, 0.4);
        assert_eq!(hist_equalize(&c), c);
        let two = Image::from_fn(8, 8, |x, _| if x < 4 { 0.0 } else { 1.0 }).unwrap();
        assert_eq!(hist_equalize(&two), two);
    }

    #[test]
    fn pseudo_colour_replicates() {
        let band = Image::from_fn(32, 32, |x, y| (x + y) as f64 / 62.0).unwrap();
        let rgb = pseudo_colour(&band).unwrap();
        assert_eq!(rgb.channels(), 3);
        for c in 0..3 {
            assert_eq!(rgb.channel(c), band);
        }
        let half = pseudo_colour(&Image::filled(32, 32, 1, 0.5)).unwrap();
        assert!(half.data().iter().all(|&v| v == 0.5));
        assert!(pseudo_colour(&Image::filled(16, 32, 1, 0.5)).is_err());
        assert!(pseudo_colour(&half).is_err());
    }

    fn sample_with(v700: f64, v770: f64) -> BispectralSample {
        BispectralSample::new(
            Image::filled(32, 32, 3, v700),
            Image::filled(32, 32, 3, v770),
            Label::Ripe,
            "s",
            Farm::Synthetic,
        )
        .unwrap()
    }

    #[test]
    fn identity_augmentation_is_noop() {
        let band = Image::from_fn(32, 32, |x, y| ((x * 13 + y * 5) % 17) as f64 / 16.0).unwrap();
        let rgb = pseudo_colour(&band).unwrap();
        let s = BispectralSample::new(rgb.clone(), rgb, Label::Unripe, "x", Farm::A).unwrap();
        let out = augment(&s, &AugmentationSpec::identity(), 42).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn brightness_halves_values() {
        let spec = AugmentationSpec {
            max_rotation_deg: 0.0,
            zoom: (1.0, 1.0),
            brightness: (0.5, 0.5),
            seed: 0,
        };
        let out = augment(&sample_with(0.8, 0.8), &spec, 1).unwrap();
        assert!(out.band700().data().iter().all(|&v| (v - 0.4).abs() < 1e-12));
        assert!(out.band770().data().iter().all(|&v| (v - 0.4).abs() < 1e-12));
    }

    #[test]
    fn both_bands_share_one_draw() {
        // Plant the same off-centre marker in both bands; any shared
        // geometric transform moves it identically.
        let marker = Image::from_fn(32, 32, |x, y| if (4..8).contains(&x) && (20..26).contains(&y) { 1.0 } else { 0.1 }).unwrap();
        let rgb = pseudo_colour(&marker).unwrap();
        let s = BispectralSample::new(rgb.clone(), rgb, Label::Ripe, "m", Farm::B).unwrap();
        let spec = AugmentationSpec::default();
        for seed in 0..20 {
            let out = augment(&s, &spec, seed).unwrap();
            assert_eq!(out.band700(), out.band770());
        }
    }

    #[test]
    fn invalid_spec_rejected() {
        let mut spec = AugmentationSpec::default();
        spec.zoom = (1.0, 0.5);
        assert!(spec.validate().is_err());
        spec = AugmentationSpec::default();
        spec.brightness = (0.0, 1.0);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn augmentation_keeps_unit_range() {
        let band = Image::from_fn(32, 32, |x, y| ((x ^ y) % 32) as f64 / 31.0).unwrap();
        let rgb = pseudo_colour(&band).unwrap();
        let s = BispectralSample::new(rgb.clone(), rgb, Label::Ripe, "r", Farm::A).unwrap();
        let spec = AugmentationSpec { brightness: (0.2, 2.0), zoom: (0.2, 2.0), ..AugmentationSpec::default() };
        for seed in 0..10 {
            let out = augment(&s, &spec, seed).unwrap();
            assert!(out.band700().data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
