//! Frozen feature extractors shared by both spectral branches.
//!
//! Two kinds are supported:
//!
//! * a random-projection surrogate, `relu(M·x + b)` over the flattened
//!   32×32×3 image, with `M` uniform in `±sqrt(3/3072)` and `b` uniform in
//!   `[0, 0.1)`, both drawn from a seeded ChaCha8 stream. On an all-zero
//!   image it returns exactly `b`.
//! * a convolution stack read from a `BSCV` file:
//!
//! ```text
//! magic     4 bytes  "BSCV"
//! version   u32      1
//! layers    u32
//! per layer:
//!   out_ch  u32
//!   in_ch   u32
//!   kernel  u32      odd; zero padding keeps spatial size
//!   pool    u8       1 = 2×2 max-pool after the ReLU
//!   weights out_ch*in_ch*kernel*kernel f32, then out_ch f32 bias
//! ```
//!
//! Every layer is conv → ReLU → optional pool; the output is the final
//! feature map flattened channel-major.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Image, SAMPLE_SIZE};
use crate::error::{Error, Result};

const INPUT_LEN: usize = SAMPLE_SIZE * SAMPLE_SIZE * 3;
pub const DEFAULT_SURROGATE_DIM: usize = 512;

/// How to (re)build an extractor; stored in model sidecars.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExtractorSpec {
    DeterministicSurrogate { seed: u64, output_dim: usize },
    LoadedFrozenConv { path: PathBuf },
}

impl Default for ExtractorSpec {
    fn default() -> Self {
        ExtractorSpec::DeterministicSurrogate {
            seed: 0,
            output_dim: DEFAULT_SURROGATE_DIM,
        }
    }
}

impl ExtractorSpec {
    pub fn build(&self) -> Result<FeatureExtractor> {
        match self {
            ExtractorSpec::DeterministicSurrogate { seed, output_dim } => {
                FeatureExtractor::surrogate(*seed, *output_dim)
            }
            ExtractorSpec::LoadedFrozenConv { path } => FeatureExtractor::load_conv(path),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ConvLayer {
    out_ch: usize,
    in_ch: usize,
    kernel: usize,
    pool: bool,
    weights: Vec<f32>,
    bias: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Surrogate { projection: Vec<f32>, bias: Vec<f32> },
    Conv { layers: Vec<ConvLayer> },
}

/// Frozen, deterministic image → feature-vector map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    spec: ExtractorSpec,
    kind: Kind,
    output_dim: usize,
    digest: String,
}

impl FeatureExtractor {
    pub fn surrogate(seed: u64, output_dim: usize) -> Result<Self> {
        if output_dim == 0 {
            return Err(Error::Argument("extractor output_dim must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let limit = (3.0 / INPUT_LEN as f64).sqrt() as f32;
        let projection = (0..output_dim * INPUT_LEN)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        let bias = (0..output_dim).map(|_| rng.random_range(0.0..0.1f32)).collect();
        let kind = Kind::Surrogate { projection, bias };
        Ok(Self::assemble(
            ExtractorSpec::DeterministicSurrogate { seed, output_dim },
            kind,
            output_dim,
        ))
    }

    pub fn load_conv(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let layers = read_conv(bytes.as_slice())
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let output_dim = conv_output_dim(&layers)?;
        Ok(Self::assemble(
            ExtractorSpec::LoadedFrozenConv {
                path: path.to_path_buf(),
            },
            Kind::Conv { layers },
            output_dim,
        ))
    }

    fn assemble(spec: ExtractorSpec, kind: Kind, output_dim: usize) -> Self {
        let mut h = Sha256::new();
        match &kind {
            Kind::Surrogate { projection, bias } => {
                h.update(b"surrogate");
                for v in projection.iter().chain(bias) {
                    h.update(v.to_le_bytes());
                }
            }
            Kind::Conv { layers } => {
                h.update(b"conv");
                for l in layers {
                    for d in [l.out_ch, l.in_ch, l.kernel, l.pool as usize] {
                        h.update((d as u32).to_le_bytes());
                    }
                    for v in l.weights.iter().chain(&l.bias) {
                        h.update(v.to_le_bytes());
                    }
                }
            }
        }
        FeatureExtractor {
            spec,
            kind,
            output_dim,
            digest: hex::encode(h.finalize()),
        }
    }

    pub fn spec(&self) -> &ExtractorSpec {
        &self.spec
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// SHA-256 over the frozen parameters.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    /// Surrogate bias vector, i.e. the features of an all-zero image.
    pub fn surrogate_bias(&self) -> Option<Vec<f64>> {
        match &self.kind {
            Kind::Surrogate { bias, .. } => Some(bias.iter().map(|&b| b as f64).collect()),
            Kind::Conv { .. } => None,
        }
    }

    pub fn extract(&self, image: &Image) -> Result<Vec<f64>> {
        if image.width() != SAMPLE_SIZE || image.height() != SAMPLE_SIZE || image.channels() != 3 {
            return Err(Error::Dimension(format!(
                "extractor needs 32x32x3 input, got {}x{}x{}",
                image.width(),
                image.height(),
                image.channels()
            )));
        }
        match &self.kind {
            Kind::Surrogate { projection, bias } => {
                let x = image.data();
                Ok(projection
                    .chunks_exact(INPUT_LEN)
                    .zip(bias)
                    .map(|(row, &b)| {
                        let z: f64 = row.iter().zip(x).map(|(&w, &v)| w as f64 * v).sum();
                        (z + b as f64).max(0.0)
                    })
                    .collect())
            }
            Kind::Conv { layers } => Ok(conv_forward(layers, image)),
        }
    }
}

fn conv_output_dim(layers: &[ConvLayer]) -> Result<usize> {
    let mut size = SAMPLE_SIZE;
    let mut channels = 3;
    for (i, l) in layers.iter().enumerate() {
        if l.in_ch != channels {
            return Err(Error::Format(format!(
                "conv layer {i} expects {} channels, receives {channels}",
                l.in_ch
            )));
        }
        channels = l.out_ch;
        if l.pool {
            if size < 2 {
                return Err(Error::Format(format!("conv layer {i} pools a 1x1 map")));
            }
            size /= 2;
        }
    }
    Ok(channels * size * size)
}

fn conv_forward(layers: &[ConvLayer], image: &Image) -> Vec<f64> {
    // Channel-major planes.
    let mut size = SAMPLE_SIZE;
    let mut maps: Vec<Vec<f64>> = (0..3).map(|c| image.channel(c).data().to_vec()).collect();
    for l in layers {
        let k = l.kernel;
        let r = (k / 2) as isize;
        let mut out = vec![vec![0.0; size * size]; l.out_ch];
        for (o, plane) in out.iter_mut().enumerate() {
            for y in 0..size {
                for x in 0..size {
                    let mut acc = l.bias[o] as f64;
                    for (i, input) in maps.iter().enumerate() {
                        let wbase = (o * l.in_ch + i) * k * k;
                        for ky in 0..k {
                            let sy = y as isize + ky as isize - r;
                            if sy < 0 || sy >= size as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let sx = x as isize + kx as isize - r;
                                if sx < 0 || sx >= size as isize {
                                    continue;
                                }
                                acc += l.weights[wbase + ky * k + kx] as f64
                                    * input[sy as usize * size + sx as usize];
                            }
                        }
                    }
                    plane[y * size + x] = acc.max(0.0);
                }
            }
        }
        if l.pool {
            let half = size / 2;
            out = out
                .into_iter()
                .map(|p| {
                    let mut pooled = vec![0.0; half * half];
                    for y in 0..half {
                        for x in 0..half {
                            let i = 2 * y * size + 2 * x;
                            pooled[y * half + x] =
                                p[i].max(p[i + 1]).max(p[i + size]).max(p[i + size + 1]);
                        }
                    }
                    pooled
                })
                .collect();
            size = half;
        }
        maps = out;
    }
    maps.concat()
}

fn read_conv<R: Read>(mut r: R) -> std::result::Result<Vec<ConvLayer>, String> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| e.to_string())?;
    if &magic != b"BSCV" {
        return Err(format!("bad magic {magic:?}, expected \"BSCV\""));
    }
    let rd = |e: std::io::Error| format!("truncated conv weights: {e}");
    let version = r.read_u32::<LittleEndian>().map_err(rd)?;
    if version != 1 {
        return Err(format!("unsupported conv weight version {version}"));
    }
    let count = r.read_u32::<LittleEndian>().map_err(rd)? as usize;
    if count == 0 {
        return Err("conv stack declares zero layers".into());
    }
    let mut layers = Vec::with_capacity(count);
    for i in 0..count {
        let out_ch = r.read_u32::<LittleEndian>().map_err(rd)? as usize;
        let in_ch = r.read_u32::<LittleEndian>().map_err(rd)? as usize;
        let kernel = r.read_u32::<LittleEndian>().map_err(rd)? as usize;
        let pool = r.read_u8().map_err(rd)? != 0;
        if out_ch == 0 || in_ch == 0 || kernel.is_multiple_of(2) {
            return Err(format!("conv layer {i}: invalid shape {out_ch}x{in_ch}x{kernel}"));
        }
        let mut weights = vec![0f32; out_ch * in_ch * kernel * kernel];
        r.read_f32_into::<LittleEndian>(&mut weights).map_err(rd)?;
        let mut bias = vec![0f32; out_ch];
        r.read_f32_into::<LittleEndian>(&mut bias).map_err(rd)?;
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(format!("conv layer {i}: non-finite parameter"));
        }
        layers.push(ConvLayer {
            out_ch,
            in_ch,
            kernel,
            pool,
            weights,
            bias,
        });
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|e| e.to_string())?;
    if !rest.is_empty() {
        return Err(format!("{} trailing bytes after last conv layer", rest.len()));
    }
    Ok(layers)
}

/// Writes a seeded random conv stack. `shapes` lists `(out_ch, kernel, pool)`
/// per layer; the first layer reads 3 channels.
pub fn write_random_conv<W: Write>(shapes: &[(usize, usize, bool)], seed: u64, mut w: W) -> Result<()> {
    let io = |e: std::io::Error| Error::Format(format!("writing conv weights: {e}"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    w.write_all(b"BSCV").map_err(io)?;
    w.write_u32::<LittleEndian>(1).map_err(io)?;
    w.write_u32::<LittleEndian>(shapes.len() as u32).map_err(io)?;
    let mut in_ch = 3;
    for &(out_ch, kernel, pool) in shapes {
        for d in [out_ch, in_ch, kernel] {
            w.write_u32::<LittleEndian>(d as u32).map_err(io)?;
        }
        w.write_u8(pool as u8).map_err(io)?;
        let fan_in = (in_ch * kernel * kernel) as f32;
        let limit = (6.0 / fan_in).sqrt();
        for _ in 0..out_ch * in_ch * kernel * kernel {
            w.write_f32::<LittleEndian>(rng.random_range(-limit..limit)).map_err(io)?;
        }
        for _ in 0..out_ch {
            w.write_f32::<LittleEndian>(0.0).map_err(io)?;
        }
        in_ch = out_ch;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surrogate_zero_image_gives_bias() {
        let fx = FeatureExtractor::surrogate(4, 16).unwrap();
        let f = fx.extract(&Image::filled(32, 32, 3, 0.0)).unwrap();
        assert_eq!(f, fx.surrogate_bias().unwrap());
        assert!(f.iter().all(|&b| (0.0..0.1).contains(&b)));
    }

    #[test]
    fn surrogate_is_deterministic_in_seed() {
        let a = FeatureExtractor::surrogate(1, 8).unwrap();
        let b = FeatureExtractor::surrogate(1, 8).unwrap();
        let c = FeatureExtractor::surrogate(2, 8).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
        let img = Image::filled(32, 32, 3, 0.3);
        assert_eq!(a.extract(&img).unwrap(), b.extract(&img).unwrap());
    }

    #[test]
    fn conv_stack_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stack.bscv");
        let mut buf = Vec::new();
        write_random_conv(&[(4, 3, true), (6, 3, true)], 3, &mut buf).unwrap();
        std::fs::write(&path, &buf).unwrap();
        let fx = FeatureExtractor::load_conv(&path).unwrap();
        assert_eq!(fx.output_dim(), 6 * 8 * 8);
        let img = Image::filled(32, 32, 3, 0.5);
        let f = fx.extract(&img).unwrap();
        assert_eq!(f.len(), fx.output_dim());
        assert!(f.iter().all(|&v| v >= 0.0));

        std::fs::write(&path, &buf[..buf.len() - 1]).unwrap();
        assert!(matches!(FeatureExtractor::load_conv(&path), Err(Error::Format(_))));
        assert!(matches!(
            FeatureExtractor::load_conv(&dir.path().join("missing.bscv")),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let fx = FeatureExtractor::surrogate(0, 4).unwrap();
        assert!(fx.extract(&Image::filled(32, 32, 1, 0.0)).is_err());
    }
}
