//! `BSTK` weight files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic       4 bytes  "BSTK"
//! version     u32      currently 1
//! layers      u32
//! per layer:
//!   rows      u32      output width
//!   cols      u32      input width
//!   frozen    u8       0 or 1
//!   activation u8      0 none, 1 relu, 2 sigmoid
//!   weights   rows*cols f32, row-major
//!   bias      rows f32
//! ```

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::layer::{Activation, DenseLayer};
use super::network::Network;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BSTK";
pub const VERSION: u32 = 1;

fn fmt_err(e: std::io::Error) -> Error {
    Error::Format(format!("truncated or unreadable weight data: {e}"))
}

pub fn write_network<W: Write>(net: &Network, mut w: W) -> Result<()> {
    let io = |e: std::io::Error| Error::Format(format!("failed writing weights: {e}"));
    w.write_all(MAGIC).map_err(io)?;
    w.write_u32::<LittleEndian>(VERSION).map_err(io)?;
    w.write_u32::<LittleEndian>(net.layers().len() as u32)
        .map_err(io)?;
    for layer in net.layers() {
        w.write_u32::<LittleEndian>(layer.outputs() as u32)
            .map_err(io)?;
        w.write_u32::<LittleEndian>(layer.inputs() as u32)
            .map_err(io)?;
        w.write_u8(layer.frozen as u8).map_err(io)?;
        w.write_u8(layer.activation.code()).map_err(io)?;
        for &v in layer.weights().values().iter().chain(layer.bias()) {
            w.write_f32::<LittleEndian>(v as f32).map_err(io)?;
        }
    }
    Ok(())
}

pub fn read_network<R: Read>(mut r: R) -> Result<Network> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(fmt_err)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:?}, expected \"BSTK\""
        )));
    }
    let version = r.read_u32::<LittleEndian>().map_err(fmt_err)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported weight file version {version}")));
    }
    let count = r.read_u32::<LittleEndian>().map_err(fmt_err)? as usize;
    if count == 0 {
        return Err(Error::Format("weight file declares zero layers".into()));
    }
    let mut layers = Vec::with_capacity(count);
    for i in 0..count {
        let rows = r.read_u32::<LittleEndian>().map_err(fmt_err)? as usize;
        let cols = r.read_u32::<LittleEndian>().map_err(fmt_err)? as usize;
        let frozen = match r.read_u8().map_err(fmt_err)? {
            0 => false,
            1 => true,
            other => return Err(Error::Format(format!("layer {i}: frozen flag {other}"))),
        };
        let activation = Activation::from_code(r.read_u8().map_err(fmt_err)?)?;
        if rows == 0 || cols == 0 {
            return Err(Error::Format(format!("layer {i} has zero extent")));
        }
        let mut read_vec = |n: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0f32; n];
            r.read_f32_into::<LittleEndian>(&mut buf).map_err(fmt_err)?;
            Ok(buf.into_iter().map(f64::from).collect())
        };
        let weights = read_vec(rows * cols)?;
        let bias = read_vec(rows)?;
        let tensor = Tensor::matrix(rows, cols, weights)
            .map_err(|e| Error::Format(format!("layer {i}: {e}")))?;
        let mut layer = DenseLayer::new(tensor, bias, activation)
            .map_err(|e| Error::Format(format!("layer {i}: {e}")))?;
        layer.frozen = frozen;
        layers.push(layer);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(fmt_err)? != 0 {
        return Err(Error::Format("trailing bytes after last layer".into()));
    }
    Network::new(layers).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_network(net: &Network, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_network(net, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_network(path: &Path) -> Result<Network> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_network(bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut first = DenseLayer::he_uniform(3, 4, Activation::Relu, &mut rng);
        first.frozen = true;
        let mut net = Network::new(vec![
            first,
            DenseLayer::he_uniform(4, 1, Activation::Sigmoid, &mut rng),
        ])
        .unwrap();
        net.round_to_f32();
        net
    }

    #[test]
    fn f32_rounded_network_round_trips_exactly() {
        let net = sample();
        let mut buf = Vec::new();
        write_network(&net, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"BSTK");
        // header 12 + per layer 10 + floats
        assert_eq!(buf.len(), 12 + 10 + 16 * 4 + 10 + 5 * 4);
        let back = read_network(buf.as_slice()).unwrap();
        assert_eq!(back, net);
        assert!(back.layers()[0].frozen);
        assert_eq!(back.layers()[1].activation, Activation::Sigmoid);
    }

    #[test]
    fn corrupt_files_are_format_errors() {
        let mut buf = Vec::new();
        write_network(&sample(), &mut buf).unwrap();
        let truncated = &buf[..buf.len() - 3];
        assert!(matches!(read_network(truncated), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_network(bad.as_slice()), Err(Error::Format(_))));
        let mut extra = buf.clone();
        extra.push(0);
        assert!(matches!(read_network(extra.as_slice()), Err(Error::Format(_))));
    }
}
