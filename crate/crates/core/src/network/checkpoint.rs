//! Flat binary checkpoints: `NTDQ`, then L, m, d as little-endian u32,
//! then theta and b as little-endian f64.

use std::io::{Read, Write};
use std::path::Path;

use super::{Activation, Architecture, NetworkParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"NTDQ";

pub fn write_checkpoint(params: &NetworkParams, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 8 * (params.n_params() + params.width()));
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    for v in [params.depth(), params.width(), params.input_dim()] {
        let v = u32::try_from(v).map_err(|_| Error::Format("dimension exceeds u32".into()))?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for x in params.theta().iter().chain(params.signs()) {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// The activation and output scale are not stored; the caller supplies the
/// activation and gets the default output scale.
pub fn read_checkpoint(path: &Path, activation: Activation) -> Result<NetworkParams> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("{}: not a checkpoint", path.display())));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let arch = Architecture::new(word(0), word(1), word(2), activation);
    arch.validate()?;
    let n = arch.n_params();
    let expected = 16 + 8 * (n + arch.width);
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: expected {expected} bytes, found {}",
            path.display(),
            bytes.len()
        )));
    }
    let floats: Vec<f64> = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    NetworkParams::new(arch, floats[..n].to_vec(), floats[n..].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::init_params;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let (p, _) = init_params(Architecture::new(2, 5, 3, Activation::Gelu), 9).unwrap();
        write_checkpoint(&p, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"NTDQ");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 5);
        let q = read_checkpoint(&path, Activation::Gelu).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let (p, _) = init_params(Architecture::new(1, 2, 2, Activation::Elu), 0).unwrap();
        write_checkpoint(&p, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(read_checkpoint(&path, Activation::Elu).is_err());
    }
}
