//! Binary weight file.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "MDRN"
//! 4       4     format version (u32 LE)
//! 8       4     D  musical dimensions (u32 LE)
//! 12      4     L  LSTM layers
//! 16      4     H  hidden units per layer
//! 20      4     K  mixture components
//! 24      ...   f64 LE tensors, for each layer l: w_x, w_h, bias;
//!               then w_pi, b_pi, w_mu, b_mu, w_sigma, b_sigma
//! end-4   4     CRC-32 (IEEE) of every preceding byte
//! ```

use std::path::Path;

use super::{MdrnnParams, ModelShape};
use crate::Error;

pub const MAGIC: &[u8; 4] = b"MDRN";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

pub fn weights_to_bytes(params: &MdrnnParams) -> Vec<u8> {
    let s = params.shape;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * s.parameter_count() + 4);
    out.extend_from_slice(MAGIC);
    for v in [FORMAT_VERSION, s.dimension as u32, s.layers as u32, s.hidden as u32, s.mixtures as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for t in params.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn parse_header(bytes: &[u8]) -> Result<ModelShape, Error> {
    if bytes.len() < HEADER_LEN + 4 {
        return Err(Error::Checksum(format!("weight file truncated at {} bytes", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Weights("not a weight file (bad magic)".into()));
    }
    let version = u32_at(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(Error::Weights(format!(
            "unsupported weight format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::Checksum("weight file checksum mismatch (truncated or corrupt)".into()));
    }
    let shape = ModelShape {
        dimension: u32_at(bytes, 8) as usize,
        layers: u32_at(bytes, 12) as usize,
        hidden: u32_at(bytes, 16) as usize,
        mixtures: u32_at(bytes, 20) as usize,
    };
    shape.check()?;
    let expected = HEADER_LEN + 8 * shape.parameter_count() + 4;
    if bytes.len() != expected {
        return Err(Error::Shape(format!(
            "weight file is {} bytes but header {shape:?} implies {expected}",
            bytes.len()
        )));
    }
    Ok(shape)
}

pub fn weights_from_bytes(bytes: &[u8]) -> Result<MdrnnParams, Error> {
    let shape = parse_header(bytes)?;
    let mut params = MdrnnParams::zeros(shape);
    let mut pos = HEADER_LEN;
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            *v = f64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
            pos += 8;
        }
    }
    if !params.is_finite() {
        return Err(Error::Weights("weight file contains non-finite values".into()));
    }
    Ok(params)
}

pub fn save_weights(params: &MdrnnParams, path: &Path) -> Result<(), Error> {
    std::fs::write(path, weights_to_bytes(params)).map_err(|e| Error::Io(format!("writing {}: {e}", path.display())))
}

pub fn load_weights(path: &Path) -> Result<MdrnnParams, Error> {
    let bytes = read(path)?;
    weights_from_bytes(&bytes)
}

/// Validate a weight file and report its architecture.
pub fn read_shape(path: &Path) -> Result<ModelShape, Error> {
    let bytes = read(path)?;
    parse_header(&bytes)
}

fn read(path: &Path) -> Result<Vec<u8>, Error> {
    std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::ModelNotFound(path.to_path_buf()),
        _ => Error::Io(format!("reading {}: {e}", path.display())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> MdrnnParams {
        let shape = ModelShape::new(4, 2, 6, 3).unwrap();
        MdrnnParams::init(shape, &mut ChaCha8Rng::seed_from_u64(10))
    }

    #[test]
    fn round_trip_is_bitwise() {
        let p = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mdrn");
        save_weights(&p, &path).unwrap();
        let q = load_weights(&path).unwrap();
        assert_eq!(p.shape, q.shape);
        for (a, b) in p.tensors().iter().zip(q.tensors()) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(read_shape(&path).unwrap(), p.shape);
    }

    #[test]
    fn header_layout() {
        let b = weights_to_bytes(&model());
        assert_eq!(&b[..4], b"MDRN");
        assert_eq!(u32_at(&b, 4), 1);
        assert_eq!((u32_at(&b, 8), u32_at(&b, 12), u32_at(&b, 16), u32_at(&b, 20)), (4, 2, 6, 3));
        assert_eq!(b.len(), 24 + 8 * model().shape.parameter_count() + 4);
    }

    #[test]
    fn truncated_file_is_checksum_error() {
        let b = weights_to_bytes(&model());
        for cut in [b.len() - 1, b.len() / 2, 30, 10, 0] {
            match weights_from_bytes(&b[..cut]) {
                Err(Error::Checksum(_)) => {}
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn flipped_byte_is_checksum_error() {
        let mut b = weights_to_bytes(&model());
        b[100] ^= 0x10;
        assert!(matches!(weights_from_bytes(&b), Err(Error::Checksum(_))));
    }

    #[test]
    fn version_mismatch_reported() {
        let mut b = weights_to_bytes(&model());
        b[4] = 9;
        let err = weights_from_bytes(&b).unwrap_err();
        assert!(err.to_string().contains("version 9"), "{err}");
    }

    #[test]
    fn shape_lies_caught_even_with_valid_crc() {
        let mut b = weights_to_bytes(&model());
        b[16] = 7; // H 6 -> 7
        let n = b.len();
        let crc = crc32fast::hash(&b[..n - 4]);
        b[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(weights_from_bytes(&b), Err(Error::Shape(_))));
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_weights(Path::new("/nonexistent/model.mdrn")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/model.mdrn"));
    }
}
