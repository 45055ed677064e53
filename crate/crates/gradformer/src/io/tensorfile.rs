//! Bit-exact on-disk tensor container.
//!
//! Layout (all integers little-endian):
//!   bytes 0..4   magic "GRDT"
//!   byte  4      version (1)
//!   byte  5      dtype (0 = f32, 1 = f64)
//!   byte  6      ndim
//!   byte  7      reserved (0)
//!   8..8+8·ndim  dims as u64
//!   rest         row-major scalars, little-endian
//!
//! A 2×3 f32 tensor is exactly 4+1+1+1+1+16+24 = 48 bytes.

use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar, Tensor};

pub const TENSOR_MAGIC: &[u8; 4] = b"GRDT";
pub const TENSOR_VERSION: u8 = 1;

/// Serialize into the container byte layout.
pub fn tensor_to_bytes<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let dims = t.shape();
    let mut out = Vec::with_capacity(8 + 8 * dims.len() + t.numel() * T::DTYPE.size_bytes());
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(TENSOR_VERSION);
    out.push(T::DTYPE.to_u8());
    out.push(dims.len() as u8);
    out.push(0);
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data().iter() {
        out.extend_from_slice(&v.to_le_bytes_vec());
    }
    out
}

/// Parse one tensor from `bytes` starting at `offset`; returns the tensor and
/// the offset just past its payload. Errors carry the absolute byte offset of
/// the violation.
pub fn tensor_from_bytes<T: Scalar>(bytes: &[u8], offset: u64) -> Result<(Tensor<T>, u64)> {
    let base = offset as usize;
    let at = |rel: usize| offset + rel as u64;
    let need = |rel: usize, n: usize, what: &str| -> Result<()> {
        if base + rel + n > bytes.len() {
            Err(Error::format(at(rel), format!("truncated while reading {what}")))
        } else {
            Ok(())
        }
    };
    need(0, 8, "header")?;
    if &bytes[base..base + 4] != TENSOR_MAGIC {
        return Err(Error::format(at(0), "bad magic (expected GRDT)".to_string()));
    }
    if bytes[base + 4] != TENSOR_VERSION {
        return Err(Error::format(at(4), format!("unsupported version {}", bytes[base + 4])));
    }
    let dtype = DType::from_u8(bytes[base + 5])
        .ok_or_else(|| Error::format(at(5), format!("unknown dtype {}", bytes[base + 5])))?;
    if dtype != T::DTYPE {
        return Err(Error::format(
            at(5),
            format!("dtype is {:?}, expected {:?}", dtype, T::DTYPE),
        ));
    }
    let ndim = bytes[base + 6] as usize;
    if bytes[base + 7] != 0 {
        return Err(Error::format(at(7), "reserved byte must be 0".to_string()));
    }
    need(8, 8 * ndim, "dims")?;
    let mut dims = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let s = base + 8 + 8 * i;
        let d = u64::from_le_bytes(bytes[s..s + 8].try_into().unwrap());
        dims.push(usize::try_from(d).map_err(|_| Error::format(at(8 + 8 * i), format!("dim {d} too large")))?);
    }
    let count: usize = dims.iter().product();
    let width = T::DTYPE.size_bytes();
    let payload_at = 8 + 8 * ndim;
    need(payload_at, count * width, "payload")?;
    let mut data = Vec::with_capacity(count);
    for i in 0..count {
        let s = base + payload_at + i * width;
        data.push(T::from_le_slice(&bytes[s..s + width]));
    }
    let t = Tensor::from_vec(data, &dims)?;
    Ok((t, offset + (payload_at + count * width) as u64))
}

pub fn write_tensor<T: Scalar>(path: &std::path::Path, t: &Tensor<T>) -> Result<()> {
    std::fs::write(path, tensor_to_bytes(t))?;
    Ok(())
}

pub fn read_tensor<T: Scalar>(path: &std::path::Path) -> Result<Tensor<T>> {
    let bytes = std::fs::read(path)?;
    let (t, end) = tensor_from_bytes::<T>(&bytes, 0)?;
    if end != bytes.len() as u64 {
        return Err(Error::format(end, format!("{} trailing bytes", bytes.len() as u64 - end)));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn header_arithmetic_for_2x3() {
        let t = Tensor::<f32>::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]).unwrap();
        let bytes = tensor_to_bytes(&t);
        assert_eq!(bytes.len(), 48);
        assert_eq!(&bytes[..4], b"GRDT");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], 0); // f32
        assert_eq!(bytes[6], 2);
        assert_eq!(bytes[7], 0);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 3);
        assert_eq!(f32::from_le_bytes(bytes[24..28].try_into().unwrap()), 1.0);
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.grdt");
        let mut rng = Rng::new(3);
        let t = Tensor::<f64>::from_fn(&[3, 4, 5], |_| rng.uniform(-10.0, 10.0));
        write_tensor(&path, &t).unwrap();
        let back = read_tensor::<f64>(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        let (a, b) = (t.to_vec(), back.to_vec());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn corruption_probes() {
        let t = Tensor::<f32>::from_vec(vec![1.0, 2.0], &[2]).unwrap();
        let good = tensor_to_bytes(&t);

        // payload flip: parses, but the value differs
        let mut payload_flipped = good.clone();
        let last = payload_flipped.len() - 1;
        payload_flipped[last] ^= 0x40;
        let (back, _) = tensor_from_bytes::<f32>(&payload_flipped, 0).unwrap();
        assert_ne!(back.to_vec(), t.to_vec());

        // magic flip: format error at offset 0
        let mut magic_flipped = good.clone();
        magic_flipped[0] ^= 0xFF;
        match tensor_from_bytes::<f32>(&magic_flipped, 0) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }

        // truncation: format error past the header
        match tensor_from_bytes::<f32>(&good[..good.len() - 2], 0) {
            Err(Error::Format { offset, .. }) => assert!(offset >= 8),
            other => panic!("expected format error, got {other:?}"),
        }

        // wrong scalar type for the stored dtype
        assert!(tensor_from_bytes::<f64>(&good, 0).is_err());
    }

    #[test]
    fn rejects_trailing_garbage_and_bad_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.grdt");
        let t = Tensor::<f32>::from_vec(vec![5.0], &[1]).unwrap();
        let mut bytes = tensor_to_bytes(&t);
        bytes.push(0xAB);
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_tensor::<f32>(&path).is_err());

        let mut vbad = tensor_to_bytes(&t);
        vbad[4] = 9;
        match tensor_from_bytes::<f32>(&vbad, 0) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("expected format error, got {other:?}"),
        }
    }
}
