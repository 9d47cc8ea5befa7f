//! The "GAIT" parameter file.
//!
//! Little-endian layout:
//!
//! ```text
//! magic      4 bytes  "GAIT"
//! version    u32      1
//! count      u32      number of tensors
//! per tensor:
//!   name_len u16
//!   name     name_len bytes, UTF-8
//!   rank     u8
//!   dims     rank x u32
//!   data     prod(dims) x f32, row-major
//! crc        u32      CRC-32 (IEEE) of every preceding byte
//! ```

use std::path::Path;

use super::params::{ParameterSet, Tensor};
use crate::error::{FormatError, Result};

pub const MAGIC: [u8; 4] = *b"GAIT";
pub const VERSION: u32 = 1;

pub fn encode(params: &ParameterSet) -> Result<Vec<u8>, FormatError> {
    let mut buf = Vec::with_capacity(12 + params.numel() * 4);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(params.tensors.len()).map_err(|_| FormatError::TooLarge {
        name: "<tensor count>".into(),
    })?;
    buf.extend_from_slice(&count.to_le_bytes());
    for t in &params.tensors {
        let too_large = || FormatError::TooLarge { name: t.name.clone() };
        let name_len = u16::try_from(t.name.len()).map_err(|_| too_large())?;
        let rank = u8::try_from(t.shape.len()).map_err(|_| too_large())?;
        buf.extend_from_slice(&name_len.to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        buf.push(rank);
        for &d in &t.shape {
            buf.extend_from_slice(&u32::try_from(d).map_err(|_| too_large())?.to_le_bytes());
        }
        for &v in &t.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.bytes.len() - self.pos < n {
            return Err(FormatError::UnexpectedEof {
                offset: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParameterSet, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(FormatError::VersionMismatch {
            expected: VERSION,
            found: version,
        });
    }
    let count = r.u32()?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| FormatError::InvalidName)?
            .to_owned();
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel.checked_mul(4).ok_or(FormatError::UnexpectedEof {
            offset: bytes.len(),
        })?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        tensors.push(Tensor { name, shape, data });
    }
    let body_end = r.pos;
    let stored = r.u32()?;
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(FormatError::CrcMismatch { stored, computed });
    }
    if r.pos != bytes.len() {
        return Err(FormatError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(ParameterSet::new(tensors))
}

pub fn save_params(params: &ParameterSet, path: &Path) -> Result<()> {
    std::fs::write(path, encode(params)?)?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<ParameterSet> {
    Ok(decode(&std::fs::read(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> ParameterSet {
        ParameterSet::new(vec![
            Tensor {
                name: "conv1.weight".into(),
                shape: vec![2, 1, 3, 3],
                data: (0..18).map(|i| (i as f32 * 0.37 - 3.0) as f64).collect(),
            },
            Tensor {
                name: "dense.bias".into(),
                shape: vec![4],
                data: vec![0.0, -0.5, 1.25, 3.0e-8f32 as f64],
            },
        ])
    }

    #[test]
    fn byte_layout() {
        let bytes = encode(&sample()).unwrap();
        assert_eq!(&bytes[..4], b"GAIT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u16::from_le_bytes(bytes[12..14].try_into().unwrap()), 12);
        assert_eq!(&bytes[14..26], b"conv1.weight");
        assert_eq!(bytes[26], 4);
        let expected_len = 12 + (2 + 12 + 1 + 16 + 72) + (2 + 10 + 1 + 4 + 16) + 4;
        assert_eq!(bytes.len(), expected_len);
        let crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        assert_eq!(crc, crc32fast::hash(&bytes[..bytes.len() - 4]));
    }

    #[test]
    fn round_trip_bit_exact() {
        let p = sample();
        assert!(decode(&encode(&p).unwrap()).unwrap().bit_eq(&p));
    }

    #[test]
    fn distinct_errors() {
        let good = encode(&sample()).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode(&bad_magic), Err(FormatError::BadMagic(_))));
        assert!(decode(&bad_magic).unwrap_err().to_string().starts_with("bad magic"));

        let mut bad_version = good.clone();
        bad_version[4] = 2;
        assert!(matches!(
            decode(&bad_version),
            Err(FormatError::VersionMismatch { found: 2, .. })
        ));

        for cut in [2, 11, 30, good.len() - 1] {
            let err = decode(&good[..cut]).unwrap_err();
            assert!(matches!(err, FormatError::UnexpectedEof { .. }), "cut {cut}: {err}");
            assert!(err.to_string().contains("unexpected end of file"));
        }

        let mut flipped = good.clone();
        flipped[60] ^= 0x01; // inside conv1.weight data
        assert!(matches!(decode(&flipped), Err(FormatError::CrcMismatch { .. })));

        let mut trailing = good.clone();
        trailing.push(0);
        assert!(matches!(decode(&trailing), Err(FormatError::TrailingBytes(1))));
    }

    proptest! {
        #[test]
        fn any_f32_tensor_round_trips(values in prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 1..64)) {
            let p = ParameterSet::new(vec![Tensor {
                name: "t".into(),
                shape: vec![values.len()],
                data: values.iter().map(|&v| v as f64).collect(),
            }]);
            let back = decode(&encode(&p).unwrap()).unwrap();
            prop_assert!(back.bit_eq(&p));
        }
    }
}
