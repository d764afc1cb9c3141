//! Parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "GITVLCK1"
//! count    u32      number of entries
//! entry*   repeated `count` times:
//!   name_len  u16
//!   name      name_len bytes of UTF-8
//!   dtype     u8    0 = f32, 1 = f64
//!   ndim      u8    at most 8
//!   dims      ndim × u32
//!   values    product(dims) × dtype size bytes, row-major
//! ```
//!
//! Nothing may follow the last entry. Loaded parameters carry placeholder
//! group/kind tags; [`crate::model::GitModel::from_params`] reattaches the
//! real ones from the model layout.

use std::path::Path;

use crate::error::{Error, Result};
use crate::param::{ParamGroup, ParamKind, ParamStore};
use crate::tensor::{DType, Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"GITVLCK1";
const MAX_NDIM: usize = 8;

pub fn encode<T: Scalar>(params: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.numel() * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (_, p) in params.iter() {
        let name = p.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(T::DTYPE.tag());
        out.push(p.value.rank() as u8);
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("checkpoint", format!("truncated at byte {}", self.at)))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Decodes a checkpoint, converting stored values to `T`.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<ParamStore<T>> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::format("checkpoint", "bad magic"));
    }
    let count = r.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::format("checkpoint", "parameter name is not UTF-8"))?
            .to_string();
        if store.id(&name).is_some() {
            return Err(Error::format("checkpoint", format!("duplicate parameter {name}")));
        }
        let dtype = DType::from_tag(r.u8()?)
            .ok_or_else(|| Error::format("checkpoint", format!("unknown dtype for {name}")))?;
        let ndim = r.u8()? as usize;
        if ndim > MAX_NDIM {
            return Err(Error::format("checkpoint", format!("{name} has {ndim} dims")));
        }
        let mut shape = Vec::with_capacity(ndim);
        let mut numel: usize = 1;
        for _ in 0..ndim {
            let d = r.u32()? as usize;
            numel = numel
                .checked_mul(d)
                .ok_or_else(|| Error::format("checkpoint", format!("{name} is too large")))?;
            shape.push(d);
        }
        let nbytes = numel
            .checked_mul(dtype.size())
            .ok_or_else(|| Error::format("checkpoint", format!("{name} is too large")))?;
        let raw = r.take(nbytes)?;
        let data: Vec<T> = match dtype {
            DType::F32 => raw.chunks_exact(4).map(|c| T::of(f32::read_le(c) as f64)).collect(),
            DType::F64 => raw.chunks_exact(8).map(|c| T::of(f64::read_le(c))).collect(),
        };
        store.add(
            name,
            Tensor::from_parts(shape, data),
            ParamGroup::Decoder,
            ParamKind::Weight,
        );
    }
    if r.at != bytes.len() {
        return Err(Error::format(
            "checkpoint",
            format!("{} trailing bytes", bytes.len() - r.at),
        ));
    }
    Ok(store)
}

pub fn save<T: Scalar>(path: &Path, params: &ParamStore<T>) -> Result<()> {
    std::fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(path: &Path) -> Result<ParamStore<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add(
            "a.weight",
            Tensor::from_f64(&[2, 3], &[1.0, -2.0, 3.5, 0.0, 1e-3, 7.0]).unwrap(),
            ParamGroup::Encoder,
            ParamKind::Weight,
        );
        s.add("b", Tensor::scalar(0.25), ParamGroup::Decoder, ParamKind::Bias);
        s
    }

    #[test]
    fn known_layout() {
        let bytes = encode(&sample());
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..14], &8u16.to_le_bytes());
        assert_eq!(&bytes[14..22], b"a.weight");
        assert_eq!(bytes[22], 0);
        assert_eq!(bytes[23], 2);
        assert_eq!(&bytes[24..28], &2u32.to_le_bytes());
        assert_eq!(&bytes[32..36], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 12 + (2 + 8 + 2 + 8 + 24) + (2 + 1 + 2 + 4));
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode(&sample());
        assert!(decode::<f32>(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode::<f32>(&extra).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode::<f32>(&bad).is_err());
        let mut bad_dtype = bytes;
        bad_dtype[22] = 9;
        assert!(decode::<f32>(&bad_dtype).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_preserves_values(
            values in proptest::collection::vec(-1e6f64..1e6, 1..40),
            rows in 1usize..4,
        ) {
            let cols = values.len();
            let data: Vec<f64> = (0..rows).flat_map(|_| values.iter().copied()).collect();
            let mut s = ParamStore::<f64>::new();
            s.add("w", Tensor::from_f64(&[rows, cols], &data).unwrap(), ParamGroup::Encoder, ParamKind::Weight);
            let back: ParamStore<f64> = decode(&encode(&s)).unwrap();
            prop_assert_eq!(back.value(back.id("w").unwrap()), s.value(s.id("w").unwrap()));
        }

        #[test]
        fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let _ = decode::<f32>(&bytes);
        }
    }
}
