//! `TLVEC1` vector files: magic, `n` and `d` as u64, `n*d` f32 row-major,
//! then `n` ids, each a u64 byte length followed by UTF-8.

use std::collections::HashSet;
use std::path::Path;

use super::atomic_write;
use super::binary::{put_f32s, put_u64, ByteReader};
use crate::error::Result;
use crate::vector::VectorStore;
use crate::Scalar;

pub const VECTOR_MAGIC: &[u8; 6] = b"TLVEC1";

pub fn read_vectors<T: Scalar>(path: &Path) -> Result<VectorStore<T>> {
    let mut r = ByteReader::open(path)?;
    r.magic(VECTOR_MAGIC)?;
    let n = r.count("row count")?;
    let d_at = r.offset();
    let d = r.count("dimension")?;
    if d == 0 {
        return Err(r.fail(d_at, "dimension must be at least 1"));
    }
    let values = n
        .checked_mul(d)
        .ok_or_else(|| r.fail(d_at, "n*d overflows"))?;
    let data = r.f32s(values, "vector payload")?;
    let mut ids = Vec::with_capacity(n);
    let mut seen = HashSet::with_capacity(n);
    for _ in 0..n {
        let at = r.offset();
        let len = r.count("id length")?;
        let bytes = r.take(len, "id")?.to_vec();
        let id = String::from_utf8(bytes)
            .map_err(|e| r.fail(at + 8 + e.utf8_error().valid_up_to(), "id is not valid UTF-8"))?;
        if !seen.insert(id.clone()) {
            return Err(r.fail(at, format!("duplicate id '{id}'")));
        }
        ids.push(id);
    }
    r.finish()?;
    let data = data.into_iter().map(|v| T::from_f64_lossy(v as f64)).collect();
    VectorStore::new(d, data, ids)
}

/// Values are stored as f32 whatever the store's scalar type.
pub fn write_vectors<T: Scalar>(store: &VectorStore<T>, path: &Path) -> Result<()> {
    atomic_write(path, |w| {
        w.write_all(VECTOR_MAGIC)?;
        put_u64(w, store.len() as u64)?;
        put_u64(w, store.dim() as u64)?;
        put_f32s(w, store.as_slice().iter().map(|v| v.to_f64_lossy() as f32))?;
        for id in store.ids() {
            put_u64(w, id.len() as u64)?;
            w.write_all(id.as_bytes())?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;

    fn sample() -> VectorStore<f32> {
        let data: Vec<f32> = (0..40).map(|i| (i as f32 * 0.37).sin()).collect();
        let ids = (0..10).map(|i| format!("doc-{i}")).collect();
        VectorStore::new(4, data, ids).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.bin");
        let s = sample();
        write_vectors(&s, &path).unwrap();
        let back: VectorStore<f32> = read_vectors(&path).unwrap();
        assert_eq!(back.ids(), s.ids());
        let a: Vec<u32> = s.as_slice().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.as_slice().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn hand_built_file_parses() {
        let mut bytes = b"TLVEC1".to_vec();
        bytes.extend(3u64.to_le_bytes());
        bytes.extend(2u64.to_le_bytes());
        for v in [1.0f32, 0.0, 0.0, 1.0, 0.5, -0.5] {
            bytes.extend(v.to_le_bytes());
        }
        for id in ["a", "bb", "ccc"] {
            bytes.extend((id.len() as u64).to_le_bytes());
            bytes.extend(id.as_bytes());
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.bin");
        std::fs::write(&path, &bytes).unwrap();
        let s: VectorStore<f64> = read_vectors(&path).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.ids(), ["a", "bb", "ccc"]);
        assert_eq!(s.as_slice(), &[1.0, 0.0, 0.0, 1.0, 0.5, -0.5]);
    }

    fn corrupt(mutate: impl FnOnce(&mut Vec<u8>)) -> Error {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.bin");
        write_vectors(&sample(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        mutate(&mut bytes);
        std::fs::write(&path, &bytes).unwrap();
        read_vectors::<f32>(&path).unwrap_err()
    }

    #[test]
    fn header_claiming_extra_row_is_truncation() {
        let err = corrupt(|b| b[6..14].copy_from_slice(&11u64.to_le_bytes()));
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }

    #[test]
    fn malformed_files_report_offsets() {
        let err = corrupt(|b| b[0] = b'X');
        assert!(matches!(err, Error::Format { offset: 0, .. }));
        let err = corrupt(|b| b.truncate(b.len() - 1));
        assert!(matches!(err, Error::Format { .. }));
        let err = corrupt(|b| b.push(0));
        assert!(matches!(err, Error::Format { .. }));
        let err = corrupt(|b| b[22..26].copy_from_slice(&f32::NAN.to_le_bytes()));
        assert!(matches!(err, Error::Format { offset: 22, .. }), "{err}");
    }

    #[test]
    fn failed_write_leaves_no_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("missing").join("v.bin");
        assert!(write_vectors(&sample(), &path).is_err());
        assert!(!path.exists());
    }
}
