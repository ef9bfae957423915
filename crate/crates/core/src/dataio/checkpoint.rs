//! FCKP: named f64 tensors plus a JSON metadata block.
//!
//! ```text
//! "FCKP" | u32 version | u32 meta_len | meta_len × UTF-8 JSON | u32 count
//! count × ( u16 name_len | name | u32 rank | rank × u64 dim | Π dims × f64 )
//! ```

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{put_string, read_file_bytes, write_file_bytes, ByteReader};
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

pub const FCKP_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"FCKP";

/// Tensors are written in name order, so equal stores give equal bytes.
pub fn encode_checkpoint<M: Serialize>(params: &ParamStore, meta: &M) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(meta)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FCKP_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        put_string(&mut out, name, "tensor name")?;
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint<M: DeserializeOwned>(bytes: &[u8]) -> Result<(M, ParamStore)> {
    let mut r = ByteReader::new(bytes, "FCKP");
    r.magic(MAGIC)?;
    let at = r.offset();
    let version = r.u32("version")?;
    if version != FCKP_VERSION {
        return Err(r.error_at(at, format!("unsupported version {version}")));
    }
    let meta_len = r.u32("metadata length")? as usize;
    let at = r.offset();
    let meta: M = serde_json::from_slice(r.take(meta_len, "metadata")?)
        .map_err(|e| r.error_at(at, format!("metadata JSON: {e}")))?;
    let count = r.u32("tensor count")?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let at = r.offset();
        let name = r.string("tensor name")?;
        let rank = r.u32("rank")? as usize;
        if rank == 0 || rank > 8 {
            return Err(r.error_at(at, format!("tensor `{name}` has unsupported rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("dimension")? as usize);
        }
        let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let n = n
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| r.error_at(at, format!("tensor `{name}` shape {shape:?} overflows")))?;
        let data = r
            .take(n, "tensor data")?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| r.error_at(at, format!("tensor `{name}`: {e}")))?;
        if params.contains(&name) {
            return Err(r.error_at(at, format!("duplicate tensor `{name}`")));
        }
        params.set(name, t);
    }
    r.finish()?;
    Ok((meta, params))
}

pub fn write_checkpoint<M: Serialize>(path: &Path, params: &ParamStore, meta: &M) -> Result<()> {
    write_file_bytes(path, &encode_checkpoint(params, meta)?)
}

pub fn read_checkpoint<M: DeserializeOwned>(path: &Path) -> Result<(M, ParamStore)> {
    decode_checkpoint(&read_file_bytes(path)?).map_err(|e| match e {
        Error::Format { .. } => Error::Checkpoint(format!("{}: {e}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::{json, Value};

    fn store(entries: &[(&str, Vec<usize>, Vec<f64>)]) -> ParamStore {
        let mut s = ParamStore::new();
        for (n, sh, d) in entries {
            s.insert(*n, Tensor::new(sh.clone(), d.clone()).unwrap()).unwrap();
        }
        s
    }

    #[test]
    fn round_trip_with_meta() {
        let s = store(&[("a.w", vec![2, 2], vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5]), ("k", vec![1], vec![0.25])]);
        let meta = json!({"stage": 1, "seed": 7});
        let b = encode_checkpoint(&s, &meta).unwrap();
        let (m, back): (Value, ParamStore) = decode_checkpoint(&b).unwrap();
        assert_eq!(m, meta);
        assert_eq!(encode_checkpoint(&back, &m).unwrap(), b);
    }

    #[test]
    fn corrupt_inputs() {
        let s = store(&[("a", vec![3], vec![1.0, 2.0, 3.0])]);
        let b = encode_checkpoint(&s, &json!({})).unwrap();
        let mut bad = b.clone();
        bad[1] = b'X';
        assert!(matches!(decode_checkpoint::<Value>(&bad), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(
            decode_checkpoint::<Value>(&b[..b.len() - 3]),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn read_reports_checkpoint_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.fckp");
        std::fs::write(&p, b"FCK").unwrap();
        assert!(matches!(read_checkpoint::<Value>(&p), Err(Error::Checkpoint(_))));
    }

    proptest! {
        #[test]
        fn random_stores_round_trip(
            tensors in proptest::collection::btree_map("[a-z.]{1,10}", (proptest::collection::vec(1usize..4, 1..3), proptest::collection::vec(any::<u64>(), 27)), 0..6),
            seed in any::<u64>(),
        ) {
            let mut s = ParamStore::new();
            for (name, (shape, raw)) in tensors {
                let n: usize = shape.iter().product();
                let data = (0..n).map(|i| f64::from_bits(raw[i])).collect();
                s.insert(name, Tensor::new(shape, data).unwrap()).unwrap();
            }
            let meta = json!({"seed": seed});
            let b = encode_checkpoint(&s, &meta).unwrap();
            let (m, back): (Value, ParamStore) = decode_checkpoint(&b).unwrap();
            prop_assert_eq!(&m, &meta);
            let a: Vec<u64> = s.iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect();
            let c: Vec<u64> = back.iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect();
            prop_assert_eq!(a, c);
            prop_assert_eq!(encode_checkpoint(&back, &m).unwrap(), b);
        }
    }
}
