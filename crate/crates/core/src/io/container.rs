//! `PIPW` named-tensor container.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic   b"PIPW"
//! version u32 (= 1)
//! count   u32
//! count x { name_len u32, name [u8; name_len] (UTF-8),
//!           rank u32, dims [u32; rank], data [f32; prod(dims)] }
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"PIPW";
pub const VERSION: u32 = 1;

/// Refuse allocations beyond this many elements per tensor.
const MAX_ELEMENTS: u64 = 1 << 28;
const MAX_RANK: u32 = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                expected: format!("{dims:?} ({n} values)"),
                actual: format!("{} values", data.len()),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn from_f64(dims: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(dims, data.iter().map(|&v| v as f32).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

/// Tensors keyed by name; iteration (and serialization) order is sorted.
pub type TensorSet = BTreeMap<String, Tensor>;

pub fn encode(tensors: &TensorSet) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32_of(tensors.len(), "tensor count")?.to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&u32_of(name.len(), "name length")?.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&u32_of(t.dims.len(), "rank")?.to_le_bytes());
        for &d in &t.dims {
            out.extend_from_slice(&u32_of(d, "dimension")?.to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn u32_of(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Container(format!("{what} {n} does not fit in u32")))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Container(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<TensorSet> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Container(format!("bad magic {magic:?}, expected \"PIPW\"")));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Container(format!("unsupported version {version}")));
    }
    let count = r.u32("tensor count")?;
    let mut tensors = TensorSet::new();
    for i in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Container(format!("tensor {i}: name is not UTF-8")))?
            .to_owned();
        let rank = r.u32("rank")?;
        if rank > MAX_RANK {
            return Err(Error::Container(format!(
                "tensor {name:?}: rank {rank} exceeds {MAX_RANK}"
            )));
        }
        let mut dims = Vec::with_capacity(rank as usize);
        let mut elements: u64 = 1;
        for _ in 0..rank {
            let d = r.u32("dimension")?;
            elements = elements
                .checked_mul(d as u64)
                .filter(|&e| e <= MAX_ELEMENTS)
                .ok_or_else(|| Error::Container(format!("tensor {name:?}: dimensions overflow")))?;
            dims.push(d as usize);
        }
        let bytes = r.take(elements as usize * 4, "tensor data")?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if tensors.insert(name.clone(), Tensor { dims, data }).is_some() {
            return Err(Error::Container(format!("duplicate tensor {name:?}")));
        }
    }
    if r.pos != buf.len() {
        return Err(Error::Container(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(tensors)
}

pub fn save_weights(path: impl AsRef<Path>, tensors: &TensorSet) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(tensors)?).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<TensorSet> {
    let path = path.as_ref();
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> TensorSet {
        let mut t = TensorSet::new();
        t.insert(
            "a".into(),
            Tensor::new(vec![2, 3], vec![1.0, -2.5, 3.0, f32::MIN_POSITIVE, 0.0, -0.0]).unwrap(),
        );
        t.insert("scalar".into(), Tensor::new(vec![], vec![7.0]).unwrap());
        t
    }

    #[test]
    fn layout_is_as_documented() {
        let mut t = TensorSet::new();
        t.insert("w".into(), Tensor::new(vec![2], vec![1.0, -1.0]).unwrap());
        let b = encode(&t).unwrap();
        let mut expect = b"PIPW".to_vec();
        for v in [1u32, 1, 1] {
            expect.extend_from_slice(&v.to_le_bytes());
        }
        expect.push(b'w');
        for v in [1u32, 2] {
            expect.extend_from_slice(&v.to_le_bytes());
        }
        expect.extend_from_slice(&1.0f32.to_le_bytes());
        expect.extend_from_slice(&(-1.0f32).to_le_bytes());
        assert_eq!(b, expect);
    }

    #[test]
    fn file_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.pipw");
        save_weights(&p, &sample()).unwrap();
        let back = load_weights(&p).unwrap();
        assert_eq!(encode(&back).unwrap(), std::fs::read(&p).unwrap());
        assert_eq!(back["a"].data[4].to_bits(), 0.0f32.to_bits());
        assert_eq!(back["a"].data[5].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn corrupted_magic() {
        let mut b = encode(&sample()).unwrap();
        b[0] = b'X';
        assert!(matches!(decode(&b), Err(Error::Container(m)) if m.contains("magic")));
    }

    #[test]
    fn unknown_version() {
        let mut b = encode(&sample()).unwrap();
        b[4] = 2;
        assert!(matches!(decode(&b), Err(Error::Container(m)) if m.contains("version")));
    }

    #[test]
    fn truncation_is_detected_everywhere() {
        let b = encode(&sample()).unwrap();
        for n in 0..b.len() {
            assert!(decode(&b[..n]).is_err(), "prefix {n}");
        }
    }

    #[test]
    fn dim_overflow() {
        let mut b = b"PIPW".to_vec();
        for v in [1u32, 1, 1, b'x' as u32] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b.truncate(16);
        b.push(b'x');
        for v in [2u32, u32::MAX, u32::MAX] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(decode(&b), Err(Error::Container(m)) if m.contains("overflow")));
    }

    proptest! {
        #[test]
        fn arbitrary_sets_round_trip(
            entries in prop::collection::btree_map("[a-z.0-9]{1,12}", prop::collection::vec(any::<f32>(), 0..20), 0..5)
        ) {
            let set: TensorSet = entries
                .into_iter()
                .map(|(k, v)| (k, Tensor::new(vec![v.len()], v).unwrap()))
                .collect();
            let bytes = encode(&set).unwrap();
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(encode(&back).unwrap(), bytes);
        }
    }
}
