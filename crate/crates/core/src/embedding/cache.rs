//! Binary embedding cache.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PTEC"  u16 version  u32 dim  u64 count
//! count × { u32 key_len, key_len UTF-8 bytes, dim × f32 }
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::SentenceEmbedder;
use crate::error::{Error, Result};

pub const CACHE_MAGIC: &[u8; 4] = b"PTEC";
pub const CACHE_VERSION: u16 = 1;

#[derive(Clone, Debug, Default)]
pub struct CacheEmbedder {
    dim: usize,
    order: Vec<String>,
    vectors: HashMap<String, Vec<f32>>,
}

impl CacheEmbedder {
    pub fn from_entries(dim: usize, entries: Vec<(String, Vec<f32>)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::CacheFormat("dim must be >= 1".into()));
        }
        let mut cache = Self {
            dim,
            order: Vec::with_capacity(entries.len()),
            vectors: HashMap::with_capacity(entries.len()),
        };
        for (key, v) in entries {
            cache.insert(key, v)?;
        }
        Ok(cache)
    }

    fn insert(&mut self, key: String, v: Vec<f32>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::CacheFormat(format!(
                "vector for `{key}` has length {}, expected {}",
                v.len(),
                self.dim
            )));
        }
        if self.vectors.contains_key(&key) {
            return Err(Error::CacheFormat(format!("duplicate key `{key}`")));
        }
        self.order.push(key.clone());
        self.vectors.insert(key, v);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.vectors.contains_key(key)
    }

    /// Raw 32-bit vector as stored.
    pub fn raw(&self, key: &str) -> Option<&[f32]> {
        self.vectors.get(key).map(Vec::as_slice)
    }

    /// Entries in insertion (file) order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.order
            .iter()
            .map(move |k| (k.as_str(), self.vectors[k].as_slice()))
    }
}

impl SentenceEmbedder for CacheEmbedder {
    fn name(&self) -> &'static str {
        "cache"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn lookup(&self, sentence: &str) -> Option<Vec<f64>> {
        self.vectors
            .get(sentence)
            .map(|v| v.iter().map(|&x| x as f64).collect())
    }
}

pub fn write_cache<K: AsRef<str>, V: AsRef<[f32]>>(path: &Path, entries: &[(K, V)]) -> Result<()> {
    let dim = entries.first().map_or(0, |(_, v)| v.as_ref().len());
    for (k, v) in entries {
        if v.as_ref().len() != dim {
            return Err(Error::CacheFormat(format!(
                "vector for `{}` has length {}, expected {dim}",
                k.as_ref(),
                v.as_ref().len()
            )));
        }
    }
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(CACHE_MAGIC).map_err(io)?;
    w.write_all(&CACHE_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(dim as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&(entries.len() as u64).to_le_bytes()).map_err(io)?;
    for (k, v) in entries {
        let key = k.as_ref().as_bytes();
        w.write_all(&(key.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(key).map_err(io)?;
        for x in v.as_ref() {
            w.write_all(&x.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

fn read_exact<const N: usize>(r: &mut impl Read, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|_| Error::CacheFormat(format!("truncated file while reading {what}")))?;
    Ok(buf)
}

/// Sentence and vector pairs in file order.
pub type CacheEntries = Vec<(String, Vec<f32>)>;

/// Reads `(dim, entries)` in file order.
pub fn read_cache_entries(path: &Path) -> Result<(usize, CacheEntries)> {
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let magic: [u8; 4] = read_exact(&mut r, "magic")?;
    if &magic != CACHE_MAGIC {
        return Err(Error::CacheFormat(format!("bad magic {magic:?}")));
    }
    let version = u16::from_le_bytes(read_exact(&mut r, "version")?);
    if version != CACHE_VERSION {
        return Err(Error::CacheFormat(format!("unsupported version {version}")));
    }
    let dim = u32::from_le_bytes(read_exact(&mut r, "dim")?) as usize;
    let count = u64::from_le_bytes(read_exact(&mut r, "entry count")?);
    let mut entries = Vec::new();
    for i in 0..count {
        let key_len = u32::from_le_bytes(read_exact(&mut r, "key length")?) as usize;
        let mut key = vec![0u8; key_len];
        r.read_exact(&mut key)
            .map_err(|_| Error::CacheFormat(format!("truncated key in entry {i}")))?;
        let key = String::from_utf8(key)
            .map_err(|_| Error::CacheFormat(format!("entry {i} key is not UTF-8")))?;
        let mut v = Vec::with_capacity(dim);
        for _ in 0..dim {
            v.push(f32::from_le_bytes(read_exact(&mut r, "vector")?));
        }
        entries.push((key, v));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::CacheFormat("trailing bytes after last entry".into()));
    }
    Ok((dim, entries))
}

pub fn load_cache(path: &Path) -> Result<CacheEmbedder> {
    let (dim, entries) = read_cache_entries(path)?;
    CacheEmbedder::from_entries(dim, entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp() -> tempfile::NamedTempFile {
        tempfile::NamedTempFile::new().unwrap()
    }

    #[test]
    fn round_trip_ten_entries() {
        let entries: Vec<(String, Vec<f32>)> = (0..10)
            .map(|i| (format!("sentence {i}"), vec![i as f32, -0.5, 1e-30, f32::MAX]))
            .collect();
        let f = tmp();
        write_cache(f.path(), &entries).unwrap();
        let cache = load_cache(f.path()).unwrap();
        assert_eq!(cache.dim(), 4);
        let back: Vec<(String, Vec<f32>)> = cache
            .entries()
            .map(|(k, v)| (k.to_string(), v.to_vec()))
            .collect();
        assert_eq!(back, entries);
        assert_eq!(cache.lookup("sentence 3").unwrap()[0], 3.0);
    }

    #[test]
    fn header_layout_is_exact() {
        let f = tmp();
        write_cache(f.path(), &[("ab", vec![1.0f32])]).unwrap();
        let bytes = std::fs::read(f.path()).unwrap();
        let mut expected = Vec::new();
        expected.extend_from_slice(b"PTEC");
        expected.extend_from_slice(&1u16.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(b"ab");
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn wrong_magic_rejected() {
        let f = tmp();
        write_cache(f.path(), &[("a", vec![1.0f32, 2.0])]).unwrap();
        let mut bytes = std::fs::read(f.path()).unwrap();
        bytes[0] = b'X';
        std::fs::write(f.path(), &bytes).unwrap();
        assert!(matches!(load_cache(f.path()), Err(Error::CacheFormat(_))));
    }

    #[test]
    fn mismatched_vector_length_rejected() {
        let f = tmp();
        let err = write_cache(f.path(), &[("a", vec![1.0f32, 2.0]), ("b", vec![1.0])]).unwrap_err();
        assert!(matches!(err, Error::CacheFormat(_)));
        assert!(CacheEmbedder::from_entries(2, vec![("a".into(), vec![1.0])]).is_err());
    }

    #[test]
    fn truncated_file_rejected() {
        let f = tmp();
        write_cache(f.path(), &[("abc", vec![1.0f32, 2.0, 3.0])]).unwrap();
        let bytes = std::fs::read(f.path()).unwrap();
        std::fs::write(f.path(), &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(load_cache(f.path()), Err(Error::CacheFormat(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn round_trip_is_bit_exact(
            bits in proptest::collection::vec(proptest::collection::vec(any::<u32>(), 3), 1..8)
        ) {
            let entries: Vec<(String, Vec<f32>)> = bits
                .iter()
                .enumerate()
                .map(|(i, row)| {
                    let v = row.iter().map(|b| {
                        let x = f32::from_bits(*b);
                        if x.is_finite() { x } else { 0.0 }
                    }).collect();
                    (format!("k{i}"), v)
                })
                .collect();
            let f = tmp();
            write_cache(f.path(), &entries).unwrap();
            let (_, back) = read_cache_entries(f.path()).unwrap();
            for ((_, a), (_, b)) in entries.iter().zip(&back) {
                let ab: Vec<u32> = a.iter().map(|x| x.to_bits()).collect();
                let bb: Vec<u32> = b.iter().map(|x| x.to_bits()).collect();
                prop_assert_eq!(ab, bb);
            }
        }
    }
}
