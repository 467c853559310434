use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::{ArraySource, DenseArray, NumError, Real};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"IGWT";
pub const WEIGHTS_VERSION: u32 = 1;

/// Named parameter arrays, iterated in name order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T = f32> {
    arrays: BTreeMap<String, DenseArray<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { arrays: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &str, value: DenseArray<T>) {
        self.arrays.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<&DenseArray<T>> {
        self.arrays.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut DenseArray<T>> {
        self.arrays.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&DenseArray<T>, NumError> {
        self.get(name).ok_or_else(|| NumError::Param { name: name.into(), msg: "missing".into() })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &DenseArray<T>)> {
        self.arrays.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.arrays.keys()
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.arrays.values().map(|a| a.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore { arrays: self.arrays.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    /// Copies every entry of `other` under `prefix`.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ParamStore<T>) {
        for (k, v) in &other.arrays {
            self.arrays.insert(format!("{prefix}{k}"), v.clone());
        }
    }

    /// Entries whose names start with `prefix`, with the prefix removed.
    pub fn strip_prefix(&self, prefix: &str) -> ParamStore<T> {
        ParamStore {
            arrays: self
                .arrays
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.arrays.values().all(|a| a.is_finite())
    }
}

impl<T> ArraySource<T> for ParamStore<T> {
    fn lookup(&self, name: &str) -> Option<&DenseArray<T>> {
        self.arrays.get(name)
    }
}

/// Serializes `params` as an IGWT container.
pub fn write_weights(params: &ParamStore<f32>, mut w: impl Write) -> Result<(), NumError> {
    w.write_all(WEIGHTS_MAGIC)?;
    w.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
    for (name, arr) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(arr.rank() as u32).to_le_bytes())?;
        for &d in arr.dims() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(arr.len() * 4);
        for v in arr.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn take<'a>(buf: &'a [u8], pos: &mut usize, n: usize, what: &str) -> Result<&'a [u8], NumError> {
    if buf.len() - *pos < n {
        return Err(NumError::Format(format!("truncated while reading {what}")));
    }
    let s = &buf[*pos..*pos + n];
    *pos += n;
    Ok(s)
}

fn take_u32(buf: &[u8], pos: &mut usize, what: &str) -> Result<u32, NumError> {
    let b = take(buf, pos, 4, what)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

/// Parses an IGWT container.
pub fn read_weights(mut r: impl Read) -> Result<ParamStore<f32>, NumError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut pos = 0;
    if take(&buf, &mut pos, 4, "magic")? != WEIGHTS_MAGIC {
        return Err(NumError::Format("bad magic".into()));
    }
    let version = take_u32(&buf, &mut pos, "version")?;
    if version != WEIGHTS_VERSION {
        return Err(NumError::Format(format!("unsupported version {version}")));
    }
    let mut store = ParamStore::new();
    while pos < buf.len() {
        let nlen = take_u32(&buf, &mut pos, "name length")? as usize;
        let name = std::str::from_utf8(take(&buf, &mut pos, nlen, "name")?)
            .map_err(|_| NumError::Format("name is not UTF-8".into()))?
            .to_string();
        let rank = take_u32(&buf, &mut pos, "rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(take_u32(&buf, &mut pos, "dims")? as usize);
        }
        let n: usize = dims.iter().product();
        let raw = take(&buf, &mut pos, n * 4, "data")?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let arr = DenseArray::new(dims, data).map_err(|e| NumError::Format(format!("record '{name}': {e}")))?;
        if store.get(&name).is_some() {
            return Err(NumError::Format(format!("duplicate record '{name}'")));
        }
        store.insert(&name, arr);
    }
    Ok(store)
}
