//! `ASTT` tensor container.
//!
//! ```text
//! "ASTT" | version u32 = 1 | entry_count u32
//! per entry: name_len u32 | name (UTF-8) | dtype u8 (1 = f32, 2 = i8) | ndim u8
//!            | dims ndim x u32 | payload (row-major)
//! ```
//!
//! All integers and payloads are little-endian.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

pub const MAGIC: &[u8; 4] = b"ASTT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I8(Vec<i8>),
}

impl TensorData {
    pub fn dtype_code(&self) -> u8 {
        match self {
            TensorData::F32(_) => 1,
            TensorData::I8(_) => 2,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::I8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        if dims.len() > u8::MAX as usize {
            return Err(Error::Shape(format!(
                "{} dimensions exceed the format limit",
                dims.len()
            )));
        }
        if dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::Shape(format!("dimension in {dims:?} exceeds u32")));
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Shape(format!("element count of {dims:?} overflows")))?;
        if count != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {count} values, got {}",
                data.len()
            )));
        }
        if let TensorData::F32(v) = &data {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Argument("float32 tensor contains NaN or Inf".into()));
            }
        }
        Ok(Self { dims, data })
    }

    /// Stores a matrix as float32, rounding each entry to nearest.
    pub fn from_matrix(m: &DenseMatrix) -> Result<Self> {
        let data: Vec<f32> = m.data().iter().map(|&x| x as f32).collect();
        Self::new(vec![m.rows(), m.cols()], TensorData::F32(data))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    /// Widens a 2-D float32 tensor to a [`DenseMatrix`].
    pub fn to_matrix(&self) -> Result<DenseMatrix> {
        let (TensorData::F32(v), [r, c]) = (&self.data, self.dims.as_slice()) else {
            return Err(Error::Shape(format!(
                "expected a 2-D float32 tensor, got dtype {} with dims {:?}",
                self.data.dtype_code(),
                self.dims
            )));
        };
        DenseMatrix::new_finite(*r, *c, v.iter().map(|&x| x as f64).collect())
    }
}

/// Ordered collection of uniquely named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorContainer {
    entries: Vec<(String, Tensor)>,
}

impl TensorContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::Argument(format!("duplicate tensor name {name:?}")));
        }
        if name.len() > u32::MAX as usize {
            return Err(Error::Argument("tensor name too long".into()));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Like [`get`](Self::get) but reports a missing entry as an error.
    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Argument(format!("container has no tensor named {name:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.data.dtype_code());
            out.push(t.dims.len() as u8);
            for &d in &t.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            match &t.data {
                TensorData::F32(v) => v
                    .iter()
                    .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::I8(v) => out.extend(v.iter().map(|&x| x as u8)),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(r.error_at(0, format!("bad magic {magic:02x?}")));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(r.error_at(4, format!("unsupported version {version}")));
        }
        let count = r.u32("entry count")?;
        let mut c = TensorContainer::new();
        for e in 0..count {
            let start = r.pos;
            let name_len = r.u32(&format!("name length of entry {e}"))? as usize;
            let name_bytes = r.take(name_len, &format!("name of entry {e}"))?;
            let name = std::str::from_utf8(name_bytes)
                .map_err(|_| {
                    r.error_at(start + 4, format!("name of entry {e} is not valid UTF-8"))
                })?
                .to_string();
            let ctx = format!("entry {name:?}");
            let dtype_at = r.pos;
            let dtype = r.u8(&format!("dtype of {ctx}"))?;
            let ndim = r.u8(&format!("ndim of {ctx}"))? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.u32(&format!("dims of {ctx}"))? as usize);
            }
            let count = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| {
                    r.error_at(dtype_at + 2, format!("element count of {ctx} overflows"))
                })?;
            let data = match dtype {
                1 => {
                    let len = count.checked_mul(4).ok_or_else(|| {
                        r.error_at(dtype_at + 2, format!("payload size of {ctx} overflows"))
                    })?;
                    let payload_at = r.pos;
                    let raw = r.take(len, &format!("payload of {ctx}"))?;
                    let v: Vec<f32> = raw
                        .chunks_exact(4)
                        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                        .collect();
                    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                        return Err(r.error_at(
                            payload_at + 4 * i,
                            format!("non-finite float32 in payload of {ctx}"),
                        ));
                    }
                    TensorData::F32(v)
                }
                2 => TensorData::I8(
                    r.take(count, &format!("payload of {ctx}"))?
                        .iter()
                        .map(|&b| b as i8)
                        .collect(),
                ),
                other => {
                    return Err(r.error_at(dtype_at, format!("unknown dtype {other} in {ctx}")))
                }
            };
            if c.get(&name).is_some() {
                return Err(r.error_at(start, format!("duplicate {ctx}")));
            }
            c.entries.push((name, Tensor { dims, data }));
        }
        if r.pos != bytes.len() {
            return Err(r.error_at(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(c)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }
}

/// Writes to a temporary file in the target directory, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn error_at(&self, offset: usize, message: String) -> Error {
        Error::Format {
            offset: offset as u64,
            message,
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let avail = self.bytes.len() - self.pos;
        if n > avail {
            return Err(self.error_at(
                self.pos,
                format!("truncated {what}: need {n} bytes, {avail} left"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
