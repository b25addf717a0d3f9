use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::tensor::Tensor;
use super::{NumericsError, Real};

const WEIGHT_MAGIC: &[u8; 4] = b"SGAW";
const WEIGHT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    /// Position in the store, stable for the store's lifetime.
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensors of a model.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId, NumericsError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(NumericsError::Format(format!("duplicate parameter {name}")));
        }
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Writes every parameter whose name starts with `prefix` (all when
    /// empty) in the SGAW weight format.
    pub fn save(&self, path: &Path, prefix: &str) -> Result<(), NumericsError> {
        let bytes = self.to_bytes(prefix);
        std::fs::write(path, bytes).map_err(|e| NumericsError::Io(path.display().to_string(), e))
    }

    pub fn to_bytes(&self, prefix: &str) -> Vec<u8> {
        let selected: Vec<usize> = (0..self.values.len())
            .filter(|&i| self.names[i].starts_with(prefix))
            .collect();
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHT_MAGIC);
        out.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
        out.extend_from_slice(&(selected.len() as u32).to_le_bytes());
        for i in selected {
            let name = self.names[i].as_bytes();
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name);
            let t = &self.values[i];
            out.push(t.ndim() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        out
    }

    /// Overwrites matching parameters from an SGAW file. Every tensor in the
    /// file must name an existing parameter of identical shape. Returns the
    /// number of tensors loaded.
    pub fn load(&mut self, path: &Path) -> Result<usize, NumericsError> {
        let mut f = std::fs::File::open(path).map_err(|e| NumericsError::Io(path.display().to_string(), e))?;
        let mut bytes = Vec::new();
        f.read_to_end(&mut bytes)
            .map_err(|e| NumericsError::Io(path.display().to_string(), e))?;
        let tensors = read_weights(&bytes)?;
        let n = tensors.len();
        for (name, t) in tensors {
            let id = self
                .id(&name)
                .ok_or_else(|| NumericsError::Format(format!("unknown parameter {name} in weight file")))?;
            if self.values[id.0].shape() != t.shape() {
                return Err(NumericsError::Format(format!(
                    "parameter {name}: file shape {:?}, model shape {:?}",
                    t.shape(),
                    self.values[id.0].shape()
                )));
            }
            self.values[id.0] = t;
        }
        Ok(n)
    }

    pub fn write_to(&self, w: &mut impl Write, prefix: &str) -> std::io::Result<()> {
        w.write_all(&self.to_bytes(prefix))
    }
}

/// Parses an SGAW weight blob into named tensors, in file order.
pub fn read_weights(bytes: &[u8]) -> Result<Vec<(String, Tensor)>, NumericsError> {
    let mut r = Cursor { bytes, pos: 0 };
    if r.take(4)? != WEIGHT_MAGIC {
        return Err(NumericsError::Format("bad weight magic".into()));
    }
    let version = r.u32()?;
    if version != WEIGHT_VERSION {
        return Err(NumericsError::Format(format!("unsupported weight version {version}")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| NumericsError::Format("weight name is not UTF-8".into()))?;
        let ndim = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * 4)?;
        let data: Vec<Real> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as Real)
            .collect();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(NumericsError::NonFinite(format!("weight {name} holds NaN/Inf")));
        }
        out.push((name, Tensor::new(&shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(NumericsError::Format("trailing bytes after weights".into()));
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NumericsError> {
        if self.pos + n > self.bytes.len() {
            return Err(NumericsError::Format("truncated weight file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NumericsError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_blob_roundtrips_f32_values() {
        let mut s = ParamStore::new();
        s.insert("statt.block0.wq", Tensor::from_fn(&[2, 3], |i| i as Real * 0.5)).unwrap();
        s.insert("heads.bias", Tensor::from_fn(&[4], |i| -(i as Real))).unwrap();
        let bytes = s.to_bytes("");
        assert_eq!(&bytes[..4], b"SGAW");
        let back = read_weights(&bytes).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "statt.block0.wq");
        assert_eq!(&back[0].1, s.get(ParamId(0)));

        let only = read_weights(&s.to_bytes("statt.")).unwrap();
        assert_eq!(only.len(), 1);
    }

    #[test]
    fn load_rejects_shape_mismatch() {
        let mut a = ParamStore::new();
        a.insert("w", Tensor::zeros(&[2, 2])).unwrap();
        let mut b = ParamStore::new();
        b.insert("w", Tensor::zeros(&[3])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.sgaw");
        b.save(&p, "").unwrap();
        assert!(a.load(&p).is_err());
    }

    #[test]
    fn truncated_blob_is_an_error() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::zeros(&[8])).unwrap();
        let bytes = s.to_bytes("");
        assert!(read_weights(&bytes[..bytes.len() - 3]).is_err());
    }
}
