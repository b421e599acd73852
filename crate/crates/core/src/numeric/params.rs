use std::collections::BTreeMap;

use super::{NumericError, Result, Tensor};

/// Magic bytes opening a serialized [`ParamStore`].
pub const BLOB_MAGIC: &[u8; 4] = b"MFW1";

/// Named parameter tensors in lexicographic path order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params(BTreeMap<String, Tensor>);

/// Gradient tensors keyed like [`Params`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Grads(BTreeMap<String, Tensor>);

impl Params {
    pub fn get(&self, path: &str) -> Result<&Tensor> {
        self.0
            .get(path)
            .ok_or_else(|| NumericError::UnknownParam(path.to_string()))
    }

    pub fn get_mut(&mut self, path: &str) -> Result<&mut Tensor> {
        self.0
            .get_mut(path)
            .ok_or_else(|| NumericError::UnknownParam(path.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.0.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.0.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.0.values().map(Tensor::len).sum()
    }
}

impl Grads {
    pub fn zeros_like(params: &Params) -> Self {
        Self(params.iter().map(|(k, v)| (k.clone(), Tensor::zeros_like(v))).collect())
    }

    pub fn get(&self, path: &str) -> Option<&Tensor> {
        self.0.get(path)
    }

    /// Adds `grad` into slot `path`, creating it if absent.
    pub fn accumulate(&mut self, path: &str, grad: &Tensor) -> Result<()> {
        match self.0.get_mut(path) {
            Some(slot) => slot.add_assign(grad),
            None => {
                self.0.insert(path.to_string(), grad.clone());
                Ok(())
            }
        }
    }

    pub fn add_all(&mut self, other: &Grads) -> Result<()> {
        for (k, v) in &other.0 {
            self.accumulate(k, v)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        self.0.values_mut().for_each(|t| t.scale(k));
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.0.iter()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.values().flat_map(|t| t.data().iter().copied()).collect()
    }
}

/// Trainable parameters plus one gradient slot of identical shape per parameter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Params,
    grads: Grads,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter and a zeroed gradient slot; replaces any previous entry.
    pub fn insert(&mut self, path: impl Into<String>, value: Tensor) {
        let path = path.into();
        self.grads.0.insert(path.clone(), Tensor::zeros_like(&value));
        self.params.0.insert(path, value);
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn grads(&self) -> &Grads {
        &self.grads
    }

    pub fn get(&self, path: &str) -> Result<&Tensor> {
        self.params.get(path)
    }

    pub fn grad(&self, path: &str) -> Result<&Tensor> {
        self.grads
            .0
            .get(path)
            .ok_or_else(|| NumericError::MissingGradient(path.to_string()))
    }

    pub(crate) fn split_mut(&mut self) -> (&mut Params, &mut Grads) {
        (&mut self.params, &mut self.grads)
    }

    /// Adds externally computed gradients into the store's slots.
    pub fn accumulate_grads(&mut self, grads: &Grads) -> Result<()> {
        for (k, v) in grads.iter() {
            let slot = self
                .grads
                .0
                .get_mut(k)
                .ok_or_else(|| NumericError::UnknownParam(k.clone()))?;
            slot.add_assign(v)?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for t in self.grads.0.values_mut() {
            t.data_mut().fill(0.0);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.params.0.values().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn flatten_grads(&self) -> Vec<f64> {
        self.grads.flatten()
    }

    /// Overwrites every parameter from a vector laid out like [`flatten`](Self::flatten).
    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.num_scalars();
        if flat.len() != expected {
            return Err(NumericError::FlatLength {
                expected,
                got: flat.len(),
            });
        }
        let mut at = 0;
        for t in self.params.0.values_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    /// Binary blob: magic, u32 slot count, then per slot a u32 path length,
    /// path bytes, u32 rank, u64 dims and little-endian f64 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.num_scalars() * 8);
        out.extend_from_slice(BLOB_MAGIC);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (path, t) in self.params.iter() {
            out.extend_from_slice(&(path.len() as u32).to_le_bytes());
            out.extend_from_slice(path.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != BLOB_MAGIC {
            return Err(NumericError::Blob("bad magic".into()));
        }
        let count = r.u32()?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let path = std::str::from_utf8(r.take(len)?)
                .map_err(|_| NumericError::Blob("path is not utf-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            store.insert(path, Tensor::new(shape, data)?);
        }
        if r.at != bytes.len() {
            return Err(NumericError::Blob(format!("{} trailing bytes", bytes.len() - r.at)));
        }
        Ok(store)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            return Err(NumericError::Blob("truncated".into()));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("zeta.w", Tensor::matrix(2, 2, vec![1.0, -2.0, 3.5, 0.25]).unwrap());
        s.insert("alpha.b", Tensor::vector(vec![9.0]));
        s
    }

    #[test]
    fn iteration_is_lexicographic() {
        let s = sample();
        let paths: Vec<_> = s.params().iter().map(|(k, _)| k.as_str()).collect();
        assert_eq!(paths, ["alpha.b", "zeta.w"]);
        assert_eq!(s.flatten(), vec![9.0, 1.0, -2.0, 3.5, 0.25]);
    }

    #[test]
    fn every_param_has_matching_grad_slot() {
        let s = sample();
        for (k, v) in s.params().iter() {
            assert_eq!(s.grad(k).unwrap().shape(), v.shape());
        }
    }

    #[test]
    fn blob_starts_with_magic_and_round_trips() {
        let s = sample();
        let bytes = s.to_bytes();
        assert_eq!(&bytes[..4], b"MFW1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        assert_eq!(ParamStore::from_bytes(&bytes).unwrap(), s);
        assert!(ParamStore::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn flatten_unflatten_is_identity(values in proptest::collection::vec(-1e6f64..1e6, 5)) {
            let mut s = sample();
            s.unflatten(&values).unwrap();
            prop_assert_eq!(s.flatten(), values.clone());
            let back = ParamStore::from_bytes(&s.to_bytes()).unwrap();
            prop_assert_eq!(back.flatten(), values);
        }
    }
}
