use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::{NnError, Tensor};

const MAGIC: &[u8; 4] = b"FTPS";
const FORMAT_VERSION: u32 = 1;

/// Named tensors with a lexicographic canonical order.
///
/// The order is what makes flattening, noising and digests reproducible, so
/// every traversal goes through the underlying `BTreeMap`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<(), NnError> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(NnError::DuplicateName(name));
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, NnError> {
        self.tensors
            .get(name)
            .ok_or_else(|| NnError::MissingTensor(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, NnError> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| NnError::MissingTensor(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    /// True when both sets have the same names and per-name shapes.
    pub fn congruent(&self, other: &ParamSet) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((ka, va), (kb, vb))| ka == kb && va.shape() == vb.shape())
    }

    pub fn ensure_congruent(&self, other: &ParamSet) -> Result<(), NnError> {
        if self.congruent(other) {
            return Ok(());
        }
        for (name, t) in &self.tensors {
            match other.tensors.get(name) {
                None => return Err(NnError::MissingTensor(name.clone())),
                Some(o) if o.shape() != t.shape() => {
                    return Err(NnError::ShapeMismatch(format!(
                        "{name}: {:?} vs {:?}",
                        t.shape(),
                        o.shape()
                    )))
                }
                _ => {}
            }
        }
        let extra = other
            .tensors
            .keys()
            .find(|k| !self.tensors.contains_key(*k))
            .cloned()
            .unwrap_or_default();
        Err(NnError::MissingTensor(extra))
    }

    /// All values in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_values());
        for t in self.tensors.values() {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten) using `self` as the shape template.
    pub fn unflatten(&self, values: &[f64]) -> Result<ParamSet, NnError> {
        if values.len() != self.num_values() {
            return Err(NnError::ShapeMismatch(format!(
                "unflatten: template holds {} values, got {}",
                self.num_values(),
                values.len()
            )));
        }
        let mut offset = 0;
        let mut tensors = BTreeMap::new();
        for (name, t) in &self.tensors {
            let n = t.len();
            tensors.insert(
                name.clone(),
                Tensor::new(t.shape().to_vec(), values[offset..offset + n].to_vec())?,
            );
            offset += n;
        }
        Ok(ParamSet { tensors })
    }

    /// Binary encoding: magic, version, count, then per tensor in canonical
    /// order `name_len:u32, name, rank:u32, dims:u64*, values:f64*`, all
    /// little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + self.num_values() * 8);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ParamSet, NnError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(NnError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(NnError::Format(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut set = ParamSet::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|e| NnError::Format(format!("tensor name: {e}")))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
            }
            set.insert(name, Tensor::new(shape, data)?)?;
        }
        if r.pos != bytes.len() {
            return Err(NnError::Format("trailing bytes".into()));
        }
        Ok(set)
    }

    /// Hex SHA-256 of the binary encoding.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| NnError::Format("truncated input".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Gradients keyed and shaped exactly like the [`ParamSet`] they differentiate.
#[derive(Clone, Debug, PartialEq)]
pub struct GradSet {
    grads: ParamSet,
}

impl GradSet {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Self {
            grads: params.zeros_like(),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, NnError> {
        self.grads.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, NnError> {
        self.grads.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.grads.iter()
    }

    pub fn ensure_congruent(&self, params: &ParamSet) -> Result<(), NnError> {
        self.grads.ensure_congruent(params)
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.grads.flatten()
    }

    pub fn max_abs(&self) -> f64 {
        self.grads.iter().fold(0.0, |m, (_, t)| m.max(t.max_abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.grads.iter().map(|(_, t)| t.data().iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the
    /// pre-clip norm.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.l2_norm();
        if norm > max_norm {
            let s = max_norm / norm;
            for (_, t) in self.grads.iter_mut() {
                t.scale(s);
            }
        }
        norm
    }

    pub fn add_assign(&mut self, other: &GradSet) -> Result<(), NnError> {
        self.grads.ensure_congruent(&other.grads)?;
        for (name, t) in self.grads.iter_mut() {
            t.add_assign(other.grads.get(name)?)?;
        }
        Ok(())
    }

    pub fn as_params(&self) -> &ParamSet {
        &self.grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("b", Tensor::vector(vec![1.5, -2.0])).unwrap();
        p.insert("a", Tensor::matrix(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap())
            .unwrap();
        p
    }

    #[test]
    fn clip_norm_rescales_only_above_bound() {
        let p = sample();
        let mut g = GradSet::zeros_like(&p);
        g.get_mut("b").unwrap().data_mut().copy_from_slice(&[3.0, 4.0]);
        assert_eq!(g.clone().clip_norm(10.0), 5.0);
        assert_eq!(g.l2_norm(), 5.0);
        g.clip_norm(1.0);
        assert!((g.l2_norm() - 1.0).abs() < 1e-15);
        let b = g.get("b").unwrap().data();
        assert!((b[0] - 0.6).abs() < 1e-15 && (b[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn canonical_order_is_lexicographic() {
        let p = sample();
        assert_eq!(p.names().collect::<Vec<_>>(), vec!["a", "b"]);
        assert_eq!(p.flatten(), vec![0.1, 0.2, 0.3, 0.4, 1.5, -2.0]);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = sample();
        assert!(matches!(
            p.insert("a", Tensor::scalar(0.0)),
            Err(NnError::DuplicateName(_))
        ));
    }

    #[test]
    fn binary_roundtrip_and_corruption() {
        let p = sample();
        let bytes = p.to_bytes();
        assert_eq!(&bytes[..4], b"FTPS");
        assert_eq!(ParamSet::from_bytes(&bytes).unwrap(), p);
        assert!(ParamSet::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ParamSet::from_bytes(&bad).is_err());
    }

    #[test]
    fn digest_changes_with_values() {
        let p = sample();
        let mut q = p.clone();
        q.get_mut("b").unwrap().data_mut()[0] = 1.5000000001;
        assert_ne!(p.digest(), q.digest());
        assert_eq!(p.digest(), sample().digest());
    }
}
