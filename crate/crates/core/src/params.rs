//! Named parameter collections and gradient maps.

use std::fmt;

use indexmap::IndexMap;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Which half of the two-part model a parameter set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Representation network (shared encoder).
    Rln,
    /// Prediction network (per-task head).
    Pln,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Rln => "rln",
            Role::Pln => "pln",
        })
    }
}

/// Ordered map from parameter name to tensor.
///
/// Equality compares role and entries only; the optimizer lineage stamp is
/// bookkeeping.
#[derive(Debug, Clone)]
pub struct ParamSet {
    role: Role,
    entries: IndexMap<String, Tensor>,
    pub(crate) lineage: Option<(u64, u64)>,
}

impl PartialEq for ParamSet {
    fn eq(&self, other: &Self) -> bool {
        self.role == other.role && self.entries == other.entries
    }
}

impl ParamSet {
    pub fn new(role: Role) -> Self {
        Self {
            role,
            entries: IndexMap::new(),
            lineage: None,
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name `{name}`")));
        }
        self.entries.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_owned()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar coordinates.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.entries
            .values()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    /// A copy of `self` whose coordinates are replaced by `flat`, in
    /// [`ParamSet::flatten`] order.
    pub fn unflatten(&self, flat: &[f64]) -> Result<ParamSet> {
        if flat.len() != self.numel() {
            return Err(Error::invalid(format!(
                "unflatten: expected {} values, got {}",
                self.numel(),
                flat.len()
            )));
        }
        let mut out = ParamSet::new(self.role);
        let mut offset = 0;
        for (name, t) in &self.entries {
            let n = t.numel();
            let value = Tensor::new(t.shape().to_vec(), flat[offset..offset + n].to_vec())?;
            out.entries.insert(name.clone(), value);
            offset += n;
        }
        Ok(out)
    }

    /// SHA-256 over names, shapes and the exact bit patterns of every value.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.entries {
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Registers every entry in `g`, as differentiable leaves when
    /// `trainable`, otherwise as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<Bound> {
        let mut vars = IndexMap::with_capacity(self.entries.len());
        for (name, t) in &self.entries {
            let v = if trainable {
                g.param(name, t.clone())?
            } else {
                g.constant(t.clone())?
            };
            vars.insert(name.clone(), v);
        }
        Ok(Bound { vars })
    }

    pub(crate) fn entries_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }
}

/// Graph handles for a bound [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParam(name.to_owned()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }
}

/// Gradient per parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Grads {
    entries: IndexMap<String, Tensor>,
}

impl Grads {
    pub fn insert(&mut self, name: String, grad: Tensor) {
        self.entries.insert(name, grad);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The gradients of exactly the parameters of `params`, in its order.
    pub fn select(&self, params: &ParamSet) -> Result<Grads> {
        let mut out = Grads::default();
        for (name, t) in params.iter() {
            let g = self
                .entries
                .get(name)
                .ok_or_else(|| Error::UnknownParam(name.to_owned()))?;
            if g.shape() != t.shape() {
                return Err(Error::Shape {
                    op: "gradient",
                    left: t.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            out.insert(name.to_owned(), g.clone());
        }
        Ok(out)
    }

    /// Gradients laid out in the flatten order of `params`.
    pub fn flatten_like(&self, params: &ParamSet) -> Result<Vec<f64>> {
        Ok(self.select(params)?.entries.values().flat_map(|t| t.data().to_vec()).collect())
    }

    /// Inverse of [`Grads::flatten_like`].
    pub fn from_flat(params: &ParamSet, flat: &[f64]) -> Result<Grads> {
        let shaped = params.unflatten(flat)?;
        let mut out = Grads::default();
        for (name, t) in shaped.iter() {
            out.insert(name.to_owned(), t.clone());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn sample_set(values: &[f64]) -> ParamSet {
        let mut p = ParamSet::new(Role::Rln);
        p.insert("a", Tensor::new(vec![2], values[..2].to_vec()).unwrap()).unwrap();
        p.insert("b", Tensor::new(vec![1, 3], values[2..5].to_vec()).unwrap()).unwrap();
        p
    }

    proptest! {
        #[test]
        fn flatten_unflatten_round_trips(values in proptest::collection::vec(-1e6f64..1e6, 5)) {
            let p = sample_set(&values);
            let flat = p.flatten();
            prop_assert_eq!(&flat, &values);
            prop_assert_eq!(p.unflatten(&flat).unwrap(), p);
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParamSet::new(Role::Pln);
        p.insert("w", Tensor::scalar(1.0)).unwrap();
        assert!(p.insert("w", Tensor::scalar(2.0)).is_err());
    }

    #[test]
    fn checksum_sees_single_bit_changes() {
        let p = sample_set(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let mut flat = p.flatten();
        flat[4] = f64::from_bits(flat[4].to_bits() ^ 1);
        assert_ne!(p.checksum(), p.unflatten(&flat).unwrap().checksum());
        assert_eq!(p.checksum(), p.clone().checksum());
    }

    #[test]
    fn grads_select_checks_shapes() {
        let p = sample_set(&[0.0; 5]);
        let mut g = Grads::default();
        g.insert("a".into(), Tensor::zeros(&[2]));
        assert!(matches!(g.select(&p), Err(Error::UnknownParam(_))));
        g.insert("b".into(), Tensor::zeros(&[3]));
        assert!(matches!(g.select(&p), Err(Error::Shape { .. })));
    }
}
