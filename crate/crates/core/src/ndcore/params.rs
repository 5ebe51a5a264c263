use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Trainable,
    Reference,
}

/// Named weight tensors in a fixed insertion order.
///
/// A `Reference` set is frozen: every mutating accessor returns
/// [`Error::ReadOnly`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    entries: IndexMap<String, Tensor>,
    role: Role,
}

impl ParamSet {
    pub fn new(role: Role) -> Self {
        Self {
            entries: IndexMap::new(),
            role,
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn is_trainable(&self) -> bool {
        self.role == Role::Trainable
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        self.check_mutable()?;
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name '{name}'")));
        }
        self.entries.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.check_mutable()?;
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter '{name}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> Result<impl Iterator<Item = (&str, &mut Tensor)>> {
        self.check_mutable()?;
        Ok(self.entries.iter_mut().map(|(k, v)| (k.as_str(), v)))
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

    /// Total number of scalar weights.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Deep copy with a different role.
    pub fn with_role(&self, role: Role) -> Self {
        Self {
            entries: self.entries.clone(),
            role,
        }
    }

    /// A frozen deep copy.
    pub fn frozen(&self) -> Self {
        self.with_role(Role::Reference)
    }

    /// Same names and shapes, all zeros, trainable role.
    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
            role: Role::Trainable,
        }
    }

    /// True when names, order and shapes agree.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((a, ta), (b, tb))| a == b && ta.shape() == tb.shape())
    }

    /// Elementwise equality of every value, ignoring role.
    pub fn bitwise_eq(&self, other: &ParamSet) -> bool {
        self.same_layout(other)
            && self.entries.values().zip(other.entries.values()).all(|(a, b)| {
                a.data()
                    .iter()
                    .zip(b.data())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    /// Global L2 norm over all entries.
    pub fn global_norm(&self) -> f64 {
        self.entries.values().map(Tensor::sq_norm).sum::<f64>().sqrt()
    }

    /// Adds `scale * other` in place.
    pub fn axpy(&mut self, scale: f64, other: &ParamSet) -> Result<()> {
        self.check_mutable()?;
        if !self.same_layout(other) {
            return Err(Error::shape("ParamSet::axpy", "layouts differ"));
        }
        for (dst, src) in self.entries.values_mut().zip(other.entries.values()) {
            for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d += scale * s;
            }
        }
        Ok(())
    }

    fn check_mutable(&self) -> Result<()> {
        match self.role {
            Role::Trainable => Ok(()),
            Role::Reference => Err(Error::ReadOnly("reference".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_rejects_mutation() {
        let mut p = ParamSet::new(Role::Trainable);
        p.insert("w", Tensor::scalar(1.0)).unwrap();
        let mut r = p.frozen();
        assert!(matches!(r.get_mut("w"), Err(Error::ReadOnly(_))));
        assert!(r.insert("b", Tensor::scalar(0.0)).is_err());
        assert!(r.iter_mut().is_err());
        assert!(p.bitwise_eq(&r));
    }

    #[test]
    fn rejects_duplicate_names_and_keeps_order() {
        let mut p = ParamSet::new(Role::Trainable);
        p.insert("z", Tensor::scalar(1.0)).unwrap();
        p.insert("a", Tensor::scalar(2.0)).unwrap();
        assert!(p.insert("z", Tensor::scalar(3.0)).is_err());
        assert_eq!(p.names().collect::<Vec<_>>(), vec!["z", "a"]);
    }
}
