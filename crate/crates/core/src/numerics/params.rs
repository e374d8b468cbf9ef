//! Named parameter sets and their on-disk form.
//!
//! Checkpoints store parameters as a flat JSON list of `{name, shape, values}`
//! entries. Values are written as plain JSON numbers in shortest round-trip
//! decimal form, so reading a file back yields bit-identical `f64`s. The
//! digest hashes the full-precision bits sorted by name, making it
//! independent of insertion order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{NumericsError, Tensor};

/// One serialized tensor entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl NamedTensor {
    pub fn of(name: impl Into<String>, tensor: &Tensor) -> Self {
        NamedTensor {
            name: name.into(),
            shape: tensor.shape().to_vec(),
            values: tensor.data().to_vec(),
        }
    }

    pub fn into_tensor(self) -> Result<(String, Tensor), NumericsError> {
        let t = Tensor::new(self.shape, self.values).map_err(|e| {
            NumericsError::Format(format!("entry `{}`: {e}", self.name))
        })?;
        Ok((self.name, t))
    }
}

/// Ordered collection of named tensors. Order matters for optimizer
/// alignment; lookups go by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    items: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<(), NumericsError> {
        let name = name.into();
        if self.items.iter().any(|(n, _)| *n == name) {
            return Err(NumericsError::InvalidArg(format!(
                "duplicate parameter name `{name}`"
            )));
        }
        self.items.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.items.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn set(&mut self, name: &str, tensor: Tensor) -> Result<(), NumericsError> {
        match self.items.iter_mut().find(|(n, _)| n == name) {
            Some((_, slot)) => {
                if slot.shape() != tensor.shape() {
                    return Err(NumericsError::InvalidArg(format!(
                        "parameter `{name}` has shape {:?}, replacement {:?}",
                        slot.shape(),
                        tensor.shape()
                    )));
                }
                *slot = tensor;
                Ok(())
            }
            None => Err(NumericsError::InvalidArg(format!(
                "unknown parameter `{name}`"
            ))),
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.items.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn to_named(&self) -> Vec<NamedTensor> {
        self.items
            .iter()
            .map(|(n, t)| NamedTensor::of(n.clone(), t))
            .collect()
    }

    pub fn from_named(entries: Vec<NamedTensor>) -> Result<Self, NumericsError> {
        let mut set = ParamSet::new();
        for e in entries {
            let (name, t) = e.into_tensor()?;
            set.push(name, t)?;
        }
        Ok(set)
    }

    /// Hex SHA-256 over `(name, shape, value bits)` sorted by name: detects
    /// any single-bit change in any value, but not reordering.
    pub fn digest(&self) -> String {
        let mut sorted: Vec<&(String, Tensor)> = self.items.iter().collect();
        sorted.sort_by(|a, b| a.0.cmp(&b.0));
        let mut hasher = Sha256::new();
        for (name, t) in sorted {
            hasher.update((name.len() as u64).to_le_bytes());
            hasher.update(name.as_bytes());
            hasher.update((t.shape().len() as u64).to_le_bytes());
            for d in t.shape() {
                hasher.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn save_json<T: Serialize>(path: &Path, doc: &T) -> Result<(), NumericsError> {
    let text = serde_json::to_string_pretty(doc)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, NumericsError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
