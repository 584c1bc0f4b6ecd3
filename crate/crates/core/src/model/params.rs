use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Mat;

/// Named gradients or deltas, one matrix per parameter.
pub type GradMap = IndexMap<String, Mat>;

/// Ordered, named parameter collection. Values are shared copy-on-write, so
/// cloning a collection is cheap and mutating a clone never touches the
/// original.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params {
    map: IndexMap<String, Arc<Mat>>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat) {
        self.map.insert(name.into(), Arc::new(value));
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.map.get(name).map(|a| a.as_ref())
    }

    pub fn arc(&self, name: &str) -> Option<&Arc<Mat>> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.map.get_mut(name).map(Arc::make_mut)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Mat)> {
        self.map.iter().map(|(k, v)| (k, v.as_ref()))
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.map.values().map(|m| m.len()).sum()
    }

    /// Every parameter as a trainable tape leaf.
    pub fn bind(&self, tape: &mut Tape) -> IndexMap<String, Var> {
        self.map.iter().map(|(k, v)| (k.clone(), tape.param(v.clone()))).collect()
    }

    /// Every parameter as a constant tape leaf.
    pub fn bind_constant(&self, tape: &mut Tape) -> IndexMap<String, Var> {
        self.map.iter().map(|(k, v)| (k.clone(), tape.constant_arc(v.clone()))).collect()
    }

    /// Bitwise equality of every value, including the ordering of names.
    pub fn bitwise_eq(&self, other: &Params) -> bool {
        self.map.len() == other.map.len()
            && self.map.iter().zip(&other.map).all(|((ka, va), (kb, vb))| {
                ka == kb
                    && va.shape() == vb.shape()
                    && va.data().iter().zip(vb.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    pub fn check_finite(&self) -> Result<()> {
        for (k, v) in self.iter() {
            if !v.all_finite() {
                return Err(Error::NonFinite(k.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub name: String,
    pub shape: (usize, usize),
}

/// The editable weight matrices of a task model, in stable order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterView {
    entries: Vec<ViewEntry>,
}

impl ParameterView {
    pub fn new(entries: Vec<ViewEntry>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            if !seen.insert(e.name.as_str()) {
                return Err(Error::Validation(format!("parameter view repeats `{}`", e.name)));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ViewEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|e| e.name == name)
    }

    /// Checks that `grads` covers exactly this view with matching shapes.
    pub fn check_grads(&self, grads: &GradMap) -> Result<()> {
        if grads.len() != self.entries.len() {
            return Err(Error::Manifest(format!(
                "expected {} matrices, got {}",
                self.entries.len(),
                grads.len()
            )));
        }
        for e in &self.entries {
            let g = grads.get(&e.name).ok_or_else(|| Error::Manifest(format!("missing matrix `{}`", e.name)))?;
            if g.shape() != e.shape {
                return Err(Error::Shape { name: e.name.clone(), expected: e.shape, got: g.shape() });
            }
        }
        Ok(())
    }
}
