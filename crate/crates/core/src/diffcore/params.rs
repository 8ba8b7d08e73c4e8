use crate::diffcore::tensor::Tensor;
use crate::error::{CoreError, Result};
use std::collections::BTreeMap;

/// Handle to one named parameter slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    /// Slot position in the store's registration order; indexes the
    /// gradient vectors returned by a backward pass.
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    /// Non-trainable entries (normalization running statistics) are carried
    /// in checkpoints but skipped by optimizers.
    pub trainable: bool,
}

/// Ordered registry of all learned parameters and persistent state of a
/// model. Registration order is the canonical serialization order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    by_name: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, value: Tensor, trainable: bool) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(CoreError::InvalidArgument(format!(
                "duplicate parameter name {name}"
            )));
        }
        let id = self.entries.len();
        self.by_name.insert(name.to_string(), id);
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            trainable,
        });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn iter_ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    /// Total element count over trainable entries.
    pub fn trainable_param_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.numel())
            .sum()
    }

    /// Copy values from another store with identical names and shapes
    /// (checkpoint restore into a freshly built model).
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(CoreError::ShapeMismatch(format!(
                "checkpoint has {} entries, model wants {}",
                other.entries.len(),
                self.entries.len()
            )));
        }
        for (mine, theirs) in self.entries.iter_mut().zip(other.entries.iter()) {
            if mine.name != theirs.name {
                return Err(CoreError::InvalidArgument(format!(
                    "checkpoint entry {} does not match model entry {}",
                    theirs.name, mine.name
                )));
            }
            if mine.value.shape() != theirs.value.shape() {
                return Err(CoreError::ShapeMismatch(format!(
                    "checkpoint entry {} has shape {:?}, model wants {:?}",
                    theirs.name,
                    theirs.value.shape(),
                    mine.value.shape()
                )));
            }
            mine.value = theirs.value.clone();
        }
        Ok(())
    }
}
