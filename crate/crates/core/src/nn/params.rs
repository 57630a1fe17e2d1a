//! Named parameter storage and the per-forward binding session.

use super::tape::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Optimizer group a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Backbone,
    Adapter,
    Head,
    Fusion,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Running statistics; updated by forward passes, never by gradients.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub group: ParamGroup,
    pub kind: ParamKind,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor, group: ParamGroup, kind: ParamKind) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            group,
            kind,
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn entries_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut ParamEntry)> {
        self.entries.iter_mut().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    /// Number of trainable scalars, optionally restricted to one group.
    pub fn count_trainable(&self, group: Option<ParamGroup>) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable && group.is_none_or(|g| g == e.group))
            .map(|e| e.value.numel())
            .sum()
    }

    /// Overwrites values from `other`, which must have the same names and shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count mismatch: {} vs {}",
                other.len(),
                self.len()
            )));
        }
        for e in &mut self.entries {
            let id = other
                .id(&e.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {}", e.name)))?;
            let src = other.value(id);
            if src.shape() != e.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {}: {:?} vs {:?}",
                    e.name,
                    src.shape(),
                    e.value.shape()
                )));
            }
            e.value = src.clone();
        }
        Ok(())
    }

    /// Blends batch statistics into running buffers.
    pub fn apply_stat_updates(&mut self, updates: &[StatUpdate], momentum: f64) {
        for u in updates {
            for (id, batch) in [(u.running_mean, &u.mean), (u.running_var, &u.var)] {
                let rv = self.value_mut(id);
                for (r, b) in rv.data_mut().iter_mut().zip(batch) {
                    *r = (1.0 - momentum) * *r + momentum * b;
                }
            }
        }
    }
}

/// Normalization behaviour of a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Pending running-statistics update from one training-mode normalization.
#[derive(Clone, Debug)]
pub struct StatUpdate {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// One forward pass: a tape plus lazily bound parameter leaves.
pub struct Session<'s> {
    pub tape: Tape,
    store: &'s ParamStore,
    mode: Mode,
    grad: bool,
    frozen: Vec<ParamGroup>,
    bound: HashMap<ParamId, Var>,
    stat_updates: Vec<StatUpdate>,
}

impl<'s> Session<'s> {
    /// Training pass: batch statistics, gradients tracked.
    pub fn train(store: &'s ParamStore) -> Self {
        Self::new(store, Mode::Train, true)
    }

    /// Inference pass: running statistics, no gradients.
    pub fn inference(store: &'s ParamStore) -> Self {
        Self::new(store, Mode::Eval, false)
    }

    pub fn new(store: &'s ParamStore, mode: Mode, grad: bool) -> Self {
        Session {
            tape: Tape::new(),
            store,
            mode,
            grad,
            frozen: Vec::new(),
            bound: HashMap::new(),
            stat_updates: Vec::new(),
        }
    }

    /// Parameters of frozen groups enter the tape as constants.
    pub fn freeze(mut self, groups: &[ParamGroup]) -> Self {
        self.frozen.extend_from_slice(groups);
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let entry = self.store.get(id);
        let requires = self.grad && entry.kind == ParamKind::Trainable && !self.frozen.contains(&entry.group);
        let v = self.tape.leaf(entry.value.clone(), requires);
        self.bound.insert(id, v);
        v
    }

    pub fn record_stats(&mut self, update: StatUpdate) {
        self.stat_updates.push(update);
    }

    pub fn take_stat_updates(&mut self) -> Vec<StatUpdate> {
        std::mem::take(&mut self.stat_updates)
    }

    /// Gradients of every bound trainable parameter, in id order.
    pub fn param_grads(&self, grads: &mut Gradients) -> Vec<(ParamId, Tensor)> {
        let mut out: Vec<(ParamId, Tensor)> = self
            .bound
            .iter()
            .filter_map(|(&id, &v)| grads.take(v).map(|g| (id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}
