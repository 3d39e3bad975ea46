//! Named, grouped model parameters.
//!
//! Parameters live here as plain `f32` buffers between steps; each training
//! step binds them onto a fresh tape as leaves. Iteration is always in
//! registration order, so updates, checkpoints, and gradient application
//! are deterministic regardless of lookup-table internals.

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{Tape, TapeResult, ValueId};

/// Freeze/trainability granularity. Mirrors the freeze switches in the
/// train config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    Text,
    Frame,
    Action,
    Map,
    Fusion,
    Heads,
    Temperature,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 7] = [
        ParamGroup::Text,
        ParamGroup::Frame,
        ParamGroup::Action,
        ParamGroup::Map,
        ParamGroup::Fusion,
        ParamGroup::Heads,
        ParamGroup::Temperature,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::Text => "text",
            ParamGroup::Frame => "frame",
            ParamGroup::Action => "action",
            ParamGroup::Map => "map",
            ParamGroup::Fusion => "fusion",
            ParamGroup::Heads => "heads",
            ParamGroup::Temperature => "temperature",
        }
    }

    pub fn parse(s: &str) -> Option<ParamGroup> {
        ParamGroup::ALL.into_iter().find(|g| g.as_str() == s)
    }
}

impl std::fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum ParamError {
    #[error("duplicate parameter name {0:?}")]
    Duplicate(String),
    #[error("unknown parameter name {0:?}")]
    Unknown(String),
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub group: ParamGroup,
}

/// How a parameter is filled at registration.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Uniform in ±1/√fan_in; fan_in is the first shape extent.
    FanIn,
    /// Uniform in ±limit. Biases use a small nonzero limit so affine paths
    /// stay non-degenerate at zero input.
    Uniform(f32),
    Const(f32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

pub struct ParamStore {
    params: Vec<Param>,
    by_name: BTreeMap<String, usize>,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn add(&mut self, name: &str, shape: &[usize], group: ParamGroup, init: Init) -> Result<ParamId, ParamError> {
        if self.by_name.contains_key(name) {
            return Err(ParamError::Duplicate(name.to_string()));
        }
        let n: usize = shape.iter().product();
        let data = match init {
            Init::FanIn => {
                let limit = 1.0 / (shape[0] as f32).sqrt();
                (0..n).map(|_| self.rng.random_range(-limit..limit)).collect()
            }
            Init::Uniform(limit) => (0..n).map(|_| self.rng.random_range(-limit..limit)).collect(),
            Init::Const(v) => vec![v; n],
        };
        let idx = self.params.len();
        self.params.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
            group,
        });
        self.by_name.insert(name.to_string(), idx);
        Ok(ParamId(idx))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Parameters in registration order.
    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    /// Mutable access by registration index; pairs with gradient lists,
    /// which are ordered the same way.
    pub fn at_mut(&mut self, index: usize) -> &mut Param {
        &mut self.params[index]
    }

    pub fn id_of(&self, name: &str) -> Result<ParamId, ParamError> {
        self.by_name
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| ParamError::Unknown(name.to_string()))
    }

    pub fn by_name(&self, name: &str) -> Result<&Param, ParamError> {
        self.id_of(name).map(|id| self.get(id))
    }

    pub fn set_data(&mut self, name: &str, data: Vec<f32>) -> Result<(), ParamError> {
        let id = self.id_of(name)?;
        let p = self.get_mut(id);
        assert_eq!(
            p.data.len(),
            data.len(),
            "parameter {name} length changed across load"
        );
        p.data = data;
        Ok(())
    }

    /// Bind every parameter onto a tape as a leaf. Members of `frozen`
    /// groups become constants: no gradient is computed or applied for
    /// them.
    pub fn bind(&self, tape: &mut Tape<f32>, frozen: &[ParamGroup]) -> TapeResult<Bindings> {
        let mut ids = Vec::with_capacity(self.params.len());
        for p in &self.params {
            let requires = !frozen.contains(&p.group);
            ids.push(tape.leaf(p.data.clone(), &p.shape, requires)?);
        }
        Ok(Bindings { ids })
    }
}

/// Tape handles for one forward pass, indexed like the store.
pub struct Bindings {
    ids: Vec<ValueId>,
}

impl Bindings {
    pub fn value(&self, id: ParamId) -> ValueId {
        self.ids[id.0]
    }

    /// Gradients for every parameter after a backward pass, in store order.
    /// Frozen or unreached parameters yield `None`.
    pub fn grads<'t>(&self, tape: &'t Tape<f32>) -> Vec<Option<&'t [f32]>> {
        self.ids.iter().map(|&v| tape.grad(v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registration_order_is_iteration_order() {
        let mut store = ParamStore::new(7);
        store.add("b", &[2], ParamGroup::Heads, Init::Const(1.0)).unwrap();
        store.add("a", &[2], ParamGroup::Heads, Init::Const(2.0)).unwrap();
        let names: Vec<&str> = store.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["b", "a"]);
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut store = ParamStore::new(7);
        store.add("w", &[2], ParamGroup::Text, Init::Const(0.0)).unwrap();
        assert!(matches!(
            store.add("w", &[3], ParamGroup::Text, Init::Const(0.0)),
            Err(ParamError::Duplicate(_))
        ));
    }

    #[test]
    fn same_seed_same_init() {
        let mut a = ParamStore::new(11);
        let mut b = ParamStore::new(11);
        a.add("w", &[4, 4], ParamGroup::Fusion, Init::FanIn).unwrap();
        b.add("w", &[4, 4], ParamGroup::Fusion, Init::FanIn).unwrap();
        assert_eq!(a.by_name("w").unwrap().data, b.by_name("w").unwrap().data);
    }

    #[test]
    fn frozen_groups_get_no_gradient() {
        let mut store = ParamStore::new(3);
        let w = store.add("w", &[2], ParamGroup::Text, Init::Const(2.0)).unwrap();
        let v = store.add("v", &[2], ParamGroup::Heads, Init::Const(3.0)).unwrap();
        let mut tape = Tape::<f32>::new();
        let bind = store.bind(&mut tape, &[ParamGroup::Text]).unwrap();
        let prod = tape.mul(bind.value(w), bind.value(v)).unwrap();
        let loss = tape.sum_all(prod).unwrap();
        tape.backward(loss).unwrap();
        let grads = bind.grads(&tape);
        assert!(grads[0].is_none());
        assert_eq!(grads[1].unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn group_names_round_trip() {
        for g in ParamGroup::ALL {
            assert_eq!(ParamGroup::parse(g.as_str()), Some(g));
        }
        assert_eq!(ParamGroup::parse("nonsense"), None);
    }
}
