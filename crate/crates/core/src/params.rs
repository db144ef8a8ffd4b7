//! Named model parameters.
//!
//! Every parameter is initialized from its own stream derived from
//! `(seed, name)`, so two models built with the same seed share identical
//! values for every parameter they have in common, regardless of which
//! other parameters exist.

use std::collections::HashMap;

use crate::autograd::{Tape, Var};
use crate::error::{dim_err, Error, Result};
use crate::rng::{fan_in_uniform, SeededRng};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    /// Registration order within the owning store.
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
}

#[derive(Clone, Debug)]
pub struct ParamStore {
    seed: u64,
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry { name, value });
        ParamId(self.entries.len() - 1)
    }

    pub fn rng_for(&self, name: &str) -> SeededRng {
        SeededRng::derived(self.seed, name)
    }

    /// Uniform in `±sqrt(1 / fan_in)`.
    pub fn fan_in(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize) -> ParamId {
        let name = name.into();
        let value = fan_in_uniform(&mut self.rng_for(&name), shape, fan_in);
        self.add(name, value)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn full(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> ParamId {
        self.add(name, Tensor::full(shape, value))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let slot = &mut self.entries[id.0];
        if slot.value.shape() != value.shape() {
            return Err(dim_err!(
                "parameter {} has shape {:?}, got {:?}",
                slot.name,
                slot.value.shape(),
                value.shape()
            ));
        }
        slot.value = value;
        Ok(())
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .map(|e| e.value.numel())
            .sum()
    }

    /// Per-parameter checksums keyed by name.
    pub fn checksums(&self) -> Vec<(String, u64)> {
        self.entries
            .iter()
            .map(|e| (e.name.clone(), e.value.checksum()))
            .collect()
    }

    /// Overwrites values from `(name, tensor)` pairs. Every stored parameter
    /// must be present with a matching shape; unknown names are an error.
    pub fn load(&mut self, values: &[(String, Tensor)]) -> Result<()> {
        let mut seen = vec![false; self.entries.len()];
        for (name, value) in values {
            let id = self.id(name).ok_or_else(|| {
                Error::Data(format!("checkpoint entry {name} has no matching parameter"))
            })?;
            self.set(id, value.clone())?;
            seen[id.0] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Data(format!(
                "checkpoint is missing parameter {}",
                self.entries[i].name
            )));
        }
        Ok(())
    }

    /// Current values in registration order.
    pub fn values(&self) -> Vec<Tensor> {
        self.entries.iter().map(|e| e.value.clone()).collect()
    }

    pub fn to_named(&self) -> Vec<(String, Tensor)> {
        self.entries
            .iter()
            .map(|e| (e.name.clone(), e.value.clone()))
            .collect()
    }

    /// Records every parameter on `tape` as a differentiable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound {
            vars: self
                .entries
                .iter()
                .map(|e| tape.leaf(e.value.clone()))
                .collect(),
            tape,
        }
    }

    /// Records every parameter on `tape` as a constant (inference).
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound {
            vars: self
                .entries
                .iter()
                .map(|e| tape.constant(e.value.clone()))
                .collect(),
            tape,
        }
    }
}

/// Parameters recorded on one tape.
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
    tape: &'t Tape,
}

impl<'t> Bound<'t> {
    /// Wraps already-recorded values, one per parameter in registration order.
    pub fn from_vars(tape: &'t Tape, vars: Vec<Var<'t>>) -> Self {
        Self { vars, tape }
    }

    pub fn get(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn vars(&self) -> impl Iterator<Item = (ParamId, Var<'t>)> + '_ {
        self.vars.iter().enumerate().map(|(i, &v)| (ParamId(i), v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_depends_only_on_seed_and_name() {
        let mut a = ParamStore::new(9);
        a.fan_in("x.weight", &[4, 4], 4);
        let wa = a.fan_in("y.weight", &[3, 3], 3);
        let mut b = ParamStore::new(9);
        let wb = b.fan_in("y.weight", &[3, 3], 3);
        assert_eq!(a.get(wa), b.get(wb));
        let mut c = ParamStore::new(10);
        let wc = c.fan_in("y.weight", &[3, 3], 3);
        assert_ne!(a.get(wa), c.get(wc));
    }

    #[test]
    fn load_requires_exact_coverage() {
        let mut s = ParamStore::new(1);
        s.zeros("a", &[2]);
        s.zeros("b", &[3]);
        let ok = vec![
            ("a".to_string(), Tensor::ones(&[2])),
            ("b".to_string(), Tensor::ones(&[3])),
        ];
        s.load(&ok).unwrap();
        assert_eq!(s.by_name("a").unwrap().data(), &[1.0, 1.0]);
        assert!(matches!(s.load(&ok[..1]), Err(Error::Data(_))));
        let bad_shape = vec![("a".to_string(), Tensor::ones(&[3])), ok[1].clone()];
        assert!(matches!(s.load(&bad_shape), Err(Error::Dimension(_))));
        let unknown = vec![("c".to_string(), Tensor::ones(&[1]))];
        assert!(matches!(s.load(&unknown), Err(Error::Data(_))));
    }

    #[test]
    fn counts() {
        let mut s = ParamStore::new(1);
        s.zeros("hpg.a", &[2, 3]);
        s.zeros("sda.b", &[4]);
        assert_eq!(s.count(), 10);
        assert_eq!(s.count_with_prefix("hpg."), 6);
    }
}
