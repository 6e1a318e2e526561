use std::collections::BTreeMap;

use crate::Arr;

/// One named array owned by a [`ParamStore`].
///
/// `trainable = false` marks a buffer (e.g. running statistics) that the
/// optimizer must leave alone but that still travels with checkpoints.
#[derive(Debug, Clone)]
pub struct Entry {
    pub value: Arr,
    pub grad: Arr,
    pub trainable: bool,
}

/// Flat, name-keyed parameter storage.
///
/// Names are dot-separated scopes ("backbone.stage0.conv.weight"), which is
/// what scoped checkpoint loading and per-scope parameter counting key on.
/// BTreeMap keeps iteration order deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a trainable parameter. Panics on name collision: layer
    /// construction owns its namespace and a collision is a construction bug.
    pub fn register(&mut self, name: &str, value: Arr) {
        self.insert(name, value, true);
    }

    /// Registers a non-trainable buffer.
    pub fn register_buffer(&mut self, name: &str, value: Arr) {
        self.insert(name, value, false);
    }

    fn insert(&mut self, name: &str, value: Arr, trainable: bool) {
        let grad = Arr::zeros(value.raw_dim());
        let prev = self.entries.insert(
            name.to_string(),
            Entry {
                value,
                grad,
                trainable,
            },
        );
        assert!(prev.is_none(), "duplicate parameter name: {name}");
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> &Arr {
        &self
            .entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter: {name}"))
            .value
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Arr {
        &mut self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter: {name}"))
            .value
    }

    pub fn grad(&self, name: &str) -> &Arr {
        &self
            .entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter: {name}"))
            .grad
    }

    pub fn entry(&self, name: &str) -> &Entry {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter: {name}"))
    }

    pub fn add_grad(&mut self, name: &str, g: &Arr) {
        let e = self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter: {name}"));
        assert_eq!(e.grad.shape(), g.shape(), "gradient shape mismatch for {name}");
        e.grad += g;
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.fill(0.0);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Entry)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Entry)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of trainable scalars whose name starts with `prefix`.
    /// An empty prefix counts the whole store.
    pub fn count_trainable(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|(n, e)| e.trainable && n.starts_with(prefix))
            .map(|(_, e)| e.value.len())
            .sum()
    }

    /// Copies values for every entry whose name starts with one of `prefixes`
    /// from `other` into `self`. Returns the copied names. Shapes must match;
    /// on mismatch the offending name is reported in the error.
    pub fn copy_scoped(
        &mut self,
        other: &ParamStore,
        prefixes: &[String],
    ) -> Result<Vec<String>, String> {
        let mut copied = Vec::new();
        for (name, src) in other.entries.iter() {
            if !prefixes.iter().any(|p| name.starts_with(p.as_str())) {
                continue;
            }
            let dst = self
                .entries
                .get_mut(name)
                .ok_or_else(|| format!("parameter {name} not present in target model"))?;
            if dst.value.shape() != src.value.shape() {
                return Err(format!(
                    "parameter {name} shape mismatch: target {:?} vs checkpoint {:?}",
                    dst.value.shape(),
                    src.value.shape()
                ));
            }
            dst.value.assign(&src.value);
            copied.push(name.clone());
        }
        Ok(copied)
    }
}
