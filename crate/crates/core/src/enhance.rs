//! Slice enhancement: augmentation with slices for never-logged operations,
//! and resource-consistency completion.
//!
//! Completion collects every resource instance a slice references, builds
//! one creation entry per distinct instance (ancestors first), prepends them
//! and wires each resource-binding parameter to the entry that creates its
//! instance. The result is a [`Seed`].

use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet};

use rand::distr::Alphanumeric;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{LogEntry, ParameterCorpus, ResourceInstance};
use crate::resources::{DependencyMap, ResourceTree};
use crate::slicing::{LogSlice, SliceSet, Strategy};
use crate::spec_model::{ApiOperation, OperationId, ParamDecl, ParamLocation, SchemaType, ServiceSpec};
use crate::RandomSource;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum EnhanceError {
    #[error("resource {0} has no creation operation")]
    UnknownResource(String),
}

/// Entry ids at or above this value belong to generated entries.
pub const SYNTHETIC_ENTRY_BASE: u64 = 1 << 48;

/// Parameter-to-entry mapping of a completed sequence:
/// `(entry index, parameter) -> index of the entry creating its instance`.
pub type PhiPrime = BTreeMap<(usize, String), usize>;

pub mod phi_prime_serde {
    use super::PhiPrime;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(phi: &PhiPrime, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<(usize, &str, usize)> = phi.iter().map(|((i, p), j)| (*i, p.as_str(), *j)).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<PhiPrime, D::Error> {
        let rows = Vec::<(usize, String, usize)>::deserialize(d)?;
        Ok(rows.into_iter().map(|(i, p, j)| ((i, p), j)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedOrigin {
    pub slice_id: u64,
    pub strategy: Strategy,
    /// Instances referenced by the original (pre-completion) entries.
    pub instances: BTreeSet<ResourceInstance>,
    pub time_span: (i64, i64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seed {
    pub seed_id: u64,
    pub entries: Vec<LogEntry>,
    #[serde(with = "phi_prime_serde")]
    pub phi_prime: PhiPrime,
    /// Instance created by each prepended entry, in order.
    pub created: Vec<ResourceInstance>,
    pub origin: SeedOrigin,
}

impl Seed {
    pub fn prepended(&self) -> usize {
        self.created.len()
    }

    /// The entries the seed was completed from.
    pub fn original_entries(&self) -> &[LogEntry] {
        &self.entries[self.prepended()..]
    }

    pub fn original_slice(&self, user: &str) -> LogSlice {
        LogSlice {
            slice_id: self.origin.slice_id,
            entries: self.original_entries().to_vec(),
            strategy: self.origin.strategy,
            user: user.to_string(),
        }
    }

    pub fn ops(&self) -> Vec<&OperationId> {
        self.entries.iter().map(|e| &e.op).collect()
    }
}

/// Everything completion and request construction need to know about the
/// service.
pub struct Completer<'a> {
    pub spec: &'a ServiceSpec,
    pub tree: &'a ResourceTree,
    pub deps: &'a DependencyMap,
    pub corpus: &'a ParameterCorpus,
    next_entry_id: Cell<u64>,
}

impl<'a> Completer<'a> {
    pub fn new(
        spec: &'a ServiceSpec,
        tree: &'a ResourceTree,
        deps: &'a DependencyMap,
        corpus: &'a ParameterCorpus,
    ) -> Self {
        Completer {
            spec,
            tree,
            deps,
            corpus,
            next_entry_id: Cell::new(SYNTHETIC_ENTRY_BASE),
        }
    }

    fn fresh_entry_id(&self) -> u64 {
        let id = self.next_entry_id.get();
        self.next_entry_id.set(id + 1);
        id
    }

    /// A schema-driven value for a parameter nothing was observed for.
    pub fn default_value(decl: &ParamDecl, rng: &mut RandomSource) -> String {
        if !decl.enum_values.is_empty() {
            return decl.enum_values[rng.random_range(0..decl.enum_values.len())].clone();
        }
        match decl.schema_type {
            SchemaType::String => {
                let token: String = (0..10)
                    .map(|_| rng.sample(Alphanumeric) as char)
                    .collect::<String>()
                    .to_ascii_lowercase();
                format!("rl{token}")
            }
            SchemaType::Integer => rng.random_range(1..=100).to_string(),
            SchemaType::Number => format!("{:.2}", rng.random_range(0.0..100.0)),
            SchemaType::Boolean => "true".to_string(),
            SchemaType::Array => "[]".to_string(),
            SchemaType::Object => "{}".to_string(),
        }
    }

    /// Non-path parameters for a fresh request to `op`: a corpus combination
    /// with corpus values when one exists, else the required parameters with
    /// schema defaults.
    pub fn sample_params(&self, op: &ApiOperation, rng: &mut RandomSource) -> BTreeMap<String, String> {
        let names: Vec<String> = match self.corpus.sample_combo(&op.id, rng) {
            Some(combo) => combo.into_iter().collect(),
            None => op
                .parameters
                .iter()
                .filter(|p| p.required && p.location != ParamLocation::Path)
                .map(|p| p.name.clone())
                .collect(),
        };
        names
            .into_iter()
            .filter(|n| op.param(n).is_none_or(|d| d.location != ParamLocation::Path))
            .map(|name| {
                let value = self.value_for(op, &name, rng);
                (name, value)
            })
            .collect()
    }

    /// A corpus value for `(op, name)`, falling back to a schema default.
    pub fn value_for(&self, op: &ApiOperation, name: &str, rng: &mut RandomSource) -> String {
        self.corpus.sample_value(&op.id, name, rng).unwrap_or_else(|| {
            let decl = op.param(name).cloned().unwrap_or(ParamDecl {
                name: name.to_string(),
                location: ParamLocation::Body,
                schema_type: SchemaType::String,
                required: false,
                enum_values: Vec::new(),
            });
            Self::default_value(&decl, rng)
        })
    }

    /// Builds the creation entry for `instance`. `bindings` supplies, per
    /// resource name, the instance a binding parameter of the creation
    /// operation must refer to; binding parameters without one are left
    /// unbound (`phi = None`) for path parameters and dropped otherwise.
    pub fn create_entry(
        &self,
        instance: &ResourceInstance,
        bindings: &BTreeMap<String, ResourceInstance>,
        t: i64,
        user: &str,
        rng: &mut RandomSource,
    ) -> Result<LogEntry, EnhanceError> {
        let resource = self
            .tree
            .get(&instance.resource)
            .ok_or_else(|| EnhanceError::UnknownResource(instance.resource.clone()))?;
        let op = self
            .spec
            .operation(&resource.creation_op)
            .ok_or_else(|| EnhanceError::UnknownResource(instance.resource.clone()))?;

        let mut params = self.sample_params(op, rng);
        let mut phi = BTreeMap::new();
        for name in op.path_params() {
            match self.deps.resource_of(&op.id, name) {
                Some(dep) => match bindings.get(dep) {
                    Some(target) => {
                        params.insert(name.to_string(), target.id_value.clone());
                        phi.insert(name.to_string(), Some(target.clone()));
                    }
                    None => {
                        params.insert(name.to_string(), self.value_for(op, name, rng));
                        phi.insert(name.to_string(), None);
                    }
                },
                None => {
                    params.insert(name.to_string(), self.value_for(op, name, rng));
                }
            }
        }
        let names: Vec<String> = params.keys().cloned().collect();
        for name in names {
            if phi.contains_key(&name) {
                continue;
            }
            match self.deps.resource_of(&op.id, &name) {
                Some(dep) => match bindings.get(dep) {
                    Some(target) => {
                        params.insert(name.clone(), target.id_value.clone());
                        phi.insert(name, Some(target.clone()));
                    }
                    None => {
                        params.remove(&name);
                    }
                },
                None => {
                    phi.insert(name, None);
                }
            }
        }
        Ok(LogEntry {
            entry_id: self.fresh_entry_id(),
            t,
            op: op.id.clone(),
            params,
            phi,
            user: user.to_string(),
            user_hint: None,
            source_line: 0,
        })
    }

    /// Adds one single-entry slice per specification operation that no slice
    /// contains.
    pub fn augment(&self, slices: &SliceSet, rng: &mut RandomSource) -> SliceSet {
        let covered: BTreeSet<&OperationId> = slices
            .slices
            .iter()
            .flat_map(|s| s.entries.iter().map(|e| &e.op))
            .collect();
        let mut out = slices.clone();
        let mut next_id = slices.slices.iter().map(|s| s.slice_id + 1).max().unwrap_or(0);
        for op in self.spec.list_operations() {
            if covered.contains(&op.id) {
                continue;
            }
            let entry = self.synthesize_entry(op, &format!("aug{next_id}"), 0, "augmented", rng);
            out.slices.push(LogSlice {
                slice_id: next_id,
                entries: vec![entry],
                strategy: Strategy::Augmented,
                user: "augmented".to_string(),
            });
            next_id += 1;
        }
        out
    }

    /// A fresh entry for `op` whose binding parameters refer to new,
    /// never-observed instances tagged with `tag`.
    pub fn synthesize_entry(
        &self,
        op: &ApiOperation,
        tag: &str,
        t: i64,
        user: &str,
        rng: &mut RandomSource,
    ) -> LogEntry {
        let mut params = self.sample_params(op, rng);
        for name in op.path_params() {
            params.insert(name.to_string(), String::new());
        }
        let mut phi = BTreeMap::new();
        for (name, value) in params.iter_mut() {
            let inst = self
                .deps
                .resource_of(&op.id, name)
                .map(|res| ResourceInstance::new(res, format!("{tag}-{name}")));
            match &inst {
                Some(i) => *value = i.id_value.clone(),
                None if value.is_empty() => {
                    *value = self.value_for(op, name, rng);
                }
                None => {}
            }
            phi.insert(name.clone(), inst);
        }
        LogEntry {
            entry_id: self.fresh_entry_id(),
            t,
            op: op.id.clone(),
            params,
            phi,
            user: user.to_string(),
            user_hint: None,
            source_line: 0,
        }
    }

    /// Resource-consistency slice completion.
    pub fn rcsc(&self, slice: &LogSlice, rng: &mut RandomSource) -> Result<Seed, EnhanceError> {
        let referenced: BTreeSet<ResourceInstance> = slice.instances();
        for inst in &referenced {
            if self.tree.get(&inst.resource).is_none() {
                return Err(EnhanceError::UnknownResource(inst.resource.clone()));
            }
        }

        // Which instance of resource Q co-occurs with instance x in some entry.
        let mut assoc: BTreeMap<ResourceInstance, BTreeMap<String, ResourceInstance>> = BTreeMap::new();
        for e in &slice.entries {
            let here: Vec<&ResourceInstance> = e.instances().into_iter().collect();
            for x in &here {
                let slot = assoc.entry((*x).clone()).or_default();
                for y in &here {
                    if y.resource != x.resource {
                        slot.entry(y.resource.clone()).or_insert_with(|| (*y).clone());
                    }
                }
            }
        }

        let t0 = slice.first_t();
        let mut created: BTreeMap<ResourceInstance, LogEntry> = BTreeMap::new();
        let mut pending: Vec<ResourceInstance> = referenced.iter().cloned().collect();
        let mut synthetic = 0usize;
        while let Some(inst) = pending.pop() {
            if created.contains_key(&inst) {
                continue;
            }
            let resource = self
                .tree
                .get(&inst.resource)
                .ok_or_else(|| EnhanceError::UnknownResource(inst.resource.clone()))?;
            let op = self
                .spec
                .operation(&resource.creation_op)
                .ok_or_else(|| EnhanceError::UnknownResource(inst.resource.clone()))?;
            let mut bindings = assoc.get(&inst).cloned().unwrap_or_default();
            // Path parameters of the creation need an instance of their
            // (shallower) resource; invent one when the slice never names it.
            for name in op.path_params() {
                let Some(dep) = self.deps.resource_of(&op.id, name) else {
                    continue;
                };
                if bindings.contains_key(dep)
                    || self.tree.get(dep).is_none()
                    || self.tree.depth(dep) >= self.tree.depth(&inst.resource)
                {
                    continue;
                }
                synthetic += 1;
                let parent = ResourceInstance::new(dep, format!("rcsc{synthetic}"));
                let mut up = assoc.get(&inst).cloned().unwrap_or_default();
                up.remove(dep);
                assoc.entry(parent.clone()).or_default().extend(up);
                bindings.insert(dep.to_string(), parent.clone());
            }
            let entry = self.create_entry(&inst, &bindings, t0, &slice.user, rng)?;
            for target in entry.phi.values().flatten() {
                if !created.contains_key(target) {
                    pending.push(target.clone());
                }
            }
            created.insert(inst, entry);
        }

        let order = self.creation_order(&created);
        let mut index: BTreeMap<ResourceInstance, usize> = BTreeMap::new();
        let mut entries = Vec::with_capacity(order.len() + slice.entries.len());
        for (i, inst) in order.iter().enumerate() {
            index.insert(inst.clone(), i);
            entries.push(created[inst].clone());
        }
        entries.extend(slice.entries.iter().cloned());

        let mut phi_prime = PhiPrime::new();
        for (k, e) in entries.iter().enumerate() {
            for (p, inst) in &e.phi {
                if let Some(&j) = inst.as_ref().and_then(|i| index.get(i)) {
                    if j < k {
                        phi_prime.insert((k, p.clone()), j);
                    }
                }
            }
        }

        Ok(Seed {
            seed_id: 0,
            entries,
            phi_prime,
            created: order,
            origin: SeedOrigin {
                slice_id: slice.slice_id,
                strategy: slice.strategy,
                instances: referenced,
                time_span: slice.time_span(),
            },
        })
    }

    /// Topological order of creation entries, ancestors first; ties broken by
    /// resource depth, name and id.
    fn creation_order(&self, created: &BTreeMap<ResourceInstance, LogEntry>) -> Vec<ResourceInstance> {
        let key = |i: &ResourceInstance| (self.tree.depth(&i.resource), i.resource.clone(), i.id_value.clone());
        let mut waiting: BTreeMap<&ResourceInstance, BTreeSet<&ResourceInstance>> = created
            .iter()
            .map(|(inst, e)| {
                let needs = e
                    .phi
                    .values()
                    .flatten()
                    .filter(|t| *t != inst && created.contains_key(*t))
                    .collect();
                (inst, needs)
            })
            .collect();
        let mut order = Vec::with_capacity(created.len());
        while !waiting.is_empty() {
            let next = waiting
                .iter()
                .filter(|(_, needs)| needs.is_empty())
                .map(|(i, _)| *i)
                .min_by_key(|i| key(i))
                // cyclic requirements: take the shallowest and leave its
                // backward references unwired
                .or_else(|| waiting.keys().copied().min_by_key(|i| key(i)))
                .expect("waiting is non-empty");
            waiting.remove(next);
            for needs in waiting.values_mut() {
                needs.remove(next);
            }
            order.push(next.clone());
        }
        order
    }

    /// Augments and completes every slice. Slices that cannot be completed
    /// are reported and skipped.
    pub fn enhance(&self, slices: &SliceSet, rng: &mut RandomSource) -> (Vec<Seed>, Vec<(u64, EnhanceError)>) {
        let augmented = self.augment(slices, rng);
        let mut seeds = Vec::new();
        let mut skipped = Vec::new();
        for s in &augmented.slices {
            match self.rcsc(s, rng) {
                Ok(mut seed) => {
                    seed.seed_id = seeds.len() as u64;
                    seeds.push(seed);
                }
                Err(e) => {
                    log::warn!("slice {} skipped: {e}", s.slice_id);
                    skipped.push((s.slice_id, e));
                }
            }
        }
        (seeds, skipped)
    }
}

/// A completed seed failed one of the completion guarantees.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    UnwiredBinding { entry: usize, param: String },
    BindingNotEarlier { entry: usize, param: String, target: usize },
    WrongCreator { entry: usize, param: String, target: usize },
    AncestorAfterDescendant { ancestor: usize, descendant: usize },
    OriginalOrderChanged,
    DuplicateCreation(ResourceInstance),
    MissingCreation(ResourceInstance),
}

/// Checks a seed completed from `slice`:
/// every dependent parameter is wired to a strictly earlier entry that runs
/// the creation operation of its resource; ancestors are created before
/// descendants; the slice's entries follow unchanged; every referenced
/// instance has exactly one creation entry.
pub fn validate_completion(slice: &LogSlice, seed: &Seed, tree: &ResourceTree, deps: &DependencyMap) -> Vec<Violation> {
    let mut violations = Vec::new();
    for (k, e) in seed.entries.iter().enumerate() {
        for p in e.params.keys() {
            let Some(dep) = deps.resource_of(&e.op, p) else {
                continue;
            };
            let Some(&j) = seed.phi_prime.get(&(k, p.clone())) else {
                violations.push(Violation::UnwiredBinding {
                    entry: k,
                    param: p.clone(),
                });
                continue;
            };
            if j >= k {
                violations.push(Violation::BindingNotEarlier {
                    entry: k,
                    param: p.clone(),
                    target: j,
                });
            }
            let creator = tree.get(dep).map(|r| &r.creation_op);
            if seed.entries.get(j).map(|t| &t.op) != creator {
                violations.push(Violation::WrongCreator {
                    entry: k,
                    param: p.clone(),
                    target: j,
                });
            }
        }
    }

    let n = seed.created.len();
    for a in 0..n {
        for b in 0..n {
            if tree.is_ancestor(&seed.created[a].resource, &seed.created[b].resource) && a > b {
                violations.push(Violation::AncestorAfterDescendant {
                    ancestor: a,
                    descendant: b,
                });
            }
        }
    }

    if seed.entries.len() < n || seed.entries[n..] != slice.entries[..] {
        violations.push(Violation::OriginalOrderChanged);
    }

    let mut seen = BTreeSet::new();
    for inst in &seed.created {
        if !seen.insert(inst) {
            violations.push(Violation::DuplicateCreation(inst.clone()));
        }
    }
    for inst in slice.instances() {
        if !seen.contains(&inst) {
            violations.push(Violation::MissingCreation(inst));
        }
    }
    violations
}
