//! Mutation-based fuzzing over completed seeds.
//!
//! Each round picks a seed, applies one business-aware mutation to its
//! original (pre-completion) entries, re-completes the result and, with
//! probability `fault_rate`, applies one fault mutation on top before
//! executing. Candidates that reach new operations join the pool.
//!
//! Campaign time is the sum of target latencies, so an in-process target
//! with a fixed latency gives a deterministic budget.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::enhance::{validate_completion, Completer, EnhanceError, Seed};
use crate::executor::{ExecError, Executor, TestSequence};
use crate::ingest::{LogEntry, ParameterCorpus};
use crate::report::{ReportEvent, Reporter};
use crate::slicing::{LogSlice, SliceSet};
use crate::spec_model::{OperationId, ParamLocation};
use crate::RandomSource;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum FuzzError {
    #[error("seeds share no resource instance")]
    NoSharedResource,
    #[error("a seed cannot be spliced with itself")]
    DegenerateSplice,
    #[error("corpus has no parameter combination for {0}")]
    EmptyCorpusForOp(OperationId),
    #[error("corpus has no values for {1} of {0}")]
    EmptyCorpusForParam(OperationId, String),
    #[error("seed pool is empty")]
    EmptyPool,
    #[error(transparent)]
    Exec(#[from] ExecError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationKind {
    Splice,
    ReplaceCombo,
    ReplaceValue,
    FaultModifyValue,
    FaultAddParam,
    FaultRemoveParam,
    FaultInsertOp,
    FaultDeleteOp,
    FaultUnbind,
}

pub const BUSINESS_MUTATIONS: [MutationKind; 3] = [
    MutationKind::Splice,
    MutationKind::ReplaceCombo,
    MutationKind::ReplaceValue,
];

pub const FAULT_MUTATIONS: [MutationKind; 6] = [
    MutationKind::FaultModifyValue,
    MutationKind::FaultAddParam,
    MutationKind::FaultRemoveParam,
    MutationKind::FaultInsertOp,
    MutationKind::FaultDeleteOp,
    MutationKind::FaultUnbind,
];

/// Which mutation produced a candidate and where it applied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationPlan {
    pub kind: MutationKind,
    pub seeds: Vec<u64>,
    /// Entry index and parameter name, when the mutation has one.
    pub locus: Option<(usize, Option<String>)>,
}

/// Boundary and garbage values used by fault mutations.
pub const FAULT_TOKENS: [&str; 10] = [
    "",
    "0",
    "-1",
    "2147483648",
    "99999999999999999999",
    "null",
    "[]",
    "'\"<>",
    "%00",
    "\u{00df}\u{20ac}\u{1f600}",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FuzzConfig {
    pub budget_ms: u64,
    pub fault_rate: f64,
    pub max_seq_len: usize,
    pub rng_seed: u64,
    /// Print a stats line every this many sequences; 0 disables it.
    pub stats_every: u64,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig {
            budget_ms: 60_000,
            fault_rate: 0.3,
            max_seq_len: 64,
            rng_seed: 0,
            stats_every: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FuzzMode {
    /// Execute the raw slices once, without completion.
    Init,
    /// Execute every enhanced seed once.
    Enh,
    /// Full mutation-based campaign.
    Fuzz,
}

impl std::str::FromStr for FuzzMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "init" => Ok(FuzzMode::Init),
            "enh" => Ok(FuzzMode::Enh),
            "fuzz" => Ok(FuzzMode::Fuzz),
            other => Err(format!("unknown mode {other:?} (expected init, enh or fuzz)")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzStats {
    pub executed_sequences: u64,
    pub executed_requests: u64,
    pub new_coverage_events: u64,
    pub new_bug_events: u64,
    pub discarded_candidates: u64,
    pub fault_mutants: u64,
    /// Campaign time consumed, in target milliseconds.
    pub campaign_time_ms: u64,
}

/// Seeds with energies, scheduled by weighted round-robin: a seed with
/// energy `e` is selected `e` times in a row before the next one.
#[derive(Debug, Clone, Default)]
pub struct SeedPool {
    pub seeds: Vec<Seed>,
    pub energy: BTreeMap<u64, u64>,
    cursor: usize,
    turns_left: u64,
}

impl SeedPool {
    pub fn new(seeds: Vec<Seed>) -> Self {
        let mut pool = SeedPool::default();
        for s in seeds {
            pool.add(s);
        }
        pool
    }

    /// Adds a seed with baseline energy, renumbering it to a fresh id.
    pub fn add(&mut self, mut seed: Seed) -> u64 {
        seed.seed_id = self.seeds.len() as u64;
        self.energy.insert(seed.seed_id, 1);
        let id = seed.seed_id;
        self.seeds.push(seed);
        id
    }

    pub fn reward(&mut self, seed_id: u64) {
        *self.energy.entry(seed_id).or_insert(0) += 1;
    }

    pub fn get(&self, seed_id: u64) -> &Seed {
        &self.seeds[seed_id as usize]
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    pub fn select(&mut self) -> Option<u64> {
        if self.seeds.is_empty() {
            return None;
        }
        if self.turns_left == 0 {
            self.cursor = (self.cursor + 1) % self.seeds.len();
            self.turns_left = self.energy[&(self.cursor as u64)].max(1);
        }
        self.turns_left -= 1;
        Some(self.cursor as u64)
    }

    /// Splice partner for `a`: the other seed sharing the most origin
    /// instances, then the closest time span, then the lowest id.
    pub fn splice_partner(&self, a: u64) -> Option<u64> {
        let sa = self.get(a);
        self.seeds
            .iter()
            .filter(|b| b.seed_id != a)
            .filter_map(|b| {
                let shared = sa.origin.instances.intersection(&b.origin.instances).count();
                (shared > 0).then(|| (shared, span_gap(sa.origin.time_span, b.origin.time_span), b.seed_id))
            })
            .min_by_key(|&(shared, gap, id)| (std::cmp::Reverse(shared), gap, id))
            .map(|(_, _, id)| id)
    }
}

fn span_gap(a: (i64, i64), b: (i64, i64)) -> i64 {
    if a.1 < b.0 {
        b.0 - a.1
    } else if b.1 < a.0 {
        a.0 - b.1
    } else {
        0
    }
}

fn original_slice(seed: &Seed, entries: Vec<LogEntry>) -> LogSlice {
    let user = entries.first().map(|e| e.user.clone()).unwrap_or_default();
    LogSlice {
        slice_id: seed.origin.slice_id,
        entries,
        strategy: seed.origin.strategy,
        user,
    }
}

/// Merges the original entries of two seeds by timestamp, `a` first on
/// ties. Entries present in both are kept twice.
pub fn splice_similar_seeds(a: &Seed, b: &Seed) -> Result<LogSlice, FuzzError> {
    if a.seed_id == b.seed_id {
        return Err(FuzzError::DegenerateSplice);
    }
    if a.origin.instances.is_disjoint(&b.origin.instances) {
        return Err(FuzzError::NoSharedResource);
    }
    let (xs, ys) = (a.original_entries(), b.original_entries());
    let mut merged = Vec::with_capacity(xs.len() + ys.len());
    let (mut i, mut j) = (0, 0);
    while i < xs.len() || j < ys.len() {
        if j == ys.len() || (i < xs.len() && xs[i].t <= ys[j].t) {
            merged.push(xs[i].clone());
            i += 1;
        } else {
            merged.push(ys[j].clone());
            j += 1;
        }
    }
    Ok(original_slice(a, merged))
}

/// Path parameters and resource-binding parameters of an entry; mutations
/// of parameter sets keep them.
fn is_structural(entry: &LogEntry, name: &str, completer: &Completer) -> bool {
    matches!(entry.phi.get(name), Some(Some(_)))
        || completer
            .spec
            .operation(&entry.op)
            .and_then(|op| op.param(name))
            .is_some_and(|d| d.location == ParamLocation::Path)
}

/// Replaces the parameter-name set of entry `index` with a corpus
/// combination. Retained names keep their values; structural parameters
/// are always kept.
pub fn replace_param_combination(
    entries: &[LogEntry],
    index: usize,
    completer: &Completer,
    corpus: &ParameterCorpus,
    rng: &mut RandomSource,
) -> Result<Vec<LogEntry>, FuzzError> {
    let entry = &entries[index];
    let combo = corpus
        .sample_combo(&entry.op, rng)
        .ok_or_else(|| FuzzError::EmptyCorpusForOp(entry.op.clone()))?;
    let mut out = entries.to_vec();
    let e = &mut out[index];
    let keep: BTreeSet<String> = e
        .params
        .keys()
        .filter(|n| combo.contains(*n) || is_structural(entry, n, completer))
        .cloned()
        .collect();
    e.params.retain(|k, _| keep.contains(k));
    e.phi.retain(|k, _| keep.contains(k));
    for name in combo {
        if !e.params.contains_key(&name) {
            let v = corpus.sample_value(&entry.op, &name, rng).unwrap_or_default();
            e.params.insert(name.clone(), v);
            e.phi.insert(name, None);
        }
    }
    Ok(out)
}

/// Replaces one non-binding value with a corpus sample.
pub fn replace_param_value(
    entries: &[LogEntry],
    index: usize,
    param: &str,
    corpus: &ParameterCorpus,
    rng: &mut RandomSource,
) -> Result<Vec<LogEntry>, FuzzError> {
    let entry = &entries[index];
    assert!(
        !matches!(entry.phi.get(param), Some(Some(_))),
        "binding parameters are not value-mutated"
    );
    let v = corpus
        .sample_value(&entry.op, param, rng)
        .ok_or_else(|| FuzzError::EmptyCorpusForParam(entry.op.clone(), param.to_string()))?;
    let mut out = entries.to_vec();
    out[index].params.insert(param.to_string(), v);
    Ok(out)
}

fn pick<T: Clone>(items: &[T], rng: &mut RandomSource) -> Option<T> {
    (!items.is_empty()).then(|| items[rng.random_range(0..items.len())].clone())
}

/// Applies one business-aware mutation to the seed's original entries.
/// Inapplicable kinds are skipped; when none applies the original entries
/// are returned unchanged (re-completion still resamples creation values).
pub fn mutate_business(
    pool: &SeedPool,
    seed_id: u64,
    completer: &Completer,
    rng: &mut RandomSource,
) -> (LogSlice, MutationPlan) {
    let seed = pool.get(seed_id);
    let original = seed.original_entries();
    let corpus = completer.corpus;
    let start = rng.random_range(0..BUSINESS_MUTATIONS.len());
    for step in 0..BUSINESS_MUTATIONS.len() {
        let kind = BUSINESS_MUTATIONS[(start + step) % BUSINESS_MUTATIONS.len()];
        match kind {
            MutationKind::Splice => {
                if let Some(b) = pool.splice_partner(seed_id) {
                    if let Ok(s) = splice_similar_seeds(seed, pool.get(b)) {
                        let plan = MutationPlan {
                            kind,
                            seeds: vec![seed_id, b],
                            locus: None,
                        };
                        return (s, plan);
                    }
                }
            }
            MutationKind::ReplaceCombo => {
                let idx: Vec<usize> = (0..original.len())
                    .filter(|&i| !corpus.combos_for(&original[i].op).is_empty())
                    .collect();
                if let Some(i) = pick(&idx, rng) {
                    if let Ok(entries) = replace_param_combination(original, i, completer, corpus, rng) {
                        let plan = MutationPlan {
                            kind,
                            seeds: vec![seed_id],
                            locus: Some((i, None)),
                        };
                        return (original_slice(seed, entries), plan);
                    }
                }
            }
            MutationKind::ReplaceValue => {
                let loci: Vec<(usize, String)> = original
                    .iter()
                    .enumerate()
                    .flat_map(|(i, e)| {
                        e.params
                            .keys()
                            .filter(move |p| !is_structural(e, p, completer))
                            .filter(move |p| !corpus.pool(&e.op, p).is_empty())
                            .map(move |p| (i, p.clone()))
                    })
                    .collect();
                if let Some((i, p)) = pick(&loci, rng) {
                    if let Ok(entries) = replace_param_value(original, i, &p, corpus, rng) {
                        let plan = MutationPlan {
                            kind,
                            seeds: vec![seed_id],
                            locus: Some((i, Some(p))),
                        };
                        return (original_slice(seed, entries), plan);
                    }
                }
            }
            _ => unreachable!("business mutation list"),
        }
    }
    let plan = MutationPlan {
        kind: MutationKind::ReplaceValue,
        seeds: vec![seed_id],
        locus: None,
    };
    (original_slice(seed, original.to_vec()), plan)
}

fn fault_token(current: &str, rng: &mut RandomSource) -> String {
    loop {
        let t = FAULT_TOKENS[rng.random_range(0..FAULT_TOKENS.len())];
        if t != current {
            return t.to_string();
        }
    }
}

/// Shifts entry indices of the binding map after inserting at `at`
/// (`delta = 1`) or deleting `at` (`delta = -1`).
fn reindex(seq: &mut TestSequence, at: usize, inserted: bool) {
    let shift = |i: usize| -> Option<usize> {
        if inserted {
            Some(if i >= at { i + 1 } else { i })
        } else if i == at {
            None
        } else {
            Some(if i > at { i - 1 } else { i })
        }
    };
    seq.phi_prime = std::mem::take(&mut seq.phi_prime)
        .into_iter()
        .filter_map(|((k, p), j)| Some(((shift(k)?, p), shift(j)?)))
        .collect();
    seq.unbound = std::mem::take(&mut seq.unbound)
        .into_iter()
        .filter_map(|(k, p)| Some((shift(k)?, p)))
        .collect();
}

/// Applies exactly one fault action. Inapplicable actions fall through to
/// the next one; `None` when none applies or the result is empty.
pub fn mutate_fault(
    seq: &TestSequence,
    completer: &Completer,
    rng: &mut RandomSource,
) -> Option<(TestSequence, MutationPlan)> {
    if seq.entries.is_empty() {
        return None;
    }
    let start = rng.random_range(0..FAULT_MUTATIONS.len());
    for step in 0..FAULT_MUTATIONS.len() {
        let kind = FAULT_MUTATIONS[(start + step) % FAULT_MUTATIONS.len()];
        if let Some((out, locus)) = apply_fault(kind, seq, completer, rng) {
            if out.entries.is_empty() {
                return None;
            }
            let plan = MutationPlan {
                kind,
                seeds: vec![],
                locus: Some(locus),
            };
            return Some((out, plan));
        }
    }
    None
}

fn apply_fault(
    kind: MutationKind,
    seq: &TestSequence,
    completer: &Completer,
    rng: &mut RandomSource,
) -> Option<(TestSequence, (usize, Option<String>))> {
    let mut out = seq.clone();
    let n = seq.entries.len();
    match kind {
        MutationKind::FaultModifyValue => {
            let loci: Vec<(usize, String)> = seq
                .entries
                .iter()
                .enumerate()
                .flat_map(|(i, e)| e.params.keys().map(move |p| (i, p.clone())))
                .collect();
            let (k, p) = pick(&loci, rng)?;
            let token = fault_token(&seq.entries[k].params[&p], rng);
            out.entries[k].params.insert(p.clone(), token);
            if seq.phi_prime.contains_key(&(k, p.clone())) {
                out.unbound.insert((k, p.clone()));
            }
            Some((out, (k, Some(p))))
        }
        MutationKind::FaultAddParam => {
            let k = rng.random_range(0..n);
            let e = &mut out.entries[k];
            let mut c = 0;
            while e.params.contains_key(&format!("restlog_extra{c}")) {
                c += 1;
            }
            let name = format!("restlog_extra{c}");
            e.params.insert(name.clone(), fault_token("\u{0}", rng));
            Some((out, (k, Some(name))))
        }
        MutationKind::FaultRemoveParam => {
            let loci: Vec<(usize, String)> = seq
                .entries
                .iter()
                .enumerate()
                .flat_map(|(i, e)| {
                    let op = completer.spec.operation(&e.op);
                    e.params
                        .keys()
                        .filter(move |p| {
                            op.and_then(|o| o.param(p))
                                .is_some_and(|d| d.required && d.location != ParamLocation::Path)
                        })
                        .map(move |p| (i, p.clone()))
                })
                .collect();
            let (k, p) = pick(&loci, rng)?;
            out.entries[k].params.remove(&p);
            out.entries[k].phi.remove(&p);
            out.phi_prime.remove(&(k, p.clone()));
            out.unbound.remove(&(k, p.clone()));
            Some((out, (k, Some(p))))
        }
        MutationKind::FaultInsertOp => {
            let ops = completer.spec.list_operations();
            let op = pick(&ops, rng)?;
            let at = rng.random_range(0..=n);
            let mut params = completer.sample_params(op, rng);
            for name in op.path_params() {
                params.insert(name.to_string(), fault_token("", rng));
            }
            let template = seq.entries[at.min(n - 1)].clone();
            let entry = LogEntry {
                entry_id: crate::enhance::SYNTHETIC_ENTRY_BASE - 1,
                op: op.id.clone(),
                phi: params.keys().map(|k| (k.clone(), None)).collect(),
                params,
                ..template
            };
            reindex(&mut out, at, true);
            out.entries.insert(at, entry);
            Some((out, (at, None)))
        }
        MutationKind::FaultDeleteOp => {
            let at = rng.random_range(0..n);
            out.entries.remove(at);
            reindex(&mut out, at, false);
            Some((out, (at, None)))
        }
        MutationKind::FaultUnbind => {
            let loci: Vec<(usize, String)> = seq
                .phi_prime
                .keys()
                .filter(|l| !seq.unbound.contains(*l))
                .cloned()
                .collect();
            let (k, p) = pick(&loci, rng)?;
            out.unbound.insert((k, p.clone()));
            Some((out, (k, Some(p))))
        }
        _ => None,
    }
}

/// Drives one campaign against an executor and reporter.
pub struct Campaign<'a, 'c> {
    pub completer: &'c Completer<'a>,
    pub executor: &'c mut Executor<'a>,
    pub reporter: &'c mut Reporter,
    pub cfg: FuzzConfig,
    pub stats: FuzzStats,
}

impl<'a, 'c> Campaign<'a, 'c> {
    pub fn new(
        completer: &'c Completer<'a>,
        executor: &'c mut Executor<'a>,
        reporter: &'c mut Reporter,
        cfg: FuzzConfig,
    ) -> Self {
        Campaign {
            completer,
            executor,
            reporter,
            cfg,
            stats: FuzzStats::default(),
        }
    }

    fn out_of_budget(&self) -> bool {
        self.stats.campaign_time_ms >= self.cfg.budget_ms
    }

    /// Executes and records one sequence; returns whether it reached a new
    /// operation.
    fn run_sequence(&mut self, seq: &TestSequence) -> Result<bool, FuzzError> {
        let records = self.executor.execute(seq)?;
        let events = self.reporter.record_sequence(&records, self.stats.campaign_time_ms);
        self.stats.executed_sequences += 1;
        self.stats.executed_requests += records.len() as u64;
        self.stats.campaign_time_ms += records.iter().map(|r| r.latency_ms).sum::<u64>();
        let mut new_cov = false;
        for ev in events {
            match ev {
                ReportEvent::NewCoverage(_) => {
                    self.stats.new_coverage_events += 1;
                    new_cov = true;
                }
                ReportEvent::NewBug(_) => self.stats.new_bug_events += 1,
            }
        }
        if self.cfg.stats_every > 0 && self.stats.executed_sequences.is_multiple_of(self.cfg.stats_every) {
            log::info!(
                "sequences={} requests={} covered={}/{} bugs={} time={}ms",
                self.stats.executed_sequences,
                self.stats.executed_requests,
                self.reporter.coverage.covered.len(),
                self.reporter.coverage.total,
                self.reporter.bugs.len(),
                self.stats.campaign_time_ms
            );
        }
        Ok(new_cov)
    }

    /// Executes each raw slice once, with logged values and no completion.
    pub fn run_init(&mut self, slices: &SliceSet) -> Result<FuzzStats, FuzzError> {
        for s in &slices.slices {
            if self.out_of_budget() {
                break;
            }
            let seq = TestSequence {
                entries: s.entries.clone(),
                ..Default::default()
            };
            self.run_sequence(&seq)?;
        }
        Ok(self.stats)
    }

    /// Executes each seed once.
    pub fn run_enh(&mut self, seeds: &[Seed]) -> Result<FuzzStats, FuzzError> {
        for s in seeds {
            if self.out_of_budget() {
                break;
            }
            self.run_sequence(&TestSequence::from(s))?;
        }
        Ok(self.stats)
    }

    /// Full campaign: one pass over the pool, then mutation rounds until the
    /// budget is spent.
    pub fn run_fuzz(&mut self, pool: &mut SeedPool, rng: &mut RandomSource) -> Result<FuzzStats, FuzzError> {
        if self.cfg.budget_ms == 0 {
            return Ok(self.stats);
        }
        if pool.is_empty() {
            return Err(FuzzError::EmptyPool);
        }
        for id in 0..pool.len() as u64 {
            if self.out_of_budget() {
                return Ok(self.stats);
            }
            if self.run_sequence(&TestSequence::from(pool.get(id)))? {
                pool.reward(id);
            }
        }

        // guards against a pool whose every candidate is discarded
        let mut idle = 0u32;
        while !self.out_of_budget() && idle < 10_000 {
            let parent = pool.select().expect("pool is non-empty");
            let (slice, _plan) = mutate_business(pool, parent, self.completer, rng);
            let candidate = match self.completer.rcsc(&slice, rng) {
                Ok(c) => c,
                Err(EnhanceError::UnknownResource(r)) => {
                    log::debug!("candidate dropped: unknown resource {r}");
                    self.stats.discarded_candidates += 1;
                    idle += 1;
                    continue;
                }
            };
            if candidate.entries.len() > self.cfg.max_seq_len
                || !validate_completion(&slice, &candidate, self.completer.tree, self.completer.deps).is_empty()
            {
                self.stats.discarded_candidates += 1;
                idle += 1;
                continue;
            }
            let valid = TestSequence::from(&candidate);
            let faulty = rng.random_bool(self.cfg.fault_rate.clamp(0.0, 1.0));
            let seq = if faulty {
                match mutate_fault(&valid, self.completer, rng) {
                    Some((s, _)) if s.entries.len() <= self.cfg.max_seq_len => s,
                    _ => {
                        self.stats.discarded_candidates += 1;
                        idle += 1;
                        continue;
                    }
                }
            } else {
                valid
            };
            idle = 0;
            if faulty {
                self.stats.fault_mutants += 1;
            }
            // a fault mutant differs from `candidate` in one locus, so new
            // coverage admits the business-valid candidate either way
            if self.run_sequence(&seq)? {
                pool.reward(parent);
                pool.add(candidate);
            }
        }
        Ok(self.stats)
    }
}
