//! The stages glued together: logs to slices, slices to seeds, seeds to a
//! campaign. Every stage is a pure function of its inputs and rng seed.

use crate::enhance::{Completer, EnhanceError, Seed};
use crate::executor::Executor;
use crate::fuzz::{Campaign, FuzzConfig, FuzzError, FuzzMode, FuzzStats, SeedPool};
use crate::ingest::{
    parse_log, preprocess, split_user_queues, FieldMap, IngestError, LogFormat, ParameterCorpus, Preprocessed,
};
use crate::report::Reporter;
use crate::resources::ResourceModel;
use crate::rng_from_seed;
use crate::slicing::{slice_queues, SliceSet};
use crate::spec_model::ServiceSpec;

/// Seed offsets keep the stages' random streams independent.
const ENHANCE_STREAM: u64 = 0x656e_6861_6e63_6500;
const FUZZ_STREAM: u64 = 0x6675_7a7a_0000_0000;

pub struct Ingested {
    pub pre: Preprocessed,
    pub errors: Vec<IngestError>,
}

/// Parses every log text, then filters and binds the records as one log.
pub fn ingest(logs: &[(String, LogFormat)], fields: &FieldMap, spec: &ServiceSpec, model: &ResourceModel) -> Ingested {
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (text, format) in logs {
        let parsed = parse_log(text, *format, fields);
        records.extend(parsed.records);
        errors.extend(parsed.errors);
    }
    let mut pre = preprocess(&records, spec, &model.deps);
    pre.drops.malformed = errors.len() as u64;
    Ingested { pre, errors }
}

pub fn slice(pre: &Preprocessed, token_params: &[String], dt_mlt: i64, dt_stw: i64) -> SliceSet {
    let queues = split_user_queues(&pre.entries, token_params);
    slice_queues(&queues, dt_mlt, dt_stw)
}

/// What the enhancement and fuzzing stages read: the analysed spec and the
/// parameter corpus mined from the logs.
#[derive(Clone, Copy)]
pub struct Knowledge<'a> {
    pub spec: &'a ServiceSpec,
    pub model: &'a ResourceModel,
    pub corpus: &'a ParameterCorpus,
}

impl<'a> Knowledge<'a> {
    pub fn completer(&self) -> Completer<'a> {
        Completer::new(self.spec, &self.model.tree, &self.model.deps, self.corpus)
    }
}

pub fn enhance(k: Knowledge<'_>, slices: &SliceSet, rng_seed: u64) -> (Vec<Seed>, Vec<(u64, EnhanceError)>) {
    k.completer()
        .enhance(slices, &mut rng_from_seed(rng_seed ^ ENHANCE_STREAM))
}

/// Runs one campaign in the given mode through `executor`.
pub fn campaign<'a>(
    k: Knowledge<'a>,
    mode: FuzzMode,
    slices: &SliceSet,
    seeds: &[Seed],
    executor: &mut Executor<'a>,
    cfg: &FuzzConfig,
) -> Result<(Reporter, FuzzStats), FuzzError> {
    let completer = k.completer();
    let mut reporter = Reporter::new(k.spec);
    let stats = {
        let mut c = Campaign::new(&completer, executor, &mut reporter, cfg.clone());
        match mode {
            FuzzMode::Init => c.run_init(slices)?,
            FuzzMode::Enh => c.run_enh(seeds)?,
            FuzzMode::Fuzz => {
                let mut pool = SeedPool::new(seeds.to_vec());
                c.run_fuzz(&mut pool, &mut rng_from_seed(cfg.rng_seed ^ FUZZ_STREAM))?
            }
        }
    };
    Ok((reporter, stats))
}
