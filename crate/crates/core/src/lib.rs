//! Log-driven, business-aware REST API fuzzing.
//!
//! The pipeline turns historical request logs into operation sequences that
//! keep the ordering and parameter usage real users exhibited, completes
//! them with the resource creations they need, and fuzzes a service with
//! them:
//!
//! 1. [`resources`]: identify resources and parameter dependencies from the
//!    API description parsed by [`spec_model`].
//! 2. [`ingest`] and [`slicing`]: parse logs, keep the successful requests,
//!    split them per user and cut each user's stream into log slices.
//! 3. [`enhance`]: add slices for operations never logged and prepend the
//!    resource creations each slice needs.
//! 4. [`fuzz`], [`executor`], [`report`]: mutate and execute the seeds,
//!    tracking operation coverage and deduplicated server errors.
//!
//! [`testbed`] ships a small in-process service with an approve-before-merge
//! workflow and a log generator, used for end-to-end checks.

pub mod enhance;
pub mod executor;
pub mod fuzz;
pub mod ingest;
pub mod pipeline;
pub mod report;
pub mod resources;
pub mod slicing;
pub mod spec_model;
pub mod testbed;

use rand::SeedableRng;

/// The single random source threaded through every sampling step.
pub type RandomSource = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> RandomSource {
    RandomSource::seed_from_u64(seed)
}
