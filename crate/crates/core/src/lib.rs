//! Possession-level timeout-effect estimation for basketball play-by-play data.
//!
//! The crate models a game as a sequence of discrete *instants* — possessions
//! and interruptions (timeouts, period ends) — and asks whether calling a
//! timeout changes a team's short-term scoring momentum. The pipeline:
//!
//! 1. [`pbp`] parses canonical play-by-play CSV and segments each game into
//!    instants with a running home-margin series.
//! 2. [`stmc`] computes the short-term momentum change outcome around each
//!    instant: the difference between per-possession scoring margins over the
//!    λ instants after and the λ instants before, requiring an
//!    interruption-free window.
//! 3. [`cohort`] splits valid instants into treated units (team-called
//!    timeouts) and control units (possessions), with subgroup filters.
//! 4. [`propensity`] fits a small gradient-boosted-tree model of timeout
//!    probability given game state, used as a matching distance.
//! 5. [`matching`] pairs each treated unit with a same-game control that had
//!    the identical pre-window margin swing, via optimal (min-cost
//!    max-cardinality) or greedy assignment.
//! 6. [`diagnostics`] reports covariate balance (standardized mean
//!    differences), histograms, and an adjustment-set check on the assumed
//!    causal graph ([`dag`]).
//! 7. [`inference`] estimates the matched-pair effect and quantifies
//!    uncertainty with sign-flip permutation tests and inverted confidence
//!    intervals.
//! 8. [`simulator`] generates seeded synthetic seasons with a configurable
//!    timeout policy and an injectable ground-truth effect, providing an
//!    oracle for end-to-end validation.

pub mod cohort;
pub mod dag;
pub mod diagnostics;
pub mod inference;
pub mod matching;
pub mod pbp;
pub mod propensity;
pub mod rng;
pub mod simulator;
pub mod stmc;
