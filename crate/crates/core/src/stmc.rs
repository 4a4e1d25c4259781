//! Short-term margin change (STMC): the possession-level outcome.
//!
//! For a game instant `t`, a window half-width `lambda` (even, positive), and
//! a margin series `P` from one side's perspective, the outcome is
//!
//! ```text
//! y = (P[t + lambda] - P[t]) / lambda  -  (P[t - 1] - P[t - lambda - 1]) / lambda
//! ```
//!
//! i.e. per-instant scoring drift after `t` minus per-instant scoring drift
//! before `t`. The pre-window deliberately ends at `t - 1` so that whatever
//! happens at `t` itself (a timeout, or the possession under study) never
//! contaminates its own baseline.
//!
//! The window is *valid* only when it fits inside the game
//! (`t - lambda - 1 >= 0` and `t + lambda <= last index`) and no interruption
//! (timeout or period end) falls anywhere in `[t - lambda, t + lambda]`
//! except possibly at `t` itself. Instants with invalid windows get no
//! outcome.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pbp::{margin_series, GameInstant, Side};

/// Outcome and its two signed numerators for one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    /// Points gained over the `lambda` instants ending at `t - 1`:
    /// `P[t-1] - P[t-lambda-1]`.
    pub dpre_num: i32,
    /// Points gained over the `lambda` instants after `t`:
    /// `P[t+lambda] - P[t]`.
    pub dpost_num: i32,
    /// `(dpost_num - dpre_num) / lambda`.
    pub y: f64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StmcError {
    #[error("lambda must be a positive even integer, got {0}")]
    InvalidLambda(usize),
}

pub fn validate_lambda(lambda: usize) -> Result<(), StmcError> {
    if lambda == 0 || !lambda.is_multiple_of(2) {
        return Err(StmcError::InvalidLambda(lambda));
    }
    Ok(())
}

/// True when instant `t` has a valid window of half-width `lambda`.
pub fn window_valid(instants: &[GameInstant], t: usize, lambda: usize) -> bool {
    if t < lambda + 1 || t + lambda >= instants.len() {
        return false;
    }
    instants[t - lambda..=t + lambda]
        .iter()
        .all(|i| i.t == t || !i.kind.is_interruption())
}

/// Outcome at instant `t` from `side`'s perspective, or `None` when the
/// window is invalid. `margins` must be `margin_series(instants, side)`.
fn stats_at(
    instants: &[GameInstant],
    margins: &[i32],
    t: usize,
    lambda: usize,
) -> Option<WindowStats> {
    if !window_valid(instants, t, lambda) {
        return None;
    }
    let dpre_num = margins[t - 1] - margins[t - lambda - 1];
    let dpost_num = margins[t + lambda] - margins[t];
    let y = f64::from(dpost_num - dpre_num) / lambda as f64;
    Some(WindowStats { dpre_num, dpost_num, y })
}

/// Outcome at a single instant. Prefer [`batch_stmc`] for whole games.
pub fn window_stats(
    instants: &[GameInstant],
    t: usize,
    lambda: usize,
    side: Side,
) -> Result<Option<WindowStats>, StmcError> {
    validate_lambda(lambda)?;
    let margins = margin_series(instants, side);
    Ok(stats_at(instants, &margins, t, lambda))
}

/// Outcomes for every instant of a game (`None` where the window is
/// invalid), from `side`'s perspective.
pub fn batch_stmc(
    instants: &[GameInstant],
    lambda: usize,
    side: Side,
) -> Result<Vec<Option<WindowStats>>, StmcError> {
    validate_lambda(lambda)?;
    let margins = margin_series(instants, side);
    Ok((0..instants.len()).map(|t| stats_at(instants, &margins, t, lambda)).collect())
}
