//! Seeded season simulator with an injectable ground-truth timeout effect.
//!
//! Games are four quarters of strictly alternating possessions (home ball
//! first, [`SimConfig::possessions_per_quarter`] per side per quarter, evenly
//! spaced on the clock). Each possession scores 0–3 points from the
//! offense's [`ScoreDist`]; scoreless possessions split evenly between
//! turnovers and missed shots with a defensive rebound.
//!
//! After each possession, each side (home first) may call a timeout under a
//! momentum-reactive [`TimeoutPolicy`]: if the side's scoring run over the
//! last `lambda` instants is at or below `momentum_threshold` it calls with
//! probability `momentum_prob`, otherwise `base_prob`, limited to six
//! timeouts per side per half. Official timeouts fire at configured
//! elapsed-time marks unless a timeout already occurred since the previous
//! mark; they are charged alternately (home first) but consume no budget and
//! carry no effect.
//!
//! The ground-truth causal effect is injected only behind team timeouts:
//! for each of the `lambda` possessions after one, with probability
//! `|delta|` the beneficiary (the caller when `delta > 0`, the opponent when
//! `delta < 0`) makes one extra free throw before the possession's closing
//! event — at most one per possession, so a possession never swings the
//! margin by more than four points. On the short-term margin-change scale
//! the injected effect equals `delta`; [`paired_counterfactual_gap`]
//! re-derives it by simulating forced-timeout versus forbidden-timeout
//! continuations from shared histories.
//!
//! Randomness is one `ChaCha20` sequence per game (`set_stream(index + 1)`
//! over the config seed) with a fixed draw order — points, then the effect
//! roll when armed, then the scoreless-type coin, then the home and away
//! policy rolls — so output is reproducible regardless of thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pbp::{
    period_length_secs, EventKind, GameEvents, GameInstant, GameInstants, InstantKind, PlayEvent,
    Side, Team,
};

/// Team timeouts allowed per side per half.
pub const TIMEOUTS_PER_HALF: usize = 6;

/// Distribution of points scored by one possession.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreDist {
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
}

impl Default for ScoreDist {
    /// League-typical mix: ~0.98 points per possession.
    fn default() -> Self {
        ScoreDist { p0: 0.52, p1: 0.06, p2: 0.34, p3: 0.08 }
    }
}

impl ScoreDist {
    pub fn mean(&self) -> f64 {
        self.p1 + 2.0 * self.p2 + 3.0 * self.p3
    }

    fn validate(&self) -> Result<(), SimError> {
        let ps = [self.p0, self.p1, self.p2, self.p3];
        let sum: f64 = ps.iter().sum();
        if ps.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-9 {
            return Err(SimError::InvalidScoreDist);
        }
        Ok(())
    }

    fn sample(&self, u: f64) -> u8 {
        if u < self.p0 {
            0
        } else if u < self.p0 + self.p1 {
            1
        } else if u < self.p0 + self.p1 + self.p2 {
            2
        } else {
            3
        }
    }
}

/// Momentum-reactive timeout-calling behavior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeoutPolicy {
    /// Call at `momentum_prob` when the side's run over the last `lambda`
    /// instants is at or below this (a negative run = being outscored).
    pub momentum_threshold: i32,
    /// Call probability on an ordinary possession boundary.
    pub base_prob: f64,
    /// Call probability when the momentum trigger is active.
    pub momentum_prob: f64,
}

impl Default for TimeoutPolicy {
    fn default() -> Self {
        TimeoutPolicy { momentum_threshold: -4, base_prob: 0.01, momentum_prob: 0.3 }
    }
}

/// Full simulator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_games: usize,
    /// Possessions per side per quarter (a quarter holds twice this many).
    pub possessions_per_quarter: usize,
    pub home_points: ScoreDist,
    pub away_points: ScoreDist,
    pub policy: TimeoutPolicy,
    /// Elapsed-second marks (per quarter, ascending) for official timeouts.
    pub official_marks: Vec<f64>,
    /// Injected per-instant effect of a team timeout on the caller's
    /// short-term margin change; must lie in [-1, 1].
    pub delta: f64,
    /// Window length used by both the policy trigger and the effect
    /// duration; any positive length (analysis windows carry their own
    /// evenness rule, the generating policy does not).
    pub lambda: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_games: 100,
            possessions_per_quarter: 24,
            home_points: ScoreDist::default(),
            away_points: ScoreDist::default(),
            policy: TimeoutPolicy::default(),
            official_marks: Vec::new(),
            delta: 0.0,
            lambda: 4,
            seed: 7,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        // The policy window and injection span accept any positive length;
        // the even-λ rule constrains analysis windows (STMC needs balanced
        // offense alternation), not the generating policy.
        if self.lambda == 0 {
            return Err(SimError::InvalidLambda(self.lambda));
        }
        if !(self.delta.is_finite() && self.delta.abs() <= 1.0) {
            return Err(SimError::InvalidDelta(self.delta));
        }
        if self.possessions_per_quarter == 0 {
            return Err(SimError::ZeroPossessions);
        }
        self.home_points.validate()?;
        self.away_points.validate()?;
        for p in [self.policy.base_prob, self.policy.momentum_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SimError::InvalidPolicyProb(p));
            }
        }
        let mut prev = 0.0;
        for &m in &self.official_marks {
            if !(m.is_finite() && (0.0..=720.0).contains(&m) && m >= prev) {
                return Err(SimError::InvalidOfficialMarks);
            }
            prev = m;
        }
        Ok(())
    }
}

/// Ground truth emitted beside every simulated season.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    /// True per-instant effect of a team timeout on the caller's short-term
    /// margin change.
    pub delta: f64,
    /// Policy momentum threshold.
    pub theta: i32,
    /// Policy base call probability.
    pub pi0: f64,
    /// Policy momentum call probability.
    pub pi1: f64,
    pub lambda: usize,
    pub n_games: usize,
    pub seed: u64,
}

/// A simulated season: raw events, the segmenter-equivalent instants, and
/// the generating truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub games: Vec<GameEvents>,
    pub instants: Vec<GameInstants>,
    pub truth: SimTruth,
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("lambda must be a positive integer, got {0}")]
    InvalidLambda(usize),
    #[error("delta must lie in [-1, 1], got {0}")]
    InvalidDelta(f64),
    #[error("score distribution probabilities must be in [0,1] and sum to 1")]
    InvalidScoreDist,
    #[error("policy probability {0} outside [0, 1]")]
    InvalidPolicyProb(f64),
    #[error("official marks must be ascending within [0, 720]")]
    InvalidOfficialMarks,
    #[error("possessions_per_quarter must be positive")]
    ZeroPossessions,
}

fn team_of(side: Side) -> Team {
    match side {
        Side::Home => Team::Home,
        Side::Away => Team::Away,
    }
}

/// Side's scoring run over the last `lambda` recorded instants, or `None`
/// when fewer than `lambda + 1` instants exist yet.
fn recent_run(instants: &[GameInstant], side: Side, lambda: usize) -> Option<i32> {
    let n = instants.len();
    if n < lambda + 1 {
        return None;
    }
    Some((instants[n - 1].margin_home - instants[n - 1 - lambda].margin_home) * side.sign())
}

fn simulate_game(cfg: &SimConfig, index: usize) -> (GameEvents, GameInstants) {
    let game_id = format!("sim-{:05}", index + 1);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);

    let per_quarter = 2 * cfg.possessions_per_quarter;
    let mut events: Vec<PlayEvent> = Vec::with_capacity(4 * (per_quarter + 2));
    let mut instants: Vec<GameInstant> = Vec::with_capacity(4 * (per_quarter + 1));
    let mut margin: i32 = 0;
    let mut offense = Side::Home;
    // Remaining team timeouts this half, indexed home = 0 / away = 1.
    let mut budget = [TIMEOUTS_PER_HALF; 2];
    // Armed effect: (beneficiary, possessions remaining).
    let mut effect: Option<(Side, usize)> = None;
    let mut official_turn = Side::Home;

    let push_event = |events: &mut Vec<PlayEvent>,
                          period: u32,
                          clock: f64,
                          kind: EventKind,
                          team: Team,
                          raw: &str| {
        events.push(PlayEvent {
            game_id: game_id.clone(),
            period,
            clock_remaining: clock,
            kind,
            team,
            raw_text: raw.to_string(),
        });
    };

    for quarter in 1..=4u32 {
        if quarter == 3 {
            budget = [TIMEOUTS_PER_HALF; 2];
        }
        let plen = period_length_secs(quarter);
        let spacing = plen / per_quarter as f64;
        let mut mark_idx = 0usize;
        let mut timeout_since_mark = false;

        for k in 0..per_quarter {
            let clock = (plen - spacing * (k + 1) as f64).max(0.0);
            let seconds = plen - clock;

            // Fixed draw order: points, effect roll, scoreless-type coin.
            let u_points: f64 = rng.gen();
            let dist = match offense {
                Side::Home => &cfg.home_points,
                Side::Away => &cfg.away_points,
            };
            let points = dist.sample(u_points);

            let mut injected: Option<Side> = None;
            if let Some((beneficiary, remaining)) = effect {
                let u_eff: f64 = rng.gen();
                if u_eff < cfg.delta.abs() {
                    injected = Some(beneficiary);
                }
                effect = (remaining > 1).then_some((beneficiary, remaining - 1));
            }

            if let Some(beneficiary) = injected {
                margin += beneficiary.sign();
                push_event(
                    &mut events,
                    quarter,
                    clock,
                    EventKind::FreeThrow { made: true, last_in_trip: false },
                    team_of(beneficiary),
                    "technical free throw",
                );
            }

            if points > 0 {
                margin += i32::from(points) * offense.sign();
                let raw = match points {
                    1 => "driving layup blocked, goaltending (1 pt)",
                    2 => "pull-up jumper (2 pts)",
                    _ => "three-pointer (3 pts)",
                };
                push_event(
                    &mut events,
                    quarter,
                    clock,
                    EventKind::ShotMade { points },
                    team_of(offense),
                    raw,
                );
            } else if rng.gen::<f64>() < 0.5 {
                push_event(
                    &mut events,
                    quarter,
                    clock,
                    EventKind::Turnover,
                    team_of(offense),
                    "turnover",
                );
            } else {
                push_event(
                    &mut events,
                    quarter,
                    clock,
                    EventKind::ShotMissed,
                    team_of(offense),
                    "missed shot",
                );
                push_event(
                    &mut events,
                    quarter,
                    clock,
                    EventKind::Rebound { offensive: false },
                    team_of(offense.opponent()),
                    "defensive rebound",
                );
            }

            instants.push(GameInstant {
                t: instants.len(),
                kind: InstantKind::Possession { offense },
                quarter,
                seconds_elapsed: seconds,
                margin_home: margin,
            });

            // Official timeouts at any mark just passed, unless one already
            // occurred since the previous mark.
            while mark_idx < cfg.official_marks.len() && seconds >= cfg.official_marks[mark_idx] {
                if !timeout_since_mark {
                    let caller = official_turn;
                    official_turn = official_turn.opponent();
                    push_event(
                        &mut events,
                        quarter,
                        clock,
                        EventKind::Timeout { official: true },
                        team_of(caller),
                        "official timeout",
                    );
                    instants.push(GameInstant {
                        t: instants.len(),
                        kind: InstantKind::Timeout { caller, official: true },
                        quarter,
                        seconds_elapsed: seconds,
                        margin_home: margin,
                    });
                }
                timeout_since_mark = false;
                mark_idx += 1;
            }

            // Team timeout decisions, home side first; skipped at the
            // quarter's final boundary (the break is coming anyway).
            if k + 1 < per_quarter {
                for side in [Side::Home, Side::Away] {
                    let u_call: f64 = rng.gen();
                    let run = recent_run(&instants, side, cfg.lambda);
                    let p_call = match run {
                        Some(r) if r <= cfg.policy.momentum_threshold => cfg.policy.momentum_prob,
                        _ => cfg.policy.base_prob,
                    };
                    let slot = match side {
                        Side::Home => 0,
                        Side::Away => 1,
                    };
                    if u_call < p_call && budget[slot] > 0 {
                        budget[slot] -= 1;
                        timeout_since_mark = true;
                        push_event(
                            &mut events,
                            quarter,
                            clock,
                            EventKind::Timeout { official: false },
                            team_of(side),
                            "timeout",
                        );
                        instants.push(GameInstant {
                            t: instants.len(),
                            kind: InstantKind::Timeout { caller: side, official: false },
                            quarter,
                            seconds_elapsed: seconds,
                            margin_home: margin,
                        });
                        if cfg.delta != 0.0 {
                            let beneficiary =
                                if cfg.delta > 0.0 { side } else { side.opponent() };
                            effect = Some((beneficiary, cfg.lambda));
                        }
                    }
                }
            }

            offense = offense.opponent();
        }

        push_event(
            &mut events,
            quarter,
            0.0,
            EventKind::PeriodEnd,
            Team::Neutral,
            &format!("end of period {quarter}"),
        );
        instants.push(GameInstant {
            t: instants.len(),
            kind: InstantKind::PeriodEnd,
            quarter,
            seconds_elapsed: plen,
            margin_home: margin,
        });
    }

    (
        GameEvents { game_id: game_id.clone(), events },
        GameInstants { game_id, instants },
    )
}

/// Simulates a season. Deterministic in the config (including across thread
/// counts): every game draws from its own seeded stream.
pub fn generate(cfg: &SimConfig) -> Result<SimOutput, SimError> {
    cfg.validate()?;
    let per_game: Vec<(GameEvents, GameInstants)> =
        (0..cfg.n_games).into_par_iter().map(|i| simulate_game(cfg, i)).collect();
    let mut games = Vec::with_capacity(per_game.len());
    let mut instants = Vec::with_capacity(per_game.len());
    for (g, i) in per_game {
        games.push(g);
        instants.push(i);
    }
    Ok(SimOutput {
        games,
        instants,
        truth: SimTruth {
            delta: cfg.delta,
            theta: cfg.policy.momentum_threshold,
            pi0: cfg.policy.base_prob,
            pi1: cfg.policy.momentum_prob,
            lambda: cfg.lambda,
            n_games: cfg.n_games,
            seed: cfg.seed,
        },
    })
}

/// Monte-Carlo oracle for the true timeout effect.
///
/// Each rollout simulates `lambda + 1` shared prefix possessions, then two
/// continuations from identical scoring draws: one with a home timeout
/// forced at the next instant (effect armed), one with timeouts forbidden.
/// The policy is disabled throughout. The returned mean of the treated-
/// minus-control short-term margin changes estimates `delta` without using
/// any of the estimation pipeline.
///
/// Rollout `r` uses streams `3r` (prefix), `3r + 1` (shared continuation
/// scoring), and `3r + 2` (effect rolls), so results are reproducible and
/// thread-count independent.
pub fn paired_counterfactual_gap(
    cfg: &SimConfig,
    n_rollouts: usize,
    seed: u64,
) -> Result<f64, SimError> {
    cfg.validate()?;
    let lambda = cfg.lambda;
    let gaps: Vec<f64> = (0..n_rollouts)
        .into_par_iter()
        .map(|r| {
            let stream = |s: u64| {
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                rng.set_stream(s);
                rng
            };
            let mut rng_prefix = stream(3 * r as u64);

            // Shared prefix: possessions 0..=lambda, home ball first.
            let mut margin = 0i32;
            let mut offense = Side::Home;
            for _ in 0..=lambda {
                let dist = match offense {
                    Side::Home => &cfg.home_points,
                    Side::Away => &cfg.away_points,
                };
                margin += i32::from(dist.sample(rng_prefix.gen())) * offense.sign();
                offense = offense.opponent();
            }

            // Both arms replay the same continuation scoring stream; only
            // the treated arm consumes effect rolls (their own stream, so
            // the arms stay aligned).
            let caller = Side::Home;
            let beneficiary = if cfg.delta >= 0.0 { caller } else { caller.opponent() };
            let arm = |inject: bool| -> i32 {
                let mut rng_cont = stream(3 * r as u64 + 1);
                let mut rng_eff = stream(3 * r as u64 + 2);
                let mut m = margin;
                let mut off = offense;
                for _ in 0..lambda {
                    let dist = match off {
                        Side::Home => &cfg.home_points,
                        Side::Away => &cfg.away_points,
                    };
                    if inject && rng_eff.gen::<f64>() < cfg.delta.abs() {
                        m += beneficiary.sign();
                    }
                    m += i32::from(dist.sample(rng_cont.gen())) * off.sign();
                    off = off.opponent();
                }
                m - margin
            };
            let dpost_treated = arm(true);
            let dpost_control = arm(false);
            // Pre-windows are identical, so the drift difference reduces to
            // the post-window gap.
            f64::from(dpost_treated - dpost_control) / lambda as f64
        })
        .collect();
    Ok(gaps.iter().sum::<f64>() / n_rollouts.max(1) as f64)
}
