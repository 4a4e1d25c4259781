//! 1:1 matching of treated timeouts to control possessions.
//!
//! A treated/control pair is **feasible** only within the same game, with
//! exactly equal pre-window scoring runs (`dpre_num`), and with instant
//! indices more than `2 * lambda` apart so the outcome windows cannot
//! overlap. Among feasible pairs, three distances are supported:
//!
//! * `NoBalance` — every feasible pair costs zero (a cardinality-only
//!   baseline);
//! * `Mahalanobis` — `sqrt(d' S^-1 d)` over (quarter, margin, seconds) with
//!   `S` the pooled sample covariance (pseudo-inverted when singular);
//! * `Propensity` — absolute difference of supplied propensity scores.
//!
//! The `Optimal` algorithm solves each game's assignment exactly — maximum
//! cardinality first, minimum total cost among maximum-cardinality matchings
//! — by successive shortest augmenting paths over integer costs
//! (`round(distance * 1e6)`) with Johnson potentials. The `Greedy`
//! algorithm, kept as a comparison baseline, takes treated units in a
//! seeded shuffled order and grabs each one's nearest unmatched control
//! (ties to the lowest control index); it can strand feasible treated units
//! and overpay, which is the point of comparing against it.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::Unit;
use crate::stmc::validate_lambda;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchMethod {
    NoBalance,
    Mahalanobis,
    Propensity,
}

impl MatchMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            MatchMethod::NoBalance => "nb",
            MatchMethod::Mahalanobis => "mahalanobis",
            MatchMethod::Propensity => "propensity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchAlgorithm {
    Optimal,
    Greedy,
}

impl MatchAlgorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            MatchAlgorithm::Optimal => "optimal",
            MatchAlgorithm::Greedy => "greedy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub method: MatchMethod,
    pub algorithm: MatchAlgorithm,
    /// Window half-width; pairs must have `|t_T - t_C| > 2 * lambda`.
    pub lambda: usize,
    /// Shuffle seed for the greedy treated order (unused by `Optimal`).
    pub seed: u64,
}

/// One matched pair, as indices into the unit slice given to [`match_units`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub treated: usize,
    pub control: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedSample {
    pub pairs: Vec<MatchedPair>,
    /// Treated units in the pool (matched or not).
    pub n_treated: usize,
    pub total_distance: f64,
    /// Whether the Mahalanobis metric had to pseudo-invert a singular
    /// covariance.
    pub used_pseudo_inverse: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum MatchError {
    #[error("lambda must be a positive even integer, got {0}")]
    InvalidLambda(usize),
    #[error("propensity matching requires scores")]
    MissingScores,
    #[error("{0} scores for {1} units")]
    ScoresLengthMismatch(usize, usize),
}

/// Whether a treated/control pair may be matched.
pub fn feasible(a: &Unit, b: &Unit, lambda: usize) -> bool {
    a.game_id == b.game_id && a.dpre_num == b.dpre_num && a.t.abs_diff(b.t) > 2 * lambda
}

/// Pooled-covariance Mahalanobis metric over (quarter, margin, seconds).
#[derive(Debug, Clone, PartialEq)]
pub struct CovMetric {
    inv: Matrix3<f64>,
    pseudo: bool,
}

fn covariate_vec(u: &Unit) -> Vector3<f64> {
    Vector3::new(f64::from(u.quarter), f64::from(u.margin), u.seconds)
}

/// Sample covariance (n - 1 denominator) of the pooled units' covariates,
/// inverted — or pseudo-inverted via symmetric eigendecomposition when
/// singular.
pub fn mahalanobis_cov(units: &[Unit]) -> CovMetric {
    let n = units.len();
    let mut cov = Matrix3::zeros();
    if n >= 2 {
        let mut mean = Vector3::zeros();
        for u in units {
            mean += covariate_vec(u);
        }
        mean /= n as f64;
        for u in units {
            let d = covariate_vec(u) - mean;
            cov += d * d.transpose();
        }
        cov /= (n - 1) as f64;
    }

    let invertible = cov.try_inverse().filter(|inv| {
        ((cov * inv) - Matrix3::identity()).norm() <= 1e-8 * (1.0 + cov.norm() * inv.norm())
    });
    match invertible {
        Some(inv) => CovMetric { inv, pseudo: false },
        None => {
            let eig = SymmetricEigen::new(cov);
            let max_ev = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
            let tol = max_ev * 1e-12;
            let inv_vals = eig.eigenvalues.map(|v| if v.abs() > tol { 1.0 / v } else { 0.0 });
            let inv = eig.eigenvectors * Matrix3::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
            CovMetric { inv, pseudo: true }
        }
    }
}

impl CovMetric {
    pub fn used_pseudo_inverse(&self) -> bool {
        self.pseudo
    }

    pub fn distance(&self, a: &Unit, b: &Unit) -> f64 {
        let d = covariate_vec(a) - covariate_vec(b);
        (d.transpose() * self.inv * d)[(0, 0)].max(0.0).sqrt()
    }
}

/// Distance on the integer cost scale used by the exact solver.
fn to_cost(distance: f64) -> i64 {
    (distance * 1e6).round() as i64
}

const INF: i64 = i64::MAX / 4;

/// Exact per-game assignment: maximum cardinality, then minimum total cost,
/// by successive shortest augmenting paths with potentials. `adj[i]` lists
/// `(control, cost >= 0)` for treated `i`. Returns `(treated, control)`
/// pairs.
fn min_cost_max_matching(
    n_treated: usize,
    n_controls: usize,
    adj: &[Vec<(usize, i64)>],
) -> Vec<(usize, usize)> {
    let mut match_l: Vec<Option<usize>> = vec![None; n_treated];
    let mut match_r: Vec<Option<usize>> = vec![None; n_controls];
    let mut pot_l = vec![0i64; n_treated];
    let mut pot_r = vec![0i64; n_controls];

    // Node encoding in the heap: treated i -> 2i, control j -> 2j + 1.
    loop {
        let mut dist_l = vec![INF; n_treated];
        let mut dist_r = vec![INF; n_controls];
        let mut done_l = vec![false; n_treated];
        let mut done_r = vec![false; n_controls];
        let mut parent_r: Vec<usize> = vec![usize::MAX; n_controls];
        let mut heap: BinaryHeap<Reverse<(i64, usize)>> = BinaryHeap::new();

        for i in 0..n_treated {
            if match_l[i].is_none() {
                dist_l[i] = 0;
                heap.push(Reverse((0, 2 * i)));
            }
        }

        let mut target: Option<(usize, i64)> = None;
        while let Some(Reverse((d, node))) = heap.pop() {
            if node % 2 == 0 {
                let i = node / 2;
                if done_l[i] || d > dist_l[i] {
                    continue;
                }
                done_l[i] = true;
                for &(j, cost) in &adj[i] {
                    if match_l[i] == Some(j) || done_r[j] {
                        continue;
                    }
                    let rc = cost + pot_l[i] - pot_r[j];
                    debug_assert!(rc >= 0);
                    let nd = d + rc;
                    if nd < dist_r[j] {
                        dist_r[j] = nd;
                        parent_r[j] = i;
                        heap.push(Reverse((nd, 2 * j + 1)));
                    }
                }
            } else {
                let j = node / 2;
                if done_r[j] || d > dist_r[j] {
                    continue;
                }
                done_r[j] = true;
                match match_r[j] {
                    None => {
                        target = Some((j, d));
                        break;
                    }
                    Some(i) => {
                        // Matched edges are tight, so stepping back to the
                        // treated side costs nothing.
                        if !done_l[i] && d < dist_l[i] {
                            dist_l[i] = d;
                            heap.push(Reverse((d, 2 * i)));
                        }
                    }
                }
            }
        }

        let Some((sink, d_sink)) = target else {
            break; // no augmenting path: matching is maximum
        };

        for i in 0..n_treated {
            pot_l[i] += if done_l[i] { dist_l[i] } else { d_sink };
        }
        for j in 0..n_controls {
            pot_r[j] += if done_r[j] { dist_r[j] } else { d_sink };
        }

        // Flip the augmenting path back from the sink.
        let mut j = sink;
        loop {
            let i = parent_r[j];
            let previous = match_l[i];
            match_l[i] = Some(j);
            match_r[j] = Some(i);
            match previous {
                None => break,
                Some(pj) => j = pj,
            }
        }
    }

    (0..n_treated).filter_map(|i| match_l[i].map(|j| (i, j))).collect()
}

/// Greedy baseline over local adjacency. Treated units are visited in
/// `order`; each takes its cheapest unmatched control, ties broken by
/// `tiebreak[j]` then `j`.
fn greedy_pick(
    n_controls: usize,
    adj: &[Vec<(usize, i64)>],
    order: &[usize],
    tiebreak: &[usize],
) -> Vec<(usize, usize)> {
    let mut taken = vec![false; n_controls];
    let mut picks = Vec::new();
    for &i in order {
        let best = adj[i]
            .iter()
            .filter(|&&(j, _)| !taken[j])
            .min_by_key(|&&(j, cost)| (cost, tiebreak[j], j));
        if let Some(&(j, _)) = best {
            taken[j] = true;
            picks.push((i, j));
        }
    }
    picks
}

struct GamePool {
    /// Global unit indices of treated / control units in one game.
    treated: Vec<usize>,
    controls: Vec<usize>,
    /// `adj[i]` lists `(local control, cost)` for local treated `i`.
    adj: Vec<Vec<(usize, i64)>>,
}

/// Matches treated to control units under `cfg`.
///
/// `scores` are required (aligned with `units`) for
/// [`MatchMethod::Propensity`] and ignored otherwise. Pairs come back
/// sorted by (game id, treated instant).
pub fn match_units(
    units: &[Unit],
    scores: Option<&[f64]>,
    cfg: &MatchConfig,
) -> Result<MatchedSample, MatchError> {
    validate_lambda(cfg.lambda).map_err(|_| MatchError::InvalidLambda(cfg.lambda))?;
    if cfg.method == MatchMethod::Propensity {
        let s = scores.ok_or(MatchError::MissingScores)?;
        if s.len() != units.len() {
            return Err(MatchError::ScoresLengthMismatch(s.len(), units.len()));
        }
    }

    let cov = (cfg.method == MatchMethod::Mahalanobis).then(|| mahalanobis_cov(units));
    let used_pseudo_inverse = cov.as_ref().is_some_and(|c| c.pseudo);
    let distance = |a: usize, b: usize| -> f64 {
        match cfg.method {
            MatchMethod::NoBalance => 0.0,
            MatchMethod::Mahalanobis => {
                cov.as_ref().unwrap().distance(&units[a], &units[b])
            }
            MatchMethod::Propensity => {
                let s = scores.unwrap();
                (s[a] - s[b]).abs()
            }
        }
    };

    // Group units per game (first appearance order) and build feasible
    // edges.
    let mut game_order: Vec<&str> = Vec::new();
    let mut slots: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    let mut pools: Vec<GamePool> = Vec::new();
    for (idx, u) in units.iter().enumerate() {
        let slot = *slots.entry(u.game_id.as_str()).or_insert_with(|| {
            game_order.push(u.game_id.as_str());
            pools.push(GamePool { treated: Vec::new(), controls: Vec::new(), adj: Vec::new() });
            pools.len() - 1
        });
        if u.treated {
            pools[slot].treated.push(idx);
        } else {
            pools[slot].controls.push(idx);
        }
    }
    for pool in &mut pools {
        pool.adj = pool
            .treated
            .iter()
            .map(|&ti| {
                pool.controls
                    .iter()
                    .enumerate()
                    .filter(|&(_, &ci)| feasible(&units[ti], &units[ci], cfg.lambda))
                    .map(|(lj, &ci)| (lj, to_cost(distance(ti, ci))))
                    .collect()
            })
            .collect();
    }

    let n_treated = pools.iter().map(|p| p.treated.len()).sum();

    let mut pairs: Vec<MatchedPair> = match cfg.algorithm {
        MatchAlgorithm::Optimal => pools
            .par_iter()
            .map(|pool| {
                min_cost_max_matching(pool.treated.len(), pool.controls.len(), &pool.adj)
                    .into_iter()
                    .map(|(li, lj)| {
                        let (ti, ci) = (pool.treated[li], pool.controls[lj]);
                        MatchedPair { treated: ti, control: ci, distance: distance(ti, ci) }
                    })
                    .collect::<Vec<_>>()
            })
            .flatten()
            .collect(),
        MatchAlgorithm::Greedy => {
            // Shuffle all treated units globally; games are independent, so
            // applying the global visiting order per game is equivalent.
            let mut visit: Vec<(usize, usize)> = pools
                .iter()
                .enumerate()
                .flat_map(|(s, p)| (0..p.treated.len()).map(move |li| (s, li)))
                .collect();
            visit.shuffle(&mut ChaCha20Rng::seed_from_u64(cfg.seed));
            let mut orders: Vec<Vec<usize>> = vec![Vec::new(); pools.len()];
            for (s, li) in visit {
                orders[s].push(li);
            }
            pools
                .iter()
                .enumerate()
                .flat_map(|(s, pool)| {
                    let tiebreak: Vec<usize> =
                        pool.controls.iter().map(|&ci| units[ci].t).collect();
                    greedy_pick(pool.controls.len(), &pool.adj, &orders[s], &tiebreak)
                        .into_iter()
                        .map(|(li, lj)| {
                            let (ti, ci) = (pool.treated[li], pool.controls[lj]);
                            MatchedPair {
                                treated: ti,
                                control: ci,
                                distance: distance(ti, ci),
                            }
                        })
                        .collect::<Vec<_>>()
                })
                .collect()
        }
    };

    pairs.sort_by(|a, b| {
        let (ua, ub) = (&units[a.treated], &units[b.treated]);
        ua.game_id.cmp(&ub.game_id).then(ua.t.cmp(&ub.t))
    });
    let total_distance = pairs.iter().map(|p| p.distance).sum();
    Ok(MatchedSample { pairs, n_treated, total_distance, used_pseudo_inverse })
}
