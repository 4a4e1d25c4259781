//! Cross-module pipeline tests: simulated seasons flow through CSV round
//! trips, unit construction, matching, balance, and inference, and the
//! invariants that span module boundaries hold.

use stopclock::cohort::{
    build_units, prefilter_controls, read_units_csv, subgroup_filter, write_units_csv,
    SubgroupMode,
};
use stopclock::diagnostics::{balance_rows, covariate_values, BalanceStage};
use stopclock::inference::{estimate_te, invert_ci, paired_differences, permutation_test};
use stopclock::matching::{match_units, MatchAlgorithm, MatchConfig, MatchMethod, MatchedSample};
use stopclock::pbp::{parse_pbp, segment_all, write_pbp_csv, Side};
use stopclock::propensity::{fit, GbmConfig};
use stopclock::simulator::{generate, SimConfig};

fn sim(n_games: usize, delta: f64, seed: u64) -> stopclock::simulator::SimOutput {
    generate(&SimConfig { n_games, delta, lambda: 4, seed, ..SimConfig::default() }).unwrap()
}

fn pair_keys(units: &[stopclock::cohort::Unit], sample: &MatchedSample) -> Vec<(String, usize, usize)> {
    sample
        .pairs
        .iter()
        .map(|p| (units[p.treated].game_id.clone(), units[p.treated].t, units[p.control].t))
        .collect()
}

#[test]
fn end_to_end_recovery_through_the_csv_boundary() {
    let out = sim(150, 0.5, 21);

    // Round-trip the raw events through the play-by-play format before
    // analyzing, as a file-based pipeline would.
    let mut buf = Vec::new();
    write_pbp_csv(&mut buf, &out.games).unwrap();
    let games = segment_all(&parse_pbp(buf.as_slice()).unwrap()).unwrap();
    assert_eq!(games, out.instants);

    let lambda = 4;
    let units = prefilter_controls(&build_units(&games, lambda, Side::Home).unwrap());
    let rows: Vec<Vec<f64>> =
        units.iter().map(|u| covariate_values(u, lambda).map(|(_, v)| v).to_vec()).collect();
    let labels: Vec<bool> = units.iter().map(|u| u.treated).collect();
    let model = fit(&GbmConfig { seed: 5, ..GbmConfig::default() }, &rows, &labels).unwrap();
    let scores = model.predict(&rows);

    let cfg = MatchConfig {
        method: MatchMethod::Propensity,
        algorithm: MatchAlgorithm::Optimal,
        lambda,
        seed: 9,
    };
    let sample = match_units(&units, Some(&scores), &cfg).unwrap();
    assert!(sample.pairs.len() > 150, "expected a healthy sample, got {}", sample.pairs.len());

    let diffs = paired_differences(&units, &sample);
    let te = estimate_te(&diffs).unwrap();
    assert!((0.2..=0.8).contains(&te), "te = {te} for injected 0.5");
    let test = permutation_test(&diffs, 1999, 3).unwrap();
    assert!(test.p_value < 0.05, "p = {}", test.p_value);
    let ci = invert_ci(&diffs, 1999, 3, 0.01).unwrap();
    assert!(ci.lo <= 0.5 && 0.5 <= ci.hi, "99% CI [{}, {}] misses truth", ci.lo, ci.hi);

    // Exact matching on the pre-window run: matched dpre SMD is exactly 0.
    let balance = balance_rows(&units, &sample.pairs, lambda, "propensity");
    let am_dpre = balance
        .iter()
        .find(|r| r.stage == BalanceStage::After && r.covariate == "dpre")
        .unwrap();
    assert_eq!(am_dpre.smd, 0.0);
    assert_eq!(am_dpre.mean_t, am_dpre.mean_c);
}

#[test]
fn prefiltering_controls_never_changes_the_matched_pairs() {
    // Prefiltered-away controls are feasible for no treated unit, so with
    // distances held fixed the matching is untouched.
    let out = sim(80, 0.0, 33);
    let lambda = 2;
    let full = build_units(&out.instants, lambda, Side::Home).unwrap();
    let kept = prefilter_controls(&full);
    assert!(kept.len() < full.len(), "prefilter should drop something here");

    // Propensity scores fitted once on the full pool, carried to the subset.
    let rows: Vec<Vec<f64>> =
        full.iter().map(|u| covariate_values(u, lambda).map(|(_, v)| v).to_vec()).collect();
    let labels: Vec<bool> = full.iter().map(|u| u.treated).collect();
    let model = fit(&GbmConfig { seed: 4, ..GbmConfig::default() }, &rows, &labels).unwrap();
    let full_scores = model.predict(&rows);
    let kept_scores: Vec<f64> = kept
        .iter()
        .map(|u| {
            let at = full
                .iter()
                .position(|v| v.game_id == u.game_id && v.t == u.t)
                .unwrap();
            full_scores[at]
        })
        .collect();

    for (method, scores_full, scores_kept) in [
        (MatchMethod::NoBalance, None, None),
        (MatchMethod::Propensity, Some(&full_scores), Some(&kept_scores)),
    ] {
        let cfg = MatchConfig { method, algorithm: MatchAlgorithm::Optimal, lambda, seed: 1 };
        let a = match_units(&full, scores_full.map(|s| s.as_slice()), &cfg).unwrap();
        let b = match_units(&kept, scores_kept.map(|s| s.as_slice()), &cfg).unwrap();
        assert_eq!(pair_keys(&full, &a), pair_keys(&kept, &b), "method {method:?}");
    }
}

#[test]
fn clock_subgroups_partition_the_unit_pool() {
    let out = sim(60, 0.0, 44);
    let units = build_units(&out.instants, 2, Side::Away).unwrap();
    let minus = subgroup_filter(&units, SubgroupMode::MinusLast5);
    let only = subgroup_filter(&units, SubgroupMode::OnlyLast5);
    assert_eq!(minus.len() + only.len(), units.len());
    assert!(!only.is_empty(), "late-game units should exist");
    let mut rejoined: Vec<(String, usize)> = minus
        .iter()
        .chain(&only)
        .map(|u| (u.game_id.clone(), u.t))
        .collect();
    rejoined.sort();
    let mut all: Vec<(String, usize)> = units.iter().map(|u| (u.game_id.clone(), u.t)).collect();
    all.sort();
    assert_eq!(rejoined, all);
}

#[test]
fn the_full_analysis_is_reproducible_and_units_survive_csv() {
    let out = sim(60, 0.2, 55);
    let lambda = 2;
    let run = || {
        let units = prefilter_controls(&build_units(&out.instants, lambda, Side::Home).unwrap());
        let cfg = MatchConfig {
            method: MatchMethod::Mahalanobis,
            algorithm: MatchAlgorithm::Greedy,
            lambda,
            seed: 17,
        };
        let sample = match_units(&units, None, &cfg).unwrap();
        let diffs = paired_differences(&units, &sample);
        (pair_keys(&units, &sample), permutation_test(&diffs, 4096, 2).unwrap())
    };
    let (pairs_a, test_a) = run();
    let (pairs_b, test_b) = run();
    assert_eq!(pairs_a, pairs_b);
    assert_eq!(test_a, test_b);

    let units = prefilter_controls(&build_units(&out.instants, lambda, Side::Home).unwrap());
    let mut buf = Vec::new();
    write_units_csv(&mut buf, &units).unwrap();
    assert_eq!(read_units_csv(buf.as_slice()).unwrap(), units);
}
