//! Covariate balance diagnostics and distribution exports.
//!
//! Balance is summarized with the standardized mean difference
//! `|mean_t - mean_c| / sqrt((var_t + var_c) / 2)` (sample variances),
//! computed for each matching covariate before matching (stage `bm`, whole
//! pool) and after matching (stage `am`, matched units only). The
//! pre-window run covariate is reported per instant (`dpre_num / lambda`) so
//! its scale matches the outcome. Because pairing is exact on `dpre_num`,
//! its post-match SMD is exactly zero — a structural invariant the tests
//! pin down.
//!
//! Outcome distributions are exported as Freedman–Diaconis histograms
//! (`bin width = 2 IQR / n^(1/3)`, one bin when the IQR degenerates).

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cohort::Unit;
use crate::matching::MatchedPair;
use crate::pbp::{fmt_f64, IngestError};

/// Standardized mean difference from group summary statistics.
///
/// Equal means give 0 even without variance; unequal means with no variance
/// give `f64::INFINITY`.
pub fn smd_from_stats(mean_t: f64, sd_t: f64, mean_c: f64, sd_c: f64) -> f64 {
    let diff = (mean_t - mean_c).abs();
    if diff == 0.0 {
        return 0.0;
    }
    let pooled = ((sd_t * sd_t + sd_c * sd_c) / 2.0).sqrt();
    if pooled == 0.0 {
        f64::INFINITY
    } else {
        diff / pooled
    }
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Standardized mean difference between two samples.
pub fn smd(treated: &[f64], control: &[f64]) -> f64 {
    let (mt, st) = mean_sd(treated);
    let (mc, sc) = mean_sd(control);
    smd_from_stats(mt, st, mc, sc)
}

/// Matching covariate names, in report order.
pub const COVARIATE_NAMES: [&str; 4] = ["seconds", "quarter", "margin", "dpre"];

fn covariate_at(u: &Unit, k: usize, lambda: usize) -> f64 {
    match k {
        0 => u.seconds,
        1 => f64::from(u.quarter),
        2 => f64::from(u.margin),
        _ => f64::from(u.dpre_num) / lambda as f64,
    }
}

/// Matching covariates of a unit, in report order.
pub fn covariate_values(u: &Unit, lambda: usize) -> [(&'static str, f64); 4] {
    [
        (COVARIATE_NAMES[0], covariate_at(u, 0, lambda)),
        (COVARIATE_NAMES[1], covariate_at(u, 1, lambda)),
        (COVARIATE_NAMES[2], covariate_at(u, 2, lambda)),
        (COVARIATE_NAMES[3], covariate_at(u, 3, lambda)),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BalanceStage {
    /// Whole pool, before matching.
    Before,
    /// Matched units only.
    After,
}

impl BalanceStage {
    pub fn as_str(self) -> &'static str {
        match self {
            BalanceStage::Before => "bm",
            BalanceStage::After => "am",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub lambda: usize,
    pub method: String,
    pub stage: BalanceStage,
    pub covariate: String,
    pub mean_c: f64,
    pub sd_c: f64,
    pub mean_t: f64,
    pub sd_t: f64,
    pub smd: f64,
}

fn stage_rows(
    treated: &[&Unit],
    control: &[&Unit],
    lambda: usize,
    method: &str,
    stage: BalanceStage,
) -> Vec<BalanceRow> {
    (0..COVARIATE_NAMES.len())
        .map(|k| {
            let name = COVARIATE_NAMES[k];
            let tv: Vec<f64> = treated.iter().map(|u| covariate_at(u, k, lambda)).collect();
            let cv: Vec<f64> = control.iter().map(|u| covariate_at(u, k, lambda)).collect();
            let (mean_t, sd_t) = mean_sd(&tv);
            let (mean_c, sd_c) = mean_sd(&cv);
            BalanceRow {
                lambda,
                method: method.to_string(),
                stage,
                covariate: name.to_string(),
                mean_c,
                sd_c,
                mean_t,
                sd_t,
                smd: smd_from_stats(mean_t, sd_t, mean_c, sd_c),
            }
        })
        .collect()
}

/// Balance rows for one analysis: the pool before matching, then the
/// matched sample. Empty groups are skipped rather than reported as NaN.
pub fn balance_rows(
    units: &[Unit],
    pairs: &[MatchedPair],
    lambda: usize,
    method: &str,
) -> Vec<BalanceRow> {
    let mut rows = Vec::new();
    let treated: Vec<&Unit> = units.iter().filter(|u| u.treated).collect();
    let control: Vec<&Unit> = units.iter().filter(|u| !u.treated).collect();
    if !treated.is_empty() && !control.is_empty() {
        rows.extend(stage_rows(&treated, &control, lambda, method, BalanceStage::Before));
    }
    if !pairs.is_empty() {
        let mt: Vec<&Unit> = pairs.iter().map(|p| &units[p.treated]).collect();
        let mc: Vec<&Unit> = pairs.iter().map(|p| &units[p.control]).collect();
        rows.extend(stage_rows(&mt, &mc, lambda, method, BalanceStage::After));
    }
    rows
}

/// Writes balance rows as
/// `lambda,method,stage,covariate,mean_c,sd_c,mean_t,sd_t,smd`.
pub fn write_balance_csv<W: Write>(writer: W, rows: &[BalanceRow]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["lambda", "method", "stage", "covariate", "mean_c", "sd_c", "mean_t", "sd_t", "smd"])?;
    for r in rows {
        w.write_record([
            &r.lambda.to_string(),
            &r.method,
            r.stage.as_str(),
            &r.covariate,
            &fmt_f64(r.mean_c),
            &fmt_f64(r.sd_c),
            &fmt_f64(r.mean_t),
            &fmt_f64(r.sd_t),
            &fmt_f64(r.smd),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One histogram bin; `hi` is exclusive except for the last bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let pos = (n - 1) as f64 * p;
    let k = pos.floor() as usize;
    let frac = pos - k as f64;
    if k + 1 < n {
        sorted[k] + frac * (sorted[k + 1] - sorted[k])
    } else {
        sorted[k]
    }
}

/// Freedman–Diaconis histogram. Degenerate spreads (zero IQR or a single
/// distinct value) collapse to one bin.
pub fn fd_histogram(values: &[f64]) -> Vec<HistBin> {
    if values.is_empty() {
        return Vec::new();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let width = 2.0 * iqr / (sorted.len() as f64).cbrt();
    let n_bins = if width > 0.0 && max > min {
        (((max - min) / width).ceil() as usize).clamp(1, 10_000)
    } else {
        1
    };
    let mut bins: Vec<HistBin> = (0..n_bins)
        .map(|b| {
            let step = (max - min) / n_bins as f64;
            HistBin { lo: min + step * b as f64, hi: min + step * (b + 1) as f64, count: 0 }
        })
        .collect();
    bins[n_bins - 1].hi = max;
    let step = (max - min) / n_bins as f64;
    for &v in values {
        let b = if step > 0.0 {
            (((v - min) / step).floor() as usize).min(n_bins - 1)
        } else {
            0
        };
        bins[b].count += 1;
    }
    bins
}

/// Writes labeled histograms as `group,bin_lo,bin_hi,count`.
pub fn write_density_csv<W: Write>(
    writer: W,
    groups: &[(&str, &[HistBin])],
) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["group", "bin_lo", "bin_hi", "count"])?;
    for (name, bins) in groups {
        for b in *bins {
            w.write_record([*name, &fmt_f64(b.lo), &fmt_f64(b.hi), &b.count.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pbp::Side;

    #[test]
    fn smd_matches_a_published_style_summary_row() {
        // Treated 363.42 (sd 198.77) vs control 410.03 (sd 168.47):
        // |diff| / sqrt((198.77^2 + 168.47^2) / 2) = 0.253 to three places.
        let v = smd_from_stats(363.42, 198.77, 410.03, 168.47);
        assert!((v - 0.25298).abs() < 1e-4, "smd = {v}");
        assert_eq!((v * 1000.0).round() / 1000.0, 0.253);
    }

    #[test]
    fn smd_degenerate_cases() {
        assert_eq!(smd(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(smd(&[2.0, 2.0], &[2.0, 2.0]), 0.0);
        assert_eq!(smd(&[2.0, 2.0], &[3.0, 3.0]), f64::INFINITY);
        let sym_ab = smd(&[0.0, 1.0], &[4.0, 5.0]);
        let sym_ba = smd(&[4.0, 5.0], &[0.0, 1.0]);
        assert_eq!(sym_ab, sym_ba);
    }

    fn unit(t: usize, treated: bool, quarter: u32, seconds: f64, margin: i32, dpre: i32) -> Unit {
        Unit {
            game_id: "g".into(),
            t,
            side: Side::Home,
            treated,
            quarter,
            seconds,
            margin,
            dpre_num: dpre,
            y: 0.0,
        }
    }

    #[test]
    fn exact_run_matching_zeroes_the_dpre_smd() {
        let units = vec![
            unit(5, true, 1, 100.0, -3, -4),
            unit(30, true, 2, 300.0, 5, -2),
            unit(12, false, 1, 140.0, -1, -4),
            unit(40, false, 3, 500.0, 2, -2),
            unit(50, false, 4, 600.0, 7, 0),
        ];
        let pairs = vec![
            MatchedPair { treated: 0, control: 2, distance: 0.0 },
            MatchedPair { treated: 1, control: 3, distance: 0.0 },
        ];
        let rows = balance_rows(&units, &pairs, 2, "mahalanobis");
        assert_eq!(rows.len(), 8);
        let dpre_after = rows
            .iter()
            .find(|r| r.stage == BalanceStage::After && r.covariate == "dpre")
            .unwrap();
        assert_eq!(dpre_after.smd, 0.0);
        assert_eq!(dpre_after.mean_t, dpre_after.mean_c);
        // Before matching the pools genuinely differ on dpre.
        let dpre_before = rows
            .iter()
            .find(|r| r.stage == BalanceStage::Before && r.covariate == "dpre")
            .unwrap();
        assert!(dpre_before.smd > 0.0);
        // Per-instant scale: dpre_num / lambda.
        assert_eq!(dpre_after.mean_t, (-4.0 / 2.0 + -2.0 / 2.0) / 2.0);
    }

    #[test]
    fn balance_csv_has_the_pinned_header() {
        let units = vec![unit(5, true, 1, 100.0, 0, 0), unit(30, false, 1, 110.0, 0, 0)];
        let rows = balance_rows(&units, &[], 2, "nb");
        let mut buf = Vec::new();
        write_balance_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("lambda,method,stage,covariate,mean_c,sd_c,mean_t,sd_t,smd\n"));
        assert!(text.contains("\nbm,") || text.contains(",bm,"));
    }

    #[test]
    fn fd_histogram_counts_every_value_once() {
        let values: Vec<f64> = (0..100).map(|i| f64::from(i) / 10.0).collect();
        let bins = fd_histogram(&values);
        assert!(bins.len() > 1);
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 100);
        assert_eq!(bins.first().unwrap().lo, 0.0);
        assert_eq!(bins.last().unwrap().hi, 9.9);
        for w in bins.windows(2) {
            assert_eq!(w[0].hi, w[1].lo);
        }
    }

    #[test]
    fn fd_histogram_degenerates_to_one_bin() {
        let bins = fd_histogram(&[3.0, 3.0, 3.0, 3.0]);
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0].count, 4);
        assert!(fd_histogram(&[]).is_empty());
        // Heavy central ties force IQR = 0 even with spread extremes.
        let bins = fd_histogram(&[0.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 9.0]);
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0].count, 8);
        assert_eq!((bins[0].lo, bins[0].hi), (0.0, 9.0));
    }

    #[test]
    fn fd_histogram_quartet() {
        // n = 4, IQR = 1.5, width = 3 / 4^(1/3) ~ 1.89 -> two bins.
        let bins = fd_histogram(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(bins.len(), 2);
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 4);
        assert_eq!(bins[0].count, 2);
        assert_eq!(bins[1].count, 2);
    }

    #[test]
    fn density_csv_layout() {
        let t = fd_histogram(&[0.0, 0.5, 1.0]);
        let c = fd_histogram(&[0.0, 0.25, 0.5]);
        let mut buf = Vec::new();
        write_density_csv(&mut buf, &[("treated", &t), ("control", &c)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("group,bin_lo,bin_hi,count\n"));
        assert!(text.contains("treated,"));
        assert!(text.contains("control,"));
    }
}
