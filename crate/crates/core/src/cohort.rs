//! Treated/control unit construction for one analysis side.
//!
//! Fixing a side (home or away) and a window half-width `lambda`:
//!
//! * **treated** units are that side's non-official timeouts with a valid
//!   outcome window;
//! * **control** units are possession instants (either offense) with a valid
//!   outcome window — candidate moments where the side could have called a
//!   timeout but play continued.
//!
//! Every unit carries the matching covariates (quarter, seconds into the
//! quarter, score margin from the analysis side's perspective, pre-window
//! scoring run `dpre_num`) and the outcome `y`. Because matching is exact on
//! `(game, dpre_num)`, [`prefilter_controls`] can drop controls that no
//! same-game treated unit could ever pair with; this shrinks propensity and
//! distance computations without changing any match result.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::pbp::{fmt_f64, GameInstants, IngestError, InstantKind, Side};
use crate::stmc::{batch_stmc, StmcError};

/// One analysis unit: a treated timeout or a control possession.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub game_id: String,
    /// Instant index within the game.
    pub t: usize,
    /// Analysis side whose perspective margin and outcome use.
    pub side: Side,
    pub treated: bool,
    pub quarter: u32,
    /// Seconds elapsed in `quarter` at the instant.
    pub seconds: f64,
    /// Score margin from `side`'s perspective entering instant `t`.
    pub margin: i32,
    /// Pre-window scoring run from `side`'s perspective.
    pub dpre_num: i32,
    /// Short-term margin change outcome.
    pub y: f64,
}

/// Game-clock subgroups for sensitivity splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubgroupMode {
    /// Every unit.
    All,
    /// Drop fourth-quarter units in the final five minutes
    /// (quarter 4 with more than 420 s elapsed).
    MinusLast5,
    /// Keep only fourth-quarter units in the final five minutes.
    OnlyLast5,
}

impl SubgroupMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SubgroupMode::All => "all",
            SubgroupMode::MinusLast5 => "minus-last5",
            SubgroupMode::OnlyLast5 => "only-last5",
        }
    }

    fn keeps(self, quarter: u32, seconds: f64) -> bool {
        let last5 = quarter == 4 && seconds > 420.0;
        match self {
            SubgroupMode::All => true,
            SubgroupMode::MinusLast5 => !last5,
            SubgroupMode::OnlyLast5 => last5,
        }
    }
}

/// Builds all units for `side` across `games`.
///
/// Units come out grouped by game (input order) and ordered by `t` within
/// each game.
pub fn build_units(
    games: &[GameInstants],
    lambda: usize,
    side: Side,
) -> Result<Vec<Unit>, StmcError> {
    let mut units = Vec::new();
    for game in games {
        let stats = batch_stmc(&game.instants, lambda, side)?;
        for (k, (instant, stat)) in game.instants.iter().zip(&stats).enumerate() {
            let Some(stat) = stat else { continue };
            let treated = match instant.kind {
                InstantKind::Timeout { caller, official } => {
                    if caller == side && !official {
                        true
                    } else {
                        continue;
                    }
                }
                InstantKind::Possession { .. } => false,
                InstantKind::PeriodEnd => continue,
            };
            // State at decision time: the margin entering the instant, so a
            // control possession's own points (part of neither window) do
            // not leak into its covariates. A valid window needs
            // t >= lambda + 1, so a predecessor always exists.
            let entering = if k == 0 { 0 } else { game.instants[k - 1].margin_home };
            units.push(Unit {
                game_id: game.game_id.clone(),
                t: instant.t,
                side,
                treated,
                quarter: instant.quarter,
                seconds: instant.seconds_elapsed,
                margin: entering * side.sign(),
                dpre_num: stat.dpre_num,
                y: stat.y,
            });
        }
    }
    Ok(units)
}

/// Drops controls whose `(game_id, dpre_num)` matches no treated unit.
///
/// Treated units always survive. Matching is exact on game and `dpre_num`,
/// so the dropped controls are exactly those that could never be paired; the
/// matched sample is unchanged.
pub fn prefilter_controls(units: &[Unit]) -> Vec<Unit> {
    let mut treated_keys: HashMap<&str, HashSet<i32>> = HashMap::new();
    for u in units.iter().filter(|u| u.treated) {
        treated_keys.entry(u.game_id.as_str()).or_default().insert(u.dpre_num);
    }
    units
        .iter()
        .filter(|u| {
            u.treated
                || treated_keys
                    .get(u.game_id.as_str())
                    .is_some_and(|keys| keys.contains(&u.dpre_num))
        })
        .cloned()
        .collect()
}

/// Applies a clock subgroup to a unit list.
pub fn subgroup_filter(units: &[Unit], mode: SubgroupMode) -> Vec<Unit> {
    units.iter().filter(|u| mode.keeps(u.quarter, u.seconds)).cloned().collect()
}

const UNITS_HEADER: [&str; 9] =
    ["game_id", "t", "side", "a", "quarter", "seconds", "p_margin", "dpre_num", "y"];

/// Writes the units CSV
/// (`game_id,t,side,a,quarter,seconds,p_margin,dpre_num,y`; `a` is the
/// treatment flag).
pub fn write_units_csv<W: Write>(writer: W, units: &[Unit]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(UNITS_HEADER)?;
    for u in units {
        w.write_record([
            u.game_id.as_str(),
            &u.t.to_string(),
            u.side.as_str(),
            if u.treated { "1" } else { "0" },
            &u.quarter.to_string(),
            &fmt_f64(u.seconds),
            &u.margin.to_string(),
            &u.dpre_num.to_string(),
            &fmt_f64(u.y),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a units CSV produced by [`write_units_csv`].
pub fn read_units_csv<R: Read>(reader: R) -> Result<Vec<Unit>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for name in UNITS_HEADER {
        if !headers.iter().any(|h| h == name) {
            return Err(IngestError::MissingColumn(name.to_string()));
        }
    }
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let idx: Vec<usize> = UNITS_HEADER.iter().map(|n| col(n)).collect();

    let row_err = |line: u64, msg: String| IngestError::Row { line, msg };
    let mut units = Vec::new();
    for (rec_no, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec_no as u64 + 2;
        let field = |k: usize| rec.get(idx[k]).unwrap_or("");
        let treated = match field(3) {
            "1" => true,
            "0" => false,
            other => return Err(row_err(line, format!("bad treatment flag `{other}`"))),
        };
        units.push(Unit {
            game_id: field(0).to_string(),
            t: field(1).parse().map_err(|_| row_err(line, format!("bad t `{}`", field(1))))?,
            side: field(2).parse().map_err(|e: String| row_err(line, e))?,
            treated,
            quarter: field(4)
                .parse()
                .map_err(|_| row_err(line, format!("bad quarter `{}`", field(4))))?,
            seconds: field(5)
                .parse()
                .map_err(|_| row_err(line, format!("bad seconds `{}`", field(5))))?,
            margin: field(6)
                .parse()
                .map_err(|_| row_err(line, format!("bad p_margin `{}`", field(6))))?,
            dpre_num: field(7)
                .parse()
                .map_err(|_| row_err(line, format!("bad dpre_num `{}`", field(7))))?,
            y: field(8).parse().map_err(|_| row_err(line, format!("bad y `{}`", field(8))))?,
        });
    }
    Ok(units)
}
