//! Play-by-play ingestion and game-instant segmentation.
//!
//! The canonical play-by-play CSV has one row per event with the header
//! `game_id,period,clock_remaining_s,event_kind,points,team,official,raw_text`.
//! Parsing groups rows by game and orders each game's events by
//! (period ascending, clock remaining descending), keeping input order for
//! ties. Segmentation then rewrites the event stream as a sequence of
//! *instants*:
//!
//! * a **possession** instant wherever a possession ends (made field goal,
//!   made trip-ending free throw, defensive rebound, turnover, or period
//!   end), carrying the home margin after that possession;
//! * a **timeout** instant for every timeout event (team-called or
//!   official), with the margin unchanged;
//! * a **period_end** instant at each period break.
//!
//! Offensive rebounds and non-final free throws extend the current
//! possession; substitutions and fouls produce no instant. Made free throws
//! that do not end a trip (technical or and-one free throws) fold their point
//! into the running margin and surface with the next possession instant.
//! Rows that imply something structurally impossible — a possession swinging
//! the margin by more than four points, points pending at an interruption, a
//! game without period ends — raise integrity errors instead of being
//! silently accepted.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest margin swing a single possession can produce (three-point play
/// plus one folded free throw).
pub const MAX_POSSESSION_MARGIN_DELTA: i32 = 4;

/// Length of a regulation period in seconds.
pub const REGULATION_PERIOD_SECS: f64 = 720.0;
/// Length of an overtime period in seconds.
pub const OVERTIME_PERIOD_SECS: f64 = 300.0;

/// Seconds in `period` (quarters 1–4 are 12 minutes, overtimes 5).
pub fn period_length_secs(period: u32) -> f64 {
    if period <= 4 {
        REGULATION_PERIOD_SECS
    } else {
        OVERTIME_PERIOD_SECS
    }
}

/// One of the two competing teams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Home,
    Away,
}

impl Side {
    pub fn opponent(self) -> Side {
        match self {
            Side::Home => Side::Away,
            Side::Away => Side::Home,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Home => "home",
            Side::Away => "away",
        }
    }

    /// Sign of this side's perspective on the home margin (+1 home, -1 away).
    pub fn sign(self) -> i32 {
        match self {
            Side::Home => 1,
            Side::Away => -1,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "home" => Ok(Side::Home),
            "away" => Ok(Side::Away),
            other => Err(format!("unknown side `{other}` (expected home|away)")),
        }
    }
}

/// Team attribution of a raw event. Clock-only rows (period ends, some
/// administrative events) are `Neutral`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Team {
    Home,
    Away,
    Neutral,
}

impl Team {
    pub fn side(self) -> Option<Side> {
        match self {
            Team::Home => Some(Side::Home),
            Team::Away => Some(Side::Away),
            Team::Neutral => None,
        }
    }
}

/// Parsed play-by-play event kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    ShotMade { points: u8 },
    ShotMissed,
    FreeThrow { made: bool, last_in_trip: bool },
    Rebound { offensive: bool },
    Turnover,
    Foul,
    Substitution,
    Timeout { official: bool },
    PeriodEnd,
    Other,
}

/// One raw play-by-play row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayEvent {
    pub game_id: String,
    pub period: u32,
    /// Seconds remaining in the period when the event occurred.
    pub clock_remaining: f64,
    pub kind: EventKind,
    pub team: Team,
    pub raw_text: String,
}

/// All events of one game, ordered by (period asc, clock desc, input order).
#[derive(Debug, Clone, PartialEq)]
pub struct GameEvents {
    pub game_id: String,
    pub events: Vec<PlayEvent>,
}

/// Discrete instant kinds produced by segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InstantKind {
    Possession { offense: Side },
    Timeout { caller: Side, official: bool },
    PeriodEnd,
}

impl InstantKind {
    /// Timeouts and period ends interrupt play; possessions do not.
    pub fn is_interruption(self) -> bool {
        !matches!(self, InstantKind::Possession { .. })
    }
}

/// One segmented game instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameInstant {
    /// Index within the game's instant sequence (0-based, consecutive).
    pub t: usize,
    pub kind: InstantKind,
    pub quarter: u32,
    /// Seconds elapsed since the start of `quarter`.
    pub seconds_elapsed: f64,
    /// Home score minus away score after this instant.
    pub margin_home: i32,
}

/// The instant sequence of one game.
#[derive(Debug, Clone, PartialEq)]
pub struct GameInstants {
    pub game_id: String,
    pub instants: Vec<GameInstant>,
}

/// Ingestion and segmentation failures.
#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing required column `{0}` in header")]
    MissingColumn(String),
    #[error("line {line}: {msg}")]
    Row { line: u64, msg: String },
    #[error("game {game_id}: {msg}")]
    Integrity { game_id: String, msg: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl IngestError {
    fn row(line: u64, msg: impl Into<String>) -> Self {
        IngestError::Row { line, msg: msg.into() }
    }

    fn integrity(game_id: &str, msg: impl Into<String>) -> Self {
        IngestError::Integrity { game_id: game_id.to_string(), msg: msg.into() }
    }
}

const PBP_COLUMNS: [&str; 8] = [
    "game_id",
    "period",
    "clock_remaining_s",
    "event_kind",
    "points",
    "team",
    "official",
    "raw_text",
];

/// Parses canonical play-by-play CSV into games.
///
/// Games appear in first-appearance order; events within each game are
/// stably sorted by (period asc, clock desc). Row-level problems (bad
/// numbers, out-of-range clocks, unknown teams) report the 1-based file line.
/// Unknown event kinds map to [`EventKind::Other`] rather than failing.
pub fn parse_pbp<R: Read>(reader: R) -> Result<Vec<GameEvents>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);

    let headers = rdr.headers()?.clone();
    let mut col = HashMap::new();
    for (i, name) in headers.iter().enumerate() {
        col.insert(name.to_string(), i);
    }
    let mut idx = [0usize; 8];
    for (k, name) in PBP_COLUMNS.iter().enumerate() {
        match col.get(*name) {
            Some(&i) => idx[k] = i,
            None => return Err(IngestError::MissingColumn(name.to_string())),
        }
    }
    let [c_game, c_period, c_clock, c_kind, c_points, c_team, c_official, c_raw] = idx;

    let mut order: Vec<GameEvents> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();

    for (rec_no, rec) in rdr.records().enumerate() {
        let rec = rec?;
        // Header is line 1; records start on line 2.
        let line = rec_no as u64 + 2;
        let field = |i: usize| rec.get(i).unwrap_or("");

        let game_id = field(c_game).to_string();
        if game_id.is_empty() {
            return Err(IngestError::row(line, "empty game_id"));
        }

        let period: u32 = field(c_period)
            .parse()
            .map_err(|_| IngestError::row(line, format!("non-numeric period `{}`", field(c_period))))?;
        if period == 0 {
            return Err(IngestError::row(line, "period must be >= 1"));
        }

        let clock: f64 = field(c_clock)
            .parse()
            .map_err(|_| IngestError::row(line, format!("non-numeric clock `{}`", field(c_clock))))?;
        let plen = period_length_secs(period);
        if !clock.is_finite() || clock < 0.0 || clock > plen {
            return Err(IngestError::row(
                line,
                format!("clock {clock} outside [0, {plen}] for period {period}"),
            ));
        }

        let team = match field(c_team) {
            "home" => Team::Home,
            "away" => Team::Away,
            "" | "neutral" => Team::Neutral,
            other => return Err(IngestError::row(line, format!("unknown team `{other}`"))),
        };

        let points_field = field(c_points);
        let parse_points = |line: u64| -> Result<u8, IngestError> {
            let p: i64 = points_field
                .parse()
                .map_err(|_| IngestError::row(line, format!("non-numeric points `{points_field}`")))?;
            if !(1..=3).contains(&p) {
                return Err(IngestError::row(line, format!("points {p} outside 1..=3")));
            }
            Ok(p as u8)
        };

        let kind = match field(c_kind) {
            "shot_made" => EventKind::ShotMade { points: parse_points(line)? },
            "shot_missed" => EventKind::ShotMissed,
            "free_throw_made" => EventKind::FreeThrow { made: true, last_in_trip: false },
            "free_throw_made_last" => EventKind::FreeThrow { made: true, last_in_trip: true },
            "free_throw_missed" => EventKind::FreeThrow { made: false, last_in_trip: false },
            "rebound_off" => EventKind::Rebound { offensive: true },
            "rebound_def" => EventKind::Rebound { offensive: false },
            "turnover" => EventKind::Turnover,
            "foul" => EventKind::Foul,
            "substitution" => EventKind::Substitution,
            "timeout" => {
                let official = match field(c_official) {
                    "" | "0" => false,
                    "1" => true,
                    other => {
                        return Err(IngestError::row(line, format!("bad official flag `{other}`")))
                    }
                };
                EventKind::Timeout { official }
            }
            "period_end" => EventKind::PeriodEnd,
            _ => EventKind::Other,
        };

        let event = PlayEvent {
            game_id: game_id.clone(),
            period,
            clock_remaining: clock,
            kind,
            team,
            raw_text: field(c_raw).to_string(),
        };

        let slot = *by_id.entry(game_id.clone()).or_insert_with(|| {
            order.push(GameEvents { game_id, events: Vec::new() });
            order.len() - 1
        });
        order[slot].events.push(event);
    }

    for game in &mut order {
        game.events
            .sort_by(|a, b| a.period.cmp(&b.period).then(b.clock_remaining.total_cmp(&a.clock_remaining)));
    }
    Ok(order)
}

/// Segments one game's ordered events into instants.
///
/// See the module documentation for the segmentation rules. Errors are
/// integrity errors: contradictory rebounds, margins jumping by more than
/// [`MAX_POSSESSION_MARGIN_DELTA`] per possession, points pending at an
/// interruption, missing period ends, or scoring events without a team.
pub fn segment_instants(game: &GameEvents) -> Result<Vec<GameInstant>, IngestError> {
    let id = &game.game_id;
    let mut out: Vec<GameInstant> = Vec::new();
    let mut margin: i32 = 0;
    let mut emitted_margin: i32 = 0;
    // Side currently accumulating a possession, if any.
    let mut open: Option<Side> = None;
    let mut saw_period_end = false;
    let mut prev_period: u32 = 1;
    let mut prev_was_period_end = true; // game start counts as a fresh period

    let require_side = |ev: &PlayEvent| -> Result<Side, IngestError> {
        ev.team
            .side()
            .ok_or_else(|| IngestError::integrity(id, format!("{:?} event without a team", ev.kind)))
    };

    for ev in &game.events {
        if ev.period != prev_period {
            if !prev_was_period_end {
                return Err(IngestError::integrity(
                    id,
                    format!("period {} begins without a period_end closing period {}", ev.period, prev_period),
                ));
            }
            prev_period = ev.period;
        }
        let starts_instant = !matches!(
            ev.kind,
            EventKind::Foul | EventKind::Substitution | EventKind::Other
        );
        if starts_instant {
            prev_was_period_end = matches!(ev.kind, EventKind::PeriodEnd);
        }

        let emit_possession = |offense: Side,
                                   ev: &PlayEvent,
                                   margin: i32,
                                   emitted_margin: &mut i32,
                                   out: &mut Vec<GameInstant>|
         -> Result<(), IngestError> {
            let delta = (margin - *emitted_margin).abs();
            if delta > MAX_POSSESSION_MARGIN_DELTA {
                return Err(IngestError::integrity(
                    id,
                    format!("possession margin delta {delta} exceeds {MAX_POSSESSION_MARGIN_DELTA}"),
                ));
            }
            out.push(GameInstant {
                t: out.len(),
                kind: InstantKind::Possession { offense },
                quarter: ev.period,
                seconds_elapsed: period_length_secs(ev.period) - ev.clock_remaining,
                margin_home: margin,
            });
            *emitted_margin = margin;
            Ok(())
        };

        match ev.kind {
            EventKind::Foul | EventKind::Substitution | EventKind::Other => {}

            EventKind::ShotMade { points } => {
                let side = require_side(ev)?;
                if let Some(holder) = open {
                    if holder != side {
                        // Possession changed without an explicit gaining event.
                        emit_possession(holder, ev, margin, &mut emitted_margin, &mut out)?;
                    }
                }
                margin += i32::from(points) * side.sign();
                emit_possession(side, ev, margin, &mut emitted_margin, &mut out)?;
                open = None;
            }

            EventKind::ShotMissed => {
                let side = require_side(ev)?;
                if let Some(holder) = open {
                    if holder != side {
                        emit_possession(holder, ev, margin, &mut emitted_margin, &mut out)?;
                    }
                }
                open = Some(side);
            }

            EventKind::FreeThrow { made, last_in_trip } => {
                let side = require_side(ev)?;
                if last_in_trip {
                    if let Some(holder) = open {
                        if holder != side {
                            emit_possession(holder, ev, margin, &mut emitted_margin, &mut out)?;
                        }
                    }
                    open = None;
                    if made {
                        margin += side.sign();
                        emit_possession(side, ev, margin, &mut emitted_margin, &mut out)?;
                    } else {
                        // Missed last free throw: the rebound decides; keep
                        // the trip owner's possession open for it.
                        open = Some(side);
                    }
                } else if made {
                    // Technical / and-one free throw: point folds into the
                    // running margin, no instant, possession state unchanged.
                    margin += side.sign();
                } else {
                    // Missed non-final free throw: trip continues.
                    if open.is_some_and(|holder| holder != side) {
                        emit_possession(open.unwrap(), ev, margin, &mut emitted_margin, &mut out)?;
                    }
                    open = Some(side);
                }
            }

            EventKind::Rebound { offensive } => {
                let side = require_side(ev)?;
                if offensive {
                    if let Some(holder) = open {
                        if holder != side {
                            emit_possession(holder, ev, margin, &mut emitted_margin, &mut out)?;
                        }
                    }
                    open = Some(side);
                } else {
                    let offense = side.opponent();
                    if open == Some(side) {
                        return Err(IngestError::integrity(
                            id,
                            "defensive rebound credited to the side on offense",
                        ));
                    }
                    emit_possession(offense, ev, margin, &mut emitted_margin, &mut out)?;
                    open = None;
                }
            }

            EventKind::Turnover => {
                let side = require_side(ev)?;
                if let Some(holder) = open {
                    if holder != side {
                        emit_possession(holder, ev, margin, &mut emitted_margin, &mut out)?;
                    }
                }
                emit_possession(side, ev, margin, &mut emitted_margin, &mut out)?;
                open = None;
            }

            EventKind::Timeout { official } => {
                let caller = ev.team.side().ok_or_else(|| {
                    IngestError::integrity(id, "timeout without a calling team")
                })?;
                if margin != emitted_margin {
                    return Err(IngestError::integrity(
                        id,
                        "free-throw points pending at a timeout (margin must be settled at interruptions)",
                    ));
                }
                out.push(GameInstant {
                    t: out.len(),
                    kind: InstantKind::Timeout { caller, official },
                    quarter: ev.period,
                    seconds_elapsed: period_length_secs(ev.period) - ev.clock_remaining,
                    margin_home: margin,
                });
            }

            EventKind::PeriodEnd => {
                if let Some(holder) = open {
                    emit_possession(holder, ev, margin, &mut emitted_margin, &mut out)?;
                    open = None;
                }
                if margin != emitted_margin {
                    return Err(IngestError::integrity(
                        id,
                        "free-throw points pending at a period end",
                    ));
                }
                out.push(GameInstant {
                    t: out.len(),
                    kind: InstantKind::PeriodEnd,
                    quarter: ev.period,
                    seconds_elapsed: period_length_secs(ev.period) - ev.clock_remaining,
                    margin_home: margin,
                });
                saw_period_end = true;
            }
        }
    }

    if !saw_period_end {
        return Err(IngestError::integrity(id, "no period_end event in game"));
    }
    if open.is_some() {
        return Err(IngestError::integrity(id, "possession left open after the last event"));
    }
    Ok(out)
}

/// Segments every game, in input order.
pub fn segment_all(games: &[GameEvents]) -> Result<Vec<GameInstants>, IngestError> {
    games
        .iter()
        .map(|g| {
            Ok(GameInstants { game_id: g.game_id.clone(), instants: segment_instants(g)? })
        })
        .collect()
}

/// Margin series from one side's perspective: `P[t]` is that side's lead
/// after instant `t` (home margin negated for the away side).
pub fn margin_series(instants: &[GameInstant], side: Side) -> Vec<i32> {
    instants.iter().map(|i| i.margin_home * side.sign()).collect()
}

/// Formats a float without a trailing `.0` when it is integral.
pub(crate) fn fmt_f64(x: f64) -> String {
    if x.is_finite() && x == x.trunc() && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

/// Writes the instants CSV
/// (`game_id,t,kind,caller,official,quarter,seconds_elapsed,margin_home`).
///
/// `caller` carries the offense for possession rows and the calling side for
/// timeout rows; `official` is set only on timeout rows.
pub fn write_instants_csv<W: Write>(writer: W, games: &[GameInstants]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "game_id",
        "t",
        "kind",
        "caller",
        "official",
        "quarter",
        "seconds_elapsed",
        "margin_home",
    ])?;
    for g in games {
        for i in &g.instants {
            let (kind, caller, official) = match i.kind {
                InstantKind::Possession { offense } => ("possession", offense.as_str(), ""),
                InstantKind::Timeout { caller, official } => {
                    ("timeout", caller.as_str(), if official { "1" } else { "0" })
                }
                InstantKind::PeriodEnd => ("period_end", "", ""),
            };
            w.write_record([
                g.game_id.as_str(),
                &i.t.to_string(),
                kind,
                caller,
                official,
                &i.quarter.to_string(),
                &fmt_f64(i.seconds_elapsed),
                &i.margin_home.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes play-by-play events in the canonical CSV layout accepted by
/// [`parse_pbp`]. Events must already be in chronological order; round-trip
/// is exact because parsing sorts stably.
pub fn write_pbp_csv<W: Write>(writer: W, games: &[GameEvents]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PBP_COLUMNS)?;
    for g in games {
        for e in &g.events {
            let (kind, points, official): (&str, String, &str) = match e.kind {
                EventKind::ShotMade { points } => ("shot_made", points.to_string(), ""),
                EventKind::ShotMissed => ("shot_missed", String::new(), ""),
                EventKind::FreeThrow { made: true, last_in_trip: false } => {
                    ("free_throw_made", "1".to_string(), "")
                }
                EventKind::FreeThrow { made: true, last_in_trip: true } => {
                    ("free_throw_made_last", "1".to_string(), "")
                }
                EventKind::FreeThrow { made: false, .. } => {
                    ("free_throw_missed", String::new(), "")
                }
                EventKind::Rebound { offensive: true } => ("rebound_off", String::new(), ""),
                EventKind::Rebound { offensive: false } => ("rebound_def", String::new(), ""),
                EventKind::Turnover => ("turnover", String::new(), ""),
                EventKind::Foul => ("foul", String::new(), ""),
                EventKind::Substitution => ("substitution", String::new(), ""),
                EventKind::Timeout { official } => {
                    ("timeout", String::new(), if official { "1" } else { "0" })
                }
                EventKind::PeriodEnd => ("period_end", String::new(), ""),
                EventKind::Other => ("other", String::new(), ""),
            };
            let team = match e.team {
                Team::Home => "home",
                Team::Away => "away",
                Team::Neutral => "neutral",
            };
            w.write_record([
                e.game_id.as_str(),
                &e.period.to_string(),
                &fmt_f64(e.clock_remaining),
                kind,
                &points,
                team,
                official,
                e.raw_text.as_str(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads an instants CSV produced by [`write_instants_csv`].
pub fn read_instants_csv<R: Read>(reader: R) -> Result<Vec<GameInstants>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expect = [
        "game_id",
        "t",
        "kind",
        "caller",
        "official",
        "quarter",
        "seconds_elapsed",
        "margin_home",
    ];
    for name in expect {
        if !headers.iter().any(|h| h == name) {
            return Err(IngestError::MissingColumn(name.to_string()));
        }
    }
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (c_game, c_t, c_kind, c_caller, c_official, c_quarter, c_secs, c_margin) = (
        col("game_id"),
        col("t"),
        col("kind"),
        col("caller"),
        col("official"),
        col("quarter"),
        col("seconds_elapsed"),
        col("margin_home"),
    );

    let mut order: Vec<GameInstants> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();
    for (rec_no, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec_no as u64 + 2;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let game_id = field(c_game).to_string();
        let t: usize = field(c_t)
            .parse()
            .map_err(|_| IngestError::row(line, format!("non-numeric t `{}`", field(c_t))))?;
        let caller = field(c_caller);
        let kind = match field(c_kind) {
            "possession" => InstantKind::Possession {
                offense: caller
                    .parse()
                    .map_err(|e| IngestError::row(line, format!("possession offense: {e}")))?,
            },
            "timeout" => InstantKind::Timeout {
                caller: caller
                    .parse()
                    .map_err(|e| IngestError::row(line, format!("timeout caller: {e}")))?,
                official: match field(c_official) {
                    "1" => true,
                    "0" | "" => false,
                    other => {
                        return Err(IngestError::row(line, format!("bad official flag `{other}`")))
                    }
                },
            },
            "period_end" => InstantKind::PeriodEnd,
            other => return Err(IngestError::row(line, format!("unknown instant kind `{other}`"))),
        };
        let quarter: u32 = field(c_quarter)
            .parse()
            .map_err(|_| IngestError::row(line, format!("non-numeric quarter `{}`", field(c_quarter))))?;
        let seconds_elapsed: f64 = field(c_secs)
            .parse()
            .map_err(|_| IngestError::row(line, format!("non-numeric seconds `{}`", field(c_secs))))?;
        let margin_home: i32 = field(c_margin)
            .parse()
            .map_err(|_| IngestError::row(line, format!("non-numeric margin `{}`", field(c_margin))))?;

        let slot = *by_id.entry(game_id.clone()).or_insert_with(|| {
            order.push(GameInstants { game_id, instants: Vec::new() });
            order.len() - 1
        });
        let instants = &mut order[slot].instants;
        if t != instants.len() {
            return Err(IngestError::row(
                line,
                format!("instant index {t} out of order (expected {})", instants.len()),
            ));
        }
        instants.push(GameInstant { t, kind, quarter, seconds_elapsed, margin_home });
    }
    Ok(order)
}
