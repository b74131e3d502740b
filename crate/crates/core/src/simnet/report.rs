//! Simulation report: one record per event, serialised as JSON Lines, plus a
//! CSV energy ledger.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::Serialize;

use super::adversary::Direction;
use super::config::{FrameKind, SimulationConfig};
use crate::primitives::Word128;
use crate::protocol::{Mode, ProtocolError};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    Normal,
    Emergency,
    Legacy,
}

impl From<Mode> for SessionMode {
    fn from(mode: Mode) -> Self {
        match mode {
            Mode::Normal => SessionMode::Normal,
            Mode::Emergency => SessionMode::Emergency,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Sensor,
    Sink,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum SessionOutcome {
    Accepted,
    Rejected { side: Side, reason: ProtocolError },
    /// A pairing frame never arrived; the sensor timed out.
    Lost { frame: FrameKind },
}

#[derive(Clone, PartialEq, Debug, Serialize)]
pub struct SessionRecord {
    pub sensor: usize,
    pub session: usize,
    pub timestamp: f64,
    pub mode: SessionMode,
    #[serde(flatten)]
    pub outcome: SessionOutcome,
    /// For accepted sessions: whether sensor and sink hold the same key.
    pub keys_match: Option<bool>,
    pub data_frames_ok: u64,
    pub data_frames_failed: u64,
}

#[derive(Clone, PartialEq, Debug, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ObservationDetail {
    Captured { payload: String },
    Identifier { identifier: Word128 },
    Mutated { action: String },
}

#[derive(Clone, PartialEq, Debug, Serialize)]
pub struct Observation {
    pub adversary: usize,
    pub role: &'static str,
    pub sensor: usize,
    pub session: usize,
    pub timestamp: f64,
    pub frame: FrameKind,
    pub direction: Direction,
    #[serde(flatten)]
    pub detail: ObservationDetail,
}

#[derive(Clone, PartialEq, Debug, Serialize)]
pub struct LedgerEntry {
    pub sensor: usize,
    pub session: usize,
    pub timestamp: f64,
    pub interval_uj: f64,
    pub cumulative_uj: f64,
}

#[derive(Clone, PartialEq, Debug, Serialize)]
pub struct RecoveryEvent {
    pub sensor: usize,
    pub session: usize,
    pub shadow_ids_left: usize,
}

#[derive(Clone, PartialEq, Debug, Serialize)]
pub struct ReplayEvent {
    pub sensor: usize,
    /// Session whose recorded M_A1 was re-injected.
    pub session: usize,
    pub accepted: bool,
    pub reason: Option<ProtocolError>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Clone, PartialEq, Debug, Serialize)]
pub struct InvariantCheck {
    pub name: &'static str,
    pub status: CheckStatus,
    pub detail: String,
}

#[derive(Clone, PartialEq, Debug, Serialize)]
pub struct SensorSummary {
    pub sensor: usize,
    pub synchronized: bool,
    pub shadow_ids_left: usize,
    pub cumulative_uj: f64,
}

#[derive(Clone, PartialEq, Debug)]
pub struct SimulationReport {
    pub config: SimulationConfig,
    pub sessions: Vec<SessionRecord>,
    pub observations: Vec<Observation>,
    pub ledger: Vec<LedgerEntry>,
    pub recoveries: Vec<RecoveryEvent>,
    pub replays: Vec<ReplayEvent>,
    pub sensors: Vec<SensorSummary>,
    pub checks: Vec<InvariantCheck>,
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line<'a> {
    Run { config: &'a SimulationConfig },
    Session(&'a SessionRecord),
    Observation(&'a Observation),
    Recovery(&'a RecoveryEvent),
    Replay(&'a ReplayEvent),
    Sensor(&'a SensorSummary),
    Check(&'a InvariantCheck),
    Summary(Summary),
}

#[derive(Serialize)]
struct Summary {
    sessions: usize,
    accepted: usize,
    rejections: BTreeMap<String, usize>,
    lost: usize,
    recoveries: usize,
    replays_rejected: usize,
    replays_accepted: usize,
    linkability: Option<f64>,
    total_uj: f64,
}

impl SimulationReport {
    pub fn accepted(&self) -> usize {
        self.sessions.iter().filter(|s| s.outcome == SessionOutcome::Accepted).count()
    }

    /// Rejection counts keyed by reason, across both sides.
    pub fn rejections(&self) -> BTreeMap<ProtocolError, usize> {
        let mut out = BTreeMap::new();
        for s in &self.sessions {
            if let SessionOutcome::Rejected { reason, .. } = s.outcome {
                *out.entry(reason).or_default() += 1;
            }
        }
        out
    }

    pub fn rejected_with(&self, reason: ProtocolError) -> usize {
        self.rejections().get(&reason).copied().unwrap_or(0)
    }

    pub fn lost(&self) -> usize {
        self.sessions.iter().filter(|s| matches!(s.outcome, SessionOutcome::Lost { .. })).count()
    }

    pub fn total_energy(&self) -> f64 {
        self.sensors.iter().map(|s| s.cumulative_uj).sum()
    }

    pub fn all_checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn check(&self, name: &str) -> Option<&InvariantCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn all_synchronized(&self) -> bool {
        self.sensors.iter().all(|s| s.synchronized)
    }

    /// Structured text: one JSON object per line, in event order.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut emit = |line: Line<'_>| -> std::io::Result<()> {
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")
        };
        emit(Line::Run { config: &self.config })?;
        for s in &self.sessions {
            emit(Line::Session(s))?;
        }
        for o in &self.observations {
            emit(Line::Observation(o))?;
        }
        for r in &self.recoveries {
            emit(Line::Recovery(r))?;
        }
        for r in &self.replays {
            emit(Line::Replay(r))?;
        }
        for s in &self.sensors {
            emit(Line::Sensor(s))?;
        }
        for c in &self.checks {
            emit(Line::Check(c))?;
        }
        emit(Line::Summary(Summary {
            sessions: self.sessions.len(),
            accepted: self.accepted(),
            rejections: self.rejections().into_iter().map(|(k, v)| (reason_label(k), v)).collect(),
            lost: self.lost(),
            recoveries: self.recoveries.len(),
            replays_rejected: self.replays.iter().filter(|r| !r.accepted).count(),
            replays_accepted: self.replays.iter().filter(|r| r.accepted).count(),
            linkability: surveillor_linkability(self),
            total_uj: self.total_energy(),
        }))
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn write_ledger_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sensor", "session", "timestamp_s", "interval_uj", "cumulative_uj"])?;
        for e in &self.ledger {
            w.write_record([
                e.sensor.to_string(),
                e.session.to_string(),
                format!("{:.1}", e.timestamp),
                format!("{:.6}", e.interval_uj),
                format!("{:.6}", e.cumulative_uj),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn reason_label(reason: ProtocolError) -> String {
    serde_json::to_value(reason)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_else(|| format!("{reason:?}"))
}

/// Fraction of surveillor-observed sessions whose identifier field was already
/// seen in an earlier observation. Uses the first surveillor in the run;
/// `None` when the run had no surveillor observations.
pub fn surveillor_linkability(report: &SimulationReport) -> Option<f64> {
    let first = report.observations.iter().find(|o| o.role == "surveillor")?.adversary;
    let mut seen = BTreeSet::new();
    let mut total = 0usize;
    let mut linked = 0usize;
    for o in report.observations.iter().filter(|o| o.adversary == first) {
        if let ObservationDetail::Identifier { identifier } = &o.detail {
            total += 1;
            if !seen.insert(*identifier) {
                linked += 1;
            }
        }
    }
    (total > 0).then(|| linked as f64 / total as f64)
}
