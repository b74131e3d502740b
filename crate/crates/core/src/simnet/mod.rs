//! Deterministic star-topology simulator.
//!
//! Sensors wake once per interval, pair with the sink, send their data frames
//! and sleep. Wakes are processed from a single event queue ordered by
//! `(interval, sensor)`; time is logical (`interval * interval_secs`). Every
//! frame crosses the configured adversaries in list order.
//!
//! Sensor recovery policy: a wake that ends without a verified M_A2 leaves
//! the sensor unsure whether the sink rotated, so the next wake uses the
//! emergency path. Loss injection only exists to exercise that path; the
//! channel is otherwise reliable.

mod adversary;
mod config;
mod report;
mod scenarios;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashSet};

use thiserror::Error;

pub use adversary::{ChannelFrame, Direction};
pub use config::{AdversaryKind, FrameKind, MutationRule, SimulationConfig};
pub use report::{
    reason_label, surveillor_linkability, CheckStatus, InvariantCheck, LedgerEntry, Observation, ObservationDetail,
    RecoveryEvent, ReplayEvent, SensorSummary, SessionMode, SessionOutcome, SessionRecord, Side, SimulationReport,
};
pub use scenarios::{
    desync_recovery_scenario, replay_scenario, spread_losses, surveillor_scenario, ReplayScenarioResult,
    SurveillorScenarioResult,
    REPLAY_ATTEMPTS,
};

use adversary::Adversary;
use crate::energy::{interval_energy, EnergyBreakdown};
use crate::primitives::{hash_concat, SeededRng, Word128, WORD_LEN};
use crate::protocol::{sink_handle_a1, AuthOutcome, DataFrameCipher, MessageA1, MessageA2, Mode, ProtocolError};
use crate::registration::{RegistrationError, SensorIdentity, SinkTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Registration(#[from] RegistrationError),
    #[error("io error: {0}")]
    Io(String),
}

/// Bytes of synthetic sensor reading carried by each data frame.
const READING_LEN: usize = 16;

// rng stream labels
const ADVERSARY_STREAM: u64 = 0x6164_76;

struct SensorState {
    id: SensorIdentity,
    node: crate::protocol::SensorNode,
    legacy_address: Word128,
    desynced: bool,
    cumulative_uj: f64,
}

/// A running simulation. [`run_simulation`] drives it to completion; the
/// step-wise API exists for attack scenarios that act between wakes.
pub struct Simulator {
    config: SimulationConfig,
    energy: EnergyBreakdown,
    rng: SeededRng,
    table: SinkTable,
    sensors: Vec<SensorState>,
    adversaries: Vec<Adversary>,
    queue: BinaryHeap<Reverse<(usize, usize)>>,
    // Delivered M_A1 bytes per (sensor, session), as an on-path recorder saw them.
    recorded_a1: BTreeMap<(usize, usize), Vec<u8>>,
    keys: HashSet<Word128>,
    on_air: Vec<Vec<u8>>,
    accepted_aliases: Vec<Word128>,
    sessions: Vec<SessionRecord>,
    observations: Vec<Observation>,
    ledger: Vec<LedgerEntry>,
    recoveries: Vec<RecoveryEvent>,
    replays: Vec<ReplayEvent>,
}

impl Simulator {
    pub fn new(config: SimulationConfig) -> Result<Self, SimError> {
        config.validate()?;
        let profile = config.energy_profile()?;
        let energy = interval_energy(&profile, &config.cost_model);
        let root = SeededRng::new(config.seed);
        let adversaries = config
            .adversaries
            .iter()
            .enumerate()
            .map(|(i, kind)| Adversary::new(i, kind.clone(), root.fork(ADVERSARY_STREAM + i as u64)))
            .collect();

        let mut rng = root;
        let mut table = SinkTable::new();
        let mut keys = HashSet::new();
        let mut sensors = Vec::with_capacity(config.sensors);
        for _ in 0..config.sensors {
            let id = SensorIdentity(rng.random_word());
            let creds = table.register(id, config.shadow_pool, &mut rng)?;
            keys.insert(creds.k_is);
            keys.insert(creds.k_em);
            keys.insert(id.0);
            let legacy_address = rng.random_word();
            sensors.push(SensorState {
                id,
                node: crate::protocol::SensorNode::new(creds),
                legacy_address,
                desynced: false,
                cumulative_uj: 0.0,
            });
        }

        let mut queue = BinaryHeap::new();
        if config.sessions > 0 {
            for sensor in 0..config.sensors {
                queue.push(Reverse((0, sensor)));
            }
        }

        Ok(Self {
            config,
            energy,
            rng,
            table,
            sensors,
            adversaries,
            queue,
            recorded_a1: BTreeMap::new(),
            keys,
            on_air: Vec::new(),
            accepted_aliases: Vec::new(),
            sessions: Vec::new(),
            observations: Vec::new(),
            ledger: Vec::new(),
            recoveries: Vec::new(),
            replays: Vec::new(),
        })
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    pub fn sink(&self) -> &SinkTable {
        &self.table
    }

    /// Recorded (as delivered) M_A1 bytes of a session, if any reached the sink.
    pub fn recorded_a1(&self, sensor: usize, session: usize) -> Option<&[u8]> {
        self.recorded_a1.get(&(sensor, session)).map(Vec::as_slice)
    }

    pub fn is_synchronized(&self, sensor: usize) -> bool {
        let s = &self.sensors[sensor];
        self.table.get(&s.id.0).is_some_and(|r| r.mirrors(s.node.credentials()))
    }

    fn timestamp(&self, session: usize) -> f64 {
        session as f64 * self.config.duty_cycle.interval_secs
    }

    /// Sends a frame through every adversary in order.
    fn transmit(&mut self, frame: ChannelFrame) -> Option<ChannelFrame> {
        self.on_air.push(frame.payload.clone());
        let mut current = frame;
        for adv in &mut self.adversaries {
            current = adv.intercept(current, &mut self.observations)?;
            if self.on_air.last() != Some(&current.payload) {
                self.on_air.push(current.payload.clone());
            }
        }
        Some(current)
    }

    fn frame(&self, direction: Direction, kind: FrameKind, sensor: usize, session: usize, payload: Vec<u8>) -> ChannelFrame {
        ChannelFrame { direction, kind, sensor, session, timestamp: self.timestamp(session), payload }
    }

    /// Processes the next wake. Returns false when the queue is empty.
    pub fn step(&mut self) -> bool {
        let Some(Reverse((session, sensor))) = self.queue.pop() else {
            return false;
        };
        let (mode, outcome, key, data) = if self.config.legacy_baseline {
            self.legacy_wake(sensor, session)
        } else {
            self.lwaa_wake(sensor, session)
        };

        let keys_match = key.map(|(sensor_key, sink_key)| sensor_key == sink_key);
        let charge = match outcome {
            SessionOutcome::Accepted => self.energy.total,
            SessionOutcome::Rejected { side: Side::Sensor, reason: ProtocolError::ShadowExhausted } => 0.0,
            _ => self.energy.pairing_cost(),
        };
        let timestamp = self.timestamp(session);
        let state = &mut self.sensors[sensor];
        state.cumulative_uj += charge;
        self.ledger.push(LedgerEntry {
            sensor,
            session,
            timestamp,
            interval_uj: charge,
            cumulative_uj: state.cumulative_uj,
        });
        self.sessions.push(SessionRecord {
            sensor,
            session,
            timestamp,
            mode,
            outcome,
            keys_match,
            data_frames_ok: data.0,
            data_frames_failed: data.1,
        });

        if session + 1 < self.config.sessions {
            self.queue.push(Reverse((session + 1, sensor)));
        }
        true
    }

    /// Runs one anonymous-protocol wake. Returns the mode, outcome, the
    /// (sensor, sink) key pair on acceptance and data-frame counts.
    fn lwaa_wake(
        &mut self,
        sensor: usize,
        session: usize,
    ) -> (SessionMode, SessionOutcome, Option<(Word128, Word128)>, (u64, u64)) {
        let mode = if self.sensors[sensor].desynced { Mode::Emergency } else { Mode::Normal };
        let smode = SessionMode::from(mode);
        let a1 = match self.sensors[sensor].node.begin(mode, &mut self.rng) {
            Ok(a1) => a1,
            Err(reason) => {
                return (smode, SessionOutcome::Rejected { side: Side::Sensor, reason }, None, (0, 0));
            }
        };
        let frame = self.frame(Direction::SensorToSink, FrameKind::A1, sensor, session, a1.to_bytes().to_vec());
        let timed_out = |this: &mut Self, outcome: SessionOutcome| {
            this.sensors[sensor].node.abandon();
            this.sensors[sensor].desynced = true;
            (smode, outcome, None, (0, 0))
        };

        let Some(delivered) = self.transmit(frame) else {
            return timed_out(self, SessionOutcome::Lost { frame: FrameKind::A1 });
        };
        self.recorded_a1.insert((sensor, session), delivered.payload.clone());
        let handled = MessageA1::from_bytes(&delivered.payload)
            .and_then(|msg| sink_handle_a1(&self.table, &msg, &mut self.rng));
        let (a2, commit) = match handled {
            Ok(ok) => ok,
            Err(reason) => return timed_out(self, SessionOutcome::Rejected { side: Side::Sink, reason }),
        };

        // The sink commits as it hands M_A2 to the channel.
        self.table.commit(commit);
        self.keys.insert(commit.k_is_new);
        if self.config.loss_sessions.contains(&session) {
            return timed_out(self, SessionOutcome::Lost { frame: FrameKind::A2 });
        }
        let frame = self.frame(Direction::SinkToSensor, FrameKind::A2, sensor, session, a2.to_bytes().to_vec());
        let Some(delivered) = self.transmit(frame) else {
            return timed_out(self, SessionOutcome::Lost { frame: FrameKind::A2 });
        };
        let outcome = match MessageA2::from_bytes(&delivered.payload) {
            Ok(msg) => self.sensors[sensor].node.finish(&msg),
            Err(reason) => AuthOutcome::Rejected(reason),
        };
        let session_key = match outcome {
            AuthOutcome::Accepted { session_key } => session_key,
            AuthOutcome::Rejected(reason) => {
                return timed_out(self, SessionOutcome::Rejected { side: Side::Sensor, reason });
            }
        };

        let state = &mut self.sensors[sensor];
        state.desynced = false;
        self.accepted_aliases.push(a1.aid_l);
        if mode == Mode::Emergency {
            self.recoveries.push(RecoveryEvent {
                sensor,
                session,
                shadow_ids_left: state.node.credentials().shadow_ids.unused_count(),
            });
        }
        let id = state.id.0;
        let sink_key = self.table.get(&id).map(|r| r.k_is).unwrap_or(Word128::ZERO);
        let data = self.send_data(sensor, session, session_key, sink_key);
        (smode, SessionOutcome::Accepted, Some((session_key, sink_key)), data)
    }

    /// Static-identifier pairing: the device address travels in clear and the
    /// sink accepts whatever it recognises.
    fn legacy_wake(
        &mut self,
        sensor: usize,
        session: usize,
    ) -> (SessionMode, SessionOutcome, Option<(Word128, Word128)>, (u64, u64)) {
        let address = self.sensors[sensor].legacy_address;
        let mut payload = address.as_bytes().to_vec();
        payload.extend_from_slice(&(session as u32).to_be_bytes());
        let frame = self.frame(Direction::SensorToSink, FrameKind::LegacyPairing, sensor, session, payload);
        let Some(delivered) = self.transmit(frame) else {
            return (SessionMode::Legacy, SessionOutcome::Lost { frame: FrameKind::LegacyPairing }, None, (0, 0));
        };
        let known = Word128::from_slice(&delivered.payload) == Some(address);
        if !known {
            let outcome = SessionOutcome::Rejected { side: Side::Sink, reason: ProtocolError::UnknownAlias };
            return (SessionMode::Legacy, outcome, None, (0, 0));
        }
        let key = hash_concat(&[b"legacy", address.as_bytes(), &delivered.payload[WORD_LEN..]]);
        self.keys.insert(key);
        let data = self.send_data(sensor, session, key, key);
        (SessionMode::Legacy, SessionOutcome::Accepted, Some((key, key)), data)
    }

    fn send_data(&mut self, sensor: usize, session: usize, sensor_key: Word128, sink_key: Word128) -> (u64, u64) {
        let mut sealer = DataFrameCipher::new(sensor_key);
        let opener = DataFrameCipher::new(sink_key);
        let (mut ok, mut failed) = (0, 0);
        for _ in 0..self.config.duty_cycle.packets {
            let mut reading = [0u8; READING_LEN];
            self.rng.fill(&mut reading);
            let frame = self.frame(Direction::SensorToSink, FrameKind::Data, sensor, session, sealer.seal(&reading));
            match self.transmit(frame) {
                Some(f) if opener.open(&f.payload).as_deref() == Ok(&reading[..]) => ok += 1,
                _ => failed += 1,
            }
        }
        (ok, failed)
    }

    /// Runs every remaining wake.
    pub fn run_to_end(&mut self) {
        while self.step() {}
    }

    /// Re-injects the recorded M_A1 of `(sensor, session)` at the sink.
    ///
    /// A sink that accepts the replay commits as it would for any answered
    /// M_A1, so an accepted replay would also show up as a desync.
    pub fn replay_a1(&mut self, sensor: usize, session: usize) -> Option<ReplayEvent> {
        let bytes = self.recorded_a1.get(&(sensor, session))?.clone();
        let result = MessageA1::from_bytes(&bytes).and_then(|msg| sink_handle_a1(&self.table, &msg, &mut self.rng));
        let event = match result {
            Ok((_, commit)) => {
                self.table.commit(commit);
                ReplayEvent { sensor, session, accepted: true, reason: None }
            }
            Err(reason) => ReplayEvent { sensor, session, accepted: false, reason: Some(reason) },
        };
        self.replays.push(event.clone());
        Some(event)
    }

    fn checks(&self) -> Vec<InvariantCheck> {
        let mut checks = Vec::new();
        let status = |ok: bool| if ok { CheckStatus::Pass } else { CheckStatus::Fail };

        let mismatched = self.sessions.iter().filter(|s| s.keys_match == Some(false)).count();
        let accepted_without_keys = self
            .sessions
            .iter()
            .filter(|s| s.outcome == SessionOutcome::Accepted && s.keys_match.is_none())
            .count();
        checks.push(InvariantCheck {
            name: "accepted_keys_agree",
            status: status(mismatched == 0 && accepted_without_keys == 0),
            detail: format!("{mismatched} accepted sessions with differing keys"),
        });

        let mut leaks = 0usize;
        for payload in &self.on_air {
            if payload.len() >= WORD_LEN {
                leaks += payload
                    .windows(WORD_LEN)
                    .filter(|w| Word128::from_slice(w).is_some_and(|k| self.keys.contains(&k)))
                    .count();
            }
        }
        checks.push(InvariantCheck {
            name: "no_cleartext_keys_on_air",
            status: status(leaks == 0),
            detail: format!("{} frames scanned for {} secrets, {leaks} hits", self.on_air.len(), self.keys.len()),
        });

        let mut aliases = self.accepted_aliases.clone();
        aliases.sort();
        let total = aliases.len();
        aliases.dedup();
        let (name, ok, detail) = if self.config.legacy_baseline {
            ("one_time_aliases", None, "legacy baseline uses a static identifier".to_owned())
        } else {
            ("one_time_aliases", Some(aliases.len() == total), format!("{} repeated among {total}", total - aliases.len()))
        };
        checks.push(InvariantCheck {
            name,
            status: ok.map_or(CheckStatus::Skipped, status),
            detail,
        });

        let lossless = self.config.loss_sessions.is_empty() && !self.config.has_active_adversary();
        let check = if lossless {
            let worst = self
                .sensors
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let wakes = self.ledger.iter().filter(|e| e.sensor == i).count();
                    (s.cumulative_uj - wakes as f64 * self.energy.total).abs()
                })
                .fold(0.0, f64::max);
            InvariantCheck {
                name: "ledger_linear",
                status: status(worst < 1e-6),
                detail: format!("max deviation {worst:.3e} uJ"),
            }
        } else {
            InvariantCheck {
                name: "ledger_linear",
                status: CheckStatus::Skipped,
                detail: "run has losses or an active adversary".into(),
            }
        };
        checks.push(check);
        checks
    }

    /// Closes the run and assembles the report.
    pub fn finish(self) -> SimulationReport {
        let checks = self.checks();
        let sensors = (0..self.sensors.len())
            .map(|i| SensorSummary {
                sensor: i,
                synchronized: self.is_synchronized(i),
                shadow_ids_left: self.sensors[i].node.credentials().shadow_ids.unused_count(),
                cumulative_uj: self.sensors[i].cumulative_uj,
            })
            .collect();
        SimulationReport {
            config: self.config,
            sessions: self.sessions,
            observations: self.observations,
            ledger: self.ledger,
            recoveries: self.recoveries,
            replays: self.replays,
            sensors,
            checks,
        }
    }
}

/// Runs a full simulation for `config`.
pub fn run_simulation(config: SimulationConfig) -> Result<SimulationReport, SimError> {
    let mut sim = Simulator::new(config)?;
    sim.run_to_end();
    Ok(sim.finish())
}
