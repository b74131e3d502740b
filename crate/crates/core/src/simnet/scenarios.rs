//! Canned attack scenarios built on [`Simulator`].

use std::collections::BTreeSet;

use super::{run_simulation, surveillor_linkability, AdversaryKind, SimError, SimulationConfig, SimulationReport, Simulator};

/// Captured pairing attempts that suffice to break legacy BLE pairing; the
/// replay scenario re-injects this many recorded M_A1 frames.
pub const REPLAY_ATTEMPTS: usize = 20;

#[derive(Clone, Debug)]
pub struct ReplayScenarioResult {
    pub attempts: usize,
    pub rejected: usize,
    /// Replays the sink answered with an M_A2.
    pub compromises: usize,
    pub report: SimulationReport,
}

/// Records [`REPLAY_ATTEMPTS`] honest sessions, then replays every recorded
/// M_A1 against the sink.
pub fn replay_scenario(seed: u64) -> Result<ReplayScenarioResult, SimError> {
    let config = SimulationConfig {
        seed,
        sessions: REPLAY_ATTEMPTS,
        adversaries: vec![AdversaryKind::Eavesdropper],
        ..Default::default()
    };
    let mut sim = Simulator::new(config)?;
    sim.run_to_end();
    let mut attempts = 0;
    for session in 0..REPLAY_ATTEMPTS {
        if sim.replay_a1(0, session).is_some() {
            attempts += 1;
        }
    }
    let report = sim.finish();
    let rejected = report.replays.iter().filter(|r| !r.accepted).count();
    let compromises = report.replays.iter().filter(|r| r.accepted).count();
    Ok(ReplayScenarioResult { attempts, rejected, compromises, report })
}

#[derive(Clone, Debug)]
pub struct SurveillorScenarioResult {
    pub sessions: usize,
    pub lwaa_linkability: f64,
    pub legacy_linkability: f64,
    pub emergency_sessions: usize,
}

/// Wake indices spreading `count` losses evenly over `sessions`, never two
/// in a row, so every loss is followed by a recovery wake.
pub fn spread_losses(sessions: usize, count: usize) -> BTreeSet<usize> {
    (1..=count).map(|i| i * sessions / (count + 1)).filter(|&s| s + 1 < sessions).collect()
}

/// Observes `sessions` wakes of the anonymous protocol (with forced
/// emergency sessions) and of the static-identifier baseline.
pub fn surveillor_scenario(seed: u64, sessions: usize) -> Result<SurveillorScenarioResult, SimError> {
    let base = SimulationConfig {
        seed,
        sessions,
        adversaries: vec![AdversaryKind::Surveillor],
        ..Default::default()
    };
    let lwaa = run_simulation(SimulationConfig {
        loss_sessions: spread_losses(sessions, base.shadow_pool),
        ..base.clone()
    })?;
    let legacy = run_simulation(SimulationConfig { legacy_baseline: true, ..base })?;
    Ok(SurveillorScenarioResult {
        sessions,
        lwaa_linkability: surveillor_linkability(&lwaa).unwrap_or(0.0),
        legacy_linkability: surveillor_linkability(&legacy).unwrap_or(0.0),
        emergency_sessions: lwaa.recoveries.len(),
    })
}

/// Runs a simulation whose loss schedule forces desynchronisation.
pub fn desync_recovery_scenario(config: SimulationConfig) -> Result<SimulationReport, SimError> {
    if config.loss_sessions.is_empty() {
        return Err(SimError::Config("desync scenario needs a non-empty loss schedule".into()));
    }
    run_simulation(config)
}
