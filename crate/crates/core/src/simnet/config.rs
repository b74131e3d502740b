use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::energy::{builtin_profile, DutyCycleConfig, ProtocolProfile, RadioCostModel, BLE, BLE_LWAA};
use crate::registration::DEFAULT_SHADOW_POOL;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    A1,
    A2,
    Data,
    LegacyPairing,
}

/// How a man-in-the-middle rewrites traffic.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum MutationRule {
    /// Flip one random bit inside V_1 of every M_A1.
    FlipV1Bit,
    /// Flip one random bit anywhere in frames of this kind.
    FlipBit(FrameKind),
    Drop(FrameKind),
    /// Substitute the sensor's previous M_A1 for the current one.
    ReplayPreviousA1,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum AdversaryKind {
    Eavesdropper,
    Surveillor,
    MitM {
        rule: MutationRule,
        /// Wake indices the rule applies to; `None` means every session.
        sessions: Option<BTreeSet<usize>>,
    },
}

impl AdversaryKind {
    pub fn is_passive(&self) -> bool {
        !matches!(self, AdversaryKind::MitM { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            AdversaryKind::Eavesdropper => "eavesdropper",
            AdversaryKind::Surveillor => "surveillor",
            AdversaryKind::MitM { .. } => "mitm",
        }
    }
}

fn frame_kind_token(kind: FrameKind) -> &'static str {
    match kind {
        FrameKind::A1 => "a1",
        FrameKind::A2 => "a2",
        FrameKind::Data => "data",
        FrameKind::LegacyPairing => "legacy",
    }
}

fn parse_frame_kind(s: &str) -> Option<FrameKind> {
    Some(match s {
        "a1" => FrameKind::A1,
        "a2" => FrameKind::A2,
        "data" => FrameKind::Data,
        "legacy" => FrameKind::LegacyPairing,
        _ => return None,
    })
}

impl fmt::Display for AdversaryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AdversaryKind::Eavesdropper => f.write_str("eavesdropper"),
            AdversaryKind::Surveillor => f.write_str("surveillor"),
            AdversaryKind::MitM { rule, sessions } => {
                match rule {
                    MutationRule::FlipV1Bit => f.write_str("mitm:flip-v1")?,
                    MutationRule::FlipBit(k) => write!(f, "mitm:flip-{}", frame_kind_token(*k))?,
                    MutationRule::Drop(k) => write!(f, "mitm:drop-{}", frame_kind_token(*k))?,
                    MutationRule::ReplayPreviousA1 => f.write_str("mitm:replay-a1")?,
                }
                if let Some(sessions) = sessions {
                    let list: Vec<String> = sessions.iter().map(|s| s.to_string()).collect();
                    write!(f, "@{}", list.join(","))?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for AdversaryKind {
    type Err = String;

    /// Accepts `eavesdropper`, `surveillor`, or `mitm:<rule>[@i,j,...]` where
    /// `<rule>` is `flip-v1`, `flip-<kind>`, `drop-<kind>` or `replay-a1`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "eavesdropper" => return Ok(AdversaryKind::Eavesdropper),
            "surveillor" => return Ok(AdversaryKind::Surveillor),
            _ => {}
        }
        let spec = s.strip_prefix("mitm:").ok_or_else(|| format!("unknown adversary `{s}`"))?;
        let (rule, sessions) = match spec.split_once('@') {
            Some((rule, list)) => {
                let set = list
                    .split(',')
                    .map(|t| t.trim().parse::<usize>().map_err(|_| format!("bad session index `{t}` in `{s}`")))
                    .collect::<Result<BTreeSet<_>, _>>()?;
                (rule, Some(set))
            }
            None => (spec, None),
        };
        let rule = match rule {
            "flip-v1" => MutationRule::FlipV1Bit,
            "replay-a1" => MutationRule::ReplayPreviousA1,
            other => {
                let (verb, kind) = other.split_once('-').ok_or_else(|| format!("unknown mitm rule `{other}`"))?;
                let kind = parse_frame_kind(kind).ok_or_else(|| format!("unknown frame kind in `{other}`"))?;
                match verb {
                    "flip" => MutationRule::FlipBit(kind),
                    "drop" => MutationRule::Drop(kind),
                    _ => return Err(format!("unknown mitm rule `{other}`")),
                }
            }
        };
        Ok(AdversaryKind::MitM { rule, sessions })
    }
}

impl Serialize for AdversaryKind {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AdversaryKind {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Everything needed to reproduce a run. Same config, same report bytes.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub seed: u64,
    pub sensors: usize,
    /// Wake intervals simulated per sensor.
    pub sessions: usize,
    pub shadow_pool: usize,
    pub duty_cycle: DutyCycleConfig,
    pub adversaries: Vec<AdversaryKind>,
    /// Wake indices at which M_A2 is lost after the sink commits.
    pub loss_sessions: BTreeSet<usize>,
    /// Static-identifier pairing instead of the anonymous protocol.
    pub legacy_baseline: bool,
    /// Built-in energy profile name; defaults by mode.
    pub profile: Option<String>,
    pub cost_model: RadioCostModel,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            sensors: 1,
            sessions: 10,
            shadow_pool: DEFAULT_SHADOW_POOL,
            duty_cycle: DutyCycleConfig::default(),
            adversaries: Vec::new(),
            loss_sessions: BTreeSet::new(),
            legacy_baseline: false,
            profile: None,
            cost_model: RadioCostModel::default(),
        }
    }
}

impl SimulationConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let config: SimulationConfig = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |msg: String| Err(SimError::Config(msg));
        if self.sensors == 0 {
            return fail("sensors must be at least 1".into());
        }
        if self.shadow_pool == 0 {
            return fail("shadow_pool must be at least 1".into());
        }
        if !(self.duty_cycle.interval_secs > 0.0) || !self.duty_cycle.interval_secs.is_finite() {
            return fail(format!("duty_cycle.interval_secs must be positive, got {}", self.duty_cycle.interval_secs));
        }
        if let Some(&bad) = self.loss_sessions.iter().find(|&&s| s >= self.sessions) {
            return fail(format!("loss session {bad} is outside 0..{}", self.sessions));
        }
        if self.legacy_baseline && !self.loss_sessions.is_empty() {
            return fail("loss_sessions needs the anonymous protocol (legacy_baseline = false)".into());
        }
        self.cost_model.validate().map_err(|e| SimError::Config(e.to_string()))?;
        self.energy_profile()?;
        Ok(())
    }

    /// Profile charged per wake, with packets taken from the duty cycle.
    pub fn energy_profile(&self) -> Result<ProtocolProfile, SimError> {
        let name = self
            .profile
            .clone()
            .unwrap_or_else(|| if self.legacy_baseline { BLE } else { BLE_LWAA }.to_owned());
        let mut profile = builtin_profile(&name).ok_or_else(|| SimError::Config(format!("unknown profile `{name}`")))?;
        profile.packets_per_interval = self.duty_cycle.packets;
        Ok(profile)
    }

    pub fn has_active_adversary(&self) -> bool {
        self.adversaries.iter().any(|a| !a.is_passive())
    }
}
