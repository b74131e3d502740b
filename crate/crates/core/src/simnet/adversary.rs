//! Channel adversaries. Passive ones only log; the man-in-the-middle may
//! drop, alter or substitute frames according to its [`MutationRule`].

use std::collections::BTreeMap;

use super::config::{AdversaryKind, FrameKind, MutationRule};
use super::report::{Observation, ObservationDetail};
use crate::primitives::{SeededRng, Word128};

#[derive(Clone, Copy, PartialEq, Eq, Debug, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    SensorToSink,
    SinkToSensor,
}

#[derive(Clone, PartialEq, Debug)]
pub struct ChannelFrame {
    pub direction: Direction,
    pub kind: FrameKind,
    pub sensor: usize,
    pub session: usize,
    pub timestamp: f64,
    pub payload: Vec<u8>,
}

/// Offset of V_1 inside a serialized M_A1.
const V1_OFFSET: usize = 37;

pub(crate) struct Adversary {
    index: usize,
    kind: AdversaryKind,
    rng: SeededRng,
    last_a1: BTreeMap<usize, Vec<u8>>,
}

impl Adversary {
    pub(crate) fn new(index: usize, kind: AdversaryKind, rng: SeededRng) -> Self {
        Self { index, kind, rng, last_a1: BTreeMap::new() }
    }

    fn observe(&self, frame: &ChannelFrame, detail: ObservationDetail) -> Observation {
        Observation {
            adversary: self.index,
            role: self.kind.label(),
            sensor: frame.sensor,
            session: frame.session,
            timestamp: frame.timestamp,
            frame: frame.kind,
            direction: frame.direction,
            detail,
        }
    }

    /// Passes `frame` through this adversary. `None` means it was dropped.
    pub(crate) fn intercept(&mut self, mut frame: ChannelFrame, log: &mut Vec<Observation>) -> Option<ChannelFrame> {
        match &self.kind {
            AdversaryKind::Eavesdropper => {
                log.push(self.observe(&frame, ObservationDetail::Captured { payload: hex::encode(&frame.payload) }));
                Some(frame)
            }
            AdversaryKind::Surveillor => {
                if matches!(frame.kind, FrameKind::A1 | FrameKind::LegacyPairing) {
                    if let Some(identifier) = Word128::from_slice(&frame.payload) {
                        log.push(self.observe(&frame, ObservationDetail::Identifier { identifier }));
                    }
                }
                Some(frame)
            }
            AdversaryKind::MitM { rule, sessions } => {
                let rule = *rule;
                let armed = sessions.as_ref().map_or(true, |s| s.contains(&frame.session));
                let previous = if frame.kind == FrameKind::A1 {
                    self.last_a1.insert(frame.sensor, frame.payload.clone())
                } else {
                    None
                };
                if !armed {
                    return Some(frame);
                }
                let action = match rule {
                    MutationRule::FlipV1Bit if frame.kind == FrameKind::A1 && frame.payload.len() > V1_OFFSET => {
                        let span = (frame.payload.len() - V1_OFFSET) * 8;
                        let bit = V1_OFFSET * 8 + self.rng.below(span);
                        flip(&mut frame.payload, bit);
                        format!("flip bit {bit}")
                    }
                    MutationRule::FlipBit(kind) if frame.kind == kind && !frame.payload.is_empty() => {
                        let bit = self.rng.below(frame.payload.len() * 8);
                        flip(&mut frame.payload, bit);
                        format!("flip bit {bit}")
                    }
                    MutationRule::Drop(kind) if frame.kind == kind => {
                        log.push(self.observe(&frame, ObservationDetail::Mutated { action: "drop".into() }));
                        return None;
                    }
                    MutationRule::ReplayPreviousA1 if frame.kind == FrameKind::A1 => match previous {
                        Some(old) => {
                            frame.payload = old;
                            "replay previous a1".to_owned()
                        }
                        None => return Some(frame),
                    },
                    _ => return Some(frame),
                };
                log.push(self.observe(&frame, ObservationDetail::Mutated { action }));
                Some(frame)
            }
        }
    }
}

fn flip(payload: &mut [u8], bit: usize) {
    payload[bit / 8] ^= 0x80 >> (bit % 8);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(kind: FrameKind, session: usize) -> ChannelFrame {
        ChannelFrame {
            direction: Direction::SensorToSink,
            kind,
            sensor: 0,
            session,
            timestamp: 0.0,
            payload: (0u8..53).collect(),
        }
    }

    #[test]
    fn flip_v1_touches_only_v1() {
        let mut adv = Adversary::new(
            0,
            AdversaryKind::MitM { rule: MutationRule::FlipV1Bit, sessions: None },
            SeededRng::new(1),
        );
        let mut log = Vec::new();
        for s in 0..64 {
            let original = frame(FrameKind::A1, s);
            let out = adv.intercept(original.clone(), &mut log).unwrap();
            let diff: Vec<usize> =
                (0..53).filter(|&i| out.payload[i] != original.payload[i]).collect();
            assert_eq!(diff.len(), 1);
            assert!(diff[0] >= V1_OFFSET);
        }
        assert_eq!(log.len(), 64);
    }

    #[test]
    fn session_filter_limits_mutation() {
        let kind: AdversaryKind = "mitm:drop-a1@1".parse().unwrap();
        let mut adv = Adversary::new(0, kind, SeededRng::new(1));
        let mut log = Vec::new();
        assert!(adv.intercept(frame(FrameKind::A1, 0), &mut log).is_some());
        assert!(adv.intercept(frame(FrameKind::A1, 1), &mut log).is_none());
        assert!(adv.intercept(frame(FrameKind::A2, 1), &mut log).is_some());
    }

    #[test]
    fn replay_substitutes_previous_a1() {
        let mut adv = Adversary::new(0, "mitm:replay-a1".parse().unwrap(), SeededRng::new(1));
        let mut log = Vec::new();
        let first = frame(FrameKind::A1, 0);
        assert_eq!(adv.intercept(first.clone(), &mut log).unwrap(), first);
        let mut second = frame(FrameKind::A1, 1);
        second.payload[0] = 0xff;
        assert_eq!(adv.intercept(second, &mut log).unwrap().payload, first.payload);
    }

    #[test]
    fn passive_adversaries_never_modify() {
        let mut log = Vec::new();
        for kind in [AdversaryKind::Eavesdropper, AdversaryKind::Surveillor] {
            let mut adv = Adversary::new(0, kind, SeededRng::new(1));
            for k in [FrameKind::A1, FrameKind::A2, FrameKind::Data, FrameKind::LegacyPairing] {
                let f = frame(k, 0);
                assert_eq!(adv.intercept(f.clone(), &mut log).unwrap(), f);
            }
        }
        // eavesdropper logs 4, surveillor logs the two identifier-bearing frames
        assert_eq!(log.len(), 6);
    }
}
