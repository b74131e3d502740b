//! Two-message anonymous mutual authentication between a sensor and the sink.
//!
//! ```text
//! sensor                                              sink
//!   M_A1 = {AID_L, N_x, Tr_Seq, EL, V_1}  ------------>
//!                                         <------------  M_A2 = {Tr, V_2, x}
//! ```
//!
//! Constructions (all hashes are [`hash_concat`] over raw big-endian fields):
//!
//! | value      | normal (EL = 0)            | emergency (EL = 1)          |
//! |------------|----------------------------|-----------------------------|
//! | key `K`    | `K_Is`                     | `K_em`                      |
//! | `AID_L`    | `h(K_Is ‖ Tr_Seq)`         | next unused shadow ID       |
//! | `V_1`      | `h(AID_L ‖ N_x ‖ Tr_Seq ‖ EL ‖ K)`                       |
//! | `K_IsNew`  | `h(K ‖ N_x ‖ N_s')`                                      |
//! | `x`        | `K_IsNew ⊕ h(K ‖ N_x)`                                   |
//! | `Tr`       | `pad(Tr_new) ⊕ h(N_x ‖ K)`                               |
//! | `V_2`      | `h(K_IsNew ‖ Tr_new ‖ N_x)`                              |
//!
//! The sink commits `(K_IsNew, Tr_new)` when it hands M_A2 to the channel,
//! the sensor when V_2 verifies. A lost M_A2 therefore leaves the sink one
//! step ahead; the emergency path re-synchronises the pair.

use aes::Aes128;
use ccm::aead::generic_array::GenericArray;
use ccm::aead::{Aead, KeyInit, Payload};
use ccm::consts::{U13, U16};
use ccm::Ccm;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::primitives::{hash_concat, SeededRng, TrackSequence, Word128, WORD_LEN};
use crate::registration::{AliasStatus, SensorCredentials, SinkTable};

/// Wire size of [`MessageA1`]: 16 + 16 + 4 + 1 + 16.
pub const A1_LEN: usize = 53;
/// Wire size of [`MessageA2`]: 16 + 16 + 16.
pub const A2_LEN: usize = 48;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolError {
    #[error("alias is not known to the sink")]
    UnknownAlias,
    #[error("track sequence is stale")]
    StaleSequence,
    #[error("verifier mismatch")]
    VerifierMismatch,
    #[error("no unused shadow identity left")]
    ShadowExhausted,
    #[error("malformed message")]
    Malformed,
    #[error("no pending session")]
    NoPendingSession,
    #[error("data frame failed authentication")]
    FrameAuth,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Normal,
    Emergency,
}

impl Mode {
    pub const fn el(self) -> u8 {
        match self {
            Mode::Normal => 0,
            Mode::Emergency => 1,
        }
    }

    pub const fn from_el(el: u8) -> Option<Self> {
        match el {
            0 => Some(Mode::Normal),
            1 => Some(Mode::Emergency),
            _ => None,
        }
    }
}

/// `AID_L = h(K_Is || Tr_Seq)`.
pub fn normal_alias(k_is: Word128, tr_seq: TrackSequence) -> Word128 {
    hash_concat(&[k_is.as_bytes(), &tr_seq.to_be_bytes()])
}

fn a1_verifier(aid_l: Word128, n_x: Word128, tr_seq: TrackSequence, mode: Mode, key: Word128) -> Word128 {
    hash_concat(&[
        aid_l.as_bytes(),
        n_x.as_bytes(),
        &tr_seq.to_be_bytes(),
        &[mode.el()],
        key.as_bytes(),
    ])
}

fn fresh_key(key: Word128, n_x: Word128, n_s: Word128) -> Word128 {
    hash_concat(&[key.as_bytes(), n_x.as_bytes(), n_s.as_bytes()])
}

fn key_mask(key: Word128, n_x: Word128) -> Word128 {
    hash_concat(&[key.as_bytes(), n_x.as_bytes()])
}

fn sequence_mask(n_x: Word128, key: Word128) -> Word128 {
    hash_concat(&[n_x.as_bytes(), key.as_bytes()])
}

fn a2_verifier(k_is_new: Word128, tr_new: TrackSequence, n_x: Word128) -> Word128 {
    hash_concat(&[k_is_new.as_bytes(), &tr_new.to_be_bytes(), n_x.as_bytes()])
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct MessageA1 {
    pub aid_l: Word128,
    pub n_x: Word128,
    pub tr_seq: TrackSequence,
    pub mode: Mode,
    pub v1: Word128,
}

impl MessageA1 {
    pub fn to_bytes(&self) -> [u8; A1_LEN] {
        let mut out = [0u8; A1_LEN];
        out[..16].copy_from_slice(self.aid_l.as_bytes());
        out[16..32].copy_from_slice(self.n_x.as_bytes());
        out[32..36].copy_from_slice(&self.tr_seq.to_be_bytes());
        out[36] = self.mode.el();
        out[37..].copy_from_slice(self.v1.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ProtocolError> {
        if bytes.len() != A1_LEN {
            return Err(ProtocolError::Malformed);
        }
        let word = |at: usize| Word128::from_slice(&bytes[at..at + WORD_LEN]).ok_or(ProtocolError::Malformed);
        Ok(Self {
            aid_l: word(0)?,
            n_x: word(16)?,
            tr_seq: TrackSequence::from_be_bytes(bytes[32..36].try_into().map_err(|_| ProtocolError::Malformed)?),
            mode: Mode::from_el(bytes[36]).ok_or(ProtocolError::Malformed)?,
            v1: word(37)?,
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct MessageA2 {
    pub tr: Word128,
    pub v2: Word128,
    pub x: Word128,
}

impl MessageA2 {
    pub fn to_bytes(&self) -> [u8; A2_LEN] {
        let mut out = [0u8; A2_LEN];
        out[..16].copy_from_slice(self.tr.as_bytes());
        out[16..32].copy_from_slice(self.v2.as_bytes());
        out[32..].copy_from_slice(self.x.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ProtocolError> {
        if bytes.len() != A2_LEN {
            return Err(ProtocolError::Malformed);
        }
        let word = |at: usize| Word128::from_slice(&bytes[at..at + WORD_LEN]).ok_or(ProtocolError::Malformed);
        Ok(Self { tr: word(0)?, v2: word(16)?, x: word(32)? })
    }
}

/// Sensor-side state between sending M_A1 and verifying M_A2.
#[derive(Clone, Debug)]
pub struct SensorSession {
    pub mode: Mode,
    pub aid_l: Word128,
    pub n_x: Word128,
    key: Word128,
    shadow: Option<Word128>,
}

impl SensorSession {
    /// Shadow ID spent by this session, if it is an emergency session.
    pub fn shadow_id(&self) -> Option<Word128> {
        self.shadow
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum AuthOutcome {
    Accepted { session_key: Word128 },
    Rejected(ProtocolError),
}

impl AuthOutcome {
    pub fn is_accepted(&self) -> bool {
        matches!(self, AuthOutcome::Accepted { .. })
    }

    pub fn session_key(&self) -> Option<Word128> {
        match self {
            AuthOutcome::Accepted { session_key } => Some(*session_key),
            AuthOutcome::Rejected(_) => None,
        }
    }
}

/// Builds M_A1. Draws exactly one word (`N_x`) from `rng`.
pub fn sensor_begin(
    creds: &SensorCredentials,
    mode: Mode,
    rng: &mut SeededRng,
) -> Result<(MessageA1, SensorSession), ProtocolError> {
    let (aid_l, key, shadow) = match mode {
        Mode::Normal => (normal_alias(creds.k_is, creds.tr_seq), creds.k_is, None),
        Mode::Emergency => {
            let sid = creds.shadow_ids.next_unused().ok_or(ProtocolError::ShadowExhausted)?;
            (sid, creds.k_em, Some(sid))
        }
    };
    let n_x = rng.random_word();
    let v1 = a1_verifier(aid_l, n_x, creds.tr_seq, mode, key);
    let msg = MessageA1 { aid_l, n_x, tr_seq: creds.tr_seq, mode, v1 };
    Ok((msg, SensorSession { mode, aid_l, n_x, key, shadow }))
}

/// Verifies M_A2 and, only on success, rotates the sensor's credentials.
pub fn sensor_finish(creds: &mut SensorCredentials, session: SensorSession, msg: &MessageA2) -> AuthOutcome {
    let k_is_new = msg.x ^ key_mask(session.key, session.n_x);
    let Some(tr_new) = TrackSequence::unpad(msg.tr ^ sequence_mask(session.n_x, session.key)) else {
        return AuthOutcome::Rejected(ProtocolError::VerifierMismatch);
    };
    if a2_verifier(k_is_new, tr_new, session.n_x) != msg.v2 {
        return AuthOutcome::Rejected(ProtocolError::VerifierMismatch);
    }
    if let Some(sid) = session.shadow {
        if !creds.shadow_ids.consume(&sid) {
            return AuthOutcome::Rejected(ProtocolError::ShadowExhausted);
        }
    }
    creds.k_is = k_is_new;
    creds.tr_seq = tr_new;
    AuthOutcome::Accepted { session_key: k_is_new }
}

/// Sink state change deferred until M_A2 is handed to the channel.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct PendingCommit {
    pub id_l: Word128,
    pub k_is_new: Word128,
    pub tr_new: TrackSequence,
    /// Shadow ID and nonce of an emergency session.
    pub emergency: Option<(Word128, Word128)>,
}

/// Validates M_A1 and prepares M_A2. The table is not modified.
///
/// Draws one word (`N_s'`) and at least one sequence from `rng` on success;
/// draws nothing on rejection.
pub fn sink_handle_a1(
    table: &SinkTable,
    msg: &MessageA1,
    rng: &mut SeededRng,
) -> Result<(MessageA2, PendingCommit), ProtocolError> {
    let (record, key) = match msg.mode {
        Mode::Normal => {
            let owner = match table.alias_lookup(&msg.aid_l) {
                None => return Err(ProtocolError::UnknownAlias),
                Some(AliasStatus::Retired(_)) => return Err(ProtocolError::StaleSequence),
                Some(AliasStatus::Current(owner)) => owner,
            };
            let record = table.get(&owner).ok_or(ProtocolError::UnknownAlias)?;
            if msg.tr_seq != record.tr_seq {
                return Err(ProtocolError::StaleSequence);
            }
            (record, record.k_is)
        }
        // Shadow IDs are single-use, so no sequence check on this path. A
        // pending ID may be retried, but never with a nonce already answered.
        Mode::Emergency => {
            let record = table.shadow_lookup(&msg.aid_l).ok_or(ProtocolError::UnknownAlias)?;
            if record.emergency_nonce_seen(&msg.aid_l, &msg.n_x) {
                return Err(ProtocolError::StaleSequence);
            }
            (record, record.k_em)
        }
    };
    if a1_verifier(msg.aid_l, msg.n_x, msg.tr_seq, msg.mode, key) != msg.v1 {
        return Err(ProtocolError::VerifierMismatch);
    }

    let n_s = rng.random_word();
    let k_is_new = fresh_key(key, msg.n_x, n_s);
    let mut tr_new = rng.random_sequence();
    while tr_new == record.tr_seq {
        tr_new = rng.random_sequence();
    }
    let reply = MessageA2 {
        tr: tr_new.pad() ^ sequence_mask(msg.n_x, key),
        v2: a2_verifier(k_is_new, tr_new, msg.n_x),
        x: k_is_new ^ key_mask(key, msg.n_x),
    };
    let emergency = (msg.mode == Mode::Emergency).then_some((msg.aid_l, msg.n_x));
    Ok((reply, PendingCommit { id_l: record.id_l, k_is_new, tr_new, emergency }))
}

impl SinkTable {
    /// Applies a prepared commit. Returns false if the record changed since
    /// the commit was prepared (e.g. its shadow ID was spent meanwhile).
    pub fn commit(&mut self, pending: PendingCommit) -> bool {
        self.rotate(&pending.id_l, pending.k_is_new, pending.tr_new, pending.emergency)
    }
}

/// A sensor holding its credentials and at most one pending session.
#[derive(Clone, Debug)]
pub struct SensorNode {
    credentials: SensorCredentials,
    pending: Option<SensorSession>,
}

impl SensorNode {
    pub fn new(credentials: SensorCredentials) -> Self {
        Self { credentials, pending: None }
    }

    pub fn credentials(&self) -> &SensorCredentials {
        &self.credentials
    }

    pub fn pending(&self) -> Option<&SensorSession> {
        self.pending.as_ref()
    }

    /// Starts a session, discarding any unfinished one.
    pub fn begin(&mut self, mode: Mode, rng: &mut SeededRng) -> Result<MessageA1, ProtocolError> {
        self.pending = None;
        let (msg, session) = sensor_begin(&self.credentials, mode, rng)?;
        self.pending = Some(session);
        Ok(msg)
    }

    /// Completes the pending session. A failed check keeps the session
    /// pending so a genuine M_A2 arriving later can still complete it.
    pub fn finish(&mut self, msg: &MessageA2) -> AuthOutcome {
        let Some(session) = self.pending.clone() else {
            return AuthOutcome::Rejected(ProtocolError::NoPendingSession);
        };
        let outcome = sensor_finish(&mut self.credentials, session, msg);
        if outcome.is_accepted() {
            self.pending = None;
        }
        outcome
    }

    pub fn abandon(&mut self) -> Option<SensorSession> {
        self.pending.take()
    }
}

type FrameCcm = Ccm<Aes128, U16, U13>;

/// Bytes of counter prefixed to every sealed data frame.
pub const FRAME_COUNTER_LEN: usize = 8;
/// Authentication tag length of a sealed data frame.
pub const FRAME_TAG_LEN: usize = 16;

fn frame_nonce(counter: u64) -> [u8; 13] {
    let mut nonce = [0u8; 13];
    nonce[5..].copy_from_slice(&counter.to_be_bytes());
    nonce
}

/// AES-128-CCM seal of one data frame: `counter (8, BE) || ciphertext || tag`.
pub fn encrypt_data_frame(session_key: Word128, counter: u64, payload: &[u8]) -> Vec<u8> {
    let cipher = FrameCcm::new(GenericArray::from_slice(session_key.as_bytes()));
    let aad = counter.to_be_bytes();
    let nonce = frame_nonce(counter);
    let sealed = cipher
        .encrypt(GenericArray::from_slice(&nonce), Payload { msg: payload, aad: &aad })
        .expect("CCM accepts frames far below its length limit");
    let mut out = Vec::with_capacity(FRAME_COUNTER_LEN + sealed.len());
    out.extend_from_slice(&aad);
    out.extend_from_slice(&sealed);
    out
}

pub fn decrypt_data_frame(session_key: Word128, frame: &[u8]) -> Result<Vec<u8>, ProtocolError> {
    if frame.len() < FRAME_COUNTER_LEN + FRAME_TAG_LEN {
        return Err(ProtocolError::FrameAuth);
    }
    let (aad, sealed) = frame.split_at(FRAME_COUNTER_LEN);
    let counter = u64::from_be_bytes(aad.try_into().map_err(|_| ProtocolError::FrameAuth)?);
    let cipher = FrameCcm::new(GenericArray::from_slice(session_key.as_bytes()));
    cipher
        .decrypt(GenericArray::from_slice(&frame_nonce(counter)), Payload { msg: sealed, aad })
        .map_err(|_| ProtocolError::FrameAuth)
}

/// Per-session frame sealer with a monotonically increasing counter.
#[derive(Clone, Debug)]
pub struct DataFrameCipher {
    key: Word128,
    counter: u64,
}

impl DataFrameCipher {
    pub fn new(session_key: Word128) -> Self {
        Self { key: session_key, counter: 0 }
    }

    pub fn seal(&mut self, payload: &[u8]) -> Vec<u8> {
        let frame = encrypt_data_frame(self.key, self.counter, payload);
        self.counter += 1;
        frame
    }

    pub fn open(&self, frame: &[u8]) -> Result<Vec<u8>, ProtocolError> {
        decrypt_data_frame(self.key, frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registration::SensorIdentity;
    use proptest::prelude::*;

    fn setup(seed: u64, pool: usize) -> (SinkTable, SensorNode, SeededRng) {
        let mut rng = SeededRng::new(seed);
        let mut table = SinkTable::new();
        let creds = table.register(SensorIdentity(Word128::from_u128(1)), pool, &mut rng).unwrap();
        (table, SensorNode::new(creds), rng)
    }

    fn exchange(table: &mut SinkTable, node: &mut SensorNode, mode: Mode, rng: &mut SeededRng) -> AuthOutcome {
        let a1 = match node.begin(mode, rng) {
            Ok(a1) => a1,
            Err(e) => return AuthOutcome::Rejected(e),
        };
        match sink_handle_a1(table, &a1, rng) {
            Ok((a2, commit)) => {
                assert!(table.commit(commit));
                let outcome = node.finish(&a2);
                if let Some(k) = outcome.session_key() {
                    assert_eq!(table.get(&commit.id_l).unwrap().k_is, k);
                }
                outcome
            }
            Err(e) => AuthOutcome::Rejected(e),
        }
    }

    #[test]
    fn honest_exchange_agrees_on_key() {
        let (mut table, mut node, mut rng) = setup(42, 8);
        let out = exchange(&mut table, &mut node, Mode::Normal, &mut rng);
        assert!(out.is_accepted());
        let rec = table.get(&Word128::from_u128(1)).unwrap();
        assert!(rec.mirrors(node.credentials()));
    }

    #[test]
    fn wire_sizes() {
        let (_, mut node, mut rng) = setup(1, 1);
        let a1 = node.begin(Mode::Normal, &mut rng).unwrap();
        assert_eq!(a1.to_bytes().len(), 53);
        assert_eq!(MessageA1::from_bytes(&a1.to_bytes()).unwrap(), a1);
        assert_eq!(MessageA1::from_bytes(&a1.to_bytes()[..52]), Err(ProtocolError::Malformed));
        let mut bad_el = a1.to_bytes();
        bad_el[36] = 2;
        assert_eq!(MessageA1::from_bytes(&bad_el), Err(ProtocolError::Malformed));
    }

    #[test]
    fn golden_a1_seed_42() {
        let (_, mut node, mut rng) = setup(42, 2);
        let a1 = node.begin(Mode::Normal, &mut rng).unwrap();
        assert_eq!(hex::encode(a1.to_bytes()), GOLDEN_A1_SEED42);
    }

    const GOLDEN_A1_SEED42: &str =
        "55c00477a5c74492c9bbe058018372cac9ee1c106f66e172c869bd5f8f0db4c4a992f25500395d6cbee4439e3fc943c57cfa6a86bc";

    #[test]
    fn consecutive_sessions_use_distinct_aliases() {
        let (mut table, mut node, mut rng) = setup(5, 2);
        let first = normal_alias(node.credentials().k_is, node.credentials().tr_seq);
        assert!(exchange(&mut table, &mut node, Mode::Normal, &mut rng).is_accepted());
        let second = normal_alias(node.credentials().k_is, node.credentials().tr_seq);
        assert_ne!(first, second);
    }

    #[test]
    fn replayed_a1_is_stale() {
        let (mut table, mut node, mut rng) = setup(6, 2);
        let a1 = node.begin(Mode::Normal, &mut rng).unwrap();
        let (a2, commit) = sink_handle_a1(&table, &a1, &mut rng).unwrap();
        table.commit(commit);
        assert!(node.finish(&a2).is_accepted());
        assert_eq!(sink_handle_a1(&table, &a1, &mut rng).unwrap_err(), ProtocolError::StaleSequence);
    }

    #[test]
    fn replayed_a2_is_rejected() {
        let (mut table, mut node, mut rng) = setup(6, 2);
        let a1 = node.begin(Mode::Normal, &mut rng).unwrap();
        let (a2, commit) = sink_handle_a1(&table, &a1, &mut rng).unwrap();
        table.commit(commit);
        assert!(node.finish(&a2).is_accepted());
        assert_eq!(node.finish(&a2), AuthOutcome::Rejected(ProtocolError::NoPendingSession));
        node.begin(Mode::Normal, &mut rng).unwrap();
        assert_eq!(node.finish(&a2), AuthOutcome::Rejected(ProtocolError::VerifierMismatch));
    }

    #[test]
    fn emergency_pool_is_single_use() {
        let (mut table, mut node, mut rng) = setup(7, 1);
        assert!(exchange(&mut table, &mut node, Mode::Emergency, &mut rng).is_accepted());
        assert_eq!(node.begin(Mode::Emergency, &mut rng).unwrap_err(), ProtocolError::ShadowExhausted);
        // Normal mode keeps working after the emergency rotation.
        assert!(exchange(&mut table, &mut node, Mode::Normal, &mut rng).is_accepted());
    }

    #[test]
    fn replayed_emergency_a1_is_rejected() {
        let (mut table, mut node, mut rng) = setup(8, 2);
        let a1 = node.begin(Mode::Emergency, &mut rng).unwrap();
        let (a2, commit) = sink_handle_a1(&table, &a1, &mut rng).unwrap();
        table.commit(commit);
        assert!(node.finish(&a2).is_accepted());
        // still pending: the nonce was already answered
        assert_eq!(sink_handle_a1(&table, &a1, &mut rng).unwrap_err(), ProtocolError::StaleSequence);
        // confirmed by a normal session: the shadow ID is gone
        assert!(exchange(&mut table, &mut node, Mode::Normal, &mut rng).is_accepted());
        assert_eq!(sink_handle_a1(&table, &a1, &mut rng).unwrap_err(), ProtocolError::UnknownAlias);
    }

    #[test]
    fn lost_emergency_reply_can_be_retried() {
        let (mut table, mut node, mut rng) = setup(9, 2);
        for _ in 0..3 {
            let a1 = node.begin(Mode::Emergency, &mut rng).unwrap();
            let (_, commit) = sink_handle_a1(&table, &a1, &mut rng).unwrap();
            assert!(table.commit(commit));
            node.abandon();
        }
        assert!(exchange(&mut table, &mut node, Mode::Emergency, &mut rng).is_accepted());
        assert!(table.get(&Word128::from_u128(1)).unwrap().mirrors(node.credentials()));
        assert_eq!(node.credentials().shadow_ids.unused_count(), 1);
        assert!(exchange(&mut table, &mut node, Mode::Normal, &mut rng).is_accepted());
    }

    #[test]
    fn a2_from_other_sensor_is_rejected() {
        let mut rng = SeededRng::new(10);
        let mut table = SinkTable::new();
        let ca = table.register(SensorIdentity(Word128::from_u128(1)), 2, &mut rng).unwrap();
        let cb = table.register(SensorIdentity(Word128::from_u128(2)), 2, &mut rng).unwrap();
        let (mut a, mut b) = (SensorNode::new(ca), SensorNode::new(cb));
        let a1a = a.begin(Mode::Normal, &mut rng).unwrap();
        b.begin(Mode::Normal, &mut rng).unwrap();
        let (a2a, _) = sink_handle_a1(&table, &a1a, &mut rng).unwrap();
        let before = b.credentials().clone();
        assert_eq!(b.finish(&a2a), AuthOutcome::Rejected(ProtocolError::VerifierMismatch));
        assert_eq!(b.credentials(), &before);
    }

    #[test]
    fn desync_then_emergency_recovers() {
        let (mut table, mut node, mut rng) = setup(11, 4);
        // Sink commits, M_A2 never arrives.
        let a1 = node.begin(Mode::Normal, &mut rng).unwrap();
        let (_, commit) = sink_handle_a1(&table, &a1, &mut rng).unwrap();
        table.commit(commit);
        node.abandon();
        let rec = table.get(&Word128::from_u128(1)).unwrap();
        assert!(!rec.mirrors(node.credentials()));

        let retry = exchange(&mut table, &mut node, Mode::Normal, &mut rng);
        assert_eq!(retry, AuthOutcome::Rejected(ProtocolError::StaleSequence));
        assert!(exchange(&mut table, &mut node, Mode::Emergency, &mut rng).is_accepted());
        assert!(table.get(&Word128::from_u128(1)).unwrap().mirrors(node.credentials()));
        assert!(exchange(&mut table, &mut node, Mode::Normal, &mut rng).is_accepted());
    }

    #[test]
    fn sink_rollback_is_healed_by_emergency() {
        let (mut table, mut node, mut rng) = setup(12, 4);
        let snapshot = table.get(&Word128::from_u128(1)).unwrap().clone();
        assert!(exchange(&mut table, &mut node, Mode::Normal, &mut rng).is_accepted());
        table.restore(snapshot);
        assert!(!exchange(&mut table, &mut node, Mode::Normal, &mut rng).is_accepted());
        assert!(exchange(&mut table, &mut node, Mode::Emergency, &mut rng).is_accepted());
        assert!(table.get(&Word128::from_u128(1)).unwrap().mirrors(node.credentials()));
    }

    #[test]
    fn flipped_x_leaves_credentials_unchanged() {
        let (table, mut node, mut rng) = setup(13, 2);
        let a1 = node.begin(Mode::Normal, &mut rng).unwrap();
        let (a2, _) = sink_handle_a1(&table, &a1, &mut rng).unwrap();
        let before = node.credentials().clone();
        let tampered = MessageA2 { x: a2.x.flip_bit(77), ..a2 };
        assert_eq!(node.finish(&tampered), AuthOutcome::Rejected(ProtocolError::VerifierMismatch));
        assert_eq!(node.credentials(), &before);
        // The genuine reply still completes the session.
        assert!(node.finish(&a2).is_accepted());
    }

    #[test]
    fn data_frames_roundtrip_and_are_fresh() {
        let key = Word128::from_u128(0x1234);
        let mut sealer = DataFrameCipher::new(key);
        let a = sealer.seal(b"heart rate 72");
        let b = sealer.seal(b"heart rate 72");
        assert_ne!(a, b);
        assert_eq!(sealer.open(&a).unwrap(), b"heart rate 72");
        assert_eq!(decrypt_data_frame(Word128::from_u128(0x1235), &a), Err(ProtocolError::FrameAuth));
        let mut bad = a.clone();
        bad[FRAME_COUNTER_LEN] ^= 1;
        assert_eq!(decrypt_data_frame(key, &bad), Err(ProtocolError::FrameAuth));
        assert_eq!(decrypt_data_frame(key, &a[..10]), Err(ProtocolError::FrameAuth));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn honest_runs_always_agree(seed in any::<u64>(), sessions in 1usize..20) {
            let (mut table, mut node, mut rng) = setup(seed, 2);
            let mut keys = Vec::new();
            for _ in 0..sessions {
                let out = exchange(&mut table, &mut node, Mode::Normal, &mut rng);
                prop_assert!(out.is_accepted());
                keys.push(out.session_key().unwrap());
            }
            keys.sort();
            keys.dedup();
            prop_assert_eq!(keys.len(), sessions);
        }

        #[test]
        fn any_a1_bit_flip_is_rejected(seed in any::<u64>(), bit in 0usize..A1_LEN * 8) {
            let (table, mut node, mut rng) = setup(seed, 2);
            let a1 = node.begin(Mode::Normal, &mut rng).unwrap();
            let mut wire = a1.to_bytes();
            wire[bit / 8] ^= 0x80 >> (bit % 8);
            if let Ok(msg) = MessageA1::from_bytes(&wire) {
                prop_assert!(sink_handle_a1(&table, &msg, &mut rng).is_err());
            }
        }

        #[test]
        fn any_a2_bit_flip_is_rejected(seed in any::<u64>(), bit in 0usize..A2_LEN * 8) {
            let (table, mut node, mut rng) = setup(seed, 2);
            let a1 = node.begin(Mode::Normal, &mut rng).unwrap();
            let (a2, _) = sink_handle_a1(&table, &a1, &mut rng).unwrap();
            let mut wire = a2.to_bytes();
            wire[bit / 8] ^= 0x80 >> (bit % 8);
            let before = node.credentials().clone();
            let msg = MessageA2::from_bytes(&wire).unwrap();
            prop_assert!(!node.finish(&msg).is_accepted());
            prop_assert_eq!(node.credentials(), &before);
        }

        #[test]
        fn data_frame_roundtrip(key in any::<u128>(), payload in proptest::collection::vec(any::<u8>(), 0..256)) {
            let mut sealer = DataFrameCipher::new(Word128::from_u128(key));
            let frame = sealer.seal(&payload);
            prop_assert_eq!(sealer.open(&frame).unwrap(), payload);
        }
    }
}
