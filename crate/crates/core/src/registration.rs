//! One-time registration over a trusted channel.
//!
//! The sink mints the pairing key `K_Is = h(ID_L || N_s) xor ID_L`, an
//! emergency key and a pool of single-use shadow identities, then installs
//! mirrored state on both sides. The channel itself is an in-memory call.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::primitives::{hash_concat, SeededRng, TrackSequence, Word128};
use crate::protocol::normal_alias;

/// Shadow pool size used when a configuration does not override it.
pub const DEFAULT_SHADOW_POOL: usize = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistrationError {
    #[error("sensor identity {0} is already registered")]
    DuplicateIdentity(Word128),
    #[error("shadow pool size must be at least 1")]
    EmptyShadowPool,
}

/// Permanent sensor identity. Never sent over the air after registration.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SensorIdentity(pub Word128);

/// Location area identifier. Carried as opaque context; no verifier covers it.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LocationAreaId(pub Word128);

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct ShadowSlot {
    pub id: Word128,
    pub used: bool,
}

/// Ordered pool of single-use shadow identities.
#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct ShadowPool {
    slots: Vec<ShadowSlot>,
}

impl ShadowPool {
    pub fn new(ids: impl IntoIterator<Item = Word128>) -> Self {
        Self { slots: ids.into_iter().map(|id| ShadowSlot { id, used: false }).collect() }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn unused_count(&self) -> usize {
        self.slots.iter().filter(|s| !s.used).count()
    }

    /// First unused shadow ID in pool order.
    pub fn next_unused(&self) -> Option<Word128> {
        self.slots.iter().find(|s| !s.used).map(|s| s.id)
    }

    pub fn is_unused(&self, id: &Word128) -> bool {
        self.slots.iter().any(|s| !s.used && s.id == *id)
    }

    pub fn contains(&self, id: &Word128) -> bool {
        self.slots.iter().any(|s| s.id == *id)
    }

    /// Marks `id` and every slot before it used. Returns false if `id` was
    /// absent or already used.
    ///
    /// Slots are spent in pool order, so an ID seen at the sink implies the
    /// sensor has already given up on all earlier ones.
    pub fn consume(&mut self, id: &Word128) -> bool {
        let Some(at) = self.slots.iter().position(|s| s.id == *id && !s.used) else {
            return false;
        };
        for slot in &mut self.slots[..=at] {
            slot.used = true;
        }
        true
    }

    pub fn ids(&self) -> impl Iterator<Item = Word128> + '_ {
        self.slots.iter().map(|s| s.id)
    }

    pub fn slots(&self) -> &[ShadowSlot] {
        &self.slots
    }
}

/// Secret state held by the sensor.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct SensorCredentials {
    pub k_is: Word128,
    pub k_em: Word128,
    pub shadow_ids: ShadowPool,
    pub tr_seq: TrackSequence,
}

/// An emergency shadow ID the sink has answered but the sensor has not yet
/// confirmed by pairing under the resulting alias. Retries with this ID are
/// honoured as long as their nonce is new.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct PendingEmergency {
    pub shadow: Word128,
    pub seen_nonces: Vec<Word128>,
}

/// Sink-side mirror of a sensor's credentials.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct RegistrationRecord {
    pub id_l: Word128,
    pub k_is: Word128,
    pub k_em: Word128,
    pub shadow_ids: ShadowPool,
    pub tr_seq: TrackSequence,
    /// `h(k_is || tr_seq)`: the alias the sensor must present next.
    pub expected_alias: Word128,
    pub lai: LocationAreaId,
    #[serde(default)]
    pub pending_emergency: Option<PendingEmergency>,
}

impl RegistrationRecord {
    /// True when sensor and sink agree on all shared secrets.
    pub fn mirrors(&self, creds: &SensorCredentials) -> bool {
        self.k_is == creds.k_is
            && self.k_em == creds.k_em
            && self.tr_seq == creds.tr_seq
            && self.shadow_ids == creds.shadow_ids
    }

    /// True when `n_x` was already answered for the pending shadow ID `sid`.
    pub fn emergency_nonce_seen(&self, sid: &Word128, n_x: &Word128) -> bool {
        self.pending_emergency
            .as_ref()
            .is_some_and(|p| p.shadow == *sid && p.seen_nonces.contains(n_x))
    }
}

/// `K_Is = h(id_l || n_s) xor id_l`.
pub fn derive_pairing_key(id_l: Word128, n_s: Word128) -> Word128 {
    hash_concat(&[id_l.as_bytes(), n_s.as_bytes()]) ^ id_l
}

/// Where an alias points inside the sink table.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum AliasStatus {
    /// The alias the record currently expects.
    Current(Word128),
    /// An alias the record has already moved past.
    Retired(Word128),
}

/// The sink's registration table.
#[derive(Clone, Debug, Default)]
pub struct SinkTable {
    records: BTreeMap<Word128, RegistrationRecord>,
    // Every alias ever expected, mapped to its owner; retired aliases let the
    // sink tell a replay apart from an unknown sender.
    aliases: BTreeMap<Word128, Word128>,
    shadows: BTreeMap<Word128, Word128>,
}

impl SinkTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id_l: &Word128) -> Option<&RegistrationRecord> {
        self.records.get(id_l)
    }

    pub fn get_mut(&mut self, id_l: &Word128) -> Option<&mut RegistrationRecord> {
        self.records.get_mut(id_l)
    }

    pub fn records(&self) -> impl Iterator<Item = &RegistrationRecord> {
        self.records.values()
    }

    /// Registers a sensor with a pool of `pool_size` shadow IDs.
    ///
    /// Draw order from `rng` is fixed: `N_s`, `K_em`, initial `Tr_Seq`, then
    /// one `r_j` per shadow ID (`SID_j = h(ID_L || r_j)`), redrawing on any
    /// collision with an existing shadow ID or identity.
    pub fn register(
        &mut self,
        identity: SensorIdentity,
        pool_size: usize,
        rng: &mut SeededRng,
    ) -> Result<SensorCredentials, RegistrationError> {
        let id_l = identity.0;
        if pool_size == 0 {
            return Err(RegistrationError::EmptyShadowPool);
        }
        if self.records.contains_key(&id_l) || self.shadows.contains_key(&id_l) {
            return Err(RegistrationError::DuplicateIdentity(id_l));
        }

        let n_s = rng.random_word();
        let k_is = derive_pairing_key(id_l, n_s);
        let k_em = rng.random_word();
        let tr_seq = rng.random_sequence();

        let mut shadow_ids: Vec<Word128> = Vec::with_capacity(pool_size);
        while shadow_ids.len() < pool_size {
            let r = rng.random_word();
            let sid = hash_concat(&[id_l.as_bytes(), r.as_bytes()]);
            let collides = shadow_ids.contains(&sid)
                || self.shadows.contains_key(&sid)
                || self.records.contains_key(&sid)
                || sid == id_l;
            if !collides {
                shadow_ids.push(sid);
            }
        }
        let pool = ShadowPool::new(shadow_ids);

        let expected_alias = normal_alias(k_is, tr_seq);
        let record = RegistrationRecord {
            id_l,
            k_is,
            k_em,
            shadow_ids: pool.clone(),
            tr_seq,
            expected_alias,
            lai: LocationAreaId::default(),
            pending_emergency: None,
        };
        for sid in pool.ids() {
            self.shadows.insert(sid, id_l);
        }
        self.aliases.insert(expected_alias, id_l);
        self.records.insert(id_l, record);

        Ok(SensorCredentials { k_is, k_em, shadow_ids: pool, tr_seq })
    }

    /// Resolves a normal-mode alias.
    pub fn alias_lookup(&self, alias: &Word128) -> Option<AliasStatus> {
        let owner = *self.aliases.get(alias)?;
        let record = self.records.get(&owner)?;
        if record.expected_alias == *alias {
            Some(AliasStatus::Current(owner))
        } else {
            Some(AliasStatus::Retired(owner))
        }
    }

    /// Record owning `candidate` as an unused or still-pending shadow ID.
    /// Does not consume it.
    pub fn shadow_lookup(&self, candidate: &Word128) -> Option<&RegistrationRecord> {
        let owner = self.shadows.get(candidate)?;
        self.records.get(owner).filter(|r| {
            r.shadow_ids.is_unused(candidate) || r.pending_emergency.as_ref().is_some_and(|p| p.shadow == *candidate)
        })
    }

    /// Installs a new key and sequence for `id_l`, retiring its old alias.
    ///
    /// `emergency` carries the shadow ID and nonce of an emergency session;
    /// `None` means a normal session, which confirms any pending emergency.
    pub(crate) fn rotate(
        &mut self,
        id_l: &Word128,
        k_is_new: Word128,
        tr_new: TrackSequence,
        emergency: Option<(Word128, Word128)>,
    ) -> bool {
        let Some(record) = self.records.get_mut(id_l) else {
            return false;
        };
        match emergency {
            Some((sid, n_x)) => match &mut record.pending_emergency {
                Some(p) if p.shadow == sid => {
                    if p.seen_nonces.contains(&n_x) {
                        return false;
                    }
                    p.seen_nonces.push(n_x);
                }
                _ => {
                    if !record.shadow_ids.consume(&sid) {
                        return false;
                    }
                    record.pending_emergency = Some(PendingEmergency { shadow: sid, seen_nonces: vec![n_x] });
                }
            },
            None => record.pending_emergency = None,
        }
        record.k_is = k_is_new;
        record.tr_seq = tr_new;
        record.expected_alias = normal_alias(k_is_new, tr_new);
        self.aliases.insert(record.expected_alias, *id_l);
        true
    }

    /// Restores a record to an earlier snapshot. Test and fault-injection hook.
    pub fn restore(&mut self, snapshot: RegistrationRecord) {
        self.aliases.insert(snapshot.expected_alias, snapshot.id_l);
        self.records.insert(snapshot.id_l, snapshot);
    }
}
