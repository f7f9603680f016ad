use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use ed25519_dalek::VerifyingKey;
use serde::Serialize;
use thiserror::Error;

use super::dh::{dh_finalize, dh_initiate, CompletingMessage, InitialMessage, SlotPrivate};
use super::envelope::{decrypt_seed, SeedEnvelope};
use super::mask::{add_assign_wrapping, expand_mask};
use super::{wire, GroupConfig, SecAggError};

/// One pre-generated key-exchange instance.
#[derive(Debug, Clone)]
pub struct KeySlot {
    pub index: u32,
    pub initial_message: InitialMessage,
    pub consumed: bool,
    private: SlotPrivate,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TsaRejection {
    #[error("slot {0} already contributed")]
    ReplayedSlot(u32),
    #[error("seed envelope failed authentication")]
    BadMac,
    #[error("unmask vector already released")]
    Released,
    #[error("unknown slot {0}")]
    UnknownSlot(u32),
    #[error("malformed request: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReleaseRefusal {
    #[error("only {processed} of the required {threshold} clients processed")]
    BelowThreshold { processed: usize, threshold: usize },
    #[error("unmask vector already released")]
    AlreadyReleased,
}

/// Simulated trusted secure aggregator.
///
/// Holds the slot table and the running mask sum. Rejected messages leave the
/// state untouched. After a successful release every later message is refused.
#[derive(Debug)]
pub struct TrustedParty {
    group: GroupConfig,
    slots: Vec<KeySlot>,
    accumulator: Vec<u32>,
    processed_count: usize,
    released: bool,
    verifying_key: VerifyingKey,
}

impl TrustedParty {
    pub fn new(group: GroupConfig, slot_count: u32, rng_seed: u64) -> Self {
        let setup = dh_initiate(slot_count, rng_seed);
        let slots = setup
            .privates
            .into_iter()
            .zip(setup.messages)
            .map(|(private, initial_message)| KeySlot {
                index: initial_message.index,
                initial_message,
                consumed: false,
                private,
            })
            .collect();
        Self {
            group,
            slots,
            accumulator: vec![0; group.vector_length],
            processed_count: 0,
            released: false,
            verifying_key: setup.verifying_key,
        }
    }

    pub fn group(&self) -> &GroupConfig {
        &self.group
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        self.verifying_key
    }

    pub fn initial_messages(&self) -> Vec<InitialMessage> {
        self.slots.iter().map(|s| s.initial_message.clone()).collect()
    }

    pub fn slot(&self, index: u32) -> Option<&KeySlot> {
        self.slots.get(index as usize)
    }

    pub fn processed_count(&self) -> usize {
        self.processed_count
    }

    pub fn is_released(&self) -> bool {
        self.released
    }

    /// Recovers one client's seed and folds its mask into the running sum.
    pub fn process(&mut self, envelope: &SeedEnvelope, completing: &CompletingMessage) -> Result<(), TsaRejection> {
        if self.released {
            return Err(TsaRejection::Released);
        }
        if envelope.slot_index != completing.index {
            return Err(TsaRejection::Malformed(format!(
                "envelope slot {} does not match completing slot {}",
                envelope.slot_index, completing.index
            )));
        }
        let slot = self.slots.get(completing.index as usize).ok_or(TsaRejection::UnknownSlot(completing.index))?;
        if slot.consumed {
            return Err(TsaRejection::ReplayedSlot(slot.index));
        }
        let secret = dh_finalize(&slot.private, completing).map_err(|e| TsaRejection::Malformed(e.to_string()))?;
        let seed = decrypt_seed(envelope, &secret).map_err(|e| match e {
            SecAggError::BadMac => TsaRejection::BadMac,
            other => TsaRejection::Malformed(other.to_string()),
        })?;
        let mask = expand_mask(&seed, self.group.vector_length, &self.group);
        add_assign_wrapping(&mut self.accumulator, &mask, &self.group).expect("mask has vector_length elements");
        self.slots[completing.index as usize].consumed = true;
        self.processed_count += 1;
        Ok(())
    }

    /// Releases the mask sum once at least `threshold` slots have contributed.
    pub fn release(&mut self) -> Result<Vec<u32>, ReleaseRefusal> {
        if self.released {
            return Err(ReleaseRefusal::AlreadyReleased);
        }
        if self.processed_count < self.group.threshold {
            return Err(ReleaseRefusal::BelowThreshold {
                processed: self.processed_count,
                threshold: self.group.threshold,
            });
        }
        self.released = true;
        Ok(self.accumulator.clone())
    }

    /// The released unmask vector, if any.
    pub fn released_vector(&self) -> Option<&[u32]> {
        self.released.then_some(self.accumulator.as_slice())
    }
}

/// Byte totals crossing the trusted-party boundary, split by message kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BoundaryCounters {
    /// Signed initial messages handed out at setup.
    pub setup_bytes_out: u64,
    /// Completing messages plus seed envelopes handed in.
    pub process_bytes_in: u64,
    pub process_messages: u64,
    pub release_bytes_in: u64,
    pub release_bytes_out: u64,
}

impl BoundaryCounters {
    pub fn total(&self) -> u64 {
        self.setup_bytes_out + self.process_bytes_in + self.release_bytes_in + self.release_bytes_out
    }
}

/// Serialized byte-level interface to a [`TrustedParty`].
///
/// Requests from many threads are applied one at a time under a lock.
#[derive(Debug)]
pub struct TrustedPartyChannel {
    inner: Mutex<TrustedParty>,
    setup_bytes_out: AtomicU64,
    process_bytes_in: AtomicU64,
    process_messages: AtomicU64,
    release_bytes_in: AtomicU64,
    release_bytes_out: AtomicU64,
}

impl TrustedPartyChannel {
    pub fn new(party: TrustedParty) -> Self {
        Self {
            inner: Mutex::new(party),
            setup_bytes_out: AtomicU64::new(0),
            process_bytes_in: AtomicU64::new(0),
            process_messages: AtomicU64::new(0),
            release_bytes_in: AtomicU64::new(0),
            release_bytes_out: AtomicU64::new(0),
        }
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        self.inner.lock().unwrap().verifying_key()
    }

    /// Encoded signed initial messages for every slot.
    pub fn initial_messages(&self) -> Vec<Vec<u8>> {
        let msgs: Vec<Vec<u8>> =
            self.inner.lock().unwrap().initial_messages().iter().map(wire::encode_initial_message).collect();
        let bytes: usize = msgs.iter().map(Vec::len).sum();
        self.setup_bytes_out.fetch_add(bytes as u64, Ordering::Relaxed);
        msgs
    }

    pub fn submit(&self, request: &[u8]) -> Result<(), TsaRejection> {
        self.process_bytes_in.fetch_add(request.len() as u64, Ordering::Relaxed);
        self.process_messages.fetch_add(1, Ordering::Relaxed);
        let (completing, envelope) =
            wire::decode_process_request(request).map_err(|e| TsaRejection::Malformed(e.to_string()))?;
        self.inner.lock().unwrap().process(&envelope, &completing)
    }

    /// Returns the encoded unmask vector.
    pub fn request_release(&self) -> Result<Vec<u8>, ReleaseRefusal> {
        let request = wire::encode_release_request();
        self.release_bytes_in.fetch_add(request.len() as u64, Ordering::Relaxed);
        wire::decode_release_request(&request).expect("self-encoded request");
        let vector = self.inner.lock().unwrap().release()?;
        let response = wire::encode_unmask_vector(&vector);
        self.release_bytes_out.fetch_add(response.len() as u64, Ordering::Relaxed);
        Ok(response)
    }

    pub fn processed_count(&self) -> usize {
        self.inner.lock().unwrap().processed_count()
    }

    pub fn counters(&self) -> BoundaryCounters {
        BoundaryCounters {
            setup_bytes_out: self.setup_bytes_out.load(Ordering::Relaxed),
            process_bytes_in: self.process_bytes_in.load(Ordering::Relaxed),
            process_messages: self.process_messages.load(Ordering::Relaxed),
            release_bytes_in: self.release_bytes_in.load(Ordering::Relaxed),
            release_bytes_out: self.release_bytes_out.load(Ordering::Relaxed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::secagg::{dh_complete, encrypt_seed, expand_mask, Seed};
    use proptest::prelude::*;

    fn group(len: usize, t: usize) -> GroupConfig {
        GroupConfig::new(32, len, 1.0, t).unwrap()
    }

    fn client_messages(tp: &TrustedParty, slot: u32, seed: Seed) -> (SeedEnvelope, CompletingMessage) {
        let initial = &tp.initial_messages()[slot as usize];
        let (secret, completing) = dh_complete(initial, &tp.verifying_key(), 1000 + slot as u64).unwrap();
        (encrypt_seed(&seed, &secret, 0, slot), completing)
    }

    #[test]
    fn fresh_slot_is_processed() {
        let mut tp = TrustedParty::new(group(8, 1), 4, 1);
        let (env, comp) = client_messages(&tp, 0, [1; 16]);
        tp.process(&env, &comp).unwrap();
        assert_eq!(tp.processed_count(), 1);
        assert!(tp.slot(0).unwrap().consumed);
    }

    #[test]
    fn replayed_slot_is_rejected_without_side_effects() {
        let mut tp = TrustedParty::new(group(8, 1), 4, 1);
        let (env, comp) = client_messages(&tp, 2, [1; 16]);
        tp.process(&env, &comp).unwrap();
        let before = tp.accumulator.clone();
        assert_eq!(tp.process(&env, &comp), Err(TsaRejection::ReplayedSlot(2)));
        let (env2, comp2) = client_messages(&tp, 2, [5; 16]);
        assert_eq!(tp.process(&env2, &comp2), Err(TsaRejection::ReplayedSlot(2)));
        assert_eq!(tp.accumulator, before);
        assert_eq!(tp.processed_count(), 1);
    }

    #[test]
    fn bad_mac_is_rejected_and_slot_stays_open() {
        let mut tp = TrustedParty::new(group(8, 1), 4, 1);
        let (mut env, comp) = client_messages(&tp, 1, [1; 16]);
        env.mac[0] ^= 1;
        assert_eq!(tp.process(&env, &comp), Err(TsaRejection::BadMac));
        assert_eq!(tp.processed_count(), 0);
        assert!(!tp.slot(1).unwrap().consumed);
        assert_eq!(tp.accumulator, vec![0; 8]);
        assert!(matches!(
            tp.process(&client_messages(&tp, 0, [1; 16]).0, &client_messages(&tp, 1, [1; 16]).1),
            Err(TsaRejection::Malformed(_))
        ));
    }

    #[test]
    fn accumulator_is_sum_of_expanded_masks() {
        let g = group(50, 3);
        let mut tp = TrustedParty::new(g, 6, 2);
        let seeds: [Seed; 3] = [[1; 16], [2; 16], [3; 16]];
        for (slot, seed) in seeds.iter().enumerate() {
            let (env, comp) = client_messages(&tp, slot as u32, *seed);
            tp.process(&env, &comp).unwrap();
        }
        let mut expected = vec![0u64; 50];
        for seed in &seeds {
            for (e, m) in expected.iter_mut().zip(expand_mask(seed, 50, &g)) {
                *e = (*e + m as u64) % (1 << 32);
            }
        }
        let released = tp.release().unwrap();
        assert_eq!(released, expected.iter().map(|x| *x as u32).collect::<Vec<_>>());
    }

    #[test]
    fn release_gate_and_one_shot() {
        let mut tp = TrustedParty::new(group(4, 3), 6, 3);
        for slot in 0..2 {
            let (env, comp) = client_messages(&tp, slot, [slot as u8; 16]);
            tp.process(&env, &comp).unwrap();
        }
        assert_eq!(tp.release(), Err(ReleaseRefusal::BelowThreshold { processed: 2, threshold: 3 }));
        assert!(!tp.is_released());
        let (env, comp) = client_messages(&tp, 2, [9; 16]);
        tp.process(&env, &comp).unwrap();
        let vector = tp.release().unwrap();
        let (env, comp) = client_messages(&tp, 3, [4; 16]);
        assert_eq!(tp.process(&env, &comp), Err(TsaRejection::Released));
        assert_eq!(tp.release(), Err(ReleaseRefusal::AlreadyReleased));
        assert_eq!(tp.released_vector(), Some(vector.as_slice()));
    }

    #[test]
    fn single_client_threshold_one() {
        let g = group(16, 1);
        let mut tp = TrustedParty::new(g, 2, 4);
        let (env, comp) = client_messages(&tp, 0, [7; 16]);
        tp.process(&env, &comp).unwrap();
        assert_eq!(tp.release().unwrap(), expand_mask(&[7; 16], 16, &g));
    }

    #[test]
    fn threshold_exhaustive() {
        for t in 1..=5usize {
            for processed in 0..=t + 2 {
                let mut tp = TrustedParty::new(group(3, t), (t + 3) as u32, t as u64);
                for slot in 0..processed {
                    let (env, comp) = client_messages(&tp, slot as u32, [slot as u8; 16]);
                    tp.process(&env, &comp).unwrap();
                }
                assert_eq!(tp.release().is_ok(), processed >= t, "t={t} processed={processed}");
            }
        }
    }

    #[test]
    fn channel_counts_bytes_and_serializes() {
        let g = group(10, 2);
        let tp = TrustedParty::new(g, 4, 5);
        let prepared: Vec<_> = (0..2).map(|s| client_messages(&tp, s, [s as u8; 16])).collect();
        let channel = TrustedPartyChannel::new(tp);
        let msgs = channel.initial_messages();
        assert_eq!(msgs.len(), 4);
        std::thread::scope(|scope| {
            for (env, comp) in &prepared {
                let channel = &channel;
                scope.spawn(move || channel.submit(&wire::encode_process_request(comp, env)).unwrap());
            }
        });
        let response = channel.request_release().unwrap();
        assert_eq!(wire::decode_unmask_vector(&response).unwrap().len(), 10);
        let c = channel.counters();
        assert_eq!(c.process_messages, 2);
        assert_eq!(c.setup_bytes_out, msgs.iter().map(Vec::len).sum::<usize>() as u64);
        assert_eq!(c.release_bytes_out, response.len() as u64);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn replays_never_change_the_accumulator(order in prop::collection::vec(0u32..4, 1..20)) {
            let g = group(6, 1);
            let mut tp = TrustedParty::new(g, 4, 8);
            let msgs: Vec<_> = (0..4).map(|s| client_messages(&tp, s, [s as u8 + 1; 16])).collect();
            let mut seen = std::collections::BTreeSet::new();
            for slot in &order {
                let (env, comp) = &msgs[*slot as usize];
                let result = tp.process(env, comp);
                prop_assert_eq!(result.is_ok(), seen.insert(*slot));
            }
            let mut expected = vec![0u32; 6];
            for slot in &seen {
                add_assign_wrapping(&mut expected, &expand_mask(&[*slot as u8 + 1; 16], 6, &g), &g).unwrap();
            }
            prop_assert_eq!(tp.release().unwrap(), expected);
        }
    }
}
