use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use hkdf::Hkdf;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::Sha256;
use x25519_dalek::{PublicKey, StaticSecret};

use super::SecAggError;

const KDF_SALT: &[u8] = b"asyncfl-secagg-v1";

/// Key derived from one slot's X25519 agreement.
#[derive(Clone, PartialEq, Eq)]
pub struct SharedSecret(pub [u8; 32]);

impl std::fmt::Debug for SharedSecret {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SharedSecret(..)")
    }
}

/// The trusted party's half of the exchange for slot `index`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InitialMessage {
    pub index: u32,
    pub public_key: [u8; 32],
    pub signature: [u8; 64],
}

impl InitialMessage {
    fn signed_bytes(index: u32, public_key: &[u8; 32]) -> [u8; 36] {
        let mut out = [0u8; 36];
        out[..4].copy_from_slice(&index.to_le_bytes());
        out[4..].copy_from_slice(public_key);
        out
    }

    pub fn verify(&self, verifying_key: &VerifyingKey) -> Result<(), SecAggError> {
        let signature = Signature::from_bytes(&self.signature);
        verifying_key
            .verify(&Self::signed_bytes(self.index, &self.public_key), &signature)
            .map_err(|_| SecAggError::InvalidSignature)
    }
}

/// The client's half of the exchange.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletingMessage {
    pub index: u32,
    pub public_key: [u8; 32],
}

/// Trusted-party secret for one slot.
#[derive(Clone)]
pub struct SlotPrivate {
    pub index: u32,
    secret: StaticSecret,
}

impl std::fmt::Debug for SlotPrivate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SlotPrivate({})", self.index)
    }
}

/// Output of [`dh_initiate`].
#[derive(Debug)]
pub struct DhSetup {
    pub privates: Vec<SlotPrivate>,
    pub messages: Vec<InitialMessage>,
    pub verifying_key: VerifyingKey,
}

/// Runs `slot_count` exchange instances and signs each initial message with
/// a signing key drawn from the same seed. The verifying key stands in for an
/// attested enclave identity.
pub fn dh_initiate(slot_count: u32, rng_seed: u64) -> DhSetup {
    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    let signing = SigningKey::generate(&mut rng);
    let mut privates = Vec::with_capacity(slot_count as usize);
    let mut messages = Vec::with_capacity(slot_count as usize);
    for index in 0..slot_count {
        let secret = StaticSecret::random_from_rng(&mut rng);
        let public_key = PublicKey::from(&secret).to_bytes();
        let signature = signing.sign(&InitialMessage::signed_bytes(index, &public_key)).to_bytes();
        privates.push(SlotPrivate { index, secret });
        messages.push(InitialMessage { index, public_key, signature });
    }
    DhSetup { privates, messages, verifying_key: signing.verifying_key() }
}

fn derive(shared: &[u8; 32], index: u32, tp_public: &[u8; 32], client_public: &[u8; 32]) -> SharedSecret {
    let hk = Hkdf::<Sha256>::new(Some(KDF_SALT), shared);
    let mut info = Vec::with_capacity(68);
    info.extend_from_slice(&index.to_le_bytes());
    info.extend_from_slice(tp_public);
    info.extend_from_slice(client_public);
    let mut okm = [0u8; 32];
    hk.expand(&info, &mut okm).expect("32 bytes is a valid HKDF output length");
    SharedSecret(okm)
}

/// Client side: checks the signature, then answers the initial message.
pub fn dh_complete(
    initial: &InitialMessage,
    verifying_key: &VerifyingKey,
    rng_seed: u64,
) -> Result<(SharedSecret, CompletingMessage), SecAggError> {
    initial.verify(verifying_key)?;
    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    let secret = StaticSecret::random_from_rng(&mut rng);
    let public_key = PublicKey::from(&secret).to_bytes();
    let shared = secret.diffie_hellman(&PublicKey::from(initial.public_key));
    let key = derive(shared.as_bytes(), initial.index, &initial.public_key, &public_key);
    Ok((key, CompletingMessage { index: initial.index, public_key }))
}

/// Trusted-party side: recovers the shared secret from a completing message.
pub fn dh_finalize(private: &SlotPrivate, completing: &CompletingMessage) -> Result<SharedSecret, SecAggError> {
    if completing.index != private.index {
        return Err(SecAggError::Malformed(format!(
            "completing message for slot {} offered to slot {}",
            completing.index, private.index
        )));
    }
    let client = PublicKey::from(completing.public_key);
    let shared = private.secret.diffie_hellman(&client);
    if !shared.was_contributory() {
        return Err(SecAggError::Malformed("low-order client public key".into()));
    }
    let tp_public = PublicKey::from(&private.secret).to_bytes();
    Ok(derive(shared.as_bytes(), private.index, &tp_public, &completing.public_key))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn initiate_signs_every_slot() {
        let setup = dh_initiate(4, 1);
        assert_eq!(setup.messages.len(), 4);
        let keys: HashSet<_> = setup.messages.iter().map(|m| m.public_key).collect();
        assert_eq!(keys.len(), 4);
        for m in &setup.messages {
            m.verify(&setup.verifying_key).unwrap();
        }
        let again = dh_initiate(4, 1);
        assert_eq!(again.messages, setup.messages);
    }

    #[test]
    fn tampered_signature_aborts_client() {
        let setup = dh_initiate(2, 5);
        let mut bad = setup.messages[0].clone();
        bad.signature[10] ^= 1;
        assert_eq!(dh_complete(&bad, &setup.verifying_key, 3).unwrap_err(), SecAggError::InvalidSignature);
        let mut moved = setup.messages[0].clone();
        moved.index = 1;
        assert_eq!(dh_complete(&moved, &setup.verifying_key, 3).unwrap_err(), SecAggError::InvalidSignature);
    }

    #[test]
    fn both_sides_agree() {
        let setup = dh_initiate(3, 9);
        for (i, msg) in setup.messages.iter().enumerate() {
            let (client_key, completing) = dh_complete(msg, &setup.verifying_key, 100 + i as u64).unwrap();
            assert_eq!(dh_finalize(&setup.privates[i], &completing).unwrap(), client_key);
        }
    }

    #[test]
    fn wrong_slot_private_is_rejected_or_mismatched() {
        let setup = dh_initiate(2, 9);
        let (key, completing) = dh_complete(&setup.messages[0], &setup.verifying_key, 1).unwrap();
        assert!(dh_finalize(&setup.privates[1], &completing).is_err());
        let relabelled = CompletingMessage { index: 1, ..completing };
        assert_ne!(dh_finalize(&setup.privates[1], &relabelled).unwrap(), key);
    }

    #[test]
    fn distinct_slots_give_distinct_secrets() {
        let setup = dh_initiate(1000, 77);
        let secrets: HashSet<[u8; 32]> = setup
            .messages
            .iter()
            .enumerate()
            .map(|(i, m)| dh_complete(m, &setup.verifying_key, i as u64).unwrap().0 .0)
            .collect();
        assert_eq!(secrets.len(), 1000);
    }
}
