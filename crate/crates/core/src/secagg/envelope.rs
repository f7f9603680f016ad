use chacha20poly1305::aead::AeadInPlace;
use chacha20poly1305::{ChaCha20Poly1305, KeyInit, Tag};

use super::{SecAggError, Seed, SharedSecret};

/// Authenticated encryption of a mask seed for the trusted party.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedEnvelope {
    pub ciphertext: Vec<u8>,
    pub mac: [u8; 16],
    pub sequence_number: u64,
    pub slot_index: u32,
}

fn nonce(slot_index: u32, sequence_number: u64) -> [u8; 12] {
    let mut n = [0u8; 12];
    n[..4].copy_from_slice(&slot_index.to_le_bytes());
    n[4..].copy_from_slice(&sequence_number.to_le_bytes());
    n
}

fn associated_data(slot_index: u32, sequence_number: u64) -> [u8; 13] {
    let mut ad = [0u8; 13];
    ad[0] = super::wire::SEED_ENVELOPE_TAG;
    ad[1..5].copy_from_slice(&slot_index.to_le_bytes());
    ad[5..].copy_from_slice(&sequence_number.to_le_bytes());
    ad
}

pub fn encrypt_seed(seed: &Seed, secret: &SharedSecret, sequence_number: u64, slot_index: u32) -> SeedEnvelope {
    let cipher = ChaCha20Poly1305::new(&secret.0.into());
    let mut buffer = seed.to_vec();
    let tag = cipher
        .encrypt_in_place_detached(
            &nonce(slot_index, sequence_number).into(),
            &associated_data(slot_index, sequence_number),
            &mut buffer,
        )
        .expect("16-byte plaintext is within AEAD limits");
    SeedEnvelope { ciphertext: buffer, mac: tag.into(), sequence_number, slot_index }
}

pub fn decrypt_seed(envelope: &SeedEnvelope, secret: &SharedSecret) -> Result<Seed, SecAggError> {
    let cipher = ChaCha20Poly1305::new(&secret.0.into());
    let mut buffer = envelope.ciphertext.clone();
    cipher
        .decrypt_in_place_detached(
            &nonce(envelope.slot_index, envelope.sequence_number).into(),
            &associated_data(envelope.slot_index, envelope.sequence_number),
            &mut buffer,
            Tag::from_slice(&envelope.mac),
        )
        .map_err(|_| SecAggError::BadMac)?;
    buffer.try_into().map_err(|_| SecAggError::Malformed("seed is not 16 bytes".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let secret = SharedSecret([3; 32]);
        let seed = [0xab; 16];
        let env = encrypt_seed(&seed, &secret, 42, 7);
        assert_eq!(decrypt_seed(&env, &secret), Ok(seed));
    }

    #[test]
    fn any_bit_flip_fails_authentication() {
        let secret = SharedSecret([3; 32]);
        let env = encrypt_seed(&[1; 16], &secret, 5, 2);
        for byte in 0..env.ciphertext.len() {
            for bit in 0..8 {
                let mut bad = env.clone();
                bad.ciphertext[byte] ^= 1 << bit;
                assert_eq!(decrypt_seed(&bad, &secret), Err(SecAggError::BadMac));
            }
        }
        for byte in 0..16 {
            let mut bad = env.clone();
            bad.mac[byte] ^= 0x80;
            assert_eq!(decrypt_seed(&bad, &secret), Err(SecAggError::BadMac));
        }
        for bit in 0..64 {
            let mut bad = env.clone();
            bad.sequence_number ^= 1 << bit;
            assert_eq!(decrypt_seed(&bad, &secret), Err(SecAggError::BadMac));
        }
        let mut moved = env.clone();
        moved.slot_index = 3;
        assert_eq!(decrypt_seed(&moved, &secret), Err(SecAggError::BadMac));
    }

    #[test]
    fn wrong_key_fails() {
        let env = encrypt_seed(&[1; 16], &SharedSecret([3; 32]), 0, 0);
        assert_eq!(decrypt_seed(&env, &SharedSecret([4; 32])), Err(SecAggError::BadMac));
    }
}
