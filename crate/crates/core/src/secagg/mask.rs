use chacha20::cipher::{KeyIvInit, StreamCipher};
use chacha20::ChaCha20;
use sha2::{Digest, Sha256};

use super::{GroupConfig, SecAggError, Seed};

const MASK_DOMAIN: &[u8] = b"asyncfl-mask-v1";

/// A client's masked update as the aggregator sees it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedUpdate {
    pub slot_index: u32,
    pub masked_vector: Vec<u32>,
    pub num_examples: u64,
    pub initial_version: u64,
}

/// Expands a seed into `length` pseudo-random group elements.
pub fn expand_mask(seed: &Seed, length: usize, group: &GroupConfig) -> Vec<u32> {
    let key: [u8; 32] = Sha256::new().chain_update(MASK_DOMAIN).chain_update(seed).finalize().into();
    let nonce = [0u8; 12];
    let mut cipher = ChaCha20::new(&key.into(), &nonce.into());
    let mut bytes = vec![0u8; length * 4];
    cipher.apply_keystream(&mut bytes);
    let mask = group.element_mask();
    bytes
        .chunks_exact(4)
        .map(|w| u32::from_le_bytes([w[0], w[1], w[2], w[3]]) & mask)
        .collect()
}

/// `plain + PRNG(seed)` elementwise in `Z_{2^b}`.
pub fn mask_update(plain_fixed: &[u32], seed: &Seed, group: &GroupConfig) -> Result<Vec<u32>, SecAggError> {
    if plain_fixed.len() != group.vector_length {
        return Err(SecAggError::LengthMismatch { expected: group.vector_length, found: plain_fixed.len() });
    }
    let mask = expand_mask(seed, plain_fixed.len(), group);
    Ok(plain_fixed.iter().zip(&mask).map(|(p, m)| group.add(*p, *m)).collect())
}

/// `masked_sum - unmask_vector` elementwise in `Z_{2^b}`.
pub fn unmask_sum(masked_sum: &[u32], unmask_vector: &[u32], group: &GroupConfig) -> Result<Vec<u32>, SecAggError> {
    if masked_sum.len() != unmask_vector.len() {
        return Err(SecAggError::LengthMismatch { expected: masked_sum.len(), found: unmask_vector.len() });
    }
    Ok(masked_sum.iter().zip(unmask_vector).map(|(s, m)| group.sub(*s, *m)).collect())
}

/// `acc += v` elementwise in `Z_{2^b}`.
pub fn add_assign_wrapping(acc: &mut [u32], v: &[u32], group: &GroupConfig) -> Result<(), SecAggError> {
    if acc.len() != v.len() {
        return Err(SecAggError::LengthMismatch { expected: acc.len(), found: v.len() });
    }
    for (a, x) in acc.iter_mut().zip(v) {
        *a = group.add(*a, *x);
    }
    Ok(())
}
