use ed25519_dalek::VerifyingKey;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{
    dh_complete, encrypt_seed, mask_update, to_fixed, CompletingMessage, GroupConfig, InitialMessage, MaskedUpdate,
    SecAggError, SeedEnvelope,
};

/// Everything one client sends: the masked vector for the aggregator and the
/// completing message plus seed envelope for the trusted party.
#[derive(Debug, Clone)]
pub struct ClientSubmission {
    pub masked: MaskedUpdate,
    pub envelope: SeedEnvelope,
    pub completing: CompletingMessage,
}

/// Converts `values` to fixed point, draws a seed, masks, and wraps the seed
/// for the trusted party. Aborts if the initial message signature is invalid.
#[allow(clippy::too_many_arguments)]
pub fn mask_client_update(
    group: &GroupConfig,
    initial: &InitialMessage,
    verifying_key: &VerifyingKey,
    values: &[f64],
    num_examples: u64,
    initial_version: u64,
    sequence_number: u64,
    rng_seed: u64,
) -> Result<ClientSubmission, SecAggError> {
    if values.len() != group.vector_length {
        return Err(SecAggError::LengthMismatch { expected: group.vector_length, found: values.len() });
    }
    let (secret, completing) = dh_complete(initial, verifying_key, rng_seed)?;
    let fixed = values.iter().map(|v| to_fixed(*v, group)).collect::<Result<Vec<_>, _>>()?;
    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    rng.set_stream(1);
    let mut seed = [0u8; 16];
    rng.fill_bytes(&mut seed);
    let masked_vector = mask_update(&fixed, &seed, group)?;
    let envelope = encrypt_seed(&seed, &secret, sequence_number, initial.index);
    Ok(ClientSubmission {
        masked: MaskedUpdate { slot_index: initial.index, masked_vector, num_examples, initial_version },
        envelope,
        completing,
    })
}
