// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::SignalError;

/// Derives a per-(user, purpose) seed from the global seed.
///
/// Each user gets an independent stream, so adding or removing users never
/// changes another user's draws.
pub fn derive_seed(global: u64, user_id: &str, purpose: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global.to_le_bytes());
    hasher.update((user_id.len() as u64).to_le_bytes());
    hasher.update(user_id.as_bytes());
    hasher.update(purpose.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn seeded_rng(global: u64, user_id: &str, purpose: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(global, user_id, purpose))
}

/// Most frequent value; ties are drawn uniformly with a generator seeded
/// from `(global_seed, user_id, purpose)`. Tied candidates are sorted
/// first, so the result does not depend on input order.
pub fn mode_with_seeded_tiebreak<I, S>(
    values: I,
    global_seed: u64,
    user_id: &str,
    purpose: &str,
) -> Result<String, SignalError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for v in values {
        let v = v.as_ref();
        match counts.get_mut(v) {
            Some(c) => *c += 1,
            None => {
                counts.insert(v.to_string(), 1);
            }
        }
    }
    let best = counts.values().copied().max().ok_or(SignalError::EmptyInput)?;
    // BTreeMap iteration is already the canonical (sorted) order
    let mut tied: Vec<String> = counts.into_iter().filter(|(_, c)| *c == best).map(|(v, _)| v).collect();
    if tied.len() == 1 {
        return Ok(tied.pop().unwrap());
    }
    let mut rng = seeded_rng(global_seed, user_id, purpose);
    let pick = rng.random_range(0..tied.len());
    Ok(tied.swap_remove(pick))
}
