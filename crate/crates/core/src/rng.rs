//! Seeded random streams.
//!
//! Every random decision flows from one root seed through named sub-streams,
//! so that training, sampling and database synthesis never share state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::scalar::Scalar;

pub type StreamRng = ChaCha8Rng;

/// Derives a 64-bit seed for the sub-stream `name` (and `index`) of `root`.
pub fn derive_seed(root: u64, name: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update((name.len() as u64).to_le_bytes());
    hasher.update(name.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn stream(root: u64, name: &str) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(root, name, 0))
}

pub fn indexed_stream(root: u64, name: &str, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(root, name, index))
}

pub fn seeded(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}

pub fn normal<S: Scalar, R: Rng + ?Sized>(rng: &mut R) -> S {
    let z: f64 = rng.sample(StandardNormal);
    S::c(z)
}

pub fn normal_vec<S: Scalar, R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<S> {
    (0..n).map(|_| normal(rng)).collect()
}
