//! Seed derivation.
//!
//! Every random draw in the crate comes from a [`ChaCha20Rng`] whose 32-byte
//! key is `SHA-256(root_seed as u64 little-endian || label bytes || 0x00 || index as u64 little-endian)`.
//! Labels name the stream (`"truth"`, `"observation"`, `"ensemble-init"`,
//! `"particle-noise"`, `"replication"`), and `index` separates sibling
//! streams such as replications. Streams derived from distinct
//! `(label, index)` pairs are independent for all practical purposes.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha20Rng;

pub mod labels {
    pub const TRUTH: &str = "truth";
    pub const OBSERVATION: &str = "observation";
    pub const ENSEMBLE_INIT: &str = "ensemble-init";
    pub const PARTICLE_NOISE: &str = "particle-noise";
    pub const REPLICATION: &str = "replication";
}

fn stream_key(root: u64, label: &str, index: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update([0u8]);
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    key
}

/// Generator for the named stream `(label, index)` under `root`.
pub fn stream(root: u64, label: &str, index: u64) -> StreamRng {
    ChaCha20Rng::from_seed(stream_key(root, label, index))
}

/// A child root seed, used to hand a replication its own seed space.
pub fn derive_seed(root: u64, label: &str, index: u64) -> u64 {
    let key = stream_key(root, label, index);
    u64::from_le_bytes(key[..8].try_into().expect("8 bytes"))
}

pub fn standard_normal_vector<R: Rng + ?Sized>(rng: &mut R, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

/// `rows x cols` standard normals, filled column by column.
pub fn standard_normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows, cols);
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    out
}
