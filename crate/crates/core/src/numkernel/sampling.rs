//! Seeded random streams and multivariate normal draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::linalg::SymMatrix;
use crate::error::Result;

/// The random stream type used throughout the crate.
pub type Stream = ChaCha8Rng;

#[inline]
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives a 64-bit seed from a master seed and a path of tags.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(master), |acc, &t| {
        splitmix64(acc ^ splitmix64(t))
    })
}

/// An independent stream identified by `(master, tags)`.
pub fn stream(master: u64, tags: &[u64]) -> Stream {
    Stream::seed_from_u64(derive_seed(master, tags))
}

/// `m` draws from `N(mu, sigma)`.
pub fn mvn_sample<R: Rng + ?Sized>(
    mu: &[f64],
    sigma: &SymMatrix,
    m: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let chol = sigma.cholesky()?;
    let dim = mu.len();
    let mut eps = vec![0.0; dim];
    Ok((0..m)
        .map(|_| {
            eps.iter_mut().for_each(|e| *e = rng.sample(StandardNormal));
            chol.lower_mul(&eps)
                .into_iter()
                .zip(mu)
                .map(|(a, b)| a + b)
                .collect()
        })
        .collect())
}
