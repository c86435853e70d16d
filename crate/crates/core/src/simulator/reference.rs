use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seeded i.i.d. equiprobable `±1` reference sequence.
///
/// Bits are drawn 64 at a time from a ChaCha8 stream, least significant bit
/// first, so the output depends only on `seed` and `n`.
pub fn generate_reference(seed: u64, n: usize) -> Vec<i8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let word = rng.next_u64();
        let take = (n - out.len()).min(64);
        out.extend((0..take).map(|b| if (word >> b) & 1 == 1 { 1 } else { -1 }));
    }
    out
}
