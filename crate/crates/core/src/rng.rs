//! Counter-based random streams.
//!
//! Every stochastic draw in the simulator is addressed by a key
//! `(seed, stream, id, event)`. The generator for a key is a pure function of
//! that key, so results do not depend on the order in which devices are
//! visited or on how work is split across threads.

use rand::RngCore;

/// Named substreams. Changing one stream's consumer never shifts the draws
/// seen by another.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    SetIncrement = 1,
    DriftExponent = 2,
    ResetLevel = 3,
    ReadNoise = 4,
    SnapshotRead = 5,
    InitTarget = 6,
    InitState = 7,
    DataOrder = 8,
    WeightInit = 9,
    Characterize = 10,
    Test = 0xFF,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a 64-bit key from the address of a draw.
#[inline]
pub fn key(seed: u64, stream: Stream, id: u64, event: u64) -> u64 {
    let mut k = splitmix64(seed.wrapping_add(GOLDEN));
    k = splitmix64(k ^ (stream as u64).wrapping_mul(GOLDEN));
    k = splitmix64(k ^ id.wrapping_mul(0xD1B5_4A32_D192_ED03));
    splitmix64(k ^ event.wrapping_mul(0x8CB9_2BA7_2F3D_8DD7))
}

/// A short-lived generator bound to one key. Successive outputs are
/// `splitmix64(key + n * GOLDEN)`.
#[derive(Clone, Debug)]
pub struct CounterRng {
    state: u64,
}

impl CounterRng {
    pub fn new(seed: u64, stream: Stream, id: u64, event: u64) -> Self {
        Self {
            state: key(seed, stream, id, event),
        }
    }

    pub fn from_key(key: u64) -> Self {
        Self { state: key }
    }
}

impl RngCore for CounterRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        splitmix64(self.state)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}

/// One standard-normal draw for a key.
#[inline]
pub fn normal(seed: u64, stream: Stream, id: u64, event: u64) -> f64 {
    use rand::Rng;
    CounterRng::new(seed, stream, id, event).sample(rand_distr::StandardNormal)
}

/// Seeds a conventional sequential generator for a named substream, used where
/// a long sequence is consumed in order (data shuffling, weight init).
pub fn seeded_chacha(seed: u64, stream: Stream, index: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(key(seed, stream, 0, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_value() {
        let a = normal(7, Stream::ReadNoise, 123, 9);
        let b = normal(7, Stream::ReadNoise, 123, 9);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn streams_are_distinct() {
        let a = normal(7, Stream::ReadNoise, 123, 9);
        let b = normal(7, Stream::SetIncrement, 123, 9);
        let c = normal(7, Stream::ReadNoise, 124, 9);
        let d = normal(7, Stream::ReadNoise, 123, 10);
        assert!(a != b && a != c && a != d);
    }

    #[test]
    fn normal_moments() {
        let n = 200_000u64;
        let (mut s, mut s2) = (0.0, 0.0);
        for i in 0..n {
            let z = normal(1, Stream::Test, i, 0);
            s += z;
            s2 += z * z;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }
}
