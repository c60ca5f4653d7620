//! Counter-based random numbers.
//!
//! Every draw is a pure function of `(seed, particle, step, purpose)`, so the
//! result of a simulation never depends on how particles are scheduled across
//! threads. The generator is Philox4x32-10 (Salmon et al., "Parallel random
//! numbers: as easy as 1, 2, 3"). A [`StreamRng`] exposes one counter block as
//! a `rand` generator so that `rand_distr` samplers can consume it; if a sampler
//! needs more than one block, the sub-counter is bumped.

use rand::RngCore;

const M0: u32 = 0xD251_1F53;
const M1: u32 = 0xCD9E_8D57;
const W0: u32 = 0x9E37_79B9;
const W1: u32 = 0xBB67_AE85;

/// Philox4x32 with 10 rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Philox4x32 {
    key: [u32; 2],
}

#[inline(always)]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = (a as u64) * (b as u64);
    ((p >> 32) as u32, p as u32)
}

impl Philox4x32 {
    pub fn new(key: [u32; 2]) -> Self {
        Self { key }
    }

    pub fn from_seed(seed: u64) -> Self {
        Self::new([seed as u32, (seed >> 32) as u32])
    }

    #[inline]
    pub fn block(&self, ctr: [u32; 4]) -> [u32; 4] {
        let mut c = ctr;
        let mut k = self.key;
        for round in 0..10 {
            if round > 0 {
                k[0] = k[0].wrapping_add(W0);
                k[1] = k[1].wrapping_add(W1);
            }
            let (hi0, lo0) = mulhilo(M0, c[0]);
            let (hi1, lo1) = mulhilo(M1, c[2]);
            c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
        }
        c
    }
}

/// What a draw is used for. Each purpose has its own counter space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    Initial = 1,
    Noise = 2,
    Bridge = 3,
    Reinsert = 4,
    Peer = 5,
    Direction = 6,
    Search = 7,
}

/// SplitMix64 finalizer; used to derive independent seeds from a base seed.
pub fn mix_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Keyed source of random streams.
#[derive(Debug, Clone, Copy)]
pub struct CounterRng {
    gen: Philox4x32,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self {
            gen: Philox4x32::from_seed(mix_seed(seed, 0)),
        }
    }

    /// Stream of draws for one `(particle, step, purpose)` triple.
    #[inline]
    pub fn stream(&self, particle: u64, step: u64, purpose: Purpose) -> StreamRng {
        StreamRng::new(self.gen, particle, step, purpose)
    }

    /// A single uniform draw in `[0, 1)`.
    #[inline]
    pub fn uniform(&self, particle: u64, step: u64, purpose: Purpose) -> f64 {
        let b = self.gen.block(counter(particle, step, purpose, 0));
        bits_to_unit(((b[0] as u64) << 32) | b[1] as u64)
    }
}

#[inline]
fn counter(particle: u64, step: u64, purpose: Purpose, sub: u32) -> [u32; 4] {
    [
        step as u32,
        particle as u32,
        ((purpose as u32) << 24) | (sub & 0x00FF_FFFF),
        (step >> 32) as u32,
    ]
}

#[inline]
fn bits_to_unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// `rand` generator over consecutive Philox blocks of one counter triple.
#[derive(Debug, Clone)]
pub struct StreamRng {
    gen: Philox4x32,
    particle: u64,
    step: u64,
    purpose: Purpose,
    sub: u32,
    buf: [u32; 4],
    pos: usize,
}

impl StreamRng {
    fn new(gen: Philox4x32, particle: u64, step: u64, purpose: Purpose) -> Self {
        let buf = gen.block(counter(particle, step, purpose, 0));
        Self {
            gen,
            particle,
            step,
            purpose,
            sub: 0,
            buf,
            pos: 0,
        }
    }

    fn refill(&mut self) {
        self.sub += 1;
        self.buf = self
            .gen
            .block(counter(self.particle, self.step, self.purpose, self.sub));
        self.pos = 0;
    }

    /// Uniform in `[0, 1)`.
    #[inline]
    pub fn unit(&mut self) -> f64 {
        bits_to_unit(self.next_u64())
    }
}

impl RngCore for StreamRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        if self.pos >= 4 {
            self.refill();
        }
        let v = self.buf[self.pos];
        self.pos += 1;
        v
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        let hi = self.next_u32() as u64;
        let lo = self.next_u32() as u64;
        (hi << 32) | lo
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(4) {
            let bytes = self.next_u32().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
