//! Deterministic random number generation.
//!
//! The generator is xoshiro256** seeded through splitmix64. Only integer
//! arithmetic is involved in producing raw words, so a given seed yields the
//! same stream on every platform and in any language that implements the two
//! published algorithms:
//!
//! ```text
//! splitmix64(x):  x += 0x9e3779b97f4a7c15
//!                 z = x
//!                 z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9
//!                 z = (z ^ (z >> 27)) * 0x94d049bb133111eb
//!                 return z ^ (z >> 31)
//! state[0..4] = four successive splitmix64 outputs starting from `seed`
//! ```
//!
//! Uniform floats take the top 24 (f32) or 53 (f64) bits of a word.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(x: &mut u64) -> u64 {
    *x = x.wrapping_add(GOLDEN);
    let mut z = *x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded generator state. Two states built from the same seed produce
/// bit-identical sequences.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    seed: u64,
    counter: u64,
    s: [u64; 4],
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        let mut x = seed;
        let s = [
            splitmix64(&mut x),
            splitmix64(&mut x),
            splitmix64(&mut x),
            splitmix64(&mut x),
        ];
        RngState { seed, counter: 0, s }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 64-bit words drawn so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Independent stream `i` of this seed: a fresh generator seeded with
    /// `seed ^ i`.
    pub fn stream(&self, i: u64) -> RngState {
        RngState::new(self.seed ^ i)
    }

    /// Child generator for a named sub-task (volume id, epoch, ...). Unlike
    /// [`RngState::stream`] the tag is hashed so nearby tags decorrelate.
    pub fn derive(&self, tag: u64) -> RngState {
        let mut x = self.seed ^ tag.wrapping_mul(GOLDEN).rotate_left(17);
        RngState::new(splitmix64(&mut x))
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        self.counter += 1;
        result
    }

    pub fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    /// Uniform in [0, 1).
    pub fn uniform_f32(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 * (1.0 / (1u64 << 24) as f32)
    }

    /// Uniform in [0, 1).
    pub fn uniform_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform_f64()
    }

    /// Uniform integer in [0, n). `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        // Lemire's multiply-shift with rejection.
        loop {
            let x = self.next_u64();
            let m = (x as u128) * (n as u128);
            let low = m as u64;
            if low >= n || low >= n.wrapping_neg() % n {
                return (m >> 64) as u64;
            }
        }
    }

    /// Bernoulli draw with success probability `p`, decided on an integer
    /// threshold so the outcome does not depend on float rounding.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        (self.next_u32() as u64) < bernoulli_threshold(p)
    }

    /// Standard normal variate (Box-Muller, one value per call).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform_f64();
        let u2 = self.uniform_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Approximately normal variate built from the sum of four uniforms.
    /// Uses only addition and multiplication, so results are identical on
    /// every IEEE-754 platform.
    pub fn approx_normal(&mut self) -> f64 {
        let s: f64 = (0..4).map(|_| self.uniform_f64()).sum();
        // Irwin-Hall(4): mean 2, variance 1/3.
        (s - 2.0) * 3f64.sqrt()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

/// Integer cut-off such that a uniform `u32` below it occurs with
/// probability `p`.
pub(crate) fn bernoulli_threshold(p: f64) -> u64 {
    let p = p.clamp(0.0, 1.0);
    (p * 4_294_967_296.0).round() as u64
}
