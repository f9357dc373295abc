//! Deterministic seeded randomness with named substreams.
//!
//! Generator: xoshiro256++ (Blackman & Vigna), seeded through splitmix64.
//! Both algorithms are pure 64-bit integer arithmetic, so the draw sequence
//! for a given seed is identical on every platform. Each substream
//! (gaussian, uniform, categorical, permutation) owns an independent
//! generator derived from the root seed, so draws on one stream never shift
//! another.
//!
//! Gaussian variates use the Box–Muller transform on the gaussian stream,
//! with the second variate of each pair cached and returned on the next
//! call. Integer ranges use rejection sampling on the top bits (no modulo
//! bias). Permutations are Fisher–Yates on the permutation stream.

use super::scalar::Scalar;
use super::tensor::TensorBase;

const STREAM_GAUSSIAN: u64 = 0x67617573; // "gaus"
const STREAM_UNIFORM: u64 = 0x756e6966; // "unif"
const STREAM_CATEGORICAL: u64 = 0x63617465; // "cate"
const STREAM_PERMUTATION: u64 = 0x7065726d; // "perm"

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// One xoshiro256++ stream.
#[derive(Debug, Clone)]
struct Stream {
    s: [u64; 4],
}

impl Stream {
    fn new(seed: u64) -> Self {
        let mut sm = seed;
        let mut s = [0u64; 4];
        for slot in s.iter_mut() {
            *slot = splitmix64(&mut sm);
        }
        Stream { s }
    }

    fn next_u64(&mut self) -> u64 {
        let out = self.s[0]
            .wrapping_add(self.s[3])
            .rotate_left(23)
            .wrapping_add(self.s[0]);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        out
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n) by rejection on the top bits.
    fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX - n + 1) % n;
        loop {
            let v = self.next_u64();
            if v <= zone {
                return (v % n) as usize;
            }
        }
    }
}

/// Seeded RNG with independent named substreams.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    gaussian: Stream,
    uniform: Stream,
    categorical: Stream,
    permutation: Stream,
    gaussian_spare: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            gaussian: Stream::new(seed ^ STREAM_GAUSSIAN.wrapping_mul(0x2545f4914f6cdd1d)),
            uniform: Stream::new(seed ^ STREAM_UNIFORM.wrapping_mul(0x2545f4914f6cdd1d)),
            categorical: Stream::new(seed ^ STREAM_CATEGORICAL.wrapping_mul(0x2545f4914f6cdd1d)),
            permutation: Stream::new(seed ^ STREAM_PERMUTATION.wrapping_mul(0x2545f4914f6cdd1d)),
            gaussian_spare: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child RNG derived from the root seed and a label. Derivation hashes
    /// the label (FNV-1a) into the seed, so it does not depend on how many
    /// draws the parent has made.
    pub fn derive(&self, label: &str) -> Rng {
        let mut mix = self.seed ^ fnv1a64(label.as_bytes());
        Rng::new(splitmix64(&mut mix))
    }

    /// Numbered child, convenience over `derive`.
    pub fn derive_indexed(&self, label: &str, index: usize) -> Rng {
        self.derive(&format!("{label}/{index}"))
    }

    /// Standard normal draw (gaussian substream, Box–Muller).
    pub fn normal(&mut self) -> f64 {
        if let Some(v) = self.gaussian_spare.take() {
            return v;
        }
        // u1 bounded away from 0 so the log stays finite.
        let u1 = self.gaussian.next_f64().max(1e-300);
        let u2 = self.gaussian.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.gaussian_spare = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Tensor of i.i.d. N(0, 1) draws, row-major fill order.
    pub fn normal_tensor<S: Scalar>(&mut self, shape: Vec<usize>) -> TensorBase<S> {
        let numel: usize = shape.iter().product();
        let data: Vec<S> = (0..numel).map(|_| S::from_float(self.normal())).collect();
        TensorBase::from_vec(shape, data).expect("shape/data agree by construction")
    }

    /// Tensor of N(0, sigma^2) draws.
    pub fn normal_tensor_scaled<S: Scalar>(&mut self, shape: Vec<usize>, sigma: f64) -> TensorBase<S> {
        let numel: usize = shape.iter().product();
        let data: Vec<S> = (0..numel)
            .map(|_| S::from_float(self.normal() * sigma))
            .collect();
        TensorBase::from_vec(shape, data).expect("shape/data agree by construction")
    }

    /// Uniform in [0, 1) (uniform substream).
    pub fn uniform(&mut self) -> f64 {
        self.uniform.next_f64()
    }

    /// Uniform integer in [0, n) (uniform substream).
    pub fn below(&mut self, n: usize) -> usize {
        self.uniform.below(n)
    }

    /// Index drawn proportionally to the nonnegative weights
    /// (categorical substream).
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        debug_assert!(!weights.is_empty());
        let total: f64 = weights.iter().sum();
        let mut u = self.categorical.next_f64() * total;
        for (i, &w) in weights.iter().enumerate() {
            u -= w;
            if u < 0.0 {
                return i;
            }
        }
        weights.len() - 1
    }

    /// Random permutation of 0..n (permutation substream, Fisher–Yates).
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut out: Vec<usize> = (0..n).collect();
        self.shuffle(&mut out);
        out
    }

    /// In-place Fisher–Yates shuffle (permutation substream).
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.permutation.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from 0..n, in draw order (permutation substream).
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "sample {k} from {n}");
        // Partial Fisher–Yates over an index table.
        let mut idx: Vec<usize> = (0..n).collect();
        let mut out = Vec::with_capacity(k);
        for i in 0..k {
            let j = i + self.permutation.below(n - i);
            idx.swap(i, j);
            out.push(idx[i]);
        }
        out
    }
}
