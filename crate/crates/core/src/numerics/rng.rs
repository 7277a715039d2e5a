use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Beta, Binomial, Distribution, StandardNormal};

/// Deterministic counter-based generator with explicit stream semantics.
///
/// A run is keyed by one master seed. Every consumer draws from a private
/// stream addressed by `(phase, index)`: the phase is a compile-time
/// constant from [`phase`], the index is a runtime counter (training step,
/// sample id, trajectory id, ...). Stream ids pack as
/// `phase << 48 | index`, so two consumers never collide as long as
/// indices stay below 2^48. Adding draws inside one stream never shifts
/// the values produced by any other stream.
#[derive(Clone, Debug)]
pub struct SeededRng {
    inner: ChaCha12Rng,
}

/// Stream phase constants. One per independent consumer of randomness.
pub mod phase {
    pub const INIT: u16 = 1;
    pub const WORLD: u16 = 2;
    pub const CORRUPT: u16 = 3;
    pub const TRAIN_STEP: u16 = 4;
    pub const POOL: u16 = 5;
    pub const EVAL: u16 = 6;
    pub const THEORY: u16 = 7;
    pub const GRAD_CHECK: u16 = 8;
}

impl SeededRng {
    pub fn stream(seed: u64, phase: u16, index: u64) -> Self {
        assert!(
            index < (1u64 << 48),
            "stream index {index} exceeds the 48-bit stream space"
        );
        let mut inner = ChaCha12Rng::seed_from_u64(seed);
        inner.set_stream(((phase as u64) << 48) | index);
        Self { inner }
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform draw in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        self.inner.random_range(0..n)
    }

    pub fn beta(&mut self, a: f64, b: f64) -> f64 {
        Beta::new(a, b).expect("beta parameters").sample(&mut self.inner)
    }

    pub fn binomial(&mut self, n: u64, p: f64) -> u64 {
        Binomial::new(n, p)
            .expect("binomial parameters")
            .sample(&mut self.inner)
    }

    /// `amount` distinct indices from [0, len), order deterministic.
    pub fn sample_without_replacement(&mut self, len: usize, amount: usize) -> Vec<usize> {
        assert!(amount <= len, "cannot draw {amount} distinct of {len}");
        rand::seq::index::sample(&mut self.inner, len, amount).into_vec()
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        xs.shuffle(&mut self.inner);
    }

    /// Index draw from unnormalized nonnegative weights (inverse CDF walk).
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        debug_assert!(!weights.is_empty());
        let total: f64 = weights.iter().sum();
        debug_assert!(total > 0.0 && total.is_finite());
        let mut u = self.uniform() * total;
        for (i, &w) in weights.iter().enumerate() {
            u -= w;
            if u < 0.0 {
                return i;
            }
        }
        weights.len() - 1
    }
}
