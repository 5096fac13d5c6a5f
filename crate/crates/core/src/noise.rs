//! Brownian increments addressed by `(seed, stream, step)`.
//!
//! Each stream is a ChaCha8 keystream. Step `n` uses the Box-Muller pair
//! number `n / 2`, which always occupies four 32-bit words, so any step can
//! be reached by seeking instead of replaying the stream. Coupled processes
//! and parallel trajectories therefore see identical increments no matter
//! how the work is scheduled.

use crate::model::NoiseMode;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

/// Supplier of the driving increments `(dW1, dW2)` of each step.
pub trait NoiseSource {
    /// Increments of step `step` (covering `[step*dt, (step+1)*dt]`).
    fn increment(&mut self, step: u64, dt: f64) -> [f64; 2];
}

const WORDS_PER_PAIR: u128 = 4;

#[inline]
fn unit_open_closed(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64)
}

#[inline]
fn unit_closed_open(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// One keystream of standard normals with random access by index.
#[derive(Debug, Clone)]
pub struct GaussianStream {
    rng: ChaCha8Rng,
    /// Pair the keystream will produce next.
    rng_pair: u64,
    cached: Option<(u64, [f64; 2])>,
}

impl GaussianStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            rng,
            rng_pair: 0,
            cached: None,
        }
    }

    fn pair(&mut self, pair: u64) -> [f64; 2] {
        if let Some((k, z)) = self.cached {
            if k == pair {
                return z;
            }
        }
        if self.rng_pair != pair {
            self.rng.set_word_pos(pair as u128 * WORDS_PER_PAIR);
        }
        let u1 = unit_open_closed(self.rng.next_u64());
        let u2 = unit_closed_open(self.rng.next_u64());
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (TAU * u2).sin_cos();
        let z = [r * c, r * s];
        self.rng_pair = pair + 1;
        self.cached = Some((pair, z));
        z
    }

    /// Standard normal number `index` of the stream.
    pub fn at(&mut self, index: u64) -> f64 {
        self.pair(index / 2)[(index % 2) as usize]
    }
}

/// Stream id of `component` (0 or 1) of trajectory `trajectory`.
pub fn stream_id(trajectory: u64, component: u64) -> u64 {
    trajectory * 2 + component
}

/// Counter-based increments for one trajectory. In shared mode both
/// components carry the first stream's increment.
#[derive(Debug, Clone)]
pub struct CounterNoise {
    first: GaussianStream,
    second: Option<GaussianStream>,
}

impl CounterNoise {
    pub fn new(seed: u64, trajectory: u64, mode: NoiseMode) -> Self {
        let first = GaussianStream::new(seed, stream_id(trajectory, 0));
        let second = match mode {
            NoiseMode::Independent => Some(GaussianStream::new(seed, stream_id(trajectory, 1))),
            NoiseMode::Shared => None,
        };
        Self { first, second }
    }
}

impl NoiseSource for CounterNoise {
    #[inline]
    fn increment(&mut self, step: u64, dt: f64) -> [f64; 2] {
        let s = dt.sqrt();
        let z1 = self.first.at(step);
        let z2 = match &mut self.second {
            Some(g) => g.at(step),
            None => z1,
        };
        [s * z1, s * z2]
    }
}

/// No noise at all; reduces every scheme to explicit Euler on the drift.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn increment(&mut self, _step: u64, _dt: f64) -> [f64; 2] {
        [0.0, 0.0]
    }
}

/// Increments supplied by a closure `(step, dt) -> (dW1, dW2)`.
pub struct FnNoise<F>(pub F);

impl<F: FnMut(u64, f64) -> [f64; 2]> NoiseSource for FnNoise<F> {
    fn increment(&mut self, step: u64, dt: f64) -> [f64; 2] {
        (self.0)(step, dt)
    }
}

impl<N: NoiseSource + ?Sized> NoiseSource for &mut N {
    fn increment(&mut self, step: u64, dt: f64) -> [f64; 2] {
        (**self).increment(step, dt)
    }
}
