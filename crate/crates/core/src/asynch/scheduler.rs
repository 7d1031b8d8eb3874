//! Activation and delay sampling.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GneError, Result};

/// Law of the read delay of each player's variables at an activation, on
/// `{0, ..., min(k, eps)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum DelayPolicy {
    #[default]
    Uniform,
    /// Always the given delay (clipped).
    Fixed(usize),
    /// `P(d) proportional to r^d`.
    Geometric(f64),
}

/// Seeded sampler of the active player and of per-player read delays.
#[derive(Debug, Clone)]
pub struct Scheduler {
    probs: Vec<f64>,
    index: WeightedIndex<f64>,
    policy: DelayPolicy,
    eps: usize,
    rng: ChaCha8Rng,
}

impl Scheduler {
    pub fn new(probs: &[f64], eps: usize, policy: DelayPolicy, seed: u64) -> Result<Self> {
        let total: f64 = probs.iter().sum();
        if probs.is_empty() || probs.iter().any(|p| !(*p > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(GneError::StepSize("activation probabilities must be positive and sum to one".into()));
        }
        if let DelayPolicy::Geometric(r) = policy {
            if !(r > 0.0 && r <= 1.0) {
                return Err(GneError::StepSize(format!("geometric delay ratio {r} must lie in (0, 1]")));
            }
        }
        let index = WeightedIndex::new(probs).map_err(|e| GneError::StepSize(e.to_string()))?;
        Ok(Scheduler { probs: probs.to_vec(), index, policy, eps, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn eps(&self) -> usize {
        self.eps
    }

    pub fn next_player(&mut self) -> usize {
        self.index.sample(&mut self.rng)
    }

    /// One delay per player for the activation at iteration `k`.
    pub fn delays(&mut self, k: u64, out: &mut [usize]) {
        let cap = self.eps.min(k.min(usize::MAX as u64) as usize);
        for d in out.iter_mut() {
            *d = match self.policy {
                DelayPolicy::Uniform => self.rng.random_range(0..=cap),
                DelayPolicy::Fixed(v) => v.min(cap),
                DelayPolicy::Geometric(r) => {
                    // Inverse transform on the truncated law.
                    let weights: f64 = (0..=cap).map(|i| r.powi(i as i32)).sum();
                    let mut t = self.rng.random::<f64>() * weights;
                    let mut pick = cap;
                    for i in 0..=cap {
                        t -= r.powi(i as i32);
                        if t < 0.0 {
                            pick = i;
                            break;
                        }
                    }
                    pick
                }
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delays_bounded_and_clipped() {
        let mut s = Scheduler::new(&[0.5, 0.5], 3, DelayPolicy::Uniform, 1).unwrap();
        let mut d = [0usize; 2];
        for k in 0..200 {
            s.delays(k, &mut d);
            assert!(d.iter().all(|&v| v <= 3 && v as u64 <= k));
        }
        let mut s = Scheduler::new(&[1.0], 3, DelayPolicy::Fixed(5), 1).unwrap();
        let mut d = [0usize; 1];
        s.delays(1, &mut d);
        assert_eq!(d, [1]);
        s.delays(10, &mut d);
        assert_eq!(d, [3]);
    }

    #[test]
    fn activation_frequencies_follow_probabilities() {
        let mut s = Scheduler::new(&[0.2, 0.8], 0, DelayPolicy::Uniform, 5).unwrap();
        let hits = (0..20_000).filter(|_| s.next_player() == 0).count() as f64 / 20_000.0;
        assert!((hits - 0.2).abs() < 0.02);
    }

    #[test]
    fn geometric_prefers_short_delays() {
        let mut s = Scheduler::new(&[1.0], 4, DelayPolicy::Geometric(0.3), 2).unwrap();
        let mut d = [0usize; 1];
        let mut counts = [0usize; 5];
        for _ in 0..5000 {
            s.delays(100, &mut d);
            counts[d[0]] += 1;
        }
        assert!(counts[0] > counts[1] && counts[1] > counts[2]);
    }

    #[test]
    fn invalid_probabilities_rejected() {
        assert!(Scheduler::new(&[0.5, 0.4], 0, DelayPolicy::Uniform, 0).is_err());
        assert!(Scheduler::new(&[1.0, 0.0], 0, DelayPolicy::Uniform, 0).is_err());
    }
}
