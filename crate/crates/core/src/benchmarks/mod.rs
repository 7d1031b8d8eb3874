//! Seeded instance generators and the reference solver.

mod cournot;
mod demand_response;
mod oracle;

pub use cournot::{cournot_cost, gen_cournot, CournotConfig, CournotInstance};
pub use demand_response::{demand_response_cost, gen_demand_response, DemandResponseConfig, DemandResponseInstance};
pub use oracle::{extragradient, solve_oracle, ExtragradientResult, OracleSolution, ORACLE_TOL};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::CommGraph;

/// Ring over `m` nodes plus up to `chords` distinct random extra edges.
pub fn ring_with_chords(m: usize, chords: usize, rng: &mut ChaCha8Rng) -> Result<CommGraph> {
    let ring = CommGraph::ring(m)?;
    let mut edges = ring.edges().to_vec();
    let mut candidates: Vec<(usize, usize)> =
        (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).filter(|e| !edges.contains(e)).collect();
    candidates.shuffle(rng);
    edges.extend(candidates.into_iter().take(chords));
    CommGraph::new(m, &edges)
}

pub(crate) fn draw(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..range[1])
    }
}

/// Distinct stream per reseeding attempt.
pub(crate) fn attempt_seed(seed: u64, attempt: u64) -> u64 {
    seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}
