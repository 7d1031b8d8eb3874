//! Networked Cournot competition: factories sell one commodity to purchasers
//! with limited storage.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{attempt_seed, draw, ring_with_chords};
use crate::error::{GneError, Result};
use crate::graph::CommGraph;
use crate::model::{estimate_constants, GameSpec, MonotonicityConstants, PlayerSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CournotConfig {
    pub factories: usize,
    pub purchasers: usize,
    /// Purchase price offsets `g_s`.
    pub price_offset: [f64; 2],
    /// Price slopes `rho_s`.
    pub price_slope: [f64; 2],
    /// Quadratic production costs `a_{i,s}`.
    pub cost_quadratic: [f64; 2],
    /// Linear production costs `c_{i,s}`.
    pub cost_linear: [f64; 2],
    pub q_max: f64,
    /// Storage capacity of each purchaser.
    pub capacities: Vec<f64>,
    /// Probability that a factory serves a second purchaser before repair.
    pub second_purchaser_prob: f64,
    /// Random extra edges on top of the communication ring.
    pub chords: usize,
    pub seed: u64,
}

impl Default for CournotConfig {
    fn default() -> Self {
        CournotConfig {
            factories: 10,
            purchasers: 4,
            price_offset: [20.0, 50.0],
            price_slope: [2.0, 3.0],
            cost_quadratic: [0.1, 1.0],
            cost_linear: [1.0, 10.0],
            q_max: 50.0,
            capacities: vec![30.0, 50.0, 40.0, 20.0],
            second_purchaser_prob: 0.5,
            chords: 3,
            seed: 0,
        }
    }
}

impl CournotConfig {
    pub fn with_seed(seed: u64) -> Self {
        CournotConfig { seed, ..Default::default() }
    }
}

#[derive(Debug, Clone)]
pub struct CournotInstance {
    pub game: GameSpec<f64>,
    pub graph: CommGraph,
    pub consts: MonotonicityConstants<f64>,
    /// Purchasers served by each factory, ascending; factory `i`'s decision is
    /// ordered like `serves[i]`.
    pub serves: Vec<Vec<usize>>,
    pub g: Vec<f64>,
    pub rho: Vec<f64>,
    /// `a_{i,s}` and `c_{i,s}` aligned with `serves[i]`.
    pub a: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    /// Seed actually used after reseeding.
    pub seed: u64,
}

fn validate(cfg: &CournotConfig) -> Result<()> {
    let bad = |s: &str| Err(GneError::Generator(s.to_string()));
    if cfg.factories < 2 || cfg.purchasers == 0 {
        return bad("need at least two factories and one purchaser");
    }
    if cfg.capacities.len() != cfg.purchasers {
        return bad("one capacity per purchaser required");
    }
    for r in [cfg.price_offset, cfg.price_slope, cfg.cost_quadratic, cfg.cost_linear] {
        if !(r[0] <= r[1]) || !r[0].is_finite() || !r[1].is_finite() {
            return bad("parameter intervals must be finite and ordered");
        }
    }
    if !(cfg.price_slope[0] > 0.0) || cfg.cost_quadratic[0] < 0.0 {
        return bad("price slopes must be positive and quadratic costs nonnegative");
    }
    if !(cfg.q_max > 0.0) || cfg.capacities.iter().any(|c| *c < 0.0) {
        return bad("production caps must be positive and capacities nonnegative");
    }
    Ok(())
}

/// Each factory serves one or two purchasers, then purchasers with fewer than
/// two factories are topped up.
fn procurement(cfg: &CournotConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let purchasers: Vec<usize> = (0..cfg.purchasers).collect();
    let mut serves: Vec<Vec<usize>> = (0..cfg.factories)
        .map(|_| {
            let k = if cfg.purchasers > 1 && rng.random_bool(cfg.second_purchaser_prob) { 2 } else { 1 };
            purchasers.choose_multiple(rng, k).copied().collect()
        })
        .collect();
    let need = 2.min(cfg.factories);
    for s in 0..cfg.purchasers {
        loop {
            let count = serves.iter().filter(|v| v.contains(&s)).count();
            if count >= need {
                break;
            }
            let free: Vec<usize> = (0..cfg.factories).filter(|&i| !serves[i].contains(&s)).collect();
            let &i = free.choose(rng).expect("a factory not yet serving s exists");
            serves[i].push(s);
        }
    }
    serves.iter_mut().for_each(|v| v.sort_unstable());
    serves
}

fn build(cfg: &CournotConfig, seed: u64) -> Result<CournotInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let serves = procurement(cfg, &mut rng);
    let g: Vec<f64> = (0..cfg.purchasers).map(|_| draw(&mut rng, cfg.price_offset)).collect();
    let rho: Vec<f64> = (0..cfg.purchasers).map(|_| draw(&mut rng, cfg.price_slope)).collect();
    let a: Vec<Vec<f64>> =
        serves.iter().map(|v| v.iter().map(|_| draw(&mut rng, cfg.cost_quadratic)).collect()).collect();
    let c: Vec<Vec<f64>> = serves.iter().map(|v| v.iter().map(|_| draw(&mut rng, cfg.cost_linear)).collect()).collect();
    let graph = ring_with_chords(cfg.factories, cfg.chords, &mut rng)?;

    let m = cfg.factories;
    let q = cfg.purchasers;
    let mut offsets = vec![0];
    for v in &serves {
        offsets.push(offsets.last().unwrap() + v.len());
    }
    let n = offsets[m];
    // Global index of factory i's sale to purchaser s.
    let index = |i: usize, s: usize| serves[i].iter().position(|&t| t == s).map(|k| offsets[i] + k);

    let mut mat = vec![0.0; n * n];
    let mut c0 = vec![0.0; n];
    for i in 0..m {
        for (k, &s) in serves[i].iter().enumerate() {
            let row = offsets[i] + k;
            mat[row * n + row] = 2.0 * a[i][k] + 2.0 * rho[s];
            for v in (0..m).filter(|&v| v != i) {
                if let Some(col) = index(v, s) {
                    mat[row * n + col] = rho[s];
                }
            }
            c0[row] = c[i][k] - g[s];
        }
    }

    let mut builder = GameSpec::builder(q);
    for v in &serves {
        let n_i = v.len();
        let mut sel = vec![0.0; q * n_i];
        for (k, &s) in v.iter().enumerate() {
            sel[s * n_i + k] = 1.0;
        }
        builder = builder.player(PlayerSpec {
            lo: vec![0.0; n_i],
            hi: vec![cfg.q_max; n_i],
            a: sel,
            b: cfg.capacities.iter().map(|b| b / m as f64).collect(),
        });
    }
    let game = builder.affine(mat, c0).feasible_hint(vec![0.0; n]).build()?;
    let consts = estimate_constants(&game)?;
    Ok(CournotInstance { game, graph, consts, serves, g, rho, a, c, seed })
}

/// Generates a seeded instance; reseeds (up to 100 times) if the drawn
/// pseudogradient is not strongly monotone.
pub fn gen_cournot(cfg: &CournotConfig) -> Result<CournotInstance> {
    validate(cfg)?;
    let mut last = None;
    for attempt in 0..100 {
        match build(cfg, attempt_seed(cfg.seed, attempt)) {
            Ok(inst) => return Ok(inst),
            Err(e @ GneError::NotStronglyMonotone(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(GneError::Generator(format!("no strongly monotone draw in 100 attempts: {}", last.unwrap())))
}

/// Factory `i`'s cost: production cost minus revenue, at the stacked profile `x`.
pub fn cournot_cost(inst: &CournotInstance, i: usize, x: &[f64]) -> f64 {
    let offs = inst.game.offsets();
    let total = |s: usize| -> f64 {
        inst.serves
            .iter()
            .enumerate()
            .filter_map(|(v, list)| list.iter().position(|&t| t == s).map(|k| x[offs[v] + k]))
            .sum()
    };
    inst.serves[i]
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let qv = x[offs[i] + k];
            let cost = inst.a[i][k] * qv * qv + inst.c[i][k] * qv;
            let revenue = (inst.g[s] - inst.rho[s] * total(s)) * qv;
            cost - revenue
        })
        .sum()
}
