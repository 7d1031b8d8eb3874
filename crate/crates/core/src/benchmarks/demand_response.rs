//! Demand response among price-anticipating electricity users: each user
//! schedules its consumption so that total consumption meets total demand.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{draw, ring_with_chords};
use crate::error::{GneError, Result};
use crate::graph::CommGraph;
use crate::model::{estimate_constants, GameSpec, MonotonicityConstants, PlayerSpec};

/// Cost of user `i`: `a_i (p_i - d_i)^2 + (price_base + price_slope * sum_j p_j) p_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemandResponseConfig {
    pub users: usize,
    pub p_min: [f64; 2],
    pub p_max: [f64; 2],
    /// Curtailment coefficients `a_i`; demands are drawn inside each user's own range.
    pub curtailment: [f64; 2],
    pub price_base: f64,
    pub price_slope: f64,
    pub chords: usize,
    pub seed: u64,
    /// Explicit `(p_min, p_max, d)` per user; overrides the random draws.
    pub explicit: Option<Vec<[f64; 3]>>,
}

impl Default for DemandResponseConfig {
    fn default() -> Self {
        DemandResponseConfig {
            users: 6,
            p_min: [0.0, 2.0],
            p_max: [6.0, 10.0],
            curtailment: [0.5, 2.0],
            price_base: 1.0,
            price_slope: 0.2,
            chords: 2,
            seed: 0,
            explicit: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DemandResponseInstance {
    pub game: GameSpec<f64>,
    pub graph: CommGraph,
    pub consts: MonotonicityConstants<f64>,
    pub demand: Vec<f64>,
    pub curtailment: Vec<f64>,
    pub price_base: f64,
    pub price_slope: f64,
}

pub fn gen_demand_response(cfg: &DemandResponseConfig) -> Result<DemandResponseInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let users: Vec<[f64; 3]> = match &cfg.explicit {
        Some(v) => v.clone(),
        None => (0..cfg.users)
            .map(|_| {
                let lo = draw(&mut rng, cfg.p_min);
                let hi = draw(&mut rng, cfg.p_max).max(lo);
                let d = draw(&mut rng, [lo, hi]);
                [lo, hi, d]
            })
            .collect(),
    };
    let m = users.len();
    if m < 2 {
        return Err(GneError::Generator("demand response needs at least two users".into()));
    }
    if !(cfg.price_slope > 0.0) {
        return Err(GneError::Generator("price slope must be positive".into()));
    }
    let (lo_sum, hi_sum, d_sum) = users.iter().fold((0.0, 0.0, 0.0), |acc, u| (acc.0 + u[0], acc.1 + u[1], acc.2 + u[2]));
    if !(lo_sum <= d_sum && d_sum <= hi_sum) {
        return Err(GneError::Generator(format!(
            "total demand {d_sum} outside the consumption range [{lo_sum}, {hi_sum}]"
        )));
    }
    let curtailment: Vec<f64> = (0..m).map(|_| draw(&mut rng, cfg.curtailment)).collect();
    let graph = ring_with_chords(m, cfg.chords, &mut rng)?;

    let c1 = cfg.price_slope;
    let mut mat = vec![c1; m * m];
    let mut c0 = vec![0.0; m];
    for i in 0..m {
        mat[i * m + i] = 2.0 * curtailment[i] + 2.0 * c1;
        c0[i] = cfg.price_base - 2.0 * curtailment[i] * users[i][2];
    }
    let mut builder = GameSpec::builder(2);
    for u in &users {
        builder = builder.player(PlayerSpec { lo: vec![u[0]], hi: vec![u[1]], a: vec![1.0, -1.0], b: vec![u[2], -u[2]] });
    }
    // Scaling the demands into the boxes gives a point meeting the equality.
    let t = if hi_sum > lo_sum { (d_sum - lo_sum) / (hi_sum - lo_sum) } else { 0.0 };
    let hint = users.iter().map(|u| u[0] + t * (u[1] - u[0])).collect();
    let game = builder.affine(mat, c0).feasible_hint(hint).build()?;
    let consts = estimate_constants(&game)?;
    Ok(DemandResponseInstance {
        game,
        graph,
        consts,
        demand: users.iter().map(|u| u[2]).collect(),
        curtailment,
        price_base: cfg.price_base,
        price_slope: c1,
    })
}

/// User `i`'s cost at the consumption profile `p`.
pub fn demand_response_cost(inst: &DemandResponseInstance, i: usize, p: &[f64]) -> f64 {
    let total: f64 = p.iter().sum();
    inst.curtailment[i] * (p[i] - inst.demand[i]).powi(2) + (inst.price_base + inst.price_slope * total) * p[i]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_users_equal_demand() {
        let cfg = DemandResponseConfig { explicit: Some(vec![[0.0, 3.0, 1.0], [0.0, 3.0, 1.0]]), ..Default::default() };
        let inst = gen_demand_response(&cfg).unwrap();
        assert_eq!(inst.game.b_total(), vec![2.0, -2.0]);
    }

    #[test]
    fn infeasible_bounds_rejected() {
        let cfg = DemandResponseConfig { explicit: Some(vec![[2.0, 3.0, 1.0], [2.0, 3.0, 1.0]]), ..Default::default() };
        assert!(gen_demand_response(&cfg).is_err());
    }

    #[test]
    fn seed_determinism() {
        let cfg = DemandResponseConfig { seed: 9, ..Default::default() };
        let a = gen_demand_response(&cfg).unwrap();
        let b = gen_demand_response(&cfg).unwrap();
        assert_eq!(a.game.affine(), b.game.affine());
        assert_eq!(a.demand, b.demand);
        assert_eq!(a.graph, b.graph);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let inst = gen_demand_response(&DemandResponseConfig { seed: 2, ..Default::default() }).unwrap();
        let p: Vec<f64> = inst.demand.iter().map(|d| d + 0.3).collect();
        let grad = inst.game.pseudogradient(&p);
        let h = 1e-6;
        for i in 0..p.len() {
            let mut hi = p.clone();
            let mut lo = p.clone();
            hi[i] += h;
            lo[i] -= h;
            let fd = (demand_response_cost(&inst, i, &hi) - demand_response_cost(&inst, i, &lo)) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-6 * (1.0 + grad[i].abs()));
        }
    }
}
