//! Run records, residual metrics and invariant checkers.

use serde::{Deserialize, Serialize};

use crate::graph::{CommGraph, Side};
use crate::model::{GameSpec, PrimalDualState, StateRead};
use crate::scalar::Real;

/// Reference norms below this are treated as zero and the residual falls back
/// to an absolute distance.
pub const ZERO_NORM: f64 = 1e-10;

/// Relative slack, scaled by the initial distance, for monotonicity checks on
/// quantities that are nonincreasing in exact arithmetic.
pub const ROUNDING_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Row {
    pub k: u64,
    pub primal_res: Option<f64>,
    pub dual_res: Option<f64>,
    /// `||U_k - U_{k+1}||^2_{T_S}`
    pub fp_res_sq: Option<f64>,
    /// `||U_k - U*||^2_{T_S}`
    pub dist_sq: Option<f64>,
    pub phi: Option<f64>,
    pub activation: Option<usize>,
    pub max_delay_seen: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunRecord {
    pub rows: Vec<Row>,
    pub converged: bool,
    pub iterations: u64,
    /// False when the step sizes did not pass validation and the run was forced.
    pub validated: bool,
    /// Residual components that fell back to absolute distances.
    pub flags: Vec<String>,
}

impl RunRecord {
    pub fn last(&self) -> Option<&Row> {
        self.rows.last()
    }

    /// First recorded iteration whose primal residual is below `threshold`.
    pub fn iterations_to(&self, threshold: f64) -> Option<u64> {
        self.rows.iter().find(|r| r.primal_res.is_some_and(|p| p < threshold)).map(|r| r.k)
    }

    pub fn is_well_formed(&self) -> bool {
        let ordered = self.rows.windows(2).all(|w| w[0].k < w[1].k);
        let finite = self.rows.iter().all(|r| {
            [r.primal_res, r.dual_res, r.fp_res_sq, r.dist_sq, r.phi].iter().flatten().all(|v| v.is_finite())
        });
        ordered && finite
    }
}

/// Reference solution: the fixed point `U*`, its decisions and the consensus multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference<S> {
    pub state: PrimalDualState<S>,
    pub u_g: Vec<S>,
    /// Largest deviation of a local multiplier from `u_g`.
    pub u_spread: f64,
}

impl<S: Real> Reference<S> {
    pub fn from_state(state: PrimalDualState<S>) -> Self {
        let lay = state.layout().clone();
        let mut u_g = vec![S::zero(); lay.q];
        for i in 0..lay.m {
            for (g, &v) in u_g.iter_mut().zip(state.u(i)) {
                *g += v;
            }
        }
        let mf = S::lit(lay.m as f64);
        u_g.iter_mut().for_each(|g| *g /= mf);
        let u_spread = (0..lay.m)
            .map(|i| dist(state.u(i), &u_g))
            .fold(0.0, f64::max);
        Reference { state, u_g, u_spread }
    }

    pub fn x_star(&self) -> &[S] {
        &self.state.x
    }

    /// Components whose reference norm is below [`ZERO_NORM`].
    pub fn absolute_components(&self) -> Vec<String> {
        let lay = self.state.layout();
        let mut flags: Vec<String> = (0..lay.m)
            .filter(|&i| norm(self.state.x(i)) < ZERO_NORM)
            .map(|i| format!("primal residual of player {i} is absolute (x_i* = 0)"))
            .collect();
        if norm(&self.u_g) < ZERO_NORM {
            flags.push("dual residual is absolute (u_g* = 0)".into());
        }
        flags
    }
}

fn norm<S: Real>(v: &[S]) -> f64 {
    v.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt()
}

fn dist<S: Real>(a: &[S], b: &[S]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2)).sum::<f64>().sqrt()
}

/// Per-player primal term `||x_i - x_i*|| / ||x_i*||` (absolute if `x_i* = 0`).
pub fn primal_term<S: Real>(x_i: &[S], x_star_i: &[S]) -> f64 {
    let d = dist(x_i, x_star_i);
    let r = norm(x_star_i);
    if r < ZERO_NORM {
        d
    } else {
        d / r
    }
}

/// Per-player dual term `||u_i - u_g*|| / (m ||u_g*||)` (absolute over `m` if `u_g* = 0`).
pub fn dual_term<S: Real>(u_i: &[S], u_g: &[S], m: usize) -> f64 {
    let d = dist(u_i, u_g);
    let r = norm(u_g);
    if r < ZERO_NORM {
        d / m as f64
    } else {
        d / (m as f64 * r)
    }
}

/// `(sum_i ||x_i - x_i*|| / ||x_i*||, sum_i ||u_i - u_g*|| / (m ||u_g*||))`.
pub fn residuals<S: Real>(state: &impl StateRead<S>, reference: &Reference<S>) -> (f64, f64) {
    let lay = reference.state.layout();
    let mut primal = 0.0;
    let mut dual = 0.0;
    for i in 0..lay.m {
        primal += primal_term(state.x(i), reference.state.x(i));
        dual += dual_term(state.u(i), &reference.u_g, lay.m);
    }
    (primal, dual)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FejerVerdict {
    pub ok: bool,
    pub checked: usize,
    pub first_violation: Option<u64>,
    pub worst_slack: f64,
}

/// `dist_sq(k+1) <= dist_sq(k) - ((1-gamma)/gamma) fp_res_sq(k) + 1e-10` on consecutive rows.
pub fn check_fejer(record: &RunRecord, gamma: f64) -> FejerVerdict {
    let c = (1.0 - gamma) / gamma;
    let mut verdict = FejerVerdict { ok: true, checked: 0, first_violation: None, worst_slack: f64::INFINITY };
    for w in record.rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if b.k != a.k + 1 {
            continue;
        }
        let (Some(d0), Some(d1), Some(fp)) = (a.dist_sq, b.dist_sq, a.fp_res_sq) else { continue };
        let slack = d0 - c * fp - d1;
        verdict.checked += 1;
        verdict.worst_slack = verdict.worst_slack.min(slack);
        if slack < -1e-10 && verdict.ok {
            verdict.ok = false;
            verdict.first_violation = Some(a.k);
        }
    }
    verdict
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateVerdict {
    /// Fewer than two usable rows; nothing was asserted.
    pub vacuous: bool,
    pub monotone: bool,
    pub first_increase: Option<u64>,
    pub bound_ok: bool,
    pub first_bound_violation: Option<u64>,
    /// Least-squares slope of `log fp_res_sq` against `log (k+1)` over the final decade.
    pub slope: Option<f64>,
}

impl RateVerdict {
    pub fn ok(&self) -> bool {
        self.vacuous || (self.monotone && self.bound_ok)
    }
}

/// Monotonicity of `fp_res_sq`, the bound `fp_res_sq(k) <= (gamma/(1-gamma)) dist_sq(0)/(k+1)`
/// and the final-decade log-log slope.
pub fn check_rate(record: &RunRecord, gamma: f64) -> RateVerdict {
    let pts: Vec<(u64, f64)> = record.rows.iter().filter_map(|r| r.fp_res_sq.map(|v| (r.k, v))).collect();
    let d0 = record.rows.first().and_then(|r| r.dist_sq);
    let mut v = RateVerdict {
        vacuous: pts.len() < 2,
        monotone: true,
        first_increase: None,
        bound_ok: true,
        first_bound_violation: None,
        slope: None,
    };
    if v.vacuous {
        return v;
    }
    let scale = pts[0].1.max(d0.unwrap_or(0.0));
    for w in pts.windows(2) {
        if w[1].1 > w[0].1 + ROUNDING_SLACK * scale && v.monotone {
            v.monotone = false;
            v.first_increase = Some(w[1].0);
        }
    }
    if let Some(d0) = d0 {
        let c = gamma / (1.0 - gamma) * d0;
        for &(k, fp) in &pts {
            if fp > c / (k as f64 + 1.0) + ROUNDING_SLACK * scale && v.bound_ok {
                v.bound_ok = false;
                v.first_bound_violation = Some(k);
            }
        }
    }
    let k_last = pts.last().unwrap().0 as f64;
    let tail: Vec<(f64, f64)> = pts
        .iter()
        .filter(|(k, fp)| (*k as f64 + 1.0) >= (k_last + 1.0) / 10.0 && *fp > 0.0)
        .map(|&(k, fp)| ((k as f64 + 1.0).ln(), fp.ln()))
        .collect();
    if tail.len() >= 2 {
        let n = tail.len() as f64;
        let mx = tail.iter().map(|p| p.0).sum::<f64>() / n;
        let my = tail.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = tail.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = tail.iter().map(|p| (p.0 - mx).powi(2)).sum();
        if sxx > 0.0 {
            v.slope = Some(sxy / sxx);
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktReport {
    pub tol: f64,
    /// `||x_i - P_Omega_i(x_i - (grad_i f_i(x) + A_i^T u_i))||` per player.
    pub stationarity: Vec<f64>,
    pub min_multiplier: f64,
    /// Largest entry of `sum A_i x_i - sum b_i`.
    pub feasibility: f64,
    pub complementarity: f64,
    pub complementarity_scale: f64,
    pub multiplier_consensus: f64,
    pub edge_consensus: f64,
}

impl KktReport {
    pub fn stationarity_ok(&self) -> bool {
        self.stationarity.iter().all(|&s| s <= self.tol)
    }

    pub fn multipliers_ok(&self) -> bool {
        self.min_multiplier >= -self.tol
    }

    pub fn feasibility_ok(&self) -> bool {
        self.feasibility <= self.tol
    }

    pub fn complementarity_ok(&self) -> bool {
        self.complementarity <= self.tol * self.complementarity_scale
    }

    pub fn consensus_ok(&self) -> bool {
        self.multiplier_consensus <= self.tol && self.edge_consensus <= self.tol
    }

    pub fn all_ok(&self) -> bool {
        self.stationarity_ok()
            && self.multipliers_ok()
            && self.feasibility_ok()
            && self.complementarity_ok()
            && self.consensus_ok()
    }
}

/// Local optimality conditions at a candidate state, with the consensus
/// multiplier taken as the mean of the local ones.
pub fn check_kkt<S: Real>(state: &PrimalDualState<S>, game: &GameSpec<S>, graph: &CommGraph, tol: f64) -> KktReport {
    let lay = state.layout().clone();
    let mut stationarity = Vec::with_capacity(lay.m);
    for i in 0..lay.m {
        let p = game.player(i);
        let mut g = vec![S::zero(); p.dim()];
        game.gradient(i, &state.x, &mut g);
        p.add_at_times(state.u(i), &mut g);
        let x_i = state.x(i);
        let r: f64 = (0..p.dim())
            .map(|k| {
                let proj = (x_i[k] - g[k]).max(p.lo[k]).min(p.hi[k]);
                (x_i[k] - proj).as_f64().powi(2)
            })
            .sum::<f64>()
            .sqrt();
        stationarity.push(r);
    }
    let min_multiplier = state.u.iter().map(|v| v.as_f64()).fold(f64::INFINITY, f64::min);
    let slack: Vec<f64> =
        game.b_total().iter().zip(game.coupling(&state.x)).map(|(b, a)| b.as_f64() - a.as_f64()).collect();
    let feasibility = slack.iter().map(|s| -s).fold(f64::NEG_INFINITY, f64::max);
    let mut u_g = vec![0.0; lay.q];
    for i in 0..lay.m {
        for (g, v) in u_g.iter_mut().zip(state.u(i)) {
            *g += v.as_f64() / lay.m as f64;
        }
    }
    let complementarity = u_g.iter().zip(&slack).map(|(u, s)| u * s).sum::<f64>().abs();
    let complementarity_scale = (1.0 + norm(&u_g)) * (1.0 + norm(&slack));
    let mut multiplier_consensus: f64 = 0.0;
    let mut edge_consensus: f64 = 0.0;
    for (e, &(i, j)) in graph.edges().iter().enumerate() {
        multiplier_consensus = multiplier_consensus.max(dist(state.u(i), state.u(j)));
        edge_consensus = edge_consensus.max(dist(state.w(e, Side::Low), state.w(e, Side::High)));
    }
    KktReport {
        tol,
        stationarity,
        min_multiplier: if min_multiplier.is_finite() { min_multiplier } else { 0.0 },
        feasibility: if feasibility.is_finite() { feasibility } else { 0.0 },
        complementarity,
        complementarity_scale,
        multiplier_consensus,
        edge_consensus,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(k: u64, fp: f64, d: f64) -> Row {
        Row { k, fp_res_sq: Some(fp), dist_sq: Some(d), ..Default::default() }
    }

    #[test]
    fn fejer_on_contracting_sequence() {
        // gamma = 0.8: dist(k+1) <= dist(k) - 0.25 fp(k)
        let rec = RunRecord { rows: vec![row(0, 1.0, 4.0), row(1, 0.5, 3.5), row(2, 0.25, 3.0)], ..Default::default() };
        assert!(check_fejer(&rec, 0.8).ok);
        let rec = RunRecord { rows: vec![row(0, 1.0, 4.0), row(1, 0.5, 3.9)], ..Default::default() };
        let v = check_fejer(&rec, 0.8);
        assert!(!v.ok);
        assert_eq!(v.first_violation, Some(0));
    }

    #[test]
    fn all_zero_record_passes() {
        let rec = RunRecord { rows: (0..5).map(|k| row(k, 0.0, 0.0)).collect(), ..Default::default() };
        assert!(check_fejer(&rec, 0.8).ok);
        assert!(check_rate(&rec, 0.8).ok());
    }

    #[test]
    fn rate_on_short_record_is_vacuous() {
        let rec = RunRecord { rows: vec![row(0, 1.0, 1.0)], ..Default::default() };
        assert!(check_rate(&rec, 0.8).vacuous);
    }

    #[test]
    fn rate_detects_increase_and_slope() {
        let rows: Vec<Row> = (0..1000u64).map(|k| row(k, 1.0 / ((k + 1) as f64).powi(2), 10.0)).collect();
        let v = check_rate(&RunRecord { rows, ..Default::default() }, 0.8);
        assert!(v.ok());
        assert!((v.slope.unwrap() + 2.0).abs() < 1e-9);
        let rows = vec![row(0, 1.0, 10.0), row(1, 2.0, 10.0)];
        assert!(!check_rate(&RunRecord { rows, ..Default::default() }, 0.8).monotone);
    }

    #[test]
    fn residual_terms() {
        assert_eq!(primal_term(&[2.0, 4.0], &[1.0, 2.0]), 1.0);
        assert_eq!(primal_term(&[0.5], &[0.0]), 0.5);
        assert_eq!(dual_term(&[2.0], &[1.0], 4), 0.25);
        assert_eq!(dual_term(&[2.0], &[0.0], 4), 0.5);
    }
}
