//! Checks on the asynchronous iteration: the delayed-read identity, the
//! one-step expectation bounds and the Lyapunov metric.

use std::collections::VecDeque;

use serde::Serialize;

use super::{block_indices, player_block, AsyncSim};
use crate::diagnostics::Reference;
use crate::error::Result;
use crate::graph::CommGraph;
use crate::model::PrimalDualState;
use crate::scalar::Real;
use crate::stepsizes::{beta, ts_condition, ts_diagonal};
use crate::sync::Kernel;

/// One activation as seen by the delayed-read identity check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReadCheckEntry {
    pub k: u64,
    pub active: usize,
    pub delays: Vec<usize>,
    /// Iterations `d` in the window whose update is not yet visible to the reader.
    pub j_set: Vec<u64>,
    /// `max |U_read - (U_k + sum_{d in J} (U_d - U_{d+1}))| / (1 + max |U_k|)`
    pub residual: f64,
    /// Every player's read block equals, bit for bit, its block at the oldest
    /// hidden update (or at `k` when none is hidden).
    pub telescoped_exact: bool,
}

pub(crate) struct ReadCheckLog<S> {
    window: VecDeque<PrimalDualState<S>>,
    pub entries: Vec<ReadCheckEntry>,
}

impl<S: Real> ReadCheckLog<S> {
    pub fn new(initial: PrimalDualState<S>) -> Self {
        ReadCheckLog { window: VecDeque::from([initial]), entries: Vec::new() }
    }

    fn at(&self, k: u64, d: u64) -> &PrimalDualState<S> {
        &self.window[self.window.len() - 1 - (k - d) as usize]
    }

    pub fn check(
        &mut self,
        k: u64,
        active: usize,
        delays: &[usize],
        hidden: Vec<(u64, usize)>,
        read: &PrimalDualState<S>,
        graph: &CommGraph,
    ) {
        let u_k: Vec<f64> = self.at(k, k).stacked().iter().map(|v| v.as_f64()).collect();
        let mut rhs = u_k.clone();
        for &(d, _) in &hidden {
            let (a, b) = (self.at(k, d).stacked(), self.at(k, d + 1).stacked());
            for (r, (x, y)) in rhs.iter_mut().zip(a.iter().zip(&b)) {
                *r += x.as_f64() - y.as_f64();
            }
        }
        let scale = 1.0 + u_k.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let residual = read
            .stacked()
            .iter()
            .zip(&rhs)
            .fold(0.0f64, |m, (a, b)| m.max((a.as_f64() - b).abs()))
            / scale;
        let telescoped_exact = (0..delays.len()).all(|j| {
            let d_j = hidden.iter().filter(|h| h.1 == j).map(|h| h.0).min().unwrap_or(k);
            player_block(read, graph, j) == player_block(self.at(k, d_j), graph, j)
        });
        self.entries.push(ReadCheckEntry {
            k,
            active,
            delays: delays.to_vec(),
            j_set: hidden.iter().map(|h| h.0).collect(),
            residual,
            telescoped_exact,
        });
    }

    pub fn push_state(&mut self, state: PrimalDualState<S>, eps: usize) {
        self.window.push_back(state);
        while self.window.len() > eps + 1 {
            self.window.pop_front();
        }
    }
}

/// Both sides of the one-step bounds at iteration `k`, all in the `T_S` norm.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpectedStepReport {
    pub k: u64,
    pub j_set: Vec<u64>,
    /// `||U_k - U*||^2`
    pub dist_sq: f64,
    /// `E ||U_{k+1} - U*||^2` over the active player.
    pub expected_dist_sq: f64,
    /// `||U_k - U*||^2 + (c/m) sum_J ||U_d - U_{d+1}||^2 - (1/m)(1/eta - cond/(m p_min) - |J|/c) ||U~ - U_k||^2`
    pub dist_bound: f64,
    pub phi: f64,
    pub expected_phi: f64,
    /// `phi_k - (beta/m) ||U~ - U_k||^2`
    pub phi_bound: f64,
    /// `||U~_{k+1} - U_k||^2` with `U~_{k+1} = U_k - eta (I - T) U_read`.
    pub gap_sq: f64,
    pub beta: f64,
}

impl ExpectedStepReport {
    /// `(bound - expectation) / (1 + dist_sq)`
    pub fn dist_slack(&self) -> f64 {
        (self.dist_bound - self.expected_dist_sq) / (1.0 + self.dist_sq)
    }

    /// `(bound - expectation) / (1 + phi)`
    pub fn phi_slack(&self) -> f64 {
        (self.phi_bound - self.expected_phi) / (1.0 + self.phi)
    }
}

fn wdist(ts: &[f64], a: &[f64], b: &[f64]) -> f64 {
    ts.iter().zip(a.iter().zip(b)).map(|(w, (x, y))| w * (x - y).powi(2)).sum()
}

fn to_f64<S: Real>(v: &[S]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

pub(crate) fn expected_step<S: Real>(
    sim: &AsyncSim<'_, S>,
    delays: &[usize],
    reference: &Reference<S>,
) -> Result<ExpectedStepReport> {
    let lay = sim.layout.clone();
    let (m, q, k) = (lay.m, lay.q, sim.k);
    let eps = sim.steps.eps as u64;
    let ts = to_f64(&ts_diagonal(sim.steps, &lay));
    let times: Vec<u64> = delays.iter().map(|&d| k - (d as u64).min(k)).collect();

    let view = sim.history.view(&times);
    let read = PrimalDualState::from_view(lay.clone(), &view);
    let mut kernel = Kernel::new(&lay, sim.graph);
    let mut tv = vec![0.0; lay.total()];
    for i in 0..m {
        kernel.apply(sim.game, sim.graph, sim.steps, &read, &read.x, i, sim.variant);
        let n_i = lay.x_range(i).len();
        let out = kernel.xbar[..n_i].iter().chain(&kernel.out_u).chain(&kernel.out_w[..sim.graph.degree(i) * q]);
        for (&r, v) in block_indices(&lay, sim.graph, i).iter().zip(out) {
            tv[r] = v.as_f64();
        }
    }
    let read = to_f64(&read.stacked());
    let u_k = to_f64(&sim.history.current_state().stacked());
    let ustar = to_f64(&reference.state.stacked());

    let lo = k.saturating_sub(eps);
    let states: Vec<Vec<f64>> = (lo..=k).map(|d| to_f64(&sim.history.state_at(d).stacked())).collect();
    let step_sq = |d: u64| wdist(&ts, &states[(d - lo) as usize], &states[(d - lo + 1) as usize]);
    let j_set: Vec<u64> = (lo..k).filter(|&d| d >= times[sim.active_at(d)]).collect();

    let eta = sim.steps.eta.as_f64();
    let p_min = sim.steps.p_min().as_f64();
    let mf = m as f64;
    let kappa = ts_condition(&ts);
    let coef = (p_min / kappa).sqrt();

    let tilde: Vec<f64> = u_k.iter().zip(tv.iter().zip(&read)).map(|(u, (t, r))| u + eta * (t - r)).collect();
    let gap_sq = wdist(&ts, &tilde, &u_k);
    let dist_sq = wdist(&ts, &u_k, &ustar);
    let mut expected_dist_sq = 0.0;
    let mut expected_step = 0.0;
    for i in 0..m {
        let p_i = sim.steps.probs[i].as_f64();
        let eta_i = sim.steps.eta_i(i).as_f64();
        let mut next = u_k.clone();
        for &r in &block_indices(&lay, sim.graph, i) {
            next[r] = u_k[r] + eta_i * (tv[r] - read[r]);
        }
        expected_dist_sq += p_i * wdist(&ts, &next, &ustar);
        expected_step += p_i * wdist(&ts, &next, &u_k);
    }

    let c = mf * coef;
    let hidden: f64 = j_set.iter().map(|&d| step_sq(d)).sum();
    let dist_bound = dist_sq + c / mf * hidden
        - (1.0 / mf) * (1.0 / eta - kappa / (mf * p_min) - j_set.len() as f64 / c) * gap_sq;

    // Lag weights d - (k - eps) + 1 at iteration k, shifted by one at k + 1.
    let eps_f = eps as f64;
    let lag = |d: u64, base: u64| d as f64 - (base as f64 - eps_f) + 1.0;
    let phi = dist_sq + coef * (lo..k).map(|d| lag(d, k) * step_sq(d)).sum::<f64>();
    let carried: f64 = ((k + 1).saturating_sub(eps)..k).map(|d| lag(d, k + 1) * step_sq(d)).sum();
    let expected_phi = expected_dist_sq + coef * (carried + eps_f * expected_step);
    let b = beta(eta, sim.steps.eps, p_min, kappa, m);
    Ok(ExpectedStepReport {
        k,
        j_set,
        dist_sq,
        expected_dist_sq,
        dist_bound,
        phi,
        expected_phi,
        phi_bound: phi - b / mf * gap_sq,
        gap_sq,
        beta: b,
    })
}

/// `||U_k - U*||^2 + coef * sum_{d=k-eps}^{k-1} (d - (k - eps) + 1) ||U_d - U_{d+1}||^2`
/// with `window[l] = U_{k-l}`, `l = 0..=eps`, all in the diagonal metric `ts`.
pub fn phi_metric(window: &[Vec<f64>], ustar: &[f64], ts: &[f64], coef: f64) -> f64 {
    let eps = window.len() - 1;
    let mut total = wdist(ts, &window[0], ustar);
    for l in 1..=eps {
        // d = k - l has weight eps - l + 1.
        total += coef * (eps - l + 1) as f64 * wdist(ts, &window[l - 1], &window[l]);
    }
    total
}

/// The same metric as `<Z, Phi Z>` with `Z_l = U_{k-l} - U*`, built from the
/// block-tridiagonal operator rather than from differences.
pub fn phi_operator_form(window: &[Vec<f64>], ustar: &[f64], ts: &[f64], coef: f64) -> f64 {
    let eps = window.len() - 1;
    let z: Vec<Vec<f64>> = window.iter().map(|u| u.iter().zip(ustar).map(|(a, b)| a - b).collect()).collect();
    let dim = ustar.len();
    let dot = |a: &[f64], b: &[f64]| -> f64 { (0..dim).map(|r| ts[r] * a[r] * b[r]).sum() };
    if eps == 0 {
        return dot(&z[0], &z[0]);
    }
    let e = eps as f64;
    let comb = |terms: &[(f64, usize)]| -> Vec<f64> {
        (0..dim).map(|r| terms.iter().map(|&(c, l)| c * z[l][r]).sum()).collect()
    };
    let mut total = dot(&z[0], &comb(&[(1.0 + e * coef, 0), (-e * coef, 1)]));
    for l in 1..eps {
        let lf = l as f64;
        let zt = comb(&[
            (coef * (lf - e - 1.0), l - 1),
            (coef * (2.0 * e - 2.0 * lf + 1.0), l),
            (coef * (lf - e), l + 1),
        ]);
        total += dot(&z[l], &zt);
    }
    total + dot(&z[eps], &comb(&[(coef, eps), (-coef, eps - 1)]))
}
