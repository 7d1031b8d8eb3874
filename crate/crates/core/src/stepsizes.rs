//! Step sizes, their admissibility conditions and the default recipe.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GneError, Result};
use crate::graph::CommGraph;
use crate::model::{GameSpec, Layout, MonotonicityConstants};
use crate::scalar::Real;

/// Relative margin used when checking strict upper bounds.
pub const STRICT_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSizes<S> {
    pub alpha: Vec<S>,
    /// One entry per canonical edge.
    pub kappa: Vec<S>,
    pub sigma: Vec<S>,
    pub tau: Vec<S>,
    /// Global relaxation; player `i` uses `eta / (m p_i)`.
    pub eta: S,
    pub probs: Vec<S>,
    /// Maximum read delay.
    pub eps: usize,
}

impl<S: Real> StepSizes<S> {
    /// Structural checks: lengths, positivity, `alpha_i in (0, 1)` and a probability vector.
    pub fn check_shape(&self, m: usize, edges: usize) -> Result<()> {
        let lens = [
            ("alpha", self.alpha.len(), m),
            ("sigma", self.sigma.len(), m),
            ("tau", self.tau.len(), m),
            ("probs", self.probs.len(), m),
            ("kappa", self.kappa.len(), edges),
        ];
        for (name, got, want) in lens {
            if got != want {
                return Err(GneError::StepSize(format!("{name} has {got} entries, expected {want}")));
            }
        }
        for (name, v) in [("sigma", &self.sigma), ("tau", &self.tau), ("kappa", &self.kappa), ("probs", &self.probs)] {
            if let Some(k) = v.iter().position(|x| !(*x > S::zero()) || !x.is_finite()) {
                return Err(GneError::StepSize(format!("{name}[{k}] = {} must be positive", v[k])));
            }
        }
        if let Some(k) = self.alpha.iter().position(|a| !(*a > S::zero() && *a < S::one())) {
            return Err(GneError::StepSize(format!("alpha[{k}] = {} must lie in (0, 1)", self.alpha[k])));
        }
        if !(self.eta > S::zero()) || !self.eta.is_finite() {
            return Err(GneError::StepSize(format!("eta = {} must be positive", self.eta)));
        }
        let total: f64 = self.probs.iter().map(|p| p.as_f64()).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(GneError::StepSize(format!("activation probabilities sum to {total}")));
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.alpha.len()
    }

    pub fn p_min(&self) -> S {
        self.probs.iter().copied().fold(S::infinity(), S::min)
    }

    pub fn alpha_min(&self) -> S {
        self.alpha.iter().copied().fold(S::infinity(), S::min)
    }

    /// Per-player relaxation `eta / (m p_i)`.
    pub fn eta_i(&self, i: usize) -> S {
        self.eta / (S::lit(self.m() as f64) * self.probs[i])
    }

    /// `sum_{j in N_i} kappa_(i,j)`.
    pub fn kappa_sum(&self, graph: &CommGraph, i: usize) -> S {
        graph.incidences(i).iter().map(|inc| self.kappa[inc.edge]).sum()
    }

    /// Averagedness constant `1 / (1 + alpha_min)`.
    pub fn gamma(&self) -> S {
        S::one() / (S::one() + self.alpha_min())
    }

    /// Copy with every entry converted to another scalar type.
    pub fn cast<T: Real>(&self) -> StepSizes<T> {
        let c = |v: &[S]| v.iter().map(|x| T::lit(x.as_f64())).collect();
        StepSizes {
            alpha: c(&self.alpha),
            kappa: c(&self.kappa),
            sigma: c(&self.sigma),
            tau: c(&self.tau),
            eta: T::lit(self.eta.as_f64()),
            probs: c(&self.probs),
            eps: self.eps,
        }
    }
}

pub fn uniform_probs<S: Real>(m: usize) -> Vec<S> {
    vec![S::one() / S::lit(m as f64); m]
}

/// Activation probabilities induced by independent Poisson clocks with rates `zeta`.
pub fn probs_from_rates<S: Real>(zeta: &[S]) -> Result<Vec<S>> {
    if zeta.iter().any(|z| !(*z > S::zero())) {
        return Err(GneError::StepSize("clock rates must be positive".into()));
    }
    let total: S = zeta.iter().copied().sum();
    Ok(zeta.iter().map(|&z| z / total).collect())
}

/// One player with rate `p_min` and the rest sharing `1 - p_min` equally.
pub fn probs_with_min<S: Real>(m: usize, p_min: S) -> Result<Vec<S>> {
    let mf = S::lit(m as f64);
    if m == 1 || !(p_min > S::zero()) || p_min > S::one() / mf {
        return Err(GneError::StepSize(format!("p_min = {p_min} must lie in (0, 1/m] with m > 1")));
    }
    let rest = (S::one() - p_min) / S::lit((m - 1) as f64);
    let mut p = vec![rest; m];
    p[0] = p_min;
    Ok(p)
}

/// Diagonal of `T_S = blkdiag(Gamma^-1, Sigma^-1, W^-1)` in the stacked layout.
pub fn ts_diagonal<S: Real>(steps: &StepSizes<S>, layout: &Layout) -> Vec<S> {
    let mut d = Vec::with_capacity(layout.total());
    for i in 0..layout.m {
        d.extend(std::iter::repeat_n(S::one() / steps.tau[i], layout.x_range(i).len()));
    }
    for i in 0..layout.m {
        d.extend(std::iter::repeat_n(S::one() / steps.sigma[i], layout.q));
    }
    for e in 0..layout.edges {
        d.extend(std::iter::repeat_n(S::one() / steps.kappa[e], 2 * layout.q));
    }
    d
}

/// Condition number of the diagonal `T_S`.
pub fn ts_condition<S: Real>(diag: &[S]) -> S {
    let hi = diag.iter().copied().fold(S::neg_infinity(), S::max);
    let lo = diag.iter().copied().fold(S::infinity(), S::min);
    hi / lo
}

/// `||a - b||^2_D` for a diagonal weight `D`.
pub fn weighted_dist_sq<S: Real>(diag: &[S], a: &[S], b: &[S]) -> S {
    diag.iter()
        .zip(a.iter().zip(b))
        .map(|(&d, (&x, &y))| d * (x - y) * (x - y))
        .sum()
}

/// `beta = 1/eta - 2 eps sqrt(kappa/p_min)/m - kappa/(m p_min)` with `kappa = cond(T_S)`.
pub fn beta<S: Real>(eta: S, eps: usize, p_min: S, kappa_ts: S, m: usize) -> S {
    let mf = S::lit(m as f64);
    let two_eps = S::lit(2.0 * eps as f64);
    S::one() / eta - two_eps * (kappa_ts / p_min).sqrt() / mf - kappa_ts / (mf * p_min)
}

/// `lambda_max(A_i^T A_i)` for every player.
pub fn coupling_norms_sq<S: Real>(game: &GameSpec<S>) -> Vec<f64> {
    game.players()
        .iter()
        .map(|p| {
            let n_i = p.dim();
            if game.q() == 0 {
                return 0.0;
            }
            let a = DMatrix::from_row_iterator(game.q(), n_i, p.a.iter().map(|v| v.as_f64()));
            (a.transpose() * &a).symmetric_eigenvalues().max().max(0.0)
        })
        .collect()
}

/// Upper bound on `sigma_i`: `9 (1 - alpha_i)^2 / (16 sum kappa)`; infinite without neighbors.
pub fn sigma_bound(alpha: f64, kappa_sum: f64) -> f64 {
    if kappa_sum > 0.0 {
        9.0 * (1.0 - alpha).powi(2) / (16.0 * kappa_sum)
    } else {
        f64::INFINITY
    }
}

/// Upper bound on `tau_i` given `sigma_i`.
pub fn tau_bound(alpha: f64, sigma: f64, kappa_sum: f64, a_norm_sq: f64, consts: &MonotonicityConstants<f64>) -> f64 {
    let (mu, l) = (consts.mu, consts.l_f);
    2.0 * mu * (1.0 - alpha).powi(2)
        / ((1.0 - alpha) * l * l + 8.0 * mu * sigma * (1.0 + sigma * kappa_sum) * a_norm_sq)
}

/// Fixed-constant `tau` formula used for the reference Cournot experiments.
pub fn tau_literal(alpha: f64, sigma: f64, kappa_sum: f64) -> f64 {
    (1.0 - alpha).powi(2) / (15.0 * (1.0 - alpha) + 16.0 * sigma * (1.0 + sigma * kappa_sum))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecipeOptions {
    pub alpha: f64,
    /// `tau_i` is capped at this fraction of its admissibility bound.
    pub tau_fraction: f64,
}

impl Default for RecipeOptions {
    fn default() -> Self {
        RecipeOptions { alpha: 0.25, tau_fraction: 0.9 }
    }
}

/// Default parameters: `alpha_i = 0.25`, `kappa_(i,j) = max(|N_i|, |N_j|)`,
/// `sigma_i = (1 - alpha_i)^2 / (2 sum kappa)`, the fixed-constant `tau_i`
/// formula (capped below the admissibility bound), and the largest `eta` of
/// the form `(m - 1) p_min / (sqrt(kappa) (2 eps sqrt(p_min) + sqrt(kappa)))`.
pub fn default_recipe<S: Real>(
    game: &GameSpec<S>,
    graph: &CommGraph,
    consts: &MonotonicityConstants<S>,
    probs: Vec<S>,
    eps: usize,
    opts: RecipeOptions,
) -> Result<StepSizes<S>> {
    let m = game.player_count();
    let layout = Layout::new(game, graph)?;
    let consts64 = MonotonicityConstants { mu: consts.mu.as_f64(), l_f: consts.l_f.as_f64() };
    let a_norms = coupling_norms_sq(game);
    let alpha = opts.alpha;
    let kappa: Vec<f64> =
        graph.edges().iter().map(|&(i, j)| graph.degree(i).max(graph.degree(j)) as f64).collect();
    let mut sigma = Vec::with_capacity(m);
    let mut tau = Vec::with_capacity(m);
    for i in 0..m {
        let ks: f64 = graph.incidences(i).iter().map(|inc| kappa[inc.edge]).sum();
        let s = 0.5 * (1.0 - alpha).powi(2) / ks.max(1.0);
        let t = tau_literal(alpha, s, ks).min(opts.tau_fraction * tau_bound(alpha, s, ks, a_norms[i], &consts64));
        sigma.push(s);
        tau.push(t);
    }
    let lit = |v: Vec<f64>| v.into_iter().map(S::lit).collect::<Vec<S>>();
    let mut steps = StepSizes {
        alpha: vec![S::lit(alpha); m],
        kappa: lit(kappa),
        sigma: lit(sigma),
        tau: lit(tau),
        eta: S::one(),
        probs,
        eps,
    };
    steps.check_shape(m, graph.edge_count())?;
    let kts = ts_condition(&ts_diagonal(&steps, &layout)).as_f64();
    let p_min = steps.p_min().as_f64();
    let denom = kts.sqrt() * (2.0 * eps as f64 * p_min.sqrt() + kts.sqrt());
    let eta = if m > 1 {
        (m as f64 - 1.0) * p_min / denom
    } else {
        0.5 / (2.0 * eps as f64 * (kts / p_min).sqrt() + kts / p_min)
    };
    steps.eta = S::lit(eta);

    let report = validate(&steps, game, graph, consts)?;
    if let Some(bad) = report.players.iter().find(|p| !p.sigma_ok || !p.tau_ok) {
        return Err(GneError::StepSize(format!("recipe violates the admissibility bound for player {}", bad.player)));
    }
    Ok(steps)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlayerCheck {
    pub player: usize,
    pub sigma: f64,
    pub sigma_bound: f64,
    pub sigma_ok: bool,
    pub tau: f64,
    pub tau_bound: f64,
    /// The fixed-constant formula value, reported alongside the bound.
    pub tau_literal: f64,
    pub tau_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    pub players: Vec<PlayerCheck>,
    pub kappa_ts: f64,
    pub beta: f64,
    pub gamma: f64,
    pub eta: f64,
    pub p_min: f64,
    pub eps: usize,
}

impl StepReport {
    pub fn sync_ok(&self) -> bool {
        self.players.iter().all(|p| p.sigma_ok && p.tau_ok)
    }

    pub fn beta_ok(&self) -> bool {
        self.beta > 0.0
    }

    pub fn all_ok(&self) -> bool {
        self.sync_ok() && self.beta_ok()
    }
}

impl fmt::Display for StepReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "player  sigma         sigma_bound   tau           tau_bound     tau_literal   verdict")?;
        for p in &self.players {
            let verdict = match (p.sigma_ok, p.tau_ok) {
                (true, true) => "ok",
                (false, true) => "FAIL sigma",
                (true, false) => "FAIL tau",
                (false, false) => "FAIL sigma,tau",
            };
            writeln!(
                f,
                "{:<7} {:<13.6e} {:<13.6e} {:<13.6e} {:<13.6e} {:<13.6e} {}",
                p.player, p.sigma, p.sigma_bound, p.tau, p.tau_bound, p.tau_literal, verdict
            )?;
        }
        writeln!(f, "cond(T_S) = {:.6e}", self.kappa_ts)?;
        writeln!(f, "gamma     = {:.6}", self.gamma)?;
        writeln!(f, "eta       = {:.6e} (eps = {}, p_min = {:.4})", self.eta, self.eps, self.p_min)?;
        write!(f, "beta      = {:.6e} {}", self.beta, if self.beta_ok() { "ok" } else { "FAIL" })
    }
}

fn strictly_below(value: f64, bound: f64) -> bool {
    value < bound * (1.0 - STRICT_MARGIN)
}

pub fn validate<S: Real>(
    steps: &StepSizes<S>,
    game: &GameSpec<S>,
    graph: &CommGraph,
    consts: &MonotonicityConstants<S>,
) -> Result<StepReport> {
    let layout = Layout::new(game, graph)?;
    steps.check_shape(game.player_count(), graph.edge_count())?;
    let consts64 = MonotonicityConstants { mu: consts.mu.as_f64(), l_f: consts.l_f.as_f64() };
    let a_norms = coupling_norms_sq(game);
    let players = (0..game.player_count())
        .map(|i| {
            let alpha = steps.alpha[i].as_f64();
            let sigma = steps.sigma[i].as_f64();
            let tau = steps.tau[i].as_f64();
            let ks = steps.kappa_sum(graph, i).as_f64();
            let sb = sigma_bound(alpha, ks);
            let tb = tau_bound(alpha, sigma, ks, a_norms[i], &consts64);
            PlayerCheck {
                player: i,
                sigma,
                sigma_bound: sb,
                sigma_ok: strictly_below(sigma, sb),
                tau,
                tau_bound: tb,
                tau_literal: tau_literal(alpha, sigma, ks),
                tau_ok: strictly_below(tau, tb),
            }
        })
        .collect();
    let kappa_ts = ts_condition(&ts_diagonal(steps, &layout)).as_f64();
    let p_min = steps.p_min().as_f64();
    let eta = steps.eta.as_f64();
    Ok(StepReport {
        players,
        kappa_ts,
        beta: beta(eta, steps.eps, p_min, kappa_ts, game.player_count()),
        gamma: steps.gamma().as_f64(),
        eta,
        p_min,
        eps: steps.eps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PlayerSpec;

    fn two_player_game() -> GameSpec<f64> {
        let p = PlayerSpec { lo: vec![0.0], hi: vec![1.0], a: vec![1.0], b: vec![1.0] };
        GameSpec::builder(1)
            .player(p.clone())
            .player(p)
            .affine(vec![2.0, 0.5, 0.5, 2.0], vec![-1.0, -1.0])
            .build()
            .unwrap()
    }

    #[test]
    fn path_graph_recipe_values() {
        let game = two_player_game();
        let graph = CommGraph::path(2).unwrap();
        let consts = crate::model::estimate_constants(&game).unwrap();
        let steps = default_recipe(&game, &graph, &consts, uniform_probs(2), 0, RecipeOptions::default()).unwrap();
        assert_eq!(steps.kappa, vec![1.0]);
        assert!((steps.sigma[0] - 0.28125).abs() < 1e-15);
        assert!((steps.sigma[1] - 0.28125).abs() < 1e-15);
    }

    #[test]
    fn sigma_at_bound_fails() {
        let game = two_player_game();
        let graph = CommGraph::path(2).unwrap();
        let consts = crate::model::estimate_constants(&game).unwrap();
        let mut steps = default_recipe(&game, &graph, &consts, uniform_probs(2), 0, RecipeOptions::default()).unwrap();
        assert!(validate(&steps, &game, &graph, &consts).unwrap().all_ok());
        steps.sigma[1] = sigma_bound(0.25, 1.0);
        let report = validate(&steps, &game, &graph, &consts).unwrap();
        assert!(report.players[0].sigma_ok);
        assert!(!report.players[1].sigma_ok);
        assert!(!report.sync_ok());
    }

    #[test]
    fn eta_recipe_gives_positive_beta() {
        let game = two_player_game();
        let graph = CommGraph::path(2).unwrap();
        let consts = crate::model::estimate_constants(&game).unwrap();
        for eps in [0, 1, 5, 20] {
            let steps = default_recipe(&game, &graph, &consts, uniform_probs(2), eps, RecipeOptions::default()).unwrap();
            let r = validate(&steps, &game, &graph, &consts).unwrap();
            // 1/eta = (2 eps sqrt(k/p) + k/p) / (m - 1)
            let k = r.kappa_ts;
            let p = r.p_min;
            let inv = (2.0 * eps as f64 * (k / p).sqrt() + k / p) / 1.0;
            assert!((1.0 / r.eta - inv).abs() <= 1e-9 * inv);
            assert!(r.beta > 0.0);
        }
    }

    #[test]
    fn ts_condition_is_one_for_equal_entries() {
        assert_eq!(ts_condition(&[2.0, 2.0, 2.0]), 1.0);
        assert!(ts_condition(&[1.0, 2.0, 4.0]) == 4.0);
    }

    #[test]
    fn probabilities() {
        let p = probs_from_rates(&[1.0, 3.0]).unwrap();
        assert_eq!(p, vec![0.25, 0.75]);
        let p = probs_with_min(10, 0.03).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(p.iter().cloned().fold(1.0, f64::min), 0.03);
        assert!(probs_with_min(10, 0.2).is_err());
    }
}
