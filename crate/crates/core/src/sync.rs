//! Synchronous prediction-correction iteration and its forward-backward variant.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{residuals, Reference, Row, RunRecord};
use crate::error::{GneError, Result};
use crate::graph::CommGraph;
use crate::model::{GameSpec, Layout, PrimalDualState, StateRead};
use crate::scalar::Real;
use crate::stepsizes::{ts_diagonal, weighted_dist_sq, StepSizes};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Prediction followed by the correction terms.
    PredictCorrect,
    /// Reflected predictions (`2 wbar - w`, `2 ubar - u`) without correction.
    ForwardBackward,
}

/// Predicted values `(wbar, ubar, xbar)` of one synchronous sweep, stacked like the state.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<S> {
    pub wbar: Vec<S>,
    pub ubar: Vec<S>,
    pub xbar: Vec<S>,
}

/// Per-player evaluation of the block `(T V)_i` of the fixed-point operator,
/// reading everything from a view `V`. Shared by the synchronous solver and by
/// the asynchronous simulator, which hands it a delayed view.
pub(crate) struct Kernel<S> {
    grad: Vec<S>,
    acc: Vec<S>,
    /// Predictions, indexed by incidence slot for `wbar`.
    pub wbar: Vec<S>,
    pub ubar: Vec<S>,
    pub xbar: Vec<S>,
    /// Player's block of the operator output.
    pub out_u: Vec<S>,
    pub out_w: Vec<S>,
}

impl<S: Real> Kernel<S> {
    pub fn new(layout: &Layout, graph: &CommGraph) -> Self {
        let n_max = (0..layout.m).map(|i| layout.x_range(i).len()).max().unwrap_or(0);
        let deg_max = (0..layout.m).map(|i| graph.degree(i)).max().unwrap_or(0);
        let q = layout.q;
        Kernel {
            grad: vec![S::zero(); n_max],
            acc: vec![S::zero(); q],
            wbar: vec![S::zero(); deg_max * q],
            ubar: vec![S::zero(); q],
            xbar: vec![S::zero(); n_max],
            out_u: vec![S::zero(); q],
            out_w: vec![S::zero(); deg_max * q],
        }
    }

    /// After the call, `xbar[..n_i]`, `out_u` and `out_w[..deg_i * q]` hold player
    /// `i`'s block of `T V`. `x_full` must be the stacked `x` of the view.
    #[allow(clippy::too_many_arguments)]
    pub fn apply<V: StateRead<S>>(
        &mut self,
        game: &GameSpec<S>,
        graph: &CommGraph,
        steps: &StepSizes<S>,
        view: &V,
        x_full: &[S],
        i: usize,
        variant: Variant,
    ) {
        let q = game.q();
        let p = game.player(i);
        let n_i = p.dim();
        let half = S::lit(0.5);
        let two = S::lit(2.0);
        let u_i = view.u(i);
        let x_i = view.x(i);
        let incs = graph.incidences(i);

        for (slot, inc) in incs.iter().enumerate() {
            let kappa = steps.kappa[inc.edge];
            let s: S = inc.side.sign();
            let w_own = view.w(inc.edge, inc.side);
            let w_nb = view.w(inc.edge, inc.side.other());
            let u_j = view.u(inc.neighbor);
            let wb = &mut self.wbar[slot * q..(slot + 1) * q];
            for r in 0..q {
                wb[r] = half * (w_own[r] + w_nb[r]) + half * kappa * s * (u_i[r] - u_j[r]);
            }
        }

        // ubar_i = P_+(u_i + sigma_i (A_i x_i - b_i - sum_j E_ij wbar_ij))
        let sigma = steps.sigma[i];
        self.acc.iter_mut().zip(&p.b).for_each(|(a, &b)| *a = -b);
        p.add_a_times(x_i, &mut self.acc);
        for (slot, inc) in incs.iter().enumerate() {
            let s: S = inc.side.sign();
            let wb = &self.wbar[slot * q..(slot + 1) * q];
            match variant {
                Variant::PredictCorrect => {
                    for r in 0..q {
                        self.acc[r] -= s * wb[r];
                    }
                }
                Variant::ForwardBackward => {
                    let w_own = view.w(inc.edge, inc.side);
                    for r in 0..q {
                        self.acc[r] -= s * (two * wb[r] - w_own[r]);
                    }
                }
            }
        }
        for r in 0..q {
            self.ubar[r] = (u_i[r] + sigma * self.acc[r]).max(S::zero());
        }

        // xbar_i = P_Omega_i(x_i - tau_i (grad_i f_i(x) + A_i^T ubar_i))
        let tau = steps.tau[i];
        let grad = &mut self.grad[..n_i];
        game.gradient(i, x_full, grad);
        match variant {
            Variant::PredictCorrect => p.add_at_times(&self.ubar, grad),
            Variant::ForwardBackward => {
                for r in 0..q {
                    self.acc[r] = two * self.ubar[r] - u_i[r];
                }
                p.add_at_times(&self.acc, grad);
            }
        }
        for k in 0..n_i {
            self.xbar[k] = (x_i[k] - tau * grad[k]).max(p.lo[k]).min(p.hi[k]);
        }

        match variant {
            Variant::PredictCorrect => {
                // u+ = ubar + sigma A_i (xbar - x_i)
                self.out_u.copy_from_slice(&self.ubar);
                for k in 0..n_i {
                    self.grad[k] = self.xbar[k] - x_i[k];
                }
                self.acc.iter_mut().for_each(|a| *a = S::zero());
                p.add_a_times(&self.grad[..n_i], &mut self.acc);
                for r in 0..q {
                    self.out_u[r] += sigma * self.acc[r];
                }
                // w+ = wbar + kappa E_ij (ubar - u_i)
                for (slot, inc) in incs.iter().enumerate() {
                    let ks = steps.kappa[inc.edge] * inc.side.sign::<S>();
                    for r in 0..q {
                        self.out_w[slot * q + r] = self.wbar[slot * q + r] + ks * (self.ubar[r] - u_i[r]);
                    }
                }
            }
            Variant::ForwardBackward => {
                self.out_u.copy_from_slice(&self.ubar);
                let len = incs.len() * q;
                self.out_w[..len].copy_from_slice(&self.wbar[..len]);
            }
        }
    }
}

/// Synchronous solver with preallocated workspace.
pub struct SyncSolver<'a, S> {
    game: &'a GameSpec<S>,
    graph: &'a CommGraph,
    steps: &'a StepSizes<S>,
    variant: Variant,
    layout: std::sync::Arc<Layout>,
    kernel: Kernel<S>,
    ts: Vec<S>,
}

impl<'a, S: Real> SyncSolver<'a, S> {
    pub fn new(game: &'a GameSpec<S>, graph: &'a CommGraph, steps: &'a StepSizes<S>, variant: Variant) -> Result<Self> {
        let layout = Layout::new(game, graph)?;
        steps.check_shape(game.player_count(), graph.edge_count())?;
        Ok(SyncSolver {
            game,
            graph,
            steps,
            variant,
            kernel: Kernel::new(&layout, graph),
            ts: ts_diagonal(steps, &layout),
            layout,
        })
    }

    pub fn layout(&self) -> &std::sync::Arc<Layout> {
        &self.layout
    }

    pub fn ts_diagonal(&self) -> &[S] {
        &self.ts
    }

    fn check_state(&self, state: &PrimalDualState<S>) -> Result<()> {
        if **state.layout() != *self.layout {
            return Err(GneError::Dimension("state layout does not match the game and graph".into()));
        }
        Ok(())
    }

    /// Writes `T(cur)` into `next`, optionally collecting the predictions.
    pub fn step_into(
        &mut self,
        cur: &PrimalDualState<S>,
        next: &mut PrimalDualState<S>,
        mut pred: Option<&mut Prediction<S>>,
    ) -> Result<()> {
        self.check_state(cur)?;
        self.check_state(next)?;
        let q = self.layout.q;
        for i in 0..self.layout.m {
            self.kernel.apply(self.game, self.graph, self.steps, cur, &cur.x, i, self.variant);
            let n_i = self.layout.x_range(i).len();
            next.x_mut(i).copy_from_slice(&self.kernel.xbar[..n_i]);
            next.u_mut(i).copy_from_slice(&self.kernel.out_u);
            for (slot, inc) in self.graph.incidences(i).iter().enumerate() {
                next.w_mut(inc.edge, inc.side).copy_from_slice(&self.kernel.out_w[slot * q..(slot + 1) * q]);
            }
            if let Some(p) = pred.as_deref_mut() {
                p.xbar[self.layout.x_range(i)].copy_from_slice(&self.kernel.xbar[..n_i]);
                p.ubar[self.layout.u_range(i)].copy_from_slice(&self.kernel.ubar);
                for (slot, inc) in self.graph.incidences(i).iter().enumerate() {
                    p.wbar[self.layout.w_range(inc.edge, inc.side)]
                        .copy_from_slice(&self.kernel.wbar[slot * q..(slot + 1) * q]);
                }
            }
        }
        Ok(())
    }

    /// Iterates until the stopping criterion holds or `max_iter` steps.
    pub fn run(
        &mut self,
        init: PrimalDualState<S>,
        stop: &StopRule,
        reference: Option<&Reference<S>>,
    ) -> Result<(PrimalDualState<S>, RunRecord)> {
        self.check_state(&init)?;
        let on = stop.criterion(reference.is_some())?;
        let mut cur = init;
        let mut next = cur.clone();
        let mut record = RunRecord::default();
        if let Some(r) = reference {
            record.flags = r.absolute_components();
        }
        let tol_sq = stop.tol * stop.tol;
        let every = stop.record_every.max(1);
        let mut k: u64 = 0;
        loop {
            let row = self.row(k, &cur, None, reference);
            let reached = on == StopOn::Primal && row.primal_res.is_some_and(|p| p < stop.tol);
            if reached || k >= stop.max_iter {
                record.rows.push(row);
                record.converged = reached;
                record.iterations = k;
                return Ok((cur, record));
            }
            self.step_into(&cur, &mut next, None)?;
            let fp = self.ts_dist_sq(&cur, &next);
            if !fp.is_finite() {
                return Err(GneError::Dimension(format!("iterate diverged at k = {k}")));
            }
            let settled = on == StopOn::FixedPoint && fp <= tol_sq;
            if k % every == 0 || settled {
                record.rows.push(Row { fp_res_sq: Some(fp), ..row });
            }
            std::mem::swap(&mut cur, &mut next);
            k += 1;
            if settled {
                record.rows.push(self.row(k, &cur, None, reference));
                record.converged = true;
                record.iterations = k;
                return Ok((cur, record));
            }
        }
    }

    fn ts_dist_sq(&self, a: &PrimalDualState<S>, b: &PrimalDualState<S>) -> f64 {
        let (n, nu) = (self.layout.n(), self.layout.u_len());
        let d = &self.ts;
        (weighted_dist_sq(&d[..n], &a.x, &b.x)
            + weighted_dist_sq(&d[n..n + nu], &a.u, &b.u)
            + weighted_dist_sq(&d[n + nu..], &a.w, &b.w))
        .as_f64()
    }

    fn row(&self, k: u64, state: &PrimalDualState<S>, fp: Option<f64>, reference: Option<&Reference<S>>) -> Row {
        let mut row = Row { k, fp_res_sq: fp, ..Default::default() };
        if let Some(r) = reference {
            let (p, d) = residuals(state, r);
            row.primal_res = Some(p);
            row.dual_res = Some(d);
            row.dist_sq = Some(self.ts_dist_sq(state, &r.state));
        }
        row
    }
}

/// Quantity compared against `StopRule::tol`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopOn {
    /// Primal residual when a reference is available, else the fixed-point residual.
    #[default]
    Auto,
    /// `||U_k - U_{k+1}||_{T_S} <= tol` (synchronous runs only).
    FixedPoint,
    /// Primal residual to the reference `< tol`.
    Primal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopRule {
    pub tol: f64,
    pub max_iter: u64,
    #[serde(default = "one")]
    pub record_every: u64,
    #[serde(default)]
    pub on: StopOn,
}

fn one() -> u64 {
    1
}

impl StopRule {
    pub fn new(tol: f64, max_iter: u64) -> Self {
        StopRule { tol, max_iter, record_every: 1, on: StopOn::Auto }
    }

    /// The concrete criterion given whether a reference is available.
    pub fn criterion(&self, has_reference: bool) -> Result<StopOn> {
        match (self.on, has_reference) {
            (StopOn::Primal, false) => Err(GneError::Config("stopping on the primal residual needs a reference".into())),
            (StopOn::Auto, true) => Ok(StopOn::Primal),
            (StopOn::Auto, false) => Ok(StopOn::FixedPoint),
            (on, _) => Ok(on),
        }
    }
}

/// One synchronous prediction-correction step and the predictions it used.
pub fn sync_step<S: Real>(
    game: &GameSpec<S>,
    graph: &CommGraph,
    steps: &StepSizes<S>,
    state: &PrimalDualState<S>,
) -> Result<(PrimalDualState<S>, Prediction<S>)> {
    let mut solver = SyncSolver::new(game, graph, steps, Variant::PredictCorrect)?;
    let mut next = state.clone();
    let lay = solver.layout().clone();
    let mut pred = Prediction {
        wbar: vec![S::zero(); lay.w_len()],
        ubar: vec![S::zero(); lay.u_len()],
        xbar: vec![S::zero(); lay.n()],
    };
    solver.step_into(state, &mut next, Some(&mut pred))?;
    Ok((next, pred))
}

/// One synchronous forward-backward step.
pub fn sync_fb_step<S: Real>(
    game: &GameSpec<S>,
    graph: &CommGraph,
    steps: &StepSizes<S>,
    state: &PrimalDualState<S>,
) -> Result<PrimalDualState<S>> {
    let mut solver = SyncSolver::new(game, graph, steps, Variant::ForwardBackward)?;
    let mut next = state.clone();
    solver.step_into(state, &mut next, None)?;
    Ok(next)
}

pub fn sync_run<S: Real>(
    game: &GameSpec<S>,
    graph: &CommGraph,
    steps: &StepSizes<S>,
    init: PrimalDualState<S>,
    stop: &StopRule,
    variant: Variant,
    reference: Option<&Reference<S>>,
) -> Result<(PrimalDualState<S>, RunRecord)> {
    SyncSolver::new(game, graph, steps, variant)?.run(init, stop, reference)
}
