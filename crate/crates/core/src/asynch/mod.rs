//! Asynchronous simulation: one randomly drawn player updates per iteration
//! from bounded-delay reads of everyone's variables.

mod checks;
mod history;
mod scheduler;

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use checks::{phi_metric, phi_operator_form, ExpectedStepReport, ReadCheckEntry};
pub use history::{player_block, DelayedView, HistoryWindow};
pub use scheduler::{DelayPolicy, Scheduler};

use crate::diagnostics::{dual_term, primal_term, Reference, Row, RunRecord};
use crate::error::{GneError, Result};
use crate::graph::CommGraph;
use crate::model::{GameSpec, Layout, PrimalDualState, StateRead};
use crate::scalar::Real;
use crate::stepsizes::{ts_condition, ts_diagonal, StepSizes};
use crate::sync::{Kernel, StopOn, StopRule, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    pub seed: u64,
    pub delay: DelayPolicy,
}

/// What one activation did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub k: u64,
    pub active: usize,
    /// Read delay applied to each player's variables.
    pub delays: Vec<usize>,
    /// `||U_k - U_{k+1}||^2_{T_S}`
    pub step_norm_sq: f64,
}

/// Per-player `T_S` weights in block order `[x_i | u_i | owned w halves]`.
fn block_weights<S: Real>(steps: &StepSizes<S>, layout: &Layout, graph: &CommGraph, i: usize) -> Vec<S> {
    let mut w = vec![S::one() / steps.tau[i]; layout.x_range(i).len()];
    w.extend(std::iter::repeat_n(S::one() / steps.sigma[i], layout.q));
    for inc in graph.incidences(i) {
        w.extend(std::iter::repeat_n(S::one() / steps.kappa[inc.edge], layout.q));
    }
    w
}

/// Stacked indices of player `i`'s block, in block order.
pub(crate) fn block_indices(layout: &Layout, graph: &CommGraph, i: usize) -> Vec<usize> {
    let (n, nu) = (layout.n(), layout.u_len());
    let mut idx: Vec<usize> = layout.x_range(i).collect();
    idx.extend(layout.u_range(i).map(|r| n + r));
    for inc in graph.incidences(i) {
        idx.extend(layout.w_range(inc.edge, inc.side).map(|r| n + nu + r));
    }
    idx
}

struct Metrics {
    ref_blocks: Vec<Vec<f64>>,
    u_g: Vec<f64>,
    primal: Vec<f64>,
    dual: Vec<f64>,
    dist: Vec<f64>,
}

pub struct AsyncSim<'a, S> {
    game: &'a GameSpec<S>,
    graph: &'a CommGraph,
    steps: &'a StepSizes<S>,
    variant: Variant,
    layout: Arc<Layout>,
    history: HistoryWindow<S>,
    sched: Scheduler,
    kernel: Kernel<S>,
    k: u64,
    x_full: Vec<S>,
    delays: Vec<usize>,
    times: Vec<u64>,
    block: Vec<S>,
    weights: Vec<Vec<S>>,
    /// Active players of the last `eps` iterations, oldest first.
    acts: VecDeque<usize>,
    /// `||U_d - U_{d+1}||^2_{T_S}` of the last `eps` iterations, oldest first.
    step_log: VecDeque<f64>,
    phi_coef: f64,
    metrics: Option<Metrics>,
    read_check: Option<checks::ReadCheckLog<S>>,
}

impl<'a, S: Real> AsyncSim<'a, S> {
    pub fn new(
        game: &'a GameSpec<S>,
        graph: &'a CommGraph,
        steps: &'a StepSizes<S>,
        variant: Variant,
        init: &PrimalDualState<S>,
        sched: &SchedulerConfig,
    ) -> Result<Self> {
        let layout = Layout::new(game, graph)?;
        steps.check_shape(game.player_count(), graph.edge_count())?;
        if **init.layout() != *layout {
            return Err(GneError::Dimension("initial state layout does not match the game and graph".into()));
        }
        let probs: Vec<f64> = steps.probs.iter().map(|p| p.as_f64()).collect();
        let scheduler = Scheduler::new(&probs, steps.eps, sched.delay, sched.seed)?;
        let kappa_ts = ts_condition(&ts_diagonal(steps, &layout)).as_f64();
        let m = layout.m;
        Ok(AsyncSim {
            game,
            graph,
            steps,
            variant,
            history: HistoryWindow::new(init, graph, steps.eps),
            sched: scheduler,
            kernel: Kernel::new(&layout, graph),
            k: 0,
            x_full: vec![S::zero(); layout.n()],
            delays: vec![0; m],
            times: vec![0; m],
            block: Vec::new(),
            weights: (0..m).map(|i| block_weights(steps, &layout, graph, i)).collect(),
            acts: VecDeque::with_capacity(steps.eps + 1),
            step_log: VecDeque::with_capacity(steps.eps + 1),
            phi_coef: (steps.p_min().as_f64() / kappa_ts).sqrt(),
            metrics: None,
            read_check: None,
            layout,
        })
    }

    /// Tracks residuals, distance and the Lyapunov metric against `reference`.
    pub fn set_reference(&mut self, reference: &Reference<S>) -> Result<()> {
        if **reference.state.layout() != *self.layout {
            return Err(GneError::Dimension("reference layout does not match".into()));
        }
        let m = self.layout.m;
        let ref_blocks: Vec<Vec<f64>> = (0..m)
            .map(|i| player_block(&reference.state, self.graph, i).iter().map(|v| v.as_f64()).collect())
            .collect();
        let mut metrics = Metrics {
            ref_blocks,
            u_g: reference.u_g.iter().map(|v| v.as_f64()).collect(),
            primal: vec![0.0; m],
            dual: vec![0.0; m],
            dist: vec![0.0; m],
        };
        for i in 0..m {
            update_metrics(&mut metrics, &self.layout, &self.weights[i], i, self.history.current(i));
        }
        self.metrics = Some(metrics);
        Ok(())
    }

    /// Records every activation and checks the delayed-read identity at each step.
    pub fn enable_read_check(&mut self) {
        self.read_check = Some(checks::ReadCheckLog::new(self.history.current_state()));
    }

    pub fn read_checks(&self) -> Option<&[ReadCheckEntry]> {
        self.read_check.as_ref().map(|l| l.entries.as_slice())
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn history(&self) -> &HistoryWindow<S> {
        &self.history
    }

    pub fn state(&self) -> PrimalDualState<S> {
        self.history.current_state()
    }

    /// `sqrt(p_min / cond(T_S))`, the weight of the delay terms in the Lyapunov metric.
    pub fn phi_coef(&self) -> f64 {
        self.phi_coef
    }

    /// `(primal, dual, dist_sq, phi)` at the current iterate.
    pub fn metrics(&self) -> Option<(f64, f64, f64, f64)> {
        let mt = self.metrics.as_ref()?;
        let dist: f64 = mt.dist.iter().sum();
        let eps = self.steps.eps;
        let lag: f64 = self.step_log.iter().rev().enumerate().map(|(r, s)| (eps - r) as f64 * s).sum();
        Some((mt.primal.iter().sum(), mt.dual.iter().sum(), dist, dist + self.phi_coef * lag))
    }

    /// Activation `i_d` for `d` within the last `eps` iterations.
    fn active_at(&self, d: u64) -> usize {
        self.acts[self.acts.len() - (self.k - d) as usize]
    }

    /// One activation with delays drawn by the scheduler.
    pub fn step(&mut self) -> StepInfo {
        let i = self.sched.next_player();
        let mut delays = std::mem::take(&mut self.delays);
        self.sched.delays(self.k, &mut delays);
        let info = self.step_with(i, &delays);
        self.delays = delays;
        info
    }

    /// One activation of player `i` reading player `j` with delay `delays[j]` (clipped to `k`).
    pub fn step_with(&mut self, i: usize, delays: &[usize]) -> StepInfo {
        let k = self.k;
        let q = self.layout.q;
        for (t, &d) in self.times.iter_mut().zip(delays) {
            *t = k - (d as u64).min(k);
        }
        let view = self.history.view(&self.times);
        for j in 0..self.layout.m {
            self.x_full[self.layout.x_range(j)].copy_from_slice(view.x(j));
        }
        self.kernel.apply(self.game, self.graph, self.steps, &view, &self.x_full, i, self.variant);
        let n_i = self.layout.x_range(i).len();
        let deg = self.graph.degree(i);
        let out = self.kernel.xbar[..n_i]
            .iter()
            .chain(&self.kernel.out_u)
            .chain(&self.kernel.out_w[..deg * q]);
        let eta_i = self.steps.eta_i(i);
        let cur = self.history.current(i);
        let delayed = view.block(i);
        self.block.clear();
        self.block.extend(out.zip(cur.iter().zip(delayed)).map(|(&o, (&c, &d))| c + eta_i * (o - d)));
        let step_norm_sq: f64 = self.weights[i]
            .iter()
            .zip(self.block.iter().zip(cur))
            .map(|(&w, (&a, &b))| (w * (a - b) * (a - b)).as_f64())
            .sum();
        if self.read_check.is_some() {
            let delayed_state = PrimalDualState::from_view(self.layout.clone(), &view);
            let eps = self.steps.eps as u64;
            let hidden: Vec<(u64, usize)> = (k.saturating_sub(eps)..k)
                .map(|d| (d, self.active_at(d)))
                .filter(|&(d, j)| d >= self.times[j])
                .collect();
            let log = self.read_check.as_mut().unwrap();
            log.check(k, i, &self.times.iter().map(|&t| (k - t) as usize).collect::<Vec<_>>(), hidden, &delayed_state, self.graph);
        }

        self.history.commit(i, k + 1, &self.block);
        if let Some(mt) = self.metrics.as_mut() {
            update_metrics(mt, &self.layout, &self.weights[i], i, &self.block);
        }
        let eps = self.steps.eps;
        if eps > 0 {
            if self.acts.len() == eps {
                self.acts.pop_front();
                self.step_log.pop_front();
            }
            self.acts.push_back(i);
            self.step_log.push_back(step_norm_sq);
        }
        self.k += 1;
        if let Some(log) = self.read_check.as_mut() {
            log.push_state(self.history.current_state(), eps);
        }
        StepInfo {
            k,
            active: i,
            delays: self.times.iter().map(|&t| (k - t) as usize).collect(),
            step_norm_sq,
        }
    }

    /// Runs until the primal residual drops below `stop.tol` or `stop.max_iter`
    /// activations. Without a reference the run always goes to `max_iter`.
    pub fn run(&mut self, stop: &StopRule) -> Result<RunRecord> {
        match stop.criterion(self.metrics.is_some())? {
            StopOn::FixedPoint if self.metrics.is_none() => {}
            StopOn::FixedPoint => {
                return Err(GneError::Config("asynchronous runs stop on the primal residual only".into()))
            }
            _ => {}
        }
        let mut record = RunRecord::default();
        let every = stop.record_every.max(1);
        loop {
            let m = self.metrics();
            let reached = m.is_some_and(|(p, ..)| p < stop.tol);
            if reached || self.k >= stop.max_iter {
                record.rows.push(self.row());
                record.converged = reached;
                record.iterations = self.k;
                return Ok(record);
            }
            let before = self.row();
            let info = self.step();
            if !info.step_norm_sq.is_finite() {
                return Err(GneError::Dimension(format!("iterate diverged at k = {}", info.k)));
            }
            if info.k % every == 0 {
                record.rows.push(Row {
                    fp_res_sq: Some(info.step_norm_sq),
                    activation: Some(info.active),
                    max_delay_seen: info.delays.iter().copied().max(),
                    ..before
                });
            }
        }
    }

    fn row(&self) -> Row {
        let mut row = Row { k: self.k, ..Default::default() };
        if let Some((p, d, dist, phi)) = self.metrics() {
            row.primal_res = Some(p);
            row.dual_res = Some(d);
            row.dist_sq = Some(dist);
            row.phi = Some(phi);
        }
        row
    }

    /// Checks the one-step expectation bounds at the current iterate by exact
    /// enumeration over the active player, for a fixed delay assignment.
    pub fn expected_step_check(&self, delays: &[usize], reference: &Reference<S>) -> Result<ExpectedStepReport> {
        checks::expected_step(self, delays, reference)
    }
}

fn update_metrics<S: Real>(mt: &mut Metrics, layout: &Layout, w: &[S], i: usize, block: &[S]) {
    let n_i = layout.x_range(i).len();
    let rb = &mt.ref_blocks[i];
    let xs: Vec<f64> = block[..n_i].iter().map(|v| v.as_f64()).collect();
    let us: Vec<f64> = block[n_i..n_i + layout.q].iter().map(|v| v.as_f64()).collect();
    mt.primal[i] = primal_term(&xs, &rb[..n_i]);
    mt.dual[i] = dual_term(&us, &mt.u_g, layout.m);
    mt.dist[i] = w.iter().zip(block.iter().zip(rb)).map(|(&w, (&a, &b))| w.as_f64() * (a.as_f64() - b).powi(2)).sum();
}

/// Runs the asynchronous iteration from `init`.
#[allow(clippy::too_many_arguments)]
pub fn async_run<S: Real>(
    game: &GameSpec<S>,
    graph: &CommGraph,
    steps: &StepSizes<S>,
    init: &PrimalDualState<S>,
    sched: &SchedulerConfig,
    stop: &StopRule,
    variant: Variant,
    reference: Option<&Reference<S>>,
) -> Result<(PrimalDualState<S>, RunRecord)> {
    let mut sim = AsyncSim::new(game, graph, steps, variant, init, sched)?;
    let mut flags = Vec::new();
    if let Some(r) = reference {
        sim.set_reference(r)?;
        flags = r.absolute_components();
    }
    let mut record = sim.run(stop)?;
    record.flags = flags;
    Ok((sim.state(), record))
}

/// One activation of player `i` with the given per-player delays, from a fresh
/// history holding only `state` (all delays resolve to `state`).
pub fn async_step<S: Real>(
    game: &GameSpec<S>,
    graph: &CommGraph,
    steps: &StepSizes<S>,
    state: &PrimalDualState<S>,
    i: usize,
    variant: Variant,
) -> Result<PrimalDualState<S>> {
    let mut sim = AsyncSim::new(game, graph, steps, variant, state, &SchedulerConfig::default())?;
    if i >= game.player_count() {
        return Err(GneError::InvalidPlayer { player: i, detail: "no such player".into() });
    }
    sim.step_with(i, &vec![0; game.player_count()]);
    Ok(sim.state())
}

#[cfg(test)]
mod tests;
