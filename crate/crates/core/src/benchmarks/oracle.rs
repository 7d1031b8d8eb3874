//! Reference solutions: a tight synchronous run, cross-checked by a projected
//! extragradient method on the aggregate primal-dual operator.

use nalgebra::{DMatrix, DVector};

use crate::diagnostics::Reference;
use crate::error::{GneError, Result};
use crate::graph::CommGraph;
use crate::model::{GameSpec, PrimalDualState};
use crate::stepsizes::StepSizes;
use crate::sync::{sync_run, StopRule, Variant};

/// Fixed-point residual tolerance of the reference run.
pub const ORACLE_TOL: f64 = 1e-11;
const ORACLE_MAX_ITER: u64 = 10_000_000;
/// Relative disagreement between the two methods beyond which the instance is rejected.
const DISAGREEMENT_LIMIT: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub reference: Reference<f64>,
    pub sync_iterations: u64,
    pub extragradient: ExtragradientResult,
    /// `||x_sync - x_eg|| / ||x_sync||` (absolute when `x_sync = 0`).
    pub agreement: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtragradientResult {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub iterations: u64,
    /// Natural-map residual at the returned point.
    pub residual: f64,
    pub converged: bool,
}

fn project(game: &GameSpec<f64>, x: &mut [f64], lambda: &mut [f64]) {
    for i in 0..game.player_count() {
        let p = game.player(i);
        for (k, v) in x[game.range(i)].iter_mut().enumerate() {
            *v = v.clamp(p.lo[k], p.hi[k]);
        }
    }
    lambda.iter_mut().for_each(|l| *l = l.max(0.0));
}

/// Korpelevich extragradient on `G(x, l) = (F(x) + A^T l, b - A x)` over
/// `Omega x R^q_+`, with `A = [A_1 ... A_m]` and `b = sum b_i`.
pub fn extragradient(game: &GameSpec<f64>, tol: f64, max_iter: u64) -> Result<ExtragradientResult> {
    let aff = game.affine().ok_or(GneError::NonAffine)?;
    let (n, q) = (game.n(), game.q());
    let m = aff.to_dmatrix_f64();
    let a = game.coupling_matrix_f64();
    let b = DVector::from_vec(game.b_total());
    let mut jac = DMatrix::zeros(n + q, n + q);
    jac.view_mut((0, 0), (n, n)).copy_from(&m);
    jac.view_mut((0, n), (n, q)).copy_from(&a.transpose());
    jac.view_mut((n, 0), (q, n)).copy_from(&(-&a));
    let lip = jac.singular_values().max();
    let step = 0.9 / lip;
    let c0 = DVector::from_column_slice(&aff.offset);

    let g = |x: &DVector<f64>, l: &DVector<f64>| -> (DVector<f64>, DVector<f64>) {
        (&m * x + &c0 + a.transpose() * l, &b - &a * x)
    };
    let mut x = DVector::from_vec(game.box_centers());
    let mut l = DVector::zeros(q);
    let mut residual = f64::INFINITY;
    for it in 0..max_iter {
        let (gx, gl) = g(&x, &l);
        let mut xb = &x - &gx * step;
        let mut lb = &l - &gl * step;
        project(game, xb.as_mut_slice(), lb.as_mut_slice());
        residual = ((&x - &xb).norm_squared() + (&l - &lb).norm_squared()).sqrt() / step;
        if residual <= tol {
            return Ok(ExtragradientResult {
                x: x.iter().copied().collect(),
                lambda: l.iter().copied().collect(),
                iterations: it,
                residual,
                converged: true,
            });
        }
        let (gx, gl) = g(&xb, &lb);
        x -= &gx * step;
        l -= &gl * step;
        project(game, x.as_mut_slice(), l.as_mut_slice());
    }
    Ok(ExtragradientResult {
        x: x.iter().copied().collect(),
        lambda: l.iter().copied().collect(),
        iterations: max_iter,
        residual,
        converged: false,
    })
}

/// Reference fixed point `U*` and consensus multiplier for an instance.
pub fn solve_oracle(game: &GameSpec<f64>, graph: &CommGraph, steps: &StepSizes<f64>) -> Result<OracleSolution> {
    let init = PrimalDualState::initial(game, graph)?;
    let stop = StopRule { record_every: u64::MAX, ..StopRule::new(ORACLE_TOL, ORACLE_MAX_ITER) };
    let (state, record) = sync_run(game, graph, steps, init, &stop, Variant::PredictCorrect, None)?;
    if !record.converged {
        return Err(GneError::Oracle(format!("synchronous run did not reach {ORACLE_TOL:e} in {ORACLE_MAX_ITER} steps")));
    }
    let eg = extragradient(game, 1e-11, ORACLE_MAX_ITER)?;
    if !eg.converged {
        return Err(GneError::Oracle(format!("extragradient stalled at residual {:.3e}", eg.residual)));
    }
    let diff: f64 = state.x.iter().zip(&eg.x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = state.x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let agreement = if scale > crate::diagnostics::ZERO_NORM { diff / scale } else { diff };
    if agreement > DISAGREEMENT_LIMIT {
        return Err(GneError::Oracle(format!("methods disagree on x* by {agreement:.3e} (relative)")));
    }
    Ok(OracleSolution {
        reference: Reference::from_state(state),
        sync_iterations: record.iterations,
        extragradient: eg,
        agreement,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{estimate_constants, PlayerSpec};
    use crate::stepsizes::{default_recipe, uniform_probs, RecipeOptions};

    fn one_player(b: f64) -> (GameSpec<f64>, CommGraph) {
        let game = GameSpec::builder(1)
            .player(PlayerSpec { lo: vec![0.0], hi: vec![10.0], a: vec![1.0], b: vec![b] })
            .affine(vec![1.0], vec![-3.0])
            .build()
            .unwrap();
        (game, CommGraph::path(1).unwrap())
    }

    fn solve(game: &GameSpec<f64>, graph: &CommGraph) -> OracleSolution {
        let consts = estimate_constants(game).unwrap();
        let steps = default_recipe(game, graph, &consts, uniform_probs(1), 0, RecipeOptions::default()).unwrap();
        solve_oracle(game, graph, &steps).unwrap()
    }

    #[test]
    fn interior_optimum_has_zero_multiplier() {
        let (game, graph) = one_player(10.0);
        let sol = solve(&game, &graph);
        assert!((sol.reference.state.x[0] - 3.0).abs() < 1e-9);
        assert!(sol.reference.u_g[0].abs() < 1e-9);
    }

    #[test]
    fn binding_constraint_multiplier() {
        let (game, graph) = one_player(1.0);
        let sol = solve(&game, &graph);
        assert!((sol.reference.state.x[0] - 1.0).abs() < 1e-9);
        assert!((sol.reference.u_g[0] - 2.0).abs() < 1e-9);
        assert!((sol.extragradient.lambda[0] - 2.0).abs() < 1e-9);
    }
}
