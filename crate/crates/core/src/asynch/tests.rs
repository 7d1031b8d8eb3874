use super::*;
use crate::benchmarks::solve_oracle;
use crate::model::{estimate_constants, PlayerSpec};
use crate::stepsizes::{default_recipe, uniform_probs, RecipeOptions};
use crate::sync::sync_step;

fn triangle() -> (GameSpec<f64>, CommGraph) {
    let mut b = GameSpec::builder(1);
    for i in 0..3 {
        b = b.player(PlayerSpec { lo: vec![0.0], hi: vec![4.0], a: vec![1.0], b: vec![1.0 + i as f64 * 0.2] });
    }
    let game = b
        .affine(vec![2.0, 0.3, 0.1, 0.3, 1.5, 0.2, 0.1, 0.2, 1.8], vec![-4.0, -3.0, -5.0])
        .build()
        .unwrap();
    (game, CommGraph::ring(3).unwrap())
}

fn steps_for(game: &GameSpec<f64>, graph: &CommGraph, eps: usize) -> StepSizes<f64> {
    let consts = estimate_constants(game).unwrap();
    default_recipe(game, graph, &consts, uniform_probs(3), eps, RecipeOptions::default()).unwrap()
}

#[test]
fn unit_relaxation_without_delay_matches_synchronous_block() {
    let (game, graph) = triangle();
    let mut steps = steps_for(&game, &graph, 0);
    steps.eta = 1.0;
    let s = PrimalDualState::initial(&game, &graph).unwrap();
    let (full, _) = sync_step(&game, &graph, &steps, &s).unwrap();
    for i in 0..3 {
        let one = async_step(&game, &graph, &steps, &s, i, Variant::PredictCorrect).unwrap();
        for j in 0..3 {
            let want = if i == j { player_block(&full, &graph, j) } else { player_block(&s, &graph, j) };
            assert_eq!(player_block(&one, &graph, j), want);
        }
    }
}

#[test]
fn delayed_reads_satisfy_identity() {
    let (game, graph) = triangle();
    let steps = steps_for(&game, &graph, 3);
    let init = PrimalDualState::initial(&game, &graph).unwrap();
    let mut sim = AsyncSim::new(&game, &graph, &steps, Variant::PredictCorrect, &init, &SchedulerConfig { seed: 4, ..Default::default() })
        .unwrap();
    sim.enable_read_check();
    for _ in 0..400 {
        sim.step();
    }
    let log = sim.read_checks().unwrap();
    assert_eq!(log.len(), 400);
    assert!(log.iter().all(|e| e.telescoped_exact && e.residual <= 1e-12));
    assert!(log.iter().any(|e| !e.j_set.is_empty()));
    assert!(log.iter().all(|e| e.delays.iter().all(|&d| d <= 3) && e.j_set.len() <= 3));
}

#[test]
fn tracked_phi_matches_window_formulas() {
    let (game, graph) = triangle();
    let steps = steps_for(&game, &graph, 2);
    let oracle = solve_oracle(&game, &graph, &steps).unwrap();
    let init = PrimalDualState::initial(&game, &graph).unwrap();
    let mut sim = AsyncSim::new(&game, &graph, &steps, Variant::PredictCorrect, &init, &SchedulerConfig::default()).unwrap();
    sim.set_reference(&oracle.reference).unwrap();
    let ts = ts_diagonal(&steps, sim.layout());
    let ustar = oracle.reference.state.stacked();
    for _ in 0..50 {
        sim.step();
        let k = sim.k();
        let window: Vec<Vec<f64>> = (0..=2).map(|l| sim.history().state_at(k.saturating_sub(l)).stacked()).collect();
        let (.., phi) = sim.metrics().unwrap();
        let a = phi_metric(&window, &ustar, &ts, sim.phi_coef());
        let b = phi_operator_form(&window, &ustar, &ts, sim.phi_coef());
        assert!((phi - a).abs() <= 1e-10 * (1.0 + a));
        assert!((a - b).abs() <= 1e-10 * (1.0 + a));
    }
}

#[test]
fn expected_step_bounds_hold_on_a_short_run() {
    let (game, graph) = triangle();
    let steps = steps_for(&game, &graph, 2);
    let oracle = solve_oracle(&game, &graph, &steps).unwrap();
    let init = PrimalDualState::initial(&game, &graph).unwrap();
    let mut sim = AsyncSim::new(&game, &graph, &steps, Variant::PredictCorrect, &init, &SchedulerConfig::default()).unwrap();
    for n in 0..30 {
        let r = sim.expected_step_check(&[n % 3, 2, 1], &oracle.reference).unwrap();
        assert!(r.dist_slack() >= -1e-10, "{r:?}");
        assert!(r.phi_slack() >= -1e-10, "{r:?}");
        sim.step();
    }
}

#[test]
fn at_the_fixed_point_nothing_moves() {
    let (game, graph) = triangle();
    let steps = steps_for(&game, &graph, 2);
    let oracle = solve_oracle(&game, &graph, &steps).unwrap();
    let mut sim =
        AsyncSim::new(&game, &graph, &steps, Variant::PredictCorrect, &oracle.reference.state, &SchedulerConfig::default())
            .unwrap();
    let r = sim.expected_step_check(&[1, 2, 0], &oracle.reference).unwrap();
    assert!(r.gap_sq < 1e-18 && r.expected_dist_sq < 1e-18);
    let info = sim.step();
    assert!(info.step_norm_sq < 1e-18);
}

#[test]
fn runs_are_reproducible_and_converge() {
    let (game, graph) = triangle();
    let steps = steps_for(&game, &graph, 2);
    let oracle = solve_oracle(&game, &graph, &steps).unwrap();
    let init = PrimalDualState::initial(&game, &graph).unwrap();
    let stop = StopRule { record_every: 100, ..StopRule::new(1e-3, 2_000_000) };
    let cfg = SchedulerConfig { seed: 7, ..Default::default() };
    let run = || async_run(&game, &graph, &steps, &init, &cfg, &stop, Variant::PredictCorrect, Some(&oracle.reference)).unwrap();
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    assert!(ra.converged, "{:?}", ra.last());
    assert!(ra.is_well_formed());
    assert!(ra.rows.iter().all(|r| r.max_delay_seen.is_none_or(|d| d <= 2)));
}
