use edgegne::benchmarks::{gen_cournot, CournotConfig};
use edgegne::model::{GameSpec, PrimalDualState};
use edgegne::operators::{
    assemble_matrices, averagedness_slack, project_box, project_nonneg, project_pair_consensus, prox_conjugate_edge,
    prox_conjugate_edge_closed,
};
use edgegne::stepsizes::{default_recipe, probs_with_min, ts_diagonal, uniform_probs, weighted_dist_sq, RecipeOptions};
use edgegne::{estimate_constants, CommGraph, Layout, PlayerSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vec_of(len: usize, r: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-r..r, len)
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

proptest! {
    #[test]
    fn box_projection_is_idempotent_and_nonexpansive(
        (z1, z2, lo, width) in (1usize..6).prop_flat_map(|n| (vec_of(n, 10.0), vec_of(n, 10.0), vec_of(n, 5.0), prop::collection::vec(0.0..5.0, n)))
    ) {
        let hi: Vec<f64> = lo.iter().zip(&width).map(|(l, w)| l + w).collect();
        let p1 = project_box(&z1, &lo, &hi);
        let p2 = project_box(&z2, &lo, &hi);
        prop_assert_eq!(project_box(&p1, &lo, &hi), p1.clone());
        prop_assert!(sq(&p1, &p2) <= sq(&z1, &z2) + 1e-12);
        prop_assert!(p1.iter().zip(lo.iter().zip(&hi)).all(|(v, (l, h))| l <= v && v <= h));
    }

    #[test]
    fn orthant_projection_keeps_the_positive_part(z in vec_of(8, 10.0)) {
        let p = project_nonneg(&z);
        for (a, b) in z.iter().zip(&p) {
            prop_assert_eq!(*b, a.max(0.0));
        }
    }

    #[test]
    fn pair_consensus_projection_is_orthogonal(z1 in vec_of(4, 10.0), z2 in vec_of(4, 10.0)) {
        let (a, b) = project_pair_consensus(&z1, &z2);
        for r in 0..4 {
            prop_assert!((a[r] + b[r]).abs() <= 1e-15);
            // The residual is orthogonal to the subspace {(v, -v)}.
            let ra = z1[r] - a[r];
            let rb = z2[r] - b[r];
            prop_assert!((ra - rb).abs() <= 1e-12 * (1.0 + z1[r].abs() + z2[r].abs()));
        }
    }

    #[test]
    fn edge_prox_matches_closed_form(
        w1 in vec_of(3, 50.0), w2 in vec_of(3, 50.0), p1 in vec_of(3, 50.0), p2 in vec_of(3, 50.0), kappa in 1e-3..100.0f64
    ) {
        let a = prox_conjugate_edge((&w1, &w2), kappa, (&p1, &p2)).unwrap();
        let b = prox_conjugate_edge_closed((&w1, &w2), kappa, (&p1, &p2)).unwrap();
        let scale = 1.0 + w1.iter().chain(&w2).map(|v| v.abs()).fold(0.0, f64::max)
            + kappa * p1.iter().chain(&p2).map(|v| v.abs()).fold(0.0, f64::max);
        for (x, y) in a.0.iter().chain(&a.1).zip(b.0.iter().chain(&b.1)) {
            prop_assert!((x - y).abs() <= 1e-13 * scale);
        }
        prop_assert_eq!(&b.0, &b.1);
    }

    #[test]
    fn nonpositive_kappa_is_rejected(kappa in -10.0..=0.0f64) {
        let v = [1.0];
        prop_assert!(prox_conjugate_edge((&v, &v), kappa, (&v, &v)).is_err());
        prop_assert!(prox_conjugate_edge_closed((&v, &v), kappa, (&v, &v)).is_err());
    }

    #[test]
    fn probabilities_with_a_floor_sum_to_one(m in 2usize..30, frac in 0.01..1.0f64) {
        let p_min = frac / m as f64;
        let p: Vec<f64> = probs_with_min(m, p_min).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!((p.iter().cloned().fold(f64::INFINITY, f64::min) - p_min).abs() <= 1e-12);
    }
}

fn small_game(m: usize) -> (GameSpec<f64>, CommGraph) {
    let mut b = GameSpec::builder(2);
    for i in 0..m {
        let s = i as f64;
        b = b.player(PlayerSpec { lo: vec![0.0], hi: vec![5.0], a: vec![1.0, 0.5 + 0.1 * s], b: vec![1.0, 1.5] });
    }
    let mut mat = vec![0.2; m * m];
    for i in 0..m {
        mat[i * m + i] = 2.0 + 0.1 * i as f64;
    }
    let game = b.affine(mat, (0..m).map(|i| -3.0 - i as f64).collect()).build().unwrap();
    (game, CommGraph::ring(m).unwrap())
}

#[test]
fn skew_and_diagonal_structure_of_the_splitting() {
    for m in 3..7 {
        let (game, graph) = small_game(m);
        let consts = estimate_constants(&game).unwrap();
        let steps = default_recipe(&game, &graph, &consts, uniform_probs(m), 2, RecipeOptions::default()).unwrap();
        let mats = assemble_matrices(&game, &graph, &steps, &consts).unwrap();
        let skew = &mats.t_k + mats.t_k.transpose();
        assert!(skew.amax() <= 1e-15, "T_K is not skew for m = {m}");
        let off = &mats.t_s - nalgebra::DMatrix::from_diagonal(&mats.t_s.diagonal());
        assert_eq!(off.amax(), 0.0);
        let layout = Layout::new(&game, &graph).unwrap();
        let diag = ts_diagonal(&steps, &layout);
        for (k, d) in diag.iter().enumerate() {
            assert_eq!(*d, mats.t_s[(k, k)]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn averagedness_holds_for_random_pairs(seed in 0u64..1000, scale in 0.1..100.0f64, salt in any::<u64>()) {
        let inst = gen_cournot(&CournotConfig::with_seed(seed % 5)).unwrap();
        let steps = default_recipe(&inst.game, &inst.graph, &inst.consts, uniform_probs(10), 3, RecipeOptions::default()).unwrap();
        let mats = assemble_matrices(&inst.game, &inst.graph, &steps, &inst.consts).unwrap();
        let dim = mats.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(salt);
        let mut gen = || -> Vec<f64> { (0..dim).map(|_| rng.random_range(-0.5 * scale..0.5 * scale)).collect() };
        let (u, z) = (gen(), gen());
        let slack = averagedness_slack(&mats, &inst.game, &u, &z, steps.gamma()).unwrap();
        prop_assert!(slack >= -1e-10 * scale * scale);
    }

    #[test]
    fn weighted_distance_is_a_metric(a in vec_of(6, 10.0), b in vec_of(6, 10.0), c in vec_of(6, 10.0), d in prop::collection::vec(0.01..10.0f64, 6)) {
        let ab = weighted_dist_sq(&d, &a, &b).sqrt();
        let bc = weighted_dist_sq(&d, &b, &c).sqrt();
        let ac = weighted_dist_sq(&d, &a, &c).sqrt();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(weighted_dist_sq(&d, &a, &a), 0.0);
        prop_assert!((ab - weighted_dist_sq(&d, &b, &a).sqrt()).abs() <= 1e-12);
        prop_assert!(ac <= ab + bc + 1e-9);
    }
}

#[test]
fn state_round_trips_through_the_stacked_vector() {
    let (game, graph) = small_game(4);
    let mut s = PrimalDualState::initial(&game, &graph).unwrap();
    for (k, v) in s.w.iter_mut().enumerate() {
        *v = k as f64 * 0.5 - 1.0;
    }
    s.u.iter_mut().enumerate().for_each(|(k, v)| *v = k as f64);
    let back = PrimalDualState::from_stacked(s.layout().clone(), &s.stacked()).unwrap();
    assert_eq!(back, s);
    assert!(PrimalDualState::from_stacked(s.layout().clone(), &s.stacked()[1..]).is_err());
}
