//! Projection and proximal primitives, plus dense assembly of the splitting
//! matrices and the fixed-point operator `T` for small verification instances.
//!
//! Stacked vectors follow [`Layout`]: `x` blocks per player, then `u` blocks per
//! player, then for each canonical edge the low-side and high-side `w` halves.

use nalgebra::{DMatrix, DVector};

use crate::error::{GneError, Result};
use crate::graph::{CommGraph, Side};
use crate::model::{GameSpec, Layout, MonotonicityConstants};
use crate::scalar::Real;
use crate::stepsizes::StepSizes;

/// Largest stacked dimension accepted by [`assemble_matrices`].
pub const DENSE_ROW_LIMIT: usize = 500;

pub fn project_box<S: Real>(z: &[S], lo: &[S], hi: &[S]) -> Vec<S> {
    z.iter().zip(lo.iter().zip(hi)).map(|(&v, (&l, &h))| v.max(l).min(h)).collect()
}

pub fn project_box_in_place<S: Real>(z: &mut [S], lo: &[S], hi: &[S]) {
    for (v, (&l, &h)) in z.iter_mut().zip(lo.iter().zip(hi)) {
        *v = v.max(l).min(h);
    }
}

pub fn project_nonneg<S: Real>(z: &[S]) -> Vec<S> {
    z.iter().map(|&v| v.max(S::zero())).collect()
}

/// Projection onto `{(a, b) : a + b = 0}`: `((z1 - z2)/2, (z2 - z1)/2)`.
pub fn project_pair_consensus<S: Real>(z1: &[S], z2: &[S]) -> (Vec<S>, Vec<S>) {
    let half = S::lit(0.5);
    let a: Vec<S> = z1.iter().zip(z2).map(|(&p, &q)| half * (p - q)).collect();
    let b = a.iter().map(|&v| -v).collect();
    (a, b)
}

/// Proximal step on the conjugate of the edge indicator via the Moreau decomposition:
/// `z - kappa P_C(z / kappa)` with `z = w + kappa pi_u`.
pub fn prox_conjugate_edge<S: Real>(
    w: (&[S], &[S]),
    kappa: S,
    pi_u: (&[S], &[S]),
) -> Result<(Vec<S>, Vec<S>)> {
    if !(kappa > S::zero()) {
        return Err(GneError::StepSize(format!("kappa = {kappa} must be positive")));
    }
    let z1: Vec<S> = w.0.iter().zip(pi_u.0).map(|(&a, &p)| a + kappa * p).collect();
    let z2: Vec<S> = w.1.iter().zip(pi_u.1).map(|(&a, &p)| a + kappa * p).collect();
    let s1: Vec<S> = z1.iter().map(|&v| v / kappa).collect();
    let s2: Vec<S> = z2.iter().map(|&v| v / kappa).collect();
    let (p1, p2) = project_pair_consensus(&s1, &s2);
    Ok((
        z1.iter().zip(&p1).map(|(&z, &p)| z - kappa * p).collect(),
        z2.iter().zip(&p2).map(|(&z, &p)| z - kappa * p).collect(),
    ))
}

/// Closed form of [`prox_conjugate_edge`]: both halves equal
/// `(w_1 + w_2)/2 + kappa (pi_1 + pi_2)/2`.
pub fn prox_conjugate_edge_closed<S: Real>(
    w: (&[S], &[S]),
    kappa: S,
    pi_u: (&[S], &[S]),
) -> Result<(Vec<S>, Vec<S>)> {
    if !(kappa > S::zero()) {
        return Err(GneError::StepSize(format!("kappa = {kappa} must be positive")));
    }
    let half = S::lit(0.5);
    let v: Vec<S> = (0..w.0.len())
        .map(|r| half * (w.0[r] + w.1[r]) + half * kappa * (pi_u.0[r] + pi_u.1[r]))
        .collect();
    Ok((v.clone(), v))
}

/// Dense splitting matrices, in `f64`.
#[derive(Debug, Clone)]
pub struct SplittingMatrices {
    pub layout: Layout,
    pub gamma: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub wmat: DMatrix<f64>,
    pub pi: DMatrix<f64>,
    pub a_big: DMatrix<f64>,
    pub b: DVector<f64>,
    pub t_s: DMatrix<f64>,
    pub t_m: DMatrix<f64>,
    pub t_p: DMatrix<f64>,
    pub t_k: DMatrix<f64>,
    pub t_h: DMatrix<f64>,
    pub t_ptilde: DMatrix<f64>,
    pub theta: DMatrix<f64>,
}

fn inv_diag(d: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(&d.diagonal().map(|v| 1.0 / v))
}

/// Writes a 3x3 block matrix with the stacked layout's block sizes.
fn blocks3(sizes: [usize; 3], blocks: [[Option<&DMatrix<f64>>; 3]; 3]) -> DMatrix<f64> {
    let total: usize = sizes.iter().sum();
    let starts = [0, sizes[0], sizes[0] + sizes[1]];
    let mut out = DMatrix::zeros(total, total);
    for (r, row) in blocks.iter().enumerate() {
        for (c, block) in row.iter().enumerate() {
            if let Some(b) = block {
                out.view_mut((starts[r], starts[c]), (sizes[r], sizes[c])).copy_from(*b);
            }
        }
    }
    out
}

pub fn assemble_matrices<S: Real>(
    game: &GameSpec<S>,
    graph: &CommGraph,
    steps: &StepSizes<S>,
    consts: &MonotonicityConstants<S>,
) -> Result<SplittingMatrices> {
    let layout = Layout::new(game, graph)?;
    steps.check_shape(game.player_count(), graph.edge_count())?;
    let rows = layout.total();
    if rows > DENSE_ROW_LIMIT {
        return Err(GneError::TooLarge { rows, limit: DENSE_ROW_LIMIT });
    }
    let (m, q, n) = (layout.m, layout.q, layout.n());
    let (nu, nw) = (layout.u_len(), layout.w_len());

    let mut gamma = DMatrix::zeros(n, n);
    let mut sigma = DMatrix::zeros(nu, nu);
    let mut theta_x = DMatrix::zeros(n, n);
    let mut theta_u = DMatrix::zeros(nu, nu);
    let mut a_big = DMatrix::zeros(nu, n);
    let mut b = DVector::zeros(nu);
    for i in 0..m {
        let p = game.player(i);
        let xr = layout.x_range(i);
        let ur = layout.u_range(i);
        for k in xr.clone() {
            gamma[(k, k)] = steps.tau[i].as_f64();
            theta_x[(k, k)] = steps.alpha[i].as_f64();
        }
        for k in ur.clone() {
            sigma[(k, k)] = steps.sigma[i].as_f64();
            theta_u[(k, k)] = steps.alpha[i].as_f64();
        }
        let n_i = p.dim();
        for r in 0..q {
            b[ur.start + r] = p.b[r].as_f64();
            for c in 0..n_i {
                a_big[(ur.start + r, xr.start + c)] = p.a[r * n_i + c].as_f64();
            }
        }
    }

    let mut wmat = DMatrix::zeros(nw, nw);
    let mut theta_w = DMatrix::zeros(nw, nw);
    let mut pi = DMatrix::zeros(nw, nu);
    for (e, _) in graph.edges().iter().enumerate() {
        for side in [Side::Low, Side::High] {
            let owner = graph.owner(e, side);
            let wr = layout.w_range(e, side);
            let ur = layout.u_range(owner);
            for r in 0..q {
                wmat[(wr.start + r, wr.start + r)] = steps.kappa[e].as_f64();
                theta_w[(wr.start + r, wr.start + r)] = steps.alpha[owner].as_f64();
                pi[(wr.start + r, ur.start + r)] = side.sign::<f64>();
            }
        }
    }

    let sizes = [n, nu, nw];
    let gi = inv_diag(&gamma);
    let si = inv_diag(&sigma);
    let wi = inv_diag(&wmat);
    let at = a_big.transpose();
    let pit = pi.transpose();
    let neg_a = -&a_big;
    let neg_pi = -&pi;

    let t_s = blocks3(sizes, [[Some(&gi), None, None], [None, Some(&si), None], [None, None, Some(&wi)]]);
    let t_m = blocks3(sizes, [[None, Some(&at), None], [Some(&neg_a), None, Some(&pit)], [None, Some(&neg_pi), None]]);
    let t_k = &t_m * 0.5;
    let (at2, a2, pit2, pi2) = (&at * 0.5, &a_big * 0.5, &pit * 0.5, &pi * 0.5);
    let t_p = blocks3(
        sizes,
        [[Some(&gi), Some(&at2), None], [Some(&a2), Some(&si), Some(&pit2)], [None, Some(&pi2), Some(&wi)]],
    );
    let t_h = &t_p + &t_k;

    let mu = consts.mu.as_f64();
    let l = consts.l_f.as_f64();
    let p11 = &gi * 2.0 - DMatrix::identity(n, n) * (l * l / (2.0 * mu));
    let p13 = &at * &sigma * &pit;
    let p31 = &pi * &sigma * &a_big;
    let (si2, wi2) = (&si * 2.0, &wi * 2.0);
    let t_ptilde = blocks3(
        sizes,
        [
            [Some(&p11), Some(&(-&at)), Some(&p13)],
            [Some(&neg_a), Some(&si2), Some(&(-&pit))],
            [Some(&p31), Some(&neg_pi), Some(&wi2)],
        ],
    );
    let theta = blocks3(sizes, [[Some(&theta_x), None, None], [None, Some(&theta_u), None], [None, None, Some(&theta_w)]]);

    Ok(SplittingMatrices {
        layout: (*layout).clone(),
        gamma,
        sigma,
        wmat,
        pi,
        a_big,
        b,
        t_s,
        t_m,
        t_p,
        t_k,
        t_h,
        t_ptilde,
        theta,
    })
}

impl SplittingMatrices {
    pub fn dim(&self) -> usize {
        self.t_s.nrows()
    }

    /// `||v||^2_{T_S}`.
    pub fn ts_norm_sq(&self, v: &DVector<f64>) -> f64 {
        v.iter().zip(self.t_s.diagonal().iter()).map(|(a, d)| d * a * a).sum()
    }
}

/// One application of `T`: the prediction `Ubar` is the resolvent of `T_H + T_A`
/// evaluated by back substitution through the block upper-triangular `T_H`
/// (edge block first, then multipliers, then decisions), followed by the
/// correction `U + T_S^{-1} (T_H - T_M)(Ubar - U)`.
pub fn apply_t(mats: &SplittingMatrices, game: &GameSpec<f64>, state: &[f64]) -> Result<Vec<f64>> {
    let lay = &mats.layout;
    if state.len() != lay.total() {
        return Err(GneError::Dimension(format!("state has length {}, expected {}", state.len(), lay.total())));
    }
    let (n, nu, nw) = (lay.n(), lay.u_len(), lay.w_len());
    let x = DVector::from_column_slice(&state[..n]);
    let u = DVector::from_column_slice(&state[n..n + nu]);
    let w = DVector::from_column_slice(&state[n + nu..]);

    // Edge block: W^-1 wbar + d(delta*_C)(wbar) contains W^-1 w + Pi u.
    let z = &w + &mats.wmat * (&mats.pi * &u);
    let mut wbar = DVector::zeros(nw);
    for e in 0..lay.edges {
        let lo = lay.w_range(e, Side::Low);
        let hi = lay.w_range(e, Side::High);
        let kappa = mats.wmat[(lo.start, lo.start)];
        let zs1: Vec<f64> = z.rows(lo.start, lay.q).iter().map(|v| v / kappa).collect();
        let zs2: Vec<f64> = z.rows(hi.start, lay.q).iter().map(|v| v / kappa).collect();
        let (p1, p2) = project_pair_consensus(&zs1, &zs2);
        for r in 0..lay.q {
            wbar[lo.start + r] = z[lo.start + r] - kappa * p1[r];
            wbar[hi.start + r] = z[hi.start + r] - kappa * p2[r];
        }
    }

    // Multiplier block: Sigma^-1 ubar + Pi^T wbar + N(ubar) contains Sigma^-1 u + A x - b.
    let ubar = (&u + &mats.sigma * (&mats.a_big * &x - &mats.b - mats.pi.transpose() * &wbar)).map(|v| v.max(0.0));

    // Decision block: Gamma^-1 xbar + A^T ubar + N(xbar) contains Gamma^-1 x - F(x).
    let fx = DVector::from_vec(game.pseudogradient(&state[..n]));
    let mut xbar = &x - &mats.gamma * (fx + mats.a_big.transpose() * &ubar);
    for i in 0..lay.m {
        let p = game.player(i);
        let r = lay.x_range(i);
        for (k, idx) in r.enumerate() {
            xbar[idx] = xbar[idx].clamp(p.lo[k], p.hi[k]);
        }
    }

    let mut ubar_full = DVector::zeros(lay.total());
    ubar_full.rows_mut(0, n).copy_from(&xbar);
    ubar_full.rows_mut(n, nu).copy_from(&ubar);
    ubar_full.rows_mut(n + nu, nw).copy_from(&wbar);
    let u_full = DVector::from_column_slice(state);
    let diff = &ubar_full - &u_full;
    let corr = (&mats.t_h - &mats.t_m) * diff;
    let ts_inv = mats.t_s.diagonal().map(|d| 1.0 / d);
    Ok((u_full + ts_inv.component_mul(&corr)).iter().copied().collect())
}

/// `lambda_min` of the symmetrized `T_Ptilde - (Theta + I) T_S`.
pub fn check_pd_certificate(mats: &SplittingMatrices) -> f64 {
    let dim = mats.dim();
    let b = &mats.t_ptilde - (&mats.theta + DMatrix::identity(dim, dim)) * &mats.t_s;
    let sym = (&b + b.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

/// Slack of the averagedness inequality
/// `||TU - TZ||^2 <= ||U - Z||^2 - ((1-gamma)/gamma) ||(I-T)U - (I-T)Z||^2`
/// in the `T_S` norm; nonnegative when the inequality holds.
pub fn averagedness_slack(
    mats: &SplittingMatrices,
    game: &GameSpec<f64>,
    u: &[f64],
    z: &[f64],
    gamma: f64,
) -> Result<f64> {
    let tu = DVector::from_vec(apply_t(mats, game, u)?);
    let tz = DVector::from_vec(apply_t(mats, game, z)?);
    let uu = DVector::from_column_slice(u);
    let zz = DVector::from_column_slice(z);
    let lhs = mats.ts_norm_sq(&(&tu - &tz));
    let diff = &uu - &zz;
    let resid = (&uu - &tu) - (&zz - &tz);
    Ok(mats.ts_norm_sq(&diff) - (1.0 - gamma) / gamma * mats.ts_norm_sq(&resid) - lhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PlayerSpec;
    use crate::stepsizes::{default_recipe, uniform_probs, RecipeOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn box_clamp() {
        assert_eq!(project_box(&[-1.0, 0.5, 7.0], &[0.0; 3], &[1.0; 3]), vec![0.0, 0.5, 1.0]);
        assert_eq!(project_box(&[0.2, 0.9], &[0.0; 2], &[1.0; 2]), vec![0.2, 0.9]);
    }

    #[test]
    fn nonneg() {
        assert_eq!(project_nonneg(&[-2.0, 3.0]), vec![0.0, 3.0]);
        assert_eq!(project_nonneg(&[0.0]), vec![0.0]);
    }

    #[test]
    fn pair_consensus() {
        assert_eq!(project_pair_consensus(&[2.0], &[-4.0]), (vec![3.0], vec![-3.0]));
        assert_eq!(project_pair_consensus(&[1.5], &[-1.5]), (vec![1.5], vec![-1.5]));
    }

    #[test]
    fn edge_prox_example() {
        let (a, b) = prox_conjugate_edge((&[1.0], &[3.0]), 2.0, (&[5.0], &[-1.0])).unwrap();
        assert_eq!((a, b), (vec![6.0], vec![6.0]));
        let (a, b) = prox_conjugate_edge::<f64>((&[0.7], &[0.7]), 1.3, (&[0.0], &[0.0])).unwrap();
        assert!((a[0] - 0.7).abs() < 1e-15 && (b[0] - 0.7).abs() < 1e-15);
        assert!(prox_conjugate_edge((&[1.0], &[1.0]), 0.0, (&[0.0], &[0.0])).is_err());
    }

    fn two_player() -> (GameSpec<f64>, CommGraph) {
        let p = PlayerSpec { lo: vec![0.0], hi: vec![2.0], a: vec![1.0], b: vec![0.5] };
        let game = GameSpec::builder(1)
            .player(p.clone())
            .player(p)
            .affine(vec![2.0, 0.5, 0.5, 2.0], vec![-3.0, -2.0])
            .build()
            .unwrap();
        (game, CommGraph::path(2).unwrap())
    }

    #[test]
    fn block_structure_of_small_instance() {
        let (game, graph) = two_player();
        let consts = crate::model::estimate_constants(&game).unwrap();
        let steps = default_recipe(&game, &graph, &consts, uniform_probs(2), 0, RecipeOptions::default()).unwrap();
        let mats = assemble_matrices(&game, &graph, &steps, &consts).unwrap();
        assert_eq!(mats.dim(), 6);
        let want = [
            1.0 / steps.tau[0],
            1.0 / steps.tau[1],
            1.0 / steps.sigma[0],
            1.0 / steps.sigma[1],
            1.0 / steps.kappa[0],
            1.0 / steps.kappa[0],
        ];
        for (k, w) in want.iter().enumerate() {
            assert_eq!(mats.t_s[(k, k)], *w);
        }
        assert_eq!(mats.t_s.iter().filter(|v| **v != 0.0).count(), 6);
        assert_eq!((&mats.t_k + mats.t_k.transpose()).amax(), 0.0);
        assert_eq!(&mats.t_h - (&mats.t_p + &mats.t_k), DMatrix::zeros(6, 6));
        assert!((&mats.t_ptilde - mats.t_ptilde.transpose()).amax() < 1e-15);
    }

    #[test]
    fn pi_gram_counts_neighbors() {
        let game = {
            let p = PlayerSpec { lo: vec![0.0], hi: vec![1.0], a: vec![1.0, 0.5], b: vec![1.0, 1.0] };
            let mut b = GameSpec::builder(2);
            for _ in 0..4 {
                b = b.player(p.clone());
            }
            let mut m = vec![0.0; 16];
            for i in 0..4 {
                m[i * 4 + i] = 1.0;
            }
            b.affine(m, vec![0.0; 4]).build().unwrap()
        };
        let graph = CommGraph::new(4, &[(0, 1), (1, 2), (2, 3), (0, 2)]).unwrap();
        let consts = crate::model::estimate_constants(&game).unwrap();
        let steps = default_recipe(&game, &graph, &consts, uniform_probs(4), 0, RecipeOptions::default()).unwrap();
        let mats = assemble_matrices(&game, &graph, &steps, &consts).unwrap();
        let gram = mats.pi.transpose() * &mats.pi;
        for i in 0..4 {
            for r in 0..2 {
                let k = i * 2 + r;
                assert_eq!(gram[(k, k)], graph.degree(i) as f64);
            }
        }
        assert_eq!(gram.iter().filter(|v| **v != 0.0).count(), 8);
    }

    #[test]
    fn th_minus_tm_dominates_tp() {
        let (game, graph) = two_player();
        let consts = crate::model::estimate_constants(&game).unwrap();
        let steps = default_recipe(&game, &graph, &consts, uniform_probs(2), 0, RecipeOptions::default()).unwrap();
        let mats = assemble_matrices(&game, &graph, &steps, &consts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = &mats.t_h - &mats.t_m;
        for _ in 0..200 {
            let v = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
            let lhs = v.dot(&(&d * &v));
            let rhs = v.dot(&(&mats.t_p * &v));
            let skew = v.dot(&(&mats.t_k * &v));
            assert!(lhs >= rhs - 1e-12 * rhs.abs());
            assert!(skew.abs() <= 1e-12 * v.norm_squared());
        }
    }

    #[test]
    fn size_guard() {
        let mut b = GameSpec::builder(1);
        for _ in 0..300 {
            b = b.player(PlayerSpec { lo: vec![0.0], hi: vec![1.0], a: vec![1.0], b: vec![1.0] });
        }
        let mut m = vec![0.0; 300 * 300];
        for i in 0..300 {
            m[i * 300 + i] = 1.0;
        }
        let game = b.affine(m, vec![0.0; 300]).build().unwrap();
        let graph = CommGraph::path(300).unwrap();
        let consts = crate::model::estimate_constants(&game).unwrap();
        let steps = default_recipe(&game, &graph, &consts, uniform_probs(300), 0, RecipeOptions::default()).unwrap();
        assert!(matches!(assemble_matrices(&game, &graph, &steps, &consts), Err(GneError::TooLarge { .. })));
    }
}
