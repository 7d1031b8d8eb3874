//! Game instances, monotonicity constants and the stacked primal-dual iterate.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GneError, Result};
use crate::graph::{CommGraph, Side};
use crate::scalar::Real;

/// Decision data private to one player: box `[lo, hi]`, coupling block `A_i`
/// (`q x n_i`, row-major) and offset `b_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlayerSpec<S> {
    pub lo: Vec<S>,
    pub hi: Vec<S>,
    pub a: Vec<S>,
    pub b: Vec<S>,
}

impl<S: Real> PlayerSpec<S> {
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn center(&self) -> Vec<S> {
        let two = S::lit(2.0);
        self.lo.iter().zip(&self.hi).map(|(&l, &h)| (l + h) / two).collect()
    }

    /// `out += A_i x_i`
    pub fn add_a_times(&self, x: &[S], out: &mut [S]) {
        let n = self.dim();
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.a[r * n..(r + 1) * n];
            *o += row.iter().zip(x).map(|(&a, &v)| a * v).sum::<S>();
        }
    }

    /// `out += A_i^T v`
    pub fn add_at_times(&self, v: &[S], out: &mut [S]) {
        let n = self.dim();
        for (r, &vr) in v.iter().enumerate() {
            let row = &self.a[r * n..(r + 1) * n];
            for (o, &a) in out.iter_mut().zip(row) {
                *o += a * vr;
            }
        }
    }
}

/// Stacked pseudogradient `F(x) = M x + c0`, `M` row-major `n x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap<S> {
    pub n: usize,
    pub matrix: Vec<S>,
    pub offset: Vec<S>,
}

impl<S: Real> AffineMap<S> {
    pub fn new(n: usize, matrix: Vec<S>, offset: Vec<S>) -> Result<Self> {
        if matrix.len() != n * n || offset.len() != n {
            return Err(GneError::Dimension(format!(
                "affine pseudogradient expects a {n}x{n} matrix and length-{n} offset"
            )));
        }
        Ok(AffineMap { n, matrix, offset })
    }

    /// Rows `rows` of `M x + c0` written to `out`.
    pub fn eval_rows(&self, rows: std::ops::Range<usize>, x: &[S], out: &mut [S]) {
        for (o, r) in out.iter_mut().zip(rows) {
            let row = &self.matrix[r * self.n..(r + 1) * self.n];
            *o = self.offset[r] + row.iter().zip(x).map(|(&a, &v)| a * v).sum::<S>();
        }
    }

    pub fn to_dmatrix_f64(&self) -> DMatrix<f64> {
        DMatrix::from_row_iterator(self.n, self.n, self.matrix.iter().map(|v| v.as_f64()))
    }
}

/// Player-wise gradient oracle: `(i, x, out)` writes `grad_{x_i} f_i(x)` into `out`.
pub type GradientOracle<S> = Arc<dyn Fn(usize, &[S], &mut [S]) + Send + Sync>;

#[derive(Clone)]
pub struct GameSpec<S> {
    players: Vec<PlayerSpec<S>>,
    q: usize,
    offsets: Vec<usize>,
    affine: Option<AffineMap<S>>,
    oracle: Option<GradientOracle<S>>,
}

impl<S: Real> fmt::Debug for GameSpec<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GameSpec")
            .field("players", &self.players)
            .field("q", &self.q)
            .field("affine", &self.affine)
            .field("oracle", &self.oracle.as_ref().map(|_| "<fn>"))
            .finish()
    }
}

impl<S: Real> GameSpec<S> {
    pub fn builder(q: usize) -> GameBuilder<S> {
        GameBuilder { q, players: Vec::new(), affine: None, oracle: None, hint: None }
    }

    pub fn player_count(&self) -> usize {
        self.players.len()
    }

    pub fn players(&self) -> &[PlayerSpec<S>] {
        &self.players
    }

    pub fn player(&self, i: usize) -> &PlayerSpec<S> {
        &self.players[i]
    }

    /// Number of coupling rows.
    pub fn q(&self) -> usize {
        self.q
    }

    /// Total decision dimension.
    pub fn n(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn affine(&self) -> Option<&AffineMap<S>> {
        self.affine.as_ref()
    }

    /// `grad_{x_i} f_i(x)` at the full profile `x`.
    pub fn gradient(&self, i: usize, x: &[S], out: &mut [S]) {
        match (&self.oracle, &self.affine) {
            (Some(oracle), _) => oracle(i, x, out),
            (None, Some(aff)) => aff.eval_rows(self.range(i), x, out),
            (None, None) => unreachable!("validated at construction"),
        }
    }

    /// Stacked pseudogradient `F(x)`.
    pub fn pseudogradient(&self, x: &[S]) -> Vec<S> {
        let mut out = vec![S::zero(); self.n()];
        for i in 0..self.player_count() {
            let r = self.range(i);
            self.gradient(i, x, &mut out[r]);
        }
        out
    }

    pub fn box_centers(&self) -> Vec<S> {
        self.players.iter().flat_map(|p| p.center()).collect()
    }

    /// `sum_i b_i`.
    pub fn b_total(&self) -> Vec<S> {
        let mut total = vec![S::zero(); self.q];
        for p in &self.players {
            for (t, &b) in total.iter_mut().zip(&p.b) {
                *t += b;
            }
        }
        total
    }

    /// `sum_i A_i x_i` for a stacked profile.
    pub fn coupling(&self, x: &[S]) -> Vec<S> {
        let mut out = vec![S::zero(); self.q];
        for (i, p) in self.players.iter().enumerate() {
            p.add_a_times(&x[self.range(i)], &mut out);
        }
        out
    }

    /// Largest entry of `sum_i A_i x_i - sum_i b_i` (negative when strictly feasible).
    pub fn coupling_violation(&self, x: &[S]) -> S {
        let ax = self.coupling(x);
        ax.iter()
            .zip(self.b_total())
            .map(|(&a, b)| a - b)
            .fold(S::neg_infinity(), S::max)
    }

    pub fn in_boxes(&self, x: &[S]) -> bool {
        self.players.iter().enumerate().all(|(i, p)| {
            x[self.range(i)]
                .iter()
                .zip(p.lo.iter().zip(&p.hi))
                .all(|(&v, (&l, &h))| v >= l && v <= h)
        })
    }

    /// The stacked coupling matrix `[A_1 ... A_m]` as a dense `q x n` f64 matrix.
    pub fn coupling_matrix_f64(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.q, self.n());
        for (i, p) in self.players.iter().enumerate() {
            let n_i = p.dim();
            let off = self.offsets[i];
            for r in 0..self.q {
                for c in 0..n_i {
                    g[(r, off + c)] = p.a[r * n_i + c].as_f64();
                }
            }
        }
        g
    }
}

pub struct GameBuilder<S> {
    q: usize,
    players: Vec<PlayerSpec<S>>,
    affine: Option<AffineMap<S>>,
    oracle: Option<GradientOracle<S>>,
    hint: Option<Vec<S>>,
}

impl<S: Real> GameBuilder<S> {
    pub fn player(mut self, player: PlayerSpec<S>) -> Self {
        self.players.push(player);
        self
    }

    pub fn affine(mut self, matrix: Vec<S>, offset: Vec<S>) -> Self {
        let n = offset.len();
        self.affine = Some(AffineMap { n, matrix, offset });
        self
    }

    pub fn oracle(mut self, oracle: GradientOracle<S>) -> Self {
        self.oracle = Some(oracle);
        self
    }

    /// A point the caller knows to be feasible; tried first by the feasibility probe.
    pub fn feasible_hint(mut self, x: Vec<S>) -> Self {
        self.hint = Some(x);
        self
    }

    pub fn build(self) -> Result<GameSpec<S>> {
        let GameBuilder { q, players, affine, oracle, hint } = self;
        if players.is_empty() {
            return Err(GneError::Dimension("game needs at least one player".into()));
        }
        let mut offsets = vec![0];
        for (i, p) in players.iter().enumerate() {
            let n_i = p.dim();
            let bad = |detail: String| GneError::InvalidPlayer { player: i, detail };
            if n_i == 0 {
                return Err(bad("decision dimension must be positive".into()));
            }
            if p.hi.len() != n_i {
                return Err(bad(format!("box bounds have lengths {} and {}", n_i, p.hi.len())));
            }
            if p.a.len() != q * n_i {
                return Err(bad(format!("A_i has {} entries, expected {}x{}", p.a.len(), q, n_i)));
            }
            if p.b.len() != q {
                return Err(bad(format!("b_i has length {}, expected {}", p.b.len(), q)));
            }
            for (k, (&l, &h)) in p.lo.iter().zip(&p.hi).enumerate() {
                if !l.is_finite() || !h.is_finite() {
                    return Err(bad(format!("box bound {k} is not finite")));
                }
                if l > h {
                    return Err(bad(format!("box bound {k}: lo {l} > hi {h}")));
                }
            }
            if p.a.iter().chain(&p.b).any(|v| !v.is_finite()) {
                return Err(bad("coupling data must be finite".into()));
            }
            offsets.push(offsets[i] + n_i);
        }
        let n = *offsets.last().unwrap();
        if let Some(aff) = &affine {
            if aff.n != n || aff.matrix.len() != n * n {
                return Err(GneError::Dimension(format!(
                    "affine pseudogradient has dimension {}, players stack to {}",
                    aff.n, n
                )));
            }
        }
        if affine.is_none() && oracle.is_none() {
            return Err(GneError::Dimension("game needs an affine pseudogradient or an oracle".into()));
        }

        let game = GameSpec { players, q, offsets, affine, oracle };
        if game.affine.is_some() && game.oracle.is_some() {
            game.check_oracle_matches_affine()?;
        }
        game.probe_feasibility(hint)?;
        Ok(game)
    }
}

impl<S: Real> GameSpec<S> {
    fn check_oracle_matches_affine(&self) -> Result<()> {
        let aff = self.affine.as_ref().unwrap();
        let oracle = self.oracle.as_ref().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let n = self.n();
        let mut worst = 0.0f64;
        for _ in 0..16 {
            let x: Vec<S> = (0..n).map(|_| S::lit(rng.random_range(-10.0..10.0))).collect();
            for i in 0..self.player_count() {
                let r = self.range(i);
                let mut a = vec![S::zero(); r.len()];
                let mut b = vec![S::zero(); r.len()];
                aff.eval_rows(r.clone(), &x, &mut a);
                oracle(i, &x, &mut b);
                for (&u, &v) in a.iter().zip(&b) {
                    let err = (u - v).abs().as_f64() / (1.0 + u.abs().as_f64());
                    worst = worst.max(err);
                }
            }
        }
        if worst > 1e-12 {
            return Err(GneError::OracleMismatch(worst));
        }
        Ok(())
    }

    /// Deterministic feasibility probe: the caller's hint, the lower box corners,
    /// the box centers, and finally a projected-gradient descent on the squared
    /// coupling violation started from the centers.
    fn probe_feasibility(&self, hint: Option<Vec<S>>) -> Result<()> {
        if self.q == 0 {
            return Ok(());
        }
        let b_scale = self.b_total().iter().fold(1.0f64, |acc, b| acc.max(b.abs().as_f64()));
        let tol = 1e-9 * b_scale;
        let feasible = |x: &[S]| self.in_boxes(x) && self.coupling_violation(x).as_f64() <= tol;

        let lower: Vec<S> = self.players.iter().flat_map(|p| p.lo.clone()).collect();
        let centers = self.box_centers();
        let mut worst = f64::INFINITY;
        for cand in hint.iter().chain([&lower, &centers]) {
            if cand.len() == self.n() {
                if feasible(cand) {
                    return Ok(());
                }
                worst = worst.min(self.coupling_violation(cand).as_f64());
            }
        }

        let g = self.coupling_matrix_f64();
        let b = self.b_total();
        let lipschitz = g.iter().map(|v| v * v).sum::<f64>().max(1e-300);
        let step = 1.0 / lipschitz;
        let mut x: Vec<f64> = centers.iter().map(|v| v.as_f64()).collect();
        let lo: Vec<f64> = lower.iter().map(|v| v.as_f64()).collect();
        let hi: Vec<f64> = self.players.iter().flat_map(|p| p.hi.iter().map(|v| v.as_f64())).collect();
        for _ in 0..20_000 {
            let gx = &g * nalgebra::DVector::from_column_slice(&x);
            let excess: Vec<f64> = gx.iter().zip(&b).map(|(a, b)| (a - b.as_f64()).max(0.0)).collect();
            let max_excess = excess.iter().cloned().fold(0.0, f64::max);
            if max_excess <= 0.5 * tol {
                break;
            }
            let grad = g.transpose() * nalgebra::DVector::from_vec(excess);
            for k in 0..x.len() {
                x[k] = (x[k] - step * grad[k]).clamp(lo[k], hi[k]);
            }
        }
        let xs: Vec<S> = x.iter().map(|&v| S::lit(v)).collect();
        if feasible(&xs) {
            return Ok(());
        }
        worst = worst.min(self.coupling_violation(&xs).as_f64());
        Err(GneError::Infeasible { violation: worst })
    }
}

/// Strong-monotonicity modulus and Lipschitz constant of the pseudogradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotonicityConstants<S> {
    pub mu: S,
    pub l_f: S,
}

impl<S: Real> MonotonicityConstants<S> {
    pub fn new(mu: S, l_f: S) -> Result<Self> {
        if !(mu > S::zero()) || !(l_f > S::zero()) {
            return Err(GneError::Constants(format!("mu = {mu} and L_F = {l_f} must be positive")));
        }
        if mu > l_f {
            return Err(GneError::Constants(format!("mu = {mu} exceeds L_F = {l_f}")));
        }
        Ok(MonotonicityConstants { mu, l_f })
    }
}

/// `mu = lambda_min((M + M^T)/2)`, `L_F = sigma_max(M)` for an affine pseudogradient.
pub fn estimate_constants<S: Real>(game: &GameSpec<S>) -> Result<MonotonicityConstants<S>> {
    let aff = game.affine().ok_or(GneError::NonAffine)?;
    let m = aff.to_dmatrix_f64();
    let sym = (&m + m.transpose()) * 0.5;
    let mu = sym.symmetric_eigenvalues().min();
    if !(mu > 0.0) {
        return Err(GneError::NotStronglyMonotone(mu));
    }
    let l_f = m.singular_values().max();
    // mu <= L_F holds mathematically; clamp away rounding for scaled identities.
    let l_f = l_f.max(mu);
    MonotonicityConstants::new(S::lit(mu), S::lit(l_f))
}

/// Block layout of the stacked vector `U = col{x, u, w}`.
///
/// `w` holds, for each canonical edge `(i, j)`, the pair
/// `(w_(i,j),i, w_(i,j),j)`, each of length `q`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub m: usize,
    pub q: usize,
    pub x_offsets: Vec<usize>,
    pub edges: usize,
}

impl Layout {
    pub fn new<S: Real>(game: &GameSpec<S>, graph: &CommGraph) -> Result<Arc<Self>> {
        if game.player_count() != graph.node_count() {
            return Err(GneError::Dimension(format!(
                "game has {} players but the graph has {} nodes",
                game.player_count(),
                graph.node_count()
            )));
        }
        Ok(Arc::new(Layout {
            m: game.player_count(),
            q: game.q(),
            x_offsets: game.offsets().to_vec(),
            edges: graph.edge_count(),
        }))
    }

    pub fn n(&self) -> usize {
        *self.x_offsets.last().unwrap()
    }

    pub fn u_len(&self) -> usize {
        self.m * self.q
    }

    pub fn w_len(&self) -> usize {
        2 * self.edges * self.q
    }

    pub fn total(&self) -> usize {
        self.n() + self.u_len() + self.w_len()
    }

    pub fn x_range(&self, i: usize) -> std::ops::Range<usize> {
        self.x_offsets[i]..self.x_offsets[i + 1]
    }

    pub fn u_range(&self, i: usize) -> std::ops::Range<usize> {
        i * self.q..(i + 1) * self.q
    }

    pub fn w_range(&self, edge: usize, side: Side) -> std::ops::Range<usize> {
        let start = (2 * edge + side.index()) * self.q;
        start..start + self.q
    }
}

/// Read access to the blocks of an iterate; implemented by the current state
/// and by delayed views assembled from per-player histories.
pub trait StateRead<S> {
    fn x(&self, player: usize) -> &[S];
    fn u(&self, player: usize) -> &[S];
    fn w(&self, edge: usize, side: Side) -> &[S];
}

/// The stacked iterate `U = col{x, u, w}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDualState<S> {
    layout: Arc<Layout>,
    pub x: Vec<S>,
    pub u: Vec<S>,
    pub w: Vec<S>,
}

impl<S: Real> PrimalDualState<S> {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        PrimalDualState {
            x: vec![S::zero(); layout.n()],
            u: vec![S::zero(); layout.u_len()],
            w: vec![S::zero(); layout.w_len()],
            layout,
        }
    }

    /// Default start: box centers, zero multipliers and zero edge variables.
    pub fn initial(game: &GameSpec<S>, graph: &CommGraph) -> Result<Self> {
        let mut s = Self::zeros(Layout::new(game, graph)?);
        s.x = game.box_centers();
        Ok(s)
    }

    pub fn from_parts(layout: Arc<Layout>, x: Vec<S>, u: Vec<S>, w: Vec<S>) -> Result<Self> {
        if x.len() != layout.n() || u.len() != layout.u_len() || w.len() != layout.w_len() {
            return Err(GneError::Dimension(format!(
                "state blocks ({}, {}, {}) do not match layout ({}, {}, {})",
                x.len(),
                u.len(),
                w.len(),
                layout.n(),
                layout.u_len(),
                layout.w_len()
            )));
        }
        Ok(PrimalDualState { layout, x, u, w })
    }

    pub fn from_stacked(layout: Arc<Layout>, v: &[S]) -> Result<Self> {
        if v.len() != layout.total() {
            return Err(GneError::Dimension(format!(
                "stacked vector has length {}, layout needs {}",
                v.len(),
                layout.total()
            )));
        }
        let (n, nu) = (layout.n(), layout.u_len());
        Ok(PrimalDualState {
            x: v[..n].to_vec(),
            u: v[n..n + nu].to_vec(),
            w: v[n + nu..].to_vec(),
            layout,
        })
    }

    /// Copies every block out of another view.
    pub fn from_view(layout: Arc<Layout>, view: &impl StateRead<S>) -> Self {
        let mut s = Self::zeros(layout.clone());
        for i in 0..layout.m {
            s.x[layout.x_range(i)].copy_from_slice(view.x(i));
            s.u[layout.u_range(i)].copy_from_slice(view.u(i));
        }
        for e in 0..layout.edges {
            for side in [Side::Low, Side::High] {
                s.w[layout.w_range(e, side)].copy_from_slice(view.w(e, side));
            }
        }
        s
    }

    pub fn stacked(&self) -> Vec<S> {
        self.x.iter().chain(&self.u).chain(&self.w).copied().collect()
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn x_mut(&mut self, i: usize) -> &mut [S] {
        let r = self.layout.x_range(i);
        &mut self.x[r]
    }

    pub fn u_mut(&mut self, i: usize) -> &mut [S] {
        let r = self.layout.u_range(i);
        &mut self.u[r]
    }

    pub fn w_mut(&mut self, edge: usize, side: Side) -> &mut [S] {
        let r = self.layout.w_range(edge, side);
        &mut self.w[r]
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.u).chain(&self.w).all(|v| v.is_finite())
    }
}

impl<S: Real> StateRead<S> for PrimalDualState<S> {
    fn x(&self, player: usize) -> &[S] {
        &self.x[self.layout.x_range(player)]
    }

    fn u(&self, player: usize) -> &[S] {
        &self.u[self.layout.u_range(player)]
    }

    fn w(&self, edge: usize, side: Side) -> &[S] {
        &self.w[self.layout.w_range(edge, side)]
    }
}
