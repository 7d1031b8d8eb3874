//! Per-player version history backing delayed reads.

use std::sync::Arc;

use crate::graph::{CommGraph, Side};
use crate::model::{Layout, PrimalDualState, StateRead};
use crate::scalar::Real;

/// Versions of one player's block `[x_i | u_i | owned w halves]`, each stamped
/// with the first iteration at which it is current.
#[derive(Debug, Clone)]
struct Ring<S> {
    len: usize,
    data: Vec<S>,
    stamps: Vec<u64>,
    start: usize,
    count: usize,
}

impl<S: Real> Ring<S> {
    fn new(cap: usize, initial: &[S]) -> Self {
        let len = initial.len();
        let mut data = vec![S::zero(); cap * len];
        data[..len].copy_from_slice(initial);
        Ring { len, data, stamps: vec![0; cap], start: 0, count: 1 }
    }

    fn cap(&self) -> usize {
        self.stamps.len()
    }

    fn slot(&self, pos: usize) -> usize {
        (self.start + pos) % self.cap()
    }

    fn newest(&self) -> usize {
        self.slot(self.count - 1)
    }

    /// Slot of the newest version with stamp `<= t`.
    fn at(&self, t: u64) -> usize {
        for pos in (0..self.count).rev() {
            let s = self.slot(pos);
            if self.stamps[s] <= t {
                return s;
            }
        }
        panic!("iteration {t} is older than the retained history")
    }

    fn block(&self, slot: usize) -> &[S] {
        &self.data[slot * self.len..(slot + 1) * self.len]
    }

    fn push(&mut self, stamp: u64, values: &[S]) {
        if self.count == self.cap() {
            self.start = (self.start + 1) % self.cap();
            self.count -= 1;
        }
        let s = self.slot(self.count);
        self.data[s * self.len..(s + 1) * self.len].copy_from_slice(values);
        self.stamps[s] = stamp;
        self.count += 1;
    }
}

/// Ring buffers of recent versions of every player's owned variables.
///
/// Reads at any iteration in `[k - eps, k]` are served from the retained
/// versions; a player's version changes only when that player commits.
#[derive(Debug, Clone)]
pub struct HistoryWindow<S> {
    eps: usize,
    layout: Arc<Layout>,
    graph: CommGraph,
    rings: Vec<Ring<S>>,
}

impl<S: Real> HistoryWindow<S> {
    pub fn new(state: &PrimalDualState<S>, graph: &CommGraph, eps: usize) -> Self {
        let layout = state.layout().clone();
        // eps + 1 versions cover the window, one more keeps the version current at k - eps.
        let cap = eps + 2;
        let rings = (0..layout.m).map(|i| Ring::new(cap, &player_block(state, graph, i))).collect();
        HistoryWindow { eps, layout, graph: graph.clone(), rings }
    }

    pub fn eps(&self) -> usize {
        self.eps
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn graph(&self) -> &CommGraph {
        &self.graph
    }

    pub fn block_len(&self, player: usize) -> usize {
        self.rings[player].len
    }

    /// Player's block as it stood at iteration `t`.
    pub fn read(&self, player: usize, t: u64) -> &[S] {
        let r = &self.rings[player];
        r.block(r.at(t))
    }

    /// Stamp of the version current at iteration `t`.
    pub fn stamp_at(&self, player: usize, t: u64) -> u64 {
        let r = &self.rings[player];
        r.stamps[r.at(t)]
    }

    pub fn current(&self, player: usize) -> &[S] {
        let r = &self.rings[player];
        r.block(r.newest())
    }

    pub fn commit(&mut self, player: usize, stamp: u64, values: &[S]) {
        self.rings[player].push(stamp, values);
    }

    /// View with player `j` read at iteration `times[j]`.
    pub fn view(&self, times: &[u64]) -> DelayedView<'_, S> {
        DelayedView { hist: self, slots: times.iter().enumerate().map(|(j, &t)| self.rings[j].at(t)).collect() }
    }

    /// The full iterate at iteration `t`.
    pub fn state_at(&self, t: u64) -> PrimalDualState<S> {
        let times = vec![t; self.layout.m];
        PrimalDualState::from_view(self.layout.clone(), &self.view(&times))
    }

    pub fn current_state(&self) -> PrimalDualState<S> {
        let view = DelayedView { hist: self, slots: self.rings.iter().map(|r| r.newest()).collect() };
        PrimalDualState::from_view(self.layout.clone(), &view)
    }
}

/// A player's owned variables laid out as one block.
pub fn player_block<S: Real>(state: &PrimalDualState<S>, graph: &CommGraph, i: usize) -> Vec<S> {
    let mut b = Vec::new();
    b.extend_from_slice(state.x(i));
    b.extend_from_slice(state.u(i));
    for inc in graph.incidences(i) {
        b.extend_from_slice(state.w(inc.edge, inc.side));
    }
    b
}

/// Iterate assembled from per-player versions.
pub struct DelayedView<'a, S> {
    hist: &'a HistoryWindow<S>,
    slots: Vec<usize>,
}

impl<'a, S: Real> DelayedView<'a, S> {
    pub fn block(&self, player: usize) -> &'a [S] {
        self.hist.rings[player].block(self.slots[player])
    }
}

impl<S: Real> StateRead<S> for DelayedView<'_, S> {
    fn x(&self, player: usize) -> &[S] {
        let n = self.hist.layout.x_range(player).len();
        &self.block(player)[..n]
    }

    fn u(&self, player: usize) -> &[S] {
        let n = self.hist.layout.x_range(player).len();
        &self.block(player)[n..n + self.hist.layout.q]
    }

    fn w(&self, edge: usize, side: Side) -> &[S] {
        let g = &self.hist.graph;
        let owner = g.owner(edge, side);
        let q = self.hist.layout.q;
        let start = self.hist.layout.x_range(owner).len() + q + g.slot(edge, side) * q;
        &self.block(owner)[start..start + q]
    }
}
