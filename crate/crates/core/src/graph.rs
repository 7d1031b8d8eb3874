//! Undirected communication graph with a canonical edge orientation.
//!
//! Every edge is stored once as `(i, j)` with `i < j`. The endpoint `i` is the
//! low side and carries the sign `+1` in the edge matrix `E_ij = +I`; the high
//! side `j` carries `-1`. Each endpoint owns one half of the edge's auxiliary
//! variable.

use std::collections::{HashSet, VecDeque};

use crate::error::{GneError, Result};
use crate::scalar::Real;

/// Which endpoint of a canonical edge `(lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Low,
    High,
}

impl Side {
    pub fn index(self) -> usize {
        match self {
            Side::Low => 0,
            Side::High => 1,
        }
    }

    pub fn other(self) -> Side {
        match self {
            Side::Low => Side::High,
            Side::High => Side::Low,
        }
    }

    /// Orientation sign `s` such that `E = s * I`.
    pub fn sign<S: Real>(self) -> S {
        match self {
            Side::Low => S::one(),
            Side::High => -S::one(),
        }
    }
}

/// One edge as seen from one of its endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Incidence {
    pub edge: usize,
    pub neighbor: usize,
    pub side: Side,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    m: usize,
    edges: Vec<(usize, usize)>,
    incidences: Vec<Vec<Incidence>>,
    /// For each edge, the slot of the edge in the low and high endpoint's incidence list.
    slots: Vec<[usize; 2]>,
}

impl CommGraph {
    /// Canonicalizes and validates an undirected edge list.
    pub fn new(m: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if m == 0 {
            return Err(GneError::Dimension("graph needs at least one node".into()));
        }
        let mut seen = HashSet::new();
        let mut canonical = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            for node in [a, b] {
                if node >= m {
                    return Err(GneError::NodeOutOfRange { node, m });
                }
            }
            if a == b {
                return Err(GneError::SelfLoop(a));
            }
            let e = (a.min(b), a.max(b));
            if !seen.insert(e) {
                return Err(GneError::DuplicateEdge(e.0, e.1));
            }
            canonical.push(e);
        }

        let mut incidences = vec![Vec::new(); m];
        let mut slots = Vec::with_capacity(canonical.len());
        for (edge, &(lo, hi)) in canonical.iter().enumerate() {
            let lo_slot = incidences[lo].len();
            incidences[lo].push(Incidence { edge, neighbor: hi, side: Side::Low });
            let hi_slot = incidences[hi].len();
            incidences[hi].push(Incidence { edge, neighbor: lo, side: Side::High });
            slots.push([lo_slot, hi_slot]);
        }

        let graph = CommGraph { m, edges: canonical, incidences, slots };
        if let Some(node) = graph.first_unreachable() {
            return Err(GneError::Disconnected(node));
        }
        Ok(graph)
    }

    /// Path `0 - 1 - ... - (m-1)`.
    pub fn path(m: usize) -> Result<Self> {
        let edges: Vec<_> = (1..m).map(|i| (i - 1, i)).collect();
        Self::new(m, &edges)
    }

    /// Ring over `m >= 3` nodes, path for smaller `m`.
    pub fn ring(m: usize) -> Result<Self> {
        if m < 3 {
            return Self::path(m);
        }
        let mut edges: Vec<_> = (1..m).map(|i| (i - 1, i)).collect();
        edges.push((0, m - 1));
        Self::new(m, &edges)
    }

    fn first_unreachable(&self) -> Option<usize> {
        let mut visited = vec![false; self.m];
        let mut queue = VecDeque::from([0usize]);
        visited[0] = true;
        while let Some(v) = queue.pop_front() {
            for inc in &self.incidences[v] {
                if !visited[inc.neighbor] {
                    visited[inc.neighbor] = true;
                    queue.push_back(inc.neighbor);
                }
            }
        }
        visited.iter().position(|&v| !v)
    }

    pub fn node_count(&self) -> usize {
        self.m
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn incidences(&self, node: usize) -> &[Incidence] {
        &self.incidences[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.incidences[node].len()
    }

    pub fn neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.incidences[node].iter().map(|inc| inc.neighbor)
    }

    /// Endpoint owning `side` of `edge`.
    pub fn owner(&self, edge: usize, side: Side) -> usize {
        let (lo, hi) = self.edges[edge];
        match side {
            Side::Low => lo,
            Side::High => hi,
        }
    }

    /// Position of `edge` in the incidence list of its `side` endpoint.
    pub fn slot(&self, edge: usize, side: Side) -> usize {
        self.slots[edge][side.index()]
    }

    /// Orientation sign of `node` on `edge`; panics if `node` is not an endpoint.
    pub fn sign<S: Real>(&self, node: usize, edge: usize) -> S {
        let (lo, hi) = self.edges[edge];
        if node == lo {
            S::one()
        } else if node == hi {
            -S::one()
        } else {
            panic!("node {node} is not an endpoint of edge {edge}")
        }
    }
}

/// `E_ij u_i + E_ji u_j = u_i - u_j` for every canonical edge `(i, j)`.
pub fn edge_consensus_residual<S: Real>(graph: &CommGraph, u: &[S], q: usize) -> Result<Vec<Vec<S>>> {
    if u.len() != graph.node_count() * q {
        return Err(GneError::Dimension(format!(
            "multiplier vector has length {}, expected {} x {}",
            u.len(),
            graph.node_count(),
            q
        )));
    }
    Ok(graph
        .edges()
        .iter()
        .map(|&(i, j)| {
            let ui = &u[i * q..(i + 1) * q];
            let uj = &u[j * q..(j + 1) * q];
            ui.iter().zip(uj).map(|(&a, &b)| a - b).collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_node_orientation() {
        let g = CommGraph::new(2, &[(1, 0)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
        assert_eq!(g.sign::<f64>(0, 0), 1.0);
        assert_eq!(g.sign::<f64>(1, 0), -1.0);
    }

    #[test]
    fn disconnected_graph_rejected() {
        assert_eq!(CommGraph::new(3, &[(0, 1)]), Err(GneError::Disconnected(2)));
    }

    #[test]
    fn triangle_has_three_edges() {
        let g = CommGraph::new(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        assert_eq!(g.edge_count(), 3);
        assert!((0..3).all(|v| g.degree(v) == 2));
    }

    #[test]
    fn duplicate_and_self_loop_rejected() {
        assert_eq!(CommGraph::new(2, &[(0, 1), (1, 0)]), Err(GneError::DuplicateEdge(0, 1)));
        assert_eq!(CommGraph::new(2, &[(1, 1)]), Err(GneError::SelfLoop(1)));
        assert!(matches!(CommGraph::new(2, &[(0, 2)]), Err(GneError::NodeOutOfRange { .. })));
    }

    #[test]
    fn edge_matrices_cancel_and_are_orthonormal() {
        let g = CommGraph::ring(5).unwrap();
        for (e, &(i, j)) in g.edges().iter().enumerate() {
            let si: f64 = g.sign(i, e);
            let sj: f64 = g.sign(j, e);
            assert_eq!(si + sj, 0.0);
            assert_eq!(si * si, 1.0);
            assert_eq!(g.owner(e, Side::Low), i);
            assert_eq!(g.incidences(i)[g.slot(e, Side::Low)].edge, e);
            assert_eq!(g.incidences(j)[g.slot(e, Side::High)].edge, e);
        }
    }

    #[test]
    fn consensus_residual_examples() {
        let g = CommGraph::path(2).unwrap();
        let r = edge_consensus_residual(&g, &[3.0, 3.0, 3.0, 3.0], 2).unwrap();
        assert_eq!(r, vec![vec![0.0, 0.0]]);
        let r = edge_consensus_residual(&g, &[1.0, 0.0, 0.0, 1.0], 2).unwrap();
        assert_eq!(r, vec![vec![1.0, -1.0]]);
        assert!(edge_consensus_residual(&g, &[1.0, 2.0, 3.0], 2).is_err());
    }

    #[test]
    fn consensus_residual_is_antisymmetric() {
        let g = CommGraph::path(2).unwrap();
        let a = edge_consensus_residual(&g, &[0.3, -1.2, 2.5, 0.7], 2).unwrap();
        let b = edge_consensus_residual(&g, &[2.5, 0.7, 0.3, -1.2], 2).unwrap();
        for (x, y) in a[0].iter().zip(&b[0]) {
            assert_eq!(*x, -*y);
        }
    }
}
