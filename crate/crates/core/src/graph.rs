//! Undirected weighted graphs with per-node self-weights.
//!
//! Adjacency is stored in CSR form with each neighbour list sorted by node id,
//! so every traversal is deterministic. A [`Graph`] is immutable once built;
//! node removal is expressed through [`GraphView`], an activity mask over a
//! borrowed graph that keeps node ids stable.

use std::collections::{HashSet, VecDeque};

use ndarray::Array2;

use crate::error::{Error, Result};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub u: NodeId,
    pub v: NodeId,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<Edge>,
    self_weights: Vec<f64>,
    offsets: Vec<usize>,
    targets: Vec<NodeId>,
    weights: Vec<f64>,
}

impl Graph {
    /// Builds a graph with unit self-weights.
    pub fn new(n: usize, edges: &[(NodeId, NodeId, f64)]) -> Result<Self> {
        Self::with_self_weights(n, edges, vec![1.0; n])
    }

    pub fn with_self_weights(
        n: usize,
        edges: &[(NodeId, NodeId, f64)],
        self_weights: Vec<f64>,
    ) -> Result<Self> {
        if self_weights.len() != n {
            return Err(Error::InvalidGraph(format!(
                "{} self-weights for {n} nodes",
                self_weights.len()
            )));
        }
        if let Some((i, w)) = self_weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w > 0.0))
        {
            return Err(Error::InvalidGraph(format!(
                "self-weight of node {i} must be positive, got {w}"
            )));
        }
        let mut seen = HashSet::with_capacity(edges.len());
        let mut degree = vec![0usize; n];
        let mut stored = Vec::with_capacity(edges.len());
        for &(u, v, w) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            if u == v {
                return Err(Error::InvalidGraph(format!("self-loop on node {u}")));
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidGraph(format!(
                    "edge ({u}, {v}) has invalid weight {w}"
                )));
            }
            let key = (u.min(v), u.max(v));
            if !seen.insert(key) {
                return Err(Error::InvalidGraph(format!(
                    "duplicate edge ({}, {})",
                    key.0, key.1
                )));
            }
            degree[u] += 1;
            degree[v] += 1;
            stored.push(Edge { u, v, w });
        }

        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets[..n].to_vec();
        let mut targets = vec![0; offsets[n]];
        let mut weights = vec![0.0; offsets[n]];
        for e in &stored {
            for (a, b) in [(e.u, e.v), (e.v, e.u)] {
                targets[fill[a]] = b;
                weights[fill[a]] = e.w;
                fill[a] += 1;
            }
        }
        for i in 0..n {
            let range = offsets[i]..offsets[i + 1];
            let mut pairs: Vec<_> = targets[range.clone()]
                .iter()
                .copied()
                .zip(weights[range.clone()].iter().copied())
                .collect();
            pairs.sort_unstable_by_key(|p| p.0);
            for (slot, (t, w)) in range.zip(pairs) {
                targets[slot] = t;
                weights[slot] = w;
            }
        }

        Ok(Self {
            n,
            edges: stored,
            self_weights,
            offsets,
            targets,
            weights,
        })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn self_weight(&self, v: NodeId) -> f64 {
        self.self_weights[v]
    }

    pub fn self_weights(&self) -> &[f64] {
        &self.self_weights
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn weighted_degree(&self, v: NodeId) -> f64 {
        self.weights[self.offsets[v]..self.offsets[v + 1]].iter().sum()
    }

    /// Neighbour ids of `v` in ascending order.
    pub fn neighbor_ids(&self, v: NodeId) -> &[NodeId] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    /// `(neighbour, weight)` pairs of `v` in ascending neighbour order.
    pub fn neighbors(&self, v: NodeId) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        let r = self.offsets[v]..self.offsets[v + 1];
        self.targets[r.clone()]
            .iter()
            .copied()
            .zip(self.weights[r].iter().copied())
    }

    /// Dense weighted Laplacian `L = D - W`.
    pub fn laplacian(&self) -> Array2<f64> {
        self.view().laplacian()
    }

    pub fn is_connected(&self) -> bool {
        self.view().is_connected()
    }

    /// A view with every node active.
    pub fn view(&self) -> GraphView<'_> {
        GraphView {
            graph: self,
            active: vec![true; self.n],
        }
    }
}

/// A graph together with a node activity mask.
///
/// Inactive (removed) nodes keep their ids but carry no edges.
#[derive(Debug, Clone)]
pub struct GraphView<'g> {
    graph: &'g Graph,
    active: Vec<bool>,
}

impl<'g> GraphView<'g> {
    pub fn with_mask(graph: &'g Graph, active: Vec<bool>) -> Result<Self> {
        if active.len() != graph.node_count() {
            return Err(Error::InvalidInput(format!(
                "mask of length {} for {} nodes",
                active.len(),
                graph.node_count()
            )));
        }
        Ok(Self { graph, active })
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn is_active(&self, v: NodeId) -> bool {
        self.active[v]
    }

    pub fn active_mask(&self) -> &[bool] {
        &self.active
    }

    pub fn remove_node(&self, v: NodeId) -> Result<Self> {
        if v >= self.graph.n {
            return Err(Error::InvalidAction(format!("node {v} does not exist")));
        }
        if !self.active[v] {
            return Err(Error::InvalidAction(format!("node {v} already removed")));
        }
        let mut active = self.active.clone();
        active[v] = false;
        Ok(Self {
            graph: self.graph,
            active,
        })
    }

    /// Active neighbours of an active node; empty for removed nodes.
    pub fn neighbors(&self, v: NodeId) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        let alive = self.active[v];
        self.graph
            .neighbors(v)
            .filter(move |&(u, _)| alive && self.active[u])
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.neighbors(v).count()
    }

    pub fn weighted_degree(&self, v: NodeId) -> f64 {
        self.neighbors(v).map(|(_, w)| w).sum()
    }

    pub fn laplacian(&self) -> Array2<f64> {
        let n = self.graph.n;
        let mut l = Array2::zeros((n, n));
        for e in self.graph.edges() {
            if self.active[e.u] && self.active[e.v] {
                l[[e.u, e.v]] -= e.w;
                l[[e.v, e.u]] -= e.w;
                l[[e.u, e.u]] += e.w;
                l[[e.v, e.v]] += e.w;
            }
        }
        l
    }

    /// True iff the active nodes form a single connected component.
    pub fn is_connected(&self) -> bool {
        let Some(start) = (0..self.graph.n).find(|&v| self.active[v]) else {
            return true;
        };
        let total = self.active.iter().filter(|a| **a).count();
        let mut seen = vec![false; self.graph.n];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut reached = 1;
        while let Some(v) = queue.pop_front() {
            for (u, _) in self.neighbors(v) {
                if !seen[u] {
                    seen[u] = true;
                    reached += 1;
                    queue.push_back(u);
                }
            }
        }
        reached == total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k3() -> Graph {
        Graph::new(3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]).unwrap()
    }

    fn star(leaves: usize) -> Graph {
        let edges: Vec<_> = (1..=leaves).map(|i| (0, i, 1.0)).collect();
        Graph::new(leaves + 1, &edges).unwrap()
    }

    #[test]
    fn builds_small_graphs() {
        let p2 = Graph::new(2, &[(0, 1, 1.0)]).unwrap();
        assert_eq!((p2.degree(0), p2.degree(1)), (1, 1));
        let g = k3();
        assert!((0..3).all(|v| g.degree(v) == 2));
        assert_eq!(g.self_weights(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(matches!(
            Graph::new(2, &[(0, 0, 1.0)]),
            Err(Error::InvalidGraph(_))
        ));
        assert!(matches!(
            Graph::new(2, &[(0, 2, 1.0)]),
            Err(Error::InvalidGraph(_))
        ));
        assert!(matches!(
            Graph::new(2, &[(0, 1, 1.0), (1, 0, 1.0)]),
            Err(Error::InvalidGraph(_))
        ));
        assert!(Graph::new(2, &[(0, 1, -1.0)]).is_err());
        assert!(Graph::with_self_weights(2, &[], vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn laplacian_fixtures() {
        let p2 = Graph::new(2, &[(0, 1, 1.0)]).unwrap();
        assert_eq!(
            p2.laplacian(),
            ndarray::arr2(&[[1.0, -1.0], [-1.0, 1.0]])
        );
        let l = k3().laplacian();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(l[[i, j]], if i == j { 2.0 } else { -1.0 });
            }
        }
        let empty = Graph::new(3, &[]).unwrap();
        assert!(empty.laplacian().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn connectivity() {
        assert!(Graph::new(2, &[(0, 1, 1.0)]).unwrap().is_connected());
        assert!(!Graph::new(3, &[(0, 1, 1.0)]).unwrap().is_connected());
        assert!(k3().is_connected());
    }

    #[test]
    fn removal() {
        let g = k3();
        let v = g.view().remove_node(2).unwrap();
        assert_eq!((v.degree(0), v.degree(1), v.degree(2)), (1, 1, 0));
        assert!(v.remove_node(2).is_err());

        let p2 = Graph::new(2, &[(0, 1, 1.0)]).unwrap();
        let v = p2.view().remove_node(0).unwrap();
        assert_eq!(v.degree(1), 0);

        let s = star(3);
        let v = s.view().remove_node(0).unwrap();
        assert!((1..4).all(|i| v.degree(i) == 0));
    }

    #[test]
    fn neighbors_sorted() {
        let g = Graph::new(4, &[(0, 3, 1.0), (0, 1, 1.0), (0, 2, 2.0)]).unwrap();
        assert_eq!(g.neighbor_ids(0), &[1, 2, 3]);
        assert_eq!(g.weighted_degree(0), 4.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn random_graph() -> impl Strategy<Value = Graph> {
            (2usize..50).prop_flat_map(|n| {
                proptest::collection::btree_set((0..n, 0..n), 0..(3 * n)).prop_map(move |pairs| {
                    let edges: Vec<_> = pairs
                        .into_iter()
                        .filter(|(a, b)| a < b)
                        .map(|(a, b)| (a, b, 1.0 + (a * 7 + b) as f64 % 3.0))
                        .collect();
                    Graph::new(n, &edges).unwrap()
                })
            })
        }

        proptest! {
            #[test]
            fn laplacian_rows_sum_to_zero(g in random_graph()) {
                let l = g.laplacian();
                for row in l.rows() {
                    prop_assert!(row.sum().abs() < 1e-12);
                }
            }

            #[test]
            fn removal_matches_rebuilt_graph(g in random_graph(), pick in 0usize..50) {
                let v = pick % g.node_count();
                let view = g.view().remove_node(v).unwrap();
                let kept: Vec<_> = g
                    .edges()
                    .iter()
                    .filter(|e| e.u != v && e.v != v)
                    .map(|e| (e.u, e.v, e.w))
                    .collect();
                let rebuilt = Graph::new(g.node_count(), &kept).unwrap();
                prop_assert_eq!(view.laplacian(), rebuilt.laplacian());
            }
        }
    }
}
