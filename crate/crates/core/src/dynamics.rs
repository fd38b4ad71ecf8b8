//! Settled (steady-state) expressed opinions.
//!
//! Linear FJ dynamics settle to `z = (L + W)^{-1} W s`; with unit self-weights
//! this is `z = (L + I)^{-1} s`. Expressed-opinion moderation grounds pinned
//! nodes at zero, node removal drops nodes from the system, and the
//! biased-assimilation variant is iterated to a fixed point.
//!
//! Every solver entry point bumps a thread-local settle counter, which lets
//! tests prove that planners never re-equilibrate the system.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, GraphView, NodeId};
use crate::linalg::SystemSolver;

thread_local! {
    static SETTLE_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of settles performed on the current thread so far.
pub fn settle_calls() -> u64 {
    SETTLE_CALLS.with(Cell::get)
}

fn count_settle() {
    SETTLE_CALLS.with(|c| c.set(c.get() + 1));
}

fn check_len(g: &Graph, s: &[f64]) -> Result<()> {
    if s.len() != g.node_count() {
        return Err(Error::InvalidInput(format!(
            "opinion vector of length {} for {} nodes",
            s.len(),
            g.node_count()
        )));
    }
    Ok(())
}

/// Direct steady-state solve of the linear FJ model.
pub fn solve_fj_direct(g: &Graph, s: &[f64]) -> Result<Vec<f64>> {
    check_len(g, s)?;
    count_settle();
    let view = g.view();
    SystemSolver::new(&view, None)?.solve(s)
}

/// Fixed-point iteration of the FJ averaging rule, starting from `z = s`.
pub fn solve_fj_iterative(g: &Graph, s: &[f64], tol: f64, max_iters: usize) -> Result<Vec<f64>> {
    check_len(g, s)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {tol}")));
    }
    count_settle();
    let n = g.node_count();
    let denom: Vec<f64> = (0..n).map(|i| g.self_weight(i) + g.weighted_degree(i)).collect();
    let mut z = s.to_vec();
    let mut next = vec![0.0; n];
    let mut delta = f64::INFINITY;
    for _ in 0..max_iters {
        delta = 0.0;
        for i in 0..n {
            let pull: f64 = g.neighbors(i).map(|(j, w)| w * z[j]).sum();
            next[i] = (g.self_weight(i) * s[i] + pull) / denom[i];
            delta = delta.max((next[i] - z[i]).abs());
        }
        std::mem::swap(&mut z, &mut next);
        if delta < tol {
            return Ok(z);
        }
    }
    Err(Error::NonConverged {
        iters: max_iters,
        last_delta: delta,
        last: z,
    })
}

/// Steady state with the expressed opinions of `fixed_zero` pinned to 0.
pub fn solve_me_constrained(g: &Graph, s: &[f64], fixed_zero: &[bool]) -> Result<Vec<f64>> {
    check_len(g, s)?;
    count_settle();
    let view = g.view();
    SystemSolver::new(&view, Some(fixed_zero))?.solve(s)
}

/// Steady state on the subgraph of active nodes; removed nodes report 0.
pub fn solve_fj_active(view: &GraphView<'_>, s: &[f64]) -> Result<Vec<f64>> {
    check_len(view.graph(), s)?;
    count_settle();
    SystemSolver::new(view, None)?.solve(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasConfig {
    /// Confirmation-bias exponent.
    pub b: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for BiasConfig {
    fn default() -> Self {
        Self {
            b: 1.0,
            max_iters: 10_000,
            tol: 1e-10,
        }
    }
}

impl BiasConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.b >= 0.0) || self.max_iters == 0 || !(self.tol > 0.0) {
            return Err(Error::InvalidInput(format!("invalid bias config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasOutcome {
    /// Settled opinions mapped back to `[-1, 1]`.
    pub z: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Biased-assimilation dynamics on `x = (s + 1) / 2`.
///
/// Each node sees the weighted neighbour mass `m_i = sum_j w_ij x_j` and its
/// weighted degree `d_i`:
///
/// `x_i <- (w_ii x_i + x_i^b m_i) / (w_ii + x_i^b m_i + (1 - x_i)^b (d_i - m_i))`
pub fn solve_bias_assimilation(g: &Graph, s: &[f64], cfg: &BiasConfig) -> Result<BiasOutcome> {
    check_len(g, s)?;
    cfg.validate()?;
    count_settle();
    let n = g.node_count();
    let degree: Vec<f64> = (0..n).map(|i| g.weighted_degree(i)).collect();
    let mut x: Vec<f64> = s.iter().map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0)).collect();
    let mut next = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        iterations += 1;
        let mut delta = 0.0f64;
        for i in 0..n {
            let mass: f64 = g.neighbors(i).map(|(j, w)| w * x[j]).sum();
            let agree = x[i].powf(cfg.b);
            let disagree = (1.0 - x[i]).powf(cfg.b);
            let w_self = g.self_weight(i);
            let num = w_self * x[i] + agree * mass;
            let den = w_self + agree * mass + disagree * (degree[i] - mass);
            let v = num / den;
            if !v.is_finite() {
                return Err(Error::NumericalFailure(format!(
                    "biased assimilation produced {v} at node {i}"
                )));
            }
            next[i] = v.clamp(0.0, 1.0);
            delta = delta.max((next[i] - x[i]).abs());
        }
        std::mem::swap(&mut x, &mut next);
        if delta < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(BiasOutcome {
        z: x.iter().map(|v| 2.0 * v - 1.0).collect(),
        iterations,
        converged,
    })
}

/// Which opinion-formation process the environment runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dynamics {
    Linear,
    BiasedAssimilation(BiasConfig),
}

/// The evolving opinion state of one planning episode.
#[derive(Debug, Clone)]
pub struct OpinionState {
    s0: Vec<f64>,
    s: Vec<f64>,
    fixed_zero: Vec<bool>,
    removed: Vec<bool>,
    z: Vec<f64>,
    dirty: bool,
    converged: bool,
}

impl OpinionState {
    pub fn new(s0: Vec<f64>) -> Self {
        let n = s0.len();
        Self {
            s: s0.clone(),
            z: vec![0.0; n],
            s0,
            fixed_zero: vec![false; n],
            removed: vec![false; n],
            dirty: true,
            converged: true,
        }
    }

    pub fn node_count(&self) -> usize {
        self.s.len()
    }

    pub fn initial_opinions(&self) -> &[f64] {
        &self.s0
    }

    /// Current internal opinions. Pinned nodes report 0.
    pub fn opinions(&self) -> &[f64] {
        &self.s
    }

    pub fn fixed_zero(&self) -> &[bool] {
        &self.fixed_zero
    }

    pub fn removed(&self) -> &[bool] {
        &self.removed
    }

    pub fn is_dirty(&self) -> bool {
        self.dirty
    }

    /// Whether the last nonlinear settle reached its tolerance.
    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Last settled opinions; `None` when stale.
    pub fn settled(&self) -> Option<&[f64]> {
        (!self.dirty).then_some(self.z.as_slice())
    }

    fn check_node(&self, v: NodeId) -> Result<()> {
        if v >= self.node_count() {
            return Err(Error::InvalidAction(format!("node {v} does not exist")));
        }
        if self.removed[v] {
            return Err(Error::InvalidAction(format!("node {v} was removed")));
        }
        Ok(())
    }

    /// Sets the internal opinion of `v` to 0.
    pub fn moderate_internal(&mut self, v: NodeId) -> Result<()> {
        self.check_node(v)?;
        self.s[v] = 0.0;
        self.dirty = true;
        Ok(())
    }

    /// Pins the expressed opinion of `v` to 0.
    pub fn pin_expressed(&mut self, v: NodeId) -> Result<()> {
        self.check_node(v)?;
        self.fixed_zero[v] = true;
        self.s[v] = 0.0;
        self.dirty = true;
        Ok(())
    }

    pub fn remove_node(&mut self, v: NodeId) -> Result<()> {
        self.check_node(v)?;
        if self.fixed_zero[v] {
            return Err(Error::InvalidAction(format!("node {v} is pinned")));
        }
        self.removed[v] = true;
        self.dirty = true;
        Ok(())
    }

    /// Recomputes the settled opinions if stale and returns them.
    pub fn settle(&mut self, g: &Graph, dynamics: &Dynamics) -> Result<&[f64]> {
        if g.node_count() != self.node_count() {
            return Err(Error::InvalidInput(format!(
                "state for {} nodes on a graph with {}",
                self.node_count(),
                g.node_count()
            )));
        }
        if !self.dirty {
            return Ok(&self.z);
        }
        let any_pinned = self.fixed_zero.iter().any(|p| *p);
        let any_removed = self.removed.iter().any(|r| *r);
        self.z = match dynamics {
            Dynamics::Linear => {
                if any_removed {
                    let view = GraphView::with_mask(g, self.removed.iter().map(|r| !r).collect())?;
                    solve_fj_active(&view, &self.s)?
                } else if any_pinned {
                    solve_me_constrained(g, &self.s, &self.fixed_zero)?
                } else {
                    solve_fj_direct(g, &self.s)?
                }
            }
            Dynamics::BiasedAssimilation(cfg) => {
                if any_pinned || any_removed {
                    return Err(Error::InvalidInput(
                        "biased assimilation supports internal-opinion moderation only".into(),
                    ));
                }
                let out = solve_bias_assimilation(g, &self.s, cfg)?;
                self.converged = out.converged;
                out.z
            }
        };
        self.dirty = false;
        Ok(&self.z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p2() -> Graph {
        Graph::new(2, &[(0, 1, 1.0)]).unwrap()
    }

    fn k3() -> Graph {
        Graph::new(3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn direct_fixtures() {
        assert!(close(
            &solve_fj_direct(&p2(), &[1.0, -1.0]).unwrap(),
            &[1.0 / 3.0, -1.0 / 3.0],
            1e-14
        ));
        assert!(close(
            &solve_fj_direct(&k3(), &[1.0, 1.0, -1.0]).unwrap(),
            &[0.5, 0.5, 0.0],
            1e-14
        ));
        assert_eq!(solve_fj_direct(&k3(), &[0.0; 3]).unwrap(), vec![0.0; 3]);
        assert!(matches!(
            solve_fj_direct(&k3(), &[0.0; 2]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn iterative_fixtures() {
        let z = solve_fj_iterative(&p2(), &[1.0, -1.0], 1e-10, 10_000).unwrap();
        assert!(close(&z, &[1.0 / 3.0, -1.0 / 3.0], 1e-9));
        let iso = Graph::new(1, &[]).unwrap();
        assert_eq!(solve_fj_iterative(&iso, &[0.7], 1e-10, 1).unwrap(), vec![0.7]);
        let z = solve_fj_iterative(&k3(), &[1.0, 1.0, -1.0], 1e-10, 10_000).unwrap();
        assert!(close(&z, &[0.5, 0.5, 0.0], 1e-9));
        match solve_fj_iterative(&p2(), &[1.0, -1.0], 1e-12, 2) {
            Err(Error::NonConverged { last, .. }) => assert_eq!(last.len(), 2),
            other => panic!("expected NonConverged, got {other:?}"),
        }
    }

    #[test]
    fn me_fixtures() {
        let z = solve_me_constrained(&p2(), &[1.0, -1.0], &[true, false]).unwrap();
        assert_eq!(z[0], 0.0);
        assert!((z[1] + 0.5).abs() < 1e-14);
        let free = solve_me_constrained(&k3(), &[1.0, 1.0, -1.0], &[false; 3]).unwrap();
        assert_eq!(free, solve_fj_direct(&k3(), &[1.0, 1.0, -1.0]).unwrap());
        let all = solve_me_constrained(&k3(), &[1.0, 1.0, -1.0], &[true; 3]).unwrap();
        assert_eq!(all, vec![0.0; 3]);
    }

    #[test]
    fn bias_fixed_points() {
        let iso = Graph::new(1, &[]).unwrap();
        for b in [0.0, 1.0, 3.0] {
            let cfg = BiasConfig { b, ..Default::default() };
            let out = solve_bias_assimilation(&iso, &[0.4], &cfg).unwrap();
            assert!((out.z[0] - 0.4).abs() < 1e-15);
            let out = solve_bias_assimilation(&p2(), &[1.0, 1.0], &cfg).unwrap();
            assert_eq!(out.z, vec![1.0, 1.0]);
        }
    }

    #[test]
    fn bias_b0_matches_long_trajectory() {
        let g = k3();
        let s = [1.0, 1.0, -1.0];
        let cfg = BiasConfig { b: 0.0, max_iters: 100_000, tol: 1e-14 };
        let out = solve_bias_assimilation(&g, &s, &cfg).unwrap();
        // brute force: 1e5 plain iterations of the same recursion with b = 0
        let mut x: Vec<f64> = s.iter().map(|v| (v + 1.0) / 2.0).collect();
        for _ in 0..100_000 {
            let next: Vec<f64> = (0..3)
                .map(|i| {
                    let mass: f64 = g.neighbors(i).map(|(j, w)| w * x[j]).sum();
                    (x[i] + mass) / (1.0 + mass + (g.weighted_degree(i) - mass))
                })
                .collect();
            x = next;
        }
        for i in 0..3 {
            assert!((out.z[i] - (2.0 * x[i] - 1.0)).abs() < 1e-8);
        }
    }

    #[test]
    fn bias_polarizes_two_camps() {
        // two triangles joined by one bridge
        let edges = [
            (0, 1, 1.0),
            (1, 2, 1.0),
            (0, 2, 1.0),
            (3, 4, 1.0),
            (4, 5, 1.0),
            (3, 5, 1.0),
            (2, 3, 1.0),
        ];
        let g = Graph::new(6, &edges).unwrap();
        let s = [1.0, 1.0, 1.0, -1.0, -1.0, -1.0];
        let lin = solve_fj_direct(&g, &s).unwrap();
        let out = solve_bias_assimilation(&g, &s, &BiasConfig::default()).unwrap();
        let mean = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64;
        assert!(mean(&out.z) >= mean(&lin));
    }

    #[test]
    fn settle_variants() {
        let g = p2();
        let mut st = OpinionState::new(vec![1.0, -1.0]);
        st.moderate_internal(0).unwrap();
        let z = st.settle(&g, &Dynamics::Linear).unwrap();
        assert!(close(z, &[-1.0 / 3.0, -2.0 / 3.0], 1e-14));

        let mut st = OpinionState::new(vec![1.0, -1.0]);
        st.pin_expressed(0).unwrap();
        let z = st.settle(&g, &Dynamics::Linear).unwrap();
        assert!(close(z, &[0.0, -0.5], 1e-14));

        let mut st = OpinionState::new(vec![1.0, 1.0, -1.0]);
        st.remove_node(2).unwrap();
        let z = st.settle(&k3(), &Dynamics::Linear).unwrap();
        assert!(close(z, &[1.0, 1.0, 0.0], 1e-14));
        assert!(st.remove_node(2).is_err());
    }

    #[test]
    fn settle_caches() {
        let g = k3();
        let mut st = OpinionState::new(vec![1.0, 1.0, -1.0]);
        let before = settle_calls();
        st.settle(&g, &Dynamics::Linear).unwrap();
        st.settle(&g, &Dynamics::Linear).unwrap();
        assert_eq!(settle_calls() - before, 1);
        assert!(!st.is_dirty());
    }
}
