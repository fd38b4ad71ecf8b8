//! Non-learning planners.
//!
//! Every planner here is one-shot: it sees only the instance and the initial
//! settled opinions `z^(0)` and returns a full ordered sequence. The
//! exhaustive oracle is the exception; it replays candidate sequences through
//! the environment and exists to check the others on tiny instances.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{Env, Instance};
use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::linalg::{SystemSolver, DENSE_LIMIT};
use crate::metrics::{normalized_polarization, Normalization};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Random,
    Pagerank,
    ExtremeExpressed,
    ExtremeNeighbours,
    Bomp,
    Exhaustive,
    PacifierRl,
    PacifierGreedy,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Random,
        Method::Pagerank,
        Method::ExtremeExpressed,
        Method::ExtremeNeighbours,
        Method::Bomp,
        Method::Exhaustive,
        Method::PacifierRl,
        Method::PacifierGreedy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::Pagerank => "pagerank",
            Method::ExtremeExpressed => "extreme-expressed",
            Method::ExtremeNeighbours => "extreme-neighbours",
            Method::Bomp => "bomp",
            Method::Exhaustive => "exhaustive",
            Method::PacifierRl => "pacifier-rl",
            Method::PacifierGreedy => "pacifier-greedy",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, Method::PacifierRl | Method::PacifierGreedy)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown method `{s}`")))
    }
}

/// An ordered intervention sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub actions: Vec<NodeId>,
    pub method: Method,
    /// Score attached to each chosen action by the planner.
    pub scores: Vec<f64>,
}

/// Everything a one-shot planner may look at.
#[derive(Debug, Clone, Copy)]
pub struct PlanningContext<'a> {
    pub instance: &'a Instance,
    pub z0: &'a [f64],
    pub budget: usize,
}

impl<'a> PlanningContext<'a> {
    pub fn new(instance: &'a Instance, z0: &'a [f64]) -> Self {
        Self {
            instance,
            z0,
            budget: instance.budget,
        }
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    fn check_budget(&self) -> Result<usize> {
        let n = self.instance.node_count();
        if self.budget > n {
            return Err(Error::InvalidBudget { k: self.budget, n });
        }
        if self.z0.len() != n {
            return Err(Error::InvalidInput(format!(
                "initial opinions of length {} for {n} nodes",
                self.z0.len()
            )));
        }
        Ok(self.budget)
    }
}

/// Integer sort keys that treat scores closer than ~1e-12 of the largest
/// magnitude as equal, so symmetric nodes tie exactly.
fn quantized(scores: &[f64]) -> Vec<i64> {
    let scale = scores.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if scale == 0.0 {
        return vec![0; scores.len()];
    }
    scores
        .iter()
        .map(|s| (s / scale * 1e12).round() as i64)
        .collect()
}

/// Node ids by descending score, ties by ascending id, truncated to `k`.
fn top_k(scores: &[f64], k: usize, method: Method) -> Plan {
    let keys = quantized(scores);
    let mut order: Vec<NodeId> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| keys[b].cmp(&keys[a]).then(a.cmp(&b)));
    order.truncate(k);
    Plan {
        scores: order.iter().map(|&v| scores[v]).collect(),
        actions: order,
        method,
    }
}

pub fn plan_random<R: Rng + ?Sized>(ctx: &PlanningContext<'_>, rng: &mut R) -> Result<Plan> {
    let k = ctx.check_budget()?;
    let actions = sample(rng, ctx.instance.node_count(), k).into_vec();
    Ok(Plan {
        scores: vec![0.0; actions.len()],
        actions,
        method: Method::Random,
    })
}

pub const PAGERANK_DAMPING: f64 = 0.85;

/// Weighted PageRank by power iteration; dangling mass is spread uniformly.
pub fn pagerank(inst: &Instance, damping: f64, tol: f64, max_iters: usize) -> Vec<f64> {
    let g = &inst.graph;
    let n = g.node_count();
    if n == 0 {
        return Vec::new();
    }
    let wdeg: Vec<f64> = (0..n).map(|v| g.weighted_degree(v)).collect();
    let mut p = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for _ in 0..max_iters {
        let dangling: f64 = (0..n).filter(|&v| wdeg[v] == 0.0).map(|v| p[v]).sum();
        let base = (1.0 - damping) / n as f64 + damping * dangling / n as f64;
        for v in 0..n {
            let inflow: f64 = g.neighbors(v).map(|(u, w)| p[u] * w / wdeg[u]).sum();
            next[v] = base + damping * inflow;
        }
        let diff: f64 = p.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut p, &mut next);
        if diff < tol {
            break;
        }
    }
    p
}

pub fn plan_pagerank(ctx: &PlanningContext<'_>) -> Result<Plan> {
    let k = ctx.check_budget()?;
    let scores = pagerank(ctx.instance, PAGERANK_DAMPING, 1e-10, 200);
    Ok(top_k(&scores, k, Method::Pagerank))
}

/// Ranks nodes by `|z_i^(0)|`.
pub fn plan_extreme_expressed(ctx: &PlanningContext<'_>) -> Result<Plan> {
    let k = ctx.check_budget()?;
    let scores: Vec<f64> = ctx.z0.iter().map(|z| z.abs()).collect();
    Ok(top_k(&scores, k, Method::ExtremeExpressed))
}

/// Ranks nodes by the total `|z^(0)|` of their neighbours.
pub fn plan_extreme_neighbours(ctx: &PlanningContext<'_>) -> Result<Plan> {
    let k = ctx.check_budget()?;
    let g = &ctx.instance.graph;
    let scores: Vec<f64> = (0..g.node_count())
        .map(|v| g.neighbor_ids(v).iter().map(|&u| ctx.z0[u].abs()).sum())
        .collect();
    Ok(top_k(&scores, k, Method::ExtremeNeighbours))
}

/// Squared norms of every column of the influence operator.
fn column_norms(solver: &SystemSolver<'_>, n: usize) -> Result<Vec<f64>> {
    let col = |i: usize| -> Result<f64> {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        Ok(solver.solve(&e)?.iter().map(|x| x * x).sum())
    };
    if n <= DENSE_LIMIT {
        (0..n).map(col).collect()
    } else {
        (0..n).into_par_iter().map(col).collect()
    }
}

/// Matching pursuit over the columns `q_i` of the influence operator.
///
/// Keeps the residual `r = z^(0) - sum_{chosen} s_i q_i`, which under linear
/// internal-opinion moderation is exactly the settled state after the chosen
/// prefix. Each step takes the node with the largest residual reduction
/// `||r||^2 - ||r - s_i q_i||^2 = 2 s_i <r, q_i> - s_i^2 ||q_i||^2`, divided by
/// the node cost for cost-aware variants.
pub fn plan_bomp(ctx: &PlanningContext<'_>) -> Result<Plan> {
    let inst = ctx.instance;
    if !inst.variant.is_linear_mi() {
        return Err(Error::UnsupportedVariant(inst.variant.to_string()));
    }
    let k = ctx.check_budget()?;
    let g = &inst.graph;
    let n = g.node_count();
    let view = g.view();
    let solver = SystemSolver::new(&view, None)?;
    let norms = column_norms(&solver, n)?;
    let s = &inst.s0;
    let mut residual = ctx.z0.to_vec();
    let mut chosen = vec![false; n];
    let mut actions = Vec::with_capacity(k);
    let mut scores = Vec::with_capacity(k);
    for _ in 0..k {
        // <r, q_i> = (Q^T r)_i with Q^T r = W (L + W)^{-1} r
        let scaled: Vec<f64> = residual
            .iter()
            .enumerate()
            .map(|(i, r)| r / g.self_weight(i))
            .collect();
        let back = solver.solve(&scaled)?;
        let gain: Vec<f64> = (0..n)
            .map(|i| {
                if chosen[i] {
                    f64::NEG_INFINITY
                } else {
                    let corr = g.self_weight(i) * back[i];
                    (2.0 * s[i] * corr - s[i] * s[i] * norms[i]) / inst.cost(i)
                }
            })
            .collect();
        let finite: Vec<f64> = gain.iter().map(|x| if x.is_finite() { *x } else { 0.0 }).collect();
        let keys = quantized(&finite);
        let best = (0..n)
            .filter(|&i| !chosen[i])
            .max_by(|&a, &b| keys[a].cmp(&keys[b]).then(b.cmp(&a)))
            .expect("budget never exceeds node count");
        chosen[best] = true;
        actions.push(best);
        scores.push(gain[best]);
        if s[best] != 0.0 {
            let mut e = vec![0.0; n];
            e[best] = s[best];
            let q = solver.solve(&e)?;
            for (r, qi) in residual.iter_mut().zip(&q) {
                *r -= qi;
            }
        }
    }
    Ok(Plan {
        actions,
        method: Method::Bomp,
        scores,
    })
}

pub const EXHAUSTIVE_MAX_NODES: usize = 12;
pub const EXHAUSTIVE_MAX_BUDGET: usize = 3;

/// Enumerates every ordered sequence of `k` distinct nodes and returns the
/// one with the lowest ANP (lexicographically first on ties) together with
/// that ANP.
pub fn plan_exhaustive(inst: &Instance, k: usize, mode: Normalization) -> Result<(Plan, f64)> {
    let n = inst.node_count();
    if k == 0 {
        return Err(Error::Refused("exhaustive search needs k >= 1".into()));
    }
    if n > EXHAUSTIVE_MAX_NODES || k > EXHAUSTIVE_MAX_BUDGET {
        return Err(Error::Refused(format!(
            "exhaustive search limited to n <= {EXHAUSTIVE_MAX_NODES}, k <= {EXHAUSTIVE_MAX_BUDGET} (got n={n}, k={k})"
        )));
    }
    if k > n {
        return Err(Error::InvalidBudget { k, n });
    }
    let inst = inst.clone().with_budget(k)?;
    let (env, z0) = Env::reset(&inst)?;
    let start = 0.0 + normalized_polarization(&z0, mode)?;

    struct Search {
        k: usize,
        mode: Normalization,
        best: Option<(f64, Vec<NodeId>)>,
    }

    fn dfs(search: &mut Search, env: &Env<'_>, acc: f64, prefix: &mut Vec<NodeId>) -> Result<()> {
        if prefix.len() == search.k {
            let score = acc / search.k as f64;
            if search.best.as_ref().is_none_or(|(b, _)| score < *b) {
                search.best = Some((score, prefix.clone()));
            }
            return Ok(());
        }
        for v in 0..env.marked().len() {
            if env.marked()[v] {
                continue;
            }
            let mut next = env.clone();
            next.step(v)?;
            let step = normalized_polarization(next.settled(), search.mode)?;
            prefix.push(v);
            dfs(search, &next, acc + step, prefix)?;
            prefix.pop();
        }
        Ok(())
    }

    let mut search = Search { k, mode, best: None };
    dfs(&mut search, &env, start, &mut Vec::with_capacity(k))?;
    let (score, actions) = search.best.expect("at least one sequence exists");
    Ok((
        Plan {
            scores: vec![score; actions.len()],
            actions,
            method: Method::Exhaustive,
        },
        score,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{evaluate_plan, Variant};
    use crate::graph::Graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn inst(n: usize, edges: &[(usize, usize, f64)], s: &[f64], k: usize) -> Instance {
        Instance::new(Arc::new(Graph::new(n, edges).unwrap()), s.to_vec(), vec![1.0; n], k, Variant::Mi).unwrap()
    }

    fn k3(k: usize) -> Instance {
        inst(3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)], &[1.0, 1.0, -1.0], k)
    }

    fn star(s: &[f64], k: usize) -> Instance {
        inst(4, &[(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0)], s, k)
    }

    fn plan_with<F>(inst: &Instance, f: F) -> Plan
    where
        F: Fn(&PlanningContext<'_>) -> Result<Plan>,
    {
        let z0 = inst.initial_settled().unwrap();
        f(&PlanningContext::new(inst, &z0)).unwrap()
    }

    #[test]
    fn random_plans() {
        let g = k3(3);
        let z0 = g.initial_settled().unwrap();
        let ctx = PlanningContext::new(&g, &z0);
        let mut p = plan_random(&ctx, &mut ChaCha8Rng::seed_from_u64(1)).unwrap().actions;
        let again = plan_random(&ctx, &mut ChaCha8Rng::seed_from_u64(1)).unwrap().actions;
        assert_eq!(p, again);
        p.sort();
        assert_eq!(p, vec![0, 1, 2]);
        assert!(plan_random(&ctx.with_budget(0), &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap()
            .actions
            .is_empty());
        assert!(matches!(
            plan_random(&ctx.with_budget(4), &mut ChaCha8Rng::seed_from_u64(1)),
            Err(Error::InvalidBudget { .. })
        ));
    }

    #[test]
    fn pagerank_plans() {
        let p = plan_with(&star(&[1.0; 4], 1), plan_pagerank);
        assert_eq!(p.actions, vec![0]);
        assert_eq!(plan_with(&k3(3), plan_pagerank).actions, vec![0, 1, 2]);
        let p2 = inst(2, &[(0, 1, 1.0)], &[1.0, -1.0], 2);
        assert_eq!(plan_with(&p2, plan_pagerank).actions, vec![0, 1]);
    }

    #[test]
    fn extreme_expressed_plans() {
        assert_eq!(plan_with(&k3(3), plan_extreme_expressed).actions, vec![0, 1, 2]);
        let uniform = star(&[1.0; 4], 4);
        assert_eq!(plan_with(&uniform, plan_extreme_expressed).actions, vec![0, 1, 2, 3]);
        let zero = star(&[0.0; 4], 4);
        assert_eq!(plan_with(&zero, plan_extreme_expressed).actions, vec![0, 1, 2, 3]);
    }

    #[test]
    fn extreme_neighbours_plans() {
        let s = star(&[0.0, 1.0, 1.0, -1.0], 1);
        assert_eq!(plan_with(&s, plan_extreme_neighbours).actions, vec![0]);
        let p = plan_with(&k3(3), plan_extreme_neighbours);
        assert_eq!(p.actions, vec![2, 0, 1]);
        assert!((p.scores[0] - 1.0).abs() < 1e-12);
        let iso = inst(3, &[(0, 1, 1.0)], &[1.0, -1.0, 1.0], 3);
        assert_eq!(*plan_with(&iso, plan_extreme_neighbours).actions.last().unwrap(), 2);
    }

    #[test]
    fn bomp_plans() {
        let p2 = inst(2, &[(0, 1, 1.0)], &[1.0, -1.0], 1);
        assert_eq!(plan_with(&p2, plan_bomp).actions, vec![0]);
        let first = plan_with(&k3(1), plan_bomp).actions[0];
        assert_ne!(first, 2);

        let full = k3(3);
        let plan = plan_with(&full, plan_bomp);
        let traj = evaluate_plan(&full, &plan.actions, Normalization::PerNode).unwrap();
        assert!(traj.final_pol().abs() < 1e-20);

        let me = k3(1).with_variant(Variant::Me);
        let z0 = me.initial_settled().unwrap();
        assert!(matches!(
            plan_bomp(&PlanningContext::new(&me, &z0)),
            Err(Error::UnsupportedVariant(_))
        ));
    }

    #[test]
    fn bomp_residual_tracks_settled_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = crate::synthgen::GenConfig::default().with_nodes(20, 30);
        let inst = crate::synthgen::generate_instance(&cfg, &mut rng).unwrap();
        let z0 = inst.initial_settled().unwrap();
        let plan = plan_bomp(&PlanningContext::new(&inst, &z0)).unwrap();
        let (mut env, _) = Env::reset(&inst).unwrap();
        let q = |i: usize| {
            let mut e = vec![0.0; inst.node_count()];
            e[i] = 1.0;
            crate::dynamics::solve_fj_direct(&inst.graph, &e).unwrap()
        };
        let mut r = z0.clone();
        for &a in &plan.actions {
            let qa = q(a);
            for (ri, qi) in r.iter_mut().zip(&qa) {
                *ri -= inst.s0[a] * qi;
            }
            env.step(a).unwrap();
            for (x, y) in env.settled().iter().zip(&r) {
                assert!((x - y).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn exhaustive_plans() {
        let (p, _) = plan_exhaustive(&k3(1), 1, Normalization::PerNode).unwrap();
        assert_eq!(p.actions, vec![0]);
        assert!(matches!(
            plan_exhaustive(&k3(1), 0, Normalization::PerNode),
            Err(Error::Refused(_))
        ));
        let big = inst(13, &[], &[1.0; 13], 1);
        assert!(matches!(
            plan_exhaustive(&big, 1, Normalization::PerNode),
            Err(Error::Refused(_))
        ));
        // k = 1 is the argmin over single interventions
        let g = star(&[1.0, -1.0, 1.0, -0.5], 1);
        let (p, score) = plan_exhaustive(&g, 1, Normalization::PerNode).unwrap();
        let best = (0..4)
            .map(|v| evaluate_plan(&g, &[v], Normalization::PerNode).unwrap().anp)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(score, best);
        assert_eq!(evaluate_plan(&g, &p.actions, Normalization::PerNode).unwrap().anp, score);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
    }
}
