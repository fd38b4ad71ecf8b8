//! Sequential moderation environments.
//!
//! An [`Env`] replays interventions on one [`Instance`], settles the opinion
//! dynamics after each action and hands back the step reward
//! `r_t = -(pi(z^(t)) / C) * c(a_t)`. Planners never see an `Env`: they only
//! receive the instance and its initial settled opinions.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::{BiasConfig, Dynamics, OpinionState};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::metrics::{anp, normalized_polarization, polarization_index, Normalization, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Mi,
    MiCost,
    Me,
    MeCost,
    MiContinuous,
    MeContinuous,
    MiBias,
    Removal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionKind {
    ModerateInternal,
    PinExpressed,
    Remove,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Mi,
        Variant::MiCost,
        Variant::Me,
        Variant::MeCost,
        Variant::MiContinuous,
        Variant::MeContinuous,
        Variant::MiBias,
        Variant::Removal,
    ];

    pub fn action(self) -> ActionKind {
        match self {
            Variant::Mi | Variant::MiCost | Variant::MiContinuous | Variant::MiBias => {
                ActionKind::ModerateInternal
            }
            Variant::Me | Variant::MeCost | Variant::MeContinuous => ActionKind::PinExpressed,
            Variant::Removal => ActionKind::Remove,
        }
    }

    pub fn cost_aware(self) -> bool {
        matches!(self, Variant::MiCost | Variant::MeCost)
    }

    pub fn continuous(self) -> bool {
        matches!(self, Variant::MiContinuous | Variant::MeContinuous)
    }

    /// Variants where settled opinions are linear in the internal opinions
    /// and interventions zero internal opinions.
    pub fn is_linear_mi(self) -> bool {
        matches!(self, Variant::Mi | Variant::MiCost | Variant::MiContinuous)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Mi => "mi",
            Variant::MiCost => "mi-cost",
            Variant::Me => "me",
            Variant::MeCost => "me-cost",
            Variant::MiContinuous => "mi-continuous",
            Variant::MeContinuous => "me-continuous",
            Variant::MiBias => "mi-bias",
            Variant::Removal => "removal",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown variant `{s}`")))
    }
}

/// One planning problem.
#[derive(Debug, Clone)]
pub struct Instance {
    pub name: String,
    pub graph: Arc<Graph>,
    pub s0: Vec<f64>,
    pub costs: Vec<f64>,
    pub budget: usize,
    pub variant: Variant,
    pub bias: Option<BiasConfig>,
}

impl Instance {
    pub fn new(
        graph: Arc<Graph>,
        s0: Vec<f64>,
        costs: Vec<f64>,
        budget: usize,
        variant: Variant,
    ) -> Result<Self> {
        let inst = Self {
            name: String::new(),
            graph,
            s0,
            costs,
            budget,
            variant,
            bias: None,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_bias(mut self, bias: BiasConfig) -> Self {
        self.bias = Some(bias);
        self
    }

    pub fn with_budget(mut self, budget: usize) -> Result<Self> {
        self.budget = budget;
        self.validate()?;
        Ok(self)
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.graph.node_count();
        if self.s0.len() != n || self.costs.len() != n {
            return Err(Error::InvalidInput(format!(
                "instance with {n} nodes has {} opinions and {} costs",
                self.s0.len(),
                self.costs.len()
            )));
        }
        if self.budget == 0 || self.budget > n {
            return Err(Error::InvalidBudget { k: self.budget, n });
        }
        if let Some(v) = self.s0.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!("opinion {v} outside [-1, 1]")));
        }
        if let Some(c) = self.costs.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(Error::InvalidInput(format!("invalid cost {c}")));
        }
        if self.total_cost() <= 0.0 {
            return Err(Error::InvalidInput("total cost must be positive".into()));
        }
        if let Some(b) = &self.bias {
            b.validate()?;
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    /// Cost used for rewards and features: the sampled cost for cost-aware
    /// variants, 1 otherwise.
    pub fn cost(&self, v: NodeId) -> f64 {
        if self.variant.cost_aware() {
            self.costs[v]
        } else {
            1.0
        }
    }

    pub fn total_cost(&self) -> f64 {
        (0..self.node_count()).map(|v| self.cost(v)).sum()
    }

    pub fn dynamics(&self) -> Dynamics {
        match self.variant {
            Variant::MiBias => Dynamics::BiasedAssimilation(self.bias.unwrap_or_default()),
            _ => Dynamics::Linear,
        }
    }

    /// Settled opinions of the untouched instance.
    pub fn initial_settled(&self) -> Result<Vec<f64>> {
        let mut st = OpinionState::new(self.s0.clone());
        Ok(st.settle(&self.graph, &self.dynamics())?.to_vec())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    /// Raw polarization index after the step.
    pub pol: f64,
    pub done: bool,
    pub mask: Vec<bool>,
}

/// Environment for one episode on one instance.
#[derive(Debug, Clone)]
pub struct Env<'a> {
    inst: &'a Instance,
    state: OpinionState,
    marked: Vec<bool>,
    actions: Vec<NodeId>,
    pol: f64,
    total_cost: f64,
    dynamics: Dynamics,
}

impl<'a> Env<'a> {
    /// Starts an episode and settles the untouched instance once.
    pub fn reset(inst: &'a Instance) -> Result<(Self, Vec<f64>)> {
        inst.validate()?;
        let dynamics = inst.dynamics();
        let mut state = OpinionState::new(inst.s0.clone());
        let z0 = state.settle(&inst.graph, &dynamics)?.to_vec();
        let pol = polarization_index(&z0)?;
        let env = Self {
            inst,
            state,
            marked: vec![false; inst.node_count()],
            actions: Vec::new(),
            pol,
            total_cost: inst.total_cost(),
            dynamics,
        };
        Ok((env, z0))
    }

    pub fn instance(&self) -> &'a Instance {
        self.inst
    }

    pub fn state(&self) -> &OpinionState {
        &self.state
    }

    pub fn marked(&self) -> &[bool] {
        &self.marked
    }

    pub fn mask(&self) -> Vec<bool> {
        self.marked.iter().map(|m| !m).collect()
    }

    pub fn actions(&self) -> &[NodeId] {
        &self.actions
    }

    pub fn t(&self) -> usize {
        self.actions.len()
    }

    /// Raw polarization of the current settled state.
    pub fn pol(&self) -> f64 {
        self.pol
    }

    pub fn settled(&self) -> &[f64] {
        self.state.settled().expect("environment state is settled after every step")
    }

    pub fn is_done(&self) -> bool {
        self.t() >= self.inst.budget || self.marked.iter().all(|m| *m)
    }

    pub fn step(&mut self, a: NodeId) -> Result<StepResult> {
        if self.is_done() {
            return Err(Error::InvalidAction("episode is finished".into()));
        }
        if a >= self.marked.len() || self.marked[a] {
            return Err(Error::InvalidAction(format!("node {a} is not feasible")));
        }
        match self.inst.variant.action() {
            ActionKind::ModerateInternal => self.state.moderate_internal(a)?,
            ActionKind::PinExpressed => self.state.pin_expressed(a)?,
            ActionKind::Remove => self.state.remove_node(a)?,
        }
        self.marked[a] = true;
        self.actions.push(a);
        let z = self.state.settle(&self.inst.graph, &self.dynamics)?;
        self.pol = polarization_index(z)?;
        let reward = -(self.pol / self.total_cost) * self.inst.cost(a);
        Ok(StepResult {
            reward,
            pol: self.pol,
            done: self.is_done(),
            mask: self.mask(),
        })
    }
}

/// Replays `plan` from the initial state and scores it.
///
/// The horizon is the plan length, which must be between 1 and the budget.
pub fn evaluate_plan(inst: &Instance, plan: &[NodeId], mode: Normalization) -> Result<Trajectory> {
    if plan.is_empty() {
        return Err(Error::InvalidPlan("empty plan".into()));
    }
    if plan.len() > inst.budget {
        return Err(Error::InvalidPlan(format!(
            "plan of length {} exceeds budget {}",
            plan.len(),
            inst.budget
        )));
    }
    let (mut env, z0) = Env::reset(inst)?;
    let mut pol_steps = vec![env.pol()];
    let mut pol_hat_steps = vec![normalized_polarization(&z0, mode)?];
    let mut costs_spent = vec![0.0];
    for &a in plan {
        let res = env.step(a).map_err(|e| match e {
            Error::InvalidAction(msg) => Error::InvalidPlan(msg),
            other => other,
        })?;
        pol_steps.push(res.pol);
        pol_hat_steps.push(normalized_polarization(env.settled(), mode)?);
        costs_spent.push(costs_spent.last().unwrap() + inst.cost(a));
    }
    let score = anp(&pol_hat_steps, plan.len())?;
    Ok(Trajectory {
        actions: plan.to_vec(),
        pol_steps,
        pol_hat_steps,
        anp: score,
        variant: inst.variant,
        costs_spent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(n: usize, edges: &[(usize, usize, f64)], s: &[f64], k: usize, v: Variant) -> Instance {
        Instance::new(Arc::new(Graph::new(n, edges).unwrap()), s.to_vec(), vec![1.0; n], k, v).unwrap()
    }

    fn k3(v: Variant, k: usize) -> Instance {
        inst(3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)], &[1.0, 1.0, -1.0], k, v)
    }

    #[test]
    fn reset_fixtures() {
        let p2 = inst(2, &[(0, 1, 1.0)], &[1.0, -1.0], 1, Variant::Mi);
        let (env, z0) = Env::reset(&p2).unwrap();
        assert!((z0[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((env.pol() - 1.0 / 9.0).abs() < 1e-15);

        let zero = inst(2, &[(0, 1, 1.0)], &[0.0, 0.0], 1, Variant::Mi);
        assert_eq!(Env::reset(&zero).unwrap().0.pol(), 0.0);

        let iso = inst(3, &[], &[0.5, -0.2, 1.0], 1, Variant::MiBias);
        let (_, z0) = Env::reset(&iso).unwrap();
        for (a, b) in z0.iter().zip([0.5, -0.2, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn step_fixtures() {
        let p2 = inst(2, &[(0, 1, 1.0)], &[1.0, -1.0], 1, Variant::Mi);
        let (mut env, _) = Env::reset(&p2).unwrap();
        let r = env.step(0).unwrap();
        assert!((r.pol - 5.0 / 18.0).abs() < 1e-14);
        assert!((r.reward + 5.0 / 18.0 / 2.0).abs() < 1e-14);
        assert!(r.done);
        assert!(env.step(1).is_err());

        let p2 = inst(2, &[(0, 1, 1.0)], &[1.0, -1.0], 1, Variant::Me);
        let (mut env, _) = Env::reset(&p2).unwrap();
        let r = env.step(0).unwrap();
        assert!((r.pol - 0.125).abs() < 1e-14);

        let k = k3(Variant::Removal, 1);
        let (mut env, _) = Env::reset(&k).unwrap();
        let r = env.step(2).unwrap();
        assert!((r.pol - 2.0 / 3.0).abs() < 1e-14);
        assert_eq!(r.mask, vec![true, true, false]);
    }

    #[test]
    fn infeasible_actions() {
        let k = k3(Variant::Mi, 2);
        let (mut env, _) = Env::reset(&k).unwrap();
        env.step(1).unwrap();
        assert!(matches!(env.step(1), Err(Error::InvalidAction(_))));
        assert!(matches!(env.step(9), Err(Error::InvalidAction(_))));
    }

    #[test]
    fn evaluate_fixtures() {
        let k = k3(Variant::Mi, 3);
        assert!(matches!(evaluate_plan(&k, &[], Normalization::PerNode), Err(Error::InvalidPlan(_))));
        let full = evaluate_plan(&k, &[0, 1, 2], Normalization::PerNode).unwrap();
        assert_eq!(*full.pol_hat_steps.last().unwrap(), 0.0);
        assert_eq!(full.pol_steps.len(), 4);

        let k = k3(Variant::Mi, 2);
        let a = evaluate_plan(&k, &[0, 2], Normalization::PerNode).unwrap();
        let b = evaluate_plan(&k, &[2, 0], Normalization::PerNode).unwrap();
        assert!((a.final_pol() - b.final_pol()).abs() < 1e-14);
        assert!((a.anp - b.anp).abs() > 1e-3);
        assert!(matches!(
            evaluate_plan(&k, &[0, 0], Normalization::PerNode),
            Err(Error::InvalidPlan(_))
        ));
        assert!(evaluate_plan(&k, &[0, 1, 2], Normalization::PerNode).is_err());
    }

    #[test]
    fn costs_only_count_for_cost_variants() {
        let g = Arc::new(Graph::new(2, &[(0, 1, 1.0)]).unwrap());
        let plain = Instance::new(g.clone(), vec![1.0, -1.0], vec![2.0, 0.5], 1, Variant::Mi).unwrap();
        assert_eq!(plain.cost(0), 1.0);
        let costly = plain.clone().with_variant(Variant::MiCost);
        assert_eq!(costly.cost(0), 2.0);
        assert_eq!(costly.total_cost(), 2.5);
        assert!(Instance::new(g, vec![1.0, -1.0], vec![1.0; 2], 3, Variant::Mi).is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("mx".parse::<Variant>().is_err());
    }
}
