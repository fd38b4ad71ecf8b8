//! Two-echo-chamber instance generator.
//!
//! Nodes are split into two halves of (almost) equal size; each half is a
//! Barabási–Albert graph, and a sparse random set of cross-camp edges joins
//! them. Opinions follow the camp sign.

use std::collections::HashSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{Instance, Variant};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::metrics::Camp;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpinionMode {
    #[default]
    Binary,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CostMode {
    Unit,
    Uniform { low: f64, high: f64 },
}

impl Default for CostMode {
    fn default() -> Self {
        CostMode::Uniform { low: 0.5, high: 1.5 }
    }
}

/// Maximum number of cross-edge resamples before giving up on connectivity.
pub const CONNECT_RETRIES: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_min: usize,
    pub n_max: usize,
    /// Attachment parameter range; each camp draws its own value.
    pub ba_m_min: usize,
    pub ba_m_max: usize,
    /// Range of the cross-edge count as a fraction of intra-camp edges.
    pub cross_ratio_min: f64,
    pub cross_ratio_max: f64,
    pub opinion_mode: OpinionMode,
    pub cost_mode: CostMode,
    /// Budget as a fraction of `n`, sampled uniformly.
    pub budget_frac_min: f64,
    pub budget_frac_max: f64,
    pub variant: Variant,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_min: 18,
            n_max: 50,
            ba_m_min: 1,
            ba_m_max: 4,
            cross_ratio_min: 0.01,
            cross_ratio_max: 0.17,
            opinion_mode: OpinionMode::Binary,
            cost_mode: CostMode::default(),
            budget_frac_min: 0.1,
            budget_frac_max: 0.3,
            variant: Variant::Mi,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn with_nodes(mut self, n_min: usize, n_max: usize) -> Self {
        self.n_min = n_min;
        self.n_max = n_max;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(format!("generator config: {msg}")));
        if self.n_min < 4 || self.n_max < self.n_min {
            return bad("need 4 <= n_min <= n_max");
        }
        if self.ba_m_min < 1 || self.ba_m_max < self.ba_m_min {
            return bad("need 1 <= ba_m_min <= ba_m_max");
        }
        if !(0.0 <= self.cross_ratio_min
            && self.cross_ratio_min <= self.cross_ratio_max
            && self.cross_ratio_max <= 1.0)
        {
            return bad("need 0 <= cross_ratio_min <= cross_ratio_max <= 1");
        }
        if !(0.0 < self.budget_frac_min
            && self.budget_frac_min <= self.budget_frac_max
            && self.budget_frac_max <= 1.0)
        {
            return bad("need 0 < budget_frac_min <= budget_frac_max <= 1");
        }
        if let CostMode::Uniform { low, high } = self.cost_mode {
            if !(0.0 < low && low <= high) {
                return bad("need 0 < cost low <= high");
            }
        }
        Ok(())
    }
}

/// Barabási–Albert graph on `n` nodes with attachment parameter `m`.
///
/// Starts from a star on `m + 1` nodes; every later node attaches to `m`
/// distinct existing nodes chosen with probability proportional to degree.
pub fn barabasi_albert<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Vec<(NodeId, NodeId)> {
    if n < 2 {
        return Vec::new();
    }
    let m = m.clamp(1, n - 1);
    let mut edges = Vec::with_capacity(m * n);
    // each endpoint appears once per incident edge
    let mut repeated: Vec<NodeId> = Vec::with_capacity(2 * m * n);
    for leaf in 1..=m {
        edges.push((0, leaf));
        repeated.extend([0, leaf]);
    }
    let mut targets: Vec<NodeId> = Vec::with_capacity(m);
    for source in (m + 1)..n {
        targets.clear();
        while targets.len() < m {
            let t = repeated[rng.gen_range(0..repeated.len())];
            if !targets.contains(&t) {
                targets.push(t);
            }
        }
        for &t in &targets {
            edges.push((t, source));
            repeated.extend([t, source]);
        }
    }
    edges
}

pub fn sample_costs<R: Rng + ?Sized>(n: usize, mode: CostMode, rng: &mut R) -> Vec<f64> {
    match mode {
        CostMode::Unit => vec![1.0; n],
        CostMode::Uniform { low, high } if low == high => vec![low; n],
        CostMode::Uniform { low, high } => (0..n).map(|_| rng.gen_range(low..high)).collect(),
    }
}

/// Magnitudes uniform on `(0, 1]`, signed by camp.
pub fn sample_continuous_opinions<R: Rng + ?Sized>(camps: &[Camp], rng: &mut R) -> Vec<f64> {
    camps
        .iter()
        .map(|c| {
            // gen::<f64>() is in [0, 1); flip to (0, 1]
            let mag = 1.0 - rng.gen::<f64>();
            c.sign() * mag
        })
        .collect()
}

/// A generated graph before it is wrapped into an [`Instance`].
#[derive(Debug, Clone)]
pub struct EchoChamberGraph {
    pub graph: Graph,
    pub camps: Vec<Camp>,
    pub intra_edges: usize,
    pub cross_edges: usize,
}

/// Builds the two-camp graph on `n` nodes. Positive camp is `0..ceil(n/2)`.
pub fn echo_chamber_graph<R: Rng + ?Sized>(n: usize, cfg: &GenConfig, rng: &mut R) -> Result<EchoChamberGraph> {
    let n_pos = n.div_ceil(2);
    let n_neg = n - n_pos;
    let m_pos = rng.gen_range(cfg.ba_m_min..=cfg.ba_m_max);
    let m_neg = rng.gen_range(cfg.ba_m_min..=cfg.ba_m_max);
    let mut intra: Vec<(NodeId, NodeId)> = barabasi_albert(n_pos, m_pos, rng);
    intra.extend(
        barabasi_albert(n_neg, m_neg, rng)
            .into_iter()
            .map(|(a, b)| (a + n_pos, b + n_pos)),
    );
    let camps: Vec<Camp> = (0..n)
        .map(|v| if v < n_pos { Camp::Positive } else { Camp::Negative })
        .collect();

    let max_cross = n_pos * n_neg;
    for _ in 0..CONNECT_RETRIES {
        let ratio = if cfg.cross_ratio_max > cfg.cross_ratio_min {
            rng.gen_range(cfg.cross_ratio_min..=cfg.cross_ratio_max)
        } else {
            cfg.cross_ratio_min
        };
        // rounding alone can leave the realised ratio outside the configured range
        let m = intra.len() as f64;
        let lo = (cfg.cross_ratio_min * m - 1e-9).ceil() as usize;
        let hi = ((cfg.cross_ratio_max * m + 1e-9).floor() as usize).max(lo);
        let count = ((ratio * m).round() as usize).clamp(lo, hi).min(max_cross);
        let mut seen = HashSet::with_capacity(count);
        let mut cross = Vec::with_capacity(count);
        while cross.len() < count {
            let a = rng.gen_range(0..n_pos);
            let b = n_pos + rng.gen_range(0..n_neg);
            if seen.insert((a, b)) {
                cross.push((a, b));
            }
        }
        let edges: Vec<_> = intra
            .iter()
            .chain(&cross)
            .map(|&(a, b)| (a, b, 1.0))
            .collect();
        let graph = Graph::new(n, &edges)?;
        if graph.is_connected() {
            return Ok(EchoChamberGraph {
                graph,
                camps,
                intra_edges: intra.len(),
                cross_edges: cross.len(),
            });
        }
    }
    Err(Error::GenerationFailed(format!(
        "no connected graph on {n} nodes after {CONNECT_RETRIES} cross-edge draws"
    )))
}

pub fn generate_instance<R: Rng + ?Sized>(cfg: &GenConfig, rng: &mut R) -> Result<Instance> {
    cfg.validate()?;
    let n = rng.gen_range(cfg.n_min..=cfg.n_max);
    let ec = echo_chamber_graph(n, cfg, rng)?;
    let s0 = match cfg.opinion_mode {
        OpinionMode::Binary => ec.camps.iter().map(|c| c.sign()).collect(),
        OpinionMode::Continuous => sample_continuous_opinions(&ec.camps, rng),
    };
    let costs = sample_costs(n, cfg.cost_mode, rng);
    let frac = if cfg.budget_frac_max > cfg.budget_frac_min {
        rng.gen_range(cfg.budget_frac_min..=cfg.budget_frac_max)
    } else {
        cfg.budget_frac_min
    };
    let budget = ((frac * n as f64).round() as usize).clamp(1, n);
    Instance::new(Arc::new(ec.graph), s0, costs, budget, cfg.variant)
}

/// Shuffled copy of `0..n`; used by callers that want camp-agnostic ids.
pub fn permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<NodeId> {
    let mut p: Vec<NodeId> = (0..n).collect();
    p.shuffle(rng);
    p
}
