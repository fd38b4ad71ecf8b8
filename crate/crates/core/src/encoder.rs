//! State featurisation and the message-passing encoder.
//!
//! Features are a pure function of the instance and the set of nodes
//! intervened on so far, so the policy never needs a settled state.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{ActionKind, Instance};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::neural::{normalize_rows, Adjacency, ParamStore, Tape, Var};

pub const NODE_FEATURES: usize = 4;
pub const AUX_FEATURES: usize = 6;

/// Per-node input rows `[s_t, s_0, mark, cost]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatures {
    pub x: Array2<f64>,
}

impl NodeFeatures {
    pub fn row(&self, v: NodeId) -> [f64; NODE_FEATURES] {
        let r = self.x.row(v);
        [r[0], r[1], r[2], r[3]]
    }
}

/// Graph-level statistics fed to the decoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxFeatures {
    pub u: [f64; AUX_FEATURES],
}

impl AuxFeatures {
    pub fn to_row(&self) -> Array2<f64> {
        Array2::from_shape_vec((1, AUX_FEATURES), self.u.to_vec()).expect("fixed shape")
    }
}

/// Current internal opinions implied by the intervened set. Moderated and
/// pinned nodes sit at 0; removed nodes keep their value and are hidden by
/// their mark instead.
pub fn current_opinions(inst: &Instance, marked: &[bool]) -> Vec<f64> {
    match inst.variant.action() {
        ActionKind::Remove => inst.s0.clone(),
        ActionKind::ModerateInternal | ActionKind::PinExpressed => inst
            .s0
            .iter()
            .zip(marked)
            .map(|(&s, &m)| if m { 0.0 } else { s })
            .collect(),
    }
}

pub fn build_node_features(inst: &Instance, marked: &[bool]) -> NodeFeatures {
    let s_t = current_opinions(inst, marked);
    let n = inst.node_count();
    let x = Array2::from_shape_fn((n, NODE_FEATURES), |(v, j)| match j {
        0 => s_t[v],
        1 => inst.s0[v],
        2 => f64::from(u8::from(marked[v])),
        _ => inst.cost(v),
    });
    NodeFeatures { x }
}

fn pairs(d: usize) -> f64 {
    (d * d.saturating_sub(1)) as f64 / 2.0
}

/// Coverage, cross-sign and two-hop statistics of the state.
///
/// `covered` is the intervened set; the active subgraph is induced by the
/// remaining nodes. Zero opinions count as negative for the camp split but
/// never as a sign disagreement.
pub fn build_aux_features(g: &Graph, s_t: &[f64], covered: &[bool]) -> AuxFeatures {
    let n = g.node_count();
    let m = g.edge_count();
    let mut u = [0.0; AUX_FEATURES];
    if n == 0 {
        return AuxFeatures { u };
    }
    let n2 = (n * n) as f64;
    u[0] = covered.iter().filter(|c| **c).count() as f64 / n as f64;
    if m > 0 {
        let mut cov = 0usize;
        let mut cross = 0usize;
        for e in g.edges() {
            if covered[e.u] || covered[e.v] {
                cov += 1;
            } else if s_t[e.u] * s_t[e.v] < 0.0 {
                cross += 1;
            }
        }
        u[1] = cov as f64 / m as f64;
        u[2] = cross as f64 / m as f64;
    }
    let (mut all, mut pos, mut neg) = (0.0, 0.0, 0.0);
    for v in (0..n).filter(|&v| !covered[v]) {
        let positive = s_t[v] > 0.0;
        let (mut d, mut same) = (0usize, 0usize);
        for &w in g.neighbor_ids(v) {
            if covered[w] {
                continue;
            }
            d += 1;
            if (s_t[w] > 0.0) == positive {
                same += 1;
            }
        }
        all += pairs(d);
        if positive {
            pos += pairs(same);
        } else {
            neg += pairs(same);
        }
    }
    u[3] = all / n2;
    u[4] = pos / n2;
    u[5] = neg / n2;
    AuxFeatures { u }
}

/// Everything the network consumes for one state.
#[derive(Debug, Clone)]
pub struct StateInput {
    pub features: NodeFeatures,
    pub aux: AuxFeatures,
    pub adjacency: Arc<Adjacency>,
    /// Nodes still selectable.
    pub mask: Vec<bool>,
    /// Nodes present in the graph; only removal clears entries.
    pub present: Vec<bool>,
}

impl StateInput {
    pub fn node_count(&self) -> usize {
        self.mask.len()
    }
}

/// Shares the neighbour lists of an instance across all of its states.
#[derive(Debug, Clone)]
pub struct InputBuilder<'a> {
    inst: &'a Instance,
    full: Arc<Adjacency>,
}

impl<'a> InputBuilder<'a> {
    pub fn new(inst: &'a Instance) -> Self {
        let g = &inst.graph;
        let full = Adjacency::new(
            (0..g.node_count()).map(|v| g.neighbor_ids(v)),
            vec![true; g.node_count()],
        );
        Self {
            inst,
            full: Arc::new(full),
        }
    }

    pub fn instance(&self) -> &'a Instance {
        self.inst
    }

    pub fn build(&self, marked: &[bool]) -> StateInput {
        let inst = self.inst;
        let g = &inst.graph;
        let removal = inst.variant.action() == ActionKind::Remove;
        let present: Vec<bool> = if removal {
            marked.iter().map(|m| !m).collect()
        } else {
            vec![true; marked.len()]
        };
        let adjacency = if removal && marked.iter().any(|m| *m) {
            Arc::new(Adjacency::new(
                (0..g.node_count()).map(|v| g.neighbor_ids(v)),
                present.clone(),
            ))
        } else {
            Arc::clone(&self.full)
        };
        let s_t = current_opinions(inst, marked);
        StateInput {
            features: build_node_features(inst, marked),
            aux: build_aux_features(g, &s_t, marked),
            adjacency,
            mask: marked.iter().map(|m| !m).collect(),
            present,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub layers: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            layers: 3,
        }
    }
}

/// Parameter indices of the encoder inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub w0: usize,
    pub w_nbr: usize,
    pub w_self: usize,
    pub w_sage: usize,
}

impl EncoderParams {
    pub fn init<R: Rng + ?Sized>(config: EncoderConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        if config.layers == 0 || config.embed_dim == 0 {
            return Err(Error::Config("encoder needs at least one layer and a positive width".into()));
        }
        let d = config.embed_dim;
        Ok(Self {
            config,
            w0: store.add_glorot("enc.w0", NODE_FEATURES, d, rng),
            w_nbr: store.add_glorot("enc.w_nbr", d, d, rng),
            w_self: store.add_glorot("enc.w_self", d, d, rng),
            w_sage: store.add_glorot("enc.w_sage", 2 * d, d, rng),
        })
    }

    pub fn locate(config: EncoderConfig, store: &ParamStore) -> Result<Self> {
        let find = |name: &str| {
            store
                .index_of(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
        };
        Ok(Self {
            config,
            w0: find("enc.w0")?,
            w_nbr: find("enc.w_nbr")?,
            w_self: find("enc.w_self")?,
            w_sage: find("enc.w_sage")?,
        })
    }
}

/// Node embeddings `h` (`n x d`) and the pooled graph embedding `g` (`1 x d`).
#[derive(Debug, Clone, Copy)]
pub struct Encoding {
    pub h: Var,
    pub g: Var,
}

fn zero_absent(tape: &mut Tape, h: Var, present: &[bool]) -> Result<Var> {
    if present.iter().all(|p| *p) {
        return Ok(h);
    }
    let d = tape.value(h).ncols();
    let mask = Array2::from_shape_fn((present.len(), d), |(v, _)| f64::from(u8::from(present[v])));
    let mask = tape.constant(mask);
    tape.mul(h, mask)
}

/// Runs the projection and `K` rounds of sum-aggregation message passing.
///
/// The concatenation `[A h W_nbr, h W_self] W_sage` is evaluated as
/// `A h W_a + h W_b` with `W_a = W_nbr W_sage[..d]` and
/// `W_b = W_self W_sage[d..]`, which halves the per-node work.
pub fn encode(tape: &mut Tape, store: &ParamStore, p: &EncoderParams, input: &StateInput) -> Result<Encoding> {
    let d = p.config.embed_dim;
    let x = tape.constant(input.features.x.clone());
    let w0 = tape.param(p.w0, store.get(p.w0).clone());
    let w_nbr = tape.param(p.w_nbr, store.get(p.w_nbr).clone());
    let w_self = tape.param(p.w_self, store.get(p.w_self).clone());
    let w_sage = tape.param(p.w_sage, store.get(p.w_sage).clone());
    let top = tape.slice_rows(w_sage, 0, d)?;
    let bottom = tape.slice_rows(w_sage, d, 2 * d)?;
    let w_a = tape.matmul(w_nbr, top)?;
    let w_b = tape.matmul(w_self, bottom)?;

    let h = tape.matmul(x, w0)?;
    let h = tape.relu(h);
    let h = tape.l2_norm_rows(h);
    let mut h = zero_absent(tape, h, &input.present)?;
    for _ in 0..p.config.layers {
        let a = tape.neighbor_sum(h, &input.adjacency)?;
        let from_nbrs = tape.matmul(a, w_a)?;
        let from_self = tape.matmul(h, w_b)?;
        let next = tape.add(from_nbrs, from_self)?;
        let next = tape.relu(next);
        let next = tape.l2_norm_rows(next);
        h = zero_absent(tape, next, &input.present)?;
    }
    let g = tape.sum_rows(h);
    Ok(Encoding { h, g })
}

/// Node embeddings kept across a run of states that differ in a few nodes at
/// a time, as during deployment. After a change only the rows within
/// `layers` hops of a changed node are recomputed. Values agree with
/// [`encode`] row for row.
#[derive(Debug, Clone)]
pub struct CachedEncoding {
    w0: Array2<f64>,
    w_a: Array2<f64>,
    w_b: Array2<f64>,
    /// `h^0..=h^K`.
    levels: Vec<Array2<f64>>,
    x: Array2<f64>,
    present: Vec<bool>,
}

impl CachedEncoding {
    pub fn new(store: &ParamStore, p: &EncoderParams, input: &StateInput) -> Self {
        let d = p.config.embed_dim;
        let w_sage = store.get(p.w_sage);
        let top = w_sage.slice(ndarray::s![0..d, ..]).to_owned();
        let bottom = w_sage.slice(ndarray::s![d..2 * d, ..]).to_owned();
        let mut cache = Self {
            w0: store.get(p.w0).clone(),
            w_a: store.get(p.w_nbr).dot(&top),
            w_b: store.get(p.w_self).dot(&bottom),
            levels: Vec::with_capacity(p.config.layers + 1),
            x: input.features.x.clone(),
            present: input.present.clone(),
        };
        let all: Vec<NodeId> = (0..input.node_count()).collect();
        let h0 = cache.project(&all);
        cache.levels.push(h0);
        for k in 1..=p.config.layers {
            let hk = cache.propagate(k, &all, &input.adjacency);
            cache.levels.push(hk);
        }
        cache
    }

    /// Final node embeddings.
    pub fn h(&self) -> &Array2<f64> {
        self.levels.last().expect("at least the projection level")
    }

    /// Moves the cache to `input`, which must share the node set of the
    /// state it was built from. Returns the number of rows recomputed in
    /// the last level.
    pub fn update(&mut self, input: &StateInput) -> usize {
        let n = input.node_count();
        let mut changed: Vec<NodeId> = (0..n)
            .filter(|&v| self.present[v] != input.present[v] || self.x.row(v) != input.features.x.row(v))
            .collect();
        self.x.clone_from(&input.features.x);
        self.present.clone_from(&input.present);
        if changed.is_empty() {
            return 0;
        }
        let rows = self.project(&changed);
        assign_rows(&mut self.levels[0], &changed, &rows);
        let mut in_set = vec![false; n];
        for &v in &changed {
            in_set[v] = true;
        }
        for k in 1..self.levels.len() {
            let mut grown = changed.clone();
            for &v in &changed {
                for &u in input.adjacency.neighbors(v) {
                    if !in_set[u] {
                        in_set[u] = true;
                        grown.push(u);
                    }
                }
            }
            changed = grown;
            let rows = self.propagate(k, &changed, &input.adjacency);
            assign_rows(&mut self.levels[k], &changed, &rows);
        }
        changed.len()
    }

    fn project(&self, nodes: &[NodeId]) -> Array2<f64> {
        let x = self.x.select(ndarray::Axis(0), nodes);
        let mut h = x.dot(&self.w0).mapv(|v| v.max(0.0));
        normalize_rows(&mut h);
        self.zero_absent(&mut h, nodes);
        h
    }

    fn propagate(&self, k: usize, nodes: &[NodeId], adjacency: &Adjacency) -> Array2<f64> {
        let prev = &self.levels[k - 1];
        let a = adjacency.aggregate_rows(prev, nodes);
        let own = prev.select(ndarray::Axis(0), nodes);
        let mut h = (a.dot(&self.w_a) + own.dot(&self.w_b)).mapv(|v| v.max(0.0));
        normalize_rows(&mut h);
        self.zero_absent(&mut h, nodes);
        h
    }

    fn zero_absent(&self, h: &mut Array2<f64>, nodes: &[NodeId]) {
        for (i, &v) in nodes.iter().enumerate() {
            if !self.present[v] {
                h.row_mut(i).fill(0.0);
            }
        }
    }
}

fn assign_rows(target: &mut Array2<f64>, nodes: &[NodeId], rows: &Array2<f64>) {
    for (i, &v) in nodes.iter().enumerate() {
        target.row_mut(v).assign(&rows.row(i));
    }
}
