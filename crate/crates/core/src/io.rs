//! Text formats: edge lists, per-node value files, instance directories and
//! the CSV tables written by the harness.
//!
//! Edge lists hold one `u v [w]` per line; per-node files hold `id value`.
//! Blank lines and lines starting with `#` are skipped everywhere.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::BiasConfig;
use crate::environment::{Instance, Variant};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::metrics::{camps_from_opinions, Camp, Trajectory};

fn ingest_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Ingest {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Non-comment lines with their 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.trim();
        (!l.is_empty() && !l.starts_with('#')).then(|| (i + 1, l.split_whitespace().collect()))
    })
}

/// Dense relabelling of external node ids.
///
/// When every id is an integer the order is numeric, so files that already
/// use `0..n` keep their ids; otherwise ids are numbered by first appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeMap {
    labels: Vec<String>,
    index: HashMap<String, NodeId>,
}

impl NodeMap {
    pub fn from_labels<'a, I: IntoIterator<Item = &'a str>>(labels: I) -> Self {
        let mut seen = Vec::new();
        let mut set = std::collections::HashSet::new();
        for l in labels {
            if set.insert(l) {
                seen.push(l.to_string());
            }
        }
        if seen.iter().all(|l| l.parse::<i64>().is_ok()) {
            let sorted: BTreeSet<i64> = seen.iter().map(|l| l.parse().expect("checked")).collect();
            seen = sorted.into_iter().map(|x| x.to_string()).collect();
        }
        let index = seen.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        Self { labels: seen, index }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, label: &str) -> Option<NodeId> {
        // integer ids compare numerically, so `007` and `7` are the same node
        self.index.get(label).copied().or_else(|| {
            label
                .parse::<i64>()
                .ok()
                .and_then(|x| self.index.get(&x.to_string()).copied())
        })
    }

    pub fn label(&self, v: NodeId) -> &str {
        &self.labels[v]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawEdge {
    pub u: String,
    pub v: String,
    pub w: f64,
    pub line: usize,
}

pub fn parse_edge_list(path: &Path, text: &str) -> Result<Vec<RawEdge>> {
    data_lines(text)
        .map(|(line, f)| {
            if f.len() != 2 && f.len() != 3 {
                return Err(ingest_err(path, line, format!("expected `u v [w]`, got {} fields", f.len())));
            }
            let w = match f.get(2) {
                Some(x) => x
                    .parse::<f64>()
                    .map_err(|_| ingest_err(path, line, format!("bad weight `{x}`")))?,
                None => 1.0,
            };
            if !(w.is_finite() && w >= 0.0) {
                return Err(ingest_err(path, line, format!("weight {w} must be finite and non-negative")));
            }
            Ok(RawEdge {
                u: f[0].to_string(),
                v: f[1].to_string(),
                w,
                line,
            })
        })
        .collect()
}

/// `id value` pairs with line numbers.
pub fn parse_node_values(path: &Path, text: &str) -> Result<Vec<(String, f64, usize)>> {
    data_lines(text)
        .map(|(line, f)| {
            if f.len() != 2 {
                return Err(ingest_err(path, line, format!("expected `id value`, got {} fields", f.len())));
            }
            let x = f[1]
                .parse::<f64>()
                .map_err(|_| ingest_err(path, line, format!("bad value `{}`", f[1])))?;
            if !x.is_finite() {
                return Err(ingest_err(path, line, "value must be finite"));
            }
            Ok((f[0].to_string(), x, line))
        })
        .collect()
}

/// A real-world graph with camp labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub graph: Graph,
    pub nodes: NodeMap,
    pub camps: Vec<Camp>,
    pub s0: Vec<f64>,
    /// Problems tolerated because of `force`, plus merged duplicate edges.
    pub warnings: Vec<String>,
}

/// Reads an edge list and a `id +1|-1` label file.
///
/// Self-loops and disconnected graphs are refused unless `force` is set, in
/// which case self-loops are dropped and the graph is kept as is. Repeated
/// edges (in either direction) keep their first weight.
pub fn ingest_dataset(edge_path: &Path, label_path: &Path, force: bool) -> Result<Dataset> {
    let edges = parse_edge_list(edge_path, &fs::read_to_string(edge_path)?)?;
    let labels = parse_node_values(label_path, &fs::read_to_string(label_path)?)?;
    let mut warnings = Vec::new();
    for (_, x, line) in &labels {
        if *x != 1.0 && *x != -1.0 {
            return Err(ingest_err(label_path, *line, format!("camp label must be +1 or -1, got {x}")));
        }
    }
    let nodes = NodeMap::from_labels(
        edges
            .iter()
            .flat_map(|e| [e.u.as_str(), e.v.as_str()])
            .chain(labels.iter().map(|(id, _, _)| id.as_str())),
    );
    let n = nodes.len();
    let mut s0 = vec![f64::NAN; n];
    for (id, x, line) in &labels {
        let v = nodes.get(id).expect("label ids are mapped");
        if !s0[v].is_nan() && s0[v] != *x {
            return Err(ingest_err(label_path, *line, format!("conflicting labels for node {id}")));
        }
        s0[v] = *x;
    }
    if let Some(v) = s0.iter().position(|x| x.is_nan()) {
        return Err(ingest_err(label_path, 0, format!("node {} has no label", nodes.label(v))));
    }
    let mut seen = std::collections::HashSet::new();
    let mut list = Vec::with_capacity(edges.len());
    let mut duplicates = 0usize;
    for e in &edges {
        let (u, v) = (nodes.get(&e.u).expect("mapped"), nodes.get(&e.v).expect("mapped"));
        if u == v {
            if force {
                warnings.push(format!("line {}: dropped self-loop on {}", e.line, e.u));
                continue;
            }
            return Err(ingest_err(edge_path, e.line, format!("self-loop on node {}", e.u)));
        }
        if seen.insert((u.min(v), u.max(v))) {
            list.push((u, v, e.w));
        } else {
            duplicates += 1;
        }
    }
    if duplicates > 0 {
        warnings.push(format!("merged {duplicates} repeated edges"));
    }
    let graph = Graph::new(n, &list)?;
    if !graph.is_connected() {
        if !force {
            return Err(ingest_err(edge_path, 0, "graph is not connected (use force to keep it)"));
        }
        warnings.push("graph is not connected".into());
    }
    let name = edge_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Dataset {
        name,
        camps: camps_from_opinions(&s0),
        graph,
        nodes,
        s0,
        warnings,
    })
}

/// Metadata stored next to the value files of an instance directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceMeta {
    pub version: u32,
    pub name: String,
    pub budget: usize,
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<BiasConfig>,
}

pub const INSTANCE_FORMAT_VERSION: u32 = 1;

fn value_file(values: &[f64]) -> String {
    let mut out = String::new();
    for (v, x) in values.iter().enumerate() {
        out.push_str(&format!("{v} {x}\n"));
    }
    out
}

/// Writes `edges.txt`, `opinions.txt`, `costs.txt` and `instance.toml`.
pub fn write_instance_dir(dir: &Path, inst: &Instance) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut edges = String::new();
    for e in inst.graph.edges() {
        edges.push_str(&format!("{} {} {}\n", e.u, e.v, e.w));
    }
    fs::write(dir.join("edges.txt"), edges)?;
    fs::write(dir.join("opinions.txt"), value_file(&inst.s0))?;
    fs::write(dir.join("costs.txt"), value_file(&inst.costs))?;
    let meta = InstanceMeta {
        version: INSTANCE_FORMAT_VERSION,
        name: inst.name.clone(),
        budget: inst.budget,
        variant: inst.variant,
        bias: inst.bias,
    };
    let toml = toml::to_string(&meta).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(dir.join("instance.toml"), toml)?;
    Ok(())
}

fn dense_values(path: &Path, n: usize, default: Option<f64>) -> Result<Vec<f64>> {
    if !path.exists() {
        if let Some(d) = default {
            return Ok(vec![d; n]);
        }
    }
    let mut out = vec![f64::NAN; n];
    for (id, x, line) in parse_node_values(path, &fs::read_to_string(path)?)? {
        let v: usize = id
            .parse()
            .ok()
            .filter(|v| *v < n)
            .ok_or_else(|| ingest_err(path, line, format!("node id `{id}` outside 0..{n}")))?;
        out[v] = x;
    }
    if let Some(v) = out.iter().position(|x| x.is_nan()) {
        return Err(ingest_err(path, 0, format!("missing value for node {v}")));
    }
    Ok(out)
}

/// Reads an instance directory written by [`write_instance_dir`]. Node ids
/// must already be dense; a missing `costs.txt` means unit costs.
pub fn read_instance_dir(dir: &Path) -> Result<Instance> {
    let meta_path = dir.join("instance.toml");
    let meta: InstanceMeta = toml::from_str(&fs::read_to_string(&meta_path)?)
        .map_err(|e| Error::Config(format!("{}: {e}", meta_path.display())))?;
    if meta.version != INSTANCE_FORMAT_VERSION {
        return Err(Error::Config(format!("unsupported instance version {}", meta.version)));
    }
    let s_path = dir.join("opinions.txt");
    let n = parse_node_values(&s_path, &fs::read_to_string(&s_path)?)?.len();
    let s0 = dense_values(&s_path, n, None)?;
    let costs = dense_values(&dir.join("costs.txt"), n, Some(1.0))?;
    let e_path = dir.join("edges.txt");
    let mut edges = Vec::new();
    for e in parse_edge_list(&e_path, &fs::read_to_string(&e_path)?)? {
        let id = |s: &str| {
            s.parse::<usize>()
                .ok()
                .filter(|v| *v < n)
                .ok_or_else(|| ingest_err(&e_path, e.line, format!("node id `{s}` outside 0..{n}")))
        };
        edges.push((id(&e.u)?, id(&e.v)?, e.w));
    }
    let graph = Graph::new(n, &edges)?;
    let mut inst = Instance::new(Arc::new(graph), s0, costs, meta.budget, meta.variant)?.with_name(meta.name);
    if let Some(b) = meta.bias {
        inst = inst.with_bias(b);
    }
    Ok(inst)
}

/// One line of the per-step trajectory table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: usize,
    pub x: f64,
    pub pol: f64,
    pub pol_hat: f64,
    pub cost_spent: f64,
    pub action: Option<NodeId>,
}

pub fn trajectory_rows(traj: &Trajectory) -> Vec<TrajectoryRow> {
    let k = traj.horizon();
    (0..=k)
        .map(|t| TrajectoryRow {
            t,
            x: t as f64 / k as f64,
            pol: traj.pol_steps[t],
            pol_hat: traj.pol_hat_steps[t],
            cost_spent: traj.costs_spent[t],
            action: t.checked_sub(1).map(|i| traj.actions[i]),
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes rows with an explicit header even when there are none.
pub fn write_csv_with_header<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|x| x.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRow {
    pub step: usize,
    pub node: NodeId,
    pub score: f64,
}

fn plan_rows(actions: &[NodeId], scores: &[f64]) -> Vec<PlanRow> {
    actions
        .iter()
        .zip(scores)
        .enumerate()
        .map(|(i, (&node, &score))| PlanRow { step: i + 1, node, score })
        .collect()
}

pub fn write_plan(path: &Path, actions: &[NodeId], scores: &[f64]) -> Result<()> {
    write_csv_with_header(path, &PLAN_HEADER, &plan_rows(actions, scores))
}

pub const PLAN_HEADER: [&str; 3] = ["step", "node", "score"];

/// Same bytes as [`write_plan`], into any writer.
pub fn write_plan_to<W: std::io::Write>(w: W, actions: &[NodeId], scores: &[f64]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    w.write_record(PLAN_HEADER)?;
    for r in plan_rows(actions, scores) {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_plan(path: &Path) -> Result<Vec<NodeId>> {
    let rows: Vec<PlanRow> = read_csv(path)?;
    Ok(rows.into_iter().map(|r| r.node).collect())
}
