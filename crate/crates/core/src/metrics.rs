//! Polarization measures, trajectory scores and dataset statistics.

use serde::{Deserialize, Serialize};

use crate::dynamics::solve_fj_direct;
use crate::environment::Variant;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};

/// `||z||^2 / n`.
pub fn polarization_index(z: &[f64]) -> Result<f64> {
    if z.is_empty() {
        return Err(Error::InvalidInput("empty opinion vector".into()));
    }
    Ok(z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64)
}

/// How per-step polarization is normalized before accumulation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// `pi(z) / n`.
    #[default]
    PerNode,
    /// `pi(z)` unchanged.
    Raw,
}

pub fn normalized_polarization(z: &[f64], mode: Normalization) -> Result<f64> {
    let pi = polarization_index(z)?;
    Ok(match mode {
        Normalization::PerNode => pi / z.len() as f64,
        Normalization::Raw => pi,
    })
}

/// Accumulated normalized polarization: `(1/k) * sum_{t=0..=k} steps[t]`.
pub fn anp(steps: &[f64], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidInput("ANP needs a budget k >= 1".into()));
    }
    if steps.len() != k + 1 {
        return Err(Error::InvalidInput(format!(
            "ANP over k={k} needs {} steps, got {}",
            k + 1,
            steps.len()
        )));
    }
    Ok(steps.iter().sum::<f64>() / k as f64)
}

/// A replayed intervention sequence with its per-step polarization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub actions: Vec<NodeId>,
    /// Raw `pi(z^(t))` for `t = 0..=k`.
    pub pol_steps: Vec<f64>,
    /// Normalized polarization for `t = 0..=k` (the ANP summands).
    pub pol_hat_steps: Vec<f64>,
    pub anp: f64,
    pub variant: Variant,
    /// Cumulative cost after each step, starting at 0 for `t = 0`.
    pub costs_spent: Vec<f64>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn final_pol(&self) -> f64 {
        *self.pol_steps.last().unwrap_or(&0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Camp {
    Positive,
    Negative,
}

impl Camp {
    pub fn sign(self) -> f64 {
        match self {
            Camp::Positive => 1.0,
            Camp::Negative => -1.0,
        }
    }

    /// Positive iff the opinion is strictly positive.
    pub fn of_opinion(s: f64) -> Self {
        if s > 0.0 {
            Camp::Positive
        } else {
            Camp::Negative
        }
    }
}

pub fn camps_from_opinions(s: &[f64]) -> Vec<Camp> {
    s.iter().map(|&v| Camp::of_opinion(v)).collect()
}

/// Per-dataset structural statistics in the usual reporting order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub dataset: String,
    pub n: usize,
    pub m: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    pub avg_degree: f64,
    pub initial_polarization: f64,
    pub cross_camp_ratio: f64,
    pub avg_degree_pos: f64,
    pub avg_degree_neg: f64,
}

impl DatasetStats {
    pub const CSV_HEADER: &'static str = "dataset,n,m,n_pos,n_neg,avg_degree,initial_polarization,cross_camp_ratio,avg_degree_pos,avg_degree_neg";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.dataset,
            self.n,
            self.m,
            self.n_pos,
            self.n_neg,
            self.avg_degree,
            self.initial_polarization,
            self.cross_camp_ratio,
            self.avg_degree_pos,
            self.avg_degree_neg
        )
    }
}

/// Fraction of edges whose endpoints lie in different camps.
pub fn cross_camp_ratio(g: &Graph, camps: &[Camp]) -> f64 {
    if g.edge_count() == 0 {
        return 0.0;
    }
    let cross = g.edges().iter().filter(|e| camps[e.u] != camps[e.v]).count();
    cross as f64 / g.edge_count() as f64
}

/// Computes statistics with the initial polarization taken under the extreme
/// `+1/-1` camp assignment.
pub fn dataset_stats(name: &str, g: &Graph, camps: &[Camp]) -> Result<DatasetStats> {
    let n = g.node_count();
    if camps.len() != n {
        return Err(Error::InvalidInput(format!(
            "{} camp labels for {n} nodes",
            camps.len()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidInput("empty graph".into()));
    }
    let s: Vec<f64> = camps.iter().map(|c| c.sign()).collect();
    let z = solve_fj_direct(g, &s)?;
    let (mut n_pos, mut deg_pos, mut deg_neg) = (0usize, 0usize, 0usize);
    for (v, c) in camps.iter().enumerate() {
        match c {
            Camp::Positive => {
                n_pos += 1;
                deg_pos += g.degree(v);
            }
            Camp::Negative => deg_neg += g.degree(v),
        }
    }
    let n_neg = n - n_pos;
    let mean = |sum: usize, count: usize| if count == 0 { 0.0 } else { sum as f64 / count as f64 };
    Ok(DatasetStats {
        dataset: name.to_string(),
        n,
        m: g.edge_count(),
        n_pos,
        n_neg,
        avg_degree: 2.0 * g.edge_count() as f64 / n as f64,
        initial_polarization: polarization_index(&z)?,
        cross_camp_ratio: cross_camp_ratio(g, camps),
        avg_degree_pos: mean(deg_pos, n_pos),
        avg_degree_neg: mean(deg_neg, n_neg),
    })
}

/// Keeps datasets whose initial polarization strictly exceeds `threshold`.
pub fn filter_by_polarization(stats: Vec<DatasetStats>, threshold: f64) -> Vec<DatasetStats> {
    stats
        .into_iter()
        .filter(|s| s.initial_polarization > threshold)
        .collect()
}

/// Average ranks (1-based), ties sharing the mean rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}
