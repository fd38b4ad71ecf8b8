//! Reverse-mode automatic differentiation over dense row-major matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Calling
//! [`Tape::backward`] on a scalar output walks the record in reverse and
//! returns the gradient of every parameter leaf that took part.

use std::sync::Arc;

use ndarray::{concatenate, s, Array2, Axis};

use crate::error::{Error, Result};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Symmetric adjacency used by neighbourhood aggregation. Inactive nodes
/// neither send nor receive messages.
#[derive(Debug, Clone)]
pub struct Adjacency {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    active: Vec<bool>,
}

impl Adjacency {
    /// `neighbors[v]` must be symmetric: `u` in `neighbors[v]` iff `v` in
    /// `neighbors[u]`.
    pub fn new<'a, I>(neighbors: I, active: Vec<bool>) -> Self
    where
        I: IntoIterator<Item = &'a [usize]>,
    {
        let mut offsets = vec![0];
        let mut targets = Vec::new();
        for list in neighbors {
            targets.extend_from_slice(list);
            offsets.push(targets.len());
        }
        assert_eq!(offsets.len() - 1, active.len(), "mask length");
        Self {
            offsets,
            targets,
            active,
        }
    }

    pub fn node_count(&self) -> usize {
        self.active.len()
    }

    pub fn is_active(&self, v: usize) -> bool {
        self.active[v]
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    /// Neighbour sums for the listed nodes only, one output row each.
    pub fn aggregate_rows(&self, x: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((rows.len(), x.ncols()));
        for (i, &v) in rows.iter().enumerate() {
            if !self.active[v] {
                continue;
            }
            let mut row = out.row_mut(i);
            for &u in self.neighbors(v) {
                if self.active[u] {
                    row += &x.row(u);
                }
            }
        }
        out
    }

    fn aggregate(&self, x: &Array2<f64>) -> Array2<f64> {
        let n = self.node_count();
        let mut out = Array2::zeros((n, x.ncols()));
        for v in 0..n {
            if !self.active[v] {
                continue;
            }
            let mut row = out.row_mut(v);
            for &u in &self.targets[self.offsets[v]..self.offsets[v + 1]] {
                if self.active[u] {
                    row += &x.row(u);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// `n x d` plus a `1 x d` row broadcast to every row.
    AddRow(Var, Var),
    /// `n x d` times a `1 x d` or `1 x 1` row, broadcast.
    MulRow(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    L2NormRows(Var),
    ConcatCols(Var, Var),
    SliceRows(Var, usize),
    SumRows(Var),
    BroadcastRows(Var),
    NeighborSum(Var, Arc<Adjacency>),
    Square(Var),
    Scale(Var, f64),
    Offset(Var),
    Pick(Var, usize, usize),
    Mean(Var),
}

const NORM_EPS: f64 = 1e-12;

/// Scales each row to unit Euclidean norm; all-zero rows stay zero.
pub fn normalize_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > NORM_EPS {
            row /= norm;
        } else {
            row.fill(0.0);
        }
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<Array2<f64>>,
    ops: Vec<Op>,
}

/// Parameter gradients keyed by parameter index.
#[derive(Debug, Clone)]
pub struct Grads {
    pub grads: Vec<Option<Array2<f64>>>,
}

impl Grads {
    pub fn get(&self, idx: usize) -> Option<&Array2<f64>> {
        self.grads.get(idx).and_then(|g| g.as_ref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.values[v.0]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.values[v.0][(0, 0)]
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, idx: usize, value: Array2<f64>) -> Var {
        self.push(value, Op::Param(idx))
    }

    fn check(cond: bool, what: &str) -> Result<()> {
        if cond {
            Ok(())
        } else {
            Err(Error::Shape(what.to_string()))
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        Self::check(x.ncols() == y.nrows(), "matmul inner dimensions differ")?;
        let out = x.dot(y);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        Self::check(self.value(a).dim() == self.value(b).dim(), "add shapes differ")?;
        let out = self.value(a) + self.value(b);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        Self::check(self.value(a).dim() == self.value(b).dim(), "sub shapes differ")?;
        let out = self.value(a) - self.value(b);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        Self::check(r.nrows() == 1 && r.ncols() == x.ncols(), "bias row shape")?;
        let out = x + r;
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        Self::check(
            r.nrows() == 1 && (r.ncols() == x.ncols() || r.ncols() == 1),
            "scaling row shape",
        )?;
        let out = x * r;
        Ok(self.push(out, Op::MulRow(a, row)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        Self::check(self.value(a).dim() == self.value(b).dim(), "mul shapes differ")?;
        let out = self.value(a) * self.value(b);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    /// Scales each row to unit Euclidean norm; all-zero rows stay zero.
    pub fn l2_norm_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        normalize_rows(&mut out);
        self.push(out, Op::L2NormRows(a))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        Self::check(self.value(a).nrows() == self.value(b).nrows(), "concat row counts differ")?;
        let out = concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.push(out, Op::ConcatCols(a, b)))
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        Self::check(start <= end && end <= self.value(a).nrows(), "row slice out of range")?;
        let out = self.value(a).slice(s![start..end, ..]).to_owned();
        Ok(self.push(out, Op::SliceRows(a, start)))
    }

    /// Column sums as a `1 x d` row.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(out, Op::SumRows(a))
    }

    /// Repeats a `1 x d` row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let x = self.value(a);
        Self::check(x.nrows() == 1, "broadcast needs a single row")?;
        let out = x
            .broadcast((n, x.ncols()))
            .ok_or_else(|| Error::Shape("broadcast".into()))?
            .to_owned();
        Ok(self.push(out, Op::BroadcastRows(a)))
    }

    pub fn neighbor_sum(&mut self, a: Var, adj: &Arc<Adjacency>) -> Result<Var> {
        Self::check(self.value(a).nrows() == adj.node_count(), "adjacency size")?;
        let out = adj.aggregate(self.value(a));
        Ok(self.push(out, Op::NeighborSum(a, Arc::clone(adj))))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x * x);
        self.push(out, Op::Square(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) * c;
        self.push(out, Op::Scale(a, c))
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) + c;
        self.push(out, Op::Offset(a))
    }

    pub fn pick(&mut self, a: Var, row: usize, col: usize) -> Result<Var> {
        let x = self.value(a);
        Self::check(row < x.nrows() && col < x.ncols(), "pick out of range")?;
        let out = Array2::from_elem((1, 1), x[(row, col)]);
        Ok(self.push(out, Op::Pick(a, row, col)))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let m = x.sum() / x.len().max(1) as f64;
        self.push(Array2::from_elem((1, 1), m), Op::Mean(a))
    }

    /// Gradients of the scalar `out` with respect to every parameter leaf.
    pub fn backward(&self, out: Var, param_count: usize) -> Result<Grads> {
        if self.values.is_empty() || out.0 >= self.values.len() {
            return Err(Error::State("backward called before a forward pass".into()));
        }
        if self.values[out.0].len() != 1 {
            return Err(Error::Shape("backward needs a scalar output".into()));
        }
        let mut adj: Vec<Option<Array2<f64>>> = vec![None; out.0 + 1];
        adj[out.0] = Some(Array2::ones((1, 1)));
        let mut grads = Grads {
            grads: vec![None; param_count],
        };

        fn acc(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
            match slot {
                Some(a) => *a += &g,
                None => *slot = Some(g),
            }
        }

        for i in (0..=out.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            match &self.ops[i] {
                Op::Leaf => {}
                Op::Param(p) => {
                    if *p >= param_count {
                        return Err(Error::State(format!("parameter index {p} out of range")));
                    }
                    acc(&mut grads.grads[*p], g);
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.values[b.0].t());
                    let gb = self.values[a.0].t().dot(&g);
                    acc(&mut adj[a.0], ga);
                    acc(&mut adj[b.0], gb);
                }
                Op::Add(a, b) => {
                    acc(&mut adj[a.0], g.clone());
                    acc(&mut adj[b.0], g);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj[b.0], -&g);
                    acc(&mut adj[a.0], g);
                }
                Op::AddRow(a, r) => {
                    acc(&mut adj[r.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut adj[a.0], g);
                }
                Op::MulRow(a, r) => {
                    let x = &self.values[a.0];
                    let row = &self.values[r.0];
                    let gx = &g * x;
                    let gr = if row.ncols() == 1 {
                        Array2::from_elem((1, 1), gx.sum())
                    } else {
                        gx.sum_axis(Axis(0)).insert_axis(Axis(0))
                    };
                    acc(&mut adj[r.0], gr);
                    acc(&mut adj[a.0], &g * row);
                }
                Op::Mul(a, b) => {
                    acc(&mut adj[a.0], &g * &self.values[b.0]);
                    acc(&mut adj[b.0], &g * &self.values[a.0]);
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(&self.values[a.0], |d, &x| {
                        if x <= 0.0 {
                            *d = 0.0
                        }
                    });
                    acc(&mut adj[a.0], ga);
                }
                Op::L2NormRows(a) => {
                    let x = &self.values[a.0];
                    let y = &self.values[i];
                    let mut ga = Array2::zeros(x.dim());
                    for r in 0..x.nrows() {
                        let norm = x.row(r).dot(&x.row(r)).sqrt();
                        if norm <= NORM_EPS {
                            continue;
                        }
                        let gy = g.row(r);
                        let yr = y.row(r);
                        let proj = gy.dot(&yr);
                        let mut out = ga.row_mut(r);
                        out.assign(&(&gy - &(&yr * proj)));
                        out /= norm;
                    }
                    acc(&mut adj[a.0], ga);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.values[a.0].ncols();
                    acc(&mut adj[a.0], g.slice(s![.., ..ca]).to_owned());
                    acc(&mut adj[b.0], g.slice(s![.., ca..]).to_owned());
                }
                Op::SliceRows(a, start) => {
                    let mut ga = Array2::zeros(self.values[a.0].dim());
                    ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(&mut adj[a.0], ga);
                }
                Op::SumRows(a) => {
                    let n = self.values[a.0].nrows();
                    let ga = g
                        .broadcast((n, g.ncols()))
                        .expect("row broadcast")
                        .to_owned();
                    acc(&mut adj[a.0], ga);
                }
                Op::BroadcastRows(a) => {
                    acc(&mut adj[a.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                Op::NeighborSum(a, adjacency) => {
                    acc(&mut adj[a.0], adjacency.aggregate(&g));
                }
                Op::Square(a) => {
                    acc(&mut adj[a.0], &g * &self.values[a.0] * 2.0);
                }
                Op::Scale(a, c) => {
                    acc(&mut adj[a.0], g * *c);
                }
                Op::Offset(a) => {
                    acc(&mut adj[a.0], g);
                }
                Op::Pick(a, r, c) => {
                    let mut ga = Array2::zeros(self.values[a.0].dim());
                    ga[(*r, *c)] = g[(0, 0)];
                    acc(&mut adj[a.0], ga);
                }
                Op::Mean(a) => {
                    let x = &self.values[a.0];
                    let ga = Array2::from_elem(x.dim(), g[(0, 0)] / x.len().max(1) as f64);
                    acc(&mut adj[a.0], ga);
                }
            }
        }
        Ok(grads)
    }
}
