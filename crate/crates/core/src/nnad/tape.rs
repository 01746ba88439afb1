use ndarray::{s, Array1, Axis};

use crate::{Error, Mat, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    /// `x · wᵀ`
    MatMulT(usize, usize),
    /// Broadcast a `1 × m` row over every row of `x`.
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize, f64),
    /// Row `i` multiplied by `s[i]`.
    ScaleRows(usize, Array1<f64>),
    Silu(usize),
    Tanh(usize),
    Relu(usize),
    Square(usize),
    ConcatCols(Vec<usize>),
    RowSum(usize),
    Sum(usize),
    Mean(usize),
}

#[derive(Clone, Debug)]
struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of primitive operations with cached forward values.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

fn eval(op: &Op, nodes: &[Node]) -> Mat {
    let v = |i: usize| &nodes[i].value;
    match op {
        Op::Leaf => unreachable!("leaves carry their own value"),
        Op::MatMulT(x, w) => v(*x).dot(&v(*w).t()),
        Op::AddRow(x, b) => v(*x) + v(*b),
        Op::Add(a, b) => v(*a) + v(*b),
        Op::Sub(a, b) => v(*a) - v(*b),
        Op::Mul(a, b) => v(*a) * v(*b),
        Op::Scale(a, c) => v(*a) * *c,
        Op::AddScalar(a, c) => v(*a) + *c,
        Op::ScaleRows(a, sc) => {
            let mut out = v(*a).clone();
            for (mut row, &k) in out.rows_mut().into_iter().zip(sc.iter()) {
                row *= k;
            }
            out
        }
        Op::Silu(a) => v(*a).mapv(|z| z * sigmoid(z)),
        Op::Tanh(a) => v(*a).mapv(f64::tanh),
        Op::Relu(a) => v(*a).mapv(|z| z.max(0.0)),
        Op::Square(a) => v(*a).mapv(|z| z * z),
        Op::ConcatCols(parts) => {
            let views: Vec<_> = parts.iter().map(|&p| v(p).view()).collect();
            ndarray::concatenate(Axis(1), &views).expect("validated at record time")
        }
        Op::RowSum(a) => v(*a).sum_axis(Axis(1)).insert_axis(Axis(1)),
        Op::Sum(a) => Mat::from_elem((1, 1), v(*a).sum()),
        Op::Mean(a) => {
            let m = v(*a);
            Mat::from_elem((1, 1), m.sum() / m.len() as f64)
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Mat, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, op: Op, inputs: &[usize]) -> Var {
        let value = eval(&op, &self.nodes);
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (da, db) = (self.value(a).dim(), self.value(b).dim());
        if da != db {
            return Err(Error::Shape(format!("{what}: {da:?} vs {db:?}")));
        }
        Ok(())
    }

    pub fn matmul_t(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xd, wd) = (self.value(x).dim(), self.value(w).dim());
        if xd.1 != wd.1 {
            return Err(Error::Shape(format!(
                "matmul: input width {} vs weight columns {}",
                xd.1, wd.1
            )));
        }
        Ok(self.push(Op::MatMulT(x.0, w.0), &[x.0, w.0]))
    }

    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xd, bd) = (self.value(x).dim(), self.value(b).dim());
        if bd.0 != 1 || bd.1 != xd.1 {
            return Err(Error::Shape(format!("add_row: {xd:?} + {bd:?}")));
        }
        Ok(self.push(Op::AddRow(x.0, b.0), &[x.0, b.0]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.push(Op::Add(a.0, b.0), &[a.0, b.0]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.push(Op::Sub(a.0, b.0), &[a.0, b.0]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.push(Op::Mul(a.0, b.0), &[a.0, b.0]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.push(Op::Scale(a.0, c), &[a.0])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.push(Op::AddScalar(a.0, c), &[a.0])
    }

    pub fn scale_rows(&mut self, a: Var, s: &[f64]) -> Result<Var> {
        let rows = self.value(a).nrows();
        if s.len() != rows {
            return Err(Error::Shape(format!(
                "scale_rows: {} factors for {rows} rows",
                s.len()
            )));
        }
        Ok(self.push(Op::ScaleRows(a.0, Array1::from(s.to_vec())), &[a.0]))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.push(Op::Silu(a.0), &[a.0])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.push(Op::Tanh(a.0), &[a.0])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.push(Op::Relu(a.0), &[a.0])
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.push(Op::Square(a.0), &[a.0])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::Shape("concat of zero parts".into()));
        };
        let rows = self.value(*first).nrows();
        if let Some(bad) = parts.iter().find(|p| self.value(**p).nrows() != rows) {
            return Err(Error::Shape(format!(
                "concat: {} rows vs {rows}",
                self.value(*bad).nrows()
            )));
        }
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        Ok(self.push(Op::ConcatCols(idx.clone()), &idx))
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        self.push(Op::RowSum(a.0), &[a.0])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.push(Op::Sum(a.0), &[a.0])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        self.push(Op::Mean(a.0), &[a.0])
    }

    /// Recomputes every non-leaf node from the recorded leaves.
    pub fn replay(&self) -> Vec<Mat> {
        let mut fresh: Vec<Node> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match node.op {
                Op::Leaf => node.value.clone(),
                ref op => eval(op, &fresh),
            };
            fresh.push(Node {
                value,
                op: node.op.clone(),
                requires_grad: node.requires_grad,
            });
        }
        fresh.into_iter().map(|n| n.value).collect()
    }

    /// Gradients of the scalar `loss` with respect to every leaf that
    /// requires a gradient. Nodes are visited in strict reverse order.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let dim = self.value(loss).dim();
        if dim != (1, 1) {
            return Err(Error::Contract(format!(
                "backward from a non-scalar node of shape {dim:?}"
            )));
        }
        let mut adj: Vec<Option<Mat>> = vec![None; loss.0 + 1];
        let mut leaves = Gradients {
            grads: vec![None; self.nodes.len()],
        };
        adj[loss.0] = Some(Mat::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    leaves.grads[i] = Some(g);
                }
                Op::MatMulT(x, w) => {
                    if self.nodes[*x].requires_grad {
                        let dx = g.dot(&self.nodes[*w].value);
                        self.accumulate(&mut adj, *x, dx);
                    }
                    if self.nodes[*w].requires_grad {
                        let dw = g.t().dot(&self.nodes[*x].value);
                        self.accumulate(&mut adj, *w, dw);
                    }
                }
                Op::AddRow(x, b) => {
                    if self.nodes[*b].requires_grad {
                        let db = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        self.accumulate(&mut adj, *b, db);
                    }
                    self.accumulate(&mut adj, *x, g);
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut adj, *a, g.clone());
                    self.accumulate(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut adj, *b, -&g);
                    self.accumulate(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    if self.nodes[*a].requires_grad {
                        let da = &g * &self.nodes[*b].value;
                        self.accumulate(&mut adj, *a, da);
                    }
                    if self.nodes[*b].requires_grad {
                        let db = &g * &self.nodes[*a].value;
                        self.accumulate(&mut adj, *b, db);
                    }
                }
                Op::Scale(a, c) => self.accumulate(&mut adj, *a, g * *c),
                Op::AddScalar(a, _) => self.accumulate(&mut adj, *a, g),
                Op::ScaleRows(a, sc) => {
                    let mut da = g;
                    for (mut row, &k) in da.rows_mut().into_iter().zip(sc.iter()) {
                        row *= k;
                    }
                    self.accumulate(&mut adj, *a, da);
                }
                Op::Silu(a) => {
                    let mut da = g;
                    da.zip_mut_with(&self.nodes[*a].value, |d, &z| {
                        let sg = sigmoid(z);
                        *d *= sg * (1.0 + z * (1.0 - sg));
                    });
                    self.accumulate(&mut adj, *a, da);
                }
                Op::Tanh(a) => {
                    let mut da = g;
                    da.zip_mut_with(&node.value, |d, &y| *d *= 1.0 - y * y);
                    self.accumulate(&mut adj, *a, da);
                }
                Op::Relu(a) => {
                    let mut da = g;
                    da.zip_mut_with(&self.nodes[*a].value, |d, &z| {
                        if z <= 0.0 {
                            *d = 0.0;
                        }
                    });
                    self.accumulate(&mut adj, *a, da);
                }
                Op::Square(a) => {
                    let mut da = g;
                    da.zip_mut_with(&self.nodes[*a].value, |d, &z| *d *= 2.0 * z);
                    self.accumulate(&mut adj, *a, da);
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for &p in parts {
                        let w = self.nodes[p].value.ncols();
                        if self.nodes[p].requires_grad {
                            let piece = g.slice(s![.., col..col + w]).to_owned();
                            self.accumulate(&mut adj, p, piece);
                        }
                        col += w;
                    }
                }
                Op::RowSum(a) => {
                    let shape = self.nodes[*a].value.dim();
                    let da = Mat::from_shape_fn(shape, |(r, _)| g[[r, 0]]);
                    self.accumulate(&mut adj, *a, da);
                }
                Op::Sum(a) => {
                    let shape = self.nodes[*a].value.dim();
                    self.accumulate(&mut adj, *a, Mat::from_elem(shape, g[[0, 0]]));
                }
                Op::Mean(a) => {
                    let m = &self.nodes[*a].value;
                    let k = g[[0, 0]] / m.len() as f64;
                    self.accumulate(&mut adj, *a, Mat::from_elem(m.dim(), k));
                }
            }
        }
        Ok(leaves)
    }

    fn accumulate(&self, adj: &mut [Option<Mat>], idx: usize, g: Mat) {
        if !self.nodes[idx].requires_grad {
            return;
        }
        match &mut adj[idx] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient of a leaf, or `None` for frozen leaves and leaves that do
    /// not lie on a path to the loss.
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}
