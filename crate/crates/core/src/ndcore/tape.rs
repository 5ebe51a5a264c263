//! Reverse-mode differentiation over whole tensors.
//!
//! Every operation evaluates eagerly and appends a node holding its value.
//! [`backward`] walks the nodes in reverse and returns gradients for the
//! parameter leaves registered through [`Tape::bind`].

use indexmap::IndexMap;

use super::tensor::matmul;
use super::{ParamSet, Role, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param,
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Silu(Var),
    Map(Var, fn(f64) -> f64),
    Concat(Vec<Var>),
    Gather(Var, Vec<usize>),
    Rows(Var, usize),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulCol(Var, Vec<f64>),
    SumCols(Var),
    Sum(Var),
    Softplus(Var),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Parameter leaves bound onto a tape, by name.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("parameter '{name}' not bound")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }
}

/// Ordered record of evaluated operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: IndexMap<String, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of nodes currently retained.
    pub fn retained_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A constant leaf; never receives a gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(Op::Input, value, false)
    }

    /// Registers every entry of `params` as a leaf. Entries of a trainable
    /// set become differentiable; a reference set is bound as constants.
    pub fn bind(&mut self, params: &ParamSet) -> Result<Bound> {
        let trainable = params.role() == Role::Trainable;
        let mut vars = IndexMap::new();
        for (name, t) in params.iter() {
            let v = if trainable {
                if self.params.contains_key(name) {
                    return Err(Error::invalid(format!("parameter '{name}' bound twice")));
                }
                let v = self.push(Op::Param, t.clone(), true);
                self.params.insert(name.to_string(), v);
                v
            } else {
                self.input(t.clone())
            };
            vars.insert(name.to_string(), v);
        }
        Ok(Bound { vars })
    }

    fn shape_of(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, ctx: &str, a: Var, b: Var) -> Result<()> {
        if self.shape_of(a) != self.shape_of(b) {
            return Err(Error::shape(
                ctx,
                format!("{:?} vs {:?}", self.shape_of(a), self.shape_of(b)),
            ));
        }
        Ok(())
    }

    /// `[m, k] x [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.shape().len() != 2 || ta.cols() != tb.shape()[0] {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", ta.shape(), tb.shape()),
            ));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.shape()[1]);
        let out = Tensor::new(vec![m, n], matmul(ta.data(), tb.data(), m, k, n))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), out, rg))
    }

    /// Adds a length-`n` bias to every row of an `[m, n]` matrix.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let n = ta.cols();
        if tb.len() != n {
            return Err(Error::shape(
                "add_row_bias",
                format!("{:?} + {:?}", ta.shape(), tb.shape()),
            ));
        }
        let mut out = ta.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(Op::AddRowBias(a, bias), out, rg))
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * sigmoid(x));
        let rg = self.rg(a);
        self.push(Op::Silu(a), out, rg)
    }

    /// Elementwise `f` whose derivative is supplied as `df`.
    pub fn map(&mut self, a: Var, f: fn(f64) -> f64, df: fn(f64) -> f64) -> Var {
        let out = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(Op::Map(a, df), out, rg)
    }

    /// Concatenates along columns; all parts need the same row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(Error::shape(
                    "concat_cols",
                    format!("{} rows vs {rows}", t.rows()),
                ));
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Op::Concat(parts.to_vec()), out, rg))
    }

    /// Selects rows `idx` of a 2-D table.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, cols) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= rows {
                return Err(Error::shape(
                    "gather_rows",
                    format!("row {i} out of {rows}"),
                ));
            }
            data.extend_from_slice(t.row_slice(i));
        }
        let out = Tensor::new(vec![idx.len(), cols], data)?;
        let rg = self.rg(table);
        Ok(self.push(Op::Gather(table, idx.to_vec()), out, rg))
    }

    /// Rows `start..start + len` of a 2-D tensor.
    pub fn rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if len == 0 || start + len > t.rows() {
            return Err(Error::shape(
                "rows",
                format!("{start}..{} of {}", start + len, t.rows()),
            ));
        }
        let c = t.cols();
        let out = Tensor::new(vec![len, c], t.data()[start * c..(start + len) * c].to_vec())?;
        let rg = self.rg(a);
        Ok(self.push(Op::Rows(a, start), out, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), out, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Sub(a, b), out, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul(a, b), out, rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        let rg = self.rg(a);
        self.push(Op::Scale(a, c), out, rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        let rg = self.rg(a);
        self.push(Op::AddScalar(a), out, rg)
    }

    /// Multiplies row `i` by `coef[i]`.
    pub fn mul_col(&mut self, a: Var, coef: &[f64]) -> Result<Var> {
        let t = self.value(a);
        if coef.len() != t.rows() {
            return Err(Error::shape(
                "mul_col",
                format!("{} coefficients for {} rows", coef.len(), t.rows()),
            ));
        }
        let c = t.cols();
        let mut out = t.clone();
        for (row, &k) in out.data_mut().chunks_mut(c).zip(coef) {
            row.iter_mut().for_each(|x| *x *= k);
        }
        let rg = self.rg(a);
        Ok(self.push(Op::MulCol(a, coef.to_vec()), out, rg))
    }

    /// Row sums: `[m, n] -> [m, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let c = t.cols();
        let data: Vec<f64> = t.data().chunks(c).map(|r| r.iter().sum()).collect();
        let out = Tensor::new(vec![data.len(), 1], data).expect("row sums");
        let rg = self.rg(a);
        self.push(Op::SumCols(a), out, rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(Op::Sum(a), out, rg)
    }

    /// `log(1 + exp(x))`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        let rg = self.rg(a);
        self.push(Op::Softplus(a), out, rg)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn accumulate(slot: &mut Option<Tensor>, shape: &[usize], f: impl FnOnce(&mut [f64])) {
    let t = slot.get_or_insert_with(|| Tensor::zeros(shape));
    f(t.data_mut());
}

/// Gradients of the scalar node `loss` with respect to every trainable
/// parameter bound on `tape`. Parameters the loss does not reach get zeros.
pub fn backward(tape: &Tape, loss: Var) -> Result<ParamSet> {
    let lv = tape.value(loss);
    if !lv.is_scalar() {
        return Err(Error::NonScalarLoss(lv.shape().to_vec()));
    }
    if !lv.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let n = loss.0 + 1;
    let mut grads: Vec<Option<Tensor>> = vec![None; n];
    grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

    for i in (0..n).rev() {
        let Some(g) = grads[i].take() else { continue };
        let node = &tape.nodes[i];
        if !node.requires_grad {
            continue;
        }
        let gd = g.data();
        match &node.op {
            Op::Input => {}
            Op::Param => {
                grads[i] = Some(g);
                continue;
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (tape.value(*a), tape.value(*b));
                let (m, k, nn) = (ta.rows(), ta.cols(), tb.shape()[1]);
                if tape.rg(*a) {
                    accumulate(&mut grads[a.0], ta.shape(), |da| {
                        for r in 0..m {
                            let grow = &gd[r * nn..(r + 1) * nn];
                            for p in 0..k {
                                let brow = &tb.data()[p * nn..(p + 1) * nn];
                                da[r * k + p] +=
                                    grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    });
                }
                if tape.rg(*b) {
                    accumulate(&mut grads[b.0], tb.shape(), |db| {
                        for r in 0..m {
                            let grow = &gd[r * nn..(r + 1) * nn];
                            for p in 0..k {
                                let av = ta.data()[r * k + p];
                                if av == 0.0 {
                                    continue;
                                }
                                for (d, x) in db[p * nn..(p + 1) * nn].iter_mut().zip(grow) {
                                    *d += av * x;
                                }
                            }
                        }
                    });
                }
            }
            Op::AddRowBias(a, b) => {
                if tape.rg(*a) {
                    accumulate(&mut grads[a.0], g.shape(), |da| add_into(da, gd));
                }
                if tape.rg(*b) {
                    let tb = tape.value(*b);
                    let c = tb.len();
                    accumulate(&mut grads[b.0], tb.shape(), |db| {
                        for row in gd.chunks(c) {
                            add_into(db, row);
                        }
                    });
                }
            }
            Op::Silu(a) => {
                let x = tape.value(*a).data();
                accumulate(&mut grads[a.0], g.shape(), |da| {
                    for ((d, &gv), &xv) in da.iter_mut().zip(gd).zip(x) {
                        let s = sigmoid(xv);
                        *d += gv * (s + xv * s * (1.0 - s));
                    }
                });
            }
            Op::Map(a, df) => {
                let x = tape.value(*a).data();
                accumulate(&mut grads[a.0], g.shape(), |da| {
                    for ((d, &gv), &xv) in da.iter_mut().zip(gd).zip(x) {
                        *d += gv * df(xv);
                    }
                });
            }
            Op::Concat(parts) => {
                let total = g.cols();
                let mut offset = 0;
                for p in parts {
                    let tp = tape.value(*p);
                    let c = tp.cols();
                    if tape.rg(*p) {
                        accumulate(&mut grads[p.0], tp.shape(), |dp| {
                            for (r, row) in dp.chunks_mut(c).enumerate() {
                                add_into(row, &gd[r * total + offset..r * total + offset + c]);
                            }
                        });
                    }
                    offset += c;
                }
            }
            Op::Gather(table, idx) => {
                let tt = tape.value(*table);
                let c = tt.cols();
                accumulate(&mut grads[table.0], tt.shape(), |dt| {
                    for (r, &row) in idx.iter().enumerate() {
                        add_into(&mut dt[row * c..(row + 1) * c], &gd[r * c..(r + 1) * c]);
                    }
                });
            }
            Op::Rows(a, start) => {
                let ta = tape.value(*a);
                let c = ta.cols();
                accumulate(&mut grads[a.0], ta.shape(), |da| {
                    add_into(&mut da[start * c..start * c + gd.len()], gd)
                });
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if tape.rg(*v) {
                        accumulate(&mut grads[v.0], g.shape(), |d| add_into(d, gd));
                    }
                }
            }
            Op::Sub(a, b) => {
                if tape.rg(*a) {
                    accumulate(&mut grads[a.0], g.shape(), |d| add_into(d, gd));
                }
                if tape.rg(*b) {
                    accumulate(&mut grads[b.0], g.shape(), |d| {
                        d.iter_mut().zip(gd).for_each(|(x, y)| *x -= y)
                    });
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (tape.value(*a).data(), tape.value(*b).data());
                if tape.rg(*a) {
                    accumulate(&mut grads[a.0], g.shape(), |d| {
                        for ((x, gv), bv) in d.iter_mut().zip(gd).zip(tb) {
                            *x += gv * bv;
                        }
                    });
                }
                if tape.rg(*b) {
                    accumulate(&mut grads[b.0], g.shape(), |d| {
                        for ((x, gv), av) in d.iter_mut().zip(gd).zip(ta) {
                            *x += gv * av;
                        }
                    });
                }
            }
            Op::Scale(a, c) => {
                accumulate(&mut grads[a.0], g.shape(), |d| {
                    d.iter_mut().zip(gd).for_each(|(x, y)| *x += c * y)
                });
            }
            Op::AddScalar(a) => {
                accumulate(&mut grads[a.0], g.shape(), |d| add_into(d, gd));
            }
            Op::MulCol(a, coef) => {
                let c = g.cols();
                accumulate(&mut grads[a.0], g.shape(), |d| {
                    for ((row, grow), k) in d.chunks_mut(c).zip(gd.chunks(c)).zip(coef) {
                        row.iter_mut().zip(grow).for_each(|(x, y)| *x += k * y);
                    }
                });
            }
            Op::SumCols(a) => {
                let ta = tape.value(*a);
                let c = ta.cols();
                accumulate(&mut grads[a.0], ta.shape(), |d| {
                    for (row, gv) in d.chunks_mut(c).zip(gd) {
                        row.iter_mut().for_each(|x| *x += gv);
                    }
                });
            }
            Op::Sum(a) => {
                let ta = tape.value(*a);
                let gv = gd[0];
                accumulate(&mut grads[a.0], ta.shape(), |d| {
                    d.iter_mut().for_each(|x| *x += gv)
                });
            }
            Op::Softplus(a) => {
                let x = tape.value(*a).data();
                accumulate(&mut grads[a.0], g.shape(), |d| {
                    for ((dv, gv), xv) in d.iter_mut().zip(gd).zip(x) {
                        *dv += gv * sigmoid(*xv);
                    }
                });
            }
        }
    }

    let mut out = ParamSet::new(Role::Trainable);
    for (name, v) in &tape.params {
        let g = if v.0 < n {
            grads[v.0].take()
        } else {
            None
        }
        .unwrap_or_else(|| Tensor::zeros(tape.value(*v).shape()));
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of '{name}'")));
        }
        out.insert(name.clone(), g)?;
    }
    Ok(out)
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}
