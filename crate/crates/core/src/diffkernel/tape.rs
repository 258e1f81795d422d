//! Reverse-mode tape over dense row-major matrices.
//!
//! Every node is a matrix. Parameters are referenced from a [`ParamStore`]
//! without copying; constants are owned by the tape. Loss terms enter through
//! [`Tape::loss`], which records a scalar together with its local gradients
//! with respect to its inputs, so composite losses can be written as plain
//! functions and verified in isolation.

use ndarray::{s, Array2, Axis, Zip};

use super::params::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    LeakyRelu(Var, f64),
    /// `t * f'(z)` for the leaky activation `f`; the derivative is piecewise
    /// constant, so `z` receives no gradient.
    LeakyMask { t: Var, z: Var, slope: f64 },
    Concat(Var, Var),
    Cols(Var, usize, usize),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Softmax(Var),
    Loss { inputs: Vec<Var>, grads: Vec<Array2<f64>> },
    Combine(Vec<(Var, f64)>),
}

struct Node {
    value: Option<Array2<f64>>,
    op: Op,
    needs_grad: bool,
}

pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    poisoned: Option<String>,
}

#[inline]
pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

#[inline]
fn leaky_slope(z: f64, slope: f64) -> f64 {
    if z >= 0.0 {
        1.0
    } else {
        slope
    }
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
            poisoned: None,
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(x), _) => x,
            (None, Op::Param(id)) => self.store.data(*id),
            _ => unreachable!("every non-parameter node stores its value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    /// Fails if any recorded operation produced a non-finite value.
    pub fn status(&self) -> Result<()> {
        match &self.poisoned {
            Some(op) => Err(Error::numeric(op.clone())),
            None => Ok(()),
        }
    }

    fn push(&mut self, value: Option<Array2<f64>>, op: Op, label: &str) -> Var {
        if self.poisoned.is_none() {
            if let Some(v) = &value {
                if v.iter().any(|x| !x.is_finite()) {
                    self.poisoned = Some(label.to_string());
                }
            }
        }
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::Param(_) => true,
            Op::MatMul(a, b) | Op::AddRow(a, b) | Op::Concat(a, b) | Op::Add(a, b) | Op::Sub(a, b) => {
                self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad
            }
            Op::LeakyRelu(a, _) | Op::Cols(a, _, _) | Op::Scale(a, _) | Op::Softmax(a) => self.nodes[a.0].needs_grad,
            Op::LeakyMask { t, .. } => self.nodes[t.0].needs_grad,
            Op::Loss { inputs, .. } => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
            Op::Combine(terms) => terms.iter().any(|(v, _)| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(Some(value), Op::Leaf, "constant")
    }

    /// The tape node for a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push(None, Op::Param(id), "param");
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, w) = (self.value(a), self.value(b));
        if x.ncols() != w.nrows() {
            return Err(Error::Shape(format!("matmul {:?} x {:?}", x.dim(), w.dim())));
        }
        let out = x.dot(w);
        Ok(self.push(Some(out), Op::MatMul(a, b), "matmul"))
    }

    /// Adds a 1 x C row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.nrows() != 1 || rv.ncols() != xv.ncols() {
            return Err(Error::Shape(format!("add_row {:?} + {:?}", xv.dim(), rv.dim())));
        }
        let out = xv + rv;
        Ok(self.push(Some(out), Op::AddRow(x, row), "bias"))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self.value(x).mapv(|v| leaky_relu(v, slope));
        self.push(Some(out), Op::LeakyRelu(x, slope), "leaky_relu")
    }

    pub fn leaky_mask(&mut self, t: Var, z: Var, slope: f64) -> Result<Var> {
        let (tv, zv) = (self.value(t), self.value(z));
        if tv.dim() != zv.dim() {
            return Err(Error::Shape(format!("tangent {:?} vs preactivation {:?}", tv.dim(), zv.dim())));
        }
        let mut out = tv.clone();
        Zip::from(&mut out).and(zv).for_each(|o, &z| *o *= leaky_slope(z, slope));
        Ok(self.push(Some(out), Op::LeakyMask { t, z, slope }, "tangent"))
    }

    /// Column-wise concatenation `[a ; b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.nrows() != bv.nrows() {
            return Err(Error::Shape(format!("concat {:?} with {:?}", av.dim(), bv.dim())));
        }
        let out = ndarray::concatenate(Axis(1), &[av.view(), bv.view()]).expect("row counts checked");
        Ok(self.push(Some(out), Op::Concat(a, b), "concat"))
    }

    /// Columns `start..end`.
    pub fn cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if start >= end || end > xv.ncols() {
            return Err(Error::Shape(format!("columns {start}..{end} of {:?}", xv.dim())));
        }
        let out = xv.slice(s![.., start..end]).to_owned();
        Ok(self.push(Some(out), Op::Cols(x, start, end), "slice"))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.dim() != bv.dim() {
            return Err(Error::Shape(format!("add {:?} + {:?}", av.dim(), bv.dim())));
        }
        let out = av + bv;
        Ok(self.push(Some(out), Op::Add(a, b), "add"))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.dim() != bv.dim() {
            return Err(Error::Shape(format!("sub {:?} - {:?}", av.dim(), bv.dim())));
        }
        let out = av - bv;
        Ok(self.push(Some(out), Op::Sub(a, b), "sub"))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x) * c;
        self.push(Some(out), Op::Scale(x, c), "scale")
    }

    /// Softmax across the columns of each row.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for mut row in out.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|v| (v - m).exp());
            let sum = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        self.push(Some(out), Op::Softmax(x), "softmax")
    }

    /// Records a scalar loss term with precomputed gradients with respect to
    /// each input. `grads[i]` must have the shape of `inputs[i]`.
    pub fn loss(&mut self, label: &str, value: f64, inputs: Vec<Var>, grads: Vec<Array2<f64>>) -> Result<Var> {
        if inputs.len() != grads.len() {
            return Err(Error::Shape("one gradient per loss input".into()));
        }
        for (v, g) in inputs.iter().zip(&grads) {
            if self.value(*v).dim() != g.dim() {
                return Err(Error::Shape(format!(
                    "{label}: gradient {:?} for input {:?}",
                    g.dim(),
                    self.value(*v).dim()
                )));
            }
            if self.poisoned.is_none() && g.iter().any(|x| !x.is_finite()) {
                self.poisoned = Some(format!("{label} gradient"));
            }
        }
        let out = Array2::from_elem((1, 1), value);
        Ok(self.push(Some(out), Op::Loss { inputs, grads }, label))
    }

    /// Weighted sum of scalar nodes.
    pub fn combine(&mut self, terms: Vec<(Var, f64)>) -> Result<Var> {
        let mut total = 0.0;
        for (v, w) in &terms {
            let x = self.value(*v);
            if x.dim() != (1, 1) {
                return Err(Error::Shape(format!("combine expects scalars, got {:?}", x.dim())));
            }
            total += w * x[[0, 0]];
        }
        Ok(self.push(Some(Array2::from_elem((1, 1), total)), Op::Combine(terms), "combine"))
    }

    /// Gradients of the scalar `loss` with respect to every parameter it reaches.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.status()?;
        if self.value(loss).dim() != (1, 1) {
            return Err(Error::Shape(format!(
                "backward needs a scalar, got {:?}",
                self.value(loss).dim()
            )));
        }
        let mut grads: Vec<Option<Array2<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Array2::from_elem((1, 1), 1.0));
        let mut out = Gradients(vec![None; self.store.len()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.0[id.0] = Some(g),
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let ga = g.dot(&self.value(*b).t());
                        accum(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let gb = self.value(*a).t().dot(&g);
                        accum(&mut grads, *b, gb);
                    }
                }
                Op::AddRow(x, row) => {
                    if self.needs(*row) {
                        let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        accum(&mut grads, *row, gr);
                    }
                    if self.needs(*x) {
                        accum(&mut grads, *x, g);
                    }
                }
                Op::LeakyRelu(x, slope) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(self.value(*x))
                        .for_each(|o, &z| *o *= leaky_slope(z, *slope));
                    accum(&mut grads, *x, gx);
                }
                Op::LeakyMask { t, z, slope } => {
                    let mut gt = g;
                    Zip::from(&mut gt)
                        .and(self.value(*z))
                        .for_each(|o, &z| *o *= leaky_slope(z, *slope));
                    accum(&mut grads, *t, gt);
                }
                Op::Concat(a, b) => {
                    let split = self.value(*a).ncols();
                    if self.needs(*a) {
                        accum(&mut grads, *a, g.slice(s![.., ..split]).to_owned());
                    }
                    if self.needs(*b) {
                        accum(&mut grads, *b, g.slice(s![.., split..]).to_owned());
                    }
                }
                Op::Cols(x, start, end) => {
                    let mut gx = Array2::zeros(self.value(*x).raw_dim());
                    gx.slice_mut(s![.., *start..*end]).assign(&g);
                    accum(&mut grads, *x, gx);
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accum(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accum(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*b) {
                        accum(&mut grads, *b, -&g);
                    }
                    if self.needs(*a) {
                        accum(&mut grads, *a, g);
                    }
                }
                Op::Scale(x, c) => accum(&mut grads, *x, g * *c),
                Op::Softmax(x) => {
                    let y = node.value.as_ref().expect("softmax stores its output");
                    let mut gx = Array2::zeros(y.raw_dim());
                    for ((mut o, yr), gr) in gx.rows_mut().into_iter().zip(y.rows()).zip(g.rows()) {
                        let dot = yr.dot(&gr);
                        Zip::from(&mut o)
                            .and(&yr)
                            .and(&gr)
                            .for_each(|o, &y, &g| *o = y * (g - dot));
                    }
                    accum(&mut grads, *x, gx);
                }
                Op::Loss { inputs, grads: local } => {
                    let c = g[[0, 0]];
                    for (v, lg) in inputs.iter().zip(local) {
                        if self.needs(*v) {
                            accum(&mut grads, *v, lg * c);
                        }
                    }
                }
                Op::Combine(terms) => {
                    let c = g[[0, 0]];
                    for (v, w) in terms {
                        if self.needs(*v) {
                            accum(&mut grads, *v, Array2::from_elem((1, 1), c * w));
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }
}

fn accum(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}
