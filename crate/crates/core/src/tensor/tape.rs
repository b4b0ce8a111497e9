use super::{softmax, softmax_unchecked, Gradients, ParamId, Tensor};
use crate::error::{Error, Result};

/// Mass below which a normalized vector is treated as a dead end.
pub const NORMALIZE_EPS: f64 = 1e-12;

/// Probabilities are floored here before taking a negative log.
pub const LOG_FLOOR: f64 = 1e-300;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<'a> {
    Leaf,
    Row { table: usize, row: usize },
    MatVec { m: usize, x: usize },
    VecMat { v: usize, m: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    OneMinus(usize),
    Sigmoid(usize),
    Tanh(usize),
    Softmax(usize),
    RowSoftmax { x: usize, cols: usize },
    Slice { x: usize, start: usize },
    Concat(usize, usize),
    ScaleBy { x: usize, s: usize },
    ScaleConst { x: usize, k: f64 },
    SumAll(usize),
    AddN(Vec<usize>),
    Normalize { x: usize, total: f64, dead_end: bool },
    NegLog { x: usize, index: usize },
    Transition {
        r: usize,
        n_ent: usize,
        n_rel: usize,
        ones: &'a [(usize, usize, usize)],
    },
}

#[derive(Debug, Clone)]
struct Node<'a> {
    value: Tensor,
    op: Op<'a>,
}

/// A single-thread computation record.
///
/// Nodes are appended in execution order, so every operation's inputs
/// precede it and the reverse sweep in [`Tape::backward`] is a plain
/// backwards loop.
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    params: Vec<(ParamId, usize)>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op<'a>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn data(&self, i: usize) -> &[f64] {
        self.nodes[i].value.data()
    }

    fn shape(&self, i: usize) -> &[usize] {
        self.nodes[i].value.shape()
    }

    /// Registers a trainable parameter. Its gradient is reported by `backward`.
    pub fn param(&mut self, id: ParamId, value: &Tensor) -> Var {
        let v = self.push(value.clone(), Op::Leaf);
        self.params.push((id, v.0));
        v
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Row `row` of a rank-2 node, as a vector.
    pub fn row(&mut self, table: Var, row: usize) -> Result<Var> {
        let shape = self.shape(table.0);
        if shape.len() != 2 || row >= shape[0] {
            return Err(Error::Config(format!(
                "row {row} out of range for table {:?}",
                shape
            )));
        }
        let cols = shape[1];
        let data = self.data(table.0)[row * cols..(row + 1) * cols].to_vec();
        Ok(self.push(Tensor::vector(data), Op::Row { table: table.0, row }))
    }

    /// Matrix `[r, c]` times vector `[c]`.
    pub fn matvec(&mut self, m: Var, x: Var) -> Result<Var> {
        let ms = self.shape(m.0);
        let xl = self.data(x.0).len();
        if ms.len() != 2 || ms[1] != xl {
            return Err(Error::Config(format!(
                "matvec shape mismatch: {:?} x [{xl}]",
                ms
            )));
        }
        let (rows, cols) = (ms[0], ms[1]);
        let md = self.data(m.0);
        let xd = self.data(x.0);
        let out: Vec<f64> = (0..rows)
            .map(|i| {
                md[i * cols..(i + 1) * cols]
                    .iter()
                    .zip(xd)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        Ok(self.push(Tensor::vector(out), Op::MatVec { m: m.0, x: x.0 }))
    }

    /// Row vector `[n]` times matrix `[n, k]`.
    pub fn vecmat(&mut self, v: Var, m: Var) -> Result<Var> {
        let ms = self.shape(m.0);
        let vl = self.data(v.0).len();
        if ms.len() != 2 || ms[0] != vl {
            return Err(Error::Config(format!(
                "vecmat shape mismatch: [{vl}] x {:?}",
                ms
            )));
        }
        let (rows, cols) = (ms[0], ms[1]);
        let md = self.data(m.0);
        let vd = self.data(v.0);
        let mut out = vec![0.0; cols];
        for i in 0..rows {
            let w = vd[i];
            if w == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(&md[i * cols..(i + 1) * cols]) {
                *o += w * a;
            }
        }
        Ok(self.push(Tensor::vector(out), Op::VecMat { v: v.0, m: m.0 }))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.data(a.0).len() != self.data(b.0).len() {
            return Err(Error::Config(format!(
                "elementwise shape mismatch: {:?} vs {:?}",
                self.shape(a.0),
                self.shape(b.0)
            )));
        }
        let data = self
            .data(a.0)
            .iter()
            .zip(self.data(b.0))
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::new(self.shape(a.0).to_vec(), data)
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let data = self.data(a.0).iter().map(|x| f(*x)).collect();
        Tensor::new(self.shape(a.0).to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a.0, b.0)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a.0, b.0)))
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let t = self.unary(a, |x| 1.0 - x);
        self.push(t, Op::OneMinus(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.unary(a, sigmoid);
        self.push(t, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.unary(a, f64::tanh);
        self.push(t, Op::Tanh(a.0))
    }

    /// Softmax over all entries of `a`.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let probs = softmax(self.data(a.0))?;
        let t = Tensor::new(self.shape(a.0).to_vec(), probs)?;
        Ok(self.push(t, Op::Softmax(a.0)))
    }

    /// Treats `a` as `[len / cols, cols]` and applies softmax to each row.
    /// The result has that rank-2 shape.
    pub fn row_softmax(&mut self, a: Var, cols: usize) -> Result<Var> {
        let data = self.data(a.0);
        if cols == 0 || data.len() % cols != 0 {
            return Err(Error::Config(format!(
                "cannot split {} entries into rows of {cols}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("softmax input contains {bad}")));
        }
        let rows = data.len() / cols;
        let mut out = Vec::with_capacity(data.len());
        for chunk in data.chunks(cols) {
            out.extend(softmax_unchecked(chunk));
        }
        let t = Tensor::matrix(rows, cols, out)?;
        Ok(self.push(t, Op::RowSoftmax { x: a.0, cols }))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let data = self.data(a.0);
        if start + len > data.len() {
            return Err(Error::Config(format!(
                "slice {start}..{} out of range for {} entries",
                start + len,
                data.len()
            )));
        }
        let t = Tensor::vector(data[start..start + len].to_vec());
        Ok(self.push(t, Op::Slice { x: a.0, start }))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let mut data = self.data(a.0).to_vec();
        data.extend_from_slice(self.data(b.0));
        self.push(Tensor::vector(data), Op::Concat(a.0, b.0))
    }

    /// Multiplies `a` by the one-element node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.data(s.0).len() != 1 {
            return Err(Error::Config("scale_by expects a scalar factor".into()));
        }
        let k = self.data(s.0)[0];
        let t = self.unary(a, |x| k * x);
        Ok(self.push(t, Op::ScaleBy { x: a.0, s: s.0 }))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let t = self.unary(a, |x| k * x);
        self.push(t, Op::ScaleConst { x: a.0, k })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.data(a.0).iter().sum();
        self.push(Tensor::scalar(total), Op::SumAll(a.0))
    }

    /// Elementwise sum of equally shaped nodes.
    pub fn add_n(&mut self, items: &[Var]) -> Result<Var> {
        let first = items
            .first()
            .ok_or_else(|| Error::Usage("add_n of an empty list".into()))?;
        let mut acc = self.data(first.0).to_vec();
        for v in &items[1..] {
            let d = self.data(v.0);
            if d.len() != acc.len() {
                return Err(Error::Config("add_n shape mismatch".into()));
            }
            for (a, b) in acc.iter_mut().zip(d) {
                *a += b;
            }
        }
        let t = Tensor::new(self.shape(first.0).to_vec(), acc)?;
        Ok(self.push(t, Op::AddN(items.iter().map(|v| v.0).collect())))
    }

    /// Divides `a` by its sum. When the sum is at most [`NORMALIZE_EPS`] the
    /// result is the uniform vector and no gradient flows back.
    ///
    /// Returns the normalized node and whether the dead-end fallback fired.
    pub fn normalize(&mut self, a: Var) -> (Var, bool) {
        let data = self.data(a.0);
        let n = data.len();
        let total: f64 = data.iter().sum();
        let dead_end = !(total > NORMALIZE_EPS);
        let out = if dead_end {
            vec![1.0 / n as f64; n]
        } else {
            data.iter().map(|v| v / total).collect()
        };
        let v = self.push(
            Tensor::vector(out),
            Op::Normalize {
                x: a.0,
                total,
                dead_end,
            },
        );
        (v, dead_end)
    }

    /// `-ln(a[index])`, with the probability floored at [`LOG_FLOOR`].
    pub fn neg_log(&mut self, a: Var, index: usize) -> Result<Var> {
        let data = self.data(a.0);
        let p = *data.get(index).ok_or_else(|| {
            Error::Data(format!(
                "target index {index} outside distribution of size {}",
                data.len()
            ))
        })?;
        let value = -p.max(LOG_FLOOR).ln();
        Ok(self.push(Tensor::scalar(value), Op::NegLog { x: a.0, index }))
    }

    /// Contracts a relation matrix `r` (`[n_ent * n_rel]`, row-major by
    /// head) with a binary `[n_ent, n_rel, n_ent]` tensor given by its ones:
    /// `out[i, y] = sum_j r[i, j] * a[i, j, y]`.
    pub fn transition(
        &mut self,
        r: Var,
        n_ent: usize,
        n_rel: usize,
        ones: &'a [(usize, usize, usize)],
    ) -> Result<Var> {
        let rd = self.data(r.0);
        if rd.len() != n_ent * n_rel {
            return Err(Error::Config(format!(
                "relation matrix has {} entries, expected {n_ent}x{n_rel}",
                rd.len()
            )));
        }
        let mut out = vec![0.0; n_ent * n_ent];
        for &(h, j, t) in ones {
            if h >= n_ent || j >= n_rel || t >= n_ent {
                return Err(Error::Config(format!(
                    "adjacency entry ({h},{j},{t}) outside {n_ent}x{n_rel}x{n_ent}"
                )));
            }
            out[h * n_ent + t] += rd[h * n_rel + j];
        }
        let t = Tensor::matrix(n_ent, n_ent, out)?;
        Ok(self.push(
            t,
            Op::Transition {
                r: r.0,
                n_ent,
                n_rel,
                ones,
            },
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Every registered parameter gets an entry; parameters off every path
    /// to `loss` receive zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Row { table, row } => {
                    let cols = g.len();
                    let slot = self.slot(&mut grads, *table);
                    for (s, d) in slot[row * cols..(row + 1) * cols].iter_mut().zip(&g) {
                        *s += d;
                    }
                }
                Op::MatVec { m, x } => {
                    let cols = self.data(*x).len();
                    let md = self.data(*m);
                    let xd = self.data(*x);
                    {
                        let dm = self.slot(&mut grads, *m);
                        for (r, gr) in g.iter().enumerate() {
                            if *gr == 0.0 {
                                continue;
                            }
                            for (s, xv) in dm[r * cols..(r + 1) * cols].iter_mut().zip(xd) {
                                *s += gr * xv;
                            }
                        }
                    }
                    let dx = self.slot(&mut grads, *x);
                    for (r, gr) in g.iter().enumerate() {
                        if *gr == 0.0 {
                            continue;
                        }
                        for (s, mv) in dx.iter_mut().zip(&md[r * cols..(r + 1) * cols]) {
                            *s += gr * mv;
                        }
                    }
                }
                Op::VecMat { v, m } => {
                    let cols = g.len();
                    let md = self.data(*m);
                    let vd = self.data(*v);
                    {
                        let dv = self.slot(&mut grads, *v);
                        for (r, s) in dv.iter_mut().enumerate() {
                            *s += md[r * cols..(r + 1) * cols]
                                .iter()
                                .zip(&g)
                                .map(|(a, b)| a * b)
                                .sum::<f64>();
                        }
                    }
                    let dm = self.slot(&mut grads, *m);
                    for (r, w) in vd.iter().enumerate() {
                        if *w == 0.0 {
                            continue;
                        }
                        for (s, gc) in dm[r * cols..(r + 1) * cols].iter_mut().zip(&g) {
                            *s += w * gc;
                        }
                    }
                }
                Op::Add(a, b) => {
                    add_into(self.slot(&mut grads, *a), &g, 1.0);
                    add_into(self.slot(&mut grads, *b), &g, 1.0);
                }
                Op::Sub(a, b) => {
                    add_into(self.slot(&mut grads, *a), &g, 1.0);
                    add_into(self.slot(&mut grads, *b), &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let (ad, bd) = (self.data(*a), self.data(*b));
                    {
                        let da = self.slot(&mut grads, *a);
                        for ((s, gv), bv) in da.iter_mut().zip(&g).zip(bd) {
                            *s += gv * bv;
                        }
                    }
                    let db = self.slot(&mut grads, *b);
                    for ((s, gv), av) in db.iter_mut().zip(&g).zip(ad) {
                        *s += gv * av;
                    }
                }
                Op::OneMinus(a) => add_into(self.slot(&mut grads, *a), &g, -1.0),
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    let da = self.slot(&mut grads, *a);
                    for ((s, gv), yv) in da.iter_mut().zip(&g).zip(y) {
                        *s += gv * yv * (1.0 - yv);
                    }
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    let da = self.slot(&mut grads, *a);
                    for ((s, gv), yv) in da.iter_mut().zip(&g).zip(y) {
                        *s += gv * (1.0 - yv * yv);
                    }
                }
                Op::Softmax(a) => {
                    let y = node.value.data();
                    softmax_backward(self.slot(&mut grads, *a), &g, y);
                }
                Op::RowSoftmax { x, cols } => {
                    let y = node.value.data();
                    let dx = self.slot(&mut grads, *x);
                    for ((dchunk, gchunk), ychunk) in dx
                        .chunks_mut(*cols)
                        .zip(g.chunks(*cols))
                        .zip(y.chunks(*cols))
                    {
                        softmax_backward(dchunk, gchunk, ychunk);
                    }
                }
                Op::Slice { x, start } => {
                    let dx = self.slot(&mut grads, *x);
                    add_into(&mut dx[*start..*start + g.len()], &g, 1.0);
                }
                Op::Concat(a, b) => {
                    let la = self.data(*a).len();
                    add_into(self.slot(&mut grads, *a), &g[..la], 1.0);
                    add_into(self.slot(&mut grads, *b), &g[la..], 1.0);
                }
                Op::ScaleBy { x, s } => {
                    let k = self.data(*s)[0];
                    let xd = self.data(*x);
                    let ds: f64 = g.iter().zip(xd).map(|(a, b)| a * b).sum();
                    add_into(self.slot(&mut grads, *x), &g, k);
                    self.slot(&mut grads, *s)[0] += ds;
                }
                Op::ScaleConst { x, k } => add_into(self.slot(&mut grads, *x), &g, *k),
                Op::SumAll(x) => {
                    let gv = g[0];
                    for s in self.slot(&mut grads, *x).iter_mut() {
                        *s += gv;
                    }
                }
                Op::AddN(items) => {
                    for item in items {
                        add_into(self.slot(&mut grads, *item), &g, 1.0);
                    }
                }
                Op::Normalize {
                    x,
                    total,
                    dead_end,
                } => {
                    if !*dead_end {
                        let y = node.value.data();
                        let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                        let dx = self.slot(&mut grads, *x);
                        for (s, gv) in dx.iter_mut().zip(&g) {
                            *s += (gv - dot) / total;
                        }
                    }
                }
                Op::NegLog { x, index } => {
                    let p = self.data(*x)[*index];
                    if p > LOG_FLOOR {
                        self.slot(&mut grads, *x)[*index] -= g[0] / p;
                    }
                }
                Op::Transition {
                    r,
                    n_ent,
                    n_rel,
                    ones,
                } => {
                    let dr = self.slot(&mut grads, *r);
                    for &(h, j, t) in ones.iter() {
                        dr[h * n_rel + j] += g[h * n_ent + t];
                    }
                }
            }
        }

        let mut out = Gradients::new();
        for &(id, node) in &self.params {
            let shape = self.nodes[node].value.shape().to_vec();
            let data = match grads.get_mut(node).and_then(Option::take) {
                Some(d) => d,
                None => vec![0.0; self.nodes[node].value.len()],
            };
            let t = Tensor::new(shape, data)?;
            match out.get(id) {
                // The same parameter registered twice: sum both leaves.
                Some(_) => {
                    let mut single = Gradients::new();
                    single.insert(id, t);
                    out.accumulate(&single);
                }
                None => out.insert(id, t),
            }
        }
        Ok(out)
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], i: usize) -> &'g mut Vec<f64> {
        let n = self.nodes[i].value.len();
        grads[i].get_or_insert_with(|| vec![0.0; n])
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn add_into(dst: &mut [f64], src: &[f64], k: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}

fn softmax_backward(dx: &mut [f64], g: &[f64], y: &[f64]) {
    let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
    for ((s, gv), yv) in dx.iter_mut().zip(g).zip(y) {
        *s += yv * (gv - dot);
    }
}
