//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every operation as a node in creation order, so node
//! ids already form a topological order; [`Tape::backward`] walks them once in
//! reverse and accumulates gradients additively into each parent.

use std::cell::{Ref, RefCell};

use super::matrix::{gemm, Matrix};

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddBias(usize, usize),
    Square(usize),
    Relu(usize),
    MulConst(usize, Matrix),
    GatherRows(usize, Vec<usize>),
    SliceRows(usize, usize),
    ConcatCols(usize, usize),
    /// Max over consecutive groups of rows. `argmax[o * cols + c]` is the
    /// source row feeding output `(o, c)`.
    SegmentMax { src: usize, argmax: Vec<usize> },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Matrix,
        inv_std: Vec<f64>,
        /// Batch statistics were used, so the mean and variance depend on `x`.
        batch_stats: bool,
    },
    SoftmaxCe { logits: usize, probs: Matrix, labels: Vec<usize> },
    Sum(usize),
    EdgeConv(Box<EdgeConvNode>),
}

/// Saved state of a fused EdgeConv: edge affine map, batch norm over edges,
/// ReLU and max over each point's `k` edges.
#[derive(Debug)]
struct EdgeConvNode {
    x: usize,
    weight: usize,
    bias: usize,
    gamma: usize,
    beta: usize,
    k: usize,
    neighbors: Vec<usize>,
    xhat: Matrix,
    inv_std: Vec<f64>,
    /// Edge row feeding output `(p, c)`, at `p * cols + c`.
    argmax: Vec<usize>,
    batch_stats: bool,
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Recording of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Value<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Value<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Value#{}{:?}", self.id, self.shape())
    }
}

/// Batch mean and (biased) variance per column, reported by training-mode
/// batch norm so callers can update running statistics.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Matrix, op: Op) -> Value<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Value {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub fn leaf(&self, value: Matrix) -> Value<'_> {
        self.push(value, Op::Leaf)
    }

    fn val(&self, id: usize) -> Ref<'_, Matrix> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Gradients of every node with respect to the sum of `root`'s entries.
    pub fn backward(&self, root: Value<'_>) -> Gradients {
        assert!(std::ptr::eq(self, root.tape), "value belongs to another tape");
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Matrix>> = vec![None; nodes.len()];
        let (r, c) = nodes[root.id].value.shape();
        grads[root.id] = Some(Matrix::filled(r, c, 1.0));

        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    gemm(&g, false, bv, true, &mut ga, 0.0);
                    let mut gb = Matrix::zeros(bv.rows(), bv.cols());
                    gemm(av, true, &g, false, &mut gb, 0.0);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|v| -v));
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(&nodes[*b].value, |x, y| x * y);
                    let gb = g.zip_map(&nodes[*a].value, |x, y| x * y);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddBias(a, bias) => {
                    accumulate(&mut grads, *bias, g.sum_rows());
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Square(a) => {
                    let ga = g.zip_map(&nodes[*a].value, |x, y| 2.0 * x * y);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let ga = g.zip_map(&node.value, |x, y| if y > 0.0 { x } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::MulConst(a, k) => {
                    accumulate(&mut grads, *a, g.zip_map(k, |x, y| x * y));
                }
                Op::GatherRows(a, indices) => {
                    let src = &nodes[*a].value;
                    let mut ga = Matrix::zeros(src.rows(), src.cols());
                    for (o, &i) in indices.iter().enumerate() {
                        for (d, s) in ga.row_mut(i).iter_mut().zip(g.row(o)) {
                            *d += s;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SliceRows(a, start) => {
                    let src = &nodes[*a].value;
                    let mut ga = Matrix::zeros(src.rows(), src.cols());
                    let w = src.cols();
                    ga.data_mut()[start * w..start * w + g.len()].copy_from_slice(g.data());
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(a, b) => {
                    let ca = nodes[*a].value.cols();
                    let cb = nodes[*b].value.cols();
                    let mut ga = Matrix::zeros(g.rows(), ca);
                    let mut gb = Matrix::zeros(g.rows(), cb);
                    for r in 0..g.rows() {
                        ga.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                        gb.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::SegmentMax { src, argmax } => {
                    let s = &nodes[*src].value;
                    let cols = s.cols();
                    let mut gs = Matrix::zeros(s.rows(), cols);
                    for (pos, (&row, &gv)) in argmax.iter().zip(g.data()).enumerate() {
                        gs.data_mut()[row * cols + pos % cols] += gv;
                    }
                    accumulate(&mut grads, *src, gs);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let gam = &nodes[*gamma].value;
                    let n = g.rows() as f64;
                    let cols = g.cols();
                    let mut dgamma = Matrix::zeros(1, cols);
                    let mut dbeta = Matrix::zeros(1, cols);
                    for r in 0..g.rows() {
                        for c in 0..cols {
                            let gv = g.get(r, c);
                            dgamma.data_mut()[c] += gv * xhat.get(r, c);
                            dbeta.data_mut()[c] += gv;
                        }
                    }
                    let mut gx = Matrix::zeros(g.rows(), cols);
                    for r in 0..g.rows() {
                        for c in 0..cols {
                            let scale = gam.data()[c] * inv_std[c];
                            let v = if *batch_stats {
                                scale
                                    * (g.get(r, c)
                                        - dbeta.data()[c] / n
                                        - xhat.get(r, c) * dgamma.data()[c] / n)
                            } else {
                                scale * g.get(r, c)
                            };
                            gx.set(r, c, v);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *gamma, dgamma);
                    accumulate(&mut grads, *beta, dbeta);
                }
                Op::SoftmaxCe {
                    logits,
                    probs,
                    labels,
                } => {
                    let scale = g.data()[0] / labels.len() as f64;
                    let mut gl = probs.clone();
                    for (r, &y) in labels.iter().enumerate() {
                        let v = gl.get(r, y);
                        gl.set(r, y, v - 1.0);
                    }
                    for v in gl.data_mut() {
                        *v *= scale;
                    }
                    accumulate(&mut grads, *logits, gl);
                }
                Op::Sum(a) => {
                    let av = &nodes[*a].value;
                    accumulate(&mut grads, *a, Matrix::filled(av.rows(), av.cols(), g.data()[0]));
                }
                Op::EdgeConv(e) => edge_conv_backward(&nodes, &mut grads, e, &node.value, &g),
            }
            grads[id] = Some(g);
        }
        Gradients(grads)
    }
}

fn edge_conv_backward(nodes: &[Node], grads: &mut [Option<Matrix>], e: &EdgeConvNode, out: &Matrix, g: &Matrix) {
    let x = &nodes[e.x].value;
    let w = &nodes[e.weight].value;
    let gamma = nodes[e.gamma].value.data();
    let (n, c) = x.shape();
    let o = out.cols();
    let k = e.k;
    let edges = n * k;

    // gradient at the batch-norm output: only the winning edge of each
    // (point, channel) with a positive maximum receives anything
    let mut dgamma = vec![0.0; o];
    let mut dbeta = vec![0.0; o];
    let mut gy = Matrix::zeros(edges, o);
    for (pos, &row) in e.argmax.iter().enumerate() {
        let ch = pos % o;
        if out.data()[pos] > 0.0 {
            let gv = g.data()[pos];
            gy.data_mut()[row * o + ch] = gv;
            dgamma[ch] += gv * e.xhat.data()[row * o + ch];
            dbeta[ch] += gv;
        }
    }
    let scale: Vec<f64> = (0..o).map(|ch| gamma[ch] * e.inv_std[ch]).collect();
    let inv_n = 1.0 / edges as f64;
    let mut gz = gy;
    for (zr, hr) in gz.data_mut().chunks_exact_mut(o).zip(e.xhat.data().chunks_exact(o)) {
        for ch in 0..o {
            zr[ch] = if e.batch_stats {
                scale[ch] * (zr[ch] - dbeta[ch] * inv_n - hr[ch] * dgamma[ch] * inv_n)
            } else {
                scale[ch] * zr[ch]
            };
        }
    }

    let mut dbias = Matrix::zeros(1, o);
    let mut d_center = Matrix::zeros(n, o);
    let mut d_neighbor = Matrix::zeros(n, o);
    for (edge, zr) in gz.data().chunks_exact(o).enumerate() {
        let p = edge / k;
        let q = e.neighbors[edge];
        for ch in 0..o {
            dbias.data_mut()[ch] += zr[ch];
            d_center.data_mut()[p * o + ch] += zr[ch];
            d_neighbor.data_mut()[q * o + ch] += zr[ch];
        }
    }

    let sq = squared_offsets(x, k, &e.neighbors);
    let w_diff = Matrix::from_vec(
        c,
        o,
        w.data()[..c * o].iter().zip(&w.data()[c * o..2 * c * o]).map(|(a, b)| a - b).collect(),
    );
    let w_offset = Matrix::from_vec(c, o, w.data()[c * o..2 * c * o].to_vec());
    let w_square = Matrix::from_vec(c, o, w.data()[2 * c * o..].to_vec());

    let mut dw = Matrix::zeros(3 * c, o);
    {
        let mut dw_diff = Matrix::zeros(c, o);
        gemm(x, true, &d_center, false, &mut dw_diff, 0.0);
        let mut dw_offset = Matrix::zeros(c, o);
        gemm(x, true, &d_neighbor, false, &mut dw_offset, 0.0);
        let mut dw_square = Matrix::zeros(c, o);
        gemm(&sq, true, &gz, false, &mut dw_square, 0.0);
        let d = dw.data_mut();
        d[..c * o].copy_from_slice(dw_diff.data());
        for i in 0..c * o {
            d[c * o + i] = dw_offset.data()[i] - dw_diff.data()[i];
        }
        d[2 * c * o..].copy_from_slice(dw_square.data());
    }

    let mut dx = Matrix::zeros(n, c);
    gemm(&d_center, false, &w_diff, true, &mut dx, 0.0);
    gemm(&d_neighbor, false, &w_offset, true, &mut dx, 1.0);
    let mut dsq = Matrix::zeros(edges, c);
    gemm(&gz, false, &w_square, true, &mut dsq, 0.0);
    for edge in 0..edges {
        let p = edge / k;
        let q = e.neighbors[edge];
        for ch in 0..c {
            let diff = x.data()[q * c + ch] - x.data()[p * c + ch];
            let v = 2.0 * diff * dsq.data()[edge * c + ch];
            dx.data_mut()[q * c + ch] += v;
            dx.data_mut()[p * c + ch] -= v;
        }
    }

    accumulate(grads, e.x, dx);
    accumulate(grads, e.weight, dw);
    accumulate(grads, e.bias, dbias);
    accumulate(grads, e.gamma, Matrix::from_vec(1, o, dgamma));
    accumulate(grads, e.beta, Matrix::from_vec(1, o, dbeta));
}

/// `(x_j - x_i)^2` per edge, where edge `e` has centre `e / k`.
fn squared_offsets(x: &Matrix, k: usize, neighbors: &[usize]) -> Matrix {
    let c = x.cols();
    let mut sq = Matrix::zeros(neighbors.len(), c);
    for (edge, row) in sq.data_mut().chunks_exact_mut(c).enumerate() {
        let xi = x.row(edge / k);
        let xj = x.row(neighbors[edge]);
        for ch in 0..c {
            let d = xj[ch] - xi[ch];
            row[ch] = d * d;
        }
    }
    sq
}

fn accumulate(grads: &mut [Option<Matrix>], id: usize, g: Matrix) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients(Vec<Option<Matrix>>);

impl Gradients {
    /// `None` when `v` does not influence the root.
    pub fn get(&self, v: Value<'_>) -> Option<&Matrix> {
        self.0.get(v.id).and_then(Option::as_ref)
    }

    pub fn get_or_zeros(&self, v: Value<'_>) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| {
            let (r, c) = v.shape();
            Matrix::zeros(r, c)
        })
    }
}

impl<'t> Value<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Ref<'t, Matrix> {
        self.tape.val(self.id)
    }

    pub fn to_matrix(&self) -> Matrix {
        self.value().clone()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().shape()
    }

    pub fn rows(&self) -> usize {
        self.shape().0
    }

    pub fn cols(&self) -> usize {
        self.shape().1
    }

    fn same_tape(&self, other: Value<'t>) {
        assert!(std::ptr::eq(self.tape, other.tape), "values from different tapes");
    }

    pub fn matmul(self, rhs: Value<'t>) -> Value<'t> {
        self.same_tape(rhs);
        let out = self.value().matmul(&rhs.value());
        self.tape.push(out, Op::MatMul(self.id, rhs.id))
    }

    pub fn add(self, rhs: Value<'t>) -> Value<'t> {
        self.same_tape(rhs);
        let out = self.value().zip_map(&rhs.value(), |a, b| a + b);
        self.tape.push(out, Op::Add(self.id, rhs.id))
    }

    pub fn sub(self, rhs: Value<'t>) -> Value<'t> {
        self.same_tape(rhs);
        let out = self.value().zip_map(&rhs.value(), |a, b| a - b);
        self.tape.push(out, Op::Sub(self.id, rhs.id))
    }

    /// Element-wise product.
    pub fn mul(self, rhs: Value<'t>) -> Value<'t> {
        self.same_tape(rhs);
        let out = self.value().zip_map(&rhs.value(), |a, b| a * b);
        self.tape.push(out, Op::Mul(self.id, rhs.id))
    }

    /// Add a `1 x cols` row vector to every row.
    pub fn add_bias(self, bias: Value<'t>) -> Value<'t> {
        self.same_tape(bias);
        let out = {
            let b = bias.value();
            assert_eq!(b.shape(), (1, self.cols()), "bias shape");
            let mut out = self.to_matrix();
            for r in 0..out.rows() {
                for (o, bv) in out.row_mut(r).iter_mut().zip(b.data()) {
                    *o += bv;
                }
            }
            out
        };
        self.tape.push(out, Op::AddBias(self.id, bias.id))
    }

    pub fn square(self) -> Value<'t> {
        let out = self.value().map(|v| v * v);
        self.tape.push(out, Op::Square(self.id))
    }

    pub fn relu(self) -> Value<'t> {
        let out = self.value().map(|v| v.max(0.0));
        self.tape.push(out, Op::Relu(self.id))
    }

    /// Element-wise product with a constant (no gradient to the constant).
    pub fn mul_const(self, k: Matrix) -> Value<'t> {
        let out = self.value().zip_map(&k, |a, b| a * b);
        self.tape.push(out, Op::MulConst(self.id, k))
    }

    /// Row `i` of the result is row `indices[i]` of `self`. The backward pass
    /// scatter-adds, so repeated indices accumulate.
    pub fn gather_rows(self, indices: &[usize]) -> Value<'t> {
        let out = {
            let src = self.value();
            let cols = src.cols();
            let mut data = Vec::with_capacity(indices.len() * cols);
            for &i in indices {
                assert!(i < src.rows(), "gather index {i} out of range for {} rows", src.rows());
                data.extend_from_slice(src.row(i));
            }
            Matrix::from_vec(indices.len(), cols, data)
        };
        self.tape.push(out, Op::GatherRows(self.id, indices.to_vec()))
    }

    pub fn slice_rows(self, start: usize, len: usize) -> Value<'t> {
        let out = {
            let src = self.value();
            assert!(start + len <= src.rows(), "row slice out of range");
            let c = src.cols();
            Matrix::from_vec(len, c, src.data()[start * c..(start + len) * c].to_vec())
        };
        self.tape.push(out, Op::SliceRows(self.id, start))
    }

    pub fn concat_cols(self, rhs: Value<'t>) -> Value<'t> {
        self.same_tape(rhs);
        let out = {
            let a = self.value();
            let b = rhs.value();
            assert_eq!(a.rows(), b.rows(), "concat row mismatch");
            let mut data = Vec::with_capacity(a.len() + b.len());
            for r in 0..a.rows() {
                data.extend_from_slice(a.row(r));
                data.extend_from_slice(b.row(r));
            }
            Matrix::from_vec(a.rows(), a.cols() + b.cols(), data)
        };
        self.tape.push(out, Op::ConcatCols(self.id, rhs.id))
    }

    /// Column-wise max over consecutive blocks of `group` rows. Ties go to
    /// the first row of the block attaining the max.
    pub fn segment_max(self, group: usize) -> Value<'t> {
        let (out, argmax) = {
            let src = self.value();
            assert!(group > 0 && src.rows() % group == 0, "rows not divisible by group");
            let segments = src.rows() / group;
            let cols = src.cols();
            let mut out = Matrix::zeros(segments, cols);
            let mut argmax = vec![0usize; segments * cols];
            for s in 0..segments {
                let base = s * group;
                out.row_mut(s).copy_from_slice(src.row(base));
                let am = &mut argmax[s * cols..(s + 1) * cols];
                am.fill(base);
                for r in base + 1..base + group {
                    for (c, &v) in src.row(r).iter().enumerate() {
                        if v > out.data()[s * cols + c] {
                            out.data_mut()[s * cols + c] = v;
                            am[c] = r;
                        }
                    }
                }
            }
            (out, argmax)
        };
        self.tape.push(out, Op::SegmentMax { src: self.id, argmax })
    }

    /// Per-column batch normalization over all rows with learned `gamma`,
    /// `beta` (`1 x cols`). With `running = None` batch statistics are used
    /// and returned; otherwise the given `(mean, var)` are treated as
    /// constants.
    pub fn batch_norm(
        self,
        gamma: Value<'t>,
        beta: Value<'t>,
        running: Option<(&[f64], &[f64])>,
    ) -> (Value<'t>, Option<BatchStats>) {
        self.same_tape(gamma);
        self.same_tape(beta);
        let (out, xhat, inv_std, stats) = {
            let x = self.value();
            let g = gamma.value();
            let b = beta.value();
            let (rows, cols) = x.shape();
            assert_eq!(g.shape(), (1, cols), "gamma shape");
            assert_eq!(b.shape(), (1, cols), "beta shape");
            let (mean, var, stats) = match running {
                Some((m, v)) => (m.to_vec(), v.to_vec(), None),
                None => {
                    let n = rows as f64;
                    let mean: Vec<f64> = x.sum_rows().data().iter().map(|s| s / n).collect();
                    let mut var = vec![0.0; cols];
                    for r in 0..rows {
                        for (c, v) in x.row(r).iter().enumerate() {
                            let d = v - mean[c];
                            var[c] += d * d;
                        }
                    }
                    for v in &mut var {
                        *v /= n;
                    }
                    (
                        mean.clone(),
                        var.clone(),
                        Some(BatchStats { mean, var }),
                    )
                }
            };
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
            let mut xhat = Matrix::zeros(rows, cols);
            let mut out = Matrix::zeros(rows, cols);
            for r in 0..rows {
                for c in 0..cols {
                    let h = (x.get(r, c) - mean[c]) * inv_std[c];
                    xhat.set(r, c, h);
                    out.set(r, c, g.data()[c] * h + b.data()[c]);
                }
            }
            (out, xhat, inv_std, stats)
        };
        let batch_stats = stats.is_some();
        let v = self.tape.push(
            out,
            Op::BatchNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
                batch_stats,
            },
        );
        (v, stats)
    }

    /// Fused EdgeConv over a point-major edge list: edge `e` joins centre
    /// `e / k` to `neighbors[e]`. Computes the triple-kernel affine map
    /// `[x_i, x_j - x_i, (x_j - x_i)^2] W + b`, batch norm over all edges,
    /// ReLU and the max over each point's `k` edges. Equal in value and
    /// gradient to composing `edge_affine`, `batch_norm`, `relu` and
    /// `segment_max`, without materializing the intermediates.
    #[allow(clippy::too_many_arguments)]
    pub fn edge_conv(
        self,
        k: usize,
        neighbors: &[usize],
        weight: Value<'t>,
        bias: Value<'t>,
        gamma: Value<'t>,
        beta: Value<'t>,
        running: Option<(&[f64], &[f64])>,
    ) -> (Value<'t>, Option<BatchStats>) {
        for v in [weight, bias, gamma, beta] {
            self.same_tape(v);
        }
        let (out, node, stats) = {
            let x = self.value();
            let w = weight.value();
            let (n, c) = x.shape();
            let o = w.cols();
            assert_eq!(w.rows(), 3 * c, "weight shape");
            assert_eq!(neighbors.len(), n * k, "one neighbour list per point");
            assert!(k > 0, "k must be positive");
            let edges = n * k;
            let w_diff = Matrix::from_vec(
                c,
                o,
                w.data()[..c * o].iter().zip(&w.data()[c * o..2 * c * o]).map(|(a, b)| a - b).collect(),
            );
            let w_offset = Matrix::from_vec(c, o, w.data()[c * o..2 * c * o].to_vec());
            let w_square = Matrix::from_vec(c, o, w.data()[2 * c * o..].to_vec());
            let mut a = Matrix::zeros(n, o);
            gemm(&x, false, &w_diff, false, &mut a, 0.0);
            let mut bm = Matrix::zeros(n, o);
            gemm(&x, false, &w_offset, false, &mut bm, 0.0);
            let sq = squared_offsets(&x, k, neighbors);
            let mut z = Matrix::zeros(edges, o);
            gemm(&sq, false, &w_square, false, &mut z, 0.0);
            let bias_v = bias.value();
            for (edge, zr) in z.data_mut().chunks_exact_mut(o).enumerate() {
                let ar = a.row(edge / k);
                let br = bm.row(neighbors[edge]);
                for ch in 0..o {
                    zr[ch] += ar[ch] + br[ch] + bias_v.data()[ch];
                }
            }

            let (mean, var, stats) = match running {
                Some((m, v)) => (m.to_vec(), v.to_vec(), None),
                None => {
                    let inv = 1.0 / edges as f64;
                    let mut mean = vec![0.0; o];
                    for zr in z.data().chunks_exact(o) {
                        for ch in 0..o {
                            mean[ch] += zr[ch];
                        }
                    }
                    mean.iter_mut().for_each(|m| *m *= inv);
                    let mut var = vec![0.0; o];
                    for zr in z.data().chunks_exact(o) {
                        for ch in 0..o {
                            let d = zr[ch] - mean[ch];
                            var[ch] += d * d;
                        }
                    }
                    var.iter_mut().for_each(|v| *v *= inv);
                    (mean.clone(), var.clone(), Some(BatchStats { mean, var }))
                }
            };
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
            let g = gamma.value();
            let bt = beta.value();
            let mut xhat = z;
            let mut out = Matrix::zeros(n, o);
            let mut argmax = vec![0usize; n * o];
            for p in 0..n {
                for j in 0..k {
                    let edge = p * k + j;
                    let hr = &mut xhat.data_mut()[edge * o..(edge + 1) * o];
                    for ch in 0..o {
                        hr[ch] = (hr[ch] - mean[ch]) * inv_std[ch];
                        let y = g.data()[ch] * hr[ch] + bt.data()[ch];
                        let pos = p * o + ch;
                        if j == 0 || y > out.data()[pos] {
                            out.data_mut()[pos] = y;
                            argmax[pos] = edge;
                        }
                    }
                }
            }
            for v in out.data_mut() {
                *v = v.max(0.0);
            }
            let batch_stats = stats.is_some();
            let node = EdgeConvNode {
                x: self.id,
                weight: weight.id,
                bias: bias.id,
                gamma: gamma.id,
                beta: beta.id,
                k,
                neighbors: neighbors.to_vec(),
                xhat,
                inv_std,
                argmax,
                batch_stats,
            };
            (out, node, stats)
        };
        (self.tape.push(out, Op::EdgeConv(Box::new(node))), stats)
    }

    /// Mean over rows of `-log softmax(row)[label]`, a `1 x 1` value.
    pub fn softmax_cross_entropy(self, labels: &[usize]) -> Value<'t> {
        let (loss, probs) = {
            let x = self.value();
            assert_eq!(x.rows(), labels.len(), "one label per row");
            let mut probs = Matrix::zeros(x.rows(), x.cols());
            let mut loss = 0.0;
            for (r, &y) in labels.iter().enumerate() {
                assert!(y < x.cols(), "label {y} out of range");
                let row = x.row(r);
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
                for (p, v) in probs.row_mut(r).iter_mut().zip(row) {
                    *p = (v - m).exp() / z;
                }
                loss += z.ln() - (row[y] - m);
            }
            (loss / labels.len() as f64, probs)
        };
        self.tape.push(
            Matrix::filled(1, 1, loss),
            Op::SoftmaxCe {
                logits: self.id,
                probs,
                labels: labels.to_vec(),
            },
        )
    }

    pub fn sum(self) -> Value<'t> {
        let s = self.value().sum();
        self.tape.push(Matrix::filled(1, 1, s), Op::Sum(self.id))
    }

    pub fn scalar(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.shape(), (1, 1), "not a scalar");
        v.data()[0]
    }
}
