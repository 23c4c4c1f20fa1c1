use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::knn::NeighborIndex;
use super::matrix::Matrix;
use super::params::{ParamId, ParamStore};
use super::tape::{BatchStats, Gradients, Tape, Value};
use super::NnError;

/// Binds a [`ParamStore`] to a [`Tape`] for one forward pass and collects
/// what the pass produces besides its output: batch-norm statistics in
/// training mode and the leaves created for parameters.
pub struct Session<'t, 'p> {
    tape: &'t Tape,
    params: &'p ParamStore,
    bound: Vec<Option<Value<'t>>>,
    training: bool,
    rng: ChaCha8Rng,
    bn_stats: Vec<(BatchNorm, BatchStats)>,
}

impl<'t, 'p> Session<'t, 'p> {
    /// `seed` drives dropout masks.
    pub fn new(tape: &'t Tape, params: &'p ParamStore, training: bool, seed: u64) -> Self {
        Self {
            tape,
            params,
            bound: vec![None; params.len()],
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
            bn_stats: Vec::new(),
        }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn param(&mut self, id: ParamId) -> Value<'t> {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.leaf(self.params.get(id).to_matrix());
        self.bound[id.0] = Some(v);
        v
    }

    /// Gradient of every trainable parameter touched by the pass.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(ParamId, Matrix)> {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let v = (*v)?;
                self.params
                    .get(ParamId(i))
                    .trainable
                    .then(|| (ParamId(i), grads.get_or_zeros(v)))
            })
            .collect()
    }

    pub fn take_bn_stats(&mut self) -> Vec<(BatchNorm, BatchStats)> {
        std::mem::take(&mut self.bn_stats)
    }
}

/// Fold batch statistics into running statistics:
/// `running = momentum * running + (1 - momentum) * batch`.
pub fn update_running_stats(store: &mut ParamStore, stats: &[(BatchNorm, BatchStats)], momentum: f64) {
    for (bn, s) in stats {
        for (id, batch) in [(bn.mean, &s.mean), (bn.var, &s.var)] {
            let p = store.get_mut(id);
            for (r, &b) in p.data.iter_mut().zip(batch) {
                *r = (momentum * *r as f64 + (1.0 - momentum) * b) as f32;
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: store.add_fan_in_uniform(format!("{name}.weight"), inputs, outputs, rng),
            bias: store.add_filled(format!("{name}.bias"), 1, outputs, 0.0, true),
        }
    }

    pub fn forward<'t>(&self, s: &mut Session<'t, '_>, x: Value<'t>) -> Result<Value<'t>, NnError> {
        let w = s.param(self.weight);
        expect_cols(x, w.rows())?;
        Ok(x.matmul(w).add_bias(s.param(self.bias)))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: ParamId,
    pub var: ParamId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gamma: store.add_filled(format!("{name}.gamma"), 1, width, 1.0, true),
            beta: store.add_filled(format!("{name}.beta"), 1, width, 0.0, true),
            mean: store.add_filled(format!("{name}.running_mean"), 1, width, 0.0, false),
            var: store.add_filled(format!("{name}.running_var"), 1, width, 1.0, false),
        }
    }

    /// Training mode normalizes with batch statistics over all rows and
    /// records them on the session; evaluation mode uses running statistics.
    pub fn forward<'t>(&self, s: &mut Session<'t, '_>, x: Value<'t>) -> Value<'t> {
        let gamma = s.param(self.gamma);
        let beta = s.param(self.beta);
        if s.training {
            let (y, stats) = x.batch_norm(gamma, beta, None);
            s.bn_stats.push((*self, stats.expect("batch statistics")));
            y
        } else {
            let (mean, var) = self.running(s.params);
            x.batch_norm(gamma, beta, Some((&mean, &var))).0
        }
    }
}

impl BatchNorm {
    fn running(&self, store: &ParamStore) -> (Vec<f64>, Vec<f64>) {
        let to_f64 = |id| -> Vec<f64> { store.get(id).data.iter().map(|&v| v as f64).collect() };
        (to_f64(self.mean), to_f64(self.var))
    }
}

fn expect_cols(x: Value<'_>, cols: usize) -> Result<(), NnError> {
    if x.cols() != cols {
        return Err(NnError::ShapeMismatch {
            expected: cols,
            got: x.cols(),
        });
    }
    Ok(())
}

/// Per-edge affine map of the triple-kernel edge feature
/// `[x_i, x_j - x_i, (x_j - x_i)^2]` for every `(i, j)` in `graph`, one row
/// per edge in point-major order.
///
/// `weight` is `3c x c'` with row blocks for the three kernels. The center
/// and offset blocks are folded into per-point products,
/// `x_i W1 + (x_j - x_i) W2 = x_i (W1 - W2) + x_j W2`, so only the squared
/// offset needs a per-edge product.
pub fn edge_affine<'t>(
    x: Value<'t>,
    graph: &NeighborIndex,
    weight: Value<'t>,
    bias: Value<'t>,
) -> Result<Value<'t>, NnError> {
    let c = x.cols();
    if weight.rows() != 3 * c {
        return Err(NnError::ShapeMismatch {
            expected: weight.rows(),
            got: 3 * c,
        });
    }
    if graph.points() != x.rows() {
        return Err(NnError::ShapeMismatch {
            expected: graph.points(),
            got: x.rows(),
        });
    }
    let w_center = weight.slice_rows(0, c);
    let w_offset = weight.slice_rows(c, c);
    let w_square = weight.slice_rows(2 * c, c);
    let per_center = x.matmul(w_center.sub(w_offset)).gather_rows(graph.centers());
    let per_neighbor = x.matmul(w_offset).gather_rows(graph.neighbors());
    let offset = x.gather_rows(graph.neighbors()).sub(x.gather_rows(graph.centers()));
    let squared = offset.square().matmul(w_square);
    Ok(per_center.add(per_neighbor).add(squared).add_bias(bias))
}

/// Max over each point's `k` consecutive edge rows.
pub fn max_aggregate<'t>(edges: Value<'t>, k: usize) -> Value<'t> {
    edges.segment_max(k)
}

/// EdgeConv with the triple kernel: affine, batch norm, ReLU, then max over
/// neighbours.
#[derive(Debug, Clone, Copy)]
pub struct EdgeConv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub bn: BatchNorm,
    pub inputs: usize,
    pub outputs: usize,
}

impl EdgeConv {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: store.add_fan_in_uniform(format!("{name}.weight"), 3 * inputs, outputs, rng),
            bias: store.add_filled(format!("{name}.bias"), 1, outputs, 0.0, true),
            bn: BatchNorm::new(store, &format!("{name}.bn"), outputs),
            inputs,
            outputs,
        }
    }

    pub fn forward<'t>(&self, s: &mut Session<'t, '_>, x: Value<'t>, graph: &NeighborIndex) -> Result<Value<'t>, NnError> {
        expect_cols(x, self.inputs)?;
        if graph.points() != x.rows() {
            return Err(NnError::ShapeMismatch {
                expected: graph.points(),
                got: x.rows(),
            });
        }
        let w = s.param(self.weight);
        let b = s.param(self.bias);
        let gamma = s.param(self.bn.gamma);
        let beta = s.param(self.bn.beta);
        if s.training {
            let (y, stats) = x.edge_conv(graph.k(), graph.neighbors(), w, b, gamma, beta, None);
            s.bn_stats.push((self.bn, stats.expect("batch statistics")));
            Ok(y)
        } else {
            let (mean, var) = self.bn.running(s.params);
            Ok(x.edge_conv(graph.k(), graph.neighbors(), w, b, gamma, beta, Some((&mean, &var))).0)
        }
    }

    /// The same layer built from unfused ops: [`edge_affine`], batch norm,
    /// ReLU and [`max_aggregate`]. Slower; kept as a reference.
    pub fn forward_unfused<'t>(
        &self,
        s: &mut Session<'t, '_>,
        x: Value<'t>,
        graph: &NeighborIndex,
    ) -> Result<Value<'t>, NnError> {
        expect_cols(x, self.inputs)?;
        let w = s.param(self.weight);
        let b = s.param(self.bias);
        let e = edge_affine(x, graph, w, b)?;
        let e = self.bn.forward(s, e).relu();
        Ok(max_aggregate(e, graph.k()))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MlpLayer {
    pub linear: Linear,
    pub bn: BatchNorm,
    pub relu: bool,
}

/// Point-wise multi-layer perceptron: each layer is affine, batch norm and
/// (optionally) ReLU, applied to every row independently of the others
/// except through batch statistics.
#[derive(Debug, Clone)]
pub struct SharedMlp {
    pub layers: Vec<MlpLayer>,
}

impl SharedMlp {
    /// `dims[0]` is the input width. When `final_relu` is false the last
    /// layer stops after batch norm.
    pub fn new(store: &mut ParamStore, name: &str, dims: &[usize], final_relu: bool, rng: &mut ChaCha8Rng) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| MlpLayer {
                linear: Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng),
                bn: BatchNorm::new(store, &format!("{name}.{i}.bn"), w[1]),
                relu: final_relu || i + 2 < dims.len(),
            })
            .collect();
        Self { layers }
    }

    pub fn forward<'t>(&self, s: &mut Session<'t, '_>, mut x: Value<'t>) -> Result<Value<'t>, NnError> {
        for layer in &self.layers {
            x = layer.linear.forward(s, x)?;
            x = layer.bn.forward(s, x);
            if layer.relu {
                x = x.relu();
            }
        }
        Ok(x)
    }
}

/// Inverted dropout: in training, zero each entry with probability `p` and
/// scale survivors by `1 / (1 - p)`. Identity otherwise.
pub fn dropout<'t>(s: &mut Session<'t, '_>, x: Value<'t>, p: f64) -> Value<'t> {
    assert!((0.0..1.0).contains(&p), "dropout probability must be in [0, 1)");
    if !s.training || p == 0.0 {
        return x;
    }
    let (r, c) = x.shape();
    let keep = 1.0 / (1.0 - p);
    let mask = (0..r * c)
        .map(|_| if s.rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect();
    x.mul_const(Matrix::from_vec(r, c, mask))
}

/// Classifier head: hidden layers of affine, batch norm, ReLU and dropout,
/// then a final affine layer producing logits.
#[derive(Debug, Clone)]
pub struct FcHead {
    pub hidden: Vec<MlpLayer>,
    pub output: Linear,
    pub dropout: f64,
}

impl FcHead {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, hidden: &[usize], classes: usize, dropout: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut width = inputs;
        let layers = hidden
            .iter()
            .enumerate()
            .map(|(i, &h)| {
                let layer = MlpLayer {
                    linear: Linear::new(store, &format!("{name}.{i}"), width, h, rng),
                    bn: BatchNorm::new(store, &format!("{name}.{i}.bn"), h),
                    relu: true,
                };
                width = h;
                layer
            })
            .collect();
        Self {
            hidden: layers,
            output: Linear::new(store, &format!("{name}.out"), width, classes, rng),
            dropout,
        }
    }

    pub fn forward<'t>(&self, s: &mut Session<'t, '_>, mut x: Value<'t>) -> Result<Value<'t>, NnError> {
        for layer in &self.hidden {
            x = layer.linear.forward(s, x)?;
            x = layer.bn.forward(s, x).relu();
            x = dropout(s, x, self.dropout);
        }
        self.output.forward(s, x)
    }
}
