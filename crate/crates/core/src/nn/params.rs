use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named tensor stored in single precision. Everything the checkpoint
/// persists lives here, including batch-norm running statistics
/// (`trainable = false`).
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
    pub trainable: bool,
}

impl Param {
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(self.rows, self.cols, self.data.iter().map(|&v| v as f64).collect())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics on duplicate names or mis-sized data.
    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize, data: Vec<f32>, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        assert_eq!(data.len(), rows * cols, "parameter {name} has wrong size");
        self.params.push(Param {
            name,
            rows,
            cols,
            data,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn add_fan_in_uniform(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> ParamId {
        let bound = 1.0 / (rows as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..bound) as f32)
            .collect();
        self.add(name, rows, cols, data, true)
    }

    pub fn add_filled(&mut self, name: impl Into<String>, rows: usize, cols: usize, value: f32, trainable: bool) -> ParamId {
        self.add(name, rows, cols, vec![value; rows * cols], trainable)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn set_matrix(&mut self, id: ParamId, m: &Matrix) {
        let p = &mut self.params[id.0];
        assert_eq!((p.rows, p.cols), m.shape(), "shape mismatch for {}", p.name);
        for (d, &v) in p.data.iter_mut().zip(m.data()) {
            *d = v as f32;
        }
    }

    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.data.len()).sum()
    }
}
