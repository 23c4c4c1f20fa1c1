use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{check_point_chain, DownsampleMode, NetworkConfig};
use super::{derive_seed, CpnetError};
use crate::cpl::{self, CriticalSelection, FeatureMatrix, FeatureView};
use crate::nn::{
    knn_build, EdgeConv, FcHead, Matrix, NeighborIndex, ParamStore, Session, SharedMlp, Tape,
    Value,
};
use crate::pcio::Point3;

/// A CP-Net classifier:
///
/// ```text
/// EdgeConv(3 -> w0) -> MLP(w0 -> bottleneck)
///   -> [down-sample(1/r_j) -> EdgeConv(-> w_j)] for each stage j
///   -> global max pool -> FC head -> logits
/// ```
///
/// Critical point selection runs on the MLP output (or the previous stage's
/// output), which is also the gathered input. Each stage rebuilds its k-NN
/// graph on the 3D coordinates of the points it kept.
#[derive(Debug, Clone)]
pub struct Model {
    config: NetworkConfig,
    params: ParamStore,
    conv0: EdgeConv,
    mlp: SharedMlp,
    stages: Vec<EdgeConv>,
    head: FcHead,
}

/// What one forward pass produced besides the logits.
pub struct Forward<'t> {
    pub logits: Value<'t>,
    /// Per stage, per cloud: the selected row indices (local to the cloud).
    pub kept: Vec<Vec<Vec<usize>>>,
    /// Per stage, per cloud, when the stage used CPL or WCPL.
    pub selections: Vec<Vec<CriticalSelection>>,
    pub point_counts: Vec<usize>,
}

impl Model {
    /// The single-stage classifier (exactly one down-sampling ratio).
    pub fn build_classifier(config: NetworkConfig) -> Result<Self, CpnetError> {
        if config.ratios.len() != 1 {
            return Err(CpnetError::ConfigInvalid(format!(
                "classifier has exactly one down-sampling stage, got {}",
                config.ratios.len()
            )));
        }
        Self::build_cascade(config)
    }

    /// Any number of alternating down-sampling / EdgeConv stages.
    pub fn build_cascade(config: NetworkConfig) -> Result<Self, CpnetError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let w0 = config.edgeconv_widths[0];
        let conv0 = EdgeConv::new(&mut params, "conv0", 3, w0, &mut rng);
        let mlp = SharedMlp::new(&mut params, "mlp", &[w0, config.bottleneck], false, &mut rng);

        let mut history: Vec<usize> = if config.concat_skip { vec![w0] } else { vec![] };
        let mut width = config.bottleneck;
        let mut stages = Vec::new();
        for j in 0..config.ratios.len() {
            let inputs = width + history.iter().sum::<usize>();
            let out = config.stage_width(j);
            stages.push(EdgeConv::new(&mut params, &format!("stage{j}.conv"), inputs, out, &mut rng));
            if config.concat_skip {
                history.push(width);
            }
            width = out;
        }
        let head = FcHead::new(&mut params, "head", width, &config.fc_dims, config.classes, config.dropout, &mut rng);
        Ok(Self {
            config,
            params,
            conv0,
            mlp,
            stages,
            head,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Width of the pooled feature vector fed to the classifier head.
    pub fn pooled_width(&self) -> usize {
        self.stages.last().map_or(self.config.bottleneck, |s| s.outputs)
    }

    pub fn stage_input_widths(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.inputs).collect()
    }

    /// Point counts through the network: input, after the first EdgeConv and
    /// MLP, then after each down-sampling and each following EdgeConv.
    pub fn point_counts(&self) -> Vec<usize> {
        let pts = self.config.stage_points();
        let mut out = vec![pts[0], pts[0]];
        for &p in &pts[1..] {
            out.push(p);
            out.push(p);
        }
        out
    }

    /// Forward pass over a batch of clouds with equal point counts.
    /// `sampler_seed` drives the random sampler only.
    pub fn forward<'t>(
        &self,
        s: &mut Session<'t, '_>,
        clouds: &[&[Point3]],
        sampler_seed: u64,
    ) -> Result<Forward<'t>, CpnetError> {
        let tape = s.tape();
        let cfg = &self.config;
        let b = clouds.len();
        let n = clouds.first().map_or(0, |c| c.len());
        if b == 0 || clouds.iter().any(|c| c.len() != n) {
            return Err(CpnetError::ConfigInvalid(
                "batch must be non-empty with equal point counts".into(),
            ));
        }
        check_point_chain(cfg, n)?;

        let mut coords: Vec<Vec<Point3>> = clouds.iter().map(|c| c.to_vec()).collect();
        let x = tape.leaf(Matrix::from_vec(
            b * n,
            3,
            coords.iter().flatten().flatten().copied().collect(),
        ));
        let graph = batch_graph(&coords, cfg.knn)?;
        let f0 = self.conv0.forward(s, x, &graph)?;
        let mut features = self.mlp.forward(s, f0)?;
        let mut history: Vec<Value<'t>> = if cfg.concat_skip { vec![f0] } else { vec![] };

        let mut sampler = ChaCha8Rng::seed_from_u64(sampler_seed);
        let mut points = n;
        let mut kept_all = Vec::new();
        let mut selections = Vec::new();
        let mut counts = vec![n, n];
        for (j, conv) in self.stages.iter().enumerate() {
            let k = match cfg.downsample {
                DownsampleMode::None => points,
                _ => points / cfg.ratios[j],
            };
            let mut kept = Vec::with_capacity(b);
            let mut stage_sel = Vec::new();
            {
                let fv = features.value();
                let width = fv.cols();
                for (c, cloud) in coords.iter().enumerate() {
                    let block = &fv.data()[c * points * width..(c + 1) * points * width];
                    let idx = match cfg.downsample {
                        DownsampleMode::None => (0..points).collect(),
                        DownsampleMode::Cpl | DownsampleMode::Wcpl => {
                            let view = FeatureView::new(points, width, block)?;
                            let mode = cfg.downsample.selection_mode().expect("cpl mode");
                            let sel = cpl::cpl_select(view, k, mode)?;
                            let idx = sel.resized.clone();
                            stage_sel.push(sel);
                            idx
                        }
                        DownsampleMode::Random => cpl::downsample_random(points, k, sampler.gen())?,
                        DownsampleMode::Fps => cpl::downsample_fps(cloud, k)?,
                    };
                    kept.push(idx);
                }
            }
            let global: Vec<usize> = kept
                .iter()
                .enumerate()
                .flat_map(|(c, idx)| idx.iter().map(move |&i| c * points + i))
                .collect();
            let gathered = features.gather_rows(&global);
            let carried: Vec<Value<'t>> = history.iter().map(|h| h.gather_rows(&global)).collect();
            let input = carried.iter().fold(gathered, |acc, h| acc.concat_cols(*h));
            if cfg.concat_skip {
                history = carried;
                history.push(gathered);
            }
            coords = coords
                .iter()
                .zip(&kept)
                .map(|(cloud, idx)| idx.iter().map(|&i| cloud[i]).collect())
                .collect();
            let graph = batch_graph(&coords, cfg.knn)?;
            features = conv.forward(s, input, &graph)?;
            points = k;
            counts.push(k);
            counts.push(k);
            kept_all.push(kept);
            selections.push(stage_sel);
        }

        let pooled = features.segment_max(points);
        let logits = self.head.forward(s, pooled)?;
        Ok(Forward {
            logits,
            kept: kept_all,
            selections,
            point_counts: counts,
        })
    }

    /// Evaluation-mode logits, one row per cloud.
    pub fn logits(&self, clouds: &[&[Point3]], sampler_seed: u64) -> Result<Matrix, CpnetError> {
        let tape = Tape::new();
        let mut s = Session::new(&tape, &self.params, false, 0);
        Ok(self.forward(&mut s, clouds, sampler_seed)?.logits.to_matrix())
    }

    /// Evaluation-mode features that drive the first down-sampling stage
    /// (the shared MLP output), one row per point.
    pub fn selection_features(&self, cloud: &[Point3]) -> Result<FeatureMatrix, CpnetError> {
        check_point_chain(&self.config, cloud.len())?;
        let tape = Tape::new();
        let mut s = Session::new(&tape, &self.params, false, 0);
        let x = tape.leaf(Matrix::from_vec(cloud.len(), 3, cloud.iter().flatten().copied().collect()));
        let graph = batch_graph(&[cloud.to_vec()], self.config.knn)?;
        let f0 = self.conv0.forward(&mut s, x, &graph)?;
        let f = self.mlp.forward(&mut s, f0)?.to_matrix();
        Ok(FeatureMatrix::new(f.rows(), f.cols(), f.into_vec())?)
    }

    /// Replace the parameters with `params`, which must have the same names
    /// and shapes in the same order.
    pub fn load_params(&mut self, params: ParamStore) -> Result<(), CpnetError> {
        if params.len() != self.params.len() {
            return Err(CpnetError::Format(format!(
                "expected {} tensors, found {}",
                self.params.len(),
                params.len()
            )));
        }
        for ((_, want), (_, got)) in self.params.iter().zip(params.iter()) {
            if want.name != got.name || (want.rows, want.cols) != (got.rows, got.cols) {
                return Err(CpnetError::Format(format!(
                    "tensor {} ({}x{}) does not match expected {} ({}x{})",
                    got.name, got.rows, got.cols, want.name, want.rows, want.cols
                )));
            }
        }
        self.params = params;
        Ok(())
    }
}

fn batch_graph(coords: &[Vec<Point3>], k: usize) -> Result<NeighborIndex, CpnetError> {
    let graphs = coords
        .iter()
        .map(|c| knn_build(c, k))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(NeighborIndex::from_graphs(&graphs))
}

/// Seed for the random sampler at a given training step.
pub(crate) fn step_sampler_seed(seed: u64, step: u64) -> u64 {
    derive_seed(seed, &[0x5a, step])
}
