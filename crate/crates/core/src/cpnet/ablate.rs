use std::collections::HashMap;
use std::fmt::Write as _;

use super::config::{parse_ratio, DownsampleMode, KeyValues, RunConfig};
use super::data::{gen_shapes, Split};
use super::model::Model;
use super::train::{evaluate, train};
use super::CpnetError;

/// Cartesian grid over sampler mode, down-sampling ratio and bottleneck
/// width, each cell trained once per seed and evaluated once per sampler
/// seed. Keys in a grid file are those of a run config plus
/// `grid.modes`, `grid.ratios`, `grid.bottlenecks`, `grid.seeds` and
/// `grid.sampler_seeds`.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationGrid {
    pub base: RunConfig,
    pub modes: Vec<DownsampleMode>,
    pub ratios: Vec<usize>,
    pub bottlenecks: Vec<usize>,
    pub seeds: Vec<u64>,
    pub sampler_seeds: Vec<u64>,
}

impl AblationGrid {
    pub fn from_text(text: &str) -> Result<Self, CpnetError> {
        let mut kv = KeyValues::parse(text)?;
        let modes = kv.take("grid.modes");
        let ratios = kv.take("grid.ratios");
        let bottlenecks: Option<Vec<usize>> = kv.take_list("grid.bottlenecks")?;
        let seeds: Option<Vec<u64>> = kv.take_list("grid.seeds")?;
        let sampler_seeds: Option<Vec<u64>> = kv.take_list("grid.sampler_seeds")?;
        let base = RunConfig::take_from(&mut kv)?;
        kv.finish()?;
        let modes = match modes {
            Some(m) => m.split(',').map(str::parse).collect::<Result<_, _>>()?,
            None => vec![base.network.downsample],
        };
        let ratios = match ratios {
            Some(r) => r.split(',').map(parse_ratio).collect::<Result<_, _>>()?,
            None => vec![base.network.ratios.first().copied().unwrap_or(1)],
        };
        Ok(Self {
            modes,
            ratios,
            bottlenecks: bottlenecks.unwrap_or_else(|| vec![base.network.bottleneck]),
            seeds: seeds.unwrap_or_else(|| vec![base.network.seed]),
            sampler_seeds: sampler_seeds.unwrap_or_else(|| vec![0]),
            base,
        })
    }

    /// Number of grid cells, not counting training seeds.
    pub fn cells(&self) -> usize {
        self.modes.len() * self.ratios.len() * self.bottlenecks.len() * self.sampler_seeds.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub mode: DownsampleMode,
    pub ratio: usize,
    pub bottleneck: usize,
    pub seed: u64,
    pub sampler_seed: u64,
    pub overall_acc: f64,
    pub mean_class_acc: f64,
}

pub fn ablate(grid: &AblationGrid) -> Result<Vec<AblationRow>, CpnetError> {
    let train_set = gen_shapes(&grid.base.data, Split::Train)?;
    let test_set = gen_shapes(&grid.base.data, Split::Test)?;
    let mut trained: HashMap<(DownsampleMode, usize, usize, u64), Model> = HashMap::new();
    let mut rows = Vec::with_capacity(grid.cells() * grid.seeds.len());
    for &mode in &grid.modes {
        for &ratio in &grid.ratios {
            for &bottleneck in &grid.bottlenecks {
                for &seed in &grid.seeds {
                    for &sampler_seed in &grid.sampler_seeds {
                        let key = (mode, ratio, bottleneck, seed);
                        if !trained.contains_key(&key) {
                            let mut network = grid.base.network.clone();
                            network.downsample = mode;
                            network.ratios = vec![ratio];
                            network.bottleneck = bottleneck;
                            network.seed = seed;
                            let mut model = Model::build_classifier(network)?;
                            let train_cfg = super::TrainConfig {
                                seed,
                                ..grid.base.train.clone()
                            };
                            train(&mut model, &train_set, &test_set, &train_cfg)?;
                            trained.insert(key, model);
                        }
                        let report = evaluate(&trained[&key], &test_set, sampler_seed)?;
                        rows.push(AblationRow {
                            mode,
                            ratio,
                            bottleneck,
                            seed,
                            sampler_seed,
                            overall_acc: report.overall_acc,
                            mean_class_acc: report.mean_class_acc,
                        });
                    }
                }
            }
        }
    }
    Ok(rows)
}

/// CSV with header `mode,ratio,bottleneck,seed,sampler_seed,overall_acc,mean_class_acc`;
/// the ratio column is written as `1/k`.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("mode,ratio,bottleneck,seed,sampler_seed,overall_acc,mean_class_acc\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},1/{},{},{},{},{},{}",
            r.mode, r.ratio, r.bottleneck, r.seed, r.sampler_seed, r.overall_acc, r.mean_class_acc
        );
    }
    out
}
