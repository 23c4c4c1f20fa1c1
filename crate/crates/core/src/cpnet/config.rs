//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Lists are
//! comma-separated. Unknown keys are an error.
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `input_points` | points per cloud | 256 |
//! | `knn` | neighbours per point in every EdgeConv | 10 |
//! | `edgeconv_widths` | first EdgeConv width, then optional per-stage widths | 64 |
//! | `bottleneck` | width of the shared MLP output and later stages | 256 |
//! | `downsample` | `cpl`, `wcpl`, `random`, `fps` or `none` | `cpl` |
//! | `ratios` | per-stage down-sampling ratios, `1/4` or `4` or `0.25` | `1/4` |
//! | `concat_skip` | gather earlier features alongside the selection features | false |
//! | `fc_dims` | hidden widths of the classifier head | `128,64` |
//! | `classes` | class count | 4 |
//! | `dropout` | dropout probability in the hidden head layers | 0.5 |
//! | `seed` | weight initialisation seed | 0 |
//!
//! Training keys: `epochs` (30), `batch_size` (16), `learning_rate` (0.001),
//! `decay_steps` (half of all steps), `bn_momentum` (0.9), `augment` (true),
//! `train_seed` (0). Dataset keys: `shapes` (`sphere,cube,cylinder,torus`),
//! `train_per_class` (128), `test_per_class` (32), `noise` (0.01),
//! `dataset_seed` (0).

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::data::{ShapeClass, ShapeDataset};
use super::CpnetError;
use crate::cpl::SelectionMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DownsampleMode {
    Cpl,
    Wcpl,
    Random,
    Fps,
    None,
}

impl DownsampleMode {
    pub fn selection_mode(self) -> Option<SelectionMode> {
        match self {
            DownsampleMode::Cpl => Some(SelectionMode::Cpl),
            DownsampleMode::Wcpl => Some(SelectionMode::Wcpl),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DownsampleMode::Cpl => "cpl",
            DownsampleMode::Wcpl => "wcpl",
            DownsampleMode::Random => "random",
            DownsampleMode::Fps => "fps",
            DownsampleMode::None => "none",
        }
    }
}

impl fmt::Display for DownsampleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DownsampleMode {
    type Err = CpnetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "cpl" => DownsampleMode::Cpl,
            "wcpl" => DownsampleMode::Wcpl,
            "random" => DownsampleMode::Random,
            "fps" => DownsampleMode::Fps,
            "none" => DownsampleMode::None,
            other => return Err(invalid(format!("unknown downsample mode `{other}`"))),
        })
    }
}

fn invalid(msg: impl Into<String>) -> CpnetError {
    CpnetError::ConfigInvalid(msg.into())
}

/// Parse a down-sampling ratio given as `1/4`, `4` or `0.25` into its
/// integer reduction factor.
pub fn parse_ratio(s: &str) -> Result<usize, CpnetError> {
    let s = s.trim();
    let bad = || invalid(format!("ratio `{s}` is not 1/k for a positive integer k"));
    if let Some(den) = s.strip_prefix("1/") {
        return den.trim().parse::<usize>().ok().filter(|&d| d > 0).ok_or_else(bad);
    }
    if let Ok(k) = s.parse::<usize>() {
        return if k > 0 { Ok(k) } else { Err(bad()) };
    }
    let r: f64 = s.parse().map_err(|_| bad())?;
    if !(r > 0.0 && r <= 1.0) {
        return Err(bad());
    }
    let k = (1.0 / r).round();
    if ((1.0 / k) - r).abs() > 1e-9 {
        return Err(bad());
    }
    Ok(k as usize)
}

/// Shape of a CP-Net: EdgeConv, shared MLP up to the bottleneck width, then
/// one down-sampling + EdgeConv stage per ratio, global max pooling and a
/// fully connected head.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub input_points: usize,
    pub knn: usize,
    pub edgeconv_widths: Vec<usize>,
    pub bottleneck: usize,
    pub downsample: DownsampleMode,
    /// Reduction factor per stage: a ratio of 1/4 is stored as 4.
    pub ratios: Vec<usize>,
    pub concat_skip: bool,
    pub fc_dims: Vec<usize>,
    pub classes: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_points: 256,
            knn: 10,
            edgeconv_widths: vec![64],
            bottleneck: 256,
            downsample: DownsampleMode::Cpl,
            ratios: vec![4],
            concat_skip: false,
            fc_dims: vec![128, 64],
            classes: 4,
            dropout: 0.5,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    /// Width of the EdgeConv in stage `j` (0-based).
    pub fn stage_width(&self, j: usize) -> usize {
        self.edgeconv_widths.get(j + 1).copied().unwrap_or(self.bottleneck)
    }

    /// Point counts after each down-sampling stage, starting from the input.
    pub fn stage_points(&self) -> Vec<usize> {
        let mut counts = vec![self.input_points];
        let mut n = self.input_points;
        for &r in &self.ratios {
            if self.downsample != DownsampleMode::None {
                n /= r.max(1);
            }
            counts.push(n);
        }
        counts
    }

    pub fn validate(&self) -> Result<(), CpnetError> {
        if self.classes < 2 {
            return Err(invalid("class count must be at least 2"));
        }
        if self.edgeconv_widths.is_empty() || self.edgeconv_widths.contains(&0) {
            return Err(invalid("edgeconv_widths must be non-empty and positive"));
        }
        if self.edgeconv_widths.len() > self.ratios.len() + 1 {
            return Err(invalid("more edgeconv widths than stages"));
        }
        if self.bottleneck == 0 || self.fc_dims.contains(&0) {
            return Err(invalid("layer widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid("dropout must be in [0, 1)"));
        }
        if self.ratios.contains(&0) {
            return Err(invalid("ratios must be positive"));
        }
        check_point_chain(self, self.input_points)
    }

    pub fn to_text(&self) -> String {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        let _ = writeln!(out, "input_points = {}", self.input_points);
        let _ = writeln!(out, "knn = {}", self.knn);
        let _ = writeln!(out, "edgeconv_widths = {}", list(&self.edgeconv_widths));
        let _ = writeln!(out, "bottleneck = {}", self.bottleneck);
        let _ = writeln!(out, "downsample = {}", self.downsample);
        let ratios: Vec<String> = self.ratios.iter().map(|r| format!("1/{r}")).collect();
        let _ = writeln!(out, "ratios = {}", ratios.join(","));
        let _ = writeln!(out, "concat_skip = {}", self.concat_skip);
        let _ = writeln!(out, "fc_dims = {}", list(&self.fc_dims));
        let _ = writeln!(out, "classes = {}", self.classes);
        let _ = writeln!(out, "dropout = {}", self.dropout);
        let _ = writeln!(out, "seed = {}", self.seed);
        out
    }

    pub fn from_text(text: &str) -> Result<Self, CpnetError> {
        let mut kv = KeyValues::parse(text)?;
        let cfg = Self::take_from(&mut kv)?;
        kv.finish()?;
        Ok(cfg)
    }

    pub(crate) fn take_from(kv: &mut KeyValues) -> Result<Self, CpnetError> {
        let d = Self::default();
        let cfg = Self {
            input_points: kv.take_parsed("input_points")?.unwrap_or(d.input_points),
            knn: kv.take_parsed("knn")?.unwrap_or(d.knn),
            edgeconv_widths: kv.take_list("edgeconv_widths")?.unwrap_or(d.edgeconv_widths),
            bottleneck: kv.take_parsed("bottleneck")?.unwrap_or(d.bottleneck),
            downsample: kv.take_parsed("downsample")?.unwrap_or(d.downsample),
            ratios: match kv.take("ratios") {
                Some(v) if v.trim().is_empty() => Vec::new(),
                Some(v) => v.split(',').map(parse_ratio).collect::<Result<_, _>>()?,
                None => d.ratios,
            },
            concat_skip: kv.take_parsed("concat_skip")?.unwrap_or(d.concat_skip),
            fc_dims: kv.take_list("fc_dims")?.unwrap_or(d.fc_dims),
            classes: kv.take_parsed("classes")?.unwrap_or(d.classes),
            dropout: kv.take_parsed("dropout")?.unwrap_or(d.dropout),
            seed: kv.take_parsed("seed")?.unwrap_or(d.seed),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Point counts must divide evenly at every stage and stay above the
/// neighbourhood size.
pub(crate) fn check_point_chain(cfg: &NetworkConfig, n: usize) -> Result<(), CpnetError> {
    if cfg.knn == 0 || cfg.knn >= n {
        return Err(invalid(format!("knn {} must be in [1, {n})", cfg.knn)));
    }
    let mut points = n;
    for &r in &cfg.ratios {
        if cfg.downsample == DownsampleMode::None {
            continue;
        }
        if points % r != 0 {
            return Err(invalid(format!("{points} points not divisible by ratio 1/{r}")));
        }
        points /= r;
        if cfg.knn >= points {
            return Err(invalid(format!(
                "stage with {points} points cannot use knn = {}",
                cfg.knn
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Steps per halving of the learning rate; `None` means half of all steps.
    pub decay_steps: Option<u64>,
    pub bn_momentum: f64,
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            learning_rate: 1e-3,
            decay_steps: None,
            bn_momentum: 0.9,
            augment: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub(crate) fn take_from(kv: &mut KeyValues) -> Result<Self, CpnetError> {
        let d = Self::default();
        let cfg = Self {
            epochs: kv.take_parsed("epochs")?.unwrap_or(d.epochs),
            batch_size: kv.take_parsed("batch_size")?.unwrap_or(d.batch_size),
            learning_rate: kv.take_parsed("learning_rate")?.unwrap_or(d.learning_rate),
            decay_steps: kv.take_parsed("decay_steps")?.or(d.decay_steps),
            bn_momentum: kv.take_parsed("bn_momentum")?.unwrap_or(d.bn_momentum),
            augment: kv.take_parsed("augment")?.unwrap_or(d.augment),
            seed: kv.take_parsed("train_seed")?.unwrap_or(d.seed),
        };
        if cfg.batch_size == 0 {
            return Err(invalid("batch_size must be positive"));
        }
        if !(cfg.learning_rate > 0.0) || !(0.0..1.0).contains(&cfg.bn_momentum) {
            return Err(invalid("learning_rate must be positive and bn_momentum in [0, 1)"));
        }
        Ok(cfg)
    }
}

impl ShapeDataset {
    pub(crate) fn take_from(kv: &mut KeyValues, points: usize) -> Result<Self, CpnetError> {
        let d = ShapeDataset::default();
        let classes = match kv.take("shapes") {
            Some(v) => v.split(',').map(str::parse).collect::<Result<Vec<ShapeClass>, _>>()?,
            None => d.classes,
        };
        Ok(Self {
            classes,
            train_per_class: kv.take_parsed("train_per_class")?.unwrap_or(d.train_per_class),
            test_per_class: kv.take_parsed("test_per_class")?.unwrap_or(d.test_per_class),
            points,
            noise: kv.take_parsed("noise")?.unwrap_or(d.noise),
            seed: kv.take_parsed("dataset_seed")?.unwrap_or(d.seed),
        })
    }
}

/// Everything a training run needs, as read from one config file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub data: ShapeDataset,
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self, CpnetError> {
        let mut kv = KeyValues::parse(text)?;
        let run = Self::take_from(&mut kv)?;
        kv.finish()?;
        Ok(run)
    }

    pub(crate) fn take_from(kv: &mut KeyValues) -> Result<Self, CpnetError> {
        let network = NetworkConfig::take_from(kv)?;
        let train = TrainConfig::take_from(kv)?;
        let data = ShapeDataset::take_from(kv, network.input_points)?;
        if data.classes.len() != network.classes {
            return Err(invalid(format!(
                "{} shapes listed but classes = {}",
                data.classes.len(),
                network.classes
            )));
        }
        Ok(Self { network, train, data })
    }
}

pub(crate) struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub(crate) fn parse(text: &str) -> Result<Self, CpnetError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| invalid(format!("line {}: expected `key = value`", i + 1)))?;
            let key = k.trim().to_string();
            if entries.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
                return Err(invalid(format!("line {}: duplicate key `{key}`", i + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub(crate) fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(_, v)| v)
    }

    pub(crate) fn take_parsed<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, CpnetError> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| invalid(format!("line {line}: bad value `{v}` for `{key}`"))),
        }
    }

    pub(crate) fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>, CpnetError> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((_, v)) if v.is_empty() => Ok(Some(Vec::new())),
            Some((line, v)) => v
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<Result<Vec<T>, _>>()
                .map(Some)
                .map_err(|_| invalid(format!("line {line}: bad list `{v}` for `{key}`"))),
        }
    }

    pub(crate) fn finish(self) -> Result<(), CpnetError> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((k, (line, _))) => Err(invalid(format!("line {line}: unknown key `{k}`"))),
        }
    }
}
