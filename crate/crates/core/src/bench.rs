//! Median-of-R wall-clock timings for the samplers and the k-NN builder.
//!
//! CSV schema: `op,n,d,k,reps,median_ns`. For `cpl` the feature matrix is
//! `n x d` single-precision uniform noise and `k = n / 4`; for `fps`,
//! `k = n / 4` on uniform points in the unit cube (`d` is reported as 3);
//! for `knn`, `k` is the neighbour count (10) on the same kind of points.

use std::fmt::{self, Write as _};
use std::hint::black_box;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;

use crate::cpl::{self, FeatureView, SelectionMode};
use crate::nn::knn_build;
use crate::pcio::{rng_from_seed, Point3};

pub const KNN_NEIGHBORS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchOp {
    Cpl,
    Fps,
    Knn,
}

impl BenchOp {
    pub fn name(self) -> &'static str {
        match self {
            BenchOp::Cpl => "cpl",
            BenchOp::Fps => "fps",
            BenchOp::Knn => "knn",
        }
    }
}

impl fmt::Display for BenchOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchOp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "cpl" => Ok(BenchOp::Cpl),
            "fps" => Ok(BenchOp::Fps),
            "knn" => Ok(BenchOp::Knn),
            other => Err(format!("unknown bench op `{other}` (expected cpl, fps or knn)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub op: BenchOp,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub reps: usize,
    pub median_ns: u128,
}

/// Time `op` `reps` times on one input and return the median in nanoseconds.
pub fn median_ns(reps: usize, mut op: impl FnMut()) -> u128 {
    assert!(reps > 0, "need at least one repetition");
    let mut times: Vec<u128> = (0..reps)
        .map(|_| {
            let t = Instant::now();
            op();
            t.elapsed().as_nanos()
        })
        .collect();
    times.sort_unstable();
    times[reps / 2]
}

fn random_points(n: usize, seed: u64) -> Vec<Point3> {
    let mut rng = rng_from_seed(seed);
    (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()
}

/// Timing for one configuration. Inputs are generated from `seed` outside
/// the timed region.
pub fn bench_one(op: BenchOp, n: usize, d: usize, reps: usize, seed: u64) -> Result<BenchRow, String> {
    let (d, k, median_ns) = match op {
        BenchOp::Cpl => {
            let k = (n / 4).max(1);
            let mut rng = rng_from_seed(seed);
            let data: Vec<f32> = (0..n * d).map(|_| rng.gen()).collect();
            let view = FeatureView::new(n, d, &data).map_err(|e| e.to_string())?;
            let t = median_ns(reps, || {
                black_box(cpl::cpl_select(black_box(view), k, SelectionMode::Cpl).expect("valid input"));
            });
            (d, k, t)
        }
        BenchOp::Fps => {
            let k = (n / 4).max(1);
            let pts = random_points(n, seed);
            let t = median_ns(reps, || {
                black_box(cpl::downsample_fps(black_box(&pts), k).expect("valid input"));
            });
            (3, k, t)
        }
        BenchOp::Knn => {
            if n <= KNN_NEIGHBORS {
                return Err(format!("knn bench needs n > {KNN_NEIGHBORS}, got {n}"));
            }
            let pts = random_points(n, seed);
            let t = median_ns(reps, || {
                black_box(knn_build(black_box(&pts), KNN_NEIGHBORS).expect("valid input"));
            });
            (3, KNN_NEIGHBORS, t)
        }
    };
    Ok(BenchRow { op, n, d, k, reps, median_ns })
}

/// One row per `(n, d)` pair. `fps` and `knn` always run on 3D points, so
/// for them `d` only repeats the measurement.
pub fn bench_grid(op: BenchOp, ns: &[usize], ds: &[usize], reps: usize, seed: u64) -> Result<Vec<BenchRow>, String> {
    if ns.is_empty() || ds.is_empty() {
        return Err("need at least one n and one d".into());
    }
    let mut rows = Vec::with_capacity(ns.len() * ds.len());
    for &n in ns {
        for &d in ds {
            if n == 0 || d == 0 {
                return Err(format!("n and d must be positive (n = {n}, d = {d})"));
            }
            rows.push(bench_one(op, n, d, reps, seed)?);
        }
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("op,n,d,k,reps,median_ns\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.op, r.n, r.d, r.k, r.reps, r.median_ns);
    }
    out
}
