use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{derive_seed, CpnetError};
use crate::pcio::{normalize_unit_sphere, rng_from_seed, Point3, PointCloud};

/// Analytic surfaces used as a small stand-in for a CAD model collection.
/// Axes of symmetry are aligned with the up (y) axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeClass {
    /// Unit sphere.
    Sphere,
    /// Surface of `[-1, 1]^3`.
    Cube,
    /// Radius 0.5, height 2, with caps.
    Cylinder,
    /// Major radius 0.7, minor radius 0.3.
    Torus,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 4] = [
        ShapeClass::Sphere,
        ShapeClass::Cube,
        ShapeClass::Cylinder,
        ShapeClass::Torus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Sphere => "sphere",
            ShapeClass::Cube => "cube",
            ShapeClass::Cylinder => "cylinder",
            ShapeClass::Torus => "torus",
        }
    }
}

impl fmt::Display for ShapeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeClass {
    type Err = CpnetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ShapeClass::ALL
            .into_iter()
            .find(|c| c.name() == s.trim())
            .ok_or_else(|| CpnetError::ConfigInvalid(format!("unknown shape `{}`", s.trim())))
    }
}

/// Uniform surface sample without noise or normalization.
pub fn sample_shape(class: ShapeClass, n: usize, rng: &mut ChaCha8Rng) -> Vec<Point3> {
    (0..n).map(|_| sample_one(class, rng)).collect()
}

fn sample_one(class: ShapeClass, rng: &mut ChaCha8Rng) -> Point3 {
    match class {
        ShapeClass::Sphere => loop {
            let v: [f64; 3] = [
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
            ];
            let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if len > 1e-12 {
                break v.map(|x| x / len);
            }
        },
        ShapeClass::Cube => {
            let face = rng.gen_range(0..6);
            let u = rng.gen_range(-1.0..1.0);
            let v = rng.gen_range(-1.0..1.0);
            let side = if face % 2 == 0 { 1.0 } else { -1.0 };
            match face / 2 {
                0 => [side, u, v],
                1 => [u, side, v],
                _ => [u, v, side],
            }
        }
        ShapeClass::Cylinder => {
            let (r, h) = (0.5, 2.0);
            let side_area = 2.0 * PI * r * h;
            let cap_area = PI * r * r;
            let pick = rng.gen::<f64>() * (side_area + 2.0 * cap_area);
            let theta = rng.gen_range(0.0..2.0 * PI);
            if pick < side_area {
                [r * theta.cos(), rng.gen_range(-1.0..1.0), r * theta.sin()]
            } else {
                let rho = r * rng.gen::<f64>().sqrt();
                let y = if pick < side_area + cap_area { 1.0 } else { -1.0 };
                [rho * theta.cos(), y, rho * theta.sin()]
            }
        }
        ShapeClass::Torus => {
            let (big, small) = (0.7, 0.3);
            // area element is proportional to big + small * cos(v)
            loop {
                let u = rng.gen_range(0.0..2.0 * PI);
                let v = rng.gen_range(0.0..2.0 * PI);
                let w = (big + small * f64::cos(v)) / (big + small);
                if rng.gen::<f64>() < w {
                    let ring = big + small * v.cos();
                    break [ring * u.cos(), small * v.sin(), ring * u.sin()];
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Balanced synthetic classification set. Train and test clouds draw from
/// different derived seeds, so the splits never share a cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeDataset {
    pub classes: Vec<ShapeClass>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub points: usize,
    /// Standard deviation of the per-axis Gaussian jitter.
    pub noise: f64,
    pub seed: u64,
}

impl Default for ShapeDataset {
    fn default() -> Self {
        Self {
            classes: ShapeClass::ALL.to_vec(),
            train_per_class: 128,
            test_per_class: 32,
            points: 256,
            noise: 0.01,
            seed: 0,
        }
    }
}

impl ShapeDataset {
    pub fn split_size(&self, split: Split) -> usize {
        self.per_class(split) * self.classes.len()
    }

    fn per_class(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_per_class,
            Split::Test => self.test_per_class,
        }
    }
}

/// Labelled clouds for one split, interleaved by class. Each cloud is
/// sampled, jittered and normalized to the unit sphere.
pub fn gen_shapes(spec: &ShapeDataset, split: Split) -> Result<Vec<PointCloud>, CpnetError> {
    let tag = match split {
        Split::Train => 1,
        Split::Test => 2,
    };
    let mut out = Vec::with_capacity(spec.split_size(split));
    for i in 0..spec.per_class(split) {
        for (label, &class) in spec.classes.iter().enumerate() {
            let mut rng = rng_from_seed(derive_seed(spec.seed, &[tag, label as u64, i as u64]));
            let mut pts = sample_shape(class, spec.points, &mut rng);
            if spec.noise > 0.0 {
                for p in &mut pts {
                    for v in p.iter_mut() {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *v += spec.noise * z;
                    }
                }
            }
            let cloud = normalize_unit_sphere(&PointCloud::new(pts)?)?;
            out.push(cloud.with_label(label));
        }
    }
    Ok(out)
}
