//! Point cloud input/output: OFF meshes, area-weighted surface sampling,
//! unit-sphere normalization, training augmentation, XYZ text clouds and
//! depth-colored ASCII PLY export.
//!
//! All randomness comes from [`rng_from_seed`], a ChaCha8 stream seeded with
//! a `u64`. ChaCha8 output is specified bit-for-bit, so sampled clouds are
//! identical on every platform for a given seed.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub type Point3 = [f64; 3];

/// The portable generator behind every seeded operation in this crate.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Error)]
pub enum PcioError {
    #[error("malformed OFF header at byte {offset}")]
    MalformedHeader { offset: usize },
    #[error("invalid number at byte {offset}")]
    InvalidNumber { offset: usize },
    #[error("face at byte {offset} has fewer than 3 vertices")]
    DegenerateFace { offset: usize },
    #[error("vertex index {index} at byte {offset} out of range for {vertices} vertices")]
    IndexOutOfRange {
        offset: usize,
        index: usize,
        vertices: usize,
    },
    #[error("file truncated at byte {offset}")]
    TruncatedFile { offset: usize },
    #[error("mesh has zero total surface area")]
    ZeroAreaMesh,
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("all points coincide; cannot normalize")]
    DegenerateCloud,
    #[error("malformed line {line}")]
    MalformedLine { line: usize },
    #[error("invalid augmentation config: {0}")]
    InvalidAugment(String),
    #[error("color count {colors} does not match point count {points}")]
    ColorMismatch { points: usize, colors: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i]);
        let u = sub(b, a);
        let v = sub(c, a);
        0.5 * norm(cross(u, v))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub colors: Option<Vec<Point3>>,
    pub label: Option<usize>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self, PcioError> {
        if points.is_empty() {
            return Err(PcioError::EmptyCloud);
        }
        Ok(Self {
            points,
            colors: None,
            label: None,
        })
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_colors(mut self, colors: Vec<Point3>) -> Result<Self, PcioError> {
        if colors.len() != self.points.len() {
            return Err(PcioError::ColorMismatch {
                points: self.points.len(),
                colors: colors.len(),
            });
        }
        self.colors = Some(colors);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Keep the listed rows (repeats allowed), carrying colors along.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            colors: self
                .colors
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
            label: self.label,
        }
    }
}

fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: Point3, b: Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: Point3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

struct Tokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    /// Next whitespace-separated token and its byte offset; `#` starts a
    /// comment running to end of line.
    fn next(&mut self) -> Option<(usize, &'a [u8])> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        if self.pos >= self.bytes.len() {
            return None;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        Some((start, &self.bytes[start..self.pos]))
    }

    fn expect(&mut self) -> Result<(usize, &'a [u8]), PcioError> {
        self.next()
            .ok_or(PcioError::TruncatedFile { offset: self.pos })
    }

    fn count(&mut self) -> Result<(usize, usize), PcioError> {
        let (off, tok) = self.expect()?;
        parse_count(tok, off).map(|c| (off, c))
    }

    fn real(&mut self) -> Result<f64, PcioError> {
        let (off, tok) = self.expect()?;
        parse_real(tok, off)
    }
}

fn parse_count(tok: &[u8], offset: usize) -> Result<usize, PcioError> {
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or(PcioError::InvalidNumber { offset })
}

fn parse_real(tok: &[u8], offset: usize) -> Result<f64, PcioError> {
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse::<f64>().ok())
        .filter(|v| v.is_finite())
        .ok_or(PcioError::InvalidNumber { offset })
}

/// Parse an ASCII OFF mesh. Accepts the counts fused onto the header line
/// (`OFF 3 1 0` or `OFF3 1 0`). Polygons are fan-triangulated from their
/// first vertex.
pub fn parse_off(bytes: &[u8]) -> Result<TriangleMesh, PcioError> {
    let mut toks = Tokens::new(bytes);
    let (off, head) = toks.next().ok_or(PcioError::MalformedHeader { offset: 0 })?;
    if !head.starts_with(b"OFF") {
        return Err(PcioError::MalformedHeader { offset: off });
    }
    let nv = if head.len() > 3 {
        parse_count(&head[3..], off + 3).map_err(|_| PcioError::MalformedHeader { offset: off })?
    } else {
        toks.count()
            .map_err(|e| match e {
                PcioError::InvalidNumber { offset } => PcioError::MalformedHeader { offset },
                other => other,
            })?
            .1
    };
    let (_, nf) = toks.count()?;
    let _edges = toks.count()?;

    // counts come from untrusted input; cap the up-front reservation
    let mut vertices = Vec::with_capacity(nv.min(1 << 16));
    for _ in 0..nv {
        vertices.push([toks.real()?, toks.real()?, toks.real()?]);
    }
    let mut faces = Vec::with_capacity(nf.min(1 << 16));
    let mut poly = Vec::new();
    for _ in 0..nf {
        let (face_off, arity) = toks.count()?;
        if arity < 3 {
            return Err(PcioError::DegenerateFace { offset: face_off });
        }
        poly.clear();
        for _ in 0..arity {
            let (off, index) = toks.count()?;
            if index >= nv {
                return Err(PcioError::IndexOutOfRange {
                    offset: off,
                    index,
                    vertices: nv,
                });
            }
            poly.push(index);
        }
        for w in 1..arity - 1 {
            faces.push([poly[0], poly[w], poly[w + 1]]);
        }
    }
    Ok(TriangleMesh { vertices, faces })
}

pub fn read_off(path: impl AsRef<Path>) -> Result<TriangleMesh, PcioError> {
    parse_off(&fs::read(path)?)
}

/// Draw `n` points uniformly over the mesh surface: faces are picked with
/// probability proportional to area, then a point is placed uniformly inside
/// the face with the square-root barycentric construction.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud, PcioError> {
    if n == 0 {
        return Err(PcioError::EmptyCloud);
    }
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(PcioError::ZeroAreaMesh);
    }
    let mut rng = rng_from_seed(seed);
    let points = (0..n)
        .map(|_| {
            let target = rng.gen::<f64>() * total;
            let f = cumulative
                .partition_point(|&c| c <= target)
                .min(cumulative.len() - 1);
            let [a, b, c] = mesh.faces[f].map(|i| mesh.vertices[i]);
            let s = rng.gen::<f64>().sqrt();
            let t = rng.gen::<f64>();
            let (wa, wb, wc) = (1.0 - s, s * (1.0 - t), s * t);
            [0, 1, 2].map(|k| wa * a[k] + wb * b[k] + wc * c[k])
        })
        .collect();
    PointCloud::new(points)
}

/// Center on the centroid and scale so the farthest point has norm 1.
pub fn normalize_unit_sphere(cloud: &PointCloud) -> Result<PointCloud, PcioError> {
    if cloud.is_empty() {
        return Err(PcioError::EmptyCloud);
    }
    let n = cloud.len() as f64;
    let mut centroid = [0.0; 3];
    for p in &cloud.points {
        for k in 0..3 {
            centroid[k] += p[k];
        }
    }
    centroid = centroid.map(|c| c / n);
    let radius = cloud
        .points
        .iter()
        .map(|&p| norm(sub(p, centroid)))
        .fold(0.0, f64::max);
    if !(radius > 0.0) {
        return Err(PcioError::DegenerateCloud);
    }
    Ok(PointCloud {
        points: cloud
            .points
            .iter()
            .map(|&p| sub(p, centroid).map(|v| v / radius))
            .collect(),
        colors: cloud.colors.clone(),
        label: cloud.label,
    })
}

/// Ranges for random scale, rotation about the up (y) axis, and per-axis
/// shift. Each range is a closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    scale: (f64, f64),
    rotation: (f64, f64),
    shift: (f64, f64),
}

impl AugmentConfig {
    pub fn new(scale: (f64, f64), rotation: (f64, f64), shift: (f64, f64)) -> Result<Self, PcioError> {
        let ordered = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !ordered(scale) || !ordered(rotation) || !ordered(shift) {
            return Err(PcioError::InvalidAugment(
                "ranges must be finite with lo <= hi".into(),
            ));
        }
        if scale.0 <= 0.0 {
            return Err(PcioError::InvalidAugment("scale must be positive".into()));
        }
        Ok(Self {
            scale,
            rotation,
            shift,
        })
    }

    pub fn identity() -> Self {
        Self {
            scale: (1.0, 1.0),
            rotation: (0.0, 0.0),
            shift: (0.0, 0.0),
        }
    }
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            scale: (0.8, 1.25),
            rotation: (0.0, 2.0 * PI),
            shift: (-0.1, 0.1),
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

pub fn augment(cloud: &PointCloud, cfg: &AugmentConfig, seed: u64) -> PointCloud {
    let mut rng = rng_from_seed(seed);
    let s = draw(&mut rng, cfg.scale);
    let theta = draw(&mut rng, cfg.rotation);
    let t = [
        draw(&mut rng, cfg.shift),
        draw(&mut rng, cfg.shift),
        draw(&mut rng, cfg.shift),
    ];
    let (sin, cos) = theta.sin_cos();
    let points = cloud
        .points
        .iter()
        .map(|&[x, y, z]| {
            [
                s * (cos * x + sin * z) + t[0],
                s * y + t[1],
                s * (cos * z - sin * x) + t[2],
            ]
        })
        .collect();
    PointCloud {
        points,
        colors: cloud.colors.clone(),
        label: cloud.label,
    }
}

/// Parse `x y z` lines. Blank lines are skipped; anything else that is not
/// exactly three finite numbers is rejected with its 1-based line number.
pub fn parse_xyz(bytes: &[u8]) -> Result<PointCloud, PcioError> {
    let mut points = Vec::new();
    for (i, line) in bytes.split(|&b| b == b'\n').enumerate() {
        let line_no = i + 1;
        let text = std::str::from_utf8(line).map_err(|_| PcioError::MalformedLine { line: line_no })?;
        let mut fields = text.split_whitespace();
        let Some(first) = fields.next() else { continue };
        let mut p = [0.0; 3];
        let mut tokens = std::iter::once(first).chain(fields);
        for v in &mut p {
            *v = tokens
                .next()
                .and_then(|t| t.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or(PcioError::MalformedLine { line: line_no })?;
        }
        if tokens.next().is_some() {
            return Err(PcioError::MalformedLine { line: line_no });
        }
        points.push(p);
    }
    PointCloud::new(points)
}

pub fn read_xyz(path: impl AsRef<Path>) -> Result<PointCloud, PcioError> {
    parse_xyz(&fs::read(path)?)
}

/// One point per line with nine significant digits.
pub fn format_xyz(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 48);
    for p in &cloud.points {
        let _ = writeln!(out, "{:.8e} {:.8e} {:.8e}", p[0], p[1], p[2]);
    }
    out
}

pub fn write_xyz(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<(), PcioError> {
    fs::write(path, format_xyz(cloud))?;
    Ok(())
}

const VIRIDIS: [[f64; 3]; 9] = [
    [0.267004, 0.004874, 0.329415],
    [0.282623, 0.140926, 0.457517],
    [0.253935, 0.265254, 0.529983],
    [0.206756, 0.371758, 0.553117],
    [0.163625, 0.471133, 0.558148],
    [0.127568, 0.566949, 0.550556],
    [0.134692, 0.658636, 0.517649],
    [0.266941, 0.748751, 0.440573],
    [0.993248, 0.906157, 0.143936],
];

/// Viridis-style color for `t` in `[0, 1]` (clamped), linear between stops.
pub fn depth_ramp(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0) * (VIRIDIS.len() - 1) as f64;
    let i = (t.floor() as usize).min(VIRIDIS.len() - 2);
    let w = t - i as f64;
    [0, 1, 2].map(|k| VIRIDIS[i][k] * (1.0 - w) + VIRIDIS[i + 1][k] * w)
}

fn to_byte(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Depth-colored ASCII PLY. Depth is the z coordinate; the nearest point
/// maps to the start of the ramp and the farthest to its end. A cloud with
/// no depth spread is colored mid-ramp.
pub fn format_ply_depth_colored(cloud: &PointCloud) -> Result<String, PcioError> {
    if cloud.is_empty() {
        return Err(PcioError::EmptyCloud);
    }
    let (lo, hi) = cloud
        .points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p[2]), hi.max(p[2]))
        });
    let span = hi - lo;
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\ncomment depth-colored point cloud\n");
    let _ = writeln!(out, "element vertex {}", cloud.len());
    out.push_str(
        "property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
    );
    for p in &cloud.points {
        let t = if span > 0.0 { (p[2] - lo) / span } else { 0.5 };
        let c = depth_ramp(t).map(to_byte);
        let _ = writeln!(out, "{} {} {} {} {} {}", p[0], p[1], p[2], c[0], c[1], c[2]);
    }
    Ok(out)
}

pub fn write_ply_depth_colored(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<(), PcioError> {
    fs::write(path, format_ply_depth_colored(cloud)?)?;
    Ok(())
}

/// Read back the ASCII vertex PLY written above (x y z and optional
/// red/green/blue uchar properties, in that order).
pub fn parse_ply_ascii(bytes: &[u8]) -> Result<PointCloud, PcioError> {
    let text = std::str::from_utf8(bytes).map_err(|_| PcioError::MalformedHeader { offset: 0 })?;
    let mut lines = text.lines().enumerate();
    let bad_header = |line: usize| PcioError::MalformedLine { line: line + 1 };
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(PcioError::MalformedHeader { offset: 0 }),
    }
    let mut count = None;
    let mut props = Vec::new();
    let mut header_done = false;
    for (i, line) in lines.by_ref() {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "ascii", _] | ["comment", ..] => {}
            ["element", "vertex", c] => count = Some(c.parse::<usize>().map_err(|_| bad_header(i))?),
            ["property", _, name] => props.push(name.to_string()),
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => return Err(bad_header(i)),
        }
    }
    let count = count.filter(|_| header_done).ok_or(PcioError::TruncatedFile { offset: text.len() })?;
    let has_color = props.len() == 6;
    if props.len() != 3 && !has_color {
        return Err(PcioError::MalformedHeader { offset: 0 });
    }
    let mut points = Vec::with_capacity(count.min(1 << 16));
    let mut colors = Vec::new();
    for _ in 0..count {
        let (i, line) = lines.next().ok_or(PcioError::TruncatedFile { offset: text.len() })?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|w| w.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad_header(i))?;
        if vals.len() != props.len() {
            return Err(bad_header(i));
        }
        points.push([vals[0], vals[1], vals[2]]);
        if has_color {
            colors.push([vals[3] / 255.0, vals[4] / 255.0, vals[5] / 255.0]);
        }
    }
    let cloud = PointCloud::new(points)?;
    if has_color {
        cloud.with_colors(colors)
    } else {
        Ok(cloud)
    }
}
