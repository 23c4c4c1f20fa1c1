#![allow(dead_code)]

/// Straight nested-loop rendition of the selection algorithm. Shares no code
/// with the library so it can serve as an oracle for it.
pub struct NaiveSelection {
    pub f_max: Vec<f64>,
    pub idx: Vec<usize>,
    pub uidx: Vec<usize>,
    pub f_s: Vec<f64>,
    pub fr: Vec<usize>,
    pub ordered: Vec<usize>,
    pub resized: Vec<usize>,
}

pub fn naive_select(rows: &[Vec<f64>], k: usize, weighted: bool) -> NaiveSelection {
    let n = rows.len();
    let d = rows[0].len();
    let mut f_max = vec![0.0; d];
    let mut idx = vec![0usize; d];
    for c in 0..d {
        let mut best = 0;
        for r in 0..n {
            if rows[r][c] > rows[best][c] {
                best = r;
            }
        }
        f_max[c] = rows[best][c];
        idx[c] = best;
    }

    let mut uidx: Vec<usize> = Vec::new();
    for &i in &idx {
        if !uidx.contains(&i) {
            uidx.push(i);
        }
    }
    let mut f_s = vec![0.0; uidx.len()];
    let mut fr = vec![0usize; uidx.len()];
    for j in 0..uidx.len() {
        for c in 0..d {
            if idx[c] == uidx[j] {
                f_s[j] += f_max[c];
                fr[j] += 1;
            }
        }
    }

    // insertion sort on positions keeps equal scores in their original order
    let mut pos: Vec<usize> = (0..uidx.len()).collect();
    for a in 1..pos.len() {
        let mut b = a;
        while b > 0 && f_s[pos[b - 1]] > f_s[pos[b]] {
            pos.swap(b - 1, b);
            b -= 1;
        }
    }
    let ordered: Vec<usize> = pos.iter().map(|&p| uidx[p]).collect();

    let mut src = Vec::new();
    for &p in &pos {
        let reps = if weighted { fr[p] } else { 1 };
        for _ in 0..reps {
            src.push(uidx[p]);
        }
    }
    let m = src.len();
    let mut resized = Vec::with_capacity(k);
    for i in 0..k {
        let mut j = i * m / k;
        if j > m - 1 {
            j = m - 1;
        }
        resized.push(src[j]);
    }

    NaiveSelection { f_max, idx, uidx, f_s, fr, ordered, resized }
}

/// Tiny splitmix64 for test data, independent of the library's RNG.
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [-1, 1).
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    pub fn shuffle<T>(&mut self, v: &mut [T]) {
        for i in (1..v.len()).rev() {
            let j = self.below(i + 1);
            v.swap(i, j);
        }
    }
}

use critical_points::nn::{Matrix, Tape, Value};

pub fn random_matrix(rng: &mut SplitMix, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.unit()).collect())
}

/// Relative error `|analytic - numeric| / max(|analytic|, |numeric|)` over
/// all leaf gradients taken together, with the numeric side from central
/// differences of step `h`.
pub fn gradient_check<F>(inputs: &[Matrix], h: f64, f: F) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Value<'t>]) -> Value<'t>,
{
    let tape = Tape::new();
    let leaves: Vec<Value> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let out = f(&tape, &leaves);
    let grads = tape.backward(out);
    let analytic: Vec<f64> = leaves
        .iter()
        .flat_map(|&l| grads.get_or_zeros(l).into_vec())
        .collect();

    let eval = |perturbed: &[Matrix]| -> f64 {
        let tape = Tape::new();
        let leaves: Vec<Value> = perturbed.iter().map(|m| tape.leaf(m.clone())).collect();
        f(&tape, &leaves).scalar()
    };
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut work = inputs.to_vec();
    for li in 0..inputs.len() {
        for e in 0..inputs[li].len() {
            let orig = inputs[li].data()[e];
            work[li].data_mut()[e] = orig + h;
            let up = eval(&work);
            work[li].data_mut()[e] = orig - h;
            let down = eval(&work);
            work[li].data_mut()[e] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
    }
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Weighted sum `sum(out * weights)` so every output entry gets a distinct
/// upstream gradient.
pub fn weighted_sum<'t>(tape: &'t Tape, out: Value<'t>, seed: u64) -> Value<'t> {
    let (r, c) = out.shape();
    let mut rng = SplitMix(seed);
    out.mul(tape.leaf(random_matrix(&mut rng, r, c))).sum()
}
