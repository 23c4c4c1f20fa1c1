use super::NnError;

/// Exact k-nearest-neighbour graph. Row `i` lists the `k` points closest to
/// point `i` (excluding `i` itself), nearest first; equal distances go to the
/// smaller index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnnGraph {
    k: usize,
    neighbors: Vec<usize>,
}

impl KnnGraph {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.neighbors.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    pub fn neighbors(&self) -> &[usize] {
        &self.neighbors
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Brute-force construction, `O(n^2)` distance evaluations.
pub fn knn_build(points: &[[f64; 3]], k: usize) -> Result<KnnGraph, NnError> {
    let n = points.len();
    if k == 0 || k >= n {
        return Err(NnError::KTooLarge { k, n });
    }
    let mut neighbors = Vec::with_capacity(n * k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    for (i, p) in points.iter().enumerate() {
        cand.clear();
        cand.extend(
            points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, q)| (dist2(p, q), j)),
        );
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, by_dist);
            cand.truncate(k);
        }
        cand.sort_unstable_by(by_dist);
        neighbors.extend(cand.iter().map(|&(_, j)| j));
    }
    Ok(KnnGraph { k, neighbors })
}

/// Neighbour lists of several graphs laid end to end, with indices shifted
/// into the row space of a stacked batch matrix.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    k: usize,
    neighbors: Vec<usize>,
    centers: Vec<usize>,
}

impl NeighborIndex {
    pub fn from_graphs(graphs: &[KnnGraph]) -> Self {
        let k = graphs.first().map_or(1, KnnGraph::k);
        let mut neighbors = Vec::new();
        let mut centers = Vec::new();
        let mut offset = 0;
        for g in graphs {
            assert_eq!(g.k(), k, "graphs in a batch must share k");
            neighbors.extend(g.neighbors().iter().map(|&j| j + offset));
            for i in 0..g.len() {
                centers.extend(std::iter::repeat(i + offset).take(k));
            }
            offset += g.len();
        }
        Self { k, neighbors, centers }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn points(&self) -> usize {
        self.centers.len() / self.k
    }

    pub fn neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn centers(&self) -> &[usize] {
        &self.centers
    }

    /// Same graph with every neighbour list permuted by `f`.
    pub fn with_permuted_rows(&self, f: impl Fn(&mut [usize])) -> Self {
        let mut out = self.clone();
        for row in out.neighbors.chunks_mut(self.k) {
            f(row);
        }
        out
    }
}
