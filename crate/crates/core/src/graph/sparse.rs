use crate::nn::Tensor;

use super::GraphError;

/// Square CSR matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed and
    /// explicit zeros dropped.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < n && c < n, "triplet ({r}, {c}) outside {n}x{n}");
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mut m = Self { n, row_ptr, cols, vals };
        m.drop_zeros();
        m
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn from_dense(t: &Tensor) -> Self {
        let n = t.rows();
        let mut trip = Vec::new();
        for i in 0..n {
            for (j, &v) in t.row(i).iter().enumerate() {
                if v != 0.0 {
                    trip.push((i, j, v));
                }
            }
        }
        Self::from_triplets(n, trip)
    }

    fn drop_zeros(&mut self) {
        let mut row_ptr = vec![0; self.n + 1];
        let mut cols = Vec::with_capacity(self.cols.len());
        let mut vals = Vec::with_capacity(self.vals.len());
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.vals[k] != 0.0 {
                    cols.push(self.cols[k]);
                    vals.push(self.vals[k]);
                }
            }
            row_ptr[i + 1] = cols.len();
        }
        self.row_ptr = row_ptr;
        self.cols = cols;
        self.vals = vals;
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Non-zero `(col, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).map(|(_, v)| v).sum()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| self.get(j, i) == v))
    }

    pub fn diagonal_is_zero(&self) -> bool {
        (0..self.n).all(|i| self.get(i, i) == 0.0)
    }

    /// Off-diagonal non-zero pairs `(i, j)` with `i < j`.
    pub fn upper_pairs(&self) -> Vec<(usize, usize)> {
        (0..self.n)
            .flat_map(|i| self.row(i).filter(move |&(j, _)| j > i).map(move |(j, _)| (i, j)))
            .collect()
    }

    /// `self @ dense` for a dense `n × k` right-hand side.
    pub fn matmul_dense(&self, dense: &Tensor) -> Result<Tensor, GraphError> {
        if dense.rows() != self.n {
            return Err(GraphError::Shape(format!(
                "sparse {n}x{n} times dense {:?}",
                dense.shape(),
                n = self.n
            )));
        }
        let k = dense.cols();
        let mut out = vec![0.0; self.n * k];
        for i in 0..self.n {
            let o = &mut out[i * k..(i + 1) * k];
            for (j, v) in self.row(i) {
                for (acc, &x) in o.iter_mut().zip(dense.row(j)) {
                    *acc += v * x;
                }
            }
        }
        Ok(Tensor::matrix(self.n, k, out).expect("sized above"))
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.n, self.n]);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                t.row_mut(i)[j] = v;
            }
        }
        t
    }
}

/// `L = I − D^{-1/2} A D^{-1/2}`; rows of isolated vertices are identity rows.
pub fn normalized_laplacian(adjacency: &SparseMatrix) -> Result<SparseMatrix, GraphError> {
    let n = adjacency.dim();
    if !adjacency.is_symmetric() {
        return Err(GraphError::NotSymmetric);
    }
    if (0..n).any(|i| adjacency.row(i).any(|(_, v)| v < 0.0 || !v.is_finite())) {
        return Err(GraphError::Shape("adjacency has negative or non-finite weights".into()));
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d = adjacency.row_sum(i);
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut trip: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 1.0)).collect();
    for i in 0..n {
        for (j, a) in adjacency.row(i) {
            trip.push((i, j, -a * inv_sqrt[i] * inv_sqrt[j]));
        }
    }
    Ok(SparseMatrix::from_triplets(n, trip))
}
