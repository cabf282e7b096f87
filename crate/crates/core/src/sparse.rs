//! Sparse matrices and a sparse LDL^T factorization.
//!
//! The precision matrices assembled in this crate are symmetric positive
//! definite with a mesh-adjacency sparsity pattern, so a classic up-looking
//! LDL^T (elimination-tree based, after a reverse Cuthill-McKee fill-reducing
//! permutation) covers everything the samplers need: solves, log-determinants
//! and zero-mean Gaussian draws with covariance `A^{-1}`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, ShotError};

/// Row-major compressed sparse matrix with sorted column indices per row.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

/// Coordinate-format accumulator; duplicates are summed on conversion.
#[derive(Debug, Clone)]
pub struct Triplets {
    n_rows: usize,
    n_cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        Triplets {
            n_rows,
            n_cols,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n_rows && col < self.n_cols);
        if value != 0.0 {
            self.entries.push((row, col, value));
        }
    }

    pub fn to_csr(mut self) -> CsrMatrix {
        self.entries
            .sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut counts = vec![0usize; self.n_rows + 1];
        let mut indices: Vec<usize> = Vec::with_capacity(self.entries.len());
        let mut data: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut prev: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries.drain(..) {
            if prev == Some((r, c)) {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                data.push(v);
                counts[r + 1] += 1;
                prev = Some((r, c));
            }
        }
        for i in 0..self.n_rows {
            counts[i + 1] += counts[i];
        }
        CsrMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            indptr: counts,
            indices,
            data,
        }
    }
}

impl CsrMatrix {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    /// Column indices and values of one row.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.indptr[i];
        let hi = self.indptr[i + 1];
        (&self.indices[lo..hi], &self.data[lo..hi])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(pos) => vals[pos],
            Err(_) => 0.0,
        }
    }

    /// Identity matrix scaled by `alpha`.
    pub fn scaled_identity(n: usize, alpha: f64) -> CsrMatrix {
        CsrMatrix {
            n_rows: n,
            n_cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            data: vec![alpha; n],
        }
    }

    /// Diagonal matrix from a vector.
    pub fn from_diagonal(diag: &[f64]) -> CsrMatrix {
        let n = diag.len();
        CsrMatrix {
            n_rows: n,
            n_cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            data: diag.to_vec(),
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols, "mul_vec dimension mismatch");
        let mut y = vec![0.0; self.n_rows];
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c];
            }
            y[i] = acc;
        }
        y
    }

    /// `A^T x` without forming the transpose.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_rows, "tr_mul_vec dimension mismatch");
        let mut y = vec![0.0; self.n_cols];
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                y[*c] += v * x[i];
            }
        }
        y
    }

    /// Quadratic form `x^T A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        assert_eq!(self.n_rows, self.n_cols);
        let mut acc = 0.0;
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            let mut row_acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                row_acc += v * x[*c];
            }
            acc += x[i] * row_acc;
        }
        acc
    }

    /// `self + alpha * other`, merging sparsity patterns.
    pub fn add_scaled(&self, other: &CsrMatrix, alpha: f64) -> CsrMatrix {
        assert_eq!(self.n_rows, other.n_rows);
        assert_eq!(self.n_cols, other.n_cols);
        let mut t = Triplets::new(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                t.push(i, *c, *v);
            }
            let (cols, vals) = other.row(i);
            for (c, v) in cols.iter().zip(vals) {
                t.push(i, *c, alpha * v);
            }
        }
        t.to_csr()
    }

    /// `A^T A`, built from outer products of rows (rows here are short).
    pub fn ata(&self) -> CsrMatrix {
        let mut t = Triplets::new(self.n_cols, self.n_cols);
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (c1, v1) in cols.iter().zip(vals) {
                for (c2, v2) in cols.iter().zip(vals) {
                    t.push(*c1, *c2, v1 * v2);
                }
            }
        }
        t.to_csr()
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.data {
            *v *= alpha;
        }
    }

    /// Iterate all stored entries as `(row, col, value)`.
    pub fn iter_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(c, v)| (i, *c, *v))
        })
    }

    pub fn max_symmetry_violation(&self) -> f64 {
        let mut worst = 0.0f64;
        for (i, j, v) in self.iter_entries() {
            worst = worst.max((v - self.get(j, i)).abs());
        }
        worst
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.n_rows, self.n_cols);
        for (i, j, v) in self.iter_entries() {
            *m.at_mut(i, j) += v;
        }
        m
    }
}

/// Minimal row-major dense matrix used for small validation-scale outputs.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DenseMatrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        DenseMatrix {
            n_rows,
            n_cols,
            data: vec![0.0; n_rows * n_cols],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols + j]
    }

    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.n_cols + j]
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn row_slice_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }
}

/// Dense Cholesky for the small symmetric systems in the samplers (covariate
/// blocks, validation oracles). Not meant for large matrices.
#[derive(Debug, Clone)]
pub struct DenseCholesky {
    n: usize,
    /// Lower factor, row-major.
    l: Vec<f64>,
}

impl DenseCholesky {
    pub fn factor(a: &DenseMatrix) -> Result<DenseCholesky> {
        if a.n_rows() != a.n_cols() {
            return Err(ShotError::Dimension("dense cholesky needs square input".into()));
        }
        let n = a.n_rows();
        let mut l = vec![0.0f64; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut sum = a.at(i, j);
                for k in 0..j {
                    sum -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(sum > 0.0) {
                        return Err(ShotError::Numeric(format!(
                            "dense matrix is not positive definite (pivot {i} = {sum})"
                        )));
                    }
                    l[i * n + i] = sum.sqrt();
                } else {
                    l[i * n + j] = sum / l[j * n + j];
                }
            }
        }
        Ok(DenseCholesky { n, l })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                x[i] -= self.l[i * n + k] * x[k];
            }
            x[i] /= self.l[i * n + i];
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                x[i] -= self.l[k * n + i] * x[k];
            }
            x[i] /= self.l[i * n + i];
        }
        x
    }

    /// Draw `x ~ Normal(0, A^{-1})` via `L^{-T} z`.
    pub fn sample_zero_mean<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                x[i] -= self.l[k * n + i] * x[k];
            }
            x[i] /= self.l[i * n + i];
        }
        x
    }

    pub fn ln_det(&self) -> f64 {
        (0..self.n).map(|i| 2.0 * self.l[i * self.n + i].ln()).sum()
    }
}

/// Fill-reducing orderings supported by [`LdlFactor::factor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ordering {
    /// Identity permutation.
    Natural,
    /// Reverse Cuthill-McKee on the adjacency graph of the pattern.
    Rcm,
}

/// Sparse LDL^T factorization of `P A P^T` with unit lower-triangular `L`
/// stored column-wise.
#[derive(Debug, Clone)]
pub struct LdlFactor {
    n: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
}

fn rcm_permutation(a: &CsrMatrix) -> Vec<usize> {
    let n = a.n_rows();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).0.len()).collect();
    let mut order: Vec<usize> = Vec::with_capacity(n);
    let mut visited = vec![false; n];

    // BFS from `start`, neighbors in increasing-degree order; returns the
    // visited sequence and last level.
    let bfs = |start: usize, visited: &mut Vec<bool>| -> (Vec<usize>, Vec<usize>) {
        let mut seq = vec![start];
        visited[start] = true;
        let mut frontier = vec![start];
        let mut last_level = frontier.clone();
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for &u in &frontier {
                let mut nbrs: Vec<usize> = a
                    .row(u)
                    .0
                    .iter()
                    .copied()
                    .filter(|&v| v != u && !visited[v])
                    .collect();
                nbrs.sort_unstable_by_key(|&v| (degree[v], v));
                for v in nbrs {
                    if !visited[v] {
                        visited[v] = true;
                        seq.push(v);
                        next.push(v);
                    }
                }
            }
            if !next.is_empty() {
                last_level = next.clone();
            }
            frontier = next;
        }
        (seq, last_level)
    };

    for comp_start in 0..n {
        if visited[comp_start] {
            continue;
        }
        // Pseudo-peripheral start: iterate BFS from the min-degree node of the
        // last level a few times.
        let mut start = comp_start;
        {
            let mut probe_visited = visited.clone();
            let (_, mut last) = bfs(start, &mut probe_visited);
            for _ in 0..2 {
                last.sort_unstable_by_key(|&v| (degree[v], v));
                let cand = last[0];
                if cand == start {
                    break;
                }
                start = cand;
                let mut pv = visited.clone();
                let res = bfs(start, &mut pv);
                last = res.1;
            }
        }
        let (seq, _) = bfs(start, &mut visited);
        order.extend(seq);
    }
    order.reverse();
    order
}

impl LdlFactor {
    /// Factor a sparse symmetric positive definite matrix.
    pub fn factor(a: &CsrMatrix, ordering: Ordering) -> Result<LdlFactor> {
        if a.n_rows() != a.n_cols() {
            return Err(ShotError::Dimension(format!(
                "cannot factor a {}x{} matrix",
                a.n_rows(),
                a.n_cols()
            )));
        }
        let n = a.n_rows();
        let perm = match ordering {
            Ordering::Natural => (0..n).collect::<Vec<usize>>(),
            Ordering::Rcm => rcm_permutation(a),
        };
        let mut iperm = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }

        // Upper-triangular column k of the permuted matrix, read off row
        // perm[k] of the symmetric input.
        let upper_col = |k: usize, out: &mut Vec<(usize, f64)>| {
            out.clear();
            let (cols, vals) = a.row(perm[k]);
            for (c, v) in cols.iter().zip(vals) {
                let i = iperm[*c];
                if i <= k {
                    out.push((i, *v));
                }
            }
        };

        // Symbolic pass: elimination tree and column counts.
        let mut parent = vec![usize::MAX; n];
        let mut flag = vec![usize::MAX; n];
        let mut lnz = vec![0usize; n];
        let mut colbuf: Vec<(usize, f64)> = Vec::new();
        for k in 0..n {
            flag[k] = k;
            upper_col(k, &mut colbuf);
            for &(entry, _) in &colbuf {
                let mut i = entry;
                while i < k && flag[i] != k {
                    if parent[i] == usize::MAX {
                        parent[i] = k;
                    }
                    lnz[i] += 1;
                    flag[i] = k;
                    i = parent[i];
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for k in 0..n {
            lp[k + 1] = lp[k] + lnz[k];
        }
        let total = lp[n];
        let mut li = vec![0usize; total];
        let mut lx = vec![0.0f64; total];
        let mut d = vec![0.0f64; n];

        // Numeric pass (up-looking), after Davis' LDL.
        let mut y = vec![0.0f64; n];
        let mut pattern = vec![0usize; n];
        let mut fill = vec![0usize; n]; // entries placed so far per column
        for f in flag.iter_mut() {
            *f = usize::MAX;
        }
        for k in 0..n {
            let mut top = n;
            flag[k] = k;
            upper_col(k, &mut colbuf);
            for &(entry, value) in &colbuf {
                y[entry] += value;
                let mut len = 0usize;
                let mut i = entry;
                while i < k && flag[i] != k {
                    pattern[len] = i;
                    len += 1;
                    flag[i] = k;
                    i = parent[i];
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    pattern[top] = pattern[len];
                }
            }
            d[k] = y[k];
            y[k] = 0.0;
            for t in top..n {
                let i = pattern[t];
                let yi = y[i];
                y[i] = 0.0;
                let p2 = lp[i] + fill[i];
                for p in lp[i]..p2 {
                    y[li[p]] -= lx[p] * yi;
                }
                let l_ki = yi / d[i];
                d[k] -= l_ki * yi;
                li[p2] = k;
                lx[p2] = l_ki;
                fill[i] += 1;
            }
            if !(d[k] > 0.0) {
                return Err(ShotError::Numeric(format!(
                    "matrix is not positive definite (pivot {k} = {})",
                    d[k]
                )));
            }
        }

        Ok(LdlFactor {
            n,
            perm,
            lp,
            li,
            lx,
            d,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Log-determinant of the factored matrix.
    pub fn ln_det(&self) -> f64 {
        self.d.iter().map(|v| v.ln()).sum()
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "solve dimension mismatch");
        let mut w: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        self.solve_permuted_in_place(&mut w);
        let mut x = vec![0.0; self.n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = w[new];
        }
        x
    }

    fn solve_permuted_in_place(&self, w: &mut [f64]) {
        let n = self.n;
        // L y = w
        for i in 0..n {
            let yi = w[i];
            for p in self.lp[i]..self.lp[i + 1] {
                w[self.li[p]] -= self.lx[p] * yi;
            }
        }
        // D z = y
        for i in 0..n {
            w[i] /= self.d[i];
        }
        // L^T x = z
        for i in (0..n).rev() {
            let mut acc = w[i];
            for p in self.lp[i]..self.lp[i + 1] {
                acc -= self.lx[p] * w[self.li[p]];
            }
            w[i] = acc;
        }
    }

    /// Draw `x ~ Normal(0, A^{-1})` using `x = P^T L^{-T} D^{-1/2} z`.
    pub fn sample_zero_mean<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.n;
        let mut w: Vec<f64> = (0..n)
            .map(|i| {
                let z: f64 = rng.sample(StandardNormal);
                z / self.d[i].sqrt()
            })
            .collect();
        for i in (0..n).rev() {
            let mut acc = w[i];
            for p in self.lp[i]..self.lp[i + 1] {
                acc -= self.lx[p] * w[self.li[p]];
            }
            w[i] = acc;
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = w[new];
        }
        x
    }

    /// Draw from `Normal(mean, A^{-1})` where `mean = A^{-1} rhs`.
    pub fn sample_with_canonical_mean<R: Rng + ?Sized>(
        &self,
        rhs: &[f64],
        rng: &mut R,
    ) -> Vec<f64> {
        let mean = self.solve(rhs);
        let noise = self.sample_zero_mean(rng);
        mean.iter().zip(noise).map(|(m, e)| m + e).collect()
    }
}
