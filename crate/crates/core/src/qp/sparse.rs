//! Minimal compressed-sparse-column matrices for the QP solver.
//!
//! Only the operations the solver needs are provided: triplet assembly,
//! matrix-vector products, symmetric products from an upper-triangle store,
//! symmetric permutation, and a reverse Cuthill-McKee ordering used to keep
//! factor fill-in down.

/// Sparse matrix in compressed-sparse-column form.
///
/// Within each column the row indices are strictly increasing and duplicate
/// entries have been merged.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CscMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CscMatrix {
            nrows,
            ncols,
            col_ptr: vec![0; ncols + 1],
            row_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        CscMatrix {
            nrows: n,
            ncols: n,
            col_ptr: (0..=n).collect(),
            row_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    /// y += A x
    pub fn gemv(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for j in 0..self.ncols {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                y[self.row_idx[p]] += self.values[p] * xj;
            }
        }
    }

    /// y += Aᵀ x
    pub fn gemv_t(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        for j in 0..self.ncols {
            let mut acc = 0.0;
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                acc += self.values[p] * x[self.row_idx[p]];
            }
            y[j] += acc;
        }
    }

    /// y += K x where only the upper triangle (including diagonal) of the
    /// symmetric matrix K is stored.
    pub fn sym_gemv_upper(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(self.nrows, self.ncols);
        for j in 0..self.ncols {
            let xj = x[j];
            let mut acc = 0.0;
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[p];
                let v = self.values[p];
                if i == j {
                    acc += v * xj;
                } else {
                    y[i] += v * xj;
                    acc += v * x[i];
                }
            }
            y[j] += acc;
        }
    }

    /// Quadratic form ½ xᵀ K x from a full symmetric store.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let mut kx = vec![0.0; self.nrows];
        self.gemv(x, &mut kx);
        0.5 * dot(x, &kx)
    }

    /// Extract the upper triangle (i ≤ j) of a square matrix.
    pub fn upper_triangle(&self) -> CscMatrix {
        assert_eq!(self.nrows, self.ncols);
        let mut b = CooBuilder::new(self.nrows, self.ncols);
        for j in 0..self.ncols {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[p];
                if i <= j {
                    b.push(i, j, self.values[p]);
                }
            }
        }
        b.build()
    }

    /// Symmetric permutation B = K(perm, perm) of an upper-triangle store,
    /// result again upper-triangular. `perm[new] = old`.
    pub fn permute_sym_upper(&self, perm: &[usize]) -> CscMatrix {
        assert_eq!(self.nrows, self.ncols);
        let n = self.nrows;
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut b = CooBuilder::new(n, n);
        for j in 0..n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[p];
                let (ni, nj) = (inv[i], inv[j]);
                if ni <= nj {
                    b.push(ni, nj, self.values[p]);
                } else {
                    b.push(nj, ni, self.values[p]);
                }
            }
        }
        b.build()
    }
}

/// Triplet accumulator; duplicates are summed on build.
#[derive(Debug, Clone)]
pub struct CooBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl CooBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        CooBuilder {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        if value != 0.0 {
            self.entries.push((row, col, value));
        }
    }

    pub fn build(mut self) -> CscMatrix {
        self.entries
            .sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
        let mut row_idx: Vec<usize> = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut cols: Vec<usize> = Vec::with_capacity(self.entries.len());
        for &(r, c, v) in &self.entries {
            if cols.last() == Some(&c) && row_idx.last() == Some(&r) {
                *values.last_mut().unwrap() += v;
            } else {
                row_idx.push(r);
                values.push(v);
                cols.push(c);
            }
        }
        let mut col_ptr = vec![0usize; self.ncols + 1];
        for &c in &cols {
            col_ptr[c + 1] += 1;
        }
        for c in 0..self.ncols {
            col_ptr[c + 1] += col_ptr[c];
        }
        CscMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            col_ptr,
            row_idx,
            values,
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, &x| m.max(x.abs()))
}

/// Reverse Cuthill-McKee ordering of the symmetric pattern given by an
/// upper-triangle store. Returns `perm` with `perm[new] = old`. Deterministic:
/// BFS starts at the minimum-degree vertex of each component (ties by index)
/// and neighbours are visited in (degree, index) order.
pub fn reverse_cuthill_mckee(upper: &CscMatrix) -> Vec<usize> {
    let n = upper.ncols;
    // adjacency from the symmetric pattern, diagonal dropped
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for j in 0..n {
        for p in upper.col_ptr[j]..upper.col_ptr[j + 1] {
            let i = upper.row_idx[p];
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for l in adj.iter_mut() {
        l.sort_unstable();
        l.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(|l| l.len()).collect();

    let mut order = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    loop {
        // lowest-degree unvisited vertex (ties by index) starts a component
        let start = match (0..n)
            .filter(|&v| !visited[v])
            .min_by_key(|&v| (degree[v], v))
        {
            Some(s) => s,
            None => break,
        };
        visited[start] = true;
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}
