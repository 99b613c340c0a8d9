//! Simplicial sparse LDLᵀ factorization of symmetric quasi-definite matrices.
//!
//! Up-looking factorization over an upper-triangle CSC store, in the style of
//! QDLDL. No pivoting is performed: the solver only ever factors regularized
//! KKT matrices [[P+σI, Aᵀ],[A, −R]], which are quasi-definite, so a
//! factorization with nonzero D always exists.

use super::sparse::CscMatrix;

#[derive(Debug, thiserror::Error)]
pub enum LdlError {
    #[error("matrix must be square, got {nrows}x{ncols}")]
    NotSquare { nrows: usize, ncols: usize },
    #[error("upper-triangle store must carry an explicit diagonal in column {col}")]
    MissingDiagonal { col: usize },
    #[error("zero pivot encountered at column {col}")]
    ZeroPivot { col: usize },
}

const NONE: usize = usize::MAX;

/// Elimination-tree parents and per-column factor counts for an upper CSC store.
fn etree(upper: &CscMatrix) -> Result<(Vec<usize>, Vec<usize>), LdlError> {
    let n = upper.ncols;
    let mut parent = vec![NONE; n];
    let mut l_nz = vec![0usize; n];
    let mut work = vec![NONE; n];
    for j in 0..n {
        work[j] = j;
        for p in upper.col_ptr[j]..upper.col_ptr[j + 1] {
            let mut i = upper.row_idx[p];
            debug_assert!(i <= j, "store must be upper triangular");
            while work[i] != j {
                if parent[i] == NONE {
                    parent[i] = j;
                }
                l_nz[i] += 1;
                work[i] = j;
                i = parent[i];
            }
        }
    }
    Ok((parent, l_nz))
}

/// LDLᵀ factor of a permuted symmetric matrix.
pub struct LdlFactor {
    n: usize,
    /// perm[new] = old
    perm: Vec<usize>,
    /// permuted upper-triangle matrix (kept for refactorization)
    kkt_perm: CscMatrix,
    parent: Vec<usize>,
    l_col_ptr: Vec<usize>,
    l_row_idx: Vec<usize>,
    l_values: Vec<f64>,
    d: Vec<f64>,
    d_inv: Vec<f64>,
    scratch: Vec<f64>,
}

impl LdlFactor {
    /// Factor `upper` under the symmetric permutation `perm` (identity if None).
    pub fn new(upper: &CscMatrix, perm: Option<Vec<usize>>) -> Result<Self, LdlError> {
        if upper.nrows != upper.ncols {
            return Err(LdlError::NotSquare {
                nrows: upper.nrows,
                ncols: upper.ncols,
            });
        }
        let n = upper.ncols;
        let perm = perm.unwrap_or_else(|| (0..n).collect());
        let kkt_perm = upper.permute_sym_upper(&perm);
        let (parent, l_nz) = etree(&kkt_perm)?;
        let mut l_col_ptr = vec![0usize; n + 1];
        for j in 0..n {
            l_col_ptr[j + 1] = l_col_ptr[j] + l_nz[j];
        }
        let total = l_col_ptr[n];
        let mut factor = LdlFactor {
            n,
            perm,
            kkt_perm,
            parent,
            l_col_ptr,
            l_row_idx: vec![0; total],
            l_values: vec![0.0; total],
            d: vec![0.0; n],
            d_inv: vec![0.0; n],
            scratch: vec![0.0; n],
        };
        factor.numeric()?;
        Ok(factor)
    }

    /// Recompute numeric values from a matrix with the same sparsity pattern.
    pub fn refactor(&mut self, upper: &CscMatrix) -> Result<(), LdlError> {
        let kkt_perm = upper.permute_sym_upper(&self.perm);
        debug_assert_eq!(kkt_perm.col_ptr, self.kkt_perm.col_ptr);
        debug_assert_eq!(kkt_perm.row_idx, self.kkt_perm.row_idx);
        self.kkt_perm = kkt_perm;
        self.numeric()
    }

    fn numeric(&mut self) -> Result<(), LdlError> {
        let n = self.n;
        let a = &self.kkt_perm;
        let mut y_vals = vec![0.0f64; n];
        let mut y_marked = vec![false; n];
        let mut y_idx = vec![0usize; n];
        let mut elim = vec![0usize; n];
        let mut next_in_col = self.l_col_ptr[..n].to_vec();

        for k in 0..n {
            // the diagonal must be the last (largest-row) entry of column k
            let hi = a.col_ptr[k + 1];
            let lo = a.col_ptr[k];
            if hi == lo || a.row_idx[hi - 1] != k {
                return Err(LdlError::MissingDiagonal { col: k });
            }
            self.d[k] = a.values[hi - 1];

            let mut nnz_y = 0usize;
            for p in lo..hi - 1 {
                let i = a.row_idx[p];
                y_vals[i] = a.values[p];
                if !y_marked[i] {
                    y_marked[i] = true;
                    elim[0] = i;
                    let mut nnz_e = 1usize;
                    let mut next = self.parent[i];
                    while next != NONE && next < k {
                        if y_marked[next] {
                            break;
                        }
                        y_marked[next] = true;
                        elim[nnz_e] = next;
                        nnz_e += 1;
                        next = self.parent[next];
                    }
                    while nnz_e > 0 {
                        nnz_e -= 1;
                        y_idx[nnz_y] = elim[nnz_e];
                        nnz_y += 1;
                    }
                }
            }

            for iy in (0..nnz_y).rev() {
                let c = y_idx[iy];
                let y_c = y_vals[c];
                for p in self.l_col_ptr[c]..next_in_col[c] {
                    y_vals[self.l_row_idx[p]] -= self.l_values[p] * y_c;
                }
                let slot = next_in_col[c];
                self.l_row_idx[slot] = k;
                let l_kc = y_c * self.d_inv[c];
                self.l_values[slot] = l_kc;
                self.d[k] -= y_c * l_kc;
                next_in_col[c] += 1;
                y_vals[c] = 0.0;
                y_marked[c] = false;
            }

            if self.d[k] == 0.0 {
                return Err(LdlError::ZeroPivot { col: k });
            }
            self.d_inv[k] = 1.0 / self.d[k];
        }
        Ok(())
    }

    /// Solve K x = b in place.
    pub fn solve_in_place(&mut self, b: &mut [f64]) {
        debug_assert_eq!(b.len(), self.n);
        let x = &mut self.scratch;
        for new in 0..self.n {
            x[new] = b[self.perm[new]];
        }
        // L z = b
        for j in 0..self.n {
            let xj = x[j];
            if xj != 0.0 {
                for p in self.l_col_ptr[j]..self.l_col_ptr[j + 1] {
                    x[self.l_row_idx[p]] -= self.l_values[p] * xj;
                }
            }
        }
        // D w = z
        for j in 0..self.n {
            x[j] *= self.d_inv[j];
        }
        // Lᵀ y = w
        for j in (0..self.n).rev() {
            let mut acc = x[j];
            for p in self.l_col_ptr[j]..self.l_col_ptr[j + 1] {
                acc -= self.l_values[p] * x[self.l_row_idx[p]];
            }
            x[j] = acc;
        }
        for new in 0..self.n {
            b[self.perm[new]] = x[new];
        }
    }

    /// Signs of the diagonal D: count of positive entries. A quasi-definite
    /// KKT matrix [[P+σI, Aᵀ],[A, −R]] factors with exactly n positive pivots
    /// iff the (regularized) P block has no negative curvature.
    pub fn positive_pivots(&self) -> usize {
        self.d.iter().filter(|&&v| v > 0.0).count()
    }
}
