//! Convex quadratic programming by operator splitting.
//!
//! Solves problems of the form
//!
//! ```text
//!     minimize    ½ xᵀ P x + qᵀ x
//!     subject to  A x = b
//!                 l ≤ C x ≤ u
//! ```
//!
//! with P symmetric positive semidefinite. The solver is an ADMM iteration on
//! the stacked constraint system with a single quasi-definite KKT
//! factorization that is reused across iterations, warm starts, and
//! re-solves after linear-cost updates — the access pattern of the
//! negotiation engine, where only the price term of the objective changes
//! from round to round. An optional active-set polish step refines solutions
//! to near machine precision.

mod ldl;
mod solver;
pub mod sparse;

pub use solver::QpSolver;
pub use sparse::{CooBuilder, CscMatrix};

use sparse::inf_norm;

/// A convex QP instance.
#[derive(Debug, Clone)]
pub struct QpProblem {
    /// Quadratic cost matrix, n×n, full symmetric store.
    pub quad: CscMatrix,
    /// Linear cost, length n.
    pub linear: Vec<f64>,
    /// Equality constraint matrix, mₑ×n.
    pub eq_mat: CscMatrix,
    /// Equality right-hand side, length mₑ.
    pub eq_rhs: Vec<f64>,
    /// Inequality constraint matrix, mᵢ×n.
    pub ineq_mat: CscMatrix,
    /// Lower bounds for C x (−∞ allowed), length mᵢ.
    pub ineq_lower: Vec<f64>,
    /// Upper bounds for C x (+∞ allowed), length mᵢ.
    pub ineq_upper: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("inequality bounds inverted at row {row}: lower {lower} > upper {upper}")]
    BoundsInverted { row: usize, lower: f64, upper: f64 },
    #[error("quadratic matrix is not symmetric at entry ({row},{col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("quadratic matrix has negative curvature")]
    NotConvex,
    #[error("KKT factorization failed: {0}")]
    Factorization(#[from] ldl::LdlError),
}

impl QpProblem {
    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn num_eq(&self) -> usize {
        self.eq_rhs.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.ineq_lower.len()
    }

    /// Structural validation; called once when a solver is prepared.
    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.num_vars();
        if self.quad.nrows != n || self.quad.ncols != n {
            return Err(QpError::Dimension(format!(
                "quad is {}x{}, expected {n}x{n}",
                self.quad.nrows, self.quad.ncols
            )));
        }
        if self.eq_mat.ncols != n || self.eq_mat.nrows != self.num_eq() {
            return Err(QpError::Dimension(format!(
                "eq_mat is {}x{}, expected {}x{n}",
                self.eq_mat.nrows,
                self.eq_mat.ncols,
                self.num_eq()
            )));
        }
        if self.ineq_mat.ncols != n
            || self.ineq_mat.nrows != self.num_ineq()
            || self.ineq_upper.len() != self.num_ineq()
        {
            return Err(QpError::Dimension(format!(
                "ineq_mat is {}x{}, expected {}x{n}",
                self.ineq_mat.nrows,
                self.ineq_mat.ncols,
                self.num_ineq()
            )));
        }
        for (row, (&lo, &hi)) in self.ineq_lower.iter().zip(&self.ineq_upper).enumerate() {
            if lo > hi {
                return Err(QpError::BoundsInverted {
                    row,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        // symmetry of the quadratic term
        let mut entries = std::collections::HashMap::new();
        for j in 0..n {
            for p in self.quad.col_ptr[j]..self.quad.col_ptr[j + 1] {
                entries.insert((self.quad.row_idx[p], j), self.quad.values[p]);
            }
        }
        for (&(i, j), &v) in &entries {
            let vt = entries.get(&(j, i)).copied().unwrap_or(0.0);
            if (v - vt).abs() > 1e-9 * (1.0 + v.abs()) {
                return Err(QpError::NotSymmetric { row: i, col: j });
            }
        }
        Ok(())
    }

    /// ½ xᵀ P x + qᵀ x
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.quad.quad_form(x) + sparse::dot(&self.linear, x)
    }
}

/// Termination status of a QP solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    MaxIterations,
    PrimalInfeasible,
    DualInfeasible,
}

/// Primal/dual answer with residual report.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Multipliers of the equality system (stationarity P x + q + Aᵀy + Cᵀz = 0).
    pub y_eq: Vec<f64>,
    /// Multipliers of the inequality system; positive at active upper bounds,
    /// negative at active lower bounds.
    pub z_ineq: Vec<f64>,
    pub status: QpStatus,
    pub primal_res: f64,
    pub dual_res: f64,
    pub objective: f64,
    pub iterations: usize,
    /// Whether the active-set polish step was applied and accepted.
    pub polished: bool,
}

/// Solver configuration.
#[derive(Debug, Clone)]
pub struct SolverSettings {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    /// ADMM penalty; equality rows are scaled stiffer internally.
    pub rho: f64,
    pub sigma: f64,
    /// Over-relaxation parameter.
    pub alpha: f64,
    pub adaptive_rho: bool,
    pub polish: bool,
    /// Residual/termination check cadence in iterations.
    pub check_every: usize,
    /// Infeasibility certificate tolerance.
    pub infeas_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            abs_tol: 1e-8,
            rel_tol: 1e-9,
            max_iter: 20_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_rho: true,
            polish: true,
            check_every: 25,
            infeas_tol: 1e-9,
        }
    }
}

/// KKT residuals of a candidate primal/dual point, all ∞-norms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    /// Violation of equalities and of the box l ≤ Cx ≤ u.
    pub primal: f64,
    /// ‖P x + q + Aᵀy + Cᵀz‖∞
    pub dual: f64,
    /// Complementary-slackness defect of the inequality multipliers.
    pub complementarity: f64,
}

/// Recompute feasibility, stationarity, and complementarity residuals.
pub fn kkt_residuals(problem: &QpProblem, solution: &QpSolution) -> KktResiduals {
    kkt_residuals_parts(problem, &solution.x, &solution.y_eq, &solution.z_ineq)
}

pub(crate) fn kkt_residuals_parts(
    problem: &QpProblem,
    x: &[f64],
    y_eq: &[f64],
    z_ineq: &[f64],
) -> KktResiduals {
    let me = problem.num_eq();
    let mi = problem.num_ineq();

    let mut ax = vec![0.0; me];
    problem.eq_mat.gemv(x, &mut ax);
    let mut primal: f64 = 0.0;
    for r in 0..me {
        primal = primal.max((ax[r] - problem.eq_rhs[r]).abs());
    }
    let mut cx = vec![0.0; mi];
    problem.ineq_mat.gemv(x, &mut cx);
    let mut complementarity: f64 = 0.0;
    for r in 0..mi {
        let lo = problem.ineq_lower[r];
        let hi = problem.ineq_upper[r];
        primal = primal.max((lo - cx[r]).max(0.0)).max((cx[r] - hi).max(0.0));
        let z = z_ineq[r];
        let up = if z > 0.0 {
            if hi.is_finite() {
                z * (hi - cx[r]).abs()
            } else {
                z
            }
        } else {
            0.0
        };
        let dn = if z < 0.0 {
            if lo.is_finite() {
                -z * (cx[r] - lo).abs()
            } else {
                -z
            }
        } else {
            0.0
        };
        complementarity = complementarity.max(up).max(dn);
    }

    let n = problem.num_vars();
    let mut station = problem.linear.clone();
    problem.quad.gemv(x, &mut station);
    problem.eq_mat.gemv_t(y_eq, &mut station);
    problem.ineq_mat.gemv_t(z_ineq, &mut station);
    debug_assert_eq!(station.len(), n);

    KktResiduals {
        primal,
        dual: inf_norm(&station),
        complementarity,
    }
}

/// Lagrangian dual value implied by a candidate point and its multipliers.
///
/// Equals the primal objective at an exact KKT point; the gap between the two
/// bounds the suboptimality certified by the returned duals.
pub fn dual_objective(problem: &QpProblem, solution: &QpSolution) -> f64 {
    let x = &solution.x;
    let mut val = problem.objective(x);
    let mut ax = vec![0.0; problem.num_eq()];
    problem.eq_mat.gemv(x, &mut ax);
    for r in 0..problem.num_eq() {
        val += solution.y_eq[r] * (ax[r] - problem.eq_rhs[r]);
    }
    let mut cx = vec![0.0; problem.num_ineq()];
    problem.ineq_mat.gemv(x, &mut cx);
    for r in 0..problem.num_ineq() {
        let z = solution.z_ineq[r];
        if z > 0.0 {
            val += z * (cx[r] - problem.ineq_upper[r]);
        } else if z < 0.0 {
            val += z * (cx[r] - problem.ineq_lower[r]);
        }
    }
    val
}

/// One-shot solve from a cold start.
pub fn solve_qp(problem: &QpProblem, settings: &SolverSettings) -> Result<QpSolution, QpError> {
    let mut solver = QpSolver::new(problem, settings.clone())?;
    Ok(solver.solve())
}

/// One-shot solve from a supplied primal/dual starting point.
pub fn solve_qp_warm(
    problem: &QpProblem,
    settings: &SolverSettings,
    x0: &[f64],
    y_eq0: &[f64],
    z_ineq0: &[f64],
) -> Result<QpSolution, QpError> {
    let mut solver = QpSolver::new(problem, settings.clone())?;
    solver.warm_start(x0, y_eq0, z_ineq0);
    Ok(solver.solve())
}
