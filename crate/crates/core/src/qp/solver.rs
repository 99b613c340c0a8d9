//! OSQP-style ADMM iteration with a cached quasi-definite KKT factorization.

use super::ldl::LdlFactor;
use super::sparse::{dot, inf_norm, reverse_cuthill_mckee, CooBuilder, CscMatrix};
use super::{kkt_residuals_parts, QpError, QpProblem, QpSolution, QpStatus, SolverSettings};

const EQ_RHO_SCALE: f64 = 1e3;
const FREE_RHO_SCALE: f64 = 1e-6;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const ADAPTIVE_RHO_INTERVAL: usize = 100;
const ADAPTIVE_RHO_TRIGGER: f64 = 5.0;
const POLISH_REG: f64 = 1e-9;
const POLISH_REFINE_STEPS: usize = 3;

/// Prepared solver holding the factorized KKT system and the current iterate.
///
/// The factorization depends only on (P, A, σ, ρ); updating the linear cost
/// and re-solving reuses it, and successive `solve` calls continue from the
/// previous iterate, so a slowly drifting sequence of problems (one per
/// negotiation round) costs a handful of iterations each.
pub struct QpSolver {
    problem: QpProblem,
    settings: SolverSettings,
    n: usize,
    me: usize,
    m: usize,
    /// stacked constraint matrix [A_eq; C_ineq]
    a: CscMatrix,
    lo: Vec<f64>,
    hi: Vec<f64>,
    is_eq: Vec<bool>,
    rho_vec: Vec<f64>,
    rho_inv: Vec<f64>,
    rho_base: f64,
    kkt_template: CscMatrix,
    /// positions of the −1/ρ diagonal inside `kkt_template.values`
    rho_slots: Vec<usize>,
    factor: LdlFactor,
    x: Vec<f64>,
    z: Vec<f64>,
    y: Vec<f64>,
}

impl QpSolver {
    pub fn new(problem: &QpProblem, settings: SolverSettings) -> Result<Self, QpError> {
        problem.validate()?;
        let n = problem.num_vars();
        let me = problem.num_eq();
        let mi = problem.num_ineq();
        let m = me + mi;

        let mut ab = CooBuilder::new(m, n);
        for j in 0..n {
            for p in problem.eq_mat.col_ptr[j]..problem.eq_mat.col_ptr[j + 1] {
                ab.push(problem.eq_mat.row_idx[p], j, problem.eq_mat.values[p]);
            }
            for p in problem.ineq_mat.col_ptr[j]..problem.ineq_mat.col_ptr[j + 1] {
                ab.push(me + problem.ineq_mat.row_idx[p], j, problem.ineq_mat.values[p]);
            }
        }
        let a = ab.build();

        let mut lo = Vec::with_capacity(m);
        let mut hi = Vec::with_capacity(m);
        lo.extend_from_slice(&problem.eq_rhs);
        hi.extend_from_slice(&problem.eq_rhs);
        lo.extend_from_slice(&problem.ineq_lower);
        hi.extend_from_slice(&problem.ineq_upper);
        let is_eq: Vec<bool> = (0..m).map(|r| lo[r] == hi[r] && lo[r].is_finite()).collect();

        let rho_base = settings.rho;
        let rho_vec: Vec<f64> = (0..m)
            .map(|r| {
                if is_eq[r] {
                    rho_base * EQ_RHO_SCALE
                } else if lo[r] == f64::NEG_INFINITY && hi[r] == f64::INFINITY {
                    rho_base * FREE_RHO_SCALE
                } else {
                    rho_base
                }
            })
            .collect();
        let rho_inv: Vec<f64> = rho_vec.iter().map(|&r| 1.0 / r).collect();

        let (kkt_template, rho_slots) =
            build_kkt(&problem.quad, &a, settings.sigma, &rho_vec, n, m);
        let perm = reverse_cuthill_mckee(&kkt_template);
        let factor = LdlFactor::new(&kkt_template, Some(perm))?;
        if factor.positive_pivots() != n {
            return Err(QpError::NotConvex);
        }

        let x = vec![0.0; n];
        let z: Vec<f64> = (0..m).map(|r| 0.0f64.clamp(lo[r], hi[r])).collect();
        let y = vec![0.0; m];

        Ok(QpSolver {
            problem: problem.clone(),
            settings,
            n,
            me,
            m,
            a,
            lo,
            hi,
            is_eq,
            rho_vec,
            rho_inv,
            rho_base,
            kkt_template,
            rho_slots,
            factor,
            x,
            z,
            y,
        })
    }

    /// Replace the linear cost term; the factorization is unaffected.
    pub fn set_linear_cost(&mut self, q: &[f64]) {
        assert_eq!(q.len(), self.n, "linear cost has wrong length");
        self.problem.linear.copy_from_slice(q);
    }

    /// Start the next solve from a supplied primal/dual point.
    pub fn warm_start(&mut self, x: &[f64], y_eq: &[f64], z_ineq: &[f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y_eq.len(), self.me);
        assert_eq!(z_ineq.len(), self.m - self.me);
        self.x.copy_from_slice(x);
        self.y[..self.me].copy_from_slice(y_eq);
        self.y[self.me..].copy_from_slice(z_ineq);
        let mut ax = vec![0.0; self.m];
        self.a.gemv(x, &mut ax);
        for r in 0..self.m {
            self.z[r] = ax[r].clamp(self.lo[r], self.hi[r]);
        }
    }

    fn update_rho(&mut self, new_base: f64) -> Result<(), QpError> {
        self.rho_base = new_base;
        for r in 0..self.m {
            self.rho_vec[r] = if self.is_eq[r] {
                new_base * EQ_RHO_SCALE
            } else if self.lo[r] == f64::NEG_INFINITY && self.hi[r] == f64::INFINITY {
                new_base * FREE_RHO_SCALE
            } else {
                new_base
            };
            self.rho_inv[r] = 1.0 / self.rho_vec[r];
            self.kkt_template.values[self.rho_slots[r]] = -self.rho_inv[r];
        }
        self.factor.refactor(&self.kkt_template)?;
        Ok(())
    }

    /// Run the ADMM iteration from the current iterate.
    pub fn solve(&mut self) -> QpSolution {
        let n = self.n;
        let m = self.m;
        let sigma = self.settings.sigma;
        let alpha = self.settings.alpha;
        let check_every = self.settings.check_every.max(1);

        let mut rhs = vec![0.0; n + m];
        let mut ax = vec![0.0; m];
        let mut px = vec![0.0; n];
        let mut aty = vec![0.0; n];
        let q_norm = inf_norm(&self.problem.linear);

        let mut status = QpStatus::MaxIterations;
        let mut iterations = 0;
        let mut x_chk = self.x.clone();
        let mut y_chk = self.y.clone();
        let mut last_rho_iter = 0usize;

        for k in 1..=self.settings.max_iter {
            iterations = k;
            for i in 0..n {
                rhs[i] = sigma * self.x[i] - self.problem.linear[i];
            }
            for r in 0..m {
                rhs[n + r] = self.z[r] - self.rho_inv[r] * self.y[r];
            }
            self.factor.solve_in_place(&mut rhs);
            for i in 0..n {
                self.x[i] = alpha * rhs[i] + (1.0 - alpha) * self.x[i];
            }
            for r in 0..m {
                let z_tilde = self.z[r] + self.rho_inv[r] * (rhs[n + r] - self.y[r]);
                let w = alpha * z_tilde + (1.0 - alpha) * self.z[r];
                let z_new = (w + self.rho_inv[r] * self.y[r]).clamp(self.lo[r], self.hi[r]);
                self.y[r] += self.rho_vec[r] * (w - z_new);
                self.z[r] = z_new;
            }

            if k % check_every != 0 && k != self.settings.max_iter {
                continue;
            }

            ax.iter_mut().for_each(|v| *v = 0.0);
            self.a.gemv(&self.x, &mut ax);
            px.iter_mut().for_each(|v| *v = 0.0);
            self.problem.quad.gemv(&self.x, &mut px);
            aty.iter_mut().for_each(|v| *v = 0.0);
            self.a.gemv_t(&self.y, &mut aty);

            let mut r_prim: f64 = 0.0;
            for r in 0..m {
                r_prim = r_prim.max((ax[r] - self.z[r]).abs());
            }
            let mut r_dual: f64 = 0.0;
            for i in 0..n {
                r_dual = r_dual.max((px[i] + self.problem.linear[i] + aty[i]).abs());
            }
            let eps_prim = self.settings.abs_tol
                + self.settings.rel_tol * inf_norm(&ax).max(inf_norm(&self.z));
            let eps_dual = self.settings.abs_tol
                + self.settings.rel_tol * inf_norm(&px).max(inf_norm(&aty)).max(q_norm);

            if r_prim <= eps_prim && r_dual <= eps_dual {
                status = QpStatus::Solved;
                break;
            }

            if self.detect_primal_infeasible(&y_chk) {
                status = QpStatus::PrimalInfeasible;
                break;
            }
            if self.detect_dual_infeasible(&x_chk) {
                status = QpStatus::DualInfeasible;
                break;
            }
            x_chk.copy_from_slice(&self.x);
            y_chk.copy_from_slice(&self.y);

            if self.settings.adaptive_rho && k >= last_rho_iter + ADAPTIVE_RHO_INTERVAL {
                let prim_scale = inf_norm(&ax).max(inf_norm(&self.z)).max(1e-12);
                let dual_scale = inf_norm(&px).max(inf_norm(&aty)).max(q_norm).max(1e-12);
                let ratio = ((r_prim / prim_scale) / (r_dual / dual_scale).max(1e-30)).sqrt();
                if ratio > ADAPTIVE_RHO_TRIGGER || ratio < 1.0 / ADAPTIVE_RHO_TRIGGER {
                    let new_base = (self.rho_base * ratio).clamp(RHO_MIN, RHO_MAX);
                    if self.update_rho(new_base).is_err() {
                        // keep iterating with the previous factor
                    }
                    last_rho_iter = k;
                }
            }
        }

        let mut x = self.x.clone();
        let mut y_eq = self.y[..self.me].to_vec();
        let mut z_ineq = self.y[self.me..].to_vec();
        let mut res = kkt_residuals_parts(&self.problem, &x, &y_eq, &z_ineq);
        let mut polished = false;

        if self.settings.polish
            && matches!(status, QpStatus::Solved | QpStatus::MaxIterations)
        {
            if let Some((xp, yp)) = self.try_polish() {
                let yp_eq = yp[..self.me].to_vec();
                let zp_ineq = yp[self.me..].to_vec();
                let res_p = kkt_residuals_parts(&self.problem, &xp, &yp_eq, &zp_ineq);
                // complementarity in the comparison guards against pinning a
                // row whose multiplier was only sign-noise
                if res_p.primal.max(res_p.dual).max(res_p.complementarity)
                    < res.primal.max(res.dual).max(res.complementarity)
                {
                    x = xp;
                    y_eq = yp_eq;
                    z_ineq = zp_ineq;
                    res = res_p;
                    polished = true;
                    if status == QpStatus::MaxIterations
                        && res.primal <= self.settings.abs_tol
                        && res.dual <= self.settings.abs_tol
                    {
                        status = QpStatus::Solved;
                    }
                    // adopt the refined point as the warm state
                    self.x.copy_from_slice(&x);
                    self.y[..self.me].copy_from_slice(&y_eq);
                    self.y[self.me..].copy_from_slice(&z_ineq);
                    let mut axp = vec![0.0; self.m];
                    self.a.gemv(&x, &mut axp);
                    for r in 0..self.m {
                        self.z[r] = axp[r].clamp(self.lo[r], self.hi[r]);
                    }
                }
            }
        }

        let objective = self.problem.objective(&x);
        QpSolution {
            x,
            y_eq,
            z_ineq,
            status,
            primal_res: res.primal,
            dual_res: res.dual,
            objective,
            iterations,
            polished,
        }
    }

    fn detect_primal_infeasible(&self, y_prev: &[f64]) -> bool {
        let m = self.m;
        let mut dy = vec![0.0; m];
        for r in 0..m {
            dy[r] = self.y[r] - y_prev[r];
        }
        let norm = inf_norm(&dy);
        if norm <= 1e-14 {
            return false;
        }
        let eps = self.settings.infeas_tol * norm;
        let mut at_dy = vec![0.0; self.n];
        self.a.gemv_t(&dy, &mut at_dy);
        if inf_norm(&at_dy) > eps {
            return false;
        }
        let mut support = 0.0;
        for r in 0..m {
            let pos = dy[r].max(0.0);
            let neg = dy[r].min(0.0);
            if pos > 0.0 {
                if self.hi[r].is_finite() {
                    support += self.hi[r] * pos;
                } else {
                    return false;
                }
            }
            if neg < 0.0 {
                if self.lo[r].is_finite() {
                    support += self.lo[r] * neg;
                } else {
                    return false;
                }
            }
        }
        support <= -eps
    }

    fn detect_dual_infeasible(&self, x_prev: &[f64]) -> bool {
        let n = self.n;
        let mut dx = vec![0.0; n];
        for i in 0..n {
            dx[i] = self.x[i] - x_prev[i];
        }
        let norm = inf_norm(&dx);
        if norm <= 1e-14 {
            return false;
        }
        let eps = self.settings.infeas_tol * norm;
        let mut pdx = vec![0.0; n];
        self.problem.quad.gemv(&dx, &mut pdx);
        if inf_norm(&pdx) > eps {
            return false;
        }
        if dot(&self.problem.linear, &dx) > -eps {
            return false;
        }
        let mut adx = vec![0.0; self.m];
        self.a.gemv(&dx, &mut adx);
        for r in 0..self.m {
            if self.hi[r].is_finite() && adx[r] > eps {
                return false;
            }
            if self.lo[r].is_finite() && adx[r] < -eps {
                return false;
            }
        }
        true
    }

    /// Active-set refinement: re-solve the equality-constrained QP on the
    /// active rows implied by the multiplier signs, with iterative refinement
    /// against the unregularized system.
    fn try_polish(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let n = self.n;
        let mut cx = vec![0.0; self.m];
        self.a.gemv(&self.x, &mut cx);
        let mut act_rows: Vec<usize> = Vec::new();
        let mut act_rhs: Vec<f64> = Vec::new();
        for r in 0..self.m {
            if self.is_eq[r] {
                act_rows.push(r);
                act_rhs.push(self.lo[r]);
                continue;
            }
            // a row is pinned only when the multiplier sign and the slack agree
            let near_lo =
                self.lo[r].is_finite() && cx[r] - self.lo[r] <= 1e-6 * (1.0 + self.lo[r].abs());
            let near_hi =
                self.hi[r].is_finite() && self.hi[r] - cx[r] <= 1e-6 * (1.0 + self.hi[r].abs());
            if self.y[r] < 0.0 && near_lo {
                act_rows.push(r);
                act_rhs.push(self.lo[r]);
            } else if self.y[r] > 0.0 && near_hi {
                act_rows.push(r);
                act_rhs.push(self.hi[r]);
            }
        }
        let na = act_rows.len();
        let mut act_index = vec![usize::MAX; self.m];
        for (k, &r) in act_rows.iter().enumerate() {
            act_index[r] = k;
        }

        // A restricted to active rows
        let mut ab = CooBuilder::new(na, n);
        for j in 0..n {
            for p in self.a.col_ptr[j]..self.a.col_ptr[j + 1] {
                let r = self.a.row_idx[p];
                if act_index[r] != usize::MAX {
                    ab.push(act_index[r], j, self.a.values[p]);
                }
            }
        }
        let a_act = ab.build();

        let size = n + na;
        let mut kb = CooBuilder::new(size, size);
        for j in 0..n {
            for p in self.problem.quad.col_ptr[j]..self.problem.quad.col_ptr[j + 1] {
                let i = self.problem.quad.row_idx[p];
                if i <= j {
                    kb.push(i, j, self.problem.quad.values[p]);
                }
            }
            kb.push(j, j, POLISH_REG);
        }
        for j in 0..n {
            for p in a_act.col_ptr[j]..a_act.col_ptr[j + 1] {
                kb.push(j, n + a_act.row_idx[p], a_act.values[p]);
            }
        }
        for r in 0..na {
            kb.push(n + r, n + r, -POLISH_REG);
        }
        let kkt = kb.build();
        let perm = reverse_cuthill_mckee(&kkt);
        let mut factor = LdlFactor::new(&kkt, Some(perm)).ok()?;

        let mut rhs = vec![0.0; size];
        for i in 0..n {
            rhs[i] = -self.problem.linear[i];
        }
        rhs[n..size].copy_from_slice(&act_rhs);

        let mut sol = rhs.clone();
        factor.solve_in_place(&mut sol);
        // refinement against the unregularized KKT
        let mut resid = vec![0.0; size];
        for _ in 0..POLISH_REFINE_STEPS {
            let (xs, ys) = sol.split_at(n);
            for i in 0..size {
                resid[i] = rhs[i];
            }
            let mut pxs = vec![0.0; n];
            self.problem.quad.gemv(xs, &mut pxs);
            let mut at_ys = vec![0.0; n];
            a_act.gemv_t(ys, &mut at_ys);
            for i in 0..n {
                resid[i] -= pxs[i] + at_ys[i];
            }
            let mut a_xs = vec![0.0; na];
            a_act.gemv(xs, &mut a_xs);
            for r in 0..na {
                resid[n + r] -= a_xs[r];
            }
            factor.solve_in_place(&mut resid);
            for i in 0..size {
                sol[i] += resid[i];
            }
        }

        let x = sol[..n].to_vec();
        let mut y = vec![0.0; self.m];
        for (k, &r) in act_rows.iter().enumerate() {
            y[r] = sol[n + k];
        }
        if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some((x, y))
    }
}

/// Upper-triangle KKT template and the value slots of the −1/ρ diagonal.
fn build_kkt(
    p_full: &CscMatrix,
    a: &CscMatrix,
    sigma: f64,
    rho_vec: &[f64],
    n: usize,
    m: usize,
) -> (CscMatrix, Vec<usize>) {
    let mut b = CooBuilder::new(n + m, n + m);
    for j in 0..n {
        for p in p_full.col_ptr[j]..p_full.col_ptr[j + 1] {
            let i = p_full.row_idx[p];
            if i <= j {
                b.push(i, j, p_full.values[p]);
            }
        }
        b.push(j, j, sigma);
    }
    for j in 0..n {
        for p in a.col_ptr[j]..a.col_ptr[j + 1] {
            b.push(j, n + a.row_idx[p], a.values[p]);
        }
    }
    for r in 0..m {
        b.push(n + r, n + r, -1.0 / rho_vec[r]);
    }
    let kkt = b.build();
    // the diagonal is the last entry of each trailing column
    let rho_slots: Vec<usize> = (0..m).map(|r| kkt.col_ptr[n + r + 1] - 1).collect();
    for (r, &slot) in rho_slots.iter().enumerate() {
        debug_assert_eq!(kkt.row_idx[slot], n + r);
    }
    (kkt, rho_slots)
}
