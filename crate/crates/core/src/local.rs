//! Prosumer best response and the per-prosumer dual function built on it.
//!
//! Step 1 of every negotiation round solves, for prosumer i,
//!
//! ```text
//!     min_{[x,t] ∈ Ω}  J(x, t) + Σ_j ⟨λ_j, t_j⟩
//! ```
//!
//! The absolute-value and signed-price terms are handled by variable
//! splitting (p = p⁺ − p⁻, t = t⁺ − t⁻), which keeps the subproblem a plain
//! convex QP. The optimal objective is the individual dual function D(λ) and
//! the optimal trades are its gradient.

use crate::model::{LocalDecision, ModelError, PriceCurve, ProsumerModel};
use crate::qp::{
    CooBuilder, CscMatrix, QpProblem, QpSolution, QpSolver, QpStatus, SolverSettings,
};

#[derive(Debug, thiserror::Error)]
pub enum LocalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Qp(#[from] crate::qp::QpError),
    #[error("local QP did not solve: {0:?}")]
    NotSolved(QpStatus),
}

/// Trade prices λ as seen by one prosumer: one vector per peer slot.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPriceView {
    pub prices: Vec<Vec<f64>>,
}

impl DualPriceView {
    pub fn zeros(num_peers: usize, horizon: usize) -> Self {
        DualPriceView {
            prices: vec![vec![0.0; horizon]; num_peers],
        }
    }

    fn check_dims(&self, num_peers: usize, horizon: usize) -> Result<(), ModelError> {
        if self.prices.len() != num_peers || self.prices.iter().any(|v| v.len() != horizon) {
            return Err(ModelError::Dimension(format!(
                "price view must be {num_peers} x {horizon}"
            )));
        }
        Ok(())
    }
}

/// Index map of the split local variables.
///
/// Order: load, charge, discharge, soc, exchange⁺, exchange⁻, then per peer
/// slot the trade⁺ and trade⁻ blocks, all of horizon length.
#[derive(Debug, Clone, Copy)]
pub struct VariableLayout {
    pub horizon: usize,
    pub num_peers: usize,
}

impl VariableLayout {
    pub fn load(&self, tau: usize) -> usize {
        tau
    }
    pub fn charge(&self, tau: usize) -> usize {
        self.horizon + tau
    }
    pub fn discharge(&self, tau: usize) -> usize {
        2 * self.horizon + tau
    }
    pub fn soc(&self, tau: usize) -> usize {
        3 * self.horizon + tau
    }
    pub fn ex_pos(&self, tau: usize) -> usize {
        4 * self.horizon + tau
    }
    pub fn ex_neg(&self, tau: usize) -> usize {
        5 * self.horizon + tau
    }
    pub fn trade_pos(&self, slot: usize, tau: usize) -> usize {
        (6 + 2 * slot) * self.horizon + tau
    }
    pub fn trade_neg(&self, slot: usize, tau: usize) -> usize {
        (7 + 2 * slot) * self.horizon + tau
    }
    pub fn num_vars(&self) -> usize {
        (6 + 2 * self.num_peers) * self.horizon
    }
}

/// One prosumer's constraint/objective blocks in split variables, shared by
/// the local best response and the centralized reference assembly.
pub(crate) struct LocalBlocks {
    pub layout: VariableLayout,
    /// full-symmetric quadratic entries
    pub quad: Vec<(usize, usize, f64)>,
    /// linear cost without the price term
    pub linear: Vec<f64>,
    /// equality rows (balance then SOC recursion)
    pub eq: Vec<(usize, usize, f64)>,
    pub eq_rhs: Vec<f64>,
    /// inequality rows: daily-minimum row then one box row per variable
    pub ineq: Vec<(usize, usize, f64)>,
    pub ineq_lower: Vec<f64>,
    pub ineq_upper: Vec<f64>,
}

pub(crate) fn local_blocks(prosumer: &ProsumerModel, prices: &PriceCurve) -> LocalBlocks {
    let horizon = prosumer.pv.len();
    let layout = VariableLayout {
        horizon,
        num_peers: prosumer.num_peers(),
    };
    let n = layout.num_vars();
    let st = &prosumer.storage;

    let mut quad = Vec::new();
    let mut linear = vec![0.0; n];
    for tau in 0..horizon {
        quad.push((layout.load(tau), layout.load(tau), -2.0 * prosumer.utility.xi[tau]));
        linear[layout.load(tau)] = -prosumer.utility.rho[tau];
        linear[layout.charge(tau)] = st.aging;
        linear[layout.discharge(tau)] = st.aging;
        linear[layout.ex_pos(tau)] = prices.buy[tau];
        linear[layout.ex_neg(tau)] = -prices.sell[tau];
    }
    for (slot, link) in prosumer.peers.iter().enumerate() {
        for tau in 0..horizon {
            let tp = layout.trade_pos(slot, tau);
            let tn = layout.trade_neg(slot, tau);
            quad.push((tp, tp, 2.0 * link.alpha));
            quad.push((tn, tn, 2.0 * link.alpha));
            quad.push((tp, tn, -2.0 * link.alpha));
            quad.push((tn, tp, -2.0 * link.alpha));
            linear[tp] = link.beta;
            linear[tn] = link.beta;
        }
    }

    let mut eq = Vec::new();
    let mut eq_rhs = Vec::new();
    for tau in 0..horizon {
        // exchange = load + charge − discharge + Σ trades − pv
        let row = eq_rhs.len();
        eq.push((row, layout.ex_pos(tau), 1.0));
        eq.push((row, layout.ex_neg(tau), -1.0));
        eq.push((row, layout.load(tau), -1.0));
        eq.push((row, layout.charge(tau), -1.0));
        eq.push((row, layout.discharge(tau), 1.0));
        for slot in 0..prosumer.num_peers() {
            eq.push((row, layout.trade_pos(slot, tau), -1.0));
            eq.push((row, layout.trade_neg(slot, tau), 1.0));
        }
        eq_rhs.push(-prosumer.pv[tau]);
    }
    for tau in 0..horizon {
        // soc(τ) = soc(τ−1) + eff_ch·charge − eff_dis·discharge
        let row = eq_rhs.len();
        eq.push((row, layout.soc(tau), 1.0));
        eq.push((row, layout.charge(tau), -st.eff_ch));
        eq.push((row, layout.discharge(tau), st.eff_dis));
        if tau == 0 {
            eq_rhs.push(st.s_bound);
        } else {
            eq.push((row, layout.soc(tau - 1), -1.0));
            eq_rhs.push(0.0);
        }
    }

    let mut ineq = Vec::new();
    let mut ineq_lower = Vec::new();
    let mut ineq_upper = Vec::new();
    // daily minimum on total load
    for tau in 0..horizon {
        ineq.push((0, layout.load(tau), 1.0));
    }
    ineq_lower.push(prosumer.load.daily_min);
    ineq_upper.push(f64::INFINITY);
    // box per variable, in variable order
    let mut push_box = |idx: usize, lo: f64, hi: f64, ineq: &mut Vec<(usize, usize, f64)>| {
        let row = ineq_lower.len();
        ineq.push((row, idx, 1.0));
        ineq_lower.push(lo);
        ineq_upper.push(hi);
    };
    for tau in 0..horizon {
        push_box(
            layout.load(tau),
            prosumer.load.min[tau],
            prosumer.load.max[tau],
            &mut ineq,
        );
    }
    for tau in 0..horizon {
        push_box(layout.charge(tau), 0.0, st.p_ch_max, &mut ineq);
    }
    for tau in 0..horizon {
        push_box(layout.discharge(tau), 0.0, st.p_dis_max, &mut ineq);
    }
    for tau in 0..horizon {
        if tau == horizon - 1 {
            // boundary condition folded into the final SOC box
            push_box(layout.soc(tau), st.s_bound, st.s_bound, &mut ineq);
        } else {
            push_box(layout.soc(tau), st.s_min, st.s_max, &mut ineq);
        }
    }
    for tau in 0..horizon {
        push_box(
            layout.ex_pos(tau),
            prosumer.exchange.min[tau].max(0.0),
            prosumer.exchange.max[tau].max(0.0),
            &mut ineq,
        );
    }
    for tau in 0..horizon {
        push_box(
            layout.ex_neg(tau),
            (-prosumer.exchange.max[tau]).max(0.0),
            (-prosumer.exchange.min[tau]).max(0.0),
            &mut ineq,
        );
    }
    for slot in 0..prosumer.num_peers() {
        for tau in 0..horizon {
            push_box(layout.trade_pos(slot, tau), 0.0, f64::INFINITY, &mut ineq);
        }
        for tau in 0..horizon {
            push_box(layout.trade_neg(slot, tau), 0.0, f64::INFINITY, &mut ineq);
        }
    }

    LocalBlocks {
        layout,
        quad,
        linear,
        eq,
        eq_rhs,
        ineq,
        ineq_lower,
        ineq_upper,
    }
}

/// Linear cost of the local QP for a given price view.
fn linear_with_prices(
    blocks_linear: &[f64],
    layout: &VariableLayout,
    view: &DualPriceView,
) -> Vec<f64> {
    let mut q = blocks_linear.to_vec();
    for (slot, lam) in view.prices.iter().enumerate() {
        for (tau, &l) in lam.iter().enumerate() {
            q[layout.trade_pos(slot, tau)] += l;
            q[layout.trade_neg(slot, tau)] -= l;
        }
    }
    q
}

/// Build the local QP min J + ⟨λ, t⟩ over Ω in split variables.
pub fn assemble_local(
    prosumer: &ProsumerModel,
    prices: &PriceCurve,
    view: &DualPriceView,
) -> Result<QpProblem, LocalError> {
    let horizon = prosumer.pv.len();
    view.check_dims(prosumer.num_peers(), horizon)?;
    let blocks = local_blocks(prosumer, prices);
    let n = blocks.layout.num_vars();

    let mut pb = CooBuilder::new(n, n);
    for &(i, j, v) in &blocks.quad {
        pb.push(i, j, v);
    }
    let mut eb = CooBuilder::new(blocks.eq_rhs.len(), n);
    for &(r, c, v) in &blocks.eq {
        eb.push(r, c, v);
    }
    let mut ib = CooBuilder::new(blocks.ineq_lower.len(), n);
    for &(r, c, v) in &blocks.ineq {
        ib.push(r, c, v);
    }
    Ok(QpProblem {
        quad: pb.build(),
        linear: linear_with_prices(&blocks.linear, &blocks.layout, view),
        eq_mat: eb.build(),
        eq_rhs: blocks.eq_rhs.clone(),
        ineq_mat: ib.build(),
        ineq_lower: blocks.ineq_lower.clone(),
        ineq_upper: blocks.ineq_upper.clone(),
    })
}

/// A best response: the decision, its objective J + ⟨λ, t⟩ (= the dual value),
/// and how the QP solve went.
#[derive(Debug, Clone)]
pub struct BestResponse {
    pub decision: LocalDecision,
    pub objective: f64,
    pub status: QpStatus,
    pub iterations: usize,
}

/// Prepared per-prosumer solver, reused across negotiation rounds.
///
/// Only the linear cost changes with λ, so the KKT factorization and the
/// previous round's iterate are carried over.
pub struct LocalSolver {
    layout: VariableLayout,
    base_linear: Vec<f64>,
    solver: QpSolver,
}

impl LocalSolver {
    pub fn new(
        prosumer: &ProsumerModel,
        prices: &PriceCurve,
        settings: SolverSettings,
    ) -> Result<Self, LocalError> {
        let view = DualPriceView::zeros(prosumer.num_peers(), prosumer.pv.len());
        let problem = assemble_local(prosumer, prices, &view)?;
        let blocks = local_blocks(prosumer, prices);
        let solver = QpSolver::new(&problem, settings)?;
        Ok(LocalSolver {
            layout: blocks.layout,
            base_linear: blocks.linear,
            solver,
        })
    }

    pub fn solve(&mut self, view: &DualPriceView) -> Result<BestResponse, LocalError> {
        view.check_dims(self.layout.num_peers, self.layout.horizon)?;
        let q = linear_with_prices(&self.base_linear, &self.layout, view);
        self.solver.set_linear_cost(&q);
        let sol = self.solver.solve();
        Ok(extract_response(&self.layout, &sol))
    }
}

fn extract_response(layout: &VariableLayout, sol: &QpSolution) -> BestResponse {
    let horizon = layout.horizon;
    let mut decision = LocalDecision::zeros(horizon, layout.num_peers);
    for tau in 0..horizon {
        decision.load[tau] = sol.x[layout.load(tau)];
        decision.charge[tau] = sol.x[layout.charge(tau)];
        decision.discharge[tau] = sol.x[layout.discharge(tau)];
        decision.soc[tau] = sol.x[layout.soc(tau)];
        decision.exchange[tau] = sol.x[layout.ex_pos(tau)] - sol.x[layout.ex_neg(tau)];
    }
    for slot in 0..layout.num_peers {
        for tau in 0..horizon {
            decision.trades[slot][tau] =
                sol.x[layout.trade_pos(slot, tau)] - sol.x[layout.trade_neg(slot, tau)];
        }
    }
    BestResponse {
        decision,
        objective: sol.objective,
        status: sol.status,
        iterations: sol.iterations,
    }
}

/// One-shot best response from a cold start.
pub fn solve_local(
    prosumer: &ProsumerModel,
    prices: &PriceCurve,
    view: &DualPriceView,
    settings: &SolverSettings,
) -> Result<BestResponse, LocalError> {
    let mut solver = LocalSolver::new(prosumer, prices, settings.clone())?;
    solver.solve(view)
}

/// Individual dual function D(λ): the optimal value of the local problem.
pub fn dual_value(
    prosumer: &ProsumerModel,
    prices: &PriceCurve,
    view: &DualPriceView,
    settings: &SolverSettings,
) -> Result<f64, LocalError> {
    let response = solve_local(prosumer, prices, view, settings)?;
    if response.status != QpStatus::Solved {
        return Err(LocalError::NotSolved(response.status));
    }
    Ok(response.objective)
}

/// Gradient of D at λ: the optimal trades, one vector per peer slot.
pub fn dual_gradient(
    prosumer: &ProsumerModel,
    prices: &PriceCurve,
    view: &DualPriceView,
    settings: &SolverSettings,
) -> Result<Vec<Vec<f64>>, LocalError> {
    let response = solve_local(prosumer, prices, view, settings)?;
    if response.status != QpStatus::Solved {
        return Err(LocalError::NotSolved(response.status));
    }
    Ok(response.decision.trades)
}

/// Optimal cost with trading disabled: the standalone self-scheduling value.
pub fn standalone_cost(
    prosumer: &ProsumerModel,
    prices: &PriceCurve,
    settings: &SolverSettings,
) -> Result<f64, LocalError> {
    let mut isolated = prosumer.clone();
    isolated.peers.clear();
    dual_value(
        &isolated,
        prices,
        &DualPriceView::zeros(0, prosumer.pv.len()),
        settings,
    )
}
