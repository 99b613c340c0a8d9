//! Domain types for prosumers, the trading graph, and per-prosumer cost and
//! constraint evaluation.
//!
//! Units are fixed across the crate: power in kW, energy in kWh, money in ¢,
//! one trading period per hour. Costs follow the case-study composition: a
//! wholesale exchange term `q_b·[p]⁺ + q_s·[p]⁻`, the negated quadratic load
//! utility, a linear storage-aging term, and a per-peer trading fee
//! `α t² + β |t|` summed over peers and periods.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

/// Trading horizon: periods τ = 1..=horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: usize,
}

impl TimeGrid {
    pub fn new(horizon: usize) -> Result<Self, ModelError> {
        if horizon == 0 {
            return Err(ModelError::Invariant("horizon must be at least 1".into()));
        }
        Ok(TimeGrid { horizon })
    }
}

/// Quadratic load utility V(p) = Σ_τ xi_τ p_τ² + rho_τ p_τ, with xi < 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utility {
    pub xi: Vec<f64>,
    pub rho: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSpec {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// Minimum total energy over the horizon (kWh).
    pub daily_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageSpec {
    pub cap: f64,
    pub s_min: f64,
    pub s_max: f64,
    /// Boundary state of charge: s(0) = s(horizon) = s_bound.
    pub s_bound: f64,
    pub eff_ch: f64,
    pub eff_dis: f64,
    pub p_ch_max: f64,
    pub p_dis_max: f64,
    /// Unit aging cost (¢/kW) applied to charge plus discharge power.
    pub aging: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeSpec {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Fee coefficients prosumer `i` faces when trading with peer `id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeerLink {
    pub id: usize,
    /// Quadratic fee coefficient, ¢/(kW)², strictly positive.
    pub alpha: f64,
    /// Linear fee coefficient on |t|, ¢/kW, nonnegative.
    pub beta: f64,
}

/// All private data of one prosumer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProsumerModel {
    pub id: usize,
    pub utility: Utility,
    pub load: LoadSpec,
    pub storage: StorageSpec,
    pub exchange: ExchangeSpec,
    pub pv: Vec<f64>,
    /// Sorted by peer id.
    pub peers: Vec<PeerLink>,
}

impl ProsumerModel {
    pub fn num_peers(&self) -> usize {
        self.peers.len()
    }

    /// Index of `peer` in the sorted peer list.
    pub fn peer_slot(&self, peer: usize) -> Option<usize> {
        self.peers.binary_search_by_key(&peer, |l| l.id).ok()
    }

    pub fn validate(&self, horizon: usize) -> Result<(), ModelError> {
        let check_len = |name: &str, len: usize| {
            if len != horizon {
                Err(ModelError::Dimension(format!(
                    "prosumer {}: {} has length {}, expected {}",
                    self.id, name, len, horizon
                )))
            } else {
                Ok(())
            }
        };
        check_len("utility.xi", self.utility.xi.len())?;
        check_len("utility.rho", self.utility.rho.len())?;
        check_len("load.min", self.load.min.len())?;
        check_len("load.max", self.load.max.len())?;
        check_len("exchange.min", self.exchange.min.len())?;
        check_len("exchange.max", self.exchange.max.len())?;
        check_len("pv", self.pv.len())?;

        let inv = |cond: bool, msg: String| {
            if cond {
                Ok(())
            } else {
                Err(ModelError::Invariant(msg))
            }
        };
        for (tau, &xi) in self.utility.xi.iter().enumerate() {
            inv(
                xi < 0.0,
                format!("prosumer {}: xi[{}] must be negative", self.id, tau),
            )?;
        }
        for link in &self.peers {
            inv(
                link.alpha > 0.0,
                format!(
                    "prosumer {}: alpha for peer {} must be positive",
                    self.id, link.id
                ),
            )?;
            inv(
                link.beta >= 0.0,
                format!(
                    "prosumer {}: beta for peer {} must be nonnegative",
                    self.id, link.id
                ),
            )?;
        }
        for w in self.peers.windows(2) {
            inv(
                w[0].id < w[1].id,
                format!("prosumer {}: peers must be sorted and distinct", self.id),
            )?;
        }
        for tau in 0..horizon {
            inv(
                self.load.min[tau] <= self.load.max[tau],
                format!("prosumer {}: load bounds inverted at {}", self.id, tau),
            )?;
            inv(
                self.exchange.min[tau] <= self.exchange.max[tau],
                format!("prosumer {}: exchange bounds inverted at {}", self.id, tau),
            )?;
        }
        let st = &self.storage;
        inv(
            st.s_min <= st.s_bound && st.s_bound <= st.s_max,
            format!("prosumer {}: boundary SOC outside SOC window", self.id),
        )?;
        inv(
            st.eff_ch > 0.0 && st.eff_ch <= 1.0 && st.eff_dis > 0.0 && st.eff_dis <= 1.0,
            format!("prosumer {}: efficiencies must lie in (0,1]", self.id),
        )?;
        inv(
            st.p_ch_max >= 0.0 && st.p_dis_max >= 0.0 && st.cap >= 0.0,
            format!("prosumer {}: storage caps must be nonnegative", self.id),
        )?;
        Ok(())
    }
}

/// Wholesale price curves (¢/kW), with buy ≥ sell ≥ 0 per period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceCurve {
    pub buy: Vec<f64>,
    pub sell: Vec<f64>,
}

/// The trading community.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub time: TimeGrid,
    pub prices: PriceCurve,
    pub prosumers: Vec<ProsumerModel>,
    /// Undirected potential trading connections, canonical (i, j) with i < j.
    pub edges: Vec<(usize, usize)>,
}

impl Scenario {
    pub fn num_prosumers(&self) -> usize {
        self.prosumers.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let horizon = self.time.horizon;
        if horizon == 0 {
            return Err(ModelError::Invariant("horizon must be at least 1".into()));
        }
        if self.prices.buy.len() != horizon || self.prices.sell.len() != horizon {
            return Err(ModelError::Dimension(
                "price curves must match the horizon".into(),
            ));
        }
        for tau in 0..horizon {
            if !(self.prices.buy[tau] >= self.prices.sell[tau] && self.prices.sell[tau] >= 0.0) {
                return Err(ModelError::Invariant(format!(
                    "prices must satisfy buy >= sell >= 0 at period {}",
                    tau
                )));
            }
        }
        for (idx, p) in self.prosumers.iter().enumerate() {
            if p.id != idx {
                return Err(ModelError::Invariant(format!(
                    "prosumer ids must be dense and ordered, found {} at {}",
                    p.id, idx
                )));
            }
            p.validate(horizon)?;
        }
        let n = self.prosumers.len();
        // edges consistent with every peer list, peer relation symmetric
        let mut from_edges = std::collections::BTreeSet::new();
        for &(i, j) in &self.edges {
            if i >= j || j >= n {
                return Err(ModelError::Invariant(format!(
                    "edge ({}, {}) is not canonical or out of range",
                    i, j
                )));
            }
            if !from_edges.insert((i, j)) {
                return Err(ModelError::Invariant(format!(
                    "duplicate edge ({}, {})",
                    i, j
                )));
            }
        }
        let mut from_peers = std::collections::BTreeSet::new();
        for p in &self.prosumers {
            for link in &p.peers {
                if link.id >= n || link.id == p.id {
                    return Err(ModelError::Invariant(format!(
                        "prosumer {} lists invalid peer {}",
                        p.id, link.id
                    )));
                }
                if self.prosumers[link.id].peer_slot(p.id).is_none() {
                    return Err(ModelError::Invariant(format!(
                        "peer relation not symmetric between {} and {}",
                        p.id, link.id
                    )));
                }
                from_peers.insert((p.id.min(link.id), p.id.max(link.id)));
            }
        }
        if from_peers != from_edges {
            return Err(ModelError::Invariant(
                "edge list inconsistent with peer lists".into(),
            ));
        }
        Ok(())
    }
}

/// One prosumer's full decision: the device schedule and per-peer trades.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalDecision {
    pub load: Vec<f64>,
    pub charge: Vec<f64>,
    pub discharge: Vec<f64>,
    pub soc: Vec<f64>,
    pub exchange: Vec<f64>,
    /// One vector per peer, in peer-slot order.
    pub trades: Vec<Vec<f64>>,
}

impl LocalDecision {
    pub fn zeros(horizon: usize, num_peers: usize) -> Self {
        LocalDecision {
            load: vec![0.0; horizon],
            charge: vec![0.0; horizon],
            discharge: vec![0.0; horizon],
            soc: vec![0.0; horizon],
            exchange: vec![0.0; horizon],
            trades: vec![vec![0.0; horizon]; num_peers],
        }
    }

    pub fn check_dims(&self, horizon: usize, num_peers: usize) -> Result<(), ModelError> {
        let ok = self.load.len() == horizon
            && self.charge.len() == horizon
            && self.discharge.len() == horizon
            && self.soc.len() == horizon
            && self.exchange.len() == horizon
            && self.trades.len() == num_peers
            && self.trades.iter().all(|t| t.len() == horizon);
        if ok {
            Ok(())
        } else {
            Err(ModelError::Dimension(
                "decision not dimensioned to the prosumer".into(),
            ))
        }
    }

    /// Device schedule stacked in (load, charge, discharge, soc, exchange) order.
    pub fn x_stacked(&self) -> Vec<f64> {
        let mut out =
            Vec::with_capacity(self.load.len() * 5);
        out.extend_from_slice(&self.load);
        out.extend_from_slice(&self.charge);
        out.extend_from_slice(&self.discharge);
        out.extend_from_slice(&self.soc);
        out.extend_from_slice(&self.exchange);
        out
    }

    /// Trades stacked in peer-slot order.
    pub fn t_stacked(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for t in &self.trades {
            out.extend_from_slice(t);
        }
        out
    }
}

/// Total cost J(x, t) of a decision, in ¢.
pub fn evaluate_cost(
    prosumer: &ProsumerModel,
    prices: &PriceCurve,
    decision: &LocalDecision,
) -> Result<f64, ModelError> {
    let horizon = prosumer.pv.len();
    decision.check_dims(horizon, prosumer.num_peers())?;
    if prices.buy.len() != horizon || prices.sell.len() != horizon {
        return Err(ModelError::Dimension("price curves mismatch horizon".into()));
    }
    let mut cost = 0.0;
    for tau in 0..horizon {
        let p = decision.exchange[tau];
        cost += prices.buy[tau] * p.max(0.0) + prices.sell[tau] * p.min(0.0);
        let pl = decision.load[tau];
        cost -= prosumer.utility.xi[tau] * pl * pl + prosumer.utility.rho[tau] * pl;
        cost += prosumer.storage.aging * (decision.charge[tau] + decision.discharge[tau]);
    }
    for (link, t) in prosumer.peers.iter().zip(&decision.trades) {
        for &v in t {
            cost += (link.alpha * v.abs() + link.beta) * v.abs();
        }
    }
    Ok(cost)
}

/// Constraint families of the feasible set Ω.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintKind {
    PowerBalance,
    SocRecursion,
    SocBounds,
    SocBoundary,
    LoadBounds,
    DailyLoadMin,
    ExchangeBounds,
    ChargeBounds,
    DischargeBounds,
}

impl std::fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ConstraintKind::PowerBalance => "power-balance",
            ConstraintKind::SocRecursion => "soc-recursion",
            ConstraintKind::SocBounds => "soc-bounds",
            ConstraintKind::SocBoundary => "soc-boundary",
            ConstraintKind::LoadBounds => "load-bounds",
            ConstraintKind::DailyLoadMin => "daily-load-min",
            ConstraintKind::ExchangeBounds => "exchange-bounds",
            ConstraintKind::ChargeBounds => "charge-bounds",
            ConstraintKind::DischargeBounds => "discharge-bounds",
        };
        f.write_str(s)
    }
}

/// One constraint violation: which constraint, at which period, by how much
/// (absolute, in kW or kWh).
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub constraint: ConstraintKind,
    pub period: Option<usize>,
    pub magnitude: f64,
}

/// Check a decision against Ω within `tol`; empty report means feasible.
pub fn check_feasible(
    prosumer: &ProsumerModel,
    decision: &LocalDecision,
    tol: f64,
) -> Result<Vec<Violation>, ModelError> {
    let horizon = prosumer.pv.len();
    decision.check_dims(horizon, prosumer.num_peers())?;
    let mut report = Vec::new();
    let mut push = |constraint: ConstraintKind, period: Option<usize>, magnitude: f64| {
        if magnitude > tol {
            report.push(Violation {
                constraint,
                period,
                magnitude,
            });
        }
    };

    let st = &prosumer.storage;
    for tau in 0..horizon {
        let trade_sum: f64 = decision.trades.iter().map(|t| t[tau]).sum();
        let balance = decision.exchange[tau]
            - (decision.load[tau] + decision.charge[tau] - decision.discharge[tau] + trade_sum
                - prosumer.pv[tau]);
        push(ConstraintKind::PowerBalance, Some(tau), balance.abs());

        let prev = if tau == 0 {
            st.s_bound
        } else {
            decision.soc[tau - 1]
        };
        let recursion = decision.soc[tau]
            - (prev + st.eff_ch * decision.charge[tau] - st.eff_dis * decision.discharge[tau]);
        push(ConstraintKind::SocRecursion, Some(tau), recursion.abs());

        push(
            ConstraintKind::SocBounds,
            Some(tau),
            (st.s_min - decision.soc[tau]).max(decision.soc[tau] - st.s_max),
        );
        push(
            ConstraintKind::LoadBounds,
            Some(tau),
            (prosumer.load.min[tau] - decision.load[tau])
                .max(decision.load[tau] - prosumer.load.max[tau]),
        );
        push(
            ConstraintKind::ExchangeBounds,
            Some(tau),
            (prosumer.exchange.min[tau] - decision.exchange[tau])
                .max(decision.exchange[tau] - prosumer.exchange.max[tau]),
        );
        push(
            ConstraintKind::ChargeBounds,
            Some(tau),
            (-decision.charge[tau]).max(decision.charge[tau] - st.p_ch_max),
        );
        push(
            ConstraintKind::DischargeBounds,
            Some(tau),
            (-decision.discharge[tau]).max(decision.discharge[tau] - st.p_dis_max),
        );
    }
    push(
        ConstraintKind::SocBoundary,
        None,
        (decision.soc[horizon - 1] - st.s_bound).abs(),
    );
    let total_load: f64 = decision.load.iter().sum();
    push(
        ConstraintKind::DailyLoadMin,
        None,
        prosumer.load.daily_min - total_load,
    );
    Ok(report)
}

/// Strong-convexity modulus of J in the trade variables: the quadratic fee is
/// the only trade curvature, so m = 2·min_peer α. Isolated prosumers have no
/// trade variables and report +∞ (their dual block is empty).
pub fn strong_convexity_modulus(prosumer: &ProsumerModel) -> Result<f64, ModelError> {
    let mut m = f64::INFINITY;
    for link in &prosumer.peers {
        if link.alpha <= 0.0 {
            return Err(ModelError::Invariant(format!(
                "prosumer {}: alpha for peer {} must be positive for strong convexity",
                prosumer.id, link.id
            )));
        }
        m = m.min(2.0 * link.alpha);
    }
    Ok(m)
}

/// Smoothness constants of the dual functions.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzConstants {
    /// Lᵢ = 1/mᵢ per prosumer (0 for isolated prosumers).
    pub per_prosumer: Vec<f64>,
    /// L = Σᵢ Lᵢ
    pub total: f64,
    /// L̄ = maxᵢ Lᵢ
    pub max: f64,
}

pub fn lipschitz_constants(scenario: &Scenario) -> Result<LipschitzConstants, ModelError> {
    let mut per = Vec::with_capacity(scenario.prosumers.len());
    for p in &scenario.prosumers {
        let m = strong_convexity_modulus(p)?;
        per.push(if m.is_finite() { 1.0 / m } else { 0.0 });
    }
    let total = per.iter().sum();
    let max = per.iter().fold(0.0f64, |a, &b| a.max(b));
    Ok(LipschitzConstants {
        per_prosumer: per,
        total,
        max,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn test_prosumer(
        id: usize,
        horizon: usize,
        peers: &[(usize, f64, f64)],
    ) -> ProsumerModel {
        ProsumerModel {
            id,
            utility: Utility {
                xi: vec![-1.0; horizon],
                rho: vec![0.0; horizon],
            },
            load: LoadSpec {
                min: vec![0.0; horizon],
                max: vec![10.0; horizon],
                daily_min: 0.0,
            },
            storage: StorageSpec {
                cap: 10.0,
                s_min: 0.0,
                s_max: 10.0,
                s_bound: 0.0,
                eff_ch: 1.0,
                eff_dis: 1.0,
                p_ch_max: 5.0,
                p_dis_max: 5.0,
                aging: 0.0,
            },
            exchange: ExchangeSpec {
                min: vec![-100.0; horizon],
                max: vec![100.0; horizon],
            },
            pv: vec![0.0; horizon],
            peers: peers
                .iter()
                .map(|&(id, alpha, beta)| PeerLink { id, alpha, beta })
                .collect(),
        }
    }

    fn flat_prices(horizon: usize, buy: f64, sell: f64) -> PriceCurve {
        PriceCurve {
            buy: vec![buy; horizon],
            sell: vec![sell; horizon],
        }
    }

    #[test]
    fn zero_decision_zero_pv_costs_nothing() {
        let p = test_prosumer(0, 3, &[(1, 1.0, 1.0)]);
        let d = LocalDecision::zeros(3, 1);
        let cost = evaluate_cost(&p, &flat_prices(3, 10.0, 5.0), &d).unwrap();
        assert_eq!(cost, 0.0);
    }

    #[test]
    fn single_period_purchase_costs_buy_price() {
        let p = test_prosumer(0, 1, &[]);
        let mut d = LocalDecision::zeros(1, 0);
        d.exchange[0] = 1.0;
        let cost = evaluate_cost(&p, &flat_prices(1, 10.0, 5.0), &d).unwrap();
        assert!((cost - 10.0).abs() < 1e-12);
    }

    #[test]
    fn selling_earns_revenue() {
        let p = test_prosumer(0, 1, &[]);
        let mut d = LocalDecision::zeros(1, 0);
        d.exchange[0] = -2.0;
        let cost = evaluate_cost(&p, &flat_prices(1, 10.0, 5.0), &d).unwrap();
        assert!((cost - (-10.0)).abs() < 1e-12);
    }

    #[test]
    fn fee_formula_matches_case_study_coefficients() {
        // alpha = 1, beta = 1, single trade of 2 kW: (1·2 + 1)·2 = 6 ¢
        let p = test_prosumer(0, 1, &[(1, 1.0, 1.0)]);
        let mut d = LocalDecision::zeros(1, 1);
        d.trades[0][0] = 2.0;
        let cost = evaluate_cost(&p, &flat_prices(1, 0.0, 0.0), &d).unwrap();
        assert!((cost - 6.0).abs() < 1e-12);
        // sign of the trade does not matter for the fee
        d.trades[0][0] = -2.0;
        let cost = evaluate_cost(&p, &flat_prices(1, 0.0, 0.0), &d).unwrap();
        assert!((cost - 6.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_a_structural_error() {
        let p = test_prosumer(0, 2, &[]);
        let d = LocalDecision::zeros(3, 0);
        assert!(matches!(
            evaluate_cost(&p, &flat_prices(2, 1.0, 0.0), &d),
            Err(ModelError::Dimension(_))
        ));
    }

    #[test]
    fn zero_decision_is_feasible_when_boxes_allow_it() {
        let p = test_prosumer(0, 4, &[(2, 1.0, 0.0)]);
        let d = LocalDecision::zeros(4, 1);
        let report = check_feasible(&p, &d, 0.0).unwrap();
        assert!(report.is_empty(), "unexpected violations: {:?}", report);
    }

    #[test]
    fn unmet_daily_minimum_is_reported_with_magnitude() {
        let mut p = test_prosumer(0, 4, &[]);
        p.load.daily_min = 5.0;
        let d = LocalDecision::zeros(4, 0);
        let report = check_feasible(&p, &d, 0.0).unwrap();
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].constraint, ConstraintKind::DailyLoadMin);
        assert!((report[0].magnitude - 5.0).abs() < 1e-12);
    }

    #[test]
    fn single_bound_violations_are_attributed_to_the_right_constraint() {
        let horizon = 2;
        let p = test_prosumer(0, horizon, &[]);

        // load above its box, balance repaired through the wide exchange
        let mut d = LocalDecision::zeros(horizon, 0);
        d.load[1] = 12.0;
        d.exchange[1] = 12.0;
        let report = check_feasible(&p, &d, 1e-9).unwrap();
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].constraint, ConstraintKind::LoadBounds);
        assert_eq!(report[0].period, Some(1));
        assert!((report[0].magnitude - 2.0).abs() < 1e-12);

        // charge beyond its cap, SOC kept consistent (unit efficiencies)
        let mut d = LocalDecision::zeros(horizon, 0);
        d.charge[0] = 6.0;
        d.discharge[1] = 6.0;
        d.soc[0] = 6.0;
        d.soc[1] = 0.0;
        d.exchange[0] = 6.0;
        d.exchange[1] = -6.0;
        let report = check_feasible(&p, &d, 1e-9).unwrap();
        assert!(report
            .iter()
            .any(|v| v.constraint == ConstraintKind::ChargeBounds && v.period == Some(0)));
        assert!(report
            .iter()
            .any(|v| v.constraint == ConstraintKind::DischargeBounds && v.period == Some(1)));
        assert_eq!(report.len(), 2);

        // SOC trajectory leaving the window
        let mut p2 = test_prosumer(0, horizon, &[]);
        p2.storage.s_max = 3.0;
        let mut d = LocalDecision::zeros(horizon, 0);
        d.charge[0] = 4.0;
        d.discharge[1] = 4.0;
        d.soc[0] = 4.0;
        d.soc[1] = 0.0;
        d.exchange[0] = 4.0;
        d.exchange[1] = -4.0;
        let report = check_feasible(&p2, &d, 1e-9).unwrap();
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].constraint, ConstraintKind::SocBounds);
        assert!((report[0].magnitude - 1.0).abs() < 1e-12);

        // boundary SOC not restored
        let mut p3 = test_prosumer(0, horizon, &[]);
        p3.storage.s_bound = 2.0;
        p3.storage.s_min = 0.0;
        let mut d = LocalDecision::zeros(horizon, 0);
        d.soc[0] = 2.0;
        d.soc[1] = 1.0;
        d.discharge[1] = 1.0;
        d.exchange[1] = -1.0;
        let report = check_feasible(&p3, &d, 1e-9).unwrap();
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].constraint, ConstraintKind::SocBoundary);
        assert!((report[0].magnitude - 1.0).abs() < 1e-12);

        // corrupted balance
        let mut d = LocalDecision::zeros(horizon, 0);
        d.exchange[0] = 1.5;
        let report = check_feasible(&p, &d, 1e-9).unwrap();
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].constraint, ConstraintKind::PowerBalance);
        assert!((report[0].magnitude - 1.5).abs() < 1e-12);
    }

    #[test]
    fn modulus_from_fee_coefficients() {
        let p = test_prosumer(0, 1, &[(1, 1.0, 1.0), (2, 1.0, 0.0)]);
        assert_eq!(strong_convexity_modulus(&p).unwrap(), 2.0);
        let p = test_prosumer(0, 1, &[(1, 0.5, 0.0), (2, 2.0, 0.0)]);
        assert_eq!(strong_convexity_modulus(&p).unwrap(), 1.0);
        let p = test_prosumer(0, 1, &[(1, 0.0, 0.0)]);
        assert!(strong_convexity_modulus(&p).is_err());
    }

    fn tiny_scenario(moduli: &[f64]) -> Scenario {
        // star around prosumer 0 is enough to carry the alphas
        let n = moduli.len();
        let horizon = 1;
        let mut prosumers: Vec<ProsumerModel> = Vec::new();
        for (i, &m) in moduli.iter().enumerate() {
            let alpha = m / 2.0;
            let peers: Vec<(usize, f64, f64)> = if n == 1 {
                vec![]
            } else if i == 0 {
                (1..n).map(|j| (j, alpha, 0.0)).collect()
            } else {
                vec![(0, alpha, 0.0)]
            };
            prosumers.push(test_prosumer(i, horizon, &peers));
        }
        let edges = if n == 1 {
            vec![]
        } else {
            (1..n).map(|j| (0, j)).collect()
        };
        Scenario {
            time: TimeGrid { horizon },
            prices: flat_prices(horizon, 1.0, 0.5),
            prosumers,
            edges,
        }
    }

    #[test]
    fn lipschitz_constants_follow_the_formulas() {
        let s = tiny_scenario(&[2.0, 2.0, 2.0]);
        s.validate().unwrap();
        let l = lipschitz_constants(&s).unwrap();
        assert_eq!(l.per_prosumer, vec![0.5, 0.5, 0.5]);
        assert!((l.total - 1.5).abs() < 1e-15);
        assert!((l.max - 0.5).abs() < 1e-15);

        // single prosumer with m = 4 (no peers: its dual block is empty)
        let s = tiny_scenario(&[4.0, 4.0]);
        let l = lipschitz_constants(&s).unwrap();
        assert!((l.per_prosumer[0] - 0.25).abs() < 1e-15);
        assert!((l.max - 0.25).abs() < 1e-15);
    }

    /// Finite-difference gradient of the trade part of J.
    fn fd_trade_gradient(
        p: &ProsumerModel,
        prices: &PriceCurve,
        base: &LocalDecision,
        eps: f64,
    ) -> Vec<f64> {
        let mut grad = Vec::new();
        for slot in 0..p.num_peers() {
            for tau in 0..p.pv.len() {
                let mut up = base.clone();
                up.trades[slot][tau] += eps;
                let mut dn = base.clone();
                dn.trades[slot][tau] -= eps;
                let fu = evaluate_cost(p, prices, &up).unwrap();
                let fd = evaluate_cost(p, prices, &dn).unwrap();
                grad.push((fu - fd) / (2.0 * eps));
            }
        }
        grad
    }

    #[test]
    fn sampled_strong_convexity_inequality_holds() {
        let horizon = 3;
        let p = test_prosumer(0, horizon, &[(1, 0.7, 0.4), (2, 1.3, 0.0)]);
        let prices = flat_prices(horizon, 8.0, 4.0);
        let m = strong_convexity_modulus(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            // keep samples away from the |t| kink so central differences are exact
            let draw = |rng: &mut ChaCha8Rng| {
                let v: f64 = rng.gen_range(0.2..3.0);
                if rng.gen_bool(0.5) {
                    v
                } else {
                    -v
                }
            };
            let mut a = LocalDecision::zeros(horizon, 2);
            let mut b = LocalDecision::zeros(horizon, 2);
            for slot in 0..2 {
                for tau in 0..horizon {
                    a.trades[slot][tau] = draw(&mut rng);
                    b.trades[slot][tau] = draw(&mut rng);
                }
            }
            let ga = fd_trade_gradient(&p, &prices, &a, 1e-5);
            let gb = fd_trade_gradient(&p, &prices, &b, 1e-5);
            let mut inner = 0.0;
            let mut dist_sq = 0.0;
            for ((ga_k, gb_k), (ta, tb)) in ga.iter().zip(&gb).zip(
                a.t_stacked().iter().zip(&b.t_stacked()).map(|(x, y)| (*x, *y)),
            ) {
                inner += (ga_k - gb_k) * (ta - tb);
                dist_sq += (ta - tb) * (ta - tb);
            }
            assert!(
                inner >= m * dist_sq * (1.0 - 1e-6) - 1e-9,
                "strong convexity violated: {} < {}",
                inner,
                m * dist_sq
            );
        }
    }

    #[test]
    fn cost_is_convex_along_segments() {
        let horizon = 3;
        let p = test_prosumer(0, horizon, &[(1, 1.0, 1.0)]);
        let prices = flat_prices(horizon, 8.0, 4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let random_decision = |rng: &mut ChaCha8Rng| {
            let mut d = LocalDecision::zeros(horizon, 1);
            let fill = |v: &mut Vec<f64>, rng: &mut ChaCha8Rng| {
                for x in v.iter_mut() {
                    *x = rng.gen_range(-3.0..3.0);
                }
            };
            fill(&mut d.load, rng);
            fill(&mut d.charge, rng);
            fill(&mut d.discharge, rng);
            fill(&mut d.soc, rng);
            fill(&mut d.exchange, rng);
            fill(&mut d.trades[0], rng);
            d
        };
        for _ in 0..200 {
            let a = random_decision(&mut rng);
            let b = random_decision(&mut rng);
            let theta: f64 = rng.gen_range(0.05..0.95);
            let mut mid = LocalDecision::zeros(horizon, 1);
            let mix = |out: &mut Vec<f64>, x: &Vec<f64>, y: &Vec<f64>| {
                for i in 0..out.len() {
                    out[i] = theta * x[i] + (1.0 - theta) * y[i];
                }
            };
            mix(&mut mid.load, &a.load, &b.load);
            mix(&mut mid.charge, &a.charge, &b.charge);
            mix(&mut mid.discharge, &a.discharge, &b.discharge);
            mix(&mut mid.soc, &a.soc, &b.soc);
            mix(&mut mid.exchange, &a.exchange, &b.exchange);
            mix(&mut mid.trades[0], &a.trades[0], &b.trades[0]);
            let fa = evaluate_cost(&p, &prices, &a).unwrap();
            let fb = evaluate_cost(&p, &prices, &b).unwrap();
            let fm = evaluate_cost(&p, &prices, &mid).unwrap();
            assert!(fm <= theta * fa + (1.0 - theta) * fb + 1e-9);
        }
    }

    #[test]
    fn scenario_validation_rejects_price_inversion_and_asymmetry() {
        let mut s = tiny_scenario(&[2.0, 2.0]);
        s.validate().unwrap();
        s.prices.sell[0] = 2.0; // above buy = 1.0
        assert!(matches!(s.validate(), Err(ModelError::Invariant(_))));

        let mut s = tiny_scenario(&[2.0, 2.0]);
        s.prosumers[1].peers.clear(); // breaks symmetry
        assert!(matches!(s.validate(), Err(ModelError::Invariant(_))));
    }
}
