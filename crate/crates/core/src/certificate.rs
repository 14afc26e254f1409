//! Certificates for approximate competitive equilibria and for generalized
//! Nash equilibria of the auctioneer-buyer pseudo-game.

use serde::{Deserialize, Serialize};

use crate::market::{excess_demand, Allocation, MarketInstance, PriceVector, UtilityFamily};
use crate::ne_oracle::buyer_gaps;

/// Absolute thresholds for each certificate component, except `br_gap_rel`
/// which is relative to the largest best-response utility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub feasibility: f64,
    pub walras: f64,
    pub budget: f64,
    pub budget_slack: f64,
    pub br_gap_rel: f64,
    pub price_sum: f64,
    pub auctioneer: f64,
    /// Price floor used when computing best responses.
    pub price_floor: f64,
}

impl Tolerances {
    /// Defaults scaled to the market's budgets.
    pub fn for_market(mkt: &MarketInstance) -> Self {
        let total = mkt.total_budget();
        let min_budget = mkt.budgets().iter().copied().fold(f64::INFINITY, f64::min);
        Self {
            feasibility: 1e-3,
            walras: 1e-2 * total,
            budget: 1e-6 * min_budget,
            budget_slack: 1e-2 * min_budget,
            br_gap_rel: 1e-2,
            price_sum: 1e-2 * total,
            auctioneer: 1e-2 * total,
            price_floor: 1e-3 * total / mkt.num_goods() as f64,
        }
    }

    /// Every threshold set to `tau`, no price floor.
    pub fn uniform(tau: f64) -> Self {
        Self {
            feasibility: tau,
            walras: tau,
            budget: tau,
            budget_slack: tau,
            br_gap_rel: tau,
            price_sum: tau,
            auctioneer: tau,
            price_floor: 0.0,
        }
    }

    /// Every threshold multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            feasibility: self.feasibility * factor,
            walras: self.walras * factor,
            budget: self.budget * factor,
            budget_slack: self.budget_slack * factor,
            br_gap_rel: self.br_gap_rel * factor,
            price_sum: self.price_sum * factor,
            auctioneer: self.auctioneer * factor,
            price_floor: self.price_floor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub feasibility: bool,
    pub walras: bool,
    pub budget: bool,
    /// `None` for Leontief markets, whose buyers may saturate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget_slack: Option<bool>,
    pub best_response: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub price_sum: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auctioneer: Option<bool>,
}

impl Verdict {
    /// True when every checked component passed.
    pub fn passed(&self) -> bool {
        self.feasibility
            && self.walras
            && self.budget
            && self.best_response
            && self.budget_slack.unwrap_or(true)
            && self.price_sum.unwrap_or(true)
            && self.auctioneer.unwrap_or(true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumCertificate {
    /// `max_j max(0, Σ_i x_ij − 1)`
    pub feasibility_violation: f64,
    /// `|Σ_j p_j (Σ_i x_ij − 1)|`
    pub walras_residual: f64,
    /// `max_i max(0, x_i·p − b_i)`
    pub budget_violation: f64,
    /// `max_i (b_i − x_i·p)`, signed
    pub budget_slack: f64,
    /// Exploitability at `p`.
    pub br_gap: f64,
    /// `max_i u_i(BR_i)`, the scale `br_gap` is judged against.
    pub br_scale: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub price_sum_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auctioneer_gap: Option<f64>,
    pub tolerances: Tolerances,
    pub verdict: Verdict,
}

impl EquilibriumCertificate {
    pub fn passed(&self) -> bool {
        self.verdict.passed()
    }
}

/// Checks the competitive-equilibrium conditions for `(x, p)`.
pub fn check_ce(
    mkt: &MarketInstance,
    x: &Allocation,
    p: &PriceVector,
    tol: &Tolerances,
) -> EquilibriumCertificate {
    assert_eq!(
        x.dim(),
        (mkt.num_buyers(), mkt.num_goods()),
        "allocation shape mismatch"
    );
    assert_eq!(p.len(), mkt.num_goods(), "price vector length mismatch");

    let z = excess_demand(x);
    let feasibility_violation = z.max_overdemand();
    let walras_residual = z.value_at(p).abs();

    let mut budget_violation = 0.0_f64;
    let mut budget_slack = f64::NEG_INFINITY;
    for i in 0..mkt.num_buyers() {
        let spend = x.row(i).dot(p.as_array());
        budget_violation = budget_violation.max(spend - mkt.budget(i));
        budget_slack = budget_slack.max(mkt.budget(i) - spend);
    }

    let gaps = buyer_gaps(mkt, p, x, tol.price_floor);
    let br_gap = gaps.iter().map(|g| g.0).fold(0.0, f64::max);
    let br_scale = gaps.iter().map(|g| g.1).fold(0.0, f64::max);

    let verdict = Verdict {
        feasibility: feasibility_violation <= tol.feasibility,
        walras: walras_residual <= tol.walras,
        budget: budget_violation <= tol.budget,
        budget_slack: match mkt.family() {
            UtilityFamily::Leontief => None,
            _ => Some(budget_slack <= tol.budget_slack),
        },
        best_response: br_gap <= tol.br_gap_rel * br_scale,
        price_sum: None,
        auctioneer: None,
    };

    EquilibriumCertificate {
        feasibility_violation,
        walras_residual,
        budget_violation,
        budget_slack,
        br_gap,
        br_scale,
        price_sum_gap: None,
        auctioneer_gap: None,
        tolerances: *tol,
        verdict,
    }
}

/// `max_{p' ≥ 0, Σp' = Σb} p'·z − p·z`, clamped at zero. The maximum sits
/// on the vertex that puts the whole budget on the most overdemanded good.
pub fn auctioneer_gap(mkt: &MarketInstance, x: &Allocation, p: &PriceVector) -> f64 {
    let z = excess_demand(x);
    let z_max = z
        .as_array()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    (mkt.total_budget() * z_max - z.value_at(p)).max(0.0)
}

/// Checks `(x, p)` as a generalized Nash equilibrium of the auctioneer-buyer
/// pseudo-game: the buyer conditions of [`check_ce`], prices in the
/// auctioneer's action set `Σ_j p_j = Σ_i b_i`, and no profitable auctioneer
/// deviation.
pub fn check_gne(
    mkt: &MarketInstance,
    x: &Allocation,
    p: &PriceVector,
    tol: &Tolerances,
) -> EquilibriumCertificate {
    let mut cert = check_ce(mkt, x, p, tol);
    let price_sum_gap = (p.as_array().sum() - mkt.total_budget()).abs();
    let gap = auctioneer_gap(mkt, x, p);
    cert.price_sum_gap = Some(price_sum_gap);
    cert.auctioneer_gap = Some(gap);
    cert.verdict.price_sum = Some(price_sum_gap <= tol.price_sum);
    cert.verdict.auctioneer = Some(gap <= tol.auctioneer);
    cert
}
