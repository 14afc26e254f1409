//! Approximate Nash equilibrium of the buyers' game at fixed prices.
//!
//! Every buyer runs projected extragradient ascent over its own budget set,
//! following either `∇u_i` or the gradient of `b_i log(u_i + eps_u)`. Updates are synchronous: all buyers take the
//! half step from the same iterate, then all take the full step using the
//! gradients at the half-step profile.

use ndarray::Array2;

use crate::best_response::best_response_floored;
use crate::error::{MarketError, Result};
use crate::market::{Allocation, MarketInstance, PriceVector, DEFAULT_EPS_U};
use crate::projections::{project_budget, BudgetSet};

/// Inner iterations between exploitability checks.
const CHECK_EVERY: usize = 10;
const BACKTRACK_RATIO: f64 = 0.9;
/// Backtracking never shrinks the step below this fraction of `eta_x`.
const MIN_STEP_FRACTION: f64 = 1e-6;

/// Ascent direction of the inner loop. Both have the same maximisers on the
/// budget set; they differ only in scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InnerGradient {
    #[default]
    Utility,
    LogUtility,
}

/// Step acceptance in each extragradient round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepRule {
    /// Always take `eta_x`.
    Constant,
    /// Start from `eta_x` and halve until the local Lipschitz test passes.
    #[default]
    Backtracking,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeOracleConfig {
    pub inner_iters: usize,
    pub eta_x: f64,
    /// Stop as soon as exploitability falls to this level (0 disables the check).
    pub delta: f64,
    pub eps_u: f64,
    pub gradient: InnerGradient,
    pub step_rule: StepRule,
}

impl NeOracleConfig {
    pub fn new(inner_iters: usize, eta_x: f64) -> Self {
        Self {
            inner_iters,
            eta_x,
            delta: 0.0,
            eps_u: DEFAULT_EPS_U,
            gradient: InnerGradient::Utility,
            step_rule: StepRule::Backtracking,
        }
    }

    pub fn with_step_rule(mut self, step_rule: StepRule) -> Self {
        self.step_rule = step_rule;
        self
    }

    pub fn with_gradient(mut self, gradient: InnerGradient) -> Self {
        self.gradient = gradient;
        self
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.inner_iters == 0 {
            return Err(MarketError::InvalidConfig(
                "inner_iters must be at least 1".into(),
            ));
        }
        if !(self.eta_x > 0.0 && self.eta_x.is_finite()) {
            return Err(MarketError::InvalidConfig(format!(
                "eta_x must be positive, got {}",
                self.eta_x
            )));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(MarketError::InvalidConfig(
                "delta must be finite and non-negative".into(),
            ));
        }
        if !(self.eps_u > 0.0 && self.eps_u.is_finite()) {
            return Err(MarketError::InvalidConfig("eps_u must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct NeSolution {
    pub allocation: Allocation,
    /// Extragradient rounds actually run.
    pub iterations: usize,
    /// Set when the early-exit check fired.
    pub converged: bool,
}

fn budget_sets<'a>(mkt: &MarketInstance, p: &'a PriceVector) -> Vec<BudgetSet<'a>> {
    (0..mkt.num_buyers())
        .map(|i| BudgetSet::new(p, mkt.budget(i)).expect("market budgets are positive"))
        .collect()
}

/// Stacked ascent directions, one row per buyer.
fn field(mkt: &MarketInstance, x: &Allocation, cfg: &NeOracleConfig) -> Array2<f64> {
    let mut g = Array2::zeros(x.dim());
    for i in 0..mkt.num_buyers() {
        let gi = match cfg.gradient {
            InnerGradient::Utility => mkt.utility_grad(i, x, cfg.eps_u),
            InnerGradient::LogUtility => mkt.log_utility_grad(i, x, cfg.eps_u),
        };
        g.row_mut(i).assign(&gi);
    }
    g
}

/// One synchronous projected step `x_i ← Π_i(base_i + eta · g_i)` for every buyer.
fn step(sets: &[BudgetSet<'_>], base: &Allocation, g: &Array2<f64>, eta: f64) -> Allocation {
    let mut next = Array2::zeros(base.dim());
    for (i, set) in sets.iter().enumerate() {
        let y = &base.row(i) + &(&g.row(i) * eta);
        next.row_mut(i).assign(&project_budget(y.view(), set));
    }
    Allocation::from_projected(next)
}

fn dist(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt()
}

/// One extragradient round. Under [`StepRule::Backtracking`] the step is
/// halved until `eta·‖F(x) − F(x½)‖ ≤ BACKTRACK_RATIO·‖x − x½‖`.
fn round(
    mkt: &MarketInstance,
    sets: &[BudgetSet<'_>],
    x: &Allocation,
    cfg: &NeOracleConfig,
) -> Allocation {
    let g = field(mkt, x, cfg);
    let mut eta = cfg.eta_x;
    loop {
        let half = step(sets, x, &g, eta);
        let g_half = field(mkt, &half, cfg);
        let accept = match cfg.step_rule {
            StepRule::Constant => true,
            StepRule::Backtracking => {
                eta <= cfg.eta_x * MIN_STEP_FRACTION
                    || eta * dist(&g, &g_half)
                        <= BACKTRACK_RATIO * dist(x.as_array(), half.as_array())
            }
        };
        if accept {
            return step(sets, x, &g_half, eta);
        }
        eta *= 0.5;
    }
}

/// Runs `cfg.inner_iters` extragradient rounds from `x0` at prices `p`.
pub fn solve_ne(
    mkt: &MarketInstance,
    p: &PriceVector,
    x0: &Allocation,
    cfg: &NeOracleConfig,
) -> NeSolution {
    let sets = budget_sets(mkt, p);
    let mut x = {
        let mut start = Array2::zeros(x0.dim());
        for (i, set) in sets.iter().enumerate() {
            start.row_mut(i).assign(&project_budget(x0.row(i), set));
        }
        Allocation::from_projected(start)
    };

    for s in 1..=cfg.inner_iters {
        x = round(mkt, &sets, &x, cfg);

        if cfg.delta > 0.0 && s % CHECK_EVERY == 0 && exploitability(mkt, p, &x) <= cfg.delta {
            return NeSolution {
                allocation: x,
                iterations: s,
                converged: true,
            };
        }
    }
    NeSolution {
        allocation: x,
        iterations: cfg.inner_iters,
        converged: false,
    }
}

/// Largest utility gain any buyer can get by deviating unilaterally to a
/// best response at prices `p`.
pub fn exploitability(mkt: &MarketInstance, p: &PriceVector, x: &Allocation) -> f64 {
    exploitability_with_floor(mkt, p, x, 0.0)
}

/// As [`exploitability`], with best responses computed at `max(p, eps_p)`.
pub fn exploitability_with_floor(
    mkt: &MarketInstance,
    p: &PriceVector,
    x: &Allocation,
    eps_p: f64,
) -> f64 {
    buyer_gaps(mkt, p, x, eps_p)
        .into_iter()
        .map(|(gap, _)| gap)
        .fold(0.0, f64::max)
}

/// Per buyer: `(u_i(BR_i) − u_i(x_i), u_i(BR_i))`, the gap clamped at zero.
pub(crate) fn buyer_gaps(
    mkt: &MarketInstance,
    p: &PriceVector,
    x: &Allocation,
    eps_p: f64,
) -> Vec<(f64, f64)> {
    (0..mkt.num_buyers())
        .map(|i| {
            let br = best_response_floored(mkt, i, p, x, eps_p);
            let u_br = mkt.utility_with_bundle(i, br.view(), x);
            let u_x = mkt.utility(i, x);
            ((u_br - u_x).max(0.0), u_br)
        })
        .collect()
}
