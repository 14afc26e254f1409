//! Variational equilibrium of the buyer pseudo-game, computed by
//! extragradient over the joint supply set, and recovery of the
//! competitive prices from the shared KKT multipliers.

use ndarray::{Array1, Array2};

use crate::error::{MarketError, Result};
use crate::market::{Allocation, MarketInstance, PriceVector, UtilityFamily, DEFAULT_EPS_U};
use crate::projections::project_supply;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViConfig {
    pub iters: usize,
    pub eta: f64,
    pub eps_u: f64,
    /// Minimum `x_ij` for buyer `i` to count as holding good `j` during price recovery.
    pub support_threshold: f64,
}

impl Default for ViConfig {
    fn default() -> Self {
        Self {
            iters: 20_000,
            eta: 2e-3,
            eps_u: DEFAULT_EPS_U,
            support_threshold: 1e-3,
        }
    }
}

impl ViConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iters == 0 {
            return Err(MarketError::InvalidConfig(
                "iters must be at least 1".into(),
            ));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(MarketError::InvalidConfig(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        if !(self.support_threshold > 0.0 && self.support_threshold.is_finite()) {
            return Err(MarketError::InvalidConfig(
                "support threshold must be positive".into(),
            ));
        }
        if !(self.eps_u > 0.0 && self.eps_u.is_finite()) {
            return Err(MarketError::InvalidConfig("eps_u must be positive".into()));
        }
        Ok(())
    }
}

/// Equal split of every good; a feasible interior starting point.
pub fn uniform_start(mkt: &MarketInstance) -> Allocation {
    let n = mkt.num_buyers();
    Allocation::from_projected(Array2::from_elem((n, mkt.num_goods()), 1.0 / n as f64))
}

/// The pseudo-gradient `F(X) = (∇_{x_i} b_i log(u_i + eps_u))_i`.
pub fn pseudo_gradient(mkt: &MarketInstance, x: &Allocation, eps_u: f64) -> Array2<f64> {
    let mut f = Array2::zeros(x.dim());
    for i in 0..mkt.num_buyers() {
        f.row_mut(i).assign(&mkt.log_utility_grad(i, x, eps_u));
    }
    f
}

fn warn_if_not_monotone(mkt: &MarketInstance) {
    if mkt.family() != UtilityFamily::CobbDouglas {
        log::warn!(
            "{} utilities: the joint operator is not guaranteed monotone, VI solve is best-effort",
            mkt.family()
        );
    }
}

/// Extragradient on the monotone VI over `{X ≥ 0 : Σ_i x_ij ≤ 1}`.
pub fn solve_ve(mkt: &MarketInstance, x0: &Allocation, cfg: &ViConfig) -> Allocation {
    solve_ve_with(mkt, x0, cfg, |_, _| {})
}

/// As [`solve_ve`], calling `observe(t, x)` after every full step.
pub fn solve_ve_with<F>(
    mkt: &MarketInstance,
    x0: &Allocation,
    cfg: &ViConfig,
    mut observe: F,
) -> Allocation
where
    F: FnMut(usize, &Allocation),
{
    warn_if_not_monotone(mkt);
    let mut x = project_supply(x0.as_array());
    for t in 1..=cfg.iters {
        let f = pseudo_gradient(mkt, &x, cfg.eps_u);
        let half = project_supply(&(x.as_array() + &(f * cfg.eta)));
        let f_half = pseudo_gradient(mkt, &half, cfg.eps_u);
        x = project_supply(&(x.as_array() + &(f_half * cfg.eta)));
        observe(t, &x);
    }
    x
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredPrices {
    pub prices: PriceVector,
    /// Per good: max − min of the buyers' marginal rates `q_ij` on the support.
    pub spread: Array1<f64>,
}

/// Marginal rate `q_ij = b_i (∂u_i/∂x_ij) / (u_i + eps_u)` that equals the
/// shared multiplier of good `j` when buyer `i` holds it at a VE.
pub fn marginal_rate(mkt: &MarketInstance, i: usize, j: usize, x: &Allocation, eps_u: f64) -> f64 {
    let u = mkt.utility(i, x);
    mkt.budget(i) * mkt.utility_partial(i, j, x) / (u + eps_u)
}

/// Median and spread of the marginal rates of the buyers holding good `j`.
fn price_good(
    mkt: &MarketInstance,
    j: usize,
    x: &Allocation,
    cfg: &ViConfig,
) -> Option<(f64, f64)> {
    let mut rates: Vec<f64> = (0..mkt.num_buyers())
        .filter(|&i| x.as_array()[[i, j]] > cfg.support_threshold)
        .map(|i| marginal_rate(mkt, i, j, x, cfg.eps_u))
        .collect();
    if rates.is_empty() {
        return None;
    }
    rates.sort_unstable_by(f64::total_cmp);
    let k = rates.len();
    let median = if k % 2 == 1 {
        rates[k / 2]
    } else {
        0.5 * (rates[k / 2 - 1] + rates[k / 2])
    };
    Some((median, rates[k - 1] - rates[0]))
}

/// Prices as the median marginal rate over the buyers holding each good.
pub fn recover_prices(
    mkt: &MarketInstance,
    x: &Allocation,
    cfg: &ViConfig,
) -> Result<RecoveredPrices> {
    recover(mkt, x, cfg, false)
}

/// [`recover_prices`] with zero substituted for every unpriced good.
pub fn recover_prices_or_zero(
    mkt: &MarketInstance,
    x: &Allocation,
    cfg: &ViConfig,
) -> Result<RecoveredPrices> {
    recover(mkt, x, cfg, true)
}

fn recover(
    mkt: &MarketInstance,
    x: &Allocation,
    cfg: &ViConfig,
    zero_unpriced: bool,
) -> Result<RecoveredPrices> {
    let m = mkt.num_goods();
    let mut prices = Array1::zeros(m);
    let mut spread = Array1::zeros(m);
    for j in 0..m {
        match price_good(mkt, j, x, cfg) {
            Some((p, s)) => {
                prices[j] = p;
                spread[j] = s;
            }
            None if zero_unpriced => {}
            None => return Err(MarketError::UnpricedGood { good: j }),
        }
    }
    Ok(RecoveredPrices {
        prices: PriceVector::new(prices)?,
        spread,
    })
}
