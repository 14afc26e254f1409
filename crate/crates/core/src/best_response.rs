//! Single-buyer best responses at fixed prices and fixed neighbour bundles.

use ndarray::Array1;

use crate::error::{MarketError, Result};
use crate::market::{Allocation, MarketInstance, PriceVector, UtilityFamily, DEFAULT_EPS_U};
use crate::projections::{project_budget, BudgetSet};

/// Maximiser of `u_i(·, x_{N_i})` over buyer `i`'s budget set.
///
/// Linear spends everything on the lowest-index good with maximal bang per
/// buck, Cobb-Douglas spends the share `v_ij` of the budget on good `j`, and
/// Leontief buys the proportional bundle `t · v_i`, with `t` capped by the
/// smallest neighbour own-utility.
pub fn best_response_closed(
    mkt: &MarketInstance,
    i: usize,
    p: &PriceVector,
    x_others: &Allocation,
) -> Result<Array1<f64>> {
    let m = mkt.num_goods();
    assert!(i < mkt.num_buyers(), "buyer index {i} out of range");
    assert_eq!(p.len(), m, "price vector length does not match the market");
    let b = mkt.budget(i);
    let v = mkt.valuations().row(i);
    let prices = p.as_array();

    match mkt.family() {
        UtilityFamily::Linear | UtilityFamily::CobbDouglas => {
            if let Some(j) = prices.iter().position(|&pj| pj <= 0.0) {
                return Err(MarketError::UnboundedBestResponse { buyer: i, good: j });
            }
        }
        UtilityFamily::Leontief => {}
    }

    let bundle = match mkt.family() {
        UtilityFamily::Linear => {
            let mut best = 0;
            for j in 1..m {
                if v[j] / prices[j] > v[best] / prices[best] {
                    best = j;
                }
            }
            let mut x = Array1::zeros(m);
            x[best] = b / prices[best];
            x
        }
        UtilityFamily::CobbDouglas => Array1::from_iter((0..m).map(|j| v[j] * b / prices[j])),
        UtilityFamily::Leontief => {
            let cap = mkt
                .neighbors(i)
                .iter()
                .map(|&k| mkt.own_utility(k, x_others.row(k)))
                .fold(f64::INFINITY, f64::min);
            let cost = v.dot(prices);
            let t_budget = if cost > 0.0 { b / cost } else { f64::INFINITY };
            let t = cap.min(t_budget);
            if !t.is_finite() {
                return Err(MarketError::UnboundedBestResponse {
                    buyer: i,
                    good: prices.iter().position(|&pj| pj <= 0.0).unwrap_or(0),
                });
            }
            v.mapv(|a| t * a)
        }
    };
    Ok(bundle)
}

/// Projected gradient ascent on `b_i log(u_i + eps_u)` over the budget set,
/// starting from buyer `i`'s row of `x_others` (projected first).
pub fn best_response_iterative(
    mkt: &MarketInstance,
    i: usize,
    p: &PriceVector,
    x_others: &Allocation,
    steps: usize,
    eta: f64,
) -> Array1<f64> {
    assert!(i < mkt.num_buyers(), "buyer index {i} out of range");
    let set = BudgetSet::new(p, mkt.budget(i)).expect("market budgets are positive");
    let mut x = x_others.clone();
    let start = project_budget(x_others.row(i), &set);
    x = x.with_row(i, start.view());
    for _ in 0..steps {
        let g = mkt.log_utility_grad(i, &x, DEFAULT_EPS_U);
        let y = &x.row(i) + &(g * eta);
        let next = project_budget(y.view(), &set);
        x = x.with_row(i, next.view());
    }
    x.row(i).to_owned()
}

/// Steps and learning rate used when the closed form is unavailable.
pub(crate) const FALLBACK_STEPS: usize = 500;
pub(crate) const FALLBACK_ETA: f64 = 0.1;

/// Best response at prices floored by `eps_p`: closed form when the floored
/// prices are strictly positive, projected ascent otherwise.
pub(crate) fn best_response_floored(
    mkt: &MarketInstance,
    i: usize,
    p: &PriceVector,
    x: &Allocation,
    eps_p: f64,
) -> Array1<f64> {
    let floored = p.floored(eps_p);
    if floored.is_strictly_positive() {
        if let Ok(bundle) = best_response_closed(mkt, i, &floored, x) {
            return bundle;
        }
    }
    best_response_iterative(mkt, i, &floored, x, FALLBACK_STEPS, FALLBACK_ETA)
}
