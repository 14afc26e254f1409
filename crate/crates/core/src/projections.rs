//! Euclidean projections onto the non-negative orthant, a buyer's budget set
//! and the joint supply set.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{MarketError, Result};
use crate::market::{Allocation, PriceVector};

/// Relative budget residual at which bisection stops.
const BUDGET_RESIDUAL: f64 = 1e-10;
const MAX_BISECTION_STEPS: usize = 200;

/// `{x ≥ 0 : x·p ≤ b}`.
#[derive(Debug, Clone, Copy)]
pub struct BudgetSet<'a> {
    prices: &'a Array1<f64>,
    budget: f64,
}

impl<'a> BudgetSet<'a> {
    pub fn new(prices: &'a PriceVector, budget: f64) -> Result<Self> {
        Self::from_array(prices.as_array(), budget)
    }

    pub(crate) fn from_array(prices: &'a Array1<f64>, budget: f64) -> Result<Self> {
        if !(budget > 0.0 && budget.is_finite()) {
            return Err(MarketError::InvalidConfig(format!(
                "budget set needs a positive budget, got {budget}"
            )));
        }
        Ok(Self { prices, budget })
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn contains(&self, x: ArrayView1<f64>, tol: f64) -> bool {
        x.iter().all(|&v| v >= 0.0) && x.dot(self.prices) <= self.budget + tol
    }
}

/// Componentwise `max(0, y_j)`.
pub fn project_nonneg(y: &Array1<f64>) -> Array1<f64> {
    y.mapv(|v| v.max(0.0))
}

/// Projection onto `{x ≥ 0 : x·p ≤ b}`.
///
/// If the clipped point is affordable it is returned as is. Otherwise the
/// projection is `max(0, y − λp)` for the unique `λ > 0` that spends the
/// budget exactly; `λ` is found by bisection on the non-increasing map
/// `λ ↦ p·max(0, y − λp)`. The returned point is always on the affordable
/// side of the root, so projecting it again is a no-op.
pub fn project_budget(y: ArrayView1<f64>, set: &BudgetSet<'_>) -> Array1<f64> {
    let p = set.prices;
    let b = set.budget;
    let clipped = y.mapv(|v| v.max(0.0));
    if clipped.dot(p) <= b {
        return clipped;
    }

    let shifted = |lambda: f64| -> Array1<f64> {
        Array1::from_iter(
            y.iter()
                .zip(p.iter())
                .map(|(&yj, &pj)| (yj - lambda * pj).max(0.0)),
        )
    };
    let spend = |lambda: f64| -> f64 {
        y.iter()
            .zip(p.iter())
            .map(|(&yj, &pj)| (yj - lambda * pj).max(0.0) * pj)
            .sum()
    };

    // At hi every good with a positive price is driven to zero, so the spend
    // is zero and hi is feasible.
    let mut lo = 0.0;
    let mut hi = y
        .iter()
        .zip(p.iter())
        .filter(|(_, &pj)| pj > 0.0)
        .map(|(&yj, &pj)| yj / pj)
        .fold(0.0_f64, f64::max);
    let mut hi_spend = spend(hi);

    for _ in 0..MAX_BISECTION_STEPS {
        if b - hi_spend <= BUDGET_RESIDUAL * b {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let s = spend(mid);
        if s > b {
            lo = mid;
        } else {
            hi = mid;
            hi_spend = s;
        }
    }
    shifted(hi)
}

/// Projection of one good's demand vector onto `{z ≥ 0 : Σ z ≤ 1}`.
pub fn project_capped_simplex(column: ArrayView1<f64>) -> Array1<f64> {
    let clipped = column.mapv(|v| v.max(0.0));
    if clipped.sum() <= 1.0 {
        return clipped;
    }
    // Sorted-threshold projection onto the probability simplex.
    let mut sorted = column.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (k as f64 + 1.0);
        if u - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    column.mapv(|v| (v - theta).max(0.0))
}

/// Column-wise projection onto the supply set `{X ≥ 0 : Σ_i x_ij ≤ 1}`.
pub fn project_supply(x: &Array2<f64>) -> Allocation {
    let mut out = Array2::zeros(x.dim());
    for (j, col) in x.columns().into_iter().enumerate() {
        out.column_mut(j).assign(&project_capped_simplex(col));
    }
    Allocation::from_projected(out)
}
