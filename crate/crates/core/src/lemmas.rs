//! Executable forms of two analytical identities: the unit multiplier of the
//! budget-penalised buyer problem, and the per-buyer dual objective value.

use ndarray::{Array1, ArrayView1};

use crate::best_response::best_response_closed;
use crate::error::Result;
use crate::market::{Allocation, MarketInstance, PriceVector, DEFAULT_EPS_U};
use crate::projections::project_nonneg;
use crate::tatonnement::objective;

/// Iterations of the penalised ascent. Each one backtracks from the last
/// accepted step size (grown by half) until the Armijo test passes.
pub const PENALIZED_STEPS: usize = 2000;
const ARMIJO: f64 = 1e-4;
const MAX_STEP: f64 = 1e6;

/// `b_i log(u_i(x_i, x_{N_i}) + eps_u) + b_i − x_i·p`.
pub fn penalized_objective(
    mkt: &MarketInstance,
    i: usize,
    bundle: ArrayView1<f64>,
    x_others: &Allocation,
    p: &PriceVector,
    eps_u: f64,
) -> f64 {
    let b = mkt.budget(i);
    b * (mkt.utility_with_bundle(i, bundle, x_others) + eps_u).ln() + b - bundle.dot(p.as_array())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaCheck {
    /// `b_i log u_i` at the budget-constrained optimum.
    pub constrained: f64,
    /// Maximum of the penalised objective over `x_i ≥ 0`.
    pub penalized: f64,
    pub gap: f64,
}

/// Compares buyer `i`'s budget-constrained optimum with the unconstrained
/// optimum of the penalised objective (multiplier fixed at one).
pub fn verify_lambda_one(
    mkt: &MarketInstance,
    i: usize,
    x_others: &Allocation,
    p: &PriceVector,
) -> Result<LambdaCheck> {
    let eps_u = DEFAULT_EPS_U;
    let b = mkt.budget(i);
    let br = best_response_closed(mkt, i, p, x_others)?;
    let constrained = b * (mkt.utility_with_bundle(i, br.view(), x_others) + eps_u).ln();

    let m = mkt.num_goods();
    let prices = p.as_array();
    let value =
        |bundle: &Array1<f64>| penalized_objective(mkt, i, bundle.view(), x_others, p, eps_u);
    let mut bundle: Array1<f64> = Array1::from_iter((0..m).map(|j| b / (m as f64 * prices[j])));
    let mut current = value(&bundle);
    let mut eta = 1.0;
    for _ in 0..PENALIZED_STEPS {
        let x = x_others.with_row(i, bundle.view());
        let g = mkt.log_utility_grad(i, &x, eps_u) - prices;
        loop {
            let candidate = project_nonneg(&(&bundle + &(&g * eta)));
            let gain = g.dot(&(&candidate - &bundle));
            let next = value(&candidate);
            if next >= current + ARMIJO * gain {
                bundle = candidate;
                current = next;
                eta = (eta * 1.5).min(MAX_STEP);
                break;
            }
            eta *= 0.5;
            if eta < 1e-16 {
                break;
            }
        }
    }
    let penalized = penalized_objective(mkt, i, bundle.view(), x_others, p, eps_u);

    Ok(LambdaCheck {
        constrained,
        penalized,
        gap: (constrained - penalized).abs(),
    })
}

/// Buyer `i`'s dual objective `Σ_j p_j (1 − Σ_{k≠i} x_kj) + b_i log(u_i + eps_u) − b_i`.
pub fn dual_objective(
    mkt: &MarketInstance,
    i: usize,
    x: &Allocation,
    p: &PriceVector,
    eps_u: f64,
) -> f64 {
    objective(mkt, i, x, p, eps_u) - mkt.budget(i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::UtilityFamily;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn cd_single() -> MarketInstance {
        MarketInstance::new(
            UtilityFamily::CobbDouglas,
            vec![10.0],
            array![[0.5, 0.5]],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn penalty_cancels_when_budget_is_spent() {
        let mkt = cd_single();
        let p = PriceVector::from_vec(vec![1.0, 2.0]).unwrap();
        let x = Allocation::from_rows(&[vec![5.0, 2.5]]).unwrap();
        let value = penalized_objective(&mkt, 0, x.row(0), &x, &p, 0.0);
        assert_abs_diff_eq!(value, 10.0 * 12.5_f64.sqrt().ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(value, 10.0 * mkt.utility(0, &x).ln(), epsilon = 1e-12);
    }

    #[test]
    fn penalized_objective_at_zero_bundle() {
        let mkt = MarketInstance::new(UtilityFamily::Linear, vec![1.0], array![[2.0, 3.0]], vec![])
            .unwrap();
        let p = PriceVector::from_vec(vec![4.0, 7.0]).unwrap();
        let x = Allocation::zeros(1, 2);
        assert_abs_diff_eq!(penalized_objective(&mkt, 0, x.row(0), &x, &p, 1.0), 1.0);
    }

    #[test]
    fn unit_multiplier_single_buyer() {
        let mkt = cd_single();
        let x = Allocation::zeros(1, 2);
        let p = PriceVector::from_vec(vec![1.0, 2.0]).unwrap();
        let check = verify_lambda_one(&mkt, 0, &x, &p).unwrap();
        assert!(check.gap <= 1e-4, "{check:?}");

        let p2 = PriceVector::from_vec(vec![2.0, 4.0]).unwrap();
        let scaled = verify_lambda_one(&mkt, 0, &x, &p2).unwrap();
        assert!(scaled.gap <= 1e-4, "{scaled:?}");
        // doubling prices halves the bundle: b log u drops by b log 2
        assert_abs_diff_eq!(
            check.constrained - scaled.constrained,
            10.0 * 2f64.ln(),
            epsilon = 1e-6
        );
        assert_abs_diff_eq!(
            check.penalized - scaled.penalized,
            10.0 * 2f64.ln(),
            epsilon = 1e-4
        );
    }

    #[test]
    fn unit_multiplier_one_good() {
        let mkt = MarketInstance::new(UtilityFamily::CobbDouglas, vec![1.0], array![[3.0]], vec![])
            .unwrap();
        let p = PriceVector::from_vec(vec![1.0]).unwrap();
        let check = verify_lambda_one(&mkt, 0, &Allocation::zeros(1, 1), &p).unwrap();
        assert_abs_diff_eq!(check.constrained, 0.0, epsilon = 1e-7);
        assert_abs_diff_eq!(check.penalized, 0.0, epsilon = 1e-6);
    }
}
