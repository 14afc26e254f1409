#![allow(dead_code)]

use fisher_influence::projections::{project_budget, project_nonneg, project_supply, BudgetSet};
use fisher_influence::vi::pseudo_gradient;
use fisher_influence::{
    check_ce, check_gne, Allocation, MarketInstance, PriceVector, Tolerances, UtilityFamily,
};
use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

/// Runs `test` on `cases` deterministic draws from `strategy`.
pub fn check<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner =
        TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

pub fn vector(len: usize, lo: f64, hi: f64) -> impl Strategy<Value = Array1<f64>> {
    prop::collection::vec(lo..hi, len).prop_map(Array1::from)
}

/// A point to project, strictly positive prices and a budget.
pub fn budget_case() -> impl Strategy<Value = (Array1<f64>, Array1<f64>, f64)> {
    (1usize..=5).prop_flat_map(|m| (vector(m, -5.0, 5.0), vector(m, 0.1, 10.0), 0.5f64..20.0))
}

pub fn two_points_budget() -> impl Strategy<Value = (Array1<f64>, Array1<f64>, Array1<f64>, f64)> {
    (1usize..=5).prop_flat_map(|m| {
        (
            vector(m, -5.0, 5.0),
            vector(m, -5.0, 5.0),
            vector(m, 0.1, 10.0),
            0.5f64..20.0,
        )
    })
}

pub fn matrix(n: usize, m: usize, lo: f64, hi: f64) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(lo..hi, n * m)
        .prop_map(move |v| Array2::from_shape_vec((n, m), v).unwrap())
}

pub fn supply_case() -> impl Strategy<Value = Array2<f64>> {
    (1usize..=4, 1usize..=4).prop_flat_map(|(n, m)| matrix(n, m, -1.0, 2.0))
}

pub fn two_supply_points() -> impl Strategy<Value = (Array2<f64>, Array2<f64>)> {
    (1usize..=4, 1usize..=4)
        .prop_flat_map(|(n, m)| (matrix(n, m, -1.0, 2.0), matrix(n, m, -1.0, 2.0)))
}

/// A random market of the given family with up to three buyers and goods.
pub fn market(family: UtilityFamily) -> impl Strategy<Value = MarketInstance> {
    (1usize..=3, 1usize..=3).prop_flat_map(move |(n, m)| {
        (
            prop::collection::vec(5.0f64..15.0, n),
            matrix(n, m, 5.0, 35.0),
            prop::collection::vec(any::<bool>(), n * n),
        )
            .prop_map(move |(b, v, mask)| {
                let edges = (0..n)
                    .flat_map(|k| (0..n).map(move |i| (k, i)))
                    .filter(|&(k, i)| k != i && mask[k * n + i])
                    .collect();
                MarketInstance::new(family, b, v, edges).unwrap()
            })
    })
}

/// A market together with an interior allocation.
pub fn market_and_allocation(
    family: UtilityFamily,
    lo: f64,
    hi: f64,
) -> impl Strategy<Value = (MarketInstance, Allocation)> {
    market(family).prop_flat_map(move |mkt| {
        let (n, m) = (mkt.num_buyers(), mkt.num_goods());
        (
            Just(mkt),
            matrix(n, m, lo, hi).prop_map(|x| Allocation::new(x).unwrap()),
        )
    })
}

fn dist(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    (a - b).mapv(|v| v * v).sum().sqrt()
}

fn dist2(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).mapv(|v| v * v).sum().sqrt()
}

/// Scales a non-negative vector into the budget set.
fn into_budget(z: Array1<f64>, p: &Array1<f64>, b: f64, fill: f64) -> Array1<f64> {
    let z = project_nonneg(&z);
    let spend = z.dot(p);
    if spend == 0.0 {
        z
    } else {
        z * (fill * b / spend)
    }
}

pub fn projection_idempotence(cases: u32) -> Result<(), String> {
    check(cases, budget_case(), |(y, p, b)| {
        let prices = PriceVector::new(p.clone()).unwrap();
        let set = BudgetSet::new(&prices, b).unwrap();
        let once = project_budget(y.view(), &set);
        let twice = project_budget(once.view(), &set);
        prop_assert!(dist(&once, &twice) <= 1e-12, "{once} vs {twice}");
        let clipped = project_nonneg(&y);
        prop_assert_eq!(project_nonneg(&clipped), clipped);
        Ok(())
    })?;
    check(cases, supply_case(), |x| {
        let once = project_supply(&x);
        let twice = project_supply(once.as_array());
        prop_assert!(dist2(once.as_array(), twice.as_array()) <= 1e-12);
        Ok(())
    })
}

pub fn projection_optimality(cases: u32) -> Result<(), String> {
    check(
        cases,
        (budget_case(), vector(5, 0.0, 3.0), 0.0f64..=1.0),
        |((y, p, b), z, fill)| {
            let prices = PriceVector::new(p.clone()).unwrap();
            let set = BudgetSet::new(&prices, b).unwrap();
            let x = project_budget(y.view(), &set);
            prop_assert!(x.iter().all(|&v| v >= 0.0));
            prop_assert!(x.dot(&p) <= b * (1.0 + 1e-12));
            let z = into_budget(z.slice(ndarray::s![..p.len()]).to_owned(), &p, b, fill);
            // variational inequality of the projection: (y − x)·(z − x) ≤ 0
            let vi = (&y - &x).dot(&(&z - &x));
            prop_assert!(vi <= 1e-7, "(y − x)·(z − x) = {vi}");
            Ok(())
        },
    )?;
    check(cases, (supply_case(), 0.0f64..=1.0), |(y, fill)| {
        let x = project_supply(&y);
        let sums = x.column_sums();
        prop_assert!(sums.iter().all(|&s| s <= 1.0 + 1e-12));
        let mut z = y.mapv(f64::abs);
        for mut col in z.columns_mut() {
            let s = col.sum();
            if s > 0.0 {
                col.mapv_inplace(|v| v * fill / s);
            }
        }
        let vi = ((&y - x.as_array()) * (&z - x.as_array())).sum();
        prop_assert!(vi <= 1e-9, "(y − x)·(z − x) = {vi}");
        Ok(())
    })
}

pub fn projection_nonexpansive(cases: u32) -> Result<(), String> {
    check(cases, two_points_budget(), |(y1, y2, p, b)| {
        let prices = PriceVector::new(p.clone()).unwrap();
        let set = BudgetSet::new(&prices, b).unwrap();
        let x1 = project_budget(y1.view(), &set);
        let x2 = project_budget(y2.view(), &set);
        prop_assert!(dist(&x1, &x2) <= dist(&y1, &y2) + 1e-8);
        prop_assert!(dist(&project_nonneg(&y1), &project_nonneg(&y2)) <= dist(&y1, &y2) + 1e-12);
        Ok(())
    })?;
    check(cases, two_supply_points(), |(y1, y2)| {
        let x1 = project_supply(&y1);
        let x2 = project_supply(&y2);
        prop_assert!(dist2(x1.as_array(), x2.as_array()) <= dist2(&y1, &y2) + 1e-12);
        Ok(())
    })
}

pub fn cobb_douglas_homogeneity(cases: u32) -> Result<(), String> {
    check(
        cases,
        (
            market_and_allocation(UtilityFamily::CobbDouglas, 0.01, 2.0),
            0.0f64..10.0,
        ),
        |((mkt, x), lambda)| {
            for i in 0..mkt.num_buyers() {
                let u = mkt.utility(i, &x);
                let scaled = x.row(i).mapv(|v| v * lambda);
                let u_scaled = mkt.utility_with_bundle(i, scaled.view(), &x);
                prop_assert!((u_scaled - lambda * u).abs() <= 1e-10 * (lambda * u).max(1e-300));
            }
            Ok(())
        },
    )
}

pub fn cobb_douglas_euler(cases: u32) -> Result<(), String> {
    check(
        cases,
        market_and_allocation(UtilityFamily::CobbDouglas, 0.01, 2.0),
        |(mkt, x)| {
            for i in 0..mkt.num_buyers() {
                let u = mkt.utility(i, &x);
                let euler: f64 = (0..mkt.num_goods())
                    .map(|j| x.as_array()[[i, j]] * mkt.utility_partial(i, j, &x))
                    .sum();
                prop_assert!((euler - u).abs() <= 1e-8 * u, "Σ x ∂u = {euler}, u = {u}");
                let g = mkt.utility_grad(i, &x, 0.0);
                prop_assert!((x.row(i).dot(&g) - u).abs() <= 1e-8 * u);
            }
            Ok(())
        },
    )
}

/// `⟨F(X) − F(Y), X − Y⟩ ≤ 0` for the ascent field of the buyer pseudo-game.
pub fn cobb_douglas_monotone(cases: u32) -> Result<(), String> {
    let strategy = market(UtilityFamily::CobbDouglas).prop_flat_map(|mkt| {
        let (n, m) = (mkt.num_buyers(), mkt.num_goods());
        (Just(mkt), matrix(n, m, 0.01, 1.0), matrix(n, m, 0.01, 1.0))
    });
    check(cases, strategy, |(mkt, a, b)| {
        let xa = Allocation::new(a.clone()).unwrap();
        let xb = Allocation::new(b.clone()).unwrap();
        let fa = pseudo_gradient(&mkt, &xa, 1e-8);
        let fb = pseudo_gradient(&mkt, &xb, 1e-8);
        let inner = ((&fa - &fb) * (&a - &b)).sum();
        prop_assert!(inner <= 1e-9, "⟨F(X) − F(Y), X − Y⟩ = {inner}");
        Ok(())
    })
}

fn central_difference(
    f: impl Fn(&Allocation) -> f64,
    x: &Allocation,
    i: usize,
    j: usize,
    h: f64,
) -> f64 {
    let mut plus = x.as_array().clone();
    plus[[i, j]] += h;
    let mut minus = x.as_array().clone();
    minus[[i, j]] -= h;
    (f(&Allocation::new(plus).unwrap()) - f(&Allocation::new(minus).unwrap())) / (2.0 * h)
}

fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-5
}

/// Analytic gradients of `u_i` and `b_i log(u_i + eps_u)` against central
/// differences at interior points. Leontief points near a kink are skipped.
pub fn gradients_match_finite_differences(cases: u32) -> Result<(), String> {
    let h = 1e-6;
    for family in UtilityFamily::ALL {
        check(
            cases,
            market_and_allocation(family, 0.1, 2.0),
            |(mkt, x)| {
                for i in 0..mkt.num_buyers() {
                    if family == UtilityFamily::Leontief && near_leontief_kink(&mkt, i, &x, 1e-3) {
                        continue;
                    }
                    let b = mkt.budget(i);
                    let log_grad = mkt.log_utility_grad(i, &x, 0.0);
                    let grad = mkt.utility_grad(i, &x, 0.0);
                    for j in 0..mkt.num_goods() {
                        let num_log =
                            central_difference(|y| b * mkt.utility(i, y).ln(), &x, i, j, h);
                        let num = central_difference(|y| mkt.utility(i, y), &x, i, j, h);
                        prop_assert!(
                            close(log_grad[j], num_log),
                            "{family} log grad ({i},{j}): {} vs {num_log}",
                            log_grad[j]
                        );
                        prop_assert!(
                            close(grad[j], num),
                            "{family} grad ({i},{j}): {} vs {num}",
                            grad[j]
                        );
                    }
                }
                Ok(())
            },
        )?;
    }
    Ok(())
}

/// True when buyer `i`'s Leontief minimum is within `gap` of a tie, either
/// between two of its own goods or with a neighbour's own utility.
fn near_leontief_kink(mkt: &MarketInstance, i: usize, x: &Allocation, gap: f64) -> bool {
    let v = mkt.valuations().row(i);
    let mut ratios: Vec<f64> = x.row(i).iter().zip(v.iter()).map(|(a, b)| a / b).collect();
    ratios.extend(
        mkt.neighbors(i)
            .iter()
            .map(|&k| mkt.own_utility(k, x.row(k))),
    );
    ratios.sort_unstable_by(f64::total_cmp);
    ratios.len() > 1 && ratios[1] - ratios[0] < gap
}

/// Exact Cobb-Douglas equilibrium of the plain market:
/// `p_j = Σ_i b_i v_ij` and `x_ij = b_i v_ij / p_j`, from raw valuations.
pub fn closed_form_cobb_douglas(mkt: &MarketInstance) -> (Allocation, PriceVector) {
    let raw = mkt.raw_valuations();
    let (n, m) = raw.dim();
    let mut v = raw.clone();
    for mut row in v.rows_mut() {
        let s = row.sum();
        row.mapv_inplace(|a| a / s);
    }
    let p: Array1<f64> = (0..m)
        .map(|j| (0..n).map(|i| mkt.budget(i) * v[[i, j]]).sum())
        .collect();
    let x = Array2::from_shape_fn((n, m), |(i, j)| mkt.budget(i) * v[[i, j]] / p[j]);
    (Allocation::new(x).unwrap(), PriceVector::new(p).unwrap())
}

/// A candidate passing `check_gne` at `tau` passes `check_ce` at
/// `(1 + Σ b) tau`; exact dyadic equilibria pass both at zero tolerance.
pub fn certificate_round_trip(cases: u32) -> Result<(), String> {
    let exact = [
        (vec![4.0, 4.0], array![[0.75, 0.25], [0.25, 0.75]], vec![]),
        (
            vec![4.0, 4.0],
            array![[0.75, 0.25], [0.25, 0.75]],
            vec![(0, 1), (1, 0)],
        ),
        (vec![2.0, 6.0], array![[0.5, 0.5], [0.5, 0.5]], vec![(0, 1)]),
        (vec![8.0], array![[0.25, 0.75]], vec![]),
    ];
    for (b, v, edges) in exact {
        let mkt = MarketInstance::new(UtilityFamily::CobbDouglas, b, v, edges).unwrap();
        let (x, p) = closed_form_cobb_douglas(&mkt);
        let zero = Tolerances::uniform(0.0);
        let gne = check_gne(&mkt, &x, &p, &zero);
        if !gne.passed() || !check_ce(&mkt, &x, &p, &zero).passed() {
            return Err(format!(
                "exact equilibrium rejected at zero tolerance: {gne:?}"
            ));
        }
    }
    check(cases, market(UtilityFamily::CobbDouglas), |mkt| {
        let (x, p) = closed_form_cobb_douglas(&mkt);
        let tau = 1e-8;
        prop_assert!(check_gne(&mkt, &x, &p, &Tolerances::uniform(tau)).passed());
        let c = 1.0 + mkt.total_budget();
        prop_assert!(check_ce(&mkt, &x, &p, &Tolerances::uniform(c * tau)).passed());
        Ok(())
    })
}
