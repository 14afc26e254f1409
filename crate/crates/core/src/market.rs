//! Market data model: buyers, goods, the influence graph, and the three
//! utility families with their (sub)gradients.
//!
//! Buyer `i`'s utility aggregates the "own" utilities of every buyer in
//! `{i} ∪ N_i`, where `N_i` are the in-neighbours of `i` in the influence
//! graph. Linear sums them, Cobb-Douglas multiplies them and Leontief takes
//! the minimum.

use std::fmt;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{MarketError, Result};

/// Default shift applied inside `log(u + eps_u)`.
pub const DEFAULT_EPS_U: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UtilityFamily {
    Linear,
    CobbDouglas,
    Leontief,
}

impl UtilityFamily {
    pub const ALL: [UtilityFamily; 3] = [
        UtilityFamily::Linear,
        UtilityFamily::CobbDouglas,
        UtilityFamily::Leontief,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            UtilityFamily::Linear => "linear",
            UtilityFamily::CobbDouglas => "cobb-douglas",
            UtilityFamily::Leontief => "leontief",
        }
    }
}

impl fmt::Display for UtilityFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for UtilityFamily {
    type Err = MarketError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(UtilityFamily::Linear),
            "cobb-douglas" => Ok(UtilityFamily::CobbDouglas),
            "leontief" => Ok(UtilityFamily::Leontief),
            other => Err(MarketError::InvalidMarket(format!(
                "unknown utility family {other:?}"
            ))),
        }
    }
}

/// An influence Fisher market with unit supply of every good.
///
/// Cobb-Douglas exponents are normalised to sum to one per buyer at
/// construction; the raw rows are retained so that serialisation round-trips
/// bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketInstance {
    family: UtilityFamily,
    budgets: Array1<f64>,
    raw_valuations: Array2<f64>,
    valuations: Array2<f64>,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl MarketInstance {
    /// Builds a market. `edges` holds ordered pairs `(k, i)`: buyer `i`'s
    /// utility depends on buyer `k`'s bundle.
    pub fn new(
        family: UtilityFamily,
        budgets: Vec<f64>,
        valuations: Array2<f64>,
        edges: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let n = budgets.len();
        if n == 0 {
            return Err(MarketError::InvalidMarket("market has no buyers".into()));
        }
        let (rows, m) = valuations.dim();
        if rows != n {
            return Err(MarketError::InvalidMarket(format!(
                "valuations have {rows} rows but there are {n} budgets"
            )));
        }
        if m == 0 {
            return Err(MarketError::InvalidMarket("market has no goods".into()));
        }
        for (i, &b) in budgets.iter().enumerate() {
            if !b.is_finite() || b <= 0.0 {
                return Err(MarketError::InvalidMarket(format!(
                    "budget of buyer {i} must be finite and positive, got {b}"
                )));
            }
        }
        for ((i, j), &v) in valuations.indexed_iter() {
            if !v.is_finite() || v <= 0.0 {
                return Err(MarketError::InvalidMarket(format!(
                    "valuation ({i}, {j}) must be finite and positive, got {v}"
                )));
            }
        }

        let mut edges = edges;
        edges.sort_unstable();
        edges.dedup();
        let mut neighbors = vec![Vec::new(); n];
        for &(k, i) in &edges {
            if k >= n || i >= n {
                return Err(MarketError::InvalidMarket(format!(
                    "edge ({k}, {i}) references a buyer outside 0..{n}"
                )));
            }
            if k == i {
                return Err(MarketError::InvalidMarket(format!(
                    "self-loop on buyer {k}"
                )));
            }
            neighbors[i].push(k);
        }

        let raw_valuations = valuations;
        let valuations = match family {
            UtilityFamily::CobbDouglas => {
                let mut v = raw_valuations.clone();
                for mut row in v.rows_mut() {
                    let s = row.sum();
                    row.mapv_inplace(|a| a / s);
                }
                v
            }
            _ => raw_valuations.clone(),
        };

        Ok(Self {
            family,
            budgets: Array1::from(budgets),
            raw_valuations,
            valuations,
            edges,
            neighbors,
        })
    }

    pub fn num_buyers(&self) -> usize {
        self.budgets.len()
    }

    pub fn num_goods(&self) -> usize {
        self.valuations.ncols()
    }

    pub fn family(&self) -> UtilityFamily {
        self.family
    }

    pub fn budgets(&self) -> &Array1<f64> {
        &self.budgets
    }

    pub fn budget(&self, i: usize) -> f64 {
        self.budgets[i]
    }

    pub fn total_budget(&self) -> f64 {
        self.budgets.sum()
    }

    /// Valuations as used by the utility functions (normalised for Cobb-Douglas).
    pub fn valuations(&self) -> &Array2<f64> {
        &self.valuations
    }

    /// Valuations exactly as supplied to the constructor.
    pub fn raw_valuations(&self) -> &Array2<f64> {
        &self.raw_valuations
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// In-neighbours `N_i`, sorted ascending.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Same buyers and valuations with the influence graph removed.
    pub fn without_influence(&self) -> MarketInstance {
        MarketInstance {
            edges: Vec::new(),
            neighbors: vec![Vec::new(); self.num_buyers()],
            ..self.clone()
        }
    }

    fn check_buyer(&self, i: usize) {
        assert!(
            i < self.num_buyers(),
            "buyer index {i} out of range for a market with {} buyers",
            self.num_buyers()
        );
    }

    /// Utility buyer `k` derives from its own bundle alone.
    pub fn own_utility(&self, k: usize, bundle: ArrayView1<f64>) -> f64 {
        self.check_buyer(k);
        let v = self.valuations.row(k);
        match self.family {
            UtilityFamily::Linear => v.dot(&bundle),
            UtilityFamily::CobbDouglas => v
                .iter()
                .zip(bundle.iter())
                .map(|(&a, &x)| x.powf(a))
                .product(),
            UtilityFamily::Leontief => v
                .iter()
                .zip(bundle.iter())
                .map(|(&a, &x)| x / a)
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Aggregate of the neighbours' own utilities (`None` when `N_i` is empty).
    fn neighbor_term(&self, i: usize, x: &Allocation) -> Option<f64> {
        let nbrs = &self.neighbors[i];
        if nbrs.is_empty() {
            return None;
        }
        let own = nbrs.iter().map(|&k| self.own_utility(k, x.row(k)));
        Some(match self.family {
            UtilityFamily::Linear => own.sum(),
            UtilityFamily::CobbDouglas => own.product(),
            UtilityFamily::Leontief => own.fold(f64::INFINITY, f64::min),
        })
    }

    fn combine(&self, own: f64, neighbors: Option<f64>) -> f64 {
        match (self.family, neighbors) {
            (_, None) => own,
            (UtilityFamily::Linear, Some(t)) => own + t,
            (UtilityFamily::CobbDouglas, Some(t)) => own * t,
            (UtilityFamily::Leontief, Some(t)) => own.min(t),
        }
    }

    /// `u_i(x_i, x_{N_i})` evaluated on a full allocation.
    pub fn utility(&self, i: usize, x: &Allocation) -> f64 {
        self.check_buyer(i);
        self.check_shape(x);
        self.utility_with_bundle(i, x.row(i), x)
    }

    /// `u_i(bundle, x_{N_i})`: buyer `i`'s row of `x` is replaced by `bundle`.
    pub fn utility_with_bundle(&self, i: usize, bundle: ArrayView1<f64>, x: &Allocation) -> f64 {
        self.check_buyer(i);
        let own = self.own_utility(i, bundle);
        self.combine(own, self.neighbor_term(i, x))
    }

    /// A subgradient of `x_i ↦ b_i log(u_i(x_i, x_{N_i}) + eps_u)`.
    ///
    /// Cobb-Douglas coordinates use `b_i v_ij / max(x_ij, eps_u)`, which keeps
    /// the neighbours' factor out of the step. Leontief returns zero when the
    /// minimum is attained by a neighbour, otherwise mass on the lowest-index
    /// own argmin.
    pub fn log_utility_grad(&self, i: usize, x: &Allocation, eps_u: f64) -> Array1<f64> {
        self.check_buyer(i);
        self.check_shape(x);
        self.log_utility_grad_with_bundle(i, x.row(i), x, eps_u)
    }

    pub fn log_utility_grad_with_bundle(
        &self,
        i: usize,
        bundle: ArrayView1<f64>,
        x: &Allocation,
        eps_u: f64,
    ) -> Array1<f64> {
        let b = self.budgets[i];
        let v = self.valuations.row(i);
        match self.family {
            UtilityFamily::Linear => {
                let u = self.utility_with_bundle(i, bundle, x);
                v.mapv(|a| b * a / (u + eps_u))
            }
            UtilityFamily::CobbDouglas => Array1::from_iter(
                v.iter()
                    .zip(bundle.iter())
                    .map(|(&a, &xj)| b * a / xj.max(eps_u)),
            ),
            UtilityFamily::Leontief => {
                let mut g = Array1::zeros(v.len());
                let (j_star, own_min) = leontief_argmin(v, bundle);
                if let Some(t) = self.neighbor_term(i, x) {
                    if t <= own_min {
                        return g;
                    }
                }
                g[j_star] = b / (v[j_star] * (own_min + eps_u));
                g
            }
        }
    }

    /// A supergradient of `x_i ↦ u_i(x_i, x_{N_i})`.
    ///
    /// Cobb-Douglas gradients are taken at the point where every bundle
    /// entry (own and neighbours') is floored at `eps_u`. At a bundle with
    /// two zero entries the exact partials all vanish and ascent would stall.
    pub fn utility_grad(&self, i: usize, x: &Allocation, eps_u: f64) -> Array1<f64> {
        self.check_buyer(i);
        self.check_shape(x);
        self.utility_grad_with_bundle(i, x.row(i), x, eps_u)
    }

    pub fn utility_grad_with_bundle(
        &self,
        i: usize,
        bundle: ArrayView1<f64>,
        x: &Allocation,
        eps_u: f64,
    ) -> Array1<f64> {
        let v = self.valuations.row(i);
        match self.family {
            UtilityFamily::Linear => v.to_owned(),
            UtilityFamily::CobbDouglas => {
                let floored = bundle.mapv(|a| a.max(eps_u));
                let t: f64 = self.neighbors[i]
                    .iter()
                    .map(|&k| self.own_utility(k, x.row(k).mapv(|a| a.max(eps_u)).view()))
                    .product();
                let u = t * self.own_utility(i, floored.view());
                Array1::from_iter(v.iter().zip(floored.iter()).map(|(&a, &xj)| u * a / xj))
            }
            UtilityFamily::Leontief => {
                let mut g = Array1::zeros(v.len());
                let (j_star, own_min) = leontief_argmin(v, bundle);
                if self.neighbor_term(i, x).is_some_and(|t| t <= own_min) {
                    return g;
                }
                g[j_star] = 1.0 / v[j_star];
                g
            }
        }
    }

    /// A (super)gradient component `∂u_i/∂x_ij` of the utility itself.
    pub fn utility_partial(&self, i: usize, j: usize, x: &Allocation) -> f64 {
        self.check_buyer(i);
        let v = self.valuations.row(i);
        let bundle = x.row(i);
        match self.family {
            UtilityFamily::Linear => v[j],
            UtilityFamily::CobbDouglas => {
                let u = self.utility(i, x);
                if bundle[j] > 0.0 {
                    u * v[j] / bundle[j]
                } else {
                    f64::INFINITY
                }
            }
            UtilityFamily::Leontief => {
                let (j_star, own_min) = leontief_argmin(v, bundle);
                let capped = self.neighbor_term(i, x).is_some_and(|t| t <= own_min);
                if capped || j != j_star {
                    0.0
                } else {
                    1.0 / v[j]
                }
            }
        }
    }

    fn check_shape(&self, x: &Allocation) {
        assert_eq!(
            x.dim(),
            (self.num_buyers(), self.num_goods()),
            "allocation shape does not match the market"
        );
    }
}

/// Lowest-index argmin of `x_j / v_j` and the minimum value.
fn leontief_argmin(v: ArrayView1<f64>, bundle: ArrayView1<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, (&a, &xj)) in v.iter().zip(bundle.iter()).enumerate() {
        let r = xj / a;
        if r < best.1 {
            best = (j, r);
        }
    }
    best
}

/// Non-negative `n × m` matrix; row `i` is buyer `i`'s bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation(Array2<f64>);

impl Allocation {
    pub fn new(x: Array2<f64>) -> Result<Self> {
        if let Some(((i, j), v)) = x.indexed_iter().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(MarketError::InvalidAllocation(format!(
                "entry ({i}, {j}) must be finite and non-negative, got {v}"
            )));
        }
        Ok(Self(x))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(MarketError::InvalidAllocation("ragged rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let x = Array2::from_shape_vec((n, m), flat)
            .map_err(|e| MarketError::InvalidAllocation(e.to_string()))?;
        Self::new(x)
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self(Array2::zeros((n, m)))
    }

    /// Wraps a matrix produced by a projection; entries are already feasible.
    pub(crate) fn from_projected(x: Array2<f64>) -> Self {
        debug_assert!(x.iter().all(|v| *v >= 0.0));
        Self(x)
    }

    pub fn dim(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.0.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    /// Total demand per good.
    pub fn column_sums(&self) -> Array1<f64> {
        self.0.sum_axis(Axis(0))
    }

    /// Copy of `self` with buyer `i`'s row replaced.
    pub fn with_row(&self, i: usize, bundle: ArrayView1<f64>) -> Allocation {
        let mut x = self.0.clone();
        x.row_mut(i).assign(&bundle);
        Allocation(x)
    }
}

/// Non-negative price per good.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceVector(Array1<f64>);

impl PriceVector {
    pub fn new(p: Array1<f64>) -> Result<Self> {
        if let Some((j, v)) = p
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(MarketError::InvalidPrices(format!(
                "price of good {j} must be finite and non-negative, got {v}"
            )));
        }
        Ok(Self(p))
    }

    pub fn from_vec(p: Vec<f64>) -> Result<Self> {
        Self::new(Array1::from(p))
    }

    pub fn uniform(m: usize, value: f64) -> Self {
        assert!(value >= 0.0 && value.is_finite());
        Self(Array1::from_elem(m, value))
    }

    pub(crate) fn from_projected(p: Array1<f64>) -> Self {
        debug_assert!(p.iter().all(|v| *v >= 0.0));
        Self(p)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_array(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.to_vec()
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.0.iter().all(|&p| p > 0.0)
    }

    /// Componentwise `max(p_j, floor)`.
    pub fn floored(&self, floor: f64) -> PriceVector {
        PriceVector(self.0.mapv(|p| p.max(floor)))
    }
}

impl std::ops::Index<usize> for PriceVector {
    type Output = f64;

    fn index(&self, j: usize) -> &f64 {
        &self.0[j]
    }
}

/// `z_j = Σ_i x_ij − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcessDemand(pub Array1<f64>);

impl ExcessDemand {
    pub fn as_array(&self) -> &Array1<f64> {
        &self.0
    }

    /// `max_j max(0, z_j)`.
    pub fn max_overdemand(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |acc, &z| acc.max(z))
    }

    /// `p · z`, the value of excess demand.
    pub fn value_at(&self, p: &PriceVector) -> f64 {
        self.0.dot(p.as_array())
    }
}

pub fn excess_demand(x: &Allocation) -> ExcessDemand {
    ExcessDemand(x.column_sums() - 1.0)
}
