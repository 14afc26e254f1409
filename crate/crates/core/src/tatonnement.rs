//! NE-oracle tâtonnement: prices follow projected subgradient descent on the
//! auctioneers' common value function, whose subgradient is the negative
//! excess demand at the buyers' Nash equilibrium.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::best_response::best_response_floored;
use crate::error::{MarketError, Result};
use crate::market::{excess_demand, Allocation, MarketInstance, PriceVector};
use crate::ne_oracle::{exploitability_with_floor, solve_ne, NeOracleConfig};
use crate::projections::{project_budget, project_nonneg, BudgetSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TatonnementConfig {
    pub outer_iters: usize,
    pub eta_p: f64,
    pub oracle: NeOracleConfig,
    /// Price floor applied when evaluating demand; `None` picks
    /// `1e-3 · Σ_i b_i / m`.
    pub eps_p: Option<f64>,
    pub record_every: usize,
}

impl TatonnementConfig {
    pub fn new(outer_iters: usize, eta_p: f64, oracle: NeOracleConfig) -> Self {
        Self {
            outer_iters,
            eta_p,
            oracle,
            eps_p: None,
            record_every: 1,
        }
    }

    pub fn price_floor(&self, mkt: &MarketInstance) -> f64 {
        self.eps_p.unwrap_or_else(|| default_price_floor(mkt))
    }

    pub fn validate(&self) -> Result<()> {
        if self.outer_iters == 0 {
            return Err(MarketError::InvalidConfig(
                "outer_iters must be at least 1".into(),
            ));
        }
        if !(self.eta_p > 0.0 && self.eta_p.is_finite()) {
            return Err(MarketError::InvalidConfig(format!(
                "eta_p must be positive, got {}",
                self.eta_p
            )));
        }
        if self.record_every == 0 {
            return Err(MarketError::InvalidConfig(
                "record_every must be at least 1".into(),
            ));
        }
        if let Some(e) = self.eps_p {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(MarketError::InvalidConfig(format!(
                    "eps_p must be non-negative, got {e}"
                )));
            }
        }
        self.oracle.validate()
    }
}

pub fn default_price_floor(mkt: &MarketInstance) -> f64 {
    1e-3 * mkt.total_budget() / mkt.num_goods() as f64
}

/// `p_j = Σ_i b_i / m`, which already satisfies `Σ_j p_j = Σ_i b_i`.
pub fn default_start_prices(mkt: &MarketInstance) -> PriceVector {
    PriceVector::uniform(mkt.num_goods(), mkt.total_budget() / mkt.num_goods() as f64)
}

/// Every buyer's best response at `p0` ignoring influence, projected onto its budget set.
pub fn default_start_allocation(mkt: &MarketInstance, p0: &PriceVector, eps_p: f64) -> Allocation {
    let plain = mkt.without_influence();
    let floored = p0.floored(eps_p);
    let zero = Allocation::zeros(mkt.num_buyers(), mkt.num_goods());
    let mut x = Array2::zeros((mkt.num_buyers(), mkt.num_goods()));
    for i in 0..mkt.num_buyers() {
        let br = best_response_floored(&plain, i, &floored, &zero, 0.0);
        let set = BudgetSet::new(&floored, mkt.budget(i)).expect("market budgets are positive");
        x.row_mut(i).assign(&project_budget(br.view(), &set));
    }
    Allocation::from_projected(x)
}

/// Buyer `i`'s Stackelberg objective
/// `f_i = Σ_j p_j (1 − Σ_{k≠i} x_kj) + b_i log(u_i(x_i, x_{N_i}) + eps_u)`.
pub fn objective(
    mkt: &MarketInstance,
    i: usize,
    x: &Allocation,
    p: &PriceVector,
    eps_u: f64,
) -> f64 {
    objective_with_bundle(mkt, i, x.row(i), x, p, eps_u)
}

fn objective_with_bundle(
    mkt: &MarketInstance,
    i: usize,
    bundle: ndarray::ArrayView1<f64>,
    x: &Allocation,
    p: &PriceVector,
    eps_u: f64,
) -> f64 {
    let others = x.column_sums() - x.row(i);
    let residual_supply = others.mapv(|s| 1.0 - s);
    p.as_array().dot(&residual_supply)
        + mkt.budget(i) * (mkt.utility_with_bundle(i, bundle, x) + eps_u).ln()
}

/// Auctioneer `i`'s value function at `p`: `f_i` maximised over buyer `i`'s
/// budget set with every other bundle held at `x_star`.
pub fn value_function(
    mkt: &MarketInstance,
    i: usize,
    p: &PriceVector,
    x_star: &Allocation,
    eps_u: f64,
) -> f64 {
    let br = best_response_floored(mkt, i, p, x_star, 0.0);
    objective_with_bundle(mkt, i, br.view(), x_star, p, eps_u)
}

/// `1 − Σ_i x_i`, the subgradient shared by every auctioneer's value function.
pub fn value_function_subgradient(x_star: &Allocation) -> Array1<f64> {
    x_star.column_sums().mapv(|s| 1.0 - s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub t: usize,
    pub obj_sum: f64,
    pub obj_buyers: Vec<f64>,
    pub exploitability: f64,
    pub walras_residual: f64,
    pub feas_violation: f64,
    pub prices: Vec<f64>,
}

impl TrajectoryRecord {
    /// Record for `(x, p)`; exploitability is measured at `oracle_prices`.
    pub fn observe(
        mkt: &MarketInstance,
        t: usize,
        x: &Allocation,
        p: &PriceVector,
        oracle_prices: &PriceVector,
        eps_u: f64,
    ) -> Self {
        let obj_buyers: Vec<f64> = (0..mkt.num_buyers())
            .map(|i| objective(mkt, i, x, p, eps_u))
            .collect();
        let z = excess_demand(x);
        Self {
            t,
            obj_sum: obj_buyers.iter().sum(),
            obj_buyers,
            exploitability: exploitability_with_floor(mkt, oracle_prices, x, 0.0),
            walras_residual: z.value_at(p).abs(),
            feas_violation: z.max_overdemand(),
            prices: p.to_vec(),
        }
    }
}

/// Per-iteration solver history, persisted as CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverTrajectory {
    pub records: Vec<TrajectoryRecord>,
}

impl SolverTrajectory {
    pub fn push(&mut self, record: TrajectoryRecord) {
        debug_assert!(self.records.last().is_none_or(|r| r.t < record.t));
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TrajectoryRecord> {
        self.records.last()
    }

    pub fn header(n: usize, m: usize) -> Vec<String> {
        let mut h = vec!["t".to_string(), "obj_sum".to_string()];
        h.extend((0..n).map(|i| format!("obj_buyer_{i}")));
        h.extend(["exploitability", "walras_residual", "feas_violation"].map(String::from));
        h.extend((0..m).map(|j| format!("p_{j}")));
        h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let (n, m) = self
            .records
            .first()
            .map_or((0, 0), |r| (r.obj_buyers.len(), r.prices.len()));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::header(n, m))?;
        for r in &self.records {
            let mut row = vec![r.t.to_string(), r.obj_sum.to_string()];
            row.extend(r.obj_buyers.iter().map(f64::to_string));
            row.extend(
                [r.exploitability, r.walras_residual, r.feas_violation].map(|v| v.to_string()),
            );
            row.extend(r.prices.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| MarketError::Csv(e.into()))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|source| MarketError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let headers = rd.headers()?.clone();
        let n = headers
            .iter()
            .filter(|h| h.starts_with("obj_buyer_"))
            .count();
        let m = headers.iter().filter(|h| h.starts_with("p_")).count();
        let bad = |msg: String| MarketError::Parse {
            path: "<trajectory>".into(),
            message: msg,
        };
        if headers.len() != 5 + n + m {
            return Err(bad(format!("unexpected header {headers:?}")));
        }
        let mut traj = SolverTrajectory::default();
        for rec in rd.records() {
            let rec = rec?;
            let num = |k: usize| -> Result<f64> {
                rec[k]
                    .parse::<f64>()
                    .map_err(|e| bad(format!("column {k}: {e}")))
            };
            let t = rec[0]
                .parse::<usize>()
                .map_err(|e| bad(format!("t: {e}")))?;
            traj.records.push(TrajectoryRecord {
                t,
                obj_sum: num(1)?,
                obj_buyers: (0..n).map(|i| num(2 + i)).collect::<Result<_>>()?,
                exploitability: num(2 + n)?,
                walras_residual: num(3 + n)?,
                feas_violation: num(4 + n)?,
                prices: (0..m).map(|j| num(5 + n + j)).collect::<Result<_>>()?,
            });
        }
        Ok(traj)
    }
}

#[derive(Debug, Clone)]
pub struct TatonnementResult {
    pub allocation: Allocation,
    pub prices: PriceVector,
    /// Mean of `p^(1) … p^(T)`.
    pub average_prices: PriceVector,
    pub trajectory: SolverTrajectory,
}

/// Runs `cfg.outer_iters` rounds of
/// `x^(t) = NE(max(p^(t−1), eps_p))`, `p^(t) = max(0, p^(t−1) − eta_p (1 − Σ_i x_i^(t)))`,
/// warm-starting each oracle call from the previous allocation.
pub fn run_tatonnement(
    mkt: &MarketInstance,
    p0: &PriceVector,
    x0: &Allocation,
    cfg: &TatonnementConfig,
) -> TatonnementResult {
    let eps_p = cfg.price_floor(mkt);
    let eps_u = cfg.oracle.eps_u;
    let mut p = p0.clone();
    let mut x = x0.clone();
    let mut price_total = Array1::<f64>::zeros(mkt.num_goods());
    let mut trajectory = SolverTrajectory::default();
    trajectory.push(TrajectoryRecord::observe(
        mkt,
        0,
        &x,
        &p,
        &p.floored(eps_p),
        eps_u,
    ));

    for t in 1..=cfg.outer_iters {
        let oracle_prices = p.floored(eps_p);
        x = solve_ne(mkt, &oracle_prices, &x, &cfg.oracle).allocation;
        let step = value_function_subgradient(&x) * cfg.eta_p;
        p = PriceVector::from_projected(project_nonneg(&(p.as_array() - &step)));
        price_total += p.as_array();

        if t % cfg.record_every == 0 || t == cfg.outer_iters {
            trajectory.push(TrajectoryRecord::observe(
                mkt,
                t,
                &x,
                &p,
                &oracle_prices,
                eps_u,
            ));
        }
    }

    TatonnementResult {
        allocation: x,
        prices: p,
        average_prices: PriceVector::from_projected(price_total / cfg.outer_iters as f64),
        trajectory,
    }
}
