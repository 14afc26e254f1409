//! Random market generation, batch runs across seeds, and aggregation of
//! the per-market trajectories into a mean-objective convergence curve.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificate::{check_ce, EquilibriumCertificate, Tolerances};
use crate::error::{MarketError, Result};
use crate::io::{write_market, write_toml};
use crate::market::{Allocation, MarketInstance, PriceVector, UtilityFamily};
use crate::ne_oracle::{NeOracleConfig, StepRule};
use crate::tatonnement::{
    default_start_allocation, default_start_prices, run_tatonnement, SolverTrajectory,
    TatonnementConfig, TrajectoryRecord,
};
use crate::vi::{recover_prices_or_zero, solve_ve_with, uniform_start, ViConfig};

pub const BUDGET_RANGE: (f64, f64) = (5.0, 15.0);
pub const VALUATION_RANGE: (f64, f64) = (5.0, 35.0);
/// Iteration at which the `C/√t` reference curve is anchored.
pub const REFERENCE_ANCHOR: usize = 20;

const STREAM_BUDGETS: u64 = 0;
const STREAM_VALUATIONS: u64 = 1;
const STREAM_EDGES: u64 = 2;
const STREAMS_PER_MARKET: u64 = 4;

/// Outer/inner schedule used for the published convergence runs.
///
/// Leontief gradients jump at every kink, so the backtracking test would
/// shrink the step to its floor; those runs take the plain constant step.
pub fn published_schedule(family: UtilityFamily) -> TatonnementConfig {
    let (eta_p, inner, eta_x) = match family {
        UtilityFamily::Linear => (2.0, 100, 0.2),
        UtilityFamily::CobbDouglas => (8.0, 200, 0.5),
        UtilityFamily::Leontief => (5.0, 100, 3.0),
    };
    let mut oracle = NeOracleConfig::new(inner, eta_x);
    if family == UtilityFamily::Leontief {
        oracle = oracle.with_step_rule(StepRule::Constant);
    }
    TatonnementConfig::new(400, eta_p, oracle)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolverSettings {
    Tatonnement(TatonnementConfig),
    Vi {
        config: ViConfig,
        record_every: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub family: UtilityFamily,
    pub buyers: usize,
    pub goods: usize,
    pub num_markets: usize,
    pub seed: u64,
    pub edge_prob: f64,
    pub solver: SolverSettings,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// 3 buyers, 3 goods, 50 markets, edge probability 0.5 and the family's
    /// published tâtonnement schedule.
    pub fn paper_defaults(family: UtilityFamily, seed: u64, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            family,
            buyers: 3,
            goods: 3,
            num_markets: 50,
            seed,
            edge_prob: 0.5,
            solver: SolverSettings::Tatonnement(published_schedule(family)),
            out_dir: out_dir.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_markets == 0 {
            return Err(MarketError::InvalidConfig(
                "num_markets must be at least 1".into(),
            ));
        }
        if self.buyers == 0 || self.goods == 0 {
            return Err(MarketError::InvalidConfig(
                "markets need at least one buyer and one good".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.edge_prob) {
            return Err(MarketError::InvalidConfig(format!(
                "edge probability must lie in [0, 1], got {}",
                self.edge_prob
            )));
        }
        match &self.solver {
            SolverSettings::Tatonnement(c) => c.validate(),
            SolverSettings::Vi {
                config,
                record_every,
            } => {
                if *record_every == 0 {
                    return Err(MarketError::InvalidConfig(
                        "record_every must be at least 1".into(),
                    ));
                }
                config.validate()
            }
        }
    }
}

fn stream(seed: u64, index: usize, field: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 * STREAMS_PER_MARKET + field);
    rng
}

/// Samples market `index` of the batch. Each field draws from its own
/// ChaCha stream keyed by `(seed, index, field)`, so a market does not depend
/// on how many others are generated or in which order.
pub fn generate_market(
    family: UtilityFamily,
    buyers: usize,
    goods: usize,
    edge_prob: f64,
    seed: u64,
    index: usize,
) -> Result<MarketInstance> {
    let mut rng = stream(seed, index, STREAM_BUDGETS);
    let budgets: Vec<f64> = (0..buyers)
        .map(|_| rng.gen_range(BUDGET_RANGE.0..=BUDGET_RANGE.1))
        .collect();

    let mut rng = stream(seed, index, STREAM_VALUATIONS);
    let valuations = Array2::from_shape_simple_fn((buyers, goods), || {
        rng.gen_range(VALUATION_RANGE.0..=VALUATION_RANGE.1)
    });

    let mut rng = stream(seed, index, STREAM_EDGES);
    let mut edges = Vec::new();
    for k in 0..buyers {
        for i in 0..buyers {
            if k != i && rng.gen_bool(edge_prob) {
                edges.push((k, i));
            }
        }
    }
    MarketInstance::new(family, budgets, valuations, edges)
}

pub fn generate_for(cfg: &ExperimentConfig, index: usize) -> Result<MarketInstance> {
    generate_market(
        cfg.family,
        cfg.buyers,
        cfg.goods,
        cfg.edge_prob,
        cfg.seed,
        index,
    )
}

/// Final state and history of one solve.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub allocation: Allocation,
    pub prices: PriceVector,
    pub trajectory: SolverTrajectory,
    pub certificate: EquilibriumCertificate,
}

impl SolveOutcome {
    pub fn diverged(&self) -> bool {
        !self.prices.as_array().iter().all(|v| v.is_finite())
            || self
                .trajectory
                .records
                .iter()
                .any(|r| !r.obj_sum.is_finite())
    }
}

/// Tâtonnement from the default start point, certified at default tolerances.
pub fn solve_tatonnement(mkt: &MarketInstance, cfg: &TatonnementConfig) -> SolveOutcome {
    let p0 = default_start_prices(mkt);
    let x0 = default_start_allocation(mkt, &p0, cfg.price_floor(mkt));
    let res = run_tatonnement(mkt, &p0, &x0, cfg);
    let certificate = check_ce(
        mkt,
        &res.allocation,
        &res.prices,
        &Tolerances::for_market(mkt),
    );
    SolveOutcome {
        allocation: res.allocation,
        prices: res.prices,
        trajectory: res.trajectory,
        certificate,
    }
}

/// VI solve from the equal split, with prices recovered (zero for
/// undemanded goods) at every recorded iteration.
pub fn solve_vi(mkt: &MarketInstance, cfg: &ViConfig, record_every: usize) -> SolveOutcome {
    let tol = Tolerances::for_market(mkt);
    let floor = tol.price_floor;
    let record = |t: usize, x: &Allocation| -> TrajectoryRecord {
        let p = recover_prices_or_zero(mkt, x, cfg)
            .map(|r| r.prices)
            .unwrap_or_else(|_| PriceVector::uniform(mkt.num_goods(), 0.0));
        TrajectoryRecord::observe(mkt, t, x, &p, &p.floored(floor), cfg.eps_u)
    };

    let x0 = uniform_start(mkt);
    let mut trajectory = SolverTrajectory::default();
    trajectory.push(record(0, &x0));
    let x = solve_ve_with(mkt, &x0, cfg, |t, x| {
        if t % record_every == 0 && t != cfg.iters {
            trajectory.push(record(t, x));
        }
    });
    trajectory.push(record(cfg.iters, &x));

    let prices = recover_prices_or_zero(mkt, &x, cfg)
        .map(|r| r.prices)
        .unwrap_or_else(|_| PriceVector::uniform(mkt.num_goods(), 0.0));
    let certificate = check_ce(mkt, &x, &prices, &tol);
    SolveOutcome {
        allocation: x,
        prices,
        trajectory,
        certificate,
    }
}

pub fn solve_with(mkt: &MarketInstance, settings: &SolverSettings) -> SolveOutcome {
    match settings {
        SolverSettings::Tatonnement(cfg) => solve_tatonnement(mkt, cfg),
        SolverSettings::Vi {
            config,
            record_every,
        } => solve_vi(mkt, config, *record_every),
    }
}

/// One row of the aggregate file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregatePoint {
    pub t: usize,
    pub obj_mean: f64,
    /// `|obj_mean(t) − obj_mean(T)|`
    pub residual: f64,
    /// `C/√t` with `C` fixed so the curve meets the residual at the anchor.
    pub ref_sqrt: f64,
}

/// Mean of `obj_sum` across markets per recorded iteration, plus the
/// residual to the final mean and the anchored `C/√t` reference.
pub fn aggregate(trajectories: &[&SolverTrajectory]) -> Result<Vec<AggregatePoint>> {
    let first = trajectories
        .first()
        .ok_or_else(|| MarketError::InvalidConfig("nothing to aggregate".into()))?;
    let ts: Vec<usize> = first.records.iter().map(|r| r.t).collect();
    for traj in trajectories {
        if traj.records.iter().map(|r| r.t).ne(ts.iter().copied()) {
            return Err(MarketError::InvalidConfig(
                "trajectories record different iterations".into(),
            ));
        }
    }
    let k = trajectories.len() as f64;
    let means: Vec<f64> = (0..ts.len())
        .map(|row| {
            trajectories
                .iter()
                .map(|tr| tr.records[row].obj_sum)
                .sum::<f64>()
                / k
        })
        .collect();
    let last = *means.last().expect("trajectories are non-empty");
    let residuals: Vec<f64> = means.iter().map(|v| (v - last).abs()).collect();

    let anchor = ts.iter().position(|&t| t >= REFERENCE_ANCHOR);
    let c = anchor.map(|a| residuals[a] * (ts[a] as f64).sqrt());

    Ok(ts
        .iter()
        .zip(means.iter().zip(&residuals))
        .map(|(&t, (&obj_mean, &residual))| AggregatePoint {
            t,
            obj_mean,
            residual,
            ref_sqrt: c.map_or(f64::NAN, |c| c / (t as f64).sqrt()),
        })
        .collect())
}

pub fn write_aggregate(path: &Path, points: &[AggregatePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "obj_mean", "ref_sqrt", "residual"])?;
    for pt in points {
        w.write_record([
            pt.t.to_string(),
            pt.obj_mean.to_string(),
            pt.ref_sqrt.to_string(),
            pt.residual.to_string(),
        ])?;
    }
    w.flush().map_err(|source| MarketError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub median: f64,
    pub p90: f64,
    pub max: f64,
}

impl Quantiles {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        let mut v: Vec<f64> = values.collect();
        v.sort_unstable_by(f64::total_cmp);
        let at = |q: f64| -> f64 {
            if v.is_empty() {
                return f64::NAN;
            }
            let idx = ((v.len() - 1) as f64 * q).round() as usize;
            v[idx]
        };
        Self {
            median: at(0.5),
            p90: at(0.9),
            max: at(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSummary {
    pub index: usize,
    pub passed: bool,
    pub diverged: bool,
    pub final_prices: Vec<f64>,
    pub certificate: EquilibriumCertificate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub family: UtilityFamily,
    pub num_markets: usize,
    pub seed: u64,
    pub pass_rate: f64,
    pub feasibility_pass_rate: f64,
    pub walras_pass_rate: f64,
    pub budget_pass_rate: f64,
    pub best_response_pass_rate: f64,
    pub feasibility_violation: Quantiles,
    pub walras_residual: Quantiles,
    pub br_gap: Quantiles,
    /// Markets that diverged or failed certification.
    pub flagged: Vec<usize>,
    pub markets: Vec<MarketSummary>,
}

impl ExperimentSummary {
    fn build(cfg: &ExperimentConfig, outcomes: &[SolveOutcome]) -> Self {
        let k = outcomes.len() as f64;
        let rate =
            |f: &dyn Fn(&SolveOutcome) -> bool| outcomes.iter().filter(|o| f(o)).count() as f64 / k;
        let markets: Vec<MarketSummary> = outcomes
            .iter()
            .enumerate()
            .map(|(index, o)| MarketSummary {
                index,
                passed: o.certificate.passed() && !o.diverged(),
                diverged: o.diverged(),
                final_prices: o.prices.to_vec(),
                certificate: o.certificate.clone(),
            })
            .collect();
        Self {
            family: cfg.family,
            num_markets: outcomes.len(),
            seed: cfg.seed,
            pass_rate: rate(&|o| o.certificate.passed() && !o.diverged()),
            feasibility_pass_rate: rate(&|o| o.certificate.verdict.feasibility),
            walras_pass_rate: rate(&|o| o.certificate.verdict.walras),
            budget_pass_rate: rate(&|o| o.certificate.verdict.budget),
            best_response_pass_rate: rate(&|o| o.certificate.verdict.best_response),
            feasibility_violation: Quantiles::of(
                outcomes.iter().map(|o| o.certificate.feasibility_violation),
            ),
            walras_residual: Quantiles::of(outcomes.iter().map(|o| o.certificate.walras_residual)),
            br_gap: Quantiles::of(outcomes.iter().map(|o| o.certificate.br_gap)),
            flagged: markets
                .iter()
                .filter(|m| !m.passed)
                .map(|m| m.index)
                .collect(),
            markets,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub markets: Vec<MarketInstance>,
    pub outcomes: Vec<SolveOutcome>,
    pub aggregate: Vec<AggregatePoint>,
    pub summary: ExperimentSummary,
}

/// Generates and solves every market (in parallel), then writes
/// `market_KKK.toml`, `trajectory_KKK.csv`, `aggregate.csv` and
/// `summary.toml` into `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|source| MarketError::Io {
        path: cfg.out_dir.clone(),
        source,
    })?;

    let markets = (0..cfg.num_markets)
        .map(|k| generate_for(cfg, k))
        .collect::<Result<Vec<_>>>()?;
    let outcomes: Vec<SolveOutcome> = markets
        .par_iter()
        .map(|mkt| solve_with(mkt, &cfg.solver))
        .collect();

    for (k, (mkt, outcome)) in markets.iter().zip(&outcomes).enumerate() {
        if outcome.diverged() {
            log::warn!("market {k} diverged");
        }
        write_market(&cfg.out_dir.join(format!("market_{k:03}.toml")), mkt)?;
        outcome
            .trajectory
            .save(&cfg.out_dir.join(format!("trajectory_{k:03}.csv")))?;
    }

    let trajectories: Vec<&SolverTrajectory> = outcomes.iter().map(|o| &o.trajectory).collect();
    let aggregate = aggregate(&trajectories)?;
    write_aggregate(&cfg.out_dir.join("aggregate.csv"), &aggregate)?;

    let summary = ExperimentSummary::build(cfg, &outcomes);
    write_toml(&cfg.out_dir.join("summary.toml"), &summary)?;
    log::info!(
        "{} markets ({}): {:.0}% certified",
        cfg.num_markets,
        cfg.family,
        100.0 * summary.pass_rate
    );

    Ok(ExperimentReport {
        markets,
        outcomes,
        aggregate,
        summary,
    })
}

/// Writes a market file for the CLI `generate` command.
pub fn generate_to_file(
    family: UtilityFamily,
    buyers: usize,
    goods: usize,
    edge_prob: f64,
    seed: u64,
    path: &Path,
) -> Result<MarketInstance> {
    if !(0.0..=1.0).contains(&edge_prob) {
        return Err(MarketError::InvalidConfig(format!(
            "edge probability must lie in [0, 1], got {edge_prob}"
        )));
    }
    if buyers == 0 || goods == 0 {
        return Err(MarketError::InvalidConfig(
            "markets need at least one buyer and one good".into(),
        ));
    }
    let mkt = generate_market(family, buyers, goods, edge_prob, seed, 0)?;
    write_market(path, &mkt)?;
    Ok(mkt)
}
