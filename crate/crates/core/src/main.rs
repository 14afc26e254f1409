use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fisher_influence::certificate::{check_ce, check_gne, Tolerances};
use fisher_influence::experiment::{
    generate_to_file, published_schedule, run_experiment, solve_tatonnement, solve_vi,
    ExperimentConfig, SolverSettings,
};
use fisher_influence::io::{read_allocation, read_market, read_prices, write_toml, SolutionFile};
use fisher_influence::{MarketError, UtilityFamily, ViConfig};

/// Competitive equilibria of Fisher markets with social influence.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    Tatonnement,
    Vi,
}

#[derive(Debug, clap::Args)]
struct SolverOverrides {
    /// Outer (price) iterations; VI iterations for `--method vi`.
    #[arg(long)]
    outer: Option<usize>,
    /// Price learning rate.
    #[arg(long)]
    eta_price: Option<f64>,
    /// Inner extragradient iterations per price update.
    #[arg(long)]
    inner: Option<usize>,
    /// Allocation learning rate; the VI step size for `--method vi`.
    #[arg(long)]
    eta_alloc: Option<f64>,
    /// Early-exit exploitability target of the inner loop.
    #[arg(long)]
    delta: Option<f64>,
}

impl SolverOverrides {
    fn is_empty(&self) -> bool {
        self.outer.is_none()
            && self.eta_price.is_none()
            && self.inner.is_none()
            && self.eta_alloc.is_none()
            && self.delta.is_none()
    }

    fn tatonnement(&self, family: UtilityFamily) -> SolverSettings {
        let mut cfg = published_schedule(family);
        if let Some(t) = self.outer {
            cfg.outer_iters = t;
        }
        if let Some(e) = self.eta_price {
            cfg.eta_p = e;
        }
        if let Some(t) = self.inner {
            cfg.oracle.inner_iters = t;
        }
        if let Some(e) = self.eta_alloc {
            cfg.oracle.eta_x = e;
        }
        if let Some(d) = self.delta {
            cfg.oracle.delta = d;
        }
        SolverSettings::Tatonnement(cfg)
    }

    fn vi(&self) -> SolverSettings {
        let mut config = ViConfig::default();
        if let Some(t) = self.outer {
            config.iters = t;
        }
        if let Some(e) = self.eta_alloc {
            config.eta = e;
        }
        SolverSettings::Vi {
            config,
            record_every: (config.iters / 400).max(1),
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a random market and write it to a file.
    Generate {
        #[arg(long, value_parser = parse_family)]
        family: UtilityFamily,
        #[arg(long, default_value_t = 3)]
        buyers: usize,
        #[arg(long, default_value_t = 3)]
        goods: usize,
        #[arg(long, default_value_t = 0.5)]
        edge_prob: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve one market; writes trajectory.csv, solution.toml and certificate.toml.
    Solve {
        #[arg(long)]
        market: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Tatonnement)]
        method: Method,
        #[command(flatten)]
        overrides: SolverOverrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Certify an allocation and price vector; exits 1 if the certificate fails.
    Check {
        #[arg(long)]
        market: PathBuf,
        #[arg(long)]
        allocation: PathBuf,
        #[arg(long)]
        prices: PathBuf,
        /// Also check the auctioneer conditions of the pseudo-game.
        #[arg(long)]
        gne: bool,
    },
    /// Generate and solve a batch of random markets.
    Experiment {
        #[arg(long, value_parser = parse_family)]
        family: UtilityFamily,
        #[arg(long, default_value_t = 50)]
        num_markets: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use the published 3×3 setup and learning rates for the family.
        #[arg(long)]
        paper_defaults: bool,
        #[arg(long, default_value_t = 3)]
        buyers: usize,
        #[arg(long, default_value_t = 3)]
        goods: usize,
        #[arg(long, default_value_t = 0.5)]
        edge_prob: f64,
        #[arg(long, value_enum, default_value_t = Method::Tatonnement)]
        method: Method,
        #[command(flatten)]
        overrides: SolverOverrides,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_family(s: &str) -> Result<UtilityFamily, String> {
    s.parse().map_err(|e: MarketError| e.to_string())
}

enum Failure {
    Certificate,
    Input(MarketError),
}

impl From<MarketError> for Failure {
    fn from(e: MarketError) -> Self {
        Failure::Input(e)
    }
}

fn create_dir(dir: &Path) -> Result<(), MarketError> {
    std::fs::create_dir_all(dir).map_err(|source| MarketError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate {
            family,
            buyers,
            goods,
            edge_prob,
            seed,
            out,
        } => {
            generate_to_file(family, buyers, goods, edge_prob, seed, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Solve {
            market,
            method,
            overrides,
            out,
        } => {
            let mkt = read_market(&market)?;
            let outcome = match method {
                Method::Tatonnement => {
                    let SolverSettings::Tatonnement(cfg) = overrides.tatonnement(mkt.family())
                    else {
                        unreachable!()
                    };
                    cfg.validate()?;
                    solve_tatonnement(&mkt, &cfg)
                }
                Method::Vi => {
                    let SolverSettings::Vi {
                        config,
                        record_every,
                    } = overrides.vi()
                    else {
                        unreachable!()
                    };
                    config.validate()?;
                    solve_vi(&mkt, &config, record_every)
                }
            };
            create_dir(&out)?;
            outcome.trajectory.save(&out.join("trajectory.csv"))?;
            write_toml(
                &out.join("solution.toml"),
                &SolutionFile::new(&outcome.allocation, &outcome.prices),
            )?;
            write_toml(&out.join("certificate.toml"), &outcome.certificate)?;
            print!(
                "{}",
                toml::to_string(&outcome.certificate).expect("certificate serialises")
            );
        }
        Command::Check {
            market,
            allocation,
            prices,
            gne,
        } => {
            let mkt = read_market(&market)?;
            let x = read_allocation(&allocation)?;
            let p = read_prices(&prices)?;
            if x.dim() != (mkt.num_buyers(), mkt.num_goods()) {
                return Err(MarketError::InvalidAllocation(format!(
                    "expected a {}×{} allocation, got {:?}",
                    mkt.num_buyers(),
                    mkt.num_goods(),
                    x.dim()
                ))
                .into());
            }
            if p.len() != mkt.num_goods() {
                return Err(MarketError::InvalidPrices(format!(
                    "expected {} prices, got {}",
                    mkt.num_goods(),
                    p.len()
                ))
                .into());
            }
            let tol = Tolerances::for_market(&mkt);
            let cert = if gne {
                check_gne(&mkt, &x, &p, &tol)
            } else {
                check_ce(&mkt, &x, &p, &tol)
            };
            print!(
                "{}",
                toml::to_string(&cert).expect("certificate serialises")
            );
            if !cert.passed() {
                return Err(Failure::Certificate);
            }
        }
        Command::Experiment {
            family,
            num_markets,
            seed,
            paper_defaults,
            buyers,
            goods,
            edge_prob,
            method,
            overrides,
            out,
        } => {
            let cfg = if paper_defaults {
                if !overrides.is_empty() || !matches!(method, Method::Tatonnement) {
                    return Err(MarketError::InvalidConfig(
                        "--paper-defaults fixes the solver; drop the solver overrides".into(),
                    )
                    .into());
                }
                ExperimentConfig {
                    num_markets,
                    ..ExperimentConfig::paper_defaults(family, seed, out)
                }
            } else {
                ExperimentConfig {
                    family,
                    buyers,
                    goods,
                    num_markets,
                    seed,
                    edge_prob,
                    solver: match method {
                        Method::Tatonnement => overrides.tatonnement(family),
                        Method::Vi => overrides.vi(),
                    },
                    out_dir: out,
                }
            };
            let report = run_experiment(&cfg)?;
            print!(
                "{}",
                toml::to_string(&SummaryLine::from(&report.summary)).expect("summary serialises")
            );
        }
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct SummaryLine {
    family: UtilityFamily,
    num_markets: usize,
    pass_rate: f64,
    flagged: Vec<usize>,
}

impl From<&fisher_influence::experiment::ExperimentSummary> for SummaryLine {
    fn from(s: &fisher_influence::experiment::ExperimentSummary) -> Self {
        Self {
            family: s.family,
            num_markets: s.num_markets,
            pass_rate: s.pass_rate,
            flagged: s.flagged.clone(),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Certificate) => ExitCode::from(1),
        Err(Failure::Input(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
