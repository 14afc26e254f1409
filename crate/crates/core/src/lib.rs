//! Competitive equilibria of Fisher markets with social influence.
//!
//! Two solvers are provided: NE-oracle tâtonnement ([`tatonnement`]), which
//! moves prices along excess demand while the buyers play an extragradient
//! Nash-equilibrium game ([`ne_oracle`]) at each price, and a direct
//! variational-inequality solver ([`vi`]) that recovers prices from the
//! shared supply multipliers. Candidates are certified by [`certificate`].

pub mod best_response;
pub mod certificate;
pub mod error;
pub mod experiment;
pub mod io;
pub mod lemmas;
pub mod market;
pub mod ne_oracle;
pub mod projections;
pub mod tatonnement;
pub mod vi;

pub use certificate::{check_ce, check_gne, EquilibriumCertificate, Tolerances};
pub use error::{MarketError, Result};
pub use market::{
    excess_demand, Allocation, ExcessDemand, MarketInstance, PriceVector, UtilityFamily,
};
pub use ne_oracle::{exploitability, solve_ne, InnerGradient, NeOracleConfig, StepRule};
pub use tatonnement::{run_tatonnement, SolverTrajectory, TatonnementConfig};
pub use vi::{recover_prices, solve_ve, ViConfig};
