//! Monte Carlo designs, equilibrium solvers, panel simulation and initial CCP estimates.

pub mod designs;
pub mod init;
pub mod simulate;
pub mod solve;

pub use designs::{
    build_entry_exit_model, build_entry_game_model, Dependence, EntryExitSpec, EntryGameSpec,
};
pub use init::{
    frequency_ccp, market_log_likelihoods, posterior_weights, sieve_init_with_basis, sieve_logit_init, SieveBasis,
    SieveInit, SieveInitConfig, SieveStart, LAPLACE_SMOOTHING,
};
pub use simulate::{counter_uniform, replication_seed, simulate_panel, SimulationSpec};
pub use solve::{equilibrium_residual, solve_design, solve_game_equilibrium, solve_type_policy, EQUILIBRIUM_TOL};

#[cfg(test)]
mod tests;
