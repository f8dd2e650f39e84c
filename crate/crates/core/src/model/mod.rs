//! Model primitives: state spaces, utility bases, transitions, logit CCPs and panels.

pub mod ccp;
pub mod ddc;
pub mod panel;
pub mod space;
pub mod tauchen;

pub use ccp::{floor_probabilities, logit_ccp, logit_ccp_into, social_surplus, CcpProfile, CCP_FLOOR, EULER_GAMMA};
pub use ddc::{MixtureDdcModel, ModelParts, ProfileWeights, RivalExpectation};
pub use panel::PanelData;
pub use space::StateSpace;
pub use tauchen::{tauchen_discretize, Ar1Spec, MarkovChain};

#[cfg(test)]
pub(crate) fn random_ccp(n_firms: usize, n_states: usize, n_actions: usize, seed: u64) -> CcpProfile {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..n_firms * n_states * n_actions).map(|_| rng.random_range(-2.0..2.0)).collect();
    CcpProfile::from_values(n_firms, n_states, n_actions, &values)
}
