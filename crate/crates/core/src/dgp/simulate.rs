#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::model::{CcpProfile, MixtureDdcModel, PanelData};
use crate::{Error, Result};

const STREAM_TYPE: u64 = 0;
const STREAM_ACTION: u64 = 1;
const STREAM_EXO: u64 = 1 << 20;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based uniform draw in `[0, 1)` keyed on `(seed, market, period, stream)`.
pub fn counter_uniform(seed: u64, market: u64, period: u64, stream: u64) -> f64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ market);
    h = splitmix64(h ^ period);
    h = splitmix64(h ^ stream);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Seed of replication `r` derived from a master seed.
pub fn replication_seed(master: u64, replication: u64) -> u64 {
    splitmix64(splitmix64(master) ^ replication.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

fn categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Simulation settings shared by the designs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationSpec {
    pub n_markets: usize,
    pub n_periods: usize,
    pub burn_in: usize,
    pub seed: u64,
}

/// Simulates a panel. Each market draws its type from `pi` once, starts from
/// the first endogenous state at the middle of every exogenous grid, runs
/// `burn_in` unrecorded periods and then records `n_periods`.
pub fn simulate_panel(
    model: &MixtureDdcModel,
    policies: &[CcpProfile],
    pi: &[f64],
    spec: &SimulationSpec,
) -> Result<PanelData> {
    if policies.len() != pi.len() || pi.is_empty() {
        return Err(Error::dims("type policies", pi.len(), policies.len()));
    }
    let total: f64 = pi.iter().sum();
    if pi.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("type weights must lie on the simplex, got {pi:?}")));
    }
    let (nj, nx, na) = (model.n_firms(), model.n_states(), model.n_actions());
    for p in policies {
        if p.n_firms() != nj || p.n_states() != nx || p.n_actions() != na {
            return Err(Error::InvalidInput("policy CCPs do not match the model".into()));
        }
    }
    if spec.n_markets == 0 || spec.n_periods == 0 {
        return Err(Error::InvalidInput("need at least one market and one period".into()));
    }

    let run = |i: usize| simulate_market(model, policies, pi, spec, i);
    #[cfg(feature = "parallel")]
    let markets: Vec<(usize, Vec<usize>, Vec<usize>)> = (0..spec.n_markets).into_par_iter().map(run).collect();
    #[cfg(not(feature = "parallel"))]
    let markets: Vec<(usize, Vec<usize>, Vec<usize>)> = (0..spec.n_markets).map(run).collect();

    let mut types = Vec::with_capacity(spec.n_markets);
    let mut states = Vec::with_capacity(spec.n_markets * spec.n_periods);
    let mut actions = Vec::with_capacity(spec.n_markets * spec.n_periods * nj);
    for (m, s, a) in markets {
        types.push(m);
        states.extend(s);
        actions.extend(a);
    }
    PanelData::new(spec.n_markets, spec.n_periods, nj, states, actions, Some(types))
}

fn simulate_market(
    model: &MixtureDdcModel,
    policies: &[CcpProfile],
    pi: &[f64],
    spec: &SimulationSpec,
    market: usize,
) -> (usize, Vec<usize>, Vec<usize>) {
    let space = model.space();
    let nj = space.n_firms();
    let seed = spec.seed;
    let mkt = market as u64;
    let m = categorical(pi, counter_uniform(seed, mkt, 0, STREAM_TYPE));
    let ccp = &policies[m];

    let mut exo: Vec<usize> = space.exo_sizes().iter().map(|n| n / 2).collect();
    let mut state = space.state_index(0, space.exo_index(&exo));
    let mut states = Vec::with_capacity(spec.n_periods);
    let mut actions = Vec::with_capacity(spec.n_periods * nj);
    let mut profile = vec![0; nj];
    for t in 0..spec.burn_in + spec.n_periods {
        let tt = t as u64;
        for (j, a) in profile.iter_mut().enumerate() {
            *a = categorical(ccp.slice(j, state), counter_uniform(seed, mkt, tt, STREAM_ACTION + j as u64));
        }
        if t >= spec.burn_in {
            states.push(state);
            actions.extend_from_slice(&profile);
        }
        let p = space.profile_index(&profile);
        let kernel = &model.exo_kernels()[model.kernel_of_profile()[p]];
        for (f, (c, factor)) in exo.iter_mut().zip(kernel.factors()).enumerate() {
            *c = categorical(factor.row(*c), counter_uniform(seed, mkt, tt, STREAM_EXO + f as u64));
        }
        state = space.state_index(space.next_endo(p), space.exo_index(&exo));
    }
    (m, states, actions)
}
