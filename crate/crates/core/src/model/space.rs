use serde::{Deserialize, Serialize};

/// Flat state indexing shared by every module.
///
/// A state is `(endogenous, exogenous)` with index `endo · n_exo + exo`. The
/// endogenous part is the lagged joint action profile when tracked (a single
/// block otherwise). Profiles are indexed `Σ_j a_j·A^(J−1−j)`, firm 0 most
/// significant, and exogenous indices are row-major over the component grids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSpace {
    n_firms: usize,
    n_actions: usize,
    tracks_lagged_actions: bool,
    exo_sizes: Vec<usize>,
}

impl StateSpace {
    pub fn new(n_firms: usize, n_actions: usize, tracks_lagged_actions: bool, exo_sizes: Vec<usize>) -> Self {
        StateSpace {
            n_firms,
            n_actions,
            tracks_lagged_actions,
            exo_sizes,
        }
    }

    pub fn n_firms(&self) -> usize {
        self.n_firms
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn tracks_lagged_actions(&self) -> bool {
        self.tracks_lagged_actions
    }

    pub fn exo_sizes(&self) -> &[usize] {
        &self.exo_sizes
    }

    pub fn n_profiles(&self) -> usize {
        self.n_actions.pow(self.n_firms as u32)
    }

    pub fn n_endo(&self) -> usize {
        if self.tracks_lagged_actions {
            self.n_profiles()
        } else {
            1
        }
    }

    pub fn n_exo(&self) -> usize {
        self.exo_sizes.iter().product()
    }

    pub fn n_states(&self) -> usize {
        self.n_endo() * self.n_exo()
    }

    pub fn state_index(&self, endo: usize, exo: usize) -> usize {
        endo * self.n_exo() + exo
    }

    /// `(endo, exo)` parts of a flat state index.
    pub fn split(&self, state: usize) -> (usize, usize) {
        let n_exo = self.n_exo();
        (state / n_exo, state % n_exo)
    }

    pub fn exo_of(&self, state: usize) -> usize {
        state % self.n_exo()
    }

    pub fn profile_index(&self, actions: &[usize]) -> usize {
        actions.iter().fold(0, |acc, a| acc * self.n_actions + a)
    }

    pub fn profile_actions(&self, profile: usize) -> Vec<usize> {
        (0..self.n_firms).map(|j| self.profile_action(profile, j)).collect()
    }

    /// Action of `firm` within a joint profile.
    pub fn profile_action(&self, profile: usize, firm: usize) -> usize {
        let stride = self.n_actions.pow((self.n_firms - 1 - firm) as u32);
        (profile / stride) % self.n_actions
    }

    /// Endogenous block reached after playing `profile`.
    pub fn next_endo(&self, profile: usize) -> usize {
        if self.tracks_lagged_actions {
            profile
        } else {
            0
        }
    }

    pub fn exo_index(&self, components: &[usize]) -> usize {
        components
            .iter()
            .zip(&self.exo_sizes)
            .fold(0, |acc, (c, n)| acc * n + c)
    }

    pub fn exo_components(&self, exo: usize) -> Vec<usize> {
        let mut out = vec![0; self.exo_sizes.len()];
        let mut rest = exo;
        for (o, n) in out.iter_mut().zip(&self.exo_sizes).rev() {
            *o = rest % n;
            rest /= n;
        }
        out
    }
}
