use super::dot;

/// Step size for the spectral (Barzilai–Borwein) CCP update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BbStep {
    pub alpha: f64,
    /// True when the BB ratio was unusable and the initial step was used.
    pub fallback: bool,
}

/// First spectral step `min(1, 1/‖Φ₀‖)`, where `Φ₀ = P₀ − Λ(P₀)`.
pub fn initial_step(phi0_norm: f64) -> f64 {
    if phi0_norm > 0.0 && phi0_norm.is_finite() {
        (1.0 / phi0_norm).min(1.0)
    } else {
        1.0
    }
}

/// `α = ‖ΔP‖² / ⟨ΔP, ΔΦ⟩` where `Φ = P − Λ(P)` is the CCP fixed-point residual.
///
/// `delta == None` is the first iteration and returns [`initial_step`]. An
/// inner product that is zero, negative or non-finite also returns the initial
/// step, flagged in the result.
pub fn bb_step_size(delta: Option<(&[f64], &[f64])>, phi0_norm: f64) -> BbStep {
    let fallback = BbStep {
        alpha: initial_step(phi0_norm),
        fallback: true,
    };
    match delta {
        None => BbStep {
            fallback: false,
            ..fallback
        },
        Some((dp, dphi)) => {
            let den = dot(dp, dphi);
            let alpha = dot(dp, dp) / den;
            if den > 0.0 && alpha.is_finite() && alpha > 0.0 {
                BbStep { alpha, fallback: false }
            } else {
                fallback
            }
        }
    }
}
