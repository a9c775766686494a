//! Closed-form bounds on the one-epoch error reduction under adversarial
//! training, clean and poisoned.

use serde::Serialize;

use crate::math::normal_interval;

/// Every symbol the bounds depend on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsInput {
    pub n: usize,
    pub n_prime: usize,
    pub d: usize,
    pub sigma: f64,
    pub u_bar_norm: f64,
    /// Number of nonzero coordinates of `ū`.
    pub u_bar_l0: usize,
    pub eta: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub alpha: f64,
    /// Item scale `C` with `v = C·v(0)` at the current epoch.
    pub c: f64,
    /// Norm of the user embedding at the current epoch.
    pub u_norm: f64,
}

impl BoundsInput {
    /// `β = (n′/n)·√d·α + ‖ū‖`.
    pub fn beta(&self) -> f64 {
        self.n_prime as f64 / self.n as f64 * (self.d as f64).sqrt() * self.alpha + self.u_bar_norm
    }

    /// `τ = 2·n·n′·α·‖ū‖₀`.
    pub fn tau(&self) -> f64 {
        2.0 * self.n as f64 * self.n_prime as f64 * self.alpha * self.u_bar_l0 as f64
    }

    /// `ε·η·λ` must stay below `min(‖u‖, ‖ū‖)`.
    pub fn epsilon_cap(&self) -> f64 {
        self.u_norm.min(self.u_bar_norm) / (self.eta * self.lambda)
    }

    /// `γ = (1 − ηλε/‖u‖)⁻¹`, or `None` when the denominator is not positive.
    pub fn gamma(&self) -> Option<f64> {
        let denom = 1.0 - self.eta * self.lambda * self.epsilon / self.u_norm;
        (denom > 0.0).then(|| 1.0 / denom)
    }

    /// `Ψ = (1+λ)·γ·C/‖u‖`.
    pub fn psi(&self) -> Option<f64> {
        self.gamma().map(|g| (1.0 + self.lambda) * g * self.c / self.u_norm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum BoundsOutcome {
    Applicable { lower: f64, upper: f64, psi: f64, gamma: f64 },
    Inapplicable(String),
}

impl BoundsOutcome {
    pub fn interval(&self) -> Option<(f64, f64)> {
        match self {
            BoundsOutcome::Applicable { lower, upper, .. } => Some((*lower, *upper)),
            BoundsOutcome::Inapplicable(_) => None,
        }
    }
}

/// Lower and upper bounds on the error reduction of one adversarial epoch.
///
/// The clean bounds read, with `z = √(n−1)/σ` and `A = ‖ū‖² + dσ²/(n−1)`,
///
/// ```text
/// lower = Φ(z(‖ū‖ + ηAΨ)) − Φ(z‖ū‖)
/// upper = 2Φ(zηAΨ/2) − 1
/// ```
///
/// The poisoned bounds replace `‖ū‖` by `β` in the lower bound and `A` by
/// poison-adjusted energies on each side.
pub fn theorem_bounds(input: &BoundsInput, poisoned: bool) -> BoundsOutcome {
    if !(input.u_norm > 0.0) {
        return BoundsOutcome::Inapplicable("user embedding has zero norm".into());
    }
    let adv = input.eta * input.lambda * input.epsilon;
    if adv > 0.0 && adv >= input.u_norm.min(input.u_bar_norm) {
        return BoundsOutcome::Inapplicable(format!(
            "epsilon {} is not below the cap {}",
            input.epsilon,
            input.epsilon_cap()
        ));
    }
    let (Some(gamma), Some(psi)) = (input.gamma(), input.psi()) else {
        return BoundsOutcome::Inapplicable("gamma denominator is not positive".into());
    };
    let n = input.n as f64;
    let d = input.d as f64;
    let s2 = input.sigma * input.sigma;
    let u2 = input.u_bar_norm * input.u_bar_norm;
    let z = (n - 1.0).sqrt() / input.sigma;
    let eta = input.eta;

    let (shift, a_lo, a_hi) = if poisoned {
        let np = input.n_prime as f64;
        let tau = input.tau();
        let noise = n * d * s2 / ((n - 1.0) * (n + np));
        let a_lo = (n * n * u2 - tau) / (n * (n + np)) + noise;
        let a_hi = (n * n * u2 + np * np * d * input.alpha * input.alpha + tau) / (n * (n + np)) + noise;
        (input.beta(), a_lo, a_hi)
    } else {
        let a = u2 + d * s2 / (n - 1.0);
        (input.u_bar_norm, a, a)
    };
    let lower = normal_interval(z * shift, z * (shift + eta * a_lo * psi));
    let half = z * eta * a_hi * psi / 2.0;
    let upper = normal_interval(-half, half);
    BoundsOutcome::Applicable { lower, upper, psi, gamma }
}
