//! The diffusion-mixing SDE
//!
//! ```text
//! dx = −γ P̃ x dt + g(t) dw,    x(0) = s,
//! g(t) = σ_min ρ^t √(2 ln ρ),  ρ = σ_max / σ_min.
//! ```
//!
//! The process is linear, so its marginal given `s` is Gaussian with mean
//! `μ_t = (1 − e^{−γt}) s̄ + e^{−γt} s` and covariance `Σ_t = λ₁(t) P̄ + λ₂(t) P̃`.
//! Since `P̄` and `P̃` are complementary orthogonal projectors, every function
//! of `Σ_t` (its square root, inverse, inverse square root) is again of the
//! form `a P̄ + b P̃` and is applied through [`apply_projector_mix`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixing::{apply_projector_mix, StackedSignal};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SdeParams {
    /// Mixing rate `γ`.
    pub gamma: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Terminal time `T`.
    pub t_max: f64,
    /// Smallest time used for training and inference.
    pub t_eps: f64,
    /// Number of sources `K`.
    pub k: usize,
    /// Samples per source `N`.
    pub n: usize,
}

impl Default for SdeParams {
    fn default() -> Self {
        Self::new(2, 8)
    }
}

impl SdeParams {
    /// The separation settings `γ = 2, σ_min = 0.05, σ_max = 0.5` with `T = 1`
    /// and `t_ε = 0.03`.
    pub fn new(k: usize, n: usize) -> Self {
        Self {
            gamma: 2.0,
            sigma_min: 0.05,
            sigma_max: 0.5,
            t_max: 1.0,
            t_eps: 0.03,
            k,
            n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max) {
            return bad(format!(
                "need 0 < sigma_min < sigma_max (got {} and {})",
                self.sigma_min, self.sigma_max
            ));
        }
        if !(self.gamma > 0.0) {
            return bad(format!("gamma must be positive (got {})", self.gamma));
        }
        if !(self.t_eps > 0.0 && self.t_eps < self.t_max) {
            return bad(format!(
                "need 0 < t_eps < T (got {} and {})",
                self.t_eps, self.t_max
            ));
        }
        if self.k == 0 || self.n == 0 {
            return bad(format!("K and N must be positive (got {} and {})", self.k, self.n));
        }
        Ok(())
    }

    pub fn rho(&self) -> f64 {
        self.sigma_max / self.sigma_min
    }

    pub fn log_rho(&self) -> f64 {
        self.rho().ln()
    }

    /// `g(t)`, the variance-exploding diffusion coefficient.
    pub fn diffusion_coeff(&self, t: f64) -> f64 {
        let log_rho = self.log_rho();
        self.sigma_min * (t * log_rho).exp() * (2.0 * log_rho).sqrt()
    }

    /// `e^{−γt}`, the weight the unmixed sources keep in `μ_t`.
    pub fn mixing_decay(&self, t: f64) -> f64 {
        (-self.gamma * t).exp()
    }

    /// Marginal variance along one eigenspace of `γ P̃`.
    pub fn lambda(&self, t: f64, space: Eigenspace) -> f64 {
        let xi = match space {
            Eigenspace::Average => 0.0,
            Eigenspace::Difference => self.gamma,
        };
        let log_rho = self.log_rho();
        let c = xi + log_rho;
        if c == 0.0 || log_rho == 0.0 {
            return 0.0;
        }
        // ρ^{2t} − e^{−2ξt} = e^{−2ξt} (e^{2t(ln ρ + ξ)} − 1), evaluated without cancellation
        self.sigma_min.powi(2) * log_rho * (-2.0 * xi * t).exp() * (2.0 * t * c).exp_m1() / c
    }

    /// `(λ₁(t), λ₂(t))`.
    pub fn lambdas(&self, t: f64) -> (f64, f64) {
        (
            self.lambda(t, Eigenspace::Average),
            self.lambda(t, Eigenspace::Difference),
        )
    }

    /// `s̄` stacked from a mixture.
    pub fn mixture_average(&self, y: &[f64]) -> Result<StackedSignal> {
        check_len(y.len(), self.n)?;
        Ok(StackedSignal::mixture_average(y, self.k))
    }

    /// The Gaussian marginal of `x_t` given `x_0 = s`.
    pub fn marginal(&self, t: f64, s: &StackedSignal) -> MarginalGaussian {
        let (lambda1, lambda2) = self.lambdas(t);
        MarginalGaussian {
            mu: apply_projector_mix(1.0, self.mixing_decay(t), s),
            lambda1,
            lambda2,
            t,
        }
    }

    /// `x_t = μ_t + L_t z`.
    pub fn sample_forward(&self, s: &StackedSignal, t: f64, z: &StackedSignal) -> Result<StackedSignal> {
        check_len(z.len(), s.len())?;
        Ok(self.marginal(t, s).sample(z))
    }

    /// `x̄_T = s̄ + L_T z`, the starting point of the reverse process.
    pub fn sample_prior(&self, y: &[f64], z: &StackedSignal) -> Result<StackedSignal> {
        let mean = self.mixture_average(y)?;
        check_len(z.len(), mean.len())?;
        let (l1, l2) = self.lambdas(self.t_max);
        Ok(mean.add_scaled(1.0, &apply_projector_mix(l1.sqrt(), l2.sqrt(), z)))
    }
}

fn check_len(got: usize, expected: usize) -> Result<()> {
    if got == expected {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// The two eigenspaces of the drift matrix `γ P̃`: the source average
/// (eigenvalue `ξ₁ = 0`) and its complement (eigenvalue `ξ₂ = γ`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Eigenspace {
    Average,
    Difference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalGaussian {
    pub mu: StackedSignal,
    pub lambda1: f64,
    pub lambda2: f64,
    pub t: f64,
}

impl MarginalGaussian {
    /// `Σ_t v`.
    pub fn apply_cov(&self, v: &StackedSignal) -> StackedSignal {
        apply_projector_mix(self.lambda1, self.lambda2, v)
    }

    /// `L_t v`.
    pub fn apply_sqrt(&self, v: &StackedSignal) -> StackedSignal {
        apply_projector_mix(self.lambda1.sqrt(), self.lambda2.sqrt(), v)
    }

    /// `L_t⁻¹ v`.
    pub fn apply_inv_sqrt(&self, v: &StackedSignal) -> Result<StackedSignal> {
        self.check_invertible()?;
        Ok(apply_projector_mix(
            self.lambda1.sqrt().recip(),
            self.lambda2.sqrt().recip(),
            v,
        ))
    }

    /// `Σ_t⁻¹ v`.
    pub fn apply_inv_cov(&self, v: &StackedSignal) -> Result<StackedSignal> {
        self.check_invertible()?;
        Ok(apply_projector_mix(self.lambda1.recip(), self.lambda2.recip(), v))
    }

    pub fn sample(&self, z: &StackedSignal) -> StackedSignal {
        self.mu.add_scaled(1.0, &self.apply_sqrt(z))
    }

    /// `∇_x log p_t(x) = −Σ_t⁻¹ (x − μ_t)`.
    pub fn score(&self, x: &StackedSignal) -> Result<StackedSignal> {
        check_len(x.len(), self.mu.len())?;
        Ok(self.apply_inv_cov(&x.add_scaled(-1.0, &self.mu))?.scaled(-1.0))
    }

    fn check_invertible(&self) -> Result<()> {
        // K = 1 has no difference subspace, so λ₂ never enters.
        let needs_l2 = self.mu.k() > 1;
        if self.lambda1 > 0.0 && (!needs_l2 || self.lambda2 > 0.0) {
            Ok(())
        } else {
            Err(Error::Singular(format!(
                "marginal covariance at t = {} has λ = ({}, {})",
                self.t, self.lambda1, self.lambda2
            )))
        }
    }
}

/// The closed-form score of the marginal of `x_t` given its own initial state.
pub fn closed_form_score(x: &StackedSignal, mg: &MarginalGaussian) -> Result<StackedSignal> {
    if !(mg.t > 0.0) {
        return Err(Error::Singular(format!("score undefined at t = {}", mg.t)));
    }
    mg.score(x)
}
