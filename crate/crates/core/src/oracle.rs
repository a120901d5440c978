//! Exact scores of the diffusion-mixing marginal under tractable source priors.
//!
//! All priors here have covariance `C ⊗ I_N` for a `K × K` matrix `C`: samples
//! are independent across the signal axis and share one cross-source
//! covariance. The forward map `x_t = M_t x_0 + L_t z` with
//! `M_t = P̄ + e^{−γt} P̃` preserves that structure, so the marginal of `x_t`
//! is again `N(M_t m, (M_t C M_tᵀ + λ₁P̄ + λ₂P̃) ⊗ I_N)` and every density,
//! score and posterior reduces to `K × K` linear algebra.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::mixing::{apply_block, ProjectorPair, StackedSignal};
use crate::rng::{standard_normal_vec, Rng};
use crate::sampler::ScoreFunction;
use crate::sde::SdeParams;

/// A Gaussian over stacked signals with covariance `cov ⊗ I_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGaussian {
    pub mean: StackedSignal,
    /// `K × K` cross-source covariance, shared by every sample index.
    pub cov: DMatrix<f64>,
}

impl BlockGaussian {
    pub fn new(mean: StackedSignal, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.k() || cov.ncols() != mean.k() {
            return Err(Error::DimensionMismatch {
                expected: mean.k(),
                got: cov.nrows(),
            });
        }
        Ok(Self { mean, cov })
    }

    pub fn k(&self) -> usize {
        self.mean.k()
    }

    pub fn n(&self) -> usize {
        self.mean.n()
    }

    fn cholesky(&self) -> Result<Cholesky<f64, nalgebra::Dyn>> {
        Cholesky::new(self.cov.clone()).ok_or_else(|| {
            Error::Singular(format!("covariance is not positive definite: {}", self.cov))
        })
    }

    pub fn log_density(&self, x: &StackedSignal) -> Result<f64> {
        x.check_shape(self.k(), self.n())?;
        let chol = self.cholesky()?;
        let resid = x.add_scaled(-1.0, &self.mean);
        let (k, n) = (self.k(), self.n());
        let mut quad = 0.0;
        let mut r = DVector::zeros(k);
        for i in 0..n {
            for j in 0..k {
                r[j] = resid.as_slice()[j * n + i];
            }
            quad += r.dot(&chol.solve(&r));
        }
        let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(-0.5 * quad - 0.5 * n as f64 * (k as f64 * (2.0 * PI).ln() + log_det))
    }

    /// `−(C⁻¹ ⊗ I)(x − m)`.
    pub fn score(&self, x: &StackedSignal) -> Result<StackedSignal> {
        x.check_shape(self.k(), self.n())?;
        let inv = self.cholesky()?.inverse();
        let resid = x.add_scaled(-1.0, &self.mean);
        Ok(apply_block(&inv, &resid)?.scaled(-1.0))
    }

    /// Symmetric square root of `cov`; works for singular (PSD) covariances.
    pub fn sqrt_cov(&self) -> DMatrix<f64> {
        let eig = SymmetricEigen::new(self.cov.clone());
        let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
        &eig.eigenvectors * d * eig.eigenvectors.transpose()
    }

    pub fn sample(&self, rng: &mut Rng) -> StackedSignal {
        let (k, n) = (self.k(), self.n());
        let z = StackedSignal::new(standard_normal_vec(rng, k * n), k, n).expect("shape");
        let noise = apply_block(&self.sqrt_cov(), &z).expect("shape");
        self.mean.add_scaled(1.0, &noise)
    }
}

/// Independent sources, source `k` isotropic with variance `variances[k]`.
///
/// Zero variances are allowed and describe a point mass along that source.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    pub mean: StackedSignal,
    pub variances: Vec<f64>,
}

impl GaussianPrior {
    pub fn new(mean: StackedSignal, variances: Vec<f64>) -> Result<Self> {
        if variances.len() != mean.k() {
            return Err(Error::DimensionMismatch {
                expected: mean.k(),
                got: variances.len(),
            });
        }
        if variances.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "source variances must be finite and non-negative: {variances:?}"
            )));
        }
        Ok(Self { mean, variances })
    }

    /// Zero-mean, unit-variance sources.
    pub fn standard(k: usize, n: usize) -> Self {
        Self {
            mean: StackedSignal::zeros(k, n),
            variances: vec![1.0; k],
        }
    }

    pub fn point_mass(sources: StackedSignal) -> Self {
        let k = sources.k();
        Self {
            mean: sources,
            variances: vec![0.0; k],
        }
    }

    pub fn to_block(&self) -> BlockGaussian {
        BlockGaussian {
            mean: self.mean.clone(),
            cov: DMatrix::from_diagonal(&DVector::from_vec(self.variances.clone())),
        }
    }
}

/// A mixture of block Gaussians with non-negative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGmm {
    pub components: Vec<(f64, BlockGaussian)>,
}

impl BlockGmm {
    pub fn new(components: Vec<(f64, BlockGaussian)>) -> Result<Self> {
        let Some((_, first)) = components.first() else {
            return Err(Error::InvalidParameter("mixture needs at least one component".into()));
        };
        let (k, n) = (first.k(), first.n());
        if components.iter().any(|(_, c)| c.k() != k || c.n() != n) {
            return Err(Error::InvalidParameter("mixture components differ in shape".into()));
        }
        if components.iter().any(|(w, _)| !(*w >= 0.0)) {
            return Err(Error::InvalidParameter("mixture weights must be non-negative".into()));
        }
        let total: f64 = components.iter().map(|(w, _)| w).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        Ok(Self { components })
    }

    pub fn single(g: BlockGaussian) -> Self {
        Self {
            components: vec![(1.0, g)],
        }
    }

    pub fn k(&self) -> usize {
        self.components[0].1.k()
    }

    pub fn n(&self) -> usize {
        self.components[0].1.n()
    }

    /// `(log w_j + log N_j(x))` for every component.
    fn weighted_log_densities(&self, x: &StackedSignal) -> Result<Vec<f64>> {
        self.components
            .iter()
            .map(|(w, c)| Ok(w.ln() + c.log_density(x)?))
            .collect()
    }

    pub fn log_density(&self, x: &StackedSignal) -> Result<f64> {
        let logs = self.weighted_log_densities(x)?;
        let (_, lse) = normalize_log_weights(&logs)?;
        Ok(lse)
    }

    /// Posterior component probabilities at `x`.
    pub fn responsibilities(&self, x: &StackedSignal) -> Result<Vec<f64>> {
        let logs = self.weighted_log_densities(x)?;
        Ok(normalize_log_weights(&logs)?.0)
    }

    /// Responsibility-weighted sum of component scores.
    pub fn score(&self, x: &StackedSignal) -> Result<StackedSignal> {
        let resp = self.responsibilities(x)?;
        let mut out = StackedSignal::zeros(self.k(), self.n());
        for (r, (_, c)) in resp.iter().zip(&self.components) {
            if *r == 0.0 {
                continue;
            }
            out = out.add_scaled(*r, &c.score(x)?);
        }
        Ok(out)
    }

    pub fn sample(&self, rng: &mut Rng) -> StackedSignal {
        use rand::Rng as _;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (w, c) in &self.components {
            acc += w;
            if u < acc {
                return c.sample(rng);
            }
        }
        self.components.last().expect("non-empty").1.sample(rng)
    }

    /// Mean of the mixture.
    pub fn mean(&self) -> StackedSignal {
        let mut out = StackedSignal::zeros(self.k(), self.n());
        for (w, c) in &self.components {
            out = out.add_scaled(*w, &c.mean);
        }
        out
    }
}

/// Softmax of log weights plus their log-sum-exp.
fn normalize_log_weights(logs: &[f64]) -> Result<(Vec<f64>, f64)> {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DensityUnderflow {
            log_densities: logs.to_vec(),
        });
    }
    let unnorm: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    Ok((
        unnorm.iter().map(|u| u / total).collect(),
        max + total.ln(),
    ))
}

/// Independent-source GMM prior: every component is a [`GaussianPrior`].
#[derive(Debug, Clone, PartialEq)]
pub struct GmmPrior {
    pub components: Vec<(f64, GaussianPrior)>,
}

impl GmmPrior {
    pub fn new(components: Vec<(f64, GaussianPrior)>) -> Result<Self> {
        let prior = Self { components };
        prior.to_block()?;
        Ok(prior)
    }

    pub fn to_block(&self) -> Result<BlockGmm> {
        BlockGmm::new(
            self.components
                .iter()
                .map(|(w, g)| (*w, g.to_block()))
                .collect(),
        )
    }
}

/// The affine part of the forward map, `M_t = P̄ + e^{−γt} P̃`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffinePushforward {
    pub t: f64,
    pub decay: f64,
}

impl AffinePushforward {
    pub fn new(t: f64, p: &SdeParams) -> Self {
        Self {
            t,
            decay: p.mixing_decay(t),
        }
    }

    pub fn matrix(&self, k: usize) -> DMatrix<f64> {
        ProjectorPair::new(k).combination(1.0, self.decay)
    }

    pub fn apply(&self, v: &StackedSignal) -> StackedSignal {
        crate::mixing::apply_projector_mix(1.0, self.decay, v)
    }
}

/// Distribution of `x_t` when `x_0` is drawn from `prior`.
pub fn marginal_of_prior(prior: &BlockGaussian, t: f64, p: &SdeParams) -> BlockGaussian {
    let k = prior.k();
    let push = AffinePushforward::new(t, p);
    let m = push.matrix(k);
    let (l1, l2) = p.lambdas(t);
    let noise = ProjectorPair::new(k).combination(l1, l2);
    let mut cov = &m * &prior.cov * m.transpose() + noise;
    // keep exact symmetry for the Cholesky factorization
    cov = (&cov + cov.transpose()) * 0.5;
    BlockGaussian {
        mean: push.apply(&prior.mean),
        cov,
    }
}

pub fn marginal_of_gmm(prior: &BlockGmm, t: f64, p: &SdeParams) -> BlockGmm {
    BlockGmm {
        components: prior
            .components
            .iter()
            .map(|(w, c)| (*w, marginal_of_prior(c, t, p)))
            .collect(),
    }
}

/// `∇_x log p_t(x)` for a Gaussian prior.
pub fn oracle_score_gaussian(
    x: &StackedSignal,
    t: f64,
    prior: &BlockGaussian,
    p: &SdeParams,
) -> Result<StackedSignal> {
    marginal_of_prior(prior, t, p).score(x)
}

/// `∇_x log p_t(x)` for a Gaussian-mixture prior.
pub fn oracle_score_gmm(
    x: &StackedSignal,
    t: f64,
    prior: &BlockGmm,
    p: &SdeParams,
) -> Result<StackedSignal> {
    marginal_of_gmm(prior, t, p).score(x)
}

/// Distribution of the sources given their mixture `y = Σ_k s_k`.
///
/// Each component is conditioned on the linear observation `1ᵀ s_n = y_n`
/// and reweighted by the likelihood it assigns to `y`. The conditional
/// covariance is singular along the average direction.
pub fn posterior_sources_given_mixture(y: &[f64], prior: &BlockGmm) -> Result<BlockGmm> {
    let (k, n) = (prior.k(), prior.n());
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    let ones = DVector::from_element(k, 1.0);
    let mut logs = Vec::with_capacity(prior.components.len());
    let mut conditioned = Vec::with_capacity(prior.components.len());
    for (w, c) in &prior.components {
        let c1 = &c.cov * &ones;
        let var_y = ones.dot(&c1);
        let predicted = c.mean.mix();
        let resid: Vec<f64> = y.iter().zip(&predicted).map(|(a, b)| a - b).collect();

        let (log_lik, mean, cov) = if var_y > 0.0 {
            let gain = &c1 / var_y;
            let mut mean = c.mean.clone();
            for j in 0..k {
                for (m, r) in mean.block_mut(j).iter_mut().zip(&resid) {
                    *m += gain[j] * r;
                }
            }
            let cov = &c.cov - &c1 * c1.transpose() / var_y;
            let sq: f64 = resid.iter().map(|r| r * r).sum();
            let log_lik = -0.5 * sq / var_y - 0.5 * n as f64 * (2.0 * PI * var_y).ln();
            (log_lik, mean, cov)
        } else {
            // deterministic along the mixture: either consistent with y or impossible
            let scale = y.iter().map(|v| v.abs()).fold(1.0, f64::max);
            let consistent = resid.iter().all(|r| r.abs() <= 1e-12 * scale);
            let log_lik = if consistent { 0.0 } else { f64::NEG_INFINITY };
            (log_lik, c.mean.clone(), c.cov.clone())
        };
        logs.push(w.ln() + log_lik);
        conditioned.push(BlockGaussian {
            mean,
            cov: (&cov + cov.transpose()) * 0.5,
        });
    }
    let (weights, _) = normalize_log_weights(&logs)?;
    Ok(BlockGmm {
        components: weights.into_iter().zip(conditioned).collect(),
    })
}

/// Score of `p_t(x | y)`: the marginal of the diffusion-mixing process when
/// the sources follow their posterior given the mixture. This is the exact
/// quantity a mixture-conditioned score model approximates.
#[derive(Debug, Clone)]
pub struct PosteriorScore {
    pub prior: BlockGmm,
    pub params: SdeParams,
}

impl PosteriorScore {
    pub fn new(prior: BlockGmm, params: SdeParams) -> Self {
        Self { prior, params }
    }

    pub fn gaussian(prior: &GaussianPrior, params: SdeParams) -> Self {
        Self::new(BlockGmm::single(prior.to_block()), params)
    }
}

impl ScoreFunction for PosteriorScore {
    fn score(&self, x: &StackedSignal, t: f64, y: &[f64]) -> Result<StackedSignal> {
        let posterior = posterior_sources_given_mixture(y, &self.prior)?;
        oracle_score_gmm(x, t, &posterior, &self.params)
    }
}

/// Closed-form score for known sources (a point-mass prior).
#[derive(Debug, Clone)]
pub struct PointMassScore {
    pub sources: StackedSignal,
    pub params: SdeParams,
}

impl ScoreFunction for PointMassScore {
    fn score(&self, x: &StackedSignal, t: f64, _y: &[f64]) -> Result<StackedSignal> {
        crate::sde::closed_form_score(x, &self.params.marginal(t, &self.sources))
    }
}
