//! A small fully connected score model with an explicit backward pass.
//!
//! Input layout: `[x-slot (KN) | y (N) | sin(ω_f t), cos(ω_f t) (2F)]`,
//! `ω_f = π 2^f`. With [`Preconditioning::Noise`] the x-slot holds
//! `L_t⁻¹ (x − s̄)` and the raw output `h` is read as a noise estimate,
//! `q = −L_t⁻¹ h`; with [`Preconditioning::None`] the x-slot is `x` and `q = h`.
//!
//! All parameters live in one flat buffer. Per layer the weights are stored
//! row-major (`out × in`) followed by the bias; the optional input-to-output
//! skip matrix comes last.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixing::{apply_projector_mix, StackedSignal};
use crate::rng::{standard_normal, stream_rng};
use crate::sampler::ScoreFunction;
use crate::sde::SdeParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Preconditioning {
    None,
    #[default]
    Noise,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub k: usize,
    pub n: usize,
    pub hidden: Vec<usize>,
    pub fourier_features: usize,
    pub preconditioning: Preconditioning,
    /// Learned linear map from the input straight to the output.
    pub linear_skip: bool,
}

impl ModelSpec {
    pub fn new(k: usize, n: usize, hidden: Vec<usize>) -> Self {
        Self {
            k,
            n,
            hidden,
            fourier_features: 4,
            preconditioning: Preconditioning::Noise,
            linear_skip: true,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.k * self.n + self.n + 2 * self.fourier_features
    }

    pub fn output_dim(&self) -> usize {
        self.k * self.n
    }

    /// `(in, out)` of every dense layer, output layer last.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim();
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim()));
        dims
    }

    pub fn param_count(&self) -> usize {
        let dense: usize = self.layer_dims().iter().map(|(i, o)| i * o + o).sum();
        dense + self.skip_len()
    }

    fn skip_len(&self) -> usize {
        if self.linear_skip {
            self.input_dim() * self.output_dim()
        } else {
            0
        }
    }

    /// Names and shapes of the parameter tensors in buffer order.
    pub fn tensor_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (l, (i, o)) in self.layer_dims().into_iter().enumerate() {
            out.push((format!("layer{l}.weight"), vec![o, i]));
            out.push((format!("layer{l}.bias"), vec![o]));
        }
        if self.linear_skip {
            out.push(("skip.weight".into(), vec![self.output_dim(), self.input_dim()]));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n == 0 {
            return Err(Error::InvalidParameter("model K and N must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidParameter("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpScoreModel {
    pub spec: ModelSpec,
    pub sde: SdeParams,
    params: Vec<f64>,
}

/// Activations kept from the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input; `activations[l + 1]` the output of hidden layer `l`.
    activations: Vec<Vec<f64>>,
    t: f64,
}

fn tanh_grad(a: f64) -> f64 {
    1.0 - a * a
}

impl MlpScoreModel {
    /// Glorot-scaled normal weights, zero biases and skip.
    pub fn new(spec: ModelSpec, sde: SdeParams, seed: u64) -> Result<Self> {
        spec.validate()?;
        if spec.k != sde.k || spec.n != sde.n {
            return Err(Error::InvalidParameter(format!(
                "model shape K = {}, N = {} does not match SDE K = {}, N = {}",
                spec.k, spec.n, sde.k, sde.n
            )));
        }
        let mut rng = stream_rng(seed, 0);
        let mut params = Vec::with_capacity(spec.param_count());
        let dims = spec.layer_dims();
        for (l, &(i, o)) in dims.iter().enumerate() {
            let mut scale = (2.0 / (i + o) as f64).sqrt();
            if l + 1 == dims.len() {
                scale *= 0.1;
            }
            params.extend((0..i * o).map(|_| scale * standard_normal(&mut rng)));
            params.extend(std::iter::repeat_n(0.0, o));
        }
        params.extend(std::iter::repeat_n(0.0, spec.skip_len()));
        Ok(Self { spec, sde, params })
    }

    pub fn from_params(spec: ModelSpec, sde: SdeParams, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(Error::DimensionMismatch {
                expected: spec.param_count(),
                got: params.len(),
            });
        }
        Ok(Self { spec, sde, params })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Offsets of `(weight, bias)` for dense layer `l`.
    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for (idx, (i, o)) in self.spec.layer_dims().into_iter().enumerate() {
            if idx == l {
                return (off, off + i * o);
            }
            off += i * o + o;
        }
        unreachable!("layer index out of range")
    }

    fn skip_offset(&self) -> usize {
        self.params.len() - self.spec.skip_len()
    }

    /// Zeroes the output layer and the skip map, so the model outputs zero.
    pub fn zero_output(&mut self) {
        let last = self.spec.hidden.len();
        let (w, _) = self.layer_offsets(last);
        let end = self.params.len();
        self.params[w..end].fill(0.0);
    }

    pub fn time_features(&self, t: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.spec.fourier_features);
        for f in 0..self.spec.fourier_features {
            let w = PI * (1u64 << f) as f64;
            out.push((w * t).sin());
            out.push((w * t).cos());
        }
        out
    }

    fn check_inputs(&self, x: &StackedSignal, y: &[f64]) -> Result<()> {
        x.check_shape(self.spec.k, self.spec.n)?;
        if y.len() != self.spec.n {
            return Err(Error::DimensionMismatch {
                expected: self.spec.n,
                got: y.len(),
            });
        }
        Ok(())
    }

    fn featurize(&self, x: &StackedSignal, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        let mut input = Vec::with_capacity(self.spec.input_dim());
        match self.spec.preconditioning {
            Preconditioning::None => input.extend_from_slice(x.as_slice()),
            Preconditioning::Noise => {
                let (l1, l2) = self.sde.lambdas(t);
                if !(l1 > 0.0 && l2 > 0.0) {
                    return Err(Error::Singular(format!("model evaluated at t = {t}")));
                }
                let centered = x.add_scaled(-1.0, &StackedSignal::mixture_average(y, self.spec.k));
                let u = apply_projector_mix(l1.sqrt().recip(), l2.sqrt().recip(), &centered);
                input.extend_from_slice(u.as_slice());
            }
        }
        input.extend_from_slice(y);
        input.extend(self.time_features(t));
        Ok(input)
    }

    /// Raw network output `h` and the cache for [`Self::backward`].
    fn forward_raw(&self, input: Vec<f64>, t: f64) -> (Vec<f64>, ForwardCache) {
        let dims = self.spec.layer_dims();
        let mut activations = vec![input];
        for (l, &(i, o)) in dims.iter().enumerate() {
            let (w, b) = self.layer_offsets(l);
            let a = activations.last().unwrap();
            let mut z: Vec<f64> = self.params[b..b + o].to_vec();
            for (r, zr) in z.iter_mut().enumerate() {
                let row = &self.params[w + r * i..w + (r + 1) * i];
                *zr += row.iter().zip(a).map(|(p, v)| p * v).sum::<f64>();
            }
            if l + 1 < dims.len() {
                z.iter_mut().for_each(|v| *v = v.tanh());
                activations.push(z);
            } else {
                if self.spec.linear_skip {
                    let s = self.skip_offset();
                    let input = &activations[0];
                    let d_in = input.len();
                    for (r, zr) in z.iter_mut().enumerate() {
                        let row = &self.params[s + r * d_in..s + (r + 1) * d_in];
                        *zr += row.iter().zip(input).map(|(p, v)| p * v).sum::<f64>();
                    }
                }
                return (z, ForwardCache { activations, t });
            }
        }
        unreachable!("model has an output layer")
    }

    /// Maps the raw output to a score estimate.
    fn output_map(&self, h: Vec<f64>, t: f64) -> StackedSignal {
        let h = StackedSignal::new(h, self.spec.k, self.spec.n).expect("output shape");
        match self.spec.preconditioning {
            Preconditioning::None => h,
            Preconditioning::Noise => {
                let (l1, l2) = self.sde.lambdas(t);
                apply_projector_mix(-l1.sqrt().recip(), -l2.sqrt().recip(), &h)
            }
        }
    }

    /// Score estimate `q_θ(x, t, y)`.
    pub fn forward(&self, x: &StackedSignal, t: f64, y: &[f64]) -> Result<StackedSignal> {
        self.forward_with_cache(x, t, y).map(|(q, _)| q)
    }

    pub fn forward_with_cache(
        &self,
        x: &StackedSignal,
        t: f64,
        y: &[f64],
    ) -> Result<(StackedSignal, ForwardCache)> {
        self.check_inputs(x, y)?;
        let input = self.featurize(x, t, y)?;
        let (h, cache) = self.forward_raw(input, t);
        Ok((self.output_map(h, t), cache))
    }

    /// Accumulates `∂L/∂θ` into `grad` given `∂L/∂q`.
    pub fn backward(&self, cache: &ForwardCache, d_score: &StackedSignal, grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len(), "gradient buffer size");
        // the output map is symmetric, so its transpose is itself
        let mut delta: Vec<f64> = match self.spec.preconditioning {
            Preconditioning::None => d_score.as_slice().to_vec(),
            Preconditioning::Noise => {
                let (l1, l2) = self.sde.lambdas(cache.t);
                apply_projector_mix(-l1.sqrt().recip(), -l2.sqrt().recip(), d_score).into_vec()
            }
        };

        if self.spec.linear_skip {
            let s = self.skip_offset();
            let input = &cache.activations[0];
            let d_in = input.len();
            for (r, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                for (g, v) in grad[s + r * d_in..s + (r + 1) * d_in].iter_mut().zip(input) {
                    *g += d * v;
                }
            }
        }

        let dims = self.spec.layer_dims();
        for l in (0..dims.len()).rev() {
            let (i, o) = dims[l];
            let (w, b) = self.layer_offsets(l);
            let a_in = &cache.activations[l];
            for r in 0..o {
                let d = delta[r];
                grad[b + r] += d;
                if d == 0.0 {
                    continue;
                }
                for (g, v) in grad[w + r * i..w + (r + 1) * i].iter_mut().zip(a_in) {
                    *g += d * v;
                }
            }
            if l == 0 {
                break;
            }
            // propagate through Wᵀ and the tanh of the previous layer
            let mut prev = vec![0.0; i];
            for (r, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &self.params[w + r * i..w + (r + 1) * i];
                for (p, wv) in prev.iter_mut().zip(row) {
                    *p += d * wv;
                }
            }
            for (p, a) in prev.iter_mut().zip(&cache.activations[l]) {
                *p *= tanh_grad(*a);
            }
            delta = prev;
        }
    }
}

impl ScoreFunction for MlpScoreModel {
    fn score(&self, x: &StackedSignal, t: f64, y: &[f64]) -> Result<StackedSignal> {
        self.forward(x, t, y)
    }
}
