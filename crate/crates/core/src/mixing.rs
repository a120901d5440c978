//! Stacked multi-source signals and the structured `(A ⊗ I_N)` algebra over them.
//!
//! A [`StackedSignal`] holds `K` source signals of `N` samples each, laid out
//! source-major: source `k` occupies indices `k*N .. (k+1)*N`. Every `K × K`
//! mixing matrix acts on such a vector sample-wise, so `P̄` (the average
//! projector `1 1ᵀ / K`) and its complement `P̃ = I − P̄` reduce to a per-sample
//! block mean and never need to be materialized.
//!
//! Sums across the source axis are computed with [`order_invariant_sum`], which
//! makes [`StackedSignal::mix`] and the projector applications bit-exactly
//! invariant under any relabelling of the sources.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StackedSignal {
    data: Vec<f64>,
    k: usize,
    n: usize,
}

impl StackedSignal {
    pub fn new(data: Vec<f64>, k: usize, n: usize) -> Result<Self> {
        if k == 0 || n == 0 {
            return Err(Error::InvalidParameter(format!(
                "source count and length must be positive (K = {k}, N = {n})"
            )));
        }
        if data.len() != k * n {
            return Err(Error::DimensionMismatch {
                expected: k * n,
                got: data.len(),
            });
        }
        Ok(Self { data, k, n })
    }

    pub fn zeros(k: usize, n: usize) -> Self {
        assert!(k > 0 && n > 0, "K and N must be positive");
        Self {
            data: vec![0.0; k * n],
            k,
            n,
        }
    }

    /// Stacks equal-length source signals.
    pub fn from_blocks<B: AsRef<[f64]>>(blocks: &[B]) -> Result<Self> {
        let k = blocks.len();
        let n = blocks.first().map_or(0, |b| b.as_ref().len());
        let mut data = Vec::with_capacity(k * n);
        for b in blocks {
            let b = b.as_ref();
            if b.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: b.len(),
                });
            }
            data.extend_from_slice(b);
        }
        Self::new(data, k, n)
    }

    /// The average-source vector `s̄`: `y / K` repeated in all `K` blocks.
    pub fn mixture_average(y: &[f64], k: usize) -> Self {
        let n = y.len();
        let inv_k = 1.0 / k as f64;
        let mut data = Vec::with_capacity(k * n);
        for _ in 0..k {
            data.extend(y.iter().map(|v| v * inv_k));
        }
        Self { data, k, n }
    }

    /// A signal with the same shape as `self` and the given data.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::new(data, self.k, self.n)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn block(&self, k: usize) -> &[f64] {
        &self.data[k * self.n..(k + 1) * self.n]
    }

    pub fn block_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.n..(k + 1) * self.n]
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n)
    }

    pub fn unstack(&self) -> Vec<Vec<f64>> {
        self.blocks().map(<[f64]>::to_vec).collect()
    }

    /// The mixture `y = Σ_k s_k`.
    pub fn mix(&self) -> Vec<f64> {
        let mut scratch = vec![0.0; self.k];
        (0..self.n)
            .map(|i| {
                for (k, slot) in scratch.iter_mut().enumerate() {
                    *slot = self.data[k * self.n + i];
                }
                order_invariant_sum(&mut scratch)
            })
            .collect()
    }

    /// Block `i` of the result is block `perm[i]` of `self`.
    pub fn permute_blocks(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.k, "permutation length must equal K");
        let mut data = Vec::with_capacity(self.data.len());
        for &src in perm {
            data.extend_from_slice(self.block(src));
        }
        Self {
            data,
            k: self.k,
            n: self.n,
        }
    }

    pub fn check_shape(&self, k: usize, n: usize) -> Result<()> {
        if self.k != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: self.k,
            });
        }
        if self.n != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.n,
            });
        }
        Ok(())
    }

    pub fn dot(&self, other: &Self) -> f64 {
        dot(&self.data, &other.data)
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.data, &self.data)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self + alpha * other`, elementwise.
    pub fn add_scaled(&self, alpha: f64, other: &Self) -> Self {
        debug_assert_eq!(self.data.len(), other.data.len());
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + alpha * b)
            .collect();
        Self {
            data,
            k: self.k,
            n: self.n,
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| alpha * v).collect(),
            k: self.k,
            n: self.n,
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sums a handful of values in a canonical (sorted) order, so the result does
/// not depend on the order the values were supplied in. Reorders `values`.
pub fn order_invariant_sum(values: &mut [f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        _ => {
            values.sort_unstable_by(f64::total_cmp);
            values.iter().sum()
        }
    }
}

/// Per-sample mean over the source axis (length `N`).
pub fn block_mean(v: &StackedSignal) -> Vec<f64> {
    let inv_k = 1.0 / v.k as f64;
    v.mix().into_iter().map(|s| s * inv_k).collect()
}

/// `(A ⊗ I_N) v`: block `i` of the output is `Σ_j A[i][j] · block_j(v)`.
pub fn apply_block(a: &DMatrix<f64>, v: &StackedSignal) -> Result<StackedSignal> {
    if a.nrows() != v.k || a.ncols() != v.k {
        return Err(Error::DimensionMismatch {
            expected: v.k,
            got: if a.nrows() != v.k { a.nrows() } else { a.ncols() },
        });
    }
    let n = v.n;
    let mut out = vec![0.0; v.data.len()];
    for i in 0..v.k {
        let dst = &mut out[i * n..(i + 1) * n];
        for j in 0..v.k {
            let c = a[(i, j)];
            if c == 0.0 {
                continue;
            }
            for (d, s) in dst.iter_mut().zip(v.block(j)) {
                *d += c * s;
            }
        }
    }
    Ok(StackedSignal {
        data: out,
        k: v.k,
        n,
    })
}

/// `(a·P̄ + b·P̃) v` without forming either projector.
pub fn apply_projector_mix(a: f64, b: f64, v: &StackedSignal) -> StackedSignal {
    let mean = block_mean(v);
    let n = v.n;
    let mut data = Vec::with_capacity(v.data.len());
    for k in 0..v.k {
        data.extend(
            v.block(k)
                .iter()
                .zip(&mean)
                .map(|(x, m)| a * m + b * (x - m)),
        );
    }
    StackedSignal { data, k: v.k, n }
}

/// `K × K` projector pair `P̄ = 1 1ᵀ / K` and `P̃ = I − P̄`, materialized for
/// dense cross-checks; the hot paths go through [`apply_projector_mix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProjectorPair {
    pub k: usize,
}

impl ProjectorPair {
    pub fn new(k: usize) -> Self {
        Self { k }
    }

    pub fn average(&self) -> DMatrix<f64> {
        DMatrix::from_element(self.k, self.k, 1.0 / self.k as f64)
    }

    pub fn complement(&self) -> DMatrix<f64> {
        DMatrix::identity(self.k, self.k) - self.average()
    }

    /// `a·P̄ + b·P̃` as a dense `K × K` matrix.
    pub fn combination(&self, a: f64, b: f64) -> DMatrix<f64> {
        self.average() * a + self.complement() * b
    }

    pub fn apply_average(&self, v: &StackedSignal) -> StackedSignal {
        apply_projector_mix(1.0, 0.0, v)
    }

    pub fn apply_complement(&self, v: &StackedSignal) -> StackedSignal {
        apply_projector_mix(0.0, 1.0, v)
    }
}

/// All permutations of `0..k` in lexicographic order, identity first.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut current: Vec<usize> = (0..k).collect();
    let mut out = vec![current.clone()];
    // next lexicographic permutation
    loop {
        let Some(i) = (1..k).rev().find(|&i| current[i - 1] < current[i]) else {
            return out;
        };
        let j = (i..k).rev().find(|&j| current[j] > current[i - 1]).unwrap();
        current.swap(i - 1, j);
        current[i..].reverse();
        out.push(current.clone());
    }
}
