//! Learning cost for separable analysis operators.
//!
//! ```text
//! f(Ω_1…Ω_N) = (1/T) Σ_j g(S_j ×_1 Ω_1 … ×_N Ω_N)²  +  κ Σ_i h(Ω_i)  +  μ Σ_i r(Ω_i)
//! g(A)       = Σ_k ln(1 + ν α_k²)
//! h(Ω)       = −1/(n ln n) · ln det(ΩᵀΩ / k)
//! r(Ω)       = −Σ_{k<l} ln(1 − (ω_kᵀ ω_l)²)
//! ```
//!
//! All logarithms are natural. `h` and `r` are log-barriers; leaving their
//! domain is reported as [`Error::BarrierViolation`].

use nalgebra::DMatrix;

use crate::error::{Barrier, Error, Result};
use crate::manifold::{OperatorFactor, ProductPoint, ProductTangent};
use crate::reduce::chunked_map_reduce;
use crate::tensor::{
    apply_separable, mode_contract, n_mode_product, n_mode_product_transposed, DenseTensor, RealMatrix,
};
use crate::volume::TrainingSet;

/// Training samples per parallel work unit. Results are bit-reproducible for
/// this fixed value.
pub const SAMPLE_CHUNK: usize = 64;

/// Smallest admissible `det(ΩᵀΩ / k)`.
pub const MIN_GRAM_DET: f64 = 1e-300;

/// Largest admissible `|⟨ω_k, ω_l⟩|` is `1 − COHERENCE_MARGIN`.
pub const COHERENCE_MARGIN: f64 = 1e-12;

/// Default threshold below which a coefficient counts as zero.
pub const DEFAULT_COSPARSITY_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningParams {
    /// Sparsity weight ν > 0.
    pub nu: f64,
    /// Rank-penalty weight κ ≥ 0.
    pub kappa: f64,
    /// Coherence-penalty weight μ ≥ 0.
    pub mu: f64,
}

impl Default for LearningParams {
    fn default() -> Self {
        Self {
            nu: 1000.0,
            kappa: 500.0,
            mu: 0.5,
        }
    }
}

impl LearningParams {
    pub fn new(nu: f64, kappa: f64, mu: f64) -> Result<Self> {
        let p = Self { nu, kappa, mu };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::invalid(format!("nu must be positive, got {}", self.nu)));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::invalid(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::invalid(format!("mu must be >= 0, got {}", self.mu)));
        }
        Ok(())
    }
}

/// `g(A) = Σ ln(1 + ν α²)` over every entry.
pub fn sparsity_g(a: &DenseTensor, nu: f64) -> f64 {
    a.as_slice().iter().map(|&x| (nu * x * x).ln_1p()).sum()
}

/// `∂g/∂α = 2να / (1 + να²)`, entrywise.
pub fn sparsity_g_gradient(a: &DenseTensor, nu: f64) -> DenseTensor {
    a.map(|x| 2.0 * nu * x / (1.0 + nu * x * x))
}

/// `g(S ×_1 Ω_1 … ×_N Ω_N)²`.
pub fn sample_term<M: AsRef<RealMatrix>>(s: &DenseTensor, factors: &[M], nu: f64) -> Result<f64> {
    let a = apply_separable(s, factors)?;
    let g = sparsity_g(&a, nu);
    Ok(g * g)
}

/// Number of coefficients with `|α| ≤ eps`.
pub fn cosparsity(a: &DenseTensor, eps: f64) -> usize {
    a.as_slice().iter().filter(|x| x.abs() <= eps).count()
}

fn gram_cholesky(f: &OperatorFactor) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, f64)> {
    let (k, n) = f.shape();
    let m = DMatrix::from_row_slice(k, n, f.matrix().as_slice());
    let gram = m.transpose() * &m;
    let chol = nalgebra::Cholesky::new(gram).ok_or_else(|| Error::BarrierViolation {
        barrier: Barrier::Rank,
        detail: format!("ΩᵀΩ of a {k}x{n} factor is not positive definite"),
    })?;
    // ln det(ΩᵀΩ / k)
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() - n as f64 * (k as f64).ln();
    if !log_det.is_finite() || log_det <= MIN_GRAM_DET.ln() {
        return Err(Error::BarrierViolation {
            barrier: Barrier::Rank,
            detail: format!("ln det(ΩᵀΩ/k) = {log_det}"),
        });
    }
    Ok((chol, log_det))
}

fn check_rank_penalty_shape(f: &OperatorFactor) -> Result<usize> {
    let n = f.shape().1;
    if n < 2 {
        return Err(Error::invalid(format!("rank penalty needs n >= 2 columns, got {n}")));
    }
    Ok(n)
}

/// `h(Ω) = −1/(n ln n) · ln det(ΩᵀΩ / k)`; equals 1 on unit-norm tight frames.
pub fn rank_penalty_h(f: &OperatorFactor) -> Result<f64> {
    let n = check_rank_penalty_shape(f)? as f64;
    let (_, log_det) = gram_cholesky(f)?;
    Ok(-log_det / (n * n.ln()))
}

/// `∇h(Ω) = −2/(n ln n) · Ω (ΩᵀΩ)⁻¹`.
pub fn rank_penalty_h_gradient(f: &OperatorFactor) -> Result<RealMatrix> {
    let n = check_rank_penalty_shape(f)?;
    let k = f.shape().0;
    let (chol, _) = gram_cholesky(f)?;
    let m = DMatrix::from_row_slice(k, n, f.matrix().as_slice());
    let scale = -2.0 / (n as f64 * (n as f64).ln());
    let g = (m * chol.inverse()) * scale;
    RealMatrix::new(k, n, g.transpose().as_slice().to_vec())
}

fn row_correlations(f: &OperatorFactor) -> Result<Vec<(usize, usize, f64)>> {
    let w = f.matrix();
    let k = w.rows();
    let mut out = Vec::with_capacity(k * (k - 1) / 2);
    for a in 0..k {
        for b in a + 1..k {
            let c: f64 = w.row(a).iter().zip(w.row(b)).map(|(x, y)| x * y).sum();
            if !(c.abs() < 1.0 - COHERENCE_MARGIN) {
                return Err(Error::BarrierViolation {
                    barrier: Barrier::Coherence,
                    detail: format!("rows {a} and {b} have inner product {c}"),
                });
            }
            out.push((a, b, c));
        }
    }
    Ok(out)
}

/// `r(Ω) = −Σ_{k<l} ln(1 − (ω_kᵀ ω_l)²)`.
pub fn coherence_penalty_r(f: &OperatorFactor) -> Result<f64> {
    Ok(row_correlations(f)?
        .into_iter()
        .map(|(_, _, c)| -(-c * c).ln_1p())
        .sum())
}

/// `∇r(Ω) = W Ω` with `W_kl = 2c_kl / (1 − c_kl²)` off the diagonal.
pub fn coherence_penalty_r_gradient(f: &OperatorFactor) -> Result<RealMatrix> {
    let w = f.matrix();
    let (k, n) = w.shape();
    let mut g = RealMatrix::zeros(k, n);
    for (a, b, c) in row_correlations(f)? {
        let s = 2.0 * c / (1.0 - c * c);
        for j in 0..n {
            let ga = g.get(a, j) + s * w.get(b, j);
            let gb = g.get(b, j) + s * w.get(a, j);
            g.set(a, j, ga);
            g.set(b, j, gb);
        }
    }
    Ok(g)
}

fn check_training_shape(point: &ProductPoint, train: &TrainingSet) -> Result<()> {
    let want = point.input_dims();
    if train.patch_dims() != want.as_slice() {
        return Err(Error::shape(format!(
            "training patches are {:?} but the operator accepts {:?}",
            train.patch_dims(),
            want
        )));
    }
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    Ok(())
}

fn regularizer_cost(point: &ProductPoint, p: &LearningParams) -> Result<f64> {
    let mut total = 0.0;
    for f in point.factors() {
        if p.kappa != 0.0 {
            total += p.kappa * rank_penalty_h(f)?;
        }
        if p.mu != 0.0 {
            total += p.mu * coherence_penalty_r(f)?;
        }
    }
    Ok(total)
}

/// Full learning cost.
pub fn learning_cost(point: &ProductPoint, train: &TrainingSet, p: &LearningParams) -> Result<f64> {
    check_training_shape(point, train)?;
    // Barriers first: an infeasible point is rejected before the expensive sum.
    let reg = regularizer_cost(point, p)?;
    let factors = point.factors();
    let sum = chunked_map_reduce(
        train.patches(),
        SAMPLE_CHUNK,
        |chunk| chunk.iter().map(|s| sample_term(s, factors, p.nu)).sum::<Result<f64>>(),
        |a, b| a + b,
    )?
    .unwrap_or(0.0);
    Ok(sum / train.len() as f64 + reg)
}

/// Cost plus per-factor gradients of `g(S ×… Ω)²` for one sample, by reverse
/// accumulation through the chain of n-mode products.
fn sample_term_and_gradient(s: &DenseTensor, factors: &[OperatorFactor], nu: f64) -> Result<(f64, Vec<RealMatrix>)> {
    let order = factors.len();
    // partial[m] = S ×_1 Ω_1 … ×_m Ω_m (partial[0] = S)
    let mut partial = Vec::with_capacity(order + 1);
    partial.push(s.clone());
    for (mode, f) in factors.iter().enumerate() {
        let next = n_mode_product(&partial[mode], f.matrix(), mode)?;
        partial.push(next);
    }
    let a = &partial[order];
    let g = sparsity_g(a, nu);
    let mut upstream = sparsity_g_gradient(a, nu);
    let outer = 2.0 * g;
    upstream.as_mut_slice().iter_mut().for_each(|v| *v *= outer);

    let mut grads = vec![RealMatrix::zeros(1, 1); order];
    for mode in (0..order).rev() {
        grads[mode] = mode_contract(&upstream, &partial[mode], mode)?;
        if mode > 0 {
            upstream = n_mode_product_transposed(&upstream, factors[mode].matrix(), mode)?;
        }
    }
    Ok((g * g, grads))
}

fn add_grads(mut a: (f64, Vec<RealMatrix>), b: (f64, Vec<RealMatrix>)) -> (f64, Vec<RealMatrix>) {
    a.0 += b.0;
    for (x, y) in a.1.iter_mut().zip(&b.1) {
        x.axpy(1.0, y);
    }
    a
}

/// Cost and Euclidean gradient (one matrix per factor) in a single pass.
pub fn learning_cost_and_gradient(
    point: &ProductPoint,
    train: &TrainingSet,
    p: &LearningParams,
) -> Result<(f64, Vec<RealMatrix>)> {
    check_training_shape(point, train)?;
    let reg = regularizer_cost(point, p)?;
    let factors = point.factors();
    let zero = || -> (f64, Vec<RealMatrix>) {
        (
            0.0,
            factors
                .iter()
                .map(|f| RealMatrix::zeros(f.shape().0, f.shape().1))
                .collect(),
        )
    };
    let (sum, mut grads) = chunked_map_reduce(
        train.patches(),
        SAMPLE_CHUNK,
        |chunk| {
            let mut acc = zero();
            for s in chunk {
                acc = add_grads(acc, sample_term_and_gradient(s, factors, p.nu)?);
            }
            Ok(acc)
        },
        add_grads,
    )?
    .unwrap_or_else(zero);

    let inv_t = 1.0 / train.len() as f64;
    for (g, f) in grads.iter_mut().zip(factors) {
        *g = g.scaled(inv_t);
        if p.kappa != 0.0 {
            g.axpy(p.kappa, &rank_penalty_h_gradient(f)?);
        }
        if p.mu != 0.0 {
            g.axpy(p.mu, &coherence_penalty_r_gradient(f)?);
        }
    }
    Ok((sum * inv_t + reg, grads))
}

/// Euclidean gradient of [`learning_cost`], one matrix per factor.
pub fn learning_gradient(point: &ProductPoint, train: &TrainingSet, p: &LearningParams) -> Result<Vec<RealMatrix>> {
    learning_cost_and_gradient(point, train, p).map(|(_, g)| g)
}

/// Riemannian gradient: the Euclidean gradient projected onto the tangent space.
pub fn riemannian_gradient(point: &ProductPoint, euclidean: &[RealMatrix]) -> Result<ProductTangent> {
    point.project(euclidean)
}
