//! Training signals that are cosparse with respect to a known separable
//! operator.
//!
//! Each signal is a sum of rank-one tensors `u_1 ∘ u_2 ∘ … ∘ u_N` where every
//! `u_i` lies in the null space of a random subset of rows of `Ω_i`. The
//! coefficients `α = S ×_1 Ω_1 … ×_N Ω_N` then vanish on every multi-index
//! whose mode-`i` component is one of the annihilated rows.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::manifold::ProductPoint;
use crate::tensor::DenseTensor;
use crate::volume::TrainingSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosparseSpec {
    /// Rows of each factor annihilated by every rank-one term.
    pub zero_rows: usize,
    /// Rank-one terms per signal.
    pub terms: usize,
    /// Standard deviation of additive Gaussian noise before normalization.
    pub noise: f64,
}

impl Default for CosparseSpec {
    fn default() -> Self {
        Self {
            zero_rows: 3,
            terms: 2,
            noise: 0.0,
        }
    }
}

/// Orthonormal basis (as columns) of the null space of the selected rows.
fn null_basis(rows: &DMatrix<f64>) -> DMatrix<f64> {
    let n = rows.ncols();
    let svd = rows.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10).count();
    // Full V is needed when rows < n; complete the basis by Gram–Schmidt.
    let mut basis: Vec<nalgebra::DVector<f64>> = (0..rank).map(|i| v_t.row(i).transpose().into_owned()).collect();
    let mut out = Vec::new();
    for j in 0..n {
        let mut e = nalgebra::DVector::<f64>::zeros(n);
        e[j] = 1.0;
        for b in &basis {
            let c = b.dot(&e);
            e -= b * c;
        }
        let norm = e.norm();
        if norm > 1e-8 {
            e /= norm;
            basis.push(e.clone());
            out.push(e);
        }
        if basis.len() == n {
            break;
        }
    }
    DMatrix::from_columns(&out)
}

/// Draws `count` unit-norm signals cosparse with respect to `point`.
pub fn cosparse_training_set(point: &ProductPoint, count: usize, spec: CosparseSpec, seed: u64) -> Result<TrainingSet> {
    let dims = point.input_dims();
    for f in point.factors() {
        let (k, n) = f.shape();
        if spec.zero_rows == 0 || spec.zero_rows >= n || spec.zero_rows > k {
            return Err(Error::invalid(format!(
                "cannot annihilate {} rows of a {k}x{n} factor",
                spec.zero_rows
            )));
        }
    }
    if count == 0 || spec.terms == 0 {
        return Err(Error::invalid("need at least one signal and one term"));
    }
    let mats: Vec<DMatrix<f64>> = point
        .factors()
        .iter()
        .map(|f| {
            let (k, n) = f.shape();
            DMatrix::from_row_slice(k, n, f.matrix().as_slice())
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len: usize = dims.iter().product();
    let mut patches = Vec::with_capacity(count);
    while patches.len() < count {
        let mut data = vec![0.0; len];
        for _ in 0..spec.terms {
            let vectors: Vec<Vec<f64>> = mats
                .iter()
                .map(|m| {
                    let pick = sample(&mut rng, m.nrows(), spec.zero_rows).into_vec();
                    let sub = m.select_rows(&pick);
                    let basis = null_basis(&sub);
                    let w = nalgebra::DVector::from_fn(basis.ncols(), |_, _| StandardNormal.sample(&mut rng));
                    (basis * w).iter().copied().collect()
                })
                .collect();
            let weight: f64 = StandardNormal.sample(&mut rng);
            let mut idx = vec![0usize; dims.len()];
            for v in data.iter_mut() {
                *v += weight * idx.iter().zip(&vectors).map(|(&i, u)| u[i]).product::<f64>();
                crate::tensor::increment_index(&mut idx, &dims);
            }
        }
        if spec.noise > 0.0 {
            for v in data.iter_mut() {
                *v += spec.noise * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let norm = data.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            continue;
        }
        data.iter_mut().for_each(|x| *x /= norm);
        patches.push(DenseTensor::new(dims.clone(), data)?);
    }
    TrainingSet::from_patches(patches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::cosparsity;
    use crate::tensor::apply_separable;

    #[test]
    fn generated_signals_are_cosparse() {
        let point = ProductPoint::random(&[(6, 5); 3], 3).unwrap();
        let spec = CosparseSpec {
            zero_rows: 3,
            terms: 1,
            noise: 0.0,
        };
        let set = cosparse_training_set(&point, 20, spec, 4).unwrap();
        for s in set.patches() {
            assert!((s.frobenius_norm() - 1.0).abs() < 1e-12);
            let a = apply_separable(s, point.factors()).unwrap();
            // 3 of 6 rows vanish per mode: at most 3·3·3 = 27 nonzeros.
            assert!(cosparsity(&a, 1e-10) >= 216 - 27);
        }
    }

    #[test]
    fn rejects_impossible_spec() {
        let point = ProductPoint::random(&[(6, 5); 3], 3).unwrap();
        let spec = CosparseSpec {
            zero_rows: 5,
            ..CosparseSpec::default()
        };
        assert!(cosparse_training_set(&point, 5, spec, 1).is_err());
    }
}
