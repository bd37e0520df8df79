//! Oblique manifold of unit-norm-row matrices and its N-fold product.
//!
//! Factors are `k × n` with `k ≥ n` and every row on the unit sphere. The
//! tangent space at `Ω` holds matrices whose rows are orthogonal to the
//! matching rows of `Ω`. Retraction is row normalization and vector transport
//! is tangent projection at the destination.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::RealMatrix;

/// Row norms of a factor must equal one within this tolerance.
pub const ROW_NORM_TOL: f64 = 1e-12;

/// Rows shorter than this make a retraction step degenerate.
pub const DEGENERATE_ROW_NORM: f64 = 1e-14;

/// One mode of a separable analysis operator: `k × n`, unit rows, `k ≥ n`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorFactor {
    matrix: RealMatrix,
}

impl OperatorFactor {
    /// Validates an existing matrix.
    pub fn new(matrix: RealMatrix) -> Result<Self> {
        let (k, n) = matrix.shape();
        if k < n {
            return Err(Error::invalid(format!(
                "operator factor must have at least as many rows as columns, got {k}x{n}"
            )));
        }
        for r in 0..k {
            let norm = row_norm(matrix.row(r));
            if (norm - 1.0).abs() > ROW_NORM_TOL {
                return Err(Error::invalid(format!(
                    "row {r} of operator factor has norm {norm}, expected 1"
                )));
            }
        }
        Ok(Self { matrix })
    }

    /// Normalizes every row of `matrix` onto the unit sphere.
    pub fn normalized(mut matrix: RealMatrix) -> Result<Self> {
        normalize_rows(&mut matrix)?;
        Self::new(matrix)
    }

    pub fn matrix(&self) -> &RealMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> RealMatrix {
        self.matrix
    }

    pub fn shape(&self) -> (usize, usize) {
        self.matrix.shape()
    }
}

impl AsRef<RealMatrix> for OperatorFactor {
    fn as_ref(&self) -> &RealMatrix {
        &self.matrix
    }
}

/// A matrix in the tangent space of some factor.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    matrix: RealMatrix,
}

impl TangentVector {
    pub fn zeros_like(base: &OperatorFactor) -> Self {
        let (k, n) = base.shape();
        Self {
            matrix: RealMatrix::zeros(k, n),
        }
    }

    pub fn matrix(&self) -> &RealMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> RealMatrix {
        self.matrix
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            matrix: self.matrix.scaled(alpha),
        }
    }

    /// `self += alpha * other`; both must live in the same tangent space.
    pub fn axpy(&mut self, alpha: f64, other: &TangentVector) {
        self.matrix.axpy(alpha, &other.matrix);
    }

    pub fn norm(&self) -> f64 {
        self.matrix.frobenius_norm()
    }
}

fn row_norm(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn normalize_rows(m: &mut RealMatrix) -> Result<()> {
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let norm = row_norm(row);
        if !(norm >= DEGENERATE_ROW_NORM) {
            return Err(Error::DegenerateStep { row: r, norm });
        }
        row.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(())
}

fn check_same_shape(a: (usize, usize), b: (usize, usize), what: &str) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{what}: {}x{} versus {}x{}", a.0, a.1, b.0, b.1)));
    }
    Ok(())
}

/// `X = G − ddiag(G Ωᵀ) Ω`: removes from each row of `G` its component along
/// the matching row of `Ω`.
pub fn project_tangent(base: &OperatorFactor, g: &RealMatrix) -> Result<TangentVector> {
    check_same_shape(base.shape(), g.shape(), "tangent projection")?;
    let mut x = g.clone();
    for r in 0..x.rows() {
        let w = base.matrix.row(r);
        let row = x.row_mut(r);
        let c: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum();
        for (v, &b) in row.iter_mut().zip(w) {
            *v -= c * b;
        }
    }
    Ok(TangentVector { matrix: x })
}

/// Row-normalized `Ω + t X`.
pub fn retract(base: &OperatorFactor, x: &TangentVector, t: f64) -> Result<OperatorFactor> {
    check_same_shape(base.shape(), x.matrix.shape(), "retraction")?;
    if !t.is_finite() {
        return Err(Error::invalid(format!("retraction step {t} is not finite")));
    }
    if t == 0.0 {
        return Ok(base.clone());
    }
    let mut m = base.matrix.clone();
    m.axpy(t, &x.matrix);
    normalize_rows(&mut m)?;
    Ok(OperatorFactor { matrix: m })
}

/// Carries `x` into the tangent space at `new_base` by projection.
pub fn transport(new_base: &OperatorFactor, x: &TangentVector) -> Result<TangentVector> {
    project_tangent(new_base, &x.matrix)
}

/// Frobenius metric.
pub fn inner(x: &TangentVector, y: &TangentVector) -> Result<f64> {
    check_same_shape(x.matrix.shape(), y.matrix.shape(), "inner product")?;
    Ok(x.matrix.dot(&y.matrix))
}

/// Rows drawn from an isotropic Gaussian and normalized; deterministic in `seed`.
pub fn random_factor(k: usize, n: usize, seed: u64) -> Result<OperatorFactor> {
    if n == 0 || k < n {
        return Err(Error::invalid(format!(
            "operator factor shape {k}x{n} needs k >= n >= 1"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let data: Vec<f64> = (0..k * n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut m = RealMatrix::new(k, n, data)?;
        // A Gaussian row of norm < 1e-14 has probability zero; redraw if it happens.
        if normalize_rows(&mut m).is_ok() {
            return OperatorFactor::new(m);
        }
    }
}

/// A point on the product `OB(k_1,n_1) × … × OB(k_N,n_N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductPoint {
    factors: Vec<OperatorFactor>,
}

/// A tangent vector on the product manifold, one component per factor.
pub type ProductTangent = Vec<TangentVector>;

impl ProductPoint {
    pub fn new(factors: Vec<OperatorFactor>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::invalid("product point needs at least one factor"));
        }
        Ok(Self { factors })
    }

    /// Independent random factors; mode `i` uses seed `seed + i`.
    pub fn random(shapes: &[(usize, usize)], seed: u64) -> Result<Self> {
        let factors = shapes
            .iter()
            .enumerate()
            .map(|(i, &(k, n))| random_factor(k, n, seed.wrapping_add(i as u64)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(factors)
    }

    pub fn factors(&self) -> &[OperatorFactor] {
        &self.factors
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.factors.iter().map(OperatorFactor::shape).collect()
    }

    /// Signal dims accepted by this operator (`n_i` per mode).
    pub fn input_dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.shape().1).collect()
    }

    /// Coefficient dims produced by this operator (`k_i` per mode).
    pub fn output_dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.shape().0).collect()
    }

    /// Total number of free entries `Σ k_i n_i`.
    pub fn ambient_size(&self) -> usize {
        self.factors.iter().map(|f| f.shape().0 * f.shape().1).sum()
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.factors.len() {
            return Err(Error::shape(format!(
                "{} components supplied for a product of {} factors",
                n,
                self.factors.len()
            )));
        }
        Ok(())
    }

    pub fn project(&self, grads: &[RealMatrix]) -> Result<ProductTangent> {
        self.check_len(grads.len())?;
        self.factors
            .iter()
            .zip(grads)
            .map(|(f, g)| project_tangent(f, g))
            .collect()
    }

    pub fn retract(&self, x: &[TangentVector], t: f64) -> Result<ProductPoint> {
        self.check_len(x.len())?;
        let factors = self
            .factors
            .iter()
            .zip(x)
            .map(|(f, v)| retract(f, v, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(ProductPoint { factors })
    }

    /// Transports `x` (tangent elsewhere) into the tangent space at `self`.
    pub fn transport(&self, x: &[TangentVector]) -> Result<ProductTangent> {
        self.check_len(x.len())?;
        self.factors.iter().zip(x).map(|(f, v)| transport(f, v)).collect()
    }
}

/// Product metric: sum of the per-factor Frobenius inner products.
pub fn product_inner(x: &[TangentVector], y: &[TangentVector]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape("product tangents of different length"));
    }
    x.iter().zip(y).map(|(a, b)| inner(a, b)).sum()
}

pub fn product_norm(x: &[TangentVector]) -> f64 {
    x.iter().map(|v| v.matrix.dot(&v.matrix)).sum::<f64>().sqrt()
}
