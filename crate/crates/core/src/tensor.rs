//! Dense multilinear algebra on small real tensors.
//!
//! Storage order: the last index varies fastest. For an order-N tensor with
//! dims `(I_1, …, I_N)` the 0-based multi-index `(i_1, …, i_N)` lives at
//!
//! ```text
//! offset = ((i_1 · I_2 + i_2) · I_3 + …) · I_N + i_N
//! ```
//!
//! With this layout the mode-N unfolding places `s[i_1…i_N]` at row `i_N` and
//! column `(i_1 · I_2 + i_2) · I_3 + … + i_{N-1}` (0-based), which is the
//! usual mode-N unfolding column formula shifted by one. Consequently the flat
//! data of a tensor is exactly `vec` of its mode-N unfolding (columns stacked),
//! and `vec(S ×_1 A_1 … ×_N A_N) = (A_1 ⊗ … ⊗ A_N) · vec(S)`.

use crate::error::{Error, Result};

/// Row-major dense real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RealMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::shape("rows of unequal length"));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.get(r, c);
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::shape(format!(
                "matmul of {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                for (o, &b) in out.row_mut(i).iter_mut().zip(src) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::shape(format!(
                "matvec of {}x{} by vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows)
            .map(|r| self.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Frobenius inner product. Panics on shape mismatch.
    pub fn dot(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape(), "dot of mismatched shapes");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// `self += alpha * other`. Panics on shape mismatch.
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        assert_eq!(self.shape(), other.shape(), "axpy of mismatched shapes");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| alpha * v).collect(),
        }
    }
}

impl AsRef<RealMatrix> for RealMatrix {
    fn as_ref(&self) -> &RealMatrix {
        self
    }
}

/// Order-N dense real tensor, last index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        validate_dims(&dims)?;
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(Error::shape(format!(
                "tensor with dims {dims:?} needs {len} entries, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        validate_dims(&dims)?;
        let len = dims.iter().product();
        Ok(Self {
            dims,
            data: vec![0.0; len],
        })
    }

    /// Builds a tensor by evaluating `f` at every 0-based multi-index.
    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        validate_dims(&dims)?;
        let len: usize = dims.iter().product();
        let mut idx = vec![0usize; dims.len()];
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f(&idx));
            increment_index(&mut idx, &dims);
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
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

    /// Flat offset of a 0-based multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.dims.len());
        index.iter().zip(&self.dims).fold(0, |acc, (&i, &d)| acc * d + i)
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], v: f64) {
        let o = self.offset(index);
        self.data[o] = v;
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.is_empty() {
        return Err(Error::shape("tensor order must be at least 1"));
    }
    if dims.contains(&0) {
        return Err(Error::shape(format!("tensor dims must be positive, got {dims:?}")));
    }
    Ok(())
}

/// Advances a 0-based multi-index in storage order (last index fastest).
pub(crate) fn increment_index(idx: &mut [usize], dims: &[usize]) {
    for m in (0..dims.len()).rev() {
        idx[m] += 1;
        if idx[m] < dims[m] {
            return;
        }
        idx[m] = 0;
    }
}

/// `(outer, len, inner)` split of `dims` around `mode`.
fn mode_split(dims: &[usize], mode: usize) -> (usize, usize, usize) {
    let outer = dims[..mode].iter().product();
    let inner = dims[mode + 1..].iter().product();
    (outer, dims[mode], inner)
}

/// n-mode product `S ×_n U` with a 0-based `mode`.
///
/// `(S ×_n U)[…, j, …] = Σ_i S[…, i, …] · U[j, i]`.
pub fn n_mode_product(s: &DenseTensor, u: &RealMatrix, mode: usize) -> Result<DenseTensor> {
    if mode >= s.order() {
        return Err(Error::shape(format!(
            "mode {mode} out of range for tensor of order {}",
            s.order()
        )));
    }
    if u.cols() != s.dims[mode] {
        return Err(Error::shape(format!(
            "n-mode product: matrix is {}x{} but tensor {:?} has {} entries along mode {mode}",
            u.rows(),
            u.cols(),
            s.dims,
            s.dims[mode]
        )));
    }
    let (outer, len, inner) = mode_split(&s.dims, mode);
    let rows = u.rows();
    let mut out = vec![0.0; outer * rows * inner];
    for o in 0..outer {
        let src = &s.data[o * len * inner..(o + 1) * len * inner];
        let dst = &mut out[o * rows * inner..(o + 1) * rows * inner];
        for j in 0..rows {
            let urow = u.row(j);
            let d = &mut dst[j * inner..(j + 1) * inner];
            for (i, &w) in urow.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for (x, &y) in d.iter_mut().zip(&src[i * inner..(i + 1) * inner]) {
                    *x += w * y;
                }
            }
        }
    }
    let mut dims = s.dims.clone();
    dims[mode] = rows;
    Ok(DenseTensor { dims, data: out })
}

/// `S ×_n Uᵀ` without materializing the transpose.
pub fn n_mode_product_transposed(s: &DenseTensor, u: &RealMatrix, mode: usize) -> Result<DenseTensor> {
    if mode >= s.order() {
        return Err(Error::shape(format!(
            "mode {mode} out of range for tensor of order {}",
            s.order()
        )));
    }
    if u.rows() != s.dims[mode] {
        return Err(Error::shape(format!(
            "transposed n-mode product: matrix is {}x{} but tensor {:?} has {} entries along mode {mode}",
            u.rows(),
            u.cols(),
            s.dims,
            s.dims[mode]
        )));
    }
    let (outer, len, inner) = mode_split(&s.dims, mode);
    let cols = u.cols();
    let mut out = vec![0.0; outer * cols * inner];
    for o in 0..outer {
        let src = &s.data[o * len * inner..(o + 1) * len * inner];
        let dst = &mut out[o * cols * inner..(o + 1) * cols * inner];
        for j in 0..len {
            let s_slab = &src[j * inner..(j + 1) * inner];
            for (k, &w) in u.row(j).iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for (x, &y) in dst[k * inner..(k + 1) * inner].iter_mut().zip(s_slab) {
                    *x += w * y;
                }
            }
        }
    }
    let mut dims = s.dims.clone();
    dims[mode] = cols;
    Ok(DenseTensor { dims, data: out })
}

/// Contraction of two tensors over every mode except `mode`:
/// `out[j, k] = Σ_{rest} a[…, j, …] · b[…, k, …]`.
///
/// This is `A_(n) · B_(n)ᵀ` for matching mode-n unfoldings, and the building
/// block for gradients of n-mode products with respect to the matrix.
pub fn mode_contract(a: &DenseTensor, b: &DenseTensor, mode: usize) -> Result<RealMatrix> {
    let ok = a.order() == b.order()
        && mode < a.order()
        && a.dims
            .iter()
            .zip(&b.dims)
            .enumerate()
            .all(|(m, (x, y))| m == mode || x == y);
    if !ok {
        return Err(Error::shape(format!(
            "mode-{mode} contraction of tensors {:?} and {:?}",
            a.dims, b.dims
        )));
    }
    let (outer, la, inner) = mode_split(&a.dims, mode);
    let lb = b.dims[mode];
    let mut out = RealMatrix::zeros(la, lb);
    for o in 0..outer {
        let sa = &a.data[o * la * inner..(o + 1) * la * inner];
        let sb = &b.data[o * lb * inner..(o + 1) * lb * inner];
        for j in 0..la {
            let x = &sa[j * inner..(j + 1) * inner];
            for k in 0..lb {
                let y = &sb[k * inner..(k + 1) * inner];
                let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
                out.data[j * lb + k] += dot;
            }
        }
    }
    Ok(out)
}

/// Mode-N unfolding `S_(N)`: `I_N × ∏_{j<N} I_j`.
pub fn unfold_last(s: &DenseTensor) -> RealMatrix {
    let last = *s.dims.last().expect("order >= 1");
    let cols = s.data.len() / last;
    let mut m = RealMatrix::zeros(last, cols);
    for c in 0..cols {
        for r in 0..last {
            m.data[r * cols + c] = s.data[c * last + r];
        }
    }
    m
}

/// Inverse of [`unfold_last`].
pub fn fold_last(m: &RealMatrix, dims: &[usize]) -> Result<DenseTensor> {
    validate_dims(dims)?;
    let last = *dims.last().unwrap();
    let rest: usize = dims[..dims.len() - 1].iter().product();
    if m.rows() != last || m.cols() != rest {
        return Err(Error::shape(format!(
            "cannot fold a {}x{} matrix into dims {dims:?} (expected {last}x{rest})",
            m.rows(),
            m.cols()
        )));
    }
    let mut data = vec![0.0; last * rest];
    for c in 0..rest {
        for r in 0..last {
            data[c * last + r] = m.data[r * rest + c];
        }
    }
    Ok(DenseTensor {
        dims: dims.to_vec(),
        data,
    })
}

/// Kronecker product `A ⊗ B`.
pub fn kronecker(a: &RealMatrix, b: &RealMatrix) -> RealMatrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = RealMatrix::zeros(ar * br, ac * bc);
    let cols = ac * bc;
    for i in 0..ar {
        for j in 0..ac {
            let w = a.get(i, j);
            for k in 0..br {
                for l in 0..bc {
                    out.data[(i * br + k) * cols + j * bc + l] = w * b.get(k, l);
                }
            }
        }
    }
    out
}

fn check_factors<M: AsRef<RealMatrix>>(dims: &[usize], factors: &[M], transposed: bool) -> Result<()> {
    if factors.len() != dims.len() {
        return Err(Error::shape(format!(
            "{} factors supplied for a tensor of order {}",
            factors.len(),
            dims.len()
        )));
    }
    for (mode, (f, &d)) in factors.iter().zip(dims).enumerate() {
        let f = f.as_ref();
        let expect = if transposed { f.rows() } else { f.cols() };
        if expect != d {
            return Err(Error::shape(format!(
                "factor for mode {} is {}x{} but the tensor has {d} entries along that mode",
                mode + 1,
                f.rows(),
                f.cols()
            )));
        }
    }
    Ok(())
}

/// `S ×_1 F_1 ×_2 F_2 … ×_N F_N`.
pub fn apply_separable<M: AsRef<RealMatrix>>(s: &DenseTensor, factors: &[M]) -> Result<DenseTensor> {
    check_factors(&s.dims, factors, false)?;
    let mut cur = s.clone();
    for (mode, f) in factors.iter().enumerate() {
        cur = n_mode_product(&cur, f.as_ref(), mode)?;
    }
    Ok(cur)
}

/// `A ×_1 F_1ᵀ … ×_N F_Nᵀ`, the adjoint of [`apply_separable`].
pub fn apply_separable_transposed<M: AsRef<RealMatrix>>(a: &DenseTensor, factors: &[M]) -> Result<DenseTensor> {
    check_factors(&a.dims, factors, true)?;
    let mut cur = a.clone();
    for (mode, f) in factors.iter().enumerate() {
        cur = n_mode_product_transposed(&cur, f.as_ref(), mode)?;
    }
    Ok(cur)
}

/// `F_1 ⊗ F_2 ⊗ … ⊗ F_N`. Test-scale only: the result has `∏ k_i · ∏ n_i`
/// entries.
pub fn kronecker_chain<M: AsRef<RealMatrix>>(factors: &[M]) -> Result<RealMatrix> {
    let mut it = factors.iter();
    let first = it
        .next()
        .ok_or_else(|| Error::shape("empty factor list"))?
        .as_ref()
        .clone();
    Ok(it.fold(first, |acc, f| kronecker(&acc, f.as_ref())))
}
