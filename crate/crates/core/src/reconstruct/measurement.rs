//! Measurement operators: identity (denoising) and multi-slice undersampled
//! 2-D Fourier sampling (compressed sensing).
//!
//! Fourier convention: each transversal slice (fixed last index) of an
//! `h × w × s` volume is transformed by the unitary, centered 2-D DFT
//! `X = fftshift(FFT2(ifftshift(x))) / sqrt(h·w)`, so the DC bin sits at
//! `(h/2, w/2)` (integer division). Sampled bins are kept in row-major order
//! and slices are stacked slice-major.
//!
//! Measurement files are raw little-endian `f64` pairs `(re, im)` with a JSON
//! header in `<path>.json`; mask files are a header line followed by one text
//! row of `0`/`1` characters per mask row.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{header_path, Volume};

/// Relative tolerance of the adjoint test run at operator construction.
pub const ADJOINT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum MeasurementVector {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

impl MeasurementVector {
    pub fn len(&self) -> usize {
        match self {
            MeasurementVector::Real(v) => v.len(),
            MeasurementVector::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Real inner product `Re Σ conj(a_i) b_i`.
    pub fn inner(&self, other: &Self) -> Result<f64> {
        match (self, other) {
            (Self::Real(a), Self::Real(b)) if a.len() == b.len() => Ok(a.iter().zip(b).map(|(x, y)| x * y).sum()),
            (Self::Complex(a), Self::Complex(b)) if a.len() == b.len() => {
                Ok(a.iter().zip(b).map(|(x, y)| x.re * y.re + x.im * y.im).sum())
            }
            _ => Err(Error::shape(format!(
                "measurement vectors of different kind or length ({} vs {})",
                self.len(),
                other.len()
            ))),
        }
    }

    pub fn norm(&self) -> f64 {
        match self {
            Self::Real(a) => a.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Self::Complex(a) => a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt(),
        }
    }

    /// `self − other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        match (self, other) {
            (Self::Real(a), Self::Real(b)) if a.len() == b.len() => {
                Ok(Self::Real(a.iter().zip(b).map(|(x, y)| x - y).collect()))
            }
            (Self::Complex(a), Self::Complex(b)) if a.len() == b.len() => {
                Ok(Self::Complex(a.iter().zip(b).map(|(x, y)| x - y).collect()))
            }
            _ => Err(Error::shape(format!(
                "measurement vectors of different kind or length ({} vs {})",
                self.len(),
                other.len()
            ))),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Self::Real(a) => a.iter().all(|x| x.is_finite()),
            Self::Complex(a) => a.iter().all(|x| x.re.is_finite() && x.im.is_finite()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementKind {
    Identity,
    Fourier,
}

/// A linear measurement model `Φ` on volumes of fixed dims.
pub trait MeasurementOp: Sync {
    fn kind(&self) -> MeasurementKind;
    fn dims(&self) -> [usize; 3];
    fn mask(&self) -> Option<&SamplingMask> {
        None
    }
    /// `Φ v` for voxel data in storage order.
    fn forward_data(&self, v: &[f64]) -> MeasurementVector;
    /// `Φ* m`, real part, in storage order.
    fn adjoint_data(&self, m: &MeasurementVector) -> Result<Vec<f64>>;

    fn forward(&self, v: &Volume) -> Result<MeasurementVector> {
        if v.dims() != self.dims() {
            return Err(Error::shape(format!(
                "volume {:?} does not match measurement operator {:?}",
                v.dims(),
                self.dims()
            )));
        }
        Ok(self.forward_data(v.as_slice()))
    }

    fn adjoint(&self, m: &MeasurementVector) -> Result<Volume> {
        let data = self.adjoint_data(m)?;
        Volume::new(crate::tensor::DenseTensor::new(self.dims().to_vec(), data)?)
    }
}

/// Randomized `⟨Φv, m⟩ = ⟨v, Φ*m⟩` check; returns the relative mismatch
/// normalized by `‖Φv‖·‖m‖`.
pub fn adjoint_mismatch(op: &dyn MeasurementOp, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = op.dims().iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let fv = op.forward_data(&v);
    let m = match &fv {
        MeasurementVector::Real(a) => {
            MeasurementVector::Real((0..a.len()).map(|_| rng.random_range(-1.0..1.0)).collect())
        }
        MeasurementVector::Complex(a) => MeasurementVector::Complex(
            (0..a.len())
                .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect(),
        ),
    };
    let lhs = fv.inner(&m)?;
    let rhs: f64 = v.iter().zip(op.adjoint_data(&m)?).map(|(a, b)| a * b).sum();
    let scale = fv.norm() * m.norm();
    Ok(if scale == 0.0 {
        (lhs - rhs).abs()
    } else {
        (lhs - rhs).abs() / scale
    })
}

fn enforce_adjoint(op: &dyn MeasurementOp, name: &str) -> Result<()> {
    let mismatch = adjoint_mismatch(op, 0x5eed)?;
    if !(mismatch <= ADJOINT_TOL) {
        return Err(Error::AdjointMismatch {
            op: name.into(),
            mismatch,
        });
    }
    Ok(())
}

fn check_dims(dims: [usize; 3]) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::shape(format!("measurement dims {dims:?} must be positive")));
    }
    Ok(())
}

/// `Φ(V) = vec(V)`.
#[derive(Debug, Clone)]
pub struct IdentityOp {
    dims: [usize; 3],
}

impl IdentityOp {
    pub fn new(dims: [usize; 3]) -> Result<Self> {
        check_dims(dims)?;
        let op = Self { dims };
        enforce_adjoint(&op, "identity")?;
        Ok(op)
    }
}

impl MeasurementOp for IdentityOp {
    fn kind(&self) -> MeasurementKind {
        MeasurementKind::Identity
    }

    fn dims(&self) -> [usize; 3] {
        self.dims
    }

    fn forward_data(&self, v: &[f64]) -> MeasurementVector {
        MeasurementVector::Real(v.to_vec())
    }

    fn adjoint_data(&self, m: &MeasurementVector) -> Result<Vec<f64>> {
        let n: usize = self.dims.iter().product();
        match m {
            MeasurementVector::Real(a) if a.len() == n => Ok(a.clone()),
            _ => Err(Error::shape(format!(
                "identity adjoint expects {n} real values, got {}",
                m.len()
            ))),
        }
    }
}

/// Boolean sampling pattern on an `h × w` slice grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingMask {
    h: usize,
    w: usize,
    bits: Vec<bool>,
}

impl SamplingMask {
    /// Validates the grid and forces the DC bin on.
    pub fn new(h: usize, w: usize, mut bits: Vec<bool>) -> Result<Self> {
        if h == 0 || w == 0 || bits.len() != h * w {
            return Err(Error::shape(format!(
                "mask {h}x{w} needs {} entries, got {}",
                h * w,
                bits.len()
            )));
        }
        bits[(h / 2) * w + w / 2] = true;
        Ok(Self { h, w, bits })
    }

    pub fn full(h: usize, w: usize) -> Result<Self> {
        Self::new(h, w, vec![true; h * w])
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.w + c]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn sampling_rate(&self) -> f64 {
        self.count() as f64 / self.bits.len() as f64
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# rate {:?} rows {} cols {}\n", self.sampling_rate(), self.h, self.w);
        for r in 0..self.h {
            s.extend((0..self.w).map(|c| if self.get(r, c) { '1' } else { '0' }));
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::format(origin, format!("line {line}: {msg}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| err(1, "empty mask file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (h, w) = match fields.as_slice() {
            ["#", "rate", _, "rows", h, "cols", w] => (
                h.parse::<usize>().map_err(|e| err(1, e.to_string()))?,
                w.parse::<usize>().map_err(|e| err(1, e.to_string()))?,
            ),
            _ => {
                return Err(err(
                    1,
                    format!("expected `# rate <r> rows <h> cols <w>`, found {header:?}"),
                ))
            }
        };
        let mut bits = Vec::with_capacity(h * w);
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let line = line.trim();
            if line.len() != w {
                return Err(err(i + 2, format!("expected {w} columns, found {}", line.len())));
            }
            for ch in line.chars() {
                match ch {
                    '0' => bits.push(false),
                    '1' => bits.push(true),
                    other => return Err(err(i + 2, format!("unexpected character {other:?}"))),
                }
            }
        }
        if bits.len() != h * w {
            return Err(err(0, format!("expected {h} rows, found {}", bits.len() / w.max(1))));
        }
        Self::new(h, w, bits)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

/// Union of `num_lines` digital lines through the DC bin at angles
/// `j·π/num_lines`. Angle 0 is the DC row.
pub fn radial_mask(h: usize, w: usize, num_lines: usize) -> Result<SamplingMask> {
    if h < 4 || w < 4 {
        return Err(Error::invalid(format!("radial mask needs h, w >= 4, got {h}x{w}")));
    }
    if num_lines == 0 {
        return Err(Error::invalid("radial mask needs at least one line"));
    }
    let (cy, cx) = ((h / 2) as i64, (w / 2) as i64);
    let mut bits = vec![false; h * w];
    let mut set = |r: i64, c: i64| {
        if (0..h as i64).contains(&r) && (0..w as i64).contains(&c) {
            bits[r as usize * w + c as usize] = true;
        }
    };
    for j in 0..num_lines {
        let theta = j as f64 * std::f64::consts::PI / num_lines as f64;
        let (dy, dx) = (theta.sin(), theta.cos());
        if dx.abs() >= dy.abs() {
            let reach = w.max(h) as i64;
            for u in -reach..=reach {
                let r = cy + ((u as f64) * dy / dx).round() as i64;
                set(r, cx + u);
            }
        } else {
            let reach = w.max(h) as i64;
            for u in -reach..=reach {
                let c = cx + ((u as f64) * dx / dy).round() as i64;
                set(cy + u, c);
            }
        }
    }
    SamplingMask::new(h, w, bits)
}

/// Smallest line count whose radial mask reaches `rate`.
pub fn radial_mask_for_rate(h: usize, w: usize, rate: f64) -> Result<(SamplingMask, usize)> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::invalid(format!("sampling rate must be in (0, 1], got {rate}")));
    }
    if rate == 1.0 {
        return Ok((SamplingMask::full(h, w)?, 0));
    }
    // 4·max(h, w) lines hit every bin of the grid.
    for lines in 1..=4 * h.max(w) {
        let m = radial_mask(h, w, lines)?;
        if m.sampling_rate() >= rate {
            return Ok((m, lines));
        }
    }
    Ok((SamplingMask::full(h, w)?, 0))
}

/// Multi-slice undersampled centered 2-D Fourier transform.
#[derive(Clone)]
pub struct FourierOp {
    dims: [usize; 3],
    mask: SamplingMask,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FourierOp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FourierOp")
            .field("dims", &self.dims)
            .field("sampled", &self.mask.count())
            .finish()
    }
}

impl FourierOp {
    pub fn new(dims: [usize; 3], mask: SamplingMask) -> Result<Self> {
        check_dims(dims)?;
        if mask.shape() != (dims[0], dims[1]) {
            return Err(Error::shape(format!(
                "mask {:?} does not match slice size {}x{}",
                mask.shape(),
                dims[0],
                dims[1]
            )));
        }
        let mut planner = FftPlanner::new();
        let op = Self {
            dims,
            row_fwd: planner.plan_fft_forward(dims[1]),
            row_inv: planner.plan_fft_inverse(dims[1]),
            col_fwd: planner.plan_fft_forward(dims[0]),
            col_inv: planner.plan_fft_inverse(dims[0]),
            mask,
        };
        enforce_adjoint(&op, "fourier")?;
        Ok(op)
    }

    /// In-place unitary 2-D transform of an `h × w` row-major grid, unshifted.
    fn fft2(&self, grid: &mut [Complex64], inverse: bool) {
        let (h, w) = (self.dims[0], self.dims[1]);
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        for r in grid.chunks_exact_mut(w) {
            row.process(r);
        }
        let mut column = vec![Complex64::default(); h];
        for c in 0..w {
            for r in 0..h {
                column[r] = grid[r * w + c];
            }
            col.process(&mut column);
            for r in 0..h {
                grid[r * w + c] = column[r];
            }
        }
        let scale = 1.0 / ((h * w) as f64).sqrt();
        grid.iter_mut().for_each(|z| *z *= scale);
    }

    /// Centered unitary 2-D DFT of one slice.
    pub fn transform_slice(&self, slice: &[f64]) -> Vec<Complex64> {
        let (h, w) = (self.dims[0], self.dims[1]);
        let mut grid = vec![Complex64::default(); h * w];
        // ifftshift: grid[i] = x[(i + floor(n/2)) mod n]
        for r in 0..h {
            for c in 0..w {
                grid[r * w + c] = Complex64::new(slice[((r + h / 2) % h) * w + (c + w / 2) % w], 0.0);
            }
        }
        self.fft2(&mut grid, false);
        // fftshift: out[(i + floor(n/2)) mod n] = grid[i]
        let mut out = vec![Complex64::default(); h * w];
        for r in 0..h {
            for c in 0..w {
                out[((r + h / 2) % h) * w + (c + w / 2) % w] = grid[r * w + c];
            }
        }
        out
    }

    /// Adjoint of [`Self::transform_slice`] (complex result).
    fn adjoint_slice(&self, spectrum: &[Complex64]) -> Vec<Complex64> {
        let (h, w) = (self.dims[0], self.dims[1]);
        let mut grid = vec![Complex64::default(); h * w];
        for r in 0..h {
            for c in 0..w {
                grid[r * w + c] = spectrum[((r + h / 2) % h) * w + (c + w / 2) % w];
            }
        }
        self.fft2(&mut grid, true);
        let mut out = vec![Complex64::default(); h * w];
        for r in 0..h {
            for c in 0..w {
                out[((r + h / 2) % h) * w + (c + w / 2) % w] = grid[r * w + c];
            }
        }
        out
    }

    fn slice_of(&self, v: &[f64], k: usize) -> Vec<f64> {
        let s = self.dims[2];
        (0..self.dims[0] * self.dims[1]).map(|i| v[i * s + k]).collect()
    }
}

impl MeasurementOp for FourierOp {
    fn kind(&self) -> MeasurementKind {
        MeasurementKind::Fourier
    }

    fn dims(&self) -> [usize; 3] {
        self.dims
    }

    fn mask(&self) -> Option<&SamplingMask> {
        Some(&self.mask)
    }

    fn forward_data(&self, v: &[f64]) -> MeasurementVector {
        let per_slice: Vec<Vec<Complex64>> = (0..self.dims[2])
            .into_par_iter()
            .map(|k| {
                let spec = self.transform_slice(&self.slice_of(v, k));
                spec.into_iter()
                    .zip(self.mask.bits())
                    .filter_map(|(z, &keep)| keep.then_some(z))
                    .collect()
            })
            .collect();
        MeasurementVector::Complex(per_slice.concat())
    }

    fn adjoint_data(&self, m: &MeasurementVector) -> Result<Vec<f64>> {
        let per = self.mask.count();
        let values = match m {
            MeasurementVector::Complex(a) if a.len() == per * self.dims[2] => a,
            _ => {
                return Err(Error::shape(format!(
                    "fourier adjoint expects {} complex values, got {}",
                    per * self.dims[2],
                    m.len()
                )))
            }
        };
        let slices: Vec<Vec<Complex64>> = (0..self.dims[2])
            .into_par_iter()
            .map(|k| {
                let mut it = values[k * per..(k + 1) * per].iter();
                let filled: Vec<Complex64> = self
                    .mask
                    .bits()
                    .iter()
                    .map(|&b| if b { *it.next().unwrap() } else { Complex64::default() })
                    .collect();
                self.adjoint_slice(&filled)
            })
            .collect();
        let s = self.dims[2];
        let mut out = vec![0.0; self.dims.iter().product()];
        for (k, slice) in slices.iter().enumerate() {
            for (i, z) in slice.iter().enumerate() {
                out[i * s + k] = z.re;
            }
        }
        Ok(out)
    }
}

/// `Ψ_u(V)`: sampled centered spectra of every transversal slice.
pub fn fourier_measure(v: &Volume, mask: &SamplingMask) -> Result<MeasurementVector> {
    FourierOp::new(v.dims(), mask.clone())?.forward(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementHeader {
    pub kind: MeasurementKind,
    pub dims: [usize; 3],
    /// Path of the mask file, for Fourier measurements.
    pub mask: Option<String>,
    pub count: usize,
    pub byte_order: String,
    pub dtype: String,
}

pub fn write_measurements(
    m: &MeasurementVector,
    kind: MeasurementKind,
    dims: [usize; 3],
    mask: Option<&str>,
    path: &Path,
) -> Result<()> {
    let mut payload = Vec::with_capacity(m.len() * 16);
    let mut push = |re: f64, im: f64| {
        payload.extend_from_slice(&re.to_le_bytes());
        payload.extend_from_slice(&im.to_le_bytes());
    };
    match m {
        MeasurementVector::Real(a) => a.iter().for_each(|&x| push(x, 0.0)),
        MeasurementVector::Complex(a) => a.iter().for_each(|z| push(z.re, z.im)),
    }
    fs::write(path, payload).map_err(|e| Error::io(path, e))?;
    let header = MeasurementHeader {
        kind,
        dims,
        mask: mask.map(String::from),
        count: m.len(),
        byte_order: "LE".into(),
        dtype: "c128".into(),
    };
    let hp = header_path(path);
    fs::write(&hp, serde_json::to_string(&header).expect("header serializes") + "\n").map_err(|e| Error::io(&hp, e))
}

pub fn read_measurements(path: &Path) -> Result<(MeasurementVector, MeasurementHeader)> {
    let hp = header_path(path);
    let text = fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
    let header: MeasurementHeader =
        serde_json::from_str(&text).map_err(|e| Error::format(&hp, format!("malformed header: {e}")))?;
    if header.byte_order != "LE" || header.dtype != "c128" {
        return Err(Error::format(&hp, "expected byte_order \"LE\" and dtype \"c128\""));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != header.count * 16 {
        return Err(Error::format(
            path,
            format!(
                "size mismatch: {} values need {} bytes, payload has {}",
                header.count,
                header.count * 16,
                bytes.len()
            ),
        ));
    }
    let pairs: Vec<(f64, f64)> = bytes
        .chunks_exact(16)
        .map(|c| {
            (
                f64::from_le_bytes(c[..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        })
        .collect();
    if let Some(i) = pairs.iter().position(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(Error::format(path, format!("non-finite value at entry {i}")));
    }
    let m = match header.kind {
        MeasurementKind::Identity => MeasurementVector::Real(pairs.into_iter().map(|p| p.0).collect()),
        MeasurementKind::Fourier => {
            MeasurementVector::Complex(pairs.into_iter().map(|(a, b)| Complex64::new(a, b)).collect())
        }
    };
    Ok((m, header))
}
