//! Volumes, patch extraction, training-set assembly and the `.vol` file format.
//!
//! A volume on disk is two files: `<name>.vol` holds the voxels as raw
//! little-endian IEEE-754 `f64` in storage order (last index fastest), and
//! `<name>.vol.json` is a header:
//!
//! ```json
//! {"dims":[32,32,32],"intensity_range":[0.0,255.0],"byte_order":"LE","dtype":"f64"}
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// Default per-patch standard deviation at or below which a patch is flat.
pub const DEFAULT_FLAT_TOL: f64 = 1.0;

/// Order-3 real volume with intensity-range metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    tensor: DenseTensor,
    intensity_range: (f64, f64),
}

impl Volume {
    pub fn new(tensor: DenseTensor) -> Result<Self> {
        Self::with_range(tensor, (0.0, 255.0))
    }

    pub fn with_range(tensor: DenseTensor, intensity_range: (f64, f64)) -> Result<Self> {
        if tensor.order() != 3 {
            return Err(Error::shape(format!(
                "a volume must have order 3, got dims {:?}",
                tensor.dims()
            )));
        }
        if let Some(i) = tensor.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "voxel {:?} is {}",
                unravel(i, tensor.dims()),
                tensor.as_slice()[i]
            )));
        }
        Ok(Self {
            tensor,
            intensity_range,
        })
    }

    pub fn from_fn(dims: [usize; 3], f: impl Fn(usize, usize, usize) -> f64) -> Result<Self> {
        Self::new(DenseTensor::from_fn(dims.to_vec(), |i| f(i[0], i[1], i[2]))?)
    }

    pub fn dims(&self) -> [usize; 3] {
        let d = self.tensor.dims();
        [d[0], d[1], d[2]]
    }

    pub fn tensor(&self) -> &DenseTensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> DenseTensor {
        self.tensor
    }

    pub fn as_slice(&self) -> &[f64] {
        self.tensor.as_slice()
    }

    pub fn intensity_range(&self) -> (f64, f64) {
        self.intensity_range
    }

    pub fn len(&self) -> usize {
        self.tensor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensor.is_empty()
    }

    pub fn get(&self, r: usize, c: usize, k: usize) -> f64 {
        self.tensor.get(&[r, c, k])
    }

    /// Same geometry and range, new voxel values.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::with_range(
            DenseTensor::new(self.tensor.dims().to_vec(), data)?,
            self.intensity_range,
        )
    }
}

fn unravel(mut i: usize, dims: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; dims.len()];
    for m in (0..dims.len()).rev() {
        idx[m] = i % dims[m];
        i /= dims[m];
    }
    idx
}

/// First index of a window of length `d` centered at `c`. Even lengths put the
/// extra sample on the low side.
pub fn window_start(center: usize, d: usize) -> Option<usize> {
    center.checked_sub(d / 2)
}

/// Copies the `d1×d2×d3` block whose low corner is `start` into `out`.
pub(crate) fn copy_block(v: &DenseTensor, start: [usize; 3], dims: [usize; 3], out: &mut [f64]) {
    let vd = v.dims();
    let src = v.as_slice();
    let mut o = 0;
    for a in 0..dims[0] {
        for b in 0..dims[1] {
            let base = ((start[0] + a) * vd[1] + start[1] + b) * vd[2] + start[2];
            out[o..o + dims[2]].copy_from_slice(&src[base..base + dims[2]]);
            o += dims[2];
        }
    }
}

/// The `dims` block of `v` whose low corner is `start`.
pub fn crop(v: &Volume, start: [usize; 3], dims: [usize; 3]) -> Result<Volume> {
    let vd = v.dims();
    if (0..3).any(|m| dims[m] == 0 || start[m] + dims[m] > vd[m]) {
        return Err(Error::shape(format!(
            "crop {dims:?} at {start:?} does not fit in volume {vd:?}"
        )));
    }
    let mut out = vec![0.0; dims.iter().product()];
    copy_block(v.tensor(), start, dims, &mut out);
    Volume::with_range(DenseTensor::new(dims.to_vec(), out)?, v.intensity_range())
}

/// The patch operator Π: copies the window of size `dims` centered at `center`.
pub fn extract_patch(v: &Volume, center: [usize; 3], dims: [usize; 3]) -> Result<DenseTensor> {
    let vd = v.dims();
    let mut start = [0usize; 3];
    for m in 0..3 {
        let s = window_start(center[m], dims[m]);
        match s {
            Some(s) if dims[m] >= 1 && s + dims[m] <= vd[m] => start[m] = s,
            _ => {
                return Err(Error::shape(format!(
                    "patch {dims:?} centered at {center:?} exceeds volume {vd:?}"
                )))
            }
        }
    }
    let mut data = vec![0.0; dims.iter().product()];
    copy_block(&v.tensor, start, dims, &mut data);
    DenseTensor::new(dims.to_vec(), data)
}

/// How training patches were normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    /// Patches used as given.
    None,
    /// Mean subtracted, then scaled to unit Frobenius norm.
    MeanUnitNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMeta {
    pub source: String,
    pub count: usize,
    pub patch_dims: Vec<usize>,
    pub flat_tol: Option<f64>,
    pub normalization: Normalization,
    pub seed: Option<u64>,
}

/// A set of equally shaped training tensors plus how they were produced.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    patches: Vec<DenseTensor>,
    meta: TrainingMeta,
}

impl TrainingSet {
    /// Wraps caller-supplied tensors without normalizing them.
    pub fn from_patches(patches: Vec<DenseTensor>) -> Result<Self> {
        let first = patches
            .first()
            .ok_or_else(|| Error::invalid("a training set needs at least one patch"))?;
        let dims = first.dims().to_vec();
        if let Some(i) = patches.iter().position(|p| p.dims() != dims.as_slice()) {
            return Err(Error::shape(format!(
                "patch {i} has dims {:?}, expected {dims:?}",
                patches[i].dims()
            )));
        }
        Ok(Self {
            meta: TrainingMeta {
                source: "in-memory".into(),
                count: patches.len(),
                patch_dims: dims,
                flat_tol: None,
                normalization: Normalization::None,
                seed: None,
            },
            patches,
        })
    }

    pub fn patches(&self) -> &[DenseTensor] {
        &self.patches
    }

    pub fn meta(&self) -> &TrainingMeta {
        &self.meta
    }

    pub fn patch_dims(&self) -> &[usize] {
        &self.meta.patch_dims
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Splits off the last `n` patches, e.g. for a held-out set.
    pub fn split_off(&mut self, n: usize) -> Result<TrainingSet> {
        if n == 0 || n >= self.patches.len() {
            return Err(Error::invalid(format!(
                "cannot split {n} of {} patches",
                self.patches.len()
            )));
        }
        let tail = self.patches.split_off(self.patches.len() - n);
        self.meta.count = self.patches.len();
        let mut meta = self.meta.clone();
        meta.count = tail.len();
        Ok(TrainingSet { patches: tail, meta })
    }
}

fn patch_stats(p: &[f64]) -> (f64, f64) {
    let n = p.len() as f64;
    let mean = p.iter().sum::<f64>() / n;
    let var = p.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Samples `count` non-flat patches at uniformly random valid centers (with
/// replacement). A patch is flat when its standard deviation is `≤ flat_tol`
/// or it is constant. Accepted patches are mean-subtracted and scaled to unit
/// Frobenius norm. Gives up after `100 · count` draws.
pub fn build_training_set(
    v: &Volume,
    count: usize,
    patch_dims: [usize; 3],
    flat_tol: f64,
    seed: u64,
) -> Result<TrainingSet> {
    if count == 0 {
        return Err(Error::invalid("training set size must be at least 1"));
    }
    let vd = v.dims();
    if (0..3).any(|m| patch_dims[m] == 0 || patch_dims[m] > vd[m]) {
        return Err(Error::shape(format!(
            "patch {patch_dims:?} does not fit in volume {vd:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = patch_dims.iter().product();
    let max_draws = count.saturating_mul(100);
    let mut patches = Vec::with_capacity(count);
    let mut buf = vec![0.0; n];
    let mut draws = 0;
    while patches.len() < count && draws < max_draws {
        draws += 1;
        let start = [
            rng.random_range(0..=vd[0] - patch_dims[0]),
            rng.random_range(0..=vd[1] - patch_dims[1]),
            rng.random_range(0..=vd[2] - patch_dims[2]),
        ];
        copy_block(&v.tensor, start, patch_dims, &mut buf);
        let (mean, std) = patch_stats(&buf);
        if std <= flat_tol {
            continue;
        }
        let centered: Vec<f64> = buf.iter().map(|x| x - mean).collect();
        let norm = centered.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        patches.push(DenseTensor::new(
            patch_dims.to_vec(),
            centered.into_iter().map(|x| x / norm).collect(),
        )?);
    }
    if patches.len() < count {
        return Err(Error::TrainingSetIncomplete {
            achieved: patches.len(),
            requested: count,
            draws,
        });
    }
    Ok(TrainingSet {
        meta: TrainingMeta {
            source: format!("volume {vd:?}"),
            count,
            patch_dims: patch_dims.to_vec(),
            flat_tol: Some(flat_tol),
            normalization: Normalization::MeanUnitNorm,
            seed: Some(seed),
        },
        patches,
    })
}

/// Adds i.i.d. `N(0, σ²)` noise; no clipping.
pub fn add_awgn(v: &Volume, sigma: f64, seed: u64) -> Result<Volume> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(v.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = v.as_slice().iter().map(|&x| x + normal.sample(&mut rng)).collect();
    v.with_data(data)
}

struct Ellipsoid {
    center: [f64; 3],
    inv_axes: [f64; 3],
    cos: f64,
    sin: f64,
    intensity: f64,
}

impl Ellipsoid {
    /// Normalized squared radius; ≤ 1 inside.
    fn rho2(&self, p: [f64; 3]) -> f64 {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        let u = self.cos * d[0] + self.sin * d[1];
        let w = -self.sin * d[0] + self.cos * d[1];
        let q = [u * self.inv_axes[0], w * self.inv_axes[1], d[2] * self.inv_axes[2]];
        q.iter().map(|x| x * x).sum()
    }
}

/// Piecewise-smooth synthetic volume in `[0, 255]`: randomly placed,
/// rotated ellipsoids with distinct, gently shaded intensities over a slowly
/// varying background. Deterministic in `seed`.
pub fn synth_phantom(dims: [usize; 3], seed: u64) -> Result<Volume> {
    if dims.iter().any(|&d| d < 8) {
        return Err(Error::invalid(format!(
            "phantom dims must be at least 8 per axis, got {dims:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = 12;
    let ellipsoids: Vec<Ellipsoid> = (0..count)
        .map(|i| {
            let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let center = std::array::from_fn(|m| rng.random_range(0.2..0.8) * dims[m] as f64);
            let inv_axes = std::array::from_fn(|m| 1.0 / (rng.random_range(0.08..0.32) * dims[m] as f64));
            // Spread intensities so neighbouring structures differ.
            let band = 200.0 / count as f64;
            let intensity = 45.0 + band * i as f64 + rng.random_range(0.0..band);
            Ellipsoid {
                center,
                inv_axes,
                cos: angle.cos(),
                sin: angle.sin(),
                intensity,
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..count).collect();
    // Paint in a random order so intensity does not correlate with depth.
    for i in (1..count).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let scale = dims.map(|d| std::f64::consts::PI / (d - 1) as f64);
    Volume::from_fn(dims, |a, b, c| {
        let p = [a as f64, b as f64, c as f64];
        let mut v = 25.0 + 5.0 * ((p[0] * scale[0]).cos() + (p[1] * scale[1]).cos() + (p[2] * scale[2]).cos()) / 3.0;
        for &i in &order {
            let e = &ellipsoids[i];
            let rho2 = e.rho2(p);
            if rho2 <= 1.0 {
                v = e.intensity * (1.0 - 0.12 * rho2);
            }
        }
        v.clamp(0.0, 255.0)
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VolumeHeader {
    dims: [usize; 3],
    intensity_range: [f64; 2],
    byte_order: String,
    dtype: String,
}

/// `<path>.json`
pub fn header_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_volume(v: &Volume, path: &Path) -> Result<()> {
    let header = VolumeHeader {
        dims: v.dims(),
        intensity_range: [v.intensity_range.0, v.intensity_range.1],
        byte_order: "LE".into(),
        dtype: "f64".into(),
    };
    let mut payload = Vec::with_capacity(v.len() * 8);
    for x in v.as_slice() {
        payload.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, payload).map_err(|e| Error::io(path, e))?;
    let hp = header_path(path);
    let text = serde_json::to_string(&header).expect("header serializes");
    fs::write(&hp, text + "\n").map_err(|e| Error::io(&hp, e))
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let hp = header_path(path);
    let text = fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
    let header: VolumeHeader =
        serde_json::from_str(&text).map_err(|e| Error::format(&hp, format!("malformed header: {e}")))?;
    if header.byte_order != "LE" {
        return Err(Error::format(
            &hp,
            format!("unsupported byte_order {:?}, expected \"LE\"", header.byte_order),
        ));
    }
    if header.dtype != "f64" {
        return Err(Error::format(
            &hp,
            format!("unsupported dtype {:?}, expected \"f64\"", header.dtype),
        ));
    }
    if header.dims.contains(&0) {
        return Err(Error::format(&hp, format!("dims {:?} must be positive", header.dims)));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let n: usize = header.dims.iter().product();
    if bytes.len() != n * 8 {
        return Err(Error::format(
            path,
            format!(
                "size mismatch: dims {:?} need {} bytes, payload has {}",
                header.dims,
                n * 8,
                bytes.len()
            ),
        ));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(
            path,
            format!(
                "non-finite value {} at voxel {:?} (byte offset {})",
                data[i],
                unravel(i, &header.dims),
                i * 8
            ),
        ));
    }
    Volume::with_range(
        DenseTensor::new(header.dims.to_vec(), data)?,
        (header.intensity_range[0], header.intensity_range[1]),
    )
}

/// Sample type of a raw integer grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RawSample {
    U8,
    U16Le,
    U16Be,
}

/// Imports a headerless 8/16-bit grid stored last index fastest. With
/// `rescale`, intensities are mapped linearly so the data spans `[0, 255]`.
pub fn import_raw(path: &Path, dims: [usize; 3], sample: RawSample, rescale: bool) -> Result<Volume> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let n: usize = dims.iter().product();
    let width = if sample == RawSample::U8 { 1 } else { 2 };
    if n == 0 || bytes.len() != n * width {
        return Err(Error::format(
            path,
            format!(
                "size mismatch: dims {dims:?} need {} bytes, file has {}",
                n * width,
                bytes.len()
            ),
        ));
    }
    let mut data: Vec<f64> = match sample {
        RawSample::U8 => bytes.iter().map(|&b| b as f64).collect(),
        RawSample::U16Le => bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as f64)
            .collect(),
        RawSample::U16Be => bytes
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64)
            .collect(),
    };
    if rescale {
        let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            data.iter_mut().for_each(|v| *v = 255.0 * (*v - lo) / (hi - lo));
        }
    }
    Volume::new(DenseTensor::new(dims.to_vec(), data)?)
}
