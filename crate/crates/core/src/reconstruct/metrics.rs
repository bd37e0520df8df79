//! Image-quality metrics on 8-bit-range volumes.

use std::fmt;

use crate::error::{Error, Result};
use crate::volume::Volume;

/// Peak intensity used by both metrics.
pub const PEAK: f64 = 255.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Peak signal-to-noise ratio. Identical volumes have no finite PSNR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Db(f64),
    Identical,
}

impl Psnr {
    /// Decibel value, with `Identical` mapped to `+∞`.
    pub fn db(self) -> f64 {
        match self {
            Psnr::Db(v) => v,
            Psnr::Identical => f64::INFINITY,
        }
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Db(v) => write!(f, "{v:.4}"),
            Psnr::Identical => f.write_str("inf"),
        }
    }
}

fn same_dims(a: &Volume, b: &Volume) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!(
            "reference {:?} and test {:?} differ in size",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// `10 log10(PEAK² / MSE)`.
pub fn psnr(reference: &Volume, test: &Volume) -> Result<Psnr> {
    same_dims(reference, test)?;
    let sse: f64 = reference
        .as_slice()
        .iter()
        .zip(test.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    if sse == 0.0 {
        return Ok(Psnr::Identical);
    }
    let mse = sse / reference.len() as f64;
    Ok(Psnr::Db(10.0 * (PEAK * PEAK / mse).log10()))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - c;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Valid-mode separable Gaussian filtering of an `h × w` row-major image.
fn filter_valid(img: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..SSIM_WINDOW).map(|j| k[j] * img[r * w + c + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..SSIM_WINDOW).map(|j| k[j] * rows[(r + j) * ow + c]).sum();
        }
    }
    out
}

fn slice_ssim(x: &[f64], y: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> f64 {
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let xx: Vec<f64> = x.iter().map(|a| a * a).collect();
    let yy: Vec<f64> = y.iter().map(|a| a * a).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let (mx, my) = (filter_valid(x, h, w, k), filter_valid(y, h, w, k));
    let (exx, eyy, exy) = (
        filter_valid(&xx, h, w, k),
        filter_valid(&yy, h, w, k),
        filter_valid(&xy, h, w, k),
    );
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = exx[i] - ux * ux;
            let vy = eyy[i] - uy * uy;
            let cxy = exy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    total / n as f64
}

/// Mean structural similarity: 11×11 Gaussian windows (σ = 1.5) over each
/// transversal slice, valid positions only, averaged per slice and then over
/// slices.
pub fn mssim(reference: &Volume, test: &Volume) -> Result<f64> {
    same_dims(reference, test)?;
    let [h, w, s] = reference.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "MSSIM needs slices of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let k = gaussian_kernel();
    let slice = |v: &Volume, z: usize| -> Vec<f64> {
        let d = v.as_slice();
        (0..h * w).map(|i| d[i * s + z]).collect()
    };
    let sum: f64 = (0..s)
        .map(|z| slice_ssim(&slice(reference, z), &slice(test, z), h, w, &k))
        .sum();
    Ok(sum / s as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{add_awgn, synth_phantom};

    #[test]
    fn psnr_closed_form() {
        let a = Volume::from_fn([4, 4, 4], |_, _, _| 100.0).unwrap();
        let b = Volume::from_fn([4, 4, 4], |_, _, _| 110.0).unwrap();
        let expected = 10.0 * (255.0f64 * 255.0 / 100.0).log10();
        assert!((psnr(&a, &b).unwrap().db() - expected).abs() < 1e-12);
        assert_eq!(psnr(&a, &a).unwrap(), Psnr::Identical);
    }

    #[test]
    fn mssim_of_identical_is_one() {
        let v = synth_phantom([24, 24, 8], 1).unwrap();
        assert_eq!(mssim(&v, &v).unwrap(), 1.0);
    }

    #[test]
    fn mssim_against_zero_is_small() {
        let v = synth_phantom([24, 24, 8], 1).unwrap();
        let z = Volume::from_fn([24, 24, 8], |_, _, _| 0.0).unwrap();
        assert!(mssim(&v, &z).unwrap() < 0.2);
    }

    #[test]
    fn metrics_decrease_with_noise() {
        let v = synth_phantom([24, 24, 8], 2).unwrap();
        let a = add_awgn(&v, 5.0, 1).unwrap();
        let b = add_awgn(&v, 20.0, 1).unwrap();
        assert!(psnr(&v, &a).unwrap().db() > psnr(&v, &b).unwrap().db());
        assert!(mssim(&v, &a).unwrap() > mssim(&v, &b).unwrap());
    }

    #[test]
    fn kernel_sums_to_one() {
        assert!((gaussian_kernel().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn small_slices_rejected() {
        let v = Volume::from_fn([8, 16, 2], |_, _, _| 1.0).unwrap();
        assert!(mssim(&v, &v).is_err());
    }
}
