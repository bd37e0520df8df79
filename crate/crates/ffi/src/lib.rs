//! C ABI over the `maol` library.
//!
//! Every function returns a [`MaolStatus`]. On failure a human-readable
//! message is available from [`maol_last_error`] on the same thread until the
//! next call into the library. Objects are handed out as opaque pointers
//! ([`MaolVolume`], [`MaolOperator`]) that the caller releases with the
//! matching `*_free` function. Panics never cross the boundary; they are
//! reported as [`MaolStatus::Panic`].
//!
//! Volumes are stored last index fastest: voxel `(a, b, c)` of a
//! `d0 × d1 × d2` volume lives at `(a·d1 + b)·d2 + c`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use maol::learn::{learn_operators, SolverConfig};
use maol::objective::LearningParams;
use maol::opfile::{OperatorFile, OperatorMeta};
use maol::reconstruct::{self, FourierOp, IdentityOp, MeasurementOp, Psnr, ReconConfig};
use maol::volume::{self, Volume};
use maol::{DenseTensor, Error};

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaolStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Format = 4,
    Io = 5,
    BarrierViolation = 6,
    DegenerateStep = 7,
    TrainingSetIncomplete = 8,
    NonFinite = 9,
    AdjointMismatch = 10,
    Panic = 11,
}

/// Opaque order-3 volume.
pub struct MaolVolume(Volume);

/// Opaque learned separable operator together with its provenance.
pub struct MaolOperator(OperatorFile);

/// Settings for [`maol_learn`]; obtain defaults from
/// [`maol_learn_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MaolLearnOptions {
    /// Training patch size; also the column count of each factor.
    pub patch: [usize; 3],
    /// Row count of each factor.
    pub rows: [usize; 3],
    pub train_count: usize,
    pub nu: f64,
    pub kappa: f64,
    pub mu: f64,
    pub flat_tol: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub seed: u64,
}

/// Settings for [`maol_denoise`] and [`maol_cs`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MaolReconOptions {
    pub lambda: f64,
    /// Sparsity parameter; zero or negative uses the operator's learning ν.
    pub nu: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub stride: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Fail(MaolStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Shape(_) => MaolStatus::Shape,
            Error::InvalidArgument(_) => MaolStatus::InvalidArgument,
            Error::BarrierViolation { .. } => MaolStatus::BarrierViolation,
            Error::DegenerateStep { .. } => MaolStatus::DegenerateStep,
            Error::TrainingSetIncomplete { .. } => MaolStatus::TrainingSetIncomplete,
            Error::NonFinite(_) => MaolStatus::NonFinite,
            Error::AdjointMismatch { .. } => MaolStatus::AdjointMismatch,
            Error::Format { .. } => MaolStatus::Format,
            Error::Io { .. } => MaolStatus::Io,
        };
        Fail(status, e.to_string())
    }
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MaolStatus {
    set_last_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MaolStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            MaolStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail(MaolStatus::NullPointer, format!("{name} is NULL")))
}

fn check_out<T>(p: *mut T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(Fail(MaolStatus::NullPointer, format!("{name} is NULL")));
    }
    Ok(())
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail(MaolStatus::NullPointer, format!("{name} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Fail(MaolStatus::InvalidArgument, format!("{name} is not valid UTF-8")))
}

unsafe fn hand_out<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Message for the most recent failure on this thread, or an empty string.
/// The pointer stays valid until the next library call on this thread.
#[no_mangle]
pub extern "C" fn maol_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn maol_status_name(status: MaolStatus) -> *const c_char {
    let s: &'static CStr = match status {
        MaolStatus::Ok => c"ok",
        MaolStatus::NullPointer => c"null pointer",
        MaolStatus::InvalidArgument => c"invalid argument",
        MaolStatus::Shape => c"shape mismatch",
        MaolStatus::Format => c"malformed file",
        MaolStatus::Io => c"i/o error",
        MaolStatus::BarrierViolation => c"barrier violation",
        MaolStatus::DegenerateStep => c"degenerate step",
        MaolStatus::TrainingSetIncomplete => c"training set incomplete",
        MaolStatus::NonFinite => c"non-finite value",
        MaolStatus::AdjointMismatch => c"adjoint mismatch",
        MaolStatus::Panic => c"internal panic",
    };
    s.as_ptr()
}

/// Copies `d0·d1·d2` values from `data` into a new volume.
#[no_mangle]
pub unsafe extern "C" fn maol_volume_new(
    d0: usize,
    d1: usize,
    d2: usize,
    data: *const f64,
    out: *mut *mut MaolVolume,
) -> MaolStatus {
    guard(|| {
        check_out(out, "out")?;
        if data.is_null() {
            return Err(Fail(MaolStatus::NullPointer, "data is NULL".into()));
        }
        let n = d0
            .checked_mul(d1)
            .and_then(|x| x.checked_mul(d2))
            .filter(|&n| n > 0)
            .ok_or_else(|| Fail(MaolStatus::Shape, format!("invalid dims {d0}x{d1}x{d2}")))?;
        let values = std::slice::from_raw_parts(data, n).to_vec();
        let v = Volume::new(DenseTensor::new(vec![d0, d1, d2], values)?)?;
        hand_out(out, MaolVolume(v));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn maol_volume_read(path: *const c_char, out: *mut *mut MaolVolume) -> MaolStatus {
    guard(|| {
        check_out(out, "out")?;
        let v = volume::read_volume(&path_arg(path, "path")?)?;
        hand_out(out, MaolVolume(v));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn maol_volume_write(v: *const MaolVolume, path: *const c_char) -> MaolStatus {
    guard(|| {
        let v = borrow(v, "volume")?;
        volume::write_volume(&v.0, &path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Releases a volume; NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn maol_volume_free(v: *mut MaolVolume) {
    if !v.is_null() {
        drop(Box::from_raw(v));
    }
}

/// Writes the three dimensions into `dims`.
#[no_mangle]
pub unsafe extern "C" fn maol_volume_dims(v: *const MaolVolume, dims: *mut usize) -> MaolStatus {
    guard(|| {
        let v = borrow(v, "volume")?;
        check_out(dims, "dims")?;
        let d = v.0.dims();
        ptr::copy_nonoverlapping(d.as_ptr(), dims, 3);
        Ok(())
    })
}

/// Borrows the voxel data. The pointer stays valid until the volume is freed.
#[no_mangle]
pub unsafe extern "C" fn maol_volume_data(v: *const MaolVolume, data: *mut *const f64, len: *mut usize) -> MaolStatus {
    guard(|| {
        let v = borrow(v, "volume")?;
        check_out(data, "data")?;
        check_out(len, "len")?;
        *data = v.0.as_slice().as_ptr();
        *len = v.0.len();
        Ok(())
    })
}

/// Synthetic piecewise-smooth phantom in `[0, 255]`.
#[no_mangle]
pub unsafe extern "C" fn maol_phantom(
    d0: usize,
    d1: usize,
    d2: usize,
    seed: u64,
    out: *mut *mut MaolVolume,
) -> MaolStatus {
    guard(|| {
        check_out(out, "out")?;
        let v = volume::synth_phantom([d0, d1, d2], seed)?;
        hand_out(out, MaolVolume(v));
        Ok(())
    })
}

/// Copy of `v` with i.i.d. Gaussian noise of standard deviation `sigma`.
#[no_mangle]
pub unsafe extern "C" fn maol_awgn(
    v: *const MaolVolume,
    sigma: f64,
    seed: u64,
    out: *mut *mut MaolVolume,
) -> MaolStatus {
    guard(|| {
        let v = borrow(v, "volume")?;
        check_out(out, "out")?;
        let noisy = volume::add_awgn(&v.0, sigma, seed)?;
        hand_out(out, MaolVolume(noisy));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn maol_operator_read(path: *const c_char, out: *mut *mut MaolOperator) -> MaolStatus {
    guard(|| {
        check_out(out, "out")?;
        let f = OperatorFile::load(&path_arg(path, "path")?)?;
        hand_out(out, MaolOperator(f));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn maol_operator_write(op: *const MaolOperator, path: *const c_char) -> MaolStatus {
    guard(|| {
        let op = borrow(op, "operator")?;
        op.0.save(&path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Releases an operator; NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn maol_operator_free(op: *mut MaolOperator) {
    if !op.is_null() {
        drop(Box::from_raw(op));
    }
}

/// Number of factors.
#[no_mangle]
pub unsafe extern "C" fn maol_operator_order(op: *const MaolOperator, order: *mut usize) -> MaolStatus {
    guard(|| {
        let op = borrow(op, "operator")?;
        check_out(order, "order")?;
        *order = op.0.point.order();
        Ok(())
    })
}

/// Shape `rows × cols` of factor `mode` (0-based).
#[no_mangle]
pub unsafe extern "C" fn maol_operator_shape(
    op: *const MaolOperator,
    mode: usize,
    rows: *mut usize,
    cols: *mut usize,
) -> MaolStatus {
    guard(|| {
        let op = borrow(op, "operator")?;
        check_out(rows, "rows")?;
        check_out(cols, "cols")?;
        let shapes = op.0.point.shapes();
        let (k, n) = *shapes.get(mode).ok_or_else(|| {
            Fail(
                MaolStatus::InvalidArgument,
                format!("mode {mode} out of range for {} factors", shapes.len()),
            )
        })?;
        *rows = k;
        *cols = n;
        Ok(())
    })
}

/// Defaults: 5×5×5 patches, 6×5 factors, T = 20000, ν = 1000,
/// κ = 500, μ = 0.5.
#[no_mangle]
pub extern "C" fn maol_learn_options_default() -> MaolLearnOptions {
    let p = LearningParams::default();
    let s = SolverConfig::default();
    MaolLearnOptions {
        patch: [5, 5, 5],
        rows: [6, 6, 6],
        train_count: 20_000,
        nu: p.nu,
        kappa: p.kappa,
        mu: p.mu,
        flat_tol: volume::DEFAULT_FLAT_TOL,
        max_iters: s.max_iters,
        grad_tol: s.grad_tol,
        seed: 0,
    }
}

/// Defaults for reconstruction with the given λ.
#[no_mangle]
pub extern "C" fn maol_recon_options_default(lambda: f64) -> MaolReconOptions {
    let d = ReconConfig::default();
    MaolReconOptions {
        lambda,
        nu: 0.0,
        max_iters: d.max_iters,
        grad_tol: d.grad_tol,
        stride: d.stride,
    }
}

/// Draws a training set from `train` and learns one factor per mode.
#[no_mangle]
pub unsafe extern "C" fn maol_learn(
    train: *const MaolVolume,
    opts: *const MaolLearnOptions,
    out: *mut *mut MaolOperator,
) -> MaolStatus {
    guard(|| {
        let v = borrow(train, "train")?;
        let o = *borrow(opts, "opts")?;
        check_out(out, "out")?;
        let params = LearningParams::new(o.nu, o.kappa, o.mu)?;
        let cfg = SolverConfig {
            max_iters: o.max_iters,
            grad_tol: o.grad_tol,
            seed: o.seed,
            ..SolverConfig::default()
        };
        let set = volume::build_training_set(&v.0, o.train_count, o.patch, o.flat_tol, o.seed)?;
        let shapes: Vec<(usize, usize)> = o.rows.iter().zip(&o.patch).map(|(&k, &n)| (k, n)).collect();
        let (point, report) = learn_operators(&set, &shapes, &params, &cfg)?;
        let meta = OperatorMeta {
            params: Some(params),
            patch_dims: Some(o.patch.to_vec()),
            train_count: Some(o.train_count),
            seed: Some(o.seed),
            flat_tol: Some(o.flat_tol),
            iterations: Some(report.iterations),
            termination: Some(report.termination.to_string()),
        };
        hand_out(out, MaolOperator(OperatorFile { point, meta }));
        Ok(())
    })
}

fn recon_config(op: &OperatorFile, o: &MaolReconOptions) -> Result<ReconConfig, Fail> {
    let d = op.point.input_dims();
    if d.len() != 3 {
        return Err(Fail(
            MaolStatus::Shape,
            format!("reconstruction needs 3 factors, operator has {}", d.len()),
        ));
    }
    let nu = if o.nu > 0.0 {
        o.nu
    } else {
        op.meta.params.map_or(LearningParams::default().nu, |p| p.nu)
    };
    let cfg = ReconConfig {
        lambda: o.lambda,
        nu,
        max_iters: o.max_iters,
        grad_tol: o.grad_tol,
        stride: o.stride,
        patch_dims: [d[0], d[1], d[2]],
        ..ReconConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Denoises `noisy` (identity measurements) with the learned prior.
#[no_mangle]
pub unsafe extern "C" fn maol_denoise(
    noisy: *const MaolVolume,
    op: *const MaolOperator,
    opts: *const MaolReconOptions,
    out: *mut *mut MaolVolume,
) -> MaolStatus {
    guard(|| {
        let v = borrow(noisy, "noisy")?;
        let op = borrow(op, "operator")?;
        let o = borrow(opts, "opts")?;
        check_out(out, "out")?;
        let cfg = recon_config(&op.0, o)?;
        let phi = IdentityOp::new(v.0.dims())?;
        let y = phi.forward(&v.0)?;
        let (result, _) = reconstruct::reconstruct(&y, &phi, &op.0.point, &cfg)?;
        hand_out(out, MaolVolume(result));
        Ok(())
    })
}

/// Simulates radially undersampled Fourier measurements of `clean` at
/// `rate` and reconstructs them. `zero_filled` and `achieved_rate` may be
/// NULL.
#[no_mangle]
pub unsafe extern "C" fn maol_cs(
    clean: *const MaolVolume,
    op: *const MaolOperator,
    rate: f64,
    opts: *const MaolReconOptions,
    out: *mut *mut MaolVolume,
    zero_filled: *mut *mut MaolVolume,
    achieved_rate: *mut f64,
) -> MaolStatus {
    guard(|| {
        let v = borrow(clean, "clean")?;
        let op = borrow(op, "operator")?;
        let o = borrow(opts, "opts")?;
        check_out(out, "out")?;
        let cfg = recon_config(&op.0, o)?;
        let [h, w, s] = v.0.dims();
        let (mask, _) = reconstruct::radial_mask_for_rate(h, w, rate)?;
        let sampled = mask.sampling_rate();
        let phi = FourierOp::new([h, w, s], mask)?;
        let y = phi.forward(&v.0)?;
        let (result, _) = reconstruct::reconstruct(&y, &phi, &op.0.point, &cfg)?;
        if !zero_filled.is_null() {
            hand_out(zero_filled, MaolVolume(reconstruct::zero_filled(&y, &phi)?));
        }
        if !achieved_rate.is_null() {
            *achieved_rate = sampled;
        }
        hand_out(out, MaolVolume(result));
        Ok(())
    })
}

/// PSNR in dB with peak 255; identical volumes give `+inf`.
#[no_mangle]
pub unsafe extern "C" fn maol_psnr(reference: *const MaolVolume, test: *const MaolVolume, out: *mut f64) -> MaolStatus {
    guard(|| {
        let r = borrow(reference, "reference")?;
        let t = borrow(test, "test")?;
        check_out(out, "out")?;
        *out = match reconstruct::psnr(&r.0, &t.0)? {
            Psnr::Db(v) => v,
            Psnr::Identical => f64::INFINITY,
        };
        Ok(())
    })
}

/// Mean SSIM over transversal slices (slices must be at least 11×11).
#[no_mangle]
pub unsafe extern "C" fn maol_mssim(
    reference: *const MaolVolume,
    test: *const MaolVolume,
    out: *mut f64,
) -> MaolStatus {
    guard(|| {
        let r = borrow(reference, "reference")?;
        let t = borrow(test, "test")?;
        check_out(out, "out")?;
        *out = reconstruct::mssim(&r.0, &t.0)?;
        Ok(())
    })
}
