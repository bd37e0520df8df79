use std::io::Write as _;
use std::path::{Path, PathBuf};

use maol::learn::{learn_operators, SolverConfig};
use maol::manifold::ProductPoint;
use maol::objective::LearningParams;
use maol::opfile::{OperatorFile, OperatorMeta};
use maol::reconstruct::{
    mssim, psnr, radial_mask_for_rate, reconstruct, write_measurements, zero_filled, FourierOp, IdentityOp,
    MeasurementKind, MeasurementOp, Psnr, ReconConfig, SamplingMask,
};
use maol::volume::{
    add_awgn, build_training_set, crop, import_raw, read_volume, synth_phantom, write_volume, RawSample, Volume,
    DEFAULT_FLAT_TOL,
};

use super::config::RunConfig;
use super::{CsArgs, DenoiseArgs, EvalArgs, Failure, GenArgs, ImportArgs, LearnArgs, ReconFlags, SampleArg};

const MSSIM_MIN_SLICE: usize = 11;

fn invalid(e: maol::Error) -> Failure {
    Failure::validation(e.to_string())
}

fn failed(e: maol::Error) -> Failure {
    Failure::runtime(e.to_string())
}

fn require<T>(value: Option<T>, flag: &str) -> Result<T, Failure> {
    value.ok_or_else(|| Failure::validation(format!("missing required option --{flag}")))
}

/// The output's directory must exist and the path must not be a directory.
fn check_output(path: &Path) -> Result<(), Failure> {
    if path == Path::new("-") {
        return Ok(());
    }
    if path.is_dir() {
        return Err(Failure::validation(format!("output {} is a directory", path.display())));
    }
    let parent = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    if !parent.is_dir() {
        return Err(Failure::validation(format!(
            "output directory {} does not exist",
            parent.display()
        )));
    }
    Ok(())
}

fn check_outputs<'a>(paths: impl IntoIterator<Item = &'a PathBuf>) -> Result<(), Failure> {
    paths.into_iter().try_for_each(|p| check_output(p))
}

fn load_volume(path: &Path) -> Result<Volume, Failure> {
    read_volume(path).map_err(invalid)
}

struct MetricRow {
    label: String,
    psnr: Psnr,
    mssim: Option<f64>,
}

fn metric_row(label: &str, reference: &Volume, test: &Volume) -> Result<MetricRow, Failure> {
    let [h, w, _] = reference.dims();
    let mssim = if h >= MSSIM_MIN_SLICE && w >= MSSIM_MIN_SLICE {
        Some(mssim(reference, test).map_err(failed)?)
    } else {
        None
    };
    Ok(MetricRow {
        label: label.to_string(),
        psnr: psnr(reference, test).map_err(failed)?,
        mssim,
    })
}

fn csv_text(command: &str, rows: &[MetricRow]) -> String {
    let mut s = String::from("command,label,psnr_db,mssim\n");
    for r in rows {
        let p = match r.psnr {
            Psnr::Db(v) => format!("{v:?}"),
            Psnr::Identical => "inf".into(),
        };
        let m = r.mssim.map_or_else(|| "nan".into(), |v| format!("{v:?}"));
        s.push_str(&format!("{command},{},{p},{m}\n", r.label));
    }
    s
}

/// Prints the human-readable table and writes the CSV rows if requested.
fn emit_metrics(command: &str, rows: &[MetricRow], csv: Option<&Path>) -> Result<(), Failure> {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{:<16} {:>12} {:>10}", "", "PSNR [dB]", "MSSIM");
    for r in rows {
        let m = r.mssim.map_or_else(|| "n/a".into(), |v| format!("{v:.6}"));
        let _ = writeln!(out, "{:<16} {:>12} {:>10}", r.label, r.psnr.to_string(), m);
    }
    let text = csv_text(command, rows);
    match csv {
        Some(p) if p == Path::new("-") => {
            let _ = write!(out, "{text}");
        }
        Some(p) => {
            std::fs::write(p, text).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", p.display())))?
        }
        None => {}
    }
    Ok(())
}

pub fn gen(a: GenArgs, cfg: &RunConfig) -> Result<(), Failure> {
    let dims = a.dims.or(cfg.dims).unwrap_or([32, 32, 32]);
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let out = require(a.out.or(cfg.out.clone()), "out")?;
    check_output(&out)?;
    if dims.iter().any(|&d| d < 8) {
        return Err(Failure::validation(format!(
            "phantom dims must be at least 8 per axis, got {dims:?}"
        )));
    }
    let v = synth_phantom(dims, seed).map_err(failed)?;
    write_volume(&v, &out).map_err(failed)?;
    eprintln!("wrote {:?} phantom to {}", dims, out.display());
    Ok(())
}

pub fn learn(a: LearnArgs, cfg: &RunConfig) -> Result<(), Failure> {
    let train_vol = require(a.train_vol.or(cfg.train_vol.clone()), "train-vol")?;
    let out = require(a.out.or(cfg.out.clone()), "out")?;
    let log = a.log.or(cfg.log.clone()).unwrap_or_else(|| {
        let mut s = out.clone().into_os_string();
        s.push(".log");
        s.into()
    });
    let patch = a.patch.or(cfg.patch).unwrap_or([5, 5, 5]);
    let shapes = a
        .shape
        .map(|s| s.0)
        .or(cfg.shape.clone())
        .unwrap_or_else(|| vec![[6, 5]; 3]);
    let count = a.train_count.or(cfg.train_count).unwrap_or(20_000);
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let flat_tol = a.flat_tol.or(cfg.flat_tol).unwrap_or(DEFAULT_FLAT_TOL);
    let defaults = LearningParams::default();
    let params = LearningParams::new(
        a.nu.or(cfg.nu).unwrap_or(defaults.nu),
        a.kappa.or(cfg.kappa).unwrap_or(defaults.kappa),
        a.mu.or(cfg.mu).unwrap_or(defaults.mu),
    )
    .map_err(invalid)?;
    let base = SolverConfig::default();
    let solver = SolverConfig {
        max_iters: a.max_iters.or(cfg.max_iters).unwrap_or(base.max_iters),
        grad_tol: a.grad_tol.or(cfg.grad_tol).unwrap_or(base.grad_tol),
        ls_history_decay: cfg.ls_history_decay.unwrap_or(base.ls_history_decay),
        ls_sufficient_decrease: cfg.ls_sufficient_decrease.unwrap_or(base.ls_sufficient_decrease),
        ls_backtrack: cfg.ls_backtrack.unwrap_or(base.ls_backtrack),
        ls_max_trials: cfg.ls_max_trials.unwrap_or(base.ls_max_trials),
        seed,
        ..base
    };
    solver.validate().map_err(invalid)?;
    if shapes.len() != 3 {
        return Err(Failure::validation(format!(
            "expected 3 factor shapes, got {}",
            shapes.len()
        )));
    }
    for (m, (&[k, n], &d)) in shapes.iter().zip(&patch).enumerate() {
        if n != d {
            return Err(Failure::validation(format!(
                "factor {} has {n} columns but the patch is {d} long along mode {}",
                m + 1,
                m + 1
            )));
        }
        if k < n {
            return Err(Failure::validation(format!(
                "factor {} shape {k}x{n} must have at least as many rows as columns",
                m + 1
            )));
        }
    }
    if count == 0 {
        return Err(Failure::validation("--T must be at least 1"));
    }
    if !(flat_tol.is_finite() && flat_tol >= 0.0) {
        return Err(Failure::validation(format!(
            "--flat-tol must be finite and >= 0, got {flat_tol}"
        )));
    }
    check_outputs([&out, &log])?;
    let volume = load_volume(&train_vol)?;
    let vd = volume.dims();
    if patch.iter().zip(&vd).any(|(p, v)| p > v) {
        return Err(Failure::validation(format!(
            "patch {patch:?} does not fit in volume {vd:?}"
        )));
    }

    let train = build_training_set(&volume, count, patch, flat_tol, seed).map_err(failed)?;
    let shape_pairs: Vec<(usize, usize)> = shapes.iter().map(|&[k, n]| (k, n)).collect();
    let (point, report) = learn_operators(&train, &shape_pairs, &params, &solver).map_err(failed)?;
    let file = OperatorFile {
        point,
        meta: OperatorMeta {
            params: Some(params),
            patch_dims: Some(patch.to_vec()),
            train_count: Some(count),
            seed: Some(seed),
            flat_tol: Some(flat_tol),
            iterations: Some(report.iterations),
            termination: Some(report.termination.to_string()),
        },
    };
    file.save(&out).map_err(failed)?;
    report.save_log(&log).map_err(failed)?;
    let first = report.cost_trace[0];
    let last = *report.cost_trace.last().expect("trace is never empty");
    println!(
        "cost {first:.6e} -> {last:.6e} after {} iterations ({})",
        report.iterations, report.termination
    );
    eprintln!("wrote {} and {}", out.display(), log.display());
    Ok(())
}

/// Operator plus the reconstruction settings shared by `denoise` and `cs`.
fn recon_setup(
    flags: &ReconFlags,
    cfg: &RunConfig,
    default_lambda: f64,
) -> Result<(ProductPoint, ReconConfig), Failure> {
    let op_path = require(flags.op.clone().or(cfg.op.clone()), "op")?;
    let file = OperatorFile::load(&op_path).map_err(invalid)?;
    if file.point.order() != 3 {
        return Err(Failure::validation(format!(
            "operator {} has {} factors, reconstruction needs 3",
            op_path.display(),
            file.point.order()
        )));
    }
    let d = file.point.input_dims();
    let learned_nu = file.meta.params.map_or(LearningParams::default().nu, |p| p.nu);
    let base = ReconConfig::default();
    let rc = ReconConfig {
        lambda: flags.lambda.or(cfg.lambda).unwrap_or(default_lambda),
        nu: flags.recon_nu.or(cfg.recon_nu).unwrap_or(learned_nu),
        max_iters: flags.recon_max_iters.or(cfg.recon_max_iters).unwrap_or(base.max_iters),
        grad_tol: flags.recon_grad_tol.or(cfg.recon_grad_tol).unwrap_or(base.grad_tol),
        stride: flags.stride.or(cfg.stride).unwrap_or(base.stride),
        patch_dims: [d[0], d[1], d[2]],
        ..base
    };
    rc.validate().map_err(invalid)?;
    Ok((file.point, rc))
}

fn check_fits(rc: &ReconConfig, dims: [usize; 3]) -> Result<(), Failure> {
    if rc.patch_dims.iter().zip(&dims).any(|(p, v)| p > v) {
        return Err(Failure::validation(format!(
            "operator patch {:?} does not fit in volume {dims:?}",
            rc.patch_dims
        )));
    }
    Ok(())
}

fn same_dims(a: &Volume, b: &Volume, what: &str) -> Result<(), Failure> {
    if a.dims() != b.dims() {
        return Err(Failure::validation(format!(
            "{what} has dims {:?}, expected {:?}",
            b.dims(),
            a.dims()
        )));
    }
    Ok(())
}

pub fn denoise(a: DenoiseArgs, cfg: &RunConfig) -> Result<(), Failure> {
    let input = require(a.input.or(cfg.input.clone()), "in")?;
    let out = require(a.out.or(cfg.out.clone()), "out")?;
    let sigma = a.sigma.or(cfg.sigma).unwrap_or(0.0);
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Failure::validation(format!(
            "--sigma must be finite and >= 0, got {sigma}"
        )));
    }
    let noise_seed = a.noise_seed.or(cfg.noise_seed).unwrap_or(0);
    let reference = a.reference.or(cfg.reference.clone());
    let csv = a.recon.csv.clone().or(cfg.csv.clone());
    let (point, rc) = recon_setup(&a.recon, cfg, 200.0 * sigma)?;
    check_outputs(std::iter::once(&out).chain(&csv))?;
    let volume = load_volume(&input)?;
    check_fits(&rc, volume.dims())?;
    let reference = reference.map(|p| load_volume(&p)).transpose()?;
    if let Some(r) = &reference {
        same_dims(&volume, r, "reference")?;
    }

    let noisy = if a.noisy_input || sigma == 0.0 {
        volume
    } else {
        add_awgn(&volume, sigma, noise_seed).map_err(failed)?
    };
    let op = IdentityOp::new(noisy.dims()).map_err(failed)?;
    let y = op.forward(&noisy).map_err(failed)?;
    let (result, report) = reconstruct(&y, &op, &point, &rc).map_err(failed)?;
    write_volume(&result, &out).map_err(failed)?;
    eprintln!(
        "lambda {} nu {}: {} iterations ({}), objective {:.6e} -> {:.6e}",
        rc.lambda,
        rc.nu,
        report.iterations,
        report.termination,
        report.objective_trace[0],
        report.objective_trace.last().expect("trace is never empty")
    );
    if let Some(r) = &reference {
        let rows = [metric_row("noisy", r, &noisy)?, metric_row("denoised", r, &result)?];
        emit_metrics("denoise", &rows, csv.as_deref())?;
    }
    Ok(())
}

pub fn cs(a: CsArgs, cfg: &RunConfig) -> Result<(), Failure> {
    let input = require(a.input.or(cfg.input.clone()), "in")?;
    let out = require(a.out.or(cfg.out.clone()), "out")?;
    let mask_in = a.mask.or(cfg.mask.clone());
    let rate = a.rate.or(cfg.rate).unwrap_or(0.2);
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Failure::validation(format!("--rate must lie in (0, 1], got {rate}")));
    }
    let reference = a.reference.or(cfg.reference.clone());
    let csv = a.recon.csv.clone().or(cfg.csv.clone());
    let (point, rc) = recon_setup(&a.recon, cfg, 1500.0)?;
    check_outputs(
        std::iter::once(&out)
            .chain(&csv)
            .chain(&a.mask_out)
            .chain(&a.zero_filled_out)
            .chain(&a.meas_out),
    )?;
    let volume = load_volume(&input)?;
    let [h, w, s] = volume.dims();
    check_fits(&rc, volume.dims())?;
    let reference = match reference {
        Some(p) => load_volume(&p)?,
        None => volume.clone(),
    };
    same_dims(&volume, &reference, "reference")?;
    let (mask, lines) = match &mask_in {
        Some(p) => (SamplingMask::load(p).map_err(invalid)?, None),
        None => {
            let (m, l) = radial_mask_for_rate(h, w, rate).map_err(invalid)?;
            (m, Some(l))
        }
    };
    if mask.shape() != (h, w) {
        return Err(Failure::validation(format!(
            "mask is {:?} but slices are {h}x{w}",
            mask.shape()
        )));
    }

    let op = FourierOp::new([h, w, s], mask.clone()).map_err(failed)?;
    let y = op.forward(&volume).map_err(failed)?;
    let zf = zero_filled(&y, &op).map_err(failed)?;
    let (result, report) = reconstruct(&y, &op, &point, &rc).map_err(failed)?;
    write_volume(&result, &out).map_err(failed)?;
    if let Some(p) = &a.mask_out {
        mask.save(p).map_err(failed)?;
    }
    if let Some(p) = &a.zero_filled_out {
        write_volume(&zf, p).map_err(failed)?;
    }
    if let Some(p) = &a.meas_out {
        let mask_ref = a
            .mask_out
            .as_ref()
            .or(mask_in.as_ref())
            .map(|m| m.display().to_string());
        write_measurements(&y, MeasurementKind::Fourier, [h, w, s], mask_ref.as_deref(), p).map_err(failed)?;
    }
    match lines {
        Some(l) => eprintln!("radial mask: {l} lines, sampling rate {:.4}", mask.sampling_rate()),
        None => eprintln!("mask: sampling rate {:.4}", mask.sampling_rate()),
    }
    eprintln!(
        "lambda {} nu {}: {} iterations ({}), objective {:.6e} -> {:.6e}",
        rc.lambda,
        rc.nu,
        report.iterations,
        report.termination,
        report.objective_trace[0],
        report.objective_trace.last().expect("trace is never empty")
    );
    let rows = [
        metric_row("zero-filled", &reference, &zf)?,
        metric_row("reconstruction", &reference, &result)?,
    ];
    emit_metrics("cs", &rows, csv.as_deref())
}

pub fn eval(a: EvalArgs, cfg: &RunConfig) -> Result<(), Failure> {
    let reference = require(a.reference.or(cfg.reference.clone()), "ref")?;
    let test = require(a.test.or(cfg.test.clone()), "test")?;
    let csv = a.csv.or(cfg.csv.clone());
    if a.label.contains([',', '\n']) {
        return Err(Failure::validation("--label must not contain commas or newlines"));
    }
    check_outputs(&csv)?;
    let r = load_volume(&reference)?;
    let t = load_volume(&test)?;
    same_dims(&r, &t, "test volume")?;
    let rows = [metric_row(&a.label, &r, &t)?];
    emit_metrics("eval", &rows, csv.as_deref())
}

pub fn import(a: ImportArgs) -> Result<(), Failure> {
    check_output(&a.out)?;
    let sample = match a.sample {
        SampleArg::U8 => RawSample::U8,
        SampleArg::U16le => RawSample::U16Le,
        SampleArg::U16be => RawSample::U16Be,
    };
    let v = import_raw(&a.raw, a.dims, sample, a.rescale).map_err(invalid)?;
    let v = match a.crop_dims {
        Some(d) => crop(&v, a.crop_start.unwrap_or([0; 3]), d).map_err(invalid)?,
        None => v,
    };
    write_volume(&v, &a.out).map_err(failed)?;
    eprintln!("wrote {:?} volume to {}", v.dims(), a.out.display());
    Ok(())
}
