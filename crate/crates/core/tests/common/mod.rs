#![allow(dead_code)]

use maol::manifold::{product_inner, ProductPoint, ProductTangent};
use maol::objective::{learning_cost, learning_cost_and_gradient, sample_term};
use maol::reconstruct::{radial_mask_for_rate, FourierOp, IdentityOp, MeasurementOp, ReconConfig, ReconProblem};
use maol::synthetic::{cosparse_training_set, CosparseSpec};
use maol::tensor::DenseTensor;
use maol::volume::{add_awgn, synth_phantom};
use maol::{LearningParams, RealMatrix, TrainingSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn gaussian_tensor(dims: &[usize], rng: &mut ChaCha8Rng) -> DenseTensor {
    let len = dims.iter().product();
    DenseTensor::new(dims.to_vec(), gaussian_vec(len, rng)).unwrap()
}

pub fn gaussian_matrix(k: usize, n: usize, rng: &mut ChaCha8Rng) -> RealMatrix {
    RealMatrix::new(k, n, gaussian_vec(k * n, rng)).unwrap()
}

fn rel_err(fd: f64, exact: f64) -> f64 {
    (fd - exact).abs() / fd.abs().max(exact.abs()).max(1e-12)
}

/// Learning instance `i` of the gradient suite: shapes, ν and training data
/// vary with the index.
pub fn learning_instance(i: u64) -> (ProductPoint, TrainingSet, LearningParams) {
    let shapes: Vec<(usize, usize)> = match i % 4 {
        0 => vec![(6, 5); 3],
        1 => vec![(4, 3), (5, 4), (3, 3)],
        2 => vec![(6, 5), (6, 5)],
        _ => vec![(5, 3); 3],
    };
    let point = ProductPoint::random(&shapes, 100 + i).unwrap();
    let dims: Vec<usize> = shapes.iter().map(|s| s.1).collect();
    let mut r = rng(200 + i);
    let train = if i.is_multiple_of(2) {
        let truth = ProductPoint::random(&shapes, 300 + i).unwrap();
        let spec = CosparseSpec {
            zero_rows: 2,
            terms: 1,
            noise: 0.05,
        };
        cosparse_training_set(&truth, 40, spec, 400 + i).unwrap()
    } else {
        let patches = (0..40).map(|_| gaussian_tensor(&dims, &mut r)).collect();
        TrainingSet::from_patches(patches).unwrap()
    };
    let nu = [1000.0, 10.0, 1.0, 100.0][(i % 4) as usize];
    let params = LearningParams::new(nu, 500.0, 0.5).unwrap();
    (point, train, params)
}

/// Worst relative error between the analytic learning gradient and central
/// differences: directional derivatives of the full cost along random
/// tangent directions (the retraction is symmetric to second order), plus
/// ambient entrywise derivatives of the data term, which accepts arbitrary
/// matrices.
pub fn learning_gradient_error(i: u64) -> f64 {
    let (point, train, params) = learning_instance(i);
    let (_, grads) = learning_cost_and_gradient(&point, &train, &params).unwrap();
    let mut r = rng(500 + i);
    let mut worst: f64 = 0.0;

    for _ in 0..3 {
        let raw: Vec<RealMatrix> = point
            .factors()
            .iter()
            .map(|f| gaussian_matrix(f.shape().0, f.shape().1, &mut r))
            .collect();
        let dir: ProductTangent = point.project(&raw).unwrap();
        let exact = product_inner(&point.project(&grads).unwrap(), &dir).unwrap();
        let t = 1e-6;
        let plus = learning_cost(&point.retract(&dir, t).unwrap(), &train, &params).unwrap();
        let minus = learning_cost(&point.retract(&dir, -t).unwrap(), &train, &params).unwrap();
        worst = worst.max(rel_err((plus - minus) / (2.0 * t), exact));
    }

    let data_only = LearningParams::new(params.nu, 0.0, 0.0).unwrap();
    let (_, data_grads) = learning_cost_and_gradient(&point, &train, &data_only).unwrap();
    let base: Vec<RealMatrix> = point.factors().iter().map(|f| f.matrix().clone()).collect();
    let data_cost = |ms: &[RealMatrix]| -> f64 {
        train
            .patches()
            .iter()
            .map(|s| sample_term(s, ms, params.nu).unwrap())
            .sum::<f64>()
            / train.len() as f64
    };
    for _ in 0..4 {
        let mode = r.random_range(0..base.len());
        let (k, n) = base[mode].shape();
        let (row, col) = (r.random_range(0..k), r.random_range(0..n));
        let h = 1e-6;
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[mode].set(row, col, base[mode].get(row, col) + h);
        minus[mode].set(row, col, base[mode].get(row, col) - h);
        let fd = (data_cost(&plus) - data_cost(&minus)) / (2.0 * h);
        worst = worst.max(rel_err(fd, data_grads[mode].get(row, col)));
    }
    worst
}

/// Reconstruction instance `i`: even indices use identity measurements, odd
/// ones a radial Fourier mask; 8³ volumes with 5³ patches and 8×8×6 volumes
/// with 3³ patches alternate.
pub fn reconstruction_gradient_error(i: u64) -> f64 {
    let (dims, patch) = if (i / 2).is_multiple_of(2) {
        ([8, 8, 8], [5, 5, 5])
    } else {
        ([8, 8, 6], [3, 3, 3])
    };
    let shapes: Vec<(usize, usize)> = patch.iter().map(|&n| (n + 1, n)).collect();
    let factors = ProductPoint::random(&shapes, 600 + i).unwrap();
    let clean = synth_phantom([8, 8, 8], i).unwrap();
    let noisy = add_awgn(&clean, 10.0, 700 + i).unwrap();
    let v: Vec<f64> = (0..dims.iter().product::<usize>())
        .map(|j| noisy.as_slice()[j] / 255.0)
        .collect();
    let cfg = ReconConfig {
        lambda: [0.5, 5.0, 50.0][(i % 3) as usize],
        nu: [1000.0, 100.0, 10.0][((i / 3) % 3) as usize],
        stride: 1 + (i % 2) as usize,
        patch_dims: patch,
        ..ReconConfig::default()
    };
    let mut r = rng(800 + i);
    let y_src = gaussian_vec(v.len(), &mut r);
    let op: Box<dyn MeasurementOp> = if i.is_multiple_of(2) {
        Box::new(IdentityOp::new(dims).unwrap())
    } else {
        let (mask, _) = radial_mask_for_rate(8, 8, 0.4).unwrap();
        Box::new(FourierOp::new(dims, mask).unwrap())
    };
    let y = op.forward_data(&y_src);
    let problem = ReconProblem::new(op.as_ref(), &y, &factors, &cfg).unwrap();
    let (_, grad) = problem.cost_and_gradient(&v).unwrap();

    let mut worst: f64 = 0.0;
    for _ in 0..3 {
        let dir = gaussian_vec(v.len(), &mut r);
        let exact: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        let t = 1e-6;
        let plus: Vec<f64> = v.iter().zip(&dir).map(|(x, d)| x + t * d).collect();
        let minus: Vec<f64> = v.iter().zip(&dir).map(|(x, d)| x - t * d).collect();
        let fd = (problem.cost(&plus).unwrap() - problem.cost(&minus).unwrap()) / (2.0 * t);
        worst = worst.max(rel_err(fd, exact));
    }
    for _ in 0..3 {
        let j = r.random_range(0..v.len());
        let h = 1e-6;
        let mut plus = v.clone();
        let mut minus = v.clone();
        plus[j] += h;
        minus[j] -= h;
        let fd = (problem.cost(&plus).unwrap() - problem.cost(&minus).unwrap()) / (2.0 * h);
        worst = worst.max(rel_err(fd, grad[j]));
    }
    worst
}
