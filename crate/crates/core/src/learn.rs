//! Geometric conjugate gradient on a product of oblique manifolds.
//!
//! Directions follow Polak–Ribière+ with projection transport and a reset to
//! steepest descent whenever the direction fails to descend. Step sizes come
//! from a Zhang–Hager non-monotone backtracking search: a trial step `t` is
//! accepted when
//!
//! ```text
//! f(R_x(t d)) ≤ C_k + c1 · t · ⟨grad f(x), d⟩
//! ```
//!
//! where `C_k` is an exponentially weighted average of past costs,
//! `Q_{k+1} = η Q_k + 1`, `C_{k+1} = (η Q_k C_k + f_{k+1}) / Q_{k+1}`,
//! `Q_0 = 1`, `C_0 = f(x_0)`. Barrier and degenerate-step errors during a
//! trial count as a rejection.

use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::manifold::{product_inner, product_norm, ProductPoint, ProductTangent};
use crate::objective::{learning_cost, learning_cost_and_gradient, LearningParams};
use crate::tensor::RealMatrix;
use crate::volume::TrainingSet;

/// Smallest and largest initial trial step after the first iteration.
pub const STEP_CLAMP: (f64, f64) = (1e-8, 1e2);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirectionRule {
    /// Polak–Ribière with `β = max(0, β_PR)`.
    PolakRibierePlus,
    /// Plain Riemannian gradient descent.
    SteepestDescent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Stop once `‖grad‖ ≤ grad_tol · sqrt(Σ k_i n_i)`.
    pub grad_tol: f64,
    /// Zhang–Hager averaging weight η in `[0, 1)`; 0 gives monotone Armijo.
    pub ls_history_decay: f64,
    /// Sufficient-decrease constant `c1` in `(0, 1)`.
    pub ls_sufficient_decrease: f64,
    /// Backtracking contraction in `(0, 1)`.
    pub ls_backtrack: f64,
    pub ls_max_trials: usize,
    /// Seeds the random initial factors.
    pub seed: u64,
    pub direction: DirectionRule,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            grad_tol: 1e-4,
            ls_history_decay: 0.85,
            ls_sufficient_decrease: 1e-4,
            ls_backtrack: 0.5,
            ls_max_trials: 40,
            seed: 0,
            direction: DirectionRule::PolakRibierePlus,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::invalid(format!("{what} out of range: {v}")));
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be positive"));
        }
        if !(self.grad_tol >= 0.0 && self.grad_tol.is_finite()) {
            return bad("grad_tol", self.grad_tol);
        }
        if !(0.0..1.0).contains(&self.ls_history_decay) {
            return bad("ls_history_decay", self.ls_history_decay);
        }
        if !(self.ls_sufficient_decrease > 0.0 && self.ls_sufficient_decrease < 1.0) {
            return bad("ls_sufficient_decrease", self.ls_sufficient_decrease);
        }
        if !(self.ls_backtrack > 0.0 && self.ls_backtrack < 1.0) {
            return bad("ls_backtrack", self.ls_backtrack);
        }
        if self.ls_max_trials == 0 {
            return Err(Error::invalid("ls_max_trials must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Tolerance,
    MaxIters,
    LineSearchFailure,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::Tolerance => "tolerance",
            Termination::MaxIters => "max_iters",
            Termination::LineSearchFailure => "line-search failure",
        })
    }
}

/// One accepted line-search step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: f64,
    /// `C_k` the step was tested against.
    pub reference: f64,
    /// `C_{k+1}` after folding in the accepted cost.
    pub next_reference: f64,
    /// `⟨grad f(x_k), d_k⟩`, negative.
    pub slope: f64,
    /// `f(x_{k+1})`.
    pub cost: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnReport {
    /// Cost at every iterate, starting with the initial point.
    pub cost_trace: Vec<f64>,
    /// Riemannian gradient norm at every iterate.
    pub grad_norm_trace: Vec<f64>,
    pub steps: Vec<StepRecord>,
    pub iterations: usize,
    pub termination: Termination,
}

impl LearnReport {
    /// Plain-text log: one line per iterate with cost, gradient norm and the
    /// step that produced it.
    pub fn write_log(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "# iter cost grad_norm step")?;
        for (i, (c, g)) in self.cost_trace.iter().zip(&self.grad_norm_trace).enumerate() {
            let step = if i == 0 { 0.0 } else { self.steps[i - 1].step };
            writeln!(out, "{i} {c:?} {g:?} {step:?}")?;
        }
        writeln!(out, "# termination: {}", self.termination)
    }

    pub fn save_log(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_log(&mut buf).expect("writing to memory");
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

/// Zhang–Hager reference-value recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZhangHager {
    decay: f64,
    q: f64,
    c: f64,
}

impl ZhangHager {
    pub fn new(initial_cost: f64, decay: f64) -> Self {
        Self {
            decay,
            q: 1.0,
            c: initial_cost,
        }
    }

    pub fn reference(&self) -> f64 {
        self.c
    }

    pub fn update(&mut self, cost: f64) {
        let q_next = self.decay * self.q + 1.0;
        self.c = (self.decay * self.q * self.c + cost) / q_next;
        self.q = q_next;
    }
}

/// Non-monotone sufficient-decrease test.
pub fn nonmonotone_accept(candidate_cost: f64, reference: f64, directional_derivative: f64, t: f64, c1: f64) -> bool {
    candidate_cost.is_finite() && candidate_cost <= reference + c1 * t * directional_derivative
}

/// Solver state carried between iterations.
#[derive(Debug, Clone)]
pub struct CgState {
    pub point: ProductPoint,
    pub gradient: ProductTangent,
    /// Previous direction and gradient, tangent at the previous point.
    pub previous: Option<(ProductTangent, ProductTangent)>,
}

/// PR+ conjugate direction at `state.point`. Falls back to `−grad` on the
/// first iteration, when β clamps to zero, or when the result is not a
/// descent direction. Returns the direction and whether it is steepest descent.
pub fn cg_direction(state: &CgState, rule: DirectionRule) -> Result<(ProductTangent, bool)> {
    let steepest: ProductTangent = state.gradient.iter().map(|g| g.scaled(-1.0)).collect();
    let (prev_d, prev_g) = match (&state.previous, rule) {
        (Some(p), DirectionRule::PolakRibierePlus) => p,
        _ => return Ok((steepest, true)),
    };
    let gg_prev = product_inner(prev_g, prev_g)?;
    if gg_prev == 0.0 {
        return Ok((steepest, true));
    }
    let tg_prev = state.point.transport(prev_g)?;
    let td_prev = state.point.transport(prev_d)?;
    let num = product_inner(&state.gradient, &state.gradient)? - product_inner(&state.gradient, &tg_prev)?;
    let beta = (num / gg_prev).max(0.0);
    if beta == 0.0 || !beta.is_finite() {
        return Ok((steepest, true));
    }
    let mut d = steepest.clone();
    for (di, ti) in d.iter_mut().zip(&td_prev) {
        di.axpy(beta, ti);
    }
    if product_inner(&d, &state.gradient)? >= 0.0 {
        return Ok((steepest, true));
    }
    Ok((d, false))
}

/// A smooth cost on a product of oblique manifolds.
pub trait ManifoldObjective {
    fn cost(&self, x: &ProductPoint) -> Result<f64>;
    /// Cost and Euclidean gradient, one matrix per factor.
    fn cost_and_gradient(&self, x: &ProductPoint) -> Result<(f64, Vec<RealMatrix>)>;
}

/// The learning cost over a fixed training set.
pub struct LearningObjective<'a> {
    pub train: &'a TrainingSet,
    pub params: LearningParams,
}

impl ManifoldObjective for LearningObjective<'_> {
    fn cost(&self, x: &ProductPoint) -> Result<f64> {
        learning_cost(x, self.train, &self.params)
    }

    fn cost_and_gradient(&self, x: &ProductPoint) -> Result<(f64, Vec<RealMatrix>)> {
        learning_cost_and_gradient(x, self.train, &self.params)
    }
}

struct Accepted {
    point: ProductPoint,
    cost: f64,
    step: f64,
    trials: usize,
}

fn line_search(
    obj: &impl ManifoldObjective,
    x: &ProductPoint,
    d: &ProductTangent,
    slope: f64,
    t0: f64,
    reference: f64,
    cfg: &SolverConfig,
) -> Result<Option<Accepted>> {
    let mut t = t0;
    for trial in 1..=cfg.ls_max_trials {
        match x.retract(d, t).and_then(|cand| obj.cost(&cand).map(|c| (cand, c))) {
            Ok((cand, c)) if nonmonotone_accept(c, reference, slope, t, cfg.ls_sufficient_decrease) => {
                return Ok(Some(Accepted {
                    point: cand,
                    cost: c,
                    step: t,
                    trials: trial,
                }))
            }
            Ok(_) => {}
            Err(e) if e.is_domain_violation() => {}
            Err(e) => return Err(e),
        }
        t *= cfg.ls_backtrack;
    }
    Ok(None)
}

/// Minimizes `obj` from `x0`. Returns the final iterate when the gradient
/// tolerance is met, otherwise the lowest-cost iterate seen.
pub fn minimize(
    obj: &impl ManifoldObjective,
    x0: ProductPoint,
    cfg: &SolverConfig,
) -> Result<(ProductPoint, LearnReport)> {
    minimize_observed(obj, x0, cfg, |_| {})
}

/// [`minimize`] that also hands every accepted iterate to `observe`,
/// starting with `x0`.
pub fn minimize_observed(
    obj: &impl ManifoldObjective,
    x0: ProductPoint,
    cfg: &SolverConfig,
    mut observe: impl FnMut(&ProductPoint),
) -> Result<(ProductPoint, LearnReport)> {
    cfg.validate()?;
    observe(&x0);
    let tol = cfg.grad_tol * (x0.ambient_size() as f64).sqrt();

    let (f0, eg) = obj.cost_and_gradient(&x0)?;
    if !f0.is_finite() {
        return Err(Error::NonFinite(format!("initial cost {f0}")));
    }
    let g0 = x0.project(&eg)?;
    let mut gn = product_norm(&g0);
    let mut report = LearnReport {
        cost_trace: vec![f0],
        grad_norm_trace: vec![gn],
        steps: Vec::new(),
        iterations: 0,
        termination: Termination::MaxIters,
    };
    let mut state = CgState {
        point: x0,
        gradient: g0,
        previous: None,
    };
    let mut zh = ZhangHager::new(f0, cfg.ls_history_decay);
    let mut best = (state.point.clone(), f0);
    let mut last_step: Option<(f64, f64)> = None; // (t, slope)

    for _ in 0..cfg.max_iters {
        if gn <= tol {
            report.termination = Termination::Tolerance;
            return Ok((state.point, report));
        }
        let (mut d, mut is_steepest) = cg_direction(&state, cfg.direction)?;
        let mut slope = product_inner(&state.gradient, &d)?;
        let mut t0 = match last_step {
            None => 1.0 / gn,
            Some((t, s)) => (t * s / slope).clamp(STEP_CLAMP.0, STEP_CLAMP.1),
        };
        let reference = zh.reference();
        let accepted = loop {
            if let Some(a) = line_search(obj, &state.point, &d, slope, t0, reference, cfg)? {
                break Some(a);
            }
            if is_steepest {
                break None;
            }
            d = state.gradient.iter().map(|g| g.scaled(-1.0)).collect();
            slope = -gn * gn;
            t0 = 1.0 / gn;
            is_steepest = true;
        };
        let Some(acc) = accepted else {
            report.termination = Termination::LineSearchFailure;
            return Ok((best.0, report));
        };
        observe(&acc.point);
        zh.update(acc.cost);
        report.steps.push(StepRecord {
            step: acc.step,
            reference,
            next_reference: zh.reference(),
            slope,
            cost: acc.cost,
            trials: acc.trials,
        });
        let (_, eg) = obj.cost_and_gradient(&acc.point)?;
        let g = acc.point.project(&eg)?;
        gn = product_norm(&g);
        report.cost_trace.push(acc.cost);
        report.grad_norm_trace.push(gn);
        report.iterations += 1;
        if acc.cost < best.1 {
            best = (acc.point.clone(), acc.cost);
        }
        last_step = Some((acc.step, slope));
        let prev_g = std::mem::replace(&mut state.gradient, g);
        state.previous = Some((d, prev_g));
        state.point = acc.point;
    }
    if gn <= tol {
        report.termination = Termination::Tolerance;
        return Ok((state.point, report));
    }
    Ok((best.0, report))
}

/// Learns one factor per mode from `train`, starting at random factors drawn
/// from `cfg.seed`.
pub fn learn_operators(
    train: &TrainingSet,
    shapes: &[(usize, usize)],
    params: &LearningParams,
    cfg: &SolverConfig,
) -> Result<(ProductPoint, LearnReport)> {
    learn_operators_observed(train, shapes, params, cfg, |_| {})
}

/// [`learn_operators`] with an observer for every accepted iterate.
pub fn learn_operators_observed(
    train: &TrainingSet,
    shapes: &[(usize, usize)],
    params: &LearningParams,
    cfg: &SolverConfig,
    observe: impl FnMut(&ProductPoint),
) -> Result<(ProductPoint, LearnReport)> {
    params.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let dims = train.patch_dims();
    if shapes.len() != dims.len() {
        return Err(Error::shape(format!(
            "{} operator shapes for training tensors of order {}",
            shapes.len(),
            dims.len()
        )));
    }
    for (mode, (&(k, n), &d)) in shapes.iter().zip(dims).enumerate() {
        if n != d {
            return Err(Error::shape(format!(
                "mode {} factor is {k}x{n} but training tensors have {d} entries along it",
                mode + 1
            )));
        }
        if k < n {
            return Err(Error::invalid(format!(
                "mode {} factor {k}x{n} must have k >= n",
                mode + 1
            )));
        }
    }
    let x0 = ProductPoint::random(shapes, cfg.seed)?;
    let obj = LearningObjective { train, params: *params };
    minimize_observed(&obj, x0, cfg, observe)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DenseTensor;

    #[test]
    fn first_reference_is_initial_cost() {
        let zh = ZhangHager::new(3.0, 0.85);
        assert_eq!(zh.reference(), 3.0);
        // Armijo against f(x0): 3 - 1e-4 * 1 * 2 = 2.9998
        assert!(nonmonotone_accept(2.9998, zh.reference(), -2.0, 1.0, 1e-4));
        assert!(!nonmonotone_accept(2.9999, zh.reference(), -2.0, 1.0, 1e-4));
    }

    #[test]
    fn zero_decay_tracks_last_cost() {
        let mut zh = ZhangHager::new(10.0, 0.0);
        for f in [7.0, 9.0, 4.0] {
            zh.update(f);
            assert_eq!(zh.reference(), f);
        }
    }

    #[test]
    fn nonmonotone_accepts_what_armijo_rejects() {
        // Costs 10 → 4 → 6. With η = 0.85:
        // Q1 = 1.85, C1 = (0.85·10 + 4)/1.85 = 12.5/1.85 ≈ 6.7568
        // Q2 = 0.85·1.85 + 1 = 2.5725, C2 = (0.85·1.85·C1 + 6)/2.5725 = (10.625 + 6)/2.5725 ≈ 6.4626
        let mut zh = ZhangHager::new(10.0, 0.85);
        zh.update(4.0);
        assert!((zh.reference() - 12.5 / 1.85).abs() < 1e-12);
        zh.update(6.0);
        assert!((zh.reference() - 16.625 / 2.5725).abs() < 1e-12);
        // A trial cost of 6.3 exceeds the last cost 6 (monotone Armijo rejects)
        // but stays below C2 + c1 t slope.
        let (slope, t, c1) = (-1.0, 0.5, 1e-4);
        assert!(!nonmonotone_accept(6.3, 6.0, slope, t, c1));
        assert!(nonmonotone_accept(6.3, zh.reference(), slope, t, c1));
    }

    #[test]
    fn reference_stays_below_running_max() {
        let mut zh = ZhangHager::new(5.0, 0.85);
        for f in [3.0, 8.0, 1.0, 2.5, 9.0, 0.5] {
            let before = zh.reference();
            zh.update(f);
            assert!(zh.reference() <= before.max(f) + 1e-15);
        }
    }

    #[test]
    fn first_direction_is_steepest() {
        let point = ProductPoint::random(&[(6, 5)], 1).unwrap();
        let g = point
            .project(&[RealMatrix::new(6, 5, (0..30).map(|i| i as f64).collect()).unwrap()])
            .unwrap();
        let state = CgState {
            point,
            gradient: g.clone(),
            previous: None,
        };
        let (d, steepest) = cg_direction(&state, DirectionRule::PolakRibierePlus).unwrap();
        assert!(steepest);
        assert_eq!(d[0], g[0].scaled(-1.0));
    }

    #[test]
    fn negative_pr_numerator_clamps_beta() {
        let point = ProductPoint::random(&[(6, 5)], 2).unwrap();
        let g = point
            .project(&[RealMatrix::new(6, 5, (0..30).map(|i| (i as f64).sin()).collect()).unwrap()])
            .unwrap();
        // Previous gradient 2g: numerator ‖g‖² − ⟨g, 2g⟩ < 0.
        let state = CgState {
            point,
            gradient: g.clone(),
            previous: Some((g.clone(), vec![g[0].scaled(2.0)])),
        };
        let (d, steepest) = cg_direction(&state, DirectionRule::PolakRibierePlus).unwrap();
        assert!(steepest);
        assert_eq!(d[0], g[0].scaled(-1.0));
    }

    #[test]
    fn flat_landscape_returns_initial_point() {
        let train = TrainingSet::from_patches(vec![DenseTensor::zeros(vec![5, 5, 5]).unwrap(); 3]).unwrap();
        let params = LearningParams::new(1000.0, 0.0, 0.0).unwrap();
        let cfg = SolverConfig {
            seed: 11,
            ..SolverConfig::default()
        };
        let (point, report) = learn_operators(&train, &[(6, 5); 3], &params, &cfg).unwrap();
        assert_eq!(point, ProductPoint::random(&[(6, 5); 3], 11).unwrap());
        assert_eq!(report.termination, Termination::Tolerance);
        assert_eq!(report.iterations, 0);
        assert_eq!(report.cost_trace, vec![0.0]);
    }

    #[test]
    fn incompatible_shapes_rejected() {
        let train = TrainingSet::from_patches(vec![DenseTensor::zeros(vec![5, 5, 5]).unwrap()]).unwrap();
        let p = LearningParams::default();
        let cfg = SolverConfig::default();
        assert!(learn_operators(&train, &[(6, 5); 2], &p, &cfg).is_err());
        assert!(learn_operators(&train, &[(6, 5), (6, 4), (6, 5)], &p, &cfg).is_err());
        assert!(learn_operators(&train, &[(4, 5), (6, 5), (6, 5)], &p, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = SolverConfig {
            ls_history_decay: 1.0,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverConfig {
            ls_backtrack: 0.0,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
