//! Gradient-flow time integration with max-norm regularization and stopping
//! logic, plus SGD and ADAM baselines.
//!
//! Three integrators are available:
//! - `HeunFixed`: fixed-step second order, for dense trajectories near
//!   critical points.
//! - `Rk45Adaptive`: Dormand-Prince 5(4) embedded pair with PI step control.
//! - `Rosenbrock23Adaptive`: linearly-implicit 2(3) pair (a W-method) using
//!   the loss Hessian as Jacobian. Channels sharpen as the parameter norm
//!   grows, which makes explicit methods step-size limited; the Rosenbrock
//!   solver follows the slow manifold with accuracy-limited steps instead.

use crate::error::{Error, Result};
use crate::net::{ArchDescriptor, Dataset, NetworkParams};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::time::Instant;

/// Absolute loss-improvement threshold for the patience counter.
pub const IMPROVEMENT_TOL: f64 = 1e-14;
/// Step size below which adaptive integration reports a stiffness failure.
pub const MIN_STEP: f64 = 1e-14;

/// A differentiable objective driving the flow `theta_dot = -grad(L + R)`.
pub trait FlowSystem {
    fn dim(&self) -> usize;
    fn loss(&mut self, theta: &DVector<f64>) -> Result<f64>;
    fn gradient(&mut self, theta: &DVector<f64>) -> Result<DVector<f64>>;
    /// Loss Hessian, used as the Jacobian by the Rosenbrock solver.
    fn hessian(&mut self, theta: &DVector<f64>) -> Result<DMatrix<f64>>;
}

/// Mean-squared-error objective of a network on a fixed dataset.
pub struct MseSystem<'a> {
    scratch: NetworkParams,
    data: &'a Dataset,
}

impl<'a> MseSystem<'a> {
    pub fn new(arch: &ArchDescriptor, data: &'a Dataset) -> MseSystem<'a> {
        MseSystem { scratch: arch.zeros(), data }
    }
}

impl FlowSystem for MseSystem<'_> {
    fn dim(&self) -> usize {
        self.scratch.param_count()
    }

    fn loss(&mut self, theta: &DVector<f64>) -> Result<f64> {
        self.scratch.set_from_flat(theta)?;
        self.scratch.mse_loss(self.data)
    }

    fn gradient(&mut self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.scratch.set_from_flat(theta)?;
        self.scratch.loss_gradient(self.data)
    }

    fn hessian(&mut self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.scratch.set_from_flat(theta)?;
        self.scratch.loss_hessian(self.data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SolverKind {
    HeunFixed { h: f64 },
    Rk45Adaptive,
    Rosenbrock23Adaptive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowConfig {
    pub solver: SolverKind,
    pub reltol: f64,
    pub abstol: f64,
    pub max_steps: usize,
    /// Accepted steps without an absolute loss improvement of 1e-14.
    pub patience: usize,
    /// Wall-clock bound in seconds; `None` keeps runs deterministic.
    pub max_time: Option<f64>,
    /// Parameter-norm threshold; beyond it the cubic regularizer activates
    /// and the run is halted as an infinite-norm solution.
    pub maxnorm: f64,
    /// L-infinity gradient norm declaring convergence.
    pub grad_tol: f64,
    /// Record every k-th accepted step.
    pub record_every: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            solver: SolverKind::Rk45Adaptive,
            reltol: 1e-3,
            abstol: 1e-6,
            max_steps: 1_000_000,
            patience: 1_000_000,
            max_time: None,
            maxnorm: 1e3,
            grad_tol: 1e-8,
            record_every: 1,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.reltol > 0.0 && self.abstol > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        if !(self.maxnorm > 0.0) {
            return Err(Error::InvalidArgument("maxnorm must be positive".into()));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidArgument("record_every must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradConverged,
    MaxnormExceeded,
    Patience,
    MaxSteps,
    MaxTime,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FlowRecord {
    pub t: f64,
    pub loss: f64,
    pub grad_linf: f64,
    pub param_norm: f64,
}

#[derive(Debug, Clone)]
pub struct FlowResult {
    pub final_theta: DVector<f64>,
    pub final_t: f64,
    pub stop_reason: StopReason,
    pub records: Vec<FlowRecord>,
    /// Geometrically thinned (powers of two) theta snapshots plus the final
    /// state, tagged with flow time.
    pub snapshots: Vec<(f64, DVector<f64>)>,
    /// Parameter update between consecutive records.
    pub updates: Vec<DVector<f64>>,
    pub accepted_steps: usize,
}

impl FlowResult {
    pub fn final_loss(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.loss)
    }

    pub fn final_grad_linf(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.grad_linf)
    }

    pub fn final_param_norm(&self) -> f64 {
        self.final_theta.norm()
    }

    /// JSON-lines export: one record per line, final line carries the stop
    /// reason and the final theta.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            let line = serde_json::json!({
                "t": r.t, "loss": r.loss, "grad_linf": r.grad_linf, "pnorm": r.param_norm,
            });
            writeln!(w, "{line}")?;
        }
        let theta: Vec<f64> = self.final_theta.iter().copied().collect();
        let line = serde_json::json!({
            "stop_reason": self.stop_reason,
            "t": self.final_t,
            "theta": theta,
        });
        writeln!(w, "{line}")?;
        Ok(())
    }
}

/// Cubic max-norm regularizer value `(1/3)(||theta|| - maxnorm)^3` beyond the
/// threshold, zero otherwise.
pub fn maxnorm_penalty(theta: &DVector<f64>, maxnorm: f64) -> f64 {
    let n = theta.norm();
    if n > maxnorm {
        let d = n - maxnorm;
        d * d * d / 3.0
    } else {
        0.0
    }
}

fn add_penalty_gradient(grad: &mut DVector<f64>, theta: &DVector<f64>, maxnorm: f64) {
    let n = theta.norm();
    if n > maxnorm {
        let w = (n - maxnorm) * (n - maxnorm) / n;
        grad.axpy(w, theta, 1.0);
    }
}

/// One explicit Heun (trapezoidal predictor-corrector) step.
pub fn heun_step(
    mut f: impl FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    y: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>> {
    let k1 = f(y)?;
    let pred = y + h * &k1;
    let k2 = f(&pred)?;
    Ok(y + (0.5 * h) * (k1 + k2))
}

/// Weighted rms error norm shared by the adaptive solvers.
fn error_norm(err: &DVector<f64>, y: &DVector<f64>, ynew: &DVector<f64>, rtol: f64, atol: f64) -> f64 {
    let n = err.len();
    let mut acc = 0.0;
    for i in 0..n {
        let sc = atol + rtol * y[i].abs().max(ynew[i].abs());
        let q = err[i] / sc;
        acc += q * q;
    }
    (acc / n as f64).sqrt()
}

/// Outcome of a single adaptive embedded step.
#[derive(Debug, Clone)]
pub struct AdaptiveStep {
    pub y_new: DVector<f64>,
    pub h_next: f64,
    pub accepted: bool,
    pub error_norm: f64,
    /// Field evaluated at `y_new` (FSAL), valid when accepted.
    pub f_new: Option<DVector<f64>>,
}

// Dormand-Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// One adaptive Dormand-Prince 5(4) step with standard PI control.
///
/// `f1` may pass the field already evaluated at `y` (FSAL reuse).
pub fn rk45_adaptive_step(
    mut f: impl FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    y: &DVector<f64>,
    h: f64,
    reltol: f64,
    abstol: f64,
    f1: Option<&DVector<f64>>,
) -> Result<AdaptiveStep> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument("step size must be positive".into()));
    }
    let _ = DP_C;
    let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);
    k.push(match f1 {
        Some(v) => v.clone(),
        None => f(y)?,
    });
    for s in 1..7 {
        let mut ys = y.clone();
        for (j, kj) in k.iter().enumerate() {
            let a = DP_A[s][j];
            if a != 0.0 {
                ys.axpy(h * a, kj, 1.0);
            }
        }
        k.push(f(&ys)?);
    }
    // 5th-order solution is the stage-7 argument (b row == A[6]); k[6] = f(y_new)
    let mut y_new = y.clone();
    for (j, kj) in k.iter().take(6).enumerate() {
        let a = DP_A[6][j];
        if a != 0.0 {
            y_new.axpy(h * a, kj, 1.0);
        }
    }
    let mut err = DVector::zeros(y.len());
    for (j, kj) in k.iter().enumerate() {
        if DP_E[j] != 0.0 {
            err.axpy(h * DP_E[j], kj, 1.0);
        }
    }
    let en = error_norm(&err, y, &y_new, reltol, abstol);
    let accepted = en <= 1.0 && y_new.iter().all(|v| v.is_finite());
    let en_clamped = en.max(1e-10);
    let fac = (0.9 * en_clamped.powf(-0.2)).clamp(0.2, 10.0);
    let h_next = h * fac;
    Ok(AdaptiveStep {
        f_new: if accepted { Some(k.pop().unwrap()) } else { None },
        y_new,
        h_next,
        accepted,
        error_norm: en,
    })
}

/// One linearly-implicit Rosenbrock 2(3) step (Shampine's ode23s scheme).
///
/// `jac` is the Jacobian of the field at `y`; for gradient flow this is the
/// negated loss Hessian. The method is a W-method: a somewhat stale or
/// approximate Jacobian degrades efficiency, not correctness.
pub fn rosenbrock23_step(
    mut f: impl FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    y: &DVector<f64>,
    h: f64,
    jac: &DMatrix<f64>,
    reltol: f64,
    abstol: f64,
    f0: Option<&DVector<f64>>,
) -> Result<AdaptiveStep> {
    let n = y.len();
    let d = 1.0 / (2.0 + std::f64::consts::SQRT_2);
    let e32 = 6.0 + std::f64::consts::SQRT_2;

    let mut w = jac * (-h * d);
    for i in 0..n {
        w[(i, i)] += 1.0;
    }
    let lu = w.lu();

    let f0_owned;
    let f0 = match f0 {
        Some(v) => v,
        None => {
            f0_owned = f(y)?;
            &f0_owned
        }
    };
    let k1 = lu
        .solve(f0)
        .ok_or_else(|| Error::SingularSystem("rosenbrock W matrix".into()))?;
    let y_half = y + (0.5 * h) * &k1;
    let f1 = f(&y_half)?;
    let k2 = lu
        .solve(&(&f1 - &k1))
        .ok_or_else(|| Error::SingularSystem("rosenbrock W matrix".into()))?
        + &k1;
    let y_new = y + h * &k2;
    let f2 = f(&y_new)?;
    let rhs3 = &f2 - e32 * (&k2 - &f1) - 2.0 * (&k1 - f0);
    let k3 = lu
        .solve(&rhs3)
        .ok_or_else(|| Error::SingularSystem("rosenbrock W matrix".into()))?;
    let err = (h / 6.0) * (&k1 - 2.0 * &k2 + &k3);

    let en = error_norm(&err, y, &y_new, reltol, abstol);
    let finite = y_new.iter().all(|v| v.is_finite()) && f2.iter().all(|v| v.is_finite());
    let accepted = en <= 1.0 && finite;
    let en_clamped = if finite { en.max(1e-10) } else { 1e10 };
    let fac = (0.9 * en_clamped.powf(-1.0 / 3.0)).clamp(0.2, 8.0);
    Ok(AdaptiveStep {
        f_new: if accepted { Some(f2) } else { None },
        y_new,
        h_next: h * fac,
        accepted,
        error_norm: en,
    })
}

/// Standard PI step-size controller (Hairer's dopri5 flavor) with the
/// no-growth-after-rejection rule.
struct PiController {
    expo: f64,
    beta: f64,
    facold: f64,
    facmin: f64,
    facmax: f64,
    safe: f64,
    last_rejected: bool,
}

impl PiController {
    fn for_order(order: usize) -> PiController {
        let beta = if order >= 5 { 0.04 } else { 0.0 };
        PiController {
            expo: 1.0 / order as f64 - 0.75 * beta,
            beta,
            facold: 1e-4,
            facmin: 0.2,
            facmax: if order >= 5 { 10.0 } else { 5.0 },
            safe: 0.9,
            last_rejected: false,
        }
    }

    fn next_h(&mut self, h: f64, err: f64, accepted: bool) -> f64 {
        let err = err.max(1e-10);
        if accepted {
            let facmax = if self.last_rejected { 1.0 } else { self.facmax };
            self.last_rejected = false;
            let fac11 = err.powf(self.expo);
            let fac = (fac11 / self.facold.powf(self.beta) / self.safe)
                .clamp(1.0 / facmax, 1.0 / self.facmin);
            self.facold = err.max(1e-4);
            h / fac
        } else {
            self.last_rejected = true;
            let fac11 = err.powf(self.expo);
            h / (fac11 / self.safe).max(1.0)
        }
    }
}

struct Recorder {
    records: Vec<FlowRecord>,
    snapshots: Vec<(f64, DVector<f64>)>,
    updates: Vec<DVector<f64>>,
    last_recorded_theta: DVector<f64>,
    record_every: usize,
    next_snapshot: usize,
}

impl Recorder {
    fn new(theta0: &DVector<f64>, t0: f64, loss: f64, grad_linf: f64, record_every: usize) -> Recorder {
        Recorder {
            records: vec![FlowRecord { t: t0, loss, grad_linf, param_norm: theta0.norm() }],
            snapshots: vec![(t0, theta0.clone())],
            updates: Vec::new(),
            last_recorded_theta: theta0.clone(),
            record_every,
            next_snapshot: 1,
        }
    }

    fn on_accept(&mut self, step: usize, t: f64, theta: &DVector<f64>, loss: f64, grad_linf: f64) {
        if step % self.record_every == 0 {
            self.records.push(FlowRecord { t, loss, grad_linf, param_norm: theta.norm() });
            self.updates.push(theta - &self.last_recorded_theta);
            self.last_recorded_theta = theta.clone();
        }
        if step == self.next_snapshot {
            self.snapshots.push((t, theta.clone()));
            self.next_snapshot *= 2;
        }
    }

    fn finish(
        mut self,
        step: usize,
        t: f64,
        theta: &DVector<f64>,
        loss: f64,
        grad_linf: f64,
        stop: StopReason,
        accepted_steps: usize,
    ) -> FlowResult {
        if step % self.record_every != 0 || step == 0 {
            self.records.push(FlowRecord { t, loss, grad_linf, param_norm: theta.norm() });
            self.updates.push(theta - &self.last_recorded_theta);
        }
        if self.snapshots.last().map(|(st, _)| *st) != Some(t) {
            self.snapshots.push((t, theta.clone()));
        }
        FlowResult {
            final_theta: theta.clone(),
            final_t: t,
            stop_reason: stop,
            records: self.records,
            snapshots: self.snapshots,
            updates: self.updates,
            accepted_steps,
        }
    }
}

/// Integrates `theta_dot = -grad(L + R)` until one of the configured
/// stopping conditions fires.
pub fn integrate_gradient_flow<S: FlowSystem>(
    system: &mut S,
    theta0: &DVector<f64>,
    cfg: &FlowConfig,
) -> Result<FlowResult> {
    cfg.validate()?;
    integrate_inner(system, theta0, cfg, None)
}

/// Fixed-horizon variant: integrates until flow time `t_end` (or an earlier
/// stopping condition).
pub fn integrate_to_time<S: FlowSystem>(
    system: &mut S,
    theta0: &DVector<f64>,
    t_end: f64,
    cfg: &FlowConfig,
) -> Result<FlowResult> {
    cfg.validate()?;
    integrate_inner(system, theta0, cfg, Some(t_end))
}

fn integrate_inner<S: FlowSystem>(
    system: &mut S,
    theta0: &DVector<f64>,
    cfg: &FlowConfig,
    t_end: Option<f64>,
) -> Result<FlowResult> {
    let started = Instant::now();
    let maxnorm = cfg.maxnorm;

    let mut theta = theta0.clone();
    let mut t = 0.0;
    let field_at = |sys: &mut S, th: &DVector<f64>| -> Result<DVector<f64>> {
        let mut g = sys.gradient(th)?;
        add_penalty_gradient(&mut g, th, maxnorm);
        Ok(-g)
    };

    let mut f_cur = field_at(system, &theta)?;
    let mut loss = system.loss(&theta)? + maxnorm_penalty(&theta, maxnorm);
    if !loss.is_finite() {
        return Err(Error::Diverged);
    }
    let mut grad_linf = f_cur.amax();
    let mut rec = Recorder::new(&theta, t, loss, grad_linf, cfg.record_every);

    let mut best_loss = loss;
    let mut stalled: usize = 0;
    let mut accepted: usize = 0;
    let mut h = initial_step(&theta, &f_cur, cfg);
    // Rosenbrock is a W-method: the Jacobian may lag without breaking the
    // order, so it is refreshed on rejection or after a fixed interval.
    const JAC_REFRESH_INTERVAL: usize = 10;
    let mut jac: Option<DMatrix<f64>> = None;
    let mut jac_age: usize = 0;
    let mut controller = PiController::for_order(match cfg.solver {
        SolverKind::Rosenbrock23Adaptive => 3,
        _ => 5,
    });

    let stop = loop {
        // stopping conditions evaluated on the current accepted state
        if theta.norm() >= maxnorm {
            break StopReason::MaxnormExceeded;
        }
        if grad_linf < cfg.grad_tol {
            break StopReason::GradConverged;
        }
        if stalled > cfg.patience {
            break StopReason::Patience;
        }
        if accepted >= cfg.max_steps {
            break StopReason::MaxSteps;
        }
        if let Some(limit) = cfg.max_time {
            if started.elapsed().as_secs_f64() > limit {
                break StopReason::MaxTime;
            }
        }
        if let Some(te) = t_end {
            if t >= te {
                break StopReason::MaxTime;
            }
            h = h.min(te - t);
        }

        let step = match cfg.solver {
            SolverKind::HeunFixed { h: hfix } => {
                let y_new = heun_step(|y| field_at(system, y), &theta, hfix)?;
                if y_new.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Diverged);
                }
                let f_new = field_at(system, &y_new)?;
                AdaptiveStep { y_new, h_next: hfix, accepted: true, error_norm: 0.0, f_new: Some(f_new) }
            }
            SolverKind::Rk45Adaptive => rk45_adaptive_step(
                |y| field_at(system, y),
                &theta,
                h,
                cfg.reltol,
                cfg.abstol,
                Some(&f_cur),
            )?,
            SolverKind::Rosenbrock23Adaptive => {
                if jac.is_none() {
                    jac = Some(-system.hessian(&theta)?);
                    jac_age = 0;
                }
                rosenbrock23_step(
                    |y| field_at(system, y),
                    &theta,
                    h,
                    jac.as_ref().unwrap(),
                    cfg.reltol,
                    cfg.abstol,
                    Some(&f_cur),
                )?
            }
        };

        if step.accepted {
            t += match cfg.solver {
                SolverKind::HeunFixed { h: hfix } => hfix,
                _ => h,
            };
            theta = step.y_new;
            f_cur = step.f_new.expect("accepted step carries the new field");
            let raw_loss = system.loss(&theta)?;
            if !raw_loss.is_finite() {
                return Err(Error::Diverged);
            }
            loss = raw_loss + maxnorm_penalty(&theta, maxnorm);
            grad_linf = f_cur.amax();
            accepted += 1;
            jac_age += 1;
            if jac_age >= JAC_REFRESH_INTERVAL {
                jac = None;
            }
            if loss < best_loss - IMPROVEMENT_TOL {
                best_loss = loss;
                stalled = 0;
            } else {
                stalled += 1;
            }
            rec.on_accept(accepted, t, &theta, loss, grad_linf);
        }
        if !step.accepted && jac_age > 2 {
            // a stale Jacobian may have caused the rejection
            jac = None;
        }
        if !matches!(cfg.solver, SolverKind::HeunFixed { .. }) {
            h = controller.next_h(h, step.error_norm, step.accepted);
            if h < MIN_STEP {
                return Err(Error::Stiffness { h });
            }
        }
    };

    Ok(rec.finish(accepted, t, &theta, loss, grad_linf, stop, accepted))
}

fn initial_step(theta: &DVector<f64>, field: &DVector<f64>, cfg: &FlowConfig) -> f64 {
    let d0 = theta.norm().max(1e-5);
    let d1 = field.norm().max(1e-10);
    (0.01 * d0 / d1).clamp(1e-10, 1.0).min(cfg.abstol.sqrt().max(1e-8) * 1e4)
}

/// Retry wrapper: on a stiffness failure the tolerance is halved once and
/// the integration restarted.
pub fn integrate_with_retry<S: FlowSystem>(
    system: &mut S,
    theta0: &DVector<f64>,
    cfg: &FlowConfig,
) -> Result<FlowResult> {
    match integrate_gradient_flow(system, theta0, cfg) {
        Err(Error::Stiffness { .. }) => {
            let mut tighter = cfg.clone();
            tighter.reltol *= 0.5;
            integrate_gradient_flow(system, theta0, &tighter)
        }
        other => other,
    }
}

/// Seeded shuffled minibatch SGD, recorded per epoch as a `FlowResult`.
pub fn run_sgd(
    net: &NetworkParams,
    data: &Dataset,
    lr: f64,
    batch: usize,
    epochs: usize,
    seed: u64,
) -> Result<FlowResult> {
    run_minibatch(net, data, batch, epochs, seed, &mut SgdState { lr })
}

/// Minibatch ADAM with standard bias correction.
#[allow(clippy::too_many_arguments)]
pub fn run_adam(
    net: &NetworkParams,
    data: &Dataset,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps_adam: f64,
    batch: usize,
    epochs: usize,
    seed: u64,
) -> Result<FlowResult> {
    let p = net.param_count();
    let mut state = AdamState {
        lr,
        beta1,
        beta2,
        eps: eps_adam,
        m: DVector::zeros(p),
        v: DVector::zeros(p),
        step: 0,
    };
    run_minibatch(net, data, batch, epochs, seed, &mut state)
}

trait StepRule {
    fn apply(&mut self, theta: &mut DVector<f64>, grad: &DVector<f64>);
}

struct SgdState {
    lr: f64,
}

impl StepRule for SgdState {
    fn apply(&mut self, theta: &mut DVector<f64>, grad: &DVector<f64>) {
        theta.axpy(-self.lr, grad, 1.0);
    }
}

struct AdamState {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: DVector<f64>,
    v: DVector<f64>,
    step: usize,
}

impl StepRule for AdamState {
    fn apply(&mut self, theta: &mut DVector<f64>, grad: &DVector<f64>) {
        self.step += 1;
        let b1 = self.beta1;
        let b2 = self.beta2;
        for i in 0..theta.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
            let mh = self.m[i] / (1.0 - b1.powi(self.step as i32));
            let vh = self.v[i] / (1.0 - b2.powi(self.step as i32));
            theta[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

fn run_minibatch(
    net: &NetworkParams,
    data: &Dataset,
    batch: usize,
    epochs: usize,
    seed: u64,
    rule: &mut dyn StepRule,
) -> Result<FlowResult> {
    if batch == 0 || batch > data.len() {
        return Err(Error::InvalidArgument(format!(
            "batch size {batch} invalid for {} samples",
            data.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scratch = net.clone();
    let mut theta = net.flatten();
    let mut indices: Vec<usize> = (0..data.len()).collect();

    scratch.set_from_flat(&theta)?;
    let loss0 = scratch.mse_loss(data)?;
    let grad0 = scratch.loss_gradient(data)?;
    let mut rec = Recorder::new(&theta, 0.0, loss0, grad0.amax(), 1);

    for epoch in 0..epochs {
        indices.shuffle(&mut rng);
        for chunk in indices.chunks(batch) {
            let subset = data.subset(chunk);
            scratch.set_from_flat(&theta)?;
            let grad = scratch.loss_gradient(&subset)?;
            rule.apply(&mut theta, &grad);
        }
        scratch.set_from_flat(&theta)?;
        let loss = scratch.mse_loss(data)?;
        if !loss.is_finite() {
            return Err(Error::Diverged);
        }
        let grad = scratch.loss_gradient(data)?;
        rec.on_accept(epoch + 1, (epoch + 1) as f64, &theta, loss, grad.amax());
    }
    scratch.set_from_flat(&theta)?;
    let loss = scratch.mse_loss(data)?;
    let grad = scratch.loss_gradient(data)?;
    Ok(rec.finish(epochs, epochs as f64, &theta, loss, grad.amax(), StopReason::MaxSteps, epochs))
}
