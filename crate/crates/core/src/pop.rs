//! Closed-form infinite-data (population) loss for erf networks under
//! standard-normal inputs, the optimal-readout system, and the h(w)
//! stability function of the two-neuron toy model.
//!
//! For `sigma(z) = erf(z/sqrt2)` and Gaussian inputs the preactivation pair
//! of two neurons is bivariate normal, so every expectation
//! `<sigma(z_j) sigma(z_k)>` reduces to bivariate-normal CDFs of the biases
//! and input-weight overlaps. The population loss uses the 1/2 expectation
//! convention; the finite-data mse keeps the plain 1/N mean.

use crate::activation::ActivationKind;
use crate::error::{Error, Result};
use crate::flow::FlowSystem;
use crate::quad::QuadratureRule;
use crate::special::{erf_pair_expectation, erf_pair_expectation_grad};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Default quadrature for population expectations: panel-composite
/// Gauss-Legendre of order 64 under the normal density. Doubling the order
/// moves the toy-model results by less than 1e-12; plain Gauss-Hermite
/// needs orders in the thousands for the same integrands.
pub fn default_quadrature() -> &'static QuadratureRule {
    use std::sync::OnceLock;
    static RULE: OnceLock<QuadratureRule> = OnceLock::new();
    RULE.get_or_init(|| QuadratureRule::gauss_legendre(64).expect("fixed order"))
}

/// A single-hidden-layer erf teacher with explicit biases.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErfTeacher {
    pub a: Vec<f64>,
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl ErfTeacher {
    pub fn new(a: Vec<f64>, w: Vec<Vec<f64>>, b: Vec<f64>) -> Result<ErfTeacher> {
        if a.len() != w.len() || a.len() != b.len() || a.is_empty() {
            return Err(Error::DimensionMismatch("teacher lists must align".into()));
        }
        Ok(ErfTeacher { a, w, b })
    }

    /// The two-neuron scalar-input teacher
    /// `erf((5x + 2.5)/sqrt2) + erf((5x - 2.5)/sqrt2)`.
    pub fn symmetric_pair_toy() -> ErfTeacher {
        ErfTeacher {
            a: vec![1.0, 1.0],
            w: vec![vec![5.0], vec![5.0]],
            b: vec![2.5, -2.5],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w[0].len()
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        let mut out = 0.0;
        for j in 0..self.a.len() {
            let mut z = self.b[j];
            for (k, wk) in self.w[j].iter().enumerate() {
                z += wk * x[k];
            }
            out += self.a[j] * ActivationKind::ErfScaled.value(z);
        }
        out
    }

    pub fn eval_scalar(&self, x: f64) -> f64 {
        self.eval(&DVector::from_vec(vec![x]))
    }
}

/// Student shape for the population loss: a single hidden erf layer with
/// optional biases and no output bias. The flat layout is
/// `(w_1, ..., w_r, [b_1..b_r,] a_1, ..., a_r)`, matching the network
/// flattening convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentShape {
    pub d: usize,
    pub r: usize,
    pub has_bias: bool,
}

impl StudentShape {
    pub fn param_count(&self) -> usize {
        self.r * self.d + self.r + if self.has_bias { self.r } else { 0 }
    }

    fn weight(&self, theta: &DVector<f64>, j: usize) -> DVector<f64> {
        DVector::from_fn(self.d, |k, _| theta[j * self.d + k])
    }

    fn bias(&self, theta: &DVector<f64>, j: usize) -> f64 {
        if self.has_bias {
            theta[self.r * self.d + j]
        } else {
            0.0
        }
    }

    fn out(&self, theta: &DVector<f64>, j: usize) -> f64 {
        let base = self.r * self.d + if self.has_bias { self.r } else { 0 };
        theta[base + j]
    }

    fn out_index(&self, j: usize) -> usize {
        self.r * self.d + if self.has_bias { self.r } else { 0 } + j
    }

    pub fn student_eval(&self, theta: &DVector<f64>, x: &DVector<f64>) -> f64 {
        let mut f = 0.0;
        for j in 0..self.r {
            let z = self.weight(theta, j).dot(x) + self.bias(theta, j);
            f += self.out(theta, j) * ActivationKind::ErfScaled.value(z);
        }
        f
    }
}

/// Population-loss problem: a fixed erf teacher, a student shape, and the
/// cached teacher second moment `<f*^2>`.
#[derive(Debug, Clone)]
pub struct PopLossSpec {
    pub teacher: ErfTeacher,
    pub student: StudentShape,
    teacher_sq: f64,
}

fn overlap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl PopLossSpec {
    pub fn new(teacher: ErfTeacher, student: StudentShape) -> Result<PopLossSpec> {
        if teacher.input_dim() != student.d {
            return Err(Error::DimensionMismatch(
                "teacher and student input dims differ".into(),
            ));
        }
        let mut teacher_sq = 0.0;
        for j in 0..teacher.a.len() {
            for k in 0..teacher.a.len() {
                teacher_sq += teacher.a[j]
                    * teacher.a[k]
                    * erf_pair_expectation(
                        teacher.b[j],
                        teacher.b[k],
                        overlap(&teacher.w[j], &teacher.w[j]),
                        overlap(&teacher.w[j], &teacher.w[k]),
                        overlap(&teacher.w[k], &teacher.w[k]),
                    );
            }
        }
        Ok(PopLossSpec { teacher, student, teacher_sq })
    }

    /// Cached `<f*(x)^2>`.
    pub fn teacher_second_moment(&self) -> f64 {
        self.teacher_sq
    }

    /// `l(theta) = 1/2 <f*^2> - sum a*_j a_k g_jk + 1/2 sum a_j a_k g_jk`.
    pub fn population_loss(&self, theta: &DVector<f64>) -> f64 {
        let s = &self.student;
        let r = s.r;
        let ws: Vec<DVector<f64>> = (0..r).map(|j| s.weight(theta, j)).collect();
        let sq: Vec<f64> = ws.iter().map(|w| w.dot(w)).collect();

        let mut cross = 0.0;
        for j in 0..self.teacher.a.len() {
            let wt = &self.teacher.w[j];
            let wt_sq = overlap(wt, wt);
            for k in 0..r {
                let kappa: f64 = wt.iter().zip(ws[k].iter()).map(|(a, b)| a * b).sum();
                cross += self.teacher.a[j]
                    * s.out(theta, k)
                    * erf_pair_expectation(self.teacher.b[j], s.bias(theta, k), wt_sq, kappa, sq[k]);
            }
        }

        let mut within = 0.0;
        for j in 0..r {
            for k in 0..r {
                within += s.out(theta, j)
                    * s.out(theta, k)
                    * erf_pair_expectation(
                        s.bias(theta, j),
                        s.bias(theta, k),
                        sq[j],
                        ws[j].dot(&ws[k]),
                        sq[k],
                    );
            }
        }

        0.5 * self.teacher_sq - cross + 0.5 * within
    }

    /// Analytic gradient of the population loss with respect to theta.
    pub fn population_gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        let s = &self.student;
        let r = s.r;
        let d = s.d;
        let ws: Vec<DVector<f64>> = (0..r).map(|j| s.weight(theta, j)).collect();
        let sq: Vec<f64> = ws.iter().map(|w| w.dot(w)).collect();
        let mut grad = DVector::zeros(theta.len());

        // cross term: -sum_{j teacher, k student} a*_j a_k g(b*_j, b_k, ...)
        for j in 0..self.teacher.a.len() {
            let wt = DVector::from_vec(self.teacher.w[j].clone());
            let wt_sq = wt.dot(&wt);
            for k in 0..r {
                let kappa = wt.dot(&ws[k]);
                let g = erf_pair_expectation(self.teacher.b[j], s.bias(theta, k), wt_sq, kappa, sq[k]);
                let dg = erf_pair_expectation_grad(
                    self.teacher.b[j],
                    s.bias(theta, k),
                    wt_sq,
                    kappa,
                    sq[k],
                );
                let a_star = self.teacher.a[j];
                let a_k = s.out(theta, k);
                grad[s.out_index(k)] -= a_star * g;
                if s.has_bias {
                    grad[r * d + k] -= a_star * a_k * dg[1];
                }
                for c in 0..d {
                    grad[k * d + c] -= a_star * a_k * (dg[3] * wt[c] + dg[4] * 2.0 * ws[k][c]);
                }
            }
        }

        // within term: +1/2 sum_{jk} a_j a_k g(b_j, b_k, ...)
        for j in 0..r {
            for k in 0..r {
                let kappa = ws[j].dot(&ws[k]);
                let g = erf_pair_expectation(s.bias(theta, j), s.bias(theta, k), sq[j], kappa, sq[k]);
                let dg = erf_pair_expectation_grad(
                    s.bias(theta, j),
                    s.bias(theta, k),
                    sq[j],
                    kappa,
                    sq[k],
                );
                let a_j = s.out(theta, j);
                let a_k = s.out(theta, k);
                let half = 0.5 * a_j * a_k;
                grad[s.out_index(j)] += 0.5 * a_k * g;
                grad[s.out_index(k)] += 0.5 * a_j * g;
                if s.has_bias {
                    grad[r * d + j] += half * dg[0];
                    grad[r * d + k] += half * dg[1];
                }
                for c in 0..d {
                    grad[j * d + c] += half * (dg[2] * 2.0 * ws[j][c] + dg[3] * ws[k][c]);
                    grad[k * d + c] += half * (dg[4] * 2.0 * ws[k][c] + dg[3] * ws[j][c]);
                }
            }
        }
        grad
    }
}

/// Population flow system for gradient-flow integration of the analytic
/// loss. The Hessian is central finite differences of the analytic gradient.
pub struct PopSystem {
    pub spec: PopLossSpec,
}

impl FlowSystem for PopSystem {
    fn dim(&self) -> usize {
        self.spec.student.param_count()
    }

    fn loss(&mut self, theta: &DVector<f64>) -> Result<f64> {
        Ok(self.spec.population_loss(theta))
    }

    fn gradient(&mut self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.spec.population_gradient(theta))
    }

    fn hessian(&mut self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        let p = theta.len();
        let step = 1e-5;
        let mut h = DMatrix::zeros(p, p);
        for k in 0..p {
            let mut tp = theta.clone();
            tp[k] += step;
            let gp = self.spec.population_gradient(&tp);
            tp[k] = theta[k] - step;
            let gm = self.spec.population_gradient(&tp);
            for i in 0..p {
                h[(i, k)] = (gp[i] - gm[i]) / (2.0 * step);
            }
        }
        for i in 0..p {
            for j in (i + 1)..p {
                let v = 0.5 * (h[(i, j)] + h[(j, i)]);
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        Ok(h)
    }
}

/// Optimal readout pair `(a0, c0)` for the scalar-input no-bias student in
/// the eps -> 0 limit at mean input weight `w`: solves the 2x2 system with
/// Gauss-Hermite expectations.
pub fn optimal_readouts(
    w: f64,
    teacher: &ErfTeacher,
    quad: &QuadratureRule,
) -> Result<(f64, f64)> {
    let act = ActivationKind::ErfScaled;
    let m11 = quad.normal_expectation(|x| {
        let s1 = act.d1(w * x);
        x * x * s1 * s1
    });
    let m12 = quad.normal_expectation(|x| act.value(w * x) * x * act.d1(w * x));
    let m22 = quad.normal_expectation(|x| {
        let s = act.value(w * x);
        s * s
    });
    let r1 = quad.normal_expectation(|x| teacher.eval_scalar(x) * x * act.d1(w * x));
    let r2 = quad.normal_expectation(|x| teacher.eval_scalar(x) * act.value(w * x));

    let det = m11 * m22 - m12 * m12;
    let scale = m11.abs().max(m22.abs()).max(1e-300);
    if det.abs() < 1e-14 * scale * scale {
        return Err(Error::SingularSystem(format!(
            "readout system is singular at w = {w}"
        )));
    }
    let a0 = (r1 * m22 - r2 * m12) / det;
    let c0 = (m11 * r2 - m12 * r1) / det;
    Ok((a0, c0))
}

/// Residual of the readout linear system (back-substitution check).
pub fn readout_residual(
    w: f64,
    a0: f64,
    c0: f64,
    teacher: &ErfTeacher,
    quad: &QuadratureRule,
) -> f64 {
    let act = ActivationKind::ErfScaled;
    let m11 = quad.normal_expectation(|x| {
        let s1 = act.d1(w * x);
        x * x * s1 * s1
    });
    let m12 = quad.normal_expectation(|x| act.value(w * x) * x * act.d1(w * x));
    let m22 = quad.normal_expectation(|x| {
        let s = act.value(w * x);
        s * s
    });
    let r1 = quad.normal_expectation(|x| teacher.eval_scalar(x) * x * act.d1(w * x));
    let r2 = quad.normal_expectation(|x| teacher.eval_scalar(x) * act.value(w * x));
    let e1 = a0 * m11 + c0 * m12 - r1;
    let e2 = a0 * m12 + c0 * m22 - r2;
    e1.abs().max(e2.abs())
}

/// The limit loss `l(w, 0) = 1/2 <(f0 - f*)^2>` and the quadratic
/// coefficient `h(w) = <f2 (f0 - f*)>`, with optimal readouts at `w`.
pub fn limit_loss_and_h(
    w: f64,
    teacher: &ErfTeacher,
    quad: &QuadratureRule,
) -> Result<(f64, f64)> {
    let (a0, c0) = optimal_readouts(w, teacher, quad)?;
    let act = ActivationKind::ErfScaled;
    let f0 = |x: f64| c0 * act.value(w * x) + a0 * x * act.d1(w * x);
    let f2 = |x: f64| 0.5 * c0 * x * x * act.d2(w * x) + a0 / 6.0 * x * x * x * act.d3(w * x);
    let l0 = quad.normal_expectation(|x| {
        let res = f0(x) - teacher.eval_scalar(x);
        0.5 * res * res
    });
    let h = quad.normal_expectation(|x| f2(x) * (f0(x) - teacher.eval_scalar(x)));
    Ok((l0, h))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WSweepRow {
    pub w: f64,
    pub limit_loss: f64,
    pub h: f64,
    pub a0: f64,
    pub c0: f64,
    pub stable: bool,
}

/// Sweep of `l(w, 0)`, `h(w)` and the optimal readouts over a w grid.
pub fn w_sweep(teacher: &ErfTeacher, grid: &[f64], quad: &QuadratureRule) -> Vec<WSweepRow> {
    grid.iter()
        .filter_map(|&w| {
            let (a0, c0) = optimal_readouts(w, teacher, quad).ok()?;
            let (l0, h) = limit_loss_and_h(w, teacher, quad).ok()?;
            Some(WSweepRow { w, limit_loss: l0, h, a0, c0, stable: h > 0.0 })
        })
        .collect()
}

pub fn write_w_sweep_csv<W: Write>(rows: &[WSweepRow], mut out: W) -> Result<()> {
    writeln!(out, "w,limit_loss,h,a0,c0,stable")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.w, r.limit_loss, r.h, r.a0, r.c0, r.stable
        )?;
    }
    Ok(())
}

/// Interior critical points of `l(w, 0)` on a sweep, located by sign changes
/// of the centered difference derivative and refined by bisection.
pub fn sweep_critical_points(
    teacher: &ErfTeacher,
    grid: &[f64],
    quad: &QuadratureRule,
) -> Result<Vec<f64>> {
    let loss = |w: f64| -> Result<f64> { Ok(limit_loss_and_h(w, teacher, quad)?.0) };
    let h = 1e-5;
    let deriv = |w: f64| -> Result<f64> { Ok((loss(w + h)? - loss(w - h)?) / (2.0 * h)) };
    let mut out = Vec::new();
    let mut prev = deriv(grid[0])?;
    for win in grid.windows(2) {
        let cur = deriv(win[1])?;
        if prev == 0.0 {
            out.push(win[0]);
        } else if prev * cur < 0.0 {
            let (mut lo, mut hi) = (win[0], win[1]);
            let mut dlo = prev;
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                let dm = deriv(mid)?;
                if dlo * dm <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                    dlo = dm;
                }
            }
            out.push(0.5 * (lo + hi));
        }
        prev = cur;
    }
    Ok(out)
}
