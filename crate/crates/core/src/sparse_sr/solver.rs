//! L1-regularised least squares for the relaxed sparse-recovery problem
//! `min ||a||_1  s.t.  ||D a - x||_2 <= eps`.
//!
//! The constraint is met by continuation: a monotone FISTA run on the
//! penalised form `1/2 ||D a - x||^2 + w ||a||_1`, warm-started while `w` is
//! halved until the residual drops below `eps` or the iteration budget runs
//! out. Columns of `D` are normalised to unit length inside the solver and
//! coefficients are rescaled on return.

use crate::error::{param, Result};

const CONTINUATION_FACTOR: f64 = 0.5;

/// Measurements with a smaller norm are solved by `alpha = 0`.
const ZERO_SIGNAL: f64 = 1e-12;

/// Solver knobs. `epsilon` and `lasso_weight` are relative: the residual
/// tolerance is `epsilon * ||x||_2` and the first penalty is
/// `lasso_weight * ||D^T x||_inf` (on the normalised columns).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub epsilon: f64,
    pub lasso_weight: f64,
    /// Total FISTA iterations across all continuation stages.
    pub max_iterations: usize,
    pub convergence_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { epsilon: 0.01, lasso_weight: 0.1, max_iterations: 500, convergence_tol: 1e-6 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(self.epsilon) || !ok(self.lasso_weight) || !ok(self.convergence_tol) || self.max_iterations == 0 {
            return param(format!("solver settings must all be positive: {self:?}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// Residual constraint satisfied.
    Converged,
    /// `x` was zero (or orthogonal to every atom); the zero code is returned.
    Trivial,
    /// Budget exhausted before the residual constraint held; the last
    /// iterate is returned.
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    pub alpha: Vec<f64>,
    pub residual_norm: f64,
    pub status: SolveStatus,
    pub iterations: usize,
}

impl SparseCode {
    pub fn nonzeros(&self) -> usize {
        self.alpha.iter().filter(|v| **v != 0.0).count()
    }
}

/// Objective values of the accepted iterates of one continuation stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTrace {
    pub weight: f64,
    pub objective: Vec<f64>,
}

/// Column-major measurement matrix prepared for the solver.
#[derive(Debug, Clone)]
pub struct SensingMatrix {
    rows: usize,
    cols: usize,
    raw: Vec<f64>,
    norms: Vec<f64>,
    // unit-norm columns, stored row-major
    unit_rows: Vec<f64>,
    lipschitz: f64,
}

impl SensingMatrix {
    pub fn from_columns(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return param(format!("matrix data of length {} is not {rows}x{cols}", data.len()));
        }
        let norms: Vec<f64> = data
            .chunks_exact(rows)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let mut unit = data.clone();
        for (c, &n) in unit.chunks_exact_mut(rows).zip(&norms) {
            if n > 0.0 {
                c.iter_mut().for_each(|v| *v /= n);
            }
        }
        let lipschitz = largest_gram_eigenvalue(&unit, rows);
        let mut unit_rows = vec![0.0; rows * cols];
        for (j, col) in unit.chunks_exact(rows).enumerate() {
            for (i, v) in col.iter().enumerate() {
                unit_rows[i * cols + j] = *v;
            }
        }
        Ok(Self { rows, cols, raw: data, norms, unit_rows, lipschitz })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Column-major entries as supplied.
    pub fn data(&self) -> &[f64] {
        &self.raw
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.raw[j * self.rows..(j + 1) * self.rows]
    }

    pub fn column_norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// `out = A_unit * v`.
    fn apply_unit(&self, v: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.unit_rows.chunks_exact(self.cols)) {
            *o = dot(row, v);
        }
    }

    /// `out = A_unit^T r`.
    fn apply_unit_t(&self, r: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (&ri, row) in r.iter().zip(self.unit_rows.chunks_exact(self.cols)) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += ri * a;
            }
        }
    }
}

/// Largest eigenvalue of `A^T A` for column-major `A` with `rows` rows, by
/// power iteration on the `rows x rows` Gram matrix `A A^T`.
fn largest_gram_eigenvalue(a: &[f64], rows: usize) -> f64 {
    let mut gram = vec![0.0; rows * rows];
    for col in a.chunks_exact(rows) {
        for i in 0..rows {
            for j in 0..rows {
                gram[i * rows + j] += col[i] * col[j];
            }
        }
    }
    let mut v = vec![1.0 / (rows as f64).sqrt(); rows];
    let mut lambda = 0.0;
    for _ in 0..2000 {
        let w: Vec<f64> = (0..rows)
            .map(|i| gram[i * rows..(i + 1) * rows].iter().zip(&v).map(|(g, x)| g * x).sum())
            .collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let delta = w.iter().zip(&v).map(|(a, b)| (a / norm - b).abs()).fold(0.0, f64::max);
        v = w.into_iter().map(|x| x / norm).collect();
        lambda = norm;
        if delta < 1e-13 {
            break;
        }
    }
    // power iteration approaches from below; keep the step under 1/L
    lambda * 1.01
}

/// Dot product with independent partial sums so the loop vectorises.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

struct Workspace {
    resid: Vec<f64>,
    grad: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    // images under the matrix of y, z and the last two accepted iterates
    ay: Vec<f64>,
    az: Vec<f64>,
    ax: Vec<f64>,
    ax_prev: Vec<f64>,
}

/// Solves on `matrix`; see the module docs.
pub fn solve(matrix: &SensingMatrix, x: &[f64], cfg: &SolverConfig) -> Result<SparseCode> {
    solve_inner(matrix, x, cfg, None)
}

/// As [`solve`], also returning per-stage objective traces.
pub fn solve_traced(
    matrix: &SensingMatrix,
    x: &[f64],
    cfg: &SolverConfig,
) -> Result<(SparseCode, Vec<StageTrace>)> {
    let mut trace = Vec::new();
    let code = solve_inner(matrix, x, cfg, Some(&mut trace))?;
    Ok((code, trace))
}

fn solve_inner(
    m: &SensingMatrix,
    x: &[f64],
    cfg: &SolverConfig,
    mut trace: Option<&mut Vec<StageTrace>>,
) -> Result<SparseCode> {
    cfg.validate()?;
    if x.len() != m.rows {
        return param(format!("measurement length {} does not match {} matrix rows", x.len(), m.rows));
    }
    let n = m.cols;
    let x_norm = norm2(x);
    let mut ws = Workspace {
        resid: vec![0.0; m.rows],
        grad: vec![0.0; n],
        y: vec![0.0; n],
        z: vec![0.0; n],
        ay: vec![0.0; m.rows],
        az: vec![0.0; m.rows],
        ax: vec![0.0; m.rows],
        ax_prev: vec![0.0; m.rows],
    };
    m.apply_unit_t(x, &mut ws.grad);
    let corr_max = ws.grad.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if x_norm <= ZERO_SIGNAL || corr_max == 0.0 || m.lipschitz == 0.0 {
        return Ok(SparseCode {
            alpha: vec![0.0; n],
            residual_norm: x_norm,
            status: SolveStatus::Trivial,
            iterations: 0,
        });
    }

    let eps = cfg.epsilon * x_norm;
    let step = 1.0 / m.lipschitz;
    let mut weight = cfg.lasso_weight * corr_max;
    let mut beta = vec![0.0; n];
    let mut used = 0;
    let mut residual;
    let status = loop {
        let mut objective = Vec::new();
        used += fista_stage(m, x, weight, step, &mut beta, cfg.max_iterations - used, cfg.convergence_tol, eps, &mut ws, &mut objective);
        m.apply_unit(&beta, &mut ws.resid);
        residual = ws.resid.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if let Some(t) = trace.as_deref_mut() {
            t.push(StageTrace { weight, objective });
        }
        if residual <= eps {
            break SolveStatus::Converged;
        }
        if used >= cfg.max_iterations {
            break SolveStatus::IterationLimit;
        }
        weight *= CONTINUATION_FACTOR;
    };

    let alpha = beta
        .iter()
        .zip(&m.norms)
        .map(|(b, &nrm)| if nrm > 0.0 { b / nrm } else { 0.0 })
        .collect();
    Ok(SparseCode { alpha, residual_norm: residual, status, iterations: used })
}

/// Penalised objective and squared residual at `v`, given `||v||_1`.
/// Leaves `A v` in `image`.
fn objective(m: &SensingMatrix, x: &[f64], v: &[f64], l1: f64, weight: f64, image: &mut [f64]) -> (f64, f64) {
    m.apply_unit(v, image);
    let fit: f64 = image.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
    (0.5 * fit + weight * l1, fit)
}

/// Monotone FISTA on the penalised problem, warm-started at `beta`.
/// Stops early once the accepted iterate satisfies the residual bound `eps`.
/// Returns the number of iterations spent.
#[allow(clippy::too_many_arguments)]
fn fista_stage(
    m: &SensingMatrix,
    x: &[f64],
    weight: f64,
    step: f64,
    beta: &mut Vec<f64>,
    budget: usize,
    tol: f64,
    eps: f64,
    ws: &mut Workspace,
    objective_log: &mut Vec<f64>,
) -> usize {
    let thresh = weight * step;
    let l1 = beta.iter().map(|c| c.abs()).sum();
    let (mut f_cur, fit) = objective(m, x, beta, l1, weight, &mut ws.ax);
    objective_log.push(f_cur);
    if fit.sqrt() <= eps {
        return 0;
    }
    ws.y.copy_from_slice(beta);
    ws.ay.copy_from_slice(&ws.ax);
    let mut t = 1.0f64;
    let mut iters = 0;
    while iters < budget {
        iters += 1;
        // gradient of the smooth part at y
        for ((r, ay), xi) in ws.resid.iter_mut().zip(&ws.ay).zip(x) {
            *r = ay - xi;
        }
        m.apply_unit_t(&ws.resid, &mut ws.grad);
        let (mut diff_sq, mut z_sq, mut z_l1) = (0.0, 0.0, 0.0);
        for j in 0..ws.z.len() {
            let z = soft_threshold(ws.y[j] - step * ws.grad[j], thresh);
            let d = z - ws.y[j];
            diff_sq += d * d;
            z_sq += z * z;
            z_l1 += z.abs();
            ws.z[j] = z;
        }
        let (f_z, fit_z) = objective(m, x, &ws.z, z_l1, weight, &mut ws.az);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let accept = f_z <= f_cur;
        // y = x_k + (t/t')(z - x_k) + ((t-1)/t')(x_k - x_{k-1}), with x_k the
        // accepted iterate
        let (c1, c2) = (t / t_next, (t - 1.0) / t_next);
        for j in 0..ws.z.len() {
            let prev = beta[j];
            let cur = if accept { ws.z[j] } else { prev };
            ws.y[j] = cur + c1 * (ws.z[j] - cur) + c2 * (cur - prev);
            beta[j] = cur;
        }
        // the same affine combination, applied to the matrix images
        std::mem::swap(&mut ws.ax, &mut ws.ax_prev);
        if accept {
            ws.ax.copy_from_slice(&ws.az);
        } else {
            ws.ax.copy_from_slice(&ws.ax_prev);
        }
        for i in 0..ws.ay.len() {
            let (cur, prev) = (ws.ax[i], ws.ax_prev[i]);
            ws.ay[i] = cur + c1 * (ws.az[i] - cur) + c2 * (cur - prev);
        }
        if accept {
            f_cur = f_z;
        }
        objective_log.push(f_cur);
        t = t_next;
        if accept && fit_z.sqrt() <= eps {
            break;
        }
        if diff_sq.sqrt() <= tol * z_sq.sqrt().max(1e-12) {
            break;
        }
    }
    iters
}
