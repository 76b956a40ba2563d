//! Basis pursuit denoising: `min ||x||_1` subject to `||y - A x||_2 <= delta`,
//! optionally with `x` real and nonnegative.
//!
//! The solver is ADMM on the splitting
//! `min ||z||_1 + I(||w - y|| <= delta)` s.t. `z = x`, `w = A x`. Because both
//! constraints share one penalty, the x-update system `(I + A^H A)` does not
//! depend on the penalty and is factored once (in its `K x K` dual form when
//! `A` is wide). A support-restricted least-squares polish makes the returned
//! point feasible and keeps the exact zeros of the shrinkage step.

use nalgebra::{Cholesky, ComplexField, DMatrix, DVector, Dyn, SVD};

use crate::error::{invalid, Error, Result};
use crate::wave_model::C64;

/// Relative slack on the ball constraint accepted as feasible.
pub const FEASIBILITY_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverTolerances {
    /// Absolute and relative tolerance on the primal residual.
    pub primal_tol: f64,
    /// Absolute and relative tolerance on the dual residual.
    pub dual_tol: f64,
    pub max_iters: usize,
}

impl Default for SolverTolerances {
    fn default() -> Self {
        Self {
            primal_tol: 1e-6,
            dual_tol: 1e-6,
            max_iters: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpdnProblem {
    a: DMatrix<C64>,
    y: DVector<C64>,
    delta: f64,
    nonneg: bool,
    tolerances: SolverTolerances,
    trace: bool,
}

impl BpdnProblem {
    pub fn new(a: DMatrix<C64>, y: DVector<C64>, delta: f64) -> Result<Self> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(invalid("system matrix is empty"));
        }
        if a.nrows() != y.len() {
            return Err(invalid(format!(
                "matrix has {} rows but measurement has {} entries",
                a.nrows(),
                y.len()
            )));
        }
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(invalid(format!("delta must be finite and nonnegative, got {delta}")));
        }
        if a.iter().chain(y.iter()).any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(invalid("system contains non-finite entries"));
        }
        if let Some(k) = (0..a.ncols()).find(|&k| a.column(k).iter().all(|z| z.norm_sqr() == 0.0)) {
            return Err(invalid(format!("column {k} of the system matrix is zero")));
        }
        Ok(Self {
            a,
            y,
            delta,
            nonneg: false,
            tolerances: SolverTolerances::default(),
            trace: false,
        })
    }

    /// Restricts the solution to real nonnegative values.
    pub fn nonneg(mut self, nonneg: bool) -> Self {
        self.nonneg = nonneg;
        self
    }

    pub fn with_tolerances(mut self, tolerances: SolverTolerances) -> Self {
        self.tolerances = tolerances;
        self
    }

    /// Records one [`TraceRow`] per iteration.
    pub fn with_trace(mut self, trace: bool) -> Self {
        self.trace = trace;
        self
    }

    pub fn a(&self) -> &DMatrix<C64> {
        &self.a
    }

    pub fn y(&self) -> &DVector<C64> {
        &self.y
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn is_nonneg(&self) -> bool {
        self.nonneg
    }

    pub fn tolerances(&self) -> SolverTolerances {
        self.tolerances
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    /// L1 norm of the running average of the shrinkage iterates, in the
    /// units of the unscaled problem.
    pub objective: f64,
    pub primal_res: f64,
    pub dual_res: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpdnSolution {
    /// Real and nonnegative (zero imaginary parts) for nonnegative problems.
    pub x: DVector<C64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub trace: Vec<TraceRow>,
}

pub fn l1_norm(x: &DVector<C64>) -> f64 {
    x.iter().map(|z| z.norm()).sum()
}

fn residual(a: &DMatrix<C64>, y: &DVector<C64>, x: &DVector<C64>) -> f64 {
    (y - a * x).norm()
}

/// True when `y` lies in the range of `A` up to `1e-9 ||y||`.
pub fn delta_zero_feasibility(a: &DMatrix<C64>, y: &DVector<C64>) -> bool {
    let scale = y.norm();
    if scale == 0.0 {
        return true;
    }
    let svd = SVD::new(a.clone(), true, true);
    match svd.solve(y, 1e-12 * svd.singular_values.max()) {
        Ok(x) => residual(a, y, &x) <= 1e-9 * scale,
        Err(_) => false,
    }
}

/// Advisory measurement count `ceil(c_k * s * ln(n / s))` for recovering an
/// `s`-sparse vector of length `n`. `n` is real so the bound can be evaluated
/// at non-integer ratios.
pub fn min_measurements(sparsity: usize, n: f64, c_k: f64) -> Result<usize> {
    if sparsity == 0 || !(n > sparsity as f64) {
        return Err(invalid(format!("need 1 <= sparsity < n, got sparsity {sparsity}, n {n}")));
    }
    if !(c_k > 0.0 && c_k.is_finite()) {
        return Err(invalid("c_k must be positive"));
    }
    let value = c_k * sparsity as f64 * (n / sparsity as f64).ln();
    Ok(((value - 1e-12).ceil() as usize).max(1))
}

pub fn solve_bpdn(problem: &BpdnProblem) -> Result<BpdnSolution> {
    let (a, y) = (&problem.a, &problem.y);
    let y_norm = y.norm();
    let n = a.ncols();
    let zero = BpdnSolution {
        x: DVector::zeros(n),
        residual_norm: y_norm,
        iterations: 0,
        converged: true,
        objective: 0.0,
        trace: Vec::new(),
    };
    if y_norm <= problem.delta {
        return Ok(zero);
    }

    let mut delta = problem.delta;
    if delta == 0.0 {
        if !delta_zero_feasibility(a, y) {
            return Err(invalid("delta = 0 but the measurement is outside the range of the system matrix"));
        }
        delta = 1e-10 * y_norm;
    }

    // Work on a unit-norm problem: A / ||A||_2, y / ||y||.
    let a_scale = spectral_norm(a);
    let a_n = a / C64::from(a_scale);
    let y_n = y / C64::from(y_norm);
    let delta_n = delta / y_norm;
    let unscale = y_norm / a_scale;

    let run = if problem.nonneg {
        let (ar, yr) = stack_real(&a_n, &y_n);
        let out = admm(&ar, &yr, delta_n, true, problem.tolerances, problem.trace, unscale);
        Run {
            x: out.x.map(|v| C64::new(v, 0.0)),
            converged: out.converged,
            iterations: out.iterations,
            trace: out.trace,
        }
    } else {
        admm(&a_n, &y_n, delta_n, false, problem.tolerances, problem.trace, unscale)
    };

    let x = run.x * C64::from(unscale);
    let residual_norm = residual(a, y, &x);
    let feasible = residual_norm <= delta * (1.0 + FEASIBILITY_SLACK);
    if problem.nonneg && !feasible {
        let (ar, yr) = stack_real(a, y);
        let best = nnls(&ar, &yr);
        let best_residual = (&yr - &ar * &best).norm();
        if best_residual > delta * (1.0 + FEASIBILITY_SLACK) {
            return Err(Error::InfeasibleNonneg {
                delta,
                best_residual,
            });
        }
    }
    Ok(BpdnSolution {
        objective: l1_norm(&x),
        x,
        residual_norm,
        iterations: run.iterations,
        converged: run.converged && feasible,
        trace: run.trace,
    })
}

struct Run<T: ComplexField> {
    x: DVector<T>,
    converged: bool,
    iterations: usize,
    trace: Vec<TraceRow>,
}

/// Scalars the solver runs on: complex with magnitude shrinkage, or real with
/// shrinkage followed by clamping at zero.
trait Field: ComplexField<RealField = f64> + Copy {
    fn shrink(self, kappa: f64, nonneg: bool) -> Self;
}

impl Field for f64 {
    fn shrink(self, kappa: f64, nonneg: bool) -> Self {
        if nonneg {
            (self - kappa).max(0.0)
        } else {
            self.signum() * (self.abs() - kappa).max(0.0)
        }
    }
}

impl Field for C64 {
    fn shrink(self, kappa: f64, _nonneg: bool) -> Self {
        let mag = self.norm();
        if mag <= kappa {
            C64::new(0.0, 0.0)
        } else {
            self * ((mag - kappa) / mag)
        }
    }
}

/// `(I + A^H A)^{-1}` applied through whichever Gram matrix is smaller.
enum XSolver<T: Field> {
    Dual(Cholesky<T, Dyn>),
    Primal(Cholesky<T, Dyn>),
}

impl<T: Field> XSolver<T> {
    fn new(a: &DMatrix<T>) -> Self {
        let (k, n) = a.shape();
        if k < n {
            let gram = DMatrix::identity(k, k) + a * a.adjoint();
            XSolver::Dual(Cholesky::new(gram).expect("I + A A^H is positive definite"))
        } else {
            let gram = DMatrix::identity(n, n) + a.adjoint() * a;
            XSolver::Primal(Cholesky::new(gram).expect("I + A^H A is positive definite"))
        }
    }

    fn solve(&self, a: &DMatrix<T>, rhs: &DVector<T>) -> DVector<T> {
        match self {
            // (I + A^H A)^{-1} = I - A^H (I + A A^H)^{-1} A
            XSolver::Dual(chol) => rhs - a.adjoint() * chol.solve(&(a * rhs)),
            XSolver::Primal(chol) => chol.solve(rhs),
        }
    }
}

fn admm<T: Field>(
    a: &DMatrix<T>,
    y: &DVector<T>,
    delta: f64,
    nonneg: bool,
    tol: SolverTolerances,
    record: bool,
    unscale: f64,
) -> Run<T> {
    const MU: f64 = 10.0;
    const TAU: f64 = 2.0;
    const ADAPT_EVERY: usize = 10;
    const CERTIFY_EVERY: usize = 10;
    // rho is frozen after this many changes so the fixed-rho convergence
    // guarantee applies
    // rho is frozen after this many changes so the fixed-rho convergence
    // guarantee applies
    const MAX_RHO_CHANGES: usize = 10;
    let (k, n) = a.shape();
    let xs = XSolver::new(a);
    let a_h = a.adjoint();

    let mut z = DVector::<T>::zeros(n);
    let mut w = DVector::<T>::zeros(k);
    let mut u = DVector::<T>::zeros(n);
    let mut v = DVector::<T>::zeros(k);
    let mut rho = 1.0;
    let mut rho_changes = 0;
    let mut trace = Vec::new();
    let mut polished: Option<DVector<T>> = None;
    let mut z_sum = DVector::<T>::zeros(n);

    let mut iter = 0;
    while iter < tol.max_iters {
        iter += 1;
        let rhs = (&z - &u) + &a_h * (&w - &v);
        let x = xs.solve(a, &rhs);
        let ax = a * &x;

        let z_old = std::mem::replace(&mut z, (&x + &u).map(|t| t.shrink(1.0 / rho, nonneg)));
        let w_old = std::mem::replace(&mut w, project_ball(&(&ax + &v), y, delta));

        let r_x = &x - &z;
        let r_w = &ax - &w;
        u += &r_x;
        v += &r_w;

        let primal = (r_x.norm_squared() + r_w.norm_squared()).sqrt();
        let dual = rho * ((&z - &z_old) + &a_h * (&w - &w_old)).norm();
        let eps_pri = ((n + k) as f64).sqrt() * tol.primal_tol
            + tol.primal_tol * (x.norm_squared() + ax.norm_squared()).sqrt().max((z.norm_squared() + w.norm_squared()).sqrt());
        let eps_dual = (n as f64).sqrt() * tol.dual_tol + tol.dual_tol * rho * (&u + &a_h * &v).norm();

        if record {
            z_sum += &z;
            trace.push(TraceRow {
                iter,
                objective: z_sum.iter().map(|t| t.modulus()).sum::<f64>() / iter as f64 * unscale,
                primal_res: primal,
                dual_res: dual,
            });
        }

        let residuals_met = primal <= eps_pri && dual <= eps_dual;
        if residuals_met || iter % CERTIFY_EVERY == 0 {
            let support = z.iter().filter(|t| t.modulus() > 0.0).count();
            if residuals_met || (support > 0 && support <= k) {
                if let Some(p) = polish(a, y, &z, delta, nonneg) {
                    // Stop on the residual test, or earlier when the duality
                    // gap against the current multipliers proves optimality.
                    let objective: f64 = p.iter().map(|t| t.modulus()).sum();
                    let eta = &v * T::from_real(-rho);
                    let bound = dual_bound(&a_h, y, &eta, delta, nonneg);
                    if residuals_met || objective - bound <= tol.primal_tol * objective {
                        polished = Some(p);
                        break;
                    }
                }
            }
        }

        if iter % ADAPT_EVERY == 0 && rho_changes < MAX_RHO_CHANGES {
            let new_rho = if primal > MU * dual {
                rho * TAU
            } else if dual > MU * primal {
                rho / TAU
            } else {
                rho
            };
            if new_rho != rho {
                let ratio = T::from_real(rho / new_rho);
                u *= ratio;
                v *= ratio;
                rho = new_rho;
                rho_changes += 1;
            }
        }
    }
    let converged = polished.is_some();
    Run {
        x: polished.unwrap_or(z),
        converged,
        iterations: iter,
        trace,
    }
}

/// Lower bound on the optimal L1 norm from a dual vector `eta`:
/// `(Re <y, eta> - delta ||eta||) / s` where `s` scales `A^H eta` into the
/// dual-feasible set (`|.| <= 1`, or `Re <= 1` when nonnegative).
fn dual_bound<T: Field>(a_h: &DMatrix<T>, y: &DVector<T>, eta: &DVector<T>, delta: f64, nonneg: bool) -> f64 {
    let g = a_h * eta;
    let s = g
        .iter()
        .map(|t| if nonneg { t.real() } else { t.modulus() })
        .fold(0.0, f64::max);
    if s <= 0.0 {
        return 0.0;
    }
    let value = y.dotc(eta).real() - delta * eta.norm();
    (value / s).max(0.0)
}

fn project_ball<T: Field>(p: &DVector<T>, center: &DVector<T>, radius: f64) -> DVector<T> {
    let d = p - center;
    let dist = d.norm();
    if dist <= radius {
        p.clone()
    } else {
        center + d * T::from_real(radius / dist)
    }
}

/// Moves the shrinkage iterate the least distance towards the least-squares
/// fit on its own support that makes it feasible. Returns `None` when the
/// support cannot reach the ball.
fn polish<T: Field>(a: &DMatrix<T>, y: &DVector<T>, z: &DVector<T>, delta: f64, nonneg: bool) -> Option<DVector<T>> {
    let limit = delta * (1.0 + 0.5 * FEASIBILITY_SLACK);
    let r0 = y - a * z;
    if r0.norm() <= limit {
        return Some(z.clone());
    }
    let support: Vec<usize> = (0..z.len()).filter(|&i| z[i].modulus() > 0.0).collect();
    if support.is_empty() {
        return None;
    }
    let a_s = a.select_columns(&support);
    let fit = if nonneg {
        // real case only: T = f64
        let a_r = a_s.map(|t| t.real());
        let y_r = y.map(|t| t.real());
        nnls(&a_r, &y_r).map(T::from_real)
    } else {
        let svd = SVD::new(a_s.clone(), true, true);
        let cutoff = 1e-12 * svd.singular_values.max();
        svd.solve(y, cutoff).ok()?
    };
    let mut target = DVector::<T>::zeros(z.len());
    for (j, &i) in support.iter().enumerate() {
        target[i] = fit[j];
    }
    let d = a * (&target - z);
    // ||r0 - t d||^2 = delta^2  =>  |d|^2 t^2 - 2 Re<r0, d> t + |r0|^2 - delta^2 = 0
    let qa = d.norm_squared();
    let qb = r0.dotc(&d).real();
    let qc = r0.norm_squared() - limit * limit;
    let disc = qb * qb - qa * qc;
    if qa == 0.0 || disc < 0.0 {
        return None;
    }
    let t = (qb - disc.sqrt()) / qa;
    if !(0.0..=1.0 + 1e-12).contains(&t) {
        return None;
    }
    let x = z + (&target - z) * T::from_real(t.min(1.0));
    (residual_t(a, y, &x) <= delta * (1.0 + FEASIBILITY_SLACK)).then_some(x)
}

fn residual_t<T: Field>(a: &DMatrix<T>, y: &DVector<T>, x: &DVector<T>) -> f64 {
    (y - a * x).norm()
}

fn stack_real(a: &DMatrix<C64>, y: &DVector<C64>) -> (DMatrix<f64>, DVector<f64>) {
    let k = a.nrows();
    let ar = DMatrix::from_fn(2 * k, a.ncols(), |r, c| if r < k { a[(r, c)].re } else { a[(r - k, c)].im });
    let yr = DVector::from_fn(2 * k, |r, _| if r < k { y[r].re } else { y[r - k].im });
    (ar, yr)
}

fn spectral_norm(a: &DMatrix<C64>) -> f64 {
    // power iteration on A^H A from a fixed start
    let n = a.ncols();
    let mut v = DVector::from_element(n, C64::new(1.0 / (n as f64).sqrt(), 0.0));
    let mut sigma = 0.0;
    for _ in 0..500 {
        let w = a.adjoint() * (a * &v);
        let norm = w.norm();
        if norm == 0.0 {
            break;
        }
        let next = norm.sqrt();
        v = w / C64::from(norm);
        if (next - sigma).abs() <= 1e-12 * next {
            sigma = next;
            break;
        }
        sigma = next;
    }
    sigma.max(a.column_iter().map(|c| c.norm()).fold(0.0, f64::max))
}

/// Nonnegative least squares `min ||b - A x||, x >= 0` (Lawson-Hanson).
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-12 * a.norm() * b.norm().max(1e-300);
    for _ in 0..3 * n + 10 {
        let grad = a.transpose() * (b - a * &x);
        let candidate = (0..n)
            .filter(|&j| !passive[j] && grad[j] > tol)
            .max_by(|&i, &j| grad[i].total_cmp(&grad[j]).then(j.cmp(&i)));
        let Some(j) = candidate else { break };
        passive[j] = true;
        loop {
            let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let svd = SVD::new(a.select_columns(&idx), true, true);
            let s_p = svd.solve(b, 1e-12 * svd.singular_values.max()).expect("SVD with vectors");
            if s_p.iter().all(|&v| v > 0.0) {
                for (k, &i) in idx.iter().enumerate() {
                    x[i] = s_p[k];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (k, &i) in idx.iter().enumerate() {
                if s_p[k] <= 0.0 {
                    alpha = alpha.min(x[i] / (x[i] - s_p[k]));
                }
            }
            for (k, &i) in idx.iter().enumerate() {
                x[i] += alpha * (s_p[k] - x[i]);
                if x[i] <= 1e-15 {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    x
}

/// Exhaustive reference for small instances: the least L1 norm attained by
/// any feasible point supported on at most `max_support` entries.
///
/// Each support is solved on its own with cyclic coordinate descent on the
/// penalized form `1/2 ||y - A_S x||^2 + lambda ||x||_1`, with `lambda`
/// bisected until the residual meets `delta`. Supports are visited by
/// increasing size, and the search stops early once the best point found
/// satisfies the global optimality conditions of the full problem. Returns
/// `None` when no support of the allowed size is feasible.
///
/// ```
/// use csbeam::sparse_solver::{brute_force_bpdn, BpdnProblem};
/// use csbeam::wave_model::C64;
/// use nalgebra::{DMatrix, DVector};
///
/// let a = DMatrix::<C64>::identity(3, 3);
/// let y = DVector::from_vec(vec![C64::new(2.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)]);
/// let best = brute_force_bpdn(&BpdnProblem::new(a, y, 0.5).unwrap(), 2).unwrap();
/// assert!(best.certified);
/// assert!((best.value - 1.5).abs() < 1e-9);
/// ```
pub fn brute_force_bpdn(problem: &BpdnProblem, max_support: usize) -> Option<OracleSolution> {
    let (a, y, delta) = (&problem.a, &problem.y, problem.delta);
    let n = a.ncols();
    if y.norm() <= delta {
        return Some(OracleSolution { value: 0.0, x: DVector::zeros(n), certified: true });
    }
    let mut best: Option<(f64, DVector<C64>)> = None;
    for size in 1..=max_support.min(n) {
        for support in combinations(n, size) {
            let a_s = a.select_columns(&support);
            let Some(x_s) = restricted_bpdn(&a_s, y, delta, problem.nonneg) else {
                continue;
            };
            let value = l1_norm(&x_s);
            if best.as_ref().is_none_or(|(b, _)| value < *b) {
                let mut x = DVector::zeros(n);
                for (j, &i) in support.iter().enumerate() {
                    x[i] = x_s[j];
                }
                best = Some((value, x));
            }
        }
        if best.as_ref().is_some_and(|(_, x)| is_kkt_point(problem, x, 1e-7)) {
            let (value, x) = best?;
            return Some(OracleSolution { value, x, certified: true });
        }
    }
    best.map(|(value, x)| OracleSolution { value, x, certified: false })
}

/// Result of [`brute_force_bpdn`].
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    /// Least L1 norm found.
    pub value: f64,
    pub x: DVector<C64>,
    /// True when `x` passed the optimality check for the full problem, so
    /// `value` is the global optimum and not only the best over small supports.
    pub certified: bool,
}

/// Checks the optimality conditions of the constrained problem at `x`: the
/// residual sits on the ball and the correlation `g = A^H r` has one common
/// magnitude `lambda` on the support, aligned with `x`, and at most `lambda`
/// elsewhere. Nonnegative problems constrain only the real part of `g`.
fn is_kkt_point(problem: &BpdnProblem, x: &DVector<C64>, tol: f64) -> bool {
    let r = &problem.y - &problem.a * x;
    if (r.norm() - problem.delta).abs() > tol.sqrt() * problem.delta {
        return false;
    }
    let g = problem.a.adjoint() * r;
    let support: Vec<usize> = (0..x.len()).filter(|&k| x[k].norm() > 0.0).collect();
    if support.is_empty() {
        return false;
    }
    // only the real part of g is constrained when x is confined to the reals
    let part = |z: C64| if problem.nonneg { C64::from(z.re) } else { z };
    let lambda = support.iter().map(|&k| part(g[k]).norm()).sum::<f64>() / support.len() as f64;
    let on_support = support.iter().all(|&k| {
        let aligned = x[k] / C64::from(x[k].norm()) * lambda;
        (part(g[k]) - aligned).norm() <= tol.sqrt() * lambda
    });
    let off_support = (0..x.len()).filter(|k| !support.contains(k)).all(|k| {
        let excess = if problem.nonneg { g[k].re } else { g[k].norm() };
        excess <= lambda * (1.0 + tol)
    });
    on_support && off_support
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == k {
            out.push(current.clone());
            return;
        }
        for i in start..n {
            current.push(i);
            rec(i + 1, n, k, current, out);
            current.pop();
        }
    }
    rec(0, n, k, &mut current, &mut out);
    out
}

fn restricted_bpdn(a: &DMatrix<C64>, y: &DVector<C64>, delta: f64, nonneg: bool) -> Option<DVector<C64>> {
    // The unpenalized fit decides feasibility of the support.
    let ls = if nonneg {
        let (ar, yr) = stack_real(a, y);
        nnls(&ar, &yr).map(|v| C64::new(v, 0.0))
    } else {
        let svd = SVD::new(a.clone(), true, true);
        svd.solve(y, 1e-12 * svd.singular_values.max()).ok()?
    };
    if residual(a, y, &ls) > delta {
        return None;
    }
    // Above lambda_max = max |a_j^H y| the penalized solution is zero.
    let mut hi = (a.adjoint() * y).iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut lo = 0.0;
    let mut x_lo = ls;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let x = coordinate_descent(a, y, mid, nonneg, x_lo.clone());
        if residual(a, y, &x) <= delta {
            lo = mid;
            x_lo = x;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    Some(x_lo)
}

fn coordinate_descent(a: &DMatrix<C64>, y: &DVector<C64>, lambda: f64, nonneg: bool, mut x: DVector<C64>) -> DVector<C64> {
    let n = a.ncols();
    let norms: Vec<f64> = (0..n).map(|j| a.column(j).norm_squared()).collect();
    let mut r = y - a * &x;
    for _ in 0..20_000 {
        let mut change = 0.0_f64;
        for j in 0..n {
            let col = a.column(j);
            // correlation with the partial residual that excludes x_j
            let c = col.dotc(&r) + x[j] * norms[j];
            let new = if nonneg {
                C64::new((c.re - lambda).max(0.0) / norms[j], 0.0)
            } else {
                c.shrink(lambda, false) / norms[j]
            };
            let step = new - x[j];
            if step.norm_sqr() > 0.0 {
                r -= col * step;
                x[j] = new;
                change = change.max(step.norm());
            }
        }
        if change <= 1e-14 * x.norm().max(1e-300) {
            break;
        }
    }
    x
}
