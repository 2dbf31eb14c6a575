//! Log-barrier interior point method for small dense smooth convex
//! problems with inequality constraints `g_k(x) <= 0`.
//!
//! The barrier problem `mu f(x) - sum_k log(-g_k(x))` is centered with
//! damped Newton steps (Cholesky, backtracking line search) and `mu` grows
//! geometrically until the duality gap bound `m / mu` drops below the
//! tolerance. Variables are rescaled internally by [`SmoothProblem::scale`]
//! so that problems mixing bits, seconds and watts stay well conditioned.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A twice differentiable function of the decision vector.
pub trait Smooth: Send + Sync {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    /// `None` means the Hessian is identically zero.
    fn hessian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>>;
}

/// `coeffs . x + offset`
#[derive(Debug, Clone)]
pub struct Affine {
    pub coeffs: DVector<f64>,
    pub offset: f64,
}

impl Affine {
    pub fn new(coeffs: DVector<f64>, offset: f64) -> Self {
        Self { coeffs, offset }
    }

    /// `x[index] * sign + offset`
    pub fn coordinate(dim: usize, index: usize, sign: f64, offset: f64) -> Self {
        let mut coeffs = DVector::zeros(dim);
        coeffs[index] = sign;
        Self { coeffs, offset }
    }
}

impl Smooth for Affine {
    fn value(&self, x: &DVector<f64>) -> f64 {
        self.coeffs.dot(x) + self.offset
    }
    fn gradient(&self, _x: &DVector<f64>) -> DVector<f64> {
        self.coeffs.clone()
    }
    fn hessian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

/// `x' A x / 2 + b' x + c`
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
}

impl Smooth for Quadratic {
    fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.a * x)) + self.b.dot(x) + self.c
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b
    }
    fn hessian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.a.clone())
    }
}

/// One inequality `func(x) <= 0`. Phase 1 compares violations across
/// constraints, so each should be scaled to order one. A domain
/// constraint marks where the other functions are defined (and convex);
/// phase 1 keeps it hard instead of relaxing it.
pub struct Constraint {
    pub func: Box<dyn Smooth>,
    pub label: String,
    pub domain: bool,
}

impl Constraint {
    pub fn new(label: impl Into<String>, func: impl Smooth + 'static) -> Self {
        Self { func: Box::new(func), label: label.into(), domain: false }
    }
}

/// `coeffs . x <= bound`
#[derive(Debug, Clone)]
pub struct AffineBudget {
    pub coeffs: DVector<f64>,
    pub bound: f64,
}

pub struct SmoothProblem {
    pub dim: usize,
    pub objective: Box<dyn Smooth>,
    pub constraints: Vec<Constraint>,
    pub budget: Option<AffineBudget>,
    /// Typical magnitude of each variable.
    pub scale: DVector<f64>,
}

impl SmoothProblem {
    pub fn new(dim: usize, objective: impl Smooth + 'static) -> Self {
        Self {
            dim,
            objective: Box::new(objective),
            constraints: Vec::new(),
            budget: None,
            scale: DVector::from_element(dim, 1.0),
        }
    }

    pub fn with_scale(mut self, scale: DVector<f64>) -> Self {
        assert_eq!(scale.len(), self.dim);
        self.scale = scale;
        self
    }

    pub fn push(&mut self, label: impl Into<String>, func: impl Smooth + 'static) {
        self.constraints.push(Constraint::new(label, func));
    }

    pub fn push_domain(&mut self, label: impl Into<String>, func: impl Smooth + 'static) {
        self.constraints.push(Constraint { domain: true, ..Constraint::new(label, func) });
    }

    /// All inequalities, the budget last, as `g(x) <= 0` functions.
    fn inequalities(&self) -> (Vec<&dyn Smooth>, Option<Affine>) {
        let budget = self
            .budget
            .as_ref()
            .map(|b| Affine::new(b.coeffs.clone(), -b.bound));
        (self.constraints.iter().map(|c| c.func.as_ref()).collect(), budget)
    }

    pub fn constraint_count(&self) -> usize {
        self.constraints.len() + usize::from(self.budget.is_some())
    }

    /// Largest constraint value at `x` (negative means strictly feasible).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let (cons, budget) = self.inequalities();
        let mut worst = f64::NEG_INFINITY;
        for g in cons.iter().copied().chain(budget.as_ref().map(|b| b as &dyn Smooth)) {
            let v = g.value(x);
            if !(v <= worst) {
                worst = v;
            }
        }
        worst
    }

    pub fn is_strictly_feasible(&self, x: &DVector<f64>) -> bool {
        self.max_violation(x) < 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierSettings {
    pub initial_barrier_weight: f64,
    pub barrier_growth: f64,
    /// Centering stops once half the squared Newton decrement is below this.
    pub newton_tol: f64,
    pub max_newton_steps: usize,
    pub backtrack_alpha: f64,
    pub backtrack_beta: f64,
    pub duality_gap_tol: f64,
}

impl Default for BarrierSettings {
    fn default() -> Self {
        Self {
            initial_barrier_weight: 1.0,
            barrier_growth: 10.0,
            newton_tol: 1e-8,
            max_newton_steps: 50,
            backtrack_alpha: 0.25,
            backtrack_beta: 0.5,
            duality_gap_tol: 1e-8,
        }
    }
}

impl BarrierSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.initial_barrier_weight > 0.0
            && self.barrier_growth > 1.0
            && self.newton_tol > 0.0
            && self.max_newton_steps > 0
            && self.backtrack_alpha > 0.0
            && self.backtrack_alpha < 0.5
            && self.backtrack_beta > 0.0
            && self.backtrack_beta < 1.0
            && self.duality_gap_tol > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid barrier settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct BarrierOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    /// Total Newton steps over all centering rounds.
    pub newton_steps: usize,
    pub centering_rounds: usize,
}

/// Barrier problem in scaled coordinates `x = scale .* y`.
struct Barrier<'a> {
    objective: &'a dyn Smooth,
    constraints: Vec<&'a dyn Smooth>,
    scale: &'a DVector<f64>,
}

impl Barrier<'_> {
    fn unscale(&self, y: &DVector<f64>) -> DVector<f64> {
        y.component_mul(self.scale)
    }

    /// Barrier value, or `None` outside the strict domain.
    fn value(&self, y: &DVector<f64>, mu: f64) -> Option<f64> {
        let x = self.unscale(y);
        let mut phi = mu * self.objective.value(&x);
        for g in &self.constraints {
            let v = g.value(&x);
            if !(v < 0.0) {
                return None;
            }
            phi -= (-v).ln();
        }
        phi.is_finite().then_some(phi)
    }

    fn derivatives(&self, y: &DVector<f64>, mu: f64) -> (DVector<f64>, DMatrix<f64>) {
        let x = self.unscale(y);
        let n = x.len();
        let mut grad = self.objective.gradient(&x) * mu;
        let mut hess = match self.objective.hessian(&x) {
            Some(h) => h * mu,
            None => DMatrix::zeros(n, n),
        };
        for g in &self.constraints {
            let v = g.value(&x);
            let dg = g.gradient(&x);

            let inv = -1.0 / v;
            grad.axpy(inv, &dg, 1.0);
            hess.ger(inv * inv, &dg, &dg, 1.0);
            if let Some(h) = g.hessian(&x) {
                hess += h * inv;
            }
        }
        // chain rule for x = scale .* y
        let grad = grad.component_mul(self.scale);
        let s = DMatrix::from_diagonal(self.scale);
        (grad, &s * hess * &s)
    }
}

fn symmetrize(h: &mut DMatrix<f64>) {
    let t = h.transpose();
    *h += t;
    *h *= 0.5;
}

/// Solves `H dx = -grad`, boosting the diagonal when the factorization
/// fails. A clearly indefinite `H` is reported as a non-convex hand-off.
fn newton_direction(mut hess: DMatrix<f64>, grad: &DVector<f64>) -> Result<DVector<f64>> {
    symmetrize(&mut hess);
    if hess.iter().any(|v| !v.is_finite()) || grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite barrier derivatives".into()));
    }
    if let Some(ch) = Cholesky::new(hess.clone()) {
        return Ok(-ch.solve(grad));
    }
    let trace = hess.trace().abs().max(f64::MIN_POSITIVE);
    let min_eig = SymmetricEigen::new(hess.clone()).eigenvalues.min();
    if min_eig < -1e-8 * trace {
        return Err(Error::NotConvex(format!(
            "barrier Hessian has eigenvalue {min_eig:.3e} (trace {trace:.3e})"
        )));
    }
    let mut boost = 1e-12 * trace;
    for _ in 0..8 {
        let mut h = hess.clone();
        for i in 0..h.nrows() {
            h[(i, i)] += boost;
        }
        if let Some(ch) = Cholesky::new(h) {
            return Ok(-ch.solve(grad));
        }
        boost *= 100.0;
    }
    Err(Error::Numerical("Newton system could not be factored".into()))
}

/// Damped Newton centering at fixed `mu`; returns the steps taken.
fn center(barrier: &Barrier<'_>, y: &mut DVector<f64>, mu: f64, s: &BarrierSettings) -> Result<usize> {
    let mut phi = barrier
        .value(y, mu)
        .ok_or_else(|| Error::Numerical("iterate left the barrier domain".into()))?;
    for step in 0..s.max_newton_steps {
        let (grad, hess) = barrier.derivatives(y, mu);
        let dy = newton_direction(hess, &grad)?;
        let slope = grad.dot(&dy);
        if slope > 0.0 {
            return Err(Error::NotConvex(format!("Newton direction ascends (slope {slope:.3e})")));
        }
        if -slope / 2.0 <= s.newton_tol {
            return Ok(step);
        }
        let mut t = 1.0;
        loop {
            let trial = &*y + &dy * t;
            if let Some(v) = barrier.value(&trial, mu) {
                if v <= phi + s.backtrack_alpha * t * slope {
                    *y = trial;
                    phi = v;
                    break;
                }
            }
            t *= s.backtrack_beta;
            if t < 1e-14 {
                // no measurable progress left at this barrier weight
                return Ok(step + 1);
            }
        }
    }
    Ok(s.max_newton_steps)
}

fn barrier_core(
    objective: &dyn Smooth,
    constraints: Vec<&dyn Smooth>,
    scale: &DVector<f64>,
    x0: &DVector<f64>,
    settings: &BarrierSettings,
) -> Result<BarrierOutcome> {
    settings.validate()?;
    let f0 = objective.value(x0);
    if !f0.is_finite() {
        return Err(Error::Numerical(format!("objective is {f0} at the start point")));
    }
    for g in &constraints {
        let v = g.value(x0);
        if v.is_nan() {
            return Err(Error::Numerical("constraint is NaN at the start point".into()));
        }
        if !(v < 0.0) {
            return Err(Error::Domain(format!("start point is not strictly feasible ({v:.3e})")));
        }
    }
    let m = constraints.len() as f64;
    let barrier = Barrier { objective, constraints, scale };
    let mut y = x0.component_div(scale);
    let mut mu = if m == 0.0 { 1.0 } else { settings.initial_barrier_weight };
    let mut newton_steps = 0;
    let mut rounds = 0;
    loop {
        newton_steps += center(&barrier, &mut y, mu, settings)?;
        rounds += 1;
        if m == 0.0 || m / mu <= settings.duality_gap_tol || rounds >= 200 {
            break;
        }
        mu *= settings.barrier_growth;
    }
    let x = barrier.unscale(&y);
    let value = objective.value(&x);
    if !value.is_finite() {
        return Err(Error::Numerical(format!("objective is {value} at the solution")));
    }
    if value > f0 {
        return Ok(BarrierOutcome { x: x0.clone(), value: f0, newton_steps, centering_rounds: rounds });
    }
    Ok(BarrierOutcome { x, value, newton_steps, centering_rounds: rounds })
}

/// Minimizes a convex problem from a strictly feasible start.
pub fn minimize_barrier(
    problem: &SmoothProblem,
    x0: &DVector<f64>,
    settings: &BarrierSettings,
) -> Result<BarrierOutcome> {
    if x0.len() != problem.dim {
        return Err(Error::Config("start point has the wrong dimension".into()));
    }
    let (mut cons, budget) = problem.inequalities();
    if let Some(b) = &budget {
        cons.push(b);
    }
    barrier_core(problem.objective.as_ref(), cons, &problem.scale, x0, settings)
}

/// `min c.x` s.t. `A x <= b`, `lb <= x <= ub`, from a strictly feasible `x0`.
pub fn solve_lp(
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lb: &DVector<f64>,
    ub: &DVector<f64>,
    x0: &DVector<f64>,
    settings: &BarrierSettings,
) -> Result<DVector<f64>> {
    let n = c.len();
    let mut problem = SmoothProblem::new(n, Affine::new(c.clone(), 0.0));
    for (k, row) in a.row_iter().enumerate() {
        problem.push(format!("row{k}"), Affine::new(row.transpose(), -b[k]));
    }
    for i in 0..n {
        if lb[i].is_finite() {
            problem.push(format!("lb{i}"), Affine::coordinate(n, i, -1.0, lb[i]));
        }
        if ub[i].is_finite() {
            problem.push(format!("ub{i}"), Affine::coordinate(n, i, 1.0, -ub[i]));
        }
    }
    Ok(minimize_barrier(&problem, x0, settings)?.x)
}

#[derive(Debug, Clone)]
pub enum Phase1Outcome {
    Feasible(DVector<f64>),
    /// No strictly feasible point: `s_star` is the smallest achievable
    /// maximum constraint value, attained at `x`; `worst` indexes the most
    /// violated constraint there (the budget, if any, comes last).
    Infeasible { s_star: f64, x: DVector<f64>, worst: usize },
}

/// `g(x) - s` on the lifted vector `(x, s)`, or plain `g(x)` when the
/// flag is off.
struct Lifted<'a>(&'a dyn Smooth, bool);

fn split(z: &DVector<f64>) -> (DVector<f64>, f64) {
    let n = z.len() - 1;
    (z.rows(0, n).into_owned(), z[n])
}

impl Smooth for Lifted<'_> {
    fn value(&self, z: &DVector<f64>) -> f64 {
        let (x, s) = split(z);
        if self.1 {
            self.0.value(&x) - s
        } else {
            self.0.value(&x)
        }
    }
    fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        let (x, _) = split(z);
        let g = self.0.gradient(&x);
        let mut out = DVector::from_element(z.len(), if self.1 { -1.0 } else { 0.0 });
        out.rows_mut(0, g.len()).copy_from(&g);
        out
    }
    fn hessian(&self, z: &DVector<f64>) -> Option<DMatrix<f64>> {
        let (x, _) = split(z);
        self.0.hessian(&x).map(|h| {
            let mut out = DMatrix::zeros(z.len(), z.len());
            out.view_mut((0, 0), (h.nrows(), h.ncols())).copy_from(&h);
            out
        })
    }
}

/// Finds a strictly feasible point by minimizing the largest constraint
/// value `s` over `(x, s)` (with `s >= -1`). Domain constraints and the
/// budget are not relaxed and must hold strictly at the guess. A strictly
/// feasible guess is returned unchanged.
pub fn phase1_feasible(
    problem: &SmoothProblem,
    x_guess: &DVector<f64>,
    settings: &BarrierSettings,
) -> Result<Phase1Outcome> {
    let n = problem.dim;
    let (mut cons, budget) = problem.inequalities();
    if let Some(b) = &budget {
        cons.push(b);
    }
    let is_domain: Vec<bool> = problem
        .constraints
        .iter()
        .map(|c| c.domain)
        .chain(budget.iter().map(|_| true))
        .collect();
    if cons
        .iter()
        .zip(&is_domain)
        .any(|(g, &hard)| hard && !(g.value(x_guess) < 0.0))
    {
        return Err(Error::Domain("phase-1 guess violates a domain constraint".into()));
    }
    let values: Vec<f64> = cons.iter().map(|g| g.value(x_guess)).collect();
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Numerical("constraint is NaN at the phase-1 guess".into()));
    }
    let start_max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if start_max < 0.0 {
        return Ok(Phase1Outcome::Feasible(x_guess.clone()));
    }
    if !start_max.is_finite() {
        return Err(Error::Numerical("constraint is infinite at the phase-1 guess".into()));
    }

    let lifted: Vec<Lifted<'_>> = cons
        .iter()
        .zip(&is_domain)
        .map(|(g, &hard)| Lifted(*g, !hard))
        .collect();
    let floor = Affine::coordinate(n + 1, n, -1.0, -1.0);
    let mut lifted_refs: Vec<&dyn Smooth> = lifted.iter().map(|l| l as &dyn Smooth).collect();
    lifted_refs.push(&floor);
    let objective = Affine::coordinate(n + 1, n, 1.0, 0.0);
    let mut scale = DVector::from_element(n + 1, 1.0);
    scale.rows_mut(0, n).copy_from(&problem.scale);
    let mut z0 = DVector::zeros(n + 1);
    z0.rows_mut(0, n).copy_from(x_guess);
    z0[n] = start_max + 1.0;

    let out = barrier_core(&objective, lifted_refs, &scale, &z0, settings)?;
    let (x, _) = split(&out.x);
    let values: Vec<f64> = cons.iter().map(|g| g.value(&x)).collect();
    let (worst, s_star) = values
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |a, (k, v)| if v > a.1 { (k, v) } else { a });
    if s_star < -1e-10 {
        Ok(Phase1Outcome::Feasible(x))
    } else {
        Ok(Phase1Outcome::Infeasible { s_star, x, worst })
    }
}

/// `g(x) + margin - s_k` on `(x, s_1..s_K)`; a slack index of `usize::MAX`
/// leaves out the slack.
struct Elastic<'a> {
    g: &'a dyn Smooth,
    n: usize,
    slack: usize,
    margin: f64,
}

impl Smooth for Elastic<'_> {
    fn value(&self, z: &DVector<f64>) -> f64 {
        let x = z.rows(0, self.n).into_owned();
        let s = if self.slack == usize::MAX { 0.0 } else { z[self.n + self.slack] };
        self.g.value(&x) + self.margin - s
    }
    fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        let x = z.rows(0, self.n).into_owned();
        let mut out = DVector::zeros(z.len());
        out.rows_mut(0, self.n).copy_from(&self.g.gradient(&x));
        if self.slack != usize::MAX {
            out[self.n + self.slack] = -1.0;
        }
        out
    }
    fn hessian(&self, z: &DVector<f64>) -> Option<DMatrix<f64>> {
        let x = z.rows(0, self.n).into_owned();
        self.g.hessian(&x).map(|h| {
            let mut out = DMatrix::zeros(z.len(), z.len());
            out.view_mut((0, 0), (self.n, self.n)).copy_from(&h);
            out
        })
    }
}

/// Elastic phase 1: minimizes the total violation `sum_k max(0, g_k + margin)`
/// of the relaxable constraints through one slack per constraint, keeping
/// domain constraints and the budget hard. Unlike [`phase1_feasible`] the
/// measure is a sum, so progress on one constraint is not masked by
/// another. Returns the point and its total violation.
pub fn phase1_elastic(
    problem: &SmoothProblem,
    x_guess: &DVector<f64>,
    margin: f64,
    settings: &BarrierSettings,
) -> Result<(DVector<f64>, f64)> {
    let n = problem.dim;
    let total = |x: &DVector<f64>| -> f64 {
        problem
            .constraints
            .iter()
            .filter(|c| !c.domain)
            .map(|c| (c.func.value(x) + margin).max(0.0))
            .sum()
    };
    let start_total = total(x_guess);
    if start_total == 0.0 {
        return Ok((x_guess.clone(), 0.0));
    }
    if !start_total.is_finite() {
        return Err(Error::Numerical("constraint is not finite at the phase-1 guess".into()));
    }
    let soft: Vec<&Constraint> = problem.constraints.iter().filter(|c| !c.domain).collect();
    let k = soft.len();
    let (_, budget) = problem.inequalities();
    let mut cons: Vec<Box<dyn Smooth + '_>> = Vec::new();
    for (j, c) in soft.iter().enumerate() {
        cons.push(Box::new(Elastic { g: c.func.as_ref(), n, slack: j, margin }));
        cons.push(Box::new(Affine::coordinate(n + k, n + j, -1.0, 0.0)));
    }
    for c in problem.constraints.iter().filter(|c| c.domain) {
        cons.push(Box::new(Elastic { g: c.func.as_ref(), n, slack: usize::MAX, margin: 0.0 }));
    }
    if let Some(b) = &budget {
        let mut coeffs = DVector::zeros(n + k);
        coeffs.rows_mut(0, n).copy_from(&b.coeffs);
        cons.push(Box::new(Affine::new(coeffs, b.offset)));
    }
    let mut obj = DVector::zeros(n + k);
    obj.rows_mut(n, k).fill(1.0);
    let objective = Affine::new(obj, 0.0);
    let mut scale = DVector::from_element(n + k, 1.0);
    scale.rows_mut(0, n).copy_from(&problem.scale);
    let mut z0 = DVector::zeros(n + k);
    z0.rows_mut(0, n).copy_from(x_guess);
    for (j, c) in soft.iter().enumerate() {
        z0[n + j] = (c.func.value(x_guess) + margin).max(0.0) + 1.0;
    }
    let refs: Vec<&dyn Smooth> = cons.iter().map(|c| c.as_ref()).collect();
    let out = barrier_core(&objective, refs, &scale, &z0, settings)?;
    let x = out.x.rows(0, n).into_owned();
    let end_total = total(&x);
    if end_total <= start_total {
        Ok((x, end_total))
    } else {
        Ok((x_guess.clone(), start_total))
    }
}

/// Rounding units allowed per function evaluation when bounding the noise
/// of a central difference.
const FD_ROUNDING_UNITS: f64 = 16.0;

fn derivative_error(f: &dyn Smooth, x: &DVector<f64>, steps: &DVector<f64>) -> f64 {
    let n = x.len();
    let grad = f.gradient(x);
    let hess = f.hessian(x).unwrap_or_else(|| DMatrix::zeros(n, n));
    let mut fd_grad = DVector::zeros(n);
    let mut fd_hess = DMatrix::zeros(n, n);
    let mut grad_noise = DVector::zeros(n);
    let mut hess_noise = DMatrix::zeros(n, n);
    let unit = FD_ROUNDING_UNITS * f64::EPSILON;
    for i in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += steps[i];
        xm[i] -= steps[i];
        let (fp, fm) = (f.value(&xp), f.value(&xm));
        fd_grad[i] = (fp - fm) / (2.0 * steps[i]);
        grad_noise[i] = unit * (fp.abs() + fm.abs()) / (2.0 * steps[i]);
        let (gp, gm) = (f.gradient(&xp), f.gradient(&xm));
        fd_hess.set_column(i, &((&gp - &gm) / (2.0 * steps[i])));
        hess_noise.set_column(i, &((gp.abs() + gm.abs()) * (unit / (2.0 * steps[i]))));
    }
    // deviation beyond the rounding noise of the difference quotient,
    // relative to the largest entry
    let rel = |a: &[f64], b: &[f64], noise: &[f64]| {
        let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        a.iter().zip(b).zip(noise).fold(0.0f64, |m, ((p, q), e)| m.max(((p - q).abs() - e).max(0.0) / scale))
    };
    rel(grad.as_slice(), fd_grad.as_slice(), grad_noise.as_slice())
        .max(rel(hess.as_slice(), fd_hess.as_slice(), hess_noise.as_slice()))
}

/// Worst relative deviation between analytic and central-difference
/// gradients and Hessians over the objective and every constraint, after
/// discounting the rounding noise of each difference quotient. The step
/// for coordinate `i` is `h * max(|x_i|, scale_i)`.
pub fn check_derivatives(problem: &SmoothProblem, x: &DVector<f64>, h: f64) -> f64 {
    let steps = DVector::from_fn(problem.dim, |i, _| h * x[i].abs().max(problem.scale[i]));
    let (cons, budget) = problem.inequalities();
    std::iter::once(problem.objective.as_ref())
        .chain(cons.iter().copied())
        .chain(budget.as_ref().map(|b| b as &dyn Smooth))
        .map(|f| derivative_error(f, x, &steps))
        .fold(0.0, f64::max)
}

/// Smallest ratio `lambda_min / sum |lambda|` over the (scaled) Hessians of
/// the objective and every constraint at `x`. For a PSD Hessian the
/// denominator is its trace. Nonnegative up to rounding for convex
/// problems; affine functions count as zero.
pub fn curvature_ratio(problem: &SmoothProblem, x: &DVector<f64>) -> f64 {
    let s = DMatrix::from_diagonal(&problem.scale);
    let (cons, _) = problem.inequalities();
    std::iter::once(problem.objective.as_ref())
        .chain(cons.iter().copied())
        .filter_map(|f| f.hessian(x))
        .map(|h| {
            let mut h = &s * h * &s;
            symmetrize(&mut h);
            let eig = SymmetricEigen::new(h).eigenvalues;
            let norm: f64 = eig.iter().map(|l| l.abs()).sum();
            if norm < f64::MIN_POSITIVE {
                return 0.0;
            }
            eig.min() / norm
        })
        .fold(0.0, f64::min)
}

/// Smallest `lambda_min / trace` over the (scaled) Hessians of the
/// objective and every constraint at `x`. Zero Hessians count as zero; a
/// Hessian with a negative eigenvalue and nonpositive trace gives
/// `-inf`.
pub fn psd_margin(problem: &SmoothProblem, x: &DVector<f64>) -> f64 {
    let s = DMatrix::from_diagonal(&problem.scale);
    let (cons, _) = problem.inequalities();
    std::iter::once(problem.objective.as_ref())
        .chain(cons.iter().copied())
        .filter_map(|f| f.hessian(x))
        .map(|h| {
            let mut h = &s * h * &s;
            symmetrize(&mut h);
            let trace = h.trace();
            let lambda = SymmetricEigen::new(h).eigenvalues.min();
            if lambda >= 0.0 {
                0.0
            } else if trace > 0.0 {
                lambda / trace
            } else {
                f64::NEG_INFINITY
            }
        })
        .fold(0.0, f64::min)
}
