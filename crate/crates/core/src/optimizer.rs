//! Linear-objective convex programs with sum-of-reciprocals constraints,
//!
//! ```text
//!     minimize    sum_j c_j x_j
//!     subject to  sum_j a_ij / x_j <= b_i     for every constraint i
//!                 x > 0
//! ```
//!
//! and the complexity terms built from them. All lower-bound and relaxed
//! complexity terms of weighted collaborative identification fit this form
//! with `a_ij` equal to squared weights and `b_i` equal to half a squared gap.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BanditInstance, MixedView, TopNView};

/// Relative duality gap at which the barrier method stops.
pub const GAP_TOL: f64 = 1e-8;
/// Newton decrement `lambda^2 / 2` below which centering stops.
pub const NEWTON_TOL: f64 = 1e-10;
const MAX_OUTER: usize = 500;
const MAX_INNER: usize = 200;
const BARRIER_GROWTH: f64 = 10.0;

/// One constraint `sum_j a_j / x_j <= rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReciprocalConstraint {
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReciprocalProgram {
    pub costs: Vec<f64>,
    pub constraints: Vec<ReciprocalConstraint>,
}

impl ReciprocalProgram {
    pub fn new(costs: Vec<f64>) -> Self {
        ReciprocalProgram {
            costs,
            constraints: Vec::new(),
        }
    }

    /// Adds `sum a_j / x_j <= rhs`, skipping zero coefficients. A constraint
    /// left with no terms is dropped.
    pub fn add_constraint(&mut self, terms: impl IntoIterator<Item = (usize, f64)>, rhs: f64) {
        let terms: Vec<(usize, f64)> = terms.into_iter().filter(|&(_, a)| a != 0.0).collect();
        if !terms.is_empty() {
            self.constraints.push(ReciprocalConstraint { terms, rhs });
        }
    }

    pub fn var_count(&self) -> usize {
        self.costs.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.costs.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// `sum_j a_ij / x_j` for constraint `i`.
    pub fn load(&self, i: usize, x: &[f64]) -> f64 {
        self.constraints[i].terms.iter().map(|&(j, a)| a / x[j]).sum()
    }

    fn validate(&self) -> Result<Vec<bool>> {
        let n = self.var_count();
        if self.costs.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::domain("objective coefficients must be finite and >= 0"));
        }
        let mut constrained = vec![false; n];
        for (i, con) in self.constraints.iter().enumerate() {
            if !(con.rhs > 0.0) || !con.rhs.is_finite() {
                return Err(Error::domain(format!(
                    "constraint {i} has non-positive rhs {}",
                    con.rhs
                )));
            }
            for &(j, a) in &con.terms {
                if j >= n {
                    return Err(Error::domain(format!("constraint {i} references variable {j}")));
                }
                if !(a > 0.0) || !a.is_finite() {
                    return Err(Error::domain(format!("constraint {i} has coefficient {a}")));
                }
                constrained[j] = true;
            }
        }
        for j in 0..n {
            if constrained[j] && self.costs[j] == 0.0 {
                return Err(Error::domain(format!(
                    "variable {j} has zero cost but appears in a constraint (no minimizer)"
                )));
            }
        }
        Ok(constrained)
    }
}

/// Solution of a [`ReciprocalProgram`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub values: Vec<f64>,
    pub objective: f64,
    /// Lagrange multiplier of each constraint.
    pub multipliers: Vec<f64>,
    /// Largest of the relative stationarity, complementarity and primal
    /// infeasibility residuals.
    pub kkt_residual: f64,
    /// Newton steps taken.
    pub iterations: usize,
}

impl Allocation {
    /// Row-major view, for allocations indexed by `(arm, agent)`.
    pub fn to_matrix(&self, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, &self.values)
    }
}

/// Relative KKT residual of `(x, multipliers)` for `program`.
pub fn kkt_residual(program: &ReciprocalProgram, x: &[f64], multipliers: &[f64]) -> f64 {
    let objective = program.objective(x);
    let scale = if objective > 0.0 { objective } else { 1.0 };
    // x_j * (c_j - sum_i lambda_i a_ij / x_j^2), relative to the objective.
    let mut stationarity: Vec<f64> = program.costs.iter().zip(x).map(|(c, v)| c * v).collect();
    let mut worst: f64 = 0.0;
    for (i, con) in program.constraints.iter().enumerate() {
        for &(j, a) in &con.terms {
            stationarity[j] -= multipliers[i] * a / x[j];
        }
        let load = program.load(i, x);
        let slack = con.rhs - load;
        worst = worst.max((multipliers[i] * slack).abs() / scale);
        worst = worst.max((load / con.rhs - 1.0).max(0.0));
        worst = worst.max((-multipliers[i]).max(0.0));
    }
    stationarity.iter().fold(worst, |acc, s| acc.max(s.abs() / scale))
}

/// Solves a reciprocal program with a logarithmic-barrier interior-point method.
///
/// Variables are rescaled by a strictly feasible start
/// `x0_j = 2 max_{i containing j} (sum_l a_il) / b_i`, at which every
/// constraint has at least half of its right-hand side as slack. Each
/// centering step runs damped Newton iterations until the decrement drops
/// below [`NEWTON_TOL`]; the barrier weight then grows tenfold until the
/// duality gap `m / t` is below [`GAP_TOL`] relative to the objective.
/// Variables that appear in no constraint are set to zero.
pub fn solve_reciprocal_program(program: &ReciprocalProgram) -> Result<Allocation> {
    let constrained = program.validate()?;
    let n_all = program.var_count();
    let active: Vec<usize> = (0..n_all).filter(|&j| constrained[j]).collect();
    if active.is_empty() {
        return Ok(Allocation {
            values: vec![0.0; n_all],
            objective: 0.0,
            multipliers: vec![0.0; program.constraints.len()],
            kkt_residual: 0.0,
            iterations: 0,
        });
    }
    let mut slot = vec![usize::MAX; n_all];
    for (s, &j) in active.iter().enumerate() {
        slot[j] = s;
    }

    // Strictly feasible start.
    let mut start = vec![0.0f64; n_all];
    for con in &program.constraints {
        let total: f64 = con.terms.iter().map(|&(_, a)| a).sum();
        for &(j, _) in &con.terms {
            start[j] = start[j].max(2.0 * total / con.rhs);
        }
    }

    // Normalized problem in u = x / x0: costs sum to one at u = 1 and every
    // right-hand side equals one.
    let scale: Vec<f64> = active.iter().map(|&j| start[j]).collect();
    let start_objective: f64 = active.iter().map(|&j| program.costs[j] * start[j]).sum();
    let cost: Vec<f64> = active
        .iter()
        .map(|&j| program.costs[j] * start[j] / start_objective)
        .collect();
    let rows: Vec<Vec<(usize, f64)>> = program
        .constraints
        .iter()
        .map(|con| {
            con.terms
                .iter()
                .map(|&(j, a)| (slot[j], a / (start[j] * con.rhs)))
                .collect()
        })
        .collect();

    let mut barrier = Barrier {
        cost: &cost,
        rows: &rows,
        t: rows.len() as f64,
    };
    let dim = active.len();
    let mut u = vec![1.0f64; dim];
    let mut iterations = 0usize;
    let mut converged = false;
    for _ in 0..MAX_OUTER {
        let mut centered = false;
        for _ in 0..MAX_INNER {
            iterations += 1;
            match barrier.newton_step(&mut u)? {
                Step::Converged => {
                    centered = true;
                    break;
                }
                Step::Moved => {}
            }
        }
        if !centered {
            return Err(Error::SolverFailure(format!(
                "centering did not converge in {MAX_INNER} Newton steps (t = {:e}, {} variables, {} constraints)",
                barrier.t,
                dim,
                rows.len()
            )));
        }
        let objective: f64 = cost.iter().zip(&u).map(|(c, v)| c * v).sum();
        if rows.len() as f64 / barrier.t <= GAP_TOL * objective {
            converged = true;
            break;
        }
        barrier.t *= BARRIER_GROWTH;
    }
    if !converged {
        return Err(Error::SolverFailure(format!(
            "duality gap above tolerance after {MAX_OUTER} barrier updates"
        )));
    }

    let mut values = vec![0.0; n_all];
    for (s, &j) in active.iter().enumerate() {
        values[j] = u[s] * scale[s];
    }
    // lambda_i = (1 / (t s_i)) * start_objective / b_i in original units.
    let multipliers: Vec<f64> = rows
        .iter()
        .zip(&program.constraints)
        .map(|(row, con)| {
            let slack = 1.0 - row_load(row, &u);
            start_objective / (barrier.t * slack * con.rhs)
        })
        .collect();
    let mut kkt = kkt_residual(program, &values, &multipliers);
    let mut multipliers = multipliers;
    if let Some(fitted) = fit_multipliers(program, &values) {
        let fitted_kkt = kkt_residual(program, &values, &fitted);
        if fitted_kkt < kkt {
            multipliers = fitted;
            kkt = fitted_kkt;
        }
    }
    if let Some((x, lambda)) = polish(program, &values) {
        let polished_kkt = kkt_residual(program, &x, &lambda);
        if polished_kkt < kkt {
            values = x;
            multipliers = lambda;
            kkt = polished_kkt;
        }
    }
    let objective = program.objective(&values);
    Ok(Allocation {
        values,
        objective,
        multipliers,
        kkt_residual: kkt,
        iterations,
    })
}

/// Relative slack below which a constraint counts as active when fitting
/// multipliers.
const ACTIVE_SLACK: f64 = 1e-6;

/// Nonnegative multipliers that best satisfy stationarity at `x`, fitted by
/// least squares over the active constraints. Constraints whose fitted
/// multiplier comes out negative leave the active set one at a time.
fn fit_multipliers(program: &ReciprocalProgram, x: &[f64]) -> Option<Vec<f64>> {
    fit_multipliers_on(program, x, near_active(program, x, ACTIVE_SLACK))
}

/// Constraints whose relative slack at `x` is at most `tol`.
fn near_active(program: &ReciprocalProgram, x: &[f64], tol: f64) -> Vec<usize> {
    (0..program.constraints.len())
        .filter(|&i| {
            let rhs = program.constraints[i].rhs;
            (rhs - program.load(i, x)) / rhs <= tol
        })
        .collect()
}

fn fit_multipliers_on(program: &ReciprocalProgram, x: &[f64], mut active: Vec<usize>) -> Option<Vec<f64>> {
    let objective = program.objective(x);
    if !(objective > 0.0) {
        return None;
    }
    let n = program.var_count();
    while !active.is_empty() {
        // Row j: x_j c_j / obj = sum_i lambda_i a_ij / (x_j obj)
        let mut g = DMatrix::<f64>::zeros(n, active.len());
        for (col, &i) in active.iter().enumerate() {
            for &(j, a) in &program.constraints[i].terms {
                g[(j, col)] += a / (x[j] * objective);
            }
        }
        let rhs = DVector::from_iterator(n, (0..n).map(|j| program.costs[j] * x[j] / objective));
        let lambda = g.svd(true, true).solve(&rhs, 1e-14).ok()?;
        let (worst, value) = lambda
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty");
        if value >= 0.0 {
            let mut out = vec![0.0; program.constraints.len()];
            for (col, &i) in active.iter().enumerate() {
                out[i] = lambda[col];
            }
            return Some(out);
        }
        active.remove(worst);
    }
    None
}

const POLISH_STEPS: usize = 30;

/// Newton's method on the KKT equations of the near-active constraints,
/// started from the barrier point `x`, for several activity thresholds; the
/// candidate with the smallest KKT residual wins. Works in `v = ln x` and scaled
/// multipliers `mu = lambda / obj`:
///
/// `c_j x_j / obj - sum_i mu_i a_ij / x_j = 0` for constrained `j`,
/// `sum_j a_ij / (b_i x_j) - 1 = 0` for active `i`.
///
/// Constraints whose multiplier turns negative are released and the solve
/// restarts. The result is scaled up to exact feasibility.
fn polish(program: &ReciprocalProgram, x: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    let mut tried: Vec<Vec<usize>> = Vec::new();
    for tol in POLISH_SLACKS {
        let candidates = near_active(program, x, tol);
        if candidates.is_empty() || tried.contains(&candidates) {
            continue;
        }
        tried.push(candidates.clone());
        if let Some((values, lambda)) = polish_on(program, x, candidates) {
            let res = kkt_residual(program, &values, &lambda);
            if best.as_ref().is_none_or(|b| res < b.0) {
                best = Some((res, values, lambda));
            }
        }
    }
    best.map(|(_, values, lambda)| (values, lambda))
}

/// Relative slacks tried as active-set thresholds when polishing.
const POLISH_SLACKS: [f64; 4] = [1e-6, 1e-4, 1e-3, 1e-2];

fn polish_on(program: &ReciprocalProgram, x: &[f64], mut active: Vec<usize>) -> Option<(Vec<f64>, Vec<f64>)> {
    let obj = program.objective(x);
    if !(obj > 0.0) {
        return None;
    }
    let vars: Vec<usize> = (0..program.var_count()).filter(|&j| x[j] > 0.0).collect();
    while !active.is_empty() {
        let (nv, na) = (vars.len(), active.len());
        let mut v: Vec<f64> = vars.iter().map(|&j| x[j].ln()).collect();
        let mut mu = vec![0.0; na];
        if let Some(fitted) = fit_multipliers_on(program, x, active.clone()) {
            for (col, &i) in active.iter().enumerate() {
                mu[col] = fitted[i] / obj;
            }
        }
        let residual = |v: &[f64], mu: &[f64]| -> DVector<f64> {
            let mut r = DVector::zeros(nv + na);
            for (s, &j) in vars.iter().enumerate() {
                r[s] = program.costs[j] * v[s].exp() / obj;
            }
            for (col, &i) in active.iter().enumerate() {
                let con = &program.constraints[i];
                let mut load = 0.0;
                for &(j, a) in &con.terms {
                    let s = vars.iter().position(|&q| q == j).expect("constrained");
                    let inv = (-v[s]).exp();
                    r[s] -= mu[col] * a * inv;
                    load += a * inv / con.rhs;
                }
                r[nv + col] = load - 1.0;
            }
            r
        };
        let mut r = residual(&v, &mu);
        for _ in 0..POLISH_STEPS {
            if r.amax() <= 1e-15 {
                break;
            }
            let mut jac = DMatrix::<f64>::zeros(nv + na, nv + na);
            for (s, &j) in vars.iter().enumerate() {
                jac[(s, s)] += program.costs[j] * v[s].exp() / obj;
            }
            for (col, &i) in active.iter().enumerate() {
                let con = &program.constraints[i];
                for &(j, a) in &con.terms {
                    let s = vars.iter().position(|&q| q == j).expect("constrained");
                    let inv = (-v[s]).exp();
                    jac[(s, s)] += mu[col] * a * inv;
                    jac[(s, nv + col)] -= a * inv;
                    jac[(nv + col, s)] -= a * inv / con.rhs;
                }
            }
            let step = jac.svd(true, true).solve(&(-&r), 1e-13).ok()?;
            let mut t = 1.0;
            loop {
                let v_new: Vec<f64> = (0..nv).map(|s| v[s] + t * step[s]).collect();
                let mu_new: Vec<f64> = (0..na).map(|c| mu[c] + t * step[nv + c]).collect();
                let r_new = residual(&v_new, &mu_new);
                if r_new.norm() < r.norm() {
                    v = v_new;
                    mu = mu_new;
                    r = r_new;
                    break;
                }
                t *= 0.5;
                if t < 1e-4 {
                    break;
                }
            }
            if t < 1e-4 {
                break;
            }
        }
        if let Some(col) = (0..na)
            .min_by(|&a, &b| mu[a].total_cmp(&mu[b]))
            .filter(|&c| mu[c] < 0.0)
        {
            active.remove(col);
            continue;
        }
        let mut out = vec![0.0; program.var_count()];
        for (s, &j) in vars.iter().enumerate() {
            out[j] = v[s].exp();
        }
        let worst = (0..program.constraints.len())
            .map(|i| program.load(i, &out) / program.constraints[i].rhs)
            .fold(1.0f64, f64::max);
        for value in &mut out {
            *value *= worst;
        }
        let mut lambda = vec![0.0; program.constraints.len()];
        for (col, &i) in active.iter().enumerate() {
            lambda[i] = mu[col] * obj;
        }
        return Some((out, lambda));
    }
    None
}

fn row_load(row: &[(usize, f64)], u: &[f64]) -> f64 {
    row.iter().map(|&(j, a)| a / u[j]).sum()
}

enum Step {
    Moved,
    Converged,
}

struct Barrier<'a> {
    cost: &'a [f64],
    rows: &'a [Vec<(usize, f64)>],
    t: f64,
}

impl Barrier<'_> {
    /// `t c.u - sum_i ln(1 - g_i(u))`, or `None` outside the domain.
    fn value(&self, u: &[f64]) -> Option<f64> {
        if u.iter().any(|&v| !(v > 0.0)) {
            return None;
        }
        let mut total = self.t * self.cost.iter().zip(u).map(|(c, v)| c * v).sum::<f64>();
        for row in self.rows {
            let slack = 1.0 - row_load(row, u);
            if !(slack > 0.0) {
                return None;
            }
            total -= slack.ln();
        }
        Some(total)
    }

    fn newton_step(&self, u: &mut [f64]) -> Result<Step> {
        let dim = u.len();
        let mut grad = DVector::from_iterator(dim, self.cost.iter().map(|c| self.t * c));
        let mut hess = DMatrix::<f64>::zeros(dim, dim);
        for row in self.rows {
            let slack = 1.0 - row_load(row, u);
            // d g / d u_j = -a_j / u_j^2 ; d^2 g / d u_j^2 = 2 a_j / u_j^3
            for &(j, a) in row {
                let dj = -a / (u[j] * u[j]);
                grad[j] += dj / slack;
                hess[(j, j)] += 2.0 * a / (u[j] * u[j] * u[j]) / slack;
                for &(l, b) in row {
                    let dl = -b / (u[l] * u[l]);
                    hess[(j, l)] += dj * dl / (slack * slack);
                }
            }
        }
        let chol = hess
            .clone()
            .cholesky()
            .ok_or_else(|| Error::SolverFailure("barrier Hessian is not positive definite".into()))?;
        let direction = -chol.solve(&grad);
        let decrement_sq = -grad.dot(&direction);
        if !(decrement_sq.is_finite()) {
            return Err(Error::SolverFailure("non-finite Newton decrement".into()));
        }
        let current = self.value(u).expect("iterate stays strictly feasible");
        // Below the rounding floor of the barrier value no step can be
        // verified as a decrease.
        let floor = 128.0 * f64::EPSILON * (current.abs() + 1.0);
        if decrement_sq / 2.0 <= NEWTON_TOL.max(floor) {
            return Ok(Step::Converged);
        }
        let mut step = 1.0;
        let mut trial = vec![0.0; dim];
        loop {
            for j in 0..dim {
                trial[j] = u[j] + step * direction[j];
            }
            if let Some(v) = self.value(&trial) {
                if v <= current - 0.25 * step * decrement_sq {
                    break;
                }
            }
            step *= 0.5;
            if step < 1e-16 {
                // Rounding floor reached; the iterate is as centered as
                // double precision allows.
                return Ok(Step::Converged);
            }
        }
        u.copy_from_slice(&trial);
        Ok(Step::Moved)
    }
}

/// Per-arm relaxed program: minimize `sum_n tau_n` subject to
/// `sum_n w_{n,m}^2 / tau_n <= gap_m^2 / 2` for every agent `m`.
fn arm_program(gaps: &[f64], weights: &DMatrix<f64>, costs: Vec<f64>) -> ReciprocalProgram {
    let agents = weights.ncols();
    let mut program = ReciprocalProgram::new(costs);
    for m in 0..agents {
        program.add_constraint(
            (0..agents).map(|n| (n, weights[(n, m)] * weights[(n, m)])),
            gaps[m] * gaps[m] / 2.0,
        );
    }
    program
}

fn check_gaps(gaps: &DMatrix<f64>, weights: &DMatrix<f64>) -> Result<()> {
    if gaps.ncols() != weights.ncols() || !weights.is_square() {
        return Err(Error::domain("gap matrix must be K x M with an M x M weight matrix"));
    }
    if gaps.iter().any(|g| !(g > &0.0) || !g.is_finite()) {
        return Err(Error::domain("oracle allocation requires every gap to be positive"));
    }
    Ok(())
}

fn concat(parts: Vec<Allocation>) -> Allocation {
    let mut out = Allocation {
        values: Vec::new(),
        objective: 0.0,
        multipliers: Vec::new(),
        kkt_residual: 0.0,
        iterations: 0,
    };
    for part in parts {
        out.values.extend(part.values);
        out.objective += part.objective;
        out.multipliers.extend(part.multipliers);
        out.kkt_residual = out.kkt_residual.max(part.kkt_residual);
        out.iterations += part.iterations;
    }
    out
}

/// Solves one arm's relaxed program: the `M` sampling targets for arm `k`.
pub fn oracle_allocation_arm(gaps: &[f64], weights: &DMatrix<f64>) -> Result<Allocation> {
    if gaps.len() != weights.ncols() || gaps.iter().any(|g| !(g > &0.0) || !g.is_finite()) {
        return Err(Error::domain("oracle allocation requires M positive gaps"));
    }
    solve_reciprocal_program(&arm_program(gaps, weights, vec![1.0; gaps.len()]))
}

/// The relaxed oracle allocation for a `K x M` gap matrix. The program
/// decouples across arms, so each arm is solved as its own `M`-variable
/// problem. Values are row-major in `(arm, agent)`.
pub fn oracle_allocation(gaps: &DMatrix<f64>, weights: &DMatrix<f64>) -> Result<Allocation> {
    check_gaps(gaps, weights)?;
    let parts = gaps
        .row_iter()
        .map(|row| {
            let row: Vec<f64> = row.iter().copied().collect();
            oracle_allocation_arm(&row, weights)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(concat(parts))
}

/// The relaxed program over all `K M` variables at once (row-major), used to
/// cross-check the decoupled solve.
pub fn relaxed_program(gaps: &DMatrix<f64>, weights: &DMatrix<f64>, costs: &DMatrix<f64>) -> ReciprocalProgram {
    let (arms, agents) = gaps.shape();
    let mut program = ReciprocalProgram::new(
        (0..arms)
            .flat_map(|k| (0..agents).map(move |m| (k, m)))
            .map(|(k, m)| costs[(k, m)])
            .collect(),
    );
    for k in 0..arms {
        for m in 0..agents {
            program.add_constraint(
                (0..agents).map(|n| (k * agents + n, weights[(n, m)] * weights[(n, m)])),
                gaps[(k, m)] * gaps[(k, m)] / 2.0,
            );
        }
    }
    program
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ComplexityKind {
    /// Exploration lower bound.
    TStar,
    /// Relaxed exploration complexity, within a factor 2 of `TStar`.
    TTilde,
    /// Regret lower-bound constant.
    CStar,
    /// Relaxed regret constant, within a factor 4 of `CStar`.
    CTilde,
    /// Top-N exploration lower bound.
    NStar,
    /// Relaxed Top-N exploration complexity.
    NTilde,
}

impl ComplexityKind {
    pub const ALL: [ComplexityKind; 6] = [
        ComplexityKind::TStar,
        ComplexityKind::TTilde,
        ComplexityKind::CStar,
        ComplexityKind::CTilde,
        ComplexityKind::NStar,
        ComplexityKind::NTilde,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ComplexityKind::TStar => "T_STAR",
            ComplexityKind::TTilde => "T_TILDE",
            ComplexityKind::CStar => "C_STAR",
            ComplexityKind::CTilde => "C_TILDE",
            ComplexityKind::NStar => "N_STAR",
            ComplexityKind::NTilde => "N_TILDE",
        }
    }

    fn needs_positive_diagonal(self) -> bool {
        matches!(
            self,
            ComplexityKind::TStar | ComplexityKind::CStar | ComplexityKind::NStar
        )
    }

    fn needs_top_n(self) -> bool {
        matches!(self, ComplexityKind::NStar | ComplexityKind::NTilde)
    }
}

impl std::str::FromStr for ComplexityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ComplexityKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::domain(format!("unknown complexity kind {s:?}")))
    }
}

impl std::fmt::Display for ComplexityKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A complexity value with the allocation that attains it.
#[derive(Debug, Clone, PartialEq)]
pub struct Complexity {
    pub kind: ComplexityKind,
    pub value: f64,
    pub allocation: Allocation,
    /// `(arm, agent)` pair of each allocation variable.
    pub variables: Vec<(usize, usize)>,
}

fn all_pairs(arms: usize, agents: usize) -> Vec<(usize, usize)> {
    (0..arms).flat_map(|k| (0..agents).map(move |m| (k, m))).collect()
}

/// Computes one complexity term. `top_n` is required for the Top-N kinds.
pub fn complexity(
    kind: ComplexityKind,
    instance: &BanditInstance,
    view: &MixedView,
    top_n: Option<&TopNView>,
) -> Result<Complexity> {
    let w = instance.weights();
    let (arms, agents) = (instance.arms(), instance.agents());
    if kind.needs_positive_diagonal() && !instance.has_positive_diagonal() {
        return Err(Error::domain(format!(
            "{kind} requires every diagonal weight w_mm to be positive"
        )));
    }
    if kind.needs_top_n() && top_n.is_none() {
        return Err(Error::domain(format!("{kind} requires a Top-N view")));
    }
    let sq = |n: usize, m: usize| w[(n, m)] * w[(n, m)];
    let (allocation, variables) = match kind {
        ComplexityKind::TTilde => (oracle_allocation(&view.gaps, w)?, all_pairs(arms, agents)),
        ComplexityKind::NTilde => (
            oracle_allocation(&top_n.expect("checked").gaps_n, w)?,
            all_pairs(arms, agents),
        ),
        ComplexityKind::CTilde => {
            let parts = (0..arms)
                .map(|k| {
                    let gaps: Vec<f64> = view.gaps.row(k).iter().copied().collect();
                    solve_reciprocal_program(&arm_program(&gaps, w, gaps.clone()))
                })
                .collect::<Result<Vec<_>>>()?;
            (concat(parts), all_pairs(arms, agents))
        }
        ComplexityKind::TStar => {
            let mut program = ReciprocalProgram::new(vec![1.0; arms * agents]);
            for m in 0..agents {
                let best = view.best_arm[m];
                for k in (0..arms).filter(|&k| k != best) {
                    program.add_constraint(
                        (0..agents).flat_map(|n| [(k * agents + n, sq(n, m)), (best * agents + n, sq(n, m))]),
                        view.gaps[(k, m)] * view.gaps[(k, m)] / 2.0,
                    );
                }
            }
            (solve_reciprocal_program(&program)?, all_pairs(arms, agents))
        }
        ComplexityKind::NStar => {
            let top = top_n.expect("checked");
            let mut program = ReciprocalProgram::new(vec![1.0; arms * agents]);
            for m in 0..agents {
                let set = &top.top_sets[m];
                for k in (0..arms).filter(|k| !set.contains(k)) {
                    for &l in set {
                        let diff = view.mu_prime[(k, m)] - view.mu_prime[(l, m)];
                        program.add_constraint(
                            (0..agents).flat_map(|n| [(k * agents + n, sq(n, m)), (l * agents + n, sq(n, m))]),
                            diff * diff / 2.0,
                        );
                    }
                }
            }
            (solve_reciprocal_program(&program)?, all_pairs(arms, agents))
        }
        ComplexityKind::CStar => {
            // Only pairs (k, n) with k suboptimal for agent n carry a variable;
            // the others are implicitly infinite and drop out of every sum.
            let variables: Vec<(usize, usize)> = all_pairs(arms, agents)
                .into_iter()
                .filter(|&(k, n)| view.best_arm[n] != k)
                .collect();
            let index = |k: usize, n: usize| variables.iter().position(|&p| p == (k, n));
            let mut program = ReciprocalProgram::new(variables.iter().map(|&(k, n)| view.gaps[(k, n)]).collect());
            for k in 0..arms {
                for m in 0..agents {
                    program.add_constraint(
                        (0..agents).filter_map(|n| index(k, n).map(|v| (v, sq(n, m)))),
                        view.gaps[(k, m)] * view.gaps[(k, m)] / 2.0,
                    );
                }
            }
            (solve_reciprocal_program(&program)?, variables)
        }
    };
    Ok(Complexity {
        kind,
        value: allocation.objective,
        allocation,
        variables,
    })
}

/// Minimizer of `sum_n c_n delta_n^2 / 2` subject to `sum_n w_n delta_n >= d`:
/// `delta_n = d (w_n / c_n) / S` with `S = sum_n w_n^2 / c_n`, and the minimum
/// `d^2 / (2 S)`.
pub fn kkt_inner_min(c: &[f64], w: &[f64], d: f64) -> Result<(Vec<f64>, f64)> {
    if c.len() != w.len() || c.is_empty() {
        return Err(Error::domain("c and w must be non-empty and of equal length"));
    }
    if c.iter().any(|v| !(v > &0.0)) || !(d > 0.0) {
        return Err(Error::domain("c and d must be positive"));
    }
    if w.iter().all(|&v| v == 0.0) {
        return Err(Error::domain("w must have a non-zero entry"));
    }
    let s: f64 = w.iter().zip(c).map(|(w, c)| w * w / c).sum();
    let delta = w.iter().zip(c).map(|(w, c)| d * (w / c) / s).collect();
    Ok((delta, d * d / (2.0 * s)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::WeightSpec;

    fn single(a: f64, b: f64) -> ReciprocalProgram {
        let mut p = ReciprocalProgram::new(vec![1.0]);
        p.add_constraint([(0, a)], b);
        p
    }

    #[test]
    fn one_variable_closed_form() {
        for (a, b) in [(1.0, 1.0), (3.0, 0.5), (0.01, 40.0)] {
            let sol = solve_reciprocal_program(&single(a, b)).unwrap();
            assert!((sol.values[0] - a / b).abs() <= 1e-8 * (a / b));
            assert!(sol.kkt_residual <= 1e-6);
        }
    }

    #[test]
    fn symmetric_two_variable() {
        let gap: f64 = 0.3;
        let mut p = ReciprocalProgram::new(vec![1.0, 1.0]);
        p.add_constraint([(0, 1.0), (1, 1.0)], gap * gap / 2.0);
        let sol = solve_reciprocal_program(&p).unwrap();
        let expected = 4.0 / (gap * gap);
        for v in &sol.values {
            assert!((v - expected).abs() <= 1e-7 * expected);
        }
        assert!((sol.objective - 8.0 / (gap * gap)).abs() <= 1e-7 * sol.objective);
    }

    #[test]
    fn unconstrained_variables_are_zero() {
        let mut p = ReciprocalProgram::new(vec![1.0, 2.0]);
        p.add_constraint([(0, 1.0), (1, 0.0)], 2.0);
        let sol = solve_reciprocal_program(&p).unwrap();
        assert_eq!(sol.values[1], 0.0);
        assert!((sol.values[0] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn invalid_programs_are_rejected() {
        let mut p = ReciprocalProgram::new(vec![0.0]);
        p.add_constraint([(0, 1.0)], 1.0);
        assert!(solve_reciprocal_program(&p).is_err());
        let mut p = ReciprocalProgram::new(vec![1.0]);
        p.add_constraint([(0, 1.0)], -1.0);
        assert!(solve_reciprocal_program(&p).is_err());
        let mut p = ReciprocalProgram::new(vec![1.0]);
        p.add_constraint([(3, 1.0)], 1.0);
        assert!(solve_reciprocal_program(&p).is_err());
    }

    #[test]
    fn identity_weights_oracle() {
        let gaps = DMatrix::from_element(3, 2, 0.25);
        let alloc = oracle_allocation(&gaps, &DMatrix::identity(2, 2)).unwrap();
        for v in &alloc.values {
            assert!((v - 2.0 / 0.0625).abs() <= 1e-7 * 32.0);
        }
    }

    #[test]
    fn uniform_weights_oracle() {
        let agents = 4;
        let w = DMatrix::from_element(agents, agents, 1.0 / agents as f64);
        let gap: f64 = 0.2;
        let gaps = DMatrix::from_element(2, agents, gap);
        let alloc = oracle_allocation(&gaps, &w).unwrap();
        let tau = alloc.to_matrix(2, agents);
        for k in 0..2 {
            let total: f64 = tau.row(k).sum();
            assert!((total - 2.0 / (gap * gap)).abs() <= 1e-6 * total);
            for n in 0..agents {
                let expected = 2.0 / (agents as f64 * gap * gap);
                assert!((tau[(k, n)] - expected).abs() <= 1e-4 * expected);
            }
        }
    }

    #[test]
    fn zero_gap_is_a_domain_error() {
        let gaps = DMatrix::from_row_slice(2, 1, &[0.1, 0.0]);
        assert!(matches!(
            oracle_allocation(&gaps, &DMatrix::identity(1, 1)),
            Err(Error::Domain(_))
        ));
    }

    fn two_agent_instance(spec: WeightSpec) -> BanditInstance {
        BanditInstance::new(vec![vec![0.9, 0.8], vec![0.1, 0.5]], spec).unwrap()
    }

    fn two_agent_weights() -> WeightSpec {
        let s = 1.0 / 1.9;
        WeightSpec::Matrix {
            values: vec![vec![s, 0.9 * s], vec![0.9 * s, s]],
        }
    }

    #[test]
    fn two_agent_example_values() {
        // Reference values from an independent conic solver.
        let inst = two_agent_instance(two_agent_weights());
        let view = inst.mixed_view().unwrap();
        let t_star = complexity(ComplexityKind::TStar, &inst, &view, None).unwrap();
        assert!((t_star.value - 27.758_552).abs() < 1e-4, "{}", t_star.value);
        let t_tilde = complexity(ComplexityKind::TTilde, &inst, &view, None).unwrap();
        assert!((t_tilde.value - 13.879_277).abs() < 1e-4);
        let c_tilde = complexity(ComplexityKind::CTilde, &inst, &view, None).unwrap();
        assert!((c_tilde.value - 7.622_901).abs() < 1e-4);

        let inst = two_agent_instance(WeightSpec::identity(2));
        let view = inst.mixed_view().unwrap();
        let t_star = complexity(ComplexityKind::TStar, &inst, &view, None).unwrap();
        let exact = 8.0 / 0.64 + 8.0 / 0.09;
        assert!((t_star.value - exact).abs() < 1e-6 * exact);
    }

    #[test]
    fn top_n_kinds_need_a_view() {
        let inst = two_agent_instance(two_agent_weights());
        let view = inst.mixed_view().unwrap();
        assert!(complexity(ComplexityKind::NStar, &inst, &view, None).is_err());
        let top = view.topn(1).unwrap();
        let n_star = complexity(ComplexityKind::NStar, &inst, &view, Some(&top)).unwrap();
        let t_star = complexity(ComplexityKind::TStar, &inst, &view, None).unwrap();
        assert!((n_star.value - t_star.value).abs() < 1e-6 * t_star.value);
    }

    #[test]
    fn lower_bounds_need_positive_diagonal() {
        let inst = BanditInstance::new(
            vec![vec![0.9, 0.8], vec![0.1, 0.5]],
            WeightSpec::Matrix {
                values: vec![vec![0.0, 0.5], vec![1.0, 0.5]],
            },
        )
        .unwrap();
        let view = inst.mixed_view().unwrap();
        assert!(complexity(ComplexityKind::TStar, &inst, &view, None).is_err());
        assert!(complexity(ComplexityKind::TTilde, &inst, &view, None).is_ok());
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in ComplexityKind::ALL {
            assert_eq!(kind.name().parse::<ComplexityKind>().unwrap(), kind);
        }
        assert!("T_BOGUS".parse::<ComplexityKind>().is_err());
    }

    #[test]
    fn inner_min_single_entry() {
        let (delta, min) = kkt_inner_min(&[3.0], &[0.5], 0.2).unwrap();
        assert!((delta[0] - 0.2 / 0.5).abs() < 1e-15);
        assert!((min - 3.0 * 0.04 / (2.0 * 0.25)).abs() < 1e-15);
    }

    #[test]
    fn inner_min_symmetric() {
        let (delta, _) = kkt_inner_min(&[2.0, 2.0, 2.0], &[0.3, 0.3, 0.3], 1.0).unwrap();
        assert!(delta.windows(2).all(|p| (p[0] - p[1]).abs() < 1e-15));
        assert!(kkt_inner_min(&[1.0], &[0.0], 1.0).is_err());
        assert!(kkt_inner_min(&[0.0], &[1.0], 1.0).is_err());
    }
}
