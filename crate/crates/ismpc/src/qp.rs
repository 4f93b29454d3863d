//! Dense convex QP solver: primal active set with a feasibility phase.
//!
//! Problems are stated as
//!
//! ```text
//! min 1/2 x' H x + c' x
//! s.t. E x = e
//!      lo <= A x <= hi   (either side may be infinite)
//! ```
//!
//! with H positive semidefinite. Phase I minimizes a single Chebyshev slack
//! relaxing every inequality, which either produces a feasible point or a
//! certificate (the minimal slack stays above tolerance). Phase II walks the
//! active set, solving each equality-constrained subproblem through a Schur
//! complement on the Cholesky factor of H. Semidefinite Hessians are
//! regularized by +1e-10 I. All tie-breaking is by lowest row index, so
//! identical problems produce bitwise-identical iterates.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Hessian regularization added when the Cholesky factorization fails.
const REGULARIZATION: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("problem contains non-finite data in {0}")]
    NonFinite(&'static str),
    #[error("inequality row {0} has lower bound above upper bound")]
    BoundsInverted(usize),
    #[error("Hessian is not symmetric")]
    NotSymmetric,
    #[error("equality constraints are inconsistent (residual {0:.3e})")]
    InconsistentEqualities(f64),
}

/// Convex QP data. See the module docs for the optimization problem layout.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear_cost: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_lower: DVector<f64>,
    pub ineq_upper: DVector<f64>,
}

impl QpProblem {
    /// Problem with no constraints at all.
    pub fn unconstrained(hessian: DMatrix<f64>, linear_cost: DVector<f64>) -> Self {
        let n = linear_cost.len();
        Self {
            hessian,
            linear_cost,
            eq_matrix: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
            ineq_matrix: DMatrix::zeros(0, n),
            ineq_lower: DVector::zeros(0),
            ineq_upper: DVector::zeros(0),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.linear_cost.len()
    }

    pub fn num_eq(&self) -> usize {
        self.eq_rhs.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.ineq_lower.len()
    }

    fn validate(&self) -> Result<(), QpError> {
        let n = self.num_vars();
        if self.hessian.nrows() != n || self.hessian.ncols() != n {
            return Err(QpError::DimensionMismatch(format!(
                "hessian is {}x{}, expected {n}x{n}",
                self.hessian.nrows(),
                self.hessian.ncols()
            )));
        }
        if self.eq_matrix.nrows() != self.num_eq() || self.eq_matrix.ncols() != n {
            return Err(QpError::DimensionMismatch("equality block".into()));
        }
        if self.ineq_matrix.nrows() != self.num_ineq()
            || self.ineq_upper.len() != self.num_ineq()
            || (self.num_ineq() > 0 && self.ineq_matrix.ncols() != n)
        {
            return Err(QpError::DimensionMismatch("inequality block".into()));
        }
        if !self.hessian.iter().all(|v| v.is_finite()) {
            return Err(QpError::NonFinite("hessian"));
        }
        if !self.linear_cost.iter().all(|v| v.is_finite()) {
            return Err(QpError::NonFinite("linear cost"));
        }
        if !self.eq_matrix.iter().all(|v| v.is_finite()) || !self.eq_rhs.iter().all(|v| v.is_finite()) {
            return Err(QpError::NonFinite("equality block"));
        }
        if !self.ineq_matrix.iter().all(|v| v.is_finite()) {
            return Err(QpError::NonFinite("inequality matrix"));
        }
        // Bounds may be infinite but not NaN.
        if self.ineq_lower.iter().chain(self.ineq_upper.iter()).any(|v| v.is_nan()) {
            return Err(QpError::NonFinite("inequality bounds"));
        }
        for i in 0..self.num_ineq() {
            if self.ineq_lower[i] > self.ineq_upper[i] {
                return Err(QpError::BoundsInverted(i));
            }
        }
        let asym = (&self.hessian - self.hessian.transpose()).amax();
        if asym > 1e-9 * (1.0 + self.hessian.amax()) {
            return Err(QpError::NotSymmetric);
        }
        Ok(())
    }

    /// Objective value `1/2 x' H x + c' x` at a point.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * (x.transpose() * &self.hessian * x)[(0, 0)] + self.linear_cost.dot(x)
    }
}

/// Which side of a bilateral inequality row is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum BoundSide {
    Lower,
    Upper,
}

/// Solver verdict for a problem instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    /// No point satisfies the constraints within tolerance; established by
    /// the feasibility phase (its minimal slack is reported as the residual).
    Infeasible,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub primal: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    /// Max of the stationarity and primal feasibility residuals at the
    /// returned point; for `Infeasible`, the certified minimal slack.
    pub kkt_residual: f64,
    pub iterations: usize,
    /// Inequality rows active at the solution, ascending by row index.
    pub active_set: Vec<(usize, BoundSide)>,
}

/// Solve tolerances and iteration budget.
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Feasibility and optimality tolerance.
    pub tol: f64,
    /// Iteration cap; defaults to `10 * (n + m_ineq)` when `None`.
    pub max_iter: Option<usize>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: None }
    }
}

/// Warm-start hints: a primal guess and the previous active set.
#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    pub point: Option<DVector<f64>>,
    pub active_set: Vec<(usize, BoundSide)>,
}

/// True when `point` satisfies every constraint of `problem` within `tol`.
pub fn check_feasible(problem: &QpProblem, point: &DVector<f64>, tol: f64) -> bool {
    max_violation(problem, point) <= tol
}

fn max_violation(problem: &QpProblem, x: &DVector<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    if problem.num_eq() > 0 {
        let r = &problem.eq_matrix * x - &problem.eq_rhs;
        worst = worst.max(r.amax());
    }
    if problem.num_ineq() > 0 {
        let ax = &problem.ineq_matrix * x;
        for i in 0..problem.num_ineq() {
            worst = worst.max(problem.ineq_lower[i] - ax[i]).max(ax[i] - problem.ineq_upper[i]);
        }
    }
    worst
}

/// Solve a QP from a cold start.
pub fn solve(problem: &QpProblem, opts: &SolveOptions) -> Result<QpSolution, QpError> {
    solve_warm(problem, opts, &WarmStart::default())
}

/// Solve a QP reusing a previous solution as a starting guess and active-set
/// seed, the MPC hot path.
pub fn solve_warm(
    problem: &QpProblem,
    opts: &SolveOptions,
    warm: &WarmStart,
) -> Result<QpSolution, QpError> {
    problem.validate()?;
    let n = problem.num_vars();
    if let Some(p) = &warm.point {
        if p.len() != n {
            return Err(QpError::DimensionMismatch("warm-start point".into()));
        }
    }
    let max_iter = opts.max_iter.unwrap_or(10 * (n + problem.num_ineq()).max(1));

    let guess = warm.point.clone().unwrap_or_else(|| DVector::zeros(n));
    let start = match find_feasible_point(problem, &guess, opts.tol, max_iter)? {
        FeasibleStart::Point(x) => x,
        FeasibleStart::Infeasible { slack, iterations } => {
            return Ok(QpSolution {
                primal: guess,
                objective: f64::NAN,
                status: QpStatus::Infeasible,
                kkt_residual: slack,
                iterations,
                active_set: Vec::new(),
            });
        }
        FeasibleStart::IterationBudget { iterations } => {
            return Ok(QpSolution {
                primal: guess,
                objective: f64::NAN,
                status: QpStatus::MaxIterations,
                kkt_residual: f64::NAN,
                iterations,
                active_set: Vec::new(),
            });
        }
    };

    let dense = DenseData::new(problem)?;
    let mut outcome = active_set_iterate(&dense, start, &warm.active_set, opts.tol, max_iter);
    outcome.objective = problem.objective(&outcome.primal);
    Ok(outcome)
}

enum FeasibleStart {
    Point(DVector<f64>),
    Infeasible { slack: f64, iterations: usize },
    IterationBudget { iterations: usize },
}

/// Phase I: project the guess onto the equalities, then (if inequalities are
/// still violated) minimize one slack variable relaxing every inequality.
fn find_feasible_point(
    problem: &QpProblem,
    guess: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<FeasibleStart, QpError> {
    let n = problem.num_vars();
    let mut x0 = guess.clone();
    if problem.num_eq() > 0 {
        let r = &problem.eq_rhs - &problem.eq_matrix * &x0;
        let pinv = problem
            .eq_matrix
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|_| QpError::NonFinite("equality matrix factorization"))?;
        x0 += pinv * &r;
        let res = (&problem.eq_matrix * &x0 - &problem.eq_rhs).amax();
        if res > tol {
            return Err(QpError::InconsistentEqualities(res));
        }
    }
    if check_feasible(problem, &x0, tol) {
        return Ok(FeasibleStart::Point(x0));
    }
    // A nearly feasible start (the MPC warm path after the equality
    // projection) is cheaper to mend by projecting onto the offended bounds
    // than by solving the slack program, and the slack program would also
    // discard the guess.
    if max_violation(problem, &x0) <= 1e-3 {
        if let Some(repaired) = repair_near_feasible(problem, &x0, tol) {
            return Ok(FeasibleStart::Point(repaired));
        }
    }

    let mi = problem.num_ineq();
    let mut h = DMatrix::zeros(n + 1, n + 1);
    for i in 0..n {
        h[(i, i)] = REGULARIZATION;
    }
    h[(n, n)] = 1.0;
    let mut eq = DMatrix::zeros(problem.num_eq(), n + 1);
    eq.view_mut((0, 0), (problem.num_eq(), n)).copy_from(&problem.eq_matrix);
    let mut a = DMatrix::zeros(2 * mi + 1, n + 1);
    let mut lo = DVector::from_element(2 * mi + 1, f64::NEG_INFINITY);
    let mut hi = DVector::from_element(2 * mi + 1, f64::INFINITY);
    for i in 0..mi {
        // a_i' x - t <= hi_i
        a.view_mut((2 * i, 0), (1, n)).copy_from(&problem.ineq_matrix.row(i));
        a[(2 * i, n)] = -1.0;
        hi[2 * i] = problem.ineq_upper[i];
        // a_i' x + t >= lo_i
        a.view_mut((2 * i + 1, 0), (1, n)).copy_from(&problem.ineq_matrix.row(i));
        a[(2 * i + 1, n)] = 1.0;
        lo[2 * i + 1] = problem.ineq_lower[i];
    }
    a[(2 * mi, n)] = 1.0;
    lo[2 * mi] = 0.0;

    let relaxed = QpProblem {
        hessian: h,
        linear_cost: DVector::zeros(n + 1),
        eq_matrix: eq,
        eq_rhs: problem.eq_rhs.clone(),
        ineq_matrix: a,
        ineq_lower: lo,
        ineq_upper: hi,
    };
    let dense = DenseData::new(&relaxed)?;
    let mut start = DVector::zeros(n + 1);
    start.rows_mut(0, n).copy_from(&x0);
    start[n] = max_violation(problem, &x0) + 1.0;

    let sol = active_set_iterate(&dense, start, &[], tol, max_iter.max(10 * (n + 1 + 2 * mi)));
    let x = DVector::from(sol.primal.rows(0, n).clone_owned());
    if check_feasible(problem, &x, tol) {
        return Ok(FeasibleStart::Point(x));
    }
    // The x regularization lets the relaxed optimum trade a slack of order
    // REGULARIZATION * |x| for a shorter x, so a tiny residual violation does
    // not mean the problem is infeasible. Project back onto the offended
    // bounds and test again before giving a verdict.
    let slack = sol.primal[n].max(0.0);
    if slack <= 1e-4 * (1.0 + x.amax()) {
        if let Some(repaired) = repair_near_feasible(problem, &x, tol) {
            return Ok(FeasibleStart::Point(repaired));
        }
    }
    match sol.status {
        QpStatus::MaxIterations => Ok(FeasibleStart::IterationBudget { iterations: sol.iterations }),
        _ => Ok(FeasibleStart::Infeasible { slack, iterations: sol.iterations }),
    }
}

/// Iteratively project `x` onto the bounds it violates (keeping equalities
/// exact) until every constraint holds to `tol`. Returns `None` when a few
/// rounds of projection cannot close the gap.
fn repair_near_feasible(problem: &QpProblem, x: &DVector<f64>, tol: f64) -> Option<DVector<f64>> {
    let n = problem.num_vars();
    let me = problem.num_eq();
    let mut x = x.clone();
    for _ in 0..6 {
        if check_feasible(problem, &x, tol) {
            return Some(x);
        }
        let mut rows: Vec<(usize, f64)> = Vec::new();
        for i in 0..problem.num_ineq() {
            let ax = problem.ineq_matrix.row(i).dot(&x.transpose());
            if ax > problem.ineq_upper[i] + 0.1 * tol {
                rows.push((i, problem.ineq_upper[i]));
            } else if ax < problem.ineq_lower[i] - 0.1 * tol {
                rows.push((i, problem.ineq_lower[i]));
            }
        }
        let m = me + rows.len();
        let mut stacked = DMatrix::zeros(m, n);
        let mut target = DVector::zeros(m);
        if me > 0 {
            stacked.view_mut((0, 0), (me, n)).copy_from(&problem.eq_matrix);
            target.rows_mut(0, me).copy_from(&problem.eq_rhs);
        }
        for (j, &(row, bound)) in rows.iter().enumerate() {
            stacked.view_mut((me + j, 0), (1, n)).copy_from(&problem.ineq_matrix.row(row));
            target[me + j] = bound;
        }
        let residual = &target - &stacked * &x;
        let pinv = stacked.pseudo_inverse(1e-12).ok()?;
        x += pinv * residual;
    }
    check_feasible(problem, &x, tol).then_some(x)
}

/// Problem data with the Hessian factorization cached for Schur-complement
/// KKT solves.
/// Hessian factorization; diagonal Hessians (the ZMP-velocity cost, the
/// phase 1 slack program) get an elementwise inverse instead of a Cholesky.
enum HFactor {
    Dense(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Diag(DVector<f64>),
}

struct DenseData<'a> {
    problem: &'a QpProblem,
    hfac: HFactor,
}

impl<'a> DenseData<'a> {
    fn new(problem: &'a QpProblem) -> Result<Self, QpError> {
        let n = problem.num_vars();
        let sym = (&problem.hessian + problem.hessian.transpose()) * 0.5;
        let diagonal_only = (0..n)
            .all(|i| (0..n).all(|j| i == j || sym[(i, j)] == 0.0) && sym[(i, i)] > 0.0);
        if diagonal_only {
            return Ok(Self { problem, hfac: HFactor::Diag(sym.diagonal()) });
        }
        let chol = match nalgebra::Cholesky::new(sym.clone()) {
            Some(c) => c,
            None => {
                let reg = sym + DMatrix::identity(n, n) * REGULARIZATION;
                nalgebra::Cholesky::new(reg).ok_or(QpError::NonFinite("hessian factorization"))?
            }
        };
        Ok(Self { problem, hfac: HFactor::Dense(chol) })
    }

    fn hinv_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.hfac {
            HFactor::Dense(c) => c.solve(v),
            HFactor::Diag(d) => DVector::from_fn(d.len(), |i, _| v[i] / d[i]),
        }
    }

    fn hinv_row(&self, m: &DMatrix<f64>, i: usize) -> DVector<f64> {
        match &self.hfac {
            HFactor::Dense(c) => c.solve(&m.row(i).transpose()),
            HFactor::Diag(d) => DVector::from_fn(d.len(), |k, _| m[(i, k)] / d[k]),
        }
    }
}

fn dot_row(m: &DMatrix<f64>, i: usize, v: &DVector<f64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..v.len() {
        acc += m[(i, j)] * v[j];
    }
    acc
}

fn sym_insert(s: &DMatrix<f64>, at: usize, col: &[f64], diag: f64) -> DMatrix<f64> {
    let m = s.nrows();
    DMatrix::from_fn(m + 1, m + 1, |i, j| {
        if i == at && j == at {
            diag
        } else if i == at {
            col[j - (j > at) as usize]
        } else if j == at {
            col[i - (i > at) as usize]
        } else {
            s[(i - (i > at) as usize, j - (j > at) as usize)]
        }
    })
}

fn sym_remove(s: &DMatrix<f64>, at: usize) -> DMatrix<f64> {
    let m = s.nrows();
    DMatrix::from_fn(m - 1, m - 1, |i, j| {
        s[(i + (i >= at) as usize, j + (j >= at) as usize)]
    })
}

/// Phase II: primal active set from a feasible point.
fn active_set_iterate(
    data: &DenseData,
    mut x: DVector<f64>,
    seed_active: &[(usize, BoundSide)],
    tol: f64,
    max_iter: usize,
) -> QpSolution {
    let problem = data.problem;
    let n = problem.num_vars();
    let me = problem.num_eq();
    let mi = problem.num_ineq();

    // Working set: active inequality rows, kept sorted by (row, side).
    let mut working: Vec<(usize, BoundSide)> = Vec::new();
    for &(row, side) in seed_active {
        if row >= mi || working.iter().any(|&(r, _)| r == row) {
            continue;
        }
        let ax = problem.ineq_matrix.row(row).dot(&x.transpose());
        let bound = match side {
            BoundSide::Lower => problem.ineq_lower[row],
            BoundSide::Upper => problem.ineq_upper[row],
        };
        // A hinted row need not sit exactly on its bound: the working-set
        // step restores it through the drift term, and a wrongly seeded row
        // is dropped by the multiplier test. Missing a genuinely active row
        // costs a full iteration, so accept generously.
        let window = (10.0 * tol).max(1e-3 * (1.0 + bound.abs()));
        if bound.is_finite() && (ax - bound).abs() <= window && me + working.len() + 1 < n {
            working.push((row, side));
        }
    }
    working.sort_unstable();

    // Cached KKT pieces, kept aligned with `working`: hcols[j] holds
    // H^{-1} a_j^T for the j-th working row, and smat is the Schur
    // complement [E; A_w] H^{-1} [E; A_w]^T grown and shrunk in place as
    // rows enter and leave, so each iteration costs O(m_w n + m_w^3)
    // instead of refactoring against H.
    let eq_hcols: Vec<DVector<f64>> =
        (0..me).map(|i| data.hinv_row(&problem.eq_matrix, i)).collect();
    let mut hcols: Vec<DVector<f64>> = working
        .iter()
        .map(|&(row, _)| data.hinv_row(&problem.ineq_matrix, row))
        .collect();
    let row_bound = |row: usize, side: BoundSide| match side {
        BoundSide::Lower => problem.ineq_lower[row],
        BoundSide::Upper => problem.ineq_upper[row],
    };
    let mut smat = {
        let mw = me + working.len();
        DMatrix::from_fn(mw, mw, |i, j| {
            let col = if j < me { &eq_hcols[j] } else { &hcols[j - me] };
            if i < me {
                dot_row(&problem.eq_matrix, i, col)
            } else {
                dot_row(&problem.ineq_matrix, working[i - me].0, col)
            }
        })
    };

    let mut iterations = 0usize;
    // After one full unblocked step the working-set minimizer is reached
    // exactly (the objective is quadratic), so a second free step can only
    // be rounding noise. Treating it as such keeps termination independent
    // of how badly H amplifies that noise (the phase 1 Hessian is nearly
    // singular by construction).
    let mut at_subspace_min = false;
    loop {
        if iterations >= max_iter {
            return QpSolution {
                objective: f64::NAN,
                status: QpStatus::MaxIterations,
                kkt_residual: max_violation(problem, &x),
                iterations,
                active_set: working,
                primal: x,
            };
        }
        iterations += 1;

        let mw = me + working.len();
        let grad = &problem.hessian * &x + &problem.linear_cost;
        let hinv_g = data.hinv_vec(&grad);
        let (step, lambda) = if mw == 0 {
            (-&hinv_g, DVector::zeros(0))
        } else {
            // rhs_i = -(a_i . H^{-1} g + (b_i - a_i . x))
            let mut rhs = DVector::zeros(mw);
            for i in 0..me {
                rhs[i] = -(dot_row(&problem.eq_matrix, i, &hinv_g) + problem.eq_rhs[i]
                    - dot_row(&problem.eq_matrix, i, &x));
            }
            for (j, &(row, side)) in working.iter().enumerate() {
                rhs[me + j] = -(dot_row(&problem.ineq_matrix, row, &hinv_g)
                    + row_bound(row, side)
                    - dot_row(&problem.ineq_matrix, row, &x));
            }
            let lambda = match solve_spd_ish(&smat, &rhs) {
                Some(l) => l,
                None => {
                    // Degenerate working set; drop the most recent row and retry.
                    if let Some(pos) = working.iter().enumerate().max_by_key(|(_, &(r, _))| r).map(|(p, _)| p) {
                        working.remove(pos);
                        hcols.remove(pos);
                        smat = sym_remove(&smat, me + pos);
                        at_subspace_min = false;
                        continue;
                    }
                    return QpSolution {
                        objective: f64::NAN,
                        status: QpStatus::MaxIterations,
                        kkt_residual: max_violation(problem, &x),
                        iterations,
                        active_set: working,
                        primal: x,
                    };
                }
            };
            let mut step = -hinv_g;
            for j in 0..mw {
                let col = if j < me { &eq_hcols[j] } else { &hcols[j - me] };
                step.axpy(-lambda[j], col, 1.0);
            }
            (step, lambda)
        };

        if step.amax() <= tol || at_subspace_min {
            // Stationary on the working set: check multiplier signs.
            // For an upper-active row the multiplier must be >= 0, for a
            // lower-active row <= 0; score positive means "wants to leave".
            let mut drop_idx: Option<(f64, usize)> = None;
            for (j, &(_, side)) in working.iter().enumerate() {
                let l = lambda[me + j];
                let score = match side {
                    BoundSide::Upper => -l,
                    BoundSide::Lower => l,
                };
                if score > tol && drop_idx.map_or(true, |(best, _)| score > best) {
                    drop_idx = Some((score, j));
                }
            }
            match drop_idx {
                Some((_, j)) => {
                    working.remove(j);
                    hcols.remove(j);
                    smat = sym_remove(&smat, me + j);
                    at_subspace_min = false;
                    continue;
                }
                None => {
                    // Polish: re-solve the working-set KKT system directly so
                    // the reported point is free of roundoff accumulated over
                    // the iterations.
                    let mut aw = DMatrix::zeros(mw, n);
                    let mut bw = DVector::zeros(mw);
                    if me > 0 {
                        aw.view_mut((0, 0), (me, n)).copy_from(&problem.eq_matrix);
                        bw.rows_mut(0, me).copy_from(&problem.eq_rhs);
                    }
                    for (j, &(row, side)) in working.iter().enumerate() {
                        aw.view_mut((me + j, 0), (1, n)).copy_from(&problem.ineq_matrix.row(row));
                        bw[me + j] = row_bound(row, side);
                    }
                    let mut lam = lambda.rows(0, mw).into_owned();
                    let dim = n + mw;
                    let mut kkt = DMatrix::zeros(dim, dim);
                    kkt.view_mut((0, 0), (n, n)).copy_from(&problem.hessian);
                    let mut rhs = DVector::zeros(dim);
                    rhs.rows_mut(0, n).copy_from(&(-&problem.linear_cost));
                    if mw > 0 {
                        kkt.view_mut((0, n), (n, mw)).copy_from(&aw.transpose());
                        kkt.view_mut((n, 0), (mw, n)).copy_from(&aw);
                        rhs.rows_mut(n, mw).copy_from(&bw);
                    }
                    if let Some(refined) = kkt.lu().solve(&rhs) {
                        let xr = refined.rows(0, n).into_owned();
                        if max_violation(problem, &xr) <= tol {
                            x = xr;
                            lam = refined.rows(n, mw).into_owned();
                        }
                    }
                    let mut stat = &problem.hessian * &x + &problem.linear_cost;
                    if mw > 0 {
                        stat += aw.transpose() * &lam;
                    }
                    return QpSolution {
                        objective: f64::NAN,
                        status: QpStatus::Optimal,
                        kkt_residual: stat.amax().max(max_violation(problem, &x)),
                        iterations,
                        active_set: working,
                        primal: x,
                    };
                }
            }
        }

        // Ratio test: nearest blocking inequality along the step.
        let mut alpha = 1.0f64;
        let mut blocker: Option<(usize, BoundSide)> = None;
        for row in 0..mi {
            if working.iter().any(|&(r, _)| r == row) {
                continue;
            }
            let d = dot_row(&problem.ineq_matrix, row, &step);
            if d.abs() <= 1e-14 {
                continue;
            }
            let ax = dot_row(&problem.ineq_matrix, row, &x);
            let (bound, side) = if d > 0.0 {
                (problem.ineq_upper[row], BoundSide::Upper)
            } else {
                (problem.ineq_lower[row], BoundSide::Lower)
            };
            if !bound.is_finite() {
                continue;
            }
            let ratio = ((bound - ax) / d).max(0.0);
            if ratio < alpha {
                alpha = ratio;
                blocker = Some((row, side));
            }
        }

        x += &step * alpha;
        at_subspace_min = blocker.is_none();
        if let Some(b) = blocker {
            let pos = working.binary_search(&b).unwrap_or_else(|p| p);
            let hc = data.hinv_row(&problem.ineq_matrix, b.0);
            let mut col = vec![0.0; me + working.len()];
            for (i, entry) in col.iter_mut().enumerate().take(me) {
                *entry = dot_row(&problem.eq_matrix, i, &hc);
            }
            for (j, &(r2, _)) in working.iter().enumerate() {
                col[me + j] = dot_row(&problem.ineq_matrix, r2, &hc);
            }
            let diag = dot_row(&problem.ineq_matrix, b.0, &hc);
            smat = sym_insert(&smat, me + pos, &col, diag);
            working.insert(pos, b);
            hcols.insert(pos, hc);
        }
    }
}

/// Solve `S x = b` for the (symmetric, normally positive definite) Schur
/// complement, retrying once with a small diagonal shift.
fn solve_spd_ish(s: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(c) = nalgebra::Cholesky::new(s.clone()) {
        return Some(c.solve(b));
    }
    let m = s.nrows();
    let shift = 1e-12 * (1.0 + s.diagonal().amax());
    let reg = s + DMatrix::identity(m, m) * shift;
    nalgebra::Cholesky::new(reg.clone())
        .map(|c| c.solve(b))
        .or_else(|| reg.lu().solve(b))
}
