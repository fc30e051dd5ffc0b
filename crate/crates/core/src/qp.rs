//! Dense strictly convex QP solver with active-set output and exact solution
//! Jacobians with respect to affine constraint offsets.
//!
//! Problems have the affine-parametric form
//!
//! ```text
//!     minimize    1/2 x' Q x + q' x
//!     subject to  A x + b + g <= 0
//!                 C x + d + h  = 0
//! ```
//!
//! where `g` and `h` are offset vectors that downstream callers vary (the
//! dispatch layer routes forecasts and stage-one set-points through them).
//! On each region where the optimal active set is constant, the solution map
//! `(g, h) -> (x*, lambda*, nu*)` is affine, and its Jacobian is available in
//! closed form from the same block matrix the solver factors.
//!
//! The solver is a primal active-set method: a phase-1 pass finds a feasible
//! point when the equality-consistent start violates an inequality, and the
//! main loop then walks working sets until the KKT conditions hold. `Q` is
//! ridge-regularized at construction so callers may leave blocks (angles,
//! slacks) without quadratic cost.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, FullPivLU};

use crate::error::{Error, Result};

/// Identifies one affine offset entry: an inequality row of `g` or an
/// equality row of `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Offset {
    Ineq(usize),
    Eq(usize),
}

/// A validated QP in standard form. `Q` is symmetrized and ridge-shifted at
/// construction; `C` must have full row rank.
#[derive(Debug, Clone)]
pub struct QpSpec {
    q_mat: DMatrix<f64>,
    q_vec: DVector<f64>,
    a_mat: DMatrix<f64>,
    b_vec: DVector<f64>,
    c_mat: DMatrix<f64>,
    d_vec: DVector<f64>,
    g: DVector<f64>,
    h: DVector<f64>,
    chol_q: Cholesky<f64, Dyn>,
    chol_cct: Option<Cholesky<f64, Dyn>>,
    ridge: f64,
}

impl QpSpec {
    pub fn new(
        q_mat: DMatrix<f64>,
        q_vec: DVector<f64>,
        a_mat: DMatrix<f64>,
        b_vec: DVector<f64>,
        c_mat: DMatrix<f64>,
        d_vec: DVector<f64>,
    ) -> Result<Self> {
        let n = q_vec.len();
        if q_mat.nrows() != n || q_mat.ncols() != n {
            return Err(Error::Dim(format!(
                "Q is {}x{}, expected {n}x{n}",
                q_mat.nrows(),
                q_mat.ncols()
            )));
        }
        if a_mat.ncols() != n && a_mat.nrows() > 0 {
            return Err(Error::Dim("A column count does not match variable count".into()));
        }
        if a_mat.nrows() != b_vec.len() {
            return Err(Error::Dim("A and b row counts differ".into()));
        }
        if c_mat.ncols() != n && c_mat.nrows() > 0 {
            return Err(Error::Dim("C column count does not match variable count".into()));
        }
        if c_mat.nrows() != d_vec.len() {
            return Err(Error::Dim("C and d row counts differ".into()));
        }

        let mut sym = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                sym[(i, j)] = 0.5 * (q_mat[(i, j)] + q_mat[(j, i)]);
            }
        }
        let ridge = 1e-8 * (1.0 + sym.trace() / n as f64);
        for i in 0..n {
            sym[(i, i)] += ridge;
        }
        let chol_q = Cholesky::new(sym.clone()).ok_or_else(|| {
            Error::RankDeficient("Q is not positive definite after ridge regularization".into())
        })?;

        let chol_cct = if c_mat.nrows() > 0 {
            let svd = c_mat.clone().svd(false, false);
            let smax = svd.singular_values.max();
            let rank = svd
                .singular_values
                .iter()
                .filter(|&&s| s > 1e-10 * smax.max(1e-300))
                .count();
            if rank < c_mat.nrows() {
                return Err(Error::RankDeficient(
                    "equality constraint matrix C is not full row rank".into(),
                ));
            }
            let cct = &c_mat * c_mat.transpose();
            Some(Cholesky::new(cct).ok_or_else(|| {
                Error::RankDeficient("equality constraint matrix C is too ill-conditioned".into())
            })?)
        } else {
            None
        };

        let g = DVector::zeros(b_vec.len());
        let h = DVector::zeros(d_vec.len());
        Ok(QpSpec {
            q_mat: sym,
            q_vec,
            a_mat,
            b_vec,
            c_mat,
            d_vec,
            g,
            h,
            chol_q,
            chol_cct,
            ridge,
        })
    }

    /// Replace the parametric offsets.
    pub fn set_offsets(&mut self, g: DVector<f64>, h: DVector<f64>) -> Result<()> {
        if g.len() != self.b_vec.len() || h.len() != self.d_vec.len() {
            return Err(Error::Dim("offset lengths do not match constraint counts".into()));
        }
        self.g = g;
        self.h = h;
        Ok(())
    }

    pub fn with_offsets(mut self, g: DVector<f64>, h: DVector<f64>) -> Result<Self> {
        self.set_offsets(g, h)?;
        Ok(self)
    }

    pub fn n_vars(&self) -> usize {
        self.q_vec.len()
    }

    pub fn n_ineq(&self) -> usize {
        self.b_vec.len()
    }

    pub fn n_eq(&self) -> usize {
        self.d_vec.len()
    }

    pub fn q_mat(&self) -> &DMatrix<f64> {
        &self.q_mat
    }

    pub fn q_vec(&self) -> &DVector<f64> {
        &self.q_vec
    }

    pub fn a_mat(&self) -> &DMatrix<f64> {
        &self.a_mat
    }

    pub fn b_vec(&self) -> &DVector<f64> {
        &self.b_vec
    }

    pub fn c_mat(&self) -> &DMatrix<f64> {
        &self.c_mat
    }

    pub fn d_vec(&self) -> &DVector<f64> {
        &self.d_vec
    }

    pub fn g(&self) -> &DVector<f64> {
        &self.g
    }

    pub fn h(&self) -> &DVector<f64> {
        &self.h
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    fn ineq_rhs(&self) -> DVector<f64> {
        &self.b_vec + &self.g
    }

    fn eq_rhs(&self) -> DVector<f64> {
        &self.d_vec + &self.h
    }

    /// Minimum-norm solution of `C x + d + h = 0`, or zero when unconstrained.
    fn equality_start(&self) -> DVector<f64> {
        match &self.chol_cct {
            None => DVector::zeros(self.n_vars()),
            Some(chol) => {
                let rhs = -self.eq_rhs();
                self.c_mat.transpose() * chol.solve(&rhs)
            }
        }
    }

    /// Project `x` back onto the equality manifold (minimum-norm correction).
    fn equality_project(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.chol_cct {
            None => x.clone(),
            Some(chol) => {
                let resid = &self.c_mat * x + self.eq_rhs();
                x - self.c_mat.transpose() * chol.solve(&resid)
            }
        }
    }
}

/// Primal/dual solution with active-set bookkeeping.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Inequality multipliers, zero off the active set.
    pub lambda: DVector<f64>,
    /// Equality multipliers.
    pub nu: DVector<f64>,
    /// Inequality rows with |A_i x + b_i + g_i| <= tol_act.
    pub active_set: Vec<usize>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Per-block KKT residuals.
#[derive(Debug, Clone, Copy)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal_ineq: f64,
    pub primal_eq: f64,
    pub dual_feasibility: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_ineq)
            .max(self.primal_eq)
            .max(self.dual_feasibility)
            .max(self.complementarity)
    }
}

/// Evaluate all KKT residual blocks for a candidate solution.
pub fn kkt_residuals(spec: &QpSpec, sol: &QpSolution) -> KktResiduals {
    let stat = &spec.q_mat * &sol.x
        + &spec.q_vec
        + spec.a_mat.transpose() * &sol.lambda
        + spec.c_mat.transpose() * &sol.nu;
    let stationarity = if stat.is_empty() { 0.0 } else { stat.amax() };

    let mut primal_ineq: f64 = 0.0;
    let mut complementarity: f64 = 0.0;
    if spec.n_ineq() > 0 {
        let r = &spec.a_mat * &sol.x + spec.ineq_rhs();
        for i in 0..r.len() {
            primal_ineq = primal_ineq.max(r[i].max(0.0));
            complementarity = complementarity.max((sol.lambda[i] * r[i]).abs());
        }
    }
    let primal_eq = if spec.n_eq() > 0 {
        (&spec.c_mat * &sol.x + spec.eq_rhs()).amax()
    } else {
        0.0
    };
    let dual_feasibility = if sol.lambda.is_empty() {
        0.0
    } else {
        (-sol.lambda.min()).max(0.0)
    };

    KktResiduals {
        stationarity,
        primal_ineq,
        primal_eq,
        dual_feasibility,
        complementarity,
    }
}

/// LICQ diagnostics at a solution's active set.
#[derive(Debug, Clone)]
pub struct LicqReport {
    pub satisfied: bool,
    pub rank: usize,
    pub rows: usize,
}

/// Rank-test the stacked active-constraint matrix (active rows of `A` over
/// `C`) with tolerance `1e-8 * sigma_max`.
pub fn check_licq(spec: &QpSpec, sol: &QpSolution) -> LicqReport {
    let rows = sol.active_set.len() + spec.n_eq();
    if rows == 0 {
        return LicqReport { satisfied: true, rank: 0, rows: 0 };
    }
    let n = spec.n_vars();
    let mut stacked = DMatrix::zeros(rows, n);
    for (r, &i) in sol.active_set.iter().enumerate() {
        stacked.row_mut(r).copy_from(&spec.a_mat.row(i));
    }
    for r in 0..spec.n_eq() {
        stacked.row_mut(sol.active_set.len() + r).copy_from(&spec.c_mat.row(r));
    }
    let svd = stacked.svd(false, false);
    let smax = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > 1e-8 * smax.max(1e-300))
        .count();
    LicqReport { satisfied: rank == rows, rank, rows }
}

struct LoopOutput {
    x: DVector<f64>,
    lambda: DVector<f64>,
    nu: DVector<f64>,
    iterations: usize,
}

/// Primal active-set iteration from a feasible start.
fn active_set_loop(
    chol_q: &Cholesky<f64, Dyn>,
    q_mat: &DMatrix<f64>,
    q_vec: &DVector<f64>,
    a_mat: &DMatrix<f64>,
    ineq_rhs: &DVector<f64>,
    c_mat: &DMatrix<f64>,
    mut x: DVector<f64>,
    max_iter: usize,
) -> Result<LoopOutput> {
    let n = q_vec.len();
    let m = a_mat.nrows();
    let p = c_mat.nrows();
    let dual_tol = 1e-10 * (1.0 + q_vec.amax());
    let mut working: Vec<usize> = Vec::new();

    for iter in 0..max_iter {
        let grad = q_mat * &x + q_vec;

        let k = working.len() + p;
        let (step, mu) = if k == 0 {
            (-chol_q.solve(&grad), DVector::zeros(0))
        } else {
            let mut g_stack = DMatrix::zeros(k, n);
            for (r, &wi) in working.iter().enumerate() {
                g_stack.row_mut(r).copy_from(&a_mat.row(wi));
            }
            for r in 0..p {
                g_stack.row_mut(working.len() + r).copy_from(&c_mat.row(r));
            }
            let qinv_gt = chol_q.solve(&g_stack.transpose());
            let k_mat = &g_stack * &qinv_gt;
            let k_chol = Cholesky::new(k_mat).ok_or_else(|| {
                Error::RankDeficient("working-set constraint matrix lost row independence".into())
            })?;
            let qinv_grad = chol_q.solve(&grad);
            let mu = k_chol.solve(&(-(&g_stack * &qinv_grad)));
            let step = -(qinv_grad + &qinv_gt * &mu);
            (step, mu)
        };

        if step.amax() <= 1e-11 * (1.0 + x.amax()) {
            // stationary on the working set; check multiplier signs
            let mut worst: Option<(f64, usize)> = None;
            for pos in 0..working.len() {
                let l = mu[pos];
                if l < -dual_tol && worst.is_none_or(|(wl, _)| l < wl) {
                    worst = Some((l, pos));
                }
            }
            match worst {
                None => {
                    let mut lambda = DVector::zeros(m);
                    for (pos, &wi) in working.iter().enumerate() {
                        lambda[wi] = mu[pos].max(0.0);
                    }
                    let nu = if p > 0 {
                        mu.rows(working.len(), p).into_owned()
                    } else {
                        DVector::zeros(0)
                    };
                    return Ok(LoopOutput { x, lambda, nu, iterations: iter });
                }
                Some((_, pos)) => {
                    working.remove(pos);
                }
            }
            continue;
        }

        // ratio test against non-working inequalities
        let mut alpha = 1.0_f64;
        let mut blocker: Option<usize> = None;
        if m > 0 {
            let a_step = a_mat * &step;
            let resid = a_mat * &x + ineq_rhs;
            let move_tol = 1e-13 * (1.0 + a_step.amax());
            for i in 0..m {
                if working.contains(&i) {
                    continue;
                }
                if a_step[i] > move_tol {
                    // strictly smaller keeps the lowest index on exact ties
                    let ratio = (-resid[i]).max(0.0) / a_step[i];
                    if ratio < alpha {
                        alpha = ratio;
                        blocker = Some(i);
                    }
                }
            }
        }
        x += alpha * &step;
        if let Some(b) = blocker {
            let pos = working.binary_search(&b).unwrap_or_else(|e| e);
            working.insert(pos, b);
        }
    }

    Err(Error::QpMaxIter { iterations: max_iter, residual: f64::NAN })
}

/// Feasibility restoration: minimize the worst inequality violation `t` with
/// a tiny recentered penalty keeping `x` near the equality-consistent start.
fn phase1(spec: &QpSpec, x0: &DVector<f64>) -> Result<DVector<f64>> {
    let n = spec.n_vars();
    let m = spec.n_ineq();
    let p = spec.n_eq();

    let rho = 1e-10;
    let mut q_mat = DMatrix::zeros(n + 1, n + 1);
    for i in 0..n {
        q_mat[(i, i)] = rho;
    }
    q_mat[(n, n)] = 1.0;
    let mut q_vec = DVector::zeros(n + 1);
    for i in 0..n {
        q_vec[i] = -rho * x0[i];
    }
    q_vec[n] = 1.0;
    let chol_q = Cholesky::new(q_mat.clone()).expect("diagonal phase-1 Hessian");

    let mut a_aug = DMatrix::zeros(m, n + 1);
    a_aug.view_mut((0, 0), (m, n)).copy_from(&spec.a_mat);
    for i in 0..m {
        a_aug[(i, n)] = -1.0;
    }
    let mut c_aug = DMatrix::zeros(p, n + 1);
    if p > 0 {
        c_aug.view_mut((0, 0), (p, n)).copy_from(&spec.c_mat);
    }

    let ineq_rhs = spec.ineq_rhs();
    let viol = (&spec.a_mat * x0 + &ineq_rhs).max();
    let mut z0 = DVector::zeros(n + 1);
    z0.rows_mut(0, n).copy_from(x0);
    z0[n] = viol.max(0.0);

    let max_iter = 50 * (n + m + p) + 200;
    let out = active_set_loop(&chol_q, &q_mat, &q_vec, &a_aug, &ineq_rhs, &c_aug, z0, max_iter)?;

    let t_star = out.x[n];
    let feas_tol = 1e-7 * (1.0 + ineq_rhs.amax());
    if t_star > feas_tol {
        return Err(Error::Infeasible { max_violation: t_star });
    }
    Ok(out.x.rows(0, n).into_owned())
}

/// Solve the QP from a cold start.
pub fn solve(spec: &QpSpec) -> Result<QpSolution> {
    solve_warm(spec, None)
}

/// Solve the QP, reusing a previous solution as the starting point when it is
/// (or projects to) a feasible point under the current offsets.
pub fn solve_warm(spec: &QpSpec, warm: Option<&QpSolution>) -> Result<QpSolution> {
    let n = spec.n_vars();
    let m = spec.n_ineq();
    let p = spec.n_eq();
    let ineq_rhs = spec.ineq_rhs();

    let feasible = |x: &DVector<f64>| -> bool {
        let eq_ok = if p > 0 {
            (&spec.c_mat * x + spec.eq_rhs()).amax() <= 1e-9 * (1.0 + spec.eq_rhs().amax())
        } else {
            true
        };
        let ineq_ok = if m > 0 {
            let r = &spec.a_mat * x + &ineq_rhs;
            (0..m).all(|i| r[i] <= 1e-9 * (1.0 + ineq_rhs[i].abs()))
        } else {
            true
        };
        eq_ok && ineq_ok
    };

    let mut x0 = match warm {
        Some(prev) if prev.x.len() == n => spec.equality_project(&prev.x),
        _ => spec.equality_start(),
    };
    if !feasible(&x0) {
        let cold = spec.equality_start();
        x0 = if feasible(&cold) { cold } else { phase1(spec, &cold)? };
    }

    let max_iter = 50 * (n + m + p) + 200;
    let out = active_set_loop(
        &spec.chol_q,
        &spec.q_mat,
        &spec.q_vec,
        &spec.a_mat,
        &ineq_rhs,
        &spec.c_mat,
        x0,
        max_iter,
    )?;

    let mut active_set = Vec::new();
    if m > 0 {
        let r = &spec.a_mat * &out.x + &ineq_rhs;
        for i in 0..m {
            let tol_act = 1e-7 * (1.0 + ineq_rhs[i].abs());
            if r[i].abs() <= tol_act {
                active_set.push(i);
            }
        }
    }

    let mut sol = QpSolution {
        x: out.x,
        lambda: out.lambda,
        nu: out.nu,
        active_set,
        kkt_residual: 0.0,
        iterations: out.iterations,
    };
    let resid = kkt_residuals(spec, &sol).max();
    sol.kkt_residual = resid;

    let bound = 1e-8 * (1.0 + spec.q_vec.norm());
    if resid > bound {
        return Err(Error::QpResidual { residual: resid, bound });
    }
    Ok(sol)
}

/// Jacobian of the primal solution (and the active duals) with respect to a
/// chosen set of constraint offsets.
#[derive(Debug, Clone)]
pub struct SolutionJacobian {
    /// n_vars x wrt.len(): column k is d(x*)/d(wrt[k]).
    pub dx: DMatrix<f64>,
    /// (|active| + n_eq) x wrt.len(): rows are active-inequality multipliers
    /// (in `active` order) followed by equality multipliers.
    pub dduals: DMatrix<f64>,
    /// Active inequality rows underlying the dual block.
    pub active: Vec<usize>,
}

/// Closed-form solution Jacobian on the current active-set region.
///
/// Columns requested for inactive inequality offsets are exactly zero; the
/// map is affine on the region, so the Jacobian is constant there. Requires
/// LICQ and strict complementarity at the solution.
pub fn solution_jacobian(
    spec: &QpSpec,
    sol: &QpSolution,
    wrt: &[Offset],
) -> Result<SolutionJacobian> {
    let licq = check_licq(spec, sol);
    if !licq.satisfied {
        return Err(Error::LicqViolated { rank: licq.rank, rows: licq.rows });
    }
    let lambda_min_tol = 1e-9;
    for &i in &sol.active_set {
        if sol.lambda[i] < lambda_min_tol {
            return Err(Error::DegenerateActive {
                constraint: format!("inequality {i}"),
                lambda: sol.lambda[i],
            });
        }
    }
    for &o in wrt {
        match o {
            Offset::Ineq(i) if i >= spec.n_ineq() => {
                return Err(Error::Dim(format!("inequality offset {i} out of range")));
            }
            Offset::Eq(j) if j >= spec.n_eq() => {
                return Err(Error::Dim(format!("equality offset {j} out of range")));
            }
            _ => {}
        }
    }

    let n = spec.n_vars();
    let p = spec.n_eq();
    let n_act = sol.active_set.len();
    let k = n_act + p;

    let mut dx = DMatrix::zeros(n, wrt.len());
    let mut dduals = DMatrix::zeros(k, wrt.len());
    if k == 0 {
        // unconstrained optimum: x* = -Q^{-1} q does not see the offsets
        return Ok(SolutionJacobian { dx, dduals, active: sol.active_set.clone() });
    }

    let mut g_stack = DMatrix::zeros(k, n);
    for (r, &i) in sol.active_set.iter().enumerate() {
        g_stack.row_mut(r).copy_from(&spec.a_mat.row(i));
    }
    for r in 0..p {
        g_stack.row_mut(n_act + r).copy_from(&spec.c_mat.row(r));
    }
    let qinv_gt = spec.chol_q.solve(&g_stack.transpose());
    let big_q = &g_stack * &qinv_gt;
    let big_q_chol = Cholesky::new(big_q).ok_or(Error::LicqViolated { rank: 0, rows: k })?;

    for (col, &o) in wrt.iter().enumerate() {
        let pos = match o {
            Offset::Ineq(i) => match sol.active_set.iter().position(|&a| a == i) {
                Some(pos) => pos,
                // inactive inequality: the solution map has no such term
                None => continue,
            },
            Offset::Eq(j) => n_act + j,
        };
        let mut e = DVector::zeros(k);
        e[pos] = 1.0;
        let dmu = big_q_chol.solve(&e);
        dx.set_column(col, &(-(&qinv_gt * &dmu)));
        dduals.set_column(col, &dmu);
    }

    Ok(SolutionJacobian { dx, dduals, active: sol.active_set.clone() })
}
