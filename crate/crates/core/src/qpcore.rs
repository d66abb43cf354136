//! Dense convex quadratic programs
//!
//! ```text
//! minimize   ½ z'Qz + q'z
//! subject to G z ≤ h,  E z = f,  lb ≤ z ≤ ub
//! ```
//!
//! All constraints are folded into a single two-sided system `l ≤ C z ≤ u`
//! (equality rows first, then inequality rows, then finite bound rows) and
//! solved by operator splitting on an equilibrated copy of the data, followed
//! by an active-set polish. Problems with no inequality rows are solved
//! directly from their KKT system.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct QProblem {
    pub quad: DMatrix<f64>,
    pub lin: DVector<f64>,
    pub ineq: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
    pub eq: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QProblem {
    /// Unconstrained problem `½ z'Qz + q'z`.
    pub fn new(quad: DMatrix<f64>, lin: DVector<f64>) -> Self {
        let n = lin.len();
        Self {
            quad,
            lin,
            ineq: DMatrix::zeros(0, n),
            ineq_rhs: DVector::zeros(0),
            eq: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn with_inequalities(mut self, g: DMatrix<f64>, h: DVector<f64>) -> Self {
        self.ineq = g;
        self.ineq_rhs = h;
        self
    }

    pub fn with_equalities(mut self, e: DMatrix<f64>, f: DVector<f64>) -> Self {
        self.eq = e;
        self.eq_rhs = f;
        self
    }

    pub fn with_bounds(mut self, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn dim(&self) -> usize {
        self.lin.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.quad * z)) + self.lin.dot(z)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        let dims = [
            ("quadratic rows", self.quad.nrows()),
            ("quadratic columns", self.quad.ncols()),
            ("inequality columns", self.ineq.ncols()),
            ("equality columns", self.eq.ncols()),
            ("lower bounds", self.lower.len()),
            ("upper bounds", self.upper.len()),
        ];
        for (context, found) in dims {
            if found != n {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: n,
                    found,
                });
            }
        }
        if self.ineq_rhs.len() != self.ineq.nrows() {
            return Err(Error::DimensionMismatch {
                context: "inequality right-hand side",
                expected: self.ineq.nrows(),
                found: self.ineq_rhs.len(),
            });
        }
        if self.eq_rhs.len() != self.eq.nrows() {
            return Err(Error::DimensionMismatch {
                context: "equality right-hand side",
                expected: self.eq.nrows(),
                found: self.eq_rhs.len(),
            });
        }
        let finite = self
            .quad
            .iter()
            .chain(self.lin.iter())
            .chain(self.ineq.iter())
            .chain(self.eq.iter())
            .chain(self.eq_rhs.iter())
            .all(|v| v.is_finite());
        if !finite || self.ineq_rhs.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("quadratic program data"));
        }
        if self.lower.iter().chain(self.upper.iter()).any(|v| v.is_nan()) {
            return Err(Error::NonFinite("variable bounds"));
        }
        let scale = self.quad.abs().max().max(1.0);
        if (&self.quad - self.quad.transpose()).abs().max() > 1e-12 * scale {
            return Err(Error::NotSymmetric("quadratic term"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

/// Multipliers with the sign convention of `∇ = Qz + q + E'ν + G'λ + w = 0`:
/// `λ ≥ 0`, bound multipliers `w_j > 0` at an upper bound and `< 0` at a lower bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Duals {
    pub eq: DVector<f64>,
    pub ineq: DVector<f64>,
    pub bounds: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct QPSolution {
    pub z: DVector<f64>,
    pub status: QpStatus,
    pub kkt: KktResiduals,
    pub duals: Duals,
    pub iterations: usize,
    pub polished: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct QpSettings {
    /// Absolute and relative termination tolerance.
    pub tol: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub relaxation: f64,
    pub polish: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 20_000,
            rho: 0.1,
            sigma: 1e-6,
            relaxation: 1.6,
            polish: true,
        }
    }
}

pub fn qp_solve(p: &QProblem, tol: f64, max_iter: usize) -> Result<QPSolution> {
    let settings = QpSettings {
        tol,
        max_iter,
        ..QpSettings::default()
    };
    qp_solve_with(p, &settings, None)
}

/// Folded constraint system `l ≤ C z ≤ u`.
struct Folded {
    c: DMatrix<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
    n_eq: usize,
    n_ineq: usize,
    box_vars: Vec<usize>,
}

impl Folded {
    fn new(p: &QProblem) -> Self {
        let n = p.dim();
        let box_vars: Vec<usize> = (0..n)
            .filter(|&j| p.lower[j].is_finite() || p.upper[j].is_finite())
            .collect();
        let n_eq = p.eq.nrows();
        let n_ineq = p.ineq.nrows();
        let rows = n_eq + n_ineq + box_vars.len();
        let mut c = DMatrix::zeros(rows, n);
        let mut l = DVector::zeros(rows);
        let mut u = DVector::zeros(rows);
        for r in 0..n_eq {
            c.row_mut(r).copy_from(&p.eq.row(r));
            l[r] = p.eq_rhs[r];
            u[r] = p.eq_rhs[r];
        }
        for r in 0..n_ineq {
            c.row_mut(n_eq + r).copy_from(&p.ineq.row(r));
            l[n_eq + r] = f64::NEG_INFINITY;
            u[n_eq + r] = p.ineq_rhs[r];
        }
        for (i, &j) in box_vars.iter().enumerate() {
            let r = n_eq + n_ineq + i;
            c[(r, j)] = 1.0;
            l[r] = p.lower[j];
            u[r] = p.upper[j];
        }
        Self {
            c,
            l,
            u,
            n_eq,
            n_ineq,
            box_vars,
        }
    }

    fn rows(&self) -> usize {
        self.l.len()
    }

    fn all_equalities(&self) -> bool {
        (0..self.rows()).all(|r| self.l[r] == self.u[r])
    }

    fn split_duals(&self, y: &DVector<f64>, n: usize) -> Duals {
        let mut bounds = DVector::zeros(n);
        for (i, &j) in self.box_vars.iter().enumerate() {
            bounds[j] = y[self.n_eq + self.n_ineq + i];
        }
        Duals {
            eq: y.rows(0, self.n_eq).clone_owned(),
            ineq: y.rows(self.n_eq, self.n_ineq).clone_owned(),
            bounds,
        }
    }
}

/// Ruiz-equilibrated problem: `Q̄ = c D Q D`, `q̄ = c D q`, `C̄ = E C D`.
struct Scaled {
    quad: DMatrix<f64>,
    lin: DVector<f64>,
    c: DMatrix<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
    d: DVector<f64>,
    e: DVector<f64>,
    cost: f64,
}

impl Scaled {
    fn new(p: &QProblem, f: &Folded) -> Self {
        let n = p.dim();
        let m = f.rows();
        let mut quad = p.quad.clone();
        let mut c = f.c.clone();
        let mut d = DVector::from_element(n, 1.0);
        let mut e = DVector::from_element(m, 1.0);
        let guard = |v: f64| if v < 1e-8 { 1.0 } else { v.min(1e8) };
        for _ in 0..15 {
            let mut dd = DVector::zeros(n);
            for j in 0..n {
                let mut nrm = quad.column(j).amax();
                if m > 0 {
                    nrm = nrm.max(c.column(j).amax());
                }
                dd[j] = 1.0 / guard(nrm).sqrt();
            }
            let mut de = DVector::zeros(m);
            for r in 0..m {
                de[r] = 1.0 / guard(c.row(r).amax()).sqrt();
            }
            for j in 0..n {
                for i in 0..n {
                    quad[(i, j)] *= dd[i] * dd[j];
                }
            }
            for j in 0..n {
                for r in 0..m {
                    c[(r, j)] *= de[r] * dd[j];
                }
            }
            d.component_mul_assign(&dd);
            e.component_mul_assign(&de);
        }
        let mut lin = p.lin.component_mul(&d);
        let mean_col = (0..n).map(|j| quad.column(j).amax()).sum::<f64>() / n.max(1) as f64;
        let cost = 1.0 / guard(mean_col.max(lin.amax())).clamp(1e-4, 1e4);
        quad *= cost;
        lin *= cost;
        let l = f.l.component_mul(&e);
        let u = f.u.component_mul(&e);
        Self {
            quad,
            lin,
            c,
            l,
            u,
            d,
            e,
            cost,
        }
    }

    fn unscale_x(&self, x: &DVector<f64>) -> DVector<f64> {
        x.component_mul(&self.d)
    }

    fn unscale_y(&self, y: &DVector<f64>) -> DVector<f64> {
        y.component_mul(&self.e) / self.cost
    }
}

/// Residuals of `(z, y)` against the original folded problem, with the
/// scale terms used by the relative stopping test.
struct Residuals {
    kkt: KktResiduals,
    stat_scale: f64,
    prim_scale: f64,
}

fn residuals(p: &QProblem, f: &Folded, z: &DVector<f64>, y: &DVector<f64>) -> Residuals {
    let qz = &p.quad * z;
    let cty = f.c.transpose() * y;
    let stationarity = (&qz + &p.lin + &cty).amax();
    let cz = &f.c * z;
    let mut primal: f64 = 0.0;
    let mut dual: f64 = 0.0;
    let mut compl: f64 = 0.0;
    let mut prim_scale = if cz.is_empty() { 0.0 } else { cz.amax() };
    for r in 0..f.rows() {
        let (lo, hi) = (f.l[r], f.u[r]);
        primal = primal.max(lo - cz[r]).max(cz[r] - hi);
        if lo.is_finite() {
            prim_scale = prim_scale.max(lo.abs());
        }
        if hi.is_finite() {
            prim_scale = prim_scale.max(hi.abs());
        }
        let yr = y[r];
        if lo == hi {
            continue;
        }
        if yr > 0.0 {
            if hi.is_infinite() {
                dual = dual.max(yr);
            } else {
                compl = compl.max(yr * (hi - cz[r]).abs());
            }
        } else if yr < 0.0 {
            if lo.is_infinite() {
                dual = dual.max(-yr);
            } else {
                compl = compl.max(-yr * (cz[r] - lo).abs());
            }
        }
    }
    let stat_scale = qz.amax().max(p.lin.amax()).max(if cty.is_empty() { 0.0 } else { cty.amax() });
    Residuals {
        kkt: KktResiduals {
            stationarity,
            primal: primal.max(0.0),
            dual,
            complementarity: compl,
        },
        stat_scale,
        prim_scale,
    }
}

fn accept(r: &Residuals, tol: f64) -> bool {
    let k = &r.kkt;
    k.stationarity <= tol * (1.0 + r.stat_scale)
        && k.primal <= tol * (1.0 + r.prim_scale)
        && k.dual <= tol * (1.0 + r.stat_scale)
        && k.complementarity <= tol * (1.0 + r.stat_scale.max(r.prim_scale))
}

/// Solves a QP, optionally warm-started from an earlier solution of a problem
/// with the same constraint structure.
pub fn qp_solve_with(p: &QProblem, settings: &QpSettings, warm: Option<&QPSolution>) -> Result<QPSolution> {
    p.validate()?;
    let n = p.dim();
    let folded = Folded::new(p);

    let infeasible = |folded: &Folded| {
        let z = DVector::zeros(n);
        let y = DVector::zeros(folded.rows());
        let r = residuals(p, folded, &z, &y);
        QPSolution {
            duals: folded.split_duals(&y, n),
            z,
            status: QpStatus::Infeasible,
            kkt: r.kkt,
            iterations: 0,
            polished: false,
        }
    };
    if (0..folded.rows()).any(|r| folded.l[r] > folded.u[r]) {
        return Ok(infeasible(&folded));
    }

    let scaled = Scaled::new(p, &folded);

    if folded.all_equalities() {
        return Ok(match solve_equality_kkt(&scaled) {
            Some((x, y)) => {
                let z = scaled.unscale_x(&x);
                let y = scaled.unscale_y(&y);
                let r = residuals(p, &folded, &z, &y);
                let status = if accept(&r, settings.tol) {
                    QpStatus::Optimal
                } else if r.kkt.primal > 1e3 * settings.tol * (1.0 + r.prim_scale) {
                    QpStatus::Infeasible
                } else {
                    QpStatus::MaxIter
                };
                QPSolution {
                    duals: folded.split_duals(&y, n),
                    z,
                    status,
                    kkt: r.kkt,
                    iterations: 1,
                    polished: false,
                }
            }
            None => infeasible(&folded),
        });
    }

    let warm_scaled = warm.map(|w| {
        let x = w.z.component_div(&scaled.d);
        let mut y = DVector::zeros(folded.rows());
        y.rows_mut(0, folded.n_eq).copy_from(&w.duals.eq);
        y.rows_mut(folded.n_eq, folded.n_ineq).copy_from(&w.duals.ineq);
        for (i, &j) in folded.box_vars.iter().enumerate() {
            y[folded.n_eq + folded.n_ineq + i] = w.duals.bounds[j];
        }
        let y = y.component_div(&scaled.e) * scaled.cost;
        (x, y)
    });

    let outcome = admm(p, &folded, &scaled, settings, warm_scaled);
    let (mut x, mut y, iterations, certified_infeasible) = outcome;
    if certified_infeasible {
        let mut sol = infeasible(&folded);
        sol.iterations = iterations;
        return Ok(sol);
    }

    let mut z = scaled.unscale_x(&x);
    let mut yu = scaled.unscale_y(&y);
    let mut res = residuals(p, &folded, &z, &yu);
    let mut polished = false;
    if settings.polish {
        if let Some((xp, yp)) = polish(&scaled, &x, &y) {
            let zp = scaled.unscale_x(&xp);
            let yup = scaled.unscale_y(&yp);
            let rp = residuals(p, &folded, &zp, &yup);
            if rp.kkt.max() <= res.kkt.max() || accept(&rp, settings.tol) {
                x = xp;
                y = yp;
                z = zp;
                yu = yup;
                res = rp;
                polished = true;
            }
        }
    }
    let _ = (&x, &y);
    let status = if accept(&res, settings.tol) {
        QpStatus::Optimal
    } else {
        QpStatus::MaxIter
    };
    Ok(QPSolution {
        duals: folded.split_duals(&yu, n),
        z,
        status,
        kkt: res.kkt,
        iterations,
        polished,
    })
}

fn factor_spd(mut m: DMatrix<f64>) -> Cholesky<f64, Dyn> {
    let n = m.nrows();
    let mut ridge = 0.0;
    loop {
        if let Some(ch) = Cholesky::new(m.clone()) {
            return ch;
        }
        let next = if ridge == 0.0 { 1e-10 } else { ridge * 10.0 };
        for i in 0..n {
            m[(i, i)] += next - ridge;
        }
        ridge = next;
    }
}

/// Solves `[[Q̄, C̄'], [C̄, 0]] [x; y] = [−q̄; b]` for all-equality (or empty)
/// constraint sets, tolerating dependent rows.
fn solve_equality_kkt(s: &Scaled) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = s.lin.len();
    let m = s.l.len();
    if m == 0 {
        let ch = factor_spd(s.quad.clone());
        let mut x = ch.solve(&(-&s.lin));
        // refinement against the unregularized system
        for _ in 0..3 {
            let r = -&s.lin - &s.quad * &x;
            x += ch.solve(&r);
        }
        return Some((x, DVector::zeros(0)));
    }
    let sol = solve_regularized_kkt(&s.quad, &s.lin, &s.c, &s.l, 1e-10)?;
    let _ = n;
    Some(sol)
}

/// `[[Q + δI, A'], [A, −δI]]` with iterative refinement on the unregularized system.
fn solve_regularized_kkt(
    quad: &DMatrix<f64>,
    lin: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    delta: f64,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = lin.len();
    let m = b.len();
    let mut kkt = DMatrix::zeros(n + m, n + m);
    kkt.view_mut((0, 0), (n, n)).copy_from(quad);
    kkt.view_mut((n, 0), (m, n)).copy_from(a);
    kkt.view_mut((0, n), (n, m)).copy_from(&a.transpose());
    let exact = kkt.clone();
    for i in 0..n {
        kkt[(i, i)] += delta;
    }
    for i in 0..m {
        kkt[(n + i, n + i)] -= delta;
    }
    let lu = kkt.lu();
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&(-lin));
    rhs.rows_mut(n, m).copy_from(b);
    let mut w = lu.solve(&rhs)?;
    let mut last = f64::INFINITY;
    for _ in 0..50 {
        let r = &rhs - &exact * &w;
        let rn = r.amax();
        if !rn.is_finite() {
            return None;
        }
        if rn < 1e-15 * (1.0 + rhs.amax()) || rn > 0.999 * last {
            break;
        }
        last = rn;
        w += lu.solve(&r)?;
    }
    Some((w.rows(0, n).clone_owned(), w.rows(n, m).clone_owned()))
}

fn project(v: f64, lo: f64, hi: f64) -> f64 {
    v.max(lo).min(hi)
}

/// Operator-splitting iterations on the scaled problem. Returns `(x, y, iterations, infeasible)`.
fn admm(
    p: &QProblem,
    folded: &Folded,
    s: &Scaled,
    settings: &QpSettings,
    warm: Option<(DVector<f64>, DVector<f64>)>,
) -> (DVector<f64>, DVector<f64>, usize, bool) {
    let n = s.lin.len();
    let m = s.l.len();
    let sigma = settings.sigma;
    let alpha = settings.relaxation;
    let ct = s.c.transpose();
    let rho_vec = |rho: f64| {
        DVector::from_fn(m, |r, _| {
            if s.l[r] == s.u[r] {
                1e3 * rho
            } else if s.l[r].is_infinite() && s.u[r].is_infinite() {
                1e-6
            } else {
                rho
            }
        })
    };
    let factor = |rho: &DVector<f64>| {
        let mut k = s.quad.clone();
        for i in 0..n {
            k[(i, i)] += sigma;
        }
        let weighted = DMatrix::from_fn(m, n, |r, c| s.c[(r, c)] * rho[r]);
        k += &ct * weighted;
        factor_spd(k)
    };

    let mut rho = settings.rho;
    let mut rho_v = rho_vec(rho);
    let mut chol = factor(&rho_v);

    let (mut x, mut y) = warm.unwrap_or_else(|| (DVector::zeros(n), DVector::zeros(m)));
    let mut z = DVector::from_fn(m, |r, _| project((s.c.row(r) * &x)[0], s.l[r], s.u[r]));

    let eps_pinf = 1e-6;
    let check_every = 5;
    let mut iter = 0;
    while iter < settings.max_iter {
        iter += 1;
        let y_prev = y.clone();
        let rhs = &x * sigma - &s.lin + &ct * (rho_v.component_mul(&z) - &y);
        let x_tilde = chol.solve(&rhs);
        let z_tilde = &s.c * &x_tilde;
        x = &x_tilde * alpha + &x * (1.0 - alpha);
        let z_relax = &z_tilde * alpha + &z * (1.0 - alpha);
        let z_new = DVector::from_fn(m, |r, _| project(z_relax[r] + y[r] / rho_v[r], s.l[r], s.u[r]));
        y += rho_v.component_mul(&(&z_relax - &z_new));
        z = z_new;

        if iter % check_every != 0 && iter != settings.max_iter {
            continue;
        }

        // termination in unscaled units
        let cx = &s.c * &x;
        let prim = (&cx - &z).component_div(&s.e).amax();
        let qx = &s.quad * &x;
        let cty = &ct * &y;
        let dual = (&qx + &s.lin + &cty).component_div(&s.d).amax() / s.cost;
        let prim_scale = cx.component_div(&s.e).amax().max(z.component_div(&s.e).amax());
        let dual_scale = qx
            .component_div(&s.d)
            .amax()
            .max(cty.component_div(&s.d).amax())
            .max(s.lin.component_div(&s.d).amax())
            / s.cost;
        let eps_prim = settings.tol * (1.0 + prim_scale);
        let eps_dual = settings.tol * (1.0 + dual_scale);
        if prim <= eps_prim && dual <= eps_dual {
            break;
        }

        // primal infeasibility certificate
        let dy = &y - &y_prev;
        let dy_norm = dy.component_mul(&s.e).amax();
        if dy_norm > 1e-12 {
            let ct_dy = (&ct * &dy).component_div(&s.d).amax();
            let mut support = 0.0;
            let mut finite = true;
            for r in 0..m {
                if dy[r] > 0.0 {
                    if s.u[r].is_infinite() {
                        finite = false;
                        break;
                    }
                    support += s.u[r] * dy[r];
                } else if dy[r] < 0.0 {
                    if s.l[r].is_infinite() {
                        finite = false;
                        break;
                    }
                    support += s.l[r] * dy[r];
                }
            }
            if finite && ct_dy <= eps_pinf * dy_norm && support < -eps_pinf * dy_norm {
                return (x, y, iter, true);
            }
        }

        if iter % (5 * check_every) == 0 {
            let ps = (&s.c * &x - &z).amax() / cx.amax().max(z.amax()).max(1e-30);
            let ds = (&qx + &s.lin + &cty).amax() / qx.amax().max(cty.amax()).max(s.lin.amax()).max(1e-30);
            if ps > 0.0 && ds > 0.0 {
                let new_rho = (rho * (ps / ds).sqrt()).clamp(1e-6, 1e6);
                if new_rho > 5.0 * rho || new_rho < 0.2 * rho {
                    rho = new_rho;
                    rho_v = rho_vec(rho);
                    chol = factor(&rho_v);
                }
            }
        }
    }
    let _ = (p, folded);
    (x, y, iter, false)
}

/// Guesses the active set from an operator-splitting iterate and solves the
/// corresponding equality-constrained KKT system.
fn polish(s: &Scaled, x: &DVector<f64>, y: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
    let m = s.l.len();
    let cx = &s.c * x;
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for r in 0..m {
        if s.l[r] == s.u[r] {
            rows.push(r);
            rhs.push(s.l[r]);
        } else if s.l[r].is_finite() && cx[r] - s.l[r] < -y[r] {
            rows.push(r);
            rhs.push(s.l[r]);
        } else if s.u[r].is_finite() && s.u[r] - cx[r] < y[r] {
            rows.push(r);
            rhs.push(s.u[r]);
        }
    }
    let n = x.len();
    let a = DMatrix::from_fn(rows.len(), n, |i, j| s.c[(rows[i], j)]);
    let b = DVector::from_vec(rhs);
    let (xp, ya) = solve_regularized_kkt(&s.quad, &s.lin, &a, &b, 1e-9)?;
    let mut yp = DVector::zeros(m);
    for (i, &r) in rows.iter().enumerate() {
        yp[r] = ya[i];
    }
    Some((xp, yp))
}

/// KKT residuals at `z` with multipliers recovered by least squares over the
/// equality rows and the constraints that are active (within `1e-7` relative slack).
pub fn kkt_check(p: &QProblem, z: &DVector<f64>) -> Result<KktResiduals> {
    p.validate()?;
    if z.len() != p.dim() {
        return Err(Error::DimensionMismatch {
            context: "candidate point",
            expected: p.dim(),
            found: z.len(),
        });
    }
    let folded = Folded::new(p);
    let cz = &folded.c * z;
    let mut active = Vec::new();
    for r in 0..folded.rows() {
        let (lo, hi) = (folded.l[r], folded.u[r]);
        let tol = 1e-7 * (1.0 + cz[r].abs());
        if lo == hi || (lo.is_finite() && cz[r] - lo <= tol) || (hi.is_finite() && hi - cz[r] <= tol) {
            active.push(r);
        }
    }
    let grad = &p.quad * z + &p.lin;
    let mut y = DVector::zeros(folded.rows());
    if !active.is_empty() {
        let jt = DMatrix::from_fn(p.dim(), active.len(), |i, k| folded.c[(active[k], i)]);
        let svd = jt.svd(true, true);
        let w = svd
            .solve(&(-&grad), 1e-12 * svd.singular_values.max().max(1.0))
            .map_err(|_| Error::NonFinite("least-squares multipliers"))?;
        for (k, &r) in active.iter().enumerate() {
            y[r] = w[k];
        }
    }
    Ok(residuals(p, &folded, z, &y).kkt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_identity() {
        let p = QProblem::new(DMatrix::identity(4, 4), DVector::from_element(4, -2.0));
        let s = qp_solve(&p, 1e-8, 1000).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.z - DVector::from_element(4, 2.0)).amax() < 1e-12);

        let p = QProblem::new(DMatrix::identity(3, 3) * 2.0, DVector::from_element(3, -2.0));
        let s = qp_solve(&p, 1e-8, 1000).unwrap();
        assert!((s.z - DVector::from_element(3, 1.0)).amax() < 1e-12);
    }

    #[test]
    fn clipped_by_box() {
        let p = QProblem::new(DMatrix::identity(3, 3), DVector::zeros(3))
            .with_bounds(DVector::from_element(3, 1.0), DVector::from_element(3, 2.0));
        let s = qp_solve(&p, 1e-8, 10_000).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.z - DVector::from_element(3, 1.0)).amax() < 1e-9);
        for j in 0..3 {
            assert!(s.duals.bounds[j] < 0.0);
        }
    }

    #[test]
    fn equality_only_matches_kkt_solve() {
        let q = DMatrix::from_row_slice(3, 3, &[4., 1., 0., 1., 3., 0.5, 0., 0.5, 2.]);
        let lin = DVector::from_vec(vec![1., -2., 0.5]);
        let e = DMatrix::from_row_slice(1, 3, &[1., 1., 1.]);
        let f = DVector::from_vec(vec![1.0]);
        let p = QProblem::new(q.clone(), lin.clone()).with_equalities(e.clone(), f.clone());
        let s = qp_solve(&p, 1e-10, 100).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        let mut kkt = DMatrix::zeros(4, 4);
        kkt.view_mut((0, 0), (3, 3)).copy_from(&q);
        kkt.view_mut((3, 0), (1, 3)).copy_from(&e);
        kkt.view_mut((0, 3), (3, 1)).copy_from(&e.transpose());
        let rhs = DVector::from_vec(vec![-1., 2., -0.5, 1.0]);
        let w = kkt.lu().solve(&rhs).unwrap();
        assert!((s.z - w.rows(0, 3)).amax() < 1e-12);
        let r = kkt_check(&p, &w.rows(0, 3).clone_owned()).unwrap();
        assert!(r.max() <= 1e-10);
    }

    #[test]
    fn dependent_equalities_are_tolerated() {
        let q = DMatrix::identity(3, 3);
        let lin = DVector::from_vec(vec![0.3, -0.1, 0.2]);
        let e = DMatrix::from_row_slice(2, 3, &[1., 1., 0., 2., 2., 0.]);
        let f = DVector::from_vec(vec![1.0, 2.0]);
        let p = QProblem::new(q, lin).with_equalities(e, f);
        let s = qp_solve(&p, 1e-9, 100).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.z[0] + s.z[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inconsistent_bounds_reported_infeasible() {
        let p = QProblem::new(DMatrix::identity(2, 2), DVector::zeros(2))
            .with_bounds(DVector::from_element(2, 1.0), DVector::from_element(2, 0.0));
        assert_eq!(qp_solve(&p, 1e-8, 100).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn conflicting_inequalities_reported_infeasible() {
        // z1 ≤ -1 and -z1 ≤ -1 (z1 ≥ 1)
        let g = DMatrix::from_row_slice(2, 2, &[1., 0., -1., 0.]);
        let h = DVector::from_vec(vec![-1.0, -1.0]);
        let p = QProblem::new(DMatrix::identity(2, 2), DVector::zeros(2)).with_inequalities(g, h);
        assert_eq!(qp_solve(&p, 1e-8, 20_000).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn kkt_check_primal_violation() {
        let p = QProblem::new(DMatrix::identity(2, 2), DVector::zeros(2))
            .with_inequalities(DMatrix::from_row_slice(1, 2, &[1., 1.]), DVector::from_vec(vec![1.0]))
            .with_bounds(DVector::from_element(2, -5.0), DVector::from_element(2, 5.0));
        let r = kkt_check(&p, &DVector::from_vec(vec![2.0, 1.5])).unwrap();
        assert!((r.primal - 2.5).abs() < 1e-14);
        let r = kkt_check(&p, &DVector::from_vec(vec![7.0, -1.0])).unwrap();
        assert!((r.primal - 5.0).abs() < 1e-14);
    }

    #[test]
    fn kkt_stationarity_grows_linearly() {
        let q = DMatrix::from_row_slice(2, 2, &[2., 0.5, 0.5, 1.]);
        let lin = DVector::from_vec(vec![-1., 1.]);
        let p = QProblem::new(q.clone(), lin.clone());
        let opt = q.clone().lu().solve(&(-&lin)).unwrap();
        let dir = DVector::from_vec(vec![0.6, -0.8]);
        let r: Vec<f64> = [1e-3, 2e-3, 4e-3]
            .iter()
            .map(|e| kkt_check(&p, &(&opt + &dir * *e)).unwrap().stationarity)
            .collect();
        assert!((r[1] / r[0] - 2.0).abs() < 1e-6);
        assert!((r[2] / r[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_asymmetric_and_mismatched() {
        let q = DMatrix::from_row_slice(2, 2, &[1., 1., 0., 1.]);
        assert!(matches!(
            qp_solve(&QProblem::new(q, DVector::zeros(2)), 1e-8, 10),
            Err(Error::NotSymmetric(_))
        ));
        let p = QProblem::new(DMatrix::identity(2, 2), DVector::zeros(3));
        assert!(qp_solve(&p, 1e-8, 10).is_err());
    }

    #[test]
    fn warm_start_reaches_same_point() {
        let q = DMatrix::from_row_slice(3, 3, &[3., 0.2, 0., 0.2, 2., 0.1, 0., 0.1, 1.]);
        let lin = DVector::from_vec(vec![-3., 1., -2.]);
        let g = DMatrix::from_row_slice(1, 3, &[1., 1., 1.]);
        let p = QProblem::new(q, lin)
            .with_inequalities(g, DVector::from_vec(vec![1.0]))
            .with_bounds(DVector::from_element(3, 0.0), DVector::from_element(3, 1.0));
        let cold = qp_solve(&p, 1e-9, 20_000).unwrap();
        let warm = qp_solve_with(&p, &QpSettings { tol: 1e-9, ..Default::default() }, Some(&cold)).unwrap();
        assert_eq!(cold.status, QpStatus::Optimal);
        assert_eq!(warm.status, QpStatus::Optimal);
        assert!((cold.z - warm.z).amax() < 1e-8);
        assert!(warm.iterations <= cold.iterations);
    }
}
