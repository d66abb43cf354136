//! Legendre moment coordinates for the two-parameter ensemble.
//!
//! The ensemble state `X(t; α, β)` is expanded in products of normalized
//! Legendre polynomials `L_p(a) L_q(b)` over the reference square `[-1, 1]²`.
//! Truncating at degrees `(N_α, N_β)` yields a finite bilinear system whose
//! generators are Kronecker products of the symmetric tridiagonal Jacobi
//! matrices `C_α`, `C_β` with the member generators.
//!
//! Moments are stored with the β index fastest:
//! `x = [x_{0,0}, …, x_{0,N_β}, x_{1,0}, …, x_{N_α,N_β}]`, each block of length `n`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::systems::{ControlBounds, EnsembleSystem};

const DOMAIN_SLACK: f64 = 1e-12;

/// Closed parameter interval `[lo, hi]` with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct ParamInterval {
    lo: f64,
    hi: f64,
}

impl ParamInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::NonFinite("parameter interval"));
        }
        if lo >= hi {
            return Err(Error::InvalidInterval { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.hi + self.lo)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

impl TryFrom<[f64; 2]> for ParamInterval {
    type Error = Error;

    fn try_from(v: [f64; 2]) -> Result<Self> {
        ParamInterval::new(v[0], v[1])
    }
}

impl From<ParamInterval> for [f64; 2] {
    fn from(iv: ParamInterval) -> Self {
        [iv.lo, iv.hi]
    }
}

/// Affine map `γ(s) = half_width·s + center` from `[-1, 1]` onto a parameter interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainTransform {
    pub center: f64,
    pub half_width: f64,
    lo: f64,
    hi: f64,
}

impl DomainTransform {
    /// Maps a reference coordinate to the parameter value. The endpoints are
    /// returned exactly.
    pub fn to_param(&self, s: f64) -> f64 {
        if s == -1.0 {
            self.lo
        } else if s == 1.0 {
            self.hi
        } else {
            self.half_width * s + self.center
        }
    }

    pub fn to_reference(&self, gamma: f64) -> f64 {
        if gamma == self.lo {
            -1.0
        } else if gamma == self.hi {
            1.0
        } else {
            (gamma - self.center) / self.half_width
        }
    }

    /// Symmetric tridiagonal Jacobi matrix of size `degree + 1` with diagonal
    /// `center` and off-diagonals `c_k · half_width`.
    pub fn jacobi_matrix(&self, degree: usize) -> DMatrix<f64> {
        let size = degree + 1;
        let mut c = DMatrix::from_diagonal_element(size, size, self.center);
        for k in 0..degree {
            let v = recurrence_coeff(k) * self.half_width;
            c[(k, k + 1)] = v;
            c[(k + 1, k)] = v;
        }
        c
    }
}

pub fn domain_transform(iv: &ParamInterval) -> DomainTransform {
    DomainTransform {
        center: 0.5 * (iv.hi + iv.lo),
        half_width: 0.5 * (iv.hi - iv.lo),
        lo: iv.lo,
        hi: iv.hi,
    }
}

/// Three-term recurrence constant `c_k = (k+1)/√((2k+3)(2k+1))` of the
/// normalized Legendre polynomials.
pub fn recurrence_coeff(k: usize) -> f64 {
    let k = k as f64;
    (k + 1.0) / ((2.0 * k + 3.0) * (2.0 * k + 1.0)).sqrt()
}

/// Normalized Legendre polynomials up to a fixed degree.
#[derive(Debug, Clone)]
pub struct LegendreBasis {
    max_degree: usize,
    coeffs: Vec<f64>,
}

impl LegendreBasis {
    pub fn new(max_degree: usize) -> Self {
        let coeffs = (0..=max_degree).map(recurrence_coeff).collect();
        Self { max_degree, coeffs }
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// All values `L_0(γ), …, L_{max_degree}(γ)`; no domain check.
    pub fn eval_all(&self, gamma: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.max_degree + 1);
        out.push(std::f64::consts::FRAC_1_SQRT_2);
        if self.max_degree == 0 {
            return out;
        }
        out.push(gamma * (1.5f64).sqrt());
        for k in 1..self.max_degree {
            let next = (gamma * out[k] - self.coeffs[k - 1] * out[k - 1]) / self.coeffs[k];
            out.push(next);
        }
        out
    }
}

/// `L_k(γ)` normalized so that `∫₋₁¹ L_k² = 1`.
pub fn legendre_eval(k: usize, gamma: f64) -> Result<f64> {
    check_reference("gamma", gamma)?;
    let gamma = gamma.clamp(-1.0, 1.0);
    Ok(LegendreBasis::new(k).eval_all(gamma)[k])
}

fn check_reference(what: &'static str, v: f64) -> Result<()> {
    if !v.is_finite() || v.abs() > 1.0 + DOMAIN_SLACK {
        return Err(Error::OutOfDomain { what, value: v });
    }
    Ok(())
}

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Nodes by Newton iteration on the Legendre recurrence.
    pub fn new(points: usize) -> Self {
        assert!(points >= 1, "quadrature needs at least one point");
        let n = points;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Classical (unnormalized) `P_n(x)` and its derivative.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// The lifted moment system `ẋ = A x + Σᵢ uᵢ Bᵢ x`.
#[derive(Debug, Clone)]
pub struct MomentSystem {
    pub n: usize,
    pub m: usize,
    pub n_alpha: usize,
    pub n_beta: usize,
    pub a: DMatrix<f64>,
    pub b: Vec<DMatrix<f64>>,
    pub x0: DVector<f64>,
    pub xt: DVector<f64>,
    /// Terminal projection, `p × D`.
    pub p: DMatrix<f64>,
    pub c_alpha: DMatrix<f64>,
    pub c_beta: DMatrix<f64>,
    /// Member generators the Kronecker products were built from.
    pub member_a: DMatrix<f64>,
    pub member_b: Vec<DMatrix<f64>>,
    pub alpha: DomainTransform,
    pub beta: DomainTransform,
    pub bounds: ControlBounds,
}

impl MomentSystem {
    /// Lifted dimension `D = n (N_α+1)(N_β+1)`.
    pub fn dim(&self) -> usize {
        self.n * (self.n_alpha + 1) * (self.n_beta + 1)
    }

    /// Flat offset of moment block `(p, q)`.
    pub fn block_offset(&self, p: usize, q: usize) -> usize {
        (p * (self.n_beta + 1) + q) * self.n
    }

    /// `A + Σᵢ uᵢ Bᵢ`.
    pub fn generator(&self, u: &[f64]) -> DMatrix<f64> {
        let mut g = self.a.clone();
        for (bi, &ui) in self.b.iter().zip(u) {
            if ui != 0.0 {
                g += bi * ui;
            }
        }
        g
    }

    /// `‖P(x − x_T)‖`.
    pub fn terminal_error(&self, x: &DVector<f64>) -> f64 {
        (&self.p * (x - &self.xt)).norm()
    }

    /// Stacked constraint rows of the unreduced discrete dynamics over `steps` intervals.
    pub fn stacked_dynamics_rows(&self, steps: usize) -> usize {
        self.dim() * steps
    }
}

/// Lifts an ensemble onto Legendre moments of degrees `(n_alpha, n_beta)`.
/// `projection` defaults to the `D × D` identity.
pub fn lift(
    system: &EnsembleSystem,
    n_alpha: usize,
    n_beta: usize,
    projection: Option<DMatrix<f64>>,
) -> Result<MomentSystem> {
    system.validate()?;
    let n = system.n();
    let alpha = domain_transform(&system.alpha);
    let beta = domain_transform(&system.beta);
    let c_alpha = alpha.jacobi_matrix(n_alpha);
    let c_beta = beta.jacobi_matrix(n_beta);
    let eye_a = DMatrix::<f64>::identity(n_alpha + 1, n_alpha + 1);
    let eye_b = DMatrix::<f64>::identity(n_beta + 1, n_beta + 1);

    let a = c_alpha.kronecker(&eye_b).kronecker(&system.a);
    let b: Vec<_> = system
        .b
        .iter()
        .map(|bi| eye_a.kronecker(&c_beta).kronecker(bi))
        .collect();

    let d = n * (n_alpha + 1) * (n_beta + 1);
    let mut x0 = DVector::zeros(d);
    let mut xt = DVector::zeros(d);
    x0.rows_mut(0, n).copy_from(&(&system.x0 * 2.0));
    xt.rows_mut(0, n).copy_from(&(&system.xt * 2.0));

    let p = match projection {
        Some(p) => {
            if p.ncols() != d {
                return Err(Error::DimensionMismatch {
                    context: "projection columns",
                    expected: d,
                    found: p.ncols(),
                });
            }
            p
        }
        None => DMatrix::identity(d, d),
    };

    Ok(MomentSystem {
        n,
        m: system.m(),
        n_alpha,
        n_beta,
        a,
        b,
        x0,
        xt,
        p,
        c_alpha,
        c_beta,
        member_a: system.a.clone(),
        member_b: system.b.clone(),
        alpha,
        beta,
        bounds: system.bounds,
    })
}

/// Evaluates the truncated expansion at reference coordinates `(a, b)`.
pub fn reconstruct(x: &DVector<f64>, a: f64, b: f64, ms: &MomentSystem) -> Result<DVector<f64>> {
    check_reference("a", a)?;
    check_reference("b", b)?;
    if x.len() != ms.dim() {
        return Err(Error::DimensionMismatch {
            context: "moment vector",
            expected: ms.dim(),
            found: x.len(),
        });
    }
    let la = LegendreBasis::new(ms.n_alpha).eval_all(a.clamp(-1.0, 1.0));
    let lb = LegendreBasis::new(ms.n_beta).eval_all(b.clamp(-1.0, 1.0));
    let mut out = DVector::zeros(ms.n);
    for (p, &lp) in la.iter().enumerate() {
        for (q, &lq) in lb.iter().enumerate() {
            let off = ms.block_offset(p, q);
            out.axpy(lp * lq, &x.rows(off, ms.n), 1.0);
        }
    }
    Ok(out)
}

/// Quadrature approximation of the moment integrals
/// `x_{p,q} = ∫∫ X(a,b) L_p(a) L_q(b) da db`.
///
/// `samples` holds the field at the tensor nodes of `rule`, row-major with the
/// `b` node index fastest.
pub fn project_moments(
    samples: &[DVector<f64>],
    rule: &GaussLegendre,
    n_alpha: usize,
    n_beta: usize,
) -> Result<DVector<f64>> {
    let pts = rule.len();
    let degree = n_alpha.max(n_beta);
    if pts < degree + 1 {
        return Err(Error::InsufficientQuadrature {
            points: pts,
            degree,
        });
    }
    if samples.len() != pts * pts {
        return Err(Error::DimensionMismatch {
            context: "quadrature samples",
            expected: pts * pts,
            found: samples.len(),
        });
    }
    let n = samples[0].len();
    let la: Vec<Vec<f64>> = rule
        .nodes
        .iter()
        .map(|&s| LegendreBasis::new(n_alpha).eval_all(s))
        .collect();
    let lb: Vec<Vec<f64>> = rule
        .nodes
        .iter()
        .map(|&s| LegendreBasis::new(n_beta).eval_all(s))
        .collect();
    let mut out = DVector::zeros(n * (n_alpha + 1) * (n_beta + 1));
    for i in 0..pts {
        for j in 0..pts {
            let sample = &samples[i * pts + j];
            if sample.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "quadrature sample",
                    expected: n,
                    found: sample.len(),
                });
            }
            let w = rule.weights[i] * rule.weights[j];
            for p in 0..=n_alpha {
                for q in 0..=n_beta {
                    let off = (p * (n_beta + 1) + q) * n;
                    out.rows_mut(off, n)
                        .axpy(w * la[i][p] * lb[j][q], sample, 1.0);
                }
            }
        }
    }
    Ok(out)
}

/// Default oracle order `2·max(N_α, N_β) + 8` points per axis.
pub fn default_quadrature_points(n_alpha: usize, n_beta: usize) -> usize {
    2 * n_alpha.max(n_beta) + 8
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::bloch_system;

    fn bloch_a() -> EnsembleSystem {
        bloch_system(
            ParamInterval::new(-1.0, 1.0).unwrap(),
            ParamInterval::new(0.9, 1.1).unwrap(),
            [0.0, 0.0, 1.0],
            [1.0, 0.0, 0.0],
            ControlBounds::default(),
        )
    }

    #[test]
    fn recurrence_constants() {
        assert!((recurrence_coeff(0) - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert!((recurrence_coeff(1) - 2.0 / 15f64.sqrt()).abs() < 1e-15);
        let vals: Vec<f64> = (0..=100).map(recurrence_coeff).collect();
        // strictly decreasing towards 1/2 from k = 1 on
        for w in vals[1..].windows(2) {
            assert!(w[1] < w[0]);
            assert!(w[1] > 0.5);
        }
        assert!((vals[100] - 0.5).abs() < 1e-4);
    }

    #[test]
    fn low_degree_values() {
        for g in [-1.0, -0.3, 0.0, 0.7, 1.0] {
            assert!((legendre_eval(0, g).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        }
        assert!((legendre_eval(1, 1.0).unwrap() - 1.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rejects_out_of_domain() {
        assert!(legendre_eval(3, 1.0 + 1e-9).is_err());
        assert!(legendre_eval(3, 1.0 + 1e-13).is_ok());
        assert!(legendre_eval(3, f64::NAN).is_err());
    }

    #[test]
    fn interval_validation() {
        assert!(ParamInterval::new(1.0, 1.0).is_err());
        assert!(ParamInterval::new(2.0, 1.0).is_err());
        assert!(ParamInterval::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn transforms() {
        let t = domain_transform(&ParamInterval::new(-1.0, 1.0).unwrap());
        assert_eq!((t.center, t.half_width), (0.0, 1.0));
        let iv = ParamInterval::new(0.9, 1.1).unwrap();
        let t = domain_transform(&iv);
        assert!((t.center - 1.0).abs() < 1e-15 && (t.half_width - 0.1).abs() < 1e-15);
        assert_eq!(t.to_param(-1.0), 0.9);
        assert_eq!(t.to_param(1.0), 1.1);
        let t = domain_transform(&ParamInterval::new(3.5, 5.5).unwrap());
        assert_eq!((t.center, t.half_width), (4.5, 1.0));
    }

    #[test]
    fn gauss_rule_integrates_polynomials() {
        let rule = GaussLegendre::new(7);
        // exact for degree 13
        for deg in 0..=13 {
            let q: f64 = rule
                .nodes
                .iter()
                .zip(&rule.weights)
                .map(|(x, w)| w * x.powi(deg))
                .sum();
            let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
            assert!((q - exact).abs() < 1e-14, "degree {deg}: {q} vs {exact}");
        }
    }

    #[test]
    fn lifted_dimensions() {
        let ms = lift(&bloch_a(), 4, 3, None).unwrap();
        assert_eq!(ms.dim(), 60);
        assert_eq!(ms.stacked_dynamics_rows(300), 18_000);
    }

    #[test]
    fn zero_degree_lift_is_center_member() {
        let sys = bloch_system(
            ParamInterval::new(0.5, 1.5).unwrap(),
            ParamInterval::new(0.9, 1.1).unwrap(),
            [0.0, 0.0, 1.0],
            [1.0, 0.0, 0.0],
            ControlBounds::default(),
        );
        let ms = lift(&sys, 0, 0, None).unwrap();
        assert_eq!(ms.a, &sys.a * 1.0);
        assert!((&ms.b[0] - &sys.b[0]).abs().max() < 1e-15);
    }

    #[test]
    fn jacobi_blocks_in_lifted_drift() {
        let ms = lift(&bloch_a(), 4, 3, None).unwrap();
        let n = ms.n;
        for p in 0..=4 {
            for pp in 0..=4 {
                for q in 0..=3 {
                    for qq in 0..=3 {
                        let blk = ms
                            .a
                            .view((ms.block_offset(p, q), ms.block_offset(pp, qq)), (n, n))
                            .clone_owned();
                        let expected = if q == qq {
                            &ms.member_a * ms.c_alpha[(p, pp)]
                        } else {
                            DMatrix::zeros(n, n)
                        };
                        assert_eq!(blk, expected);
                    }
                }
            }
        }
        // tridiagonal
        for i in 0..5usize {
            for j in 0..5 {
                if i.abs_diff(j) > 1 {
                    assert_eq!(ms.c_alpha[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn reconstruct_uniform_state() {
        let ms = lift(&bloch_a(), 4, 3, None).unwrap();
        for &(a, b) in &[(-1.0, -1.0), (0.3, -0.2), (1.0, 0.9)] {
            let x = reconstruct(&ms.x0, a, b, &ms).unwrap();
            assert!((x - DVector::from_vec(vec![0.0, 0.0, 1.0])).norm() < 1e-15);
        }
    }

    #[test]
    fn reconstruct_single_moment() {
        let ms = lift(&bloch_a(), 2, 2, None).unwrap();
        let mut x = DVector::zeros(ms.dim());
        let v = [0.3, -1.2, 2.0];
        let off = ms.block_offset(1, 0);
        for i in 0..3 {
            x[off + i] = v[i];
        }
        let r = reconstruct(&x, 1.0, 0.0, &ms).unwrap();
        let scale = 1.5f64.sqrt() * std::f64::consts::FRAC_1_SQRT_2;
        for i in 0..3 {
            assert!((r[i] - v[i] * scale).abs() < 1e-15);
        }
    }

    #[test]
    fn projection_of_simple_fields() {
        let rule = GaussLegendre::new(default_quadrature_points(3, 3));
        let x0 = DVector::from_vec(vec![0.2, -0.5, 1.0]);
        let samples: Vec<_> = rule
            .nodes
            .iter()
            .flat_map(|_| rule.nodes.iter().map(|_| x0.clone()))
            .collect();
        let m = project_moments(&samples, &rule, 3, 3).unwrap();
        for (i, v) in m.iter().enumerate() {
            let expect = if i < 3 { 2.0 * x0[i] } else { 0.0 };
            assert!((v - expect).abs() < 1e-12);
        }

        let samples: Vec<_> = rule
            .nodes
            .iter()
            .flat_map(|&a| {
                rule.nodes.iter().map(move |&b| {
                    let v = legendre_eval(2, a).unwrap() * legendre_eval(1, b).unwrap();
                    DVector::from_vec(vec![v, 0.0, 0.0])
                })
            })
            .collect();
        let m = project_moments(&samples, &rule, 3, 3).unwrap();
        let off = (2 * 4 + 1) * 3;
        for (i, v) in m.iter().enumerate() {
            let expect = if i == off { 1.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-12, "index {i}: {v}");
        }
    }

    #[test]
    fn projection_needs_enough_points() {
        let rule = GaussLegendre::new(3);
        let samples = vec![DVector::zeros(3); 9];
        assert!(matches!(
            project_moments(&samples, &rule, 4, 1),
            Err(Error::InsufficientQuadrature { .. })
        ));
    }

    #[test]
    fn skew_generators_lift_to_skew() {
        let sys = bloch_a();
        let ms = lift(&sys, 3, 2, None).unwrap();
        assert_eq!(ms.a.transpose(), -&ms.a);
        for b in &ms.b {
            assert_eq!(b.transpose(), -b);
        }
        let mut neg = sys.clone();
        neg.a = -&neg.a;
        neg.b = neg.b.iter().map(|b| -b).collect();
        let ms_neg = lift(&neg, 3, 2, None).unwrap();
        assert_eq!(ms_neg.a, -&ms.a);
        for (x, y) in ms_neg.b.iter().zip(&ms.b) {
            assert_eq!(x, &-y);
        }
    }
}
