//! The matrix triple (A, B, C) of the linearized equations `A η̈ + B η̇ + C η = 0`,
//! either validated from user input or obtained by finite-difference linearization
//! of a Lagrangian model about a stable equilibrium.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{GyroError, MatrixName, Result};
use crate::linalg::{check_len, max_abs};

/// Relative eigenvalue floor for the positive-definiteness test.
pub const PD_EPS: f64 = 1e-12;

/// Base finite-difference step; the step along coordinate r is `h * (1 + |q*_r|)`.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Validated mass, gyroscopic and stiffness matrices.
///
/// A and C are exactly symmetric and positive definite, B is exactly
/// antisymmetric. Fields are private so the invariants cannot be broken after
/// construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemMatrices {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
}

impl SystemMatrices {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, tol: f64) -> Result<Self> {
        validate_system(a, b, c, tol)
    }

    /// Number of degrees of freedom.
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    /// True when the gyroscopic matrix vanishes identically.
    pub fn is_classical(&self) -> bool {
        self.b.iter().all(|&x| x == 0.0)
    }
}

/// Checks the structure of (A, B, C) and projects each matrix onto its exact
/// structure.
///
/// Symmetry deviations are measured as `max |X_ij ∓ X_ji|` divided by the
/// largest entry of the whole triple, so a tiny symmetric perturbation of a
/// zero B is tolerated the same way as one of a large B.
pub fn validate_system(
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    tol: f64,
) -> Result<SystemMatrices> {
    let n = a.nrows();
    if n == 0 {
        return Err(GyroError::DimensionMismatch {
            what: "A must have at least one row".into(),
            expected: 1,
            found: 0,
        });
    }
    for (name, m) in [(MatrixName::A, &a), (MatrixName::B, &b), (MatrixName::C, &c)] {
        check_len(&format!("{name} rows"), n, m.nrows())?;
        check_len(&format!("{name} columns"), n, m.ncols())?;
        if m.iter().any(|x| !x.is_finite()) {
            return Err(GyroError::NonFiniteInput { matrix: name });
        }
    }

    let scale = max_abs(&a).max(max_abs(&b)).max(max_abs(&c));
    let scale = if scale > 0.0 { scale } else { 1.0 };

    let a = symmetrize(a, MatrixName::A, scale, tol)?;
    let c = symmetrize(c, MatrixName::C, scale, tol)?;

    let b_sym = max_abs(&(&b + b.transpose())) / scale;
    if b_sym > tol {
        return Err(GyroError::NotAntisymmetric {
            matrix: MatrixName::B,
            deviation: b_sym,
            tol,
        });
    }
    let b = (&b - b.transpose()) * 0.5;

    check_positive_definite(&a, MatrixName::A)?;
    check_positive_definite(&c, MatrixName::C)?;

    Ok(SystemMatrices { a, b, c })
}

fn symmetrize(m: DMatrix<f64>, name: MatrixName, scale: f64, tol: f64) -> Result<DMatrix<f64>> {
    let dev = max_abs(&(&m - m.transpose())) / scale;
    if dev > tol {
        return Err(GyroError::NotSymmetric {
            matrix: name,
            deviation: dev,
            tol,
        });
    }
    Ok((&m + m.transpose()) * 0.5)
}

/// All eigenvalues must exceed `PD_EPS * ‖m‖₂`.
pub(crate) fn check_positive_definite(m: &DMatrix<f64>, name: MatrixName) -> Result<()> {
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let max_abs_eig = eig.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let threshold = PD_EPS * max_abs_eig;
    if !(min > threshold) {
        return Err(GyroError::NotPositiveDefinite {
            matrix: name,
            min_eigenvalue: min,
            threshold,
        });
    }
    Ok(())
}

/// Numeric description of a scleronomous Lagrangian
/// `L = ½ a_kr(q) q̇^k q̇^r + b_r(q) q̇^r + L₀(q)` with generalized forces `Q(q, q̇)`.
///
/// Each evaluation may fail; the error string is surfaced as
/// [`GyroError::EvaluationFailure`].
pub trait LagrangianModel {
    fn dim(&self) -> usize;

    /// The velocity-independent part L₀.
    fn potential(&self, q: &DVector<f64>) -> Result<f64, String>;

    /// The coefficients b_r of the part linear in the velocities.
    fn linear_coefficients(&self, q: &DVector<f64>) -> Result<DVector<f64>, String>;

    /// The kinetic metric a_kr.
    fn kinetic_metric(&self, q: &DVector<f64>) -> Result<DMatrix<f64>, String>;

    /// Generalized forces; expected to do no work (`Q_r q̇^r = 0`).
    fn generalized_force(&self, q: &DVector<f64>, qdot: &DVector<f64>)
        -> Result<DVector<f64>, String>;
}

type ScalarFn = Box<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
type VectorFn = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type MatrixFn = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
type ForceFn = Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// A [`LagrangianModel`] assembled from closures. Omitted parts default to
/// `b = 0`, `a = I` and `Q = 0`. Non-finite outputs count as evaluation failures.
pub struct FnModel {
    n: usize,
    potential: ScalarFn,
    linear: Option<VectorFn>,
    metric: Option<MatrixFn>,
    force: Option<ForceFn>,
}

impl FnModel {
    pub fn new(n: usize, potential: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            n,
            potential: Box::new(potential),
            linear: None,
            metric: None,
            force: None,
        }
    }

    pub fn with_linear_coefficients(
        mut self,
        b: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.linear = Some(Box::new(b));
        self
    }

    pub fn with_kinetic_metric(
        mut self,
        a: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.metric = Some(Box::new(a));
        self
    }

    pub fn with_generalized_force(
        mut self,
        q: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.force = Some(Box::new(q));
        self
    }
}

fn finite_vec(v: DVector<f64>, what: &str) -> Result<DVector<f64>, String> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(format!("{what} returned a non-finite value"))
    }
}

impl LagrangianModel for FnModel {
    fn dim(&self) -> usize {
        self.n
    }

    fn potential(&self, q: &DVector<f64>) -> Result<f64, String> {
        let v = (self.potential)(q);
        if v.is_finite() {
            Ok(v)
        } else {
            Err("L0 returned a non-finite value".into())
        }
    }

    fn linear_coefficients(&self, q: &DVector<f64>) -> Result<DVector<f64>, String> {
        match &self.linear {
            Some(f) => finite_vec(f(q), "b"),
            None => Ok(DVector::zeros(self.n)),
        }
    }

    fn kinetic_metric(&self, q: &DVector<f64>) -> Result<DMatrix<f64>, String> {
        match &self.metric {
            Some(f) => {
                let m = f(q);
                if m.iter().all(|x| x.is_finite()) {
                    Ok(m)
                } else {
                    Err("a returned a non-finite value".into())
                }
            }
            None => Ok(DMatrix::identity(self.n, self.n)),
        }
    }

    fn generalized_force(
        &self,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
    ) -> Result<DVector<f64>, String> {
        match &self.force {
            Some(f) => finite_vec(f(q, qdot), "Q"),
            None => Ok(DVector::zeros(self.n)),
        }
    }
}

/// Configuration about which the system is linearized.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumPoint(pub DVector<f64>);

impl EquilibriumPoint {
    pub fn new(q_star: Vec<f64>) -> Self {
        Self(DVector::from_vec(q_star))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Per-coordinate central-difference steps `h * (1 + |q*_r|)`.
    fn steps(&self, h: f64) -> Vec<f64> {
        self.0.iter().map(|q| h * (1.0 + q.abs())).collect()
    }
}

fn eval_err(e: String) -> GyroError {
    GyroError::EvaluationFailure(e)
}

fn shifted(q: &DVector<f64>, moves: &[(usize, f64)]) -> DVector<f64> {
    let mut p = q.clone();
    for &(i, d) in moves {
        p[i] += d;
    }
    p
}

fn fd_gradient(model: &dyn LagrangianModel, q: &DVector<f64>, steps: &[f64]) -> Result<DVector<f64>> {
    let mut g = DVector::zeros(q.len());
    for (r, &h) in steps.iter().enumerate() {
        let fp = model.potential(&shifted(q, &[(r, h)])).map_err(eval_err)?;
        let fm = model.potential(&shifted(q, &[(r, -h)])).map_err(eval_err)?;
        g[r] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

fn fd_hessian(model: &dyn LagrangianModel, q: &DVector<f64>, steps: &[f64]) -> Result<DMatrix<f64>> {
    let n = q.len();
    let f = |p: DVector<f64>| model.potential(&p).map_err(eval_err);
    let f0 = f(q.clone())?;
    let mut hess = DMatrix::zeros(n, n);
    for k in 0..n {
        let hk = steps[k];
        let fp = f(shifted(q, &[(k, hk)]))?;
        let fm = f(shifted(q, &[(k, -hk)]))?;
        hess[(k, k)] = (fp - 2.0 * f0 + fm) / (hk * hk);
        for r in (k + 1)..n {
            let hr = steps[r];
            let fpp = f(shifted(q, &[(k, hk), (r, hr)]))?;
            let fpm = f(shifted(q, &[(k, hk), (r, -hr)]))?;
            let fmp = f(shifted(q, &[(k, -hk), (r, hr)]))?;
            let fmm = f(shifted(q, &[(k, -hk), (r, -hr)]))?;
            let v = (fpp - fpm - fmp + fmm) / (4.0 * hk * hr);
            hess[(k, r)] = v;
            hess[(r, k)] = v;
        }
    }
    Ok(hess)
}

fn check_model_dim(model: &dyn LagrangianModel, q_star: &EquilibriumPoint) -> Result<()> {
    check_len("equilibrium point", model.dim(), q_star.dim())
}

/// True iff the central-difference gradient of L₀ at q* has norm below `tol`
/// and the finite-difference Hessian is negative definite.
pub fn check_equilibrium(
    model: &dyn LagrangianModel,
    q_star: &EquilibriumPoint,
    h: f64,
    tol: f64,
) -> Result<bool> {
    check_model_dim(model, q_star)?;
    let steps = q_star.steps(h);
    let grad = fd_gradient(model, &q_star.0, &steps)?;
    if !(grad.norm() < tol) {
        return Ok(false);
    }
    let hess = fd_hessian(model, &q_star.0, &steps)?;
    Ok(check_positive_definite(&(-hess), MatrixName::C).is_ok())
}

/// Finite-difference linearization of the model about `q_star`:
/// `A = a(q*)`, `C = -∂²L₀/∂q∂q`, and
/// `B_kr = ∂b_k/∂q^r - ∂b_r/∂q^k - ∂Q_k/∂q̇^r` at `(q*, 0)`.
pub fn linearize_at_equilibrium(
    model: &dyn LagrangianModel,
    q_star: &EquilibriumPoint,
    h: f64,
    tol: f64,
) -> Result<SystemMatrices> {
    check_model_dim(model, q_star)?;
    let n = model.dim();
    let q = &q_star.0;
    let steps = q_star.steps(h);

    let grad = fd_gradient(model, q, &steps)?;
    if !check_equilibrium(model, q_star, h, tol)? {
        return Err(GyroError::NotEquilibrium {
            gradient_norm: grad.norm(),
        });
    }

    let a = model.kinetic_metric(q).map_err(eval_err)?;
    let c = -fd_hessian(model, q, &steps)?;

    // db[(k, r)] = ∂b_k/∂q^r
    let mut db = DMatrix::zeros(n, n);
    for (r, &hr) in steps.iter().enumerate() {
        let bp = model.linear_coefficients(&shifted(q, &[(r, hr)])).map_err(eval_err)?;
        let bm = model.linear_coefficients(&shifted(q, &[(r, -hr)])).map_err(eval_err)?;
        check_len("b output", n, bp.len())?;
        check_len("b output", n, bm.len())?;
        db.set_column(r, &((bp - bm) / (2.0 * hr)));
    }

    // jq[(k, r)] = ∂Q_k/∂q̇^r at zero velocity
    let zero = DVector::zeros(n);
    let mut jq = DMatrix::zeros(n, n);
    for r in 0..n {
        let qp = model.generalized_force(q, &shifted(&zero, &[(r, h)])).map_err(eval_err)?;
        let qm = model.generalized_force(q, &shifted(&zero, &[(r, -h)])).map_err(eval_err)?;
        check_len("Q output", n, qp.len())?;
        check_len("Q output", n, qm.len())?;
        jq.set_column(r, &((qp - qm) / (2.0 * h)));
    }
    let deviation = max_abs(&(&jq + jq.transpose())) / max_abs(&jq).max(1.0);
    if deviation > tol {
        return Err(GyroError::ForceNotGyroscopic { deviation, tol });
    }

    let b = &db - db.transpose() - jq;
    validate_system(a, b, c, tol)
}
