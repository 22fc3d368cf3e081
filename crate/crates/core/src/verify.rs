//! Independent oracles and the invariant suite.
//!
//! The reference integrator works directly on `A η̈ + B η̇ + C η = 0` with its
//! own factorization of A; it shares no code with the modal construction.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::complexmode::{
    complex_to_real, kernel_bilinear_defects, kernel_family, mode_residual, phase_map,
    real_orthonormality_residuals, real_to_complex, KernelFamily,
};
use crate::error::{GyroError, MatrixName, Result};
use crate::linalg::{cholesky, max_abs, spectral_norm};
use crate::spectral::{
    build_evolution_operator, build_gram, build_pairing, frequency_clusters, gram_of_basis,
    modal_basis, pair_residual, spectrum_direct, EvolutionOperator, GramMatrix, ModePair,
    SpectralClusters,
};
use crate::system::{SystemMatrices, PD_EPS};
use crate::trajectory::{
    energy, evaluate_acceleration, evaluate_state, mode_shapes, phase_point,
    project_initial_conditions, HarmonicParams, ModeShape, StateVector,
};

/// Steps per shortest period used by default for the reference integrator.
pub const STEPS_PER_PERIOD: f64 = 200.0;

/// Default integration horizon in units of `1/ω_min`.
pub const HORIZON: f64 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationResult {
    pub times: Vec<f64>,
    pub states: Vec<StateVector>,
    /// Largest step-doubling estimate of the local error over the sampled steps.
    pub max_step_error_estimate: f64,
}

/// Classic fixed-step fourth-order Runge–Kutta on the first-order form
/// `d/dt (η, η̇) = (η̇, -A⁻¹(C η + B η̇))`.
#[derive(Debug, Clone)]
pub struct Rk4 {
    n: usize,
    /// Row-major n × 2n matrix `-A⁻¹ [C B]`.
    force: Vec<f64>,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(sys: &SystemMatrices) -> Result<Self> {
        let n = sys.dim();
        let chol = cholesky(sys.a(), MatrixName::A)?;
        let mut rhs = DMatrix::zeros(n, 2 * n);
        rhs.columns_mut(0, n).copy_from(sys.c());
        rhs.columns_mut(n, n).copy_from(sys.b());
        let f = -chol.solve(&rhs);
        let force = (0..n)
            .flat_map(|i| (0..2 * n).map(move |j| (i, j)))
            .map(|(i, j)| f[(i, j)])
            .collect();
        Ok(Self {
            n,
            force,
            k: std::array::from_fn(|_| vec![0.0; 2 * n]),
            tmp: vec![0.0; 2 * n],
        })
    }

    fn deriv(n: usize, force: &[f64], x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(force.len(), 2 * n * n);
        out[..n].copy_from_slice(&x[n..]);
        for i in 0..n {
            let row = &force[i * 2 * n..(i + 1) * 2 * n];
            out[n + i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    /// Advances the stacked state `x` by `dt` in place.
    pub fn step(&mut self, x: &mut [f64], dt: f64) {
        let n = self.n;
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;
        Self::deriv(n, &self.force, x, k1);
        for i in 0..2 * n {
            tmp[i] = x[i] + 0.5 * dt * k1[i];
        }
        Self::deriv(n, &self.force, tmp, k2);
        for i in 0..2 * n {
            tmp[i] = x[i] + 0.5 * dt * k2[i];
        }
        Self::deriv(n, &self.force, tmp, k3);
        for i in 0..2 * n {
            tmp[i] = x[i] + dt * k3[i];
        }
        Self::deriv(n, &self.force, tmp, k4);
        for i in 0..2 * n {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }

    /// The one-step map of RK4 on this linear system,
    /// `P = I + hF + (hF)²/2 + (hF)³/6 + (hF)⁴/24`, stored column-major.
    pub fn propagator(&self, dt: f64) -> Propagator {
        let n = self.n;
        let mut f = DMatrix::zeros(2 * n, 2 * n);
        f.view_mut((0, n), (n, n)).fill_with_identity();
        for i in 0..n {
            for j in 0..2 * n {
                f[(n + i, j)] = self.force[i * 2 * n + j];
            }
        }
        let hf = f * dt;
        let id = DMatrix::identity(2 * n, 2 * n);
        // Horner form of the degree-4 Taylor polynomial
        let p = &id + &hf * (&id + &hf * (&id + &hf * (&id + &hf / 4.0) / 3.0) / 2.0);
        Propagator {
            dim: 2 * n,
            p: p.as_slice().to_vec(),
            buf: vec![0.0; 2 * n],
        }
    }

    fn doubling_estimate(&mut self, x: &[f64], dt: f64) -> f64 {
        let mut full = x.to_vec();
        self.step(&mut full, dt);
        let mut half = x.to_vec();
        self.step(&mut half, 0.5 * dt);
        self.step(&mut half, 0.5 * dt);
        full.iter()
            .zip(&half)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            * 16.0
            / 15.0
    }
}

/// Repeated fixed-size RK4 steps as a single matrix-vector product.
#[derive(Debug, Clone)]
pub struct Propagator {
    dim: usize,
    p: Vec<f64>,
    buf: Vec<f64>,
}

impl Propagator {
    pub fn step(&mut self, x: &mut [f64]) {
        self.buf.fill(0.0);
        for (j, col) in self.p.chunks_exact(self.dim).enumerate() {
            let xj = x[j];
            for (b, c) in self.buf.iter_mut().zip(col) {
                *b += c * xj;
            }
        }
        x.copy_from_slice(&self.buf);
    }
}

/// Step sizes covering `[0, t_end]`: `dt` repeated, with the last step
/// shortened when `t_end` is not a multiple of `dt`.
fn step_grid(t_end: f64, dt: f64) -> (usize, f64) {
    let ratio = t_end / dt;
    let steps = if (ratio - ratio.round()).abs() < 1e-9 * ratio.max(1.0) {
        ratio.round() as usize
    } else {
        ratio.ceil() as usize
    };
    let last = t_end - (steps as f64 - 1.0) * dt;
    (steps.max(1), last)
}

/// The instants `0, dt, 2dt, ..., t_end` visited by [`integrate_reference`].
pub fn step_times(t_end: f64, dt: f64) -> Result<Vec<f64>> {
    check_step_args(t_end, dt)?;
    let (steps, _) = step_grid(t_end, dt);
    Ok((0..=steps)
        .map(|i| if i == steps { t_end } else { i as f64 * dt })
        .collect())
}

fn check_step_args(t_end: f64, dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite() && t_end > 0.0 && t_end.is_finite()) {
        return Err(GyroError::EvaluationFailure(format!(
            "integration needs dt > 0 and t_end > 0 (got dt={dt}, t_end={t_end})"
        )));
    }
    Ok(())
}

/// Integrates from `ic` at t = 0 to `t_end`, recording every step.
pub fn integrate_reference(
    sys: &SystemMatrices,
    ic: &StateVector,
    t_end: f64,
    dt: f64,
) -> Result<IntegrationResult> {
    check_step_args(t_end, dt)?;
    crate::linalg::check_len("initial condition", sys.dim(), ic.dim())?;
    let mut rk = Rk4::new(sys)?;
    let (steps, last) = step_grid(t_end, dt);
    let stride = (steps / 256).max(1);

    let mut x: Vec<f64> = ic.stacked().iter().cloned().collect();
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(ic.clone());
    let mut err_est: f64 = 0.0;
    for i in 0..steps {
        let h = if i + 1 == steps { last } else { dt };
        if i % stride == 0 {
            err_est = err_est.max(rk.doubling_estimate(&x, h));
        }
        rk.step(&mut x, h);
        let t = if i + 1 == steps { t_end } else { (i + 1) as f64 * dt };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(GyroError::NonFinite { time: t });
        }
        times.push(t);
        states.push(StateVector::from_stacked(&DVector::from_column_slice(&x)));
    }
    Ok(IntegrationResult {
        times,
        states,
        max_step_error_estimate: err_est,
    })
}

/// The closed form of [`evaluate_state`] flattened for evaluation at millions
/// of instants without allocating.
struct FlatHarmonics {
    n: usize,
    modes: Vec<(f64, f64, f64)>,
    /// `h_k` then `r_k`, each of length n, per mode.
    shapes: Vec<f64>,
}

impl FlatHarmonics {
    fn new(shapes: &[ModeShape], params: &HarmonicParams) -> Self {
        let n = shapes.first().map_or(0, |s| s.h.len());
        Self {
            n,
            modes: shapes
                .iter()
                .zip(params.amplitudes.iter().zip(&params.phases))
                .map(|(m, (&a, &p))| (m.omega, a, p))
                .collect(),
            shapes: shapes
                .iter()
                .flat_map(|m| m.h.iter().chain(m.r.iter()).cloned())
                .collect(),
        }
    }

    fn eval(&self, t: f64, out: &mut [f64]) {
        let n = self.n;
        out.fill(0.0);
        for (k, &(omega, a, phase)) in self.modes.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let (sin, cos) = (omega * t + phase).sin_cos();
            let h = &self.shapes[2 * k * n..(2 * k + 1) * n];
            let r = &self.shapes[(2 * k + 1) * n..(2 * k + 2) * n];
            for j in 0..n {
                out[j] += (h[j] * cos + r[j] * sin) * a;
                out[n + j] += (r[j] * cos - h[j] * sin) * (a * omega);
            }
        }
    }
}

/// Max-norm distance between the RK4 trajectory and the closed form over
/// `[0, t_end]`, compared after every step without storing the trajectory.
pub fn max_oracle_discrepancy(
    sys: &SystemMatrices,
    shapes: &[ModeShape],
    params: &HarmonicParams,
    ic: &StateVector,
    t_end: f64,
    dt: f64,
) -> Result<f64> {
    check_step_args(t_end, dt)?;
    crate::linalg::check_len("initial condition", sys.dim(), ic.dim())?;
    crate::linalg::check_len("mode shapes", sys.dim(), shapes.len())?;
    let mut rk = Rk4::new(sys)?;
    let mut prop = rk.propagator(dt);
    let closed = FlatHarmonics::new(shapes, params);
    let (steps, last) = step_grid(t_end, dt);
    let mut x: Vec<f64> = ic.stacked().iter().cloned().collect();
    let mut exact = vec![0.0; x.len()];
    let mut worst: f64 = 0.0;
    for i in 0..steps {
        if i + 1 == steps {
            rk.step(&mut x, last);
        } else {
            prop.step(&mut x);
        }
        let t = if i + 1 == steps { t_end } else { (i + 1) as f64 * dt };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(GyroError::NonFinite { time: t });
        }
        closed.eval(t, &mut exact);
        for (a, b) in x.iter().zip(&exact) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

/// Default step `(2π/ω_max)/200`.
pub fn default_dt(basis: &[ModePair]) -> f64 {
    let w_max = basis.iter().map(|p| p.omega).fold(0.0, f64::max);
    2.0 * PI / w_max / STEPS_PER_PERIOD
}

/// Default horizon `20/ω_min`.
pub fn default_horizon(basis: &[ModePair]) -> f64 {
    let w_min = basis.iter().map(|p| p.omega).fold(f64::INFINITY, f64::min);
    HORIZON / w_min
}

/// Parameters of a seeded random system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomSystemSpec {
    pub n: usize,
    pub seed: u64,
    /// Upper bound on the condition numbers of A and C; must exceed 1.
    pub condition_cap: f64,
    /// ‖B‖₂ relative to `√(‖A‖₂ ‖C‖₂)`.
    pub b_scale: f64,
}

impl RandomSystemSpec {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            condition_cap: 1e4,
            b_scale: 1.0,
        }
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// `RᵀR + εI` with ε the smallest shift bringing the condition number under `cap`.
fn capped_gram(r: &DMatrix<f64>, cap: f64) -> DMatrix<f64> {
    let m = r.transpose() * r;
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let (lo, hi) = (eig.min().max(0.0), eig.max());
    let eps = ((hi - cap * lo) / (cap - 1.0)).max(0.0);
    let n = m.nrows();
    m + DMatrix::identity(n, n) * eps
}

/// Deterministic random system: `A = RᵀR + εI`, `C = SᵀS + εI`,
/// `B = b_scale·√(‖A‖₂‖C‖₂)·(T - Tᵀ)/‖T - Tᵀ‖₂`, with R, S, T standard
/// Gaussian matrices drawn from a ChaCha8 stream seeded by `spec.seed`.
pub fn random_system(spec: &RandomSystemSpec) -> Result<SystemMatrices> {
    assert!(spec.n >= 1, "random system needs n >= 1");
    assert!(spec.condition_cap > 1.0, "condition cap must exceed 1");
    let n = spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let r = gaussian_matrix(&mut rng, n);
    let s = gaussian_matrix(&mut rng, n);
    let t = gaussian_matrix(&mut rng, n);
    let a = capped_gram(&r, spec.condition_cap);
    let c = capped_gram(&s, spec.condition_cap);
    let skew = &t - t.transpose();
    let skew_norm = spectral_norm(&skew);
    let b = if spec.b_scale == 0.0 || skew_norm == 0.0 {
        DMatrix::zeros(n, n)
    } else {
        skew * (spec.b_scale * (spectral_norm(&a) * spectral_norm(&c)).sqrt() / skew_norm)
    };
    SystemMatrices::new(a, b, c, 1e-10)
}

/// The seeded ensemble used by the regression gates: `count` systems with
/// `n = 1 + seed % 8` and `b_scale` cycling through 0.5, 1, 1.5, 2.
pub fn standard_ensemble(count: u64) -> Vec<RandomSystemSpec> {
    const SCALES: [f64; 4] = [0.5, 1.0, 1.5, 2.0];
    (0..count)
        .map(|seed| RandomSystemSpec {
            n: 1 + (seed % 8) as usize,
            seed,
            condition_cap: 1e4,
            b_scale: SCALES[((seed / 8) % 4) as usize],
        })
        .collect()
}

/// Tolerances of the invariant suite. Override individual entries with a
/// comma-separated `key=value` list (see [`ToleranceProfile::apply_overrides`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToleranceProfile {
    pub ortho: f64,
    pub residual: f64,
    pub eigen: f64,
    pub gram: f64,
    pub roundtrip: f64,
    pub conservation: f64,
    pub oracle: f64,
    pub classical: f64,
}

impl Default for ToleranceProfile {
    fn default() -> Self {
        Self {
            ortho: 1e-9,
            residual: 1e-9,
            eigen: 1e-10,
            gram: 1e-10,
            roundtrip: 1e-10,
            conservation: 1e-9,
            oracle: 1e-6,
            classical: 1e-8,
        }
    }
}

impl ToleranceProfile {
    pub const ENV_VAR: &'static str = "GYROMODAL_TOL_PROFILE";

    /// Applies overrides such as `ortho=1e-12,oracle=1e-5`.
    pub fn apply_overrides(&mut self, spec: &str) -> std::result::Result<(), String> {
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got `{item}`"))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| format!("bad number in `{item}`"))?;
            if !(value > 0.0) {
                return Err(format!("tolerance must be positive in `{item}`"));
            }
            let slot = match key.trim() {
                "ortho" => &mut self.ortho,
                "residual" => &mut self.residual,
                "eigen" => &mut self.eigen,
                "gram" => &mut self.gram,
                "roundtrip" => &mut self.roundtrip,
                "conservation" => &mut self.conservation,
                "oracle" => &mut self.oracle,
                "classical" => &mut self.classical,
                other => return Err(format!("unknown tolerance `{other}`")),
            };
            *slot = value;
        }
        Ok(())
    }

    /// Defaults overridden by `GYROMODAL_TOL_PROFILE` when it is set.
    pub fn from_env() -> std::result::Result<Self, String> {
        let mut p = Self::default();
        if let Ok(spec) = std::env::var(Self::ENV_VAR) {
            p.apply_overrides(&spec)?;
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    /// residual ≤ bound
    #[serde(rename = "<=")]
    AtMost,
    /// residual < bound
    #[serde(rename = "<")]
    Below,
    /// residual > bound
    #[serde(rename = ">")]
    Above,
}

impl Comparator {
    fn holds(self, residual: f64, bound: f64) -> bool {
        match self {
            Comparator::AtMost => residual <= bound,
            Comparator::Below => residual < bound,
            Comparator::Above => residual > bound,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::AtMost => "<=",
            Comparator::Below => "<",
            Comparator::Above => ">",
        }
    }
}

/// JSON has no NaN or infinity; a check that could not be evaluated carries a
/// NaN residual, written as `null`.
mod nullable_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    #[serde(with = "nullable_f64")]
    pub residual: f64,
    pub comparator: Comparator,
    pub bound: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub detail: Option<String>,
}

impl CheckOutcome {
    fn new(name: &str, residual: f64, comparator: Comparator, bound: f64) -> Self {
        Self {
            name: name.to_string(),
            residual,
            comparator,
            bound,
            passed: comparator.holds(residual, bound),
            detail: None,
        }
    }

    fn failed(name: &str, err: &GyroError) -> Self {
        Self {
            name: name.to_string(),
            residual: f64::NAN,
            comparator: Comparator::AtMost,
            bound: 0.0,
            passed: false,
            detail: Some(err.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub n: usize,
    pub checks: Vec<CheckOutcome>,
    pub passed: bool,
}

impl InvariantReport {
    pub fn check(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

const SUITE_SEED: u64 = 0x6779_726f;

/// Runs every invariant on the system, with the modal basis computed by
/// [`modal_basis`].
pub fn run_invariant_suite(sys: &SystemMatrices, tol: &ToleranceProfile) -> InvariantReport {
    match modal_basis(sys) {
        Ok(basis) => run_invariant_suite_with_basis(sys, &basis, tol),
        Err(e) => InvariantReport {
            n: sys.dim(),
            checks: vec![CheckOutcome::failed("modal_basis", &e)],
            passed: false,
        },
    }
}

/// Runs every invariant using a caller-supplied real basis, so that faults
/// injected into the basis show up in the report.
pub fn run_invariant_suite_with_basis(
    sys: &SystemMatrices,
    basis: &[ModePair],
    tol: &ToleranceProfile,
) -> InvariantReport {
    let mut checks = Vec::new();
    if basis.len() != sys.dim() {
        checks.push(CheckOutcome::failed(
            "basis_size",
            &GyroError::DimensionMismatch {
                what: "modal basis".into(),
                expected: sys.dim(),
                found: basis.len(),
            },
        ));
        return finish(sys, checks);
    }
    let setup = (|| -> Result<_> {
        Ok((
            build_evolution_operator(sys)?,
            build_gram(sys)?,
            frequency_clusters(sys)?,
            kernel_family(sys, crate::complexmode::KERNEL_TOL),
        ))
    })();
    let (op, gram, clusters, family) = match setup {
        Ok(s) => s,
        Err(e) => {
            checks.push(CheckOutcome::failed("setup", &e));
            return finish(sys, checks);
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(SUITE_SEED);

    checks.push(structure_check(sys));
    checks.extend(gram_checks(sys, &op, &gram, tol));
    checks.extend(operator_checks(&op, &gram, &mut rng, tol));
    checks.extend(basis_checks(sys, &op, &gram, basis, tol));
    match &family {
        Ok(family) => {
            checks.extend(kernel_checks(sys, &op, &clusters, family, tol));
            checks.extend(correspondence_checks(sys, &op, &gram, basis, family, tol));
        }
        Err(e) => checks.push(CheckOutcome::failed("kernel_family", e)),
    }
    match mode_shapes(basis) {
        Ok(shapes) => {
            checks.push(CheckOutcome::new("mode_shapes", 0.0, Comparator::AtMost, 0.0));
            checks.extend(trajectory_checks(sys, &gram, basis, &shapes, &mut rng, tol));
        }
        Err(e) => checks.push(CheckOutcome::failed("mode_shapes", &e)),
    }
    finish(sys, checks)
}

fn finish(sys: &SystemMatrices, checks: Vec<CheckOutcome>) -> InvariantReport {
    let passed = checks.iter().all(|c| c.passed);
    InvariantReport {
        n: sys.dim(),
        checks,
        passed,
    }
}

fn structure_check(sys: &SystemMatrices) -> CheckOutcome {
    let dev = max_abs(&(sys.a() - sys.a().transpose()))
        .max(max_abs(&(sys.c() - sys.c().transpose())))
        .max(max_abs(&(sys.b() + sys.b().transpose())));
    CheckOutcome::new("exact_structure", dev, Comparator::AtMost, 0.0)
}

fn gram_checks(
    sys: &SystemMatrices,
    op: &EvolutionOperator,
    gram: &GramMatrix,
    tol: &ToleranceProfile,
) -> Vec<CheckOutcome> {
    let g = gram.matrix();
    let mut out = Vec::new();
    let asym = (g - g.transpose()).norm() / g.norm();
    out.push(CheckOutcome::new("gram_symmetry", asym, Comparator::AtMost, 1e-12));
    let pd = nalgebra::Cholesky::new(g.clone()).is_some();
    out.push(CheckOutcome::new(
        "gram_positive_definite",
        if pd { 0.0 } else { 1.0 },
        Comparator::AtMost,
        0.0,
    ));
    let k = build_pairing(sys);
    let n2 = op.dim();
    match op.matrix().clone().lu().solve(&DMatrix::identity(n2, n2)) {
        Some(minv) => {
            let other = k.matrix() * minv;
            let rel = (g - other).norm() / g.norm();
            out.push(CheckOutcome::new("gram_two_routes", rel, Comparator::AtMost, tol.gram));
        }
        None => out.push(CheckOutcome::failed(
            "gram_two_routes",
            &GyroError::ConvergenceFailure("M is singular".into()),
        )),
    }
    out
}

fn random_vector(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn operator_checks(
    op: &EvolutionOperator,
    gram: &GramMatrix,
    rng: &mut ChaCha8Rng,
    tol: &ToleranceProfile,
) -> Vec<CheckOutcome> {
    let dim = op.dim();
    let g = gram.matrix();
    let mut antisym: f64 = 0.0;
    let mut curvature = f64::NEG_INFINITY;
    for _ in 0..200 {
        let x = random_vector(rng, dim);
        let y = random_vector(rng, dim);
        let (mx, my) = (op.apply(&x), op.apply(&y));
        let d = (x.dot(&(g * &my)) + y.dot(&(g * &mx))).abs() / (gram.norm(&x) * gram.norm(&y));
        antisym = antisym.max(d);
        let m2x = op.apply(&mx);
        curvature = curvature.max(x.dot(&(g * m2x)) / x.dot(&(g * &x)));
    }
    vec![
        CheckOutcome::new("m_antisymmetry", antisym, Comparator::AtMost, tol.residual),
        CheckOutcome::new("m_squared_negative", curvature, Comparator::Below, 0.0),
    ]
}

fn basis_checks(
    sys: &SystemMatrices,
    op: &EvolutionOperator,
    gram: &GramMatrix,
    basis: &[ModePair],
    tol: &ToleranceProfile,
) -> Vec<CheckOutcome> {
    let n = sys.dim();
    let mut out = Vec::new();
    let gm = gram_of_basis(gram, basis);
    let dev = (gm - DMatrix::identity(2 * n, 2 * n)).amax();
    out.push(CheckOutcome::new("basis_orthonormality", dev, Comparator::AtMost, tol.ortho));

    let res = basis.iter().map(|p| pair_residual(op, p)).fold(0.0, f64::max);
    out.push(CheckOutcome::new("pair_equations", res, Comparator::AtMost, tol.residual));

    let mut direct: Vec<f64> = spectrum_direct(op)
        .iter()
        .filter(|z| z.im > 0.0)
        .map(|z| z.im)
        .collect();
    direct.sort_by(f64::total_cmp);
    if direct.len() == n {
        let dev = basis
            .iter()
            .zip(&direct)
            .map(|(p, w)| (p.omega - w).abs() / p.omega)
            .fold(0.0, f64::max);
        out.push(CheckOutcome::new("eigenvalue_consistency", dev, Comparator::AtMost, tol.eigen));
    } else {
        out.push(CheckOutcome::failed(
            "eigenvalue_consistency",
            &GyroError::NotOscillatory {
                eigenvalue: format!("{} eigenvalues with positive imaginary part", direct.len()),
                bound: 0.0,
            },
        ));
    }

    if sys.is_classical() {
        out.push(classical_check(sys, basis, tol));
    }
    out
}

/// Frequencies of a B = 0 system against `√eig(L_A⁻¹ C L_A⁻ᵀ)`.
fn classical_check(sys: &SystemMatrices, basis: &[ModePair], tol: &ToleranceProfile) -> CheckOutcome {
    let la = match cholesky(sys.a(), MatrixName::A) {
        Ok(c) => c.l(),
        Err(e) => return CheckOutcome::failed("classical_reduction", &e),
    };
    let t = la.solve_lower_triangular(sys.c()).expect("nonsingular factor");
    let reduced = la.solve_lower_triangular(&t.transpose()).expect("nonsingular factor");
    let reduced = (&reduced + reduced.transpose()) * 0.5;
    let mut w: Vec<f64> = SymmetricEigen::new(reduced)
        .eigenvalues
        .iter()
        .map(|x| x.sqrt())
        .collect();
    w.sort_by(f64::total_cmp);
    let dev = basis
        .iter()
        .zip(&w)
        .map(|(p, w)| (p.omega - w).abs() / w)
        .fold(0.0, f64::max);
    CheckOutcome::new("classical_reduction", dev, Comparator::AtMost, tol.eigen)
}

fn kernel_checks(
    sys: &SystemMatrices,
    op: &EvolutionOperator,
    clusters: &SpectralClusters,
    family: &KernelFamily,
    tol: &ToleranceProfile,
) -> Vec<CheckOutcome> {
    let n = sys.dim();
    let mut out = Vec::new();

    // dim N_α against half the nullity of M² + λ²I
    let m2 = op.matrix() * op.matrix();
    let scale = spectral_norm(&m2);
    let mut mismatches = 0usize;
    for (cl, &mult) in family.clusters.iter().zip(&clusters.multiplicities) {
        let shifted = &m2 + DMatrix::identity(2 * n, 2 * n) * (cl.lambda * cl.lambda);
        let sv = shifted.singular_values();
        let thresh = 1e-8 * (scale + cl.lambda * cl.lambda);
        let nullity = sv.iter().filter(|&&s| s <= thresh).count();
        if nullity != 2 * cl.dim() || cl.dim() != mult {
            mismatches += 1;
        }
    }
    if family.total_dim() != n {
        mismatches += 1;
    }
    out.push(CheckOutcome::new("kernel_dimensions", mismatches as f64, Comparator::AtMost, 0.0));

    // C + λ_α λ_β A nonsingular for α ≠ β
    let mut worst = f64::INFINITY;
    for (i, a) in family.clusters.iter().enumerate() {
        for b in family.clusters.iter().skip(i + 1) {
            let m = sys.c() + sys.a() * (a.lambda * b.lambda);
            let sv = m.singular_values();
            worst = worst.min(sv.min() / sv.max());
        }
    }
    if worst.is_finite() {
        out.push(CheckOutcome::new("kernel_disjointness", worst, Comparator::Above, PD_EPS));
    }

    let modes = family.modes();
    let res = modes.iter().map(|m| mode_residual(sys, m)).fold(0.0, f64::max);
    out.push(CheckOutcome::new("pencil_residual", res, Comparator::AtMost, tol.residual));

    let gm = DMatrix::from_fn(n, n, |i, j| family.inner(&modes[i].z, &modes[j].z));
    let dev = (gm - DMatrix::<Complex64>::identity(n, n)).map(|c| c.norm()).max();
    out.push(CheckOutcome::new("sesq_orthonormality", dev, Comparator::AtMost, tol.ortho));

    // ᵀz_i (C - λ²A) z_j = 0 and ᵀz_i B z_j = 0 inside each kernel
    let mut split: f64 = 0.0;
    for cl in &family.clusters {
        let s = spectral_norm(sys.c()) + cl.lambda * spectral_norm(sys.b())
            + cl.lambda * cl.lambda * spectral_norm(sys.a());
        for zi in &cl.basis {
            for zj in &cl.basis {
                let (d1, d2) = kernel_bilinear_defects(sys, cl.lambda, zi, zj);
                split = split.max(d1.max(cl.lambda * d2) / (s * zi.norm() * zj.norm()));
            }
        }
    }
    out.push(CheckOutcome::new("kernel_split_identities", split, Comparator::AtMost, tol.residual));
    out
}

fn correspondence_checks(
    sys: &SystemMatrices,
    op: &EvolutionOperator,
    gram: &GramMatrix,
    basis: &[ModePair],
    family: &KernelFamily,
    tol: &ToleranceProfile,
) -> Vec<CheckOutcome> {
    let n = sys.dim();
    let mut out = Vec::new();

    // complex → real: sesq-orthonormal kernels give a G-orthonormal basis
    let modes = family.modes();
    let lifted: Result<Vec<ModePair>> = modes.iter().map(|m| complex_to_real(sys, m)).collect();
    match lifted {
        Ok(real) => {
            let dev = (gram_of_basis(gram, &real) - DMatrix::identity(2 * n, 2 * n)).amax();
            out.push(CheckOutcome::new("complex_to_real_orthonormality", dev, Comparator::AtMost, tol.ortho));
        }
        Err(e) => out.push(CheckOutcome::failed("complex_to_real_orthonormality", &e)),
    }
    let mut real_form: f64 = 0.0;
    for cl in &family.clusters {
        let cm: Vec<_> = cl
            .basis
            .iter()
            .map(|z| crate::complexmode::ComplexMode {
                omega: cl.lambda,
                z: z.clone(),
            })
            .collect();
        for (i, zi) in cm.iter().enumerate() {
            for (j, zj) in cm.iter().enumerate() {
                let (r1, r2) = real_orthonormality_residuals(sys, cl.lambda, zi, zj, i == j);
                real_form = real_form.max(r1).max(r2);
            }
        }
    }
    out.push(CheckOutcome::new("real_orthonormality_equations", real_form, Comparator::AtMost, tol.ortho));

    // real → complex: the G-orthonormal basis maps to a sesq-orthonormal one
    let down: Result<Vec<_>> = basis.iter().map(real_to_complex).collect();
    match down {
        Ok(cmodes) => {
            let gm = DMatrix::from_fn(n, n, |i, j| family.inner(&cmodes[i].z, &cmodes[j].z));
            let dev = (gm - DMatrix::<Complex64>::identity(n, n)).map(|c| c.norm()).max();
            out.push(CheckOutcome::new("real_to_complex_orthonormality", dev, Comparator::AtMost, tol.ortho));

            let mut rt: f64 = 0.0;
            for (p, m) in basis.iter().zip(&cmodes) {
                match complex_to_real(sys, m) {
                    Ok(q) => {
                        let d = (&q.u - &p.u).amax().max((&q.v - &p.v).amax());
                        rt = rt.max(d / p.u.amax().max(p.v.amax()));
                    }
                    Err(_) => rt = f64::INFINITY,
                }
            }
            out.push(CheckOutcome::new("round_trip", rt, Comparator::AtMost, tol.roundtrip));
        }
        Err(e) => {
            out.push(CheckOutcome::failed("real_to_complex_orthonormality", &e));
            out.push(CheckOutcome::failed("round_trip", &e));
        }
    }

    // ψ(M u) = -iλ ψ(u), relative to ‖M‖‖ψ(u)‖ like the pair equations
    let mnorm = spectral_norm(op.matrix());
    let mut inter: f64 = 0.0;
    for p in basis {
        let lhs = phase_map(p.omega, &op.apply(&p.u));
        let psi = phase_map(p.omega, &p.u);
        let rhs = &psi * Complex64::new(0.0, -p.omega);
        inter = inter.max((lhs - &rhs).norm() / (mnorm * psi.norm()));
    }
    out.push(CheckOutcome::new("phase_map_intertwining", inter, Comparator::AtMost, tol.residual));
    out
}

fn trajectory_checks(
    sys: &SystemMatrices,
    gram: &GramMatrix,
    basis: &[ModePair],
    shapes: &[ModeShape],
    rng: &mut ChaCha8Rng,
    tol: &ToleranceProfile,
) -> Vec<CheckOutcome> {
    let n = sys.dim();
    let mut out = Vec::new();
    let ic = StateVector::from_stacked(&random_vector(rng, 2 * n));
    let params = match project_initial_conditions(gram, basis, &ic) {
        Ok(p) => p,
        Err(e) => {
            out.push(CheckOutcome::failed("ic_round_trip", &e));
            return out;
        }
    };
    let x0 = ic.stacked();
    let back = evaluate_state(shapes, &params, 0.0).stacked();
    out.push(CheckOutcome::new(
        "ic_round_trip",
        (back - &x0).amax() / x0.amax(),
        Comparator::AtMost,
        tol.ortho,
    ));

    let w_min = basis.iter().map(|p| p.omega).fold(f64::INFINITY, f64::min);
    let t_end = default_horizon(basis);
    let e0 = energy(sys, &ic);
    let g0 = x0.dot(&(gram.matrix() * &x0));
    let (mut de, mut dg, mut ode, mut stacked): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    let (na, nb, nc) = (spectral_norm(sys.a()), spectral_norm(sys.b()), spectral_norm(sys.c()));
    for _ in 0..50 {
        let t = rng.random::<f64>() * t_end;
        let st = evaluate_state(shapes, &params, t);
        de = de.max((energy(sys, &st) - e0).abs() / e0);
        let x = st.stacked();
        dg = dg.max((x.dot(&(gram.matrix() * &x)) - g0).abs() / g0);
        let acc = evaluate_acceleration(shapes, &params, t);
        let r = sys.a() * &acc + sys.b() * &st.etadot + sys.c() * &st.eta;
        let scale = na * acc.norm() + nb * st.etadot.norm() + nc * st.eta.norm();
        ode = ode.max(r.norm() / scale);
        let pp = phase_point(basis, &params, t);
        stacked = stacked.max((pp - &x).amax() / x.amax().max(f64::MIN_POSITIVE));
    }
    out.push(CheckOutcome::new("energy_conservation", de, Comparator::AtMost, tol.conservation));
    out.push(CheckOutcome::new("g_norm_conservation", dg, Comparator::AtMost, tol.conservation));
    out.push(CheckOutcome::new("ode_residual", ode, Comparator::AtMost, tol.residual));
    out.push(CheckOutcome::new("velocity_two_routes", stacked, Comparator::AtMost, tol.residual));

    let dt = default_dt(basis);
    match max_oracle_discrepancy(sys, shapes, &params, &ic, t_end, dt) {
        Ok(d) => {
            let bound = tol.oracle.max(rk4_error_constant(shapes, &params) * dt.powi(4) * t_end);
            out.push(CheckOutcome::new("oracle_agreement", d, Comparator::AtMost, bound));
        }
        Err(e) => out.push(CheckOutcome::failed("oracle_agreement", &e)),
    }

    // Order check with a coarse step, well above roundoff. The horizon is capped
    // at 20 fast periods so the phase error of the fastest mode stays small
    // and the error stays in its asymptotic regime.
    let w_max = basis.iter().map(|p| p.omega).fold(0.0, f64::max);
    let horizon = (2.0 * PI / w_min).min(20.0 * 2.0 * PI / w_max);
    let coarse = default_dt(basis) * 8.0;
    let order = max_oracle_discrepancy(sys, shapes, &params, &ic, horizon, coarse).and_then(|e1| {
        max_oracle_discrepancy(sys, shapes, &params, &ic, horizon, coarse / 2.0).map(|e2| (e1 / e2).log2())
    });
    match order {
        Ok(p) => {
            let mut c = CheckOutcome::new("rk4_order", (p - 4.0).abs(), Comparator::AtMost, 0.5);
            c.detail = Some(format!("observed order {p:.3}"));
            out.push(c);
        }
        Err(e) => out.push(CheckOutcome::failed("rk4_order", &e)),
    }
    out
}

/// Error constant for RK4 on a superposition of harmonics: the per-step
/// phase error of mode k is about `(ω_k dt)⁵/120`, and a phase error δ moves the
/// state by at most `a_k δ (‖h_k‖∞ + ‖r_k‖∞) max(1, ω_k)`. A factor 2 covers the
/// amplitude error and higher-order terms.
pub fn rk4_error_constant(shapes: &[ModeShape], params: &HarmonicParams) -> f64 {
    shapes
        .iter()
        .zip(&params.amplitudes)
        .map(|(m, &a)| 2.0 * a * m.omega.powi(5) / 120.0 * (m.h.amax() + m.r.amax()) * m.omega.max(1.0))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn one_dof() -> SystemMatrices {
        SystemMatrices::new(dmatrix![1.0], dmatrix![0.0], dmatrix![4.0], 1e-10).unwrap()
    }

    #[test]
    fn rk4_tracks_cosine() {
        let ic = StateVector::new(DVector::from_element(1, 1.0), DVector::zeros(1)).unwrap();
        let res = integrate_reference(&one_dof(), &ic, PI, 1e-4).unwrap();
        assert_eq!(*res.times.last().unwrap(), PI);
        let last = res.states.last().unwrap();
        assert!((last.eta[0] - 1.0).abs() < 1e-8);
        assert!(res.times.windows(2).all(|w| w[1] > w[0]));
        assert!(res.max_step_error_estimate < 1e-12);
    }

    #[test]
    fn propagator_is_one_rk4_step() {
        let s = random_system(&RandomSystemSpec::new(4, 3)).unwrap();
        let mut rk = Rk4::new(&s).unwrap();
        let mut prop = rk.propagator(1e-3);
        let mut a: Vec<f64> = (0..8).map(|i| (i as f64).sin()).collect();
        let mut b = a.clone();
        for _ in 0..100 {
            rk.step(&mut a, 1e-3);
            prop.step(&mut b);
        }
        let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn zero_ic_stays_zero() {
        let res = integrate_reference(&one_dof(), &StateVector::zeros(1), 1.0, 0.1).unwrap();
        assert!(res.states.iter().all(|s| s == &StateVector::zeros(1)));
        assert_eq!(res.times.len(), 11);
    }

    #[test]
    fn rejects_bad_step() {
        assert!(integrate_reference(&one_dof(), &StateVector::zeros(1), 1.0, 0.0).is_err());
        assert!(integrate_reference(&one_dof(), &StateVector::zeros(1), -1.0, 0.1).is_err());
    }

    #[test]
    fn random_systems_are_deterministic() {
        let spec = RandomSystemSpec::new(5, 7);
        assert_eq!(random_system(&spec).unwrap(), random_system(&spec).unwrap());
        let classical = random_system(&RandomSystemSpec { b_scale: 0.0, ..spec }).unwrap();
        assert!(classical.is_classical());
    }

    #[test]
    fn condition_cap_is_respected() {
        for seed in 0..20 {
            let s = random_system(&RandomSystemSpec {
                condition_cap: 50.0,
                ..RandomSystemSpec::new(6, seed)
            })
            .unwrap();
            for m in [s.a(), s.c()] {
                let e = SymmetricEigen::new(m.clone()).eigenvalues;
                assert!(e.max() / e.min() <= 50.0 * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn overrides_parse() {
        let mut p = ToleranceProfile::default();
        p.apply_overrides("ortho=1e-12, oracle=2e-6").unwrap();
        assert_eq!(p.ortho, 1e-12);
        assert_eq!(p.oracle, 2e-6);
        assert!(p.apply_overrides("bogus=1").is_err());
        assert!(p.apply_overrides("ortho").is_err());
        assert!(p.apply_overrides("ortho=-1").is_err());
    }

    #[test]
    fn suite_passes_on_fixture() {
        let r = run_invariant_suite(&one_dof(), &ToleranceProfile::default());
        for c in &r.checks {
            assert!(c.passed, "{c:?}");
        }
        assert!(r.passed);
        assert!(r.check("classical_reduction").is_some());
    }

    #[test]
    fn corrupted_basis_is_caught() {
        let s = random_system(&RandomSystemSpec::new(3, 11)).unwrap();
        let mut basis = modal_basis(&s).unwrap();
        basis[1].v = -basis[1].v.clone();
        let r = run_invariant_suite_with_basis(&s, &basis, &ToleranceProfile::default());
        assert!(!r.passed);
        assert!(!r.check("pair_equations").unwrap().passed);
        assert!(!r.check("basis_orthonormality").unwrap().passed || !r.check("round_trip").unwrap().passed);
    }
}
