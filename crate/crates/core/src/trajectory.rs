//! Closed-form motion as a superposition of normal harmonics
//! `η(t) = Σ a_k [cos(ω_k t + φ_k) h_k + sin(ω_k t + φ_k) r_k]`.

use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::complexmode::ComplexMode;
use crate::error::{GyroError, Result};
use crate::linalg::check_len;
use crate::spectral::{GramMatrix, ModePair};
use crate::system::SystemMatrices;

/// Relative tolerance on `l = ω r`, `s = -ω h`.
pub const SHAPE_TOL: f64 = 1e-10;

/// A phase point: displacement `η = q - q*` and velocity `η̇`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub eta: DVector<f64>,
    pub etadot: DVector<f64>,
}

impl StateVector {
    pub fn new(eta: DVector<f64>, etadot: DVector<f64>) -> Result<Self> {
        check_len("etadot", eta.len(), etadot.len())?;
        if eta.iter().chain(etadot.iter()).any(|x| !x.is_finite()) {
            return Err(GyroError::EvaluationFailure("state has non-finite entries".into()));
        }
        Ok(Self { eta, etadot })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            eta: DVector::zeros(n),
            etadot: DVector::zeros(n),
        }
    }

    pub fn dim(&self) -> usize {
        self.eta.len()
    }

    /// The 2n-vector `(η, η̇)`.
    pub fn stacked(&self) -> DVector<f64> {
        let n = self.dim();
        DVector::from_fn(2 * n, |i, _| if i < n { self.eta[i] } else { self.etadot[i - n] })
    }

    pub fn from_stacked(x: &DVector<f64>) -> Self {
        let n = x.len() / 2;
        Self {
            eta: x.rows(0, n).into_owned(),
            etadot: x.rows(n, n).into_owned(),
        }
    }
}

/// Configuration and velocity halves of one pair: `u = (h, l)`, `v = (r, s)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeShape {
    pub omega: f64,
    pub h: DVector<f64>,
    pub r: DVector<f64>,
    pub l: DVector<f64>,
    pub s: DVector<f64>,
}

/// Amplitudes `a_k ≥ 0` and phases `φ_k ∈ (-π, π]`; a zero amplitude carries a zero phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicParams {
    pub amplitudes: Vec<f64>,
    pub phases: Vec<f64>,
}

impl HarmonicParams {
    /// Canonical parameters from the modal coordinates `(χ_k(0), ψ_k(0))`.
    pub fn from_modal_coordinates(chi: &[f64], psi: &[f64]) -> Self {
        let (amplitudes, phases) = chi
            .iter()
            .zip(psi)
            .map(|(&x, &y)| {
                let a = x.hypot(y);
                if a == 0.0 {
                    (0.0, 0.0)
                } else {
                    let phi = y.atan2(x);
                    (a, if phi == -PI { PI } else { phi })
                }
            })
            .unzip();
        Self { amplitudes, phases }
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }
}

/// Constants of the complex general integral, `γ_k = a_k e^{-iφ_k}`, `δ_k = γ̄_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexAmplitudes {
    pub gamma: Vec<Complex64>,
    pub delta: Vec<Complex64>,
}

pub fn mode_shapes(basis: &[ModePair]) -> Result<Vec<ModeShape>> {
    basis
        .iter()
        .map(|p| {
            check_len("partner vector v", p.u.len(), p.v.len())?;
            let n = p.u.len() / 2;
            let shape = ModeShape {
                omega: p.omega,
                h: p.u.rows(0, n).into_owned(),
                l: p.u.rows(n, n).into_owned(),
                r: p.v.rows(0, n).into_owned(),
                s: p.v.rows(n, n).into_owned(),
            };
            let scale = p.omega * (shape.h.norm() + shape.r.norm()) + shape.l.norm() + shape.s.norm();
            let residual = (&shape.l - &shape.r * p.omega).norm().max((&shape.s + &shape.h * p.omega).norm())
                / scale;
            if !(residual <= SHAPE_TOL) {
                return Err(GyroError::StructureViolation {
                    what: "l = ωr, s = -ωh",
                    residual,
                    tol: SHAPE_TOL,
                });
            }
            Ok(shape)
        })
        .collect()
}

/// Harmonic parameters reproducing `ic` at t = 0, from the G-products
/// `χ_k(0) = (x₀, u_k)` and `ψ_k(0) = (x₀, v_k)`.
///
/// A single projection reproduces x₀ only to about `√κ(G)` times the
/// orthonormality defect of the basis, so the products are repeated on the
/// reconstruction residual while it keeps shrinking.
pub fn project_initial_conditions(
    g: &GramMatrix,
    basis: &[ModePair],
    ic: &StateVector,
) -> Result<HarmonicParams> {
    let x0 = ic.stacked();
    check_len("initial condition", g.matrix().nrows(), x0.len())?;
    let mut halves = Vec::with_capacity(basis.len());
    for p in basis {
        check_len("basis vector", x0.len(), p.u.len())?;
        check_len("basis vector", x0.len(), p.v.len())?;
        halves.push((g.half(&p.u), g.half(&p.v)));
    }
    let reconstruct = |chi: &[f64], psi: &[f64]| {
        let mut x = DVector::zeros(x0.len());
        for (k, p) in basis.iter().enumerate() {
            x.axpy(chi[k], &p.u, 1.0);
            x.axpy(psi[k], &p.v, 1.0);
        }
        x
    };

    let mut chi = vec![0.0; basis.len()];
    let mut psi = vec![0.0; basis.len()];
    let mut residual = x0.clone();
    let mut best = f64::INFINITY;
    for _ in 0..4 {
        let wr = g.half(&residual);
        let mut next_chi = chi.clone();
        let mut next_psi = psi.clone();
        for (k, (hu, hv)) in halves.iter().enumerate() {
            next_chi[k] += hu.dot(&wr);
            next_psi[k] += hv.dot(&wr);
        }
        let next_residual = &x0 - reconstruct(&next_chi, &next_psi);
        let size = next_residual.amax();
        if !(size < best) {
            break;
        }
        (chi, psi, residual, best) = (next_chi, next_psi, next_residual, size);
        if size == 0.0 {
            break;
        }
    }
    Ok(HarmonicParams::from_modal_coordinates(&chi, &psi))
}

/// State at time t (relative to the instant the parameters were fitted).
/// The velocity is the analytic time derivative of η.
pub fn evaluate_state(shapes: &[ModeShape], params: &HarmonicParams, t: f64) -> StateVector {
    let n = shapes.first().map_or(0, |s| s.h.len());
    let mut state = StateVector::zeros(n);
    for (k, m) in shapes.iter().enumerate() {
        let a = params.amplitudes[k];
        if a == 0.0 {
            continue;
        }
        let (sin, cos) = (m.omega * t + params.phases[k]).sin_cos();
        state.eta += (&m.h * cos + &m.r * sin) * a;
        state.etadot += (&m.r * cos - &m.h * sin) * (a * m.omega);
    }
    state
}

/// Analytic second derivative `η̈(t)`.
pub fn evaluate_acceleration(shapes: &[ModeShape], params: &HarmonicParams, t: f64) -> DVector<f64> {
    let n = shapes.first().map_or(0, |s| s.h.len());
    let mut acc = DVector::zeros(n);
    for (k, m) in shapes.iter().enumerate() {
        let (sin, cos) = (m.omega * t + params.phases[k]).sin_cos();
        acc -= (&m.h * cos + &m.r * sin) * (params.amplitudes[k] * m.omega * m.omega);
    }
    acc
}

/// The stacked phase point `Σ a_k [cos(ω_k t + φ_k) u_k + sin(ω_k t + φ_k) v_k]`.
pub fn phase_point(basis: &[ModePair], params: &HarmonicParams, t: f64) -> DVector<f64> {
    let dim = basis.first().map_or(0, |p| p.u.len());
    let mut x = DVector::zeros(dim);
    for (k, p) in basis.iter().enumerate() {
        let (sin, cos) = (p.omega * t + params.phases[k]).sin_cos();
        x += (&p.u * cos + &p.v * sin) * params.amplitudes[k];
    }
    x
}

/// One term of the superposition.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalHarmonic {
    pub omega: f64,
    pub amplitude: f64,
    pub phase: f64,
    pub h: DVector<f64>,
    pub r: DVector<f64>,
}

impl NormalHarmonic {
    pub fn at(&self, t: f64) -> DVector<f64> {
        let (sin, cos) = (self.omega * t + self.phase).sin_cos();
        (&self.h * cos + &self.r * sin) * self.amplitude
    }
}

pub fn normal_harmonics(shapes: &[ModeShape], params: &HarmonicParams) -> Vec<NormalHarmonic> {
    shapes
        .iter()
        .enumerate()
        .map(|(k, m)| NormalHarmonic {
            omega: m.omega,
            amplitude: params.amplitudes[k],
            phase: params.phases[k],
            h: m.h.clone(),
            r: m.r.clone(),
        })
        .collect()
}

pub fn complex_amplitudes(params: &HarmonicParams) -> ComplexAmplitudes {
    let gamma: Vec<Complex64> = params
        .amplitudes
        .iter()
        .zip(&params.phases)
        .map(|(&a, &phi)| Complex64::from_polar(a, -phi))
        .collect();
    let delta = gamma.iter().map(Complex64::conj).collect();
    ComplexAmplitudes { gamma, delta }
}

/// `Σ_k (γ_k e^{-iω_k t} z_k + δ_k e^{iω_k t} z̄_k)`, a solution of the
/// complexified equation for arbitrary constants.
pub fn complex_integral(
    modes: &[ComplexMode],
    amps: &ComplexAmplitudes,
    t: f64,
) -> DVector<Complex64> {
    let n = modes.first().map_or(0, |m| m.z.len());
    let mut z = DVector::zeros(n);
    for (k, m) in modes.iter().enumerate() {
        let e = Complex64::from_polar(1.0, -m.omega * t);
        z += &m.z * (amps.gamma[k] * e) + m.z.map(|c| c.conj()) * (amps.delta[k] * e.conj());
    }
    z
}

/// Real motion `Re Σ_k γ_k e^{-iω_k t} z_k`. With `z_k = h_k + i r_k` taken
/// from the same basis as the shapes, this is the displacement returned by
/// [`evaluate_state`].
pub fn real_motion(modes: &[ComplexMode], amps: &ComplexAmplitudes, t: f64) -> DVector<f64> {
    let n = modes.first().map_or(0, |m| m.z.len());
    let mut eta = DVector::zeros(n);
    for (k, m) in modes.iter().enumerate() {
        let coeff = amps.gamma[k] * Complex64::from_polar(1.0, -m.omega * t);
        eta += (&m.z * coeff).map(|c| c.re);
    }
    eta
}

/// `½ η̇ᵀ A η̇ + ½ ηᵀ C η`; conserved because B is antisymmetric.
pub fn energy(sys: &SystemMatrices, state: &StateVector) -> f64 {
    0.5 * state.etadot.dot(&(sys.a() * &state.etadot)) + 0.5 * state.eta.dot(&(sys.c() * &state.eta))
}
