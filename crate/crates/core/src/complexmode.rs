//! Complex formalism in ℂⁿ: kernels `N_α` of the quadratic pencil
//! `C - iλ_α B - λ_α² A`, the direct sum `ℂⁿ = ⊕ N_α`, the per-kernel Hermitian
//! form `A + iB/(2λ_α)` glued into one scalar product, and the correspondence
//! between G-orthonormal real pairs and orthonormal complex modes.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{GyroError, Result};
use crate::linalg::{check_len, gauge_index, spectral_norm, to_complex};
use crate::spectral::{frequency_clusters, ModePair};
use crate::system::SystemMatrices;

/// Relative singular-value threshold defining the numerical null space.
pub const KERNEL_TOL: f64 = 1e-10;

/// Relative tolerance for the `u = (x, λy)`, `v = (y, -λx)` block shape.
pub const STRUCTURE_TOL: f64 = 1e-8;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// A solution `(C - iωB - ω²A) z = 0` with `ω > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMode {
    pub omega: f64,
    pub z: DVector<Complex64>,
}

impl ComplexMode {
    /// Real part `h` of `z = h + i r`.
    pub fn h(&self) -> DVector<f64> {
        self.z.map(|c| c.re)
    }

    /// Imaginary part `r` of `z = h + i r`.
    pub fn r(&self) -> DVector<f64> {
        self.z.map(|c| c.im)
    }
}

/// The quadratic pencil `C - iωB - ω²A`.
pub fn pencil(sys: &SystemMatrices, omega: f64) -> DMatrix<Complex64> {
    let c = to_complex(sys.c());
    let b = to_complex(sys.b());
    let a = to_complex(sys.a());
    c - b * (I * omega) - a * Complex64::new(omega * omega, 0.0)
}

fn pencil_scale(sys: &SystemMatrices, omega: f64) -> f64 {
    spectral_norm(sys.c()) + omega * spectral_norm(sys.b()) + omega * omega * spectral_norm(sys.a())
}

/// `‖(C - iωB - ω²A) z‖ / ((‖C‖ + ω‖B‖ + ω²‖A‖) ‖z‖)`.
pub fn mode_residual(sys: &SystemMatrices, mode: &ComplexMode) -> f64 {
    let q = pencil(sys, mode.omega);
    (q * &mode.z).norm() / (pencil_scale(sys, mode.omega) * mode.z.norm())
}

/// Basis of the numerical null space of `C - iλB - λ²A`.
///
/// Singular values at or below `tol · (‖C‖ + λ‖B‖ + λ²‖A‖)` count as zero; the
/// bound uses the norms of the terms rather than the largest singular value
/// because the pencil can vanish entirely (A = C, B = 0, λ = 1).
pub fn kernel_basis(
    sys: &SystemMatrices,
    lambda: f64,
    n_alpha: usize,
    tol: f64,
) -> Result<Vec<DVector<Complex64>>> {
    let n = sys.dim();
    let svd = pencil(sys, lambda).svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| GyroError::ConvergenceFailure("SVD returned no right singular vectors".into()))?;
    let threshold = tol * pencil_scale(sys, lambda);
    let null: Vec<usize> = (0..n)
        .filter(|&j| svd.singular_values[j] <= threshold)
        .collect();
    if null.len() != n_alpha {
        return Err(GyroError::KernelDimensionMismatch {
            lambda,
            expected: n_alpha,
            found: null.len(),
        });
    }
    Ok(null
        .into_iter()
        .map(|j| v_t.row(j).transpose().map(|c| c.conj()))
        .collect())
}

/// `z̄ᵀ (A + iB/(2λ)) w`.
pub fn sesq_inner(
    sys: &SystemMatrices,
    lambda: f64,
    z: &DVector<Complex64>,
    w: &DVector<Complex64>,
) -> Result<Complex64> {
    check_len("sesq_inner left operand", sys.dim(), z.len())?;
    check_len("sesq_inner right operand", sys.dim(), w.len())?;
    Ok(z.dotc(&(hermitian_form(sys, lambda) * w)))
}

fn hermitian_form(sys: &SystemMatrices, lambda: f64) -> DMatrix<Complex64> {
    to_complex(sys.a()) + to_complex(sys.b()) * (I / (2.0 * lambda))
}

/// Multiplies by a unit phase so the largest-modulus component is real positive.
pub(crate) fn gauge_phase(z: &mut DVector<Complex64>) {
    let m = gauge_index(z);
    let modulus = z[m].norm();
    if modulus > 0.0 {
        let phase = z[m].conj() / modulus;
        *z *= phase;
        z[m] = Complex64::new(z[m].re, 0.0);
    }
}

/// One kernel `N_α` with its orthonormal basis and oblique projector.
#[derive(Debug, Clone)]
pub struct KernelCluster {
    pub lambda: f64,
    pub basis: Vec<DVector<Complex64>>,
    pub projector: DMatrix<Complex64>,
    form: DMatrix<Complex64>,
}

impl KernelCluster {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }
}

/// The decomposition `ℂⁿ = ⊕ N_α` together with the glued scalar product.
#[derive(Debug, Clone)]
pub struct KernelFamily {
    pub clusters: Vec<KernelCluster>,
}

impl KernelFamily {
    /// `Σ_α (P_α z)ᴴ (A + iB/(2λ_α)) (P_α w)`.
    pub fn inner(&self, z: &DVector<Complex64>, w: &DVector<Complex64>) -> Complex64 {
        self.clusters
            .iter()
            .map(|c| (&c.projector * z).dotc(&(&c.form * (&c.projector * w))))
            .sum()
    }

    /// All basis vectors as modes, ascending in ω.
    pub fn modes(&self) -> Vec<ComplexMode> {
        self.clusters
            .iter()
            .flat_map(|c| {
                c.basis.iter().map(move |z| ComplexMode {
                    omega: c.lambda,
                    z: z.clone(),
                })
            })
            .collect()
    }

    pub fn total_dim(&self) -> usize {
        self.clusters.iter().map(KernelCluster::dim).sum()
    }
}

/// Kernels of the pencil at every distinct frequency, each orthonormalized
/// under its Hermitian form and gauged, plus the projectors of the direct sum.
pub fn kernel_family(sys: &SystemMatrices, tol: f64) -> Result<KernelFamily> {
    let n = sys.dim();
    let clusters = frequency_clusters(sys)?;
    let mut raw = Vec::with_capacity(clusters.lambdas.len());
    for (&lambda, &mult) in clusters.lambdas.iter().zip(&clusters.multiplicities) {
        let form = hermitian_form(sys, lambda);
        let basis = orthonormalize(&form, kernel_basis(sys, lambda, mult, tol)?, lambda)?;
        raw.push((lambda, basis, form));
    }

    let z = DMatrix::from_columns(
        &raw.iter()
            .flat_map(|(_, b, _)| b.iter().cloned())
            .collect::<Vec<_>>(),
    );
    check_len("kernel dimensions", n, z.ncols())?;
    let z_inv = z
        .clone()
        .lu()
        .solve(&DMatrix::identity(n, n))
        .ok_or_else(|| GyroError::ConvergenceFailure("kernels do not span the space".into()))?;

    let mut offset = 0;
    let clusters = raw
        .into_iter()
        .map(|(lambda, basis, form)| {
            let k = basis.len();
            let projector = z.columns(offset, k) * z_inv.rows(offset, k);
            offset += k;
            KernelCluster {
                lambda,
                basis,
                projector,
                form,
            }
        })
        .collect();
    Ok(KernelFamily { clusters })
}

fn orthonormalize(
    form: &DMatrix<Complex64>,
    vectors: Vec<DVector<Complex64>>,
    lambda: f64,
) -> Result<Vec<DVector<Complex64>>> {
    let mut done: Vec<DVector<Complex64>> = Vec::with_capacity(vectors.len());
    for mut w in vectors {
        for _ in 0..2 {
            for q in &done {
                let c = q.dotc(&(form * &w));
                w.axpy(-c, q, Complex64::new(1.0, 0.0));
            }
        }
        let norm2 = w.dotc(&(form * &w)).re;
        if !(norm2 > 0.0) {
            return Err(GyroError::ConvergenceFailure(format!(
                "Hermitian form not positive on the kernel at lambda={lambda}"
            )));
        }
        w /= Complex64::new(norm2.sqrt(), 0.0);
        gauge_phase(&mut w);
        done.push(w);
    }
    Ok(done)
}

/// n modes whose vectors form a basis of ℂⁿ, orthonormal under the glued product.
pub fn complex_basis(sys: &SystemMatrices) -> Result<Vec<ComplexMode>> {
    Ok(kernel_family(sys, KERNEL_TOL)?.modes())
}

/// Splits `u = (x, λy)`, `v = (y, -λx)` and returns `z = x + iy`.
pub fn real_to_complex(pair: &ModePair) -> Result<ComplexMode> {
    let two_n = pair.u.len();
    check_len("partner vector v", two_n, pair.v.len())?;
    if two_n % 2 != 0 {
        return Err(GyroError::DimensionMismatch {
            what: "phase-space vector must have even length".into(),
            expected: two_n + 1,
            found: two_n,
        });
    }
    let n = two_n / 2;
    let lambda = pair.omega;
    let h = pair.u.rows(0, n);
    let l = pair.u.rows(n, n);
    let r = pair.v.rows(0, n);
    let s = pair.v.rows(n, n);
    let d1 = (l - r * lambda).norm();
    let d2 = (s + h * lambda).norm();
    let residual = (d1 * d1 + d2 * d2).sqrt() / (pair.u.norm() + pair.v.norm());
    if !(residual <= STRUCTURE_TOL) {
        return Err(GyroError::StructureViolation {
            what: "pair does not have the (x, λy), (y, -λx) shape",
            residual,
            tol: STRUCTURE_TOL,
        });
    }
    Ok(ComplexMode {
        omega: lambda,
        z: DVector::from_fn(n, |i, _| Complex64::new(h[i], r[i])),
    })
}

/// Builds `u = (x, λy)`, `v = (y, -λx)` from `z = x + iy`.
pub fn complex_to_real(sys: &SystemMatrices, mode: &ComplexMode) -> Result<ModePair> {
    let n = sys.dim();
    check_len("complex mode", n, mode.z.len())?;
    let lambda = mode.omega;
    let x = mode.h();
    let y = mode.r();
    let mut u = DVector::zeros(2 * n);
    let mut v = DVector::zeros(2 * n);
    u.rows_mut(0, n).copy_from(&x);
    u.rows_mut(n, n).copy_from(&(&y * lambda));
    v.rows_mut(0, n).copy_from(&y);
    v.rows_mut(n, n).copy_from(&(&x * -lambda));
    Ok(ModePair { omega: lambda, u, v })
}

/// The map `(x, λy) ↦ x + iy` applied to an arbitrary phase-space vector.
/// On an eigenspace it turns the action of M into multiplication by `-iλ`.
pub fn phase_map(lambda: f64, w: &DVector<f64>) -> DVector<Complex64> {
    let n = w.len() / 2;
    DVector::from_fn(n, |i, _| Complex64::new(w[i], w[n + i] / lambda))
}

/// True iff the mode is a traditional normal mode: `B z = 0` and
/// `(C - ω²A) z = 0`, each relative to the matching matrix norms.
pub fn is_classical_mode(sys: &SystemMatrices, mode: &ComplexMode, tol: f64) -> bool {
    let z = &mode.z;
    let znorm = z.norm();
    let w2 = mode.omega * mode.omega;
    let bz = (to_complex(sys.b()) * z).norm();
    let stiff = (to_complex(&(sys.c() - sys.a() * w2)) * z).norm();
    bz <= tol * spectral_norm(sys.b()) * znorm
        && stiff <= tol * (spectral_norm(sys.c()) + w2 * spectral_norm(sys.a())) * znorm
}

/// Unconjugated bilinear identities implied by kernel membership:
/// `|ᵀz_i (C - λ²A) z_j|` and `|ᵀz_i B z_j|`.
pub fn kernel_bilinear_defects(
    sys: &SystemMatrices,
    lambda: f64,
    zi: &DVector<Complex64>,
    zj: &DVector<Complex64>,
) -> (f64, f64) {
    let stiff = to_complex(&(sys.c() - sys.a() * (lambda * lambda)));
    let b = to_complex(sys.b());
    (zi.dot(&(stiff * zj)).norm(), zi.dot(&(b * zj)).norm())
}

/// Residuals of the two real orthonormality conditions for `z_i = x_i + i y_i`
/// and `z_j = x_j + i y_j` in the same kernel:
///
/// `ᵀx_i A x_j + ᵀy_i A y_j - ᵀx_i B y_j / λ - δ_ij` and
/// `ᵀx_i A y_j - ᵀy_i A x_j + ᵀx_i B x_j / λ`.
pub fn real_orthonormality_residuals(
    sys: &SystemMatrices,
    lambda: f64,
    zi: &ComplexMode,
    zj: &ComplexMode,
    same: bool,
) -> (f64, f64) {
    let (xi, yi, xj, yj) = (zi.h(), zi.r(), zj.h(), zj.r());
    let a = sys.a();
    let b = sys.b();
    let delta = if same { 1.0 } else { 0.0 };
    let first = xi.dot(&(a * &xj)) + yi.dot(&(a * &yj)) - xi.dot(&(b * &yj)) / lambda - delta;
    let second = xi.dot(&(a * &yj)) - yi.dot(&(a * &xj)) + xi.dot(&(b * &xj)) / lambda;
    (first.abs(), second.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::modal_basis;
    use nalgebra::{dmatrix, dvector};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn gyro2() -> SystemMatrices {
        let i2 = DMatrix::identity(2, 2);
        SystemMatrices::new(i2.clone(), dmatrix![0.0, 1.5; -1.5, 0.0], i2, 1e-10).unwrap()
    }

    fn one_dof() -> SystemMatrices {
        SystemMatrices::new(dmatrix![1.0], dmatrix![0.0], dmatrix![4.0], 1e-10).unwrap()
    }

    /// |⟨a, b⟩| = ‖a‖‖b‖ for parallel complex vectors.
    fn parallel(a: &DVector<Complex64>, b: &DVector<Complex64>) -> f64 {
        1.0 - a.dotc(b).norm() / (a.norm() * b.norm())
    }

    #[test]
    fn hand_solved_pencil_kernels() {
        let s = gyro2();
        let q = pencil(&s, 2.0);
        assert_eq!(q, dmatrix![c(-3.0, 0.0), c(0.0, -3.0); c(0.0, 3.0), c(-3.0, 0.0)]);
        let k = kernel_basis(&s, 2.0, 1, KERNEL_TOL).unwrap();
        assert!(parallel(&k[0], &dvector![c(0.0, -1.0), c(1.0, 0.0)]) < 1e-14);
        let k = kernel_basis(&s, 0.5, 1, KERNEL_TOL).unwrap();
        assert!(parallel(&k[0], &dvector![c(0.0, 1.0), c(1.0, 0.0)]) < 1e-14);
    }

    #[test]
    fn whole_space_kernel_in_degenerate_case() {
        let i2 = DMatrix::identity(2, 2);
        let s = SystemMatrices::new(i2.clone(), DMatrix::zeros(2, 2), i2, 1e-10).unwrap();
        assert_eq!(kernel_basis(&s, 1.0, 2, KERNEL_TOL).unwrap().len(), 2);
        let err = kernel_basis(&s, 1.0, 1, KERNEL_TOL).unwrap_err();
        assert!(matches!(err, GyroError::KernelDimensionMismatch { found: 2, .. }));
    }

    #[test]
    fn sesquilinear_fixture_both_routes() {
        let s = gyro2();
        let z = dvector![c(0.0, -1.0), c(1.0, 0.0)];
        let v = sesq_inner(&s, 2.0, &z, &z).unwrap();
        assert!((v - c(1.25, 0.0)).norm() < 1e-15);
        // (1/2λ²) z̄ᵀ(λ²A + C) z
        let alt = z.dotc(&(to_complex(&(s.a() * 4.0 + s.c())) * &z)) / 8.0;
        assert!((alt - v).norm() < 1e-15);

        let one = sesq_inner(&one_dof(), 7.0, &dvector![c(1.0, 0.0)], &dvector![c(1.0, 0.0)]).unwrap();
        assert_eq!(one, c(1.0, 0.0));
    }

    #[test]
    fn complex_basis_fixtures() {
        let modes = complex_basis(&one_dof()).unwrap();
        assert_eq!(modes.len(), 1);
        assert!((modes[0].omega - 2.0).abs() < 1e-14);
        assert!((modes[0].z[0] - c(1.0, 0.0)).norm() < 1e-14);

        let modes = complex_basis(&gyro2()).unwrap();
        assert!((modes[0].omega - 0.5).abs() < 1e-12);
        assert!((modes[1].omega - 2.0).abs() < 1e-12);
        assert!(parallel(&modes[0].z, &dvector![c(0.0, 1.0), c(1.0, 0.0)]) < 1e-12);
        assert!(parallel(&modes[1].z, &dvector![c(0.0, -1.0), c(1.0, 0.0)]) < 1e-12);
        for m in &modes {
            assert!(!is_classical_mode(&gyro2(), m, 1e-8));
        }
    }

    #[test]
    fn real_and_complex_round_trip() {
        let p = ModePair {
            omega: 2.0,
            u: dvector![1.0, 0.0],
            v: dvector![0.0, -2.0],
        };
        let m = real_to_complex(&p).unwrap();
        assert_eq!(m.z, dvector![c(1.0, 0.0)]);
        assert_eq!(complex_to_real(&one_dof(), &m).unwrap(), p);

        let bad = ModePair { v: dvector![0.0, 2.0], ..p };
        assert!(matches!(real_to_complex(&bad), Err(GyroError::StructureViolation { .. })));
    }

    #[test]
    fn rotation_becomes_phase() {
        let s = gyro2();
        let p = modal_basis(&s).unwrap()[1].clone();
        let phi: f64 = 0.7;
        let rotated = ModePair {
            omega: p.omega,
            u: &p.u * phi.cos() - &p.v * phi.sin(),
            v: &p.u * phi.sin() + &p.v * phi.cos(),
        };
        let z = real_to_complex(&p).unwrap().z;
        let zr = real_to_complex(&rotated).unwrap().z;
        assert!((zr - z * Complex64::from_polar(1.0, phi)).norm() < 1e-14);
    }

    #[test]
    fn classical_mode_in_block_system() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        let b = dmatrix![0.0, 0.8, 0.0; -0.8, 0.0, 0.0; 0.0, 0.0, 0.0];
        let s = SystemMatrices::new(i3.clone(), b, i3, 1e-10).unwrap();
        let e3 = ComplexMode {
            omega: 1.0,
            z: dvector![c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)],
        };
        assert!(is_classical_mode(&s, &e3, 1e-10));
        let e1 = ComplexMode {
            omega: 1.0,
            z: dvector![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)],
        };
        assert!(!is_classical_mode(&s, &e1, 1e-10));
    }

    #[test]
    fn projectors_sum_to_identity() {
        let fam = kernel_family(&gyro2(), KERNEL_TOL).unwrap();
        let sum: DMatrix<Complex64> = fam.clusters.iter().map(|c| c.projector.clone()).sum();
        assert!((sum - DMatrix::identity(2, 2)).norm() < 1e-13);
        for cl in &fam.clusters {
            let p = &cl.projector;
            assert!((p * p - p).norm() < 1e-13);
        }
    }
}
