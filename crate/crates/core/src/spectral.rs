//! Phase-space structure of the linearized system: the evolution operator
//! `M = [[0, I], [-A⁻¹C, -A⁻¹B]]`, the antisymmetric pairing
//! `K = [[B, A], [-A, 0]]`, the positive-definite Gram matrix `G = K M⁻¹` and
//! a G-orthonormal basis of partner vectors with `M u = ω v`, `M v = -ω u`.
//!
//! The eigenvectors of M are obtained without a nonsymmetric eigensolver.
//! Writing `G = W Wᵀ` with `W = K·diag(L_C⁻ᵀ, L_A⁻ᵀ)`, the matrix
//! `S = Wᵀ M W⁻ᵀ = W⁻¹ K W⁻ᵀ` is real antisymmetric, so `iS` is Hermitian and
//! its eigenvectors map back to eigenvectors of M through `W⁻ᵀ`. Only
//! triangular solves against the Cholesky factors of A and C are needed.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{GyroError, MatrixName, Result};
use crate::linalg::{check_len, cholesky, gauge_index, spectral_norm};
use crate::system::SystemMatrices;

/// Relative tolerance separating distinct frequencies from eigensolver noise.
pub const CLUSTER_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionOperator {
    m: DMatrix<f64>,
}

impl EvolutionOperator {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.m * x
    }

    /// Phase-space dimension 2n.
    pub fn dim(&self) -> usize {
        self.m.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pairing {
    k: DMatrix<f64>,
}

impl Pairing {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.k
    }
}

/// The symmetric positive-definite matrix of the scalar product `(x, y) = xᵀ G y`.
///
/// Products are evaluated through the factorization `G = W Wᵀ` as
/// `(Wᵀx)·(Wᵀy)`, which avoids the cancellation of `xᵀ G y` when G is badly
/// conditioned; the assembled matrix is kept for inspection and export.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    g: DMatrix<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    la: DMatrix<f64>,
    lc: DMatrix<f64>,
}

impl GramMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn inner(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        g_inner(self, x, y)
    }

    pub fn norm(&self, x: &DVector<f64>) -> f64 {
        self.half(x).norm()
    }

    /// `Wᵀx = (L_C⁻¹(-B x₁ - A x₂), L_Aᵀ x₁)`, so that `(x, y) = (Wᵀx)·(Wᵀy)`.
    pub fn half(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.a.nrows();
        let (x1, x2) = (x.rows(0, n), x.rows(n, n));
        let top = -(&self.b * x1 + &self.a * x2);
        let top = self
            .lc
            .solve_lower_triangular(&top)
            .expect("Cholesky factor has a positive diagonal");
        let bottom = self.la.transpose() * x1;
        let mut out = DVector::zeros(2 * n);
        out.rows_mut(0, n).copy_from(&top);
        out.rows_mut(n, n).copy_from(&bottom);
        out
    }
}

/// One pair of partner vectors: `M u = ω v`, `M v = -ω u`, G-orthonormal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModePair {
    pub omega: f64,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
}

/// Distinct frequencies λ_α (ascending) and their multiplicities n_α.
/// The corresponding eigenspace of M² has dimension 2 n_α.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralClusters {
    pub lambdas: Vec<f64>,
    pub multiplicities: Vec<usize>,
}

impl SpectralClusters {
    /// Total number of degrees of freedom, `Σ n_α`.
    pub fn total(&self) -> usize {
        self.multiplicities.iter().sum()
    }

    /// Index of the cluster whose frequency is nearest to `omega`.
    pub fn nearest(&self, omega: f64) -> usize {
        self.lambdas
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| (*a - omega).abs().total_cmp(&(*b - omega).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

fn chol_a(sys: &SystemMatrices) -> Result<Cholesky<f64, Dyn>> {
    cholesky(sys.a(), MatrixName::A).map_err(|_| GyroError::SingularA)
}

pub fn build_evolution_operator(sys: &SystemMatrices) -> Result<EvolutionOperator> {
    let n = sys.dim();
    let ca = chol_a(sys)?;
    let ainv_c = ca.solve(sys.c());
    let ainv_b = ca.solve(sys.b());
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, n), (n, n)).fill_with_identity();
    m.view_mut((n, 0), (n, n)).copy_from(&(-ainv_c));
    m.view_mut((n, n), (n, n)).copy_from(&(-ainv_b));
    Ok(EvolutionOperator { m })
}

pub fn build_pairing(sys: &SystemMatrices) -> Pairing {
    let n = sys.dim();
    let mut k = DMatrix::zeros(2 * n, 2 * n);
    k.view_mut((0, 0), (n, n)).copy_from(sys.b());
    k.view_mut((0, n), (n, n)).copy_from(sys.a());
    k.view_mut((n, 0), (n, n)).copy_from(&(-sys.a()));
    Pairing { k }
}

/// `G = K · diag(C⁻¹, A⁻¹) · ᵀK`, symmetrized, with a Cholesky check of
/// positive definiteness.
pub fn build_gram(sys: &SystemMatrices) -> Result<GramMatrix> {
    let n = sys.dim();
    let k = build_pairing(sys).k;
    let kt = k.transpose();
    let ca = chol_a(sys)?;
    let cc = cholesky(sys.c(), MatrixName::C)?;

    let mut x = kt.clone();
    let top = cc.solve(&kt.rows(0, n).into_owned());
    let bottom = ca.solve(&kt.rows(n, n).into_owned());
    x.rows_mut(0, n).copy_from(&top);
    x.rows_mut(n, n).copy_from(&bottom);

    let g = &k * x;
    let g = (&g + g.transpose()) * 0.5;
    if Cholesky::new(g.clone()).is_none() {
        return Err(GyroError::NotPositiveDefinite {
            matrix: MatrixName::G,
            min_eigenvalue: SymmetricEigen::new(g.clone()).eigenvalues.min(),
            threshold: 0.0,
        });
    }
    Ok(GramMatrix {
        g,
        a: sys.a().clone(),
        b: sys.b().clone(),
        la: ca.l(),
        lc: cc.l(),
    })
}

pub fn g_inner(g: &GramMatrix, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    check_len("g_inner left operand", g.g.nrows(), x.len())?;
    check_len("g_inner right operand", g.g.nrows(), y.len())?;
    Ok(g.half(x).dot(&g.half(y)))
}

/// Groups eigenvalues `±iω` of M into distinct frequencies.
///
/// Every eigenvalue must be numerically imaginary (`|Re μ| < tol·max|μ|`).
/// Positive imaginary parts within `tol·max|μ|` of a cluster's smallest member
/// join that cluster.
pub fn cluster_frequencies(eigenvalues: &[Complex64], tol: f64) -> Result<SpectralClusters> {
    let scale = eigenvalues.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()));
    let bound = tol * scale;
    if eigenvalues.is_empty() || !(scale > 0.0) || !scale.is_finite() {
        return Err(GyroError::NotOscillatory {
            eigenvalue: "0".into(),
            bound,
        });
    }
    for z in eigenvalues {
        if !(z.re.abs() < bound) {
            return Err(GyroError::NotOscillatory {
                eigenvalue: format!("{z}"),
                bound,
            });
        }
    }
    let mut positive: Vec<f64> = eigenvalues
        .iter()
        .filter(|z| z.im > bound)
        .map(|z| z.im)
        .collect();
    if 2 * positive.len() != eigenvalues.len() {
        let offender = eigenvalues
            .iter()
            .find(|z| z.im.abs() <= bound)
            .map(|z| format!("{z}"))
            .unwrap_or_else(|| "unpaired imaginary eigenvalue".into());
        return Err(GyroError::NotOscillatory {
            eigenvalue: offender,
            bound,
        });
    }
    positive.sort_by(f64::total_cmp);

    let mut groups: Vec<Vec<f64>> = Vec::new();
    for w in positive {
        match groups.last_mut() {
            Some(g) if w - g[0] < bound => g.push(w),
            _ => groups.push(vec![w]),
        }
    }
    Ok(SpectralClusters {
        lambdas: groups
            .iter()
            .map(|g| g.iter().sum::<f64>() / g.len() as f64)
            .collect(),
        multiplicities: groups.iter().map(Vec::len).collect(),
    })
}

/// Antisymmetric `S = W⁻¹ K W⁻ᵀ = [[0, Pᵀ], [-P, -N]]` with `P = L_A⁻¹ L_C`
/// and `N = L_A⁻¹ B L_A⁻ᵀ`.
struct SkewForm {
    s: DMatrix<f64>,
    la: DMatrix<f64>,
    lc: DMatrix<f64>,
    chol_a: Cholesky<f64, Dyn>,
}

impl SkewForm {
    fn new(sys: &SystemMatrices) -> Result<Self> {
        let n = sys.dim();
        let chol_a = chol_a(sys)?;
        let la = chol_a.l();
        let lc = cholesky(sys.c(), MatrixName::C)?.l();
        let solve_la = |rhs: &DMatrix<f64>| {
            la.solve_lower_triangular(rhs)
                .ok_or(GyroError::SingularA)
        };
        let p = solve_la(&lc)?;
        let t = solve_la(sys.b())?;
        let nmat = solve_la(&t.transpose())?.transpose();

        let mut s = DMatrix::zeros(2 * n, 2 * n);
        s.view_mut((0, n), (n, n)).copy_from(&p.transpose());
        s.view_mut((n, 0), (n, n)).copy_from(&(-&p));
        s.view_mut((n, n), (n, n)).copy_from(&(-nmat));
        let s = (&s - s.transpose()) * 0.5;
        Ok(Self { s, la, lc, chol_a })
    }

    /// Eigen-decomposition of the Hermitian matrix `iS`. An eigenvalue θ of
    /// `iS` is the eigenvalue `-iθ` of M.
    fn hermitian_eigen(&self) -> Result<SymmetricEigen<Complex64, Dyn>> {
        let h = self.s.map(|x| Complex64::new(0.0, x));
        SymmetricEigen::try_new(h, f64::EPSILON, 100_000)
            .ok_or_else(|| GyroError::ConvergenceFailure("Hermitian eigensolver did not converge".into()))
    }

    /// Applies `W⁻ᵀ` to a real block of 2n-vectors (one per column).
    fn pull_back(&self, sys: &SystemMatrices, w: &DMatrix<f64>) -> DMatrix<f64> {
        let n = sys.dim();
        let w1 = w.rows(0, n).into_owned();
        let w2 = w.rows(n, n).into_owned();
        let top = self
            .la
            .transpose()
            .solve_upper_triangular(&w2)
            .expect("Cholesky factor has a positive diagonal");
        let bottom = -self.chol_a.solve(&(&self.lc * w1 + sys.b() * &top));
        let mut x = DMatrix::zeros(2 * n, w.ncols());
        x.rows_mut(0, n).copy_from(&top);
        x.rows_mut(n, n).copy_from(&bottom);
        x
    }
}

/// Eigenvalues of M, computed through the Hermitian matrix `iS`
/// (purely imaginary by construction).
pub fn spectrum(sys: &SystemMatrices) -> Result<Vec<Complex64>> {
    let skew = SkewForm::new(sys)?;
    let eig = skew.hermitian_eigen()?;
    Ok(eig
        .eigenvalues
        .iter()
        .map(|&theta| Complex64::new(0.0, -theta))
        .collect())
}

/// Eigenvalues of M from real Schur decompositions of the assembled M and of
/// its LU inverse. Independent of [`spectrum`]; used to cross-check it.
///
/// Schur on M resolves μ to about `ε‖M‖`, which is poor in relative terms for
/// the slowest modes of a stiff system; those are taken as `1/ν` from the
/// spectrum of `M⁻¹`, whichever error estimate `‖M‖/|μ|` or `‖M⁻¹‖·|μ|` is
/// smaller.
pub fn spectrum_direct(op: &EvolutionOperator) -> Vec<Complex64> {
    let by_im = |v: &mut Vec<Complex64>| v.sort_by(|a, b| a.im.total_cmp(&b.im));
    let mut forward: Vec<Complex64> = op.m.complex_eigenvalues().iter().cloned().collect();
    by_im(&mut forward);
    let inverse = match op.m.clone().try_inverse() {
        Some(inv) => inv,
        None => return forward,
    };
    let mut backward: Vec<Complex64> = inverse
        .complex_eigenvalues()
        .iter()
        .map(|nu| Complex64::new(1.0, 0.0) / nu)
        .collect();
    by_im(&mut backward);
    if backward.len() != forward.len() {
        return forward;
    }
    let (fwd_norm, inv_norm) = (op.m.norm(), inverse.norm());
    forward
        .into_iter()
        .zip(backward)
        .map(|(f, b)| if fwd_norm / f.norm() <= inv_norm * f.norm() { f } else { b })
        .collect()
}

pub fn frequency_clusters(sys: &SystemMatrices) -> Result<SpectralClusters> {
    cluster_frequencies(&spectrum(sys)?, CLUSTER_TOL)
}

/// Rotates the pair inside its invariant plane so that the largest-modulus
/// component of `h + i r` (the configuration halves of u and v) is real and
/// positive.
pub fn gauge_pair(pair: &mut ModePair) {
    let n = pair.u.len() / 2;
    let z = DVector::from_fn(n, |i, _| Complex64::new(pair.u[i], pair.v[i]));
    let m = gauge_index(&z);
    let phi = -z[m].arg();
    let (sin, cos) = phi.sin_cos();
    let u = &pair.u * cos - &pair.v * sin;
    let v = &pair.u * sin + &pair.v * cos;
    pair.u = u;
    pair.v = v;
}

fn lex_cmp(a: &DVector<f64>, b: &DVector<f64>) -> std::cmp::Ordering {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// G-orthonormal basis `{u_k, v_k}` of phase space with `M u_k = ω_k v_k`,
/// `M v_k = -ω_k u_k`, sorted by ascending ω.
///
/// Eigenvectors `M x = -iω x` come from the Hermitian form and are polished by
/// inverse iteration on M. Inside each frequency cluster the pairs are then
/// built one at a time: pick the candidate with the largest G-norm orthogonal
/// to the pairs built so far, take `u ∝ Re x` and its partner `v = M u / λ`,
/// which for an eigenvector is `Im x` with the same scale, and remove
/// `span(u, v)` from the remaining candidates.
pub fn modal_basis(sys: &SystemMatrices) -> Result<Vec<ModePair>> {
    let n = sys.dim();
    let skew = SkewForm::new(sys)?;
    let eig = skew.hermitian_eigen()?;
    let eigenvalues: Vec<Complex64> = eig
        .eigenvalues
        .iter()
        .map(|&theta| Complex64::new(0.0, -theta))
        .collect();
    let clusters = cluster_frequencies(&eigenvalues, CLUSTER_TOL)?;

    let op = build_evolution_operator(sys)?;
    let gram = build_gram(sys)?;

    // Eigenvectors with M x = -iω x, ω > 0, correspond to θ = ω > 0.
    let positive: Vec<usize> = (0..2 * n).filter(|&j| eig.eigenvalues[j] > 0.0).collect();
    check_len("positive frequencies", n, positive.len())?;
    let w_re = DMatrix::from_fn(2 * n, n, |i, k| eig.eigenvectors[(i, positive[k])].re);
    let w_im = DMatrix::from_fn(2 * n, n, |i, k| eig.eigenvectors[(i, positive[k])].im);
    let x_re = skew.pull_back(sys, &w_re);
    let x_im = skew.pull_back(sys, &w_im);
    let x = DMatrix::from_fn(2 * n, n, |i, k| Complex64::new(x_re[(i, k)], x_im[(i, k)]));

    let mut pairs = Vec::with_capacity(n);
    for (alpha, (&lambda, &mult)) in clusters
        .lambdas
        .iter()
        .zip(&clusters.multiplicities)
        .enumerate()
    {
        let members: Vec<usize> = (0..n)
            .filter(|&k| clusters.nearest(eig.eigenvalues[positive[k]]) == alpha)
            .collect();
        check_len("cluster members", mult, members.len())?;
        let block = DMatrix::from_fn(2 * n, mult, |i, j| x[(i, members[j])]);
        let block = refine_eigenvectors(&op, lambda, block);
        let candidates = block.column_iter().map(|c| c.into_owned()).collect();
        pairs.extend(partner_construction(&gram, lambda, mult, candidates)?);
    }

    for p in pairs.iter_mut() {
        gauge_pair(p);
    }
    pairs.sort_by(|a, b| a.omega.total_cmp(&b.omega).then_with(|| lex_cmp(&a.u, &b.u)));
    Ok(pairs)
}

/// Two steps of inverse iteration with `(M + iλI)⁻¹`. The Hermitian route gives
/// eigenvectors that are accurate in the G-geometry; this makes their residual
/// on M itself small.
fn refine_eigenvectors(
    op: &EvolutionOperator,
    lambda: f64,
    mut x: DMatrix<Complex64>,
) -> DMatrix<Complex64> {
    let dim = op.dim();
    let shifted = op.m.map(|v| Complex64::new(v, 0.0))
        + DMatrix::<Complex64>::identity(dim, dim) * Complex64::new(0.0, lambda);
    let lu = shifted.lu();
    for _ in 0..2 {
        match lu.solve(&x) {
            Some(mut y) if y.iter().all(|c| c.re.is_finite() && c.im.is_finite()) => {
                for mut col in y.column_iter_mut() {
                    let norm = col.norm();
                    if norm > 0.0 {
                        col /= Complex64::new(norm, 0.0);
                    }
                }
                x = y;
            }
            _ => break,
        }
    }
    x
}

fn g_project_out(gram: &GramMatrix, x: &mut DVector<f64>, basis: &[DVector<f64>]) {
    for b in basis {
        let c = g_inner(gram, b, x).expect("phase-space vectors share one dimension");
        x.axpy(-c, b, 1.0);
    }
}

struct Candidate {
    re: DVector<f64>,
    im: DVector<f64>,
}

impl Candidate {
    fn norm(&self, gram: &GramMatrix) -> f64 {
        gram.norm(&self.re).hypot(gram.norm(&self.im))
    }

    fn project_out(&mut self, gram: &GramMatrix, basis: &[DVector<f64>]) {
        g_project_out(gram, &mut self.re, basis);
        g_project_out(gram, &mut self.im, basis);
    }
}

fn partner_construction(
    gram: &GramMatrix,
    lambda: f64,
    count: usize,
    candidates: Vec<DVector<Complex64>>,
) -> Result<Vec<ModePair>> {
    let mut candidates: Vec<Candidate> = candidates
        .into_iter()
        .map(|x| {
            let mut c = Candidate {
                re: x.map(|z| z.re),
                im: x.map(|z| z.im),
            };
            let s = c.norm(gram);
            c.re /= s;
            c.im /= s;
            c
        })
        .collect();
    let mut built: Vec<DVector<f64>> = Vec::with_capacity(2 * count);
    let mut pairs = Vec::with_capacity(count);
    while pairs.len() < count {
        let (best, norm) = candidates
            .iter()
            .enumerate()
            .map(|(i, c)| (i, c.norm(gram)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .ok_or_else(|| GyroError::ConvergenceFailure("cluster ran out of candidates".into()))?;
        if !(norm > 1e-6) {
            return Err(GyroError::ConvergenceFailure(format!(
                "eigenspace for lambda={lambda} has fewer than {count} independent pairs"
            )));
        }
        let mut c = candidates.swap_remove(best);
        c.project_out(gram, &built);
        let Candidate { re: mut u, im: mut v } = c;
        let s = gram.norm(&u);
        u /= s;
        v /= s;
        g_project_out(gram, &mut v, std::slice::from_ref(&u));
        v /= gram.norm(&v);

        built.push(u.clone());
        built.push(v.clone());
        for c in candidates.iter_mut() {
            c.project_out(gram, &built[built.len() - 2..]);
            c.project_out(gram, &built[built.len() - 2..]);
        }
        pairs.push(ModePair { omega: lambda, u, v });
    }
    Ok(pairs)
}

/// Relative residuals of `M u = ω v` and `M v = -ω u`, normalized by ‖M‖₂.
pub fn pair_residual(op: &EvolutionOperator, pair: &ModePair) -> f64 {
    let mnorm = spectral_norm(op.matrix());
    let r1 = (op.apply(&pair.u) - &pair.v * pair.omega).norm();
    let r2 = (op.apply(&pair.v) + &pair.u * pair.omega).norm();
    r1.max(r2) / mnorm
}

/// The 2n×2n matrix of G-products over `[u_1, v_1, u_2, v_2, ...]`.
pub fn gram_of_basis(gram: &GramMatrix, basis: &[ModePair]) -> DMatrix<f64> {
    let halves: Vec<DVector<f64>> = basis
        .iter()
        .flat_map(|p| [gram.half(&p.u), gram.half(&p.v)])
        .collect();
    DMatrix::from_fn(halves.len(), halves.len(), |i, j| halves[i].dot(&halves[j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn sys(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> SystemMatrices {
        SystemMatrices::new(a, b, c, 1e-10).unwrap()
    }

    fn one_dof() -> SystemMatrices {
        sys(dmatrix![1.0], dmatrix![0.0], dmatrix![4.0])
    }

    fn gyro2() -> SystemMatrices {
        let i2 = DMatrix::identity(2, 2);
        sys(i2.clone(), dmatrix![0.0, 1.5; -1.5, 0.0], i2)
    }

    #[test]
    fn evolution_operator_blocks() {
        let m = build_evolution_operator(&sys(dmatrix![2.0], dmatrix![0.0], dmatrix![8.0])).unwrap();
        assert!((m.matrix() - dmatrix![0.0, 1.0; -4.0, 0.0]).abs().max() < 1e-15);
        let m = build_evolution_operator(&one_dof()).unwrap();
        assert_eq!(m.matrix(), &dmatrix![0.0, 1.0; -4.0, 0.0]);
        let m = build_evolution_operator(&gyro2()).unwrap();
        let expected = dmatrix![
            0.0, 0.0, 1.0, 0.0;
            0.0, 0.0, 0.0, 1.0;
            -1.0, 0.0, 0.0, -1.5;
            0.0, -1.0, 1.5, 0.0
        ];
        assert_eq!(m.matrix(), &expected);
    }

    #[test]
    fn pairing_blocks() {
        assert_eq!(build_pairing(&one_dof()).matrix(), &dmatrix![0.0, 1.0; -1.0, 0.0]);
        let k = build_pairing(&sys(dmatrix![2.0], dmatrix![0.0], dmatrix![1.0]));
        assert_eq!(k.matrix(), &dmatrix![0.0, 2.0; -2.0, 0.0]);
        let k = build_pairing(&gyro2());
        let k = k.matrix();
        assert_eq!(k.view((0, 0), (2, 2)), dmatrix![0.0, 1.5; -1.5, 0.0]);
        assert_eq!(k.view((0, 2), (2, 2)), DMatrix::<f64>::identity(2, 2));
        assert_eq!(k.view((2, 0), (2, 2)), -DMatrix::<f64>::identity(2, 2));
        assert_eq!(k.view((2, 2), (2, 2)), DMatrix::<f64>::zeros(2, 2));
    }

    #[test]
    fn gram_fixtures() {
        let g = build_gram(&one_dof()).unwrap();
        assert!((g.matrix() - dmatrix![1.0, 0.0; 0.0, 0.25]).abs().max() < 1e-15);
        let (a, c) = (3.0, 7.0);
        let g = build_gram(&sys(dmatrix![a], dmatrix![0.0], dmatrix![c])).unwrap();
        assert!((g.matrix() - dmatrix![a, 0.0; 0.0, a * a / c]).abs().max() < 1e-14);
        let i2 = DMatrix::identity(2, 2);
        let g = build_gram(&sys(i2.clone(), DMatrix::zeros(2, 2), i2)).unwrap();
        assert_eq!(g.matrix(), &DMatrix::<f64>::identity(4, 4));
    }

    #[test]
    fn g_inner_fixtures() {
        let g = build_gram(&one_dof()).unwrap();
        assert_eq!(g_inner(&g, &dvector![0.0, 2.0], &dvector![0.0, 2.0]).unwrap(), 1.0);
        assert_eq!(g_inner(&g, &dvector![1.0, 0.0], &dvector![0.0, 2.0]).unwrap(), 0.0);
        assert!(g_inner(&g, &dvector![1.0], &dvector![0.0, 2.0]).is_err());
    }

    #[test]
    fn clustering() {
        let c = |re: f64, im: f64| Complex64::new(re, im);
        let cl = cluster_frequencies(&[c(0.0, 2.0), c(0.0, -2.0)], CLUSTER_TOL).unwrap();
        assert_eq!(cl.lambdas, vec![2.0]);
        assert_eq!(cl.multiplicities, vec![1]);

        let cl = cluster_frequencies(
            &[c(0.0, 2.0), c(0.0, -0.5), c(0.0, 0.5), c(0.0, -2.0)],
            CLUSTER_TOL,
        )
        .unwrap();
        assert_eq!(cl.lambdas, vec![0.5, 2.0]);
        assert_eq!(cl.multiplicities, vec![1, 1]);

        let cl = cluster_frequencies(
            &[c(0.0, 1.0), c(0.0, -1.0), c(0.0, 1.0 + 1e-14), c(0.0, -1.0)],
            CLUSTER_TOL,
        )
        .unwrap();
        assert_eq!(cl.multiplicities, vec![2]);
        assert!((cl.lambdas[0] - 1.0).abs() < 1e-14);

        let err = cluster_frequencies(&[c(0.1, 1.0), c(0.1, -1.0)], CLUSTER_TOL).unwrap_err();
        assert!(matches!(err, GyroError::NotOscillatory { .. }));
    }

    #[test]
    fn one_dof_basis() {
        let basis = modal_basis(&one_dof()).unwrap();
        assert_eq!(basis.len(), 1);
        let p = &basis[0];
        assert!((p.omega - 2.0).abs() < 1e-14);
        assert!((&p.u - dvector![1.0, 0.0]).norm() < 1e-14);
        assert!((&p.v - dvector![0.0, -2.0]).norm() < 1e-14);
    }

    #[test]
    fn decoupled_oscillators() {
        let s = sys(DMatrix::identity(2, 2), DMatrix::zeros(2, 2), dmatrix![4.0, 0.0; 0.0, 1.0]);
        let basis = modal_basis(&s).unwrap();
        assert!((basis[0].omega - 1.0).abs() < 1e-14);
        assert!((basis[1].omega - 2.0).abs() < 1e-14);
        assert!((&basis[0].u - dvector![0.0, 1.0, 0.0, 0.0]).norm() < 1e-14);
        assert!((&basis[1].u - dvector![1.0, 0.0, 0.0, 0.0]).norm() < 1e-14);
    }

    #[test]
    fn gyroscopic_frequencies_match_quartic() {
        // ω⁴ - (2 + b²) ω² + 1 = 0
        let b: f64 = 1.5;
        let p = 2.0 + b * b;
        let disc = (p * p - 4.0).sqrt();
        let w_lo = ((p - disc) / 2.0).sqrt();
        let w_hi = ((p + disc) / 2.0).sqrt();
        let basis = modal_basis(&gyro2()).unwrap();
        assert!((basis[0].omega - w_lo).abs() < 1e-12);
        assert!((basis[1].omega - w_hi).abs() < 1e-12);
        assert!((w_lo - 0.5).abs() < 1e-15 && (w_hi - 2.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_cluster_is_orthonormal() {
        let i3 = DMatrix::identity(3, 3);
        let s = sys(i3.clone(), DMatrix::zeros(3, 3), i3);
        let basis = modal_basis(&s).unwrap();
        let g = build_gram(&s).unwrap();
        let op = build_evolution_operator(&s).unwrap();
        assert!((gram_of_basis(&g, &basis) - DMatrix::identity(6, 6)).abs().max() < 1e-12);
        for p in &basis {
            assert!((p.omega - 1.0).abs() < 1e-14);
            assert!(pair_residual(&op, p) < 1e-13);
        }
    }

    #[test]
    fn gram_matches_k_times_m_inverse() {
        let s = gyro2();
        let g = build_gram(&s).unwrap();
        let m = build_evolution_operator(&s).unwrap();
        let minv = m.matrix().clone().try_inverse().unwrap();
        let other = build_pairing(&s).matrix() * minv;
        assert!((g.matrix() - other).norm() < 1e-12 * g.matrix().norm());
    }

    #[test]
    fn direct_spectrum_agrees() {
        let s = gyro2();
        let mut direct: Vec<f64> = spectrum_direct(&build_evolution_operator(&s).unwrap())
            .iter()
            .map(|z| z.im)
            .filter(|&w| w > 0.0)
            .collect();
        direct.sort_by(f64::total_cmp);
        assert!((direct[0] - 0.5).abs() < 1e-12 && (direct[1] - 2.0).abs() < 1e-12);
    }
}
