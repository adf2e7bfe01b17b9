//! Finite-dimensional Lie algebras given by structure constants.
//!
//! Coalgebra elements are identified with algebra elements through the pairing
//! matrix `kappa`, so the same [`AlgebraElement`] type carries velocities and
//! momenta.
//!
//! Built-in bases (all orthonormal for their pairing, so `kappa = I`):
//!
//! * `so3`: `e_i = hat(e_i)`, the cross-product matrices, `[e1, e2] = e3` cyclic.
//! * `soN(n)`: `E_ij = e_i e_j^T - e_j e_i^T` for `i < j` in lexicographic order,
//!   pairing `-tr(AB)/2`.
//! * `se3`: six 4x4 homogeneous generators in (rotation, translation) block order,
//!   `(omega, v) -> [[hat(omega), v], [0, 0]]`.
//! * `glN(n)`: elementary matrices `E_ij` in row-major order, Frobenius pairing.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};

/// Coordinates of an element of the algebra (or, via `kappa`, of its dual).
#[derive(Clone, Debug, PartialEq)]
pub struct AlgebraElement {
    coords: Vec<f64>,
}

impl AlgebraElement {
    pub fn new(coords: Vec<f64>) -> Self {
        Self { coords }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            coords: vec![0.0; dim],
        }
    }

    pub fn basis(dim: usize, i: usize) -> Self {
        let mut e = Self::zeros(dim);
        e.coords[i] = 1.0;
        e
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.coords
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self::new(self.coords.iter().map(|x| a * x).collect())
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &AlgebraElement) {
        for (x, y) in self.coords.iter_mut().zip(&other.coords) {
            *x += a * y;
        }
    }

    pub fn dot(&self, other: &AlgebraElement) -> f64 {
        self.coords.iter().zip(&other.coords).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.coords.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|x| x.is_finite())
    }
}

impl From<Vec<f64>> for AlgebraElement {
    fn from(coords: Vec<f64>) -> Self {
        Self::new(coords)
    }
}

impl Index<usize> for AlgebraElement {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.coords[i]
    }
}

impl IndexMut<usize> for AlgebraElement {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.coords[i]
    }
}

impl Add for &AlgebraElement {
    type Output = AlgebraElement;
    fn add(self, rhs: &AlgebraElement) -> AlgebraElement {
        AlgebraElement::new(self.coords.iter().zip(&rhs.coords).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &AlgebraElement {
    type Output = AlgebraElement;
    fn sub(self, rhs: &AlgebraElement) -> AlgebraElement {
        AlgebraElement::new(self.coords.iter().zip(&rhs.coords).map(|(a, b)| a - b).collect())
    }
}

impl Neg for &AlgebraElement {
    type Output = AlgebraElement;
    fn neg(self) -> AlgebraElement {
        self.scaled(-1.0)
    }
}

impl Mul<&AlgebraElement> for f64 {
    type Output = AlgebraElement;
    fn mul(self, rhs: &AlgebraElement) -> AlgebraElement {
        rhs.scaled(self)
    }
}

/// Dense structure constants `c^k_{ij}`, stored at `(i * dim + j) * dim + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct StructureConstants {
    dim: usize,
    c: Vec<f64>,
}

impl StructureConstants {
    pub fn new(dim: usize, c: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidAlgebra("dimension must be positive".into()));
        }
        check_dim(dim * dim * dim, c.len())?;
        Ok(Self { dim, c })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            c: vec![0.0; dim * dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.c[(i * self.dim + j) * self.dim + k]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        let d = self.dim;
        self.c[(i * d + j) * d + k] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.c
    }

    pub fn is_antisymmetric(&self) -> bool {
        let d = self.dim;
        (0..d).all(|i| (0..d).all(|j| (0..d).all(|k| self.get(i, j, k) == -self.get(j, i, k))))
    }

    /// Max-norm of the Jacobi identity over all index quadruples.
    pub fn jacobi_residual(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                for l in 0..d {
                    for m in 0..d {
                        let mut acc = 0.0;
                        for k in 0..d {
                            acc += self.get(i, j, k) * self.get(k, l, m)
                                + self.get(j, l, k) * self.get(k, i, m)
                                + self.get(l, i, k) * self.get(k, j, m);
                        }
                        worst = worst.max(acc.abs());
                    }
                }
            }
        }
        worst
    }
}

/// A finite-dimensional Lie algebra with a chosen basis and pairing.
#[derive(Clone, Debug)]
pub struct LieAlgebraSpec {
    name: String,
    constants: StructureConstants,
    kappa: DMatrix<f64>,
    kappa_inv: DMatrix<f64>,
    /// `lowered[(b * dim + i) * dim + j] = sum_k kappa_{bk} c^k_{ij}`
    lowered: Vec<f64>,
    basis_matrices: Option<Vec<DMatrix<f64>>>,
}

pub const JACOBI_TOLERANCE: f64 = 1e-12;

impl LieAlgebraSpec {
    /// Validates antisymmetry, the Jacobi identity and positivity of `kappa`.
    pub fn new(name: impl Into<String>, constants: StructureConstants, kappa: DMatrix<f64>) -> Result<Self> {
        let dim = constants.dim();
        if kappa.nrows() != dim || kappa.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: kappa.nrows(),
            });
        }
        if !constants.is_antisymmetric() {
            return Err(Error::InvalidAlgebra("structure constants are not antisymmetric".into()));
        }
        let jac = constants.jacobi_residual();
        if jac >= JACOBI_TOLERANCE {
            return Err(Error::InvalidAlgebra(format!("Jacobi residual {jac:e}")));
        }
        if (&kappa - kappa.transpose()).amax() > 0.0 {
            return Err(Error::InvalidAlgebra("pairing is not symmetric".into()));
        }
        let chol = kappa
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidAlgebra("pairing is not positive definite".into()))?;
        let kappa_inv = chol.inverse();
        let mut lowered = vec![0.0; dim * dim * dim];
        for b in 0..dim {
            for i in 0..dim {
                for j in 0..dim {
                    let mut acc = 0.0;
                    for k in 0..dim {
                        acc += kappa[(b, k)] * constants.get(i, j, k);
                    }
                    lowered[(b * dim + i) * dim + j] = acc;
                }
            }
        }
        Ok(Self {
            name: name.into(),
            constants,
            kappa,
            kappa_inv,
            lowered,
            basis_matrices: None,
        })
    }

    /// Builds an algebra from a matrix basis closed under the commutator.
    /// `kappa` defaults to the normalized Frobenius pairing of the basis.
    pub fn from_matrix_basis(name: impl Into<String>, basis: Vec<DMatrix<f64>>) -> Result<Self> {
        let dim = basis.len();
        if dim == 0 {
            return Err(Error::InvalidAlgebra("empty basis".into()));
        }
        let gram = frobenius_gram(&basis);
        let gram_inv = gram
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidAlgebra("basis matrices are linearly dependent".into()))?
            .inverse();
        let mut constants = StructureConstants::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                let comm = &basis[i] * &basis[j] - &basis[j] * &basis[i];
                let coeffs = project(&basis, &gram_inv, &comm);
                let recon = combine(&basis, &coeffs);
                if (&recon - &comm).amax() > 1e-12 {
                    return Err(Error::InvalidAlgebra(format!(
                        "basis not closed under commutator at ({i}, {j})"
                    )));
                }
                for (k, ck) in coeffs.iter().enumerate() {
                    // snap exact integers so builtins are exactly antisymmetric
                    let v = if (ck - ck.round()).abs() < 1e-14 { ck.round() } else { *ck };
                    constants.set(i, j, k, v);
                }
            }
        }
        // normalized Frobenius pairing: identity when the basis is orthogonal with equal norms
        let scale = gram[(0, 0)];
        let kappa = gram.map(|x| x / scale);
        let mut spec = Self::new(name, constants, kappa)?;
        spec.basis_matrices = Some(basis);
        Ok(spec)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.constants.dim()
    }

    pub fn constants(&self) -> &StructureConstants {
        &self.constants
    }

    pub fn kappa(&self) -> &DMatrix<f64> {
        &self.kappa
    }

    pub fn jacobi_residual(&self) -> f64 {
        self.constants.jacobi_residual()
    }

    /// `max |kappa([e_i, e_j], e_k) + kappa(e_j, [e_i, e_k])|`, zero for bi-invariant pairings.
    pub fn ad_invariance_residual(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    // lowered[(b*d + i)*d + j] = kappa([e_i, e_j], e_b)
                    let a = self.lowered[(k * d + i) * d + j];
                    let b = self.lowered[(j * d + i) * d + k];
                    worst = worst.max((a + b).abs());
                }
            }
        }
        worst
    }

    pub fn zero(&self) -> AlgebraElement {
        AlgebraElement::zeros(self.dim())
    }

    fn check(&self, x: &AlgebraElement) -> Result<()> {
        check_dim(self.dim(), x.dim())
    }

    /// `[xi, eta]^k = c^k_{ij} xi^i eta^j`
    pub fn bracket(&self, xi: &AlgebraElement, eta: &AlgebraElement) -> Result<AlgebraElement> {
        self.check(xi)?;
        self.check(eta)?;
        let mut out = self.zero();
        self.bracket_into(xi.as_slice(), eta.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    /// Unchecked slice kernel behind [`bracket`](Self::bracket); overwrites `out`.
    pub fn bracket_into(&self, xi: &[f64], eta: &[f64], out: &mut [f64]) {
        let d = self.dim();
        out.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..d {
            let xi_i = xi[i];
            if xi_i == 0.0 {
                continue;
            }
            for j in 0..d {
                let w = xi_i * eta[j];
                if w == 0.0 {
                    continue;
                }
                let row = &self.constants.c[(i * d + j) * d..(i * d + j + 1) * d];
                for (o, c) in out.iter_mut().zip(row) {
                    *o += w * c;
                }
            }
        }
    }

    /// The coadjoint operator: the unique `nu` with `kappa(nu, eta) = kappa(mu, [xi, eta])`.
    pub fn ad_star(&self, xi: &AlgebraElement, mu: &AlgebraElement) -> Result<AlgebraElement> {
        self.check(xi)?;
        self.check(mu)?;
        let mut out = self.zero();
        self.ad_star_into(xi.as_slice(), mu.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    pub fn ad_star_into(&self, xi: &[f64], mu: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let mut w = vec![0.0; d];
        for b in 0..d {
            if mu[b] == 0.0 {
                continue;
            }
            for i in 0..d {
                let f = mu[b] * xi[i];
                if f == 0.0 {
                    continue;
                }
                let row = &self.lowered[(b * d + i) * d..(b * d + i + 1) * d];
                for (wj, l) in w.iter_mut().zip(row) {
                    *wj += f * l;
                }
            }
        }
        for (m, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, wj) in w.iter().enumerate() {
                acc += self.kappa_inv[(m, j)] * wj;
            }
            *o = acc;
        }
    }

    /// `kappa(a, b)`
    pub fn pair(&self, a: &AlgebraElement, b: &AlgebraElement) -> f64 {
        self.pair_slices(a.as_slice(), b.as_slice())
    }

    pub fn pair_slices(&self, a: &[f64], b: &[f64]) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                acc += a[i] * self.kappa[(i, j)] * b[j];
            }
        }
        acc
    }

    /// Raises an index: given the components `w_j = kappa(nu, e_j)`, returns `nu`.
    pub fn raise(&self, lowered: &[f64]) -> AlgebraElement {
        let d = self.dim();
        AlgebraElement::new(
            (0..d)
                .map(|m| (0..d).map(|j| self.kappa_inv[(m, j)] * lowered[j]).sum())
                .collect(),
        )
    }

    pub fn basis_matrices(&self) -> Option<&[DMatrix<f64>]> {
        self.basis_matrices.as_deref()
    }

    /// Image of `xi` in the matrix representation (builtins only).
    pub fn to_matrix(&self, xi: &AlgebraElement) -> Result<DMatrix<f64>> {
        self.check(xi)?;
        let basis = self.require_matrices()?;
        Ok(combine(basis, xi.as_slice()))
    }

    /// Coordinates of the Frobenius-orthogonal projection of `m` onto the algebra.
    pub fn from_matrix(&self, m: &DMatrix<f64>) -> Result<AlgebraElement> {
        let basis = self.require_matrices()?;
        let gram_inv = frobenius_gram(basis)
            .cholesky()
            .expect("validated at construction")
            .inverse();
        Ok(AlgebraElement::new(project(basis, &gram_inv, m)))
    }

    fn require_matrices(&self) -> Result<&[DMatrix<f64>]> {
        self.basis_matrices
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument(format!("algebra `{}` has no matrix representation", self.name)))
    }
}

impl fmt::Display for LieAlgebraSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (dim {})", self.name, self.dim())
    }
}

fn frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn frobenius_gram(basis: &[DMatrix<f64>]) -> DMatrix<f64> {
    let d = basis.len();
    DMatrix::from_fn(d, d, |i, j| frobenius(&basis[i], &basis[j]))
}

fn project(basis: &[DMatrix<f64>], gram_inv: &DMatrix<f64>, m: &DMatrix<f64>) -> Vec<f64> {
    let d = basis.len();
    let rhs: Vec<f64> = basis.iter().map(|e| frobenius(e, m)).collect();
    (0..d)
        .map(|k| (0..d).map(|j| gram_inv[(k, j)] * rhs[j]).sum())
        .collect()
}

fn combine(basis: &[DMatrix<f64>], coeffs: &[f64]) -> DMatrix<f64> {
    let (r, c) = basis[0].shape();
    let mut out = DMatrix::zeros(r, c);
    for (e, a) in basis.iter().zip(coeffs) {
        out += e * *a;
    }
    out
}

/// Cross-product matrix of a 3-vector.
pub fn hat3(v: [f64; 3]) -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &[0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0])
}

/// Names accepted by [`builtin`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Builtin {
    So3,
    SoN(usize),
    Se3,
    GlN(usize),
}

impl Builtin {
    /// Parses `so3`, `se3`, `soN(4)`/`so4`, `glN(2)`/`gl2`.
    pub fn parse(name: &str) -> Result<Builtin> {
        let lower = name.trim().to_ascii_lowercase();
        let arg = |prefix: &str| -> Option<usize> {
            let rest = lower.strip_prefix(prefix)?;
            let rest = rest.strip_prefix('n').unwrap_or(rest);
            let rest = rest.trim_start_matches('(').trim_end_matches(')');
            rest.parse().ok()
        };
        match lower.as_str() {
            "so3" => Ok(Builtin::So3),
            "se3" => Ok(Builtin::Se3),
            _ => {
                if let Some(n) = arg("so") {
                    Ok(Builtin::SoN(n))
                } else if let Some(n) = arg("gl") {
                    Ok(Builtin::GlN(n))
                } else {
                    Err(Error::UnsupportedAlgebra(name.to_string()))
                }
            }
        }
    }
}

/// One of the built-in algebras with its documented basis.
pub fn builtin(which: Builtin) -> Result<LieAlgebraSpec> {
    match which {
        Builtin::So3 => LieAlgebraSpec::from_matrix_basis(
            "so3",
            vec![hat3([1.0, 0.0, 0.0]), hat3([0.0, 1.0, 0.0]), hat3([0.0, 0.0, 1.0])],
        ),
        Builtin::SoN(n) => {
            if n < 2 {
                return Err(Error::InvalidArgument(format!("soN requires n >= 2, got {n}")));
            }
            let mut basis = Vec::with_capacity(n * (n - 1) / 2);
            for i in 0..n {
                for j in (i + 1)..n {
                    let mut e = DMatrix::zeros(n, n);
                    e[(i, j)] = 1.0;
                    e[(j, i)] = -1.0;
                    basis.push(e);
                }
            }
            LieAlgebraSpec::from_matrix_basis(format!("so{n}"), basis)
        }
        Builtin::Se3 => {
            let mut basis = Vec::with_capacity(6);
            for i in 0..3 {
                let mut w = [0.0; 3];
                w[i] = 1.0;
                let h = hat3(w);
                let mut e = DMatrix::zeros(4, 4);
                e.view_mut((0, 0), (3, 3)).copy_from(&h);
                basis.push(e);
            }
            for i in 0..3 {
                let mut e = DMatrix::zeros(4, 4);
                e[(i, 3)] = 1.0;
                basis.push(e);
            }
            // rotation generators have Frobenius norm^2 = 2, translations 1; normalize to kappa = I
            let se3 = LieAlgebraSpec::from_matrix_basis("se3", basis)?;
            let spec = LieAlgebraSpec::new("se3", se3.constants.clone(), DMatrix::identity(6, 6))?;
            Ok(LieAlgebraSpec {
                basis_matrices: se3.basis_matrices,
                ..spec
            })
        }
        Builtin::GlN(n) => {
            if n < 2 {
                return Err(Error::InvalidArgument(format!("glN requires n >= 2, got {n}")));
            }
            let mut basis = Vec::with_capacity(n * n);
            for i in 0..n {
                for j in 0..n {
                    let mut e = DMatrix::zeros(n, n);
                    e[(i, j)] = 1.0;
                    basis.push(e);
                }
            }
            LieAlgebraSpec::from_matrix_basis(format!("gl{n}"), basis)
        }
    }
}

/// Convenience wrapper around [`Builtin::parse`] and [`builtin`].
pub fn builtin_by_name(name: &str) -> Result<LieAlgebraSpec> {
    builtin(Builtin::parse(name)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn el(v: &[f64]) -> AlgebraElement {
        AlgebraElement::new(v.to_vec())
    }

    fn all_builtins() -> Vec<LieAlgebraSpec> {
        [
            Builtin::So3,
            Builtin::SoN(2),
            Builtin::SoN(4),
            Builtin::SoN(5),
            Builtin::Se3,
            Builtin::GlN(2),
            Builtin::GlN(3),
        ]
        .into_iter()
        .map(|b| builtin(b).unwrap())
        .collect()
    }

    #[test]
    fn so3_bracket_is_cross_product() {
        let so3 = builtin(Builtin::So3).unwrap();
        let r = so3.bracket(&el(&[1.0, 0.0, 0.0]), &el(&[0.0, 1.0, 0.0])).unwrap();
        assert_eq!(r.as_slice(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn bracket_with_self_vanishes() {
        for alg in all_builtins() {
            let x = AlgebraElement::new((0..alg.dim()).map(|i| 0.3 * i as f64 - 1.1).collect());
            assert!(alg.bracket(&x, &x).unwrap().max_abs() < 1e-15, "{alg}");
        }
    }

    #[test]
    fn se3_bracket_matches_homogeneous_commutator() {
        let se3 = builtin(Builtin::Se3).unwrap();
        let a = el(&[0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let b = el(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let r = se3.bracket(&a, &b).unwrap();
        assert_eq!(r.as_slice(), &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

        // independent route: 4x4 commutator of hand-built homogeneous matrices
        let homog = |x: &[f64]| {
            let mut m = DMatrix::zeros(4, 4);
            m.view_mut((0, 0), (3, 3)).copy_from(&hat3([x[0], x[1], x[2]]));
            for i in 0..3 {
                m[(i, 3)] = x[3 + i];
            }
            m
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c = homog(&x) * homog(&y) - homog(&y) * homog(&x);
            let r = se3.bracket(&el(&x), &el(&y)).unwrap();
            assert!((homog(r.as_slice()) - c).amax() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let so3 = builtin(Builtin::So3).unwrap();
        assert!(matches!(
            so3.bracket(&el(&[1.0, 0.0]), &el(&[0.0, 1.0, 0.0])),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(so3.ad_star(&el(&[1.0; 4]), &el(&[0.0; 3])).is_err());
    }

    #[test]
    fn so3_ad_star_examples() {
        let so3 = builtin(Builtin::So3).unwrap();
        let r = so3.ad_star(&el(&[1.0, 0.0, 0.0]), &el(&[0.0, 1.0, 0.0])).unwrap();
        assert_eq!(r.as_slice(), &[0.0, 0.0, -1.0]);
        let mu = el(&[0.3, -1.2, 2.0]);
        assert_eq!(so3.ad_star(&so3.zero(), &mu).unwrap().max_abs(), 0.0);
        assert!(so3.ad_star(&mu, &mu).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn ad_star_duality_on_basis_triples() {
        for alg in all_builtins() {
            let d = alg.dim();
            for i in 0..d {
                for j in 0..d {
                    for k in 0..d {
                        let (xi, mu, eta) = (
                            AlgebraElement::basis(d, i),
                            AlgebraElement::basis(d, j),
                            AlgebraElement::basis(d, k),
                        );
                        let lhs = alg.pair(&alg.ad_star(&xi, &mu).unwrap(), &eta);
                        let rhs = alg.pair(&mu, &alg.bracket(&xi, &eta).unwrap());
                        assert!((lhs - rhs).abs() < 1e-14, "{alg}: {i} {j} {k}");
                    }
                }
            }
        }
    }

    #[test]
    fn non_identity_pairing_duality() {
        let so3 = builtin(Builtin::So3).unwrap();
        let kappa = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.1, 0.0, 0.1, 3.0]);
        let alg = LieAlgebraSpec::new("so3-k", so3.constants().clone(), kappa).unwrap();
        let (xi, mu, eta) = (el(&[0.4, -0.2, 1.0]), el(&[1.5, 0.3, -0.7]), el(&[-0.1, 0.9, 0.2]));
        let lhs = alg.pair(&alg.ad_star(&xi, &mu).unwrap(), &eta);
        let rhs = alg.pair(&mu, &alg.bracket(&xi, &eta).unwrap());
        assert!((lhs - rhs).abs() < 1e-14);
    }

    #[test]
    fn jacobi_residuals() {
        assert_eq!(builtin(Builtin::So3).unwrap().jacobi_residual(), 0.0);
        assert!(builtin(Builtin::Se3).unwrap().jacobi_residual() < 1e-14);
        for alg in all_builtins() {
            assert!(alg.jacobi_residual() < JACOBI_TOLERANCE);
        }
    }

    #[test]
    fn perturbed_constants_violate_jacobi() {
        let so3 = builtin(Builtin::So3).unwrap();
        let mut c = so3.constants().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for i in 0..3 {
            for j in (i + 1)..3 {
                for k in 0..3 {
                    let delta = 0.1 * rng.random_range(-1.0..1.0);
                    let v = c.get(i, j, k) + delta;
                    c.set(i, j, k, v);
                    c.set(j, i, k, -v);
                }
            }
        }
        assert!(c.is_antisymmetric());
        let r = c.jacobi_residual();
        assert!(r > 1e-2, "residual {r}");
        assert!(LieAlgebraSpec::new("bad", c, DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn builtin_dimensions_and_names() {
        assert_eq!(builtin(Builtin::So3).unwrap().dim(), 3);
        assert_eq!(builtin(Builtin::SoN(4)).unwrap().dim(), 6);
        assert_eq!(builtin(Builtin::Se3).unwrap().dim(), 6);
        assert_eq!(builtin(Builtin::GlN(3)).unwrap().dim(), 9);
        assert_eq!(Builtin::parse("soN(4)").unwrap(), Builtin::SoN(4));
        assert_eq!(Builtin::parse("so4").unwrap(), Builtin::SoN(4));
        assert_eq!(Builtin::parse("glN(2)").unwrap(), Builtin::GlN(2));
        assert!(matches!(Builtin::parse("sp4"), Err(Error::UnsupportedAlgebra(_))));
        assert!(builtin(Builtin::SoN(1)).is_err());
    }

    #[test]
    fn matrix_round_trip() {
        let alg = builtin(Builtin::SoN(4)).unwrap();
        let x = AlgebraElement::new(vec![0.1, -0.4, 2.0, 0.7, 0.0, -1.3]);
        let m = alg.to_matrix(&x).unwrap();
        assert!((&m + m.transpose()).amax() < 1e-15);
        let back = alg.from_matrix(&m).unwrap();
        assert!((&back - &x).max_abs() < 1e-15);
    }

    fn algebra_and_vectors() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, Vec<f64>, f64, f64)> {
        (0usize..7).prop_flat_map(|which| {
            let d = [3, 1, 6, 10, 6, 4, 9][which];
            (
                Just(which),
                prop::collection::vec(-2.0f64..2.0, d),
                prop::collection::vec(-2.0f64..2.0, d),
                prop::collection::vec(-2.0f64..2.0, d),
                -3.0f64..3.0,
                -3.0f64..3.0,
            )
        })
    }

    proptest! {
        #[test]
        fn duality_and_bilinearity((which, x, y, z, a, b) in algebra_and_vectors()) {
            let alg = &all_builtins()[which];
            let (x, y, z) = (el(&x), el(&y), el(&z));
            let lhs = alg.pair(&alg.ad_star(&x, &y).unwrap(), &z);
            let rhs = alg.pair(&y, &alg.bracket(&x, &z).unwrap());
            prop_assert!((lhs - rhs).abs() < 1e-12);

            let mut comb = x.scaled(a);
            comb.axpy(b, &y);
            let left = alg.bracket(&comb, &z).unwrap();
            let mut right = alg.bracket(&x, &z).unwrap().scaled(a);
            right.axpy(b, &alg.bracket(&y, &z).unwrap());
            prop_assert!((&left - &right).max_abs() < 1e-12);
        }

        #[test]
        fn bi_invariant_pairing_kills_self_coadjoint(which in prop::sample::select(vec![0usize, 1, 2, 3]),
                                                     seed in 0u64..1000) {
            let alg = &all_builtins()[which];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mu = AlgebraElement::new((0..alg.dim()).map(|_| rng.random_range(-1.0..1.0)).collect());
            prop_assert!(alg.ad_star(&mu, &mu).unwrap().max_abs() < 1e-14);
        }
    }
}
