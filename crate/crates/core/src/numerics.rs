//! Small dense symmetric linear algebra.
//!
//! Everything in this crate works with symmetric matrices of modest dimension
//! (a few hundred at most), so a packed upper-triangle storage plus a cyclic
//! Jacobi eigensolver is accurate and fast enough. All operations are pure
//! functions of immutable inputs.

use crate::{Error, Result};

/// Relative threshold below which an eigenvalue counts as zero for PD solves.
pub const EPS_PD: f64 = 1e-12;

/// Dense symmetric matrix; only the upper triangle is stored (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    /// Packed upper triangle, row-major: entry (i, j) with i <= j lives at
    /// `i*dim - i*(i-1)/2 + (j - i)`.
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be positive");
        SymMatrix {
            dim,
            data: vec![0.0; dim * (dim + 1) / 2],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.set(i, i, d);
        }
        m
    }

    /// Builds from a callback on (i, j); only i <= j is queried.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Builds from a full row-major dense buffer, averaging the two triangles.
    pub fn from_dense(dim: usize, dense: &[f64]) -> Self {
        assert_eq!(dense.len(), dim * dim);
        Self::from_fn(dim, |i, j| 0.5 * (dense[i * dim + j] + dense[j * dim + i]))
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= j && j < self.dim);
        i * (2 * self.dim - i + 1) / 2 + (j - i)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i <= j {
            self.data[self.idx(i, j)]
        } else {
            self.data[self.idx(j, i)]
        }
    }

    /// Sets the (i, j) = (j, i) entry.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = if i <= j { self.idx(i, j) } else { self.idx(j, i) };
        self.data[k] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                let v = self.get(i, j);
                s += v * v;
            }
        }
        s.sqrt()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim);
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        assert_eq!(self.dim, other.dim);
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        out
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        assert_eq!(self.dim, other.dim);
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a -= b;
        }
        out
    }

    pub fn scale(&self, c: f64) -> SymMatrix {
        let mut out = self.clone();
        for a in out.data.iter_mut() {
            *a *= c;
        }
        out
    }

    /// Symmetric sandwich product `self * b * self`.
    pub fn sandwich(&self, b: &SymMatrix) -> SymMatrix {
        assert_eq!(self.dim, b.dim);
        let n = self.dim;
        // t = self * b (dense)
        let mut t = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += self.get(i, k) * b.get(k, j);
                }
                t[i * n + j] = s;
            }
        }
        // out = t * self, symmetric by construction
        SymMatrix::from_fn(n, |i, j| {
            (0..n).map(|k| t[i * n + k] * self.get(k, j)).sum()
        })
    }

    /// `x' * self * x` for a vector x.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let ax = self.matvec(x);
        x.iter().zip(&ax).map(|(a, b)| a * b).sum()
    }

    fn to_full(&self) -> Vec<f64> {
        let n = self.dim;
        let mut full = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                full[i * n + j] = self.get(i, j);
            }
        }
        full
    }
}

/// Eigendecomposition `A = Q diag(evals) Q'` with eigenvalues sorted ascending
/// and orthonormal eigenvector columns.
#[derive(Debug, Clone)]
pub struct SpectralDecomp {
    pub eigenvalues: Vec<f64>,
    /// Column-major: eigenvector k occupies entries `k*dim .. (k+1)*dim`.
    pub eigenvectors: Vec<f64>,
    dim: usize,
}

impl SpectralDecomp {
    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn vec_entry(&self, row: usize, col: usize) -> f64 {
        self.eigenvectors[col * self.dim + row]
    }

    /// Rebuilds `Q f(lambda) Q'` for a scalar map applied to the spectrum.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.dim;
        let fl: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        SymMatrix::from_fn(n, |i, j| {
            (0..n)
                .map(|k| self.vec_entry(i, k) * fl[k] * self.vec_entry(j, k))
                .sum()
        })
    }

    /// Eigenvalues with small negatives (above `-EPS_PD * lambda_max`) clamped
    /// to zero, for inputs that are PSD up to roundoff.
    pub fn clamped_nonneg_eigenvalues(&self) -> Result<Vec<f64>> {
        let lmax = self
            .eigenvalues
            .iter()
            .fold(0.0f64, |m, &l| m.max(l.abs()));
        let tol = EPS_PD * lmax;
        let mut out = Vec::with_capacity(self.eigenvalues.len());
        for &l in &self.eigenvalues {
            if l < -tol {
                return Err(Error::InvalidMatrix(format!(
                    "eigenvalue {l} below the PSD tolerance -{tol}"
                )));
            }
            if l < 0.0 {
                log::warn!("clamping eigenvalue {l} to 0 (tolerance {tol})");
                out.push(0.0);
            } else {
                out.push(l);
            }
        }
        Ok(out)
    }
}

/// Jacobi eigendecomposition of a symmetric matrix.
///
/// Cyclic sweeps run until the off-diagonal Frobenius mass drops below
/// `1e-14 * ||A||_F`, capped at 100 sweeps. At the dimensions this crate
/// targets the method is both simple and accurate.
pub fn sym_eig(a: &SymMatrix) -> Result<SpectralDecomp> {
    if !a.is_finite() {
        return Err(Error::InvalidMatrix("non-finite entries".into()));
    }
    let n = a.dim();
    let mut m = a.to_full();
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        q[i * n + i] = 1.0;
    }

    let frob = a.frobenius_norm();
    let target = 1e-14 * frob;

    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += 2.0 * m[i * n + j] * m[i * n + j];
            }
        }
        if off.sqrt() <= target {
            break;
        }
        for p in 0..n {
            for r in (p + 1)..n {
                let apr = m[p * n + r];
                if apr == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let arr = m[r * n + r];
                let theta = (arr - app) / (2.0 * apr);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // rows/cols p and r of m
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkr = m[k * n + r];
                    m[k * n + p] = c * mkp - s * mkr;
                    m[k * n + r] = s * mkp + c * mkr;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mrk = m[r * n + k];
                    m[p * n + k] = c * mpk - s * mrk;
                    m[r * n + k] = s * mpk + c * mrk;
                }
                // accumulate rotations
                for k in 0..n {
                    let qkp = q[p * n + k];
                    let qkr = q[r * n + k];
                    q[p * n + k] = c * qkp - s * qkr;
                    q[r * n + k] = s * qkp + c * qkr;
                }
            }
        }
    }

    // m is now (nearly) diagonal; q rows hold the eigenvectors.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i * n + i].partial_cmp(&m[j * n + j]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| m[i * n + i]).collect();
    let mut eigenvectors = vec![0.0; n * n];
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            eigenvectors[col * n + row] = q[src * n + row];
        }
    }
    Ok(SpectralDecomp {
        eigenvalues,
        eigenvectors,
        dim: n,
    })
}

/// Applies a scalar function to the spectrum: `Q f(lambda) Q'`.
///
/// Errors with [`Error::SingularMatrix`] if `f` is not finite at some
/// eigenvalue (e.g. inverting a singular matrix).
pub fn apply_spectral_function(a: &SymMatrix, f: impl Fn(f64) -> f64) -> Result<SymMatrix> {
    let dec = sym_eig(a)?;
    for &l in &dec.eigenvalues {
        if !f(l).is_finite() {
            return Err(Error::SingularMatrix(format!(
                "spectral map undefined at eigenvalue {l}"
            )));
        }
    }
    Ok(dec.map(f))
}

/// PSD square root with roundoff-negative eigenvalues clamped to zero.
pub fn psd_sqrt(a: &SymMatrix) -> Result<SymMatrix> {
    let dec = sym_eig(a)?;
    let evals = dec.clamped_nonneg_eigenvalues()?;
    let mut shifted = dec;
    shifted.eigenvalues = evals;
    Ok(shifted.map(|l| l.sqrt()))
}

/// Inverse square root of a positive-definite matrix.
pub fn pd_inv_sqrt(a: &SymMatrix) -> Result<SymMatrix> {
    let dec = sym_eig(a)?;
    let lmax = dec.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
    for &l in &dec.eigenvalues {
        if l <= EPS_PD * lmax {
            return Err(Error::SingularMatrix(format!(
                "eigenvalue {l} too small for inverse square root"
            )));
        }
    }
    Ok(dec.map(|l| 1.0 / l.sqrt()))
}

/// Solves `a x = b` for positive-definite `a` via the spectral decomposition.
pub fn solve_psd(a: &SymMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let dec = sym_eig(a)?;
    let n = a.dim();
    let lmax = dec.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
    for &l in &dec.eigenvalues {
        if l <= EPS_PD * lmax {
            return Err(Error::SingularMatrix(format!(
                "eigenvalue {l} below eps_pd = {}",
                EPS_PD * lmax
            )));
        }
    }
    // x = Q diag(1/l) Q' b
    let mut coeffs = vec![0.0; n];
    for k in 0..n {
        let mut s = 0.0;
        for i in 0..n {
            s += dec.vec_entry(i, k) * b[i];
        }
        coeffs[k] = s / dec.eigenvalues[k];
    }
    let mut x = vec![0.0; n];
    for i in 0..n {
        for k in 0..n {
            x[i] += dec.vec_entry(i, k) * coeffs[k];
        }
    }
    Ok(x)
}

/// Spectral (operator) norm: the largest absolute eigenvalue.
pub fn operator_norm(a: &SymMatrix) -> Result<f64> {
    let dec = sym_eig(a)?;
    Ok(dec.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l.abs())))
}

pub fn vec_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn vec_sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn vec_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn vec_scale(a: &[f64], c: f64) -> Vec<f64> {
    a.iter().map(|x| x * c).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_sym(dim: usize, rng: &mut impl Rng) -> SymMatrix {
        SymMatrix::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn random_psd(dim: usize, rng: &mut impl Rng) -> SymMatrix {
        let a = random_sym(dim, rng);
        a.sandwich(&SymMatrix::identity(dim))
    }

    #[test]
    fn eig_identity() {
        let dec = sym_eig(&SymMatrix::identity(3)).unwrap();
        for &l in &dec.eigenvalues {
            assert!((l - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn eig_diagonal() {
        let dec = sym_eig(&SymMatrix::from_diag(&[4.0, 1.0])).unwrap();
        assert!((dec.eigenvalues[0] - 1.0).abs() < 1e-14);
        assert!((dec.eigenvalues[1] - 4.0).abs() < 1e-14);
        // axis eigenvectors up to sign
        assert!(dec.vec_entry(1, 0).abs() > 0.999);
        assert!(dec.vec_entry(0, 1).abs() > 0.999);
    }

    #[test]
    fn eig_reconstruction_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_sym(5, &mut rng);
        let dec = sym_eig(&a).unwrap();
        let back = dec.map(|l| l);
        let resid = operator_norm(&a.sub(&back)).unwrap();
        let scale = 1.0 + operator_norm(&a).unwrap();
        assert!(resid <= 1e-10 * scale, "residual {resid}");
        // orthonormality
        let n = a.dim();
        for c1 in 0..n {
            for c2 in 0..n {
                let mut s = 0.0;
                for r in 0..n {
                    s += dec.vec_entry(r, c1) * dec.vec_entry(r, c2);
                }
                let want = if c1 == c2 { 1.0 } else { 0.0 };
                assert!((s - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn spectral_function_inverse_and_sqrt() {
        let inv = apply_spectral_function(&SymMatrix::from_diag(&[2.0, 4.0]), |l| 1.0 / l).unwrap();
        assert!((inv.get(0, 0) - 0.5).abs() < 1e-14);
        assert!((inv.get(1, 1) - 0.25).abs() < 1e-14);

        let s = apply_spectral_function(&SymMatrix::identity(3), f64::sqrt).unwrap();
        assert!(operator_norm(&s.sub(&SymMatrix::identity(3))).unwrap() < 1e-12);
    }

    #[test]
    fn spectral_function_round_trip_on_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_psd(4, &mut rng);
        let sq = apply_spectral_function(&a, |l| l * l).unwrap();
        let back = psd_sqrt(&sq).unwrap();
        assert!(operator_norm(&a.sub(&back)).unwrap() <= 1e-9 * (1.0 + operator_norm(&a).unwrap()));
    }

    #[test]
    fn spectral_function_identity_map_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_sym(6, &mut rng);
        let b = apply_spectral_function(&a, |l| l).unwrap();
        assert!(operator_norm(&a.sub(&b)).unwrap() < 1e-10);
    }

    #[test]
    fn inverse_of_singular_fails() {
        let a = SymMatrix::from_diag(&[1.0, 0.0]);
        assert!(matches!(
            apply_spectral_function(&a, |l| 1.0 / l),
            Err(Error::SingularMatrix(_))
        ));
    }

    #[test]
    fn solve_identity_and_diag() {
        let x = solve_psd(&SymMatrix::identity(2), &[3.0, -1.0]).unwrap();
        assert!((x[0] - 3.0).abs() < 1e-12 && (x[1] + 1.0).abs() < 1e-12);

        let x = solve_psd(&SymMatrix::from_diag(&[2.0, 2.0]), &[2.0, 4.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn solve_residual_random_pd() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut a = random_psd(6, &mut rng);
        for i in 0..6 {
            a.set(i, i, a.get(i, i) + 1.0);
        }
        let b: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x = solve_psd(&a, &b).unwrap();
        let r = vec_sub(&a.matvec(&x), &b);
        assert!(vec_norm(&r) <= 1e-9 * vec_norm(&b));
    }

    #[test]
    fn solve_rejects_singular() {
        let a = SymMatrix::from_diag(&[1.0, 0.0]);
        assert!(matches!(
            solve_psd(&a, &[1.0, 1.0]),
            Err(Error::SingularMatrix(_))
        ));
    }

    #[test]
    fn operator_norm_cases() {
        assert!((operator_norm(&SymMatrix::from_diag(&[-3.0, 2.0])).unwrap() - 3.0).abs() < 1e-14);
        assert!((operator_norm(&SymMatrix::identity(4)).unwrap() - 1.0).abs() < 1e-14);
        // rank one vv' with ||v|| = 2 has operator norm 4
        let v = [2.0f64, 0.0, 0.0];
        let m = SymMatrix::from_fn(3, |i, j| v[i] * v[j]);
        assert!((operator_norm(&m).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_rejected() {
        let mut a = SymMatrix::identity(2);
        a.set(0, 1, f64::NAN);
        assert!(matches!(sym_eig(&a), Err(Error::InvalidMatrix(_))));
    }

    #[test]
    fn psd_clamp_small_negative() {
        // Nominally PSD with a tiny negative eigenvalue from roundoff.
        let a = SymMatrix::from_diag(&[1.0, -1e-16]);
        let dec = sym_eig(&a).unwrap();
        let evals = dec.clamped_nonneg_eigenvalues().unwrap();
        assert_eq!(evals[0], 0.0);
        assert!((evals[1] - 1.0).abs() < 1e-14);
    }
}
