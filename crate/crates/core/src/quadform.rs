//! Deviation quantiles for Gaussian-type quadratic forms and the effective
//! dimension.
//!
//! The normalized score has covariance `B_G = D_G^{-1} V_0^2 D_G^{-1}`; its
//! squared norm concentrates around the effective dimension
//! `p_G = tr(B_G)`, with fluctuations controlled by `v_G^2 = 2 tr(B_G^2)`
//! and `lambda_G = lambda_max(B_G)`.

use crate::numerics::{pd_inv_sqrt, sym_eig, SymMatrix};
use crate::{Error, Result};

/// Bernstein split point of the quantile construction.
pub const MU_C: f64 = 2.0 / 3.0;

/// The matrix `B_G` together with every derived constant the quantile needs.
#[derive(Debug, Clone)]
pub struct QuadFormSpec {
    pub b_matrix: SymMatrix,
    /// Effective dimension `tr(B_G)`.
    pub p_g: f64,
    /// `sqrt(2 tr(B_G^2))`.
    pub v_g: f64,
    /// Largest eigenvalue of `B_G`.
    pub lambda_g: f64,
    /// Sub-exponential threshold (`f64::INFINITY` for the Gaussian case).
    pub g: f64,
    pub mu_c: f64,
    /// `sqrt(g^2 - mu_c p_G)`.
    pub gamma_c: f64,
    /// Crossover exponent: beyond it the tail switches to the linear regime.
    pub x_c: f64,
    /// `sqrt(p_G + 6 lambda_G x_c)`.
    pub y_c: f64,
}

impl QuadFormSpec {
    /// Builds directly from `B_G` (all derived constants recomputed).
    pub fn from_b(b: &SymMatrix, g: f64) -> Result<QuadFormSpec> {
        let dec = sym_eig(b)?;
        let evals = dec.clamped_nonneg_eigenvalues()?;
        let p_g: f64 = evals.iter().sum();
        let v_g = (2.0 * evals.iter().map(|l| l * l).sum::<f64>()).sqrt();
        let lambda_g = evals.iter().fold(0.0f64, |m, &l| m.max(l));
        if !(g > 0.0) {
            return Err(Error::InvalidInput(format!("g = {g} must be positive")));
        }

        let (gamma_c, x_c, y_c);
        if g.is_infinite() {
            gamma_c = f64::INFINITY;
            x_c = f64::INFINITY;
            y_c = f64::INFINITY;
        } else {
            if g * g < 2.0 * p_g {
                return Err(Error::GConstraintViolated(format!(
                    "g^2 = {} < 2 p_G = {}",
                    g * g,
                    2.0 * p_g
                )));
            }
            let mut logdet = 0.0;
            for &l in &evals {
                let term = 1.0 - MU_C * l * l;
                if term <= 0.0 {
                    return Err(Error::GConstraintViolated(format!(
                        "mu_c * lambda^2 = {} >= 1; crossover exponent undefined",
                        MU_C * l * l
                    )));
                }
                logdet += term.ln();
            }
            gamma_c = (g * g - MU_C * p_g).sqrt();
            x_c = (g * g / MU_C - p_g + logdet) / 2.0;
            y_c = (p_g + 6.0 * lambda_g * x_c).sqrt();
        }

        Ok(QuadFormSpec {
            b_matrix: b.clone(),
            p_g,
            v_g,
            lambda_g,
            g,
            mu_c: MU_C,
            gamma_c,
            x_c,
            y_c,
        })
    }
}

/// Assembles `B_G = D_G^{-1} V_0^2 D_G^{-1}` from the squared matrices and
/// derives all quantile constants. Finite `g` must satisfy `g^2 >= 2 p_G`.
pub fn build_quadform(d_g_sq: &SymMatrix, v0_sq: &SymMatrix, g: f64) -> Result<QuadFormSpec> {
    let dg_inv = pd_inv_sqrt(d_g_sq)?;
    let b = dg_inv.sandwich(v0_sq);
    QuadFormSpec::from_b(&b, g)
}

/// Which quantile expression to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantileMode {
    /// Three regimes: sub-Gaussian, Poissonian, linear beyond `x_c`.
    Full,
    /// The single Poissonian expression `sqrt(p_G + 6 x lambda_G)`.
    Simple,
}

/// Quantile `z_G(x)` of the norm `||xi||`: exceeded with probability at most
/// [`quad_tail_bound`].
pub fn quad_quantile(spec: &QuadFormSpec, x: f64, mode: QuantileMode) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::OutOfValidRange(format!("x = {x} must be positive")));
    }
    match mode {
        QuantileMode::Simple => Ok((spec.p_g + 6.0 * x * spec.lambda_g).sqrt()),
        QuantileMode::Full => {
            if spec.lambda_g > 0.0 && x <= spec.v_g / (18.0 * spec.lambda_g) {
                Ok((spec.p_g + 2.0 * spec.v_g * x.sqrt()).sqrt())
            } else if x <= spec.x_c {
                Ok((spec.p_g + 6.0 * spec.lambda_g * x).sqrt())
            } else {
                Ok(spec.y_c + 2.0 * (x - spec.x_c) / spec.gamma_c)
            }
        }
    }
}

/// Tail probability bound `2 e^{-x} + 8.4 e^{-x_c}` matching
/// [`quad_quantile`]; the second term vanishes for `g = infinity`.
pub fn quad_tail_bound(spec: &QuadFormSpec, x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::OutOfValidRange(format!("x = {x} must be positive")));
    }
    let extra = if spec.x_c.is_finite() {
        8.4 * (-spec.x_c).exp()
    } else {
        0.0
    };
    Ok(2.0 * (-x).exp() + extra)
}

/// Effective dimension `tr(D_G^{-1} V_0^2 D_G^{-1})` with
/// `D_G^2 = D_0^2 + G^2`.
pub fn effective_dimension(
    d0_sq: &SymMatrix,
    g_sq: &SymMatrix,
    v0_sq: &SymMatrix,
) -> Result<f64> {
    let d_g_sq = d0_sq.add(g_sq);
    let dg_inv = pd_inv_sqrt(&d_g_sq)?;
    Ok(dg_inv.sandwich(v0_sq).trace())
}

/// Effective dimension of a block design: `p0` unpenalized directions plus
/// `p1` directions with uniform penalty `g` and noise scale `sigma`.
pub fn effdim_block(p0: u32, p1: u32, g: f64, sigma: f64) -> f64 {
    assert!(sigma > 0.0);
    p0 as f64 + p1 as f64 / (1.0 + g * g / (sigma * sigma))
}

/// Effective dimension under a Sobolev-type penalty `g_j = L j^beta`:
/// the partial sum of `1 / (1 + L^2 j^{2 beta} / sigma^2)`.
pub fn effdim_sobolev(p: u32, l: f64, beta: f64, sigma: f64) -> Result<f64> {
    if !(beta > 0.5) {
        return Err(Error::InvalidSmoothness(format!(
            "beta = {beta} must exceed 1/2"
        )));
    }
    if !(sigma > 0.0) || !(l > 0.0) {
        return Err(Error::InvalidInput("need L > 0 and sigma > 0".into()));
    }
    Ok((1..=p)
        .map(|j| {
            let jf = j as f64;
            1.0 / (1.0 + l * l * jf.powf(2.0 * beta) / (sigma * sigma))
        })
        .sum())
}

/// Effective dimension of a diagonal inverse problem:
/// `sum_j v_j^2 / (d^2 + g_j^2 + v_j^2)`.
pub fn effdim_inverse(v: &[f64], d: f64, g: &[f64]) -> Result<f64> {
    if v.len() != g.len() {
        return Err(Error::InvalidInput(format!(
            "sequence lengths differ: {} vs {}",
            v.len(),
            g.len()
        )));
    }
    Ok(v.iter()
        .zip(g)
        .map(|(&vj, &gj)| vj * vj / (d * d + gj * gj + vj * vj))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::operator_norm;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_psd(dim: usize, rng: &mut impl Rng) -> SymMatrix {
        let a = SymMatrix::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
        a.sandwich(&SymMatrix::identity(dim))
    }

    #[test]
    fn build_scalar_case() {
        let two_i = SymMatrix::from_diag(&[2.0, 2.0]);
        let spec = build_quadform(&two_i, &two_i, 10.0).unwrap();
        // B_G = D_G^{-1} V_0^2 D_G^{-1} = I_2
        assert!((spec.p_g - 2.0).abs() < 1e-12);
        assert!((spec.lambda_g - 1.0).abs() < 1e-12);
        assert!((spec.v_g * spec.v_g - 4.0).abs() < 1e-12);
    }

    #[test]
    fn build_identity_crossover() {
        let spec = QuadFormSpec::from_b(&SymMatrix::identity(2), 10.0).unwrap();
        let want_xc = (150.0 - 2.0 + 2.0 * (1.0f64 / 3.0).ln()) / 2.0;
        assert!((spec.x_c - want_xc).abs() < 1e-10);
        assert!((spec.x_c - 72.9014).abs() < 1e-4);
        assert!((spec.gamma_c - (100.0f64 - 4.0 / 3.0).sqrt()).abs() < 1e-12);
        assert!((spec.gamma_c - 9.93311).abs() < 1e-5);
        assert!((spec.y_c - (2.0 + 6.0 * spec.x_c).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn build_trace_linearity() {
        let d = SymMatrix::from_diag(&[2.0, 3.0]);
        let v = SymMatrix::from_diag(&[1.0, 1.5]);
        let a = build_quadform(&d, &v, f64::INFINITY).unwrap();
        let b = build_quadform(&d, &v.scale(2.0), f64::INFINITY).unwrap();
        assert!((b.p_g - 2.0 * a.p_g).abs() < 1e-10);
    }

    #[test]
    fn build_rejects_small_g() {
        // p_G = 2 needs g^2 >= 4
        assert!(matches!(
            QuadFormSpec::from_b(&SymMatrix::identity(2), 1.5),
            Err(Error::GConstraintViolated(_))
        ));
    }

    #[test]
    fn build_invariants_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let dim = rng.gen_range(1..=6);
            let b = random_psd(dim, &mut rng);
            let spec = QuadFormSpec::from_b(&b, f64::INFINITY).unwrap();
            assert!((spec.p_g - b.trace()).abs() <= 1e-10 * (1.0 + b.trace().abs()));
            let tr_b2 = b.sandwich(&SymMatrix::identity(dim)).trace();
            assert!(
                (spec.v_g * spec.v_g - 2.0 * tr_b2).abs() <= 1e-8 * (1.0 + tr_b2)
            );
            let lam = operator_norm(&b).unwrap();
            assert!((spec.lambda_g - lam).abs() <= 1e-10 * (1.0 + lam));
            assert!(spec.lambda_g <= spec.p_g + 1e-10);
            assert!(spec.p_g <= dim as f64 * spec.lambda_g + 1e-10);
            assert!(spec.v_g * spec.v_g <= 2.0 * spec.p_g * spec.lambda_g + 1e-8);
        }
    }

    #[test]
    fn quantile_regimes_identity() {
        let spec = QuadFormSpec::from_b(&SymMatrix::identity(2), 10.0).unwrap();
        // sub-Gaussian: x = 0.05 <= v/(18 lambda) = sqrt(2)*... here v = 2, bound 1/9
        let z = quad_quantile(&spec, 0.05, QuantileMode::Full).unwrap();
        assert!((z * z - (2.0 + 4.0 * 0.05f64.sqrt())).abs() < 1e-10);
        // Poissonian: x = 1
        let z = quad_quantile(&spec, 1.0, QuantileMode::Full).unwrap();
        assert!((z * z - 8.0).abs() < 1e-10);
        // beyond x_c
        let z = quad_quantile(&spec, spec.x_c + 1.0, QuantileMode::Full).unwrap();
        assert!((z - (spec.y_c + 2.0 / spec.gamma_c)).abs() < 1e-10);
        // simple mode
        let z = quad_quantile(&spec, 1.0, QuantileMode::Simple).unwrap();
        assert!((z * z - 8.0).abs() < 1e-10);
    }

    #[test]
    fn quantile_never_below_sqrt_pg() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = QuadFormSpec::from_b(&SymMatrix::from_diag(&[1.0, 0.5, 0.25]), 10.0).unwrap();
        for _ in 0..200 {
            let x: f64 = rng.gen_range(0.01..200.0);
            let z = quad_quantile(&spec, x, QuantileMode::Full).unwrap();
            assert!(z >= spec.p_g.sqrt() - 1e-12);
        }
    }

    #[test]
    fn quantile_monotone_within_regimes() {
        let spec = QuadFormSpec::from_b(&SymMatrix::identity(2), 10.0).unwrap();
        let sub = spec.v_g / (18.0 * spec.lambda_g);
        let grid = |a: f64, b: f64| (0..50).map(move |i| a + (b - a) * i as f64 / 49.0);
        for (lo, hi) in [(1e-3, sub), (sub + 1e-9, spec.x_c), (spec.x_c + 1e-9, spec.x_c + 50.0)] {
            let mut prev = f64::NEG_INFINITY;
            for x in grid(lo, hi) {
                let z = quad_quantile(&spec, x, QuantileMode::Full).unwrap();
                assert!(z >= prev - 1e-12);
                prev = z;
            }
        }
    }

    #[test]
    fn tail_bound_values() {
        let spec = QuadFormSpec::from_b(&SymMatrix::identity(2), 10.0).unwrap();
        let b = quad_tail_bound(&spec, 1.0).unwrap();
        assert!((b - 2.0 * (-1.0f64).exp()).abs() < 1e-10);
        let at_xc = quad_tail_bound(&spec, spec.x_c).unwrap();
        assert!((at_xc - 10.4 * (-spec.x_c).exp()).abs() < 1e-15);
        assert!(quad_tail_bound(&spec, 2.0).unwrap() < b);

        let inf_spec = QuadFormSpec::from_b(&SymMatrix::identity(2), f64::INFINITY).unwrap();
        assert!((quad_tail_bound(&inf_spec, 1.0).unwrap() - 2.0 * (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn effdim_identity_case() {
        let d0 = SymMatrix::from_diag(&[2.0, 3.0, 4.0]);
        let g0 = SymMatrix::zeros(3);
        let p = effective_dimension(&d0, &g0, &d0).unwrap();
        assert!((p - 3.0).abs() < 1e-10);
    }

    #[test]
    fn effdim_block_matches_assembled() {
        // block case: p0 = 2 free directions, p1 = 10 penalized at g = 3, sigma = 1
        let closed = effdim_block(2, 10, 3.0, 1.0);
        assert!((closed - 3.0).abs() < 1e-12);
        let dim = 12;
        let d0 = SymMatrix::identity(dim);
        let g_sq = SymMatrix::from_fn(dim, |i, j| {
            if i == j && i >= 2 {
                9.0
            } else {
                0.0
            }
        });
        let assembled = effective_dimension(&d0, &g_sq, &d0).unwrap();
        assert!((assembled - closed).abs() < 1e-10);
        assert!((effdim_block(2, 10, 0.0, 1.0) - 12.0).abs() < 1e-12);
        assert!(effdim_block(2, 10, 1e9, 1.0) - 2.0 < 1e-10);
    }

    #[test]
    fn effdim_sobolev_example() {
        let p = effdim_sobolev(10, 1.0, 1.0, 1.0).unwrap();
        let direct: f64 = (1..=10).map(|j| 1.0 / (1.0 + (j * j) as f64)).sum();
        assert!((p - direct).abs() < 1e-14);
        assert!((p - 0.981793).abs() < 1e-6);
        assert!(effdim_sobolev(10, 1e9, 1.0, 1.0).unwrap() < 1e-10);
        assert!(matches!(
            effdim_sobolev(10, 1.0, 0.4, 1.0),
            Err(Error::InvalidSmoothness(_))
        ));
    }

    #[test]
    fn effdim_sobolev_matches_assembled() {
        let p = 10usize;
        let d0 = SymMatrix::identity(p);
        let g_sq = SymMatrix::from_fn(p, |i, j| {
            if i == j {
                let jf = (i + 1) as f64;
                jf * jf // (L j^beta)^2 with L = beta = 1
            } else {
                0.0
            }
        });
        let assembled = effective_dimension(&d0, &g_sq, &d0).unwrap();
        let closed = effdim_sobolev(10, 1.0, 1.0, 1.0).unwrap();
        assert!((assembled - closed).abs() < 1e-10);
    }

    #[test]
    fn effdim_inverse_cases() {
        let p = effdim_inverse(&[1.0, 2.0, 3.0], 1.0, &[0.0, 0.0, 0.0]).unwrap();
        assert!((p - 2.2).abs() < 1e-12);
        let v = [1.0, 2.0, 3.0];
        let p = effdim_inverse(&v, 0.0, &v).unwrap();
        assert!((p - 1.5).abs() < 1e-12);
        // each summand < 1
        assert!(effdim_inverse(&v, 1.0, &[0.0; 3]).unwrap() < 3.0);
        assert!(matches!(
            effdim_inverse(&[1.0], 1.0, &[1.0, 2.0]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn effdim_inverse_matches_assembled() {
        let v = [1.0, 2.0, 3.0];
        let g = [0.5, 1.0, 2.0];
        let d = 1.3;
        // D_0^2 = diag(d^2 + v_j^2), G^2 = diag(g_j^2), V_0^2 = diag(v_j^2)
        let d0 = SymMatrix::from_diag(&v.map(|vj| d * d + vj * vj));
        let g_sq = SymMatrix::from_diag(&g.map(|gj| gj * gj));
        let v0 = SymMatrix::from_diag(&v.map(|vj| vj * vj));
        let assembled = effective_dimension(&d0, &g_sq, &v0).unwrap();
        let closed = effdim_inverse(&v, d, &g).unwrap();
        assert!((assembled - closed).abs() < 1e-10);
    }

    #[test]
    fn effdim_monotone_in_penalty() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let dim = rng.gen_range(2..=5);
            let mut d0 = random_psd(dim, &mut rng);
            for i in 0..dim {
                d0.set(i, i, d0.get(i, i) + 1.0);
            }
            let v0 = random_psd(dim, &mut rng);
            let g1 = random_psd(dim, &mut rng);
            let extra = random_psd(dim, &mut rng);
            let g2 = g1.add(&extra);
            let p1 = effective_dimension(&d0, &g1, &v0).unwrap();
            let p2 = effective_dimension(&d0, &g2, &v0).unwrap();
            assert!(p2 <= p1 + 1e-9, "enlarging the penalty raised p_G: {p1} -> {p2}");
        }
    }
}
