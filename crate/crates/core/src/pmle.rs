//! Penalized maximum likelihood: the solver, population targets, score
//! vectors, finite-sample expansion residuals, sampled condition
//! diagnostics, and the quadratic-risk decomposition.
//!
//! The penalized objective is `L_G(theta) = L(theta) - ||G theta||^2 / 2`.
//! Its maximizer `theta~_G` is compared against the population target
//! `theta*_G` (maximizer of the expected penalized objective) through the
//! normalized score `xi_G = D_G^{-1} grad L_G(theta*_G)` and the residuals
//! of the Fisher and Wilks expansions.

use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::bounds::{zz_quantile, EntropyBudget, QuantileRule, TailParams};
use crate::models::{
    expected_grad, expected_hessian, expected_loglik, grad, hessian, loglik, Dataset, ModelSpec,
};
use crate::numerics::{
    dot, pd_inv_sqrt, psd_sqrt, solve_psd, sym_eig, vec_norm, vec_scale, vec_sub, SymMatrix,
};
use crate::quadform::{quad_quantile, QuadFormSpec, QuantileMode};
use crate::{Error, Result};

/// Quadratic penalty `||G theta||^2 / 2`, stored as `G^2`.
#[derive(Debug, Clone)]
pub struct PenaltySpec {
    pub g_sq: SymMatrix,
}

impl PenaltySpec {
    pub fn new(g_sq: SymMatrix) -> Result<Self> {
        let dec = sym_eig(&g_sq)?;
        dec.clamped_nonneg_eigenvalues()
            .map_err(|_| Error::InvalidSpec("penalty G^2 must be PSD".into()))?;
        Ok(PenaltySpec { g_sq })
    }

    pub fn none(dim: usize) -> Self {
        PenaltySpec {
            g_sq: SymMatrix::zeros(dim),
        }
    }

    /// Ridge penalty `G^2 = tau I`.
    pub fn ridge(dim: usize, tau: f64) -> Self {
        PenaltySpec {
            g_sq: SymMatrix::identity(dim).scale(tau),
        }
    }

    fn quad(&self, theta: &[f64]) -> f64 {
        self.g_sq.quad_form(theta) / 2.0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub tol_grad: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tol_grad: 1e-9,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub theta_hat: Vec<f64>,
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub converged: bool,
}

/// Damped Newton ascent with a Levenberg shift for near-singular curvature.
fn newton_maximize(
    dim: usize,
    f: &dyn Fn(&[f64]) -> Result<f64>,
    g: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    neg_hess: &dyn Fn(&[f64]) -> Result<SymMatrix>,
    opts: FitOptions,
) -> Result<FitResult> {
    let mut theta = vec![0.0; dim];
    let mut fval = f(&theta)?;
    let mut grad_norm = f64::INFINITY;
    for iter in 0..opts.max_iter {
        let gv = g(&theta)?;
        grad_norm = vec_norm(&gv);
        if grad_norm <= opts.tol_grad {
            return Ok(FitResult {
                theta_hat: theta,
                iterations: iter,
                final_grad_norm: grad_norm,
                converged: true,
            });
        }
        let h = neg_hess(&theta)?;
        // Levenberg: shift the curvature until the step solves and ascends.
        let scale = 1.0 + h.trace().abs() / dim as f64;
        let mut shift = 0.0;
        let mut direction = None;
        for _ in 0..40 {
            let shifted = if shift == 0.0 {
                h.clone()
            } else {
                h.add(&SymMatrix::identity(dim).scale(shift))
            };
            match solve_psd(&shifted, &gv) {
                Ok(d) if dot(&d, &gv) > 0.0 => {
                    direction = Some(d);
                    break;
                }
                _ => {
                    shift = if shift == 0.0 { 1e-10 * scale } else { shift * 10.0 };
                }
            }
        }
        let d = direction.ok_or_else(|| {
            Error::NotConverged("Levenberg shift exhausted without an ascent direction".into())
        })?;
        // step-halving line search
        let mut t = 1.0;
        let mut advanced = false;
        while t > 1e-14 {
            let cand: Vec<f64> = theta.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            match f(&cand) {
                Ok(fc) if fc >= fval - 1e-12 * (1.0 + fval.abs()) && fc.is_finite() => {
                    theta = cand;
                    fval = fc;
                    advanced = true;
                    break;
                }
                _ => t /= 2.0,
            }
        }
        if !advanced {
            break;
        }
    }
    let final_grad = g(&theta).map(|gv| vec_norm(&gv)).unwrap_or(grad_norm);
    Ok(FitResult {
        theta_hat: theta,
        iterations: opts.max_iter,
        final_grad_norm: final_grad,
        converged: final_grad <= opts.tol_grad,
    })
}

/// Maximizes the penalized sample likelihood `L(theta) - ||G theta||^2/2`.
pub fn fit_pmle(
    spec: &ModelSpec,
    data: &Dataset,
    penalty: &PenaltySpec,
    opts: FitOptions,
) -> Result<FitResult> {
    let p = spec.p();
    newton_maximize(
        p,
        &|t| Ok(loglik(spec, data, t)? - penalty.quad(t)),
        &|t| {
            let mut gv = grad(spec, data, t)?;
            let pen = penalty.g_sq.matvec(t);
            for (a, b) in gv.iter_mut().zip(&pen) {
                *a -= b;
            }
            Ok(gv)
        },
        &|t| Ok(hessian(spec, data, t)?.scale(-1.0).add(&penalty.g_sq)),
        opts,
    )
}

/// Maximizes the expected penalized likelihood; the population target
/// `theta*_G`.
pub fn population_target(
    spec: &ModelSpec,
    penalty: &PenaltySpec,
    opts: FitOptions,
) -> Result<Vec<f64>> {
    let p = spec.p();
    let fit = newton_maximize(
        p,
        &|t| Ok(expected_loglik(spec, t)? - penalty.quad(t)),
        &|t| {
            let mut gv = expected_grad(spec, t)?;
            let pen = penalty.g_sq.matvec(t);
            for (a, b) in gv.iter_mut().zip(&pen) {
                *a -= b;
            }
            Ok(gv)
        },
        &|t| Ok(expected_hessian(spec, t)?.scale(-1.0).add(&penalty.g_sq)),
        opts,
    )?;
    if !fit.converged {
        return Err(Error::NotConverged(format!(
            "population target: gradient norm {} after {} iterations",
            fit.final_grad_norm, fit.iterations
        )));
    }
    Ok(fit.theta_hat)
}

/// `D_G^2 = D_0^2(theta*_G) + G^2`, the penalized curvature at the target.
pub fn penalized_curvature(
    spec: &ModelSpec,
    theta_star_g: &[f64],
    penalty: &PenaltySpec,
) -> Result<SymMatrix> {
    Ok(expected_hessian(spec, theta_star_g)?
        .scale(-1.0)
        .add(&penalty.g_sq))
}

/// Normalized score `xi_G = D_G^{-1} (grad L(theta*_G) - G^2 theta*_G)`.
pub fn score_xi(
    spec: &ModelSpec,
    data: &Dataset,
    theta_star_g: &[f64],
    penalty: &PenaltySpec,
) -> Result<Vec<f64>> {
    let d_g_sq = penalized_curvature(spec, theta_star_g, penalty)?;
    let d_g_inv = pd_inv_sqrt(&d_g_sq)?;
    let mut s = grad(spec, data, theta_star_g)?;
    let pen = penalty.g_sq.matvec(theta_star_g);
    for (a, b) in s.iter_mut().zip(&pen) {
        *a -= b;
    }
    Ok(d_g_inv.matvec(&s))
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpansionDiagnostics {
    pub xi_g: Vec<f64>,
    /// `||D_G (theta~_G - theta*_G) - xi_G||`.
    pub fisher_residual: f64,
    /// `|2 (L_G(theta~_G) - L_G(theta*_G)) - ||xi_G||^2|`.
    pub wilks_residual: f64,
    /// `|sqrt(2 excess) - ||xi_G|||`.
    pub sqrt_wilks_residual: f64,
    /// `L_G(theta~_G) - L_G(theta*_G)`; nonnegative for a converged fit.
    pub excess: f64,
    pub xi_norm: f64,
}

/// Fits the model, computes the score at the population target, and returns
/// the residuals of the Fisher and Wilks expansions.
pub fn expansion_diagnostics(
    spec: &ModelSpec,
    data: &Dataset,
    penalty: &PenaltySpec,
    opts: FitOptions,
) -> Result<ExpansionDiagnostics> {
    let target = population_target(spec, penalty, opts)?;
    let fit = fit_pmle(spec, data, penalty, opts)?;
    if !fit.converged {
        return Err(Error::NotConverged(format!(
            "fit: gradient norm {}",
            fit.final_grad_norm
        )));
    }
    diagnostics_at(spec, data, penalty, &fit.theta_hat, &target)
}

/// Expansion residuals for an already-computed fit and target.
pub fn diagnostics_at(
    spec: &ModelSpec,
    data: &Dataset,
    penalty: &PenaltySpec,
    theta_hat: &[f64],
    theta_star_g: &[f64],
) -> Result<ExpansionDiagnostics> {
    let l_hat = loglik(spec, data, theta_hat)? - penalty.quad(theta_hat);
    let l_star = loglik(spec, data, theta_star_g)? - penalty.quad(theta_star_g);
    let excess = l_hat - l_star;
    if excess < -1e-9 {
        return Err(Error::SolverInconsistency(format!(
            "maximizer below the population target by {excess}"
        )));
    }
    let xi = score_xi(spec, data, theta_star_g, penalty)?;
    let xi_norm = vec_norm(&xi);
    let d_g_sq = penalized_curvature(spec, theta_star_g, penalty)?;
    let d_g = psd_sqrt(&d_g_sq)?;
    let step = d_g.matvec(&vec_sub(theta_hat, theta_star_g));
    let fisher_residual = vec_norm(&vec_sub(&step, &xi));
    let two_excess = (2.0 * excess).max(0.0);
    let wilks_residual = (two_excess - xi_norm * xi_norm).abs();
    let sqrt_wilks_residual = (two_excess.sqrt() - xi_norm).abs();
    Ok(ExpansionDiagnostics {
        xi_g: xi,
        fisher_residual,
        wilks_residual,
        sqrt_wilks_residual,
        excess,
        xi_norm,
    })
}

/// The constants entering the error terms of the expansions.
///
/// `delta_r` and `b_r` are maps `r -> delta_G(r)` and `r -> b_G(r)` (the
/// local smoothness and identifiability profiles); `q_budget` is the entropy
/// budget `(2 Q1(S), 2 Q2(S))` of the Hessian-noise shape matrix, used
/// wherever the quantile `q_Q` appears with a shifted argument.
pub struct BoundParams {
    pub delta_r: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub b_r: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub nu0: f64,
    pub g: f64,
    pub omega: f64,
    /// Scale constant `a_G` normalizing the Hessian-noise envelope.
    pub a_g: f64,
    /// Largest eigenvalue of `D_G^{-1} V^2 D_G^{-1}`.
    pub lambda_gp: f64,
    pub q_budget: EntropyBudget,
}

impl BoundParams {
    /// Constant-profile convenience constructor.
    pub fn with_constants(
        delta: f64,
        b: f64,
        nu0: f64,
        g: f64,
        omega: f64,
        a_g: f64,
        lambda_gp: f64,
        q_budget: EntropyBudget,
    ) -> Self {
        BoundParams {
            delta_r: Box::new(move |_| delta),
            b_r: Box::new(move |_| b),
            nu0,
            g,
            omega,
            a_g,
            lambda_gp,
            q_budget,
        }
    }

    fn tail(&self) -> Result<TailParams> {
        TailParams::new(self.nu0, self.g)
    }

    /// `q_Q(x)` evaluated on the stored budget; arguments below 1/2 (possible
    /// with shifted exponents) are clamped to the valid range.
    fn q_q(&self, x: f64) -> Result<f64> {
        zz_quantile(x.max(0.5), self.q_budget, self.tail()?, QuantileRule::Auto)
    }
}

/// The Fisher-expansion error term
/// `diamond_G(x) = {delta_G(r_G) + 6 nu0 a_G q_Q(x) omega} r_G`, with
/// `q_Q` built from doubled penalized-entropy constants of `s_matrix`.
pub fn diamond(x: f64, bp: &BoundParams, r_g: f64, s_matrix: &SymMatrix) -> Result<f64> {
    let es = crate::bounds::penalized_entropy(s_matrix)?;
    let budget = EntropyBudget {
        q1: 2.0 * es.q1,
        q2: 2.0 * es.q2,
    };
    let q_q = zz_quantile(x, budget, bp.tail()?, QuantileRule::Auto)?;
    let delta = (bp.delta_r)(r_g);
    Ok((delta + 6.0 * bp.nu0 * bp.a_g * q_q * bp.omega) * r_g)
}

/// Smallest concentration radius `r_G` satisfying
/// `b_G(r) r >= 2 {z_G(x) + rho_G(r, x)}` for all larger radii, where
/// `rho_G(r, x) = 6 nu0 a_G q_Q(x + log(2r/r_G)) omega`. The self-reference
/// through `r_G` is resolved by fixed-point iteration; the search runs on a
/// geometric grid with ratio 1.05 from the floor `2 z_G(x)` up to `1e6`.
pub fn solve_r_g(x: f64, bp: &BoundParams, qf: &QuadFormSpec) -> Result<f64> {
    let z = quad_quantile(qf, x, QuantileMode::Full)?;
    let floor = 2.0 * z;
    let grid: Vec<f64> = {
        let mut g = vec![floor];
        while *g.last().unwrap() < 1e6 {
            g.push(g.last().unwrap() * 1.05);
        }
        g
    };
    let candidate = |r_g_cur: f64| -> Result<Option<f64>> {
        // find the smallest grid point from which the inequality holds on
        // the whole remaining grid
        let mut ok_from = None;
        for (i, &r) in grid.iter().enumerate() {
            let rho = 6.0 * bp.nu0 * bp.a_g * bp.q_q(x + (2.0 * r / r_g_cur).ln())? * bp.omega;
            let ok = (bp.b_r)(r) * r >= 2.0 * (z + rho);
            if ok {
                if ok_from.is_none() {
                    ok_from = Some(i);
                }
            } else {
                ok_from = None;
            }
        }
        Ok(ok_from.map(|i| grid[i]))
    };
    let mut r_g = floor;
    for _ in 0..10 {
        let next = candidate(r_g)?.ok_or_else(|| {
            Error::NoConcentrationRadius(format!(
                "no radius up to 1e6 satisfies the drift condition at x = {x}"
            ))
        })?;
        if (next - r_g).abs() <= 1e-6 * r_g {
            return Ok(next.max(floor));
        }
        if next < r_g {
            // The candidate radius is nonincreasing in the current radius,
            // so the iteration can only cycle between neighboring grid
            // points from here. Keep the larger radius: its drift
            // inequality was verified with the more conservative shift.
            return Ok(r_g);
        }
        r_g = next;
    }
    Err(Error::NotConverged(
        "concentration-radius fixed point did not settle in 10 iterations".into(),
    ))
}

/// Points on the sphere of radius `r` in the `D_G` metric around `center`.
fn sample_dg_sphere(
    center: &[f64],
    d_g_inv: &SymMatrix,
    r: f64,
    nsamples: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let p = center.len();
    (0..nsamples)
        .map(|_| {
            let u: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
            let un = vec_norm(&u).max(1e-300);
            let dir = d_g_inv.matvec(&vec_scale(&u, 1.0 / un));
            center.iter().zip(&dir).map(|(c, d)| c + r * d).collect()
        })
        .collect()
}

/// Sampled lower estimate of the smoothness profile `delta_G(r)`: the
/// largest `||D_G^{-1} D_G^2(theta) D_G^{-1} - I||` over points at
/// `D_G`-distance `r` from the target.
pub fn estimate_delta_l0g(
    spec: &ModelSpec,
    penalty: &PenaltySpec,
    r: f64,
    nsamples: usize,
    seed: u64,
) -> Result<f64> {
    let target = population_target(spec, penalty, FitOptions::default())?;
    estimate_delta_l0g_at(spec, penalty, &target, r, nsamples, seed)
}

/// As [`estimate_delta_l0g`], with the population target precomputed.
pub fn estimate_delta_l0g_at(
    spec: &ModelSpec,
    penalty: &PenaltySpec,
    target: &[f64],
    r: f64,
    nsamples: usize,
    seed: u64,
) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::InvalidInput(format!("r = {r} must be positive")));
    }
    let d_g_sq = penalized_curvature(spec, target, penalty)?;
    let d_g_inv = pd_inv_sqrt(&d_g_sq)?;
    let mut worst = 0.0f64;
    for theta in sample_dg_sphere(target, &d_g_inv, r, nsamples, seed) {
        let local = penalized_curvature(spec, &theta, penalty)?;
        let normalized = d_g_inv.sandwich(&local);
        let dev = crate::numerics::operator_norm(
            &normalized.sub(&SymMatrix::identity(spec.p())),
        )?;
        worst = worst.max(dev);
    }
    Ok(worst)
}

/// Sampled estimate of the identifiability profile `b_G(r)`: the smallest
/// normalized expected penalized-likelihood drop over points at
/// `D_G`-distance `r`.
pub fn estimate_b_llg(
    spec: &ModelSpec,
    penalty: &PenaltySpec,
    r: f64,
    nsamples: usize,
    seed: u64,
) -> Result<f64> {
    let target = population_target(spec, penalty, FitOptions::default())?;
    estimate_b_llg_at(spec, penalty, &target, r, nsamples, seed)
}

/// As [`estimate_b_llg`], with the population target precomputed.
pub fn estimate_b_llg_at(
    spec: &ModelSpec,
    penalty: &PenaltySpec,
    target: &[f64],
    r: f64,
    nsamples: usize,
    seed: u64,
) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::InvalidInput(format!("r = {r} must be positive")));
    }
    let d_g_sq = penalized_curvature(spec, target, penalty)?;
    let d_g_inv = pd_inv_sqrt(&d_g_sq)?;
    let e_at_target = expected_loglik(spec, target)? - penalty.quad(target);
    let mut best = f64::INFINITY;
    for theta in sample_dg_sphere(target, &d_g_inv, r, nsamples, seed) {
        let e_at = expected_loglik(spec, &theta)? - penalty.quad(&theta);
        best = best.min(-2.0 * (e_at - e_at_target) / (r * r));
    }
    Ok(best)
}

/// Sampled supremum of the linearization error
/// `||D_G^{-1} {grad L_G(theta) - grad L_G(theta*_G)} + D_G (theta - theta*_G)||`
/// over the `D_G`-ball of radius `r`.
pub fn linear_approx_error(
    spec: &ModelSpec,
    data: &Dataset,
    penalty: &PenaltySpec,
    r: f64,
    nsamples: usize,
    seed: u64,
) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::InvalidInput(format!("r = {r} must be positive")));
    }
    let target = population_target(spec, penalty, FitOptions::default())?;
    let d_g_sq = penalized_curvature(spec, &target, penalty)?;
    let d_g = psd_sqrt(&d_g_sq)?;
    let d_g_inv = pd_inv_sqrt(&d_g_sq)?;
    let pen_grad = |theta: &[f64]| -> Result<Vec<f64>> {
        let mut gv = grad(spec, data, theta)?;
        let pen = penalty.g_sq.matvec(theta);
        for (a, b) in gv.iter_mut().zip(&pen) {
            *a -= b;
        }
        Ok(gv)
    };
    let grad0 = pen_grad(&target)?;
    let mut worst = 0.0f64;
    // boundary plus interior radii; the supremum typically sits near r
    for (chunk, frac) in [(0.7, 1.0), (0.3, 0.5)] {
        let count = (nsamples as f64 * chunk).ceil() as usize;
        for theta in sample_dg_sphere(&target, &d_g_inv, r * frac, count, seed ^ frac.to_bits()) {
            let diff = vec_sub(&pen_grad(&theta)?, &grad0);
            let chi = crate::numerics::vec_add(
                &d_g_inv.matvec(&diff),
                &d_g.matvec(&vec_sub(&theta, &target)),
            );
            worst = worst.max(vec_norm(&chi));
        }
    }
    Ok(worst)
}

/// Output of [`quad_approx_error`].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct QuadApproxError {
    /// Sup of `|alpha(theta, theta0)| / ||D_G (theta - theta0)||`.
    pub sup_normalized: f64,
    /// Sup of `|alpha(theta, theta0)|`.
    pub sup_absolute: f64,
}

/// Sampled suprema of the second-order Taylor error
/// `alpha(theta, theta0) = L_G(theta) - L_G(theta0)
///  - (theta - theta0)' grad L_G(theta0) + ||D_G (theta - theta0)||^2 / 2`
/// over pairs of points in the `D_G`-ball of radius `r`.
pub fn quad_approx_error(
    spec: &ModelSpec,
    data: &Dataset,
    penalty: &PenaltySpec,
    r: f64,
    nsamples: usize,
    seed: u64,
) -> Result<QuadApproxError> {
    if !(r > 0.0) {
        return Err(Error::InvalidInput(format!("r = {r} must be positive")));
    }
    let target = population_target(spec, penalty, FitOptions::default())?;
    let d_g_sq = penalized_curvature(spec, &target, penalty)?;
    let d_g = psd_sqrt(&d_g_sq)?;
    let d_g_inv = pd_inv_sqrt(&d_g_sq)?;
    let l_g = |theta: &[f64]| -> Result<f64> { Ok(loglik(spec, data, theta)? - penalty.quad(theta)) };
    let pen_grad = |theta: &[f64]| -> Result<Vec<f64>> {
        let mut gv = grad(spec, data, theta)?;
        let pen = penalty.g_sq.matvec(theta);
        for (a, b) in gv.iter_mut().zip(&pen) {
            *a -= b;
        }
        Ok(gv)
    };
    let a_pts = sample_dg_sphere(&target, &d_g_inv, r, nsamples, seed);
    let b_pts = sample_dg_sphere(&target, &d_g_inv, r * 0.5, nsamples, seed.wrapping_add(1));
    let mut sup_norm = 0.0f64;
    let mut sup_abs = 0.0f64;
    for (theta, theta0) in a_pts.iter().zip(&b_pts) {
        let step = vec_sub(theta, theta0);
        let dstep = vec_norm(&d_g.matvec(&step));
        if dstep < 1e-12 {
            continue;
        }
        let alpha = l_g(theta)? - l_g(theta0)? - dot(&step, &pen_grad(theta0)?)
            + dstep * dstep / 2.0;
        sup_abs = sup_abs.max(alpha.abs());
        sup_norm = sup_norm.max(alpha.abs() / dstep);
    }
    Ok(QuadApproxError {
        sup_normalized: sup_norm,
        sup_absolute: sup_abs,
    })
}

/// Output of [`risk_decomposition`].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RiskDecomposition {
    /// `||W (theta*_G - theta*)||^2`.
    pub bias_sq: f64,
    /// `tr(W D_G^{-2} V_0^2 D_G^{-2} W)`.
    pub variance_trace: f64,
    /// `bias_sq + variance_trace`.
    pub r_risk: f64,
    /// `4 {delta_G(r_G) r_G + 6 nu0 a_G r_G (Q1 + Q2/g + 4) omega}`.
    pub diamond_star: f64,
    /// `(sqrt(r_risk) + diamond_star)^2`.
    pub risk_bound: f64,
}

/// Bias/variance decomposition of the weighted quadratic risk
/// `E ||W (theta~_G - theta*)||^2`, and its closed-form upper bound.
/// Requires `W^2 <= D_G^2` in the PSD order.
pub fn risk_decomposition(
    spec: &ModelSpec,
    penalty: &PenaltySpec,
    w: &SymMatrix,
    bp: &BoundParams,
    r_g: f64,
) -> Result<RiskDecomposition> {
    let target = population_target(spec, penalty, FitOptions::default())?;
    let d_g_sq = penalized_curvature(spec, &target, penalty)?;
    let d_g_inv = pd_inv_sqrt(&d_g_sq)?;
    // W^2 <= D_G^2 iff eigenvalues of D_G^{-1} W^2 D_G^{-1} are <= 1
    let w_sq = w.sandwich(&SymMatrix::identity(spec.p()));
    let normalized = d_g_inv.sandwich(&w_sq);
    let top = crate::numerics::operator_norm(&normalized)?;
    if top > 1.0 + 1e-10 {
        return Err(Error::InvalidWeightOrder(format!(
            "largest eigenvalue of D_G^{{-1}} W^2 D_G^{{-1}} is {top}"
        )));
    }

    let bias = vec_sub(&target, &spec.theta_star);
    let bias_sq = {
        let wb = w.matvec(&bias);
        dot(&wb, &wb)
    };
    let info = crate::models::info_matrices(spec, &target)?;
    // tr(W D_G^{-2} V_0^2 D_G^{-2} W) via M = D_G^{-1} V_0^2 D_G^{-1}
    let m = d_g_inv.sandwich(&info.v0_sq);
    let inner = d_g_inv.sandwich(&m); // D_G^{-2}-sandwiched V_0^2
    let variance_trace = w.sandwich(&inner).trace();

    let r_risk = bias_sq + variance_trace;
    let over_g = if bp.g.is_finite() {
        bp.q_budget.q2 / bp.g
    } else {
        0.0
    };
    let moment = bp.q_budget.q1 + over_g + 4.0;
    let delta = (bp.delta_r)(r_g);
    let diamond_star = 4.0 * (delta * r_g + 6.0 * bp.nu0 * bp.a_g * r_g * moment * bp.omega);
    let risk_bound = (r_risk.sqrt() + diamond_star) * (r_risk.sqrt() + diamond_star);
    Ok(RiskDecomposition {
        bias_sq,
        variance_trace,
        r_risk,
        diamond_star,
        risk_bound,
    })
}
