//! Chaining entropy budgets, tail quantiles, and the building blocks for
//! uniform deviation bounds of process suprema.
//!
//! The central object is the pair `(Q1, Q2)` of entropy constants,
//!
//! ```text
//! Q1 = sum_k c_k sqrt(2 log(2 M_k)),    Q2 = 2 sum_k c_k log(2 M_k),
//! ```
//!
//! with weights `c_0 = 1/3`, `c_k = 2^{1-k}/3` for `k >= 1` (so the weights
//! sum to one). Every tail level in this crate is expressed through the
//! quantile `z_H(x)` built from such a budget.

use crate::numerics::{sym_eig, SymMatrix};
use crate::{Error, Result};

/// The chaining constants `(Q1, Q2)` entering every tail quantile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyBudget {
    pub q1: f64,
    pub q2: f64,
}

/// Deviation parameters of the underlying process: the variance factor
/// `nu0 >= 1` and the sub-exponential threshold `g` (`f64::INFINITY` for the
/// pure sub-Gaussian case).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailParams {
    pub nu0: f64,
    pub g: f64,
}

impl TailParams {
    pub fn new(nu0: f64, g: f64) -> Result<Self> {
        if !(nu0 >= 1.0) {
            return Err(Error::InvalidInput(format!("nu0 = {nu0} must be >= 1")));
        }
        if !(g > 0.0) {
            return Err(Error::InvalidInput(format!("g = {g} must be positive")));
        }
        Ok(TailParams { nu0, g })
    }

    /// Sub-Gaussian case `g = infinity`.
    pub fn sub_gaussian(nu0: f64) -> Result<Self> {
        Self::new(nu0, f64::INFINITY)
    }
}

/// Which closed-form rule `zz_quantile` uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantileRule {
    /// Minimum over all rules valid at the inputs.
    Auto,
    /// `Q1 + sqrt(2x) + (x/g^2 + 1) Q2/g`.
    Additive,
    /// `sqrt(Q2 + 2x)` while `Q2 + 2x <= g^2`, then `x/g + (Q2/g + g)/2`.
    Piecewise,
}

/// Weight `c_k` of the chaining series.
#[inline]
fn series_weight(k: usize) -> f64 {
    if k == 0 {
        1.0 / 3.0
    } else {
        2.0f64.powi(1 - k as i32) / 3.0
    }
}

/// Sums the chaining series for a user-supplied sequence `log(2 M_k)`,
/// `k = 0..=K`; the tail beyond `K` is treated as zero.
pub fn entropy_series(log2m: &[f64]) -> Result<EntropyBudget> {
    let mut q1 = 0.0;
    let mut q2 = 0.0;
    for (k, &v) in log2m.iter().enumerate() {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidEntropySequence(format!(
                "term k = {k} is {v}; need finite and >= 0"
            )));
        }
        let c = series_weight(k);
        q1 += c * (2.0 * v).sqrt();
        q2 += 2.0 * c * v;
    }
    Ok(EntropyBudget { q1, q2 })
}

/// `log(2 M_k)` for coverings of the Euclidean ball in dimension `p`:
/// `2 M_0 <= 2^{1+p}` and `2 M_k <= 2^{2+kp} (1 - 2^{-k-1})^{-p}` for `k >= 1`.
pub fn ball_log2m(p: u32, k: u32) -> f64 {
    let ln2 = std::f64::consts::LN_2;
    let p = p as f64;
    if k == 0 {
        (1.0 + p) * ln2
    } else {
        let kf = k as f64;
        (2.0 + kf * p) * ln2 - p * (1.0 - 2.0f64.powf(-kf - 1.0)).ln()
    }
}

/// The ball sequence truncated where the series tail is negligible.
pub fn ball_log2m_sequence(p: u32) -> Vec<f64> {
    (0..=60).map(|k| ball_log2m(p, k)).collect()
}

fn ball_c1(p: u32) -> f64 {
    if p == 1 {
        2.7
    } else {
        2.0
    }
}

/// Closed-form budget for the unit ball in dimension `p`:
/// `Q2 = 2 c1 p`, `Q1 = sqrt(2 c1 p)`, with `c1 = 2` for `p >= 2` and
/// `c1 = 2.7` for `p = 1`. Dominates [`entropy_series`] on the exact ball
/// sequence.
pub fn ball_entropy(p: u32) -> EntropyBudget {
    assert!(p >= 1, "dimension must be positive");
    let q2 = 2.0 * ball_c1(p) * p as f64;
    EntropyBudget { q1: q2.sqrt(), q2 }
}

/// Budget for the penalized ellipsoid shaped by `B` with all eigenvalues
/// `>= 1`:
///
/// ```text
/// Q2 = 1 + (8/3) tr(B^{-1}),    Q1 = 1 + 2 sqrt(tr(B^{-2} log_+^2(B^2))),
/// ```
///
/// where `log_+` clamps at zero so eigenvalues marginally below 1 (roundoff)
/// contribute nothing.
pub fn penalized_entropy(b: &SymMatrix) -> Result<EntropyBudget> {
    let dec = sym_eig(b)?;
    for &l in &dec.eigenvalues {
        if l < 1.0 - 1e-10 {
            return Err(Error::InvalidPenalizedShape(format!(
                "eigenvalue {l} < 1"
            )));
        }
    }
    let mut tr_inv = 0.0;
    let mut tr_logsq = 0.0;
    for &l in &dec.eigenvalues {
        tr_inv += 1.0 / l;
        let lg = (l * l).ln().max(0.0);
        tr_logsq += lg * lg / (l * l);
    }
    Ok(EntropyBudget {
        q1: 1.0 + 2.0 * tr_logsq.sqrt(),
        q2: 1.0 + 8.0 / 3.0 * tr_inv,
    })
}

/// Budget for the unit ball of a product space of dimensions `p` and `q`:
/// the ball constants at dimension `p + q`.
pub fn vector_norm_entropy(p: u32, q: u32) -> EntropyBudget {
    assert!(p >= 1 && q >= 1);
    let q2 = 2.0 * 2.0 * (p + q) as f64;
    EntropyBudget { q1: q2.sqrt(), q2 }
}

/// `(Q1(F), Q2(F))` for a weight matrix given as `F^2` with eigenvalues in
/// `(0, 1]`: the penalized-ellipsoid formulas with `F` in the role of
/// `B^{-1}`, i.e. `Q2(F) = 1 + (8/3) tr(F)` and
/// `Q1(F) = 1 + 2 sqrt(tr(F^2 log_+^2(F^{-2})))`.
fn weight_entropy(f_sq: &SymMatrix) -> Result<EntropyBudget> {
    let dec = sym_eig(f_sq)?;
    let mut tr_f = 0.0;
    let mut tr_logsq = 0.0;
    for &mu in &dec.eigenvalues {
        if mu <= 0.0 || mu > 1.0 + 1e-10 {
            return Err(Error::InvalidWeight(format!(
                "eigenvalue {mu} of the squared weight must lie in (0, 1]"
            )));
        }
        tr_f += mu.sqrt();
        let lg = (1.0 / mu).ln().max(0.0);
        tr_logsq += mu * lg * lg;
    }
    Ok(EntropyBudget {
        q1: 1.0 + 2.0 * tr_logsq.sqrt(),
        q2: 1.0 + 8.0 / 3.0 * tr_f,
    })
}

fn check_weight_opnorm(f_sq: &SymMatrix) -> Result<()> {
    let dec = sym_eig(f_sq)?;
    let top = dec
        .eigenvalues
        .iter()
        .fold(0.0f64, |m, &l| m.max(l.abs()));
    if !(0.5 - 1e-10..=1.0 + 1e-10).contains(&top) {
        return Err(Error::InvalidWeight(format!(
            "operator norm {top} of the squared weight must lie in [1/2, 1]"
        )));
    }
    Ok(())
}

/// Budget for the `F`-weighted norm of a process over a `p`-dimensional ball:
/// `Q(F)` plus the ball constants. `f_sq` is `F^2` and must have operator
/// norm in `[1/2, 1]`.
pub fn weighted_norm_entropy(f_sq: &SymMatrix, p: u32) -> Result<EntropyBudget> {
    assert!(p >= 1);
    check_weight_opnorm(f_sq)?;
    let ef = weight_entropy(f_sq)?;
    let ball_q2 = 2.0 * ball_c1(p) * p as f64;
    Ok(EntropyBudget {
        q1: ef.q1 + ball_q2.sqrt(),
        q2: ef.q2 + ball_q2,
    })
}

/// Budget for the weighted norm over a constrained set: componentwise sum of
/// `Q(F)` and `Q(W)`, where `w_sq = W^2 = I /\ S^{-2}` encodes the
/// constraint (so its eigenvalues lie in `(0, 1]`).
pub fn constrained_norm_entropy(f_sq: &SymMatrix, w_sq: &SymMatrix) -> Result<EntropyBudget> {
    check_weight_opnorm(f_sq)?;
    let ef = weight_entropy(f_sq)?;
    let ew = weight_entropy(w_sq)?;
    Ok(EntropyBudget {
        q1: ef.q1 + ew.q1,
        q2: ef.q2 + ew.q2,
    })
}

/// The tail quantile `z_H(x)`: a level the normalized supremum exceeds with
/// probability at most `e^{-x}`.
///
/// For `g = infinity` this is `Q1 + sqrt(2x)`. For finite `g` two closed
/// forms are available:
///
/// * additive — `Q1 + sqrt(2x) + (x/g^2 + 1) Q2/g`;
/// * piecewise — `sqrt(Q2 + 2x)` while `Q2 + 2x <= g^2`, afterwards
///   `x/g + (Q2/g + g)/2` (the two branches agree at the boundary).
///
/// Each is a valid quantile, so `Auto` takes their minimum.
pub fn zz_quantile(x: f64, e: EntropyBudget, t: TailParams, rule: QuantileRule) -> Result<f64> {
    if !(x >= 0.5) {
        return Err(Error::OutOfValidRange(format!("x = {x} must be >= 1/2")));
    }
    if t.g.is_infinite() {
        return Ok(e.q1 + (2.0 * x).sqrt());
    }
    let g = t.g;
    let additive = e.q1 + (2.0 * x).sqrt() + (x / (g * g) + 1.0) * e.q2 / g;
    let piecewise = if e.q2 + 2.0 * x <= g * g {
        (e.q2 + 2.0 * x).sqrt()
    } else {
        x / g + (e.q2 / g + g) / 2.0
    };
    Ok(match rule {
        QuantileRule::Auto => additive.min(piecewise),
        QuantileRule::Additive => additive,
        QuantileRule::Piecewise => piecewise,
    })
}

/// Output of [`subexp_sum_quantile`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubexpSumBounds {
    pub q1: f64,
    pub q2: f64,
    /// Level exceeded with probability at most `e^{-x}`.
    pub quantile: f64,
    /// Upper bound on the mean of the weighted sum: `Q1 + Q2/g + 3`.
    pub mean_bound: f64,
    /// Upper bound on its L2 norm: `Q1 + Q2/g + 4`.
    pub l2_bound: f64,
}

/// Deviation and moment bounds for a weighted sum `S = sum_k c_k zeta_k` of
/// sub-exponential variables at levels `q_k`: `Q1 = sum c_k q_k`,
/// `Q2 = sum c_k q_k^2`, and `P(S >= z_H(x)) <= e^{-x}`.
///
/// Requires the weights to sum to one, `sum_k e^{-q_k} <= 1`, and (for the
/// moment bounds with finite `g`) `g^2 >= Q2 + 1`.
pub fn subexp_sum_quantile(
    c: &[f64],
    q: &[f64],
    t: TailParams,
    x: f64,
) -> Result<SubexpSumBounds> {
    if c.len() != q.len() || c.is_empty() {
        return Err(Error::InvalidLemmaInput(
            "weight and level sequences must have equal nonzero length".into(),
        ));
    }
    let csum: f64 = c.iter().sum();
    if (csum - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidLemmaInput(format!(
            "weights sum to {csum}, expected 1"
        )));
    }
    if q.iter().any(|&qk| !(qk >= 0.0)) {
        return Err(Error::InvalidLemmaInput("levels must be >= 0".into()));
    }
    let esum: f64 = q.iter().map(|&qk| (-qk).exp()).sum();
    if esum > 1.0 + 1e-12 {
        return Err(Error::InvalidLemmaInput(format!(
            "sum of exp(-q_k) is {esum} > 1"
        )));
    }
    let q1: f64 = c.iter().zip(q).map(|(ck, qk)| ck * qk).sum();
    let q2: f64 = c.iter().zip(q).map(|(ck, qk)| ck * qk * qk).sum();
    if t.g.is_finite() && t.g * t.g < q2 + 1.0 {
        return Err(Error::InvalidLemmaInput(format!(
            "g^2 = {} < Q2 + 1 = {}",
            t.g * t.g,
            q2 + 1.0
        )));
    }
    let budget = EntropyBudget { q1, q2 };
    let quantile = zz_quantile(x, budget, t, QuantileRule::Auto)?;
    let over_g = if t.g.is_finite() { q2 / t.g } else { 0.0 };
    Ok(SubexpSumBounds {
        q1,
        q2,
        quantile,
        mean_bound: q1 + over_g + 3.0,
        l2_bound: q1 + over_g + 4.0,
    })
}

/// Prefactor of the supremum bound: 3 for the scalar supremum, 6 for the
/// norm of a vector process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupFactor {
    Scalar,
    Vector,
}

impl SupFactor {
    #[inline]
    pub fn value(self) -> f64 {
        match self {
            SupFactor::Scalar => 3.0,
            SupFactor::Vector => 6.0,
        }
    }
}

/// Deviation level for the supremum over a ball of radius `r`:
/// `factor * nu0 * r * z_H(x)`, exceeded with probability at most `e^{-x}`.
pub fn sup_bound(
    r: f64,
    t: TailParams,
    e: EntropyBudget,
    x: f64,
    factor: SupFactor,
) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::InvalidInput(format!("radius r = {r} must be positive")));
    }
    Ok(factor.value() * t.nu0 * r * zz_quantile(x, e, t, QuantileRule::Auto)?)
}

/// Output of [`moment_bounds`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentBounds {
    pub mean_bound: f64,
    pub l2_bound: f64,
}

/// Mean and L2 bounds for the supremum over a ball of radius `r0`:
/// `3 nu0 r0 (Q1 + Q2/g + 3)` and `3 nu0 r0 (Q1 + Q2/g + 4)`. For finite `g`
/// the bounds need `g^2 >= Q2 + 1`.
pub fn moment_bounds(r0: f64, t: TailParams, e: EntropyBudget) -> Result<MomentBounds> {
    if !(r0 > 0.0) {
        return Err(Error::InvalidInput(format!("r0 = {r0} must be positive")));
    }
    if t.g.is_finite() && t.g * t.g < e.q2 + 1.0 {
        return Err(Error::InvalidLemmaInput(format!(
            "g^2 = {} < Q2 + 1 = {}",
            t.g * t.g,
            e.q2 + 1.0
        )));
    }
    let over_g = if t.g.is_finite() { e.q2 / t.g } else { 0.0 };
    let base = 3.0 * t.nu0 * r0;
    Ok(MomentBounds {
        mean_bound: base * (e.q1 + over_g + 3.0),
        l2_bound: base * (e.q1 + over_g + 4.0),
    })
}

/// Output of [`slicing_drift`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlicingDrift {
    /// Required drift at radius `r`: `3 nu0 r z_H(x + log(r/r0))`.
    pub f_value: f64,
    /// Uniform-in-radius probability bound `rho/(1-rho) e^{-x}`.
    pub uniform_prob_bound: f64,
}

/// Drift needed for a uniform-in-radius supremum bound over geometric annuli
/// with ratio `rho`.
pub fn slicing_drift(
    r: f64,
    r0: f64,
    x: f64,
    t: TailParams,
    e: EntropyBudget,
    rho: f64,
) -> Result<SlicingDrift> {
    if !(r0 > 0.0) || r < r0 {
        return Err(Error::OutOfValidRange(format!(
            "need r >= r0 > 0, got r = {r}, r0 = {r0}"
        )));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidInput(format!("rho = {rho} must lie in (0, 1)")));
    }
    let f_value = 3.0 * t.nu0 * r * zz_quantile(x + (r / r0).ln(), e, t, QuantileRule::Auto)?;
    Ok(SlicingDrift {
        f_value,
        uniform_prob_bound: rho / (1.0 - rho) * (-x).exp(),
    })
}
