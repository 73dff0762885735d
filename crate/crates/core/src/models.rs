//! I.i.d. regression families with analytic log-likelihoods, expectations,
//! and information matrices.
//!
//! Three canonical exponential families (gaussian-linear, logistic, poisson)
//! have deterministic Hessians, so the curvature noise constant `omega` is
//! zero for them. The fourth family, gaussian-nonlinear
//! (`y = sigmoid(x'theta) + eps`), is included precisely because its Hessian
//! is stochastic: it exercises the `omega`-dependent error terms that the
//! canonical families leave untested.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::numerics::{sym_eig, SymMatrix};
use crate::{Error, Result};

/// Largest linear-predictor magnitude accepted by the Poisson link before
/// erroring instead of overflowing.
const POISSON_ETA_CAP: f64 = 30.0;

/// Supremum of |sigmoid''| = 1/(6 sqrt(3)); the curvature envelope of the
/// gaussian-nonlinear mean function.
pub const SIGMOID_M2: f64 = 0.09622504486493764;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    GaussianLinear,
    Logistic,
    Poisson,
    GaussianNonlinear,
}

impl Family {
    /// True for families whose Hessian does not depend on the data.
    pub fn is_canonical(self) -> bool {
        !matches!(self, Family::GaussianNonlinear)
    }
}

fn default_sigma() -> f64 {
    1.0
}

/// A regression model: family, fixed design, true parameter, and (for the
/// Gaussian families) the noise scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: Family,
    /// Design matrix as `n` rows of length `p`.
    pub design: Vec<Vec<f64>>,
    pub theta_star: Vec<f64>,
    #[serde(default = "default_sigma")]
    pub noise_sigma: f64,
}

impl ModelSpec {
    pub fn new(
        family: Family,
        design: Vec<Vec<f64>>,
        theta_star: Vec<f64>,
        noise_sigma: f64,
    ) -> Result<Self> {
        let spec = ModelSpec {
            family,
            design,
            theta_star,
            noise_sigma,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.design.len();
        let p = self.theta_star.len();
        if p < 1 || n < p {
            return Err(Error::InvalidSpec(format!(
                "need n >= p >= 1, got n = {n}, p = {p}"
            )));
        }
        for (i, row) in self.design.iter().enumerate() {
            if row.len() != p {
                return Err(Error::InvalidSpec(format!(
                    "design row {i} has length {}, expected {p}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidSpec(format!("design row {i} not finite")));
            }
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::InvalidSpec(format!(
                "noise_sigma = {} must be finite and >= 0",
                self.noise_sigma
            )));
        }
        // full column rank: smallest singular value above 1e-10 of the largest
        let gram = self.gram();
        let dec = sym_eig(&gram)?;
        let smax = dec.eigenvalues.last().copied().unwrap_or(0.0).max(0.0).sqrt();
        let smin = dec.eigenvalues.first().copied().unwrap_or(0.0).max(0.0).sqrt();
        if smin <= 1e-10 * smax {
            return Err(Error::InvalidSpec(format!(
                "design is rank deficient: singular values range [{smin}, {smax}]"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.design.len()
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.theta_star.len()
    }

    /// `X' X`.
    pub fn gram(&self) -> SymMatrix {
        SymMatrix::from_fn(self.p(), |i, j| {
            self.design.iter().map(|row| row[i] * row[j]).sum()
        })
    }

    /// Linear predictors `X theta`.
    pub fn eta(&self, theta: &[f64]) -> Vec<f64> {
        self.design
            .iter()
            .map(|row| row.iter().zip(theta).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Ratio `max_i ||x_i|| / s_min(X)`; the curvature-noise constant for
    /// the gaussian-nonlinear family (of order `1/sqrt(n)` for bounded
    /// designs).
    pub fn design_ratio(&self) -> Result<f64> {
        let max_row = self
            .design
            .iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0f64, f64::max);
        let dec = sym_eig(&self.gram())?;
        let smin = dec.eigenvalues.first().copied().unwrap_or(0.0).max(0.0).sqrt();
        if smin == 0.0 {
            return Err(Error::InvalidSpec("rank-deficient design".into()));
        }
        Ok(max_row / smin)
    }
}

/// One simulated sample from a [`ModelSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub responses: Vec<f64>,
    pub seed: u64,
}

impl Dataset {
    /// Writes `index,response` CSV lines (with header).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,response\n");
        for (i, y) in self.responses.iter().enumerate() {
            out.push_str(&format!("{i},{y}\n"));
        }
        out
    }

    /// Parses the format written by [`Dataset::to_csv`].
    pub fn from_csv(text: &str, seed: u64) -> Result<Dataset> {
        let mut responses = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 && line.trim() == "index,response" {
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let (idx, val) = (parts.next(), parts.next());
            match (idx, val, parts.next()) {
                (Some(_), Some(v), None) => {
                    let y: f64 = v.trim().parse().map_err(|e| {
                        Error::InvalidInput(format!("line {}: bad response: {e}", lineno + 1))
                    })?;
                    responses.push(y);
                }
                _ => {
                    return Err(Error::InvalidInput(format!(
                        "line {}: expected two comma-separated fields",
                        lineno + 1
                    )))
                }
            }
        }
        Ok(Dataset { responses, seed })
    }
}

#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^t)` without overflow.
#[inline]
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

#[inline]
fn sigmoid_d1(t: f64) -> f64 {
    let s = sigmoid(t);
    s * (1.0 - s)
}

#[inline]
fn sigmoid_d2(t: f64) -> f64 {
    let s = sigmoid(t);
    s * (1.0 - s) * (1.0 - 2.0 * s)
}

fn check_poisson_eta(eta: &[f64]) -> Result<()> {
    for &e in eta {
        if e.abs() > POISSON_ETA_CAP {
            return Err(Error::LinkOverflow(format!(
                "poisson linear predictor {e} exceeds |eta| <= {POISSON_ETA_CAP}"
            )));
        }
    }
    Ok(())
}

/// Draws one dataset at the true parameter; deterministic given the seed.
pub fn simulate(spec: &ModelSpec, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eta = spec.eta(&spec.theta_star);
    let responses = match spec.family {
        Family::GaussianLinear => eta
            .iter()
            .map(|&e| {
                let z: f64 = StandardNormal.sample(&mut rng);
                e + spec.noise_sigma * z
            })
            .collect(),
        Family::Logistic => eta
            .iter()
            .map(|&e| {
                let u: f64 = rng.gen();
                if u < sigmoid(e) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect(),
        Family::Poisson => {
            check_poisson_eta(&eta)?;
            let mut out = Vec::with_capacity(eta.len());
            for &e in &eta {
                let pois = Poisson::new(e.exp()).map_err(|err| {
                    Error::InvalidSpec(format!("poisson rate at eta = {e}: {err:?}"))
                })?;
                let y: f64 = pois.sample(&mut rng);
                out.push(y);
            }
            out
        }
        Family::GaussianNonlinear => eta
            .iter()
            .map(|&e| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sigmoid(e) + spec.noise_sigma * z
            })
            .collect(),
    };
    Ok(Dataset { responses, seed })
}

fn check_lengths(spec: &ModelSpec, data: &Dataset, theta: &[f64]) -> Result<()> {
    if data.responses.len() != spec.n() {
        return Err(Error::InvalidInput(format!(
            "dataset has {} responses for {} design rows",
            data.responses.len(),
            spec.n()
        )));
    }
    if theta.len() != spec.p() {
        return Err(Error::InvalidInput(format!(
            "theta has dimension {}, expected {}",
            theta.len(),
            spec.p()
        )));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("theta not finite".into()));
    }
    Ok(())
}

/// Log-likelihood at `theta` (additive constants in `y` dropped).
pub fn loglik(spec: &ModelSpec, data: &Dataset, theta: &[f64]) -> Result<f64> {
    check_lengths(spec, data, theta)?;
    let eta = spec.eta(theta);
    let y = &data.responses;
    Ok(match spec.family {
        Family::GaussianLinear => {
            let s2 = spec.noise_sigma * spec.noise_sigma;
            -y.iter()
                .zip(&eta)
                .map(|(yi, ei)| (yi - ei) * (yi - ei))
                .sum::<f64>()
                / (2.0 * s2)
        }
        Family::Logistic => y
            .iter()
            .zip(&eta)
            .map(|(yi, &ei)| yi * ei - softplus(ei))
            .sum(),
        Family::Poisson => {
            check_poisson_eta(&eta)?;
            y.iter()
                .zip(&eta)
                .map(|(yi, &ei)| yi * ei - ei.exp())
                .sum()
        }
        Family::GaussianNonlinear => {
            let s2 = spec.noise_sigma * spec.noise_sigma;
            -y.iter()
                .zip(&eta)
                .map(|(yi, &ei)| {
                    let r = yi - sigmoid(ei);
                    r * r
                })
                .sum::<f64>()
                / (2.0 * s2)
        }
    })
}

/// Per-observation weight `w_i` such that `grad = X' w`.
fn grad_weights(spec: &ModelSpec, y: &[f64], eta: &[f64]) -> Result<Vec<f64>> {
    let s2 = spec.noise_sigma * spec.noise_sigma;
    Ok(match spec.family {
        Family::GaussianLinear => y.iter().zip(eta).map(|(yi, ei)| (yi - ei) / s2).collect(),
        Family::Logistic => y.iter().zip(eta).map(|(yi, &ei)| yi - sigmoid(ei)).collect(),
        Family::Poisson => {
            check_poisson_eta(eta)?;
            y.iter().zip(eta).map(|(yi, &ei)| yi - ei.exp()).collect()
        }
        Family::GaussianNonlinear => y
            .iter()
            .zip(eta)
            .map(|(yi, &ei)| (yi - sigmoid(ei)) * sigmoid_d1(ei) / s2)
            .collect(),
    })
}

pub fn grad(spec: &ModelSpec, data: &Dataset, theta: &[f64]) -> Result<Vec<f64>> {
    check_lengths(spec, data, theta)?;
    let eta = spec.eta(theta);
    let w = grad_weights(spec, &data.responses, &eta)?;
    let mut out = vec![0.0; spec.p()];
    for (row, wi) in spec.design.iter().zip(&w) {
        for (o, xij) in out.iter_mut().zip(row) {
            *o += wi * xij;
        }
    }
    Ok(out)
}

fn weighted_gram(spec: &ModelSpec, w: &[f64]) -> SymMatrix {
    SymMatrix::from_fn(spec.p(), |i, j| {
        spec.design
            .iter()
            .zip(w)
            .map(|(row, wi)| wi * row[i] * row[j])
            .sum()
    })
}

/// Per-observation curvature `h_i` such that `hessian = sum_i h_i x_i x_i'`.
fn hess_weights(spec: &ModelSpec, y: &[f64], eta: &[f64]) -> Result<Vec<f64>> {
    let s2 = spec.noise_sigma * spec.noise_sigma;
    Ok(match spec.family {
        Family::GaussianLinear => vec![-1.0 / s2; eta.len()],
        Family::Logistic => eta.iter().map(|&ei| -sigmoid_d1(ei)).collect(),
        Family::Poisson => {
            check_poisson_eta(eta)?;
            eta.iter().map(|&ei| -ei.exp()).collect()
        }
        Family::GaussianNonlinear => y
            .iter()
            .zip(eta)
            .map(|(yi, &ei)| {
                let d1 = sigmoid_d1(ei);
                ((yi - sigmoid(ei)) * sigmoid_d2(ei) - d1 * d1) / s2
            })
            .collect(),
    })
}

pub fn hessian(spec: &ModelSpec, data: &Dataset, theta: &[f64]) -> Result<SymMatrix> {
    check_lengths(spec, data, theta)?;
    let eta = spec.eta(theta);
    let h = hess_weights(spec, &data.responses, &eta)?;
    Ok(weighted_gram(spec, &h))
}

/// Mean response of one observation at linear predictor `eta` (under the
/// family, not the model being scored).
fn mean_response(family: Family, eta: f64) -> f64 {
    match family {
        Family::GaussianLinear => eta,
        Family::Logistic => sigmoid(eta),
        Family::Poisson => eta.exp(),
        Family::GaussianNonlinear => sigmoid(eta),
    }
}

/// Expectation of [`loglik`] over data drawn at the true parameter.
pub fn expected_loglik(spec: &ModelSpec, theta: &[f64]) -> Result<f64> {
    let eta_star = spec.eta(&spec.theta_star);
    let eta = spec.eta(theta);
    let s2 = spec.noise_sigma * spec.noise_sigma;
    Ok(match spec.family {
        Family::GaussianLinear => {
            // E(y - eta)^2 = sigma^2 + (eta* - eta)^2
            let drift: f64 = eta_star
                .iter()
                .zip(&eta)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            -(spec.n() as f64) / 2.0 - drift / (2.0 * s2)
        }
        Family::Logistic => eta_star
            .iter()
            .zip(&eta)
            .map(|(&es, &e)| sigmoid(es) * e - softplus(e))
            .sum(),
        Family::Poisson => {
            check_poisson_eta(&eta)?;
            check_poisson_eta(&eta_star)?;
            eta_star
                .iter()
                .zip(&eta)
                .map(|(&es, &e)| es.exp() * e - e.exp())
                .sum()
        }
        Family::GaussianNonlinear => {
            let drift: f64 = eta_star
                .iter()
                .zip(&eta)
                .map(|(&es, &e)| {
                    let d = sigmoid(es) - sigmoid(e);
                    d * d
                })
                .sum();
            -(spec.n() as f64) / 2.0 - drift / (2.0 * s2)
        }
    })
}

/// Gradient of [`expected_loglik`]; vanishes at the true parameter.
pub fn expected_grad(spec: &ModelSpec, theta: &[f64]) -> Result<Vec<f64>> {
    let eta_star = spec.eta(&spec.theta_star);
    let ey: Vec<f64> = eta_star
        .iter()
        .map(|&e| mean_response(spec.family, e))
        .collect();
    if spec.family == Family::Poisson {
        check_poisson_eta(&eta_star)?;
    }
    let data = Dataset {
        responses: ey,
        seed: 0,
    };
    grad(spec, &data, theta)
}

/// Hessian of [`expected_loglik`] (the data enters linearly except in the
/// gaussian-nonlinear family, where the expected response substitutes).
pub fn expected_hessian(spec: &ModelSpec, theta: &[f64]) -> Result<SymMatrix> {
    let eta_star = spec.eta(&spec.theta_star);
    let ey: Vec<f64> = eta_star
        .iter()
        .map(|&e| mean_response(spec.family, e))
        .collect();
    let data = Dataset {
        responses: ey,
        seed: 0,
    };
    hessian(spec, &data, theta)
}

/// The information matrices at a reference point.
#[derive(Debug, Clone)]
pub struct InfoMatrices {
    /// Curvature `-E grad^2 L` at the reference point.
    pub d0_sq: SymMatrix,
    /// Variance of the score at the reference point, under the true
    /// parameter: `sum_i Var(y_i) c_i^2 x_i x_i'`.
    pub v0_sq: SymMatrix,
    /// Envelope matrix bounding the stochastic Hessian component.
    pub v2_sq: SymMatrix,
    /// Sub-Gaussian constant of the normalized Hessian noise; zero for the
    /// canonical families.
    pub omega: f64,
}

/// Computes `D_0^2`, `V_0^2`, the Hessian-noise envelope `V_2^2`, and
/// `omega` at `theta_ref`. The score variance is always evaluated under the
/// true parameter of the spec.
pub fn info_matrices(spec: &ModelSpec, theta_ref: &[f64]) -> Result<InfoMatrices> {
    let d0_sq = expected_hessian(spec, theta_ref)?.scale(-1.0);
    {
        let dec = sym_eig(&d0_sq)?;
        let top = dec.eigenvalues.last().copied().unwrap_or(0.0);
        if dec.eigenvalues.first().copied().unwrap_or(0.0) <= 1e-12 * top.max(1.0) {
            return Err(Error::SingularMatrix(
                "expected curvature D_0^2 is degenerate".into(),
            ));
        }
    }

    let eta_star = spec.eta(&spec.theta_star);
    let eta_ref = spec.eta(theta_ref);
    let s2 = spec.noise_sigma * spec.noise_sigma;
    // Var(y_i) under theta*, times the squared score coefficient at theta_ref.
    let var_weights: Vec<f64> = match spec.family {
        Family::GaussianLinear => vec![1.0 / s2; spec.n()],
        Family::Logistic => eta_star
            .iter()
            .map(|&e| {
                let s = sigmoid(e);
                s * (1.0 - s)
            })
            .collect(),
        Family::Poisson => {
            check_poisson_eta(&eta_star)?;
            eta_star.iter().map(|&e| e.exp()).collect()
        }
        Family::GaussianNonlinear => eta_ref
            .iter()
            .map(|&e| {
                let d1 = sigmoid_d1(e);
                d1 * d1 / s2
            })
            .collect(),
    };
    let v0_sq = weighted_gram(spec, &var_weights);

    let (v2_sq, omega) = if spec.family.is_canonical() {
        (d0_sq.clone(), 0.0)
    } else {
        // gaussian-nonlinear: the Hessian noise is sum_i eps_i mu''(eta_i)
        // x_i x_i' / sigma^2, Gaussian in every direction pair. With the
        // envelope V_2^2 = (m2/sigma) X'X the normalized noise is
        // sub-Gaussian with constant max_i ||x_i|| / s_min(X).
        let v2_sq = spec.gram().scale(SIGMOID_M2 / spec.noise_sigma);
        (v2_sq, spec.design_ratio()?)
    };

    Ok(InfoMatrices {
        d0_sq,
        v0_sq,
        v2_sq,
        omega,
    })
}
