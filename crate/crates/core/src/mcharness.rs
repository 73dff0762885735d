//! Seeded, parallel Monte Carlo experiments validating every implemented
//! bound against exact or brute-force oracles.
//!
//! Reproducibility contract: replicate `i` always draws from the random
//! stream derived from `(master_seed, i)`, so results are identical for any
//! parallel schedule. Aggregation is a pure fold over partial exceedance
//! counts.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    ball_entropy, constrained_norm_entropy, zz_quantile, QuantileRule, SupFactor, TailParams,
};
use crate::models::{simulate, Family, ModelSpec};
use crate::numerics::{psd_sqrt, sym_eig, vec_norm, vec_sub, SymMatrix};
use crate::pmle::{
    diagnostics_at, estimate_b_llg_at, fit_pmle, population_target, risk_decomposition,
    solve_r_g, BoundParams, FitOptions, PenaltySpec,
};
use crate::quadform::{quad_quantile, quad_tail_bound, QuadFormSpec, QuantileMode};
use crate::{Error, Result};

/// 99% one-sided normal quantile used by the Wilson upper interval.
const Z_99: f64 = 2.5758293035489004;

/// Largest brute-force max-of-Gaussians block in the sub-exponential sum
/// construction.
const MAX_BLOCK: f64 = 1e7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KindTag {
    ProcessSup,
    VectorNorm,
    QuadformTail,
    SubexpSum,
    Slicing,
    Expansion,
    Concentration,
    Risk,
}

impl KindTag {
    pub fn name(self) -> &'static str {
        match self {
            KindTag::ProcessSup => "process-sup",
            KindTag::VectorNorm => "vector-norm",
            KindTag::QuadformTail => "quadform-tail",
            KindTag::SubexpSum => "subexp-sum",
            KindTag::Slicing => "slicing",
            KindTag::Expansion => "expansion",
            KindTag::Concentration => "concentration",
            KindTag::Risk => "risk",
        }
    }
}

/// One experiment. Fields that do not apply to the chosen kind are ignored
/// by that kind; [`ExperimentConfig::resolve`] fills defaults so the
/// effective configuration can be re-emitted verbatim.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: KindTag,
    /// Parameter dimension (process-sup, slicing, expansion, concentration,
    /// risk) or the second dimension of the vector-norm harness.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<u32>,
    /// Output dimension of the vector-norm harness.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<u32>,
    /// Ball radius for process-type experiments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    /// Diagonal of `B_G` (quadform-tail).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_diag: Option<Vec<f64>>,
    /// Sub-exponential threshold; omit for the Gaussian case.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
    /// Diagonal of `F^2` (vector-norm weight); defaults to the identity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_sq_diag: Option<Vec<f64>>,
    /// Diagonal of the constraint `S` (vector-norm); omit for none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_diag: Option<Vec<f64>>,
    /// Number of levels in the sub-exponential sum construction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<u32>,
    /// Annulus ratio (slicing).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    /// `r*/r0` (slicing).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<Family>,
    /// Sample size (expansion uses `n_grid` instead).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_grid: Option<Vec<usize>>,
    /// Ridge penalty strength `G^2 = tau I`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ridge_tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicates: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    /// Worker cap; results never depend on it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parallel_width: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(kind: KindTag) -> Self {
        ExperimentConfig {
            kind,
            p: None,
            q: None,
            r: None,
            b_diag: None,
            g: None,
            f_sq_diag: None,
            s_diag: None,
            levels: None,
            rho: None,
            r_ratio: None,
            family: None,
            n: None,
            n_grid: None,
            ridge_tau: None,
            x_grid: None,
            replicates: None,
            master_seed: None,
            parallel_width: None,
        }
    }

    /// Fills defaults and validates; the result serializes to the effective
    /// configuration of the run.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = self.clone();
        let fit_based = matches!(
            cfg.kind,
            KindTag::Expansion | KindTag::Concentration | KindTag::Risk
        );
        cfg.x_grid
            .get_or_insert_with(|| vec![0.5, 1.0, 2.0, 3.0]);
        cfg.replicates
            .get_or_insert(if fit_based { 500 } else { 100_000 });
        cfg.master_seed.get_or_insert(0);
        match cfg.kind {
            KindTag::ProcessSup => {
                cfg.p.get_or_insert(2);
                cfg.r.get_or_insert(1.0);
            }
            KindTag::VectorNorm => {
                cfg.p.get_or_insert(2);
                cfg.q.get_or_insert(2);
                cfg.r.get_or_insert(1.0);
            }
            KindTag::QuadformTail => {
                cfg.b_diag.get_or_insert_with(|| vec![1.0, 1.0]);
            }
            KindTag::SubexpSum => {
                cfg.levels.get_or_insert(8);
            }
            KindTag::Slicing => {
                cfg.p.get_or_insert(2);
                cfg.r.get_or_insert(1.0);
                cfg.rho.get_or_insert(0.5);
                cfg.r_ratio.get_or_insert(32.0);
            }
            KindTag::Expansion => {
                cfg.family.get_or_insert(Family::Logistic);
                cfg.p.get_or_insert(5);
                cfg.ridge_tau.get_or_insert(1.0);
                cfg.n_grid
                    .get_or_insert_with(|| vec![250, 500, 1000, 2000, 4000]);
            }
            KindTag::Concentration => {
                cfg.family.get_or_insert(Family::Logistic);
                cfg.p.get_or_insert(3);
                cfg.n.get_or_insert(1000);
                cfg.ridge_tau.get_or_insert(1.0);
                cfg.replicates = Some(cfg.replicates.unwrap().min(100_000));
            }
            KindTag::Risk => {
                cfg.p.get_or_insert(3);
                cfg.n.get_or_insert(50);
                cfg.ridge_tau.get_or_insert(1.0);
                cfg.replicates.get_or_insert(10_000);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let grid = self.x_grid.as_deref().unwrap_or(&[]);
        if grid.is_empty() {
            return Err(Error::InvalidInput("x_grid must be nonempty".into()));
        }
        if grid.iter().any(|&x| !(x >= 0.5)) {
            return Err(Error::InvalidInput(
                "every x in x_grid must be >= 1/2".into(),
            ));
        }
        if self.replicates == Some(0) {
            return Err(Error::InvalidInput("replicates must be >= 1".into()));
        }
        if let Some(rho) = self.rho {
            if !(rho > 0.0 && rho < 1.0) {
                return Err(Error::InvalidInput(format!("rho = {rho} not in (0, 1)")));
            }
        }
        if let Some(ratio) = self.r_ratio {
            if !(ratio >= 1.0 && ratio <= 1e3) {
                return Err(Error::InvalidInput(format!(
                    "r_ratio = {ratio} must lie in [1, 1e3]"
                )));
            }
        }
        Ok(())
    }
}

/// Exceedance counts over a disjoint replicate range; the unit of
/// aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McPartial {
    pub kind: KindTag,
    pub x_grid: Vec<f64>,
    pub bound_levels: Vec<f64>,
    pub theoretical_probs: Vec<f64>,
    pub exceed_counts: Vec<u64>,
    pub replicates: u64,
    pub master_seed: u64,
    /// Sum of the replicate statistic (for mean checks).
    pub stat_sum: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McRow {
    pub x: f64,
    pub bound_level: f64,
    pub theoretical_prob: f64,
    pub empirical_freq: f64,
    pub wilson_upper_99: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McReport {
    pub kind: KindTag,
    pub rows: Vec<McRow>,
    pub replicates: u64,
    pub master_seed: u64,
    pub wall_time_secs: f64,
    /// Auxiliary scalars (e.g. the empirical mean for the sum experiment).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extras: BTreeMap<String, f64>,
}

impl McReport {
    /// One bound violation anywhere in the grid?
    pub fn any_violation(&self) -> bool {
        self.rows
            .iter()
            .any(|r| r.empirical_freq > r.theoretical_prob)
    }

    /// CSV with the standard columns.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "kind,x,bound_level,theoretical_prob,empirical_freq,wilson_upper_99,replicates,seed\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                self.kind.name(),
                r.x,
                r.bound_level,
                r.theoretical_prob,
                r.empirical_freq,
                r.wilson_upper_99,
                self.replicates,
                self.master_seed
            ));
        }
        out
    }
}

/// One-sided 99% Wilson upper confidence limit for a binomial proportion.
pub fn wilson_upper_99(successes: u64, trials: u64) -> f64 {
    let n = trials as f64;
    let phat = successes as f64 / n;
    let z2 = Z_99 * Z_99;
    let denom = 1.0 + z2 / n;
    let center = phat + z2 / (2.0 * n);
    let margin = Z_99 * (phat * (1.0 - phat) / n + z2 / (4.0 * n * n)).sqrt();
    ((center + margin) / denom).min(1.0)
}

/// Merges partial counts from disjoint replicate ranges into a report.
/// Associative and order-independent.
pub fn aggregate(partials: &[McPartial]) -> Result<McReport> {
    let first = partials
        .first()
        .ok_or_else(|| Error::AggregationMismatch("no partials".into()))?;
    let mut counts = vec![0u64; first.x_grid.len()];
    let mut replicates = 0u64;
    let mut stat_sum = 0.0;
    for p in partials {
        if p.kind != first.kind
            || p.x_grid != first.x_grid
            || p.bound_levels != first.bound_levels
            || p.master_seed != first.master_seed
        {
            return Err(Error::AggregationMismatch(
                "partials disagree on kind, grid, levels, or seed".into(),
            ));
        }
        if p.exceed_counts.len() != counts.len() {
            return Err(Error::AggregationMismatch("count length mismatch".into()));
        }
        for (c, &e) in counts.iter_mut().zip(&p.exceed_counts) {
            *c += e;
        }
        replicates += p.replicates;
        stat_sum += p.stat_sum;
    }
    let rows = first
        .x_grid
        .iter()
        .zip(&first.bound_levels)
        .zip(&first.theoretical_probs)
        .zip(&counts)
        .map(|(((&x, &level), &prob), &count)| McRow {
            x,
            bound_level: level,
            theoretical_prob: prob,
            empirical_freq: count as f64 / replicates as f64,
            wilson_upper_99: wilson_upper_99(count, replicates),
        })
        .collect();
    let mut extras = BTreeMap::new();
    extras.insert("stat_mean".to_string(), stat_sum / replicates as f64);
    Ok(McReport {
        kind: first.kind,
        rows,
        replicates,
        master_seed: first.master_seed,
        wall_time_secs: 0.0,
        extras,
    })
}

/// Stable seed derivation for nested experiment structure (splitmix64).
pub fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    let mut z = master
        .wrapping_add(a.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(b.wrapping_mul(0xBF58476D1CE4E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Runs in a dedicated thread pool when a width is requested; results are
/// identical either way.
fn with_pool<T: Send>(width: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match width {
        Some(w) if w > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .expect("thread pool")
            .install(f),
        _ => f(),
    }
}

/// Core tail runner: each replicate draws a scalar statistic from its own
/// stream and is compared against the per-x levels.
fn run_tail<F>(
    kind: KindTag,
    x_grid: &[f64],
    bound_levels: &[f64],
    theoretical: &[f64],
    replicates: u64,
    master_seed: u64,
    width: Option<usize>,
    stat: F,
) -> McReport
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    let start = Instant::now();
    const BLOCK: u64 = 4096;
    let nblocks = replicates.div_ceil(BLOCK);
    let partials: Vec<McPartial> = with_pool(width, || {
        (0..nblocks)
            .into_par_iter()
            .map(|blk| {
                let lo = blk * BLOCK;
                let hi = (lo + BLOCK).min(replicates);
                let mut counts = vec![0u64; x_grid.len()];
                let mut stat_sum = 0.0;
                for i in lo..hi {
                    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
                    rng.set_stream(i);
                    let s = stat(&mut rng);
                    stat_sum += s;
                    for (c, &level) in counts.iter_mut().zip(bound_levels) {
                        if s >= level {
                            *c += 1;
                        }
                    }
                }
                McPartial {
                    kind,
                    x_grid: x_grid.to_vec(),
                    bound_levels: bound_levels.to_vec(),
                    theoretical_probs: theoretical.to_vec(),
                    exceed_counts: counts,
                    replicates: hi - lo,
                    master_seed,
                    stat_sum,
                }
            })
            .collect()
    });
    let mut report = aggregate(&partials).expect("partials from one run always agree");
    report.wall_time_secs = start.elapsed().as_secs_f64();
    report
}

fn std_normal_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Supremum of the linear process `U(v) = v' xi` over the ball of radius
/// `r` (which equals `r ||xi||` exactly) against the level
/// `3 nu0 r z_H(x)`.
pub fn run_process_sup(cfg: &ExperimentConfig) -> Result<McReport> {
    let cfg = cfg.resolve()?;
    let p = cfg.p.unwrap();
    let r = cfg.r.unwrap();
    let t = TailParams::sub_gaussian(1.0)?;
    let e = ball_entropy(p);
    let grid = cfg.x_grid.clone().unwrap();
    let mut levels = Vec::new();
    let mut probs = Vec::new();
    for &x in &grid {
        levels.push(crate::bounds::sup_bound(r, t, e, x, SupFactor::Scalar)?);
        probs.push((-x).exp());
    }
    Ok(run_tail(
        KindTag::ProcessSup,
        &grid,
        &levels,
        &probs,
        cfg.replicates.unwrap(),
        cfg.master_seed.unwrap(),
        cfg.parallel_width,
        |rng| r * vec_norm(&std_normal_vec(rng, p as usize)),
    ))
}

/// Largest singular value of a dense matrix via the Gram eigenproblem.
fn op_norm_dense(rows: usize, cols: usize, m: &[f64]) -> f64 {
    let gram = SymMatrix::from_fn(cols, |i, j| {
        (0..rows).map(|k| m[k * cols + i] * m[k * cols + j]).sum()
    });
    match sym_eig(&gram) {
        Ok(dec) => dec
            .eigenvalues
            .last()
            .copied()
            .unwrap_or(0.0)
            .max(0.0)
            .sqrt(),
        Err(_) => f64::NAN,
    }
}

/// Weighted norm of the Gaussian-matrix process `Y(v) = M v`:
/// `sup_{||v|| <= r} ||A Y(W v)|| = r ||A M W||` against
/// `6 nu0 r z(x)` with the constrained entropy budget.
pub fn run_vector_norm(cfg: &ExperimentConfig) -> Result<McReport> {
    let cfg = cfg.resolve()?;
    let p = cfg.p.unwrap() as usize;
    let q = cfg.q.unwrap() as usize;
    let r = cfg.r.unwrap();
    let f_sq_diag = cfg.f_sq_diag.clone().unwrap_or_else(|| vec![1.0; q]);
    if f_sq_diag.len() != q {
        return Err(Error::InvalidInput(format!(
            "f_sq_diag has length {}, expected q = {q}",
            f_sq_diag.len()
        )));
    }
    // W^2 = I /\ S^{-2}
    let w_sq_diag: Vec<f64> = match &cfg.s_diag {
        None => vec![1.0; p],
        Some(s) => {
            if s.len() != p {
                return Err(Error::InvalidInput(format!(
                    "s_diag has length {}, expected p = {p}",
                    s.len()
                )));
            }
            s.iter()
                .map(|&sj| if sj.abs() < 1.0 { 1.0 } else { 1.0 / (sj * sj) })
                .collect()
        }
    };
    let e = constrained_norm_entropy(
        &SymMatrix::from_diag(&f_sq_diag),
        &SymMatrix::from_diag(&w_sq_diag),
    )?;
    let t = TailParams::sub_gaussian(1.0)?;
    let grid = cfg.x_grid.clone().unwrap();
    let mut levels = Vec::new();
    let mut probs = Vec::new();
    for &x in &grid {
        levels.push(6.0 * t.nu0 * r * zz_quantile(x, e, t, QuantileRule::Auto)?);
        probs.push((-x).exp());
    }
    let a_diag: Vec<f64> = f_sq_diag.iter().map(|v| v.sqrt()).collect();
    let w_diag: Vec<f64> = w_sq_diag.iter().map(|v| v.sqrt()).collect();
    Ok(run_tail(
        KindTag::VectorNorm,
        &grid,
        &levels,
        &probs,
        cfg.replicates.unwrap(),
        cfg.master_seed.unwrap(),
        cfg.parallel_width,
        |rng| {
            // A M W for M with i.i.d. standard Gaussian entries
            let mut m = vec![0.0; q * p];
            for (idx, v) in m.iter_mut().enumerate() {
                let row = idx / p;
                let col = idx % p;
                let z: f64 = StandardNormal.sample(rng);
                *v = a_diag[row] * z * w_diag[col];
            }
            r * op_norm_dense(q, p, &m)
        },
    ))
}

/// Norm of `xi = B_G^{1/2} eta`, `eta` standard Gaussian, against the
/// quadratic-form quantile and its tail bound.
pub fn run_quadform_tail(cfg: &ExperimentConfig) -> Result<McReport> {
    let cfg = cfg.resolve()?;
    let b_diag = cfg.b_diag.clone().unwrap();
    let g = cfg.g.unwrap_or(f64::INFINITY);
    let spec = QuadFormSpec::from_b(&SymMatrix::from_diag(&b_diag), g)?;
    let grid = cfg.x_grid.clone().unwrap();
    let mut levels = Vec::new();
    let mut probs = Vec::new();
    for &x in &grid {
        levels.push(quad_quantile(&spec, x, QuantileMode::Full)?);
        probs.push(quad_tail_bound(&spec, x)?.min(1.0));
    }
    let sqrt_b: Vec<f64> = b_diag.iter().map(|v| v.sqrt()).collect();
    Ok(run_tail(
        KindTag::QuadformTail,
        &grid,
        &levels,
        &probs,
        cfg.replicates.unwrap(),
        cfg.master_seed.unwrap(),
        cfg.parallel_width,
        |rng| {
            sqrt_b
                .iter()
                .map(|&s| {
                    let z: f64 = StandardNormal.sample(rng);
                    let v = s * z;
                    v * v
                })
                .sum::<f64>()
                .sqrt()
        },
    ))
}

/// The brute-force sub-exponential sum construction: levels
/// `q_k = sqrt(2 k log 2 + 2)`, blocks `M_k = floor(e^{q_k^2 / 2})`, and
/// weights proportional to `2^{-k}`.
pub fn subexp_levels(levels: u32) -> Result<(Vec<f64>, Vec<f64>, Vec<usize>)> {
    if levels == 0 {
        return Err(Error::InvalidLemmaInput("need at least one level".into()));
    }
    let mut q = Vec::new();
    let mut blocks = Vec::new();
    for k in 0..levels {
        let qk = (2.0 * k as f64 * std::f64::consts::LN_2 + 2.0).sqrt();
        let mk = (qk * qk / 2.0).exp().floor();
        if mk > MAX_BLOCK {
            return Err(Error::LevelTooLarge(format!(
                "level {k} needs {mk} Gaussians (cap {MAX_BLOCK})"
            )));
        }
        q.push(qk);
        blocks.push(mk as usize);
    }
    let raw: Vec<f64> = (0..levels).map(|k| 2.0f64.powi(-(k as i32))).collect();
    let total: f64 = raw.iter().sum();
    let c: Vec<f64> = raw.iter().map(|v| v / total).collect();
    Ok((c, q, blocks))
}

/// Weighted sum of maxima of Gaussian blocks against `Q1 + sqrt(2x)`; the
/// report's `stat_mean` extra carries the empirical mean for the moment
/// check.
pub fn run_subexp_sum(cfg: &ExperimentConfig) -> Result<McReport> {
    let cfg = cfg.resolve()?;
    let (c, q, blocks) = subexp_levels(cfg.levels.unwrap())?;
    let t = TailParams::sub_gaussian(1.0)?;
    let grid = cfg.x_grid.clone().unwrap();
    let mut levels = Vec::new();
    let mut probs = Vec::new();
    let mut mean_bound = 0.0;
    for &x in &grid {
        let b = crate::bounds::subexp_sum_quantile(&c, &q, t, x)?;
        levels.push(b.quantile);
        probs.push((-x).exp());
        mean_bound = b.mean_bound;
    }
    let mut report = run_tail(
        KindTag::SubexpSum,
        &grid,
        &levels,
        &probs,
        cfg.replicates.unwrap(),
        cfg.master_seed.unwrap(),
        cfg.parallel_width,
        |rng| {
            c.iter()
                .zip(&blocks)
                .map(|(&ck, &mk)| {
                    let mut best = f64::NEG_INFINITY;
                    for _ in 0..mk {
                        let z: f64 = StandardNormal.sample(rng);
                        best = best.max(z);
                    }
                    ck * best
                })
                .sum()
        },
    );
    report
        .extras
        .insert("mean_bound".to_string(), mean_bound);
    Ok(report)
}

/// Uniform-in-radius violation for the linear process over
/// `r in [r0, r0 * r_ratio]`. The drift `f(rho^{-1} r, r0) / r` is minimal
/// at `r = r0`, so a replicate violates if and only if
/// `||xi|| >= 3 nu0 rho^{-1} z_H(x + log(1/rho))`.
pub fn run_slicing(cfg: &ExperimentConfig) -> Result<McReport> {
    let cfg = cfg.resolve()?;
    let p = cfg.p.unwrap();
    let rho = cfg.rho.unwrap();
    let t = TailParams::sub_gaussian(1.0)?;
    let e = ball_entropy(p);
    let grid = cfg.x_grid.clone().unwrap();
    let mut levels = Vec::new();
    let mut probs = Vec::new();
    for &x in &grid {
        let z = zz_quantile(x + (1.0 / rho).ln(), e, t, QuantileRule::Auto)?;
        levels.push(3.0 * t.nu0 * z / rho);
        probs.push((rho / (1.0 - rho) * (-x).exp()).min(1.0));
    }
    Ok(run_tail(
        KindTag::Slicing,
        &grid,
        &levels,
        &probs,
        cfg.replicates.unwrap(),
        cfg.master_seed.unwrap(),
        cfg.parallel_width,
        |rng| vec_norm(&std_normal_vec(rng, p as usize)),
    ))
}

fn random_model(
    family: Family,
    n: usize,
    p: usize,
    sigma: f64,
    seed: u64,
) -> Result<ModelSpec> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let design = (0..n)
        .map(|_| (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let theta_star = (0..p).map(|_| rng.gen_range(-0.5..0.5)).collect();
    ModelSpec::new(family, design, theta_star, sigma)
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpansionRow {
    pub n: usize,
    pub median_fisher: f64,
    pub p95_fisher: f64,
    pub median_wilks: f64,
    pub p95_wilks: f64,
    pub median_sqrt_wilks: f64,
    pub unconverged: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpansionReport {
    pub rows: Vec<ExpansionRow>,
    /// Least-squares slope of `log(median fisher_residual)` vs `log n`.
    pub fisher_slope: f64,
    pub wilks_slope: f64,
    pub sqrt_wilks_slope: f64,
    pub replicates: u64,
    pub master_seed: u64,
    pub wall_time_secs: f64,
}

impl ExpansionReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "n,median_fisher,p95_fisher,median_wilks,p95_wilks,median_sqrt_wilks,unconverged\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.n,
                r.median_fisher,
                r.p95_fisher,
                r.median_wilks,
                r.p95_wilks,
                r.median_sqrt_wilks,
                r.unconverged
            ));
        }
        out
    }
}

fn quantile_of(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

fn lsq_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

/// Distribution of the Fisher/Wilks expansion residuals across a geometric
/// grid of sample sizes, with fitted log-log rates.
pub fn run_expansion(cfg: &ExperimentConfig) -> Result<ExpansionReport> {
    let cfg = cfg.resolve()?;
    let start = Instant::now();
    let family = cfg.family.unwrap();
    let p = cfg.p.unwrap() as usize;
    let tau = cfg.ridge_tau.unwrap();
    let n_grid = cfg.n_grid.clone().unwrap();
    let replicates = cfg.replicates.unwrap();
    let master_seed = cfg.master_seed.unwrap();
    let penalty = PenaltySpec::ridge(p, tau);

    let mut rows = Vec::new();
    for (ni, &n) in n_grid.iter().enumerate() {
        let spec = random_model(family, n, p, 1.0, derive_seed(master_seed, ni as u64, 0))?;
        let target = population_target(&spec, &penalty, FitOptions::default())?;
        let results: Vec<Option<(f64, f64, f64)>> = with_pool(cfg.parallel_width, || {
            (0..replicates)
                .into_par_iter()
                .map(|i| {
                    let seed = derive_seed(master_seed, ni as u64, i + 1);
                    let data = simulate(&spec, seed).ok()?;
                    let fit = fit_pmle(&spec, &data, &penalty, FitOptions::default()).ok()?;
                    if !fit.converged {
                        return None;
                    }
                    let d =
                        diagnostics_at(&spec, &data, &penalty, &fit.theta_hat, &target).ok()?;
                    Some((d.fisher_residual, d.wilks_residual, d.sqrt_wilks_residual))
                })
                .collect()
        });
        let unconverged = results.iter().filter(|r| r.is_none()).count() as u64;
        if unconverged as f64 > 0.01 * replicates as f64 {
            return Err(Error::ExperimentDegenerate(format!(
                "n = {n}: {unconverged}/{replicates} replicates failed to converge"
            )));
        }
        let mut fisher: Vec<f64> = results.iter().flatten().map(|r| r.0).collect();
        let mut wilks: Vec<f64> = results.iter().flatten().map(|r| r.1).collect();
        let mut sqrt_wilks: Vec<f64> = results.iter().flatten().map(|r| r.2).collect();
        fisher.sort_by(|a, b| a.partial_cmp(b).unwrap());
        wilks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sqrt_wilks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        rows.push(ExpansionRow {
            n,
            median_fisher: quantile_of(&fisher, 0.5),
            p95_fisher: quantile_of(&fisher, 0.95),
            median_wilks: quantile_of(&wilks, 0.5),
            p95_wilks: quantile_of(&wilks, 0.95),
            median_sqrt_wilks: quantile_of(&sqrt_wilks, 0.5),
            unconverged,
        });
    }

    let ln_n: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let slope_of = |pick: &dyn Fn(&ExpansionRow) -> f64| {
        let ys: Vec<f64> = rows.iter().map(|r| pick(r).max(1e-300).ln()).collect();
        lsq_slope(&ln_n, &ys)
    };
    Ok(ExpansionReport {
        fisher_slope: slope_of(&|r| r.median_fisher),
        wilks_slope: slope_of(&|r| r.median_wilks),
        sqrt_wilks_slope: slope_of(&|r| r.median_sqrt_wilks),
        rows,
        replicates,
        master_seed,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Estimator concentration: empirical `P(||D_G(theta~ - theta*_G)|| > r_G)`
/// against `3 e^{-x}`, with `r_G` from the drift condition using the sampled
/// identifiability profile.
pub fn run_concentration(cfg: &ExperimentConfig) -> Result<McReport> {
    let cfg = cfg.resolve()?;
    let start = Instant::now();
    let family = cfg.family.unwrap();
    let n = cfg.n.unwrap();
    let p = cfg.p.unwrap() as usize;
    let tau = cfg.ridge_tau.unwrap();
    let replicates = cfg.replicates.unwrap();
    let master_seed = cfg.master_seed.unwrap();
    let penalty = PenaltySpec::ridge(p, tau);
    let spec = random_model(family, n, p, 1.0, derive_seed(master_seed, u64::MAX, 0))?;
    let target = population_target(&spec, &penalty, FitOptions::default())?;
    let info = crate::models::info_matrices(&spec, &target)?;
    if info.omega != 0.0 {
        return Err(Error::InvalidInput(
            "concentration experiment currently supports canonical families (omega = 0)".into(),
        ));
    }
    let d_g_sq = info.d0_sq.add(&penalty.g_sq);
    let d_g = psd_sqrt(&d_g_sq)?;
    let qf = crate::quadform::build_quadform(&d_g_sq, &info.v0_sq, f64::INFINITY)?;

    // sampled identifiability profile b_G(r); failed evaluations surface as
    // 0, which can only make r_G larger (conservative)
    let b_spec = spec.clone();
    let b_pen = penalty.clone();
    let b_target = target.clone();
    let b_seed = derive_seed(master_seed, u64::MAX, 1);
    let bp = BoundParams {
        delta_r: Box::new(|_| 0.0),
        b_r: Box::new(move |r| {
            estimate_b_llg_at(&b_spec, &b_pen, &b_target, r, 64, b_seed).unwrap_or(0.0)
        }),
        nu0: 1.0,
        g: f64::INFINITY,
        omega: 0.0,
        a_g: 1.0,
        lambda_gp: 1.0,
        q_budget: crate::bounds::EntropyBudget { q1: 1.0, q2: 1.0 },
    };

    let grid = cfg.x_grid.clone().unwrap();
    let mut levels = Vec::new();
    let mut probs = Vec::new();
    for &x in &grid {
        levels.push(solve_r_g(x, &bp, &qf)?);
        probs.push((3.0 * (-x).exp()).min(1.0));
    }

    // per-replicate statistic ||D_G (theta~ - theta*_G)||; unconverged fits
    // count as exceedances
    let stats: Vec<f64> = with_pool(cfg.parallel_width, || {
        (0..replicates)
            .into_par_iter()
            .map(|i| {
                let seed = derive_seed(master_seed, 7, i);
                let run = || -> Result<f64> {
                    let data = simulate(&spec, seed)?;
                    let fit = fit_pmle(&spec, &data, &penalty, FitOptions::default())?;
                    if !fit.converged {
                        return Ok(f64::INFINITY);
                    }
                    Ok(vec_norm(&d_g.matvec(&vec_sub(&fit.theta_hat, &target))))
                };
                run().unwrap_or(f64::INFINITY)
            })
            .collect()
    });
    let mut counts = vec![0u64; grid.len()];
    for &s in &stats {
        for (c, &level) in counts.iter_mut().zip(&levels) {
            if s > level {
                *c += 1;
            }
        }
    }
    let rows = grid
        .iter()
        .zip(&levels)
        .zip(&probs)
        .zip(&counts)
        .map(|(((&x, &level), &prob), &count)| McRow {
            x,
            bound_level: level,
            theoretical_prob: prob,
            empirical_freq: count as f64 / replicates as f64,
            wilson_upper_99: wilson_upper_99(count, replicates),
        })
        .collect();
    Ok(McReport {
        kind: KindTag::Concentration,
        rows,
        replicates,
        master_seed,
        wall_time_secs: start.elapsed().as_secs_f64(),
        extras: BTreeMap::new(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RiskReport {
    pub empirical_mse: f64,
    pub std_error: f64,
    pub bias_sq: f64,
    pub variance_trace: f64,
    pub r_risk: f64,
    pub risk_bound: f64,
    pub replicates: u64,
    pub master_seed: u64,
    pub wall_time_secs: f64,
}

impl RiskReport {
    /// Bound check with Monte Carlo slack: the closed-form bound plus three
    /// standard errors of the empirical mean.
    pub fn within_bound(&self) -> bool {
        self.empirical_mse <= self.risk_bound + 3.0 * self.std_error
    }

    pub fn to_csv(&self) -> String {
        format!(
            "empirical_mse,std_error,bias_sq,variance_trace,r_risk,risk_bound,replicates,seed\n{},{},{},{},{},{},{},{}\n",
            self.empirical_mse,
            self.std_error,
            self.bias_sq,
            self.variance_trace,
            self.r_risk,
            self.risk_bound,
            self.replicates,
            self.master_seed
        )
    }
}

/// Empirical weighted quadratic risk of the ridge estimator (gaussian-linear)
/// against the bias/variance decomposition and its closed-form bound, with
/// `W = I`.
pub fn run_risk(cfg: &ExperimentConfig) -> Result<RiskReport> {
    let cfg = cfg.resolve()?;
    let start = Instant::now();
    let n = cfg.n.unwrap();
    let p = cfg.p.unwrap() as usize;
    let tau = cfg.ridge_tau.unwrap();
    let replicates = cfg.replicates.unwrap();
    let master_seed = cfg.master_seed.unwrap();
    let spec = random_model(
        Family::GaussianLinear,
        n,
        p,
        1.0,
        derive_seed(master_seed, u64::MAX, 2),
    )?;
    let penalty = PenaltySpec::ridge(p, tau);
    let w = SymMatrix::identity(p);
    let bp = BoundParams::with_constants(
        0.0,
        1.0,
        1.0,
        f64::INFINITY,
        0.0,
        1.0,
        1.0,
        crate::bounds::EntropyBudget { q1: 1.0, q2: 1.0 },
    );
    let decomp = risk_decomposition(&spec, &penalty, &w, &bp, 1.0)?;

    let sq_errors: Vec<f64> = with_pool(cfg.parallel_width, || {
        (0..replicates)
            .into_par_iter()
            .map(|i| {
                let seed = derive_seed(master_seed, 11, i);
                let run = || -> Result<f64> {
                    let data = simulate(&spec, seed)?;
                    let fit = fit_pmle(&spec, &data, &penalty, FitOptions::default())?;
                    let d = vec_sub(&fit.theta_hat, &spec.theta_star);
                    let wd = w.matvec(&d);
                    Ok(crate::numerics::dot(&wd, &wd))
                };
                run().unwrap_or(f64::NAN)
            })
            .collect()
    });
    if sq_errors.iter().any(|v| !v.is_finite()) {
        return Err(Error::ExperimentDegenerate(
            "a risk replicate failed to fit".into(),
        ));
    }
    let rn = replicates as f64;
    let mean = sq_errors.iter().sum::<f64>() / rn;
    let var = sq_errors.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (rn - 1.0);
    Ok(RiskReport {
        empirical_mse: mean,
        std_error: (var / rn).sqrt(),
        bias_sq: decomp.bias_sq,
        variance_trace: decomp.variance_trace,
        r_risk: decomp.r_risk,
        risk_bound: decomp.risk_bound,
        replicates,
        master_seed,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Any experiment's output, for uniform emission.
#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum RunOutput {
    Mc(McReport),
    Expansion(ExpansionReport),
    Risk(RiskReport),
}

impl RunOutput {
    pub fn to_csv(&self) -> String {
        match self {
            RunOutput::Mc(r) => r.to_csv(),
            RunOutput::Expansion(r) => r.to_csv(),
            RunOutput::Risk(r) => r.to_csv(),
        }
    }

    /// True when a theoretical bound was empirically violated.
    pub fn violated(&self) -> bool {
        match self {
            RunOutput::Mc(r) => r.any_violation(),
            // rate experiment: no probability bound to violate
            RunOutput::Expansion(_) => false,
            RunOutput::Risk(r) => !r.within_bound(),
        }
    }
}

/// Dispatches on the configured kind.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    match cfg.kind {
        KindTag::ProcessSup => run_process_sup(cfg).map(RunOutput::Mc),
        KindTag::VectorNorm => run_vector_norm(cfg).map(RunOutput::Mc),
        KindTag::QuadformTail => run_quadform_tail(cfg).map(RunOutput::Mc),
        KindTag::SubexpSum => run_subexp_sum(cfg).map(RunOutput::Mc),
        KindTag::Slicing => run_slicing(cfg).map(RunOutput::Mc),
        KindTag::Expansion => run_expansion(cfg).map(RunOutput::Expansion),
        KindTag::Concentration => run_concentration(cfg).map(RunOutput::Mc),
        KindTag::Risk => run_risk(cfg).map(RunOutput::Risk),
    }
}
