//! Command-line front end for the bound calculators and the Monte Carlo
//! harness.
//!
//! Exit codes: 0 on success, 1 on invalid input or I/O failure, 2 when an
//! experiment ran to completion but a theoretical bound was empirically
//! violated. Errors are emitted as one JSON object per line on stderr.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use pmle_lab::bounds::{
    ball_entropy, penalized_entropy, vector_norm_entropy, zz_quantile, QuantileRule, TailParams,
};
use pmle_lab::mcharness::{run, ExperimentConfig, KindTag, RunOutput};
use pmle_lab::models::ModelSpec;
use pmle_lab::numerics::SymMatrix;
use pmle_lab::pmle::{fit_pmle, FitOptions, PenaltySpec};
use pmle_lab::quadform::{
    effdim_block, effdim_inverse, effdim_sobolev, quad_quantile, quad_tail_bound, QuadFormSpec,
    QuantileMode,
};
use pmle_lab::Error;

#[derive(Parser)]
#[command(
    name = "pmle-lab",
    version,
    about = "Closed-form deviation bounds for random processes and penalized estimators, \
             with seeded Monte Carlo validation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Entropy budgets and sub-Gaussian quantiles.
    Bounds(BoundsArgs),
    /// Effective dimension of a penalized design.
    Effdim(EffdimArgs),
    /// Quadratic-form quantiles and tail bounds.
    Quadform(QuadformArgs),
    /// Fit a penalized maximum-likelihood estimator.
    PmleFit(PmleFitArgs),
    /// Run a Monte Carlo experiment.
    Mc(McArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum EntropyKind {
    /// Euclidean ball of dimension p.
    Ball,
    /// Image of the ball under a q x p Gaussian matrix process.
    VectorNorm,
    /// Penalized budget for B = diag(b_diag).
    Penalized,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long, value_enum)]
    entropy: EntropyKind,
    /// Dimension of the parameter ball.
    #[arg(long, default_value_t = 1)]
    p: u32,
    /// Output dimension (vector-norm only).
    #[arg(long)]
    q: Option<u32>,
    /// Diagonal of B, comma-separated (penalized only).
    #[arg(long, value_delimiter = ',')]
    b_diag: Option<Vec<f64>>,
    /// Deviation level; must be at least 1/2.
    #[arg(long, default_value_t = 1.0)]
    x: f64,
    /// Sub-exponential threshold; omit for the pure sub-Gaussian case.
    #[arg(long)]
    g: Option<f64>,
    /// Variance proxy scale.
    #[arg(long, default_value_t = 1.0)]
    nu0: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum EffdimExample {
    Block,
    Sobolev,
    Inverse,
}

#[derive(Args)]
struct EffdimArgs {
    #[arg(long, value_enum)]
    example: EffdimExample,
    /// Number of coordinates (sobolev, inverse) or penalized coordinates
    /// p1 (block).
    #[arg(long, default_value_t = 10)]
    p: u32,
    /// Free coordinates (block only).
    #[arg(long, default_value_t = 0)]
    p0: u32,
    /// Smoothness scale (sobolev).
    #[arg(long = "L", default_value_t = 1.0)]
    l: f64,
    /// Smoothness exponent; must exceed 1/2 (sobolev).
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Noise level.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Penalty strength (block, inverse).
    #[arg(long, default_value_t = 1.0)]
    g: f64,
    /// Singular values, comma-separated (inverse).
    #[arg(long, value_delimiter = ',')]
    singular_values: Option<Vec<f64>>,
}

#[derive(Args)]
struct QuadformArgs {
    /// Diagonal of B_G, comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    b_diag: Vec<f64>,
    /// Sub-exponential threshold; omit for the Gaussian regime.
    #[arg(long)]
    g: Option<f64>,
    /// Deviation level.
    #[arg(long, default_value_t = 1.0)]
    x: f64,
}

#[derive(Args)]
struct PmleFitArgs {
    /// Model description (JSON file with family, design, theta_star,
    /// noise_sigma).
    #[arg(long)]
    model: PathBuf,
    /// Responses as CSV (index,response). Omit to simulate from the model.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Seed for simulation when no data file is given.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ridge penalty strength tau (G^2 = tau I).
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
}

#[derive(Args)]
struct McArgs {
    /// Experiment kind; must match the config when both are given.
    #[arg(long, value_enum)]
    kind: Option<KindTagArg>,
    /// Experiment configuration (JSON). Omitted fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Replicate count; overrides the config.
    #[arg(long)]
    replicates: Option<u64>,
    /// Output directory for report.csv, report.json, and
    /// effective_config.json. Defaults to stdout-only.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindTagArg {
    ProcessSup,
    VectorNorm,
    QuadformTail,
    SubexpSum,
    Slicing,
    Expansion,
    Concentration,
    Risk,
}

impl From<KindTagArg> for KindTag {
    fn from(k: KindTagArg) -> KindTag {
        match k {
            KindTagArg::ProcessSup => KindTag::ProcessSup,
            KindTagArg::VectorNorm => KindTag::VectorNorm,
            KindTagArg::QuadformTail => KindTag::QuadformTail,
            KindTagArg::SubexpSum => KindTag::SubexpSum,
            KindTagArg::Slicing => KindTag::Slicing,
            KindTagArg::Expansion => KindTag::Expansion,
            KindTagArg::Concentration => KindTag::Concentration,
            KindTagArg::Risk => KindTag::Risk,
        }
    }
}

fn emit_error(err: &Error) {
    let line = json!({
        "error": format!("{err}"),
        "kind": match err {
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            _ => "invalid-input",
        },
    });
    eprintln!("{line}");
}

fn cmd_bounds(args: &BoundsArgs) -> Result<(), Error> {
    let t = match args.g {
        Some(g) => TailParams::new(args.nu0, g)?,
        None => TailParams::sub_gaussian(args.nu0)?,
    };
    let e = match args.entropy {
        EntropyKind::Ball => ball_entropy(args.p),
        EntropyKind::VectorNorm => {
            let q = args.q.ok_or_else(|| {
                Error::InvalidInput("--q is required for vector-norm entropy".into())
            })?;
            vector_norm_entropy(args.p, q)
        }
        EntropyKind::Penalized => {
            let diag = args.b_diag.as_deref().ok_or_else(|| {
                Error::InvalidInput("--b-diag is required for penalized entropy".into())
            })?;
            penalized_entropy(&SymMatrix::from_diag(diag))?
        }
    };
    let z = zz_quantile(args.x, e, t, QuantileRule::Auto)?;
    let out = json!({
        "q1": e.q1,
        "q2": e.q2,
        "x": args.x,
        "z": z,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn cmd_effdim(args: &EffdimArgs) -> Result<(), Error> {
    let value = match args.example {
        EffdimExample::Block => {
            effdim_block(args.p0, args.p, args.g, args.sigma)
        }
        EffdimExample::Sobolev => effdim_sobolev(args.p, args.l, args.beta, args.sigma)?,
        EffdimExample::Inverse => {
            let sv = args.singular_values.as_deref().ok_or_else(|| {
                Error::InvalidInput("--singular-values is required for the inverse example".into())
            })?;
            effdim_inverse(sv, args.sigma, &vec![args.g; sv.len()])?
        }
    };
    println!("{value:.6}");
    Ok(())
}

fn cmd_quadform(args: &QuadformArgs) -> Result<(), Error> {
    let g = args.g.unwrap_or(f64::INFINITY);
    let spec = QuadFormSpec::from_b(&SymMatrix::from_diag(&args.b_diag), g)?;
    let out = json!({
        "p_g": spec.p_g,
        "v_g": spec.v_g,
        "lambda_g": spec.lambda_g,
        "x_c": spec.x_c,
        "gamma_c": spec.gamma_c,
        "y_c": spec.y_c,
        "x": args.x,
        "quantile_full": quad_quantile(&spec, args.x, QuantileMode::Full)?,
        "quantile_simple": quad_quantile(&spec, args.x, QuantileMode::Simple)?,
        "tail_bound": quad_tail_bound(&spec, args.x)?,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn cmd_pmle_fit(args: &PmleFitArgs) -> Result<(), Error> {
    let spec: ModelSpec = serde_json::from_str(&std::fs::read_to_string(&args.model)?)?;
    spec.validate()?;
    let data = match &args.data {
        Some(path) => pmle_lab::models::Dataset::from_csv(&std::fs::read_to_string(path)?, args.seed)?,
        None => pmle_lab::models::simulate(&spec, args.seed)?,
    };
    let penalty = if args.ridge > 0.0 {
        PenaltySpec::ridge(spec.p(), args.ridge)
    } else {
        PenaltySpec::none(spec.p())
    };
    let fit = fit_pmle(&spec, &data, &penalty, FitOptions::default())?;
    println!("{}", serde_json::to_string_pretty(&fit)?);
    if !fit.converged {
        return Err(Error::NotConverged("fit did not converge".into()));
    }
    Ok(())
}

fn cmd_mc(args: &McArgs) -> Result<bool, Error> {
    let mut cfg = match &args.config {
        Some(path) => serde_json::from_str::<ExperimentConfig>(&std::fs::read_to_string(path)?)?,
        None => {
            let kind = args.kind.ok_or_else(|| {
                Error::InvalidInput("either --kind or --config is required".into())
            })?;
            ExperimentConfig::new(kind.into())
        }
    };
    if let Some(kind) = args.kind {
        let kind: KindTag = kind.into();
        if kind != cfg.kind {
            return Err(Error::InvalidInput(format!(
                "--kind {} disagrees with config kind {}",
                kind.name(),
                cfg.kind.name()
            )));
        }
    }
    if let Some(seed) = args.seed {
        cfg.master_seed = Some(seed);
    }
    if let Some(reps) = args.replicates {
        cfg.replicates = Some(reps);
    }
    if cfg.parallel_width.is_none() {
        if let Ok(threads) = std::env::var("PMLE_LAB_THREADS") {
            let width: usize = threads.parse().map_err(|_| {
                Error::InvalidInput(format!("PMLE_LAB_THREADS = {threads:?} is not a number"))
            })?;
            cfg.parallel_width = Some(width);
        }
    }
    let effective = cfg.resolve()?;
    let output = run(&effective)?;
    let report_json = match &output {
        RunOutput::Mc(r) => serde_json::to_string_pretty(r)?,
        RunOutput::Expansion(r) => serde_json::to_string_pretty(r)?,
        RunOutput::Risk(r) => serde_json::to_string_pretty(r)?,
    };
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.csv"), output.to_csv())?;
        std::fs::write(dir.join("report.json"), &report_json)?;
        std::fs::write(
            dir.join("effective_config.json"),
            serde_json::to_string_pretty(&effective)?,
        )?;
    }
    println!("{report_json}");
    Ok(output.violated())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Bounds(args) => cmd_bounds(args).map(|()| false),
        Command::Effdim(args) => cmd_effdim(args).map(|()| false),
        Command::Quadform(args) => cmd_quadform(args).map(|()| false),
        Command::PmleFit(args) => cmd_pmle_fit(args).map(|()| false),
        Command::Mc(args) => cmd_mc(args),
    };
    match outcome {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("{}", json!({"error": "bound violated", "kind": "bound-violated"}));
            ExitCode::from(2)
        }
        Err(err) => {
            emit_error(&err);
            ExitCode::from(1)
        }
    }
}
