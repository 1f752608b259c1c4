//! Command-line front end: batched simulation, exact moment tables, the
//! limit covariance model, verification drivers with pass/fail exit
//! codes, and the closed-form audit report.

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ewens_pitman::asymptotics::{audit_formulas, cov_model};
use ewens_pitman::harness::{
    bootstrap_cov_se, joint_gof, limit_covariance, marginal_gof, run_batch, ExperimentConfig,
    OutputFormat, Tolerances,
};
use ewens_pitman::martingale::{increasing_process_limit_check, increasing_process_trace};
use ewens_pitman::moments::{falling_moment_sized, falling_moment_total, moment_table};
use ewens_pitman::partition::{
    enumerate_exact, simulate, ExactEnumeration, ModelParams, SeedSpec,
};
use ewens_pitman::specfun::{falling_factorial, AccuracyPolicy};
use serde::Serialize;
use serde_json::json;
use std::path::PathBuf;
use std::process::ExitCode;

const POLICY: AccuracyPolicy = AccuracyPolicy {
    abs_tol: 1e-12,
    rel_tol: 1e-12,
    max_series_terms: 10_000,
    quadrature_max_depth: 40,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
    Text,
}

#[derive(Parser)]
#[command(
    name = "ewens-pitman",
    version,
    about = "Ewens-Pitman partitions with size-proportional concentration: \
             simulation, exact moments, limit covariance, verification, audit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run replicated trajectories. json emits the batch summary at the
    /// horizon; csv emits per-replicate checkpoint rows for plotting.
    Simulate(SimulateArgs),
    /// Exact finite-n falling and central moments of the block counts.
    Exact(ExactArgs),
    /// Limit mean vector and covariance model as a json report.
    Asympt(AsymptArgs),
    /// Statistical verification drivers; exit code 0 iff every check
    /// passes.
    #[command(subcommand)]
    Verify(VerifyCommand),
    /// Grade transcribed closed forms against quadrature and exact-moment
    /// references; mismatches are findings, not failures.
    Audit(AuditArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// Discount parameter in [0, 1).
    #[arg(long)]
    alpha: f64,
    /// Concentration growth rate; the concentration is lambda n.
    #[arg(long)]
    lambda: Option<f64>,
    /// Concentration regime.
    #[arg(long, default_value = "linear")]
    regime: String,
    /// Fixed concentration, with --regime fixed.
    #[arg(long)]
    theta: Option<f64>,
}

impl ModelArgs {
    fn params(&self) -> anyhow::Result<ModelParams> {
        match self.regime.as_str() {
            "linear" => {
                let lambda = self
                    .lambda
                    .context("--lambda is required with --regime linear")?;
                Ok(ModelParams::new_linear(self.alpha, lambda)?)
            }
            "fixed" => {
                let theta = self
                    .theta
                    .context("--theta is required with --regime fixed")?;
                Ok(ModelParams::new_fixed(self.alpha, theta)?)
            }
            other => bail!("unknown regime {other:?}, expected linear or fixed"),
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Population size of every replicate.
    #[arg(long)]
    n: u64,
    /// Largest tracked block size.
    #[arg(long)]
    d: usize,
    /// Number of independent replicates.
    #[arg(long, default_value_t = 100)]
    replicates: u64,
    /// Master seed for the replicate streams.
    #[arg(long)]
    seed: u64,
    /// Snapshot time fractions, comma separated, each in (0, 1].
    #[arg(long, value_delimiter = ',', default_values_t = [1.0])]
    checkpoints: Vec<f64>,
    /// Report destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct ExactArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Number of observations.
    #[arg(long)]
    n: u64,
    /// Largest block size to tabulate.
    #[arg(long)]
    d: usize,
    /// Highest moment order.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(1..=4))]
    s: u32,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct AsymptArgs {
    /// Discount parameter in [0, 1).
    #[arg(long)]
    alpha: f64,
    /// Concentration growth rate.
    #[arg(long)]
    lambda: f64,
    /// Largest tracked block size.
    #[arg(long)]
    d: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AuditArgs {
    /// Discount parameter in [0, 1).
    #[arg(long)]
    alpha: f64,
    /// Concentration growth rate.
    #[arg(long)]
    lambda: f64,
    /// Largest tracked block size.
    #[arg(long)]
    d: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Subcommand)]
enum VerifyCommand {
    /// Strong law of the count fractions along a population grid.
    Lln(LlnArgs),
    /// Normality of the scaled count vector at the horizon.
    Clt(CltArgs),
    /// Convergence of the increasing process to the limit covariance.
    Martingale(MartingaleArgs),
    /// Exact moment formulas against set-partition enumeration.
    Moments(MomentsArgs),
}

#[derive(Args)]
struct LlnArgs {
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 2)]
    d: usize,
    /// Population sizes, comma separated, strictly increasing.
    #[arg(long = "n-grid", value_delimiter = ',', default_values_t = [1000u64, 10_000, 100_000])]
    n_grid: Vec<u64>,
    /// Snapshot fractions; ten equispaced points when absent.
    #[arg(long, value_delimiter = ',')]
    checkpoints: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Sup-deviation bound graded at the largest population size.
    #[arg(long, default_value_t = 0.02)]
    tolerance: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args)]
struct CltArgs {
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 10_000)]
    n: u64,
    #[arg(long, default_value_t = 1)]
    d: usize,
    #[arg(long, default_value_t = 2000)]
    replicates: u64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Components graded marginally, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [0usize, 1])]
    components: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args)]
struct MartingaleArgs {
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 200_000)]
    n: u64,
    #[arg(long, default_value_t = 2)]
    d: usize,
    /// First trajectory seed; seeds count up from here.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long = "seed-count", default_value_t = 20)]
    seed_count: u64,
    /// Entrywise relative bound on the increasing process per unit
    /// population.
    #[arg(long, default_value_t = 0.02)]
    tolerance: f64,
    /// Write (h, entry, value) convergence triples for the first seed.
    #[arg(long = "trace-out")]
    trace_out: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args)]
struct MomentsArgs {
    /// Largest population enumerated exhaustively.
    #[arg(long = "max-n", default_value_t = 8, value_parser = clap::value_parser!(u64).range(2..=12))]
    max_n: u64,
    /// Relative agreement demanded of every moment.
    #[arg(long, default_value_t = 1e-10)]
    tolerance: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

fn emit(out: &Option<PathBuf>, content: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => std::fs::write(path, content)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{content}"),
    }
    Ok(())
}

/// Report header: version, command, master seed, configuration echo.
fn json_report<C: Serialize, R: Serialize>(
    command: &str,
    master_seed: Option<u64>,
    config: &C,
    results: &R,
) -> anyhow::Result<String> {
    let report = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "master_seed": master_seed,
        "config": serde_json::to_value(config)?,
        "results": serde_json::to_value(results)?,
    });
    Ok(format!("{}\n", serde_json::to_string_pretty(&report)?))
}

fn csv_header<C: Serialize>(
    command: &str,
    master_seed: Option<u64>,
    config: &C,
) -> anyhow::Result<String> {
    let seed = master_seed.map_or_else(|| "none".to_string(), |s| s.to_string());
    Ok(format!(
        "# version={}\n# command={command}\n# master_seed={seed}\n# config={}\n",
        env!("CARGO_PKG_VERSION"),
        serde_json::to_string(config)?
    ))
}

fn run_simulate(args: &SimulateArgs) -> anyhow::Result<bool> {
    let params = args.model.params()?;
    let config = ExperimentConfig {
        params,
        n: args.n,
        d: args.d,
        replicates: args.replicates,
        master_seed: args.seed,
        checkpoints: args.checkpoints.clone(),
        format: match args.format {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
            Format::Text => bail!("simulate emits csv or json"),
        },
        tolerances: Tolerances::default(),
    };
    config.validate()?;
    match args.format {
        Format::Json => {
            let summary = run_batch(&config)?;
            emit(
                &args.out,
                &json_report("simulate", Some(args.seed), &config, &summary)?,
            )?;
        }
        Format::Csv => {
            let mut body = csv_header("simulate", Some(args.seed), &config)?;
            body.push_str("replicate,fraction,items,total");
            for r in 1..=args.d {
                body.push_str(&format!(",k{r}"));
            }
            body.push('\n');
            for replicate in 0..args.replicates {
                let seed = SeedSpec::replicate(args.seed, replicate);
                let track = simulate(&params, args.n, args.d, &args.checkpoints, &seed)?;
                for point in &track {
                    body.push_str(&format!(
                        "{replicate},{},{},{}",
                        point.fraction, point.items, point.counts.total
                    ));
                    for &k in &point.counts.by_size {
                        body.push_str(&format!(",{k}"));
                    }
                    body.push('\n');
                }
            }
            emit(&args.out, &body)?;
        }
        Format::Text => unreachable!(),
    }
    Ok(true)
}

fn run_exact(args: &ExactArgs) -> anyhow::Result<bool> {
    let params = args.model.params()?;
    let theta = params.theta_for(args.n);
    let mut sizes: Vec<Option<u64>> = vec![None];
    sizes.extend((1..=args.d as u64).map(Some));
    let table = moment_table(params.alpha, theta, &[args.n], &sizes, args.s)?;
    let config = json!({
        "alpha": params.alpha,
        "theta": theta,
        "n": args.n,
        "d": args.d,
        "max_order": args.s,
    });
    match args.format {
        Format::Json => emit(&args.out, &json_report("exact", None, &config, &table)?)?,
        Format::Csv => {
            let mut body = csv_header("exact", None, &config)?;
            body.push_str(&table.to_csv());
            emit(&args.out, &body)?;
        }
        Format::Text => bail!("exact emits csv or json"),
    }
    Ok(true)
}

fn run_asympt(args: &AsymptArgs) -> anyhow::Result<bool> {
    let model = cov_model(args.d, args.alpha, args.lambda, &POLICY)?;
    let config = json!({ "alpha": args.alpha, "lambda": args.lambda, "d": args.d });
    emit(&args.out, &json_report("asympt", None, &config, &model)?)?;
    Ok(true)
}

fn run_audit(args: &AuditArgs) -> anyhow::Result<bool> {
    let report = audit_formulas(args.d, args.alpha, args.lambda, &POLICY)?;
    let config = json!({ "alpha": args.alpha, "lambda": args.lambda, "d": args.d });
    match args.format {
        Format::Text => {
            let mut body = format!(
                "version {}  command audit  master_seed none\nconfig {}\n\n",
                env!("CARGO_PKG_VERSION"),
                serde_json::to_string(&config)?
            );
            body.push_str(&report.to_text());
            emit(&args.out, &body)?;
        }
        Format::Json => emit(&args.out, &json_report("audit", None, &config, &report)?)?,
        Format::Csv => bail!("audit emits text or json"),
    }
    Ok(true)
}

#[derive(Serialize)]
struct LlnVerdict {
    component: usize,
    final_sup_deviation: f64,
    pass: bool,
}

fn run_lln(args: &LlnArgs) -> anyhow::Result<bool> {
    let params = ModelParams::new_linear(args.alpha, args.lambda)?;
    let checkpoints = args
        .checkpoints
        .clone()
        .unwrap_or_else(|| (1..=10).map(|t| t as f64 / 10.0).collect());
    let report =
        ewens_pitman::harness::slln_diagnostic(&params, args.d, &args.n_grid, &checkpoints, args.seed)?;
    let last_n = *args.n_grid.last().expect("validated nonempty");
    let verdicts: Vec<LlnVerdict> = (0..=args.d)
        .map(|component| {
            let final_sup = report
                .rows
                .iter()
                .find(|row| row.n == last_n && row.component == component)
                .expect("diagnostic covers every component at every n")
                .sup_deviation;
            LlnVerdict {
                component,
                final_sup_deviation: final_sup,
                pass: final_sup <= args.tolerance,
            }
        })
        .collect();
    let pass = verdicts.iter().all(|v| v.pass);
    let config = json!({
        "alpha": args.alpha, "lambda": args.lambda, "d": args.d,
        "n_grid": args.n_grid, "checkpoints": checkpoints,
        "tolerance": args.tolerance,
    });
    let results = json!({ "rows": report.rows, "verdicts": verdicts, "pass": pass });
    match args.format {
        Format::Json => emit(
            &args.out,
            &json_report("verify lln", Some(args.seed), &config, &results)?,
        )?,
        Format::Csv => {
            let mut body = csv_header("verify lln", Some(args.seed), &config)?;
            body.push_str("n,component,sup_deviation\n");
            for row in &report.rows {
                body.push_str(&format!(
                    "{},{},{:.17e}\n",
                    row.n, row.component, row.sup_deviation
                ));
            }
            emit(&args.out, &body)?;
        }
        Format::Text => {
            let mut body = String::new();
            for row in &report.rows {
                body.push_str(&format!(
                    "n={:<8} component={} sup|K/n - m|={:.5}\n",
                    row.n, row.component, row.sup_deviation
                ));
            }
            for v in &verdicts {
                body.push_str(&format!(
                    "component {} final deviation {:.5} tolerance {} {}\n",
                    v.component,
                    v.final_sup_deviation,
                    args.tolerance,
                    if v.pass { "PASS" } else { "FAIL" }
                ));
            }
            emit(&args.out, &body)?;
        }
    }
    Ok(pass)
}

#[derive(Serialize)]
struct CovVerdict {
    row: usize,
    col: usize,
    empirical: f64,
    limit: f64,
    allowed: f64,
    pass: bool,
}

fn run_clt(args: &CltArgs) -> anyhow::Result<bool> {
    let params = ModelParams::new_linear(args.alpha, args.lambda)?;
    let tolerances = Tolerances::default();
    let config = ExperimentConfig {
        params,
        n: args.n,
        d: args.d,
        replicates: args.replicates,
        master_seed: args.seed,
        checkpoints: vec![1.0],
        format: OutputFormat::Json,
        tolerances,
    };
    config.validate()?;
    let sigma = limit_covariance(&config, &POLICY)?;
    let summary = run_batch(&config)?;
    let mut gofs = Vec::new();
    for &component in &args.components {
        gofs.push(marginal_gof(
            &summary,
            component,
            &sigma,
            tolerances.ks_factor,
        )?);
    }
    let joint = joint_gof(&summary, &sigma, tolerances.ks_factor)?;
    let se = bootstrap_cov_se(&summary, 200, args.seed)?;
    let mut cov_verdicts = Vec::new();
    for row in 0..=args.d {
        for col in row..=args.d {
            let empirical = summary.empirical_cov[row][col];
            let limit = sigma[(row, col)];
            let allowed = (tolerances.cov_rel * limit.abs())
                .max(tolerances.cov_se_multiplier * se[(row, col)]);
            cov_verdicts.push(CovVerdict {
                row,
                col,
                empirical,
                limit,
                allowed,
                pass: (empirical - limit).abs() <= allowed,
            });
        }
    }
    let pass =
        gofs.iter().all(|g| g.pass) && joint.pass && cov_verdicts.iter().all(|c| c.pass);
    let results = json!({
        "marginal": gofs, "joint": joint, "covariance": cov_verdicts, "pass": pass,
    });
    match args.format {
        Format::Json => emit(
            &args.out,
            &json_report("verify clt", Some(args.seed), &config, &results)?,
        )?,
        Format::Csv => {
            let mut body = csv_header("verify clt", Some(args.seed), &config)?;
            body.push_str("check,detail,statistic,threshold,pass\n");
            for (g, &component) in gofs.iter().zip(&args.components) {
                body.push_str(&format!(
                    "marginal,component {component},{:.6e},{:.6e},{}\n",
                    g.statistic_value, g.threshold, g.pass
                ));
            }
            body.push_str(&format!(
                "joint,{},{:.6e},{:.6e},{}\n",
                joint.reference, joint.statistic_value, joint.threshold, joint.pass
            ));
            for c in &cov_verdicts {
                body.push_str(&format!(
                    "covariance,entry {}:{},{:.6e},{:.6e},{}\n",
                    c.row,
                    c.col,
                    (c.empirical - c.limit).abs(),
                    c.allowed,
                    c.pass
                ));
            }
            emit(&args.out, &body)?;
        }
        Format::Text => {
            let mut body = String::new();
            for (g, &component) in gofs.iter().zip(&args.components) {
                body.push_str(&format!(
                    "marginal component {component}: KS {:.5} threshold {:.5} {}\n",
                    g.statistic_value,
                    g.threshold,
                    if g.pass { "PASS" } else { "FAIL" }
                ));
            }
            body.push_str(&format!(
                "joint vs {}: KS {:.5} threshold {:.5} {}\n",
                joint.reference,
                joint.statistic_value,
                joint.threshold,
                if joint.pass { "PASS" } else { "FAIL" }
            ));
            for c in &cov_verdicts {
                body.push_str(&format!(
                    "covariance ({},{}): empirical {:.5} limit {:.5} allowed {:.5} {}\n",
                    c.row,
                    c.col,
                    c.empirical,
                    c.limit,
                    c.allowed,
                    if c.pass { "PASS" } else { "FAIL" }
                ));
            }
            emit(&args.out, &body)?;
        }
    }
    Ok(pass)
}

fn run_martingale(args: &MartingaleArgs) -> anyhow::Result<bool> {
    let params = ModelParams::new_linear(args.alpha, args.lambda)?;
    let seeds: Vec<u64> = (args.seed..args.seed + args.seed_count).collect();
    let report = increasing_process_limit_check(
        &params,
        args.n,
        args.d,
        &seeds,
        args.tolerance,
        &POLICY,
    )?;
    let identity_ok = report.rows.iter().all(|row| row.identity_gap <= 1e-10);
    let needed = seeds.len() - seeds.len() / 10;
    let pass = report.pass_count() >= needed && identity_ok;
    if let Some(trace_path) = &args.trace_out {
        let checkpoints: Vec<u64> = (1..=20).map(|t| t * args.n / 20).collect();
        let trace = increasing_process_trace(&params, args.n, args.d, args.seed, &checkpoints)?;
        let config = json!({
            "alpha": args.alpha, "lambda": args.lambda, "n": args.n, "d": args.d,
        });
        let mut body = csv_header("verify martingale trace", Some(args.seed), &config)?;
        body.push_str("h,entry,value\n");
        for (h, matrix) in &trace {
            for row in 0..=args.d {
                for col in row..=args.d {
                    body.push_str(&format!("{h},{row}:{col},{:.17e}\n", matrix[(row, col)]));
                }
            }
        }
        emit(&Some(trace_path.clone()), &body)?;
    }
    let config = json!({
        "alpha": args.alpha, "lambda": args.lambda, "n": args.n, "d": args.d,
        "seeds": seeds, "tolerance": args.tolerance,
    });
    let results = json!({
        "rows": report.rows, "pass_count": report.pass_count(),
        "identity_ok": identity_ok, "pass": pass,
    });
    match args.format {
        Format::Json => emit(
            &args.out,
            &json_report("verify martingale", Some(args.seed), &config, &results)?,
        )?,
        Format::Csv => {
            let mut body = csv_header("verify martingale", Some(args.seed), &config)?;
            body.push_str("seed,max_rel_deviation,sup_integrand_deviation,identity_gap,pass\n");
            for row in &report.rows {
                body.push_str(&format!(
                    "{},{:.6e},{:.6e},{:.6e},{}\n",
                    row.seed,
                    row.max_rel_deviation,
                    row.sup_integrand_deviation,
                    row.identity_gap,
                    row.pass
                ));
            }
            emit(&args.out, &body)?;
        }
        Format::Text => {
            let mut body = String::new();
            for row in &report.rows {
                body.push_str(&format!(
                    "seed {:<4} rel deviation {:.5} integrand sup {:.5} identity gap {:.2e} {}\n",
                    row.seed,
                    row.max_rel_deviation,
                    row.sup_integrand_deviation,
                    row.identity_gap,
                    if row.pass { "PASS" } else { "FAIL" }
                ));
            }
            body.push_str(&format!(
                "{} of {} seeds within {}, identity {}: {}\n",
                report.pass_count(),
                report.rows.len(),
                args.tolerance,
                if identity_ok { "exact" } else { "broken" },
                if pass { "PASS" } else { "FAIL" }
            ));
            emit(&args.out, &body)?;
        }
    }
    Ok(pass)
}

#[derive(Serialize, Clone)]
struct MomentVerdict {
    n: u64,
    alpha: f64,
    lambda: f64,
    size: Option<u64>,
    order: u32,
    formula: f64,
    enumeration: f64,
    rel_deviation: f64,
}

fn run_moments(args: &MomentsArgs) -> anyhow::Result<bool> {
    let alphas = [0.0, 0.3, 0.7];
    let lambdas = [0.5, 1.0, 2.0];
    let sizes: [Option<u64>; 4] = [None, Some(1), Some(2), Some(3)];
    let mut worst: Option<MomentVerdict> = None;
    let mut rows = Vec::new();
    for n in 2..=args.max_n {
        for &alpha in &alphas {
            for &lambda in &lambdas {
                let theta = lambda * n as f64;
                let enumeration = enumerate_exact(alpha, theta, n)?;
                for &size in &sizes {
                    for order in 1..=4u32 {
                        let formula = match size {
                            None => falling_moment_total(alpha, theta, n, order)?,
                            Some(r) => falling_moment_sized(alpha, theta, n, r, order)?,
                        };
                        let brute = enumeration.expect(|shape| {
                            let count = match size {
                                None => shape.len() as u64,
                                Some(r) => ExactEnumeration::count_of_size(shape, r),
                            };
                            falling_factorial(count, order as u64) as f64
                        });
                        let rel = (formula - brute).abs() / brute.abs().max(1.0);
                        let verdict = MomentVerdict {
                            n,
                            alpha,
                            lambda,
                            size,
                            order,
                            formula,
                            enumeration: brute,
                            rel_deviation: rel,
                        };
                        if worst
                            .as_ref()
                            .is_none_or(|w| verdict.rel_deviation > w.rel_deviation)
                        {
                            worst = Some(verdict.clone());
                        }
                        rows.push(verdict);
                    }
                }
            }
        }
    }
    let worst = worst.expect("grid is nonempty");
    let pass = worst.rel_deviation <= args.tolerance;
    let config = json!({ "max_n": args.max_n, "tolerance": args.tolerance });
    match args.format {
        Format::Json => {
            let results = json!({ "rows": rows, "worst": worst, "pass": pass });
            emit(
                &args.out,
                &json_report("verify moments", None, &config, &results)?,
            )?;
        }
        Format::Csv => {
            let mut body = csv_header("verify moments", None, &config)?;
            body.push_str("n,alpha,lambda,size,order,formula,enumeration,rel_deviation\n");
            for row in &rows {
                let size = row
                    .size
                    .map_or_else(|| "total".to_string(), |r| r.to_string());
                body.push_str(&format!(
                    "{},{},{},{size},{},{:.17e},{:.17e},{:.3e}\n",
                    row.n, row.alpha, row.lambda, row.order, row.formula, row.enumeration,
                    row.rel_deviation
                ));
            }
            emit(&args.out, &body)?;
        }
        Format::Text => {
            let body = format!(
                "{} comparisons across n<={}, worst relative deviation {:.3e} \
                 (n={}, alpha={}, lambda={}, size={}, order={}) tolerance {:.1e} {}\n",
                rows.len(),
                args.max_n,
                worst.rel_deviation,
                worst.n,
                worst.alpha,
                worst.lambda,
                worst
                    .size
                    .map_or_else(|| "total".to_string(), |r| r.to_string()),
                worst.order,
                args.tolerance,
                if pass { "PASS" } else { "FAIL" }
            );
            emit(&args.out, &body)?;
        }
    }
    Ok(pass)
}

fn run(cli: &Cli) -> anyhow::Result<bool> {
    match &cli.command {
        Command::Simulate(args) => run_simulate(args),
        Command::Exact(args) => run_exact(args),
        Command::Asympt(args) => run_asympt(args),
        Command::Verify(VerifyCommand::Lln(args)) => run_lln(args),
        Command::Verify(VerifyCommand::Clt(args)) => run_clt(args),
        Command::Verify(VerifyCommand::Martingale(args)) => run_martingale(args),
        Command::Verify(VerifyCommand::Moments(args)) => run_moments(args),
        Command::Audit(args) => run_audit(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(error) => {
            eprintln!("error: {error:#}");
            ExitCode::from(2)
        }
    }
}
