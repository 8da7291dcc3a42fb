use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use lamb_core::miner::{neighborhoods_table, sets_table, NeighborhoodRecord, SetRecord};
use lamb_core::simlab::StudyConfig;
use lamb_core::{
    dedup, fit_empirical, fit_gamma, mine_all, neighborhood, standardize, theta_matrix, BinaryDataset, FitDocument,
    FitMethod, FitOptions, GammaPrior, ThresholdFit,
};

mod output;

use output::write_atomic;

#[derive(Parser)]
#[command(name = "lamb", version, about = "Latent association mining for binary data")]
struct Cli {
    /// Worker threads (defaults to all cores; 1 runs serially).
    #[arg(long, global = true, env = "LAMB_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit per-sample and per-variable threshold parameters.
    Estimate(EstimateArgs),
    /// Grow every seed into a coherent set and report the distinct sets.
    Mine(MineArgs),
    /// One search step from each target: which variables associate with it.
    Neighborhood(NeighborhoodArgs),
    /// Run a simulation study from a key=value config file.
    Simulate(SimulateArgs),
    /// Convert between input formats.
    Convert(ConvertArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum InputFormat {
    Transactions,
    Csv,
    Triplets,
}

#[derive(Copy, Clone, Debug, PartialEq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum OutputFormat {
    Json,
    Table,
    Csv,
}

#[derive(Args, Clone)]
struct InputArgs {
    /// Binary data file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "transactions")]
    format: InputFormat,
}

#[derive(Args, Clone)]
struct SinkArgs {
    /// Report destination; written atomically.
    #[arg(long, required_unless_present = "stdout")]
    output: Option<PathBuf>,
    /// Print the report to stdout instead of (or as well as) a file.
    #[arg(long)]
    stdout: bool,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// `empirical` or `gamma:ZETA,BETA`.
    #[arg(long, default_value = "empirical")]
    prior: String,
    /// Clamp for fitted thresholds; defaults to 1/(2n).
    #[arg(long)]
    eps_theta: Option<f64>,
    /// Reuse a fit exported by `estimate`.
    #[arg(long)]
    fit: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    input: InputArgs,
    /// `empirical` or `gamma:ZETA,BETA`.
    #[arg(long, default_value = "empirical")]
    prior: String,
    /// Stop when no parameter moves by more than this in a sweep.
    #[arg(long, default_value_t = lamb_core::threshold::DEFAULT_TOL)]
    tol: f64,
    /// Maximum alternating sweeps.
    #[arg(long, default_value_t = lamb_core::threshold::DEFAULT_MAX_ITER)]
    fit_max_iter: usize,
    #[command(flatten)]
    sink: SinkArgs,
}

#[derive(Args)]
struct MineArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = lamb_core::miner::DEFAULT_FDR)]
    fdr: f64,
    #[arg(long, default_value_t = lamb_core::miner::DEFAULT_MAX_ITER)]
    max_iter: usize,
    /// `all` or a comma-separated list of column labels.
    #[arg(long, default_value = "all")]
    seeds: String,
    /// Merge sets whose Jaccard overlap reaches this value (1 merges only identical sets).
    #[arg(long, default_value_t = 1.0)]
    jaccard: f64,
    #[arg(long, value_enum, default_value = "json")]
    output_format: OutputFormat,
    #[command(flatten)]
    sink: SinkArgs,
}

#[derive(Args)]
struct NeighborhoodArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Target label, or comma-separated labels for a set; repeat for several targets.
    #[arg(long = "target", required = true)]
    targets: Vec<String>,
    #[arg(long, default_value_t = lamb_core::miner::DEFAULT_FDR)]
    fdr: f64,
    #[arg(long, value_enum, default_value = "json")]
    output_format: OutputFormat,
    #[command(flatten)]
    sink: SinkArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// Study config (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Also write per-method means here.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[command(flatten)]
    sink: SinkArgs,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ConvertTarget {
    Transactions,
    Csv,
    Triplets,
}

#[derive(Args)]
struct ConvertArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_enum)]
    to: ConvertTarget,
    #[command(flatten)]
    sink: SinkArgs,
}

fn load(input: &InputArgs) -> Result<BinaryDataset> {
    let ds = match input.format {
        InputFormat::Transactions => BinaryDataset::load_transactions(&input.input),
        InputFormat::Csv => BinaryDataset::load_dense_csv(&input.input, None, None),
        InputFormat::Triplets => BinaryDataset::load_triplets(&input.input),
    };
    ds.with_context(|| format!("reading {}", input.input.display()))
}

#[derive(Debug, Clone, Copy, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Prior {
    Empirical,
    Gamma { zeta: f64, beta: f64 },
}

fn parse_prior(s: &str) -> Result<Prior> {
    if s == "empirical" {
        return Ok(Prior::Empirical);
    }
    let Some(rest) = s.strip_prefix("gamma:") else {
        bail!("prior must be `empirical` or `gamma:ZETA,BETA`, got `{s}`");
    };
    let parts: Vec<&str> = rest.split(',').collect();
    let [z, b] = parts[..] else {
        bail!("gamma prior needs two values, got `{rest}`");
    };
    let zeta: f64 = z.trim().parse().with_context(|| format!("bad gamma shape `{z}`"))?;
    let beta: f64 = b.trim().parse().with_context(|| format!("bad gamma rate `{b}`"))?;
    GammaPrior::new(zeta, beta)?;
    Ok(Prior::Gamma { zeta, beta })
}

struct Prepared {
    ds: BinaryDataset,
    removed: Vec<String>,
    fit: ThresholdFit<f64>,
}

fn fit_data(ds: &BinaryDataset, prior: Prior, opts: &FitOptions<f64>) -> Result<ThresholdFit<f64>> {
    let fit = match prior {
        Prior::Empirical => fit_empirical::<f64>(ds, opts)?,
        Prior::Gamma { zeta, beta } => {
            let p = GammaPrior::new(zeta, beta)?;
            let fit = fit_gamma::<f64>(ds, &p)?;
            let max_alpha = fit.alpha.iter().copied().fold(0.0, f64::max);
            for w in p.warnings(max_alpha) {
                eprintln!("warning: {w}");
            }
            fit
        }
    };
    if !fit.converged {
        eprintln!(
            "warning: threshold fit did not converge in {} iterations (residual {:.3e})",
            fit.iterations, fit.constraint_residual
        );
    }
    Ok(fit)
}

fn prepare(input: &InputArgs, model: &ModelArgs) -> Result<Prepared> {
    let raw = load(input)?;
    let (ds, removed) = raw.filter_degenerate();
    if !removed.is_empty() {
        eprintln!("note: dropped {} column(s) that are all 0 or all 1", removed.len());
    }
    if ds.d() == 0 {
        return Err(lamb_core::Error::NoInformativeColumns.into());
    }
    let fit = match &model.fit {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            FitDocument::from_json(&text)?.into_fit::<f64>(&ds).with_context(|| format!("applying fit {}", path.display()))?
        }
        None => fit_data(&ds, parse_prior(&model.prior)?, &FitOptions::default())?,
    };
    Ok(Prepared { ds, removed, fit })
}

fn fit_summary(fit: &ThresholdFit<f64>) -> serde_json::Value {
    json!({
        "method": fit.method,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "residual": fit.constraint_residual,
    })
}

fn eps_for(model: &ModelArgs, n: usize) -> f64 {
    model.eps_theta.unwrap_or_else(|| lamb_core::default_eps_theta(n))
}

fn emit(sink: &SinkArgs, text: &str) -> Result<()> {
    if let Some(path) = &sink.output {
        write_atomic(path, text)?;
    }
    if sink.stdout {
        print!("{text}");
    }
    Ok(())
}

fn cmd_estimate(a: &EstimateArgs) -> Result<()> {
    let raw = load(&a.input)?;
    let (ds, removed) = raw.filter_degenerate();
    if ds.d() == 0 {
        return Err(lamb_core::Error::NoInformativeColumns.into());
    }
    let prior = parse_prior(&a.prior)?;
    let opts = FitOptions { tol: a.tol, max_iter: a.fit_max_iter, ..FitOptions::default() };
    let fit = fit_data(&ds, prior, &opts)?;
    let mut doc = serde_json::to_value(FitDocument::from_fit(&fit, ds.col_labels()))?;
    doc["config"] = json!({
        "command": "estimate",
        "input": a.input.input,
        "input_format": a.input.format,
        "prior": prior,
        "tol": a.tol,
        "max_iter": a.fit_max_iter,
    });
    doc["removed_columns"] = json!(removed);
    emit(&a.sink, &(serde_json::to_string_pretty(&doc)? + "\n"))
}

fn resolve_seeds(ds: &BinaryDataset, seeds: &str) -> Result<Vec<usize>> {
    if seeds.trim() == "all" {
        return Ok((0..ds.d()).collect());
    }
    let labels: Vec<&str> = seeds.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if labels.is_empty() {
        bail!("no seeds given");
    }
    Ok(ds.resolve_labels(&labels)?)
}

fn cmd_mine(a: &MineArgs) -> Result<()> {
    let p = prepare(&a.input, &a.model)?;
    let eps = eps_for(&a.model, p.ds.n());
    let seeds = resolve_seeds(&p.ds, &a.seeds)?;
    let u = standardize(&p.ds, &theta_matrix(&p.fit, eps)?)?;
    let found = mine_all(&u, &seeds, a.fdr, a.max_iter)?;
    let sets = dedup(&found, a.jaccard)?;
    let labels = p.ds.col_labels();
    let records: Vec<SetRecord> = sets.iter().map(|s| SetRecord::from_result(s, labels)).collect();
    let config = json!({
        "command": "mine",
        "input": a.input.input,
        "input_format": a.input.format,
        "fdr": a.fdr,
        "max_iter": a.max_iter,
        "prior": prior_label(&p.fit, &a.model)?,
        "eps_theta": eps,
        "seeds": a.seeds,
        "fit": a.model.fit,
        "jaccard": a.jaccard,
        "output_format": a.output_format,
    });
    let text = match a.output_format {
        OutputFormat::Json => {
            let report = json!({
                "config": config,
                "input": {"rows": p.ds.n(), "columns": p.ds.d(), "removed_columns": p.removed},
                "fit": fit_summary(&p.fit),
                "sets": records,
            });
            serde_json::to_string_pretty(&report)? + "\n"
        }
        OutputFormat::Table => {
            let mut t = output::comment_header(&config, "");
            t.push_str(&format!(
                "{} rows, {} columns ({} removed); fit {} after {} iterations\n\n",
                p.ds.n(),
                p.ds.d(),
                p.removed.len(),
                if p.fit.converged { "converged" } else { "did not converge" },
                p.fit.iterations
            ));
            t + &sets_table(&records)
        }
        OutputFormat::Csv => {
            let mut t = output::comment_header(&config, "# ");
            t.push_str("set,member,pvalue,seeds_reaching,reason\n");
            for (k, r) in records.iter().enumerate() {
                for m in &r.members {
                    t.push_str(&format!(
                        "{},{},{},{},{}\n",
                        k + 1,
                        output::csv_field(m),
                        r.pvalues[m],
                        r.seeds_reaching,
                        r.reason.as_str()
                    ));
                }
            }
            t
        }
    };
    emit(&a.sink, &text)
}

fn prior_label(fit: &ThresholdFit<f64>, model: &ModelArgs) -> Result<Prior> {
    Ok(match (&model.fit, fit.method) {
        (Some(_), FitMethod::Empirical) => Prior::Empirical,
        (Some(_), FitMethod::Gamma { zeta, beta }) => Prior::Gamma { zeta, beta },
        (None, _) => parse_prior(&model.prior)?,
    })
}

fn cmd_neighborhood(a: &NeighborhoodArgs) -> Result<()> {
    let p = prepare(&a.input, &a.model)?;
    let labels = p.ds.col_labels();
    // Resolve every target before any work so all unknown labels are reported together.
    let mut unknown = Vec::new();
    let mut targets = Vec::new();
    for t in &a.targets {
        let names: Vec<&str> = t.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        match p.ds.resolve_labels(&names) {
            Ok(idx) if !idx.is_empty() => targets.push(idx),
            Ok(_) => bail!("empty target `{t}`"),
            Err(lamb_core::Error::UnknownLabels(missing)) => unknown.extend(missing),
            Err(e) => return Err(e.into()),
        }
    }
    if !unknown.is_empty() {
        return Err(lamb_core::Error::UnknownLabels(unknown).into());
    }
    let eps = eps_for(&a.model, p.ds.n());
    let u = standardize(&p.ds, &theta_matrix(&p.fit, eps)?)?;
    let records = targets
        .iter()
        .map(|t| Ok(NeighborhoodRecord::from_neighborhood(&neighborhood(&u, t, a.fdr)?, labels)))
        .collect::<Result<Vec<_>>>()?;
    let config = json!({
        "command": "neighborhood",
        "input": a.input.input,
        "input_format": a.input.format,
        "fdr": a.fdr,
        "prior": prior_label(&p.fit, &a.model)?,
        "eps_theta": eps,
        "targets": a.targets,
        "fit": a.model.fit,
        "output_format": a.output_format,
    });
    let text = match a.output_format {
        OutputFormat::Json => {
            let report = json!({
                "config": config,
                "input": {"rows": p.ds.n(), "columns": p.ds.d(), "removed_columns": p.removed},
                "fit": fit_summary(&p.fit),
                "neighborhoods": records,
            });
            serde_json::to_string_pretty(&report)? + "\n"
        }
        OutputFormat::Table => output::comment_header(&config, "") + "\n" + &neighborhoods_table(&records),
        OutputFormat::Csv => {
            let mut t = output::comment_header(&config, "# ");
            t.push_str("target,rank,neighbor,pvalue\n");
            for r in &records {
                let target = output::csv_field(&r.target.join(" "));
                for (k, m) in r.neighbors.iter().enumerate() {
                    t.push_str(&format!("{target},{},{},{}\n", k + 1, output::csv_field(m), r.pvalues[m]));
                }
            }
            t
        }
    };
    emit(&a.sink, &text)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let cfg = StudyConfig::parse(&text).with_context(|| format!("parsing {}", a.config.display()))?;
    let table = cfg.run()?;
    let header = output::comment_header(&serde_json::to_value(&cfg)?, "# ");
    if let Some(path) = &a.summary {
        write_atomic(path, &(header.clone() + &table.summary_csv()))?;
    }
    for s in table.summary() {
        eprintln!(
            "{:<12} rho={:<5} tau={:<7} mean_tdr={:.3} gated_tdr={:.3} mean_fpr={:.3}",
            s.method.as_str(),
            s.rho,
            s.tau_mode.as_str(),
            s.mean_tdr,
            s.mean_gated_tdr,
            s.mean_fpr
        );
    }
    emit(&a.sink, &(header + &table.to_csv()))
}

fn cmd_convert(a: &ConvertArgs) -> Result<()> {
    let ds = load(&a.input)?;
    let text = match a.to {
        ConvertTarget::Csv => ds.to_csv(),
        ConvertTarget::Transactions => ds.to_transactions()?,
        ConvertTarget::Triplets => ds.to_triplets(),
    };
    emit(&a.sink, &text)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring thread pool")?;
    }
    match &cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Mine(a) => cmd_mine(a),
        Command::Neighborhood(a) => cmd_neighborhood(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Convert(a) => cmd_convert(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

