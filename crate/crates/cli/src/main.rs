//! Configuration-driven front end for compound-criterion design search:
//! `search` finds an optimal design, `evaluate` scores an existing design
//! file, `table` builds the efficiency summary over every weight/tau2
//! combination.
//!
//! Exit codes: 0 success, 2 configuration or design validation failure,
//! 3 search initialization failure, 1 anything else.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use rsdopt::config::{Combination, Experiment, ExperimentConfig};
use rsdopt::criteria::{
    compound_with_sampler, mse_bias_mc, ComponentLogs, CriterionConfig, Estimator, Family,
    MatrixBundle, MseSampler,
};
use rsdopt::design::{pure_error_dof, Design, DofSummary};
use rsdopt::error::Error;
use rsdopt::presets;
use rsdopt::report::{
    compute_references, elementary_log_value, summarize, DesignEntry, ElementaryCriterion,
    ReferenceSet,
};
use rsdopt::search::{optimize, SearchConfig};

#[derive(Parser)]
#[command(
    name = "rsdopt",
    about = "Exact response-surface designs under compound DP/LoF/MSE criteria",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search for an optimal design for each (kappa, tau2) combination.
    Search(SearchArgs),
    /// Evaluate a design file under a configuration.
    Evaluate(EvaluateArgs),
    /// Efficiency table over the configuration's weight/tau2 cross product.
    Table(TableArgs),
}

#[derive(Args)]
struct ConfigSource {
    /// Path to a TOML experiment configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Name of a shipped preset: example1, case-study.
    #[arg(long)]
    preset: Option<String>,
    /// Override the search seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of random restarts.
    #[arg(long)]
    restarts: Option<usize>,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Design CSV to evaluate.
    #[arg(long)]
    design: PathBuf,
    /// Output JSON file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TableArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Evaluate these design CSVs (one per combination, or a single design
    /// for every combination) instead of searching.
    #[arg(long = "design")]
    designs: Vec<PathBuf>,
    /// Reference-optima JSON to reuse; missing file is computed and written.
    #[arg(long)]
    references: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Search(args) => cmd_search(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Table(args) => cmd_table(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config { .. }) | Some(Error::DesignFormat(..)) | Some(Error::Domain(..)) => 2,
        Some(Error::ModelTooLarge { .. }) => 2,
        Some(Error::InitializationFailed { .. }) => 3,
        _ => 1,
    }
}

fn load_experiment(source: &ConfigSource) -> anyhow::Result<(Experiment, String)> {
    let (config, label) = match (&source.config, &source.preset) {
        (Some(path), None) => (
            ExperimentConfig::from_path(path)?,
            path.display().to_string(),
        ),
        (None, Some(name)) => (presets::preset(name)?, format!("preset:{name}")),
        (None, None) => {
            return Err(Error::config("cli", "one of --config or --preset is required").into())
        }
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };
    let mut experiment = config.build()?;
    if let Some(seed) = source.seed {
        experiment.search.seed = seed;
    }
    if let Some(restarts) = source.restarts {
        if restarts == 0 {
            return Err(Error::config("cli.restarts", "need at least 1 restart").into());
        }
        experiment.search.restarts = restarts;
    }
    Ok((experiment, label))
}

// ---------------------------------------------------------------- documents

/// JSON document shared by `search` and `evaluate`. Criterion values that
/// are infinite (zero pure-error dof under an F-bearing criterion)
/// serialize as null.
#[derive(Serialize, Deserialize)]
struct EvaluationDocument {
    design: String,
    n: usize,
    k: usize,
    p: usize,
    q: usize,
    blocked: bool,
    dof: DofSummary,
    combinations: Vec<ComboEvaluation>,
}

#[derive(Serialize, Deserialize)]
struct ComboEvaluation {
    kappa: [f64; 3],
    tau2: f64,
    family: Family,
    estimator: Estimator,
    mc_samples: usize,
    mc_seed: u64,
    compound_log: f64,
    compound_value: f64,
    log_components: ComponentLogs,
    /// The six elementary criterion values by table name.
    elementary: BTreeMap<String, f64>,
    /// Monte-Carlo bias estimate and its standard error, when applicable.
    #[serde(skip_serializing_if = "Option::is_none")]
    mse_bias_mc: Option<McBias>,
}

#[derive(Serialize, Deserialize)]
struct McBias {
    estimate: f64,
    std_error: f64,
}

fn evaluate_document(
    design: &Design,
    design_label: &str,
    experiment: &Experiment,
) -> anyhow::Result<EvaluationDocument> {
    design.check_against(&experiment.spec)?;
    let spec = &experiment.spec;
    let dof = pure_error_dof(design, spec)?;
    let bundle = MatrixBundle::build(design, spec)?;
    let mut combos = Vec::new();
    for combo in &experiment.combinations {
        let cfg = &combo.criterion;
        let sampler = match cfg.estimator {
            Estimator::Mc => Some(cfg.sampler(spec.q())),
            Estimator::PointPrior => None,
        };
        let eval = compound_with_sampler(design, spec, cfg, sampler.as_ref())?;
        let mut elementary = BTreeMap::new();
        for criterion in ElementaryCriterion::ALL {
            let log = elementary_log_value(&bundle, &dof, criterion, cfg, sampler.as_ref())?;
            elementary.insert(criterion.name().to_string(), log.exp());
        }
        let mse_bias = sampler.as_ref().map(|s| {
            let (estimate, std_error) = mse_bias_mc(&bundle, s);
            McBias {
                estimate,
                std_error,
            }
        });
        combos.push(ComboEvaluation {
            kappa: cfg.weights.as_array(),
            tau2: cfg.tau2,
            family: cfg.family,
            estimator: cfg.estimator,
            mc_samples: cfg.mc_samples,
            mc_seed: cfg.mc_seed,
            compound_log: eval.compound_log,
            compound_value: eval.compound_log.exp(),
            log_components: eval.log_components,
            elementary,
            mse_bias_mc: mse_bias,
        });
    }
    Ok(EvaluationDocument {
        design: design_label.to_string(),
        n: design.n(),
        k: design.k(),
        p: spec.p(),
        q: spec.q(),
        blocked: design.is_blocked(),
        dof,
        combinations: combos,
    })
}

// ------------------------------------------------------------------- search

#[derive(Serialize)]
struct Manifest {
    command: String,
    config: String,
    seed: u64,
    restarts: usize,
    max_passes: usize,
    total_duration_ms: u128,
    combinations: Vec<ManifestEntry>,
}

#[derive(Serialize)]
struct ManifestEntry {
    kappa: [f64; 3],
    tau2: f64,
    estimator: Estimator,
    mc_samples: usize,
    mc_seed: u64,
    design_file: String,
    evaluation_file: String,
    compound_log: f64,
    duration_ms: u128,
    accepted_exchanges: u64,
    per_restart_best: Vec<f64>,
}

fn combo_suffix(index: usize, total: usize) -> String {
    if total == 1 {
        String::new()
    } else {
        format!("_{}", index + 1)
    }
}

fn cmd_search(args: SearchArgs) -> anyhow::Result<()> {
    let (experiment, label) = load_experiment(&args.source)?;
    std::fs::create_dir_all(&args.out)?;
    let total = experiment.combinations.len();
    let started = std::time::Instant::now();
    let mut entries = Vec::new();
    for (i, combo) in experiment.combinations.iter().enumerate() {
        eprintln!(
            "search [{}/{}] kappa = {:?}, tau2 = {:.6} ...",
            i + 1,
            total,
            combo.weights.as_array(),
            combo.tau2
        );
        let result = optimize(&experiment.spec, &combo.criterion, &experiment.search)?;
        let suffix = combo_suffix(i, total);
        let design_file = args.out.join(format!("design{suffix}.csv"));
        let evaluation_file = args.out.join(format!("evaluation{suffix}.json"));
        result.design.to_csv_path(&design_file)?;
        let mut single = experiment.clone();
        single.combinations = vec![combo.clone()];
        let doc = evaluate_document(
            &result.design,
            &design_file.display().to_string(),
            &single,
        )?;
        std::fs::write(&evaluation_file, serde_json::to_string_pretty(&doc)?)?;
        eprintln!(
            "search [{}/{}] compound_log = {:.6} ({} ms, d = {}, lof = {})",
            i + 1,
            total,
            result.evaluation.compound_log,
            result.duration.as_millis(),
            result.evaluation.dof.d,
            result.evaluation.dof.lof,
        );
        entries.push(ManifestEntry {
            kappa: combo.weights.as_array(),
            tau2: combo.tau2,
            estimator: combo.criterion.estimator,
            mc_samples: combo.criterion.mc_samples,
            mc_seed: combo.criterion.mc_seed,
            design_file: design_file.display().to_string(),
            evaluation_file: evaluation_file.display().to_string(),
            compound_log: result.evaluation.compound_log,
            duration_ms: result.duration.as_millis(),
            accepted_exchanges: result.accepted_exchanges,
            per_restart_best: result.per_restart.clone(),
        });
    }
    let manifest = Manifest {
        command: "search".into(),
        config: label,
        seed: experiment.search.seed,
        restarts: experiment.search.restarts,
        max_passes: experiment.search.max_passes,
        total_duration_ms: started.elapsed().as_millis(),
        combinations: entries,
    };
    std::fs::write(
        args.out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

// ----------------------------------------------------------------- evaluate

fn cmd_evaluate(args: EvaluateArgs) -> anyhow::Result<()> {
    let (experiment, _) = load_experiment(&args.source)?;
    let design = Design::from_csv_path(&args.design)?;
    let doc = evaluate_document(&design, &args.design.display().to_string(), &experiment)?;
    let text = serde_json::to_string_pretty(&doc)?;
    match &args.out {
        Some(path) => std::fs::write(path, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

// -------------------------------------------------------------------- table

fn load_or_compute_references(
    experiment: &Experiment,
    path: Option<&Path>,
    out_dir: &Path,
) -> anyhow::Result<(ReferenceSet, PathBuf)> {
    if let Some(path) = path {
        if path.exists() {
            let set = ReferenceSet::from_json(&std::fs::read_to_string(path)?)?;
            set.verify(&experiment.spec, &experiment.combinations[0].criterion)?;
            return Ok((set, path.to_path_buf()));
        }
    }
    eprintln!("computing reference optima ...");
    let mut merged = ReferenceSet::default();
    let mut seen = Vec::new();
    for combo in &experiment.combinations {
        if seen.iter().any(|&t| t == combo.tau2) {
            continue;
        }
        seen.push(combo.tau2);
        let sub = compute_references(
            &experiment.spec,
            &combo.criterion,
            &experiment.search,
            &[combo.tau2],
        )?;
        for r in sub.references {
            merged.insert(r);
        }
    }
    let out_path = path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out_dir.join("references.json"));
    std::fs::write(&out_path, merged.to_json()?)?;
    Ok((merged, out_path))
}

fn design_for_combo(
    index: usize,
    combo: &Combination,
    experiment: &Experiment,
    provided: &[Design],
) -> anyhow::Result<(Design, Option<f64>)> {
    match provided.len() {
        0 => {
            eprintln!(
                "table: searching combination {} (kappa = {:?}, tau2 = {:.6}) ...",
                index + 1,
                combo.weights.as_array(),
                combo.tau2
            );
            let result = optimize(&experiment.spec, &combo.criterion, &experiment.search)?;
            let unconstrained = if experiment.search.fixed.is_empty() {
                None
            } else {
                let mut free = experiment.search.clone();
                free.fixed = Vec::new();
                let free_result = optimize(&experiment.spec, &combo.criterion, &free)?;
                Some(free_result.evaluation.compound_log)
            };
            Ok((result.design, unconstrained))
        }
        1 => Ok((provided[0].clone(), None)),
        _ => provided
            .get(index)
            .cloned()
            .map(|d| (d, None))
            .ok_or_else(|| {
                Error::config(
                    "cli.design",
                    format!(
                        "{} designs provided for {} combinations",
                        provided.len(),
                        experiment.combinations.len()
                    ),
                )
                .into()
            }),
    }
}

fn cmd_table(args: TableArgs) -> anyhow::Result<()> {
    let (experiment, _) = load_experiment(&args.source)?;
    std::fs::create_dir_all(&args.out)?;
    let provided: Vec<Design> = args
        .designs
        .iter()
        .map(|p| Design::from_csv_path(p))
        .collect::<Result<_, _>>()?;
    for d in &provided {
        d.check_against(&experiment.spec)?;
    }
    if !provided.is_empty()
        && provided.len() != 1
        && provided.len() != experiment.combinations.len()
    {
        return Err(Error::config(
            "cli.design",
            format!(
                "provide one design or exactly {} (one per combination)",
                experiment.combinations.len()
            ),
        )
        .into());
    }
    let (references, refs_path) =
        load_or_compute_references(&experiment, args.references.as_deref(), &args.out)?;
    let mut entries = Vec::new();
    for (i, combo) in experiment.combinations.iter().enumerate() {
        let (design, unconstrained_log) = design_for_combo(i, combo, &experiment, &provided)?;
        entries.push(DesignEntry {
            criterion: combo.criterion.clone(),
            design,
            unconstrained_log,
        });
    }
    let report = summarize(&entries, &experiment.spec, &references)?;
    let csv_path = args.out.join("report.csv");
    let json_path = args.out.join("report.json");
    report.to_csv(std::fs::File::create(&csv_path)?)?;
    std::fs::write(&json_path, report.to_json()?)?;
    for row in &report.rows {
        if !row.stale.is_empty() {
            eprintln!(
                "warning: stale reference(s) {} at kappa = {:?}, tau2 = {:.6}: \
                 a better design than the stored optimum was found",
                row.stale.join(", "),
                row.weights,
                row.tau2
            );
        }
    }
    eprintln!(
        "table: wrote {}, {} (references: {})",
        csv_path.display(),
        json_path.display(),
        refs_path.display()
    );
    Ok(())
}
