use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::LevelFilter;

use omt_core::dataset::UNSEEN_CODE;
use omt_core::feature_graph::FeatureGraph;
use omt_core::master::MipOptions;
use omt_core::pipeline::encode_with_groups;
use omt_core::{
    build_problem, enumerate_paths, evaluate, greedy_baseline, load_csv, parse_csv, reduced_cost, run_cg, solve_lp,
    solve_master_mip, split_indices, train, tune_bins, BinningConfig, CgConfig, ColumnKind, ConstraintsConfig,
    ConvergedBy, DualVector, MasterProblem, MetricKind, MultiwayTree, OrderMode, RawDataset, SchemaHints,
    SimplexOptions, Split, SplitFractions, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "omt",
    version,
    about = "Optimal multiway-split decision trees by column generation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a tree and write it as JSON.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        split: SplitArgs,
        /// Output path of the tree JSON.
        #[arg(short, long)]
        output: PathBuf,
        /// Also write the tree in DOT format.
        #[arg(long)]
        dot: Option<PathBuf>,
        /// Pick the bin count from {3,4,5,8} on the validation split, then
        /// retrain on train+validation.
        #[arg(long)]
        tune_bins: bool,
    },
    /// Print one prediction per input row.
    Predict { model: PathBuf, data: PathBuf },
    /// Print evaluation metrics of a model on labeled data as JSON.
    Eval { model: PathBuf, data: PathBuf },
    /// Check column generation against exhaustive enumeration on a small instance.
    Oracle {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        split: SplitArgs,
        /// Refuse instances with more feasible-length paths than this.
        #[arg(long, default_value_t = 10_000)]
        cap: u128,
    },
    /// Print the feature graph's layer sizes and path counts.
    InspectGraph {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        split: SplitArgs,
    },
    /// Train the greedy Gini multiway tree for comparison.
    Baseline {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long, default_value_t = 0.01)]
        min_support: f64,
        #[arg(long, default_value_t = 4)]
        bins: usize,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct DataArgs {
    /// CSV file with a header row.
    data: PathBuf,
    /// Name of the label column.
    #[arg(long, default_value = "class")]
    label: String,
    /// Columns to treat as categorical even if numeric (comma-separated).
    #[arg(long, value_delimiter = ',')]
    categorical: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Misclass,
    Squared,
    Absolute,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    Natural,
    Gain,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Maximum rule length d.
    #[arg(long, default_value_t = 3)]
    depth: usize,
    /// Leaf budget l (default 2^depth).
    #[arg(long)]
    leaves: Option<usize>,
    /// Base bins κ per numerical column.
    #[arg(long, default_value_t = 4)]
    bins: usize,
    /// Use only the base bins instead of all contiguous bin unions.
    #[arg(long)]
    no_cumulative: bool,
    #[arg(long, value_enum, default_value = "misclass")]
    metric: MetricArg,
    /// Partial paths kept per graph node while pricing.
    #[arg(long = "K", default_value_t = 1000)]
    k: usize,
    #[arg(long, default_value_t = 40)]
    max_iterations: usize,
    #[arg(long, default_value_t = 10_000)]
    max_columns: usize,
    /// Minimum rule support as a fraction of the training rows.
    #[arg(long, default_value_t = 0.01)]
    min_support: f64,
    /// Wall-clock budget in seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    /// JSON constraints document.
    #[arg(long)]
    constraints: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "natural")]
    order: OrderArg,
    /// Objective cost per rule condition (default: a tie-breaker below one
    /// misclassification for the whole tree; zero for regression).
    #[arg(long)]
    condition_cost: Option<f64>,
}

#[derive(Args, Clone)]
struct SplitArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train, validation and test percentages.
    #[arg(long, default_value = "50,25,25")]
    split: String,
    /// Train on all rows.
    #[arg(long)]
    no_split: bool,
}

impl ModelArgs {
    fn config(&self) -> Result<TrainConfig> {
        let constraints = match &self.constraints {
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).with_context(|| format!("reading constraints {}", path.display()))?;
                ConstraintsConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => ConstraintsConfig::default(),
        };
        let time_limit = match self.time_limit {
            Some(t) if t.is_finite() && t > 0.0 => Some(Duration::from_secs_f64(t)),
            Some(t) => bail!("time limit must be positive, got {t}"),
            None => None,
        };
        Ok(TrainConfig {
            depth: self.depth,
            leaves: self.leaves,
            binning: BinningConfig {
                n_bins: self.bins,
                cumulative: !self.no_cumulative,
            },
            metric: match self.metric {
                MetricArg::Misclass => MetricKind::Misclassification,
                MetricArg::Squared => MetricKind::SquaredError,
                MetricArg::Absolute => MetricKind::AbsoluteError,
            },
            min_support: self.min_support,
            order: match self.order {
                OrderArg::Natural => OrderMode::Natural,
                OrderArg::Gain => OrderMode::Gain,
            },
            time_limit,
            constraints,
            condition_cost: self.condition_cost,
            cg: CgConfig {
                k: self.k,
                max_iterations: self.max_iterations,
                max_columns: self.max_columns,
                ..CgConfig::default()
            },
        })
    }
}

impl DataArgs {
    fn load(&self) -> Result<RawDataset> {
        let hints: SchemaHints = self
            .categorical
            .iter()
            .map(|c| (c.clone(), ColumnKind::Categorical))
            .collect();
        load_csv(&self.data, &self.label, &hints).with_context(|| format!("loading {}", self.data.display()))
    }
}

impl SplitArgs {
    fn split(&self, n: usize) -> Result<Option<Split>> {
        if self.no_split {
            return Ok(None);
        }
        let fractions = SplitFractions::parse(&self.split)?;
        Ok(Some(split_indices(n, &fractions, self.seed)))
    }

    /// Training rows: the train split, or everything with `--no-split`.
    fn training_rows(&self, raw: &RawDataset) -> Result<RawDataset> {
        Ok(match self.split(raw.n_samples)? {
            Some(split) => raw.subset(&split.train),
            None => raw.clone(),
        })
    }
}

fn init_logging() -> Result<()> {
    let level = match std::env::var("OMT_LOG").as_deref() {
        Ok("quiet") => LevelFilter::Error,
        Ok("info") => LevelFilter::Info,
        Ok("debug") => LevelFilter::Debug,
        Ok("") | Err(_) => LevelFilter::Warn,
        Ok(other) => bail!("OMT_LOG must be quiet, info or debug, got '{other}'"),
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_logging() {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Train {
            data,
            model,
            split,
            output,
            dot,
            tune_bins,
        } => cmd_train(&data, &model, &split, &output, dot.as_deref(), tune_bins),
        Command::Predict { model, data } => cmd_predict(&model, &data),
        Command::Eval { model, data } => cmd_eval(&model, &data),
        Command::Oracle {
            data,
            model,
            split,
            cap,
        } => cmd_oracle(&data, &model, &split, cap),
        Command::InspectGraph { data, model, split } => cmd_inspect(&data, &model, &split),
        Command::Baseline {
            data,
            split,
            depth,
            min_support,
            bins,
            output,
        } => cmd_baseline(&data, &split, depth, min_support, bins, output.as_deref()),
    }
}

fn fmt_acc(tree: &MultiwayTree, raw: &RawDataset, constraints: &ConstraintsConfig) -> Result<String> {
    if raw.n_samples == 0 {
        return Ok("n/a".into());
    }
    let encoder = tree.encoder.as_ref().context("model has no encoder")?;
    let data = encode_with_groups(encoder, raw, constraints)?;
    let report = evaluate(tree, &data);
    Ok(match (report.accuracy, report.mse) {
        (Some(a), _) => format!("{a:.4}"),
        (None, Some(m)) => format!("mse {m:.4}"),
        _ => "n/a".into(),
    })
}

fn cmd_train(
    data: &DataArgs,
    model: &ModelArgs,
    split_args: &SplitArgs,
    output: &Path,
    dot: Option<&Path>,
    tune: bool,
) -> Result<ExitCode> {
    let start = Instant::now();
    let raw = data.load()?;
    let config = model.config()?;
    let split = split_args.split(raw.n_samples)?;
    let (trained, bins) = match (&split, tune) {
        (Some(split), true) => {
            let (bins, m) = tune_bins(&raw, split, &config)?;
            (m, bins)
        }
        (None, true) => bail!("--tune-bins needs a validation split"),
        (Some(split), false) => (train(&raw.subset(&split.train), &config)?, config.binning.n_bins),
        (None, false) => (train(&raw, &config)?, config.binning.n_bins),
    };
    std::fs::write(output, trained.tree.to_json()).with_context(|| format!("writing {}", output.display()))?;
    if let Some(path) = dot {
        std::fs::write(path, trained.tree.to_dot()).with_context(|| format!("writing {}", path.display()))?;
    }

    let r = &trained.report;
    println!("nu_lp: {:.6}", r.nu_lp);
    println!("nu_ip: {:.6}", r.nu_ip);
    println!("gap: {:.6}", r.gap);
    println!("iterations: {}", r.iterations_run);
    println!("columns: {}", r.columns_generated);
    println!(
        "converged_by: {}",
        serde_json::to_value(r.converged_by)?.as_str().unwrap_or("")
    );
    println!(
        "mip_status: {}",
        serde_json::to_value(r.mip_status)?.as_str().unwrap_or("")
    );
    println!("rules: {}", trained.tree.rules.len());
    println!("bins: {bins}");
    println!("wall_time_s: {:.3}", start.elapsed().as_secs_f64());
    let c = &config.constraints;
    match &split {
        Some(s) => {
            println!("train_accuracy: {}", fmt_acc(&trained.tree, &raw.subset(&s.train), c)?);
            println!(
                "val_accuracy: {}",
                fmt_acc(&trained.tree, &raw.subset(&s.validation), c)?
            );
            println!("test_accuracy: {}", fmt_acc(&trained.tree, &raw.subset(&s.test), c)?);
        }
        None => println!("train_accuracy: {}", fmt_acc(&trained.tree, &raw, c)?),
    }
    Ok(ExitCode::SUCCESS)
}

fn load_model(path: &Path) -> Result<MultiwayTree> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
    MultiwayTree::from_json(&text).with_context(|| format!("loading model {}", path.display()))
}

/// Loads rows for a model; the label column may be absent.
fn load_for_model(tree: &MultiwayTree, path: &Path) -> Result<Option<RawDataset>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if text.trim().is_empty() {
        return Ok(None);
    }
    let encoder = tree.encoder.as_ref().context("model has no encoder")?;
    let header: Vec<&str> = text.lines().next().unwrap_or("").split(',').map(str::trim).collect();
    let missing: Vec<&str> = encoder
        .features
        .iter()
        .map(|f| f.name.as_str())
        .filter(|n| !header.contains(n))
        .collect();
    if !missing.is_empty() {
        bail!("missing columns: {}", missing.join(", "));
    }
    // Without a label column any column can stand in; encoding looks
    // features up by name.
    let label = if header.contains(&encoder.label_name.as_str()) {
        encoder.label_name.as_str()
    } else {
        header[0]
    };
    Ok(Some(parse_csv(&text, label, &SchemaHints::new())?))
}

fn cmd_predict(model: &Path, data: &Path) -> Result<ExitCode> {
    let tree = load_model(model)?;
    let Some(raw) = load_for_model(&tree, data)? else {
        return Ok(ExitCode::SUCCESS);
    };
    let encoder = tree.encoder.as_ref().context("model has no encoder")?;
    let (codes, warnings) = encoder.encode_features(&raw)?;
    if warnings.unseen > 0 {
        log::warn!(
            "{} unseen categorical values; affected rows may use the fallback label",
            warnings.unseen
        );
    }
    if warnings.clamped > 0 {
        log::warn!(
            "{} numerical values outside the training range were clamped",
            warnings.clamped
        );
    }
    let mut out = String::new();
    let mut row = vec![UNSEEN_CODE; codes.len()];
    for i in 0..raw.n_samples {
        for (f, slot) in row.iter_mut().enumerate() {
            *slot = codes[f][i];
        }
        out.push_str(&tree.label_name(tree.predict(&row)));
        out.push('\n');
    }
    print!("{out}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(model: &Path, data: &Path) -> Result<ExitCode> {
    let tree = load_model(model)?;
    let encoder = tree.encoder.as_ref().context("model has no encoder")?;
    let Some(raw) = load_for_model(&tree, data)? else {
        bail!("no data in {}", data.display());
    };
    if raw.column_index(&encoder.label_name).is_none() {
        bail!("missing columns: {}", encoder.label_name);
    }
    let (binned, warnings) = encoder.encode(&raw)?;
    if warnings.unseen > 0 || warnings.clamped > 0 {
        log::warn!("{} unseen and {} clamped values", warnings.unseen, warnings.clamped);
    }
    let report = evaluate(&tree, &binned);
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(ExitCode::SUCCESS)
}

/// Structural path count by depth-first search, independent of the DP.
fn dfs_paths(graph: &FeatureGraph, node: usize, length: usize, max_length: usize, out: &mut u128) {
    if node == graph.sink() {
        *out += 1;
        return;
    }
    for child in graph.children(node) {
        let n = graph.node(child);
        let len = length + usize::from(n.role == omt_core::feature_graph::NodeRole::Value);
        if len <= max_length {
            dfs_paths(graph, child, len, max_length, out);
        }
    }
}

fn check(ok: bool, name: &str, detail: String, failures: &mut usize) {
    println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    if !ok {
        *failures += 1;
    }
}

fn cmd_oracle(data: &DataArgs, model: &ModelArgs, split: &SplitArgs, cap: u128) -> Result<ExitCode> {
    let raw = split.training_rows(&data.load()?)?;
    let config = model.config()?;
    let problem = build_problem(&raw, &config)?;
    let graph = &problem.graph;
    let mut failures = 0;

    let limited = graph.count_paths(Some(config.depth));
    if limited.saturated || limited.value > cap {
        println!(
            "REFUSED: {} paths of length <= {} exceed the cap of {cap}",
            if limited.saturated {
                "more than 2^128".to_string()
            } else {
                limited.value.to_string()
            },
            config.depth
        );
        return Ok(ExitCode::from(2));
    }
    let all = graph.count_paths(None);
    let mut dfs_all = 0u128;
    if all.value <= cap {
        dfs_paths(graph, graph.source(), 0, usize::MAX, &mut dfs_all);
        check(
            dfs_all == all.value,
            "path count (unconstrained)",
            format!("count {} dfs {dfs_all}", all.value),
            &mut failures,
        );
    } else {
        println!("SKIP path count (unconstrained): {} paths exceed the cap", all.value);
    }
    let mut dfs_limited = 0u128;
    dfs_paths(graph, graph.source(), 0, config.depth, &mut dfs_limited);
    check(
        dfs_limited == limited.value,
        "path count (length-limited)",
        format!("count {} dfs {dfs_limited}", limited.value),
        &mut failures,
    );

    let pool = enumerate_paths(graph, &problem.data, &problem.rules, cap)?;
    println!("feasible paths: {}", pool.len());
    let outcome = run_cg(graph, &problem.data, &problem.rules, &config.cg, problem.master.clone())?;
    let report = &outcome.report;
    let full = MasterProblem {
        pool,
        ..problem.master.clone()
    };
    let exact = solve_master_mip(&full, &MipOptions::default())?;
    println!(
        "cg: {:?} after {} iterations, {} columns",
        report.converged_by, report.iterations_run, report.columns_generated
    );

    if report.converged_by == ConvergedBy::DualFeasible {
        let lp = outcome.master.build_rmp();
        let sol = solve_lp(&lp, &SimplexOptions::default())?;
        let duals = DualVector::from_row_duals(problem.data.n_samples(), &sol.duals);
        let min_rc = full
            .pool
            .iter()
            .map(|r| reduced_cost(r, &duals, &full.side_constraints))
            .fold(f64::INFINITY, f64::min);
        check(
            min_rc >= -1e-6 - 1e-9,
            "dual feasibility certificate",
            format!("min reduced cost over all paths {min_rc:.3e}"),
            &mut failures,
        );
        check(
            (exact.objective - report.nu_ip).abs() <= 1e-6,
            "MIP objective vs full enumeration",
            format!("cg {:.6} full {:.6}", report.nu_ip, exact.objective),
            &mut failures,
        );
    } else {
        println!(
            "SKIP certificate: cg stopped by {:?}; cg {:.6} full {:.6}",
            report.converged_by, report.nu_ip, exact.objective
        );
    }
    check(
        report.nu_lp <= report.nu_ip + 1e-9,
        "LP bound",
        format!("nu_lp {:.6} nu_ip {:.6}", report.nu_lp, report.nu_ip),
        &mut failures,
    );
    let eval = outcome.master.evaluate_selection(&outcome.mip.selected);
    check(
        eval.is_some_and(|(obj, slack)| {
            (obj - outcome.mip.objective).abs() <= 1e-6 && slack == outcome.mip.slack_samples
        }),
        "partition",
        format!(
            "{} rules, {} slack samples",
            outcome.mip.selected.len(),
            outcome.mip.slack_samples.len()
        ),
        &mut failures,
    );
    Ok(if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_inspect(data: &DataArgs, model: &ModelArgs, split: &SplitArgs) -> Result<ExitCode> {
    let raw = split.training_rows(&data.load()?)?;
    let config = model.config()?;
    let problem = build_problem(&raw, &config)?;
    let g = &problem.graph;
    let fmt = |c: omt_core::PathCount| {
        if c.saturated {
            "saturated (> 2^128)".to_string()
        } else {
            c.value.to_string()
        }
    };
    println!("features: {}", g.feature_order().len());
    println!(
        "order: {}",
        g.feature_order()
            .iter()
            .map(|&f| g.feature_names()[f].as_str())
            .collect::<Vec<_>>()
            .join(", ")
    );
    println!(
        "layer_sizes: {}",
        g.layer_sizes()
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(", ")
    );
    println!("nodes: {}", g.n_nodes());
    println!("paths: {}", fmt(g.count_paths(None)));
    println!(
        "paths_depth_{}: {}",
        config.depth,
        fmt(g.count_paths(Some(config.depth)))
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_baseline(
    data: &DataArgs,
    split_args: &SplitArgs,
    depth: usize,
    min_support: f64,
    bins: usize,
    output: Option<&Path>,
) -> Result<ExitCode> {
    let raw = data.load()?;
    let split = split_args.split(raw.n_samples)?;
    let train_raw = match &split {
        Some(s) => raw.subset(&s.train),
        None => raw.clone(),
    };
    let binning = BinningConfig {
        n_bins: bins,
        cumulative: false,
    };
    let encoder = omt_core::Encoder::fit(&train_raw, &binning, omt_core::TaskKind::Classification)?;
    let (train_data, _) = encoder.encode(&train_raw)?;
    let ms = omt_core::colgen::min_support_count(min_support, train_data.n_samples());
    let tree = greedy_baseline(&train_data, depth, ms).with_encoder(encoder);
    if let Some(path) = output {
        std::fs::write(path, tree.to_json()).with_context(|| format!("writing {}", path.display()))?;
    }
    let none = ConstraintsConfig::default();
    println!("rules: {}", tree.rules.len());
    println!("train_accuracy: {}", fmt_acc(&tree, &train_raw, &none)?);
    if let Some(s) = &split {
        println!("val_accuracy: {}", fmt_acc(&tree, &raw.subset(&s.validation), &none)?);
        println!("test_accuracy: {}", fmt_acc(&tree, &raw.subset(&s.test), &none)?);
    }
    Ok(ExitCode::SUCCESS)
}
