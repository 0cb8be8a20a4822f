use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hfnn::agent_sim::{privacy_audit, replay};
use hfnn::clustering::{MUpdate, PoolDenominator};
use hfnn::config::{ClusteringMode, ExperimentConfig, FoldScheme, NmseNormalizer, Task};
use hfnn::data::{generate_synthetic, ingest_csv, ingest_features, write_csv, ColumnRef, Dataset, SyntheticSpec};
use hfnn::eval::{parameter_sweep, run_experiment, write_results_csv, write_sweep_csv};
use hfnn::model::HfnnModel;
use hfnn::train::{fit_stage1, train};
use log::info;
use serde_json::json;

#[derive(Parser)]
#[command(name = "hfnn", version, about = "Hierarchical fuzzy networks trained across simulated agents")]
struct Cli {
    /// More log output (repeatable). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the two-branch synthetic regression set as CSV.
    GenData(GenDataArgs),
    /// Train on a whole CSV file and save the model.
    Train(TrainArgs),
    /// Apply a saved model to a CSV of features.
    Predict(PredictArgs),
    /// Cross-validate and write the results table.
    Eval(EvalArgs),
    /// Run only the consensus clustering and audit its transcript.
    Simulate(SimulateArgs),
    /// Cross-validate every (lambda, mu) pair of a grid.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5000)]
    samples: usize,
    /// Fraction of entries per feature that receive additive noise.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Fraction of rows shifted into outliers.
    #[arg(long, default_value_t = 0.0)]
    outliers: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DataArgs {
    /// Input CSV.
    #[arg(long)]
    data: PathBuf,
    /// Target column, by header name or zero-based index.
    #[arg(long, default_value = "target")]
    target: ColumnRef,
    /// Group column for leave-one-group-out folds.
    #[arg(long)]
    group: Option<ColumnRef>,
    /// The file has no header row.
    #[arg(long)]
    no_header: bool,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        ingest_csv(&self.data, &self.target, self.group.as_ref(), !self.no_header)
            .with_context(|| format!("reading {}", self.data.display()))
    }
}

/// Flags that override the configuration file, which overrides defaults.
#[derive(Args, Default)]
struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<Task>,
    /// Rules per branch; one value for all branches or one per branch.
    #[arg(long, value_delimiter = ',')]
    rules: Option<Vec<usize>>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    eps1: Option<f64>,
    #[arg(long)]
    eps2: Option<f64>,
    #[arg(long)]
    admm_max_iters: Option<usize>,
    #[arg(long)]
    ao_iters: Option<usize>,
    #[arg(long)]
    ao_rel_tol: Option<f64>,
    #[arg(long)]
    agents: Option<usize>,
    /// Split features into this many contiguous groups.
    #[arg(long)]
    branches: Option<usize>,
    /// Explicit groups of zero-based feature indices, e.g. `0,1,2;3,4,5`.
    #[arg(long)]
    feature_groups: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    m_update: Option<MUpdate>,
    #[arg(long)]
    pool_denominator: Option<PoolDenominator>,
    #[arg(long)]
    clustering: Option<ClusteringMode>,
    /// Number of cross-validation folds.
    #[arg(long, conflicts_with = "leave_one_group_out")]
    folds: Option<usize>,
    /// One fold per distinct value of the group column.
    #[arg(long)]
    leave_one_group_out: bool,
    #[arg(long)]
    nmse_normalizer: Option<NmseNormalizer>,
    /// Write zero instead of wall-clock seconds, for byte-stable output.
    #[arg(long)]
    no_timing: bool,
}

fn parse_groups(text: &str) -> Result<Vec<Vec<usize>>> {
    text.split(';')
        .map(|g| {
            g.split(',')
                .map(|i| {
                    i.trim()
                        .parse::<usize>()
                        .with_context(|| format!("bad feature index '{i}' in '{text}'"))
                })
                .collect()
        })
        .collect()
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                ExperimentConfig::from_toml_str(&text).with_context(|| format!("in {}", path.display()))?
            }
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    c.$field = v;
                }
            )*};
        }
        set!(task, rules, lambda, mu, rho, eps1, eps2, admm_max_iters, ao_iters, agents, seed);
        set!(m_update, pool_denominator, clustering, nmse_normalizer);
        if self.ao_rel_tol.is_some() {
            c.ao_rel_tol = self.ao_rel_tol;
        }
        if self.branches.is_some() {
            c.branches = self.branches;
            c.feature_groups = None;
        }
        if let Some(text) = &self.feature_groups {
            c.feature_groups = Some(parse_groups(text)?);
        }
        if let Some(folds) = self.folds {
            c.folds = FoldScheme::Kfold { folds };
        }
        if self.leave_one_group_out {
            c.folds = FoldScheme::LeaveOneGroupOut;
        }
        if self.no_timing {
            c.record_timing = false;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Where to write the model (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Where to write the clustering transcript (JSON lines).
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// CSV with the model's feature columns; other columns are ignored when
    /// the file has a header.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    no_header: bool,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Results CSV; stdout when absent.
    #[arg(long)]
    results: Option<PathBuf>,
    /// Directory for per-fold model and transcript files.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Dataset name in the results table; the file stem by default.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    /// CSV to cluster; the synthetic set is generated when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "target")]
    target: ColumnRef,
    #[arg(long)]
    no_header: bool,
    /// Synthetic sample count when no data file is given.
    #[arg(long, default_value_t = 5000)]
    samples: usize,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    lambdas: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    mus: Vec<f64>,
    /// Grid CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the winning configuration as TOML.
    #[arg(long)]
    best_config: Option<PathBuf>,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let spec = SyntheticSpec {
        n_samples: args.samples,
        noise_level: args.noise,
        outlier_fraction: args.outliers,
        seed: args.seed,
        ..Default::default()
    };
    let (x, y) = generate_synthetic(&spec)?;
    let data = Dataset::new(x, y, Dataset::default_names(spec.n_features()))?;
    write_csv(&args.out, &data).with_context(|| format!("writing {}", args.out.display()))?;
    info!("wrote {} rows to {}", data.len(), args.out.display());
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let config = args.config.resolve()?;
    let data = args.data.load()?;
    let out = train(data.x.view(), data.y.view(), data.feature_names.clone(), &config)?;
    out.model.save(&args.model).with_context(|| format!("writing {}", args.model.display()))?;
    if let Some(path) = &args.transcript {
        match out.transcript() {
            Some(t) => t.save(path).with_context(|| format!("writing {}", path.display()))?,
            None => bail!("centralized clustering produces no transcript"),
        }
    }
    for (b, c) in out.stage1.clustering.iter().enumerate() {
        eprintln!(
            "branch {b}: {} rules, {} rounds, converged: {}",
            c.centers.nrows(),
            c.rounds,
            c.converged
        );
    }
    Ok(())
}

fn run_predict(args: PredictArgs) -> Result<()> {
    let model = HfnnModel::<f64>::load(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    let (x, _) = ingest_features(&args.data, Some(&model.feature_names), !args.no_header)
        .with_context(|| format!("reading {}", args.data.display()))?;
    let pred = model.predict(x.view())?;
    let mut w = csv::Writer::from_writer(output(args.out.as_deref())?);
    w.write_record(["prediction"])?;
    for p in &pred {
        w.write_record([format!("{p:?}")])?;
    }
    w.flush()?;
    Ok(())
}

fn dataset_name(explicit: Option<String>, path: &Path) -> String {
    explicit.unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "data".into())
    })
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let config = args.config.resolve()?;
    let data = args.data.load()?;
    let name = dataset_name(args.name, &args.data.data);
    let report = run_experiment(&config, &data, &name)?;
    write_results_csv(output(args.results.as_deref())?, &report.rows)?;
    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for f in &report.folds {
            f.model.save(dir.join(format!("fold{}.model.json", f.fold)))?;
            if let Some(t) = &f.transcript {
                t.save(dir.join(format!("fold{}.transcript.jsonl", f.fold)))?;
            }
        }
    }
    for r in &report.reports {
        eprintln!(
            "{} {}: {:.6} +/- {:.6}",
            r.split.as_str(),
            r.metric.as_str(),
            r.mean,
            r.std
        );
    }
    Ok(())
}

fn run_simulate(args: SimulateArgs) -> Result<()> {
    let mut config = args.config.resolve()?;
    let x = match &args.data {
        Some(path) => {
            ingest_csv(path, &args.target, None, !args.no_header)
                .with_context(|| format!("reading {}", path.display()))?
                .x
        }
        None => {
            let spec = SyntheticSpec {
                n_samples: args.samples,
                seed: config.seed,
                ..Default::default()
            };
            if config.feature_groups.is_none() && config.branches.is_none() {
                config.feature_groups = Some(spec.feature_groups());
            }
            generate_synthetic(&spec)?.0
        }
    };
    if config.clustering != ClusteringMode::Distributed {
        bail!("simulate runs the distributed clustering only");
    }
    let stage1 = fit_stage1(x.view(), &config)?;
    let transcript = stage1.transcript.as_ref().context("no transcript was produced")?;
    if let Some(path) = &args.transcript {
        transcript.save(path).with_context(|| format!("writing {}", path.display()))?;
    }
    let replayed = replay(transcript)?;
    let replay_matches = replayed
        .iter()
        .zip(&stage1.clustering)
        .all(|(r, c)| r.centers == c.centers && r.widths == c.widths);
    let audit = privacy_audit(transcript)?;
    let criteria = config.criteria()?;
    let branches: Vec<_> = stage1
        .clustering
        .iter()
        .enumerate()
        .map(|(b, c)| {
            json!({
                "branch": b,
                "features": stage1.plan.feature_groups[b],
                "rules": c.centers.nrows(),
                "rounds": c.rounds,
                "converged": c.converged,
                "first_round_within_tolerance": c.first_round_within(&criteria),
                "empty_clusters": c.empty_clusters,
            })
        })
        .collect();
    let summary = json!({
        "agents": config.agents,
        "messages": transcript.len(),
        "branches": branches,
        "replay_matches": replay_matches,
        "audit": {
            "clean": audit.is_clean(),
            "sizes_match": audit.sizes_match(),
            "raw_sample_fields": audit.raw_sample_fields,
            "unknown_fields": audit.unknown_fields,
            "reals_per_round": audit.rounds.first().map(|r| r.reals),
        },
    });
    writeln!(io::stdout().lock(), "{}", serde_json::to_string_pretty(&summary)?)?;
    if !replay_matches {
        bail!("replayed transcript does not reproduce the live run");
    }
    Ok(())
}

fn run_sweep(args: SweepArgs) -> Result<()> {
    let config = args.config.resolve()?;
    let data = args.data.load()?;
    let result = parameter_sweep(&config, &data, &args.lambdas, &args.mus)?;
    write_sweep_csv(output(args.out.as_deref())?, &result)?;
    let best = &result.cells[result.best];
    eprintln!(
        "best: lambda = {:?}, mu = {:?}, test {} = {:.6}",
        best.lambda,
        best.mu,
        result.metric.as_str(),
        best.test_mean
    );
    if let Some(path) = &args.best_config {
        fs::write(path, result.best_config.to_toml_string()?).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    let outcome = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => run_train(a),
        Command::Predict(a) => run_predict(a),
        Command::Eval(a) => run_eval(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Sweep(a) => run_sweep(a),
    };
    if let Err(e) = outcome {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
