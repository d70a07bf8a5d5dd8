use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::Serialize;

use affrank::dataset::{
    generate_synthetic, group_holdout_split, load_csv, make_pairs, save_csv, Dataset, Partition, SplitPlan,
    SyntheticSpec,
};
use affrank::eval::{evaluate_indices, run_experiment, write_report, CellProgress, ExperimentConfig, MetricPair};
use affrank::loss::{export_surface, AxisSpec, LossConfig, LossVariant, SurfacePanel};
use affrank::nn::Activation;
use affrank::seed::derive;
use affrank::trainer::{load_trained, save_trained, train, TrainConfig};
use affrank::Error;

mod config;

#[derive(Parser, Debug)]
#[command(name = "affrank", version, about = "Pairwise neural ranking with privileged scores")]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Write a synthetic scored dataset
    Generate(GenerateArgs),
    /// Train one model on one group holdout fold
    Train(TrainArgs),
    /// Correlate a model's scores with annotated scores
    Eval(EvalArgs),
    /// Run the fraction x fold x method grid and write the report
    Experiment(ExperimentArgs),
    /// Export pair-loss surfaces over (h(x), h(x'))
    Surface(SurfaceArgs),
}

#[derive(Args, Debug, Clone)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Flat key=value file with flag defaults; explicit flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (only `experiment` runs cells in parallel; 0 = all cores)
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "dataset.csv")]
    output: PathBuf,
    #[arg(long, default_value_t = SyntheticSpec::default().n_groups)]
    n_groups: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().samples_per_group)]
    samples_per_group: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().feature_dim)]
    feature_dim: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().noise_sd)]
    noise_sd: f64,
    #[arg(long, default_value_t = SyntheticSpec::default().score_range.0, allow_hyphen_values = true)]
    score_min: f64,
    #[arg(long, default_value_t = SyntheticSpec::default().score_range.1, allow_hyphen_values = true)]
    score_max: f64,
    #[arg(long, default_value_t = SyntheticSpec::default().utility_scale)]
    utility_scale: f64,
    #[arg(long, default_value_t = SyntheticSpec::default().group_offset_sd)]
    group_offset_sd: f64,
    #[arg(long, default_value_t = SyntheticSpec::default().identity_sd)]
    identity_sd: f64,
    #[arg(long, default_value_t = SyntheticSpec::default().nonlinearity, allow_hyphen_values = true)]
    nonlinearity: f64,
}

/// Model and optimisation flags shared by `train` and `experiment`.
#[derive(Args, Debug, Clone)]
struct ModelArgs {
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Pairs need a score gap strictly above this
    #[arg(long, default_value_t = 4.0)]
    threshold: f64,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 15)]
    patience: usize,
    #[arg(long, default_value_t = 500)]
    max_epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    /// Hidden layer widths, comma separated
    #[arg(long, default_value = "512")]
    hidden: String,
    #[arg(long, default_value = "relu")]
    activation: Activation,
    /// Share of the training partition reserved for early stopping
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    /// Keep at most this many pairs per partition (uniform subsample)
    #[arg(long)]
    max_pairs: Option<usize>,
}

impl ModelArgs {
    fn train_config(&self, loss: LossConfig, seed: u64) -> Result<TrainConfig, Error> {
        let cfg = TrainConfig {
            loss,
            learning_rate: self.lr,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            hidden: parse_list(&self.hidden, "hidden")?,
            activation: self.activation,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "plain")]
    variant: LossVariant,
    /// Mixing weight of the pairwise term; implies `--variant lupi`
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    fold: usize,
    /// Reuse a saved split instead of drawing one
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, default_value = "model.txt")]
    model_file: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Split file; without it every sample is evaluated
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    partition: Partition,
    #[arg(long, default_value = "metrics.csv")]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "0.05,0.1,0.2")]
    fractions: String,
    #[arg(long, default_value = "0.3,0.5,0.8")]
    lambdas: String,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Suppress per-cell progress on stderr
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct SurfaceArgs {
    #[command(flatten)]
    common: Common,
    /// plain, lupi, privileged or all
    #[arg(long, default_value = "all")]
    panel: String,
    #[arg(long, default_value_t = 1)]
    t: u8,
    #[arg(long, default_value_t = 8.0, allow_hyphen_values = true)]
    gz: f64,
    #[arg(long, default_value_t = 4.0, allow_hyphen_values = true)]
    gzp: f64,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    hx_min: f64,
    #[arg(long, default_value_t = 10.0, allow_hyphen_values = true)]
    hx_max: f64,
    #[arg(long, default_value_t = 0.1)]
    hx_step: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    hxp_min: f64,
    #[arg(long, default_value_t = 10.0, allow_hyphen_values = true)]
    hxp_max: f64,
    #[arg(long, default_value_t = 0.1)]
    hxp_step: f64,
    /// Rescale each panel to [0, 1]
    #[arg(long)]
    normalize: bool,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    tool_version: &'a str,
    seed: u64,
    unix_time: u64,
    config: BTreeMap<String, String>,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

/// Input problems exit with 2, everything else with 1.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_input_error() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

fn input_failure(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, Error> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Config(format!("bad value '{s}' in --{what}")))
        })
        .collect()
}

/// Every flag of the subcommand with its effective value, defaults included.
fn resolved_config(sub: &clap::Command, matches: &ArgMatches) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for arg in sub.get_arguments() {
        let (Some(long), id) = (arg.get_long(), arg.get_id().as_str()) else {
            continue;
        };
        if matches!(long, "help" | "version" | "config") {
            continue;
        }
        if let Ok(Some(values)) = matches.try_get_raw(id) {
            let joined: Vec<String> = values.map(|v| v.to_string_lossy().into_owned()).collect();
            out.insert(long.to_string(), joined.join(","));
        }
    }
    out
}

struct Run<'a> {
    name: &'a str,
    common: &'a Common,
    config: BTreeMap<String, String>,
}

impl Run<'_> {
    fn manifest_name(&self) -> String {
        format!("{}.manifest.json", self.name)
    }

    fn out(&self, file: &Path) -> PathBuf {
        self.common.out_dir.join(file)
    }

    /// Write the manifest before any computation starts.
    fn write_manifest(&self, inputs: &[&Path], outputs: &[PathBuf]) -> Result<(), Failure> {
        fs::create_dir_all(&self.common.out_dir).map_err(|e| {
            Failure::from(Error::Io {
                path: self.common.out_dir.clone(),
                source: e,
            })
        })?;
        let manifest = RunManifest {
            command: self.name,
            tool_version: env!("CARGO_PKG_VERSION"),
            seed: self.common.seed,
            unix_time: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            config: self.config.clone(),
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        };
        let path = self.common.out_dir.join(self.manifest_name());
        let text = serde_json::to_string_pretty(&manifest).map_err(Error::from)? + "\n";
        fs::write(&path, text).map_err(|e| Failure::from(Error::Io { path, source: e }))
    }
}

fn load_dataset(path: &Path) -> Result<Dataset, Failure> {
    if !path.exists() {
        return Err(input_failure(format!("dataset not found: {}", path.display())));
    }
    Ok(load_csv(path)?)
}

fn cmd_generate(args: &GenerateArgs, run: &Run) -> Result<(), Failure> {
    let spec = SyntheticSpec {
        n_groups: args.n_groups,
        samples_per_group: args.samples_per_group,
        feature_dim: args.feature_dim,
        noise_sd: args.noise_sd,
        score_range: (args.score_min, args.score_max),
        utility_scale: args.utility_scale,
        group_offset_sd: args.group_offset_sd,
        identity_sd: args.identity_sd,
        nonlinearity: args.nonlinearity,
        seed: run.common.seed,
    };
    spec.validate()?;
    let output = run.out(&args.output);
    run.write_manifest(&[], std::slice::from_ref(&output))?;
    let data = generate_synthetic(&spec)?;
    save_csv(
        &data.dataset,
        &output,
        Some(&format!("manifest: {}", run.manifest_name())),
    )?;
    println!(
        "wrote {} ({} samples, {} groups, {} features)",
        output.display(),
        data.dataset.len(),
        spec.n_groups,
        spec.feature_dim
    );
    Ok(())
}

fn cmd_train(args: &TrainArgs, run: &Run) -> Result<(), Failure> {
    let loss = match (args.lambda, args.variant) {
        (Some(lambda), _) => LossConfig::lupi(lambda, args.model.tau)?,
        (None, LossVariant::Plain) => LossConfig::plain(),
        (None, LossVariant::Lupi) => {
            return Err(input_failure("--variant lupi needs --lambda"));
        }
    };
    let cfg = args.model.train_config(loss, run.common.seed)?;
    let dataset = load_dataset(&args.data)?;
    let plan = match &args.split {
        Some(path) => {
            let plan = SplitPlan::load(path)?;
            plan.validate(&dataset)?;
            plan
        }
        None => {
            let outcome = group_holdout_split(
                &dataset,
                args.train_fraction,
                args.model.val_fraction,
                args.fold + 1,
                run.common.seed,
            )?;
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            outcome.plans.into_iter().nth(args.fold).expect("one plan per fold")
        }
    };

    let model_path = run.out(&args.model_file);
    let split_path = run.out(Path::new("split.json"));
    let mut inputs = vec![args.data.as_path()];
    if let Some(s) = &args.split {
        inputs.push(s.as_path());
    }
    run.write_manifest(
        &inputs,
        &[
            model_path.clone(),
            affrank::trainer::sidecar_path(&model_path),
            split_path.clone(),
        ],
    )?;

    let pairs = |partition: Partition, tag: &str| {
        make_pairs(
            &dataset,
            &plan.indices(&dataset, partition),
            args.model.threshold,
            args.model.max_pairs,
            derive(plan.seed, tag, 0),
        )
    };
    let fit_pairs = pairs(Partition::Fit, "pairs-fit")?;
    let validation_pairs = pairs(Partition::Validation, "pairs-validation")?;
    eprintln!(
        "fold {}: {} fit pairs, {} validation pairs",
        plan.fold,
        fit_pairs.len(),
        validation_pairs.len()
    );
    let model = train(&dataset, &fit_pairs, &validation_pairs, &cfg)?;
    let manifest = run.manifest_name();
    save_trained(&model, &model_path, Some(&manifest))?;
    let mut plan_json: serde_json::Value = serde_json::from_str(&plan.to_json()?).map_err(Error::from)?;
    plan_json["manifest"] = manifest.into();
    fs::write(
        &split_path,
        serde_json::to_string_pretty(&plan_json).map_err(Error::from)? + "\n",
    )
    .map_err(|e| {
        Failure::from(Error::Io {
            path: split_path.clone(),
            source: e,
        })
    })?;
    println!(
        "stopped at epoch {} (best epoch {}, validation loss {:.6}); wrote {}",
        model.stopped_epoch,
        model.best_epoch,
        model.best_validation_loss,
        model_path.display()
    );
    Ok(())
}

fn describe(value: f64, degenerate: bool) -> String {
    if degenerate {
        format!("{value:.3} (degenerate)")
    } else {
        format!("{value:.3}")
    }
}

fn cmd_eval(args: &EvalArgs, run: &Run) -> Result<(), Failure> {
    let dataset = load_dataset(&args.data)?;
    if !args.model.exists() {
        return Err(input_failure(format!("model not found: {}", args.model.display())));
    }
    let model = load_trained(&args.model)?;
    let (indices, label) = match &args.split {
        Some(path) => {
            let plan = SplitPlan::load(path)?;
            plan.validate(&dataset)?;
            let label = format!("{:?}", args.partition).to_lowercase();
            (plan.indices(&dataset, args.partition), label)
        }
        None => ((0..dataset.len()).collect(), "all".to_string()),
    };
    let output = run.out(&args.output);
    let mut inputs = vec![args.model.as_path(), args.data.as_path()];
    if let Some(s) = &args.split {
        inputs.push(s.as_path());
    }
    run.write_manifest(&inputs, std::slice::from_ref(&output))?;
    let m: MetricPair = evaluate_indices(&model, &dataset, &indices)?;
    let mut text = format!("# manifest: {}\n", run.manifest_name());
    text += "partition,n,pearson_r,kendall_tau,pearson_degenerate,kendall_degenerate\n";
    text += &format!(
        "{label},{},{},{},{},{}\n",
        m.n, m.pearson_r, m.kendall_tau, m.pearson_degenerate, m.kendall_degenerate
    );
    fs::write(&output, text).map_err(|e| {
        Failure::from(Error::Io {
            path: output.clone(),
            source: e,
        })
    })?;
    println!(
        "r={} tau={} n={}",
        describe(m.pearson_r, m.pearson_degenerate),
        describe(m.kendall_tau, m.kendall_degenerate),
        m.n
    );
    Ok(())
}

fn cmd_experiment(args: &ExperimentArgs, run: &Run) -> Result<(), Failure> {
    let mut train = args.model.train_config(LossConfig::plain(), 0)?;
    train.seed = 0;
    let cfg = ExperimentConfig {
        fractions: parse_list(&args.fractions, "fractions")?,
        lambdas: parse_list(&args.lambdas, "lambdas")?,
        n_folds: args.folds,
        threshold: args.model.threshold,
        validation_fraction: args.model.val_fraction,
        max_pairs: args.model.max_pairs,
        tau: args.model.tau,
        train,
        seed: run.common.seed,
        jobs: run.common.jobs,
    };
    cfg.validate()?;
    let dataset = load_dataset(&args.data)?;
    let outputs: Vec<PathBuf> = affrank::eval::REPORT_FILES
        .iter()
        .map(|f| run.out(Path::new(f)))
        .collect();
    run.write_manifest(&[args.data.as_path()], &outputs)?;

    let quiet = args.quiet;
    let progress = move |p: &CellProgress| {
        if !quiet {
            eprintln!(
                "[{}/{}] fraction {} fold {} {}",
                p.done,
                p.total,
                p.fraction,
                p.fold,
                p.method.label()
            );
        }
    };
    let report = run_experiment(&dataset, &cfg, Some(&progress))?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    write_report(&report, &run.common.out_dir, Some(&run.manifest_name()))?;

    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "mean Kendall tau by train fraction");
    let _ = write!(stdout, "{}", report.table_csv(true));
    for s in &report.summaries {
        if let (Some(t), Some(lambda)) = (&s.kendall_ttest, s.best_lambda) {
            let _ = writeln!(
                stdout,
                "fraction {}: AffRankNet+ (lambda={lambda}) - RankNet = {:+.4} tau, t={:.3}, p={:.4}{}",
                s.fraction,
                t.mean_difference,
                t.t_statistic,
                t.p_value,
                if t.significant_at_005 {
                    " (significant at 0.05)"
                } else {
                    ""
                }
            );
        }
    }
    let _ = writeln!(stdout, "report written to {}", run.common.out_dir.display());
    Ok(())
}

fn cmd_surface(args: &SurfaceArgs, run: &Run) -> Result<(), Failure> {
    let panels: Vec<SurfacePanel> = if args.panel == "all" {
        SurfacePanel::ALL.to_vec()
    } else {
        vec![args.panel.parse()?]
    };
    let config = LossConfig::lupi(args.lambda, args.tau)?;
    let hx = AxisSpec {
        min: args.hx_min,
        max: args.hx_max,
        step: args.hx_step,
    };
    let hxp = AxisSpec {
        min: args.hxp_min,
        max: args.hxp_max,
        step: args.hxp_step,
    };
    hx.points()?;
    hxp.points()?;
    let outputs: Vec<PathBuf> = panels
        .iter()
        .map(|p| run.out(Path::new(&format!("surface_{}.csv", p.name()))))
        .collect();
    run.write_manifest(&[], &outputs)?;
    for (panel, path) in panels.iter().zip(&outputs) {
        let grid = export_surface(*panel, args.t, args.gz, args.gzp, &config, &hx, &hxp, args.normalize)?;
        let file = fs::File::create(path).map_err(|e| {
            Failure::from(Error::Io {
                path: path.clone(),
                source: e,
            })
        })?;
        grid.write_csv(
            std::io::BufWriter::new(file),
            Some(&format!("manifest: {}", run.manifest_name())),
        )
        .map_err(|e| {
            Failure::from(Error::Io {
                path: path.clone(),
                source: e,
            })
        })?;
        let (i, j, v) = grid.argmin();
        println!(
            "{}: {}x{} grid, minimum {v:.6} at hx={}, hxp={}; wrote {}",
            panel.name(),
            grid.rows(),
            grid.cols(),
            grid.hx_axis[i],
            grid.hxp_axis[j],
            path.display()
        );
    }
    Ok(())
}

/// Splice config-file tokens in right after the subcommand name.
fn expand_args(raw: Vec<String>) -> Result<Vec<String>, Failure> {
    let Some(path) = config::find_config_arg(&raw) else {
        return Ok(raw);
    };
    let Some(name) = raw.get(1) else {
        return Ok(raw);
    };
    let root = Cli::command();
    let Some(sub) = root.find_subcommand(name) else {
        return Ok(raw);
    };
    let entries = config::read_config_file(Path::new(&path)).map_err(input_failure)?;
    let tokens = config::config_tokens(sub, &entries).map_err(input_failure)?;
    let mut out = raw[..2].to_vec();
    out.extend(tokens);
    out.extend(raw[2..].iter().cloned());
    Ok(out)
}

fn dispatch(argv: Vec<String>) -> Result<(), Failure> {
    let argv = expand_args(argv)?;
    let mut root = Cli::command();
    let matches = match root.try_get_matches_from_mut(&argv) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return if code == 0 {
                Ok(())
            } else {
                Err(Failure {
                    code,
                    message: String::new(),
                })
            };
        }
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| input_failure(e.to_string()))?;
    let (name, sub_matches) = matches.subcommand().expect("subcommand is required");
    let sub = root.find_subcommand(name).expect("parsed subcommand exists");
    let config = resolved_config(sub, sub_matches);
    match &cli.command {
        Cmd::Generate(a) => cmd_generate(
            a,
            &Run {
                name,
                common: &a.common,
                config,
            },
        ),
        Cmd::Train(a) => cmd_train(
            a,
            &Run {
                name,
                common: &a.common,
                config,
            },
        ),
        Cmd::Eval(a) => cmd_eval(
            a,
            &Run {
                name,
                common: &a.common,
                config,
            },
        ),
        Cmd::Experiment(a) => cmd_experiment(
            a,
            &Run {
                name,
                common: &a.common,
                config,
            },
        ),
        Cmd::Surface(a) => cmd_surface(
            a,
            &Run {
                name,
                common: &a.common,
                config,
            },
        ),
    }
}

fn main() -> ExitCode {
    match dispatch(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if !f.message.is_empty() {
                eprintln!("error: {}", f.message);
            }
            ExitCode::from(f.code)
        }
    }
}
