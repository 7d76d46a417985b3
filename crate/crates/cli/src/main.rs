//! `triad`: data generation, training, evaluation, gradient checks and
//! ablation reports.
//!
//! Exit codes: 0 success, 1 invalid input (bad flag, config or manifest,
//! or a failed gradient check), 2 runtime failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use triad::data::manifest::MANIFEST_FILE;
use triad::data::{generate_synthetic, write_dataset, DatasetManifest, SampleSource};
use triad::diffcore::suite::{gradcheck_suite, suite_table, CASES, DEFAULT_POINTS, DEFAULT_TOLERANCE};
use triad::diffcore::Checkpoint;
use triad::eval::ablation::{ablation_suite, run_dir, AblationPlan, AblationReport, LADDER};
use triad::training::run::{BEST_CHECKPOINT, CONFIG_FILE};
use triad::training::{evaluate_checkpoint, load_dataset, run_summary, train, Arm, ExperimentConfig, RunOptions};
use triad::util::{sha256_hex, write_atomic};

pub const RUN_DIR_ENV: &str = "TRIAD_RUN_DIR";
const DEFAULT_ROOT: &str = "runs";
const EVALUATION_FILE: &str = "evaluation.txt";

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<triad::Error> for CliError {
    fn from(e: triad::Error) -> Self {
        use triad::Error as E;
        match e {
            E::Config(_) | E::InvalidArgument(_) | E::Manifest(_) => CliError::Invalid(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type Outcome = Result<(), CliError>;

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

/// One `--flag` per configuration key, showing its default.
fn config_args() -> Vec<Arg> {
    let defaults = ExperimentConfig::default();
    let mut args: Vec<Arg> = defaults
        .entries()
        .into_iter()
        .map(|(key, value)| {
            Arg::new(key)
                .long(flag_name(key))
                .value_name("VALUE")
                .help(format!("[default: {value}]"))
                .help_heading("Configuration")
        })
        .collect();
    args.push(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("key:value configuration file, applied before flags"),
    );
    args.push(
        Arg::new("print-config")
            .long("print-config")
            .action(ArgAction::SetTrue)
            .help("print the resolved configuration before running"),
    );
    args
}

fn cli() -> Command {
    Command::new("triad")
        .about("Three-path contrastive training on a two-domain benchmark")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .after_help(format!(
            "Outputs go under ${RUN_DIR_ENV} (default `{DEFAULT_ROOT}`).\nExit codes: 0 success, 1 invalid input, 2 runtime failure."
        ))
        .subcommand(
            Command::new("generate-data")
                .about("Write a synthetic two-domain dataset as a manifest plus blobs")
                .args(config_args())
                .arg(Arg::new("out").long("out").value_name("DIR").help("[default: <root>/data/seed<seed>]")),
        )
        .subcommand(
            Command::new("train")
                .about("Train one arm on one fold")
                .args(config_args())
                .arg(
                    Arg::new("run-dir")
                        .long("run-dir")
                        .value_name("DIR")
                        .help("[default: <root>/<arm>/seed<seed>/fold<fold>]"),
                )
                .arg(
                    Arg::new("resume")
                        .long("resume")
                        .action(ArgAction::SetTrue)
                        .help("continue from last.ckpt in the run directory"),
                ),
        )
        .subcommand(
            Command::new("evaluate")
                .about("Score a run's best checkpoint on its validation and test splits")
                .args(config_args())
                .arg(
                    Arg::new("run-dir")
                        .long("run-dir")
                        .value_name("DIR")
                        .help("run to evaluate; its config.txt is applied first [default: <root>/<arm>/seed<seed>/fold<fold>]"),
                )
                .arg(
                    Arg::new("checkpoint")
                        .long("checkpoint")
                        .value_name("FILE")
                        .help("[default: <run-dir>/best.ckpt]"),
                ),
        )
        .subcommand(
            Command::new("gradcheck")
                .about("Finite-difference checks of every loss and layer")
                .arg(Arg::new("all").long("all").action(ArgAction::SetTrue).help("check every function"))
                .arg(
                    Arg::new("case")
                        .long("case")
                        .value_name("NAME")
                        .action(ArgAction::Append)
                        .value_parser(CASES.map(|(n, _)| n))
                        .help("check one function (repeatable)"),
                )
                .arg(
                    Arg::new("points")
                        .long("points")
                        .value_name("N")
                        .value_parser(clap::value_parser!(usize))
                        .default_value(DEFAULT_POINTS.to_string())
                        .help("random points per function"),
                )
                .arg(
                    Arg::new("tolerance")
                        .long("tolerance")
                        .value_name("TOL")
                        .value_parser(clap::value_parser!(f64))
                        .default_value(DEFAULT_TOLERANCE.to_string())
                        .help("maximum relative error"),
                )
                .arg(
                    Arg::new("seed")
                        .long("seed")
                        .value_name("SEED")
                        .value_parser(clap::value_parser!(u64))
                        .default_value("0"),
                ),
        )
        .subcommand(
            Command::new("ablate")
                .about("Run every arm over every seed and fold and write the report")
                .args(config_args())
                .arg(
                    Arg::new("arms")
                        .long("arms")
                        .value_name("LIST")
                        .help("comma-separated arms, or `all` [default: the five-arm ladder]"),
                )
                .arg(Arg::new("out").long("out").value_name("DIR").help("[default: <root>/ablation]"))
                .arg(
                    Arg::new("no-companion")
                        .long("no-companion")
                        .action(ArgAction::SetTrue)
                        .help("skip the uncoupled auxiliary paths trained next to joint+contrastive"),
                )
                .arg(Arg::new("svg").long("svg").action(ArgAction::SetTrue).help("also write ablation.svg")),
        )
        .subcommand(
            Command::new("report")
                .about("Rebuild the ablation report from existing run directories")
                .arg(Arg::new("dir").long("dir").value_name("DIR").help("[default: <root>/ablation]"))
                .arg(Arg::new("svg").long("svg").action(ArgAction::SetTrue).help("also write ablation.svg")),
        )
}

fn output_root() -> PathBuf {
    std::env::var_os(RUN_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map_or_else(|| PathBuf::from(DEFAULT_ROOT), PathBuf::from)
}

fn path_arg(m: &ArgMatches, id: &str) -> Option<PathBuf> {
    m.get_one::<String>(id).map(PathBuf::from)
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Invalid(format!("cannot read {}: {e}", path.display())))
}

/// Applies the config file and then every flag given on the command line.
fn resolve(m: &ArgMatches, mut cfg: ExperimentConfig) -> Result<ExperimentConfig, CliError> {
    if let Some(file) = path_arg(m, "config") {
        cfg.apply_text(&read_text(&file)?)
            .map_err(|e| CliError::Invalid(format!("{}: {e}", file.display())))?;
    }
    for key in ExperimentConfig::keys() {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)
                .map_err(|e| CliError::Invalid(format!("--{}: {e}", flag_name(key))))?;
        }
    }
    cfg.validate()?;
    if m.get_flag("print-config") {
        print!("{}", cfg.to_text());
    }
    Ok(cfg)
}

fn default_run_dir(cfg: &ExperimentConfig) -> PathBuf {
    run_dir(&output_root(), cfg.arm, cfg.seed, cfg.fold)
}

/// Digest over the manifest and every blob it references, in record order.
fn dataset_digest(dir: &Path, manifest: &DatasetManifest) -> Result<String, CliError> {
    let mut bytes = fs::read(dir.join(MANIFEST_FILE))?;
    for r in &manifest.records {
        if let SampleSource::Blob { path, mask } = &r.source {
            for rel in std::iter::once(path).chain(mask) {
                bytes.extend(fs::read(dir.join(rel))?);
            }
        }
    }
    Ok(sha256_hex(&bytes))
}

fn generate_data(m: &ArgMatches) -> Outcome {
    let cfg = resolve(m, ExperimentConfig::default())?;
    let synth = cfg.synthetic_config();
    let out = path_arg(m, "out").unwrap_or_else(|| output_root().join("data").join(format!("seed{}", synth.seed)));
    let dataset = generate_synthetic(&synth)?;
    fs::create_dir_all(&out)?;
    let manifest = write_dataset(&out, &dataset, &synth.echo())?;
    println!("wrote {} samples to {}", dataset.len(), out.join(MANIFEST_FILE).display());
    println!("digest: {}", dataset_digest(&out, &manifest)?);
    Ok(())
}

fn train_cmd(m: &ArgMatches) -> Outcome {
    let cfg = resolve(m, ExperimentConfig::default())?;
    let dir = path_arg(m, "run-dir").unwrap_or_else(|| default_run_dir(&cfg));
    let result = train(
        &cfg,
        &RunOptions {
            run_dir: Some(dir.clone()),
            resume: m.get_flag("resume"),
        },
    )?;
    print!("{}", run_summary(&result));
    println!("run directory: {}", dir.display());
    Ok(())
}

fn evaluate_cmd(m: &ArgMatches) -> Outcome {
    let explicit = path_arg(m, "run-dir");
    let mut base = ExperimentConfig::default();
    if let Some(dir) = &explicit {
        base.apply_text(&read_text(&dir.join(CONFIG_FILE))?)?;
    }
    let cfg = resolve(m, base)?;
    let dir = explicit.unwrap_or_else(|| default_run_dir(&cfg));
    let ck_path = path_arg(m, "checkpoint").unwrap_or_else(|| dir.join(BEST_CHECKPOINT));
    if !ck_path.exists() {
        return Err(CliError::Invalid(format!("no checkpoint at {}", ck_path.display())));
    }
    let ck = Checkpoint::load(&ck_path)?;
    let dataset = load_dataset(&cfg)?;
    let e = evaluate_checkpoint(&cfg, &dataset, &ck)?;
    let mut text = format!(
        "checkpoint: {}\narm: {}\nseed: {}\nfold: {}\nval_auroc: {}\ntest_auroc: {}\n",
        ck_path.display(),
        cfg.arm,
        cfg.seed,
        cfg.fold,
        e.val_auroc,
        e.test_auroc
    );
    if let Some(m) = e.alignment.as_ref().and_then(|a| a.mean_cross_path()) {
        text.push_str(&format!("mean_cross_path_similarity: {m}\n"));
    }
    print!("{text}");
    if dir.is_dir() {
        write_atomic(&dir.join(EVALUATION_FILE), text.as_bytes())?;
    }
    Ok(())
}

fn gradcheck_cmd(m: &ArgMatches) -> Outcome {
    let cases: Vec<&str> = m
        .get_many::<String>("case")
        .map(|v| v.map(String::as_str).collect())
        .unwrap_or_default();
    if !m.get_flag("all") && cases.is_empty() {
        return Err(CliError::Invalid("gradcheck needs --all or at least one --case".into()));
    }
    let tolerance = *m.get_one::<f64>("tolerance").expect("default");
    let points = *m.get_one::<usize>("points").expect("default");
    let only = if m.get_flag("all") { Vec::new() } else { cases };
    let rows = gradcheck_suite(*m.get_one::<u64>("seed").expect("default"), points, &only)?;
    print!("{}", suite_table(&rows, tolerance));
    let failed = rows.iter().filter(|r| !r.passed(tolerance)).count();
    if failed > 0 {
        return Err(CliError::Invalid(format!("{failed} function(s) exceed relative error {tolerance:e}")));
    }
    println!("all {} functions below {tolerance:e}", rows.len());
    Ok(())
}

fn parse_arms(list: &str) -> Result<Vec<Arm>, CliError> {
    if list == "all" {
        return Ok(Arm::ALL.to_vec());
    }
    let arms = list
        .split(',')
        .map(|a| a.trim().parse::<Arm>())
        .collect::<Result<Vec<_>, _>>()?;
    Ok(arms)
}

fn ablate_cmd(m: &ArgMatches) -> Outcome {
    let cfg = resolve(m, ExperimentConfig::default())?;
    let out = path_arg(m, "out").unwrap_or_else(|| output_root().join("ablation"));
    let mut plan = AblationPlan::new(cfg);
    if let Some(list) = m.get_one::<String>("arms") {
        plan.arms = parse_arms(list)?;
    } else {
        plan.arms = LADDER.to_vec();
    }
    plan.alignment_companion = !m.get_flag("no-companion");
    plan.root = Some(out.clone());
    let report = ablation_suite(&plan)?;
    report.write(&out, m.get_flag("svg"))?;
    print!("{}", report.summary_text());
    println!("report: {}", out.display());
    Ok(())
}

fn report_cmd(m: &ArgMatches) -> Outcome {
    let dir = path_arg(m, "dir").unwrap_or_else(|| output_root().join("ablation"));
    if !dir.is_dir() {
        return Err(CliError::Invalid(format!("{} is not a directory", dir.display())));
    }
    let report = AblationReport::from_run_dirs(&dir)?;
    report.write(&dir, m.get_flag("svg"))?;
    print!("{}", report.summary_text());
    Ok(())
}

fn run(argv: Vec<String>) -> Outcome {
    let matches = match cli().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            let shown = matches!(
                e.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
            );
            let _ = e.print();
            return if shown && e.kind() != ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                Ok(())
            } else {
                Err(CliError::Invalid(String::new()))
            };
        }
    };
    match matches.subcommand() {
        Some(("generate-data", m)) => generate_data(m),
        Some(("train", m)) => train_cmd(m),
        Some(("evaluate", m)) => evaluate_cmd(m),
        Some(("gradcheck", m)) => gradcheck_cmd(m),
        Some(("ablate", m)) => ablate_cmd(m),
        Some(("report", m)) => report_cmd(m),
        _ => unreachable!("subcommand required"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string();
            if !msg.is_empty() {
                eprintln!("error: {msg}");
            }
            ExitCode::from(e.code())
        }
    }
}
