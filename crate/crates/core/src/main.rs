use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ddbsense::attack::{schedule_attacks, write_attack_csv, AttackMethod};
use ddbsense::classifier::train;
use ddbsense::ddb::{compute_ddb_set, write_ddb_csv, DdbMethod};
use ddbsense::experiment::checks::check_report;
use ddbsense::experiment::{
    derive_seed, emit_report, read_report_json, run_sweep, ExperimentConfig, ExperimentReport, ReportFormat, World,
    SWEEPS,
};
use ddbsense::ks::{stream_detect, write_decision_csv};
use ddbsense::scenario::{ChannelScenario, Dataset};
use ddbsense::Error;

#[derive(Parser, Debug)]
#[command(
    name = "ddbsense",
    version,
    about = "DDB-based detection of adversarial spectrum attacks"
)]
struct Cli {
    /// TOML experiment configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Multiply all data sizes.
    #[arg(long, global = true)]
    scale: Option<f64>,
    /// 20,000 train / 80,000 test vectors.
    #[arg(long, global = true)]
    full: bool,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long, global = true, value_enum)]
    ddb_method: Option<DdbArg>,
    #[arg(long, global = true, value_enum)]
    attack: Option<AttackArg>,
    /// Attack occurrence ratio.
    #[arg(long, global = true)]
    ratio: Option<f64>,
    #[arg(long, global = true)]
    group_size: Option<usize>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Compromised nodes 1..=m.
    #[arg(long, global = true)]
    m: Option<usize>,
    /// Explicit compromised nodes, 1-based, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    nodes: Option<Vec<usize>>,
    /// Check the report's trend and floor assertions; exit 3 on failure.
    #[arg(long = "assert", global = true)]
    assert_mode: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write train and test datasets as CSV.
    Generate,
    /// Train the fusion model on generated or given data and save it.
    Train {
        /// Dataset CSV (`node_1..node_n,label`) instead of generated data.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// DDBs of the test stream (or a given dataset).
    Ddb {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Attack the test stream and write the attack trace.
    Attack,
    /// Run the default pipeline and write the K-S decision log.
    Detect,
    /// Run a named sweep.
    Sweep {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(SWEEPS))]
        name: String,
    },
    /// Re-emit a JSON report in `--format`, optionally checking it.
    Report { input: PathBuf },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DdbArg {
    Lrt,
    Deepfool,
    Cw,
    Lbfgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AttackArg {
    Fgsm,
    Pgd,
    Deepfool,
    Lbfgs,
}

enum Failure {
    Config(String),
    Runtime(String),
    Assertion,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::Schema { .. }
            | Error::Parse { .. }
            | Error::InvalidScenario(_)
            | Error::InvalidAttacker(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn effective_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    if let Some(v) = cli.scale {
        cfg.scale = v;
    }
    cfg.full |= cli.full;
    if let Some(v) = cli.ddb_method {
        cfg.detection.ddb_method = match v {
            DdbArg::Lrt => DdbMethod::LrtBinarySearch,
            DdbArg::Deepfool => DdbMethod::DeepFool,
            DdbArg::Cw => DdbMethod::Cw,
            DdbArg::Lbfgs => DdbMethod::Lbfgs,
        };
    }
    if let Some(v) = cli.attack {
        cfg.attack.method = match v {
            AttackArg::Fgsm => AttackMethod::Fgsm,
            AttackArg::Pgd => AttackMethod::Pgd,
            AttackArg::Deepfool => AttackMethod::DeepFool,
            AttackArg::Lbfgs => AttackMethod::Lbfgs,
        };
    }
    if let Some(v) = cli.ratio {
        cfg.attack.occurrence_ratio = v;
    }
    if let Some(v) = cli.group_size {
        cfg.detection.group_size = v;
    }
    if let Some(v) = cli.alpha {
        cfg.detection.alpha = v;
    }
    if let Some(v) = cli.m {
        cfg.attack.m = v;
        cfg.attack.nodes = None;
    }
    if let Some(v) = &cli.nodes {
        cfg.attack.nodes = Some(v.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report_format(f: Format) -> ReportFormat {
    match f {
        Format::Csv => ReportFormat::Csv,
        Format::Json => ReportFormat::Json,
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_report(cli: &Cli, report: &ExperimentReport, stem: &str) -> Result<(), Failure> {
    fs::create_dir_all(&cli.out)?;
    let format = report_format(cli.format);
    let path = cli.out.join(format!("{stem}.{}", format.extension()));
    emit_report(report, format, &path)?;
    if !report.timings.is_empty() {
        let t = serde_json::to_string_pretty(&report.timings).map_err(Error::from)?;
        fs::write(cli.out.join(format!("{stem}.timings.json")), t)?;
    }
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn assert_report(cli: &Cli, report: &ExperimentReport) -> Result<(), Failure> {
    if !cli.assert_mode {
        return Ok(());
    }
    let checks = check_report(report);
    let mut ok = true;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        ok &= c.passed;
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::Assertion)
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Command::Report { input } = &cli.command {
        let report = read_report_json(File::open(input)?)?;
        let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
        write_report(cli, &report, stem)?;
        return assert_report(cli, &report);
    }
    let cfg = effective_config(cli)?;
    match &cli.command {
        Command::Generate => {
            let sizes = cfg.sizes();
            let scenario = ChannelScenario::synthetic(&cfg.scenario)?;
            let train_set = Dataset::generate(&scenario, sizes.train, derive_seed(cfg.seed, "train"))?;
            let test = Dataset::generate_from(
                &scenario,
                sizes.test,
                derive_seed(cfg.seed, "test/0"),
                sizes.train as u64,
            )?;
            train_set.write_csv_to(create(&cli.out, "train.csv")?)?;
            test.write_csv_to(create(&cli.out, "test.csv")?)?;
            eprintln!(
                "wrote {} train and {} test vectors to {}",
                train_set.len(),
                test.len(),
                cli.out.display()
            );
        }
        Command::Train { data } => {
            let (model, acc) = match data {
                Some(path) => {
                    let ds = Dataset::load_csv(path)?;
                    let (model, rep) = train(&ds, &cfg.training)?;
                    (model, rep.train_accuracy)
                }
                None => {
                    let world = World::build(&cfg)?;
                    println!("test accuracy {:.5}", world.test_accuracy);
                    (world.model, world.train_report.train_accuracy)
                }
            };
            fs::create_dir_all(&cli.out)?;
            model.save(cli.out.join("model.bin"))?;
            println!("train accuracy {acc:.5}");
        }
        Command::Ddb { data } => {
            let world = World::build(&cfg)?;
            let method = cfg.detection.ddb_method;
            let set = match data {
                Some(path) => {
                    let ds = Dataset::load_csv(path)?;
                    compute_ddb_set(
                        &world.model,
                        ds.records(),
                        method,
                        Some(&world.direction),
                        &world.search,
                    )?
                }
                None => world.ddb_set(&world.test, method)?,
            };
            if let Some(w) = &set.warning {
                eprintln!("warning: {w}");
            }
            write_ddb_csv(&set, create(&cli.out, "ddb.csv")?)?;
        }
        Command::Attack => {
            let world = World::build(&cfg)?;
            let knowledge = world.knowledge(&cfg.attack.controlled())?;
            let attack = cfg.attack.attack_config(derive_seed(cfg.seed, "schedule"));
            let outcomes = schedule_attacks(&world.model, &knowledge, &world.test, &attack, &world.search)?;
            write_attack_csv(&outcomes, create(&cli.out, "attack_trace.csv")?)?;
            let hit = outcomes.iter().filter(|o| o.attacked).count();
            let won = outcomes.iter().filter(|o| o.success).count();
            println!("attacked {hit}, succeeded {won}");
        }
        Command::Detect => {
            let world = World::build(&cfg)?;
            let method = cfg.detection.ddb_method;
            let knowledge = world.knowledge(&cfg.attack.controlled())?;
            let attack = cfg.attack.attack_config(derive_seed(cfg.seed, "schedule"));
            let eval = world.attacked_eval(method, &knowledge, &attack)?;
            let baseline = world.baseline(method)?;
            let decisions = stream_detect(
                &baseline,
                &eval.distances,
                cfg.detection.group_size,
                cfg.detection.alpha,
            )?;
            write_decision_csv(&decisions, create(&cli.out, "decisions.csv")?)?;
            let report = run_sweep(&world, "pipeline")?;
            write_report(cli, &report, "pipeline")?;
            let r = &report.rows[0].metrics;
            println!(
                "detection {:.4}, false alarm {:.4}, attack success {:.4}",
                r["detection_rate"], r["false_alarm_rate"], r["attack_success_rate"]
            );
            assert_report(cli, &report)?;
        }
        Command::Sweep { name } => {
            let world = World::build(&cfg)?;
            let report = run_sweep(&world, name)?;
            write_report(cli, &report, name)?;
            assert_report(cli, &report)?;
        }
        Command::Report { .. } => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Assertion) => {
            eprintln!("assertion failed");
            ExitCode::from(3)
        }
    }
}
