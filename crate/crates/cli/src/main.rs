use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use idpas::gat::load_checkpoint;
use idpas::milp::SolverConfig;
use idpas::mip::load_instance;
use idpas::pas::{binary_eligible, k_from_fraction, run_pas, zero_eligible, PasSettings, PasVariant};
use idpas::pipeline::{self, PipelineError, RunConfig};
use idpas::util::{write_atomic, ClockMode};

#[derive(Parser, Debug)]
#[command(name = "idpas", version, about = "Identity-aware predict-and-search for mixed-integer programs")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ConfigArg {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate train, validation and test instances.
    Gen(ConfigArg),
    /// Collect solution pools and labels for the train and validation splits.
    Collect(ConfigArg),
    /// Train the PaS and ID-PaS models.
    Train(ConfigArg),
    /// Grid-search (k0, delta) on the validation split.
    Tune(ConfigArg),
    /// Evaluate Plain, PaS and ID-PaS on the test split.
    Eval(ConfigArg),
    /// Write metrics, summary, curves and grid tables.
    Report(ConfigArg),
    /// Run every phase in order.
    All(ConfigArg),
    /// Solve one instance inside a predicted neighborhood.
    RunPas(RunPasArgs),
    /// Run the built-in oracle suites.
    Selftest,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Variant {
    IdPas,
    Pas,
}

#[derive(Args, Debug)]
struct RunPasArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "id-pas")]
    variant: Variant,
    /// Absolute count, or a percentage of the eligible variables such as `70%`.
    #[arg(long)]
    k0: String,
    /// Variables fixed towards one (PaS only), count or percentage.
    #[arg(long, default_value = "0")]
    k1: String,
    #[arg(long)]
    delta: usize,
    /// Time limit in seconds.
    #[arg(long, default_value_t = 10.0)]
    time_limit: f64,
    /// Use the wall clock instead of the deterministic work clock.
    #[arg(long)]
    wall_clock: bool,
    /// Incumbent trace output (CSV: time, objective).
    #[arg(long)]
    trace: PathBuf,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global() {
            eprintln!("error: cannot configure {j} jobs: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}

fn load_config(cli: &Cli, arg: &ConfigArg) -> Result<RunConfig, Failure> {
    let mut cfg = match &arg.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    // relative output directories resolve against the config file
    if let (Some(p), None) = (&arg.config, &cli.out) {
        if cfg.out_dir.is_relative() {
            cfg.out_dir = p.parent().unwrap_or(Path::new(".")).join(&cfg.out_dir);
        }
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Gen(a) => {
            pipeline::run_gen(&load_config(cli, a)?)?;
        }
        Command::Collect(a) => {
            pipeline::run_collect(&load_config(cli, a)?)?;
        }
        Command::Train(a) => {
            pipeline::run_train(&load_config(cli, a)?)?;
        }
        Command::Tune(a) => {
            pipeline::run_tune(&load_config(cli, a)?)?;
        }
        Command::Eval(a) => {
            pipeline::run_eval(&load_config(cli, a)?)?;
        }
        Command::Report(a) => {
            pipeline::run_report(&load_config(cli, a)?)?;
        }
        Command::All(a) => {
            pipeline::run_all(&load_config(cli, a)?)?;
        }
        Command::RunPas(a) => run_pas_cmd(cli, a)?,
        Command::Selftest => {
            let mut ok = true;
            for s in idpas::selftest::run_all() {
                eprintln!("{} {}: {}", if s.passed { "PASS" } else { "FAIL" }, s.name, s.detail);
                ok &= s.passed;
            }
            if !ok {
                return Err(Failure::Runtime("self-test failed".into()));
            }
        }
    }
    Ok(())
}

fn parse_count(text: &str, eligible: usize, what: &str) -> Result<usize, Failure> {
    let bad = || Failure::Config(format!("--{what} must be a count or a percentage, got {text:?}"));
    match text.strip_suffix('%') {
        Some(p) => {
            let f: f64 = p.trim().parse().map_err(|_| bad())?;
            if !(0.0..=100.0).contains(&f) {
                return Err(bad());
            }
            Ok(if f == 0.0 { 0 } else { k_from_fraction(f / 100.0, eligible) })
        }
        None => text.trim().parse().map_err(|_| bad()),
    }
}

fn run_pas_cmd(cli: &Cli, a: &RunPasArgs) -> Result<(), Failure> {
    let inst = load_instance(&a.instance).map_err(|e| Failure::Config(e.to_string()))?;
    if !a.checkpoint.exists() {
        return Err(Failure::Config(format!("missing checkpoint {}", a.checkpoint.display())));
    }
    let (params, _) = load_checkpoint(&a.checkpoint).map_err(|e| Failure::Config(e.to_string()))?;
    let (variant, elig) = match a.variant {
        Variant::IdPas => (PasVariant::IdPas, zero_eligible(&inst)),
        Variant::Pas => (PasVariant::BinaryPas, binary_eligible(&inst)),
    };
    let n_elig = elig.iter().filter(|b| **b).count();
    let settings = PasSettings {
        variant,
        k0: parse_count(&a.k0, n_elig, "k0")?,
        k1: parse_count(&a.k1, n_elig, "k1")?,
        delta: a.delta,
    };
    if !(a.time_limit > 0.0) {
        return Err(Failure::Config("--time-limit must be positive".into()));
    }
    let cfg = SolverConfig {
        time_limit: a.time_limit,
        clock: if a.wall_clock { ClockMode::Wall } else { ClockMode::Work },
        rng_seed: cli.seed.unwrap_or(0),
        ..SolverConfig::default()
    };
    let r = run_pas(&inst, &params, &settings, &cfg).map_err(|e| match e {
        idpas::pas::PasError::Selection { .. } | idpas::pas::PasError::Spec(_) | idpas::pas::PasError::Gat(_) => Failure::Config(e.to_string()),
        other => Failure::Runtime(other.to_string()),
    })?;
    let mut csv = String::from("time,objective\n");
    for (t, v) in &r.result.incumbents {
        csv.push_str(&format!("{t},{v}\n"));
    }
    write_atomic(&a.trace, csv.as_bytes()).map_err(|e| Failure::Runtime(format!("{}: {e}", a.trace.display())))?;
    match r.result.best_objective() {
        Some(v) => eprintln!("{}: {:?}, objective {v}, {} incumbents", inst.name, r.result.status, r.result.incumbents.len()),
        None => eprintln!("{}: {:?}, no solution in the neighborhood", inst.name, r.result.status),
    }
    Ok(())
}
