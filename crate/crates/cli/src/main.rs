//! `amsa`: generate problems, validate assumptions, run and analyze
//! experiments.
//!
//! Exit status is 0 on success, 1 when a validation or experiment check
//! fails, and 2 on usage or runtime errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use amsa::diagnostics::{assumption_report, AssumptionReport};
use amsa::experiment::{analyze_dir, run_experiment, ExperimentConfig, ExperimentEnv, ExperimentReport, ProblemSpec};
use amsa::problems::mfg::make_random_mfg;
use amsa::problems::{KernelKind, MfgSystem, NestedLinearSpec};
use amsa::samplers::fit_ergodicity;
use amsa::schedules::{check_amsa_conditions, tau_from_certificate, ConditionConstants, ConditionReport, SolverKind};
use amsa::systems::{Operator, OperatorSystem};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "amsa", version, about = "Multi-time-scale stochastic approximation experiments")]
struct Cli {
    /// Configuration file (experiment config, or a problem spec for `generate`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (`run`, `mfg`, `analyze`) or file (`generate`, `validate`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the number of seeds.
    #[arg(long, global = true)]
    seeds: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Emit a problem JSON document from generator flags.
    Generate(GenerateArgs),
    /// Check the assumptions of a problem and the step-size conditions of a config.
    Validate(ValidateArgs),
    /// Execute an experiment config.
    Run,
    /// Refit rates from the curves of a finished run.
    Analyze {
        /// Run output directory (defaults to `--out`).
        dir: Option<PathBuf>,
        #[arg(long, default_value_t = 1.5)]
        decades: f64,
    },
    /// Run the mean-field game comparison.
    Mfg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProblemKind {
    NestedLinear,
    Mfg,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Fixed,
    Iid,
    Mixture,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value = "nested-linear")]
    kind: ProblemKind,
    /// Level dimensions, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "3,3")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 0.5)]
    delta: f64,
    #[arg(long, default_value_t = 0.1)]
    coupling: f64,
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    #[arg(long, value_enum, default_value = "fixed")]
    kernel: KernelArg,
    /// Markov states of the nested-linear sample chain.
    #[arg(long, default_value_t = 5)]
    kernel_states: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    states: usize,
    #[arg(long, default_value_t = 10)]
    actions: usize,
    #[arg(long, default_value_t = 0.05)]
    floor: f64,
    /// Mean-field weight in the MFG transition.
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
}

#[derive(Args)]
struct ValidateArgs {
    /// Problem JSON document; alternatively pass an experiment `--config`.
    problem: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    grid_points: usize,
    #[arg(long, default_value_t = 1.0)]
    grid_radius: f64,
    #[arg(long, default_value_t = 0)]
    grid_seed: u64,
    /// The sample-bound constant used in the step-size conditions.
    #[arg(long, default_value_t = 1.0)]
    d: f64,
}

enum Outcome {
    Pass,
    Fail,
}

type CliResult = Result<Outcome, Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.quiet {
            log::LevelFilter::Error
        } else {
            log::LevelFilter::Info
        })
        .format_target(false)
        .format_timestamp(None)
        .init();
    let result = match &cli.command {
        Command::Generate(args) => generate(&cli, args),
        Command::Validate(args) => validate(&cli, args),
        Command::Run => run(&cli),
        Command::Analyze { dir, decades } => analyze(&cli, dir.as_deref(), *decades),
        Command::Mfg => mfg(&cli),
    };
    match result {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn emit(cli: &Cli, text: &str) -> std::io::Result<()> {
    match &cli.out {
        Some(path) => fs::write(path, format!("{text}\n")),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn generate(cli: &Cli, args: &GenerateArgs) -> CliResult {
    let system: OperatorSystem = if let Some(path) = &cli.config {
        let spec: ProblemSpec = serde_json::from_str(&fs::read_to_string(path)?)?;
        spec.build(path.parent())?
    } else {
        match args.kind {
            ProblemKind::NestedLinear => {
                let mut spec = NestedLinearSpec::new(args.dims.clone(), args.delta, args.coupling, args.sigma)
                    .with_seed(args.seed)
                    .with_kernel(match args.kernel {
                        KernelArg::Fixed => KernelKind::Fixed,
                        KernelArg::Iid => KernelKind::Iid,
                        KernelArg::Mixture => KernelKind::Mixture,
                    });
                spec.n_states = args.kernel_states;
                spec.build()?.into()
            }
            ProblemKind::Mfg => {
                let mut spec = make_random_mfg(args.states, args.actions, args.seed, args.floor)?;
                spec.meanfield_coupling = args.beta;
                MfgSystem::new(spec)?.into()
            }
        }
    };
    emit(cli, &system.to_json()?)?;
    Ok(Outcome::Pass)
}

#[derive(Serialize)]
struct ScheduleCheck {
    solver: SolverKind,
    /// `None` when the conditions do not apply (baseline schedules) or the
    /// mixing time is unavailable.
    report: Option<ConditionReport>,
    note: String,
}

#[derive(Serialize)]
struct ValidationReport {
    assumptions: AssumptionReport,
    schedules: Vec<ScheduleCheck>,
    pass: bool,
}

fn load_config(path: &Path, seeds: Option<u64>) -> Result<ExperimentConfig, Box<dyn std::error::Error>> {
    let mut config = ExperimentConfig::from_json(&fs::read_to_string(path)?)?;
    if let Some(n) = seeds {
        config.seeds.count = n;
        config.validate()?;
    }
    Ok(config)
}

fn validate(cli: &Cli, args: &ValidateArgs) -> CliResult {
    let (system, config) = match (&args.problem, &cli.config) {
        (Some(p), _) => (OperatorSystem::from_json(&fs::read_to_string(p)?)?, None),
        (None, Some(c)) => {
            let config = load_config(c, None)?;
            (config.problem.build(c.parent())?, Some(config))
        }
        (None, None) => return Err("validate needs a problem file or --config".into()),
    };
    let assumptions = assumption_report(&system, args.grid_points, args.grid_radius, args.grid_seed)?;
    let mut pass = assumptions.details.strongly_monotone && assumptions.details.affine_bound_with_stored_l != Some(false);
    let mut schedules = Vec::new();
    if let Some(config) = &config {
        let meta = system.metadata();
        let delta = meta.delta.unwrap_or(assumptions.delta_hat);
        let l = meta.lipschitz.unwrap_or(assumptions.l_hat);
        let zero = vec![0.0; system.total_dim()];
        let cert = system.kernel().map(|k| fit_ergodicity(k, &zero, 200));
        for sc in &config.solvers {
            let schedule = sc.schedule.build(sc.kind, system.n_levels())?;
            let check = match (sc.kind, &cert) {
                (SolverKind::Msa, _) => ScheduleCheck {
                    solver: sc.kind,
                    report: None,
                    note: "the condition block applies to accelerated schedules".into(),
                },
                (SolverKind::Amsa, Some(Ok(cert))) => {
                    let tau = tau_from_certificate(cert, &schedule);
                    let k = ConditionConstants {
                        delta,
                        lipschitz: l,
                        d: args.d,
                        tau: &tau,
                    };
                    let report = check_amsa_conditions(&schedule, &k, config.horizon)?;
                    pass &= report.pass;
                    ScheduleCheck {
                        solver: sc.kind,
                        report: Some(report),
                        note: format!("delta {delta}, L {l}, D {}", args.d),
                    }
                }
                (SolverKind::Amsa, Some(Err(e))) => {
                    pass = false;
                    ScheduleCheck {
                        solver: sc.kind,
                        report: None,
                        note: format!("no ergodicity certificate: {e}"),
                    }
                }
                (SolverKind::Amsa, None) => ScheduleCheck {
                    solver: sc.kind,
                    report: None,
                    note: "the system exposes no sampling kernel; mixing time unavailable".into(),
                },
            };
            schedules.push(check);
        }
    }
    let report = ValidationReport {
        assumptions,
        schedules,
        pass,
    };
    emit(cli, &serde_json::to_string_pretty(&report)?)?;
    Ok(if pass { Outcome::Pass } else { Outcome::Fail })
}

fn execute(cli: &Cli, config: &ExperimentConfig, base_dir: Option<&Path>, default_out: &str) -> CliResult {
    let out = cli
        .out
        .clone()
        .or_else(|| config.output.as_ref().map(|o| base_dir.map_or(o.clone(), |b| b.join(o))))
        .unwrap_or_else(|| PathBuf::from(default_out));
    let env = ExperimentEnv {
        threads: cli.threads,
        base_dir: base_dir.map(Path::to_path_buf),
    };
    let report = run_experiment(config, &env)?;
    report.write(&out)?;
    if !cli.quiet {
        print_summary(&report, &out);
    }
    Ok(if report.summary.pass { Outcome::Pass } else { Outcome::Fail })
}

fn print_summary(report: &ExperimentReport, out: &Path) {
    let s = &report.summary;
    for (name, r) in &s.solvers {
        let mut line = format!("{name}: {}", r.status);
        if let Some(slope) = r.slope {
            line += &format!(", slope {slope:.3}");
        }
        if let Some(p) = r.predicted_slope {
            line += &format!(" (predicted {p:.3})");
        }
        if r.diverged > 0 {
            line += &format!(", {} of {} diverged", r.diverged, r.trajectories);
        }
        for (q, d) in &r.decrease {
            line += &format!(", {q} {:.3e} -> {:.3e}", d.from_value, d.final_value);
        }
        println!("{line}");
    }
    for c in &s.comparisons {
        if let Some(le) = c.amsa_le_msa {
            println!("{}: amsa {} msa", c.quantity, if le { "<=" } else { ">" });
        }
    }
    println!("{} -> {}", if s.pass { "PASS" } else { "FAIL" }, out.display());
}

fn run(cli: &Cli) -> CliResult {
    let path = cli.config.as_ref().ok_or("run needs --config")?;
    let config = load_config(path, cli.seeds)?;
    execute(cli, &config, path.parent(), "out")
}

fn mfg(cli: &Cli) -> CliResult {
    let (mut config, base) = match &cli.config {
        Some(path) => (load_config(path, None)?, path.parent()),
        None => (ExperimentConfig::mfg_reference(), None),
    };
    if let Some(n) = cli.seeds {
        config.seeds.count = n;
    }
    config.validate()?;
    execute(cli, &config, base, "out/mfg")
}

fn analyze(cli: &Cli, dir: Option<&Path>, decades: f64) -> CliResult {
    let dir = dir.or(cli.out.as_deref()).ok_or("analyze needs a run directory")?;
    let fits = analyze_dir(dir, decades)?;
    println!("{}", serde_json::to_string_pretty(&fits)?);
    Ok(if fits.values().all(|f| f.fit.is_some()) {
        Outcome::Pass
    } else {
        Outcome::Fail
    })
}
