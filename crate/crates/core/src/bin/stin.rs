use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use stin_slicing::harness::export::{export_curve, export_demand, export_report, export_sweep};
use stin_slicing::harness::metrics::MetricsReport;
use stin_slicing::harness::scenario::{load_scenario, Scenario};
use stin_slicing::harness::sim::{Scheme, World};
use stin_slicing::harness::{run_benchmark_idoa, run_benchmark_pure_amappo, run_drs, sweep_elevation, HarnessError};
use stin_slicing::marl::policy::{Policy, PolicyKind};
use stin_slicing::marl::train::{initial_policy, read_checkpoint, train, write_checkpoint, TrainOptions};
use stin_slicing::marl::MarlError;

const EXIT_FAILURE: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_DIVERGED: u8 = 4;

#[derive(Parser)]
#[command(name = "stin", version, about = "Resource slicing for satellite-terrestrial integrated networks")]
struct Cli {
    /// Scenario file; `paper_default` selects the bundled one.
    #[arg(long, global = true, default_value = "paper_default")]
    scenario: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long, global = true, env = "STIN_SEED")]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for the parallel parts; 1 keeps everything sequential.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Replace the scenario's constellation with the 72x22 shell.
    #[arg(long, global = true)]
    full_shell: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode of a scheme and export its metrics.
    Simulate(SimulateArgs),
    /// Train a learned scheme, writing checkpoints and the training curve.
    Train(TrainArgs),
    /// Run a trained policy next to the benchmark without learning.
    Evaluate(EvaluateArgs),
    /// Evaluate the learned scheme over minimum elevation angles.
    SweepElevation(SweepArgs),
    /// Write the per-slot demand trace.
    ExportDemand,
    /// Check a scenario and print its content hash.
    ValidateScenario,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Drs,
    Idoa,
    PureAmappo,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Drs => Scheme::Drs,
            SchemeArg::Idoa => Scheme::Idoa,
            SchemeArg::PureAmappo => Scheme::PureAmappo,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "idoa")]
    scheme: SchemeArg,
    /// Policy checkpoint; the learned schemes fall back to a freshly
    /// initialised policy.
    #[arg(long)]
    policy: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "drs")]
    scheme: SchemeArg,
    /// Overrides the scenario's episode count.
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long, default_value_t = 50)]
    checkpoint_every: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    policy: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![30.0, 40.0, 50.0, 60.0])]
    angles: Vec<f64>,
    #[arg(long)]
    policy: Option<PathBuf>,
}

enum Failure {
    Harness(HarnessError),
    Marl(MarlError),
    Usage(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure::Harness(e)
    }
}

impl From<MarlError> for Failure {
    fn from(e: MarlError) -> Self {
        match e {
            MarlError::Harness(h) => Failure::Harness(*h),
            other => Failure::Marl(other),
        }
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Harness(HarnessError::Parse { .. } | HarnessError::Invalid(_)) => EXIT_INVALID,
            Failure::Harness(HarnessError::Reservation(_)) => EXIT_INFEASIBLE,
            Failure::Marl(MarlError::Divergence { .. }) => EXIT_DIVERGED,
            Failure::Usage(_) => EXIT_INVALID,
            _ => EXIT_FAILURE,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Harness(e) => e.to_string(),
            Failure::Marl(e) => e.to_string(),
            Failure::Usage(m) => m.clone(),
        }
    }
}

fn scenario(cli: &Cli) -> Result<Scenario, Failure> {
    let mut s = load_scenario(&cli.scenario)?;
    if let Some(seed) = cli.seed {
        s.seed = seed;
    }
    if cli.full_shell {
        s.constellation.orbit_count = 72;
        s.constellation.sats_per_orbit = 22;
    }
    Ok(s)
}

fn create_out(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|source| {
        Failure::Harness(HarnessError::Io {
            path: dir.to_path_buf(),
            source,
        })
    })
}

fn policy_for(world: &World, scheme: Scheme, path: Option<&Path>) -> Result<Policy, Failure> {
    let policy = match path {
        Some(p) => read_checkpoint(p)?,
        None => initial_policy(world, scheme, world.scenario.seed),
    };
    let wanted = match scheme {
        Scheme::PureAmappo => PolicyKind::Ratio,
        _ => PolicyKind::Selection,
    };
    if policy.kind != wanted {
        return Err(Failure::Usage(format!(
            "policy head {:?} does not fit scheme {}",
            policy.kind,
            scheme.name()
        )));
    }
    Ok(policy)
}

fn run(world: &World, scheme: Scheme, policy: Option<&Policy>) -> Result<MetricsReport, HarnessError> {
    match (scheme, policy) {
        (Scheme::Idoa, _) => run_benchmark_idoa(world),
        (Scheme::Drs, Some(p)) => run_drs(world, p),
        (Scheme::PureAmappo, Some(p)) => run_benchmark_pure_amappo(world, p),
        (s, None) => Err(HarnessError::MissingPolicy(s.name())),
    }
}

fn print_summary(report: &MetricsReport) {
    println!(
        "{}: total cost {:.6} (system {:.6}, penalty {:.6}), mean slot cost {:.6}, dissatisfaction {:.6}, shortfalls {}",
        report.scheme,
        report.total_cost(),
        report.total_system_cost(),
        report.total_penalty(),
        report.mean_slot_cost(),
        report.dissatisfaction_probability(),
        report.shortfall_count()
    );
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        // a pool can only be installed once; later calls keep the first
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let scenario = scenario(cli)?;
    match &cli.command {
        Command::ValidateScenario => {
            println!("{}: ok, hash {}", scenario.name, scenario.content_hash());
        }
        Command::ExportDemand => {
            let world = World::new(&scenario)?;
            create_out(&cli.out)?;
            let path = cli.out.join("demand.csv");
            export_demand(&world.trace, &path)?;
            println!("{}", path.display());
        }
        Command::Simulate(args) => {
            let world = World::new(&scenario)?;
            let scheme = Scheme::from(args.scheme);
            let policy = match scheme {
                Scheme::Idoa => None,
                s => Some(policy_for(&world, s, args.policy.as_deref())?),
            };
            let report = run(&world, scheme, policy.as_ref())?;
            for p in export_report(&report, &scenario, &cli.out, scheme.name())? {
                println!("{}", p.display());
            }
            print_summary(&report);
        }
        Command::Train(args) => {
            let world = World::new(&scenario)?;
            let scheme = Scheme::from(args.scheme);
            if scheme == Scheme::Idoa {
                return Err(Failure::Usage("idoa has no policy to train".into()));
            }
            create_out(&cli.out)?;
            let options = TrainOptions {
                episodes: args.episodes.unwrap_or(scenario.rl.episodes),
                seed: scenario.seed,
                checkpoint_dir: Some(cli.out.clone()),
                checkpoint_every: args.checkpoint_every,
            };
            let outcome = match train(&world, scheme, &options) {
                Ok(o) => o,
                Err(MarlError::Divergence {
                    episode,
                    reason,
                    last_good,
                }) => {
                    let path = write_checkpoint(&cli.out, episode, &last_good)?;
                    eprintln!("last good policy written to {}", path.display());
                    return Err(Failure::Marl(MarlError::Divergence {
                        episode,
                        reason,
                        last_good,
                    }));
                }
                Err(e) => return Err(e.into()),
            };
            let curve = cli.out.join(format!("{}_curve.csv", scheme.name()));
            export_curve(&outcome.curve, &curve)?;
            let best = cli.out.join("policy_best.stinpol");
            std::fs::write(&best, stin_slicing::marl::checkpoint::encode(&outcome.policy)).map_err(|source| {
                Failure::Harness(HarnessError::Io {
                    path: best.clone(),
                    source,
                })
            })?;
            println!("{}", curve.display());
            println!("{}", best.display());
            if let Some(last) = outcome.curve.last() {
                println!("episode {} cost {:.6}", last.episode, last.cumulative_cost);
            }
        }
        Command::Evaluate(args) => {
            let world = World::new(&scenario)?;
            let policy = read_checkpoint(&args.policy)?;
            let scheme = match policy.kind {
                PolicyKind::Selection => Scheme::Drs,
                PolicyKind::Ratio => Scheme::PureAmappo,
            };
            let learned = run(&world, scheme, Some(&policy))?;
            let baseline = run_benchmark_idoa(&world)?;
            for (report, s) in [(&learned, scheme), (&baseline, Scheme::Idoa)] {
                export_report(report, &scenario, &cli.out, s.name())?;
                print_summary(report);
            }
        }
        Command::SweepElevation(args) => {
            let world = World::new(&scenario)?;
            let policy = policy_for(&world, Scheme::Drs, args.policy.as_deref())?;
            let rows = sweep_elevation(&scenario, &args.angles, &policy)?;
            create_out(&cli.out)?;
            let path = cli.out.join("sweep_elevation.csv");
            export_sweep(&rows, &path)?;
            for r in &rows {
                println!(
                    "{:>5.1} deg: satellite resource {:.6}, dissatisfaction {:.6}, mean slot cost {:.6}",
                    r.angle_deg, r.satellite_resource, r.dissatisfaction, r.mean_slot_cost
                );
            }
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
