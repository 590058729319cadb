//! `shipsafe` command line: terminal-set synthesis, single runs, evaluation
//! campaigns and deterministic replay.
//!
//! Exit codes: 0 success, 1 configuration error, 2 synthesis or verification
//! failure (including replay mismatches), 3 output I/O failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use shipsafe::artifact::{load_or_synthesize, synthesize_artifact, write_artifact, ArtifactError};
use shipsafe::campaign::{aggregate, run_campaign, summary_table, CampaignOptions, EpisodeSummary};
use shipsafe::config::{config_dir, load_scenario, read_json, ConfigError, PolicyKind, RunConfig, Settings, Telemetry};
use shipsafe::output::{create_dir, read_telemetry, write_json, write_telemetry, write_text, write_trajectory, OutputError};
use shipsafe::runner::{run_episode, EpisodeOptions, EpisodeResult, RunError, RunRecord, Setup};
use shipsafe::svg::{radar_chart, trajectory_plot};
use shipsafe::WallClock;
use shipsafe_core::psf::{Clock, NoClock};
use shipsafe_core::vessel::{HydroParams, InputBounds};

#[derive(Debug, Parser)]
#[command(name = "shipsafe", version, about = "Predictive safety filter for autonomous surface vessels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize and verify the terminal set, then write it as JSON.
    Synth(SynthArgs),
    /// Run one episode and write its trajectory, telemetry and metrics.
    Run(RunArgs),
    /// Run an evaluation campaign.
    Eval(EvalArgs),
    /// Rerun a recorded episode from its logged proposals and compare.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Hydrodynamic parameters (JSON); defaults to the configuration directory.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Actuator bounds (JSON); defaults to the configuration directory.
    #[arg(long)]
    bounds: Option<PathBuf>,
    #[arg(long, default_value = "terminal_set.json")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    Los,
    Adversarial,
    Zero,
    External,
    Replay,
}

#[derive(Debug, Args)]
struct EpisodeArgs {
    /// Scenario case: 1, 2 or 3.
    #[arg(long)]
    case: Option<String>,
    /// Scenario JSON file; omitted fields take the defaults of its case.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PolicyArg::Los)]
    policy: PolicyArg,
    /// External agent command line, split on whitespace.
    #[arg(long)]
    agent: Option<String>,
    /// Per-message reply timeout for the external agent.
    #[arg(long, default_value_t = 5000)]
    agent_timeout_ms: u64,
    /// Telemetry file whose proposals the replay policy re-emits.
    #[arg(long)]
    actions: Option<PathBuf>,
    /// Apply proposals without filtering.
    #[arg(long)]
    no_psf: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Verified terminal-set artifact; synthesized on the fly when absent.
    #[arg(long)]
    terminal_set: Option<PathBuf>,
    #[arg(long, value_enum)]
    telemetry: Option<Telemetry>,
    /// Record zero solve times so outputs are byte-reproducible.
    #[arg(long)]
    no_timing: bool,
    /// Simulated-time limit per episode (s).
    #[arg(long)]
    time_cap: Option<f64>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: EpisodeArgs,
    /// Also write plot.svg.
    #[arg(long)]
    plot: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: EpisodeArgs,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    /// Output directory of a `run` with tick telemetry.
    run_dir: PathBuf,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Verification(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Config(_) => 1,
            Self::Verification(_) => 2,
            Self::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Config(m) | Self::Verification(m) | Self::Io(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<OutputError> for Failure {
    fn from(e: OutputError) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<ArtifactError> for Failure {
    fn from(e: ArtifactError) -> Self {
        match e {
            ArtifactError::Config(_) | ArtifactError::Format(..) => Self::Config(e.to_string()),
            ArtifactError::Synthesis(_) | ArtifactError::Mismatch(_) | ArtifactError::Unverified(_) => {
                Self::Verification(e.to_string())
            }
        }
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Output(o) => o.into(),
            other => Self::Config(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Run(a) => run(&a),
        Command::Eval(a) => eval(&a),
        Command::Replay(a) => replay(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn synth(args: &SynthArgs) -> Result<(), Failure> {
    let settings = Settings::load(config_dir().as_deref())?;
    let mut spec = settings.terminal;
    if let Some(p) = &args.params {
        spec.params = read_json::<HydroParams>(p)?;
    }
    if let Some(b) = &args.bounds {
        spec.inputs = read_json::<InputBounds>(b)?;
    }
    let artifact = synthesize_artifact(&spec).map_err(|e| Failure::Verification(e.to_string()))?;
    write_artifact(&args.out, &artifact).map_err(|e| Failure::Io(format!("{}: {e}", args.out.display())))?;
    let set = &artifact.set;
    println!("terminal set written to {}", args.out.display());
    println!("  verified       {}", set.verified);
    println!("  level d_f      {:.6}", set.d_f);
    println!("  samples        {}", set.samples);
    println!("  refinements    {}", set.refinements);
    println!("  travel bound   {:.3} m", set.travel_bound);
    println!("  params hash    {}", artifact.params_hash);
    Ok(())
}

fn policy_kind(a: &EpisodeArgs) -> Result<PolicyKind, Failure> {
    let stray = |flag: &str| Failure::Config(format!("{flag} only applies to --policy {}", if flag == "--agent" { "external" } else { "replay" }));
    if a.agent.is_some() && a.policy != PolicyArg::External {
        return Err(stray("--agent"));
    }
    if a.actions.is_some() && a.policy != PolicyArg::Replay {
        return Err(stray("--actions"));
    }
    Ok(match a.policy {
        PolicyArg::Los => PolicyKind::LosFollower,
        PolicyArg::Adversarial => PolicyKind::Adversarial,
        PolicyArg::Zero => PolicyKind::Zero,
        PolicyArg::External => {
            let cmd = a.agent.as_deref().ok_or_else(|| Failure::Config("--policy external needs --agent <command>".into()))?;
            let command: Vec<String> = cmd.split_whitespace().map(str::to_owned).collect();
            if command.is_empty() {
                return Err(Failure::Config("--agent is empty".into()));
            }
            PolicyKind::External {
                command,
                timeout_ms: a.agent_timeout_ms,
            }
        }
        PolicyArg::Replay => PolicyKind::Replay {
            file: a.actions.clone().ok_or_else(|| Failure::Config("--policy replay needs --actions <telemetry file>".into()))?,
        },
    })
}

fn run_config(a: &EpisodeArgs, episodes: usize, telemetry: Telemetry) -> Result<RunConfig, Failure> {
    let mut scenario = load_scenario(a.case.as_deref(), a.scenario.as_deref())?;
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    if let Some(cap) = a.time_cap {
        if !(cap.is_finite() && cap > 0.0) {
            return Err(Failure::Config("--time-cap must be positive".into()));
        }
    }
    Ok(RunConfig {
        seed: scenario.seed,
        scenario,
        policy: policy_kind(a)?,
        psf: !a.no_psf,
        episodes,
        out: a.out.clone(),
        telemetry: a.telemetry.unwrap_or(telemetry),
        timing: !a.no_timing,
        time_cap: a.time_cap,
    })
}

fn setup(terminal_set: Option<&Path>) -> Result<Setup, Failure> {
    let settings = Settings::load(config_dir().as_deref())?;
    let terminal = load_or_synthesize(terminal_set, &settings.terminal)?;
    Ok(Setup::new(settings, terminal)?)
}

fn episode_options(cfg: &RunConfig, keep_records: bool) -> EpisodeOptions {
    EpisodeOptions {
        policy: cfg.policy.clone(),
        psf: cfg.psf,
        time_cap: cfg.time_cap,
        keep_records,
    }
}

fn write_episode(dir: &Path, r: &EpisodeResult, telemetry: Telemetry) -> Result<(), OutputError> {
    write_json(&dir.join("world.json"), &r.scenario)?;
    write_trajectory(&dir.join("trajectory.csv"), &r.records)?;
    if telemetry == Telemetry::Ticks {
        write_telemetry(&dir.join("telemetry.jsonl"), &r.records)?;
    }
    Ok(())
}

fn run(args: &RunArgs) -> Result<(), Failure> {
    let cfg = run_config(&args.common, 1, Telemetry::Ticks)?;
    let setup = setup(args.common.terminal_set.as_deref())?;
    let wall = WallClock::new();
    let clock: &dyn Clock = if cfg.timing { &wall } else { &NoClock };
    let result = run_episode(&setup, &cfg.scenario, &episode_options(&cfg, true), clock)?;

    create_dir(&cfg.out)?;
    let record = RunRecord {
        config: cfg.clone(),
        settings: setup.settings.clone(),
        terminal: setup.terminal.clone(),
        aborted: result.aborted.clone(),
    };
    write_json(&cfg.out.join("run.json"), &record)?;
    write_episode(&cfg.out, &result, cfg.telemetry)?;
    write_json(&cfg.out.join("metrics.json"), &result.metrics)?;
    if args.plot {
        write_text(&cfg.out.join("plot.svg"), &trajectory_plot(&result.scenario, &result.records))?;
    }

    let m = &result.metrics;
    println!(
        "{}: {} after {:.1} s, progress {:.3}, collision {}, interventions {:.3}, min clearance {:.2} m",
        cfg.out.display(),
        m.done_reason.map_or("aborted", |r| r.name()),
        m.elapsed,
        m.progress,
        m.collision,
        m.intervention_rate,
        m.min_clearance,
    );
    match result.aborted {
        Some(reason) => Err(Failure::Config(format!("episode aborted: {reason}"))),
        None => Ok(()),
    }
}

fn eval(args: &EvalArgs) -> Result<(), Failure> {
    let cfg = run_config(&args.common, args.episodes, Telemetry::Off)?;
    let setup = setup(args.common.terminal_set.as_deref())?;
    create_dir(&cfg.out)?;
    let episodes_dir = cfg.out.join("episodes");
    let keep = cfg.telemetry == Telemetry::Ticks;
    let sink = |s: &EpisodeSummary, r: &EpisodeResult| -> Result<(), OutputError> {
        let dir = episodes_dir.join(s.index.to_string());
        create_dir(&dir)?;
        write_json(&dir.join("metrics.json"), s)?;
        if keep {
            write_episode(&dir, r, cfg.telemetry)?;
        }
        Ok(())
    };
    let opts = episode_options(&cfg, keep);
    let report = run_campaign(
        &setup,
        &CampaignOptions {
            spec: &cfg.scenario,
            episode: &opts,
            episodes: cfg.episodes,
            seed: cfg.seed,
            timing: cfg.timing,
            sink: Some(&sink),
        },
    )?;
    // Episodes that failed before producing a result have no sink call.
    for s in report.episodes.iter().filter(|s| s.metrics.is_none()) {
        let dir = episodes_dir.join(s.index.to_string());
        create_dir(&dir)?;
        write_json(&dir.join("metrics.json"), s)?;
    }
    debug_assert_eq!(aggregate(&report.episodes), report.aggregate);
    write_json(&cfg.out.join("report.json"), &report)?;
    let table = summary_table(&report);
    write_text(&cfg.out.join("summary.txt"), &table)?;
    let title = format!("{} | psf {}", report.policy, if report.psf { "on" } else { "off" });
    write_text(&cfg.out.join("radar.svg"), &radar_chart(&report.aggregate, &title))?;
    print!("{table}");
    Ok(())
}

fn replay(args: &ReplayArgs) -> Result<(), Failure> {
    let record: RunRecord = read_json(&args.run_dir.join("run.json"))?;
    let telemetry = args.run_dir.join("telemetry.jsonl");
    if !telemetry.is_file() {
        return Err(Failure::Config(format!(
            "{}: replay needs tick telemetry (run with --telemetry ticks)",
            telemetry.display()
        )));
    }
    let logged = read_telemetry(&telemetry)?;
    let setup = Setup::new(record.settings.clone(), record.terminal.clone())?;
    let opts = EpisodeOptions {
        policy: PolicyKind::Replay { file: telemetry.clone() },
        psf: record.config.psf,
        time_cap: record.config.time_cap,
        keep_records: true,
    };
    let result = run_episode(&setup, &record.config.scenario, &opts, &NoClock)?;

    // Solve times are measurements, not state.
    let strip = |r: &shipsafe_core::env::TickRecord| shipsafe_core::env::TickRecord { solve_time: 0.0, ..r.clone() };
    if result.records.len() != logged.len() {
        return Err(Failure::Verification(format!(
            "replay produced {} ticks, the log has {}",
            result.records.len(),
            logged.len()
        )));
    }
    if let Some((a, _)) = result.records.iter().zip(&logged).find(|(a, b)| strip(a) != strip(b)) {
        return Err(Failure::Verification(format!("replay diverges at tick {}", a.tick)));
    }
    println!("replay of {}: {} ticks bit-identical", args.run_dir.display(), logged.len());
    Ok(())
}
