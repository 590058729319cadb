//! Single-episode execution.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use shipsafe_core::env::scenario::{Scenario, ScenarioSpec};
use shipsafe_core::env::{EnvError, Episode, Metrics, TickRecord};
use shipsafe_core::policy::{Adversarial, Constant, LosFollower, Policy, PolicyError, Replay};
use shipsafe_core::psf::{Clock, PsfError, SafetyFilter};
use shipsafe_core::terminal::TerminalSet;
use shipsafe_core::vessel::{max_surge_speed, ControlInput, ModelError, VesselModel};
use thiserror::Error;

use crate::config::{PolicyKind, RunConfig, Settings};
use crate::episode_seed;
use crate::external::ExternalAgent;
use crate::output::{read_telemetry, OutputError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Psf(#[from] PsfError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("policy: {0}")]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Output(#[from] OutputError),
}

/// Everything needed to start episodes: settings, model and terminal set.
#[derive(Debug, Clone)]
pub struct Setup {
    pub settings: Settings,
    pub model: VesselModel,
    pub terminal: TerminalSet,
    pub speed_max: f64,
}

impl Setup {
    pub fn new(settings: Settings, terminal: TerminalSet) -> Result<Self, RunError> {
        let model = VesselModel::new(settings.params)?;
        let speed_max = max_surge_speed(&settings.params, settings.env.inputs.surge_max)?;
        Ok(Self {
            settings,
            model,
            terminal,
            speed_max,
        })
    }

    pub fn filter(&self) -> Result<SafetyFilter, RunError> {
        Ok(SafetyFilter::new(self.model, self.terminal.clone(), self.settings.psf.clone())?)
    }
}

/// Everything `replay` needs to rerun a single episode: written as
/// `run.json` next to its telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub settings: Settings,
    pub terminal: TerminalSet,
    pub aborted: Option<String>,
}

/// Per-episode options.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOptions {
    pub policy: PolicyKind,
    pub psf: bool,
    /// Simulated-time limit overriding the environment's when shorter.
    pub time_cap: Option<f64>,
    pub keep_records: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub seed: u64,
    pub scenario: Scenario,
    pub metrics: Metrics,
    #[serde(skip)]
    pub records: Vec<TickRecord>,
    /// Solve time of every filtered tick (s).
    #[serde(skip)]
    pub solve_times: Vec<f64>,
    /// Set when the policy failed and the episode was aborted.
    pub aborted: Option<String>,
}

enum Driver {
    Builtin(Box<dyn Policy + Send>),
    External(ExternalAgent),
}

impl Driver {
    fn act(&mut self, tick: usize, obs: &[f64]) -> Result<ControlInput, PolicyError> {
        match self {
            Self::Builtin(p) => p.act(tick, obs),
            Self::External(a) => a.act(tick, obs),
        }
    }
}

pub fn load_replay(path: &Path) -> Result<Replay, RunError> {
    let records = read_telemetry(path)?;
    Ok(Replay::new(records.iter().map(|r| r.proposal).collect()))
}

fn build_driver(kind: &PolicyKind, setup: &Setup, ep: &Episode, seed: u64) -> Result<Driver, RunError> {
    let inputs = setup.settings.env.inputs;
    Ok(match kind {
        PolicyKind::LosFollower => Driver::Builtin(Box::new(LosFollower::new(setup.settings.los, inputs, setup.speed_max))),
        PolicyKind::Adversarial => Driver::Builtin(Box::new(Adversarial::new(
            inputs,
            setup.settings.env.lidar.n_sectors,
            episode_seed(seed, u64::MAX),
        ))),
        PolicyKind::Zero => Driver::Builtin(Box::new(Constant(ControlInput::ZERO))),
        PolicyKind::Replay { file } => Driver::Builtin(Box::new(load_replay(file)?)),
        PolicyKind::External { command, timeout_ms } => Driver::External(ExternalAgent::spawn(
            command,
            ep.config().observation_layout(ep.scenario().disturbances),
            inputs,
            ep.config().dt,
            Duration::from_millis(*timeout_ms),
        )?),
    })
}

/// Runs one episode of `spec` (its `seed` selects the world).
pub fn run_episode(
    setup: &Setup,
    spec: &ScenarioSpec,
    opts: &EpisodeOptions,
    clock: &dyn Clock,
) -> Result<EpisodeResult, RunError> {
    let mut env = setup.settings.env.clone();
    if let Some(cap) = opts.time_cap {
        env.max_time = env.max_time.min(cap);
    }
    let filter = if opts.psf { Some(setup.filter()?) } else { None };
    let mut ep = Episode::from_spec(spec, setup.model, filter, env)?;
    let mut driver = build_driver(&opts.policy, setup, &ep, spec.seed)?;
    let mut records = Vec::new();
    let mut solve_times = Vec::new();
    let mut aborted = None;
    while ep.done().is_none() {
        let action = match driver.act(ep.tick(), &ep.observation()) {
            Ok(a) => a,
            Err(e) => {
                aborted = Some(format!("tick {}: {e}", ep.tick()));
                break;
            }
        };
        let out = ep.step(action, clock)?;
        if opts.psf {
            solve_times.push(out.record.solve_time);
        }
        if opts.keep_records {
            records.push(out.record);
        }
    }
    if let Driver::External(agent) = driver {
        let finished = agent.finish(ep.done());
        if aborted.is_none() {
            if let Err(e) = finished {
                aborted = Some(e.to_string());
            }
        }
    }
    Ok(EpisodeResult {
        seed: spec.seed,
        scenario: ep.scenario().clone(),
        metrics: ep.metrics(),
        records,
        solve_times,
        aborted,
    })
}
