//! Evaluation campaigns: many episodes with split seeds and their aggregate.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use shipsafe_core::env::scenario::{CaseId, ScenarioSpec};
use shipsafe_core::env::Metrics;
use shipsafe_core::psf::{Clock, NoClock};

use crate::output::OutputError;
use crate::runner::{run_episode, EpisodeOptions, EpisodeResult, Setup};
use crate::{episode_seed, WallClock};

/// Width of a solve-time histogram bin (s).
pub const SOLVE_BIN: f64 = 5e-5;

/// Sparse fixed-width histogram of per-tick solve times.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SolveHistogram {
    /// `(bin index, count)` pairs in increasing bin order.
    pub bins: Vec<(u32, u64)>,
}

impl SolveHistogram {
    pub fn from_times(times: &[f64]) -> Self {
        let mut idx: Vec<u32> = times.iter().map(|t| (t.max(0.0) / SOLVE_BIN) as u32).collect();
        idx.sort_unstable();
        let mut bins: Vec<(u32, u64)> = Vec::new();
        for i in idx {
            match bins.last_mut() {
                Some((b, c)) if *b == i => *c += 1,
                _ => bins.push((i, 1)),
            }
        }
        Self { bins }
    }

    pub fn merge(&mut self, other: &Self) {
        let mut merged = Vec::with_capacity(self.bins.len() + other.bins.len());
        let (mut a, mut b) = (self.bins.iter().peekable(), other.bins.iter().peekable());
        loop {
            let next = match (a.peek(), b.peek()) {
                (Some(x), Some(y)) if x.0 == y.0 => {
                    let v = (x.0, x.1 + y.1);
                    a.next();
                    b.next();
                    v
                }
                (Some(x), Some(y)) if x.0 < y.0 => *a.next().unwrap(),
                (Some(_), Some(_)) => *b.next().unwrap(),
                (Some(_), None) => *a.next().unwrap(),
                (None, Some(_)) => *b.next().unwrap(),
                (None, None) => break,
            };
            merged.push(next);
        }
        self.bins = merged;
    }

    pub fn count(&self) -> u64 {
        self.bins.iter().map(|b| b.1).sum()
    }

    /// Upper edge of the bin holding the `q` quantile.
    pub fn quantile(&self, q: f64) -> f64 {
        let n = self.count();
        if n == 0 {
            return 0.0;
        }
        let rank = ((q * n as f64).ceil() as u64).clamp(1, n);
        let mut seen = 0;
        for (b, c) in &self.bins {
            seen += c;
            if seen >= rank {
                return (*b as f64 + 1.0) * SOLVE_BIN;
            }
        }
        unreachable!("rank never exceeds the total count")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub index: u64,
    pub seed: u64,
    pub metrics: Option<Metrics>,
    pub solve_times: SolveHistogram,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SolveStats {
    pub count: u64,
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregate {
    pub episodes: usize,
    pub completed: usize,
    pub failed: usize,
    pub collisions: usize,
    pub collision_rate: f64,
    pub mean_progress: f64,
    pub mean_time_score: f64,
    pub mean_cross_track: f64,
    /// Intervening ticks over all filtered ticks.
    pub intervention_rate: f64,
    pub solve_time: SolveStats,
}

/// Aggregate over the completed episodes, computed from the summaries alone.
pub fn aggregate(episodes: &[EpisodeSummary]) -> Aggregate {
    let done: Vec<&Metrics> = episodes.iter().filter(|e| e.error.is_none()).filter_map(|e| e.metrics.as_ref()).collect();
    let n = done.len();
    let mean = |f: &dyn Fn(&Metrics) -> f64| if n > 0 { done.iter().map(|m| f(m)).sum::<f64>() / n as f64 } else { 0.0 };
    let mut hist = SolveHistogram::default();
    for e in episodes.iter().filter(|e| e.error.is_none()) {
        hist.merge(&e.solve_times);
    }
    let weighted = |f: &dyn Fn(&Metrics) -> f64| {
        let w: f64 = done.iter().map(|m| m.ticks as f64).sum();
        if w > 0.0 { done.iter().map(|m| f(m) * m.ticks as f64).sum::<f64>() / w } else { 0.0 }
    };
    let collisions = done.iter().filter(|m| m.collision).count();
    let max = done.iter().map(|m| m.max_solve_time).fold(0.0, f64::max);
    // Bin edges overstate quantiles inside the first bin; never exceed the maximum.
    let quantile = |q| hist.quantile(q).min(max);
    Aggregate {
        episodes: episodes.len(),
        completed: n,
        failed: episodes.len() - n,
        collisions,
        collision_rate: if n > 0 { collisions as f64 / n as f64 } else { 0.0 },
        mean_progress: mean(&|m| m.progress),
        mean_time_score: mean(&|m| m.time_score),
        mean_cross_track: mean(&|m| m.mean_cross_track),
        intervention_rate: weighted(&|m| m.intervention_rate),
        solve_time: SolveStats {
            count: hist.count(),
            mean: weighted(&|m| m.mean_solve_time),
            p50: quantile(0.5),
            p90: quantile(0.9),
            p99: quantile(0.99),
            max,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub case: CaseId,
    pub policy: String,
    pub psf: bool,
    pub seed: u64,
    pub aggregate: Aggregate,
    pub episodes: Vec<EpisodeSummary>,
}

/// Receives every finished episode, e.g. to write its telemetry.
pub type EpisodeSink<'a> = &'a (dyn Fn(&EpisodeSummary, &EpisodeResult) -> Result<(), OutputError> + Sync);

pub struct CampaignOptions<'a> {
    pub spec: &'a ScenarioSpec,
    pub episode: &'a EpisodeOptions,
    pub episodes: usize,
    pub seed: u64,
    pub timing: bool,
    pub sink: Option<EpisodeSink<'a>>,
}

/// Runs the episodes in parallel. Episode `i` uses seed `episode_seed(seed, i)`;
/// failures are recorded per episode and the campaign continues. Only a sink
/// error stops the campaign.
pub fn run_campaign(setup: &Setup, opts: &CampaignOptions) -> Result<CampaignReport, OutputError> {
    let episodes = (0..opts.episodes as u64)
        .into_par_iter()
        .map(|index| {
            let seed = episode_seed(opts.seed, index);
            let spec = ScenarioSpec { seed, ..opts.spec.clone() };
            let wall = WallClock::new();
            let clock: &dyn Clock = if opts.timing { &wall } else { &NoClock };
            match run_episode(setup, &spec, opts.episode, clock) {
                Ok(r) => {
                    let summary = EpisodeSummary {
                        index,
                        seed,
                        solve_times: SolveHistogram::from_times(&r.solve_times),
                        metrics: Some(r.metrics.clone()),
                        error: r.aborted.clone(),
                    };
                    if let Some(sink) = opts.sink {
                        sink(&summary, &r)?;
                    }
                    Ok(summary)
                }
                Err(e) => Ok(EpisodeSummary {
                    index,
                    seed,
                    metrics: None,
                    solve_times: SolveHistogram::default(),
                    error: Some(e.to_string()),
                }),
            }
        })
        .collect::<Result<Vec<_>, OutputError>>()?;
    Ok(CampaignReport {
        case: opts.spec.case,
        policy: opts.episode.policy.name().to_owned(),
        psf: opts.episode.psf,
        seed: opts.seed,
        aggregate: aggregate(&episodes),
        episodes,
    })
}

pub fn summary_table(report: &CampaignReport) -> String {
    let a = &report.aggregate;
    let mut s = String::new();
    let _ = writeln!(s, "policy {} | psf {} | seed {}", report.policy, if report.psf { "on" } else { "off" }, report.seed);
    let _ = writeln!(s, "{:<22} {:>12}", "episodes", a.episodes);
    let _ = writeln!(s, "{:<22} {:>12}", "failed", a.failed);
    let _ = writeln!(s, "{:<22} {:>12.4}", "collision rate", a.collision_rate);
    let _ = writeln!(s, "{:<22} {:>12.4}", "mean progress", a.mean_progress);
    let _ = writeln!(s, "{:<22} {:>12.4}", "mean time score", a.mean_time_score);
    let _ = writeln!(s, "{:<22} {:>12.3}", "mean |cte| (m)", a.mean_cross_track);
    let _ = writeln!(s, "{:<22} {:>12.4}", "intervention rate", a.intervention_rate);
    let ms = |t: f64| t * 1e3;
    let st = &a.solve_time;
    let _ = writeln!(s, "{:<22} {:>12.3}", "solve mean (ms)", ms(st.mean));
    let _ = writeln!(s, "{:<22} {:>12.3}", "solve p50 (ms)", ms(st.p50));
    let _ = writeln!(s, "{:<22} {:>12.3}", "solve p99 (ms)", ms(st.p99));
    let _ = writeln!(s, "{:<22} {:>12.3}", "solve max (ms)", ms(st.max));
    s
}
