//! Monte Carlo experiments over many independent runs.
//!
//! A trial is a pure function of the experiment configuration and its index:
//! its seed is `mix(master_seed, index)` and nothing else feeds into it, so
//! results do not depend on how trials are spread across threads.

mod analysis;
mod audit;
mod enumeration;
mod persist;
mod tail;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::process::{log_spaced_steps, run, ProcessParams, TrajectoryRecord};
use crate::rng::mix;
use crate::theory::{i_of_r, phase_bounds, Phase};

pub use analysis::{
    analyze, analyze_rows, write_ecdf_csv, write_scaled_csv, AnalysisReport, AnalyzeOptions, LevelSummary,
    PairIndependence, PhaseRate, ProbeSummary,
};
pub use audit::{audit_trajectory, AuditCell, AuditMode, AuditSummary, Auditor};
pub use enumeration::{exact_enumeration, ExactDistribution, ENUMERATION_MAX_EDGES, ENUMERATION_MAX_N};
pub use persist::{
    read_results, run_experiment, run_experiment_with_progress, write_results, ExperimentSummary, ResultHeader,
    RunIdentity, RESULTS_FORMAT, RESULTS_VERSION,
};
pub use tail::{binomial_ratio, extract_tail_sequence, tail_law_report, Bits, TailLawReport, TailSequence};

pub const DEFAULT_R_GRID: [f64; 4] = [0.25, 0.5, 1.0, 2.0];

/// Which steps each trial records.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CheckpointPolicy {
    /// 64 log-spaced steps in `[0, i_trans]`, 32 more across the second
    /// phase, and every `i_after(k)` and `i_before(k)`.
    #[default]
    Default,
    None,
    LogSpaced {
        count: usize,
    },
    Explicit {
        steps: Vec<u64>,
    },
}

impl CheckpointPolicy {
    pub fn resolve(&self, n: usize, d: usize) -> Result<Vec<u64>> {
        let params = ProcessParams::new(n, d, 0)?;
        let end = params.max_edges();
        let mut steps = match self {
            CheckpointPolicy::None => Vec::new(),
            CheckpointPolicy::Explicit { steps } => steps.clone(),
            CheckpointPolicy::LogSpaced { count } => log_spaced_steps(0, end.saturating_sub(1), end, *count),
            CheckpointPolicy::Default => {
                let bounds = phase_bounds(n as u64, d)?;
                let clamp = |i: i64| i.clamp(0, end.saturating_sub(1) as i64) as u64;
                let trans = clamp(bounds.i_trans);
                let mut steps = log_spaced_steps(0, trans, end, 64);
                if let Some(&last_after) = bounds.i_after.last() {
                    let (lo, hi) = (clamp(bounds.i_trans + 1), clamp(last_after));
                    steps.extend(log_spaced_steps(lo, hi, end, 32));
                }
                steps.extend(
                    bounds
                        .i_after
                        .iter()
                        .chain(&bounds.i_before)
                        .filter(|&&i| i >= 0)
                        .map(|&i| clamp(i)),
                );
                steps
            }
        };
        steps.sort_unstable();
        steps.dedup();
        if steps.last().is_some_and(|&s| s > end) {
            return Err(Error::InvalidParams(format!("checkpoint past the final step {end}")));
        }
        Ok(steps)
    }
}

fn default_true() -> bool {
    true
}

fn default_r_grid() -> Vec<f64> {
    DEFAULT_R_GRID.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n: usize,
    pub d: usize,
    pub trials: u64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub checkpoints: CheckpointPolicy,
    #[serde(default)]
    pub output: Option<std::path::PathBuf>,
    /// Drop stuck runs from distributional statistics.
    #[serde(default = "default_true")]
    pub exclude_stuck: bool,
    #[serde(default = "default_r_grid")]
    pub r_grid: Vec<f64>,
}

impl ExperimentConfig {
    pub fn new(n: usize, d: usize, trials: u64, master_seed: u64) -> Self {
        ExperimentConfig {
            n,
            d,
            trials,
            master_seed,
            checkpoints: CheckpointPolicy::Default,
            output: None,
            exclude_stuck: true,
            r_grid: default_r_grid(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        ProcessParams::new(self.n, self.d, 0)?;
        if self.trials < 1 {
            return Err(Error::InvalidParams("trials must be at least 1".into()));
        }
        if let Some(r) = self.r_grid.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
            return Err(Error::InvalidParams(format!(
                "probe value r = {r} must be non-negative"
            )));
        }
        self.checkpoints.resolve(self.n, self.d)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseViolations {
    pub phase: Phase,
    /// Checkpoints that fell in this phase.
    pub checkpoints: u32,
    /// Checkpoints where some `j` left its envelope.
    pub violations: u32,
    pub max_normalized_deviation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub r: f64,
    pub l: usize,
    /// Whether `S_l` was already zero at step `floor(i(r, l))`.
    pub zero: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub trial_index: u64,
    pub trial_seed: u64,
    pub hitting_times: Vec<Option<u64>>,
    /// `(d-1)! (dn - 2 T_l) / (l! ln(n)^(d-1-l))`.
    pub scaled: Vec<Option<f64>>,
    pub final_edges: u64,
    pub stuck: bool,
    pub envelope_violations: Vec<PhaseViolations>,
    pub zero_at_i_of_r: Vec<ProbeOutcome>,
}

/// `(d-1)! (dn - 2T) / (l! ln(n)^(d-1-l))`.
pub fn scale_hitting_time(t: u64, l: usize, n: u64, d: usize) -> Result<f64> {
    if n < 2 || d < 2 || l > d - 2 {
        return Err(Error::InvalidParams(format!(
            "need n >= 2, d >= 2, l <= d - 2 (n = {n}, d = {d}, l = {l})"
        )));
    }
    let dn = d as u64 * n;
    if 2 * t > dn {
        return Err(Error::InvalidParams(format!("T = {t} exceeds dn/2")));
    }
    // (d-1)! / l! as a product of integers, exact for any practical d.
    let factor: f64 = (l + 1..d).map(|k| k as f64).product();
    Ok(factor * (dn - 2 * t) as f64 / (n as f64).ln().powi((d - 1 - l) as i32))
}

/// Whether `S_l` had reached zero by step `floor(i(r, l))`.
pub fn probe_zero_at(record: &TrajectoryRecord, r: f64, l: usize) -> Result<bool> {
    let probe = i_of_r(record.n as u64, record.d, r, l)?.floor();
    Ok(match record.hitting_times.get(l).copied().flatten() {
        Some(t) => t as f64 <= probe,
        None => false,
    })
}

/// Everything shared by the trials of one experiment.
pub struct ExperimentPlan {
    config: ExperimentConfig,
    schedule: Vec<u64>,
    auditor: Auditor,
}

impl ExperimentPlan {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let schedule = config.checkpoints.resolve(config.n, config.d)?;
        let auditor = Auditor::with_steps(config.n as u64, config.d, &schedule)?;
        Ok(ExperimentPlan {
            config: config.clone(),
            schedule,
            auditor,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn schedule(&self) -> &[u64] {
        &self.schedule
    }

    pub fn run_trial(&self, index: u64) -> Result<ResultRow> {
        let (n, d) = (self.config.n, self.config.d);
        let seed = mix(self.config.master_seed, index);
        let record = run(ProcessParams::new(n, d, seed)?, &self.schedule)?;

        let scaled = record
            .hitting_times
            .iter()
            .enumerate()
            .map(|(l, t)| t.map(|t| scale_hitting_time(t, l, n as u64, d)).transpose())
            .collect::<Result<Vec<_>>>()?;

        let mut envelope_violations = Vec::new();
        for mode in [AuditMode::First, AuditMode::Second] {
            let summary = self.auditor.audit(&record, mode)?;
            envelope_violations.extend(summary.phases);
        }

        let mut probes = Vec::new();
        for &r in &self.config.r_grid {
            for l in 0..d.saturating_sub(1) {
                probes.push(ProbeOutcome {
                    r,
                    l,
                    zero: probe_zero_at(&record, r, l)?,
                });
            }
        }

        Ok(ResultRow {
            trial_index: index,
            trial_seed: seed,
            hitting_times: record.hitting_times,
            scaled,
            final_edges: record.final_edges,
            stuck: record.stuck,
            envelope_violations,
            zero_at_i_of_r: probes,
        })
    }

    /// Runs `indices` (in parallel when the `parallel` feature is on) and
    /// returns rows in the order given.
    pub fn run_trials(&self, indices: &[u64]) -> Result<Vec<ResultRow>> {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            indices.par_iter().map(|&i| self.run_trial(i)).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            indices.iter().map(|&i| self.run_trial(i)).collect()
        }
    }
}

/// All trials of `config`, in memory, in index order.
pub fn simulate_rows(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let plan = ExperimentPlan::new(config)?;
    let indices: Vec<u64> = (0..config.trials).collect();
    plan.run_trials(&indices)
}
