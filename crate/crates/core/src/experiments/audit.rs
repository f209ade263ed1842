//! Checks recorded `S` vectors against `n s_j` and the error envelopes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::PhaseViolations;
use crate::error::{Error, Result};
use crate::process::TrajectoryRecord;
use crate::theory::{eval_theory_at_step, phase_bounds, EnvelopeParams, Phase};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditMode {
    /// `|S_j - n s_j| <= E_first(i)` for `i <= i_trans`.
    First,
    /// `|S_j - n s_j| <= 4 E_{j,k}(i)` for `i` in `I_k` and `j >= k`.
    Second,
}

/// Outcome for one `(phase, j)` pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditCell {
    pub phase: Phase,
    pub j: usize,
    pub checked: u32,
    pub violations: u32,
    /// Largest `|S_j - n s_j| / envelope` seen.
    pub max_normalized_deviation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub mode: AuditMode,
    pub cells: Vec<AuditCell>,
    /// Checkpoint totals per phase.
    pub phases: Vec<PhaseViolations>,
    /// Checkpoints outside the phases this mode monitors.
    pub ignored: u32,
}

impl AuditSummary {
    pub fn any_violation(&self) -> bool {
        self.cells.iter().any(|c| c.violations > 0)
    }

    pub fn checked(&self) -> u32 {
        self.phases.iter().map(|p| p.checkpoints).sum()
    }
}

#[derive(Clone, Debug)]
struct StepBounds {
    phase: Phase,
    ns: Vec<f64>,
    /// `None` for `j` the phase does not constrain.
    envelope: Vec<Option<f64>>,
}

/// Envelope evaluator for one `(n, d)`, with precomputed values at the steps
/// of a fixed schedule.
#[derive(Clone, Debug)]
pub struct Auditor {
    bounds: EnvelopeParams,
    cache: BTreeMap<u64, Option<StepBounds>>,
}

impl Auditor {
    pub fn new(n: u64, d: usize) -> Result<Self> {
        Self::with_steps(n, d, &[])
    }

    pub fn with_steps(n: u64, d: usize, steps: &[u64]) -> Result<Self> {
        let mut auditor = Auditor {
            bounds: phase_bounds(n, d)?,
            cache: BTreeMap::new(),
        };
        for &i in steps {
            let value = auditor.compute(i)?;
            auditor.cache.insert(i, value);
        }
        Ok(auditor)
    }

    pub fn bounds(&self) -> &EnvelopeParams {
        &self.bounds
    }

    fn compute(&self, i: u64) -> Result<Option<StepBounds>> {
        let Some(phase) = self.bounds.phase_of(i) else {
            return Ok(None);
        };
        if 2 * i >= self.bounds.d as u64 * self.bounds.n {
            return Ok(None);
        }
        let ns = eval_theory_at_step(self.bounds.n, self.bounds.d, i)?.ns;
        let envelope = match phase {
            Phase::First => {
                let e = self.bounds.envelope_first(i)?;
                vec![Some(e); ns.len()]
            }
            Phase::Second(k) => ns
                .iter()
                .enumerate()
                .map(|(j, &v)| (j >= k).then(|| 4.0 * self.bounds.envelope_second_from_ns(k, v)))
                .collect(),
        };
        Ok(Some(StepBounds { phase, ns, envelope }))
    }

    pub fn audit(&self, record: &TrajectoryRecord, mode: AuditMode) -> Result<AuditSummary> {
        if record.n as u64 != self.bounds.n || record.d != self.bounds.d {
            return Err(Error::ConfigMismatch(format!(
                "record is for (n, d) = ({}, {}), auditor for ({}, {})",
                record.n, record.d, self.bounds.n, self.bounds.d
            )));
        }
        let mut cells: BTreeMap<(Phase, usize), AuditCell> = BTreeMap::new();
        let mut per_phase: BTreeMap<Phase, (u32, u32)> = BTreeMap::new();
        let mut ignored = 0;
        for cp in &record.checkpoints {
            let computed;
            let bounds = match self.cache.get(&cp.step) {
                Some(b) => b.as_ref(),
                None => {
                    computed = self.compute(cp.step)?;
                    computed.as_ref()
                }
            };
            let monitored = bounds.filter(|b| match mode {
                AuditMode::First => b.phase == Phase::First,
                AuditMode::Second => matches!(b.phase, Phase::Second(_)),
            });
            let Some(b) = monitored else {
                ignored += 1;
                continue;
            };
            let mut bad = false;
            for (j, env) in b.envelope.iter().enumerate() {
                let Some(env) = *env else { continue };
                let deviation = (cp.s[j] as f64 - b.ns[j]).abs() / env;
                let cell = cells.entry((b.phase, j)).or_insert(AuditCell {
                    phase: b.phase,
                    j,
                    checked: 0,
                    violations: 0,
                    max_normalized_deviation: 0.0,
                });
                cell.checked += 1;
                cell.max_normalized_deviation = cell.max_normalized_deviation.max(deviation);
                if deviation > 1.0 {
                    cell.violations += 1;
                    bad = true;
                }
            }
            let entry = per_phase.entry(b.phase).or_default();
            entry.0 += 1;
            entry.1 += bad as u32;
        }
        let cells: Vec<AuditCell> = cells.into_values().collect();
        let phases = per_phase
            .into_iter()
            .map(|(phase, (checkpoints, violations))| PhaseViolations {
                phase,
                checkpoints,
                violations,
                max_normalized_deviation: cells
                    .iter()
                    .filter(|c| c.phase == phase)
                    .map(|c| c.max_normalized_deviation)
                    .fold(0.0, f64::max),
            })
            .collect();
        Ok(AuditSummary {
            mode,
            cells,
            phases,
            ignored,
        })
    }
}

/// One-off audit of `record`; see [`Auditor`] for repeated use.
pub fn audit_trajectory(record: &TrajectoryRecord, mode: AuditMode) -> Result<AuditSummary> {
    Auditor::new(record.n as u64, record.d)?.audit(record, mode)
}
