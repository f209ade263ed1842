//! Summaries of persisted rows.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_results, ResultRow};
use crate::error::{Error, Result};
use crate::stats::{
    exp_cdf, independence_report, ks_exp_report, mean, IndependenceConfig, IndependenceReport, Sample, TestReport,
};
use crate::theory::Phase;

#[derive(Clone, Debug, PartialEq)]
pub struct AnalyzeOptions {
    /// Overrides the filter stored in the file header.
    pub exclude_stuck: Option<bool>,
    pub ks_max_distance: f64,
    pub independence: IndependenceConfig,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions {
            exclude_stuck: None,
            ks_max_distance: 0.15,
            independence: IndependenceConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub l: usize,
    pub samples: usize,
    pub mean: Option<f64>,
    /// Distance of the `V_l` sample from Exp(1).
    pub ks: Option<TestReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRate {
    pub phase: Phase,
    pub runs_checked: usize,
    pub runs_violating: usize,
    pub rate: f64,
    pub max_normalized_deviation: f64,
}

/// `l = None` is the joint event that every level has hit zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub r: f64,
    pub l: Option<usize>,
    pub frequency: f64,
    pub expected: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairIndependence {
    pub l1: usize,
    pub l2: usize,
    pub report: Option<IndependenceReport>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub n: usize,
    pub d: usize,
    pub config_hash: String,
    pub rows: usize,
    pub stuck: usize,
    pub used: usize,
    pub exclude_stuck: bool,
    pub levels: Vec<LevelSummary>,
    pub envelopes: Vec<PhaseRate>,
    pub probes: Vec<ProbeSummary>,
    pub independence: Vec<PairIndependence>,
}

/// Reads a result file and summarizes it.
pub fn analyze(path: &Path, options: &AnalyzeOptions) -> Result<AnalysisReport> {
    let (header, rows) = read_results(path)?;
    let exclude = options.exclude_stuck.unwrap_or(header.exclude_stuck);
    let mut report = analyze_rows(header.identity.n, header.identity.d, &rows, exclude, options)?;
    report.config_hash = header.config_hash;
    Ok(report)
}

/// Summary of rows already in memory.
pub fn analyze_rows(
    n: usize,
    d: usize,
    rows: &[ResultRow],
    exclude_stuck: bool,
    options: &AnalyzeOptions,
) -> Result<AnalysisReport> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("no result rows".into()));
    }
    let used: Vec<&ResultRow> = rows.iter().filter(|r| !(exclude_stuck && r.stuck)).collect();
    let levels_n = d.saturating_sub(1);

    let columns: Vec<Vec<f64>> = (0..levels_n)
        .map(|l| used.iter().filter_map(|r| r.scaled.get(l).copied().flatten()).collect())
        .collect();
    let levels = columns
        .iter()
        .enumerate()
        .map(|(l, col)| {
            let ks = if col.is_empty() {
                None
            } else {
                Some(ks_exp_report(col, options.ks_max_distance)?)
            };
            Ok(LevelSummary {
                l,
                samples: col.len(),
                mean: (!col.is_empty()).then(|| mean(col)),
                ks,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut phases: BTreeMap<Phase, PhaseRate> = BTreeMap::new();
    for row in &used {
        for v in &row.envelope_violations {
            let entry = phases.entry(v.phase).or_insert(PhaseRate {
                phase: v.phase,
                runs_checked: 0,
                runs_violating: 0,
                rate: 0.0,
                max_normalized_deviation: 0.0,
            });
            entry.runs_checked += (v.checkpoints > 0) as usize;
            entry.runs_violating += (v.violations > 0) as usize;
            entry.max_normalized_deviation = entry.max_normalized_deviation.max(v.max_normalized_deviation);
        }
    }
    let envelopes = phases
        .into_values()
        .map(|mut p| {
            p.rate = if p.runs_checked == 0 {
                0.0
            } else {
                p.runs_violating as f64 / p.runs_checked as f64
            };
            p
        })
        .collect();

    let mut probes = Vec::new();
    if !used.is_empty() {
        let mut r_values: Vec<f64> = used[0].zero_at_i_of_r.iter().map(|p| p.r).collect();
        r_values.dedup();
        let total = used.len() as f64;
        for &r in &r_values {
            for l in 0..levels_n {
                let hits = used
                    .iter()
                    .filter(|row| row.zero_at_i_of_r.iter().any(|p| p.r == r && p.l == l && p.zero))
                    .count();
                probes.push(ProbeSummary {
                    r,
                    l: Some(l),
                    frequency: hits as f64 / total,
                    expected: (-r).exp(),
                });
            }
            if levels_n > 1 {
                let hits = used
                    .iter()
                    .filter(|row| row.zero_at_i_of_r.iter().filter(|p| p.r == r).all(|p| p.zero))
                    .count();
                probes.push(ProbeSummary {
                    r,
                    l: None,
                    frequency: hits as f64 / total,
                    expected: (-(r * levels_n as f64)).exp(),
                });
            }
        }
    }

    let mut independence = Vec::new();
    for l1 in 0..levels_n {
        for l2 in l1 + 1..levels_n {
            let pairs: Vec<(f64, f64)> = used
                .iter()
                .filter_map(|r| {
                    Some((
                        r.scaled.get(l1).copied().flatten()?,
                        r.scaled.get(l2).copied().flatten()?,
                    ))
                })
                .collect();
            let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let outcome = Sample::new(x)
                .and_then(|x| Ok((x, Sample::new(y)?)))
                .and_then(|(x, y)| independence_report(&x, &y, &options.independence));
            let (report, note) = match outcome {
                Ok(report) => (Some(report), None),
                Err(e) => (None, Some(e.to_string())),
            };
            independence.push(PairIndependence { l1, l2, report, note });
        }
    }

    Ok(AnalysisReport {
        n,
        d,
        config_hash: String::new(),
        rows: rows.len(),
        stuck: rows.iter().filter(|r| r.stuck).count(),
        used: used.len(),
        exclude_stuck,
        levels,
        envelopes,
        probes,
        independence,
    })
}

fn phase_label(phase: Phase) -> String {
    match phase {
        Phase::First => "first".into(),
        Phase::Second(k) => format!("I_{k}"),
    }
}

impl fmt::Display for AnalysisReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n = {}, d = {}, config {}", self.n, self.d, self.config_hash)?;
        writeln!(
            f,
            "rows {}, stuck {}, used {}{}",
            self.rows,
            self.stuck,
            self.used,
            if self.exclude_stuck {
                " (stuck runs excluded)"
            } else {
                ""
            }
        )?;
        for level in &self.levels {
            write!(f, "V_{}: samples {}", level.l, level.samples)?;
            if let Some(mean) = level.mean {
                write!(f, ", mean {mean:.4}")?;
            }
            if let Some(ks) = &level.ks {
                write!(
                    f,
                    ", KS {:.4} ({})",
                    ks.statistic,
                    if ks.pass { "within" } else { "above" }
                )?;
                if let Some(t) = ks.threshold {
                    write!(f, " {t}")?;
                }
            }
            writeln!(f)?;
        }
        for p in &self.envelopes {
            writeln!(
                f,
                "envelope {}: {}/{} runs violate (rate {:.4}, max normalized deviation {:.3})",
                phase_label(p.phase),
                p.runs_violating,
                p.runs_checked,
                p.rate,
                p.max_normalized_deviation
            )?;
        }
        for p in &self.probes {
            let label = p.l.map_or("all".to_string(), |l| format!("l={l}"));
            writeln!(
                f,
                "probe r={} {label}: frequency {:.4}, expected {:.4}",
                p.r, p.frequency, p.expected
            )?;
        }
        for pair in &self.independence {
            match (&pair.report, &pair.note) {
                (Some(r), _) => writeln!(
                    f,
                    "independence V_{} vs V_{}: r = {:.4} (p {:.4}), joint CDF gap {:.4} (p {:.4}), {}",
                    pair.l1,
                    pair.l2,
                    r.correlation.statistic,
                    r.correlation.p_value.unwrap_or(f64::NAN),
                    r.joint_cdf.statistic,
                    r.joint_cdf.p_value.unwrap_or(f64::NAN),
                    if r.pass { "pass" } else { "fail" }
                )?,
                (None, note) => writeln!(
                    f,
                    "independence V_{} vs V_{}: not computed ({})",
                    pair.l1,
                    pair.l2,
                    note.as_deref().unwrap_or("")
                )?,
            }
        }
        Ok(())
    }
}

fn opt<T: fmt::Display>(value: Option<T>) -> String {
    value.map_or(String::new(), |v| v.to_string())
}

/// One line per row: index, seed, stuck flag, final edges, `T_l` and `V_l`.
pub fn write_scaled_csv<W: Write>(rows: &[ResultRow], d: usize, mut out: W) -> Result<()> {
    let levels = d.saturating_sub(1);
    let mut header = vec![
        "trial_index".to_string(),
        "trial_seed".into(),
        "stuck".into(),
        "final_edges".into(),
    ];
    header.extend((0..levels).map(|l| format!("T_{l}")));
    header.extend((0..levels).map(|l| format!("V_{l}")));
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        let mut fields = vec![
            row.trial_index.to_string(),
            row.trial_seed.to_string(),
            row.stuck.to_string(),
            row.final_edges.to_string(),
        ];
        fields.extend((0..levels).map(|l| opt(row.hitting_times.get(l).copied().flatten())));
        fields.extend((0..levels).map(|l| opt(row.scaled.get(l).copied().flatten())));
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Empirical CDF of `sample` at its own points, next to the Exp(1) CDF.
pub fn write_ecdf_csv<W: Write>(sample: &Sample, mut out: W) -> Result<()> {
    writeln!(out, "x,ecdf,exp_cdf")?;
    let sorted = sample.sorted();
    let n = sorted.len() as f64;
    for (i, &x) in sorted.iter().enumerate() {
        if sorted.get(i + 1) == Some(&x) {
            continue;
        }
        writeln!(out, "{x},{},{}", (i + 1) as f64 / n, exp_cdf(x))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{run_experiment, simulate_rows, ExperimentConfig};

    #[test]
    fn degenerate_triangle_pipeline() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = ExperimentConfig::new(3, 2, 1000, 1);
        config.output = Some(dir.path().join("t.jsonl"));
        run_experiment(&config).unwrap();
        let report = analyze(&dir.path().join("t.jsonl"), &AnalyzeOptions::default()).unwrap();
        assert_eq!(report.used, 1000);
        assert_eq!(report.levels[0].mean, Some(2.0 / 3f64.ln()));
        assert!(report.independence.is_empty());
        assert!(report.to_string().contains("V_0: samples 1000"));
    }

    #[test]
    fn stuck_rows_are_filtered() {
        let rows = simulate_rows(&ExperimentConfig::new(4, 2, 300, 2)).unwrap();
        let stuck = rows.iter().filter(|r| r.stuck).count();
        assert!(stuck > 0);
        let opts = AnalyzeOptions::default();
        assert_eq!(analyze_rows(4, 2, &rows, true, &opts).unwrap().used, 300 - stuck);
        assert_eq!(analyze_rows(4, 2, &rows, false, &opts).unwrap().used, 300);
        assert!(matches!(
            analyze_rows(4, 2, &[], true, &opts),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn probes_and_independence_for_d3() {
        let rows = simulate_rows(&ExperimentConfig::new(2000, 3, 90, 8)).unwrap();
        let report = analyze_rows(2000, 3, &rows, true, &AnalyzeOptions::default()).unwrap();
        assert_eq!(report.levels.len(), 2);
        // Two levels per r plus the joint probe.
        assert_eq!(report.probes.len(), 4 * 3);
        assert_eq!(report.independence.len(), 1);
        assert!(report.independence[0].report.is_some());
        let joint = report.probes.iter().find(|p| p.l.is_none()).unwrap();
        assert!((joint.expected - (-0.5f64).exp()).abs() < 1e-15);
        let json = serde_json::to_string(&report).unwrap();
        assert_eq!(serde_json::from_str::<AnalysisReport>(&json).unwrap(), report);
    }

    #[test]
    fn csv_exports() {
        let rows = simulate_rows(&ExperimentConfig::new(3, 2, 2, 1)).unwrap();
        let mut buf = Vec::new();
        write_scaled_csv(&rows, 2, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "trial_index,trial_seed,stuck,final_edges,T_0,V_0");
        assert!(lines[1].starts_with("0,"));
        assert!(lines[1].contains(",false,3,2,"));

        let mut buf = Vec::new();
        write_ecdf_csv(&Sample::new(vec![0.5, 0.5, 2.0]).unwrap(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0.5,0.6666666666666666,"));
        assert!(lines[2].starts_with("2,1,"));
    }
}
