//! JSON-lines result files.
//!
//! The first line is a header tagged `"kind": "header"` carrying the format
//! name, its version and a SHA-256 hash of everything that determines the
//! rows. Every further line is one `"kind": "row"` record.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ExperimentConfig, ExperimentPlan, ResultRow};
use crate::error::{Error, Result};

pub const RESULTS_FORMAT: &str = "dprocess-results";
pub const RESULTS_VERSION: u32 = 1;

/// Trials handed to the worker pool per write.
const CHUNK: usize = 256;

/// The inputs rows depend on. Trial count, output path and filters are
/// left out so a file can be extended or re-filtered.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunIdentity {
    pub n: usize,
    pub d: usize,
    pub master_seed: u64,
    pub checkpoints: Vec<u64>,
    pub r_grid: Vec<f64>,
}

impl RunIdentity {
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(bytes)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultHeader {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub identity: RunIdentity,
    pub trials: u64,
    pub exclude_stuck: bool,
}

impl ResultHeader {
    fn for_plan(plan: &ExperimentPlan) -> Result<Self> {
        let config = plan.config();
        let identity = RunIdentity {
            n: config.n,
            d: config.d,
            master_seed: config.master_seed,
            checkpoints: plan.schedule().to_vec(),
            r_grid: config.r_grid.clone(),
        };
        Ok(ResultHeader {
            format: RESULTS_FORMAT.into(),
            version: RESULTS_VERSION,
            config_hash: identity.hash()?,
            identity,
            trials: config.trials,
            exclude_stuck: config.exclude_stuck,
        })
    }

    fn check_schema(&self) -> Result<()> {
        if self.format != RESULTS_FORMAT || self.version != RESULTS_VERSION {
            return Err(Error::Schema(format!(
                "expected {RESULTS_FORMAT} version {RESULTS_VERSION}, found {} version {}",
                self.format, self.version
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header(ResultHeader),
    Row(ResultRow),
}

fn to_line(line: &Line) -> Result<String> {
    let mut text = serde_json::to_string(line)?;
    text.push('\n');
    Ok(text)
}

/// Parses the complete lines of `text`. A trailing fragment without a newline
/// is reported through the returned byte length of the complete part.
fn parse(text: &str) -> Result<(Option<ResultHeader>, Vec<ResultRow>, usize)> {
    let complete = text.rfind('\n').map_or(0, |p| p + 1);
    let mut header = None;
    let mut rows = Vec::new();
    for (number, line) in text[..complete].lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line =
            serde_json::from_str(line).map_err(|e| Error::Schema(format!("line {}: {e}", number + 1)))?;
        match (parsed, &header) {
            (Line::Header(h), None) if rows.is_empty() => {
                h.check_schema()?;
                header = Some(h);
            }
            (Line::Header(_), _) => return Err(Error::Schema(format!("line {}: unexpected header", number + 1))),
            (Line::Row(_), None) => return Err(Error::Schema("first record is not a header".into())),
            (Line::Row(row), Some(_)) => rows.push(row),
        }
    }
    Ok((header, rows, complete))
}

/// Header and rows of a result file, rows sorted by trial index with
/// duplicates dropped. An unterminated last line is ignored.
pub fn read_results(path: &Path) -> Result<(ResultHeader, Vec<ResultRow>)> {
    let text = fs::read_to_string(path)?;
    if text.trim().is_empty() {
        return Err(Error::EmptyInput(format!("{} is empty", path.display())));
    }
    let (header, rows, _) = parse(&text)?;
    let header = header.ok_or_else(|| Error::Schema(format!("{} has no complete header", path.display())))?;
    let mut by_index = BTreeMap::new();
    for row in rows {
        by_index.entry(row.trial_index).or_insert(row);
    }
    Ok((header, by_index.into_values().collect()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSummary {
    pub path: PathBuf,
    pub config_hash: String,
    /// Rows for indices below `trials` now in the file.
    pub total: u64,
    pub written: u64,
    /// Indices already present before this call.
    pub resumed: u64,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    run_experiment_with_progress(config, |_, _| {})
}

/// Runs every trial index not yet in the output file and appends its row.
/// `progress` sees `(done, total)` after each chunk.
pub fn run_experiment_with_progress<F>(config: &ExperimentConfig, mut progress: F) -> Result<ExperimentSummary>
where
    F: FnMut(u64, u64),
{
    let path = config
        .output
        .clone()
        .ok_or_else(|| Error::InvalidParams("experiment config has no output path".into()))?;
    let plan = ExperimentPlan::new(config)?;
    let header = ResultHeader::for_plan(&plan)?;

    let existing = match fs::read_to_string(&path) {
        Ok(text) => Some(text),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e.into()),
    };
    let mut done = BTreeSet::new();
    let mut keep = 0usize;
    if let Some(text) = &existing {
        let (found, rows, complete) = parse(text)?;
        if let Some(found) = found {
            if found.config_hash != header.config_hash {
                return Err(Error::ConfigMismatch(format!(
                    "{} was written by a different configuration (hash {}, expected {})",
                    path.display(),
                    found.config_hash,
                    header.config_hash
                )));
            }
            keep = complete;
            done.extend(rows.iter().map(|r| r.trial_index));
        }
    }

    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let file = OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(&path)?;
    // Drop an unterminated trailing line, or everything if there is no header.
    file.set_len(keep as u64)?;
    let mut out = BufWriter::new(file);
    out.seek(SeekFrom::End(0))?;
    if keep == 0 {
        out.write_all(to_line(&Line::Header(header.clone()))?.as_bytes())?;
    }

    let todo: Vec<u64> = (0..config.trials).filter(|i| !done.contains(i)).collect();
    let resumed = config.trials - todo.len() as u64;
    let mut written = 0u64;
    progress(resumed, config.trials);
    for chunk in todo.chunks(CHUNK) {
        for row in plan.run_trials(chunk)? {
            out.write_all(to_line(&Line::Row(row))?.as_bytes())?;
        }
        out.flush()?;
        written += chunk.len() as u64;
        progress(resumed + written, config.trials);
    }
    out.into_inner().map_err(|e| e.into_error())?.sync_all()?;

    Ok(ExperimentSummary {
        path,
        config_hash: header.config_hash,
        total: config.trials,
        written,
        resumed,
    })
}

/// Writes a fresh result file from rows already in memory.
pub fn write_results(path: &Path, config: &ExperimentConfig, rows: &[ResultRow]) -> Result<()> {
    let plan = ExperimentPlan::new(config)?;
    let header = ResultHeader::for_plan(&plan)?;
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(to_line(&Line::Header(header))?.as_bytes())?;
    for row in rows {
        out.write_all(to_line(&Line::Row(row.clone()))?.as_bytes())?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(dir: &Path, trials: u64) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(200, 2, trials, 3);
        c.output = Some(dir.join("runs.jsonl"));
        c
    }

    #[test]
    fn header_then_rows_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(dir.path(), 10);
        let summary = run_experiment(&c).unwrap();
        assert_eq!((summary.written, summary.resumed), (10, 0));
        let text = fs::read_to_string(dir.path().join("runs.jsonl")).unwrap();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["kind"], "header");
        assert_eq!(first["format"], RESULTS_FORMAT);
        assert_eq!(first["config_hash"].as_str().unwrap().len(), 64);
        let (header, rows) = read_results(&dir.path().join("runs.jsonl")).unwrap();
        assert_eq!(header.config_hash, summary.config_hash);
        assert_eq!(
            rows.iter().map(|r| r.trial_index).collect::<Vec<_>>(),
            (0..10).collect::<Vec<_>>()
        );
    }

    #[test]
    fn rerun_is_a_no_op_and_extension_appends() {
        let dir = tempfile::tempdir().unwrap();
        run_experiment(&config(dir.path(), 5)).unwrap();
        let path = dir.path().join("runs.jsonl");
        let before = fs::read(&path).unwrap();
        let again = run_experiment(&config(dir.path(), 5)).unwrap();
        assert_eq!((again.written, again.resumed), (0, 5));
        assert_eq!(fs::read(&path).unwrap(), before);
        let more = run_experiment(&config(dir.path(), 8)).unwrap();
        assert_eq!((more.written, more.resumed), (3, 5));
        assert_eq!(read_results(&path).unwrap().1.len(), 8);
    }

    #[test]
    fn mismatched_config_refuses_to_append() {
        let dir = tempfile::tempdir().unwrap();
        run_experiment(&config(dir.path(), 3)).unwrap();
        let mut other = config(dir.path(), 3);
        other.master_seed = 4;
        assert!(matches!(run_experiment(&other), Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn read_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        fs::write(&path, "").unwrap();
        assert!(matches!(read_results(&path), Err(Error::EmptyInput(_))));
        fs::write(&path, "{\"kind\":\"header\",\"format\":\"dprocess-results\",\"version\":99,\"config_hash\":\"\",\"identity\":{\"n\":3,\"d\":2,\"master_seed\":0,\"checkpoints\":[],\"r_grid\":[]},\"trials\":1,\"exclude_stuck\":true}\n").unwrap();
        assert!(matches!(read_results(&path), Err(Error::Schema(_))));
        fs::write(&path, "{\"kind\":\"nope\"}\n").unwrap();
        assert!(matches!(read_results(&path), Err(Error::Schema(_))));
        assert!(matches!(read_results(&dir.path().join("missing")), Err(Error::Io(_))));
    }
}
