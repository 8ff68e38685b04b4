//! Run directories: a JSON manifest next to a JSON-lines step log.
//!
//! ```text
//! <root>/<run_id>/manifest    RunManifest, one JSON document
//! <root>/<run_id>/steps.log   one StepRecord per line
//! ```
//!
//! All quantities are in natural units: tokens, FLOPs, and losses as
//! fractions in `[0, 1]`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::error::{Error, Result};
use crate::grpo::TrainConfig;
use crate::policy::ArchSpec;
use crate::schedule::ScheduleSpec;
use crate::taskgen::DatasetSpec;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest";
pub const STEPS_FILE: &str = "steps.log";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub step: u64,
    pub tokens_this_step: u64,
    pub cumulative_tokens: u64,
    pub cumulative_flops: f64,
    pub unique_samples_seen: u64,
    pub train_reward_mean: f64,
    pub mean_response_length: f64,
    /// Held-out loss; present only on evaluation steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_loss: Option<f64>,
}

impl StepRecord {
    /// Checks that `self` may follow `prev` in one run.
    pub fn check_follows(&self, prev: &StepRecord) -> Result<()> {
        let violation = if self.step <= prev.step {
            Some("step")
        } else if self.cumulative_tokens < prev.cumulative_tokens {
            Some("cumulative_tokens")
        } else if self.cumulative_flops < prev.cumulative_flops {
            Some("cumulative_flops")
        } else if self.unique_samples_seen < prev.unique_samples_seen {
            Some("unique_samples_seen")
        } else {
            None
        };
        match violation {
            Some(field) => Err(Error::Data(format!(
                "record for step {} decreases {field} relative to step {}",
                self.step, prev.step
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    pub dataset: DatasetSpec,
    pub dataset_seed: u64,
    /// Exclude training-pool tasks from the evaluation set.
    pub disjoint: bool,
    /// Seed for the evaluation samples.
    pub sample_seed: u64,
    /// Evaluate every this many steps (and at step 0 and the last step).
    pub every: u64,
}

/// Everything needed to reproduce a run bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub format_version: u32,
    pub run_id: String,
    /// Group label next to model size, e.g. an initialization family.
    pub variant: String,
    pub arch: ArchSpec,
    pub n_nonembed: usize,
    pub init_seed: u64,
    pub train: TrainConfig,
    pub schedule: ScheduleSpec,
    /// Samples per task for pass-rate ordering (unused for difficulty ordering).
    pub pass_rate_samples: usize,
    pub dataset: DatasetSpec,
    pub dataset_seed: u64,
    pub eval: EvalSpec,
    pub max_flops: Option<f64>,
    pub code_version: String,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("serializing manifest: {e}")))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<RunManifest> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.clone(),
            line: e.line(),
            msg: e.to_string(),
            version: FORMAT_VERSION,
        })?;
        let version = value.get("format_version").and_then(|v| v.as_u64());
        if version != Some(u64::from(FORMAT_VERSION)) {
            return Err(Error::Parse {
                path,
                line: 1,
                msg: format!("field `format_version` is {version:?}, expected {FORMAT_VERSION}"),
                version: FORMAT_VERSION,
            });
        }
        serde_json::from_value(value).map_err(|e| Error::Parse {
            path,
            line: 1,
            msg: e.to_string(),
            version: FORMAT_VERSION,
        })
    }
}

/// Append-only writer for one step log.
///
/// Each record goes out as one `write` of a complete line, so a crash leaves
/// a prefix of whole lines plus at most one partial line.
#[derive(Debug)]
pub struct RunSink {
    path: PathBuf,
    file: File,
    last: Option<StepRecord>,
}

impl RunSink {
    /// Creates (or truncates) the log at `path`.
    pub fn create(path: &Path) -> Result<RunSink> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(RunSink {
            path: path.to_path_buf(),
            file,
            last: None,
        })
    }

    pub fn append_record(&mut self, record: &StepRecord) -> Result<()> {
        if let Some(prev) = &self.last {
            record.check_follows(prev)?;
        }
        let mut line = serde_json::to_string(record)
            .map_err(|e| Error::Data(format!("serializing step record: {e}")))?;
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|()| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))?;
        self.last = Some(record.clone());
        Ok(())
    }

    /// Flushes file contents to stable storage.
    pub fn sync(&self) -> Result<()> {
        self.file.sync_data().map_err(|e| Error::io(&self.path, e))
    }
}

/// Writes a complete run directory from in-memory records.
pub fn write_run(dir: &Path, manifest: &RunManifest, records: &[StepRecord]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    manifest.write(dir)?;
    let mut sink = RunSink::create(&dir.join(STEPS_FILE))?;
    for r in records {
        sink.append_record(r)?;
    }
    sink.sync()
}

/// Parses a step log. A final line without its newline is an interrupted
/// write: it is dropped and reported through the returned flag.
pub fn read_steps(path: &Path) -> Result<(Vec<StepRecord>, bool)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (complete, partial) = match text.rfind('\n') {
        Some(i) => (&text[..=i], !text[i + 1..].is_empty()),
        None => ("", !text.is_empty()),
    };
    let mut records: Vec<StepRecord> = Vec::new();
    for (i, line) in complete.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: StepRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
            version: FORMAT_VERSION,
        })?;
        if let Some(prev) = records.last() {
            record.check_follows(prev).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
                version: FORMAT_VERSION,
            })?;
        }
        records.push(record);
    }
    Ok((records, partial))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub manifest: RunManifest,
    pub records: Vec<StepRecord>,
}

impl Run {
    pub fn read(dir: &Path) -> Result<(Run, bool)> {
        let manifest = RunManifest::read(dir)?;
        let (records, partial) = read_steps(&dir.join(STEPS_FILE))?;
        Ok((Run { manifest, records }, partial))
    }

    pub fn group_key(&self) -> GroupKey {
        GroupKey {
            model_n: self.manifest.n_nonembed,
            variant: self.manifest.variant.clone(),
        }
    }

    /// `(x, y)` pairs from evaluation records with `x > 0`.
    pub fn series(&self, x: XAxis, y: YAxis) -> Result<Vec<(f64, f64)>> {
        let points: Vec<(f64, f64)> = self
            .records
            .iter()
            .filter_map(|r| {
                let eval = r.eval_loss?;
                let xv = match x {
                    XAxis::Flops => r.cumulative_flops,
                    XAxis::Data => r.unique_samples_seen as f64,
                    XAxis::Steps => r.step as f64,
                };
                let yv = match y {
                    YAxis::Loss => eval,
                    YAxis::Length => r.mean_response_length,
                };
                (xv > 0.0).then_some((xv, yv))
            })
            .collect();
        if points.is_empty() {
            return Err(Error::EmptySeries(format!(
                "run {} has no evaluation points with {} > 0",
                self.manifest.run_id, x
            )));
        }
        Ok(points)
    }
}

/// Fit groups: model size, then variant label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupKey {
    pub model_n: usize,
    pub variant: String,
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}-{}", self.model_n, self.variant)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSet {
    /// Sorted by run id.
    pub runs: Vec<Run>,
    /// Number of partial trailing lines that were dropped while loading.
    pub dropped_partial_lines: usize,
}

impl RunSet {
    pub fn new(mut runs: Vec<Run>) -> Result<RunSet> {
        runs.sort_by(|a, b| a.manifest.run_id.cmp(&b.manifest.run_id));
        if let Some(w) = runs
            .windows(2)
            .find(|w| w[0].manifest.run_id == w[1].manifest.run_id)
        {
            return Err(Error::Data(format!(
                "duplicate run id {}",
                w[0].manifest.run_id
            )));
        }
        Ok(RunSet {
            runs,
            dropped_partial_lines: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn groups(&self) -> BTreeMap<GroupKey, Vec<&Run>> {
        let mut out: BTreeMap<GroupKey, Vec<&Run>> = BTreeMap::new();
        for run in &self.runs {
            out.entry(run.group_key()).or_default().push(run);
        }
        out
    }
}

/// Loads every run directory (one containing a manifest) under `paths`.
pub fn load_runs(paths: &[PathBuf]) -> Result<RunSet> {
    let mut dirs = Vec::new();
    let mut visited = HashSet::new();
    for root in paths {
        if !root.exists() {
            return Err(Error::io(
                root,
                std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
            ));
        }
        for entry in WalkDir::new(root).sort_by_file_name() {
            let entry = entry.map_err(|e| Error::Data(format!("walking {}: {e}", root.display())))?;
            if entry.file_type().is_file() && entry.file_name() == MANIFEST_FILE {
                let dir = entry.path().parent().unwrap_or(Path::new(".")).to_path_buf();
                if visited.insert(dir.clone()) {
                    dirs.push(dir);
                }
            }
        }
    }
    let mut runs = Vec::with_capacity(dirs.len());
    let mut dropped = 0;
    for dir in dirs {
        let (run, partial) = Run::read(&dir)?;
        dropped += usize::from(partial);
        runs.push(run);
    }
    let mut set = RunSet::new(runs)?;
    set.dropped_partial_lines = dropped;
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum XAxis {
    /// Cumulative FLOPs `C`.
    Flops,
    /// Unique samples seen `D`.
    Data,
    Steps,
}

impl XAxis {
    pub fn name(self) -> &'static str {
        match self {
            XAxis::Flops => "flops",
            XAxis::Data => "data",
            XAxis::Steps => "steps",
        }
    }
}

impl fmt::Display for XAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for XAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flops" | "C" => Ok(XAxis::Flops),
            "data" | "D" => Ok(XAxis::Data),
            "steps" | "S" => Ok(XAxis::Steps),
            _ => Err(Error::Config(format!(
                "unknown x axis `{s}` (expected flops, data or steps)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YAxis {
    /// Held-out loss.
    Loss,
    /// Mean training response length.
    Length,
}

impl YAxis {
    pub fn name(self) -> &'static str {
        match self {
            YAxis::Loss => "loss",
            YAxis::Length => "length",
        }
    }
}

impl fmt::Display for YAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for YAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loss" => Ok(YAxis::Loss),
            "length" => Ok(YAxis::Length),
            _ => Err(Error::Config(format!(
                "unknown y `{s}` (expected loss or length)"
            ))),
        }
    }
}
