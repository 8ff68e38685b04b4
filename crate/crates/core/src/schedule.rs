//! Curriculum ordering and the data-reuse schedule.
//!
//! A run with total sample budget `S` and reuse factor `τ` draws a subset of
//! `S/τ` tasks uniformly without replacement (seeded per run, never nested
//! inside another run's subset), sorts it easy to hard, and repeats that
//! exact sequence `τ` times. Batches are consecutive slices of the stream.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::taskgen::{Dataset, TaskInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ordering {
    DifficultyAscending,
    PassRateDescending,
}

impl Ordering {
    pub fn name(self) -> &'static str {
        match self {
            Ordering::DifficultyAscending => "difficulty-ascending",
            Ordering::PassRateDescending => "pass-rate-descending",
        }
    }
}

impl fmt::Display for Ordering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ordering {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "difficulty-ascending" => Ok(Ordering::DifficultyAscending),
            "pass-rate-descending" => Ok(Ordering::PassRateDescending),
            _ => Err(Error::Config(format!("unknown ordering `{s}`"))),
        }
    }
}

pub type PassRates = HashMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    /// Total scheduled samples `S`.
    pub total_samples: usize,
    /// Reuse factor `τ`.
    pub reuse_factor: usize,
    pub batch_size: usize,
    pub ordering: Ordering,
    pub seed: u64,
}

impl ScheduleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.total_samples == 0 || self.reuse_factor == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "schedule total_samples, reuse_factor and batch_size must be at least 1".into(),
            ));
        }
        if !self.total_samples.is_multiple_of(self.reuse_factor) {
            return Err(Error::Config(format!(
                "schedule.total_samples {} is not divisible by reuse_factor {}",
                self.total_samples, self.reuse_factor
            )));
        }
        if !self.total_samples.is_multiple_of(self.batch_size) {
            return Err(Error::Config(format!(
                "schedule.total_samples {} is not divisible by batch_size {}",
                self.total_samples, self.batch_size
            )));
        }
        Ok(())
    }

    pub fn subset_size(&self) -> usize {
        self.total_samples / self.reuse_factor
    }

    pub fn steps(&self) -> usize {
        self.total_samples / self.batch_size
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleStream {
    pub ids: Vec<String>,
    pub seed: u64,
    pub reuse_factor: usize,
    pub total_samples: usize,
    pub batch_size: usize,
    pub ordering: Ordering,
}

impl SampleStream {
    pub fn subset_size(&self) -> usize {
        self.total_samples / self.reuse_factor
    }

    pub fn epochs(&self) -> impl Iterator<Item = &[String]> {
        self.ids.chunks(self.subset_size())
    }

    pub fn batches(&self) -> impl Iterator<Item = &[String]> {
        self.ids.chunks(self.batch_size)
    }

    fn header(&self) -> String {
        format!(
            "# schedule v1 seed={} tau={} s_const={} batch_size={} ordering={}",
            self.seed, self.reuse_factor, self.total_samples, self.batch_size, self.ordering
        )
    }

    /// Header line followed by one task id per line.
    pub fn to_text(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for id in &self.ids {
            out.push_str(id);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<SampleStream> {
        let bad = |msg: String| Error::Data(format!("schedule file: {msg}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty".into()))?;
        let fields = header
            .strip_prefix("# schedule v1 ")
            .ok_or_else(|| bad(format!("unrecognized header `{header}`")))?;
        let mut kv = HashMap::new();
        for part in fields.split_whitespace() {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| bad(format!("malformed header field `{part}`")))?;
            kv.insert(k, v);
        }
        let get = |k: &str| {
            kv.get(k)
                .copied()
                .ok_or_else(|| bad(format!("header is missing `{k}`")))
        };
        let num = |k: &str| -> Result<u64> {
            get(k)?
                .parse()
                .map_err(|_| bad(format!("header field `{k}` is not an integer")))
        };
        let stream = SampleStream {
            seed: num("seed")?,
            reuse_factor: num("tau")? as usize,
            total_samples: num("s_const")? as usize,
            batch_size: num("batch_size")? as usize,
            ordering: get("ordering")?.parse()?,
            ids: lines
                .filter(|l| !l.is_empty())
                .map(str::to_owned)
                .collect(),
        };
        if stream.ids.len() != stream.total_samples {
            return Err(bad(format!(
                "{} ids listed, header says {}",
                stream.ids.len(),
                stream.total_samples
            )));
        }
        Ok(stream)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn check_pass_rates(key: Ordering, pass_rates: Option<&PassRates>) -> Result<()> {
    match (key, pass_rates) {
        (Ordering::PassRateDescending, None) => Err(Error::Data(
            "pass-rate ordering requires pass rates".into(),
        )),
        (Ordering::DifficultyAscending, Some(_)) => Err(Error::Config(
            "pass rates given for difficulty ordering".into(),
        )),
        _ => Ok(()),
    }
}

fn sort_tasks(tasks: &mut [TaskInstance], key: Ordering, pass_rates: Option<&PassRates>) -> Result<()> {
    check_pass_rates(key, pass_rates)?;
    match key {
        Ordering::DifficultyAscending => {
            tasks.sort_by(|a, b| {
                a.difficulty
                    .cmp(&b.difficulty)
                    .then_with(|| a.task_id.cmp(&b.task_id))
            });
        }
        Ordering::PassRateDescending => {
            let rates = pass_rates.expect("checked above");
            if let Some(t) = tasks.iter().find(|t| !rates.contains_key(&t.task_id)) {
                return Err(Error::Data(format!("no pass rate for task {}", t.task_id)));
            }
            tasks.sort_by(|a, b| {
                rates[&b.task_id]
                    .total_cmp(&rates[&a.task_id])
                    .then_with(|| a.task_id.cmp(&b.task_id))
            });
        }
    }
    Ok(())
}

/// Orders easy to hard: ascending difficulty, or descending pass rate.
/// Ties are broken by task id.
pub fn curriculum_sort(
    dataset: &Dataset,
    key: Ordering,
    pass_rates: Option<&PassRates>,
) -> Result<Dataset> {
    let mut sorted = dataset.clone();
    sort_tasks(&mut sorted.instances, key, pass_rates)?;
    Ok(sorted)
}

pub fn make_reuse_schedule(
    dataset: &Dataset,
    spec: &ScheduleSpec,
    pass_rates: Option<&PassRates>,
) -> Result<SampleStream> {
    spec.validate()?;
    check_pass_rates(spec.ordering, pass_rates)?;
    let subset_size = spec.subset_size();
    if dataset.len() < subset_size {
        return Err(Error::Capacity(format!(
            "schedule needs {subset_size} unique tasks (S={} / τ={}), dataset has {}",
            spec.total_samples,
            spec.reuse_factor,
            dataset.len()
        )));
    }
    let mut rng = rng_from(spec.seed, &[0x72_6575_7365]);
    let mut picked: Vec<usize> = index::sample(&mut rng, dataset.len(), subset_size).into_vec();
    picked.sort_unstable();
    let mut subset: Vec<TaskInstance> = picked
        .into_iter()
        .map(|i| dataset.instances[i].clone())
        .collect();
    sort_tasks(&mut subset, spec.ordering, pass_rates)?;
    let epoch: Vec<String> = subset.into_iter().map(|t| t.task_id).collect();
    let ids = std::iter::repeat_n(epoch, spec.reuse_factor)
        .flatten()
        .collect();
    Ok(SampleStream {
        ids,
        seed: spec.seed,
        reuse_factor: spec.reuse_factor,
        total_samples: spec.total_samples,
        batch_size: spec.batch_size,
        ordering: spec.ordering,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskgen::{build_dataset, DatasetSpec, Family};
    use std::collections::HashSet;

    fn pool(size: usize, dmax: u32, seed: u64) -> Dataset {
        build_dataset(
            &DatasetSpec {
                family: Family::ModularChain,
                size,
                difficulty_min: 1,
                difficulty_max: dmax,
            },
            seed,
        )
        .unwrap()
    }

    fn spec(s: usize, tau: usize, seed: u64) -> ScheduleSpec {
        ScheduleSpec {
            total_samples: s,
            reuse_factor: tau,
            batch_size: 1,
            ordering: Ordering::DifficultyAscending,
            seed,
        }
    }

    #[test]
    fn sort_by_difficulty() {
        let mut d = pool(3, 3, 0);
        d.instances.reverse();
        let diffs: Vec<u32> = d.instances.iter().map(|t| t.difficulty).collect();
        assert_eq!(diffs, [3, 2, 1]);
        let s = curriculum_sort(&d, Ordering::DifficultyAscending, None).unwrap();
        let diffs: Vec<u32> = s.instances.iter().map(|t| t.difficulty).collect();
        assert_eq!(diffs, [1, 2, 3]);
    }

    #[test]
    fn equal_difficulty_falls_back_to_id_order() {
        let d = pool(8, 1, 0);
        let s = curriculum_sort(&d, Ordering::DifficultyAscending, None).unwrap();
        let mut ids: Vec<_> = d.instances.iter().map(|t| t.task_id.clone()).collect();
        ids.sort();
        assert_eq!(
            s.instances.iter().map(|t| t.task_id.clone()).collect::<Vec<_>>(),
            ids
        );
    }

    #[test]
    fn sort_by_pass_rate() {
        let d = pool(3, 1, 0);
        let rates: PassRates = d
            .instances
            .iter()
            .zip([0.9, 0.1, 0.5])
            .map(|(t, r)| (t.task_id.clone(), r))
            .collect();
        let s = curriculum_sort(&d, Ordering::PassRateDescending, Some(&rates)).unwrap();
        let got: Vec<f64> = s.instances.iter().map(|t| rates[&t.task_id]).collect();
        assert_eq!(got, [0.9, 0.5, 0.1]);

        let mut partial = rates.clone();
        partial.remove(&d.instances[1].task_id);
        assert!(matches!(
            curriculum_sort(&d, Ordering::PassRateDescending, Some(&partial)),
            Err(Error::Data(_))
        ));
        assert!(curriculum_sort(&d, Ordering::PassRateDescending, None).is_err());
    }

    #[test]
    fn no_reuse() {
        let d = pool(50, 3, 0);
        let s = make_reuse_schedule(&d, &spec(30, 1, 4), None).unwrap();
        let distinct: HashSet<_> = s.ids.iter().collect();
        assert_eq!(distinct.len(), 30);
    }

    #[test]
    fn degenerate_single_task() {
        let d = pool(50, 3, 0);
        let s = make_reuse_schedule(&d, &spec(12, 12, 4), None).unwrap();
        assert!(s.ids.iter().all(|id| *id == s.ids[0]));
        assert_eq!(s.ids.len(), 12);
    }

    /// Recount oracle: rebuilds the multiset and epoch structure from scratch.
    #[test]
    fn reuse_multiset_and_epochs() {
        let d = pool(60, 4, 1);
        let s = make_reuse_schedule(&d, &spec(100, 5, 9), None).unwrap();
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for id in &s.ids {
            *counts.entry(id).or_default() += 1;
        }
        assert_eq!(counts.len(), 20);
        assert!(counts.values().all(|&c| c == 5));
        let first = &s.ids[..20];
        for k in 0..5 {
            assert_eq!(&s.ids[20 * k..20 * (k + 1)], first);
        }
        let difficulty = |id: &str| d.get(id).unwrap().difficulty;
        assert!(first.windows(2).all(|w| difficulty(&w[0]) <= difficulty(&w[1])));
    }

    #[test]
    fn invalid_specs() {
        let d = pool(10, 1, 0);
        assert!(matches!(
            make_reuse_schedule(&d, &spec(100, 3, 0), None),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            make_reuse_schedule(&d, &spec(100, 5, 0), None),
            Err(Error::Capacity(_))
        ));
        let mut bad_batch = spec(10, 1, 0);
        bad_batch.batch_size = 3;
        assert!(make_reuse_schedule(&d, &bad_batch, None).is_err());
    }

    #[test]
    fn text_round_trip() {
        let d = pool(40, 2, 0);
        let mut sp = spec(40, 2, 3);
        sp.batch_size = 4;
        let s = make_reuse_schedule(&d, &sp, None).unwrap();
        let text = s.to_text();
        assert!(text.starts_with("# schedule v1 seed=3 tau=2 s_const=40 batch_size=4"));
        assert_eq!(SampleStream::parse(&text).unwrap(), s);
        assert_eq!(s.batches().count(), 10);
        assert!(SampleStream::parse("garbage").is_err());
    }
}
