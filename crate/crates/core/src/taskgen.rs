//! Synthetic rule-verifiable tasks.
//!
//! Two families are provided:
//!
//! - `modular-chain`: `a0 op1 a1 ... op_d a_d =`, evaluated left to right
//!   modulo [`MODULUS`]; operands are single digits and the answer is the
//!   decimal digit sequence of the result.
//! - `copy-reverse`: `REV s1 ... s_d =`, answer `s_d ... s1`.
//!
//! A response is scored by taking the span after the first [`ANS`] token up
//! to the first [`EOS`] (or the end of the sequence) and comparing it with the
//! ground-truth answer.

use std::collections::HashSet;
use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::PolicyParams;
use crate::rng::{derive_seed, label_hash, rng_from};

pub type Token = u32;

pub const EOS: Token = 0;
pub const ANS: Token = 1;
pub const DIGIT0: Token = 2;
pub const PLUS: Token = 12;
pub const MINUS: Token = 13;
pub const TIMES: Token = 14;
pub const EQ: Token = 15;
pub const REV: Token = 16;
pub const VOCAB_SIZE: usize = 17;

pub const MODULUS: i64 = 11;

pub fn digit(d: u32) -> Token {
    debug_assert!(d < 10);
    DIGIT0 + d
}

/// Human-readable rendering of a token.
pub fn token_str(t: Token) -> &'static str {
    const NAMES: [&str; VOCAB_SIZE] = [
        "<eos>", "<ans>", "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "+", "-", "*", "=",
        "<rev>",
    ];
    NAMES.get(t as usize).copied().unwrap_or("<?>")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    ModularChain,
    CopyReverse,
}

impl Family {
    pub const ALL: [Family; 2] = [Family::ModularChain, Family::CopyReverse];

    pub fn name(self) -> &'static str {
        match self {
            Family::ModularChain => "modular-chain",
            Family::CopyReverse => "copy-reverse",
        }
    }

    fn short(self) -> &'static str {
        match self {
            Family::ModularChain => "mc",
            Family::CopyReverse => "cr",
        }
    }

    /// Supported difficulty range, inclusive.
    pub fn difficulty_range(self) -> (u32, u32) {
        match self {
            Family::ModularChain => (1, 8),
            Family::CopyReverse => (1, 12),
        }
    }

    /// Number of distinct prompts at a difficulty (saturating).
    pub fn capacity(self, difficulty: u32) -> u64 {
        match self {
            Family::ModularChain => 10u64
                .saturating_pow(difficulty + 1)
                .saturating_mul(3u64.saturating_pow(difficulty)),
            Family::CopyReverse => 10u64.saturating_pow(difficulty),
        }
    }

    /// Longest prompt and answer the family produces at `difficulty`.
    pub fn max_lengths(self, difficulty: u32) -> (usize, usize) {
        let d = difficulty as usize;
        match self {
            // digits of a result below MODULUS
            Family::ModularChain => (2 * d + 2, 2),
            Family::CopyReverse => (d + 2, d),
        }
    }

    fn check_difficulty(self, difficulty: u32) -> Result<()> {
        let (lo, hi) = self.difficulty_range();
        if difficulty < lo || difficulty > hi {
            return Err(Error::Config(format!(
                "difficulty {difficulty} outside {}..={} for family {}",
                lo,
                hi,
                self.name()
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown task family `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub task_id: String,
    pub family: Family,
    pub difficulty: u32,
    pub prompt: Vec<Token>,
    pub answer: Vec<Token>,
}

impl TaskInstance {
    /// The canonical correct response: `ANS answer EOS`.
    pub fn reference_response(&self) -> Vec<Token> {
        let mut r = Vec::with_capacity(self.answer.len() + 2);
        r.push(ANS);
        r.extend_from_slice(&self.answer);
        r.push(EOS);
        r
    }
}

fn task_id(family: Family, difficulty: u32, prompt: &[Token]) -> String {
    let mut id = format!("{}{}-", family.short(), difficulty);
    for t in prompt {
        id.push_str(&format!("{t:02x}"));
    }
    id
}

fn digits_of(mut v: i64) -> Vec<Token> {
    debug_assert!(v >= 0);
    let mut out = Vec::new();
    loop {
        out.push(digit((v % 10) as u32));
        v /= 10;
        if v == 0 {
            break;
        }
    }
    out.reverse();
    out
}

/// Deterministic, index-addressable task generation.
pub fn generate_task(family: Family, difficulty: u32, seed: u64, index: u64) -> Result<TaskInstance> {
    family.check_difficulty(difficulty)?;
    let mut rng = rng_from(
        seed,
        &[label_hash(family.name()), u64::from(difficulty), index],
    );
    let (prompt, answer) = match family {
        Family::ModularChain => {
            let mut acc: i64 = rng.gen_range(0..10);
            let mut prompt = vec![digit(acc as u32)];
            for _ in 0..difficulty {
                let op = [PLUS, MINUS, TIMES][rng.gen_range(0..3)];
                let operand: i64 = rng.gen_range(0..10);
                acc = match op {
                    PLUS => acc + operand,
                    MINUS => acc - operand,
                    _ => acc * operand,
                }
                .rem_euclid(MODULUS);
                prompt.push(op);
                prompt.push(digit(operand as u32));
            }
            prompt.push(EQ);
            (prompt, digits_of(acc))
        }
        Family::CopyReverse => {
            let symbols: Vec<Token> = (0..difficulty).map(|_| digit(rng.gen_range(0..10))).collect();
            let mut prompt = Vec::with_capacity(symbols.len() + 2);
            prompt.push(REV);
            prompt.extend_from_slice(&symbols);
            prompt.push(EQ);
            let answer = symbols.into_iter().rev().collect();
            (prompt, answer)
        }
    };
    Ok(TaskInstance {
        task_id: task_id(family, difficulty, &prompt),
        family,
        difficulty,
        prompt,
        answer,
    })
}

/// Extracts the answer span: tokens after the first `ANS`, up to the first `EOS`.
/// Anything from the first `EOS` on is ignored, including a later `ANS`.
pub fn extract_answer(response: &[Token]) -> Option<&[Token]> {
    let end = response.iter().position(|&t| t == EOS).unwrap_or(response.len());
    let live = &response[..end];
    let start = live.iter().position(|&t| t == ANS)? + 1;
    Some(&live[start..])
}

/// Binary reward.
pub fn verify(task: &TaskInstance, response: &[Token]) -> u8 {
    match extract_answer(response) {
        Some(span) if span == task.answer.as_slice() => 1,
        _ => 0,
    }
}

/// Token budget for a response that can still be correct: `ANS` plus the
/// answer, with the closing `EOS` optional.
pub fn tight_budget(task: &TaskInstance) -> usize {
    task.answer.len() + 1
}

/// Fraction of `n_samples` responses (budget [`tight_budget`]) that verify.
/// Sample `i` uses seed `derive_seed(seed, [i])`.
pub fn estimate_pass_rate(
    policy: &PolicyParams,
    task: &TaskInstance,
    n_samples: usize,
    temperature: f64,
    seed: u64,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::Config("n_samples must be at least 1".into()));
    }
    let mut hits = 0usize;
    for i in 0..n_samples {
        let r = policy.sample(
            &task.prompt,
            temperature,
            tight_budget(task),
            derive_seed(seed, &[i as u64]),
        )?;
        hits += usize::from(verify(task, &r.tokens));
    }
    Ok(hits as f64 / n_samples as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub family: Family,
    pub size: usize,
    pub difficulty_min: u32,
    pub difficulty_max: u32,
}

impl DatasetSpec {
    /// Per-difficulty counts: `size` split evenly, remainder to the easiest strata.
    pub fn strata(&self) -> Vec<(u32, usize)> {
        let levels = (self.difficulty_max - self.difficulty_min + 1) as usize;
        let base = self.size / levels;
        let extra = self.size % levels;
        (0..levels)
            .map(|i| (self.difficulty_min + i as u32, base + usize::from(i < extra)))
            .collect()
    }

    pub fn max_lengths(&self) -> (usize, usize) {
        self.family.max_lengths(self.difficulty_max)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub seed: u64,
    pub instances: Vec<TaskInstance>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn get(&self, task_id: &str) -> Option<&TaskInstance> {
        self.instances.iter().find(|t| t.task_id == task_id)
    }

    /// Writes one JSON task per line.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for t in &self.instances {
            out.push_str(&serde_json::to_string(t).expect("task serializes"));
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Loads tasks written by [`Dataset::write_jsonl`]. The spec is
    /// reconstructed from the instances (family of the first task,
    /// difficulty bounds observed).
    pub fn read_jsonl(path: &Path) -> Result<Dataset> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut instances: Vec<TaskInstance> = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let t = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
                version: 1,
            })?;
            instances.push(t);
        }
        let family = instances.first().map_or(Family::CopyReverse, |t| t.family);
        let difficulty_min = instances.iter().map(|t| t.difficulty).min().unwrap_or(1);
        let difficulty_max = instances.iter().map(|t| t.difficulty).max().unwrap_or(1);
        Ok(Dataset {
            spec: DatasetSpec {
                family,
                size: instances.len(),
                difficulty_min,
                difficulty_max,
            },
            seed: 0,
            instances,
        })
    }
}

/// Builds `spec.size` distinct tasks, stratified evenly over the difficulty
/// range and ordered by stratum then generation index.
pub fn build_dataset(spec: &DatasetSpec, seed: u64) -> Result<Dataset> {
    build_dataset_excluding(spec, seed, &HashSet::new())
}

/// As [`build_dataset`], skipping any task whose id is in `exclude`.
pub fn build_dataset_excluding(
    spec: &DatasetSpec,
    seed: u64,
    exclude: &HashSet<String>,
) -> Result<Dataset> {
    if spec.size == 0 {
        return Err(Error::Config("dataset size must be at least 1".into()));
    }
    if spec.difficulty_min > spec.difficulty_max {
        return Err(Error::Config(format!(
            "difficulty_min {} > difficulty_max {}",
            spec.difficulty_min, spec.difficulty_max
        )));
    }
    spec.family.check_difficulty(spec.difficulty_min)?;
    spec.family.check_difficulty(spec.difficulty_max)?;

    let mut instances = Vec::with_capacity(spec.size);
    let mut seen = HashSet::new();
    for (difficulty, count) in spec.strata() {
        let excluded = exclude
            .iter()
            .filter(|id| id.starts_with(&format!("{}{}-", spec.family.short(), difficulty)))
            .count() as u64;
        let capacity = spec.family.capacity(difficulty).saturating_sub(excluded);
        if (count as u64) > capacity {
            return Err(Error::Capacity(format!(
                "{} distinct {} tasks requested at difficulty {}, only {} exist",
                count, spec.family, difficulty, capacity
            )));
        }
        // Coupon-collector bound with slack; only hit when count ~ capacity.
        let max_attempts = 64 * (count as u64 + 16) * (1 + (capacity as f64).ln().ceil() as u64);
        let mut taken = 0;
        let mut index = 0u64;
        while taken < count {
            if index >= max_attempts {
                return Err(Error::Capacity(format!(
                    "could not draw {count} distinct {} tasks at difficulty {difficulty}",
                    spec.family
                )));
            }
            let task = generate_task(spec.family, difficulty, seed, index)?;
            index += 1;
            if exclude.contains(&task.task_id) || !seen.insert(task.task_id.clone()) {
                continue;
            }
            instances.push(task);
            taken += 1;
        }
    }
    Ok(Dataset {
        spec: spec.clone(),
        seed,
        instances,
    })
}
