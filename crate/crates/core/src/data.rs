//! Scored datasets: CSV ingestion, seeded splits and synthetic populations.
//!
//! A [`Dataset`] is an ordered list of [`ScoredSample`]s whose group ids are
//! dense integers `0..m`. The original group labels (strings or integers in
//! the input file) are kept in `group_names` so reports can map back.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}` in header")]
    MissingColumn(String),
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("line {line}: score {score} is outside [0, 1]")]
    ScoreOutOfRange { line: u64, score: f64 },
    #[error("line {line}: label `{label}` is not 0 or 1")]
    BadLabel { line: u64, label: String },
    #[error("sample {index}: {message}")]
    InvalidSample { index: usize, message: String },
    #[error("split fractions must be positive and sum to 1, got {0:?}")]
    BadFractions([f64; 3]),
    #[error("synthetic cell (group {group}, label {label}) is empty")]
    EmptyCell { group: usize, label: u8 },
    #[error("invalid score distribution: {0}")]
    BadDistribution(String),
    #[error("at least one group is required")]
    NoGroups,
}

/// One individual: predictor score, dense group id and binary label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub score: f64,
    pub group: usize,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<ScoredSample>,
    group_names: Vec<String>,
}

impl Dataset {
    /// Validates scores and group ids. The group count is `group_names.len()`.
    pub fn new(samples: Vec<ScoredSample>, group_names: Vec<String>) -> Result<Self, DataError> {
        if group_names.is_empty() {
            return Err(DataError::NoGroups);
        }
        for (index, s) in samples.iter().enumerate() {
            if !s.score.is_finite() || !(0.0..=1.0).contains(&s.score) {
                return Err(DataError::InvalidSample {
                    index,
                    message: format!("score {} is not a finite value in [0, 1]", s.score),
                });
            }
            if s.group >= group_names.len() {
                return Err(DataError::InvalidSample {
                    index,
                    message: format!("group {} >= group count {}", s.group, group_names.len()),
                });
            }
        }
        Ok(Self {
            samples,
            group_names,
        })
    }

    /// Convenience constructor naming groups `"0".."m-1"`.
    pub fn with_group_count(samples: Vec<ScoredSample>, group_count: usize) -> Result<Self, DataError> {
        Self::new(samples, (0..group_count).map(|g| g.to_string()).collect())
    }

    pub fn samples(&self) -> &[ScoredSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn group_count(&self) -> usize {
        self.group_names.len()
    }

    pub fn group_names(&self) -> &[String] {
        &self.group_names
    }

    /// Samples at `indices`, in the given order, sharing this dataset's group mapping.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i]).collect(),
            group_names: self.group_names.clone(),
        }
    }

    pub fn stats(&self) -> GroupStats {
        GroupStats::from_dataset(self)
    }
}

/// Integer counts for one group.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCounts {
    pub positives: u64,
    pub negatives: u64,
}

impl GroupCounts {
    pub fn total(&self) -> u64 {
        self.positives + self.negatives
    }
}

/// Per-group prevalence, proportion and counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    counts: Vec<GroupCounts>,
}

impl GroupStats {
    pub fn from_dataset(data: &Dataset) -> Self {
        let mut counts = vec![GroupCounts::default(); data.group_count()];
        for s in data.samples() {
            let c = &mut counts[s.group];
            if s.label {
                c.positives += 1;
            } else {
                c.negatives += 1;
            }
        }
        Self { counts }
    }

    pub fn from_counts(counts: Vec<GroupCounts>) -> Self {
        Self { counts }
    }

    pub fn group_count(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self, group: usize) -> GroupCounts {
        self.counts[group]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(GroupCounts::total).sum()
    }

    /// Base rate `n_{a,1} / n_a`; NaN for an empty group.
    pub fn prevalence(&self, group: usize) -> f64 {
        let c = self.counts[group];
        c.positives as f64 / c.total() as f64
    }

    /// Group share `n_a / n`.
    pub fn proportion(&self, group: usize) -> f64 {
        self.counts[group].total() as f64 / self.total() as f64
    }

    pub fn prevalences(&self) -> Vec<f64> {
        (0..self.group_count()).map(|g| self.prevalence(g)).collect()
    }

    pub fn proportions(&self) -> Vec<f64> {
        (0..self.group_count()).map(|g| self.proportion(g)).collect()
    }
}

/// Column names used when reading a scored CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub score_col: String,
    pub group_col: String,
    pub label_col: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            score_col: "score".into(),
            group_col: "group".into(),
            label_col: "label".into(),
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, schema)
}

/// Parses a headered CSV. Groups are re-indexed densely in order of first appearance.
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let score_idx = column(&schema.score_col)?;
    let group_idx = column(&schema.group_col)?;
    let label_idx = column(&schema.label_col)?;

    let mut group_ids: HashMap<String, usize> = HashMap::new();
    let mut group_names = Vec::new();
    let mut samples = Vec::new();
    for record in rdr.records() {
        let record = record?;
        // header is line 1
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |idx: usize| {
            record.get(idx).ok_or_else(|| DataError::Malformed {
                line,
                message: format!("expected at least {} fields", idx + 1),
            })
        };
        let raw_score = field(score_idx)?;
        let score: f64 = raw_score.parse().map_err(|_| DataError::Malformed {
            line,
            message: format!("score `{raw_score}` is not a number"),
        })?;
        if !score.is_finite() || !(0.0..=1.0).contains(&score) {
            return Err(DataError::ScoreOutOfRange { line, score });
        }
        let raw_label = field(label_idx)?;
        let label = match raw_label {
            "1" | "1.0" => true,
            "0" | "0.0" => false,
            other => {
                return Err(DataError::BadLabel {
                    line,
                    label: other.to_string(),
                })
            }
        };
        let name = field(group_idx)?.to_string();
        let next = group_names.len();
        let group = *group_ids.entry(name.clone()).or_insert_with(|| {
            group_names.push(name);
            next
        });
        samples.push(ScoredSample { score, group, label });
    }
    Dataset::new(samples, group_names)
}

pub fn write_csv<W: std::io::Write>(data: &Dataset, writer: W) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["score", "group", "label"])?;
    for s in data.samples() {
        wtr.write_record([
            s.score.to_string(),
            data.group_names()[s.group].clone(),
            u8::from(s.label).to_string(),
        ])?;
    }
    wtr.flush().map_err(|source| DataError::Io {
        path: "<csv writer>".into(),
        source,
    })?;
    Ok(())
}

/// Train / post-processing / test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub post: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn new(train: f64, post: f64, test: f64) -> Result<Self, DataError> {
        let f = Self { train, post, test };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let all = [self.train, self.post, self.test];
        let positive = all.iter().all(|x| x.is_finite() && *x > 0.0);
        if !positive || (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(DataError::BadFractions(all));
        }
        Ok(())
    }
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.30,
            post: 0.35,
            test: 0.35,
        }
    }
}

/// Index sets of a uniform random (unstratified) partition. Each set is sorted ascending.
pub fn split_indices(
    n: usize,
    fractions: SplitFractions,
    seed: u64,
) -> Result<[Vec<usize>; 3], DataError> {
    fractions.validate()?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_train = (((n as f64) * fractions.train).round() as usize).min(n);
    let n_post = (((n as f64) * fractions.post).round() as usize).min(n - n_train);
    let mut train = order[..n_train].to_vec();
    let mut post = order[n_train..n_train + n_post].to_vec();
    let mut test = order[n_train + n_post..].to_vec();
    train.sort_unstable();
    post.sort_unstable();
    test.sort_unstable();
    Ok([train, post, test])
}

/// Seeded (train, post, test) partition preserving the original sample order within each part.
pub fn split(
    data: &Dataset,
    fractions: SplitFractions,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset), DataError> {
    let [train, post, test] = split_indices(data.len(), fractions, seed)?;
    Ok((data.subset(&train), data.subset(&post), data.subset(&test)))
}

/// Score distribution for one (group, label) cell of a synthetic population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreDist {
    Beta { alpha: f64, beta: f64 },
    Uniform { lo: f64, hi: f64 },
    Constant { value: f64 },
}

impl ScoreDist {
    fn validate(&self) -> Result<(), DataError> {
        let ok = match *self {
            ScoreDist::Beta { alpha, beta } => alpha > 0.0 && beta > 0.0,
            ScoreDist::Uniform { lo, hi } => (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo <= hi,
            ScoreDist::Constant { value } => (0.0..=1.0).contains(&value),
        };
        if ok {
            Ok(())
        } else {
            Err(DataError::BadDistribution(format!("{self:?}")))
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            ScoreDist::Beta { alpha, beta } => {
                // validated above
                Beta::new(alpha, beta).expect("valid beta parameters").sample(rng)
            }
            ScoreDist::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            ScoreDist::Constant { value } => value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthGroup {
    pub name: String,
    pub positives: usize,
    pub negatives: usize,
    pub positive_scores: ScoreDist,
    pub negative_scores: ScoreDist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub groups: Vec<SynthGroup>,
}

/// Draws a synthetic population; samples are shuffled so groups and labels interleave.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<Dataset, DataError> {
    if spec.groups.is_empty() {
        return Err(DataError::NoGroups);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    for (group, g) in spec.groups.iter().enumerate() {
        if g.positives == 0 {
            return Err(DataError::EmptyCell { group, label: 1 });
        }
        if g.negatives == 0 {
            return Err(DataError::EmptyCell { group, label: 0 });
        }
        g.positive_scores.validate()?;
        g.negative_scores.validate()?;
        for _ in 0..g.positives {
            let score = g.positive_scores.sample(&mut rng).clamp(0.0, 1.0);
            samples.push(ScoredSample { score, group, label: true });
        }
        for _ in 0..g.negatives {
            let score = g.negative_scores.sample(&mut rng).clamp(0.0, 1.0);
            samples.push(ScoredSample { score, group, label: false });
        }
    }
    samples.shuffle(&mut rng);
    Dataset::new(samples, spec.groups.iter().map(|g| g.name.clone()).collect())
}
