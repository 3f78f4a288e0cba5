//! Experiment configuration, the adaptation pipeline, and result tables.

mod run;
mod tables;

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use run::{general_corpus, learn_general_bpe, learner_corpus, run_experiment, TrainingSubset};
pub use tables::{build_table, emit_error_type_table, emit_tables, ErrorTypeTable, Table, TableFormat, TableRow};

use crate::corpus::{Edit, ErrorOp, Level, SubsetKey, L1};
use crate::error::{Error, Result};
use crate::eval::{MetricReport, DEFAULT_BETA, DEFAULT_MERGE_WINDOW};
use crate::nn::ModelConfig;
use crate::train::TrainConfig;

/// Which data, if any, the general model is adapted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    Unadapted,
    Random,
    Level,
    L1,
    L1Level,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::Unadapted,
        Scenario::Random,
        Scenario::Level,
        Scenario::L1,
        Scenario::L1Level,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Unadapted => "Unadapted",
            Scenario::Random => "Random",
            Scenario::Level => "Level",
            Scenario::L1 => "L1",
            Scenario::L1Level => "L1Level",
        }
    }

    /// Row label in result tables.
    pub fn label(self) -> &'static str {
        match self {
            Scenario::Unadapted => "No",
            Scenario::Random => "Random",
            Scenario::Level => "Level",
            Scenario::L1 => "L1",
            Scenario::L1Level => "L1 & Level",
        }
    }

    fn from_label(s: &str) -> Option<Scenario> {
        Scenario::ALL.into_iter().find(|x| x.label() == s || x.as_str() == s)
    }

    /// Whether the scenario can be evaluated on `key`'s test set.
    pub fn applies_to(self, key: &SubsetKey) -> bool {
        match self {
            Scenario::Unadapted | Scenario::Random => true,
            Scenario::Level => key.level.is_some(),
            Scenario::L1 => key.l1.is_some(),
            Scenario::L1Level => key.level.is_some() && key.l1.is_some(),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scenario::from_label(s).ok_or_else(|| Error::Config(format!("unknown scenario `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => Err(Error::Config(format!("unknown preset `{s}` (expected desk or paper)"))),
        }
    }
}

/// Restricts one learner group to a subset of error operations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupOverride {
    pub l1: L1,
    /// Every level of `l1` when absent.
    #[serde(default)]
    pub level: Option<Level>,
    pub ops: Vec<ErrorOp>,
}

/// Where the data comes from and how it is partitioned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    /// Learner corpus in JSONL; generated from the grid below when absent.
    #[serde(default)]
    pub learner_path: Option<PathBuf>,
    /// General pre-training pool in JSONL; generated when absent.
    #[serde(default)]
    pub general_path: Option<PathBuf>,
    pub l1s: Vec<L1>,
    pub levels: Vec<Level>,
    pub sentences_per_group: usize,
    pub general_size: usize,
    pub general_dev_size: usize,
    pub general_error_rate: f64,
    pub bank_size: usize,
    #[serde(default)]
    pub overrides: Vec<GroupOverride>,
    pub bpe_merges: usize,
    /// Subword cap per encoded sentence.
    pub max_units: usize,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
}

/// Architecture, named as in the training toolkit options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub word_vec_size: usize,
    pub rnn_size: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub dropout: f64,
    pub word_dropout: f64,
    pub variational: bool,
    pub max_decode_len: usize,
}

impl ModelSection {
    pub fn to_model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            embed_dim: self.word_vec_size,
            hidden_dim: self.rnn_size,
            enc_layers: self.enc_layers,
            dec_layers: self.dec_layers,
            vocab_size,
            dropout_p: self.dropout,
            word_dropout_p: self.word_dropout,
            variational: self.variational,
            max_decode_len: self.max_decode_len,
        }
    }

    fn from_model_config(m: &ModelConfig) -> Self {
        ModelSection {
            word_vec_size: m.embed_dim,
            rnn_size: m.hidden_dim,
            enc_layers: m.enc_layers,
            dec_layers: m.dec_layers,
            dropout: m.dropout_p,
            word_dropout: m.word_dropout_p,
            variational: m.variational,
            max_decode_len: m.max_decode_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringConfig {
    pub beta: f64,
    pub merge_window: usize,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            beta: DEFAULT_BETA,
            merge_window: DEFAULT_MERGE_WINDOW,
        }
    }
}

/// A complete experiment. The `seed` fields of the training sections are
/// replaced by per-stage seeds derived from each run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenarios: Vec<Scenario>,
    pub keys: Vec<SubsetKey>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub corpus: CorpusConfig,
    pub model: ModelSection,
    pub base: TrainConfig,
    pub fine_tune: TrainConfig,
    #[serde(default)]
    pub scoring: ScoringConfig,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => Self::desk(),
            Preset::Paper => Self::paper(),
        }
    }

    /// CPU-sized benchmark: four L1s by three levels of synthetic learners,
    /// 800/100/200 splits, a small model.
    pub fn desk() -> Self {
        let l1s = vec![L1::Spanish, L1::Chinese, L1::German, L1::Russian];
        let levels = vec![Level::A2, Level::B1, Level::C1];
        let keys = l1s.iter().flat_map(|&l1| levels.iter().map(move |&level| SubsetKey::l1_level(l1, level))).collect();
        ExperimentConfig {
            scenarios: Scenario::ALL.to_vec(),
            keys,
            seeds: vec![1, 2, 3],
            out_dir: PathBuf::from("runs/desk"),
            corpus: CorpusConfig {
                learner_path: None,
                general_path: None,
                l1s,
                levels,
                sentences_per_group: 1500,
                general_size: 20_000,
                general_dev_size: 500,
                general_error_rate: 4.0,
                bank_size: 5000,
                overrides: Vec::new(),
                bpe_merges: 500,
                max_units: 48,
                train_size: 800,
                dev_size: 100,
                test_size: 200,
            },
            model: ModelSection::from_model_config(&ModelConfig::desk(1)),
            base: TrainConfig::desk_base(),
            fine_tune: TrainConfig::desk_fine_tune(),
            scoring: ScoringConfig::default(),
        }
    }

    /// Full-scale settings: the large architecture and training schedule,
    /// ten-fold data sizes.
    pub fn paper() -> Self {
        let mut c = Self::desk();
        c.out_dir = PathBuf::from("runs/paper");
        c.corpus.sentences_per_group = 12_000;
        c.corpus.general_size = 2_000_000;
        c.corpus.general_dev_size = 5000;
        c.corpus.bank_size = 200_000;
        c.corpus.bpe_merges = 30_000;
        c.corpus.max_units = 100;
        c.corpus.train_size = 8000;
        c.corpus.dev_size = 1000;
        c.corpus.test_size = 2000;
        c.model = ModelSection::from_model_config(&ModelConfig::paper(1));
        c.base = TrainConfig::paper_base();
        c.fine_tune = TrainConfig::paper_fine_tune();
        c
    }

    /// Parses TOML on top of a preset: tables merge key by key, every other
    /// value replaces the preset's.
    pub fn from_toml(text: &str, preset: Preset) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut merged = toml::Table::try_from(Self::preset(preset)).map_err(|e| Error::Config(e.to_string()))?;
        merge_tables(&mut merged, user);
        let config: ExperimentConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>, preset: Preset) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, preset)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() {
            return Err(Error::Config("scenario list is empty".into()));
        }
        if self.keys.is_empty() {
            return Err(Error::Config("no subset keys".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds".into()));
        }
        let distinct: BTreeSet<u64> = self.seeds.iter().copied().collect();
        if distinct.len() != self.seeds.len() {
            return Err(Error::Config(format!("seeds must be distinct: {:?}", self.seeds)));
        }
        let keys: BTreeSet<SubsetKey> = self.keys.iter().copied().collect();
        if keys.len() != self.keys.len() {
            return Err(Error::Config("subset keys must be distinct".into()));
        }
        for s in self.scenarios() {
            if !self.keys.iter().any(|k| s.applies_to(k)) {
                let need = match s {
                    Scenario::L1Level => "a key with both an L1 and a level",
                    Scenario::Level => "a key with a level",
                    _ => "a key with an L1",
                };
                return Err(Error::Config(format!("scenario {s} needs {need}")));
            }
        }
        let c = &self.corpus;
        if c.learner_path.is_none() && (c.l1s.is_empty() || c.levels.is_empty()) {
            return Err(Error::Config("generated learner corpus needs at least one L1 and one level".into()));
        }
        if c.learner_path.is_none() {
            for k in &self.keys {
                let l1_ok = k.l1.map_or(true, |l| c.l1s.contains(&l));
                let level_ok = k.level.map_or(true, |l| c.levels.contains(&l));
                if !(l1_ok && level_ok) {
                    return Err(Error::Config(format!("key {k} is not covered by the generated learner grid")));
                }
            }
        }
        for o in &c.overrides {
            if o.ops.is_empty() {
                return Err(Error::Config(format!("override for {} lists no operations", o.l1)));
            }
        }
        if c.train_size == 0 || c.test_size == 0 {
            return Err(Error::Config("train_size and test_size must be positive".into()));
        }
        if c.general_path.is_none() && (c.general_size == 0 || c.general_dev_size == 0) {
            return Err(Error::Config("general pool and its dev split must be non-empty".into()));
        }
        if c.max_units == 0 {
            return Err(Error::Config("max_units must be positive".into()));
        }
        self.model.to_model_config(crate::subword::EOS as usize + 1).validate()?;
        self.base.validate()?;
        self.fine_tune.validate()?;
        crate::eval::f_beta(0.0, 0.0, self.scoring.beta)?;
        Ok(())
    }

    /// Configured scenarios without repeats, in first-mention order.
    pub fn scenarios(&self) -> Vec<Scenario> {
        let mut seen = BTreeSet::new();
        self.scenarios.iter().copied().filter(|s| seen.insert(*s)).collect()
    }
}

fn merge_tables(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Score of one scenario on one test set for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: Scenario,
    pub key: SubsetKey,
    pub seed: u64,
    pub metrics: MetricReport,
    /// Errors per 100 words of the test set.
    pub error_rate: f64,
    /// Detokenized system output, one entry per test sentence.
    #[serde(skip)]
    pub hypotheses: Vec<Vec<String>>,
}

/// A held-out test set with gold edits.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSet {
    pub key: SubsetKey,
    pub seed: u64,
    pub sources: Vec<Vec<String>>,
    pub golds: Vec<Vec<Edit>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenarios: Vec<Scenario>,
    pub keys: Vec<SubsetKey>,
    pub seeds: Vec<u64>,
    pub beta: f64,
    pub merge_window: usize,
    pub rows: Vec<ReportRow>,
    #[serde(skip)]
    pub tests: Vec<TestSet>,
}

impl ScenarioReport {
    pub fn row(&self, scenario: Scenario, key: &SubsetKey, seed: u64) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.scenario == scenario && r.key == *key && r.seed == seed)
    }

    pub fn test_set(&self, key: &SubsetKey, seed: u64) -> Option<&TestSet> {
        self.tests.iter().find(|t| t.key == *key && t.seed == seed)
    }

    /// Every applicable (scenario, key, seed) cell, in report order.
    pub fn expected_cells(&self) -> Vec<(Scenario, SubsetKey, u64)> {
        let mut out = Vec::new();
        for &seed in &self.seeds {
            for key in &self.keys {
                for &s in &self.scenarios {
                    if s.applies_to(key) {
                        out.push((s, *key, seed));
                    }
                }
            }
        }
        out
    }

    /// Checks that every applicable cell appears exactly once and nothing else does.
    pub fn check_complete(&self) -> Result<()> {
        let expected = self.expected_cells();
        let mut missing = Vec::new();
        for (s, k, seed) in &expected {
            match self.rows.iter().filter(|r| r.scenario == *s && r.key == *k && r.seed == *seed).count() {
                1 => {}
                0 => missing.push(format!("{s}/{k}/seed {seed}")),
                n => return Err(Error::Validation(format!("{s}/{k}/seed {seed} appears {n} times"))),
            }
        }
        if !missing.is_empty() {
            return Err(Error::Validation(format!("missing report cells: {}", missing.join(", "))));
        }
        if self.rows.len() != expected.len() {
            return Err(Error::Validation(format!(
                "report has {} rows, expected {}",
                self.rows.len(),
                expected.len()
            )));
        }
        Ok(())
    }

    /// Mean F-beta of a scenario over the given keys (all keys when `None`)
    /// and every seed; per test set first, then unweighted.
    pub fn mean_f(&self, scenario: Scenario, keys: Option<&[SubsetKey]>) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.scenario == scenario && keys.map_or(true, |ks| ks.contains(&r.key)))
            .map(|r| r.metrics.f_beta)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    /// Mean F-beta over seeds for one cell.
    pub fn cell_mean(&self, scenario: Scenario, key: &SubsetKey) -> Option<f64> {
        self.mean_f(scenario, Some(std::slice::from_ref(key)))
    }

    /// `F(scenario) - F(Random)` in points for one (key, seed).
    pub fn delta_vs_random(&self, scenario: Scenario, key: &SubsetKey, seed: u64) -> Option<f64> {
        let s = self.row(scenario, key, seed)?;
        let r = self.row(Scenario::Random, key, seed)?;
        Some(100.0 * (s.metrics.f_beta - r.metrics.f_beta))
    }

    /// Mean over the report's keys and seeds, per scenario.
    pub fn averages(&self) -> Vec<(Scenario, f64)> {
        self.scenarios
            .iter()
            .filter_map(|&s| self.mean_f(s, None).map(|f| (s, f)))
            .collect()
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Reads `report.json` from a run directory together with the persisted
    /// gold and hypothesis files.
    pub fn load(out_dir: impl AsRef<Path>) -> Result<Self> {
        let dir = out_dir.as_ref();
        let mut report: ScenarioReport = serde_json::from_str(&fs::read_to_string(dir.join("report.json"))?)?;
        let mut tests = Vec::new();
        for &seed in &report.seeds {
            for key in &report.keys {
                let text = fs::read_to_string(run::gold_path(dir, seed, key))?;
                let golds = crate::corpus::parse_m2(&text)?;
                tests.push(TestSet {
                    key: *key,
                    seed,
                    sources: golds.iter().map(|g| g.source.clone()).collect(),
                    golds: golds.into_iter().map(|g| g.edits).collect(),
                });
            }
        }
        for row in &mut report.rows {
            let text = fs::read_to_string(run::hypothesis_path(dir, row.seed, row.scenario, &row.key))?;
            row.hypotheses = crate::eval::read_hypotheses(&text, true);
        }
        report.tests = tests;
        Ok(report)
    }
}
