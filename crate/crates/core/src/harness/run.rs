use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{ExperimentConfig, ReportRow, Scenario, ScenarioReport, TestSet};
use crate::corpus::{
    default_random_weights, error_rate, generate_corpus, level_multipliers, load_corpus, sample_random, save_corpus,
    split, write_m2, AnnotatedSentence, GeneratorProfile, GoldSentence, Level, OpWeights, SubsetKey, TemplateBank, L1,
};
use crate::error::{Error, Result};
use crate::eval::score_corpus;
use crate::nn::{decode_greedy_batch, load_checkpoint_expecting, save_checkpoint, ModelConfig, ModelParams};
use crate::subword::{learn_bpe, BpeModel};
use crate::train::{derive_seed, fine_tune_with, train_base_with, FreezePolicy, History, Pair};

type Params = ModelParams<f32>;

const DECODE_BATCH: usize = 64;

/// The data a fine-tuned model was adapted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TrainingSubset {
    Random,
    Key(SubsetKey),
}

impl TrainingSubset {
    /// `None` for the unadapted model.
    pub fn for_scenario(scenario: Scenario, key: &SubsetKey) -> Option<TrainingSubset> {
        match scenario {
            Scenario::Unadapted => None,
            Scenario::Random => Some(TrainingSubset::Random),
            Scenario::Level => key.level.map(|l| TrainingSubset::Key(SubsetKey::level(l))),
            Scenario::L1 => key.l1.map(|l| TrainingSubset::Key(SubsetKey::l1(l))),
            Scenario::L1Level => match (key.l1, key.level) {
                (Some(a), Some(b)) => Some(TrainingSubset::Key(SubsetKey::l1_level(a, b))),
                _ => None,
            },
        }
    }

    fn name(&self) -> String {
        match self {
            TrainingSubset::Random => "random".into(),
            TrainingSubset::Key(k) => k.to_string(),
        }
    }
}

pub(crate) fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

pub(crate) fn gold_path(out: &Path, seed: u64, key: &SubsetKey) -> PathBuf {
    seed_dir(out, seed).join("gold").join(format!("{key}.m2"))
}

pub(crate) fn hypothesis_path(out: &Path, seed: u64, scenario: Scenario, key: &SubsetKey) -> PathBuf {
    seed_dir(out, seed).join("hyp").join(format!("{}-{key}.txt", scenario.as_str()))
}

fn content_hash(value: &impl Serialize) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(value)?)))
}

/// Stable 64-bit stream index for a name.
fn name_stream(name: &str) -> u64 {
    let d = Sha256::digest(name.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

fn stage<T>(name: impl Into<String>, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

/// Per-group held-out sentences and the remaining training pool.
struct Partition {
    test: BTreeMap<(L1, Level), Vec<AnnotatedSentence>>,
    dev: BTreeMap<(L1, Level), Vec<AnnotatedSentence>>,
    pool: Vec<AnnotatedSentence>,
}

impl Partition {
    fn new(learner: &[AnnotatedSentence], test_n: usize, dev_n: usize, seed: u64) -> Result<Self> {
        let mut groups: BTreeMap<(L1, Level), Vec<AnnotatedSentence>> = BTreeMap::new();
        for s in learner {
            groups.entry((s.l1, s.level)).or_default().push(s.clone());
        }
        let mut p = Partition {
            test: BTreeMap::new(),
            dev: BTreeMap::new(),
            pool: Vec::new(),
        };
        for (g, items) in groups {
            if items.len() < test_n + dev_n {
                return Err(Error::SubsetTooSmall {
                    key: SubsetKey::l1_level(g.0, g.1).to_string(),
                    actual: items.len(),
                    required: test_n + dev_n,
                });
            }
            let rest = items.len() - test_n - dev_n;
            let stream = ((g.0 as u64) << 8) | g.1 as u64;
            let (train, dev, test) = split(&items, rest, dev_n, test_n, derive_seed(seed, stream))?;
            p.test.insert(g, test);
            p.dev.insert(g, dev);
            p.pool.extend(train);
        }
        Ok(p)
    }

    /// Held-out sentences of the groups matching `key`, subsampled to `n`
    /// when the key spans several groups.
    fn held_out(
        map: &BTreeMap<(L1, Level), Vec<AnnotatedSentence>>,
        key: &SubsetKey,
        n: usize,
        seed: u64,
    ) -> Result<Vec<AnnotatedSentence>> {
        let all: Vec<AnnotatedSentence> = map
            .iter()
            .filter(|((l1, level), _)| key.l1.map_or(true, |k| k == *l1) && key.level.map_or(true, |k| k == *level))
            .flat_map(|(_, v)| v.iter().cloned())
            .collect();
        if all.len() < n {
            return Err(Error::SubsetTooSmall {
                key: key.to_string(),
                actual: all.len(),
                required: n,
            });
        }
        if all.len() == n {
            return Ok(all);
        }
        Ok(split(&all, 0, 0, n, seed)?.2)
    }

    fn training_set(&self, subset: &TrainingSubset, n: usize, seed: u64) -> Result<Vec<AnnotatedSentence>> {
        match subset {
            TrainingSubset::Random => {
                let idx = sample_random(&self.pool, n, &default_random_weights(), seed)?;
                Ok(idx.into_iter().map(|i| self.pool[i].clone()).collect())
            }
            TrainingSubset::Key(key) => {
                let matching: Vec<AnnotatedSentence> = self.pool.iter().filter(|s| s.matches(key)).cloned().collect();
                if matching.len() < n {
                    return Err(Error::SubsetTooSmall {
                        key: key.to_string(),
                        actual: matching.len(),
                        required: n,
                    });
                }
                Ok(split(&matching, n, 0, 0, seed)?.0)
            }
        }
    }
}

struct SeedRun<'a> {
    config: &'a ExperimentConfig,
    seed: u64,
    dir: PathBuf,
    cache_dir: PathBuf,
    bpe: BpeModel,
    model_config: ModelConfig,
    /// Hash of the BPE model, the subword cap and the general pool.
    data_hash: String,
}

impl SeedRun<'_> {
    fn encode(&self, sentences: &[AnnotatedSentence]) -> Vec<Pair> {
        let max = self.config.corpus.max_units;
        sentences
            .iter()
            .map(|s| Pair {
                src: self.bpe.encode(&s.source, max),
                tgt: self.bpe.encode(&s.target, max),
            })
            .collect()
    }

    /// Loads a cached checkpoint or trains and stores one. The training log
    /// is copied into the seed directory under `log_name`.
    fn cached(
        &self,
        hash: &str,
        log_name: &str,
        train: impl FnOnce() -> Result<(Params, History)>,
    ) -> Result<Params> {
        let ckpt = self.cache_dir.join(format!("{hash}.ckpt"));
        let log = self.cache_dir.join(format!("{hash}.jsonl"));
        let params = if ckpt.exists() && log.exists() {
            log::info!("seed {}: {log_name} served from cache", self.seed);
            load_checkpoint_expecting::<f32>(&ckpt, &self.model_config)?
        } else {
            let (params, history) = train()?;
            let mut buf = Vec::new();
            history.write_jsonl(&mut buf)?;
            write_file(&log, &buf)?;
            save_checkpoint(&params, &ckpt)?;
            params
        };
        let target = self.dir.join("logs").join(format!("{log_name}.jsonl"));
        write_file(&target, fs::read(&log)?)?;
        Ok(params)
    }

    fn base_model(&self, general: &[AnnotatedSentence], general_dev: &[AnnotatedSentence]) -> Result<(Params, String)> {
        let mut tc = self.config.base.clone();
        tc.seed = derive_seed(self.seed, 0xBA5E);
        let hash = content_hash(&("base", &self.data_hash, &self.model_config, &tc))?;
        let params = self.cached(&hash, "base", || {
            let (train, dev) = (self.encode(general), self.encode(general_dev));
            train_base_with::<f32>(&train, &dev, &self.model_config, &tc, |r| {
                log::info!("seed {} base epoch {}: train {:.4} dev {:?}", self.seed, r.epoch, r.train_loss, r.dev_loss)
            })
        })?;
        save_checkpoint(&params, self.dir.join("checkpoints").join("base.ckpt"))?;
        Ok((params, hash))
    }

    fn adapted_model(
        &self,
        base: &Params,
        base_hash: &str,
        subset: &TrainingSubset,
        part: &Partition,
    ) -> Result<Params> {
        let c = &self.config.corpus;
        let stream = derive_seed(self.seed, name_stream(&subset.name()));
        let train = part.training_set(subset, c.train_size, stream)?;
        let dev = match subset {
            TrainingSubset::Key(key) if c.dev_size > 0 => Partition::held_out(&part.dev, key, c.dev_size, stream)?,
            _ => Vec::new(),
        };
        let mut tc = self.config.fine_tune.clone();
        tc.seed = derive_seed(stream, 0xF1E);
        let hash = content_hash(&("fine-tune", base_hash, &train, &dev, &tc))?;
        let name = format!("fine-tune-{}", subset.name());
        let params = self.cached(&hash, &name, || {
            let (train, dev) = (self.encode(&train), self.encode(&dev));
            let dev = if dev.is_empty() { None } else { Some(dev.as_slice()) };
            fine_tune_with(base, &train, dev, &tc, &FreezePolicy::adaptation(), |_| {})
        })?;
        save_checkpoint(&params, self.dir.join("checkpoints").join(format!("{name}.ckpt")))?;
        Ok(params)
    }

    fn correct(&self, params: &Params, sources: &[Vec<String>]) -> Result<Vec<Vec<String>>> {
        let mut out = Vec::with_capacity(sources.len());
        for chunk in sources.chunks(DECODE_BATCH) {
            let ids: Vec<Vec<u32>> = chunk.iter().map(|s| self.bpe.encode(s, self.config.corpus.max_units)).collect();
            for hyp in decode_greedy_batch(params, &ids, self.model_config.max_decode_len)? {
                out.push(self.bpe.decode(&hyp)?);
            }
        }
        Ok(out)
    }
}

/// The learner corpus for `seed`: loaded from `learner_path` when set,
/// generated otherwise.
pub fn learner_corpus(config: &ExperimentConfig, seed: u64) -> Result<Vec<AnnotatedSentence>> {
    match &config.corpus.learner_path {
        Some(p) => load_corpus(p),
        None => generated_learner(config, seed),
    }
}

/// The general pool for `seed`, development sentences last.
pub fn general_corpus(config: &ExperimentConfig, seed: u64) -> Result<Vec<AnnotatedSentence>> {
    match &config.corpus.general_path {
        Some(p) => load_corpus(p),
        None => generated_general(config, seed),
    }
}

/// Subword model learned on both sides of the general pool.
pub fn learn_general_bpe(general: &[AnnotatedSentence], merges: usize) -> Result<BpeModel> {
    let tokens: Vec<&str> = general
        .iter()
        .flat_map(|s| s.source.iter().chain(&s.target))
        .map(String::as_str)
        .collect();
    learn_bpe(&tokens, merges)
}

fn generated_learner(config: &ExperimentConfig, seed: u64) -> Result<Vec<AnnotatedSentence>> {
    let c = &config.corpus;
    let bank = TemplateBank::from_grammar(c.bank_size, derive_seed(seed, 11));
    let mut profile = GeneratorProfile::learner(&c.l1s, &c.levels, bank, derive_seed(seed, 12));
    for o in &c.overrides {
        for e in profile.entries.iter_mut().filter(|e| e.l1 == o.l1 && o.level.map_or(true, |l| l == e.level)) {
            e.weights = OpWeights::only(&o.ops).scaled_by(&level_multipliers(e.level));
        }
    }
    generate_corpus(&profile, c.sentences_per_group * profile.entries.len())
}

fn generated_general(config: &ExperimentConfig, seed: u64) -> Result<Vec<AnnotatedSentence>> {
    let c = &config.corpus;
    let bank = TemplateBank::from_grammar(c.bank_size, derive_seed(seed, 21));
    let profile = GeneratorProfile::general(c.general_error_rate, bank, derive_seed(seed, 22));
    generate_corpus(&profile, c.general_size + c.general_dev_size)
}

/// Runs every configured scenario for every seed and writes checkpoints,
/// logs, gold and hypothesis files, `report.json` and the result tables
/// under the output directory. Trained models are cached by a hash of the
/// settings that determine them, so repeated runs retrain nothing.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ScenarioReport> {
    stage("config", config.validate())?;
    let out = &config.out_dir;
    fs::create_dir_all(out.join("cache"))?;
    write_file(&out.join("config.toml"), config.to_toml()?)?;
    let mut report = ScenarioReport {
        scenarios: config.scenarios(),
        keys: config.keys.clone(),
        seeds: config.seeds.clone(),
        beta: config.scoring.beta,
        merge_window: config.scoring.merge_window,
        rows: Vec::new(),
        tests: Vec::new(),
    };
    let results: Vec<Result<(Vec<ReportRow>, Vec<TestSet>)>> =
        config.seeds.par_iter().map(|&seed| run_seed(config, seed, &report.scenarios)).collect();
    for r in results {
        let (rows, tests) = r?;
        report.rows.extend(rows);
        report.tests.extend(tests);
    }
    stage("report", report.check_complete())?;
    report.save_json(out.join("report.json"))?;
    stage("tables", super::emit_tables(&report, &out.join("tables"), super::TableFormat::Both))?;
    Ok(report)
}

fn run_seed(config: &ExperimentConfig, seed: u64, scenarios: &[Scenario]) -> Result<(Vec<ReportRow>, Vec<TestSet>)> {
    let c = &config.corpus;
    let out = &config.out_dir;
    let dir = seed_dir(out, seed);
    fs::create_dir_all(dir.join("checkpoints"))?;
    let ctx = |what: &str| format!("{what} (seed {seed})");

    let (learner, mut general) = stage(ctx("corpus"), (|| {
        Ok((learner_corpus(config, seed)?, general_corpus(config, seed)?))
    })())?;
    if c.learner_path.is_none() {
        save_corpus(&learner, dir.join("learner.jsonl"))?;
    }
    if c.general_path.is_none() {
        save_corpus(&general, dir.join("general.jsonl"))?;
    }
    if general.len() <= c.general_dev_size {
        return Err(Error::InsufficientData {
            needed: c.general_dev_size + 1,
            available: general.len(),
            shortfall: c.general_dev_size + 1 - general.len(),
        }
        .in_stage(ctx("corpus")));
    }
    let general_dev = general.split_off(general.len() - c.general_dev_size);

    let bpe = stage(ctx("learn-bpe"), learn_general_bpe(&general, c.bpe_merges))?;
    bpe.save(dir.join("bpe.txt"))?;
    let run_bpe_text = bpe.to_text();

    let part = stage(ctx("split"), Partition::new(&learner, c.test_size, c.dev_size, derive_seed(seed, 31)))?;

    let run = SeedRun {
        config,
        seed,
        cache_dir: out.join("cache"),
        dir,
        model_config: config.model.to_model_config(bpe.vocab_size()),
        bpe,
        data_hash: content_hash(&(&run_bpe_text, c.max_units, &general, &general_dev))?,
    };
    let (base, base_hash) = stage(ctx("train-base"), run.base_model(&general, &general_dev))?;

    let mut models: HashMap<TrainingSubset, Params> = HashMap::new();
    let (mut rows, mut tests) = (Vec::new(), Vec::new());
    for key in &config.keys {
        let test = stage(
            ctx(&format!("test split {key}")),
            Partition::held_out(&part.test, key, c.test_size, derive_seed(seed, 41)),
        )?;
        let golds: Vec<GoldSentence> = test.iter().map(GoldSentence::from).collect();
        let mut buf = Vec::new();
        write_m2(&golds, &mut buf)?;
        write_file(&gold_path(out, seed, key), &buf)?;
        let sources: Vec<Vec<String>> = test.iter().map(|s| s.source.clone()).collect();
        let gold_edits: Vec<_> = test.iter().map(|s| s.edits.clone()).collect();
        let rate = stage(ctx(&format!("statistics {key}")), error_rate(&test))?;

        for &scenario in scenarios {
            if !scenario.applies_to(key) {
                continue;
            }
            let params = match TrainingSubset::for_scenario(scenario, key) {
                None => &base,
                Some(subset) => {
                    if !models.contains_key(&subset) {
                        let m = stage(
                            ctx(&format!("fine-tune {}", subset.name())),
                            run.adapted_model(&base, &base_hash, &subset, &part),
                        )?;
                        models.insert(subset, m);
                    }
                    &models[&subset]
                }
            };
            let label = ctx(&format!("score {scenario} on {key}"));
            let hyps = stage(label.clone(), run.correct(params, &sources))?;
            let text: String = hyps.iter().map(|h| h.join(" ") + "\n").collect();
            write_file(&hypothesis_path(out, seed, scenario, key), text)?;
            let metrics = stage(
                label,
                score_corpus(&sources, &hyps, &gold_edits, config.scoring.beta, config.scoring.merge_window),
            )?;
            log::info!("seed {seed} {scenario} on {key}: F = {:.1}", metrics.f_beta * 100.0);
            rows.push(ReportRow {
                scenario,
                key: *key,
                seed,
                metrics,
                error_rate: rate,
                hypotheses: hyps,
            });
        }
        tests.push(TestSet {
            key: *key,
            seed,
            sources,
            golds: gold_edits,
        });
    }
    Ok((rows, tests))
}
