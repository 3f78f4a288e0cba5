use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gec_adapt::corpus::{load_corpus, parse_m2, sample_random, save_corpus, select_subset, split, default_random_weights, SubsetKey};
use gec_adapt::eval::{per_type_report, read_hypotheses, score_corpus, type_table};
use gec_adapt::harness::{
    emit_error_type_table, emit_tables, general_corpus, learn_general_bpe, learner_corpus, run_experiment, ExperimentConfig,
    Preset, Scenario, ScenarioReport, TableFormat,
};
use gec_adapt::nn::{decode_greedy_batch, load_checkpoint, save_checkpoint};
use gec_adapt::subword::BpeModel;
use gec_adapt::train::{derive_seed, fine_tune_with, train_base_with, FreezePolicy, History, Pair};
use gec_adapt::{Error, Params32, Result};

#[derive(Parser)]
#[command(name = "gec-adapt", version, about = "Adapt a neural grammatical error corrector to learner groups")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file merged over the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Preset supplying defaults for everything the config leaves out.
    #[arg(long, global = true, default_value = "desk")]
    preset: Preset,
    /// Seed for the single-stage commands.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the learner corpus and the general pool.
    Generate,
    /// Learn the subword model on the general pool.
    LearnBpe {
        /// Corpus file (default: the generated general pool).
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        merges: Option<usize>,
    },
    /// Train the general model.
    TrainBase {
        /// General pool; its last `general_dev_size` sentences are the dev set.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        bpe: Option<PathBuf>,
    },
    /// Adapt the general model to a learner subset.
    FineTune {
        /// Subset key such as `ES-B1`, `C1`, `DE`, or `random`.
        #[arg(long)]
        subset: String,
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long)]
        learner: Option<PathBuf>,
        #[arg(long)]
        bpe: Option<PathBuf>,
    },
    /// Score hypotheses (or a model's corrections) against M2 gold.
    Score {
        #[arg(long)]
        gold: PathBuf,
        /// One corrected sentence per line.
        #[arg(long, conflicts_with = "checkpoint")]
        hyp: Option<PathBuf>,
        /// Correct the gold sources with this model instead.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        bpe: Option<PathBuf>,
        /// Per-type deltas against this baseline hypothesis file.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Run every configured scenario, key and seed.
    Experiment,
    /// Rebuild the tables from a finished experiment directory.
    Report {
        /// Also print per-type deltas of this scenario against Random.
        #[arg(long)]
        error_types: Option<Scenario>,
    },
}

struct Ctx {
    config: ExperimentConfig,
    seed: u64,
}

impl Ctx {
    fn new(common: &Common) -> Result<Self> {
        let mut config = match &common.config {
            Some(p) => ExperimentConfig::load(p, common.preset)?,
            None => ExperimentConfig::from_toml("", common.preset)?,
        };
        if let Some(d) = &common.out_dir {
            config.out_dir = d.clone();
        }
        Ok(Ctx { config, seed: common.seed })
    }

    fn out(&self) -> &Path {
        &self.config.out_dir
    }

    fn path(&self, given: &Option<PathBuf>, default: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.out().join(default))
    }

    fn bpe(&self, given: &Option<PathBuf>) -> Result<BpeModel> {
        BpeModel::load(self.path(given, "bpe.txt"))
    }

    fn encode(&self, bpe: &BpeModel, sentences: &[gec_adapt::corpus::AnnotatedSentence]) -> Vec<Pair> {
        let max = self.config.corpus.max_units;
        sentences
            .iter()
            .map(|s| Pair {
                src: bpe.encode(&s.source, max),
                tgt: bpe.encode(&s.target, max),
            })
            .collect()
    }

    fn save_model(&self, params: &Params32, history: &History, name: &str) -> Result<()> {
        let ckpt = self.out().join("checkpoints").join(format!("{name}.ckpt"));
        let log = self.out().join("logs").join(format!("{name}.jsonl"));
        for p in [&ckpt, &log] {
            fs::create_dir_all(p.parent().expect("joined path has a parent"))?;
        }
        save_checkpoint(params, &ckpt)?;
        history.write_jsonl(fs::File::create(&log)?)?;
        println!("wrote {} and {}", ckpt.display(), log.display());
        Ok(())
    }
}

fn generate(ctx: &Ctx) -> Result<()> {
    let dir = ctx.out().join("corpus");
    let learner = learner_corpus(&ctx.config, ctx.seed)?;
    let general = general_corpus(&ctx.config, ctx.seed)?;
    fs::create_dir_all(&dir)?;
    save_corpus(&learner, dir.join("learner.jsonl"))?;
    save_corpus(&general, dir.join("general.jsonl"))?;
    println!("{} learner and {} general sentences in {}", learner.len(), general.len(), dir.display());
    Ok(())
}

fn learn(ctx: &Ctx, input: &Option<PathBuf>, merges: Option<usize>) -> Result<()> {
    let general = load_corpus(ctx.path(input, "corpus/general.jsonl"))?;
    let bpe = learn_general_bpe(&general, merges.unwrap_or(ctx.config.corpus.bpe_merges))?;
    fs::create_dir_all(ctx.out())?;
    let path = ctx.out().join("bpe.txt");
    bpe.save(&path)?;
    println!("{} merges, vocabulary {} -> {}", bpe.merges().len(), bpe.vocab_size(), path.display());
    Ok(())
}

fn train_general(ctx: &Ctx, corpus: &Option<PathBuf>, bpe: &Option<PathBuf>) -> Result<()> {
    let mut general = load_corpus(ctx.path(corpus, "corpus/general.jsonl"))?;
    let dev_n = ctx.config.corpus.general_dev_size;
    if general.len() <= dev_n {
        return Err(Error::InsufficientData {
            needed: dev_n + 1,
            available: general.len(),
            shortfall: dev_n + 1 - general.len(),
        });
    }
    let dev = general.split_off(general.len() - dev_n);
    let bpe = ctx.bpe(bpe)?;
    let model = ctx.config.model.to_model_config(bpe.vocab_size());
    let mut tc = ctx.config.base.clone();
    tc.seed = derive_seed(ctx.seed, 0xBA5E);
    let (train, dev) = (ctx.encode(&bpe, &general), ctx.encode(&bpe, &dev));
    let (params, history) = train_base_with::<f32>(&train, &dev, &model, &tc, |r| {
        println!("epoch {:>2}  lr {:.6}  train {:.4}  dev {:.4}", r.epoch, r.lr, r.train_loss, r.dev_loss.unwrap_or(f64::NAN))
    })?;
    ctx.save_model(&params, &history, "base")
}

fn adapt(ctx: &Ctx, subset: &str, base: &Option<PathBuf>, learner: &Option<PathBuf>, bpe: &Option<PathBuf>) -> Result<()> {
    let learner = load_corpus(ctx.path(learner, "corpus/learner.jsonl"))?;
    let n = ctx.config.corpus.train_size;
    let seed = derive_seed(ctx.seed, 0xF1E);
    let train = if subset.eq_ignore_ascii_case("random") {
        sample_random(&learner, n, &default_random_weights(), seed)?
            .into_iter()
            .map(|i| learner[i].clone())
            .collect()
    } else {
        let key: SubsetKey = subset.parse()?;
        split(&select_subset(&learner, &key, n)?, n, 0, 0, seed)?.0
    };
    let bpe = ctx.bpe(bpe)?;
    let params: Params32 = load_checkpoint(ctx.path(base, "checkpoints/base.ckpt"))?;
    let mut tc = ctx.config.fine_tune.clone();
    tc.seed = seed;
    let (params, history) = fine_tune_with(&params, &ctx.encode(&bpe, &train), None, &tc, &FreezePolicy::adaptation(), |r| {
        println!("epoch {:>2}  lr {:.6}  train {:.4}", r.epoch, r.lr, r.train_loss)
    })?;
    ctx.save_model(&params, &history, &format!("fine-tune-{}", subset.to_ascii_lowercase()))
}

fn score(
    ctx: &Ctx,
    gold: &Path,
    hyp: &Option<PathBuf>,
    checkpoint: &Option<PathBuf>,
    bpe: &Option<PathBuf>,
    baseline: &Option<PathBuf>,
) -> Result<()> {
    let gold = parse_m2(&fs::read_to_string(gold)?)?;
    let sources: Vec<Vec<String>> = gold.iter().map(|g| g.source.clone()).collect();
    let edits: Vec<_> = gold.iter().map(|g| g.edits.clone()).collect();
    let hyps = match (hyp, checkpoint) {
        (Some(h), _) => read_hypotheses(&fs::read_to_string(h)?, true),
        (None, Some(c)) => {
            let bpe = ctx.bpe(bpe)?;
            let params: Params32 = load_checkpoint(c)?;
            let max = ctx.config.corpus.max_units;
            let mut out = Vec::with_capacity(sources.len());
            for chunk in sources.chunks(64) {
                let ids: Vec<Vec<u32>> = chunk.iter().map(|s| bpe.encode(s, max)).collect();
                for h in decode_greedy_batch(&params, &ids, ctx.config.model.max_decode_len)? {
                    out.push(bpe.decode(&h)?);
                }
            }
            out
        }
        (None, None) => return Err(Error::Config("score needs --hyp or --checkpoint".into())),
    };
    let (beta, window) = (ctx.config.scoring.beta, ctx.config.scoring.merge_window);
    let report = score_corpus(&sources, &hyps, &edits, beta, window)?;
    println!("{}", report.to_table());
    if let Some(b) = baseline {
        let base = read_hypotheses(&fs::read_to_string(b)?, true);
        println!("{}", type_table(&per_type_report(&sources, &hyps, &base, &edits, beta, window)?));
    }
    Ok(())
}

fn print_tables(report: &ScenarioReport, out: &Path) -> Result<()> {
    let dir = out.join("tables");
    emit_tables(report, &dir, TableFormat::Both)?;
    for name in ["level", "l1", "l1_level"] {
        if let Ok(md) = fs::read_to_string(dir.join(format!("{name}.md"))) {
            println!("{md}");
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx::new(&cli.common)?;
    match &cli.command {
        Command::Generate => generate(&ctx),
        Command::LearnBpe { input, merges } => learn(&ctx, input, *merges),
        Command::TrainBase { corpus, bpe } => train_general(&ctx, corpus, bpe),
        Command::FineTune { subset, base, learner, bpe } => adapt(&ctx, subset, base, learner, bpe),
        Command::Score {
            gold,
            hyp,
            checkpoint,
            bpe,
            baseline,
        } => score(&ctx, gold, hyp, checkpoint, bpe, baseline),
        Command::Experiment => {
            let report = run_experiment(&ctx.config)?;
            print_tables(&report, ctx.out())
        }
        Command::Report { error_types } => {
            let report = ScenarioReport::load(ctx.out())?;
            print_tables(&report, ctx.out())?;
            if let Some(s) = error_types {
                println!("{}", emit_error_type_table(&report, *s)?.to_markdown());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
