use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gec_adapt::corpus::{select_subset, split, AnnotatedSentence, Level, SubsetKey, L1};
use gec_adapt::harness::{general_corpus, learn_general_bpe, learner_corpus, ExperimentConfig};
use gec_adapt::nn::{init_params, ModelConfig};
use gec_adapt::subword::BpeModel;
use gec_adapt::train::{derive_seed, evaluate_loss, fine_tune, train_base, FreezePolicy, Pair, TrainConfig};

fn copy_pairs(n: usize, vocab: u32, rng: &mut ChaCha8Rng) -> Vec<Pair> {
    (0..n)
        .map(|_| {
            let src: Vec<u32> = (0..rng.gen_range(2..=8)).map(|_| rng.gen_range(4..vocab)).collect();
            Pair { tgt: src.clone(), src }
        })
        .collect()
}

#[test]
fn desk_model_learns_to_copy() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let vocab = 20;
    let train = copy_pairs(1000, vocab, &mut rng);
    let dev = copy_pairs(100, vocab, &mut rng);
    let model = ModelConfig::desk(vocab as usize);
    let tc = TrainConfig {
        epochs: 15,
        early_stop_patience: None,
        seed: 9,
        ..TrainConfig::desk_base()
    };
    let initial = init_params::<f32>(&model, derive_seed(tc.seed, 0xB45E)).unwrap();
    let initial_loss = evaluate_loss(&initial, &dev, tc.batch_size).unwrap();
    let (_, history) = train_base::<f32>(&train, &dev, &model, &tc).unwrap();
    let last = history.epochs.last().unwrap().dev_loss.unwrap();
    assert_eq!(history.epochs.len(), 15);
    assert!(last < 0.1 * initial_loss, "dev loss {initial_loss:.4} -> {last:.4}");
}

#[test]
fn zero_patience_keeps_the_first_epoch_when_dev_loss_rises() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let train = copy_pairs(40, 12, &mut rng);
    // Dev targets unrelated to the sources: fitting the training data
    // drives this loss up after the first epoch.
    let dev: Vec<Pair> = copy_pairs(20, 12, &mut rng)
        .into_iter()
        .map(|p| Pair { tgt: p.tgt.iter().map(|t| 15 - t).collect(), src: p.src })
        .collect();
    let mut model = ModelConfig::desk(12);
    model.embed_dim = 16;
    model.hidden_dim = 16;
    let tc = TrainConfig {
        epochs: 10,
        batch_size: 4,
        early_stop_patience: Some(0),
        ..TrainConfig::desk_base()
    };
    let (_, history) = train_base::<f32>(&train, &dev, &model, &tc).unwrap();
    let d: Vec<f64> = history.epochs.iter().map(|e| e.dev_loss.unwrap()).collect();
    let first_rise = d.windows(2).position(|w| w[1] >= w[0]).expect("dev loss rises at some epoch");
    assert_eq!(history.epochs.len(), first_rise + 2);
    assert_eq!(history.best_epoch, first_rise + 1);
}

fn encode(bpe: &BpeModel, s: &[AnnotatedSentence], max: usize) -> Vec<Pair> {
    s.iter()
        .map(|s| Pair {
            src: bpe.encode(&s.source, max),
            tgt: bpe.encode(&s.target, max),
        })
        .collect()
}

#[test]
fn fine_tuning_on_a_slice_lowers_its_dev_loss() {
    let mut config = ExperimentConfig::desk();
    config.corpus.l1s = vec![L1::Spanish, L1::German];
    config.corpus.levels = vec![Level::A2, Level::B1];
    config.corpus.sentences_per_group = 400;
    config.corpus.general_size = 3000;
    config.corpus.general_dev_size = 200;
    config.corpus.bank_size = 2000;
    let key = SubsetKey::l1_level(L1::Spanish, Level::A2);
    let max = config.corpus.max_units;
    let mut improved = Vec::new();
    for seed in 1..=5u64 {
        let mut general = general_corpus(&config, seed).unwrap();
        let general_dev = general.split_off(general.len() - config.corpus.general_dev_size);
        let bpe = learn_general_bpe(&general, config.corpus.bpe_merges).unwrap();
        let model = config.model.to_model_config(bpe.vocab_size());
        let base_tc = TrainConfig {
            epochs: 3,
            seed: derive_seed(seed, 1),
            ..config.base.clone()
        };
        let (base, _) = train_base::<f32>(&encode(&bpe, &general, max), &encode(&bpe, &general_dev, max), &model, &base_tc).unwrap();

        let learner = learner_corpus(&config, seed).unwrap();
        let slice = select_subset(&learner, &key, 300).unwrap();
        let (train, dev, _) = split(&slice, 250, 50, 0, derive_seed(seed, 2)).unwrap();
        let (train, dev) = (encode(&bpe, &train, max), encode(&bpe, &dev, max));
        let ft_tc = TrainConfig {
            seed: derive_seed(seed, 3),
            ..config.fine_tune.clone()
        };
        let tuned = fine_tune(&base, &train, &ft_tc, &FreezePolicy::adaptation()).unwrap();
        let before = evaluate_loss(&base, &dev, 32).unwrap();
        let after = evaluate_loss(&tuned, &dev, 32).unwrap();
        improved.push((seed, before, after, after < before));
    }
    let wins = improved.iter().filter(|r| r.3).count();
    assert!(wins >= 4, "dev loss before/after per seed: {improved:?}");
}
