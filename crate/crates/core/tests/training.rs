use otmatch_core::data::gen_synthetic;
use otmatch_core::eval::{
    encode_corpus, evaluate, evaluate_scores, score_corpus, score_encoded, EncodedCorpus, RetrievalDirection,
};
use otmatch_core::ot_matcher::emd_similarity;
use otmatch_core::trainer::{train, Stage, TrainConfig};
use otmatch_core::{Matcher, Matrix, Model, PartSource, ShapeEncoderConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_model() -> ShapeEncoderConfig {
    ShapeEncoderConfig {
        d1: 32,
        d2: 64,
        d3: 64,
        d_mid: 64,
        d_color: 16,
        embed_dim: 32,
        ..ShapeEncoderConfig::default()
    }
}

#[test]
fn joint_training_halves_the_matching_loss() {
    let corpus = gen_synthetic(11, 16, 4, 128).unwrap();
    let cfg = TrainConfig {
        stage1_epochs: 10,
        stage2_epochs: 30,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let out = train(&corpus, &small_model(), &cfg, 11, None).unwrap();
    let joint: Vec<f64> = out
        .metrics
        .iter()
        .filter(|m| m.stage == Stage::Joint)
        .map(|m| m.matching)
        .collect();
    assert_eq!(joint.len(), 30);
    // mean of the last three epochs smooths batch-to-batch noise
    let (first, last) = (joint[0], joint[27..].iter().sum::<f64>() / 3.0);
    assert!(last <= 0.5 * first, "matching loss {first} -> {last}: {joint:?}");
}

#[test]
fn oracle_embeddings_retrieve_perfectly() {
    let corpus = gen_synthetic(2, 8, 4, 16).unwrap();
    let one_hot = |i: usize, rows: usize| {
        let mut m = Matrix::zeros(rows, 8);
        for r in 0..rows {
            m.set(r, i, 1.0);
        }
        m
    };
    let t2s = corpus.text_to_shape();
    let enc = EncodedCorpus {
        parts: (0..8).map(|i| one_hot(i, 2)).collect(),
        words: t2s.iter().map(|&s| one_hot(s, 3)).collect(),
    };
    let s2t = score_encoded(&enc, Matcher::Emd, &Default::default()).unwrap();
    let report = evaluate_scores(&s2t, &corpus, &[1, 5]).unwrap();
    for d in [RetrievalDirection::S2T, RetrievalDirection::T2S] {
        assert_eq!(report.get(d, 1).unwrap().rr, 100.0);
        assert!((report.get(d, 1).unwrap().ndcg - 1.0).abs() < 1e-12);
    }
}

#[test]
fn untrained_model_is_near_chance() {
    let corpus = gen_synthetic(7, 64, 4, 64).unwrap();
    let cfg = TrainConfig::default().scoring();
    let mut total = 0.0;
    let seeds = 5;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Model::new(
            ShapeEncoderConfig {
                classes: 4,
                ..small_model()
            },
            corpus.vocab.clone(),
            &mut rng,
        )
        .unwrap();
        let report = evaluate(&model, &corpus, &[1], &cfg).unwrap();
        total += report.get(RetrievalDirection::T2S, 1).unwrap().rr;
    }
    let mean = total / seeds as f64;
    // chance is 100/64 ~ 1.6
    assert!(mean < 8.0, "untrained T2S RR@1 averages {mean}");
}

#[test]
fn s2t_is_transpose_of_t2s_and_in_range() {
    let corpus = gen_synthetic(5, 4, 3, 32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = Model::new(
        ShapeEncoderConfig {
            classes: 3,
            ..small_model()
        },
        corpus.vocab.clone(),
        &mut rng,
    )
    .unwrap();
    let cfg = TrainConfig::default().scoring();
    let s2t = score_corpus(&model, &corpus, RetrievalDirection::S2T, &cfg).unwrap();
    let t2s = score_corpus(&model, &corpus, RetrievalDirection::T2S, &cfg).unwrap();
    assert_eq!(s2t.transpose(), t2s);
    assert!(s2t.data().iter().all(|s| (-2.0..=0.0).contains(s)));

    let enc = encode_corpus(&model, &corpus, cfg.min_part_fraction).unwrap();
    let (parts, _) = model
        .encode_shape(&corpus.shapes[1], PartSource::Predicted, cfg.min_part_fraction)
        .unwrap();
    assert_eq!(parts, enc.parts[1]);
    let direct = emd_similarity(&enc.parts[1], &enc.words[2], &cfg.sinkhorn).unwrap().similarity;
    assert_eq!(s2t.get(1, 2), direct);
}
