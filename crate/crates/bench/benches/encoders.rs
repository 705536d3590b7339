use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use otmatch_bench::corpus;
use otmatch_core::diffcore::Tape;
use otmatch_core::{Model, PartSource, ShapeEncoderConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bench_encoders(c: &mut Criterion) {
    let corpus = corpus(2, 256);
    let cfg = ShapeEncoderConfig {
        classes: corpus.classes,
        ..ShapeEncoderConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = Model::new(cfg, corpus.vocab.clone(), &mut rng).unwrap();
    let cloud = &corpus.shapes[0];
    let tokens = &corpus.texts[0].tokens;

    c.bench_function("shape_encoder/forward/256pts", |b| {
        b.iter(|| model.encode_shape(black_box(cloud), PartSource::Predicted, 0.01).unwrap())
    });
    c.bench_function("shape_encoder/forward_backward/256pts", |b| {
        b.iter(|| {
            let mut store = model.store.clone();
            let mut tape = Tape::new();
            let f = model.shape.backbone_forward(&mut tape, &store, cloud).unwrap();
            let seg = model.shape.segment(&mut tape, &store, &f).unwrap();
            let loss = tape
                .softmax_cross_entropy(seg.logits, cloud.labels.as_deref().unwrap())
                .unwrap();
            tape.backward_into(loss, &mut store).unwrap();
            store
        })
    });
    c.bench_function("text_encoder/forward", |b| {
        b.iter(|| model.encode_text(black_box(tokens)).unwrap())
    });
}

criterion_group!(benches, bench_encoders);
criterion_main!(benches);
