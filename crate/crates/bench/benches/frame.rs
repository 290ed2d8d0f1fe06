use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use gesture_ucb::game::generate_path;
use gesture_ucb::{Game, Pipeline, PostProcessState, RewardSignal, N_GESTURES};
use gesture_ucb_bench::{config, frames};
use std::hint::black_box;

fn bandit(c: &mut Criterion) {
    let cfg = config();
    let frames = frames(&cfg, 1024, 1);
    let mut model = cfg.fresh_model().unwrap();
    for f in &frames {
        model.pull(&f.embedding, &f.prob).unwrap();
        model.apply_reward(RewardSignal::advance());
    }

    let mut i = 0;
    c.bench_function("score", |b| {
        b.iter(|| {
            let f = &frames[i % frames.len()];
            i += 1;
            black_box(model.score(&f.embedding, &f.prob).unwrap())
        })
    });

    let mut pulled = model.clone();
    c.bench_function("pull", |b| {
        b.iter(|| {
            let f = &frames[i % frames.len()];
            i += 1;
            black_box(pulled.pull(&f.embedding, &f.prob).unwrap())
        })
    });

    c.bench_function("apply_reward", |b| {
        b.iter_batched_ref(
            || {
                let mut m = model.clone();
                for f in &frames[..cfg.credit_window()] {
                    m.pull(&f.embedding, &f.prob).unwrap();
                }
                m
            },
            |m| black_box(m.apply_reward(RewardSignal::advance())),
            BatchSize::SmallInput,
        )
    });
}

fn postprocess(c: &mut Criterion) {
    let cfg = config();
    let frames = frames(&cfg, 1024, 2);
    let mut state = PostProcessState::new(cfg.postprocess_config(), N_GESTURES).unwrap();
    let mut i = 0;
    c.bench_function("postprocess_step", |b| {
        b.iter(|| {
            let f = &frames[i % frames.len()];
            i += 1;
            black_box(state.step(f.prob.argmax(), &f.prob).unwrap())
        })
    });
}

fn pipeline(c: &mut Criterion) {
    let cfg = config();
    let frames = frames(&cfg, 4096, 3);
    let game = Game::new(generate_path(3, 1_000_000, 1.0 / 3.0).unwrap());
    let mut pipe =
        Pipeline::new(cfg.fresh_model().unwrap(), cfg.postprocess_config(), game, true).unwrap();
    let mut i = 0;
    c.bench_function("pipeline_frame", |b| {
        b.iter(|| {
            let f = &frames[i % frames.len()];
            i += 1;
            black_box(pipe.frame(f).unwrap().arm)
        })
    });
}

criterion_group!(benches, bandit, postprocess, pipeline);
criterion_main!(benches);
