//! Shared fixtures for the benchmarks.

use gesture_ucb::harness::{SimUser, World};
use gesture_ucb::{context, ExperimentConfig, Frame, N_GESTURES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Full-size setting: 64-d embeddings, 6 classes, 25 frames/s.
pub fn config() -> ExperimentConfig {
    ExperimentConfig {
        dim: 64,
        ..Default::default()
    }
}

/// A mix of rest and active frames from one moderately shifted user.
pub fn frames(cfg: &ExperimentConfig, count: usize, seed: u64) -> Vec<Frame> {
    let world = World::new(cfg).expect("world");
    let user = SimUser::new(cfg, &world, 0, 0.6).expect("user");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            if rng.random_bool(0.5) {
                let g = rng.random_range(0..N_GESTURES);
                context::active_frame(&world.head, &world.prototypes, &user.perturbation, g, &mut rng)
            } else {
                context::rest_frame(&world.head, &world.prototypes, &user.perturbation, &mut rng)
            }
            .expect("frame")
        })
        .collect()
}
