use gesture_ucb::game::{generate_path, EventKind, Game, Gesture};
use gesture_ucb::{RewardSignal, RewardSource};
use proptest::prelude::*;

fn inputs() -> impl Strategy<Value = Vec<(Option<usize>, bool)>> {
    prop::collection::vec((prop::option::of(0usize..6), prop::bool::weighted(0.2)), 1..400)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rewards_are_sound_and_cells_conserved(
        seed in any::<u64>(),
        len in 1usize..80,
        rate in 0.0f64..=1.0,
        steps in inputs(),
        penalize in any::<bool>(),
    ) {
        let path = generate_path(seed, len, rate).unwrap();
        prop_assert_eq!(path.len(), len);
        prop_assert!(path.has_no_reversals());
        let mut game = Game::new(path.clone()).with_wrong_emission_penalty(penalize);
        for (emitted, space) in steps {
            if game.is_completed() {
                break;
            }
            let before = game.state().clone();
            let emitted = emitted.and_then(Gesture::from_index);
            let ev = game.step(emitted, space).unwrap();
            let after = game.state();
            let moved = after.position - before.position;
            match ev.reward.map(|r: RewardSignal| r.source) {
                Some(RewardSource::SystemAdvance) => {
                    prop_assert_eq!(moved, 1);
                    prop_assert_eq!(emitted, before.pending);
                }
                Some(RewardSource::UserReport) => {
                    prop_assert!(space);
                    prop_assert_eq!(moved, 0);
                }
                Some(RewardSource::SystemReject) => {
                    prop_assert!(penalize);
                    prop_assert_eq!(moved, 0);
                    prop_assert!(emitted.is_some() && emitted != before.pending);
                }
                None => {
                    prop_assert_eq!(moved, 0);
                    prop_assert_eq!(ev.kind, EventKind::Ignored);
                }
            }
            if moved == 1 {
                prop_assert_eq!(ev.kind, EventKind::Advanced);
            }
            prop_assert_eq!(after.advance_count + (len - after.position), len);
            prop_assert_eq!(after.advance_count, after.position);
        }
    }

    #[test]
    fn paths_are_balanced(seed in any::<u64>(), len in 12usize..200) {
        let path = generate_path(seed, len, 1.0 / 3.0).unwrap();
        let counts = path.class_counts();
        let actions = counts[4] + counts[5];
        prop_assert_eq!(actions, ((len as f64) / 3.0).round() as usize);
        prop_assert!(counts[4].abs_diff(counts[5]) <= 1);
        let dirs = &counts[..4];
        prop_assert!(dirs.iter().max().unwrap() - dirs.iter().min().unwrap() <= 1);
    }
}
