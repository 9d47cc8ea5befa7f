mod common;

use common::{brute_force_best_f1, brute_force_eer, toy_trial_sets};
use gaitgate::eval::{far_frr_eer, sweep_thresholds, threshold_grid, UserScores};
use proptest::prelude::*;

#[test]
fn toy_sets_match_brute_force() {
    let grid = threshold_grid(0.005, 1.0);
    for (name, scores) in toy_trial_sets() {
        let sweep = sweep_thresholds(&scores, &grid).unwrap();
        let (best_f1, _) = brute_force_best_f1(&scores, 1.0);
        assert_eq!(sweep.mean_f1, best_f1, "{name}: best-threshold F1");
        let curves = far_frr_eer(&scores, &grid).unwrap();
        let eer = brute_force_eer(&scores, 1e-4);
        assert!((curves.eer - eer).abs() <= 0.005, "{name}: EER {} vs brute force {eer}", curves.eer);
    }
}

#[test]
fn separated_toy_set_is_perfect() {
    let (_, scores) = &toy_trial_sets()[0];
    let grid = threshold_grid(0.005, 1.0);
    assert_eq!(sweep_thresholds(scores, &grid).unwrap().mean_f1, 1.0);
    assert_eq!(far_frr_eer(scores, &grid).unwrap().eer, 0.0);
}

/// Distances halfway between points of the 0.005 grid.
fn off_grid_distance() -> impl Strategy<Value = f64> {
    (0usize..200).prop_map(|k| k as f64 * 0.005 + 0.0025)
}

fn user_scores() -> impl Strategy<Value = UserScores> {
    (
        prop::collection::vec(off_grid_distance(), 1..30),
        prop::collection::vec(off_grid_distance(), 1..30),
    )
        .prop_map(|(genuine, impostor)| UserScores { genuine, impostor })
}

proptest! {
    #[test]
    fn sweep_finds_the_exhaustive_best_f1(scores in prop::collection::vec(user_scores(), 1..5)) {
        let sweep = sweep_thresholds(&scores, &threshold_grid(0.005, 1.0)).unwrap();
        let (best, theta) = brute_force_best_f1(&scores, 1.0);
        prop_assert_eq!(sweep.mean_f1, best);
        // the grid point just above the oracle's smallest optimal distance
        prop_assert!(sweep.best_theta <= theta + 0.005);
    }

    #[test]
    fn far_is_monotone_and_frr_antitone(scores in prop::collection::vec(user_scores(), 1..5)) {
        let c = far_frr_eer(&scores, &threshold_grid(0.005, 1.0)).unwrap();
        prop_assert!(c.far.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(c.frr.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!((0.0..=1.0).contains(&c.eer));
    }
}
