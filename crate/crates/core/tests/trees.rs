use cascade_core::eval::{evaluate, evaluate_closed_form, evaluate_comparison, evaluate_pruned, PruneVariant};
use cascade_core::model::build_scalar_quadratic_ode;
use cascade_core::rng::RandomSource;
use cascade_core::tree::{simulate_tree, Event, DEFAULT_NODE_BUDGET};
use proptest::prelude::*;

proptest! {
    #[test]
    fn logistic_tree_identities(seed in any::<u64>(), stream in 0u64..1000, t in 0.05f64..1.5, u0 in -0.9f64..0.9) {
        let sys = build_scalar_quadratic_ode(u0);
        let tree = simulate_tree(&sys, 0, t, &RandomSource::new(seed, stream), DEFAULT_NODE_BUDGET).unwrap();
        let direct = evaluate(&tree, t, &sys).unwrap().value.0[0];
        let closed = evaluate_closed_form(&tree, t, &sys).unwrap();
        prop_assert!((direct - closed).norm() <= 1e-12 * (1.0 + closed.norm()));
        let bound = evaluate_comparison(&tree, t, &sys).unwrap();
        prop_assert!(direct.norm() <= bound + 1e-12);
        let deep = evaluate_pruned(&tree, tree.len() as u32 + 1, t, &sys, PruneVariant::Asymmetric).unwrap();
        prop_assert_eq!(deep.value.0[0], direct);
    }

    #[test]
    fn nodes_are_time_ordered(seed in any::<u64>(), t in 0.1f64..2.0) {
        let sys = build_scalar_quadratic_ode(0.5);
        let tree = simulate_tree(&sys, 0, t, &RandomSource::new(seed, 0), DEFAULT_NODE_BUDGET).unwrap();
        for n in tree.nodes() {
            prop_assert!(n.birth <= n.death);
            if matches!(n.event, Event::BeyondHorizon) {
                prop_assert!(n.death >= t);
            } else {
                prop_assert!(n.death < t);
            }
            if n.parent != cascade_core::tree::NO_NODE {
                prop_assert_eq!(n.birth, tree.node(n.parent as usize).death);
            }
        }
    }
}
