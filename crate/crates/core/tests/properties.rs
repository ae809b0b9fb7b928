use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stopflow::controls::{
    g_from_xi, optimize_randomized, optimize_singular, random_finite_xi, random_randomized_control, randomized_value,
    singular_value, tau_from_g, time_change_value, xi_from_g,
};
use stopflow::model::{lagged_information, random_tree_with, LagSpec, RandomInstance, RandomTreeSpec};
use stopflow::process::{cell_average, condition_process, conditional_expectation};
use stopflow::stopping::{
    brute_force_optimal, delayed_reduction, enumerate_stopping_times, snell_solve, value_of, EnumerationLimits,
};
use stopflow::vi::{gateaux_analytic, no_mass_before_stop, random_perturbation, stopping_identity_check, vi_check};
use stopflow::{AdaptedProcess, InformationStructure, Partition};

fn instance(seed: u64, depth: usize, branching: usize, filtration_prob: f64) -> RandomInstance<f64> {
    let mut spec = RandomTreeSpec::new(seed, depth, branching);
    spec.filtration_prob = filtration_prob;
    random_tree_with(&spec).unwrap()
}

fn nested(seed: u64) -> RandomInstance<f64> {
    instance(seed, 4, 3, 1.0)
}

fn limits() -> EnumerationLimits {
    EnumerationLimits::default()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conditioning_is_idempotent_and_preserves_mean(seed in any::<u64>()) {
        let inst = instance(seed, 4, 3, 0.5);
        let once = condition_process(&inst.tree, &inst.reward, &inst.info).unwrap();
        let twice = condition_process(&inst.tree, &once, &inst.info).unwrap();
        for (a, b) in once.values().iter().zip(twice.values()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        for t in 0..=inst.tree.num_periods() {
            let e = once.expectation(&inst.tree, t) - inst.reward.expectation(&inst.tree, t);
            prop_assert!(e.abs() <= 1e-12);
        }
    }

    #[test]
    fn tower_property(seed in any::<u64>()) {
        // info is a coarsening of F, so conditioning on F then on info is
        // conditioning on info
        let inst = nested(seed);
        let f = inst.tree.filtration();
        for t in 0..=inst.tree.num_periods() {
            let fine = conditional_expectation(&inst.tree, &inst.reward, &f, t).unwrap();
            let both = cell_average(&inst.tree, &fine, inst.info.at(t), t).unwrap();
            let direct = conditional_expectation(&inst.tree, &inst.reward, &inst.info, t).unwrap();
            for (a, b) in both.iter().zip(&direct) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn dp_matches_brute_force(seed in any::<u64>()) {
        let inst = nested(seed);
        let dp = snell_solve(&inst.tree, &inst.info, &inst.reward).unwrap();
        let bf = brute_force_optimal(&inst.tree, &inst.info, &inst.reward, &limits()).unwrap();
        prop_assert!((dp.value - bf.value).abs() <= 1e-12);
        let v = value_of(&inst.tree, &inst.info, &inst.reward, &dp.optimal_tau).unwrap();
        prop_assert!((v - dp.value).abs() <= 1e-12);
    }

    #[test]
    fn snell_envelope_dominates_and_is_supermartingale(seed in any::<u64>()) {
        let inst = nested(seed);
        let sol = snell_solve(&inst.tree, &inst.info, &inst.reward).unwrap();
        let v = sol.snell.as_ref().unwrap();
        let kt = sol.conditioned_reward.as_ref().unwrap();
        for (a, b) in v.values().iter().zip(kt.values()) {
            prop_assert!(*a >= b - 1e-12);
        }
        for t in 0..inst.tree.num_periods() {
            let cont = cell_average(&inst.tree, v.slice(t + 1), inst.info.at(t), t).unwrap();
            for (a, b) in v.slice(t).iter().zip(&cont) {
                prop_assert!(*a >= b - 1e-12);
            }
        }
    }

    #[test]
    fn brute_force_optimum_is_measurable_for_any_information(seed in any::<u64>()) {
        let inst = instance(seed, 4, 3, 0.0);
        let sol = brute_force_optimal(&inst.tree, &inst.info, &inst.reward, &limits()).unwrap();
        prop_assert!(sol.optimal_tau.check_measurable(&inst.info).is_ok());
        for tau in enumerate_stopping_times(&inst.info, &limits()).unwrap().take(200) {
            prop_assert!(value_of(&inst.tree, &inst.info, &inst.reward, &tau).unwrap() <= sol.value + 1e-12);
        }
    }

    #[test]
    fn more_information_never_hurts(seed in any::<u64>()) {
        let inst = nested(seed);
        let n = inst.tree.num_periods();
        let full = snell_solve(&inst.tree, &inst.tree.filtration(), &inst.reward).unwrap().value;
        let coarse = snell_solve(&inst.tree, &inst.info, &inst.reward).unwrap().value;
        prop_assert!(full >= coarse - 1e-12);
        let mut prev = f64::INFINITY;
        for delta in 0..=n {
            let info = lagged_information(&inst.tree, LagSpec::delayed(delta)).unwrap();
            let v = snell_solve(&inst.tree, &info, &inst.reward).unwrap().value;
            prop_assert!(v <= prev + 1e-12);
            prev = v;
            let adv = lagged_information(&inst.tree, LagSpec::advanced(delta)).unwrap();
            let va = snell_solve(&inst.tree, &adv, &inst.reward).unwrap().value;
            prop_assert!(va >= full - 1e-12);
            prop_assert!(full >= v - 1e-12);
        }
    }

    #[test]
    fn delayed_reduction_matches_direct_solution(seed in any::<u64>()) {
        let inst = nested(seed);
        for delta in 0..=inst.tree.num_periods() {
            let info = lagged_information(&inst.tree, LagSpec::delayed(delta)).unwrap();
            let direct = snell_solve(&inst.tree, &info, &inst.reward).unwrap();
            let red = delayed_reduction(&inst.tree, &inst.reward, delta).unwrap();
            prop_assert!((direct.value - red.value).abs() <= 1e-12);
            for leaf in 0..inst.tree.num_leaves() {
                let tau = direct.optimal_tau.at(leaf);
                if tau >= delta {
                    prop_assert_eq!(tau, red.alpha.at(leaf) + delta);
                }
            }
        }
    }

    #[test]
    fn three_values_coincide(seed in any::<u64>()) {
        let inst = nested(seed);
        let phi = brute_force_optimal(&inst.tree, &inst.info, &inst.reward, &limits()).unwrap().value;
        let lam = optimize_randomized(&inst.tree, &inst.info, &inst.reward, &limits()).unwrap().value;
        let psi = optimize_singular(&inst.tree, &inst.info, &inst.reward, &limits()).unwrap().value;
        prop_assert!((phi - lam).abs() <= 1e-12);
        prop_assert!((phi - psi).abs() <= 1e-12);
    }

    #[test]
    fn random_controls_never_beat_stopping(seed in any::<u64>()) {
        let inst = instance(seed, 3, 3, 0.5);
        let phi = brute_force_optimal(&inst.tree, &inst.info, &inst.reward, &limits()).unwrap().value;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for _ in 0..100 {
            let g = random_randomized_control::<f64, _>(&mut rng, &inst.info, true);
            let v = randomized_value(&inst.tree, &inst.info, &inst.reward, &g).unwrap();
            prop_assert!(v <= phi + 1e-12);
            let tc = time_change_value(&inst.tree, &inst.reward, &g).unwrap();
            prop_assert!((v - tc).abs() <= 1e-10);
            let xi = xi_from_g(&g);
            let j = singular_value(&inst.tree, &inst.info, &inst.reward, &xi).unwrap();
            prop_assert!((j - v).abs() <= 1e-12);
            // every level's stopping time is admissible
            let tau = tau_from_g(&g, 0.5).unwrap();
            prop_assert!(tau.check_measurable(&inst.info).is_ok());
        }
    }

    #[test]
    fn control_round_trips(seed in any::<u64>()) {
        let inst = nested(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_randomized_control::<f64, _>(&mut rng, &inst.info, true);
        let back = g_from_xi(&xi_from_g(&g));
        for (a, b) in g.values().values().iter().zip(back.values().values()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        let xi = random_finite_xi::<f64, _>(&mut rng, &inst.info, 2.0);
        let back = xi_from_g(&g_from_xi(&xi));
        for (a, b) in xi.values().values().iter().zip(back.values().values()) {
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn optimality_conditions_hold_at_the_optimum(seed in any::<u64>()) {
        let inst = nested(seed);
        let opt = optimize_singular(&inst.tree, &inst.info, &inst.reward, &limits()).unwrap();
        let report = vi_check(&inst.tree, &inst.info, &inst.reward, &opt.control).unwrap();
        prop_assert!(report.passes, "{:?}", report);
        prop_assert!(no_mass_before_stop(&opt.control, &opt.stopping.optimal_tau));
        let identity = stopping_identity_check(&inst.tree, &inst.info, &inst.reward, &opt.control).unwrap();
        if identity.nonnegative_on_support {
            prop_assert!(identity.gap <= 1e-10);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let zeta = random_perturbation(&mut rng, &inst.info, &opt.control);
            prop_assert!(zeta.check_feasible(&opt.control, &inst.info).is_ok());
            prop_assert!(gateaux_analytic(&inst.tree, &inst.reward, &opt.control, &zeta).unwrap() <= 1e-8);
        }
    }

    #[test]
    fn stopping_identity_holds_for_nonnegative_rewards(seed in any::<u64>()) {
        let inst = nested(seed);
        let k = inst.reward.map(|_, _, v| v + 10.0);
        let opt = optimize_singular(&inst.tree, &inst.info, &k, &limits()).unwrap();
        let identity = stopping_identity_check(&inst.tree, &inst.info, &k, &opt.control).unwrap();
        prop_assert!(identity.nonnegative_on_support);
        prop_assert!(identity.gap <= 1e-10, "{:?}", identity);
    }

    #[test]
    fn f32_tracks_f64(seed in any::<u64>()) {
        let inst = nested(seed);
        let tree32 = inst.tree.cast::<f32>().unwrap();
        let k32 = AdaptedProcess::from_fn(inst.tree.num_periods(), inst.tree.num_leaves(), |t, l| inst.reward.at(t, l) as f32);
        let v64 = snell_solve(&inst.tree, &inst.info, &inst.reward).unwrap().value;
        let v32 = snell_solve(&tree32, &inst.info, &k32).unwrap().value;
        prop_assert!((v64 - v32 as f64).abs() <= 1e-4);
    }
}

#[test]
fn optimal_mixture_stays_optimal_at_every_level() {
    // under full information on the two-period fixture both (1, 1, 2, 2)
    // and "always wait" are optimal, so any mixture is
    let fx = stopflow::model::t2::<f64>();
    let info = fx.tree.filtration();
    let g =
        stopflow::controls::RandomizedControl::from_rows(vec![vec![0.0; 4], vec![0.4, 0.4, 0.0, 0.0], vec![1.0; 4]])
            .unwrap();
    assert_eq!(randomized_value(&fx.tree, &info, &fx.reward, &g).unwrap(), 1.25);
    for r in [0.1, 0.3, 0.5, 0.9] {
        let tau = tau_from_g(&g, r).unwrap();
        assert_eq!(value_of(&fx.tree, &info, &fx.reward, &tau).unwrap(), 1.25);
    }
}

#[test]
fn coarsening_breaks_dp_but_not_brute_force() {
    let fx = stopflow::model::t2::<f64>();
    let info = InformationStructure::new(vec![
        Partition::trivial(4),
        Partition::discrete(4),
        Partition::trivial(4),
    ])
    .unwrap();
    assert!(!info.is_filtration());
    assert!(snell_solve(&fx.tree, &info, &fx.reward).is_err());
    let sol = brute_force_optimal(&fx.tree, &info, &fx.reward, &limits()).unwrap();
    // seeing the leaf at t = 1 lets it stop ud early and wait elsewhere
    assert_eq!(sol.value, 1.5);
    // dd is a tie; the lexicographically smallest time stops it at 1
    assert_eq!(sol.optimal_tau.as_slice(), &[2, 1, 2, 1]);
}
