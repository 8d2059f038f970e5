use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relaxdice::data::{DatasetBody, Role, TabularData, Transition, TransitionDataset};
use relaxdice::dice::{solve_tabular, BetaMode, SolverConfig, TabularProblem, Variant};
use relaxdice::divergence::{relaxed_f_divergence, RelaxedDivergenceSpec};
use relaxdice::extraction::{extract_tabular, Weighting};
use relaxdice::harness::{normalized_score, ExperimentConfig};
use relaxdice::mdp::{flow_residual, occupancy_of_policy, random_simplex, TabularMdp, TabularPolicy};

fn random_mdp(seed: u64, ns: usize, na: usize) -> TabularMdp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TabularMdp::random(ns, na, rng.gen_range(0.5..0.99), &mut rng).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn occupancy_is_a_feasible_distribution(seed in any::<u64>(), ns in 1usize..12, na in 1usize..4) {
        let mdp = random_mdp(seed, ns, na);
        let pi = TabularPolicy::random(ns, na, &mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let d = occupancy_of_policy(&mdp, &pi).unwrap();
        prop_assert!((d.total_mass() - 1.0).abs() < 1e-10);
        prop_assert!(d.as_slice().iter().all(|x| *x >= -1e-15));
        prop_assert!(d.max_flow_residual() < 1e-10);
    }

    #[test]
    fn solver_optimum_satisfies_bellman_flow(seed in any::<u64>(), alpha in 0.05f64..1.0, beta in 1.1f64..5.0) {
        let mdp = random_mdp(seed, 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let d_u = random_simplex(8, &mut rng);
        let log_r: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let problem = TabularProblem::from_distributions(&mdp, &d_u, &log_r, mdp.initial()).unwrap();
        for variant in [Variant::RelaxDice, Variant::RelaxDiceDrc, Variant::DemoDiceLimit] {
            let mut cfg = SolverConfig::new(variant);
            cfg.alpha = alpha;
            cfg.beta_mode = BetaMode::Fixed(beta);
            let sol = solve_tabular(&problem, &cfg).unwrap();
            prop_assert!(sol.converged);
            let res = flow_residual(&mdp, sol.pair_mass.as_ref().unwrap()).unwrap();
            prop_assert!(res.iter().all(|r| r.abs() < 1e-7), "{:?}", res);
        }
    }

    #[test]
    fn relaxed_divergence_is_nonnegative_and_zero_below_beta(
        raw_p in prop::collection::vec(0.01f64..1.0, 2..8),
        beta in 1.01f64..10.0,
    ) {
        let n = raw_p.len();
        let q = vec![1.0 / n as f64; n];
        let sp: f64 = raw_p.iter().sum();
        let p: Vec<f64> = raw_p.iter().map(|x| x / sp).collect();
        let spec = RelaxedDivergenceSpec::kl(beta).unwrap();
        let d = relaxed_f_divergence(&spec, &p, &q).unwrap();
        prop_assert!(d >= -1e-12);
        let max_ratio = p.iter().map(|x| x * n as f64).fold(0.0, f64::max);
        if max_ratio <= beta {
            prop_assert!(d.abs() <= 1e-12);
        }
    }

    #[test]
    fn extraction_ignores_weight_scale(seed in any::<u64>(), scale in 1e-3f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records: Vec<Transition> = (0..60)
            .map(|_| Transition { state: rng.gen_range(0..5), action: rng.gen_range(0..3), next_state: rng.gen_range(0..5) })
            .collect();
        let data = TransitionDataset::new(
            Role::Suboptimal,
            "prop",
            DatasetBody::Tabular(TabularData { num_states: 5, num_actions: 3, records, initial_states: vec![0] }),
        );
        let w: Vec<f64> = (0..60).map(|_| rng.gen_range(0.0..2.0)).collect();
        let ws: Vec<f64> = w.iter().map(|x| x * scale).collect();
        let a = extract_tabular(&data, &w, Weighting::SelfNormalized).unwrap().policy;
        let b = extract_tabular(&data, &ws, Weighting::SelfNormalized).unwrap().policy;
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn dataset_bytes_round_trip(seed in any::<u64>(), n in 1usize..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records: Vec<Transition> = (0..n)
            .map(|_| Transition { state: rng.gen_range(0..7), action: rng.gen_range(0..2), next_state: rng.gen_range(0..7) })
            .collect();
        let data = TransitionDataset::new(
            Role::Expert,
            format!("seed {seed}"),
            DatasetBody::Tabular(TabularData { num_states: 7, num_actions: 2, records, initial_states: vec![1, 3] }),
        );
        let bytes = data.to_bytes().unwrap();
        prop_assert_eq!(TransitionDataset::from_bytes(&bytes).unwrap(), data);
    }

    #[test]
    fn normalized_score_is_affine(random in -10.0f64..0.0, gap in 0.1f64..10.0, t in -1.0f64..2.0) {
        let expert = random + gap;
        let s = normalized_score(random + t * gap, random, expert).unwrap();
        prop_assert!((s - 100.0 * t).abs() < 1e-9);
    }

    #[test]
    fn config_echo_round_trips(alpha in 0.01f64..2.0, seeds in prop::collection::vec(0u64..100, 1..6), eta in 0.0f64..1.0) {
        let mut c = ExperimentConfig::default();
        c.alpha = alpha;
        c.seeds = seeds;
        c.eta = eta;
        let back = ExperimentConfig::from_kv(&c.to_kv()).unwrap();
        prop_assert_eq!(back.hash(), c.hash());
        prop_assert_eq!(back, c);
    }
}
