mod common;

use heteroswarm::exec::{execute, AffineEvaluator, CountingEvaluator, Message};
use heteroswarm::graph::prune_threshold;
use heteroswarm::orchestrator::{optimize, Dropout, PoolSpec};
use heteroswarm::pso::{PsoHyperparams, Swarm};
use heteroswarm::rng::seeded;
use heteroswarm::role::SparsityConfig;
use heteroswarm::utility::{AffineTargetUtility, AffineTaskSpec};
use heteroswarm::weight::jfk_scores;
use heteroswarm::{g_decode, AdjacencyMatrix, Assignment, Mode, RunConfig, Workers};
use proptest::prelude::*;

fn matrix(max_n: usize) -> impl Strategy<Value = AdjacencyMatrix> {
    (1..=max_n).prop_flat_map(|n| {
        prop::collection::vec(prop_oneof![Just(0.0), 0.0..=1.0f64], n * n)
            .prop_map(move |e| AdjacencyMatrix::from_flat(n, e).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn decoded_dags_are_valid(a in matrix(10), p in 0.01..=1.0f64, seed in any::<u64>()) {
        let dag = g_decode(&a, p, &mut seeded(seed)).unwrap();
        prop_assert!(common::check_dag(a.n(), dag.end_node, &dag.edges).is_ok());
        prop_assert!(dag.validate().is_ok());
        prop_assert_eq!(dag.topo_order.last(), Some(&dag.end_node));
    }

    #[test]
    fn decode_is_deterministic(a in matrix(8), seed in any::<u64>()) {
        prop_assert_eq!(g_decode(&a, 0.8, &mut seeded(seed)).unwrap(), g_decode(&a, 0.8, &mut seeded(seed)).unwrap());
    }

    #[test]
    fn pruning_never_adds_support(a in matrix(8), t1 in 0.0..=1.0f64, t2 in 0.0..=1.0f64) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(prune_threshold(&a, hi).unwrap().support_size() <= prune_threshold(&a, lo).unwrap().support_size());
    }

    #[test]
    fn swarm_records_are_monotone(
        scores in prop::collection::vec(prop::collection::vec(-10.0..10.0f64, 4), 1..12),
        seed in any::<u64>(),
    ) {
        let mut rng = seeded(seed);
        let mut swarm = Swarm::new((0..4).map(|i| vec![i as f64, -(i as f64)]).collect());
        let (mut best, mut worst) = (f64::NEG_INFINITY, f64::INFINITY);
        for s in &scores {
            swarm.step(s, &PsoHyperparams::default(), &mut rng).unwrap();
            let (b, w) = (swarm.state.best_score().unwrap(), swarm.state.worst_score().unwrap());
            prop_assert!(b >= best && w <= worst);
            let seen_max = s.iter().copied().fold(best, f64::max);
            prop_assert_eq!(b, seen_max);
            best = b;
            worst = w;
        }
    }

    #[test]
    fn jfk_permutation_equivariant_and_bounded(
        raw in prop::collection::vec(prop::collection::vec(0usize..5, 3), 1..8),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let pool = 5;
        let mut rng = seeded(seed);
        let utilities: Vec<f64> = raw.iter().map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let assignments: Vec<Assignment> = raw.iter().cloned().map(Assignment).collect();
        let scores = jfk_scores(&assignments, &utilities, pool).unwrap();

        let mut perm: Vec<usize> = (0..pool).collect();
        perm.shuffle(&mut rng);
        let permuted: Vec<Assignment> = raw.iter().map(|a| Assignment(a.iter().map(|&e| perm[e]).collect())).collect();
        let ps = jfk_scores(&permuted, &utilities, pool).unwrap();
        for i in 0..pool {
            prop_assert!((ps[perm[i]] - scores[i]).abs() < 1e-12);
        }
        for (i, s) in scores.iter().enumerate() {
            let containing: Vec<f64> = raw.iter().zip(&utilities).filter(|(a, _)| a.contains(&i)).map(|(_, u)| *u).collect();
            if !containing.is_empty() {
                let lo = containing.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = containing.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(*s >= lo - 1e-12 && *s <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn execute_calls_each_node_once(a in matrix(10), seed in any::<u64>()) {
        let dag = g_decode(&a, 0.8, &mut seeded(seed)).unwrap();
        let n = dag.n;
        let evaluator = CountingEvaluator::new(AffineEvaluator::new(2));
        let pool = vec![AffineEvaluator::identity_params(2); n];
        execute(&dag, &Assignment::identity(n), &pool, &Message::task_vector(vec![0.5, -0.5]), &evaluator).unwrap();
        prop_assert_eq!(evaluator.calls(), n as u64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn runs_are_monotone_within_budget_and_reproducible(
        n in 1usize..5,
        swarm_size in 1usize..5,
        assignments in 1usize..5,
        dr in 0.0..0.9f64,
        dw in 0.0..0.9f64,
        mode in prop_oneof![Just(Mode::Full), Just(Mode::RoleOnly), Just(Mode::WeightOnly)],
        tau in prop_oneof![Just(None), (0.0..0.5f64).prop_map(Some)],
        seed in 0u64..1000,
    ) {
        let spec = AffineTaskSpec { samples: 2, ..AffineTaskSpec::default() };
        let utility = AffineTargetUtility::generate(spec, n, seed).unwrap();
        let cfg = RunConfig {
            n_experts: n,
            swarm_size,
            assignments,
            max_iterations: 5,
            mode,
            dropout: Dropout { role: dr, weight: dw },
            sparsity: tau.map_or_else(SparsityConfig::default, SparsityConfig::threshold),
            pool: PoolSpec { distinct: n, repeats: 1 },
            seed,
            ..RunConfig::default()
        };
        let pool = utility.initial_pool(n, 1, seed).unwrap();
        let out = optimize(&cfg, pool.clone(), &utility, &Workers::sequential()).unwrap();
        prop_assert!(out.trace.windows(2).all(|w| w[1].best_utility >= w[0].best_utility));
        prop_assert!(out.trace.iter().all(|r| r.evaluator_calls <= cfg.call_budget(2)));
        prop_assert_eq!(out.best_found.utility, out.trace.last().unwrap().best_utility);
        match mode {
            Mode::RoleOnly => prop_assert_eq!(&out.system.experts, &pool),
            Mode::WeightOnly => prop_assert!(out.trace.iter().all(|r| !r.role_step)),
            Mode::Full => {}
        }
        let again = optimize(&cfg, pool, &utility, &Workers::new(3).unwrap()).unwrap();
        prop_assert_eq!(out.trace, again.trace);
        prop_assert_eq!(out.system, again.system);
    }
}
