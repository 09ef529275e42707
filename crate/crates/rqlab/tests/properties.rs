//! Randomized invariant checks. Each property re-derives the expected
//! behavior independently (manual backups, hand-built distributions) and
//! compares it against the library, so a bug cannot hide in shared code.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rqlab::envs::{compute_task_metric, make_env, rollout_episode, EnvSpec};
use rqlab::fixtures;
use rqlab::harness::format_significant;
use rqlab::mdp::{compose_reward, DiscreteMdp, PolicyTable, QTable, RewardSelector};
use rqlab::residual::{
    residual_policy, residual_soft_policy_iteration_traced, residual_soft_q_iteration,
    CustomizationParams,
};
use rqlab::soft::{
    boltzmann_policy, log_partition, soft_policy_evaluation, soft_value_iteration, SoftSolverParams,
};

fn solver(alpha: f64, tol: f64) -> SoftSolverParams<f64> {
    SoftSolverParams {
        alpha,
        tol,
        max_iter: 2_000_000,
    }
}

/// Small random model: mixes plain, terminal-bearing, and deterministic
/// kernels so every transition shape appears.
fn small_mdp(seed: u64, n_states: usize, n_actions: usize, discount: f64) -> DiscreteMdp<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match seed % 3 {
        0 => fixtures::random_mdp(n_states, n_actions, discount, &mut rng),
        1 => {
            let n_terminal = 1.min(n_states - 1);
            fixtures::random_mdp_with_terminals(n_states, n_actions, discount, n_terminal, &mut rng)
        }
        _ => fixtures::random_deterministic_mdp(n_states, n_actions, discount, &mut rng),
    }
}

/// Strictly positive random policy with rows summing to one.
fn random_policy(seed: u64, n_states: usize, n_actions: usize) -> PolicyTable<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let rows = (0..n_states)
        .map(|_| {
            let raw: Vec<f64> = (0..n_actions).map(|_| rng.gen_range(0.05..1.0)).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|w| w / total).collect()
        })
        .collect();
    PolicyTable::from_rows(rows).unwrap()
}

/// One manual application of the entropy-regularized backup to `q`.
fn manual_backup(
    mdp: &DiscreteMdp<f64>,
    rewards: &QTable<f64>,
    q: &QTable<f64>,
    alpha: f64,
) -> QTable<f64> {
    let mut out = QTable::zeros(mdp.n_states(), mdp.n_actions());
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let mut boot = 0.0;
            if !mdp.is_terminal(s) {
                for &(succ, p) in mdp.successors(s, a) {
                    if mdp.is_terminal(succ) {
                        continue;
                    }
                    let row = q.row(succ);
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse: f64 = row.iter().map(|&v| ((v - m) / alpha).exp()).sum();
                    boot += p * (m + alpha * lse.ln());
                }
            }
            out.set(s, a, rewards.get(s, a) + mdp.discount() * boot);
        }
    }
    out
}

/// Significant digits of a decimal string (sign, dot, exponent, and leading
/// zeros excluded).
fn significant_digits(text: &str) -> usize {
    let mantissa = text.split(['e', 'E']).next().unwrap();
    mantissa
        .chars()
        .filter(|c| c.is_ascii_digit())
        .skip_while(|&c| c == '0')
        .count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn combined_reward_is_the_weighted_sum(
        seed in any::<u64>(),
        n_states in 2usize..8,
        n_actions in 2usize..4,
        omega in 0.0f64..3.0,
    ) {
        let mdp = small_mdp(seed, n_states, n_actions, 0.9);
        let combined = compose_reward(&mdp, RewardSelector::Combined { omega }).unwrap();
        for s in 0..n_states {
            for a in 0..n_actions {
                let expected = omega * mdp.basic(s, a) + mdp.addon(s, a);
                prop_assert!((combined.get(s, a) - expected).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn solver_outputs_are_fixed_points(
        seed in any::<u64>(),
        n_states in 2usize..10,
        n_actions in 2usize..4,
        alpha in 0.3f64..2.5,
        discount in 0.0f64..0.95,
    ) {
        let mdp = small_mdp(seed, n_states, n_actions, discount);
        let q = soft_value_iteration(&mdp, RewardSelector::Basic, &solver(alpha, 1e-10)).unwrap();
        let rewards = compose_reward(&mdp, RewardSelector::Basic).unwrap();
        let reapplied = manual_backup(&mdp, &rewards, &q, alpha);
        prop_assert!(reapplied.sup_norm_diff(&q) <= 1e-8);
    }

    #[test]
    fn boltzmann_rows_are_normalized_softmax(
        seed in any::<u64>(),
        n_states in 1usize..6,
        n_actions in 2usize..5,
        alpha in 0.2f64..3.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut q = QTable::<f64>::zeros(n_states, n_actions);
        for s in 0..n_states {
            for a in 0..n_actions {
                q.set(s, a, rng.gen_range(-5.0..5.0));
            }
        }
        let pi = boltzmann_policy(&q, alpha).unwrap();
        for s in 0..n_states {
            let total: f64 = pi.row(s).iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            // ln p(a) − ln p(b) must equal (Q(a) − Q(b))/α.
            for a in 0..n_actions {
                prop_assert!(pi.prob(s, a) > 0.0);
                let log_ratio = pi.prob(s, a).ln() - pi.prob(s, 0).ln();
                let expected = (q.get(s, a) - q.get(s, 0)) / alpha;
                prop_assert!((log_ratio - expected).abs() <= 1e-9);
            }
            // And the log-partition ties probabilities to values exactly.
            let ln_z = log_partition(&q, alpha, s).unwrap();
            for a in 0..n_actions {
                let reconstructed = (q.get(s, a) / alpha - ln_z).exp();
                prop_assert!((pi.prob(s, a) - reconstructed).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn formatted_numbers_keep_six_significant_digits(value in prop::num::f64::NORMAL) {
        let text = format_significant(value);
        let parsed: f64 = text.parse().unwrap();
        let rel = ((parsed - value) / value).abs();
        prop_assert!(rel <= 5e-6, "{value} → {text} (relative error {rel:.2e})");
        prop_assert!(significant_digits(&text) <= 6, "{value} → {text}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn residual_identity_holds_for_random_weights(
        seed in any::<u64>(),
        n_states in 2usize..9,
        n_actions in 2usize..4,
        omega in 0.3f64..2.0,
        alpha in 0.5f64..2.0,
        alpha_hat in 0.5f64..2.0,
        discount in 0.0f64..0.9,
    ) {
        let mdp = small_mdp(seed, n_states, n_actions, discount);
        let q_star =
            soft_value_iteration(&mdp, RewardSelector::Basic, &solver(alpha, 1e-11)).unwrap();
        let prior = boltzmann_policy(&q_star, alpha).unwrap();
        let params = CustomizationParams::<f64>::default()
            .with_omega_prime(omega * alpha)
            .with_alpha_hat(alpha_hat)
            .with_gamma(mdp.discount())
            .with_tol(1e-10);
        let q_r = residual_soft_q_iteration(&mdp, &prior, &params).unwrap();
        let q_combined = soft_value_iteration(
            &mdp,
            RewardSelector::Combined { omega },
            &solver(alpha_hat, 1e-11),
        )
        .unwrap();
        let gap = q_r.values.axpy(omega, &q_star).sup_norm_diff(&q_combined);
        prop_assert!(gap <= 1e-7, "identity gap {gap:.3e}");
    }

    #[test]
    fn zero_prior_weight_reduces_to_the_addon_solve(
        seed in any::<u64>(),
        n_states in 2usize..9,
        n_actions in 2usize..4,
        alpha_hat in 0.5f64..2.0,
    ) {
        let mdp = small_mdp(seed, n_states, n_actions, 0.85);
        let prior = random_policy(seed, n_states, n_actions);
        let params = CustomizationParams::<f64>::default()
            .with_omega_prime(0.0)
            .with_alpha_hat(alpha_hat)
            .with_gamma(mdp.discount())
            .with_tol(1e-10);
        let q_r = residual_soft_q_iteration(&mdp, &prior, &params).unwrap();
        let q_addon =
            soft_value_iteration(&mdp, RewardSelector::Addon, &solver(alpha_hat, 1e-11)).unwrap();
        prop_assert!(q_r.values.sup_norm_diff(&q_addon) <= 1e-7);
    }

    #[test]
    fn matched_weights_recover_any_positive_prior(
        seed in any::<u64>(),
        n_states in 2usize..9,
        n_actions in 2usize..4,
        weight in 0.3f64..2.0,
    ) {
        let mut mdp = small_mdp(seed, n_states, n_actions, 0.9);
        for s in 0..n_states {
            for a in 0..n_actions {
                mdp.set_addon(s, a, 0.0);
            }
        }
        let prior = random_policy(seed, n_states, n_actions);
        let params = CustomizationParams::<f64>::default()
            .with_omega_prime(weight)
            .with_alpha_hat(weight)
            .with_gamma(mdp.discount())
            .with_tol(1e-11);
        let q_r = residual_soft_q_iteration(&mdp, &prior, &params).unwrap();
        let customized = residual_policy(&q_r, &prior, &params).unwrap();
        prop_assert!(customized.max_total_variation(&prior) <= 1e-9);
    }

    #[test]
    fn policy_iteration_improves_every_snapshot(
        seed in any::<u64>(),
        n_states in 2usize..7,
        n_actions in 2usize..4,
    ) {
        let mdp = small_mdp(seed, n_states, n_actions, 0.85);
        let q_star =
            soft_value_iteration(&mdp, RewardSelector::Basic, &solver(1.0, 1e-11)).unwrap();
        let prior = boltzmann_policy(&q_star, 1.0).unwrap();
        let params = CustomizationParams::<f64>::default()
            .with_gamma(mdp.discount())
            .with_tol(1e-9);
        let trace = residual_soft_policy_iteration_traced(&mdp, &prior, &params).unwrap();

        // Entropy-augmented combined return, averaged over states.
        let objective = |policy: &PolicyTable<f64>| -> f64 {
            let q = soft_policy_evaluation(
                &mdp,
                RewardSelector::Combined { omega: 1.0 },
                policy,
                &solver(1.0, 1e-11),
            )
            .unwrap();
            (0..n_states)
                .map(|s| -> f64 {
                    policy
                        .row(s)
                        .iter()
                        .enumerate()
                        .map(|(a, &p)| p * (q.get(s, a) - p.ln()))
                        .sum()
                })
                .sum::<f64>()
                / n_states as f64
        };
        let values: Vec<f64> = trace.snapshots.iter().map(objective).collect();
        for pair in values.windows(2) {
            prop_assert!(
                pair[1] >= pair[0] - 1e-7,
                "objective decreased: {:?}",
                values
            );
        }
    }

    #[test]
    fn search_trees_are_deterministic_distributions(
        seed in any::<u64>(),
        n_states in 2usize..8,
        n_actions in 2usize..4,
        iterations in 20usize..150,
    ) {
        use rqlab::mcts::{plan, tree_policy_distribution, MctsParams};
        let mdp = small_mdp(seed, n_states, n_actions, 0.9);
        let prior = random_policy(seed, n_states, n_actions);
        let params = MctsParams::<f64>::default()
            .with_iter_max(iterations)
            .with_horizon(4)
            .with_gamma(mdp.discount());
        let root = seed as usize % n_states;
        let mut rng_a = ChaCha8Rng::seed_from_u64(seed);
        let mut rng_b = ChaCha8Rng::seed_from_u64(seed);
        let (tree_a, action_a) = plan(root, &mdp, &prior, &params, &mut rng_a).unwrap();
        let (tree_b, action_b) = plan(root, &mdp, &prior, &params, &mut rng_b).unwrap();
        prop_assert_eq!(action_a, action_b);
        prop_assert_eq!(tree_a.len(), tree_b.len());
        prop_assert!(action_a < n_actions);
        for node in tree_a.nodes() {
            let dist = tree_policy_distribution(node, &prior, &params);
            let total: f64 = dist.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-9);
            prop_assert!(dist.iter().all(|&p| p >= 0.0 && p.is_finite()));
        }
    }

    #[test]
    fn rollouts_are_seeded_and_capped(
        env_index in 0usize..3,
        seed in any::<u64>(),
    ) {
        let name = ["bandit-2", "two-state-loop", "centering-chain"][env_index];
        let spec = EnvSpec::by_name(name).unwrap();
        let (_, mdp) = make_env::<f64>(&spec).unwrap();
        let policy = PolicyTable::<f64>::uniform(mdp.n_states(), mdp.n_actions());
        let run = |s: u64| {
            let (mut env, _) = make_env::<f64>(&spec).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            rollout_episode(&mut env, &policy, &mut rng).unwrap()
        };
        let first = run(seed);
        let second = run(seed);
        prop_assert_eq!(first.steps.len(), second.steps.len());
        prop_assert_eq!(first.final_state, second.final_state);
        prop_assert!((first.addon_return() - second.addon_return()).abs() == 0.0);
        prop_assert!(first.steps.len() <= spec.episode_cap());

        let metric = compute_task_metric(&first, &spec).unwrap();
        if name == "centering-chain" {
            prop_assert!((0.0..=1.0).contains(&metric.value));
        }
    }

    #[test]
    fn experiment_configs_round_trip_through_json(
        episodes in 1usize..5000,
        seed_count in 1usize..4,
        alpha in 0.2f64..3.0,
        noise in 0.0f64..1.0,
        use_perturbed in any::<bool>(),
    ) {
        use rqlab::harness::{
            EvaluationSpec, ExperimentConfig, MethodSpec, OutputSpec, PriorSpec,
        };
        let config = ExperimentConfig {
            env: EnvSpec::by_name("two-state-loop").unwrap(),
            prior: if use_perturbed {
                PriorSpec::Perturbed { alpha, noise_scale: noise, seed: 3 }
            } else {
                PriorSpec::Oracle { alpha }
            },
            methods: vec![
                MethodSpec::RqlExact {},
                MethodSpec::Greedy { lambda: 0.5 },
                MethodSpec::KlReward { beta: 1.0, damping: 0.5, outer_iters: 100 },
            ],
            customization: CustomizationParams::default(),
            evaluation: EvaluationSpec {
                episodes,
                seeds: (0..seed_count as u64).collect(),
            },
            output: OutputSpec::default(),
        };
        let text = serde_json::to_string_pretty(&config).unwrap();
        let back = ExperimentConfig::from_json_str(&text).unwrap();
        prop_assert_eq!(back, config);
    }
}
