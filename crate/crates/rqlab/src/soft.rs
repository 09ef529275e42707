//! Exact entropy-regularized solvers.
//!
//! The maximum-entropy objective values a policy by reward plus α-weighted
//! entropy; its optimal Q-function satisfies the soft Bellman equation
//!
//! ```text
//! Q*(s,a) = r(s,a) + γ·E_{s'}[ α·ln Σ_{a'} exp(Q*(s',a')/α) ]
//! ```
//!
//! and the optimal policy is the Boltzmann distribution `π ∝ exp(Q*/α)`.
//! These identities make the fixed point checkable to machine precision:
//! `Q*(s,a) − α·ln π(a|s)` is constant across actions within each state and
//! equals `α·ln Z_s`.
//!
//! Solvers run synchronous (Jacobi) sweeps — every update reads only the
//! previous iterate — so iteration counts are deterministic and each sweep is
//! a γ-contraction in sup-norm. Convergence is declared when the gap between
//! successive iterates drops to `tol·(1−γ)/γ` (plain `tol` when `γ = 0`),
//! which converts the iterate gap into a true `‖Q − Q*‖∞ ≤ tol` bound.
//! Terminal states contribute zero continuation value: an episodic task that
//! has ended accrues neither reward nor entropy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{compose_reward, DiscreteMdp, PolicyTable, QTable, RewardSelector};
use crate::scalar::{scaled_log_sum_exp, softmax_into, Scalar};

/// Temperature and stopping rule for the exact solvers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields, default)]
pub struct SoftSolverParams<T: Scalar> {
    /// Entropy temperature α > 0.
    pub alpha: T,
    /// Sup-norm error bound on the returned table.
    pub tol: T,
    /// Sweep cap before the solver reports non-convergence.
    pub max_iter: usize,
}

impl<T: Scalar> Default for SoftSolverParams<T> {
    fn default() -> Self {
        SoftSolverParams {
            alpha: T::one(),
            tol: T::of(1e-8),
            max_iter: 100_000,
        }
    }
}

impl<T: Scalar> SoftSolverParams<T> {
    pub fn with_alpha(alpha: T) -> Self {
        SoftSolverParams {
            alpha,
            ..Self::default()
        }
    }

    pub fn with_tol(mut self, tol: T) -> Self {
        self.tol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > T::zero() && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.tol > T::zero() && self.tol.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-run diagnostics of a fixed-point solve.
#[derive(Clone, Debug)]
pub struct SolveStats<T: Scalar> {
    /// Sweeps executed (including the converging one).
    pub iterations: usize,
    /// Sup-norm gap between successive iterates, one entry per sweep.
    pub residuals: Vec<T>,
}

/// Iterate-gap threshold that guarantees `‖Q − Q*‖∞ ≤ tol` for a
/// γ-contraction; degenerates to `tol` itself when γ = 0 (one exact sweep).
pub(crate) fn convergence_threshold<T: Scalar>(tol: T, gamma: T) -> T {
    if gamma > T::zero() {
        tol * (T::one() - gamma) / gamma
    } else {
        tol
    }
}

/// Runs synchronous sweeps of `Q ← r + γ·P·v` where `v[s]` is produced by
/// `state_value` from the previous iterate (zero at terminals). Shared by the
/// soft solvers and the residual operators.
pub(crate) fn jacobi_fixed_point<T: Scalar>(
    mdp: &DiscreteMdp<T>,
    rewards: &QTable<T>,
    threshold: T,
    max_iter: usize,
    what: &'static str,
    state_value: impl Fn(&QTable<T>, usize) -> T,
) -> Result<(QTable<T>, SolveStats<T>)> {
    let (n_states, n_actions) = (mdp.n_states(), mdp.n_actions());
    let gamma = mdp.discount();
    let mut q = QTable::zeros(n_states, n_actions);
    let mut values = vec![T::zero(); n_states];
    let mut residuals = Vec::new();
    for iteration in 1..=max_iter {
        for (s, v) in values.iter_mut().enumerate() {
            *v = if mdp.is_terminal(s) {
                T::zero()
            } else {
                state_value(&q, s)
            };
        }
        let mut next = QTable::zeros(n_states, n_actions);
        for s in 0..n_states {
            for a in 0..n_actions {
                let mut acc = rewards.get(s, a);
                for &(succ, p) in mdp.successors(s, a) {
                    acc += gamma * p * values[succ];
                }
                next.set(s, a, acc);
            }
        }
        let gap = next.sup_norm_diff(&q);
        residuals.push(gap);
        q = next;
        if gap <= threshold {
            return Ok((
                q,
                SolveStats {
                    iterations: iteration,
                    residuals,
                },
            ));
        }
    }
    Err(Error::NonConvergence {
        what,
        iterations: max_iter,
        residual: residuals.last().map_or(f64::NAN, |r| r.to64()),
    })
}

/// Solves the soft Bellman fixed point for the selected reward channel and
/// returns the optimal soft Q-table with `‖Q − Q*‖∞ ≤ tol`.
pub fn soft_value_iteration<T: Scalar>(
    mdp: &DiscreteMdp<T>,
    selector: RewardSelector<T>,
    params: &SoftSolverParams<T>,
) -> Result<QTable<T>> {
    soft_value_iteration_with_stats(mdp, selector, params).map(|(q, _)| q)
}

/// [`soft_value_iteration`] plus per-sweep residuals for convergence
/// diagnostics.
pub fn soft_value_iteration_with_stats<T: Scalar>(
    mdp: &DiscreteMdp<T>,
    selector: RewardSelector<T>,
    params: &SoftSolverParams<T>,
) -> Result<(QTable<T>, SolveStats<T>)> {
    params.validate()?;
    let rewards = compose_reward(mdp, selector)?;
    let alpha = params.alpha;
    jacobi_fixed_point(
        mdp,
        &rewards,
        convergence_threshold(params.tol, mdp.discount()),
        params.max_iter,
        "soft value iteration",
        move |q, s| scaled_log_sum_exp(q.row(s), alpha),
    )
}

/// As [`soft_value_iteration`], but over an explicit per-pair reward table
/// instead of a channel selector. Lets callers solve synthesized rewards
/// (e.g. policy-dependent penalties) with the same solver and convention:
/// terminal states keep zero continuation value whatever their reward rows
/// say.
pub fn soft_value_iteration_with_rewards<T: Scalar>(
    mdp: &DiscreteMdp<T>,
    rewards: &QTable<T>,
    params: &SoftSolverParams<T>,
) -> Result<QTable<T>> {
    params.validate()?;
    if rewards.n_states() != mdp.n_states() || rewards.n_actions() != mdp.n_actions() {
        return Err(Error::DimensionMismatch(format!(
            "reward table is {}×{}, model is {}×{}",
            rewards.n_states(),
            rewards.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    if !rewards.all_finite() {
        return Err(Error::InvalidArgument(
            "reward table contains non-finite entries".into(),
        ));
    }
    let alpha = params.alpha;
    jacobi_fixed_point(
        mdp,
        rewards,
        convergence_threshold(params.tol, mdp.discount()),
        params.max_iter,
        "soft value iteration",
        move |q, s| scaled_log_sum_exp(q.row(s), alpha),
    )
    .map(|(q, _)| q)
}

/// Boltzmann policy `π(a|s) ∝ exp(Q(s,a)/α)`, computed with max-shift so it
/// stays strictly positive and normalized for arbitrary Q magnitudes.
pub fn boltzmann_policy<T: Scalar>(q: &QTable<T>, alpha: T) -> Result<PolicyTable<T>> {
    if !(alpha > T::zero() && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {alpha}"
        )));
    }
    if !q.all_finite() {
        return Err(Error::InvalidArgument(
            "Q-table contains non-finite entries".into(),
        ));
    }
    let (n_states, n_actions) = (q.n_states(), q.n_actions());
    let mut probs = vec![T::zero(); n_states * n_actions];
    for s in 0..n_states {
        softmax_into(
            q.row(s),
            alpha,
            &mut probs[s * n_actions..(s + 1) * n_actions],
        );
    }
    Ok(PolicyTable::from_raw(
        n_states,
        n_actions,
        probs,
        Some(alpha),
    ))
}

/// Log-partition `ln Z_s = ln Σ_a exp(Q(s,a)/α)` of one state's Boltzmann
/// normalizer.
pub fn log_partition<T: Scalar>(q: &QTable<T>, alpha: T, s: usize) -> Result<T> {
    if !(alpha > T::zero() && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {alpha}"
        )));
    }
    if s >= q.n_states() {
        return Err(Error::OutOfRange {
            what: "state",
            index: s,
            limit: q.n_states(),
        });
    }
    Ok(scaled_log_sum_exp(q.row(s), alpha) / alpha)
}

/// Evaluates a fixed stochastic policy under the entropy-augmented return:
/// the fixed point of
///
/// ```text
/// Q(s,a) = r(s,a) + γ·E_{s'} Σ_{a'} π(a'|s')·[Q(s',a') − α·ln π(a'|s')]
/// ```
///
/// The policy must have strictly positive support (`ln π` appears in the
/// backup).
pub fn soft_policy_evaluation<T: Scalar>(
    mdp: &DiscreteMdp<T>,
    selector: RewardSelector<T>,
    policy: &PolicyTable<T>,
    params: &SoftSolverParams<T>,
) -> Result<QTable<T>> {
    soft_policy_evaluation_with_stats(mdp, selector, policy, params).map(|(q, _)| q)
}

/// [`soft_policy_evaluation`] plus per-sweep residuals.
pub fn soft_policy_evaluation_with_stats<T: Scalar>(
    mdp: &DiscreteMdp<T>,
    selector: RewardSelector<T>,
    policy: &PolicyTable<T>,
    params: &SoftSolverParams<T>,
) -> Result<(QTable<T>, SolveStats<T>)> {
    params.validate()?;
    policy.validate()?;
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
        return Err(Error::DimensionMismatch(format!(
            "policy is {}×{}, model is {}×{}",
            policy.n_states(),
            policy.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    let rewards = compose_reward(mdp, selector)?;
    let alpha = params.alpha;
    // Per-state entropy Σ_a −π·ln π is iterate-independent; precompute it.
    let entropies: Vec<T> = (0..mdp.n_states())
        .map(|s| policy.row(s).iter().map(|&p| -p * p.ln()).sum())
        .collect();
    let policy = policy.clone();
    jacobi_fixed_point(
        mdp,
        &rewards,
        convergence_threshold(params.tol, mdp.discount()),
        params.max_iter,
        "soft policy evaluation",
        move |q, s| {
            let expected_q: T = policy
                .row(s)
                .iter()
                .zip(q.row(s))
                .map(|(&p, &qa)| p * qa)
                .sum();
            expected_q + alpha * entropies[s]
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::mdp::{PolicyTable, QTable};
    use approx::assert_relative_eq;

    fn tight<T: Scalar>(alpha: f64) -> SoftSolverParams<T> {
        SoftSolverParams {
            alpha: T::of(alpha),
            tol: T::of(1e-10),
            max_iter: 200_000,
        }
    }

    #[test]
    fn bandit_basic_q_is_the_reward_row() {
        let mdp = fixtures::bandit2::<f64>();
        let q = soft_value_iteration(&mdp, RewardSelector::Basic, &tight(1.0)).unwrap();
        assert_eq!(q.row(0), &[1.0, 0.0]);
        assert_eq!(q.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn two_state_loop_basic_q_matches_reference_fixed_point() {
        // Reference values from an independent fixed-point run at 1e-12.
        let mdp = fixtures::two_state_loop::<f64>();
        let q = soft_value_iteration(&mdp, RewardSelector::Basic, &tight(1.0)).unwrap();
        assert_relative_eq!(q.get(0, 0), 11.529_824_471_240, epsilon = 1e-8);
        assert_relative_eq!(q.get(0, 1), 9.843_946_747_099, epsilon = 1e-8);
        assert_relative_eq!(q.get(1, 0), 9.843_946_747_099, epsilon = 1e-8);
        assert_relative_eq!(q.get(1, 1), 10.529_824_471_240, epsilon = 1e-8);
        // Analytic sanity envelope: standard value below, entropy bonus above.
        assert!(q.get(0, 0) >= 10.0);
        assert!(q.get(0, 0) <= (1.0 + f64::ln(2.0)) / 0.1);
    }

    #[test]
    fn zero_reward_model_has_pure_entropy_value() {
        let mut mdp = crate::mdp::DiscreteMdp::<f64>::new(3, 2, 0.9);
        mdp.set_transition(0, 0, &[(1, 0.5), (2, 0.5)]);
        mdp.set_transition(1, 1, &[(0, 1.0)]);
        let params = tight::<f64>(2.0);
        let q = soft_value_iteration(&mdp, RewardSelector::Basic, &params).unwrap();
        let expected = 2.0 * 0.9 * f64::ln(2.0) / 0.1;
        for s in 0..3 {
            for a in 0..2 {
                assert_relative_eq!(q.get(s, a), expected, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn bandit_boltzmann_policy_matches_softmax_of_rewards() {
        let mdp = fixtures::bandit2::<f64>();
        let q = soft_value_iteration(&mdp, RewardSelector::Basic, &tight(1.0)).unwrap();
        let pi = boltzmann_policy(&q, 1.0).unwrap();
        assert_relative_eq!(pi.prob(0, 0), 0.731_058_578_630, epsilon = 1e-9);
        assert_relative_eq!(pi.prob(0, 1), 0.268_941_421_370, epsilon = 1e-9);
    }

    #[test]
    fn constant_rows_give_uniform_policy() {
        let q = QTable::from_rows(vec![vec![3.7_f64, 3.7]]).unwrap();
        let pi = boltzmann_policy(&q, 1.0).unwrap();
        assert_relative_eq!(pi.prob(0, 0), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn high_temperature_flattens_the_policy() {
        let q = QTable::from_rows(vec![vec![1.0_f64, 0.0]]).unwrap();
        let pi = boltzmann_policy(&q, 100.0).unwrap();
        assert!((pi.prob(0, 0) - 0.5).abs() < 1e-2);
    }

    #[test]
    fn boltzmann_rejects_bad_temperature() {
        let q = QTable::from_rows(vec![vec![1.0_f64, 0.0]]).unwrap();
        assert!(boltzmann_policy(&q, 0.0).is_err());
        assert!(boltzmann_policy(&q, -1.0).is_err());
    }

    #[test]
    fn log_partition_of_bandit_row() {
        let q = QTable::from_rows(vec![vec![1.0_f64, 0.0]]).unwrap();
        let lnz = log_partition(&q, 1.0, 0).unwrap();
        assert_relative_eq!(lnz, 1.313_261_687_518, epsilon = 1e-10);
        let uniform = QTable::from_rows(vec![vec![0.0_f64, 0.0]]).unwrap();
        assert_relative_eq!(
            log_partition(&uniform, 1.0, 0).unwrap(),
            f64::ln(2.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn value_policy_partition_identity_holds_on_bandit() {
        // Q(s,a) − α·ln π(a|s) − α·ln Z_s = 0 for every action.
        let q = QTable::from_rows(vec![vec![1.0_f64, 0.0]]).unwrap();
        let alpha = 1.0;
        let pi = boltzmann_policy(&q, alpha).unwrap();
        let lnz = log_partition(&q, alpha, 0).unwrap();
        for a in 0..2 {
            let gap = q.get(0, a) - alpha * pi.prob(0, a).ln() - alpha * lnz;
            assert!(gap.abs() < 1e-12);
        }
    }

    #[test]
    fn log_partition_rejects_bad_inputs() {
        let q = QTable::from_rows(vec![vec![1.0_f64, 0.0]]).unwrap();
        assert!(log_partition(&q, 0.0, 0).is_err());
        assert!(log_partition(&q, 1.0, 5).is_err());
    }

    #[test]
    fn bandit_addon_evaluation_is_policy_independent() {
        let mdp = fixtures::bandit2::<f64>();
        for rows in [
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![vec![0.9, 0.1], vec![0.25, 0.75]],
        ] {
            let policy = PolicyTable::from_rows(rows).unwrap();
            let q =
                soft_policy_evaluation(&mdp, RewardSelector::Addon, &policy, &tight(1.0)).unwrap();
            assert_eq!(q.row(0), &[0.0, 1.0]);
        }
    }

    #[test]
    fn uniform_policy_on_zero_rewards_earns_pure_entropy() {
        let mut mdp = crate::mdp::DiscreteMdp::<f64>::new(2, 2, 0.9);
        mdp.set_transition(0, 0, &[(1, 1.0)]);
        mdp.set_transition(1, 0, &[(0, 1.0)]);
        let uniform = PolicyTable::uniform(2, 2);
        let q = soft_policy_evaluation(&mdp, RewardSelector::Basic, &uniform, &tight(1.0)).unwrap();
        let expected = 0.9 * 1.0 * f64::ln(2.0) / 0.1;
        for s in 0..2 {
            for a in 0..2 {
                assert_relative_eq!(q.get(s, a), expected, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn two_state_loop_addon_under_uniform_matches_reference() {
        // Reference values from an independent evaluation loop at 1e-12.
        let mdp = fixtures::two_state_loop::<f64>();
        let uniform = PolicyTable::uniform(2, 2);
        let q = soft_policy_evaluation(&mdp, RewardSelector::Addon, &uniform, &tight(1.0)).unwrap();
        assert_relative_eq!(q.get(0, 0), 8.713_324_625_039, epsilon = 1e-8);
        assert_relative_eq!(q.get(0, 1), 9.263_324_625_039, epsilon = 1e-8);
        assert_relative_eq!(q.get(1, 0), 8.263_324_625_039, epsilon = 1e-8);
        assert_relative_eq!(q.get(1, 1), 8.713_324_625_039, epsilon = 1e-8);
    }

    #[test]
    fn optimal_policy_evaluates_to_its_own_q() {
        let mdp = fixtures::two_state_loop::<f64>();
        let params = SoftSolverParams::<f64>::default();
        let q_star = soft_value_iteration(&mdp, RewardSelector::Basic, &params).unwrap();
        let pi = boltzmann_policy(&q_star, params.alpha).unwrap();
        let q_pi = soft_policy_evaluation(&mdp, RewardSelector::Basic, &pi, &params).unwrap();
        assert!(q_star.sup_norm_diff(&q_pi) <= 10.0 * params.tol.to64());
    }

    #[test]
    fn residual_sequence_is_monotone_after_first_sweep() {
        let mdp = fixtures::two_state_loop::<f64>();
        let (_, stats) =
            soft_value_iteration_with_stats(&mdp, RewardSelector::Basic, &tight(1.0)).unwrap();
        assert!(stats.iterations > 10);
        for pair in stats.residuals.windows(2).skip(1) {
            assert!(
                pair[1] <= pair[0] + 1e-15,
                "residual increased: {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    fn argmax_is_temperature_invariant_where_unique() {
        let mdp = fixtures::two_state_loop::<f64>();
        let argmax_rows = |alpha: f64| {
            let q = soft_value_iteration(&mdp, RewardSelector::Basic, &tight(alpha)).unwrap();
            (0..2)
                .map(|s| {
                    let row = q.row(s);
                    (0..2)
                        .max_by(|&i, &j| row[i].partial_cmp(&row[j]).unwrap())
                        .unwrap()
                })
                .collect::<Vec<_>>()
        };
        let reference = argmax_rows(1.0);
        for alpha in [0.25, 0.5, 2.0, 8.0] {
            assert_eq!(
                argmax_rows(alpha),
                reference,
                "ordering flipped at α={alpha}"
            );
        }
    }

    #[test]
    fn exhausted_iteration_budget_reports_non_convergence() {
        let mdp = fixtures::two_state_loop::<f64>();
        let params = SoftSolverParams {
            alpha: 1.0,
            tol: 1e-12,
            max_iter: 5,
        };
        match soft_value_iteration(&mdp, RewardSelector::Basic, &params) {
            Err(Error::NonConvergence {
                iterations,
                residual,
                ..
            }) => {
                assert_eq!(iterations, 5);
                assert!(residual > 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn evaluation_rejects_mismatched_policy_shape() {
        let mdp = fixtures::two_state_loop::<f64>();
        let policy = PolicyTable::uniform(3, 2);
        let err = soft_policy_evaluation(
            &mdp,
            RewardSelector::Basic,
            &policy,
            &SoftSolverParams::default(),
        );
        assert!(matches!(err, Err(Error::DimensionMismatch(_))));
    }
}
