//! Residual policy customization.
//!
//! Given a prior policy `π` that is soft-optimal for some unknown basic
//! reward at temperature `α`, and an add-on reward `r_R` describing what
//! should change, the customized task is the maximum-entropy problem for
//! `ω·r_basic + r_R` at temperature `α̂`. Its soft value `Q̂` decomposes as
//! `Q̂ = Q_R + ω·Q*`, and the residual part can be found *without* the basic
//! reward or `Q*`: `Q_R` is the unique fixed point of
//!
//! ```text
//! Q_R(s,a) = r_R(s,a) + γ · E_{s'}[ α̂ · lse_{a'}( (Q_R(s',a') + ω'·ln π(a'|s')) / α̂ ) ]
//! ```
//!
//! where `lse` is log-sum-exp and `ω' = ω·α` collapses the two prior-side
//! hyperparameters into one. The customized policy is then
//! `π̂(a|s) ∝ exp( (Q_R(s,a) + ω'·ln π(a|s)) / α̂ )`.
//!
//! Three routes to that fixed point are provided:
//!
//! * [`residual_soft_q_iteration`] — synchronous sweeps of the contraction
//!   above (model-based, exact up to the stopping tolerance);
//! * [`residual_soft_policy_iteration`] — alternating linear policy
//!   evaluation and softmax improvement (model-based);
//! * [`residual_soft_q_learning`] — sample-based temporal-difference
//!   learning against a black-box [`Environment`], with replay and a
//!   periodically synced target table.
//!
//! Setting `ω' = 0` ignores the prior entirely (plain soft Q-iteration on
//! the add-on reward); setting `r_R ≡ 0` with `ω' = α̂` reproduces the prior
//! exactly, with `Q_R ≡ 0` as the fixed point.

use std::collections::VecDeque;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{DiscreteMdp, PolicyTable, QTable, RewardSelector};
use crate::scalar::{scaled_log_sum_exp, softmax_into, Scalar};
use crate::sim::Environment;
use crate::soft::{convergence_threshold, jacobi_fixed_point, SolveStats};

/// Hyperparameters of the customized task.
///
/// Deserialization fills omitted fields from [`Default`], so configuration
/// files only need to spell out what they change.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar", default)]
pub struct CustomizationParams<T: Scalar> {
    /// Prior-trust weight `ω' = ω·α`. Zero ignores the prior; larger values
    /// pull the customized policy towards it.
    pub omega_prime: T,
    /// Entropy temperature `α̂` of the customized task (must be positive).
    pub alpha_hat: T,
    /// Discount used by sample-based learners, which cannot read it off a
    /// model. Model-based solvers use the model's own discount instead.
    pub gamma: T,
    /// Sup-norm accuracy of the returned fixed point.
    pub tol: T,
    /// Sweep (or outer-iteration) budget before giving up.
    pub max_iter: usize,
}

impl<T: Scalar> Default for CustomizationParams<T> {
    fn default() -> Self {
        CustomizationParams {
            omega_prime: T::one(),
            alpha_hat: T::one(),
            gamma: T::of(0.99),
            tol: T::of(1e-8),
            max_iter: 100_000,
        }
    }
}

impl<T: Scalar> CustomizationParams<T> {
    pub fn with_omega_prime(mut self, omega_prime: T) -> Self {
        self.omega_prime = omega_prime;
        self
    }

    pub fn with_alpha_hat(mut self, alpha_hat: T) -> Self {
        self.alpha_hat = alpha_hat;
        self
    }

    pub fn with_gamma(mut self, gamma: T) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_tol(mut self, tol: T) -> Self {
        self.tol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.omega_prime.is_finite() || self.omega_prime < T::zero() {
            return Err(Error::InvalidArgument(format!(
                "prior-trust weight must be finite and non-negative, got {}",
                self.omega_prime
            )));
        }
        if !self.alpha_hat.is_finite() || self.alpha_hat <= T::zero() {
            return Err(Error::InvalidArgument(format!(
                "temperature must be finite and positive, got {}",
                self.alpha_hat
            )));
        }
        if !self.gamma.is_finite() || self.gamma < T::zero() || self.gamma >= T::one() {
            return Err(Error::InvalidArgument(format!(
                "discount must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        if !self.tol.is_finite() || self.tol <= T::zero() {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be finite and positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument(
                "iteration budget must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Residual action values `Q_R = Q̂ − ω·Q*`.
///
/// A thin wrapper around [`QTable`] so signatures distinguish residual
/// tables from full soft value tables; serializes exactly like the inner
/// table (nested row arrays).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent, bound = "T: Scalar")]
pub struct ResidualQTable<T: Scalar> {
    pub values: QTable<T>,
}

impl<T: Scalar> ResidualQTable<T> {
    pub fn new(values: QTable<T>) -> Self {
        ResidualQTable { values }
    }

    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        ResidualQTable {
            values: QTable::zeros(n_states, n_actions),
        }
    }
}

/// Per-state rows of `ω'·ln π(a|s)`; the prior must be strictly positive.
fn log_prior_table<T: Scalar>(prior: &PolicyTable<T>, omega_prime: T) -> Result<Vec<Vec<T>>> {
    prior.validate()?;
    Ok((0..prior.n_states())
        .map(|s| prior.row(s).iter().map(|&p| omega_prime * p.ln()).collect())
        .collect())
}

fn check_prior_shape<T: Scalar>(mdp: &DiscreteMdp<T>, prior: &PolicyTable<T>) -> Result<()> {
    if prior.n_states() != mdp.n_states() || prior.n_actions() != mdp.n_actions() {
        return Err(Error::DimensionMismatch(format!(
            "prior policy is {}x{} but the model is {}x{}",
            prior.n_states(),
            prior.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    Ok(())
}

/// Solves the residual fixed point by synchronous sweeps; see the module
/// docs for the update rule. Convergence diagnostics are discarded.
pub fn residual_soft_q_iteration<T: Scalar>(
    mdp: &DiscreteMdp<T>,
    prior: &PolicyTable<T>,
    params: &CustomizationParams<T>,
) -> Result<ResidualQTable<T>> {
    residual_soft_q_iteration_with_stats(mdp, prior, params).map(|(q, _)| q)
}

/// As [`residual_soft_q_iteration`], also returning per-sweep residuals.
pub fn residual_soft_q_iteration_with_stats<T: Scalar>(
    mdp: &DiscreteMdp<T>,
    prior: &PolicyTable<T>,
    params: &CustomizationParams<T>,
) -> Result<(ResidualQTable<T>, SolveStats<T>)> {
    params.validate()?;
    check_prior_shape(mdp, prior)?;
    let log_prior = log_prior_table(prior, params.omega_prime)?;
    let rewards = crate::mdp::compose_reward(mdp, RewardSelector::Addon)?;
    let alpha_hat = params.alpha_hat;
    let n_actions = mdp.n_actions();
    let threshold = convergence_threshold(params.tol, mdp.discount());
    let (values, stats) = jacobi_fixed_point(
        mdp,
        &rewards,
        threshold,
        params.max_iter,
        "residual soft Q-iteration",
        move |q, s| {
            let mut shifted = vec![T::zero(); n_actions];
            for (a, slot) in shifted.iter_mut().enumerate() {
                *slot = q.get(s, a) + log_prior[s][a];
            }
            scaled_log_sum_exp(&shifted, alpha_hat)
        },
    )?;
    Ok((ResidualQTable::new(values), stats))
}

/// Customized policy `π̂(a|s) ∝ exp((Q_R(s,a) + ω'·ln π(a|s)) / α̂)`.
pub fn residual_policy<T: Scalar>(
    q_r: &ResidualQTable<T>,
    prior: &PolicyTable<T>,
    params: &CustomizationParams<T>,
) -> Result<PolicyTable<T>> {
    params.validate()?;
    let q = &q_r.values;
    if prior.n_states() != q.n_states() || prior.n_actions() != q.n_actions() {
        return Err(Error::DimensionMismatch(format!(
            "prior policy is {}x{} but the residual table is {}x{}",
            prior.n_states(),
            prior.n_actions(),
            q.n_states(),
            q.n_actions()
        )));
    }
    if !q.all_finite() {
        return Err(Error::InvalidArgument(
            "residual table contains non-finite values".into(),
        ));
    }
    let log_prior = log_prior_table(prior, params.omega_prime)?;
    let mut flat = Vec::with_capacity(q.n_states() * q.n_actions());
    let mut shifted = vec![T::zero(); q.n_actions()];
    let mut probs = vec![T::zero(); q.n_actions()];
    for (s, log_row) in log_prior.iter().enumerate() {
        for ((a, slot), lp) in shifted.iter_mut().enumerate().zip(log_row) {
            *slot = q.get(s, a) + *lp;
        }
        softmax_into(&shifted, params.alpha_hat, &mut probs);
        flat.extend_from_slice(&probs);
    }
    Ok(PolicyTable::from_raw(
        q.n_states(),
        q.n_actions(),
        flat,
        Some(params.alpha_hat),
    ))
}

/// Outcome of one policy-iteration run: the residual table of the final
/// policy, the policy itself, and every improvement snapshot (first entry is
/// the initial policy, last is the returned one).
pub struct PolicyIterationTrace<T: Scalar> {
    pub q_r: ResidualQTable<T>,
    pub policy: PolicyTable<T>,
    pub snapshots: Vec<PolicyTable<T>>,
}

/// Solves the customized task by alternating residual policy evaluation and
/// softmax improvement.
///
/// Evaluation solves the linear fixed point
///
/// ```text
/// Q_R(s,a) = r_R(s,a) + γ · E_{s'} E_{a'∼π̂}[ Q_R(s',a') + ω'·ln π(a'|s') − α̂·ln π̂(a'|s') ]
/// ```
///
/// and improvement replaces `π̂` by [`residual_policy`] of the evaluated
/// table. Iteration starts from the prior and stops once an improvement
/// step moves the policy by at most `params.tol` in sup norm.
pub fn residual_soft_policy_iteration<T: Scalar>(
    mdp: &DiscreteMdp<T>,
    prior: &PolicyTable<T>,
    params: &CustomizationParams<T>,
) -> Result<(ResidualQTable<T>, PolicyTable<T>)> {
    residual_soft_policy_iteration_traced(mdp, prior, params).map(|trace| (trace.q_r, trace.policy))
}

/// As [`residual_soft_policy_iteration`], keeping every intermediate policy
/// for diagnostics (e.g. checking monotone improvement).
pub fn residual_soft_policy_iteration_traced<T: Scalar>(
    mdp: &DiscreteMdp<T>,
    prior: &PolicyTable<T>,
    params: &CustomizationParams<T>,
) -> Result<PolicyIterationTrace<T>> {
    params.validate()?;
    check_prior_shape(mdp, prior)?;
    let log_prior = log_prior_table(prior, params.omega_prime)?;
    let rewards = crate::mdp::compose_reward(mdp, RewardSelector::Addon)?;
    let threshold = convergence_threshold(params.tol, mdp.discount());
    let alpha_hat = params.alpha_hat;

    let mut policy = prior.clone();
    let mut snapshots = vec![policy.clone()];
    let mut last_gap = T::infinity();
    for _ in 0..params.max_iter {
        // Policy evaluation: expected one-step payoff of π̂ at each state,
        // including the prior-trust and entropy terms.
        let eval_policy = policy.clone();
        let log_prior_ref = &log_prior;
        let (q_r, _) = jacobi_fixed_point(
            mdp,
            &rewards,
            threshold,
            params.max_iter,
            "residual policy evaluation",
            move |q, s| {
                let mut value = T::zero();
                for (a, &p) in eval_policy.row(s).iter().enumerate() {
                    value += p * (q.get(s, a) + log_prior_ref[s][a] - alpha_hat * p.ln());
                }
                value
            },
        )?;
        let q_r = ResidualQTable::new(q_r);
        let improved = residual_policy(&q_r, prior, params)?;
        last_gap = improved.sup_norm_diff(&policy);
        policy = improved;
        snapshots.push(policy.clone());
        if last_gap <= params.tol {
            return Ok(PolicyIterationTrace {
                q_r,
                policy,
                snapshots,
            });
        }
    }
    Err(Error::NonConvergence {
        what: "residual soft policy iteration",
        iterations: params.max_iter,
        residual: last_gap.to64(),
    })
}

/// How the sample-based learner explores: it acts with the current
/// customized policy mixed with an `ε`-uniform component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar", default)]
pub struct Exploration<T: Scalar> {
    /// Probability mass given to the uniform policy (in `[0, 1]`).
    pub epsilon_uniform: T,
}

impl<T: Scalar> Default for Exploration<T> {
    fn default() -> Self {
        Exploration {
            epsilon_uniform: T::of(0.05),
        }
    }
}

/// Schedule and capacity knobs of the sample-based learner.
///
/// Deserialization fills omitted fields from [`Default`], so configuration
/// files only need to spell out what they change.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar", default)]
pub struct TdLearnerParams<T: Scalar> {
    /// Initial step size `lr₀`; the step size for the `n`-th update of a
    /// table entry is `lr₀ / (1 + n/10000)`.
    pub learning_rate: T,
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub replay_capacity: usize,
    /// Transitions sampled (with replacement) from replay after every
    /// environment step; no updates happen until the buffer holds a batch.
    pub batch_size: usize,
    /// Environment steps between hard copies of the online table into the
    /// bootstrap target table.
    pub target_sync_interval: usize,
    pub exploration: Exploration<T>,
    /// When present, the per-episode learning curve records the sup-norm gap
    /// between the online table and this reference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_reference: Option<QTable<T>>,
}

impl<T: Scalar> Default for TdLearnerParams<T> {
    fn default() -> Self {
        TdLearnerParams {
            learning_rate: T::of(0.5),
            episodes: 2000,
            steps_per_episode: 60,
            replay_capacity: 10_000,
            batch_size: 32,
            target_sync_interval: 500,
            exploration: Exploration::default(),
            exact_reference: None,
        }
    }
}

impl<T: Scalar> TdLearnerParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= T::zero() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and positive, got {}",
                self.learning_rate
            )));
        }
        if self.episodes == 0 || self.steps_per_episode == 0 {
            return Err(Error::InvalidArgument(
                "episode and step budgets must be positive".into(),
            ));
        }
        if self.replay_capacity == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "replay capacity and batch size must be positive".into(),
            ));
        }
        if self.batch_size > self.replay_capacity {
            return Err(Error::InvalidArgument(format!(
                "batch size {} exceeds replay capacity {}",
                self.batch_size, self.replay_capacity
            )));
        }
        if self.target_sync_interval == 0 {
            return Err(Error::InvalidArgument(
                "target sync interval must be positive".into(),
            ));
        }
        let eps = self.exploration.epsilon_uniform;
        if !eps.is_finite() || eps < T::zero() || eps > T::one() {
            return Err(Error::InvalidArgument(format!(
                "exploration mix must lie in [0, 1], got {eps}"
            )));
        }
        Ok(())
    }
}

/// One per-episode record of the learner's progress. Returns are raw
/// (undiscounted) sums over the episode as acted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CurvePoint<T: Scalar> {
    pub episode_index: usize,
    pub addon_return: T,
    pub basic_return: T,
    /// Sup-norm distance to the exact reference table, when one was given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sup_norm_gap_to_exact: Option<T>,
}

/// Per-episode learning diagnostics, exportable as CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent, bound = "T: Scalar")]
pub struct LearningCurve<T: Scalar> {
    pub points: Vec<CurvePoint<T>>,
}

impl<T: Scalar> LearningCurve<T> {
    /// CSV rendering with a fixed header; the gap column is empty when no
    /// reference table was supplied.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("episode_index,addon_return,basic_return,sup_norm_gap_to_exact\n");
        for p in &self.points {
            let gap = match p.sup_norm_gap_to_exact {
                Some(g) => format!("{g}"),
                None => String::new(),
            };
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.episode_index, p.addon_return, p.basic_return, gap
            ));
        }
        out
    }
}

struct Replay<T: Scalar> {
    entries: VecDeque<Transition<T>>,
    capacity: usize,
}

#[derive(Clone, Copy)]
struct Transition<T: Scalar> {
    state: usize,
    action: usize,
    addon_reward: T,
    next_state: usize,
    /// True when `next_state` is a task terminal: the bootstrap target is
    /// zero there. Step-cap truncation leaves this false.
    next_terminal: bool,
}

impl<T: Scalar> Replay<T> {
    fn new(capacity: usize) -> Self {
        Replay {
            entries: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    fn push(&mut self, t: Transition<T>) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(t);
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Transition<T> {
        self.entries[rng.gen_range(0..self.entries.len())]
    }
}

/// Learns the residual fixed point from environment interaction alone.
///
/// Acting uses the customized policy of the current online table mixed with
/// `ε`-uniform exploration; every step pushes the observed transition into a
/// bounded replay buffer and then applies `batch_size` stochastic updates
///
/// ```text
/// Q_R(s,a) ← (1−lr)·Q_R(s,a) + lr·[ r_R + γ · α̂·lse_{a'}((Q̄_R(s',a') + ω'·ln π(a'|s'))/α̂) ]
/// ```
///
/// against the frozen target table `Q̄_R`, which is hard-synced from the
/// online table every `target_sync_interval` environment steps. The
/// bootstrap term is zero when `s'` is a task terminal. The step size
/// decays per table entry as `lr₀/(1 + n/10000)` over that entry's update
/// count `n`. All randomness flows through `rng`, so a fixed seed
/// reproduces the run (and its learning curve) bit for bit.
pub fn residual_soft_q_learning<T: Scalar>(
    env: &mut dyn Environment<T>,
    prior: &PolicyTable<T>,
    params: &CustomizationParams<T>,
    learner: &TdLearnerParams<T>,
    rng: &mut dyn RngCore,
) -> Result<(ResidualQTable<T>, LearningCurve<T>)> {
    params.validate()?;
    learner.validate()?;
    let n_states = env.n_states();
    let n_actions = env.n_actions();
    if prior.n_states() != n_states || prior.n_actions() != n_actions {
        return Err(Error::DimensionMismatch(format!(
            "prior policy is {}x{} but the environment is {}x{}",
            prior.n_states(),
            prior.n_actions(),
            n_states,
            n_actions
        )));
    }
    if let Some(reference) = &learner.exact_reference {
        if reference.n_states() != n_states || reference.n_actions() != n_actions {
            return Err(Error::DimensionMismatch(format!(
                "reference table is {}x{} but the environment is {}x{}",
                reference.n_states(),
                reference.n_actions(),
                n_states,
                n_actions
            )));
        }
    }
    let log_prior = log_prior_table(prior, params.omega_prime)?;
    let alpha_hat = params.alpha_hat;
    let gamma = params.gamma;
    let eps = learner.exploration.epsilon_uniform;
    let uniform = T::one() / T::of(n_actions as f64);

    let mut online = QTable::<T>::zeros(n_states, n_actions);
    let mut target = online.clone();
    let mut update_counts = vec![0u64; n_states * n_actions];
    let mut replay = Replay::new(learner.replay_capacity);
    let mut points = Vec::with_capacity(learner.episodes);
    let mut behavior = vec![T::zero(); n_actions];
    let mut shifted = vec![T::zero(); n_actions];
    let mut steps_seen: usize = 0;

    for episode_index in 0..learner.episodes {
        let mut state = env.reset(rng);
        let mut addon_return = T::zero();
        let mut basic_return = T::zero();
        for _ in 0..learner.steps_per_episode {
            // Behavior policy: customized policy of the online table, mixed
            // with ε-uniform.
            for (a, slot) in shifted.iter_mut().enumerate() {
                *slot = online.get(state, a) + log_prior[state][a];
            }
            softmax_into(&shifted, alpha_hat, &mut behavior);
            if eps > T::zero() {
                for p in behavior.iter_mut() {
                    *p = (T::one() - eps) * *p + eps * uniform;
                }
            }
            let action = crate::mdp::sample_index(&behavior, rng);

            let outcome = env.step(action, rng)?;
            addon_return += outcome.addon_reward;
            basic_return += outcome.basic_reward;
            replay.push(Transition {
                state,
                action,
                addon_reward: outcome.addon_reward,
                next_state: outcome.state,
                next_terminal: outcome.reached_terminal(),
            });
            state = outcome.state;
            steps_seen += 1;

            if replay.entries.len() >= learner.batch_size {
                for _ in 0..learner.batch_size {
                    let t = replay.sample(rng);
                    let bootstrap = if t.next_terminal {
                        T::zero()
                    } else {
                        for (a, slot) in shifted.iter_mut().enumerate() {
                            *slot = target.get(t.next_state, a) + log_prior[t.next_state][a];
                        }
                        scaled_log_sum_exp(&shifted, alpha_hat)
                    };
                    let y = t.addon_reward + gamma * bootstrap;
                    let cell = t.state * n_actions + t.action;
                    let n = update_counts[cell];
                    let lr = learner.learning_rate / (T::one() + T::of(n as f64) / T::of(10_000.0));
                    let old = online.get(t.state, t.action);
                    online.set(t.state, t.action, (T::one() - lr) * old + lr * y);
                    update_counts[cell] = n + 1;
                }
            }
            if steps_seen.is_multiple_of(learner.target_sync_interval) {
                target = online.clone();
            }
            if outcome.done.is_some() {
                break;
            }
        }
        points.push(CurvePoint {
            episode_index,
            addon_return,
            basic_return,
            sup_norm_gap_to_exact: learner
                .exact_reference
                .as_ref()
                .map(|reference| online.sup_norm_diff(reference)),
        });
    }
    Ok((ResidualQTable::new(online), LearningCurve { points }))
}
