//! Declarative experiment runner: build a prior, run every requested
//! customization method, evaluate all resulting policies over seeded
//! episode batches, and render a comparison table.
//!
//! Two contracts shape the design:
//!
//! - **Method-agnostic evaluation.** Every method — exact solver, TD
//!   learner, tree search, baseline — must ultimately produce a policy
//!   table, and every policy (the prior included) flows through the same
//!   [`evaluate_policy`] path. Cross-method metric differences therefore
//!   cannot come from evaluation code.
//! - **Determinism.** The full output is a pure function of the
//!   configuration. All randomness derives from the configured seeds
//!   through fixed, purpose-separated ChaCha streams: report row `i`
//!   evaluates on stream `i` of each seed, sample-based training of method
//!   `j` uses stream `2⁴⁰ + j` of the first seed, and per-state tree
//!   search uses streams above `2⁴¹`. Reruns are byte-identical, and
//!   adding a method never disturbs the episodes another method sees.
//!
//! Reported returns are undiscounted episodic sums (the customary way to
//! present episodic benchmarks); the solvers that *produce* the policies
//! optimize discounted objectives internally. Both conventions are stated
//! where they apply.

mod config;
mod report;

pub use config::{
    method_labels, EvaluationSpec, ExperimentConfig, MethodSpec, OutputFormat, OutputSpec,
    PriorSpec,
};
pub use report::{
    emit_report, format_significant, MetricsRecord, MetricsTable, CSV_FILE_NAME, CSV_HEADER,
    JSON_FILE_NAME,
};

use std::path::PathBuf;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::baselines::{
    greedy_customization, kl_augmented_rl, likelihood_augmented_rl, GreedyParams, KlRewardParams,
};
use crate::envs::{compute_task_metric, make_env, rollout_episode, EnvSpec};
use crate::error::{Error, Result};
use crate::mcts::{plan, tree_policy_distribution, MctsParams, SearchMode};
use crate::mdp::{DiscreteMdp, PolicyTable, RewardSelector};
use crate::residual::{
    residual_policy, residual_soft_policy_iteration, residual_soft_q_iteration,
    residual_soft_q_learning, CustomizationParams,
};
use crate::scalar::softmax_into;
use crate::soft::{boltzmann_policy, soft_value_iteration, SoftSolverParams};

/// Solver accuracy for prior construction; well below every report
/// tolerance so prior error never contaminates method comparisons.
const PRIOR_TOL: f64 = 1e-10;
const PRIOR_MAX_ITER: usize = 1_000_000;

/// ChaCha stream offsets separating training draws from evaluation draws
/// (streams `0..n_rows` belong to evaluation cells).
const TRAINING_STREAM_BASE: u64 = 1 << 40;
const SEARCH_STREAM_BASE: u64 = 1 << 41;
/// Stream stride between two search methods; must exceed the largest
/// enumerable state count.
const SEARCH_METHOD_STRIDE: u64 = 1 << 20;

// ---------------------------------------------------------------------------
// Prior construction
// ---------------------------------------------------------------------------

/// Builds the prior policy a configuration asks for.
///
/// `oracle` solves the basic-channel soft optimum at the requested
/// temperature; `perturbed` adds seeded Gaussian logit noise to that
/// oracle and renormalizes; `file` loads a policy table (nested row
/// arrays, strictly positive, normalized) and checks its shape against
/// the model.
pub fn build_prior(mdp: &DiscreteMdp<f64>, spec: &PriorSpec) -> Result<PolicyTable<f64>> {
    spec.validate()?;
    match spec {
        PriorSpec::Oracle { alpha } => oracle_policy(mdp, RewardSelector::Basic, *alpha),
        PriorSpec::Perturbed {
            alpha,
            noise_scale,
            seed,
        } => {
            let oracle = oracle_policy(mdp, RewardSelector::Basic, *alpha)?;
            Ok(perturb_logits(&oracle, *noise_scale, *seed))
        }
        PriorSpec::File { path } => {
            let text = std::fs::read_to_string(path)?;
            let policy: PolicyTable<f64> = serde_json::from_str(&text)?;
            if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
                return Err(Error::DimensionMismatch(format!(
                    "prior file {} holds a {}x{} policy but the environment is {}x{}",
                    path.display(),
                    policy.n_states(),
                    policy.n_actions(),
                    mdp.n_states(),
                    mdp.n_actions()
                )));
            }
            Ok(policy)
        }
    }
}

/// Boltzmann policy of the exact soft optimum for one reward channel.
fn oracle_policy(
    mdp: &DiscreteMdp<f64>,
    selector: RewardSelector<f64>,
    alpha: f64,
) -> Result<PolicyTable<f64>> {
    let solver = SoftSolverParams {
        alpha,
        tol: PRIOR_TOL,
        max_iter: PRIOR_MAX_ITER,
    };
    let q = soft_value_iteration(mdp, selector, &solver)?;
    boltzmann_policy(&q, alpha)
}

/// Adds `scale`-sized Gaussian noise to every logit and renormalizes each
/// row; zero scale reproduces the input up to renormalization round-off.
fn perturb_logits(policy: &PolicyTable<f64>, scale: f64, seed: u64) -> PolicyTable<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n_states, n_actions) = (policy.n_states(), policy.n_actions());
    let mut probs = vec![0.0; n_states * n_actions];
    let mut logits = vec![0.0; n_actions];
    for s in 0..n_states {
        for (a, slot) in logits.iter_mut().enumerate() {
            *slot = policy.prob(s, a).ln() + scale * standard_normal(&mut rng);
        }
        softmax_into(&logits, 1.0, &mut probs[s * n_actions..(s + 1) * n_actions]);
    }
    PolicyTable::from_raw(n_states, n_actions, probs, None)
}

/// One standard-normal draw by Box–Muller — a single use does not justify
/// a distributions dependency.
fn standard_normal(rng: &mut dyn RngCore) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        if u1 > 0.0 {
            let u2: f64 = rng.gen();
            return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
struct EpisodeStats {
    success: bool,
    basic: f64,
    addon: f64,
    metric: f64,
}

fn collect_episodes(
    spec: &EnvSpec,
    policy: &PolicyTable<f64>,
    episodes: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<EpisodeStats>> {
    let (mut sim, _) = make_env::<f64>(spec)?;
    let mut stats = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let trace = rollout_episode(&mut sim, policy, rng)?;
        let metric = compute_task_metric(&trace, spec)?;
        stats.push(EpisodeStats {
            success: spec.is_success(trace.terminated),
            basic: trace.basic_return(),
            addon: trace.addon_return(),
            metric: metric.value,
        });
    }
    Ok(stats)
}

fn mean_and_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let mut n = 0usize;
    let mut sum = 0.0;
    for v in values.clone() {
        n += 1;
        sum += v;
    }
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = sum / n as f64;
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / n as f64).sqrt())
}

fn summarize(label: &str, stats: &[EpisodeStats]) -> MetricsRecord {
    let n = stats.len();
    let successes = stats.iter().filter(|s| s.success).count();
    let (basic_mean, basic_std) = mean_and_std(stats.iter().map(|s| s.basic));
    let (addon_mean, addon_std) = mean_and_std(stats.iter().map(|s| s.addon));
    let (metric_mean, metric_std) = mean_and_std(stats.iter().map(|s| s.metric));
    MetricsRecord {
        policy_label: label.to_string(),
        success_rate: successes as f64 / n as f64,
        basic_reward_mean: basic_mean,
        basic_reward_std: basic_std,
        addon_reward_mean: addon_mean,
        addon_reward_std: addon_std,
        task_metric_mean: metric_mean,
        task_metric_std: metric_std,
        episodes: n,
    }
}

/// Rolls out `episodes` episodes of one policy on one task and aggregates
/// success rate, undiscounted per-channel returns, and the task metric
/// (mean ± population standard deviation; a single episode reports 0).
pub fn evaluate_policy(
    spec: &EnvSpec,
    policy: &PolicyTable<f64>,
    label: &str,
    episodes: usize,
    rng: &mut dyn RngCore,
) -> Result<MetricsRecord> {
    if episodes == 0 {
        return Err(Error::InvalidArgument(
            "evaluation needs at least one episode".into(),
        ));
    }
    let stats = collect_episodes(spec, policy, episodes, rng)?;
    Ok(summarize(label, &stats))
}

/// Parses the `RQLAB_THREADS` parallelism cap; unset means "no cap".
fn thread_cap() -> Option<usize> {
    parse_thread_cap(std::env::var("RQLAB_THREADS").ok())
}

fn parse_thread_cap(raw: Option<String>) -> Option<usize> {
    let raw = raw?;
    match raw.trim().parse::<usize>() {
        Ok(0) => {
            log::warn!("RQLAB_THREADS=0 makes no sense; running uncapped");
            None
        }
        Ok(n) => Some(n),
        Err(_) => {
            log::warn!("RQLAB_THREADS={raw:?} is not a thread count; running uncapped");
            None
        }
    }
}

/// Runs `f` inside a thread pool capped at `RQLAB_THREADS` if the variable
/// is set, otherwise on the global pool.
fn with_thread_cap<R: Send>(f: impl Fn() -> R + Send + Sync) -> R {
    if let Some(n) = thread_cap() {
        match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => return pool.install(&f),
            Err(e) => {
                log::warn!("could not build a capped thread pool ({e}); using the global one")
            }
        }
    }
    f()
}

/// Evaluates every report row over every seed. (row × seed) cells run
/// concurrently, each owning its simulator and RNG stream; results are
/// pooled per row in seed order, so the outcome is independent of thread
/// count.
fn evaluate_rows(
    spec: &EnvSpec,
    rows: &[(String, PolicyTable<f64>)],
    evaluation: &EvaluationSpec,
) -> Result<Vec<MetricsRecord>> {
    let cells: Vec<(usize, u64)> = (0..rows.len())
        .flat_map(|row| evaluation.seeds.iter().map(move |&seed| (row, seed)))
        .collect();
    let per_cell: Vec<Vec<EpisodeStats>> = with_thread_cap(|| {
        cells
            .par_iter()
            .map(|&(row, seed)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(row as u64);
                collect_episodes(spec, &rows[row].1, evaluation.episodes, &mut rng)
            })
            .collect::<Result<_>>()
    })?;
    let n_seeds = evaluation.seeds.len();
    Ok(rows
        .iter()
        .enumerate()
        .map(|(row, (label, _))| {
            let pooled: Vec<EpisodeStats> = per_cell[row * n_seeds..(row + 1) * n_seeds]
                .iter()
                .flatten()
                .copied()
                .collect();
            summarize(label, &pooled)
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Method execution
// ---------------------------------------------------------------------------

/// Produces the policy a method specification describes.
///
/// All methods receive the same prior and shared hyperparameters; the
/// discount field of `params` should carry the environment model's
/// discount ([`run_experiment`] arranges this) so sample-based methods
/// bootstrap with the rate the exact solvers use. `method_index` and
/// `train_seed` pin the RNG streams of sample-based methods, keeping runs
/// reproducible.
pub fn build_method_policy(
    mdp: &DiscreteMdp<f64>,
    spec: &EnvSpec,
    prior: &PolicyTable<f64>,
    params: &CustomizationParams<f64>,
    method: &MethodSpec,
    method_index: usize,
    train_seed: u64,
) -> Result<PolicyTable<f64>> {
    match method {
        MethodSpec::RqlExact {} => {
            let q_r = residual_soft_q_iteration(mdp, prior, params)?;
            residual_policy(&q_r, prior, params)
        }
        MethodSpec::RqlSpi {} => {
            residual_soft_policy_iteration(mdp, prior, params).map(|(_, policy)| policy)
        }
        MethodSpec::RqlTd { learner } => {
            let (mut sim, _) = make_env::<f64>(spec)?;
            let mut rng = ChaCha8Rng::seed_from_u64(train_seed);
            rng.set_stream(TRAINING_STREAM_BASE + method_index as u64);
            let (q_r, _) = residual_soft_q_learning(&mut sim, prior, params, learner, &mut rng)?;
            residual_policy(&q_r, prior, params)
        }
        MethodSpec::Mcts {
            iterations,
            horizon,
            epsilon,
        } => search_policy(
            mdp,
            prior,
            params,
            *iterations,
            *horizon,
            *epsilon,
            method_index,
            train_seed,
        ),
        MethodSpec::Greedy { lambda } => {
            let greedy = GreedyParams {
                lambda: *lambda,
                alpha_hat: params.alpha_hat,
                gamma: params.gamma,
                tol: params.tol,
                max_iter: params.max_iter,
            };
            greedy_customization(mdp, prior, &greedy).map(|(_, policy)| policy)
        }
        MethodSpec::KlReward {
            beta,
            damping,
            outer_iters,
        } => {
            let kl = KlRewardParams {
                beta: *beta,
                damping: *damping,
                outer_iters: *outer_iters,
                solver: SoftSolverParams {
                    alpha: params.alpha_hat,
                    tol: params.tol,
                    max_iter: params.max_iter,
                },
            };
            kl_augmented_rl(mdp, prior, &kl)
        }
        MethodSpec::LikelihoodAug {} => {
            likelihood_augmented_rl(mdp, prior, params).map(|(_, policy)| policy)
        }
        MethodSpec::RlFull { omega } => {
            let solver = SoftSolverParams {
                alpha: params.alpha_hat,
                tol: params.tol,
                max_iter: params.max_iter,
            };
            let q = soft_value_iteration(mdp, RewardSelector::Combined { omega: *omega }, &solver)?;
            boltzmann_policy(&q, params.alpha_hat)
        }
    }
}

/// Precomputes the tree-search policy: one planning call per state, the
/// root's tree-policy distribution as that state's action row.
///
/// The search is an online planner; materializing its root distribution
/// everywhere lets it flow through the same batch evaluation path as the
/// solvers. The ε-uniform mixing keeps every row strictly positive.
#[allow(clippy::too_many_arguments)]
fn search_policy(
    mdp: &DiscreteMdp<f64>,
    prior: &PolicyTable<f64>,
    params: &CustomizationParams<f64>,
    iterations: usize,
    horizon: usize,
    epsilon: f64,
    method_index: usize,
    train_seed: u64,
) -> Result<PolicyTable<f64>> {
    let search = MctsParams {
        iter_max: iterations,
        horizon,
        epsilon,
        omega_prime: params.omega_prime,
        alpha_hat: params.alpha_hat,
        gamma: mdp.discount(),
        mode: SearchMode::Residual,
        root_action: Default::default(),
    };
    let (n_states, n_actions) = (mdp.n_states(), mdp.n_actions());
    let mut probs = vec![0.0; n_states * n_actions];
    for s in 0..n_states {
        let mut rng = ChaCha8Rng::seed_from_u64(train_seed);
        rng.set_stream(SEARCH_STREAM_BASE + method_index as u64 * SEARCH_METHOD_STRIDE + s as u64);
        let (tree, _) = plan(s, mdp, prior, &search, &mut rng)?;
        let row = tree_policy_distribution(tree.root(), prior, &search);
        probs[s * n_actions..(s + 1) * n_actions].copy_from_slice(&row);
    }
    Ok(PolicyTable::from_raw(n_states, n_actions, probs, None))
}

// ---------------------------------------------------------------------------
// The runner
// ---------------------------------------------------------------------------

/// A method that errored during a run; its report row is omitted, the run
/// continues.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodFailure {
    pub label: String,
    pub message: String,
}

/// Everything one run produced: the metrics table (prior row first), any
/// per-method failures, and the report files written.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutcome {
    pub table: MetricsTable,
    pub failures: Vec<MethodFailure>,
    pub files: Vec<PathBuf>,
}

impl ExperimentOutcome {
    /// True when every requested method produced a report row.
    pub fn fully_succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs a full experiment: build the task and prior, run each method,
/// evaluate every policy (prior first, methods in declaration order), and
/// write the requested report files.
///
/// A method failure (e.g. an honestly non-convergent baseline) is
/// recorded in the outcome and its row omitted; the run itself still
/// succeeds and reports the remaining policies. Errors that invalidate
/// the whole run — bad configuration, unbuildable prior, I/O — are
/// returned as `Err`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let (_, mdp) = make_env::<f64>(&config.env)?;
    let prior = build_prior(&mdp, &config.prior)?;
    // Sample-based methods must bootstrap with the model's discount.
    let mut params = config.customization;
    params.gamma = mdp.discount();

    let labels = method_labels(&config.methods);
    let train_seed = config.evaluation.seeds[0];
    let mut rows: Vec<(String, PolicyTable<f64>)> = vec![("prior".to_string(), prior.clone())];
    let mut failures = Vec::new();
    for (index, (method, label)) in config.methods.iter().zip(&labels).enumerate() {
        match build_method_policy(
            &mdp,
            &config.env,
            &prior,
            &params,
            method,
            index,
            train_seed,
        ) {
            Ok(policy) => rows.push((label.clone(), policy)),
            Err(e) => {
                log::warn!("method {label} failed: {e}");
                failures.push(MethodFailure {
                    label: label.clone(),
                    message: e.to_string(),
                });
            }
        }
    }

    let records = evaluate_rows(&config.env, &rows, &config.evaluation)?;
    let table = MetricsTable {
        metric: config.env.metric_name().to_string(),
        records,
    };
    let files = match &config.output.directory {
        Some(directory) => emit_report(&table, directory, &config.output.formats)?,
        None => Vec::new(),
    };
    Ok(ExperimentOutcome {
        table,
        failures,
        files,
    })
}
