//! Experiment configuration: which task, which prior, which methods, and
//! where the results go.
//!
//! Configurations are plain JSON documents. Parsing is strict — unknown
//! keys anywhere in the document are errors — so a typo like `"lamda"`
//! fails loudly instead of silently running with a default. [WHY: a
//! comparison table produced from a misread config is worse than no table.]

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::residual::{CustomizationParams, TdLearnerParams};

fn default_alpha() -> f64 {
    1.0
}

fn default_unit() -> f64 {
    1.0
}

fn default_search_iterations() -> usize {
    150
}

fn default_search_horizon() -> usize {
    6
}

fn default_search_epsilon() -> f64 {
    0.1
}

fn default_kl_damping() -> f64 {
    0.5
}

fn default_kl_outer_iters() -> usize {
    1000
}

/// Where the prior policy comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PriorSpec {
    /// Exact maximum-entropy optimum of the basic reward channel at
    /// temperature `alpha` — the idealized well-trained prior.
    Oracle {
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    /// The oracle policy with Gaussian noise of scale `noise_scale` added to
    /// every logit, rows renormalized. Emulates an imperfect (e.g.
    /// imitation-learned) prior while staying exactly reproducible from
    /// `seed`.
    Perturbed {
        #[serde(default = "default_alpha")]
        alpha: f64,
        noise_scale: f64,
        #[serde(default)]
        seed: u64,
    },
    /// A policy table loaded from a JSON file of nested row arrays. Rows
    /// must be strictly positive and normalized, and the shape must match
    /// the configured environment.
    File { path: PathBuf },
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PriorSpec::Oracle { alpha } => check_temperature(alpha),
            PriorSpec::Perturbed {
                alpha, noise_scale, ..
            } => {
                check_temperature(alpha)?;
                if !noise_scale.is_finite() || noise_scale < 0.0 {
                    return Err(Error::Config(format!(
                        "prior noise scale must be finite and non-negative, got {noise_scale}"
                    )));
                }
                Ok(())
            }
            PriorSpec::File { .. } => Ok(()),
        }
    }
}

fn check_temperature(alpha: f64) -> Result<()> {
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::Config(format!(
            "prior temperature must be finite and positive, got {alpha}"
        )));
    }
    Ok(())
}

/// One policy-producing method to run and report.
///
/// Shared hyperparameters (`ω'`, `α̂`, tolerances) come from
/// [`ExperimentConfig::customization`]; the variants below only carry knobs
/// specific to one method. Every variant is a struct variant so that strict
/// parsing applies to its fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MethodSpec {
    /// Exact residual soft Q-iteration followed by the closed-form
    /// customized policy.
    RqlExact {},
    /// Sample-based residual soft Q-learning with replay and a target
    /// table; omitted learner fields take their defaults.
    RqlTd {
        #[serde(default)]
        learner: TdLearnerParams<f64>,
    },
    /// Residual soft policy iteration (evaluation + closed-form
    /// improvement).
    RqlSpi {},
    /// Residual maximum-entropy tree search. The reported policy is the
    /// root tree-policy distribution recomputed at every state, so the
    /// online planner flows through the same evaluation path as the
    /// solvers.
    Mcts {
        #[serde(default = "default_search_iterations")]
        iterations: usize,
        #[serde(default = "default_search_horizon")]
        horizon: usize,
        #[serde(default = "default_search_epsilon")]
        epsilon: f64,
    },
    /// Greedy decomposition baseline: evaluate the add-on reward under the
    /// current policy, improve with a KL pull of weight `lambda` towards
    /// the prior.
    Greedy {
        #[serde(default = "default_unit")]
        lambda: f64,
    },
    /// KL-augmented-reward baseline: penalize divergence from the prior
    /// with weight `beta` inside the reward; the outer loop is damped and
    /// may honestly fail to converge for large `beta`.
    KlReward {
        #[serde(default = "default_unit")]
        beta: f64,
        #[serde(default = "default_kl_damping")]
        damping: f64,
        #[serde(default = "default_kl_outer_iters")]
        outer_iters: usize,
    },
    /// Likelihood-augmented reward: solve the add-on task with
    /// `ω'·ln π(a|s)` folded into the reward. Exactly equivalent to
    /// `rql-exact`; kept as an independently coded route.
    LikelihoodAug {},
    /// Maximum-entropy RL on the combined reward `ω·r + r_R` — the skyline
    /// that reads the basic reward customization methods never see.
    RlFull {
        #[serde(default = "default_unit")]
        omega: f64,
    },
}

impl MethodSpec {
    /// The method's wire name; also its report label (deduplicated by
    /// [`method_labels`] when a kind repeats).
    pub fn tag(&self) -> &'static str {
        match self {
            MethodSpec::RqlExact {} => "rql-exact",
            MethodSpec::RqlTd { .. } => "rql-td",
            MethodSpec::RqlSpi {} => "rql-spi",
            MethodSpec::Mcts { .. } => "mcts",
            MethodSpec::Greedy { .. } => "greedy",
            MethodSpec::KlReward { .. } => "kl-reward",
            MethodSpec::LikelihoodAug {} => "likelihood-aug",
            MethodSpec::RlFull { .. } => "rl-full",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            MethodSpec::RqlExact {} | MethodSpec::RqlSpi {} | MethodSpec::LikelihoodAug {} => {
                Ok(())
            }
            MethodSpec::RqlTd { ref learner } => learner
                .validate()
                .map_err(|e| Error::Config(format!("rql-td learner: {e}"))),
            MethodSpec::Mcts {
                iterations,
                horizon,
                epsilon,
            } => {
                if iterations == 0 || horizon == 0 {
                    return Err(Error::Config(
                        "mcts iterations and horizon must be positive".into(),
                    ));
                }
                if !epsilon.is_finite() || epsilon < 0.0 {
                    return Err(Error::Config(format!(
                        "mcts exploration coefficient must be finite and non-negative, got {epsilon}"
                    )));
                }
                Ok(())
            }
            MethodSpec::Greedy { lambda } => {
                if !lambda.is_finite() || lambda < 0.0 {
                    return Err(Error::Config(format!(
                        "greedy prior weight must be finite and non-negative, got {lambda}"
                    )));
                }
                Ok(())
            }
            MethodSpec::KlReward {
                beta,
                damping,
                outer_iters,
            } => {
                if !beta.is_finite() || beta < 0.0 {
                    return Err(Error::Config(format!(
                        "kl-reward penalty weight must be finite and non-negative, got {beta}"
                    )));
                }
                if !damping.is_finite() || damping <= 0.0 || damping > 1.0 {
                    return Err(Error::Config(format!(
                        "kl-reward damping must lie in (0, 1], got {damping}"
                    )));
                }
                if outer_iters == 0 {
                    return Err(Error::Config(
                        "kl-reward outer iteration budget must be positive".into(),
                    ));
                }
                Ok(())
            }
            MethodSpec::RlFull { omega } => {
                if !omega.is_finite() || omega < 0.0 {
                    return Err(Error::Config(format!(
                        "rl-full basic-reward weight must be finite and non-negative, got {omega}"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Report labels for a method list, in declaration order: the method tag,
/// with `#2`, `#3`, … appended from the second occurrence of a kind on
/// (so two `greedy` entries stay distinguishable in the table).
pub fn method_labels(methods: &[MethodSpec]) -> Vec<String> {
    let mut seen: HashMap<&'static str, usize> = HashMap::new();
    methods
        .iter()
        .map(|method| {
            let count = seen.entry(method.tag()).or_insert(0);
            *count += 1;
            if *count == 1 {
                method.tag().to_string()
            } else {
                format!("{}#{}", method.tag(), count)
            }
        })
        .collect()
}

/// How much evaluation to do and from which seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSpec {
    /// Episodes per (policy, seed) cell. A report row pools every seed, so
    /// it aggregates `episodes × seeds.len()` episodes.
    pub episodes: usize,
    /// Base RNG seeds. Cells for different report rows draw from separate
    /// streams of the same seeds, so adding a method never disturbs the
    /// episodes another method sees.
    pub seeds: Vec<u64>,
}

impl Default for EvaluationSpec {
    fn default() -> Self {
        EvaluationSpec {
            episodes: 4000,
            seeds: vec![0],
        }
    }
}

impl EvaluationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Config(
                "evaluation needs at least one episode".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("evaluation needs at least one seed".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config(
                "evaluation seeds must be distinct — duplicates would evaluate identical episode batches".into(),
            ));
        }
        Ok(())
    }
}

/// A report rendering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Csv,
    Json,
}

/// Where and in which formats report files are written.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    /// Target directory (created if missing); nothing is written when
    /// absent.
    pub directory: Option<PathBuf>,
    /// Renderings to produce (`report.csv`, `report.json`). Defaults to
    /// both.
    pub formats: Vec<OutputFormat>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            directory: None,
            formats: vec![OutputFormat::Csv, OutputFormat::Json],
        }
    }
}

impl OutputSpec {
    pub fn validate(&self) -> Result<()> {
        if self.formats.is_empty() {
            return Err(Error::Config(
                "output formats must not be empty (omit the field for the default)".into(),
            ));
        }
        let mut sorted = self.formats.clone();
        sorted.sort_by_key(|f| *f as u8);
        sorted.dedup();
        if sorted.len() != self.formats.len() {
            return Err(Error::Config("output formats must be distinct".into()));
        }
        Ok(())
    }
}

/// A full experiment: one environment, one prior, a list of methods, and
/// the evaluation/reporting knobs. The entire run is a pure function of
/// this value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// The benchmark task.
    pub env: EnvSpec,
    /// Where the prior policy comes from.
    pub prior: PriorSpec,
    /// Methods to run, in report order. The prior itself is always
    /// evaluated as the first row and is not listed here.
    pub methods: Vec<MethodSpec>,
    /// Shared customization hyperparameters (`ω'`, `α̂`, tolerance). The
    /// discount seen by sample-based methods is taken from the environment
    /// model at run time, overriding the one here.
    #[serde(default)]
    pub customization: CustomizationParams<f64>,
    #[serde(default)]
    pub evaluation: EvaluationSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

impl ExperimentConfig {
    /// Parses and validates a JSON configuration document.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Reads, parses, and validates a configuration file.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.prior.validate()?;
        if self.methods.is_empty() {
            return Err(Error::Config(
                "an experiment needs at least one method".into(),
            ));
        }
        for method in &self.methods {
            method.validate()?;
        }
        self.customization
            .validate()
            .map_err(|e| Error::Config(format!("customization: {e}")))?;
        self.evaluation.validate()?;
        self.output.validate()
    }
}
