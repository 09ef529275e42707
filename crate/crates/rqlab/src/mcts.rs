//! Maximum-entropy Monte Carlo tree search, residual variant included.
//!
//! Planning is zero-shot online customization: with a known model and a
//! strictly positive prior policy, [`plan`] grows a look-ahead tree whose
//! per-action values estimate the *residual* value `Q_R` at each visited
//! state. Each iteration runs
//!
//! 1. **Selection** — descend from the root, sampling actions from the
//!    ε-mixed softmax tree policy (see [`tree_policy_distribution`]) until
//!    reaching a node that is terminal, depth-capped, or not fully expanded;
//! 2. **Expansion** — try the lowest-index untried action, sampling one
//!    successor from the model;
//! 3. **Simulation** — roll out the *prior* policy from the new state to the
//!    horizon, accumulating discounted add-on reward ([`rollout_return`]);
//! 4. **Back-propagation** — refresh values bottom-up along the path
//!    ([`backpropagate`]): the deepest edge gets `r_R + γ·R` from the
//!    roll-out estimate, interior edges get `r_R + γ·V_R(child)` with the
//!    softmax state value `V_R(s') = α̂·lse_a((q_r(s',a) + ω'·ln π(a|s'))/α̂)`.
//!
//! In `plain-max-entropy` mode the prior-shift terms `ω'·ln π` are dropped
//! from the tree policy, the backup, and the root rule (roll-outs still
//! follow the given roll-out policy), which recovers ordinary
//! maximum-entropy tree search on the add-on reward alone.
//!
//! Stochastic models are handled by determinization: each action edge keeps
//! the first successor ever sampled for it, so a tree node has at most one
//! child per action. For deterministic models the tree is exact in the
//! limit; for stochastic ones the values are per-determinization estimates.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{sample_index, sample_transition, DiscreteMdp, PolicyTable};
use crate::scalar::{scaled_log_sum_exp, softmax_into, Scalar};

/// Index of a node inside its [`SearchTree`] arena.
pub type NodeId = usize;

/// Whether values and the tree policy include the prior-shift term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMode {
    /// Track residual values; selection and backup add `ω'·ln π`.
    Residual,
    /// Ordinary maximum-entropy search on the add-on reward alone.
    PlainMaxEntropy,
}

/// How the final root action is picked after the iteration budget.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RootActionRule {
    /// Deterministic argmax of `q_r + ω'·ln π` (the ε = 0 tree-policy mode).
    #[default]
    Argmax,
    /// One sample from the ε = 0 tree policy.
    Sample,
}

/// Search hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
pub struct MctsParams<T: Scalar> {
    /// Number of selection/expansion/simulation/backup iterations.
    pub iter_max: usize,
    /// Planning horizon: nodes at this depth are never expanded, and
    /// roll-outs run for `horizon − depth` steps.
    pub horizon: usize,
    /// Exploration coefficient ε of the uniform mixing weight
    /// `λ_s = min(1, ε·|A| / ln(Σ_a N(s,a) + 1))`.
    pub epsilon: T,
    /// Prior-trust weight ω′ (ignored in plain mode).
    pub omega_prime: T,
    /// Entropy temperature α̂ of softmax selection and backup.
    pub alpha_hat: T,
    /// Discount used for roll-out returns and backups.
    pub gamma: T,
    pub mode: SearchMode,
    #[serde(default)]
    pub root_action: RootActionRule,
}

impl<T: Scalar> Default for MctsParams<T> {
    fn default() -> Self {
        MctsParams {
            iter_max: 150,
            horizon: 6,
            epsilon: T::of(0.1),
            omega_prime: T::one(),
            alpha_hat: T::one(),
            gamma: T::of(0.99),
            mode: SearchMode::Residual,
            root_action: RootActionRule::Argmax,
        }
    }
}

impl<T: Scalar> MctsParams<T> {
    pub fn with_iter_max(mut self, iter_max: usize) -> Self {
        self.iter_max = iter_max;
        self
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_epsilon(mut self, epsilon: T) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_omega_prime(mut self, omega_prime: T) -> Self {
        self.omega_prime = omega_prime;
        self
    }

    pub fn with_gamma(mut self, gamma: T) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_mode(mut self, mode: SearchMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.iter_max == 0 {
            return Err(Error::InvalidArgument(
                "iteration budget must be positive".into(),
            ));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidArgument(
                "planning horizon must be positive".into(),
            ));
        }
        if !self.epsilon.is_finite() || self.epsilon < T::zero() {
            return Err(Error::InvalidArgument(format!(
                "exploration coefficient must be finite and non-negative, got {}",
                self.epsilon
            )));
        }
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
        Ok(())
    }
}

/// One tree node: per-action value estimates, visit counts, and (at most
/// one, by determinization) child per action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SearchNode<T: Scalar> {
    pub state: usize,
    pub depth: usize,
    /// Estimated residual value per action (soft value in plain mode).
    pub q_r: Vec<T>,
    pub visit_count: Vec<u64>,
    pub children: Vec<Option<NodeId>>,
}

impl<T: Scalar> SearchNode<T> {
    fn new(state: usize, depth: usize, n_actions: usize) -> Self {
        SearchNode {
            state,
            depth,
            q_r: vec![T::zero(); n_actions],
            visit_count: vec![0; n_actions],
            children: vec![None; n_actions],
        }
    }

    /// Actions never tried from this node, in index order.
    pub fn untried_action(&self) -> Option<usize> {
        self.children.iter().position(Option::is_none)
    }

    pub fn total_visits(&self) -> u64 {
        self.visit_count.iter().sum()
    }
}

/// Arena-allocated search tree; node 0 is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SearchTree<T: Scalar> {
    nodes: Vec<SearchNode<T>>,
}

impl<T: Scalar> SearchTree<T> {
    /// Starts a tree holding only a root node for `root_state`.
    pub fn new(root_state: usize, n_actions: usize) -> Self {
        SearchTree {
            nodes: vec![SearchNode::new(root_state, 0, n_actions)],
        }
    }

    pub const ROOT: NodeId = 0;

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &SearchNode<T> {
        &self.nodes[id]
    }

    pub fn root(&self) -> &SearchNode<T> {
        &self.nodes[Self::ROOT]
    }

    pub fn nodes(&self) -> &[SearchNode<T>] {
        &self.nodes
    }

    /// Adds a child reached from `parent` by `action`; the edge must be
    /// untried.
    pub fn add_child(&mut self, parent: NodeId, action: usize, state: usize) -> NodeId {
        let n_actions = self.nodes[parent].children.len();
        assert!(action < n_actions, "action index out of range");
        assert!(
            self.nodes[parent].children[action].is_none(),
            "edge already expanded"
        );
        let depth = self.nodes[parent].depth + 1;
        let id = self.nodes.len();
        self.nodes.push(SearchNode::new(state, depth, n_actions));
        self.nodes[parent].children[action] = Some(id);
        id
    }
}

/// Uniform-mixing weight `λ_s` of the tree policy. The formula divides by
/// `ln(ΣN + 1)`, which is zero for an unvisited node; the limit intent is
/// maximal exploration there, so `λ_s = 1` is used.
fn mixing_weight<T: Scalar>(total_visits: u64, n_actions: usize, epsilon: T) -> T {
    if total_visits == 0 {
        return T::one();
    }
    let denom = T::of((total_visits + 1) as f64).ln();
    let lambda = epsilon * T::of(n_actions as f64) / denom;
    lambda.min(T::one())
}

/// Selection distribution at a node:
/// `(1−λ_s)·softmax((q_r + ω'·ln π)/α̂) + λ_s·uniform` in residual mode,
/// with the `ω'·ln π` shift dropped in plain mode.
pub fn tree_policy_distribution<T: Scalar>(
    node: &SearchNode<T>,
    prior: &PolicyTable<T>,
    params: &MctsParams<T>,
) -> Vec<T> {
    let n_actions = node.q_r.len();
    let mut shifted = node.q_r.clone();
    if params.mode == SearchMode::Residual {
        for (a, slot) in shifted.iter_mut().enumerate() {
            *slot += params.omega_prime * prior.prob(node.state, a).ln();
        }
    }
    let mut probs = vec![T::zero(); n_actions];
    softmax_into(&shifted, params.alpha_hat, &mut probs);
    let lambda = mixing_weight(node.total_visits(), n_actions, params.epsilon);
    let uniform = T::one() / T::of(n_actions as f64);
    for p in probs.iter_mut() {
        *p = (T::one() - lambda) * *p + lambda * uniform;
    }
    probs
}

/// Softmax state value of a node under the search mode:
/// `V_R(s) = α̂·lse_a((q_r(s,a) + ω'·ln π(a|s))/α̂)` (shift dropped in plain
/// mode).
fn node_value<T: Scalar>(
    node: &SearchNode<T>,
    prior: &PolicyTable<T>,
    params: &MctsParams<T>,
) -> T {
    let mut shifted = node.q_r.clone();
    if params.mode == SearchMode::Residual {
        for (a, slot) in shifted.iter_mut().enumerate() {
            *slot += params.omega_prime * prior.prob(node.state, a).ln();
        }
    }
    scaled_log_sum_exp(&shifted, params.alpha_hat)
}

/// Discounted add-on return of a prior-policy roll-out from `leaf_state`,
/// stopping at a terminal state or after `depth_remaining` steps.
pub fn rollout_return<T: Scalar>(
    leaf_state: usize,
    model: &DiscreteMdp<T>,
    rollout_policy: &PolicyTable<T>,
    depth_remaining: usize,
    gamma: T,
    rng: &mut dyn RngCore,
) -> T {
    let mut state = leaf_state;
    let mut total = T::zero();
    let mut weight = T::one();
    for _ in 0..depth_remaining {
        if model.is_terminal(state) {
            break;
        }
        let action = rollout_policy.sample_action(state, rng);
        total += weight * model.addon(state, action);
        weight *= gamma;
        state = sample_transition(model, state, action, rng)
            .expect("roll-out stepped a malformed model");
    }
    total
}

/// Refreshes values bottom-up along a selection path. `path` lists the
/// `(node, action)` edges from the root to the deepest tried edge; the
/// deepest edge receives `r_R + γ·R` with the roll-out estimate `R`, every
/// interior edge `r_R + γ·V_R(child)`, and all edge visit counts grow by
/// one.
pub fn backpropagate<T: Scalar>(
    tree: &mut SearchTree<T>,
    path: &[(NodeId, usize)],
    terminal_return: T,
    model: &DiscreteMdp<T>,
    prior: &PolicyTable<T>,
    params: &MctsParams<T>,
) -> Result<()> {
    if path.is_empty() {
        return Err(Error::InvalidArgument(
            "back-propagation needs a non-empty path".into(),
        ));
    }
    for t in (0..path.len()).rev() {
        let (id, action) = path[t];
        let state = tree.nodes[id].state;
        let reward = model.addon(state, action);
        let continuation = if t == path.len() - 1 {
            terminal_return
        } else {
            let child_id = path[t + 1].0;
            node_value(&tree.nodes[child_id], prior, params)
        };
        tree.nodes[id].q_r[action] = reward + params.gamma * continuation;
        tree.nodes[id].visit_count[action] += 1;
    }
    Ok(())
}

/// Runs the full search from `root_state` and returns the built tree plus
/// the chosen root action. All randomness flows through `rng`; a fixed seed
/// reproduces the tree bit for bit.
pub fn plan<T: Scalar>(
    root_state: usize,
    model: &DiscreteMdp<T>,
    prior: &PolicyTable<T>,
    params: &MctsParams<T>,
    rng: &mut dyn RngCore,
) -> Result<(SearchTree<T>, usize)> {
    params.validate()?;
    prior.validate()?;
    if prior.n_states() != model.n_states() || prior.n_actions() != model.n_actions() {
        return Err(Error::DimensionMismatch(format!(
            "prior policy is {}x{} but the model is {}x{}",
            prior.n_states(),
            prior.n_actions(),
            model.n_states(),
            model.n_actions()
        )));
    }
    if root_state >= model.n_states() {
        return Err(Error::OutOfRange {
            what: "root state",
            index: root_state,
            limit: model.n_states(),
        });
    }

    let n_actions = model.n_actions();
    let mut tree = SearchTree::new(root_state, n_actions);
    let mut path: Vec<(NodeId, usize)> = Vec::with_capacity(params.horizon + 1);

    for _ in 0..params.iter_max {
        path.clear();
        // Selection: walk stored children while fully expanded.
        let mut current = SearchTree::<T>::ROOT;
        let leaf = loop {
            let node = &tree.nodes[current];
            if model.is_terminal(node.state) || node.depth >= params.horizon {
                break current;
            }
            match node.untried_action() {
                Some(_) => break current,
                None => {
                    let probs = tree_policy_distribution(node, prior, params);
                    let action = sample_index(&probs, rng);
                    path.push((current, action));
                    current = tree.nodes[current].children[action]
                        .expect("fully expanded node lost a child");
                }
            }
        };

        // Expansion: try the lowest-index untried action, if the leaf may
        // grow.
        let node = &tree.nodes[leaf];
        let evaluated = if !model.is_terminal(node.state) && node.depth < params.horizon {
            let action = node
                .untried_action()
                .expect("selection stopped at an expandable node without untried actions");
            let next_state = sample_transition(model, node.state, action, rng)?;
            let child = tree.add_child(leaf, action, next_state);
            path.push((leaf, action));
            child
        } else {
            leaf
        };

        // Simulation: prior roll-out from the evaluated node to the horizon.
        let eval_node = &tree.nodes[evaluated];
        let depth_remaining = params.horizon.saturating_sub(eval_node.depth);
        let estimate = rollout_return(
            eval_node.state,
            model,
            prior,
            depth_remaining,
            params.gamma,
            rng,
        );

        // Back-propagation (skipped when the root itself was terminal).
        if !path.is_empty() {
            backpropagate(&mut tree, &path, estimate, model, prior, params)?;
        }
    }

    let chosen = choose_root_action(&tree, prior, params, rng);
    Ok((tree, chosen))
}

/// Final root rule: argmax of the shifted values (ties to the lowest
/// index), or one sample from the ε = 0 tree policy.
fn choose_root_action<T: Scalar>(
    tree: &SearchTree<T>,
    prior: &PolicyTable<T>,
    params: &MctsParams<T>,
    rng: &mut dyn RngCore,
) -> usize {
    let root = tree.root();
    match params.root_action {
        RootActionRule::Argmax => {
            let mut best = 0;
            let mut best_value = T::neg_infinity();
            for a in 0..root.q_r.len() {
                let mut value = root.q_r[a];
                if params.mode == SearchMode::Residual {
                    value += params.omega_prime * prior.prob(root.state, a).ln();
                }
                if value > best_value {
                    best_value = value;
                    best = a;
                }
            }
            best
        }
        RootActionRule::Sample => {
            let greedy = MctsParams {
                epsilon: T::zero(),
                ..*params
            };
            let probs = tree_policy_distribution(root, prior, &greedy);
            sample_index(&probs, rng)
        }
    }
}
