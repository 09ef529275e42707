//! Finite MDPs with two reward channels.
//!
//! A [`DiscreteMdp`] carries a *basic* reward (the objective a prior policy
//! was trained for) and an *add-on* reward (the extra objective a customized
//! policy must also satisfy). Episodic tasks embed into the discounted
//! infinite-horizon formulation by modelling terminal states as zero-reward
//! self-loops, so one set of Bellman equations covers every fixture.
//!
//! Transitions are stored sparsely per `(state, action)`; the JSON wire
//! format is dense row-major (see [`DiscreteMdp`] serde docs).

use std::fmt;

use rand::Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-sum slack for probability and policy rows: `1e-12` for `f64`, widened
/// for `f32` where that tolerance is below machine precision.
pub(crate) fn row_sum_tolerance<T: Scalar>(n: usize) -> T {
    let machine = T::epsilon() * T::of(8.0 * n.max(1) as f64);
    T::of(1e-12).max(machine)
}

// ---------------------------------------------------------------------------
// DiscreteMdp
// ---------------------------------------------------------------------------

/// Finite MDP with dense rewards, sparse transitions, and a terminal mask.
///
/// Serialized as a dense JSON document
/// `{"n_states", "n_actions", "discount", "transition": [[[p, ...], ...], ...],
///   "basic_reward": [[...], ...], "addon_reward": [[...], ...], "terminal": [...]}`
/// with row-major tables of IEEE-754 numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMdp<T: Scalar> {
    n_states: usize,
    n_actions: usize,
    discount: T,
    /// `[s * n_actions + a]` → list of `(next_state, probability)`.
    transition: Vec<Vec<(usize, T)>>,
    /// `[s * n_actions + a]` → basic-channel reward.
    basic_reward: Vec<T>,
    /// `[s * n_actions + a]` → add-on-channel reward.
    addon_reward: Vec<T>,
    terminal: Vec<bool>,
}

impl<T: Scalar> DiscreteMdp<T> {
    /// Creates an MDP where every `(s, a)` self-loops with probability 1 and
    /// both rewards are zero. Panics if a dimension is zero or the discount
    /// lies outside `[0, 1)`.
    pub fn new(n_states: usize, n_actions: usize, discount: T) -> Self {
        assert!(n_states > 0, "MDP needs at least one state");
        assert!(n_actions > 0, "MDP needs at least one action");
        assert!(
            discount >= T::zero() && discount < T::one(),
            "discount must lie in [0, 1)"
        );
        let cells = n_states * n_actions;
        let transition = (0..cells)
            .map(|idx| vec![(idx / n_actions, T::one())])
            .collect();
        DiscreteMdp {
            n_states,
            n_actions,
            discount,
            transition,
            basic_reward: vec![T::zero(); cells],
            addon_reward: vec![T::zero(); cells],
            terminal: vec![false; n_states],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> T {
        self.discount
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    #[inline]
    fn cell(&self, s: usize, a: usize) -> usize {
        debug_assert!(s < self.n_states && a < self.n_actions);
        s * self.n_actions + a
    }

    /// Sparse transition row: `(next_state, probability)` pairs.
    pub fn successors(&self, s: usize, a: usize) -> &[(usize, T)] {
        &self.transition[self.cell(s, a)]
    }

    pub fn basic(&self, s: usize, a: usize) -> T {
        self.basic_reward[self.cell(s, a)]
    }

    pub fn addon(&self, s: usize, a: usize) -> T {
        self.addon_reward[self.cell(s, a)]
    }

    /// Reward under a channel selector, without materializing a table.
    pub fn reward(&self, s: usize, a: usize, selector: RewardSelector<T>) -> T {
        match selector {
            RewardSelector::Basic => self.basic(s, a),
            RewardSelector::Addon => self.addon(s, a),
            RewardSelector::Combined { omega } => omega * self.basic(s, a) + self.addon(s, a),
        }
    }

    /// Replaces the transition row for `(s, a)`. Indices are checked
    /// (panics); probabilistic validity is deliberately *not* checked here so
    /// invalid models can be constructed for [`validate_mdp`] to report on.
    pub fn set_transition(&mut self, s: usize, a: usize, row: &[(usize, T)]) {
        for &(next, _) in row {
            assert!(next < self.n_states, "transition target out of range");
        }
        let cell = self.cell(s, a);
        self.transition[cell] = row.to_vec();
    }

    pub fn set_basic(&mut self, s: usize, a: usize, r: T) {
        let cell = self.cell(s, a);
        self.basic_reward[cell] = r;
    }

    pub fn set_addon(&mut self, s: usize, a: usize, r: T) {
        let cell = self.cell(s, a);
        self.addon_reward[cell] = r;
    }

    /// Marks `s` terminal and rewrites its rows to the absorbing convention:
    /// self-loop with probability 1 and zero reward on both channels.
    pub fn set_terminal(&mut self, s: usize) {
        assert!(s < self.n_states, "state out of range");
        self.terminal[s] = true;
        for a in 0..self.n_actions {
            let cell = self.cell(s, a);
            self.transition[cell] = vec![(s, T::one())];
            self.basic_reward[cell] = T::zero();
            self.addon_reward[cell] = T::zero();
        }
    }

    /// Overrides the terminal flag without touching rows (test hook for
    /// constructing convention violations).
    pub fn set_terminal_flag_raw(&mut self, s: usize, flag: bool) {
        self.terminal[s] = flag;
    }

    /// Dense copy of one transition row (used by the wire format and tests).
    pub fn dense_row(&self, s: usize, a: usize) -> Vec<T> {
        let mut row = vec![T::zero(); self.n_states];
        for &(next, p) in self.successors(s, a) {
            row[next] += p;
        }
        row
    }
}

// --- serde wire format -----------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
struct Wire<T: Scalar> {
    n_states: usize,
    n_actions: usize,
    discount: T,
    transition: Vec<Vec<Vec<T>>>,
    basic_reward: Vec<Vec<T>>,
    addon_reward: Vec<Vec<T>>,
    terminal: Vec<bool>,
}

impl<T: Scalar> Serialize for DiscreteMdp<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let transition = (0..self.n_states)
            .map(|s| (0..self.n_actions).map(|a| self.dense_row(s, a)).collect())
            .collect();
        let table = |values: &[T]| {
            values
                .chunks(self.n_actions)
                .map(|row| row.to_vec())
                .collect::<Vec<_>>()
        };
        Wire {
            n_states: self.n_states,
            n_actions: self.n_actions,
            discount: self.discount,
            transition,
            basic_reward: table(&self.basic_reward),
            addon_reward: table(&self.addon_reward),
            terminal: self.terminal.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for DiscreteMdp<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let wire = Wire::<T>::deserialize(deserializer)?;
        let shape_err = |what: &str| D::Error::custom(format!("{what} shape mismatch"));
        if wire.transition.len() != wire.n_states
            || wire.basic_reward.len() != wire.n_states
            || wire.addon_reward.len() != wire.n_states
            || wire.terminal.len() != wire.n_states
        {
            return Err(shape_err("state-indexed table"));
        }
        let mut mdp = DiscreteMdp::new(
            wire.n_states,
            wire.n_actions,
            if wire.discount >= T::zero() && wire.discount < T::one() {
                wire.discount
            } else {
                return Err(D::Error::custom("discount outside [0, 1)"));
            },
        );
        for s in 0..wire.n_states {
            if wire.transition[s].len() != wire.n_actions
                || wire.basic_reward[s].len() != wire.n_actions
                || wire.addon_reward[s].len() != wire.n_actions
            {
                return Err(shape_err("action-indexed row"));
            }
            for a in 0..wire.n_actions {
                let dense = &wire.transition[s][a];
                if dense.len() != wire.n_states {
                    return Err(shape_err("transition row"));
                }
                let sparse: Vec<(usize, T)> = dense
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p != T::zero())
                    .map(|(next, &p)| (next, p))
                    .collect();
                mdp.set_transition(s, a, &sparse);
                mdp.set_basic(s, a, wire.basic_reward[s][a]);
                mdp.set_addon(s, a, wire.addon_reward[s][a]);
            }
            mdp.terminal[s] = wire.terminal[s];
        }
        Ok(mdp)
    }
}

// ---------------------------------------------------------------------------
// RewardSelector
// ---------------------------------------------------------------------------

/// Chooses which reward channel an operation sees: the basic channel, the
/// add-on channel, or the combined reward `ω·basic + addon`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", bound = "T: Scalar")]
pub enum RewardSelector<T: Scalar> {
    Basic,
    Addon,
    Combined { omega: T },
}

impl<T: Scalar> RewardSelector<T> {
    /// Rejects non-finite and negative combination weights.
    pub fn validate(&self) -> Result<()> {
        if let RewardSelector::Combined { omega } = self {
            if !omega.is_finite() || *omega < T::zero() {
                return Err(Error::InvalidArgument(format!(
                    "combined reward weight must be finite and nonnegative, got {omega}"
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// QTable
// ---------------------------------------------------------------------------

/// Dense per-`(state, action)` table of reals, row-major.
///
/// Used for soft Q-values, residual Q-values, and composed reward tables —
/// anything shaped like `states × actions`. Serializes as nested JSON arrays
/// `[[row 0], [row 1], ...]`.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable<T: Scalar> {
    n_states: usize,
    n_actions: usize,
    values: Vec<T>,
}

impl<T: Scalar> QTable<T> {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        assert!(n_states > 0 && n_actions > 0);
        QTable {
            n_states,
            n_actions,
            values: vec![T::zero(); n_states * n_actions],
        }
    }

    /// Builds from per-state rows; all rows must share one nonzero length.
    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let n_states = rows.len();
        let n_actions = rows.first().map(Vec::len).unwrap_or(0);
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidArgument("empty table".into()));
        }
        let mut values = Vec::with_capacity(n_states * n_actions);
        for row in &rows {
            if row.len() != n_actions {
                return Err(Error::DimensionMismatch(
                    "table rows have unequal lengths".into(),
                ));
            }
            values.extend_from_slice(row);
        }
        Ok(QTable {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> T {
        self.values[s * self.n_actions + a]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, v: T) {
        self.values[s * self.n_actions + a] = v;
    }

    pub fn row(&self, s: usize) -> &[T] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn row_mut(&mut self, s: usize) -> &mut [T] {
        &mut self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// `max_(s,a) |self − other|`; panics on shape mismatch.
    pub fn sup_norm_diff(&self, other: &QTable<T>) -> T {
        assert_eq!(self.n_states, other.n_states, "state count mismatch");
        assert_eq!(self.n_actions, other.n_actions, "action count mismatch");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().map(|v| v.abs()).fold(T::zero(), T::max)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Pointwise `self + scale·other`.
    pub fn axpy(&self, scale: T, other: &QTable<T>) -> QTable<T> {
        assert_eq!(self.n_states, other.n_states);
        assert_eq!(self.n_actions, other.n_actions);
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a + scale * b)
            .collect();
        QTable {
            n_states: self.n_states,
            n_actions: self.n_actions,
            values,
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        self.values
            .chunks(self.n_actions)
            .map(|r| r.to_vec())
            .collect()
    }
}

impl<T: Scalar> Serialize for QTable<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for QTable<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<T>>::deserialize(deserializer)?;
        QTable::from_rows(rows).map_err(|e| D::Error::custom(e.to_string()))
    }
}

// ---------------------------------------------------------------------------
// PolicyTable
// ---------------------------------------------------------------------------

/// Per-state action distributions with strictly positive support.
///
/// `temperature_meta` records the softmax temperature used at construction
/// when one applies (diagnostic only; not serialized — the wire format is the
/// bare nested probability array, matching [`QTable`]).
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyTable<T: Scalar> {
    n_states: usize,
    n_actions: usize,
    probs: Vec<T>,
    temperature_meta: Option<T>,
}

impl<T: Scalar> PolicyTable<T> {
    /// Uniform policy over `n_actions` in every state.
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        assert!(n_states > 0 && n_actions > 0);
        let p = T::one() / T::of(n_actions as f64);
        PolicyTable {
            n_states,
            n_actions,
            probs: vec![p; n_states * n_actions],
            temperature_meta: None,
        }
    }

    /// Builds from per-state rows, enforcing strict positivity and row sums
    /// within tolerance of 1.
    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let table = QTable::from_rows(rows)?;
        let policy = PolicyTable {
            n_states: table.n_states,
            n_actions: table.n_actions,
            probs: table.values,
            temperature_meta: None,
        };
        policy.validate()?;
        Ok(policy)
    }

    /// Internal constructor for producers that guarantee validity (softmax
    /// output is positive and normalized by construction).
    pub(crate) fn from_raw(
        n_states: usize,
        n_actions: usize,
        probs: Vec<T>,
        temperature_meta: Option<T>,
    ) -> Self {
        debug_assert_eq!(probs.len(), n_states * n_actions);
        PolicyTable {
            n_states,
            n_actions,
            probs,
            temperature_meta,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn temperature_meta(&self) -> Option<T> {
        self.temperature_meta
    }

    pub fn with_temperature_meta(mut self, alpha: T) -> Self {
        self.temperature_meta = Some(alpha);
        self
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> T {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[T] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub(crate) fn row_mut(&mut self, s: usize) -> &mut [T] {
        &mut self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        self.probs
            .chunks(self.n_actions)
            .map(|r| r.to_vec())
            .collect()
    }

    /// Checks strict positivity, finiteness, and row normalization.
    pub fn validate(&self) -> Result<()> {
        let tol = row_sum_tolerance::<T>(self.n_actions);
        for s in 0..self.n_states {
            let mut sum = T::zero();
            for (a, &p) in self.row(s).iter().enumerate() {
                if !p.is_finite() || p <= T::zero() {
                    return Err(Error::InvalidArgument(format!(
                        "policy entry ({s}, {a}) = {p} is not strictly positive and finite"
                    )));
                }
                sum += p;
            }
            if (sum - T::one()).abs() > tol {
                return Err(Error::InvalidArgument(format!(
                    "policy row {s} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }

    /// Replaces non-positive entries with `floor` and renormalizes each
    /// affected row. Returns how many entries were floored; intended for
    /// externally loaded policies where `ln π` must stay finite.
    pub fn floor_and_renormalize(&mut self, floor: T) -> Result<usize> {
        let mut floored = 0usize;
        for s in 0..self.n_states {
            let row = self.row_mut(s);
            let mut touched = false;
            for p in row.iter_mut() {
                if !p.is_finite() || *p < T::zero() {
                    return Err(Error::InvalidArgument(format!(
                        "policy row {s} contains a negative or non-finite probability"
                    )));
                }
                if *p == T::zero() {
                    *p = floor;
                    floored += 1;
                    touched = true;
                }
            }
            if touched {
                let sum: T = row.iter().copied().sum();
                for p in row.iter_mut() {
                    *p /= sum;
                }
            }
        }
        Ok(floored)
    }

    /// `max_s ½·Σ_a |self(a|s) − other(a|s)|` — the worst per-state total
    /// variation distance between two policies.
    pub fn max_total_variation(&self, other: &PolicyTable<T>) -> T {
        assert_eq!(self.n_states, other.n_states, "state count mismatch");
        assert_eq!(self.n_actions, other.n_actions, "action count mismatch");
        let half = T::of(0.5);
        (0..self.n_states)
            .map(|s| {
                let l1: T = self
                    .row(s)
                    .iter()
                    .zip(other.row(s))
                    .map(|(&p, &q)| (p - q).abs())
                    .sum();
                half * l1
            })
            .fold(T::zero(), T::max)
    }

    /// Sup-norm over all entries of the difference to `other`.
    pub fn sup_norm_diff(&self, other: &PolicyTable<T>) -> T {
        assert_eq!(self.n_states, other.n_states);
        assert_eq!(self.n_actions, other.n_actions);
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(&p, &q)| (p - q).abs())
            .fold(T::zero(), T::max)
    }

    /// Samples an action in state `s` by inverse-CDF walk over the row.
    pub fn sample_action<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        sample_index(self.row(s), rng)
    }
}

/// Inverse-CDF draw from an explicit probability row (consumes one `f64`).
/// Rounding slack is absorbed by the final entry.
pub(crate) fn sample_index<T: Scalar, R: Rng + ?Sized>(row: &[T], rng: &mut R) -> usize {
    let u = T::of(rng.gen::<f64>());
    let mut acc = T::zero();
    for (a, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return a;
        }
    }
    row.len() - 1
}

impl<T: Scalar> Serialize for PolicyTable<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for PolicyTable<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<T>>::deserialize(deserializer)?;
        PolicyTable::from_rows(rows).map_err(|e| D::Error::custom(e.to_string()))
    }
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// One of the two reward channels an MDP carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardChannel {
    Basic,
    Addon,
}

impl fmt::Display for RewardChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RewardChannel::Basic => write!(f, "basic"),
            RewardChannel::Addon => write!(f, "addon"),
        }
    }
}

/// A single structural violation found by [`validate_mdp`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    /// Transition row does not sum to 1 within tolerance.
    TransitionRowSum {
        state: usize,
        action: usize,
        sum: f64,
    },
    /// Negative probability entry.
    NegativeProbability {
        state: usize,
        action: usize,
        next_state: usize,
        prob: f64,
    },
    /// Probability entry is NaN or infinite.
    NonFiniteProbability {
        state: usize,
        action: usize,
        next_state: usize,
    },
    /// Reward entry is NaN or infinite.
    NonFiniteReward {
        state: usize,
        action: usize,
        channel: RewardChannel,
    },
    /// Terminal state carries a nonzero reward on some channel.
    TerminalReward {
        state: usize,
        action: usize,
        channel: RewardChannel,
        value: f64,
    },
    /// Terminal state's transition row is not a self-loop point mass.
    TerminalNotSelfLoop { state: usize, action: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TransitionRowSum { state, action, sum } => {
                write!(
                    f,
                    "transition row ({state}, {action}) sums to {sum}, expected 1"
                )
            }
            Violation::NegativeProbability {
                state,
                action,
                next_state,
                prob,
            } => write!(
                f,
                "negative probability {prob} at ({state}, {action}) -> {next_state}"
            ),
            Violation::NonFiniteProbability {
                state,
                action,
                next_state,
            } => write!(
                f,
                "non-finite probability at ({state}, {action}) -> {next_state}"
            ),
            Violation::NonFiniteReward {
                state,
                action,
                channel,
            } => write!(f, "non-finite {channel} reward at ({state}, {action})"),
            Violation::TerminalReward {
                state,
                action,
                channel,
                value,
            } => write!(
                f,
                "terminal state {state} has nonzero {channel} reward {value} at action {action}"
            ),
            Violation::TerminalNotSelfLoop { state, action } => write!(
                f,
                "terminal state {state} does not self-loop with probability 1 at action {action}"
            ),
        }
    }
}

/// Result of [`validate_mdp`]: empty means the model satisfies every
/// structural invariant.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    /// Converts a non-empty report into an error, passing valid models
    /// through.
    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidModel(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "- {v}")?;
        }
        Ok(())
    }
}

/// Checks every structural invariant of the model and reports all violations
/// (row sums, nonnegativity, finiteness, and the terminal zero-reward
/// self-loop convention). Callers decide whether violations abort.
pub fn validate_mdp<T: Scalar>(mdp: &DiscreteMdp<T>) -> ValidationReport {
    let mut report = ValidationReport::default();
    let tol = row_sum_tolerance::<T>(mdp.n_states());
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let row = mdp.successors(s, a);
            let mut sum = T::zero();
            for &(next, p) in row {
                if !p.is_finite() {
                    report.violations.push(Violation::NonFiniteProbability {
                        state: s,
                        action: a,
                        next_state: next,
                    });
                } else if p < T::zero() {
                    report.violations.push(Violation::NegativeProbability {
                        state: s,
                        action: a,
                        next_state: next,
                        prob: p.to64(),
                    });
                }
                sum += p;
            }
            if !sum.is_finite() || (sum - T::one()).abs() > tol {
                report.violations.push(Violation::TransitionRowSum {
                    state: s,
                    action: a,
                    sum: sum.to64(),
                });
            }
            let channels = [
                (RewardChannel::Basic, mdp.basic(s, a)),
                (RewardChannel::Addon, mdp.addon(s, a)),
            ];
            for (channel, r) in channels {
                if !r.is_finite() {
                    report.violations.push(Violation::NonFiniteReward {
                        state: s,
                        action: a,
                        channel,
                    });
                }
            }
            if mdp.is_terminal(s) {
                let self_loop =
                    row.len() == 1 && row[0].0 == s && (row[0].1 - T::one()).abs() <= tol;
                if !self_loop {
                    report.violations.push(Violation::TerminalNotSelfLoop {
                        state: s,
                        action: a,
                    });
                }
                for (channel, r) in channels {
                    if r != T::zero() {
                        report.violations.push(Violation::TerminalReward {
                            state: s,
                            action: a,
                            channel,
                            value: r.to64(),
                        });
                    }
                }
            }
        }
    }
    report
}

// ---------------------------------------------------------------------------
// Reward composition and transition sampling
// ---------------------------------------------------------------------------

/// Materializes the selected reward channel as a dense table:
/// `ω·basic + addon` for the combined selector, a passthrough copy otherwise.
/// Rejects negative `ω`.
pub fn compose_reward<T: Scalar>(
    mdp: &DiscreteMdp<T>,
    selector: RewardSelector<T>,
) -> Result<QTable<T>> {
    selector.validate()?;
    let mut table = QTable::zeros(mdp.n_states(), mdp.n_actions());
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            table.set(s, a, mdp.reward(s, a, selector));
        }
    }
    Ok(table)
}

/// Draws a next state from `transition[s][a]` by inverse-CDF walk. The draw
/// consumes exactly one `f64` from the generator, so a fixed seed and call
/// sequence reproduce bit-identical trajectories.
pub fn sample_transition<T: Scalar, R: Rng + ?Sized>(
    mdp: &DiscreteMdp<T>,
    s: usize,
    a: usize,
    rng: &mut R,
) -> Result<usize> {
    if s >= mdp.n_states() {
        return Err(Error::OutOfRange {
            what: "state",
            index: s,
            limit: mdp.n_states(),
        });
    }
    if a >= mdp.n_actions() {
        return Err(Error::OutOfRange {
            what: "action",
            index: a,
            limit: mdp.n_actions(),
        });
    }
    let u = T::of(rng.gen::<f64>());
    let row = mdp.successors(s, a);
    let mut acc = T::zero();
    for &(next, p) in row {
        acc += p;
        if u < acc {
            return Ok(next);
        }
    }
    // Row sums to 1 up to rounding; attribute the leftover mass to the last
    // successor.
    Ok(row.last().map(|&(next, _)| next).unwrap_or(s))
}
