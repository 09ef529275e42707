//! Discrete benchmark environments with a basic/add-on reward split.
//!
//! Four hand-sized tasks mirror the customization settings the rest of the
//! crate is built for, each pairing a survival- or goal-oriented basic
//! reward with an orthogonal add-on preference:
//!
//! * [`EnvSpec::CenteringChain`] — balance on a windy chain (basic: survive);
//!   add-on: stay near the center.
//! * [`EnvSpec::DiscreteMountainCar`] — rock out of a valley (basic: reach
//!   the goal cheaply); add-on: avoid reverse thrust.
//! * [`EnvSpec::GridHighway`] — weave through scripted traffic on a cyclic
//!   track (basic: survive fast); add-on: keep to the rightmost lane.
//! * [`EnvSpec::GridParking`] — navigate a grid to a parking slot (basic:
//!   get there); add-on: avoid the slot-boundary cells.
//!
//! Every environment is exported twice: as an exact tabular model
//! ([`DiscreteMdp`]) for the solvers, and as an episodic simulator
//! ([`MdpSimulator`]) driven by the same tables, so planner, learner, and
//! evaluator all see one ground truth. Two tiny fixture models are exposed
//! under the same interface so end-to-end configs can run in milliseconds.

use std::io::{BufRead, Write};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixtures;
use crate::mdp::{DiscreteMdp, PolicyTable};
use crate::scalar::Scalar;
use crate::sim::{Environment, InitialStates, MdpSimulator, Termination};

mod chain;
mod highway;
mod mountain_car;
mod parking;

/// Hard cap on enumerated state counts; specs beyond it are rejected.
pub const MAX_ENUMERATED_STATES: usize = 200_000;

fn default_unit() -> f64 {
    1.0
}

fn default_bandit_cap() -> usize {
    1
}

fn default_loop_cap() -> usize {
    25
}

fn default_half_width() -> usize {
    5
}

fn default_chain_cap() -> usize {
    100
}

fn default_positions() -> usize {
    24
}

fn default_max_speed() -> usize {
    5
}

fn default_mc_cap() -> usize {
    60
}

fn default_goal_bonus() -> f64 {
    100.0
}

fn default_energy_coeff() -> f64 {
    0.1
}

fn default_reverse_penalty() -> f64 {
    0.5
}

fn default_lanes() -> usize {
    3
}

fn default_cells() -> usize {
    12
}

fn default_speeds() -> usize {
    3
}

fn default_highway_cap() -> usize {
    40
}

fn default_velocity_coeff() -> f64 {
    0.4
}

fn default_collision_cost() -> f64 {
    0.5
}

fn default_lane_coeff() -> f64 {
    0.5
}

fn default_width() -> usize {
    7
}

fn default_height() -> usize {
    6
}

fn default_parking_cap() -> usize {
    40
}

/// Declarative environment selector, deserialized from experiment configs.
///
/// All sizing and reward-coefficient fields carry defaults, so a config may
/// say no more than `{"name": "grid-highway"}`. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvSpec {
    /// Two-armed bandit fixture; one step per episode.
    #[serde(rename = "bandit-2")]
    Bandit2 {
        #[serde(default = "default_bandit_cap")]
        episode_cap: usize,
    },
    /// Two-state loop fixture; episodes only end by truncation.
    TwoStateLoop {
        #[serde(default = "default_loop_cap")]
        episode_cap: usize,
    },
    /// Windy chain: positions −K..K crossed with a wind direction, plus a
    /// fallen state. Basic +1 per surviving step; add-on −|x|/K.
    CenteringChain {
        /// Half-width K; positions span −K..K.
        #[serde(default = "default_half_width")]
        half_width: usize,
        #[serde(default = "default_chain_cap")]
        episode_cap: usize,
        /// Start uniformly over all live states instead of centered.
        #[serde(default)]
        random_start: bool,
        #[serde(default = "default_unit")]
        survival_reward: f64,
        #[serde(default = "default_unit")]
        centering_weight: f64,
    },
    /// Binned valley: (position, velocity) lattice with gravity stronger
    /// than the engine, so reaching the right hill requires rocking left
    /// first. Basic: goal bonus minus energy; add-on: penalty per
    /// reverse-thrust action.
    DiscreteMountainCar {
        #[serde(default = "default_positions")]
        positions: usize,
        #[serde(default = "default_max_speed")]
        max_speed: usize,
        #[serde(default = "default_mc_cap")]
        episode_cap: usize,
        #[serde(default = "default_goal_bonus")]
        goal_bonus: f64,
        #[serde(default = "default_energy_coeff")]
        energy_coeff: f64,
        #[serde(default = "default_reverse_penalty")]
        reverse_penalty: f64,
    },
    /// Cyclic track with scripted same-speed traffic, viewed in the
    /// traffic's frame: state is (relative offset, lane, own speed) plus a
    /// crash state. Basic: survival plus speed; add-on: rightmost-lane
    /// preference.
    GridHighway {
        #[serde(default = "default_lanes")]
        lanes: usize,
        #[serde(default = "default_cells")]
        cells: usize,
        #[serde(default = "default_speeds")]
        speeds: usize,
        #[serde(default = "default_highway_cap")]
        episode_cap: usize,
        #[serde(default = "default_unit")]
        survival_reward: f64,
        #[serde(default = "default_velocity_coeff")]
        velocity_coeff: f64,
        #[serde(default = "default_collision_cost")]
        collision_cost: f64,
        #[serde(default = "default_lane_coeff")]
        lane_coeff: f64,
    },
    /// Rectangular lot whose bottom row is the parking strip: the middle
    /// cell is the goal, every other bottom-row cell counts as a boundary
    /// violation. Basic: negative distance to goal; add-on: violation
    /// penalty. Walls block movement without ending the episode.
    GridParking {
        #[serde(default = "default_width")]
        width: usize,
        #[serde(default = "default_height")]
        height: usize,
        #[serde(default = "default_parking_cap")]
        episode_cap: usize,
        #[serde(default = "default_unit")]
        distance_coeff: f64,
        #[serde(default = "default_unit")]
        violation_penalty: f64,
    },
}

impl EnvSpec {
    /// Canonical kebab-case name, as used in configs and report labels.
    pub fn name(&self) -> &'static str {
        match self {
            EnvSpec::Bandit2 { .. } => "bandit-2",
            EnvSpec::TwoStateLoop { .. } => "two-state-loop",
            EnvSpec::CenteringChain { .. } => "centering-chain",
            EnvSpec::DiscreteMountainCar { .. } => "discrete-mountain-car",
            EnvSpec::GridHighway { .. } => "grid-highway",
            EnvSpec::GridParking { .. } => "grid-parking",
        }
    }

    /// Spec with all fields at their defaults for the given name.
    pub fn by_name(name: &str) -> Result<EnvSpec> {
        serde_json::from_value(serde_json::json!({ "name": name }))
            .map_err(|e| Error::InvalidArgument(format!("unknown environment {name:?}: {e}")))
    }

    pub fn episode_cap(&self) -> usize {
        match *self {
            EnvSpec::Bandit2 { episode_cap }
            | EnvSpec::TwoStateLoop { episode_cap }
            | EnvSpec::CenteringChain { episode_cap, .. }
            | EnvSpec::DiscreteMountainCar { episode_cap, .. }
            | EnvSpec::GridHighway { episode_cap, .. }
            | EnvSpec::GridParking { episode_cap, .. } => episode_cap,
        }
    }

    pub fn n_states(&self) -> usize {
        match *self {
            EnvSpec::Bandit2 { .. } | EnvSpec::TwoStateLoop { .. } => 2,
            EnvSpec::CenteringChain { half_width, .. } => 2 * (2 * half_width + 1) + 1,
            EnvSpec::DiscreteMountainCar {
                positions,
                max_speed,
                ..
            } => positions * (2 * max_speed + 1) + 1,
            EnvSpec::GridHighway {
                lanes,
                cells,
                speeds,
                ..
            } => cells * lanes * speeds + 1,
            EnvSpec::GridParking { width, height, .. } => width * height,
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            EnvSpec::Bandit2 { .. } | EnvSpec::TwoStateLoop { .. } => 2,
            EnvSpec::CenteringChain { .. } => 2,
            EnvSpec::DiscreteMountainCar { .. } => 3,
            EnvSpec::GridHighway { .. } => 5,
            EnvSpec::GridParking { .. } => 4,
        }
    }

    /// Name of the per-episode task metric computed by
    /// [`compute_task_metric`].
    pub fn metric_name(&self) -> &'static str {
        match self {
            EnvSpec::Bandit2 { .. } | EnvSpec::TwoStateLoop { .. } => "addon-return",
            EnvSpec::CenteringChain { .. } => "mean-abs-position",
            EnvSpec::DiscreteMountainCar { .. } => "negative-actions",
            EnvSpec::GridHighway { .. } => "mean-lane-index",
            EnvSpec::GridParking { .. } => "no-violation",
        }
    }

    /// Direction in which customization should move the task metric.
    pub fn metric_higher_is_better(&self) -> bool {
        match self {
            EnvSpec::CenteringChain { .. } | EnvSpec::DiscreteMountainCar { .. } => false,
            EnvSpec::Bandit2 { .. }
            | EnvSpec::TwoStateLoop { .. }
            | EnvSpec::GridHighway { .. }
            | EnvSpec::GridParking { .. } => true,
        }
    }

    /// Whether running into the episode cap counts as success (survival
    /// tasks) rather than failure (goal-reaching tasks).
    pub fn success_on_truncation(&self) -> bool {
        match self {
            EnvSpec::TwoStateLoop { .. }
            | EnvSpec::CenteringChain { .. }
            | EnvSpec::GridHighway { .. } => true,
            EnvSpec::Bandit2 { .. }
            | EnvSpec::DiscreteMountainCar { .. }
            | EnvSpec::GridParking { .. } => false,
        }
    }

    /// Maps a raw episode termination to this task's success criterion.
    pub fn is_success(&self, termination: Termination) -> bool {
        match termination {
            Termination::Success => true,
            Termination::Failure => false,
            Termination::Truncated => self.success_on_truncation(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.episode_cap() == 0 {
            return Err(Error::InvalidArgument(
                "episode cap must be positive".into(),
            ));
        }
        let coefficients: &[f64] = match self {
            EnvSpec::Bandit2 { .. } | EnvSpec::TwoStateLoop { .. } => &[],
            EnvSpec::CenteringChain {
                half_width,
                survival_reward,
                centering_weight,
                ..
            } => {
                if *half_width == 0 {
                    return Err(Error::InvalidArgument(
                        "chain half-width must be at least 1".into(),
                    ));
                }
                &[*survival_reward, *centering_weight][..]
            }
            EnvSpec::DiscreteMountainCar {
                positions,
                max_speed,
                goal_bonus,
                energy_coeff,
                reverse_penalty,
                ..
            } => {
                if *positions < 9 {
                    return Err(Error::InvalidArgument(format!(
                        "valley needs at least 9 position bins, got {positions}"
                    )));
                }
                if *max_speed < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "top speed must be at least 2, got {max_speed}"
                    )));
                }
                &[*goal_bonus, *energy_coeff, *reverse_penalty][..]
            }
            EnvSpec::GridHighway {
                lanes,
                cells,
                speeds,
                survival_reward,
                velocity_coeff,
                collision_cost,
                lane_coeff,
                ..
            } => {
                if *lanes < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "highway needs at least 2 lanes, got {lanes}"
                    )));
                }
                if *cells < 6 {
                    return Err(Error::InvalidArgument(format!(
                        "cyclic track needs at least 6 cells, got {cells}"
                    )));
                }
                if *speeds == 0 || *speeds > *cells / 2 {
                    return Err(Error::InvalidArgument(format!(
                        "speed levels must lie in 1..={} for {cells} cells, got {speeds}",
                        cells / 2
                    )));
                }
                &[
                    *survival_reward,
                    *velocity_coeff,
                    *collision_cost,
                    *lane_coeff,
                ][..]
            }
            EnvSpec::GridParking {
                width,
                height,
                distance_coeff,
                violation_penalty,
                ..
            } => {
                if *width < 3 || *height < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "parking lot must be at least 3x2, got {width}x{height}"
                    )));
                }
                &[*distance_coeff, *violation_penalty][..]
            }
        };
        if let Some(bad) = coefficients.iter().find(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "reward coefficient must be finite, got {bad}"
            )));
        }
        if self.n_states() > MAX_ENUMERATED_STATES {
            return Err(Error::InvalidArgument(format!(
                "{} enumerates {} states, above the cap of {MAX_ENUMERATED_STATES}",
                self.name(),
                self.n_states()
            )));
        }
        Ok(())
    }
}

/// Builds the episodic simulator and its exact tabular model.
///
/// Both views share one set of transition/reward tables: the simulator is
/// the model's own sampler, so stepping it replays the returned
/// [`DiscreteMdp`] exactly.
pub fn make_env<T: Scalar>(spec: &EnvSpec) -> Result<(MdpSimulator<T>, DiscreteMdp<T>)> {
    spec.validate()?;
    let (mdp, initial, success_terminals) = match *spec {
        EnvSpec::Bandit2 { .. } => (fixtures::bandit2::<T>(), InitialStates::Fixed(0), vec![1]),
        EnvSpec::TwoStateLoop { .. } => (
            fixtures::two_state_loop::<T>(),
            InitialStates::Fixed(0),
            vec![],
        ),
        EnvSpec::CenteringChain {
            half_width,
            random_start,
            survival_reward,
            centering_weight,
            ..
        } => chain::build::<T>(half_width, random_start, survival_reward, centering_weight),
        EnvSpec::DiscreteMountainCar {
            positions,
            max_speed,
            goal_bonus,
            energy_coeff,
            reverse_penalty,
            ..
        } => mountain_car::build::<T>(
            positions,
            max_speed,
            goal_bonus,
            energy_coeff,
            reverse_penalty,
        ),
        EnvSpec::GridHighway {
            lanes,
            cells,
            speeds,
            survival_reward,
            velocity_coeff,
            collision_cost,
            lane_coeff,
            ..
        } => highway::build::<T>(
            lanes,
            cells,
            speeds,
            survival_reward,
            velocity_coeff,
            collision_cost,
            lane_coeff,
        ),
        EnvSpec::GridParking {
            width,
            height,
            distance_coeff,
            violation_penalty,
            ..
        } => parking::build::<T>(width, height, distance_coeff, violation_penalty),
    };
    debug_assert_eq!(mdp.n_states(), spec.n_states());
    debug_assert_eq!(mdp.n_actions(), spec.n_actions());
    let simulator = MdpSimulator::new(mdp.clone(), initial, spec.episode_cap(), success_terminals)?;
    Ok((simulator, mdp))
}

/// One `(state, action, rewards)` step of a recorded episode. `state` is
/// the state the action was taken from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TraceStep<T: Scalar> {
    pub state: usize,
    pub action: usize,
    pub basic_reward: T,
    pub addon_reward: T,
}

/// A full recorded episode: the visited `(state, action, reward)` steps,
/// the state the episode ended in, and how it ended.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EpisodeTrace<T: Scalar> {
    pub steps: Vec<TraceStep<T>>,
    /// State reached by the last step; terminal or the truncation point.
    pub final_state: usize,
    pub terminated: Termination,
}

impl<T: Scalar> EpisodeTrace<T> {
    /// Undiscounted episode return on the basic channel.
    pub fn basic_return(&self) -> T {
        self.steps
            .iter()
            .fold(T::zero(), |acc, step| acc + step.basic_reward)
    }

    /// Undiscounted episode return on the add-on channel.
    pub fn addon_return(&self) -> T {
        self.steps
            .iter()
            .fold(T::zero(), |acc, step| acc + step.addon_reward)
    }
}

/// Runs one episode, sampling actions from `policy`, and records the trace.
pub fn rollout_episode<T: Scalar>(
    env: &mut dyn Environment<T>,
    policy: &PolicyTable<T>,
    rng: &mut dyn RngCore,
) -> Result<EpisodeTrace<T>> {
    if policy.n_states() != env.n_states() || policy.n_actions() != env.n_actions() {
        return Err(Error::DimensionMismatch(format!(
            "policy is {}x{} but the environment is {}x{}",
            policy.n_states(),
            policy.n_actions(),
            env.n_states(),
            env.n_actions()
        )));
    }
    let mut state = env.reset(rng);
    let mut steps = Vec::new();
    loop {
        let action = policy.sample_action(state, rng);
        let outcome = env.step(action, rng)?;
        steps.push(TraceStep {
            state,
            action,
            basic_reward: outcome.basic_reward,
            addon_reward: outcome.addon_reward,
        });
        state = outcome.state;
        if let Some(terminated) = outcome.done {
            return Ok(EpisodeTrace {
                steps,
                final_state: state,
                terminated,
            });
        }
    }
}

/// Writes traces as JSON lines (one episode per line).
pub fn write_traces_jsonl<T: Scalar, W: Write>(
    traces: &[EpisodeTrace<T>],
    mut writer: W,
) -> Result<()> {
    for trace in traces {
        serde_json::to_writer(&mut writer, trace)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads traces back from JSON lines; blank lines are skipped.
pub fn read_traces_jsonl<T: Scalar, R: BufRead>(reader: R) -> Result<Vec<EpisodeTrace<T>>> {
    let mut traces = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        traces.push(serde_json::from_str(&line)?);
    }
    Ok(traces)
}

/// A named per-episode task measurement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskMetric<T: Scalar> {
    pub name: &'static str,
    pub value: T,
}

fn check_trace_against_spec<T: Scalar>(trace: &EpisodeTrace<T>, spec: &EnvSpec) -> Result<()> {
    if trace.steps.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot compute a task metric for an empty trace".into(),
        ));
    }
    let n_states = spec.n_states();
    let n_actions = spec.n_actions();
    for step in &trace.steps {
        if step.state >= n_states || step.action >= n_actions {
            return Err(Error::InvalidArgument(format!(
                "trace step ({}, {}) does not fit {} ({} states, {} actions); \
                 was it recorded on a different environment?",
                step.state,
                step.action,
                spec.name(),
                n_states,
                n_actions
            )));
        }
    }
    if trace.final_state >= n_states {
        return Err(Error::InvalidArgument(format!(
            "trace final state {} does not fit {}",
            trace.final_state,
            spec.name()
        )));
    }
    Ok(())
}

/// Computes the environment's per-episode task metric from a trace.
///
/// * centering chain — mean |position|/K over visited states, in [0, 1];
/// * mountain car — count of reverse-thrust actions;
/// * highway — mean lane index normalized by (lanes−1), in [0, 1];
/// * parking — 1 if no boundary-violation cell was touched (including the
///   final state), else 0; batch means of this flag give the
///   no-violation rate;
/// * fixtures — undiscounted add-on return.
///
/// State/action indices are bounds-checked against the spec, which catches
/// traces recorded on a different (smaller-incompatible) environment;
/// traces from a same-shaped foreign environment cannot be detected.
pub fn compute_task_metric<T: Scalar>(
    trace: &EpisodeTrace<T>,
    spec: &EnvSpec,
) -> Result<TaskMetric<T>> {
    check_trace_against_spec(trace, spec)?;
    let steps = T::of(trace.steps.len() as f64);
    let value = match *spec {
        EnvSpec::Bandit2 { .. } | EnvSpec::TwoStateLoop { .. } => trace.addon_return(),
        EnvSpec::CenteringChain { half_width, .. } => {
            let mut total = T::zero();
            for step in &trace.steps {
                let offset =
                    chain::normalized_abs_position(half_width, step.state).ok_or_else(|| {
                        Error::InvalidArgument("trace visits the fallen state as a source".into())
                    })?;
                total += T::of(offset);
            }
            total / steps
        }
        EnvSpec::DiscreteMountainCar { .. } => {
            let count = trace
                .steps
                .iter()
                .filter(|step| step.action == mountain_car::REVERSE_ACTION)
                .count();
            T::of(count as f64)
        }
        EnvSpec::GridHighway {
            lanes,
            cells,
            speeds,
            ..
        } => {
            let mut total = T::zero();
            for step in &trace.steps {
                let lane = highway::lane_of(lanes, cells, speeds, step.state).ok_or_else(|| {
                    Error::InvalidArgument("trace visits the crash state as a source".into())
                })?;
                total += T::of(lane as f64 / (lanes - 1) as f64);
            }
            total / steps
        }
        EnvSpec::GridParking { width, height, .. } => {
            let violated = trace
                .steps
                .iter()
                .map(|step| step.state)
                .chain(std::iter::once(trace.final_state))
                .any(|s| parking::is_violation(width, height, s));
            if violated {
                T::zero()
            } else {
                T::one()
            }
        }
    };
    Ok(TaskMetric {
        name: spec.metric_name(),
        value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{validate_mdp, PolicyTable};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn all_specs() -> Vec<EnvSpec> {
        [
            "bandit-2",
            "two-state-loop",
            "centering-chain",
            "discrete-mountain-car",
            "grid-highway",
            "grid-parking",
        ]
        .iter()
        .map(|name| EnvSpec::by_name(name).unwrap())
        .collect()
    }

    fn benchmark_specs() -> Vec<EnvSpec> {
        all_specs()
            .into_iter()
            .filter(|s| !matches!(s, EnvSpec::Bandit2 { .. } | EnvSpec::TwoStateLoop { .. }))
            .collect()
    }

    fn uniform_policy(n_states: usize, n_actions: usize) -> PolicyTable<f64> {
        PolicyTable::uniform(n_states, n_actions)
    }

    #[test]
    fn default_specs_parse_by_name_and_validate() {
        for spec in all_specs() {
            spec.validate().unwrap();
            assert_eq!(EnvSpec::by_name(spec.name()).unwrap(), spec);
        }
        assert!(EnvSpec::by_name("no-such-env").is_err());
    }

    #[test]
    fn spec_json_round_trips_and_rejects_unknown_keys() {
        let spec: EnvSpec =
            serde_json::from_str(r#"{"name": "centering-chain", "half_width": 3}"#).unwrap();
        assert_eq!(spec.n_states(), 15);
        assert_eq!(spec.episode_cap(), 100);
        let back: EnvSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);

        let bad: std::result::Result<EnvSpec, _> =
            serde_json::from_str(r#"{"name": "centering-chain", "half_wdith": 3}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn oversized_and_degenerate_specs_are_rejected() {
        let mut spec = EnvSpec::by_name("centering-chain").unwrap();
        if let EnvSpec::CenteringChain { half_width, .. } = &mut spec {
            *half_width = 0;
        }
        assert!(spec.validate().is_err());
        if let EnvSpec::CenteringChain { half_width, .. } = &mut spec {
            *half_width = MAX_ENUMERATED_STATES;
        }
        assert!(spec.validate().is_err());
        assert!(make_env::<f64>(&spec).is_err());

        let mut parking = EnvSpec::by_name("grid-parking").unwrap();
        if let EnvSpec::GridParking { episode_cap, .. } = &mut parking {
            *episode_cap = 0;
        }
        assert!(parking.validate().is_err());
    }

    #[test]
    fn exported_models_pass_validation_with_empty_reports() {
        for spec in all_specs() {
            let (_, mdp) = make_env::<f64>(&spec).unwrap();
            let report = validate_mdp(&mdp);
            assert!(
                report.is_valid(),
                "{} failed validation: {report}",
                spec.name()
            );
            assert_eq!(mdp.n_states(), spec.n_states(), "{}", spec.name());
            assert_eq!(mdp.n_actions(), spec.n_actions(), "{}", spec.name());
        }
    }

    #[test]
    fn state_counts_match_the_documented_sizes() {
        let sizes: Vec<(usize, usize)> = all_specs()
            .iter()
            .map(|s| (s.n_states(), s.n_actions()))
            .collect();
        assert_eq!(
            sizes,
            vec![(2, 2), (2, 2), (23, 2), (265, 3), (109, 5), (42, 4)]
        );
    }

    #[test]
    fn rollout_rewards_match_the_model_tables_exactly() {
        for spec in benchmark_specs() {
            let (mut sim, mdp) = make_env::<f64>(&spec).unwrap();
            let policy = uniform_policy(mdp.n_states(), mdp.n_actions());
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            for _ in 0..20 {
                let trace = rollout_episode(&mut sim, &policy, &mut rng).unwrap();
                for step in &trace.steps {
                    assert_eq!(step.basic_reward, mdp.basic(step.state, step.action));
                    assert_eq!(step.addon_reward, mdp.addon(step.state, step.action));
                }
                assert!(trace.steps.len() <= spec.episode_cap());
            }
        }
    }

    #[test]
    fn rollouts_are_reproducible_from_the_seed() {
        let spec = EnvSpec::by_name("centering-chain").unwrap();
        let (mut sim, mdp) = make_env::<f64>(&spec).unwrap();
        let policy = uniform_policy(mdp.n_states(), mdp.n_actions());
        let mut first = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..5 {
            first.push(rollout_episode(&mut sim, &policy, &mut rng).unwrap());
        }
        let (mut sim_again, _) = make_env::<f64>(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let second: Vec<_> = (0..5)
            .map(|_| rollout_episode(&mut sim_again, &policy, &mut rng).unwrap())
            .collect();
        assert_eq!(first, second);
    }

    /// Stepping the simulator replays the exported tables: empirical
    /// next-state frequencies agree with the transition rows (chi-square
    /// sanity on stochastic rows, exactness on deterministic ones).
    #[test]
    fn simulator_agrees_with_the_exported_model() {
        use std::collections::HashMap;

        for spec in benchmark_specs() {
            let (mut sim, mdp) = make_env::<f64>(&spec).unwrap();
            let policy = uniform_policy(mdp.n_states(), mdp.n_actions());
            let mut rng = ChaCha8Rng::seed_from_u64(2024);
            let mut counts: HashMap<(usize, usize, usize), u64> = HashMap::new();
            let mut steps_seen = 0usize;
            while steps_seen < 10_000 {
                let mut state = sim.reset(&mut rng);
                loop {
                    let action = policy.sample_action(state, &mut rng);
                    let out = sim.step(action, &mut rng).unwrap();
                    *counts.entry((state, action, out.state)).or_default() += 1;
                    steps_seen += 1;
                    state = out.state;
                    if out.done.is_some() {
                        break;
                    }
                }
            }

            let mut visits: HashMap<(usize, usize), u64> = HashMap::new();
            for (&(s, a, _), &c) in &counts {
                *visits.entry((s, a)).or_default() += c;
            }
            for (&(s, a), &n) in &visits {
                let row = mdp.successors(s, a);
                if row.len() == 1 {
                    let only = row[0].0;
                    assert_eq!(
                        counts[&(s, a, only)],
                        n,
                        "{}: deterministic row ({s},{a}) produced a stray successor",
                        spec.name()
                    );
                    continue;
                }
                if n < 200 {
                    continue;
                }
                let mut chi_square = 0.0;
                for &(next, p) in row {
                    let expected = p * n as f64;
                    let observed = counts.get(&(s, a, next)).copied().unwrap_or(0) as f64;
                    if expected > 0.0 {
                        chi_square += (observed - expected).powi(2) / expected;
                    } else {
                        assert_eq!(observed, 0.0);
                    }
                }
                let observed_total: u64 = row
                    .iter()
                    .map(|&(next, _)| counts.get(&(s, a, next)).copied().unwrap_or(0))
                    .sum();
                assert_eq!(
                    observed_total,
                    n,
                    "{}: simulator produced a successor outside row ({s},{a})",
                    spec.name()
                );
                // Rows have at most 5 support points (df <= 4); 40 is far
                // beyond any sane quantile and only catches real breakage.
                assert!(
                    chi_square < 40.0,
                    "{}: chi-square {chi_square:.1} for row ({s},{a}) with {n} visits",
                    spec.name()
                );
            }
        }
    }

    #[test]
    fn centered_trace_scores_zero_position_error() {
        let spec = EnvSpec::by_name("centering-chain").unwrap();
        let center = 5 * 2 + 1; // x = 0, wind +1, K = 5
        let steps = (0..4)
            .map(|_| TraceStep {
                state: center,
                action: 0,
                basic_reward: 1.0,
                addon_reward: 0.0,
            })
            .collect();
        let trace = EpisodeTrace {
            steps,
            final_state: center,
            terminated: Termination::Truncated,
        };
        let metric = compute_task_metric(&trace, &spec).unwrap();
        assert_eq!(metric.name, "mean-abs-position");
        assert_eq!(metric.value, 0.0);
    }

    #[test]
    fn rightmost_lane_trace_scores_full_lane_index() {
        let spec = EnvSpec::by_name("grid-highway").unwrap();
        // offset 0, lane 2, speed 1 => ((0*3)+2)*3 + 0 = 6.
        let state = 6;
        let trace = EpisodeTrace {
            steps: vec![
                TraceStep {
                    state,
                    action: 3,
                    basic_reward: 1.0,
                    addon_reward: 0.5,
                };
                5
            ],
            final_state: state,
            terminated: Termination::Truncated,
        };
        let metric = compute_task_metric(&trace, &spec).unwrap();
        assert_eq!(metric.name, "mean-lane-index");
        assert_relative_eq!(metric.value, 1.0);
    }

    #[test]
    fn reverse_actions_are_counted() {
        let spec = EnvSpec::by_name("discrete-mountain-car").unwrap();
        let steps = [0usize, 2, 0]
            .iter()
            .map(|&action| TraceStep {
                state: 88,
                action,
                basic_reward: 0.0,
                addon_reward: 0.0,
            })
            .collect();
        let trace = EpisodeTrace {
            steps,
            final_state: 88,
            terminated: Termination::Truncated,
        };
        let metric = compute_task_metric(&trace, &spec).unwrap();
        assert_eq!(metric.name, "negative-actions");
        assert_eq!(metric.value, 2.0);
    }

    #[test]
    fn violation_flag_covers_the_final_state() {
        let spec = EnvSpec::by_name("grid-parking").unwrap();
        // Width 7: state 35 is (0, 5) — a boundary cell; 17 is (3, 2).
        let clean = EpisodeTrace {
            steps: vec![TraceStep {
                state: 17,
                action: 1,
                basic_reward: 0.0,
                addon_reward: 0.0,
            }],
            final_state: 24,
            terminated: Termination::Truncated,
        };
        assert_eq!(compute_task_metric(&clean, &spec).unwrap().value, 1.0);

        let dirty = EpisodeTrace {
            final_state: 35,
            ..clean.clone()
        };
        assert_eq!(compute_task_metric(&dirty, &spec).unwrap().value, 0.0);
    }

    #[test]
    fn metrics_stay_in_their_documented_ranges() {
        for spec in benchmark_specs() {
            let (mut sim, mdp) = make_env::<f64>(&spec).unwrap();
            let policy = uniform_policy(mdp.n_states(), mdp.n_actions());
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            for _ in 0..30 {
                let trace = rollout_episode(&mut sim, &policy, &mut rng).unwrap();
                let metric = compute_task_metric(&trace, &spec).unwrap();
                match spec {
                    EnvSpec::DiscreteMountainCar { .. } => {
                        assert!(metric.value >= 0.0);
                        assert!(metric.value <= trace.steps.len() as f64);
                    }
                    _ => {
                        assert!(
                            (0.0..=1.0).contains(&metric.value),
                            "{}: {} out of range",
                            spec.name(),
                            metric.value
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn mismatched_and_empty_traces_are_rejected() {
        let spec = EnvSpec::by_name("bandit-2").unwrap();
        let empty: EpisodeTrace<f64> = EpisodeTrace {
            steps: vec![],
            final_state: 0,
            terminated: Termination::Truncated,
        };
        assert!(compute_task_metric(&empty, &spec).is_err());

        let foreign = EpisodeTrace {
            steps: vec![TraceStep {
                state: 40,
                action: 1,
                basic_reward: 0.0,
                addon_reward: 0.0,
            }],
            final_state: 40,
            terminated: Termination::Truncated,
        };
        assert!(compute_task_metric(&foreign, &spec).is_err());
    }

    #[test]
    fn traces_round_trip_through_json_lines() {
        let spec = EnvSpec::by_name("grid-parking").unwrap();
        let (mut sim, mdp) = make_env::<f64>(&spec).unwrap();
        let policy = uniform_policy(mdp.n_states(), mdp.n_actions());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let traces: Vec<_> = (0..4)
            .map(|_| rollout_episode(&mut sim, &policy, &mut rng).unwrap())
            .collect();
        let mut buffer = Vec::new();
        write_traces_jsonl(&traces, &mut buffer).unwrap();
        let text = String::from_utf8(buffer).unwrap();
        assert_eq!(text.lines().count(), 4);
        let back: Vec<EpisodeTrace<f64>> = read_traces_jsonl(text.as_bytes()).unwrap();
        assert_eq!(back, traces);
    }

    #[test]
    fn success_classification_follows_the_task_style() {
        let chain = EnvSpec::by_name("centering-chain").unwrap();
        assert!(chain.is_success(Termination::Truncated));
        assert!(!chain.is_success(Termination::Failure));
        let parking = EnvSpec::by_name("grid-parking").unwrap();
        assert!(!parking.is_success(Termination::Truncated));
        assert!(parking.is_success(Termination::Success));
        assert!(!chain.metric_higher_is_better());
        assert!(parking.metric_higher_is_better());
    }
}
