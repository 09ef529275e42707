//! Episodic simulator interface and the tabular reference simulator.
//!
//! Learners that must not see a model (the sample-based residual learner,
//! policy evaluation in the harness) interact with a [`Environment`]: an
//! indexed state/action space with `reset`/`step` semantics, a step cap, and
//! a three-way termination verdict. [`MdpSimulator`] implements the trait by
//! replaying an exact [`DiscreteMdp`] transition kernel, which makes the
//! simulator and the model agree by construction.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{sample_transition, DiscreteMdp};
use crate::scalar::Scalar;

/// Why an episode ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    /// Reached a goal terminal, or survived to the cap where surviving is the
    /// objective.
    Success,
    /// Reached a failure terminal (crash, fall).
    Failure,
    /// Hit the step cap without a terminal verdict.
    Truncated,
}

/// One transition as seen by a learner.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome<T: Scalar> {
    /// State after the transition.
    pub state: usize,
    pub basic_reward: T,
    pub addon_reward: T,
    /// `Some` when the episode just ended. `Success`/`Failure` imply the new
    /// state is terminal in the underlying task; `Truncated` is the artificial
    /// step cap and must *not* zero bootstrap targets.
    pub done: Option<Termination>,
}

impl<T: Scalar> StepOutcome<T> {
    /// True when the new state is a real task terminal (continuation value is
    /// exactly zero), as opposed to a step-cap truncation.
    pub fn reached_terminal(&self) -> bool {
        matches!(self.done, Some(Termination::Success | Termination::Failure))
    }
}

/// Black-box episodic simulator over an indexed state/action space.
pub trait Environment<T: Scalar> {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    /// Starts a new episode and returns its initial state.
    fn reset(&mut self, rng: &mut dyn RngCore) -> usize;
    /// Advances one step. Stepping a finished (or never-started) episode is
    /// an error.
    fn step(&mut self, action: usize, rng: &mut dyn RngCore) -> Result<StepOutcome<T>>;
}

/// How the reference simulator draws initial states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialStates {
    Fixed(usize),
    UniformOver(Vec<usize>),
}

impl InitialStates {
    fn draw(&self, rng: &mut dyn RngCore) -> usize {
        match self {
            InitialStates::Fixed(s) => *s,
            InitialStates::UniformOver(states) => states[rng.gen_range(0..states.len())],
        }
    }
}

/// Reference simulator that replays an exact MDP kernel.
///
/// Terminal states are classified `Success` or `Failure` via a per-state
/// mask; hitting the step cap yields `Truncated`. Every `reset`/`step` draw
/// consumes RNG state deterministically, so a fixed seed reproduces a
/// trajectory bit-for-bit.
#[derive(Clone, Debug)]
pub struct MdpSimulator<T: Scalar> {
    mdp: DiscreteMdp<T>,
    initial: InitialStates,
    episode_cap: usize,
    /// `true` at terminal states that count as task success.
    success_terminals: Vec<bool>,
    state: usize,
    steps_taken: usize,
    in_episode: bool,
}

impl<T: Scalar> MdpSimulator<T> {
    /// Builds a simulator; every marked success terminal must actually be a
    /// terminal state of the model.
    pub fn new(
        mdp: DiscreteMdp<T>,
        initial: InitialStates,
        episode_cap: usize,
        success_terminals: Vec<usize>,
    ) -> Result<Self> {
        if episode_cap == 0 {
            return Err(Error::InvalidArgument(
                "episode cap must be positive".into(),
            ));
        }
        match &initial {
            InitialStates::Fixed(s) => {
                if *s >= mdp.n_states() {
                    return Err(Error::OutOfRange {
                        what: "initial state",
                        index: *s,
                        limit: mdp.n_states(),
                    });
                }
            }
            InitialStates::UniformOver(states) => {
                if states.is_empty() {
                    return Err(Error::InvalidArgument(
                        "initial state set must be non-empty".into(),
                    ));
                }
                for &s in states {
                    if s >= mdp.n_states() {
                        return Err(Error::OutOfRange {
                            what: "initial state",
                            index: s,
                            limit: mdp.n_states(),
                        });
                    }
                }
            }
        }
        let mut success_mask = vec![false; mdp.n_states()];
        for s in success_terminals {
            if s >= mdp.n_states() || !mdp.is_terminal(s) {
                return Err(Error::InvalidArgument(format!(
                    "success terminal {s} is not a terminal state of the model"
                )));
            }
            success_mask[s] = true;
        }
        Ok(MdpSimulator {
            mdp,
            initial,
            episode_cap,
            success_terminals: success_mask,
            state: 0,
            steps_taken: 0,
            in_episode: false,
        })
    }

    pub fn model(&self) -> &DiscreteMdp<T> {
        &self.mdp
    }

    /// The distribution episodes start from.
    pub fn initial_states(&self) -> &InitialStates {
        &self.initial
    }

    pub fn episode_cap(&self) -> usize {
        self.episode_cap
    }

    pub fn current_state(&self) -> Option<usize> {
        self.in_episode.then_some(self.state)
    }
}

impl<T: Scalar> Environment<T> for MdpSimulator<T> {
    fn n_states(&self) -> usize {
        self.mdp.n_states()
    }

    fn n_actions(&self) -> usize {
        self.mdp.n_actions()
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> usize {
        self.state = self.initial.draw(rng);
        self.steps_taken = 0;
        self.in_episode = true;
        self.state
    }

    fn step(&mut self, action: usize, rng: &mut dyn RngCore) -> Result<StepOutcome<T>> {
        if !self.in_episode {
            return Err(Error::EpisodeFinished);
        }
        let s = self.state;
        let basic_reward = self.mdp.basic(s, action);
        let addon_reward = self.mdp.addon(s, action);
        let next = sample_transition(&self.mdp, s, action, rng)?;
        self.state = next;
        self.steps_taken += 1;
        let done = if self.mdp.is_terminal(next) {
            Some(if self.success_terminals[next] {
                Termination::Success
            } else {
                Termination::Failure
            })
        } else if self.steps_taken >= self.episode_cap {
            Some(Termination::Truncated)
        } else {
            None
        };
        if done.is_some() {
            self.in_episode = false;
        }
        Ok(StepOutcome {
            state: next,
            basic_reward,
            addon_reward,
            done,
        })
    }
}
