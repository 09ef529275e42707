//! Binned mountain-car valley.
//!
//! The car lives on a lattice of `positions` cells with integer velocity
//! `−V..V`. Each step the engine applies a force `f ∈ {−1, 0, +1}` and the
//! slope adds its pull; velocity then displaces the car by its full value.
//! The slope is gentle near the valley floor and steep on the hillsides
//! (±2 velocity units), while the engine only musters ±1 — driving
//! straight up the right hill stalls, so the only route to the goal is to
//! rock left onto the steep launch zone first and ride gravity back
//! through the valley.
//!
//! Basic reward: a goal bonus minus a quadratic energy cost per thrust.
//! Add-on reward: a flat penalty for each reverse-thrust step.

use crate::mdp::DiscreteMdp;
use crate::scalar::Scalar;
use crate::sim::InitialStates;

/// Action index applying force −1; the add-on channel penalizes it.
pub(crate) const REVERSE_ACTION: usize = 0;
/// Discount used by the exported model.
pub(crate) const DISCOUNT: f64 = 0.99;

const FORCES: [i64; 3] = [-1, 0, 1];

struct Layout {
    positions: usize,
    max_speed: i64,
}

impl Layout {
    fn n_velocities(&self) -> usize {
        (2 * self.max_speed + 1) as usize
    }

    fn goal_state(&self) -> usize {
        self.positions * self.n_velocities()
    }

    fn index(&self, x: usize, v: i64) -> usize {
        debug_assert!(x < self.positions && v.abs() <= self.max_speed);
        x * self.n_velocities() + (v + self.max_speed) as usize
    }

    /// Valley floor position.
    fn bottom(&self) -> usize {
        self.positions / 3
    }

    /// Gravity pull in velocity units: positive (rightward) on the left
    /// slope, negative on the right slope, doubled on the steep outer
    /// sections.
    fn slope(&self, x: usize) -> i64 {
        let bottom = self.bottom();
        let steep_left = bottom / 4;
        let steep_right = (bottom + self.positions - 1) / 2;
        if x < bottom {
            if x <= steep_left {
                2
            } else {
                1
            }
        } else if x == bottom {
            0
        } else if x >= steep_right {
            -2
        } else {
            -1
        }
    }

    /// Deterministic next configuration; `None` means the goal was reached.
    fn step(&self, x: usize, v: i64, force: i64) -> Option<(usize, i64)> {
        let v_next = (v + force + self.slope(x)).clamp(-self.max_speed, self.max_speed);
        let x_next = x as i64 + v_next;
        if x_next >= self.positions as i64 - 1 {
            None
        } else if x_next <= 0 {
            // Left wall: park against it with zero velocity.
            Some((0, 0))
        } else {
            Some((x_next as usize, v_next))
        }
    }
}

pub(crate) fn build<T: Scalar>(
    positions: usize,
    max_speed: usize,
    goal_bonus: f64,
    energy_coeff: f64,
    reverse_penalty: f64,
) -> (DiscreteMdp<T>, InitialStates, Vec<usize>) {
    let layout = Layout {
        positions,
        max_speed: max_speed as i64,
    };
    let goal = layout.goal_state();
    let mut mdp = DiscreteMdp::new(goal + 1, FORCES.len(), T::of(DISCOUNT));

    for x in 0..positions {
        for v in -layout.max_speed..=layout.max_speed {
            let s = layout.index(x, v);
            for (a, &force) in FORCES.iter().enumerate() {
                let (next, reached_goal) = match layout.step(x, v, force) {
                    Some((x_next, v_next)) => (layout.index(x_next, v_next), false),
                    None => (goal, true),
                };
                mdp.set_transition(s, a, &[(next, T::one())]);
                let mut basic = -energy_coeff * (force * force) as f64;
                if reached_goal {
                    basic += goal_bonus;
                }
                mdp.set_basic(s, a, T::of(basic));
                if force < 0 {
                    mdp.set_addon(s, a, T::of(-reverse_penalty));
                }
            }
        }
    }
    mdp.set_terminal(goal);

    let bottom = layout.bottom();
    let initial = InitialStates::UniformOver(vec![
        layout.index(bottom - 1, 0),
        layout.index(bottom, 0),
        layout.index(bottom + 1, 0),
    ]);
    (mdp, initial, vec![goal])
}
