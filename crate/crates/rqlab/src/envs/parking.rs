//! Grid parking lot with a soft boundary constraint.
//!
//! A `width × height` grid whose bottom row is the parking strip: the
//! middle bottom cell is the goal slot, and every other bottom-row cell is
//! a slot boundary. The agent moves up/down/left/right; moves into a wall
//! leave the state unchanged but consume the step. Reaching the goal ends
//! the episode successfully. Dynamics are fully deterministic.
//!
//! Basic reward: negative normalized Manhattan distance to the goal per
//! step, so shorter routes score better but many routes tie. Add-on
//! reward: a flat penalty per step spent on a boundary cell — touching
//! boundaries never ends the episode, it only costs.

use crate::mdp::DiscreteMdp;
use crate::scalar::Scalar;
use crate::sim::InitialStates;

/// Discount used by the exported model.
pub(crate) const DISCOUNT: f64 = 0.95;

/// (dx, dy) per action: up, down, left, right.
const MOVES: [(i64, i64); 4] = [(0, -1), (0, 1), (-1, 0), (1, 0)];

fn index(width: usize, x: usize, y: usize) -> usize {
    debug_assert!(x < width);
    y * width + x
}

fn goal_cell(width: usize, height: usize) -> (usize, usize) {
    (width / 2, height - 1)
}

/// Whether a state sits on a slot boundary (bottom row, not the goal).
pub(crate) fn is_violation(width: usize, height: usize, state: usize) -> bool {
    let (x, y) = (state % width, state / width);
    y == height - 1 && x != width / 2
}

pub(crate) fn build<T: Scalar>(
    width: usize,
    height: usize,
    distance_coeff: f64,
    violation_penalty: f64,
) -> (DiscreteMdp<T>, InitialStates, Vec<usize>) {
    let (gx, gy) = goal_cell(width, height);
    let goal = index(width, gx, gy);
    let scale = ((width - 1) + (height - 1)) as f64;
    let mut mdp = DiscreteMdp::new(width * height, MOVES.len(), T::of(DISCOUNT));

    for y in 0..height {
        for x in 0..width {
            let s = index(width, x, y);
            let distance = (x.abs_diff(gx) + y.abs_diff(gy)) as f64;
            for (a, &(dx, dy)) in MOVES.iter().enumerate() {
                let nx = (x as i64 + dx).clamp(0, width as i64 - 1) as usize;
                let ny = (y as i64 + dy).clamp(0, height as i64 - 1) as usize;
                mdp.set_transition(s, a, &[(index(width, nx, ny), T::one())]);
                mdp.set_basic(s, a, T::of(-distance_coeff * distance / scale));
                if is_violation(width, height, s) {
                    mdp.set_addon(s, a, T::of(-violation_penalty));
                }
            }
        }
    }
    mdp.set_terminal(goal);

    let initial = InitialStates::UniformOver((0..width).map(|x| index(width, x, 0)).collect());
    (mdp, initial, vec![goal])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn default_mdp() -> DiscreteMdp<f64> {
        build::<f64>(7, 6, 1.0, 1.0).0
    }

    #[test]
    fn walls_block_without_ending_the_episode() {
        let mdp = default_mdp();
        let corner = index(7, 0, 0);
        assert_eq!(mdp.successors(corner, 0), [(corner, 1.0)].as_slice());
        assert_eq!(mdp.successors(corner, 2), [(corner, 1.0)].as_slice());
        assert!(!mdp.is_terminal(corner));
        assert_eq!(
            mdp.successors(corner, 3),
            [(index(7, 1, 0), 1.0)].as_slice()
        );
    }

    #[test]
    fn goal_slot_is_terminal_and_centered() {
        let mdp = default_mdp();
        let goal = index(7, 3, 5);
        assert!(mdp.is_terminal(goal));
        assert!(!is_violation(7, 6, goal));
    }

    #[test]
    fn bottom_row_flanks_are_violations() {
        for x in 0..7 {
            assert_eq!(is_violation(7, 6, index(7, x, 5)), x != 3);
        }
        for x in 0..7 {
            assert!(!is_violation(7, 6, index(7, x, 4)));
        }
    }

    #[test]
    fn descending_the_goal_column_avoids_all_violations() {
        let mdp = default_mdp();
        let mut s = index(7, 3, 0);
        for _ in 0..5 {
            assert!(!is_violation(7, 6, s));
            s = mdp.successors(s, 1)[0].0;
        }
        assert_eq!(s, index(7, 3, 5));
    }

    #[test]
    fn rewards_encode_distance_and_boundary_contact() {
        let mdp = default_mdp();
        assert_relative_eq!(mdp.basic(index(7, 0, 0), 1), -8.0 / 11.0, epsilon = 1e-15);
        assert_relative_eq!(mdp.basic(index(7, 3, 4), 0), -1.0 / 11.0, epsilon = 1e-15);
        assert_eq!(mdp.addon(index(7, 0, 5), 3), -1.0);
        assert_eq!(mdp.addon(index(7, 3, 4), 1), 0.0);
        assert_eq!(mdp.addon(index(7, 2, 3), 1), 0.0);
    }

    #[test]
    fn episodes_start_anywhere_on_the_top_row() {
        let (_, initial, _) = build::<f64>(7, 6, 1.0, 1.0);
        match initial {
            InitialStates::UniformOver(states) => {
                assert_eq!(states, (0..7).collect::<Vec<_>>());
            }
            other => panic!("unexpected initial-state rule: {other:?}"),
        }
    }
}
