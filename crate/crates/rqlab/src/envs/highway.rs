//! Cyclic grid highway with scripted traffic.
//!
//! A ring of `cells` longitudinal cells crosses `lanes` lanes. A fixed
//! set of scripted vehicles all cruise at speed 1, so in the traffic's
//! reference frame they are static obstacles and the ego state reduces to
//! `(relative offset, lane, own speed)` — `cells × lanes × speeds` live
//! states plus a crash state. Ego speed `s` advances the relative offset
//! by `s − 1` per step.
//!
//! Actions mirror the classic meta-action set: switch-left, switch-right,
//! faster, idle, slower. Lane/speed changes clamp at the boundaries
//! (consuming the step). A step crashes when changing into an occupied
//! cell or sweeping through one; crashing terminates the episode.
//!
//! Basic reward: survival plus a speed bonus, minus a collision cost on
//! the crashing step. Add-on reward: proportional to the current lane
//! index, with the rightmost lane (`lanes − 1`) paying the most.

use crate::mdp::DiscreteMdp;
use crate::scalar::Scalar;
use crate::sim::InitialStates;

/// Discount used by the exported model.
pub(crate) const DISCOUNT: f64 = 0.95;

const SWITCH_LEFT: usize = 0;
const SWITCH_RIGHT: usize = 1;
const FASTER: usize = 2;
#[allow(dead_code)]
const IDLE: usize = 3;
const SLOWER: usize = 4;
const N_ACTIONS: usize = 5;

struct Layout {
    lanes: usize,
    cells: usize,
    speeds: usize,
    /// Scripted vehicles as (relative offset, lane); sorted, deduplicated.
    vehicles: Vec<(usize, usize)>,
}

impl Layout {
    fn new(lanes: usize, cells: usize, speeds: usize) -> Self {
        // One vehicle per ~3 cells, biased toward the rightmost lane so the
        // add-on preference carries real risk: pattern right, middle,
        // right, left.
        let lane_pattern = [lanes - 1, lanes / 2, lanes - 1, 0];
        let mut vehicles: Vec<(usize, usize)> = (0..cells.max(3) / 3)
            .map(|j| ((3 * j + 2) % cells, lane_pattern[j % 4]))
            .collect();
        vehicles.sort_unstable();
        vehicles.dedup();
        Layout {
            lanes,
            cells,
            speeds,
            vehicles,
        }
    }

    fn occupied(&self, offset: usize, lane: usize) -> bool {
        self.vehicles.binary_search(&(offset, lane)).is_ok()
    }

    fn crash_state(&self) -> usize {
        self.cells * self.lanes * self.speeds
    }

    fn index(&self, offset: usize, lane: usize, speed: usize) -> usize {
        debug_assert!(
            offset < self.cells && lane < self.lanes && (1..=self.speeds).contains(&speed)
        );
        (offset * self.lanes + lane) * self.speeds + (speed - 1)
    }

    /// Deterministic next state; `None` signals a collision.
    fn step(&self, offset: usize, lane: usize, speed: usize, action: usize) -> Option<usize> {
        let lane_next = match action {
            SWITCH_LEFT => lane.saturating_sub(1),
            SWITCH_RIGHT => (lane + 1).min(self.lanes - 1),
            _ => lane,
        };
        let speed_next = match action {
            FASTER => (speed + 1).min(self.speeds),
            SLOWER => (speed - 1).max(1),
            _ => speed,
        };
        if lane_next != lane && self.occupied(offset, lane_next) {
            return None;
        }
        let advance = speed_next - 1;
        for ahead in 1..=advance {
            if self.occupied((offset + ahead) % self.cells, lane_next) {
                return None;
            }
        }
        Some(self.index((offset + advance) % self.cells, lane_next, speed_next))
    }
}

/// Lane index of a live state, `None` for the crash state.
pub(crate) fn lane_of(lanes: usize, cells: usize, speeds: usize, state: usize) -> Option<usize> {
    if state >= cells * lanes * speeds {
        return None;
    }
    Some((state / speeds) % lanes)
}

pub(crate) fn build<T: Scalar>(
    lanes: usize,
    cells: usize,
    speeds: usize,
    survival_reward: f64,
    velocity_coeff: f64,
    collision_cost: f64,
    lane_coeff: f64,
) -> (DiscreteMdp<T>, InitialStates, Vec<usize>) {
    let layout = Layout::new(lanes, cells, speeds);
    let crash = layout.crash_state();
    let mut mdp = DiscreteMdp::new(crash + 1, N_ACTIONS, T::of(DISCOUNT));

    for offset in 0..cells {
        for lane in 0..lanes {
            for speed in 1..=speeds {
                let s = layout.index(offset, lane, speed);
                for action in 0..N_ACTIONS {
                    let speed_next = match action {
                        FASTER => (speed + 1).min(speeds),
                        SLOWER => (speed - 1).max(1),
                        _ => speed,
                    };
                    let speed_bonus = if speeds > 1 {
                        velocity_coeff * (speed_next - 1) as f64 / (speeds - 1) as f64
                    } else {
                        0.0
                    };
                    let (next, basic) = match layout.step(offset, lane, speed, action) {
                        Some(next) => (next, survival_reward + speed_bonus),
                        None => (crash, survival_reward + speed_bonus - collision_cost),
                    };
                    mdp.set_transition(s, action, &[(next, T::one())]);
                    mdp.set_basic(s, action, T::of(basic));
                    mdp.set_addon(
                        s,
                        action,
                        T::of(lane_coeff * lane as f64 / (lanes - 1) as f64),
                    );
                }
            }
        }
    }
    mdp.set_terminal(crash);

    // Start in the middle lane at the first traffic-free offset, at a
    // moderate speed.
    let start_lane = lanes / 2;
    let start_offset = (0..cells)
        .find(|&offset| !layout.occupied(offset, start_lane))
        .expect("scripted traffic leaves at most one vehicle per three cells");
    let start = layout.index(start_offset, start_lane, 2.min(speeds));
    // Crashing is the failure mode; surviving episodes end by truncation.
    (mdp, InitialStates::Fixed(start), vec![])
}
