//! Windy centering chain.
//!
//! The agent balances on a line of positions `−K..K` while a wind of
//! direction `d ∈ {−1, +1}` gusts against it. Each step the agent pushes
//! left or right; the push always moves it one cell, and with probability
//! [`GUST_PROB`] the wind adds a second cell in its own direction.
//! Independently the wind direction flips with probability [`FLIP_PROB`].
//! Leaving the `−K..K` range falls off the chain — a terminal failure.
//!
//! Basic reward: a flat survival bonus per live step, so the basic-optimal
//! policy simply avoids the edges and otherwise wanders. Add-on reward:
//! `−|x|/K` per step, pulling the customized policy toward the center.

use crate::mdp::DiscreteMdp;
use crate::scalar::Scalar;
use crate::sim::InitialStates;

/// Probability that the wind displaces the agent an extra cell.
pub(crate) const GUST_PROB: f64 = 0.3;
/// Probability that the wind direction flips after a step.
pub(crate) const FLIP_PROB: f64 = 0.1;
/// Discount used by the exported model.
pub(crate) const DISCOUNT: f64 = 0.95;

const PUSH_DIRECTIONS: [i64; 2] = [-1, 1];

fn state_index(half_width: usize, x: i64, wind: i64) -> usize {
    let k = half_width as i64;
    debug_assert!((-k..=k).contains(&x) && (wind == -1 || wind == 1));
    ((x + k) as usize) * 2 + usize::from(wind == 1)
}

fn fallen_index(half_width: usize) -> usize {
    (2 * half_width + 1) * 2
}

/// `|x|/K` for a live state, `None` for the fallen state.
pub(crate) fn normalized_abs_position(half_width: usize, state: usize) -> Option<f64> {
    if state >= fallen_index(half_width) {
        return None;
    }
    let x = (state / 2) as i64 - half_width as i64;
    Some(x.unsigned_abs() as f64 / half_width as f64)
}

pub(crate) fn build<T: Scalar>(
    half_width: usize,
    random_start: bool,
    survival_reward: f64,
    centering_weight: f64,
) -> (DiscreteMdp<T>, InitialStates, Vec<usize>) {
    let k = half_width as i64;
    let fallen = fallen_index(half_width);
    let n_states = fallen + 1;
    let mut mdp = DiscreteMdp::new(n_states, 2, T::of(DISCOUNT));

    for x in -k..=k {
        for wind in [-1i64, 1] {
            let s = state_index(half_width, x, wind);
            for (a, &dir) in PUSH_DIRECTIONS.iter().enumerate() {
                // Outcomes: (gust?, flip?) with independent probabilities.
                let mut row: Vec<(usize, T)> = Vec::with_capacity(4);
                for (gust, p_gust) in [(false, 1.0 - GUST_PROB), (true, GUST_PROB)] {
                    let x_next = x + dir + if gust { wind } else { 0 };
                    for (wind_next, p_flip) in [(wind, 1.0 - FLIP_PROB), (-wind, FLIP_PROB)] {
                        let p = T::of(p_gust * p_flip);
                        let next = if x_next.abs() > k {
                            fallen
                        } else {
                            state_index(half_width, x_next, wind_next)
                        };
                        match row.iter_mut().find(|(t, _)| *t == next) {
                            Some((_, mass)) => *mass += p,
                            None => row.push((next, p)),
                        }
                    }
                }
                mdp.set_transition(s, a, &row);
                mdp.set_basic(s, a, T::of(survival_reward));
                mdp.set_addon(
                    s,
                    a,
                    T::of(-centering_weight * x.unsigned_abs() as f64 / half_width as f64),
                );
            }
        }
    }
    mdp.set_terminal(fallen);

    let initial = if random_start {
        InitialStates::UniformOver((0..fallen).collect())
    } else {
        InitialStates::UniformOver(vec![
            state_index(half_width, 0, -1),
            state_index(half_width, 0, 1),
        ])
    };
    // Falling is the failure mode; surviving episodes end by truncation.
    (mdp, initial, vec![])
}
