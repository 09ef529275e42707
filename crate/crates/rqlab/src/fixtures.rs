//! Small hand-built MDPs shared across solver, planner, and harness tests.

use rand::Rng;

use crate::mdp::DiscreteMdp;
use crate::scalar::Scalar;

/// Two-armed bandit embedded as an MDP: one decision state `s0` with actions
/// `{a0, a1}`, both leading into an absorbing terminal, so the bandit's
/// effective horizon is one step regardless of discounting (the discount is
/// set to 0 to make that explicit). Basic reward `[1, 0]`, add-on `[0, 1]`.
pub fn bandit2<T: Scalar>() -> DiscreteMdp<T> {
    let mut mdp = DiscreteMdp::new(2, 2, T::zero());
    mdp.set_terminal(1);
    for a in 0..2 {
        mdp.set_transition(0, a, &[(1, T::one())]);
    }
    mdp.set_basic(0, 0, T::one());
    mdp.set_addon(0, 1, T::one());
    mdp
}

/// Two states `{A, B}` (indices 0, 1) with actions `{x, y}` (indices 0, 1)
/// and deterministic moves: `x` stays, `y` switches. Staying at `A` pays
/// basic reward 1; switching away from `A` pays add-on reward 1; all other
/// rewards are zero. Discount 0.9, no terminals — the canonical fixture where
/// the basic and add-on objectives genuinely compete.
pub fn two_state_loop<T: Scalar>() -> DiscreteMdp<T> {
    let mut mdp = DiscreteMdp::new(2, 2, T::of(0.9));
    mdp.set_transition(0, 0, &[(0, T::one())]);
    mdp.set_transition(0, 1, &[(1, T::one())]);
    mdp.set_transition(1, 0, &[(1, T::one())]);
    mdp.set_transition(1, 1, &[(0, T::one())]);
    mdp.set_basic(0, 0, T::one());
    mdp.set_addon(0, 1, T::one());
    mdp
}

/// Random dense MDP: every transition row is a normalized vector of uniform
/// draws (full support), rewards are uniform in `[-1, 1]` on both channels,
/// no terminal states.
pub fn random_mdp<T: Scalar, R: Rng + ?Sized>(
    n_states: usize,
    n_actions: usize,
    discount: f64,
    rng: &mut R,
) -> DiscreteMdp<T> {
    random_mdp_with_terminals(n_states, n_actions, discount, 0, rng)
}

/// Like [`random_mdp`], but the last `n_terminal` states are absorbing
/// terminals following the zero-reward self-loop convention.
pub fn random_mdp_with_terminals<T: Scalar, R: Rng + ?Sized>(
    n_states: usize,
    n_actions: usize,
    discount: f64,
    n_terminal: usize,
    rng: &mut R,
) -> DiscreteMdp<T> {
    assert!(
        n_terminal < n_states,
        "at least one non-terminal state required"
    );
    let mut mdp = DiscreteMdp::new(n_states, n_actions, T::of(discount));
    for s in 0..n_states - n_terminal {
        for a in 0..n_actions {
            let raw: Vec<f64> = (0..n_states).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let sum: f64 = raw.iter().sum();
            let row: Vec<(usize, T)> = raw
                .iter()
                .enumerate()
                .map(|(next, &w)| (next, T::of(w / sum)))
                .collect();
            mdp.set_transition(s, a, &row);
            mdp.set_basic(s, a, T::of(rng.gen_range(-1.0..1.0)));
            mdp.set_addon(s, a, T::of(rng.gen_range(-1.0..1.0)));
        }
    }
    for s in n_states - n_terminal..n_states {
        mdp.set_terminal(s);
    }
    mdp
}

/// Random MDP whose transitions are point masses (deterministic dynamics);
/// rewards uniform in `[-1, 1]`, no terminals.
pub fn random_deterministic_mdp<T: Scalar, R: Rng + ?Sized>(
    n_states: usize,
    n_actions: usize,
    discount: f64,
    rng: &mut R,
) -> DiscreteMdp<T> {
    let mut mdp = DiscreteMdp::new(n_states, n_actions, T::of(discount));
    for s in 0..n_states {
        for a in 0..n_actions {
            let next = rng.gen_range(0..n_states);
            mdp.set_transition(s, a, &[(next, T::one())]);
            mdp.set_basic(s, a, T::of(rng.gen_range(-1.0..1.0)));
            mdp.set_addon(s, a, T::of(rng.gen_range(-1.0..1.0)));
        }
    }
    mdp
}

/// Complete binary tree of depth 3 with two actions (left/right child) and
/// deterministic moves; the eight depth-3 leaves are absorbing terminals.
/// Add-on rewards are fixed distinct constants per edge so planners can be
/// checked against exhaustive backward induction; basic rewards are a small
/// sloped pattern. Discount 0.9. State numbering is heap order: node `i` has
/// children `2i+1` and `2i+2`; states 0–6 are internal, 7–14 are leaves.
pub fn binary_tree_depth3<T: Scalar>() -> DiscreteMdp<T> {
    // One add-on value per (internal node, action) in heap order.
    const ADDON: [[f64; 2]; 7] = [
        [0.70, -0.30],
        [0.20, 0.90],
        [-0.50, 0.40],
        [0.10, 0.80],
        [-0.20, 0.60],
        [0.30, -0.70],
        [0.50, 0.05],
    ];
    let mut mdp = DiscreteMdp::new(15, 2, T::of(0.9));
    for (node, addon_row) in ADDON.iter().enumerate() {
        for (a, &addon) in addon_row.iter().enumerate() {
            let child = 2 * node + 1 + a;
            mdp.set_transition(node, a, &[(child, T::one())]);
            mdp.set_addon(node, a, T::of(addon));
            mdp.set_basic(node, a, T::of(0.1 * (a as f64) - 0.05));
        }
    }
    for leaf in 7..15 {
        mdp.set_terminal(leaf);
    }
    mdp
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::validate_mdp;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn all_fixtures_pass_validation() {
        assert!(validate_mdp(&bandit2::<f64>()).is_valid());
        assert!(validate_mdp(&two_state_loop::<f64>()).is_valid());
        assert!(validate_mdp(&binary_tree_depth3::<f64>()).is_valid());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let random = random_mdp_with_terminals::<f64, _>(9, 3, 0.9, 2, &mut rng);
        assert!(validate_mdp(&random).is_valid());
        let det = random_deterministic_mdp::<f64, _>(6, 2, 0.9, &mut rng);
        assert!(validate_mdp(&det).is_valid());
    }

    #[test]
    fn bandit_rewards_match_construction() {
        let mdp = bandit2::<f64>();
        assert_eq!(mdp.basic(0, 0), 1.0);
        assert_eq!(mdp.basic(0, 1), 0.0);
        assert_eq!(mdp.addon(0, 0), 0.0);
        assert_eq!(mdp.addon(0, 1), 1.0);
        assert!(mdp.is_terminal(1));
        assert_eq!(mdp.discount(), 0.0);
    }

    #[test]
    fn loop_fixture_moves_deterministically() {
        let mdp = two_state_loop::<f64>();
        assert_eq!(mdp.successors(0, 0), &[(0, 1.0)]);
        assert_eq!(mdp.successors(0, 1), &[(1, 1.0)]);
        assert_eq!(mdp.successors(1, 1), &[(0, 1.0)]);
        assert_eq!(mdp.discount(), 0.9);
    }

    #[test]
    fn tree_fixture_has_heap_structure() {
        let mdp = binary_tree_depth3::<f64>();
        assert_eq!(mdp.n_states(), 15);
        assert_eq!(mdp.successors(0, 0), &[(1, 1.0)]);
        assert_eq!(mdp.successors(2, 1), &[(6, 1.0)]);
        assert_eq!(mdp.successors(6, 1), &[(14, 1.0)]);
        assert!(mdp.is_terminal(7) && mdp.is_terminal(14));
        assert!(!mdp.is_terminal(6));
    }
}
