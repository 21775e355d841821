//! Small built-in instances used by benchmarks and tests.

use crate::model::MdpModel;

/// Two states, two actions. Action 0 mostly self-loops and pays nothing;
/// action 1 mostly swaps states and always pays 1. The optimal policy
/// takes action 1 everywhere and earns exactly 1 per step. Every
/// deterministic policy induces an ergodic chain (τ = 6.25, mixing
/// bound 2), which makes this the standard cheap end-to-end instance.
pub fn reference_2x2() -> MdpModel {
    MdpModel::new(
        2,
        2,
        vec![
            0.8, 0.2, 0.2, 0.8, // action 0
            0.2, 0.8, 0.8, 0.2, // action 1
        ],
        vec![
            0.0, 0.0, 0.0, 0.0, // action 0
            1.0, 1.0, 1.0, 1.0, // action 1
        ],
    )
    .expect("static instance is valid")
}

/// Single-action two-state chain `P = [[0.9, 0.1], [0.2, 0.8]]` paying 1
/// from state 0 and 0 from state 1, so the long-run average reward is the
/// stationary mass of state 0: exactly 2/3. Used for policy-evaluation
/// accuracy checks.
pub fn evaluation_chain() -> MdpModel {
    MdpModel::new(
        2,
        1,
        vec![0.9, 0.1, 0.2, 0.8],
        vec![1.0, 1.0, 0.0, 0.0],
    )
    .expect("static instance is valid")
}

/// A copy of `model` with every reward set to zero.
pub fn zero_reward_variant(model: &MdpModel) -> MdpModel {
    MdpModel::new(
        model.n_states(),
        model.n_actions(),
        model.transition_tensor().to_vec(),
        vec![0.0; model.reward_tensor().len()],
    )
    .expect("zeroing rewards preserves validity")
}
