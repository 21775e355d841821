//! Tabular average-reward MDP model, randomized policies, induced chains,
//! and a seeded instance generator.
//!
//! A model holds the transition tensor `p[a][i][j]` and the reward tensor
//! `r[a][i][j]` with rewards in `[0, 1]`. Expected per-action reward vectors
//! are derived on demand rather than stored, so the tensors stay the single
//! source of truth. All types are immutable after construction.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, ModelViolation, Result};

/// Row-stochasticity and distribution-normalization tolerance.
///
/// Double-precision row normalization of up to ~10^4 entries accumulates
/// error well below this bound.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Finite tabular average-reward MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpModel {
    n_states: usize,
    n_actions: usize,
    /// `p[a][i][j]`, row-major with action as the outermost axis.
    transition: Vec<f64>,
    /// `r[a][i][j]`, same layout as `transition`.
    reward: Vec<f64>,
}

impl MdpModel {
    /// Builds a model and rejects it unless every transition row is a
    /// probability distribution and every reward lies in `[0, 1]`.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
    ) -> Result<Self> {
        let model = Self::from_raw(n_states, n_actions, transition, reward)?;
        let violations = model.validate();
        if violations.is_empty() {
            Ok(model)
        } else {
            Err(Error::InvalidModel(violations))
        }
    }

    /// Builds a model checking only tensor shapes, not stochasticity.
    ///
    /// Useful for exercising [`MdpModel::validate`] on deliberately broken
    /// inputs; everything else in this crate expects a validated model.
    pub fn from_raw(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidParameter(
                "n_states and n_actions must be at least 1".into(),
            ));
        }
        let expected = n_actions * n_states * n_states;
        if transition.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "transition tensor length",
                expected,
                got: transition.len(),
            });
        }
        if reward.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "reward tensor length",
                expected,
                got: reward.len(),
            });
        }
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    fn idx(&self, a: usize, i: usize, j: usize) -> usize {
        (a * self.n_states + i) * self.n_states + j
    }

    /// Transition probability `p[a][i][j]`.
    #[inline]
    pub fn p(&self, a: usize, i: usize, j: usize) -> f64 {
        self.transition[self.idx(a, i, j)]
    }

    /// Reward `r[a][i][j]`.
    #[inline]
    pub fn r(&self, a: usize, i: usize, j: usize) -> f64 {
        self.reward[self.idx(a, i, j)]
    }

    /// The transition row `p[a][i][·]` as a slice of length `n_states`.
    #[inline]
    pub fn transition_row(&self, a: usize, i: usize) -> &[f64] {
        let base = (a * self.n_states + i) * self.n_states;
        &self.transition[base..base + self.n_states]
    }

    /// The reward row `r[a][i][·]` as a slice of length `n_states`.
    #[inline]
    pub fn reward_row(&self, a: usize, i: usize) -> &[f64] {
        let base = (a * self.n_states + i) * self.n_states;
        &self.reward[base..base + self.n_states]
    }

    /// Lists every violated row-stochasticity or reward-range constraint.
    ///
    /// Returns an empty vector iff the model invariants hold.
    pub fn validate(&self) -> Vec<ModelViolation> {
        let mut violations = Vec::new();
        for a in 0..self.n_actions {
            for i in 0..self.n_states {
                let row = self.transition_row(a, i);
                let mut sum = 0.0;
                for (j, &p) in row.iter().enumerate() {
                    if p < 0.0 || !p.is_finite() {
                        violations.push(ModelViolation::NegativeProbability {
                            action: a,
                            state: i,
                            next_state: j,
                            value: p,
                        });
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    violations.push(ModelViolation::RowSum {
                        action: a,
                        state: i,
                        sum,
                    });
                }
                for (j, &r) in self.reward_row(a, i).iter().enumerate() {
                    if !(0.0..=1.0).contains(&r) || !r.is_finite() {
                        violations.push(ModelViolation::RewardRange {
                            action: a,
                            state: i,
                            next_state: j,
                            value: r,
                        });
                    }
                }
            }
        }
        violations
    }

    /// The full transition tensor in `[a][i][j]` row-major order.
    pub fn transition_tensor(&self) -> &[f64] {
        &self.transition
    }

    /// The full reward tensor in `[a][i][j]` row-major order.
    pub fn reward_tensor(&self) -> &[f64] {
        &self.reward
    }

    /// Expected per-action reward vectors `r_a[i] = Σ_j p[a][i][j]·r[a][i][j]`.
    pub fn expected_reward_vectors(&self) -> Vec<Vec<f64>> {
        (0..self.n_actions)
            .map(|a| {
                (0..self.n_states)
                    .map(|i| {
                        self.transition_row(a, i)
                            .iter()
                            .zip(self.reward_row(a, i))
                            .map(|(&p, &r)| p * r)
                            .sum()
                    })
                    .collect()
            })
            .collect()
    }
}

/// Stationary randomized policy: one distribution over actions per state.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomizedPolicy {
    n_states: usize,
    n_actions: usize,
    /// `probs[i * n_actions + a]`.
    probs: Vec<f64>,
}

impl RandomizedPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(Error::DimensionMismatch {
                context: "policy matrix length",
                expected: n_states * n_actions,
                got: probs.len(),
            });
        }
        for i in 0..n_states {
            let row = &probs[i * n_actions..(i + 1) * n_actions];
            if row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "policy row {i} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidParameter(format!(
                    "policy row {i} sums to {sum}"
                )));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    /// Uniform distribution over actions at every state.
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// Deterministic policy: probability 1 on `actions[i]` at state `i`.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let n_states = actions.len();
        let mut probs = vec![0.0; n_states * n_actions];
        for (i, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::IndexOutOfRange {
                    index: a,
                    len: n_actions,
                });
            }
            probs[i * n_actions + a] = 1.0;
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// `π_i(a)`.
    #[inline]
    pub fn prob(&self, i: usize, a: usize) -> f64 {
        self.probs[i * self.n_actions + a]
    }

    /// The action distribution at state `i`.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.n_actions..(i + 1) * self.n_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }
}

/// Markov chain induced by fixing a policy: `P^π` and `r^π`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyChain {
    n_states: usize,
    /// `P^π[i][j] = Σ_a π_i(a) p[a][i][j]`, row-major.
    transition: Vec<f64>,
    /// `r^π[i] = Σ_a π_i(a) r_a[i]`.
    expected_reward: Vec<f64>,
}

impl PolicyChain {
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    #[inline]
    pub fn p(&self, i: usize, j: usize) -> f64 {
        self.transition[i * self.n_states + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.transition[i * self.n_states..(i + 1) * self.n_states]
    }

    pub fn expected_reward(&self) -> &[f64] {
        &self.expected_reward
    }

    pub fn transition_matrix(&self) -> &[f64] {
        &self.transition
    }
}

/// Builds the chain `(P^π, r^π)` induced by `policy` on `model`.
pub fn induced_chain(model: &MdpModel, policy: &RandomizedPolicy) -> Result<PolicyChain> {
    if policy.n_states() != model.n_states() {
        return Err(Error::DimensionMismatch {
            context: "policy state count",
            expected: model.n_states(),
            got: policy.n_states(),
        });
    }
    if policy.n_actions() != model.n_actions() {
        return Err(Error::DimensionMismatch {
            context: "policy action count",
            expected: model.n_actions(),
            got: policy.n_actions(),
        });
    }
    let n = model.n_states();
    let mut transition = vec![0.0; n * n];
    let mut expected_reward = vec![0.0; n];
    for i in 0..n {
        for a in 0..model.n_actions() {
            let w = policy.prob(i, a);
            if w == 0.0 {
                continue;
            }
            let p_row = model.transition_row(a, i);
            let r_row = model.reward_row(a, i);
            for j in 0..n {
                transition[i * n + j] += w * p_row[j];
                expected_reward[i] += w * p_row[j] * r_row[j];
            }
        }
    }
    Ok(PolicyChain {
        n_states: n,
        transition,
        expected_reward,
    })
}

/// Generates a random instance whose transition rows all have strictly
/// positive entries, so the chain induced by every policy is ergodic.
///
/// Each row is `(1 − smoothing)·d + smoothing·u` where `d` is a random
/// point on the simplex (normalized unit exponentials) and `u` is uniform.
/// Rewards are drawn uniformly in `[0, 1)`. Deterministic given the seed.
pub fn generate_random_ergodic(
    n_states: usize,
    n_actions: usize,
    smoothing: f64,
    seed: u64,
) -> Result<MdpModel> {
    if n_states == 0 || n_actions == 0 {
        return Err(Error::InvalidParameter(
            "n_states and n_actions must be at least 1".into(),
        ));
    }
    if !(smoothing > 0.0 && smoothing <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "smoothing must lie in (0, 1], got {smoothing}"
        )));
    }
    let n = n_states;
    let uniform = 1.0 / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transition = Vec::with_capacity(n_actions * n * n);
    let mut reward = Vec::with_capacity(n_actions * n * n);
    let mut raw = vec![0.0; n];
    for _ in 0..n_actions {
        for _ in 0..n {
            if smoothing == 1.0 {
                transition.extend(std::iter::repeat(uniform).take(n));
            } else {
                let mut sum = 0.0;
                for x in raw.iter_mut() {
                    // Unit exponential; 1 - u avoids ln(0).
                    *x = -(1.0 - rng.random::<f64>()).ln();
                    sum += *x;
                }
                for &x in raw.iter() {
                    transition.push((1.0 - smoothing) * (x / sum) + smoothing * uniform);
                }
            }
        }
    }
    for _ in 0..n_actions * n * n {
        reward.push(rng.random::<f64>());
    }
    MdpModel::new(n_states, n_actions, transition, reward)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_state_model(p: f64, r: f64) -> MdpModel {
        MdpModel::new(1, 1, vec![p], vec![r]).unwrap()
    }

    #[test]
    fn expected_reward_single_outcome() {
        let m = single_state_model(1.0, 0.5);
        assert_eq!(m.expected_reward_vectors(), vec![vec![0.5]]);
    }

    #[test]
    fn expected_reward_zero_rewards() {
        let m = generate_random_ergodic(3, 2, 0.5, 7).unwrap();
        let zeroed = MdpModel::new(3, 2, m.transition.clone(), vec![0.0; 18]).unwrap();
        for r_a in zeroed.expected_reward_vectors() {
            assert!(r_a.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn expected_reward_two_term_sum() {
        // p = (0.5, 0.5), r = (0, 1): expectation 0.5·0 + 0.5·1 = 0.5.
        let m = MdpModel::new(
            2,
            1,
            vec![0.5, 0.5, 0.5, 0.5],
            vec![0.0, 1.0, 0.0, 1.0],
        )
        .unwrap();
        let r = m.expected_reward_vectors();
        assert!((r[0][0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn induced_chain_degenerate_mixture() {
        let m = generate_random_ergodic(4, 3, 0.3, 11).unwrap();
        let pol = RandomizedPolicy::deterministic(3, &[0, 0, 0, 0]).unwrap();
        let chain = induced_chain(&m, &pol).unwrap();
        for i in 0..4 {
            assert_eq!(chain.row(i), m.transition_row(0, i));
        }
        let r = m.expected_reward_vectors();
        for i in 0..4 {
            assert!((chain.expected_reward()[i] - r[0][i]).abs() < 1e-15);
        }
    }

    #[test]
    fn induced_chain_identical_actions() {
        let base = generate_random_ergodic(3, 1, 0.4, 5).unwrap();
        let mut transition = base.transition.clone();
        transition.extend_from_slice(&base.transition);
        let mut reward = base.reward.clone();
        reward.extend_from_slice(&base.reward);
        let m = MdpModel::new(3, 2, transition, reward).unwrap();
        let chain = induced_chain(&m, &RandomizedPolicy::uniform(3, 2)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((chain.p(i, j) - m.p(0, i, j)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn induced_chain_convex_combination() {
        // Single state, two actions, r_0 = 0, r_1 = 1, π = (0.25, 0.75).
        let m = MdpModel::new(1, 2, vec![1.0, 1.0], vec![0.0, 1.0]).unwrap();
        let pol = RandomizedPolicy::new(1, 2, vec![0.25, 0.75]).unwrap();
        let chain = induced_chain(&m, &pol).unwrap();
        assert!((chain.expected_reward()[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn induced_chain_dimension_mismatch() {
        let m = generate_random_ergodic(3, 2, 0.5, 1).unwrap();
        let pol = RandomizedPolicy::uniform(2, 2);
        assert!(matches!(
            induced_chain(&m, &pol),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn validate_accepts_valid_model() {
        let m = generate_random_ergodic(5, 2, 0.2, 3).unwrap();
        assert!(m.validate().is_empty());
    }

    #[test]
    fn validate_reports_bad_row_sum() {
        let m = MdpModel::from_raw(2, 1, vec![0.5, 0.4, 0.5, 0.5], vec![0.0; 4]).unwrap();
        let violations = m.validate();
        assert_eq!(violations.len(), 1);
        assert!(matches!(
            violations[0],
            ModelViolation::RowSum { action: 0, state: 0, .. }
        ));
    }

    #[test]
    fn validate_reports_reward_out_of_range() {
        let m = MdpModel::from_raw(
            2,
            1,
            vec![0.5, 0.5, 0.5, 0.5],
            vec![0.0, 1.5, 0.0, 0.0],
        )
        .unwrap();
        let violations = m.validate();
        assert_eq!(violations.len(), 1);
        assert!(matches!(
            violations[0],
            ModelViolation::RewardRange { action: 0, state: 0, next_state: 1, .. }
        ));
    }

    #[test]
    fn generator_full_smoothing_is_exactly_uniform() {
        let m = generate_random_ergodic(4, 2, 1.0, 42).unwrap();
        for a in 0..2 {
            for i in 0..4 {
                assert!(m.transition_row(a, i).iter().all(|&p| p == 0.25));
            }
        }
    }

    #[test]
    fn generator_is_deterministic_in_seed() {
        let a = generate_random_ergodic(6, 3, 0.2, 123).unwrap();
        let b = generate_random_ergodic(6, 3, 0.2, 123).unwrap();
        assert_eq!(a, b);
        let c = generate_random_ergodic(6, 3, 0.2, 124).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn generator_min_entry_bound() {
        let m = generate_random_ergodic(4, 2, 0.1, 9).unwrap();
        let floor = 0.1 / 4.0;
        for a in 0..2 {
            for i in 0..4 {
                assert!(m.transition_row(a, i).iter().all(|&p| p >= floor));
            }
        }
    }

    #[test]
    fn generator_rejects_bad_smoothing() {
        assert!(generate_random_ergodic(2, 2, 0.0, 1).is_err());
        assert!(generate_random_ergodic(2, 2, 1.5, 1).is_err());
    }
}
