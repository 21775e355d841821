//! Exact ground truth for small instances: optimal average reward, the
//! difference-of-value vector, optimal occupancy measure, stationary
//! distributions, the stationarity-range factor τ, and the uniform mixing
//! bound. Everything here is dense linear algebra at desk scale and serves
//! as the oracle that the stochastic learner is tested against.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{induced_chain, MdpModel, PolicyChain, RandomizedPolicy};

/// Residual bound for the optimality equation and dual feasibility.
pub const BELLMAN_TOL: f64 = 1e-9;
/// Fixed-point residual bound for stationary distributions.
pub const STATIONARY_TOL: f64 = 1e-11;
/// Residual bound for the difference-of-value linear solve.
pub const VALUE_SOLVE_TOL: f64 = 1e-10;
/// Step cap for the mixing-time search.
pub const MIXING_CAP: u64 = 1_000_000;
/// Default cap on `|A|^|S|` for deterministic-policy enumeration.
pub const DEFAULT_ENUMERATION_BUDGET: u64 = 1_000_000;

/// Stationary distribution of an ergodic chain.
#[derive(Debug, Clone)]
pub struct StationaryDistribution {
    nu: Vec<f64>,
}

impl StationaryDistribution {
    pub fn as_slice(&self) -> &[f64] {
        &self.nu
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.nu
    }
}

/// Exact solution data for one instance.
///
/// The occupancy matrix `mu_star` is stored state-major: entry
/// `mu_star[i * n_actions + a]` is the long-run probability of being in
/// state `i` and choosing action `a` under the optimal policy.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub v_star: f64,
    pub h_star: Vec<f64>,
    pub mu_star: Vec<f64>,
    pub pi_star: RandomizedPolicy,
    pub nu_star: Vec<f64>,
    pub tau: f64,
    pub t_mix: u32,
}

/// Checks that a chain is ergodic: some boolean power of its adjacency
/// pattern has all entries positive, searched up to `2·n²` steps.
///
/// Returns a witness pair `(i, j)` whose entry stayed zero on failure.
pub fn ergodicity_witness(chain: &PolicyChain) -> std::result::Result<(), (usize, usize)> {
    let n = chain.n_states();
    let words = n.div_ceil(64);
    let mut adjacency = vec![0u64; n * words];
    for i in 0..n {
        for j in 0..n {
            if chain.p(i, j) > 0.0 {
                adjacency[i * words + j / 64] |= 1 << (j % 64);
            }
        }
    }
    let all_ones = |m: &[u64]| -> bool {
        for i in 0..n {
            for w in 0..words {
                let mut expect = u64::MAX;
                if w == words - 1 && n % 64 != 0 {
                    expect = (1u64 << (n % 64)) - 1;
                }
                if m[i * words + w] & expect != expect {
                    return false;
                }
            }
        }
        true
    };
    let mut current = adjacency.clone();
    let cap = 2 * n as u64 * n as u64;
    let mut step = 1;
    while step <= cap {
        if all_ones(&current) {
            return Ok(());
        }
        // current <- current ∘ adjacency (boolean product)
        let mut next = vec![0u64; n * words];
        for i in 0..n {
            for w in 0..words {
                let mut bits = current[i * words + w];
                while bits != 0 {
                    let k = w * 64 + bits.trailing_zeros() as usize;
                    bits &= bits - 1;
                    for ww in 0..words {
                        next[i * words + ww] |= adjacency[k * words + ww];
                    }
                }
            }
        }
        if next == current {
            break;
        }
        current = next;
        step += 1;
    }
    for i in 0..n {
        for j in 0..n {
            if current[i * words + j / 64] & (1 << (j % 64)) == 0 {
                return Err((i, j));
            }
        }
    }
    Err((0, 0))
}

fn require_ergodic(chain: &PolicyChain) -> Result<()> {
    ergodicity_witness(chain).map_err(|(from, to)| Error::NonErgodic { from, to })
}

/// Solves `(P^π)ᵀ ν = ν`, `1ᵀν = 1` for an ergodic chain.
pub fn stationary_distribution(chain: &PolicyChain) -> Result<StationaryDistribution> {
    require_ergodic(chain)?;
    let n = chain.n_states();
    if n == 1 {
        return Ok(StationaryDistribution { nu: vec![1.0] });
    }
    // (Pᵀ − I) ν = 0 with the last equation replaced by 1ᵀν = 1.
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(j, i)] = chain.p(i, j);
        }
    }
    for i in 0..n {
        a[(i, i)] -= 1.0;
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(n);
    b[n - 1] = 1.0;
    let nu = match a.clone().lu().solve(&b) {
        Some(x) => x,
        None => {
            // Singular replaced-row system; fall back to a least-squares
            // solve of the full stacked system.
            let mut stacked = DMatrix::<f64>::zeros(n + 1, n);
            for i in 0..n {
                for j in 0..n {
                    stacked[(j, i)] = chain.p(i, j);
                }
            }
            for i in 0..n {
                stacked[(i, i)] -= 1.0;
            }
            for j in 0..n {
                stacked[(n, j)] = 1.0;
            }
            let mut rhs = DVector::<f64>::zeros(n + 1);
            rhs[n] = 1.0;
            stacked
                .svd(true, true)
                .solve(&rhs, 1e-14)
                .map_err(|e| Error::Numerical(format!("stationary solve failed: {e}")))?
        }
    };
    let mut nu: Vec<f64> = nu.iter().copied().collect();
    for v in nu.iter_mut() {
        if *v < 0.0 {
            if *v < -1e-10 {
                return Err(Error::Numerical(format!(
                    "stationary distribution has negative mass {v}"
                )));
            }
            *v = 0.0;
        }
    }
    let sum: f64 = nu.iter().sum();
    for v in nu.iter_mut() {
        *v /= sum;
    }
    let mut residual: f64 = 0.0;
    for j in 0..n {
        let mut fixed = 0.0;
        for i in 0..n {
            fixed += chain.p(i, j) * nu[i];
        }
        residual = residual.max((fixed - nu[j]).abs());
    }
    if residual > STATIONARY_TOL {
        return Err(Error::Numerical(format!(
            "stationary fixed-point residual {residual:e} exceeds {STATIONARY_TOL:e}"
        )));
    }
    Ok(StationaryDistribution { nu })
}

/// Long-run average reward of a policy: `(ν^π)ᵀ r^π`.
pub fn average_reward(model: &MdpModel, policy: &RandomizedPolicy) -> Result<f64> {
    let chain = induced_chain(model, policy)?;
    let nu = stationary_distribution(&chain)?;
    let v: f64 = nu
        .as_slice()
        .iter()
        .zip(chain.expected_reward())
        .map(|(&p, &r)| p * r)
        .sum();
    Ok(v.clamp(0.0, 1.0))
}

fn mixing_time_with_nu(chain: &PolicyChain, nu: &[f64]) -> Result<u32> {
    let n = chain.n_states();
    let p = DMatrix::<f64>::from_fn(n, n, |i, j| chain.p(i, j));
    let mut power = p.clone();
    let mut t: u64 = 1;
    loop {
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let mut l1 = 0.0;
            for j in 0..n {
                l1 += (power[(i, j)] - nu[j]).abs();
            }
            worst = worst.max(0.5 * l1);
        }
        if worst <= 0.25 {
            return Ok(t as u32);
        }
        if t >= MIXING_CAP {
            return Err(Error::MixingCapExceeded { cap: MIXING_CAP });
        }
        power *= &p;
        t += 1;
    }
}

/// Smallest `t ≥ 1` such that every row of `(P^π)^t` is within total
/// variation 1/4 of the stationary distribution.
pub fn mixing_time(chain: &PolicyChain) -> Result<u32> {
    let nu = stationary_distribution(chain)?;
    mixing_time_with_nu(chain, nu.as_slice())
}

/// Calls `f(actions)` for every deterministic policy, in odometer order.
fn for_each_deterministic_policy<F: FnMut(&[usize]) -> Result<()>>(
    n_states: usize,
    n_actions: usize,
    budget: u64,
    mut f: F,
) -> Result<()> {
    let needed = (n_actions as f64).powi(n_states as i32);
    if needed > budget as f64 {
        return Err(Error::EnumerationBudget {
            needed,
            budget,
        });
    }
    let mut actions = vec![0usize; n_states];
    loop {
        f(&actions)?;
        let mut pos = 0;
        loop {
            if pos == n_states {
                return Ok(());
            }
            actions[pos] += 1;
            if actions[pos] < n_actions {
                break;
            }
            actions[pos] = 0;
            pos += 1;
        }
    }
}

struct EnumerationStats {
    best_actions: Vec<usize>,
    best_value: f64,
    tau: f64,
    t_mix: u32,
}

fn enumerate_deterministic(model: &MdpModel, budget: u64) -> Result<EnumerationStats> {
    let n = model.n_states();
    let mut stats = EnumerationStats {
        best_actions: Vec::new(),
        best_value: f64::NEG_INFINITY,
        tau: 1.0,
        t_mix: 1,
    };
    for_each_deterministic_policy(n, model.n_actions(), budget, |actions| {
        let policy = RandomizedPolicy::deterministic(model.n_actions(), actions)?;
        let chain = induced_chain(model, &policy)?;
        let nu = stationary_distribution(&chain)?;
        let value: f64 = nu
            .as_slice()
            .iter()
            .zip(chain.expected_reward())
            .map(|(&p, &r)| p * r)
            .sum();
        if value > stats.best_value {
            stats.best_value = value;
            stats.best_actions = actions.to_vec();
        }
        for &nu_i in nu.as_slice() {
            let scaled = n as f64 * nu_i;
            stats.tau = stats.tau.max(scaled * scaled).max(1.0 / (scaled * scaled));
        }
        stats.t_mix = stats.t_mix.max(mixing_time_with_nu(&chain, nu.as_slice())?);
        Ok(())
    })?;
    Ok(stats)
}

/// Exact stationarity-range factor τ and uniform mixing bound over the
/// deterministic-policy class, by exhaustive enumeration.
///
/// τ is the smallest factor with `1/(√τ·|S|) ≤ ν ≤ √τ/|S|` over every
/// enumerated stationary distribution. Randomized policies are not
/// enumerable, so treat the result as a lower estimate of the
/// all-policies value.
pub fn compute_tau_tmix(model: &MdpModel, enumeration_budget: u64) -> Result<(f64, u32)> {
    let stats = enumerate_deterministic(model, enumeration_budget)?;
    Ok((stats.tau, stats.t_mix))
}

/// Average-reward policy iteration: greedy improvement against the exact
/// evaluation of the current deterministic policy. Used when enumeration
/// exceeds its budget.
pub fn howard_policy_iteration(model: &MdpModel) -> Result<(Vec<usize>, f64)> {
    let n = model.n_states();
    let n_actions = model.n_actions();
    let r_a = model.expected_reward_vectors();
    // Myopic start: argmax_a r_a[i].
    let mut actions: Vec<usize> = (0..n)
        .map(|i| {
            (0..n_actions)
                .max_by(|&x, &y| r_a[x][i].partial_cmp(&r_a[y][i]).unwrap())
                .unwrap()
        })
        .collect();
    let mut seen = HashSet::new();
    seen.insert(actions.clone());
    for _ in 0..10_000 {
        let policy = RandomizedPolicy::deterministic(n_actions, &actions)?;
        let chain = induced_chain(model, &policy)?;
        require_ergodic(&chain)?;
        let (v_bar, h) = evaluate_chain_gauge_first(&chain)?;
        // Greedy improvement; keep the incumbent action on near-ties.
        let mut next = actions.clone();
        for i in 0..n {
            let q = |a: usize| -> f64 {
                let mut s = r_a[a][i];
                for j in 0..n {
                    s += model.p(a, i, j) * h[j];
                }
                s
            };
            let incumbent = q(actions[i]);
            let mut best = actions[i];
            let mut best_q = incumbent;
            for a in 0..n_actions {
                let qa = q(a);
                if qa > best_q + 1e-10 {
                    best = a;
                    best_q = qa;
                }
            }
            next[i] = best;
        }
        if next == actions {
            return Ok((actions, v_bar));
        }
        if !seen.insert(next.clone()) {
            return Err(Error::PolicyIterationCycled);
        }
        actions = next;
    }
    Err(Error::PolicyIterationCycled)
}

/// Exact `(v̄, h)` of a fixed chain with the gauge `h[0] = 0`.
fn evaluate_chain_gauge_first(chain: &PolicyChain) -> Result<(f64, Vec<f64>)> {
    let n = chain.n_states();
    // Unknowns: (v̄, h_1, ..., h_{n-1}); equations v̄ + h_i − Σ_j P_ij h_j = r_i.
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for i in 0..n {
        a[(i, 0)] = 1.0;
        for j in 1..n {
            let mut coeff = -chain.p(i, j);
            if i == j {
                coeff += 1.0;
            }
            a[(i, j)] = coeff;
        }
        b[i] = chain.expected_reward()[i];
    }
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Numerical("policy evaluation system is singular".into()))?;
    let mut h = vec![0.0; n];
    for j in 1..n {
        h[j] = x[j];
    }
    Ok((x[0], h))
}

/// Solves the stacked system `[(I − P*); ν*ᵀ] h = [r* − v̄*·1; 0]` for the
/// difference-of-value vector pinned by `ν*ᵀ h = 0`.
fn solve_difference_of_value(
    chain: &PolicyChain,
    nu: &[f64],
    v_bar: f64,
) -> Result<Vec<f64>> {
    let n = chain.n_states();
    let mut a = DMatrix::<f64>::zeros(n + 1, n);
    let mut b = DVector::<f64>::zeros(n + 1);
    for i in 0..n {
        for j in 0..n {
            let mut coeff = -chain.p(i, j);
            if i == j {
                coeff += 1.0;
            }
            a[(i, j)] = coeff;
        }
        b[i] = chain.expected_reward()[i] - v_bar;
    }
    for j in 0..n {
        a[(n, j)] = nu[j];
    }
    let h = a
        .clone()
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| Error::Numerical(format!("difference-of-value solve failed: {e}")))?;
    let residual = (&a * &h - &b).amax();
    if residual > VALUE_SOLVE_TOL {
        return Err(Error::Numerical(format!(
            "difference-of-value residual {residual:e} exceeds {VALUE_SOLVE_TOL:e}"
        )));
    }
    Ok(h.iter().copied().collect())
}

/// Solves an instance exactly with the default enumeration budget.
pub fn solve_optimal(model: &MdpModel) -> Result<GroundTruth> {
    solve_optimal_with(model, DEFAULT_ENUMERATION_BUDGET, None)
}

/// Solves an instance exactly.
///
/// The optimal policy comes from exhaustive enumeration while `|A|^|S|`
/// fits the budget, otherwise from policy iteration. τ and the mixing
/// bound always come from enumeration; when that is out of budget they
/// must be supplied via `tau_tmix_override`.
pub fn solve_optimal_with(
    model: &MdpModel,
    enumeration_budget: u64,
    tau_tmix_override: Option<(f64, u32)>,
) -> Result<GroundTruth> {
    let n = model.n_states();
    let n_actions = model.n_actions();
    let enumerated = enumerate_deterministic(model, enumeration_budget);
    let (best_actions, tau, t_mix) = match enumerated {
        Ok(stats) => {
            let (tau, t_mix) = tau_tmix_override.unwrap_or((stats.tau, stats.t_mix));
            (stats.best_actions, tau, t_mix)
        }
        Err(Error::EnumerationBudget { .. }) => {
            let (tau, t_mix) = tau_tmix_override.ok_or(Error::EnumerationBudget {
                needed: (n_actions as f64).powi(n as i32),
                budget: enumeration_budget,
            })?;
            let (actions, _) = howard_policy_iteration(model)?;
            (actions, tau, t_mix)
        }
        Err(e) => return Err(e),
    };

    let pi_star = RandomizedPolicy::deterministic(n_actions, &best_actions)?;
    let chain = induced_chain(model, &pi_star)?;
    let nu_star = stationary_distribution(&chain)?.into_vec();
    let v_star: f64 = nu_star
        .iter()
        .zip(chain.expected_reward())
        .map(|(&p, &r)| p * r)
        .sum();
    let h_star = solve_difference_of_value(&chain, &nu_star, v_star)?;
    let mut mu_star = vec![0.0; n * n_actions];
    for i in 0..n {
        mu_star[i * n_actions + best_actions[i]] = nu_star[i];
    }
    let truth = GroundTruth {
        v_star,
        h_star,
        mu_star,
        pi_star,
        nu_star,
        tau,
        t_mix,
    };
    let failures = truth.check(model);
    if failures.is_empty() {
        Ok(truth)
    } else {
        Err(Error::Numerical(format!(
            "solution fails {} check(s): {}",
            failures.len(),
            failures.join("; ")
        )))
    }
}

impl GroundTruth {
    /// Optimality-equation residual:
    /// `max_i |v̄* + h*_i − max_a ((P_a h*)_i + r_a[i])|`.
    pub fn bellman_residual(&self, model: &MdpModel) -> f64 {
        let r_a = model.expected_reward_vectors();
        let mut worst: f64 = 0.0;
        for i in 0..model.n_states() {
            let mut best = f64::NEG_INFINITY;
            for a in 0..model.n_actions() {
                let mut q = r_a[a][i];
                for j in 0..model.n_states() {
                    q += model.p(a, i, j) * self.h_star[j];
                }
                best = best.max(q);
            }
            worst = worst.max((self.v_star + self.h_star[i] - best).abs());
        }
        worst
    }

    /// Per-pair optimality slack `v̄* + h*_i − (P_a h*)_i − r_a[i] ≥ 0`,
    /// indexed `i * n_actions + a`. The inner product of an occupancy
    /// measure with this vector is its duality gap.
    pub fn bellman_slack(&self, model: &MdpModel) -> Vec<f64> {
        let r_a = model.expected_reward_vectors();
        let n = model.n_states();
        let mut slack = vec![0.0; n * model.n_actions()];
        for i in 0..n {
            for a in 0..model.n_actions() {
                let mut q = r_a[a][i];
                for j in 0..n {
                    q += model.p(a, i, j) * self.h_star[j];
                }
                slack[i * model.n_actions() + a] = self.v_star + self.h_star[i] - q;
            }
        }
        slack
    }

    /// Runs every stored-solution check and returns the failures.
    pub fn check(&self, model: &MdpModel) -> Vec<String> {
        let n = model.n_states();
        let n_actions = model.n_actions();
        let mut failures = Vec::new();
        if !(0.0..=1.0 + 1e-12).contains(&self.v_star) {
            failures.push(format!("v_star {} outside [0, 1]", self.v_star));
        }
        let residual = self.bellman_residual(model);
        if residual > BELLMAN_TOL {
            failures.push(format!(
                "optimality-equation residual {residual:e} exceeds {BELLMAN_TOL:e}"
            ));
        }
        let normalization: f64 = self
            .nu_star
            .iter()
            .zip(&self.h_star)
            .map(|(&nu, &h)| nu * h)
            .sum();
        if normalization.abs() > BELLMAN_TOL {
            failures.push(format!(
                "ν*ᵀh* = {normalization:e} is not 0 within {BELLMAN_TOL:e}"
            ));
        }
        let h_inf = self.h_star.iter().fold(0.0f64, |m, &h| m.max(h.abs()));
        if h_inf > 2.0 * self.t_mix as f64 + 1e-12 {
            failures.push(format!(
                "‖h*‖∞ = {h_inf} exceeds twice the mixing bound {}",
                2.0 * self.t_mix as f64
            ));
        }
        if self.mu_star.iter().any(|&m| m < 0.0) {
            failures.push("μ* has a negative entry".into());
        }
        let mu_sum: f64 = self.mu_star.iter().sum();
        if (mu_sum - 1.0).abs() > BELLMAN_TOL {
            failures.push(format!("μ* sums to {mu_sum}, not 1"));
        }
        match dual_feasibility_residual(model, &self.mu_star) {
            Ok(r) if r > BELLMAN_TOL => failures.push(format!(
                "dual feasibility residual {r:e} exceeds {BELLMAN_TOL:e}"
            )),
            Ok(_) => {}
            Err(e) => failures.push(format!("dual feasibility residual: {e}")),
        }
        let marginal_floor = 1.0 / (self.tau.sqrt() * n as f64);
        for i in 0..n {
            let marginal: f64 = (0..n_actions).map(|a| self.mu_star[i * n_actions + a]).sum();
            if marginal < marginal_floor - 1e-12 {
                failures.push(format!(
                    "state {i} marginal {marginal} below the τ floor {marginal_floor}"
                ));
                break;
            }
        }
        failures
    }
}

/// `‖Σ_a (I − P_aᵀ) μ_a‖∞` for a state-major occupancy vector.
pub fn dual_feasibility_residual(model: &MdpModel, mu: &[f64]) -> Result<f64> {
    let n = model.n_states();
    let n_actions = model.n_actions();
    if mu.len() != n * n_actions {
        return Err(Error::DimensionMismatch {
            context: "occupancy vector length",
            expected: n * n_actions,
            got: mu.len(),
        });
    }
    if mu.iter().any(|&m| m < 0.0) {
        return Err(Error::InvalidParameter(
            "occupancy vector has a negative entry".into(),
        ));
    }
    let sum: f64 = mu.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "occupancy vector sums to {sum}, not 1"
        )));
    }
    let mut residual: f64 = 0.0;
    for j in 0..n {
        let mut v = 0.0;
        for a in 0..n_actions {
            v += mu[j * n_actions + a];
            for i in 0..n {
                v -= model.p(a, i, j) * mu[i * n_actions + a];
            }
        }
        residual = residual.max(v.abs());
    }
    Ok(residual)
}

/// Evaluates both sides of the optimality-gap identity
/// `v̄* − v̄^π = (ν^π)ᵀ Σ_a diag(π_a)(v̄*·1 + (I − P_a)h* − r_a)`
/// by independent routes and returns `(lhs, rhs)`.
pub fn gap_identity_check(
    model: &MdpModel,
    policy: &RandomizedPolicy,
    truth: &GroundTruth,
) -> Result<(f64, f64)> {
    let chain = induced_chain(model, policy)?;
    let nu = stationary_distribution(&chain)?;
    let v_pi: f64 = nu
        .as_slice()
        .iter()
        .zip(chain.expected_reward())
        .map(|(&p, &r)| p * r)
        .sum();
    let lhs = truth.v_star - v_pi;
    let slack = truth.bellman_slack(model);
    let mut rhs = 0.0;
    for i in 0..model.n_states() {
        for a in 0..model.n_actions() {
            rhs += nu.as_slice()[i] * policy.prob(i, a) * slack[i * model.n_actions() + a];
        }
    }
    Ok((lhs, rhs))
}
