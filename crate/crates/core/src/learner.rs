//! Stochastic primal-dual policy learner for average-reward MDPs.
//!
//! Each iteration samples one (state, action) pair from the current
//! occupancy measure, queries the oracle for one transition, then makes a
//! clipped two-coordinate update to the value estimate and a multiplicative
//! update to the occupancy measure followed by an information projection
//! back onto its search space. The occupancy measure is kept factored as a
//! state marginal `ξ` times a per-state policy `π`, both backed by weight
//! trees, so one iteration costs `O(|A| + log(|S||A|))`.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exact::{average_reward, GroundTruth};
use crate::model::{MdpModel, RandomizedPolicy};
use crate::sampling::{streams, SamplingOracle, WeightTree};

/// Absolute floor for stored policy weights; multiplicative updates with
/// nonpositive exponents would otherwise drive entries to exact zero.
const WEIGHT_FLOOR: f64 = 1e-300;

/// When a tree's total mass decays below this, every weight is rescaled.
/// The learner only ever reads normalized ratios, so rescaling is
/// semantically invisible.
const RESCALE_TRIGGER: f64 = 1e-30;

/// Step sizes, search-space radii, and iteration count for one run.
#[derive(Debug, Clone)]
pub struct LearnerConfig {
    /// Uniform upper bound on mixing times; sets the value box radius
    /// `2·t_mix_star` and the reward offset.
    pub t_mix_star: f64,
    /// Stationarity-range factor; sets the marginal floor `1/(√τ·|S|)`.
    pub tau: f64,
    /// Target accuracy the default iteration count is derived from.
    pub epsilon: f64,
    /// Number of iterations `T`; one oracle query per iteration.
    pub iterations: u64,
    /// Dual (multiplicative) step size.
    pub beta: f64,
    /// Primal (coordinate) step size; always `|S|·t_mix_star²·beta`.
    pub alpha: f64,
    /// Reward offset `4·t_mix_star + 1` keeping every exponent nonpositive.
    pub offset_m: f64,
    pub seed: u64,
    /// Assert the per-iterate structural invariants after every iteration.
    pub check_invariants: bool,
}

impl LearnerConfig {
    /// Derives the default configuration for an instance shape:
    /// `T = ⌈τ²·t_mix_star²·|S||A|/ε²⌉` with the matching step sizes.
    pub fn derive(
        n_states: usize,
        n_actions: usize,
        t_mix_star: f64,
        tau: f64,
        epsilon: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(t_mix_star > 0.0) || !t_mix_star.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "t_mix_star must be positive, got {t_mix_star}"
            )));
        }
        if !(tau >= 1.0) || !tau.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "tau must be at least 1, got {tau}"
            )));
        }
        if !(epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        let sa = (n_states * n_actions) as f64;
        let t_float = (tau * t_mix_star).powi(2) * sa / (epsilon * epsilon);
        if !(t_float.is_finite()) || t_float >= 9.0e18 {
            return Err(Error::InvalidParameter(format!(
                "derived iteration count {t_float:e} does not fit a u64"
            )));
        }
        let iterations = (t_float.ceil() as u64).max(1);
        let (beta, alpha) = step_sizes(n_states, n_actions, t_mix_star, iterations);
        Ok(Self {
            t_mix_star,
            tau,
            epsilon,
            iterations,
            beta,
            alpha,
            offset_m: 4.0 * t_mix_star + 1.0,
            seed,
            check_invariants: false,
        })
    }

    /// Overrides the iteration count, re-deriving both step sizes for it.
    pub fn with_iterations(mut self, n_states: usize, n_actions: usize, iterations: u64) -> Self {
        let (beta, alpha) = step_sizes(n_states, n_actions, self.t_mix_star, iterations.max(1));
        self.iterations = iterations.max(1);
        self.beta = beta;
        self.alpha = alpha;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

fn step_sizes(n_states: usize, n_actions: usize, t_mix_star: f64, t: u64) -> (f64, f64) {
    let sa = (n_states * n_actions) as f64;
    let beta = (1.0 / t_mix_star) * (sa.ln() / (2.0 * sa * t as f64)).sqrt();
    let alpha = n_states as f64 * t_mix_star * t_mix_star * beta;
    (beta, alpha)
}

/// Value estimate confined to the box `‖h‖∞ ≤ 2·t_mix_star`.
#[derive(Debug, Clone)]
pub struct ValueIterate {
    values: Vec<f64>,
    bound: f64,
}

impl ValueIterate {
    pub fn zeros(n_states: usize, t_mix_star: f64) -> Self {
        Self {
            values: vec![0.0; n_states],
            bound: 2.0 * t_mix_star,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }
}

/// Exact KL-divergence projection of `q` onto the simplex with the
/// entrywise floor `lower`: returns `p` minimizing `D_KL(p‖q/Σq)` subject
/// to `Σp = 1`, `p ≥ lower`.
///
/// The solution clamps the smallest normalized entries to the floor and
/// scales the rest by a common factor; the split point comes from a sorted
/// scan of the KKT conditions.
pub fn kl_project_lower_bounded(q: &[f64], lower: f64) -> Result<Vec<f64>> {
    let n = q.len();
    if n == 0 {
        return Err(Error::InvalidParameter("empty vector".into()));
    }
    if lower < 0.0 || !lower.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "floor must be nonnegative, got {lower}"
        )));
    }
    if n as f64 * lower > 1.0 + 1e-12 {
        return Err(Error::InfeasibleProjection { n, lower });
    }
    if let Some(index) = q.iter().position(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::NegativeWeight {
            index,
            value: q[index],
        });
    }
    let total: f64 = q.iter().sum();
    if total <= 0.0 {
        return Err(Error::AllZeroWeights);
    }
    let u: Vec<f64> = q.iter().map(|&x| x / total).collect();
    if lower == 0.0 {
        return Ok(u);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| u[a].partial_cmp(&u[b]).unwrap());
    // With k entries clamped, the rest scale by (1 − k·lower)/(1 − Σ_clamped u).
    let mut clamped_mass = 0.0;
    for k in 0..n {
        let gamma = (1.0 - k as f64 * lower) / (1.0 - clamped_mass);
        if gamma * u[order[k]] >= lower {
            let mut p = vec![lower; n];
            for &idx in &order[k..] {
                p[idx] = gamma * u[idx];
            }
            return Ok(p);
        }
        clamped_mass += u[order[k]];
    }
    // Every entry clamps; feasible only when n·lower = 1.
    Ok(vec![lower; n])
}

/// The occupancy iterate `μ` factored as a state marginal `ξ` and a
/// randomized policy `π`, each backed by a weight tree storing
/// unnormalized masses. Normalization is implicit (ratios against tree
/// totals), which makes the global renormalization of the multiplicative
/// update free.
#[derive(Debug, Clone)]
pub struct DualIterate {
    n_states: usize,
    n_actions: usize,
    xi: WeightTree,
    rows: Vec<WeightTree>,
    lower: f64,
}

impl DualIterate {
    /// The uniform occupancy measure with the marginal floor `1/(√τ·n)`.
    pub fn uniform(n_states: usize, n_actions: usize, tau: f64) -> Result<Self> {
        if !(tau >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "tau must be at least 1, got {tau}"
            )));
        }
        let xi = WeightTree::build(&vec![1.0; n_states])?;
        let rows = (0..n_states)
            .map(|_| WeightTree::build(&vec![1.0; n_actions]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n_states,
            n_actions,
            xi,
            rows,
            lower: 1.0 / (tau.sqrt() * n_states as f64),
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// The marginal floor `1/(√τ·|S|)`.
    pub fn marginal_floor(&self) -> f64 {
        self.lower
    }

    /// `ξ_i`.
    pub fn xi(&self, i: usize) -> f64 {
        self.xi.weight(i) / self.xi.total()
    }

    /// `π_i(a)`.
    pub fn pi(&self, i: usize, a: usize) -> f64 {
        self.rows[i].weight(a) / self.rows[i].total()
    }

    /// `μ_{i,a} = ξ_i·π_i(a)`.
    pub fn mu(&self, i: usize, a: usize) -> f64 {
        self.xi(i) * self.pi(i, a)
    }

    /// Draws `(i, a)` with probability `ξ_i·π_i(a)`.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<(usize, usize)> {
        let i = self.xi.sample(rng)?;
        let a = self.rows[i].sample(rng)?;
        Ok((i, a))
    }

    /// The occupancy measure as a dense state-major vector.
    pub fn mu_matrix(&self) -> Vec<f64> {
        let mut mu = vec![0.0; self.n_states * self.n_actions];
        let xi_total = self.xi.total();
        for i in 0..self.n_states {
            let row = &self.rows[i];
            let factor = self.xi.weight(i) / (xi_total * row.total());
            for a in 0..self.n_actions {
                mu[i * self.n_actions + a] = factor * row.weight(a);
            }
        }
        mu
    }

    /// The current policy as a standalone matrix.
    pub fn policy(&self) -> RandomizedPolicy {
        let mut probs = vec![0.0; self.n_states * self.n_actions];
        for i in 0..self.n_states {
            let total = self.rows[i].total();
            for a in 0..self.n_actions {
                probs[i * self.n_actions + a] = self.rows[i].weight(a) / total;
            }
        }
        RandomizedPolicy::new(self.n_states, self.n_actions, probs)
            .expect("tree rows are normalized distributions")
    }

    /// Applies the multiplicative update `μ_{i,a} ← μ_{i,a}·e^Δ`, the
    /// global renormalization, and the information projection back onto
    /// the floored simplex, all in factored coordinates.
    ///
    /// Only the touched row and the touched marginal change: the policy
    /// row is renormalized implicitly, the marginal `ξ_i` shrinks by the
    /// row's surviving mass fraction, and the projection can clamp at
    /// most coordinate `i` because every other marginal only grows under
    /// renormalization.
    pub fn apply_update(&mut self, i: usize, a: usize, delta: f64) -> Result<()> {
        debug_assert!(delta <= 0.0, "dual exponent must be nonpositive");
        let exp_delta = delta.exp();
        let row = &mut self.rows[i];
        let pi_ia = row.weight(a) / row.total();
        let survive = 1.0 - pi_ia * (1.0 - exp_delta);
        let updated = (row.weight(a) * exp_delta).max(WEIGHT_FLOOR);
        row.update(a, updated)?;
        if row.total() < RESCALE_TRIGGER {
            let scale = 1.0 / row.total();
            row.scale_all(scale);
        }

        let shrunk = (self.xi.weight(i) * survive).max(WEIGHT_FLOOR);
        self.xi.update(i, shrunk)?;
        let total = self.xi.total();
        if self.xi.weight(i) / total < self.lower {
            // Exact one-coordinate information projection: raise ξ_i to
            // the floor while the rest keep their relative masses.
            debug_assert!(self.lower < 1.0);
            let rest = total - self.xi.weight(i);
            self.xi.update(i, self.lower * rest / (1.0 - self.lower))?;
        }
        if self.xi.total() < RESCALE_TRIGGER {
            let scale = 1.0 / self.xi.total();
            self.xi.scale_all(scale);
        }
        if self.xi.weight(i) <= 0.0 {
            return Err(Error::Numerical(format!(
                "marginal weight at state {i} became nonpositive"
            )));
        }
        Ok(())
    }
}

/// Dual exponent for one sampled transition:
/// `Δ = β·(h_j − h_i + reward − M)/μ_{i,a}`, always nonpositive because
/// `M = 4·t_mix_star + 1` dominates the value box plus the reward range.
pub fn dual_increment(
    h: &ValueIterate,
    i: usize,
    j: usize,
    reward: f64,
    mu_ia: f64,
    config: &LearnerConfig,
) -> Result<f64> {
    if !(mu_ia > 0.0) {
        return Err(Error::Numerical(format!(
            "occupancy μ[{i},·] = {mu_ia} is not positive; projection maintenance failed"
        )));
    }
    let numerator = h.values[j] - h.values[i] + reward - config.offset_m;
    let delta = config.beta * numerator / mu_ia;
    debug_assert!(delta <= 1e-9, "dual exponent {delta} is positive");
    // Rounding at the box boundary can leave a few ulps above zero.
    Ok(delta.min(0.0))
}

/// Clipped two-coordinate value update `h_i ← min(h_i + α, bound)`,
/// `h_j ← max(h_j − α, −bound)`; equals the Euclidean projection of
/// `h + α(e_i − e_j)` onto the box. `i = j` cancels exactly.
pub fn primal_increment_apply(h: &mut ValueIterate, i: usize, j: usize, config: &LearnerConfig) {
    if i == j {
        return;
    }
    h.values[i] = (h.values[i] + config.alpha).min(h.bound);
    h.values[j] = (h.values[j] - config.alpha).max(-h.bound);
}

/// One learner instance; strictly single-threaded.
pub struct PrimalDualLearner {
    config: LearnerConfig,
    n_states: usize,
    n_actions: usize,
    h: ValueIterate,
    dual: DualIterate,
    /// Unnormalized running sum of per-iteration policies, flushed lazily
    /// per touched row.
    avg_acc: Vec<f64>,
    last_flush: Vec<u64>,
    completed: u64,
    rng: ChaCha8Rng,
}

impl PrimalDualLearner {
    pub fn new(n_states: usize, n_actions: usize, config: LearnerConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(streams::LEARNER);
        Ok(Self {
            h: ValueIterate::zeros(n_states, config.t_mix_star),
            dual: DualIterate::uniform(n_states, n_actions, config.tau)?,
            avg_acc: vec![0.0; n_states * n_actions],
            last_flush: vec![0; n_states],
            completed: 0,
            rng,
            config,
            n_states,
            n_actions,
        })
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn completed_iterations(&self) -> u64 {
        self.completed
    }

    pub fn value_iterate(&self) -> &ValueIterate {
        &self.h
    }

    pub fn dual_iterate(&self) -> &DualIterate {
        &self.dual
    }

    /// Draws the next `(i, a)` from the current occupancy measure.
    pub fn draw_state_action(&mut self) -> Result<(usize, usize)> {
        self.dual.sample(&mut self.rng)
    }

    /// Applies one full iteration given the sampled transition
    /// `(i, a) → j` with its reward.
    pub fn apply_transition(&mut self, i: usize, a: usize, j: usize, reward: f64) -> Result<()> {
        let t = self.completed + 1;
        self.flush_row(i, t);
        let mu_ia = self.dual.mu(i, a);
        let delta = dual_increment(&self.h, i, j, reward, mu_ia, &self.config)?;
        primal_increment_apply(&mut self.h, i, j, &self.config);
        self.dual.apply_update(i, a, delta)?;
        self.completed = t;
        if self.config.check_invariants {
            self.assert_invariants()?;
        }
        Ok(())
    }

    /// Adds row `i`'s pending contribution through iteration `t` (the
    /// pre-update policy was in effect for every iteration since the row
    /// was last touched).
    fn flush_row(&mut self, i: usize, t: u64) {
        let pending = t - self.last_flush[i];
        if pending > 0 {
            let row = &self.dual.rows[i];
            let total = row.total();
            for a in 0..self.n_actions {
                self.avg_acc[i * self.n_actions + a] +=
                    pending as f64 * row.weight(a) / total;
            }
            self.last_flush[i] = t;
        }
    }

    /// The running average `(1/t)·Σ_{s≤t} π^s` over the policies in effect
    /// at the start of each completed iteration. Exact at output time.
    pub fn averaged_policy(&self) -> RandomizedPolicy {
        let t = self.completed.max(1);
        let mut probs = vec![0.0; self.n_states * self.n_actions];
        for i in 0..self.n_states {
            let pending = (t - self.last_flush[i]) as f64;
            let row = &self.dual.rows[i];
            let total = row.total();
            let mut sum = 0.0;
            for a in 0..self.n_actions {
                let v = self.avg_acc[i * self.n_actions + a]
                    + pending * row.weight(a) / total;
                probs[i * self.n_actions + a] = v;
                sum += v;
            }
            for a in 0..self.n_actions {
                probs[i * self.n_actions + a] /= sum;
            }
        }
        RandomizedPolicy::new(self.n_states, self.n_actions, probs)
            .expect("normalized rows form a policy")
    }

    /// Duality gap of the current (pre-update) occupancy measure against
    /// the supplied optimality slack vector.
    pub fn instant_gap(&self, slack: &[f64]) -> f64 {
        let xi_total = self.dual.xi.total();
        let mut gap = 0.0;
        for i in 0..self.n_states {
            let row = &self.dual.rows[i];
            let factor = self.dual.xi.weight(i) / (xi_total * row.total());
            let mut row_sum = 0.0;
            for a in 0..self.n_actions {
                row_sum += row.weight(a) * slack[i * self.n_actions + a];
            }
            gap += factor * row_sum;
        }
        gap
    }

    /// Potential `D_KL(μ*‖μ) + ‖h − h*‖²/(2·|S|·t_mix_star²)`.
    pub fn potential(&self, truth: &GroundTruth) -> f64 {
        let mut kl = 0.0;
        for i in 0..self.n_states {
            for a in 0..self.n_actions {
                let opt = truth.mu_star[i * self.n_actions + a];
                if opt > 0.0 {
                    kl += opt * (opt / self.dual.mu(i, a)).ln();
                }
            }
        }
        let mut sq = 0.0;
        for (hv, ho) in self.h.values.iter().zip(&truth.h_star) {
            sq += (hv - ho) * (hv - ho);
        }
        kl + sq / (2.0 * self.n_states as f64 * self.config.t_mix_star * self.config.t_mix_star)
    }

    /// Conditional second moment of the dual exponent, evaluated densely:
    /// `Σ_{i,a} μ_{i,a}·E[Δ²] = β²·Σ_{i,a,j} p[a][i][j]·(h_j − h_i + r − M)²`.
    pub fn second_moment_dense(&self, model: &MdpModel) -> f64 {
        let h = &self.h.values;
        let mut sum = 0.0;
        for a in 0..self.n_actions {
            for i in 0..self.n_states {
                let p_row = model.transition_row(a, i);
                let r_row = model.reward_row(a, i);
                for j in 0..self.n_states {
                    let num = h[j] - h[i] + r_row[j] - self.config.offset_m;
                    sum += p_row[j] * num * num;
                }
            }
        }
        self.config.beta * self.config.beta * sum
    }

    fn assert_invariants(&self) -> Result<()> {
        let breach = |message: String| -> Result<()> {
            Err(Error::InvariantBreach {
                iteration: self.completed,
                message,
            })
        };
        let bound = self.h.bound;
        if self.h.values.iter().any(|&v| v.abs() > bound) {
            return breach("value iterate escaped its box".into());
        }
        let xi_total = self.dual.xi.total();
        let mut xi_sum = 0.0;
        for i in 0..self.n_states {
            let xi = self.dual.xi.weight(i) / xi_total;
            xi_sum += xi;
            if xi < self.dual.lower - 1e-12 {
                return breach(format!("marginal ξ[{i}] = {xi} fell below its floor"));
            }
            let row = &self.dual.rows[i];
            let row_total = row.total();
            let row_sum: f64 =
                (0..self.n_actions).map(|a| row.weight(a) / row_total).sum();
            if (row_sum - 1.0).abs() > 1e-9 {
                return breach(format!("policy row {i} sums to {row_sum}"));
            }
        }
        if (xi_sum - 1.0).abs() > 1e-9 {
            return breach(format!("marginals sum to {xi_sum}"));
        }
        Ok(())
    }
}

/// One diagnostics checkpoint. `gap` is the instantaneous duality gap of
/// the iterate entering iteration `t`; `gap_running_mean` averages it over
/// all iterations so far.
#[derive(Debug, Clone)]
pub struct GapRecord {
    pub t: u64,
    pub gap: f64,
    pub gap_running_mean: f64,
    pub potential: f64,
    pub vbar_hat: f64,
    pub queries: u64,
    pub elapsed_ns: u128,
}

/// Checkpoint records collected during a run with ground truth supplied.
#[derive(Debug, Clone, Default)]
pub struct GapDiagnostics {
    pub records: Vec<GapRecord>,
}

impl GapDiagnostics {
    /// CSV with header `t,gap,E,vbar_hat,queries,elapsed_ns`; the gap
    /// column carries the running mean.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,gap,E,vbar_hat,queries,elapsed_ns\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e},{},{}\n",
                r.t, r.gap_running_mean, r.potential, r.vbar_hat, r.queries, r.elapsed_ns
            ));
        }
        out
    }
}

/// Everything a single run produces.
pub struct RunOutcome {
    pub policy: RandomizedPolicy,
    pub diagnostics: GapDiagnostics,
    /// Oracle queries consumed by this run; always equals the configured
    /// iteration count.
    pub queries: u64,
}

fn is_checkpoint(t: u64, total: u64) -> bool {
    t.is_power_of_two() || t == total
}

/// Runs the learner for `config.iterations` iterations against the oracle.
///
/// When ground truth is supplied, the duality gap is accumulated every
/// iteration (costing `O(|S||A|)` extra per iteration) and checkpoint
/// records are emitted at powers of two and at the final iteration.
/// Deterministic given the oracle seed and `config.seed`.
pub fn run(
    oracle: &mut SamplingOracle,
    config: &LearnerConfig,
    truth: Option<&GroundTruth>,
) -> Result<RunOutcome> {
    let model = oracle.model();
    let n_states = model.n_states();
    let n_actions = model.n_actions();
    let mut learner = PrimalDualLearner::new(n_states, n_actions, config.clone())?;
    let slack = truth.map(|tr| tr.bellman_slack(model));
    let queries_before = oracle.query_count();
    let started = Instant::now();
    let mut diagnostics = GapDiagnostics::default();
    let mut gap_sum = 0.0;
    for t in 1..=config.iterations {
        let instant = slack.as_ref().map(|s| learner.instant_gap(s));
        if let Some(g) = instant {
            gap_sum += g;
        }
        let (i, a) = learner.draw_state_action()?;
        let (j, reward) = oracle.query(i, a)?;
        learner.apply_transition(i, a, j, reward)?;
        if let (Some(g), Some(tr)) = (instant, truth) {
            if is_checkpoint(t, config.iterations) {
                let pi_hat = learner.averaged_policy();
                diagnostics.records.push(GapRecord {
                    t,
                    gap: g,
                    gap_running_mean: gap_sum / t as f64,
                    potential: learner.potential(tr),
                    vbar_hat: average_reward(model, &pi_hat)?,
                    queries: oracle.query_count() - queries_before,
                    elapsed_ns: started.elapsed().as_nanos(),
                });
            }
        }
    }
    let queries = oracle.query_count() - queries_before;
    debug_assert_eq!(queries, config.iterations);
    Ok(RunOutcome {
        policy: learner.averaged_policy(),
        diagnostics,
        queries,
    })
}

/// Duality gap `Σ_a (h* − P_a h* − r_a)ᵀ μ_a + v̄*` of an arbitrary
/// occupancy measure; zero exactly at `μ*`.
pub fn duality_gap(model: &MdpModel, truth: &GroundTruth, mu: &[f64]) -> f64 {
    debug_assert_eq!(mu.len(), model.n_states() * model.n_actions());
    let slack = truth.bellman_slack(model);
    mu.iter().zip(&slack).map(|(&m, &s)| m * s).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::solve_optimal;
    use crate::instances::{reference_2x2, zero_reward_variant};
    use crate::model::generate_random_ergodic;

    #[test]
    fn config_defaults_satisfy_step_size_identity() {
        let cfg = LearnerConfig::derive(4, 2, 3.0, 2.5, 0.1, 0).unwrap();
        let n = 4.0;
        assert!((cfg.alpha - n * cfg.t_mix_star * cfg.t_mix_star * cfg.beta).abs() < 1e-12);
        assert!((cfg.offset_m - 13.0).abs() < 1e-15);
        let expected_t = (2.5f64 * 3.0).powi(2) * 8.0 / 0.01;
        assert_eq!(cfg.iterations, expected_t.ceil() as u64);
    }

    #[test]
    fn config_rejects_bad_parameters() {
        assert!(LearnerConfig::derive(2, 2, 0.0, 2.0, 0.1, 0).is_err());
        assert!(LearnerConfig::derive(2, 2, 1.0, 0.5, 0.1, 0).is_err());
        assert!(LearnerConfig::derive(2, 2, 1.0, 2.0, 0.0, 0).is_err());
    }

    #[test]
    fn projection_identity_on_feasible_input() {
        let q = vec![0.6, 0.4];
        let p = kl_project_lower_bounded(&q, 0.25).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn projection_clamps_small_entry() {
        let p = kl_project_lower_bounded(&[0.9, 0.1], 0.25).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-12);
        assert!((p[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn projection_with_zero_floor_normalizes() {
        let p = kl_project_lower_bounded(&[3.0, 1.0], 0.0).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-15);
        assert!((p[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn projection_rejects_infeasible_floor() {
        assert!(matches!(
            kl_project_lower_bounded(&[1.0, 1.0], 0.6),
            Err(Error::InfeasibleProjection { .. })
        ));
        assert!(matches!(
            kl_project_lower_bounded(&[0.0, 0.0], 0.1),
            Err(Error::AllZeroWeights)
        ));
    }

    #[test]
    fn dual_increment_direct_substitution() {
        // h = 0, reward 1, t_mix_star = 1 so M = 5, μ = 0.5: Δ = −8β.
        let cfg = LearnerConfig::derive(2, 1, 1.0, 2.0, 0.5, 0).unwrap();
        let h = ValueIterate::zeros(2, 1.0);
        let delta = dual_increment(&h, 0, 1, 1.0, 0.5, &cfg).unwrap();
        assert!((delta - cfg.beta * (1.0 - 5.0) / 0.5).abs() < 1e-15);
        assert!((delta + 8.0 * cfg.beta).abs() < 1e-15);
    }

    #[test]
    fn dual_increment_zero_at_extreme_point() {
        let cfg = LearnerConfig::derive(2, 1, 1.5, 2.0, 0.5, 0).unwrap();
        let mut h = ValueIterate::zeros(2, 1.5);
        h.values[0] = -3.0; // −2·t_mix_star
        h.values[1] = 3.0;
        let delta = dual_increment(&h, 0, 1, 1.0, 0.5, &cfg).unwrap();
        assert_eq!(delta, 0.0);
    }

    #[test]
    fn dual_increment_nonpositive_over_random_inputs() {
        use rand::Rng;
        let cfg = LearnerConfig::derive(3, 2, 2.0, 2.0, 0.5, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10_000 {
            let mut h = ValueIterate::zeros(3, 2.0);
            for v in h.values.iter_mut() {
                *v = rng.random_range(-4.0..=4.0);
            }
            let delta = dual_increment(
                &h,
                rng.random_range(0..3),
                rng.random_range(0..3),
                rng.random::<f64>(),
                rng.random::<f64>() * 0.9 + 0.1,
                &cfg,
            )
            .unwrap();
            assert!(delta <= 0.0);
        }
    }

    #[test]
    fn dual_increment_rejects_nonpositive_occupancy() {
        let cfg = LearnerConfig::derive(2, 1, 1.0, 2.0, 0.5, 0).unwrap();
        let h = ValueIterate::zeros(2, 1.0);
        assert!(dual_increment(&h, 0, 1, 0.5, 0.0, &cfg).is_err());
    }

    #[test]
    fn primal_update_cancels_when_states_coincide() {
        let cfg = LearnerConfig::derive(2, 1, 1.0, 2.0, 0.5, 0).unwrap();
        let mut h = ValueIterate::zeros(2, 1.0);
        h.values[0] = 1.9; // near the boundary
        primal_increment_apply(&mut h, 0, 0, &cfg);
        assert_eq!(h.values, vec![1.9, 0.0]);
    }

    #[test]
    fn primal_update_clamps_at_boundary() {
        let cfg = LearnerConfig::derive(2, 1, 1.0, 2.0, 0.5, 0).unwrap();
        let mut h = ValueIterate::zeros(2, 1.0);
        h.values[0] = 2.0;
        primal_increment_apply(&mut h, 0, 1, &cfg);
        assert_eq!(h.values[0], 2.0);
        assert!((h.values[1] + cfg.alpha).abs() < 1e-15);
    }

    #[test]
    fn primal_update_interior_step() {
        let mut cfg = LearnerConfig::derive(2, 1, 1.0, 2.0, 0.5, 0).unwrap();
        cfg.alpha = 0.1;
        let mut h = ValueIterate::zeros(2, 1.0);
        primal_increment_apply(&mut h, 0, 1, &cfg);
        assert!((h.values[0] - 0.1).abs() < 1e-15);
        assert!((h.values[1] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn dual_update_noop_at_zero_exponent() {
        let mut d = DualIterate::uniform(3, 2, 4.0).unwrap();
        let before = d.mu_matrix();
        d.apply_update(1, 0, 0.0).unwrap();
        let after = d.mu_matrix();
        for (b, a) in before.iter().zip(&after) {
            assert!((b - a).abs() < 1e-15);
        }
    }

    #[test]
    fn dual_update_degenerate_single_cell() {
        let mut d = DualIterate::uniform(1, 1, 2.0).unwrap();
        for _ in 0..100 {
            d.apply_update(0, 0, -0.5).unwrap();
            assert!((d.xi(0) - 1.0).abs() < 1e-15);
            assert!((d.pi(0, 0) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn dual_update_large_negative_exponent_hits_floor() {
        // Two states, one action: wiping out state 0's mass projects the
        // marginal onto (floor, 1 − floor).
        let tau = 4.0;
        let mut d = DualIterate::uniform(2, 1, tau).unwrap();
        let floor = 1.0 / (tau.sqrt() * 2.0);
        d.apply_update(0, 0, -1.0e6).unwrap();
        assert!((d.xi(0) - floor).abs() < 1e-12);
        assert!((d.xi(1) - (1.0 - floor)).abs() < 1e-12);
    }

    #[test]
    fn learner_single_state_single_action() {
        let m = MdpModel::new(1, 1, vec![1.0], vec![0.7]).unwrap();
        let truth = solve_optimal(&m).unwrap();
        let cfg = LearnerConfig::derive(1, 1, truth.t_mix as f64, truth.tau.max(1.0), 0.25, 3)
            .unwrap()
            .with_iterations(1, 1, 500);
        let mut oracle = SamplingOracle::new(&m, 3);
        let out = run(&mut oracle, &cfg, Some(&truth)).unwrap();
        assert_eq!(out.queries, 500);
        assert_eq!(out.policy.prob(0, 0), 1.0);
        let v = average_reward(&m, &out.policy).unwrap();
        assert!((v - 0.7).abs() < 1e-12);
    }

    #[test]
    fn learner_zero_reward_model_has_zero_gap() {
        let m = zero_reward_variant(&reference_2x2());
        let truth = solve_optimal(&m).unwrap();
        assert_eq!(truth.v_star, 0.0);
        let cfg = LearnerConfig::derive(2, 2, truth.t_mix as f64, truth.tau, 0.5, 9)
            .unwrap()
            .with_iterations(2, 2, 2048);
        let mut oracle = SamplingOracle::new(&m, 9);
        let out = run(&mut oracle, &cfg, Some(&truth)).unwrap();
        for rec in &out.diagnostics.records {
            assert!(rec.gap.abs() <= 1e-9, "gap {} at t={}", rec.gap, rec.t);
        }
    }

    #[test]
    fn running_average_matches_stored_policies() {
        let m = reference_2x2();
        let truth = solve_optimal(&m).unwrap();
        let t_total = 1000u64;
        let cfg = LearnerConfig::derive(2, 2, truth.t_mix as f64, truth.tau, 0.1, 5)
            .unwrap()
            .with_iterations(2, 2, t_total);
        let mut oracle = SamplingOracle::new(&m, 5);
        let mut learner = PrimalDualLearner::new(2, 2, cfg.clone()).unwrap();
        let mut stored_sum = vec![0.0; 4];
        for _ in 0..t_total {
            // Policy in effect at the start of the iteration.
            let snapshot = learner.dual_iterate().policy();
            for (acc, &p) in stored_sum.iter_mut().zip(snapshot.as_slice()) {
                *acc += p;
            }
            let (i, a) = learner.draw_state_action().unwrap();
            let (j, r) = oracle.query(i, a).unwrap();
            learner.apply_transition(i, a, j, r).unwrap();
        }
        let averaged = learner.averaged_policy();
        for (idx, &s) in stored_sum.iter().enumerate() {
            let naive = s / t_total as f64;
            let lazy = averaged.as_slice()[idx];
            assert!(
                (naive - lazy).abs() < 1e-13,
                "index {idx}: naive {naive} vs lazy {lazy}"
            );
        }
    }

    #[test]
    fn duality_gap_zero_at_optimal_occupancy() {
        let m = reference_2x2();
        let truth = solve_optimal(&m).unwrap();
        let g = duality_gap(&m, &truth, &truth.mu_star);
        assert!(g.abs() < 1e-9, "gap at μ* is {g}");
    }

    #[test]
    fn duality_gap_zero_reward_model() {
        let m = zero_reward_variant(&generate_random_ergodic(3, 2, 0.3, 6).unwrap());
        let truth = solve_optimal(&m).unwrap();
        let uniform = vec![1.0 / 6.0; 6];
        assert!(duality_gap(&m, &truth, &uniform).abs() < 1e-9);
    }

    #[test]
    fn duality_gap_matches_double_loop_reference() {
        let m = reference_2x2();
        let truth = solve_optimal(&m).unwrap();
        let mu = vec![0.25; 4];
        let fast = duality_gap(&m, &truth, &mu);
        // Direct evaluation of Σ_a (h* − P_a h* − r_a)ᵀ μ_a + v̄*.
        let r_a = m.expected_reward_vectors();
        let mut direct = truth.v_star;
        for a in 0..2 {
            for i in 0..2 {
                let mut ph = 0.0;
                for j in 0..2 {
                    ph += m.p(a, i, j) * truth.h_star[j];
                }
                direct += mu[i * 2 + a] * (truth.h_star[i] - ph - r_a[a][i]);
            }
        }
        assert!((fast - direct).abs() < 1e-12);
    }

    #[test]
    fn run_is_deterministic_in_seeds() {
        let m = reference_2x2();
        let cfg = LearnerConfig::derive(2, 2, 2.0, 6.25, 0.3, 11)
            .unwrap()
            .with_iterations(2, 2, 4000);
        let mut o1 = SamplingOracle::new(&m, 42);
        let mut o2 = SamplingOracle::new(&m, 42);
        let p1 = run(&mut o1, &cfg, None).unwrap().policy;
        let p2 = run(&mut o2, &cfg, None).unwrap().policy;
        assert_eq!(p1.as_slice(), p2.as_slice());
    }
}
