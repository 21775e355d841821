//! Logarithmic-time weighted sampling and the generative transition oracle.
//!
//! [`WeightTree`] keeps partial sums of nonnegative weights in an implicit
//! 8-ary tree, giving `O(log n)` sampling and single-weight updates while
//! touching one cache line per level. [`SamplingOracle`] holds one tree per
//! (state, action) row of a model and answers "next state + reward" queries
//! in `O(log n)` after an `O(|S|²|A|)` build.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::MdpModel;

const FANOUT: usize = 8;

/// Exact rebuild of all partial sums after this many updates, to cap
/// floating-point drift in the stored sums.
const REBUILD_INTERVAL: u64 = 1 << 20;

/// Partial-sum tree over `n` nonnegative weights.
///
/// Sampling inverts the prefix-sum function with left-closed cells: a draw
/// `u ∈ [0, 1)` selects the index whose cell `[S_{k-1}, S_k)` contains
/// `u·total()`, so an index with zero weight is never selected.
#[derive(Debug, Clone)]
pub struct WeightTree {
    n: usize,
    /// Concatenated levels; level 0 holds the `n` leaves.
    nodes: Vec<f64>,
    /// Start offset of each level inside `nodes`.
    offsets: Vec<usize>,
    /// Length of each level.
    lens: Vec<usize>,
    updates: u64,
}

impl WeightTree {
    /// Builds a tree over the given weights in linear time.
    pub fn build(weights: &[f64]) -> Result<Self> {
        let n = weights.len();
        if n == 0 {
            return Err(Error::InvalidParameter("empty weight vector".into()));
        }
        for (index, &value) in weights.iter().enumerate() {
            if value < 0.0 || !value.is_finite() {
                return Err(Error::NegativeWeight { index, value });
            }
        }
        if weights.iter().all(|&w| w == 0.0) {
            return Err(Error::AllZeroWeights);
        }
        let mut offsets = vec![0];
        let mut lens = vec![n];
        let mut len = n;
        while len > 1 {
            let next = len.div_ceil(FANOUT);
            offsets.push(offsets.last().unwrap() + len);
            lens.push(next);
            len = next;
        }
        let total_nodes = offsets.last().unwrap() + len;
        let mut nodes = vec![0.0; total_nodes];
        nodes[..n].copy_from_slice(weights);
        let mut tree = Self {
            n,
            nodes,
            offsets,
            lens,
            updates: 0,
        };
        tree.rebuild();
        Ok(tree)
    }

    /// Number of weights.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// The stored weight at `index`; exact, not a partial sum.
    pub fn weight(&self, index: usize) -> f64 {
        self.nodes[index]
    }

    /// Sum of all weights as maintained by the tree root.
    pub fn total(&self) -> f64 {
        let last = self.lens.len() - 1;
        self.nodes[self.offsets[last]]
    }

    /// Sets `weight(index) = value`, repairing `O(log n)` partial sums.
    pub fn update(&mut self, index: usize, value: f64) -> Result<()> {
        if index >= self.n {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.n,
            });
        }
        if value < 0.0 || !value.is_finite() {
            return Err(Error::NegativeWeight { index, value });
        }
        self.nodes[index] = value;
        self.repair_path(index);
        self.updates += 1;
        if self.updates % REBUILD_INTERVAL == 0 {
            self.rebuild();
        }
        Ok(())
    }

    /// Multiplies every weight by `factor > 0` and rebuilds the sums.
    pub fn scale_all(&mut self, factor: f64) {
        debug_assert!(factor > 0.0 && factor.is_finite());
        for w in &mut self.nodes[..self.n] {
            *w *= factor;
        }
        self.rebuild();
    }

    /// Recomputes every partial sum bottom-up from the leaves.
    pub fn rebuild(&mut self) {
        for level in 1..self.lens.len() {
            for p in 0..self.lens[level] {
                let child_base = self.offsets[level - 1] + p * FANOUT;
                let child_end = self.offsets[level - 1]
                    + ((p + 1) * FANOUT).min(self.lens[level - 1]);
                let sum: f64 = self.nodes[child_base..child_end].iter().sum();
                self.nodes[self.offsets[level] + p] = sum;
            }
        }
    }

    fn repair_path(&mut self, index: usize) {
        let mut child = index;
        for level in 1..self.lens.len() {
            let parent = child / FANOUT;
            let child_base = self.offsets[level - 1] + parent * FANOUT;
            let child_end =
                self.offsets[level - 1] + ((parent + 1) * FANOUT).min(self.lens[level - 1]);
            let sum: f64 = self.nodes[child_base..child_end].iter().sum();
            self.nodes[self.offsets[level] + parent] = sum;
            child = parent;
        }
    }

    /// Maps a uniform draw in `[0, 1)` to an index with probability
    /// `weight(k) / total()`.
    pub fn sample_at(&self, uniform_draw: f64) -> Result<usize> {
        let total = self.total();
        if total <= 0.0 {
            return Err(Error::AllZeroWeights);
        }
        debug_assert!((0.0..1.0).contains(&uniform_draw));
        let mut target = uniform_draw * total;
        // Descend keeping target < sum of the current node.
        let mut p = 0usize;
        for level in (1..self.lens.len()).rev() {
            let child_base = p * FANOUT;
            let child_end = ((p + 1) * FANOUT).min(self.lens[level - 1]);
            let off = self.offsets[level - 1];
            let mut chosen = child_end - 1;
            for c in child_base..child_end {
                let w = self.nodes[off + c];
                if target < w {
                    chosen = c;
                    break;
                }
                target -= w;
            }
            p = chosen;
        }
        // Rounding at cell boundaries can land on a zero-weight leaf; step
        // to the nearest positive neighbor.
        if self.nodes[p] == 0.0 {
            let before = (0..p).rev().find(|&k| self.nodes[k] > 0.0);
            let after = (p + 1..self.n).find(|&k| self.nodes[k] > 0.0);
            p = before.or(after).expect("total > 0 implies a positive weight");
        }
        Ok(p)
    }

    /// Draws an index using the supplied generator.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<usize> {
        self.sample_at(rng.random::<f64>())
    }
}

/// Stream identifiers keeping the crate's ChaCha streams disjoint even when
/// callers reuse one seed across components.
pub mod streams {
    pub const ORACLE: u64 = 1;
    pub const LEARNER: u64 = 2;
    pub const EVALUATION: u64 = 3;
}

/// Seeded generative oracle: `query(i, a)` returns a next state `j` drawn
/// from `p[a][i][·]` together with the reward `r[a][i][j]`.
pub struct SamplingOracle<'a> {
    model: &'a MdpModel,
    /// One tree per (state, action) pair, indexed `i * n_actions + a`.
    rows: Vec<WeightTree>,
    rng: ChaCha8Rng,
    queries: u64,
}

impl<'a> SamplingOracle<'a> {
    /// Preprocesses the model, reading each transition entry exactly once.
    pub fn new(model: &'a MdpModel, seed: u64) -> Self {
        let mut rows = Vec::with_capacity(model.n_states() * model.n_actions());
        for i in 0..model.n_states() {
            for a in 0..model.n_actions() {
                let tree = WeightTree::build(model.transition_row(a, i))
                    .expect("stochastic rows have positive mass");
                rows.push(tree);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(streams::ORACLE);
        Self {
            model,
            rows,
            rng,
            queries: 0,
        }
    }

    pub fn model(&self) -> &MdpModel {
        self.model
    }

    /// Samples `j ~ p[a][i][·]` and returns `(j, r[a][i][j])`.
    pub fn query(&mut self, i: usize, a: usize) -> Result<(usize, f64)> {
        if i >= self.model.n_states() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.model.n_states(),
            });
        }
        if a >= self.model.n_actions() {
            return Err(Error::IndexOutOfRange {
                index: a,
                len: self.model.n_actions(),
            });
        }
        let tree = &self.rows[i * self.model.n_actions() + a];
        let j = tree.sample(&mut self.rng)?;
        self.queries += 1;
        Ok((j, self.model.r(a, i, j)))
    }

    /// Exact number of queries answered since construction.
    pub fn query_count(&self) -> u64 {
        self.queries
    }
}
