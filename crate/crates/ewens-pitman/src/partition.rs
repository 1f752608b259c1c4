//! Model parameters, sequential sampling, exact partition probabilities,
//! and brute-force enumeration for small n.
//!
//! The sampler works on the size histogram alone: blocks of equal size are
//! exchangeable, so one step only needs to choose between "open a new
//! block" and "join some block of size r". Join weights live in two
//! Fenwick trees holding the integers r K_r and K_r; the combined prefix
//! weight s1 - alpha s2 is then exact up to one rounding, which keeps the
//! sampler bit-for-bit reproducible across refactorings of the tree
//! layout.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::Kahan;
use crate::{Error, Result};

/// How the concentration parameter scales with the sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Regime {
    /// Classical two-parameter model: theta is a constant.
    FixedTheta {
        /// Concentration parameter, must exceed -alpha.
        theta: f64,
    },
    /// Size-proportional concentration theta = lambda n, resolved once per
    /// target sample size. Trajectories at different n are different
    /// processes; a run must never be extended past its own n.
    LinearTheta {
        /// Proportionality constant, must be positive.
        lambda: f64,
    },
}

/// Discount parameter and concentration regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Discount alpha in [0, 1).
    pub alpha: f64,
    /// Concentration regime.
    pub regime: Regime,
}

impl ModelParams {
    /// Fixed-theta model.
    pub fn new_fixed(alpha: f64, theta: f64) -> Result<Self> {
        let p = ModelParams {
            alpha,
            regime: Regime::FixedTheta { theta },
        };
        p.validate()?;
        Ok(p)
    }

    /// Size-proportional model theta = lambda n.
    pub fn new_linear(alpha: f64, lambda: f64) -> Result<Self> {
        let p = ModelParams {
            alpha,
            regime: Regime::LinearTheta { lambda },
        };
        p.validate()?;
        Ok(p)
    }

    /// Check the admissible parameter range.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha must lie in [0, 1), got {}",
                self.alpha
            )));
        }
        match self.regime {
            Regime::FixedTheta { theta } => {
                if !(theta > -self.alpha) {
                    return Err(Error::Config(format!(
                        "theta must exceed -alpha, got theta={theta}, alpha={}",
                        self.alpha
                    )));
                }
            }
            Regime::LinearTheta { lambda } => {
                if !(lambda > 0.0) {
                    return Err(Error::Config(format!(
                        "lambda must be positive, got {lambda}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Concentration parameter for a run of n observations.
    pub fn theta_for(&self, n: u64) -> f64 {
        match self.regime {
            Regime::FixedTheta { theta } => theta,
            Regime::LinearTheta { lambda } => lambda * n as f64,
        }
    }

    /// Lambda if the regime is size-proportional.
    pub fn lambda(&self) -> Option<f64> {
        match self.regime {
            Regime::FixedTheta { .. } => None,
            Regime::LinearTheta { lambda } => Some(lambda),
        }
    }
}

/// Deterministic seeding: one master seed, one stream per replicate.
///
/// Replicates use stream = replicate index; auxiliary randomness (e.g.
/// bootstrap resampling) lives in streams offset by 2^63 so it can never
/// collide with a replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSpec {
    /// Seed shared by the whole experiment.
    pub master_seed: u64,
    /// Stream selector within the experiment.
    pub replicate_index: u64,
}

impl SeedSpec {
    /// Stream for one simulation replicate.
    pub fn replicate(master_seed: u64, replicate_index: u64) -> Self {
        SeedSpec {
            master_seed,
            replicate_index,
        }
    }

    /// Stream for non-replicate randomness, disjoint from all replicates.
    pub fn auxiliary(master_seed: u64, purpose: u64) -> Self {
        SeedSpec {
            master_seed,
            replicate_index: (1u64 << 63) + purpose,
        }
    }

    /// Instantiate the generator for this stream.
    pub fn rng(&self) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.replicate_index);
        rng
    }
}

/// Size histogram of a partition: counts[r - 1] blocks of size r.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionCounts {
    counts: Vec<u64>,
    num_items: u64,
    num_blocks: u64,
}

impl PartitionCounts {
    /// Empty partition.
    pub fn new() -> Self {
        PartitionCounts {
            counts: Vec::new(),
            num_items: 0,
            num_blocks: 0,
        }
    }

    /// Build from block sizes; zero sizes are rejected.
    pub fn from_block_sizes(sizes: &[u64]) -> Result<Self> {
        let mut c = PartitionCounts::new();
        for &s in sizes {
            if s == 0 {
                return Err(Error::State("block size 0 is not a block".into()));
            }
            let idx = s as usize - 1;
            if c.counts.len() <= idx {
                c.counts.resize(idx + 1, 0);
            }
            c.counts[idx] += 1;
            c.num_items += s;
            c.num_blocks += 1;
        }
        Ok(c)
    }

    /// Number of observations placed so far.
    pub fn num_items(&self) -> u64 {
        self.num_items
    }

    /// Number of blocks.
    pub fn num_blocks(&self) -> u64 {
        self.num_blocks
    }

    /// Number of blocks of exactly this size.
    pub fn count_of_size(&self, size: u64) -> u64 {
        if size == 0 {
            return 0;
        }
        self.counts.get(size as usize - 1).copied().unwrap_or(0)
    }

    /// Largest block size present, 0 for the empty partition.
    pub fn max_size(&self) -> u64 {
        self.counts
            .iter()
            .rposition(|&c| c > 0)
            .map_or(0, |i| i as u64 + 1)
    }

    /// Block sizes in descending order.
    pub fn block_sizes(&self) -> Vec<u64> {
        let mut out = Vec::with_capacity(self.num_blocks as usize);
        for (i, &c) in self.counts.iter().enumerate().rev() {
            for _ in 0..c {
                out.push(i as u64 + 1);
            }
        }
        out
    }

    /// Start a block with one fresh item.
    pub fn add_new_block(&mut self) {
        if self.counts.is_empty() {
            self.counts.push(0);
        }
        self.counts[0] += 1;
        self.num_items += 1;
        self.num_blocks += 1;
    }

    /// Move one item into an existing block of the given size.
    pub fn add_to_block_of_size(&mut self, size: u64) -> Result<()> {
        if size == 0 || self.count_of_size(size) == 0 {
            return Err(Error::State(format!(
                "no block of size {size} to join (histogram {:?})",
                self.counts
            )));
        }
        let idx = size as usize - 1;
        self.counts[idx] -= 1;
        if self.counts.len() <= idx + 1 {
            self.counts.resize(idx + 2, 0);
        }
        self.counts[idx + 1] += 1;
        self.num_items += 1;
        Ok(())
    }

    /// Total block count plus the counts of sizes 1..=d.
    pub fn truncated(&self, d: usize) -> TruncatedCounts {
        let by_size = (1..=d as u64).map(|r| self.count_of_size(r)).collect();
        TruncatedCounts {
            total: self.num_blocks,
            by_size,
        }
    }
}

impl Default for PartitionCounts {
    fn default() -> Self {
        PartitionCounts::new()
    }
}

/// The statistic vector (K_n, K_{1,n}, ..., K_{d,n}).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncatedCounts {
    /// Total number of blocks.
    pub total: u64,
    /// Blocks of size r at position r - 1.
    pub by_size: Vec<u64>,
}

impl TruncatedCounts {
    /// Flatten to [K, K_1, ..., K_d] as floats.
    pub fn to_f64(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.by_size.len() + 1);
        v.push(self.total as f64);
        v.extend(self.by_size.iter().map(|&c| c as f64));
        v
    }
}

/// One-step distribution out of a partition state.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionProbabilities {
    /// Probability of opening a new block.
    pub new_block: f64,
    /// join_by_size[r - 1] is the probability of joining some block of
    /// size r; entries run to the largest size present.
    pub join_by_size: Vec<f64>,
}

impl TransitionProbabilities {
    /// Total mass, compensated; equals 1 up to float error.
    pub fn total(&self) -> f64 {
        let mut acc = Kahan::new(self.new_block);
        for &p in &self.join_by_size {
            acc.add(p);
        }
        acc.value()
    }
}

/// Exact one-step probabilities of the sequential construction.
///
/// From a state with h items and K blocks the next item opens a new block
/// with probability (theta + alpha K)/(theta + h) and joins some block of
/// size r with probability (r - alpha) K_r / (theta + h). The empty state
/// opens a new block with probability 1 even when theta = 0, where the
/// ratio turns 0/0.
pub fn transition_probabilities(
    alpha: f64,
    theta: f64,
    counts: &PartitionCounts,
) -> Result<TransitionProbabilities> {
    check_sampler_params(alpha, theta)?;
    let h = counts.num_items();
    if h == 0 {
        return Ok(TransitionProbabilities {
            new_block: 1.0,
            join_by_size: Vec::new(),
        });
    }
    let denom = theta + h as f64;
    let new_block = (theta + alpha * counts.num_blocks() as f64) / denom;
    let max = counts.max_size();
    let join_by_size = (1..=max)
        .map(|r| (r as f64 - alpha) * counts.count_of_size(r) as f64 / denom)
        .collect();
    Ok(TransitionProbabilities {
        new_block,
        join_by_size,
    })
}

fn check_sampler_params(alpha: f64, theta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Config(format!(
            "alpha must lie in [0, 1), got {alpha}"
        )));
    }
    if !(theta > -alpha) {
        return Err(Error::Config(format!(
            "theta must exceed -alpha, got theta={theta}, alpha={alpha}"
        )));
    }
    Ok(())
}

/// What one sampling step did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    /// The item opened a new block.
    NewBlock,
    /// The item joined a block that previously had this size.
    Joined {
        /// Size of the block before the item arrived.
        previous_size: u64,
    },
}

// Fenwick tree over block sizes, 1-indexed, capacity a power of two.
#[derive(Debug, Clone)]
struct Fenwick {
    tree: Vec<i64>,
    cap: usize,
}

impl Fenwick {
    fn new(cap: usize) -> Self {
        debug_assert!(cap.is_power_of_two());
        Fenwick {
            tree: vec![0; cap + 1],
            cap,
        }
    }

    fn add(&mut self, mut i: usize, delta: i64) {
        while i <= self.cap {
            self.tree[i] += delta;
            i += i & i.wrapping_neg();
        }
    }
}

/// Incremental sampler for the sequential construction at a resolved theta.
///
/// Each step consumes exactly one uniform draw. Join sizes are located by
/// a joint binary-lifting descent over the two Fenwick trees, so a step
/// costs O(log max_size) regardless of how many size classes exist.
#[derive(Debug, Clone)]
pub struct Simulator {
    alpha: f64,
    theta: f64,
    counts: PartitionCounts,
    items_tree: Fenwick,  // r * K_r
    blocks_tree: Fenwick, // K_r
}

impl Simulator {
    /// Fresh empty-state sampler.
    pub fn new(alpha: f64, theta: f64) -> Result<Self> {
        Self::from_state(alpha, theta, PartitionCounts::new())
    }

    /// Sampler starting from an existing partition state.
    pub fn from_state(alpha: f64, theta: f64, counts: PartitionCounts) -> Result<Self> {
        check_sampler_params(alpha, theta)?;
        let cap = (counts.max_size().max(8) as usize).next_power_of_two();
        let mut sim = Simulator {
            alpha,
            theta,
            counts,
            items_tree: Fenwick::new(cap),
            blocks_tree: Fenwick::new(cap),
        };
        sim.rebuild_trees();
        Ok(sim)
    }

    /// Current partition state.
    pub fn counts(&self) -> &PartitionCounts {
        &self.counts
    }

    /// Discount parameter.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Resolved concentration parameter.
    pub fn theta(&self) -> f64 {
        self.theta
    }

    fn rebuild_trees(&mut self) {
        let cap = self.items_tree.cap;
        self.items_tree = Fenwick::new(cap);
        self.blocks_tree = Fenwick::new(cap);
        for r in 1..=self.counts.max_size() {
            let k = self.counts.count_of_size(r);
            if k > 0 {
                self.items_tree.add(r as usize, (r * k) as i64);
                self.blocks_tree.add(r as usize, k as i64);
            }
        }
    }

    fn grow_to(&mut self, size: u64) {
        let mut cap = self.items_tree.cap;
        while cap < size as usize {
            cap *= 2;
        }
        self.items_tree = Fenwick::new(cap);
        self.blocks_tree = Fenwick::new(cap);
        self.rebuild_trees();
    }

    // Largest prefix position with weight <= y, then one past it is the
    // sampled size; the combined weight of sizes 1..=m is
    // sum r K_r - alpha sum K_r over r <= m, exact integers on both sides.
    fn sample_join_size(&self, y: f64) -> u64 {
        let cap = self.items_tree.cap;
        let mut pos = 0usize;
        let mut acc_items = 0i64;
        let mut acc_blocks = 0i64;
        let mut bit = cap;
        while bit > 0 {
            let next = pos + bit;
            if next <= cap {
                let c_items = acc_items + self.items_tree.tree[next];
                let c_blocks = acc_blocks + self.blocks_tree.tree[next];
                let w = c_items as f64 - self.alpha * c_blocks as f64;
                if w <= y {
                    pos = next;
                    acc_items = c_items;
                    acc_blocks = c_blocks;
                }
            }
            bit >>= 1;
        }
        let size = (pos + 1) as u64;
        // A uniform draw at the very top of [0, 1) can overshoot the last
        // join boundary by a rounding error; fall back to the largest
        // occupied size.
        if size > self.counts.max_size() {
            self.counts.max_size()
        } else {
            size
        }
    }

    /// Place one item, consuming one uniform draw.
    pub fn advance<R: Rng>(&mut self, rng: &mut R) -> Result<StepOutcome> {
        let h = self.counts.num_items();
        let u: f64 = rng.random();
        if h == 0 {
            self.counts.add_new_block();
            self.items_tree.add(1, 1);
            self.blocks_tree.add(1, 1);
            return Ok(StepOutcome::NewBlock);
        }
        let k = self.counts.num_blocks();
        let total = self.theta + h as f64;
        let new_weight = self.theta + self.alpha * k as f64;
        let x = u * total;
        if x < new_weight {
            self.counts.add_new_block();
            self.items_tree.add(1, 1);
            self.blocks_tree.add(1, 1);
            return Ok(StepOutcome::NewBlock);
        }
        let size = self.sample_join_size(x - new_weight);
        self.counts.add_to_block_of_size(size)?;
        let r = size as usize;
        self.items_tree.add(r, -(size as i64));
        self.blocks_tree.add(r, -1);
        let grown = size + 1;
        if grown as usize > self.items_tree.cap {
            self.grow_to(grown);
        } else {
            self.items_tree.add(grown as usize, grown as i64);
            self.blocks_tree.add(grown as usize, 1);
        }
        Ok(StepOutcome::Joined {
            previous_size: size,
        })
    }
}

/// A recorded state along one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Requested time fraction x.
    pub fraction: f64,
    /// Items placed when the snapshot was taken, floor(x n).
    pub items: u64,
    /// Statistic vector at that point.
    pub counts: TruncatedCounts,
}

/// Run one trajectory to n items, recording (K, K_1..K_d) at floor(x n)
/// for every requested fraction x in [0, 1].
///
/// Under the size-proportional regime theta resolves to lambda n for this
/// specific n, and the trajectory is never extended further.
pub fn simulate(
    params: &ModelParams,
    n: u64,
    d: usize,
    checkpoint_fractions: &[f64],
    seed: &SeedSpec,
) -> Result<Vec<Checkpoint>> {
    params.validate()?;
    if n == 0 {
        return Err(Error::Config("n must be at least 1".into()));
    }
    for &x in checkpoint_fractions {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Config(format!(
                "checkpoint fractions must lie in [0, 1], got {x}"
            )));
        }
    }
    let theta = params.theta_for(n);
    let mut sim = Simulator::new(params.alpha, theta)?;
    let mut rng = seed.rng();
    let targets: Vec<u64> = checkpoint_fractions
        .iter()
        .map(|&x| (x * n as f64).floor() as u64)
        .collect();
    let mut wanted: BTreeMap<u64, TruncatedCounts> = BTreeMap::new();
    for &h in &targets {
        wanted.entry(h).or_insert_with(|| TruncatedCounts {
            total: 0,
            by_size: vec![0; d],
        });
    }
    if let Some(snap) = wanted.get_mut(&0) {
        *snap = sim.counts().truncated(d);
    }
    for h in 1..=n {
        sim.advance(&mut rng)?;
        if let Some(snap) = wanted.get_mut(&h) {
            *snap = sim.counts().truncated(d);
        }
    }
    Ok(checkpoint_fractions
        .iter()
        .zip(targets.iter())
        .map(|(&x, &h)| Checkpoint {
            fraction: x,
            items: h,
            counts: wanted[&h].clone(),
        })
        .collect())
}

/// Log-probability of one set partition with the given block sizes.
///
/// The weight is assembled in the cancelled form
///
/// ```text
/// prod_{i=1}^{k-1} (theta + i alpha)
///   / prod_{i=1}^{n-1} (theta + i)
///   * prod_j (1 - alpha)_{(n_j - 1)}
/// ```
///
/// whose factors are all strictly positive throughout the admissible range
/// theta > -alpha, including negative theta.
pub fn eppf_log_prob(alpha: f64, theta: f64, block_sizes: &[u64]) -> Result<f64> {
    check_sampler_params(alpha, theta)?;
    if block_sizes.is_empty() || block_sizes.contains(&0) {
        return Err(Error::domain(
            "eppf_log_prob",
            "block sizes must be nonempty and positive",
        ));
    }
    let k = block_sizes.len() as u64;
    let n: u64 = block_sizes.iter().sum();
    let mut log_num = Kahan::new(0.0);
    for i in 1..k {
        log_num.add((theta + i as f64 * alpha).ln());
    }
    for &size in block_sizes {
        for j in 0..(size - 1) {
            log_num.add((1.0 - alpha + j as f64).ln());
        }
    }
    let mut log_den = Kahan::new(0.0);
    for i in 1..n {
        log_den.add((theta + i as f64).ln());
    }
    Ok(log_num.value() - log_den.value())
}

/// Exact distribution over partition shapes of [n], from full enumeration.
#[derive(Debug, Clone)]
pub struct ExactEnumeration {
    /// Number of observations.
    pub n: u64,
    /// Number of set partitions enumerated (the Bell number).
    pub partition_count: u64,
    /// Probability mass per shape, keyed by block sizes sorted descending.
    pub mass_by_shape: BTreeMap<Vec<u64>, f64>,
}

impl ExactEnumeration {
    /// Total probability; equals 1 up to float error.
    pub fn total_mass(&self) -> f64 {
        let mut acc = Kahan::new(0.0);
        for &m in self.mass_by_shape.values() {
            acc.add(m);
        }
        acc.value()
    }

    /// Expectation of a shape functional under the exact distribution.
    pub fn expect(&self, f: impl Fn(&[u64]) -> f64) -> f64 {
        let mut acc = Kahan::new(0.0);
        for (shape, &m) in &self.mass_by_shape {
            acc.add(m * f(shape));
        }
        acc.value()
    }

    /// Number of blocks of the given size in a shape (helper for moments).
    pub fn count_of_size(shape: &[u64], size: u64) -> u64 {
        shape.iter().filter(|&&s| s == size).count() as u64
    }
}

/// Enumerate every set partition of [n] and aggregate exact probabilities
/// by shape. Guarded at n <= 12 where the Bell number stays manageable.
pub fn enumerate_exact(alpha: f64, theta: f64, n: u64) -> Result<ExactEnumeration> {
    check_sampler_params(alpha, theta)?;
    if n == 0 || n > 12 {
        return Err(Error::domain(
            "enumerate_exact",
            format!("n must lie in 1..=12, got {n}"),
        ));
    }
    let mut out = ExactEnumeration {
        n,
        partition_count: 0,
        mass_by_shape: BTreeMap::new(),
    };
    // Sequential construction: item i either joins an existing block
    // (distinguished by creation order) or opens a new one. Each leaf of
    // the recursion is a distinct set partition.
    let mut blocks: Vec<u64> = Vec::new();
    fn recurse(
        alpha: f64,
        theta: f64,
        n: u64,
        placed: u64,
        blocks: &mut Vec<u64>,
        out: &mut ExactEnumeration,
    ) -> Result<()> {
        if placed == n {
            let mut shape = blocks.clone();
            shape.sort_unstable_by(|a, b| b.cmp(a));
            let p = eppf_log_prob(alpha, theta, &shape)?.exp();
            *out.mass_by_shape.entry(shape).or_insert(0.0) += p;
            out.partition_count += 1;
            return Ok(());
        }
        for b in 0..blocks.len() {
            blocks[b] += 1;
            recurse(alpha, theta, n, placed + 1, blocks, out)?;
            blocks[b] -= 1;
        }
        blocks.push(1);
        recurse(alpha, theta, n, placed + 1, blocks, out)?;
        blocks.pop();
        Ok(())
    }
    recurse(alpha, theta, n, 0, &mut blocks, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(got: f64, want: f64, tol: f64) {
        assert!(
            (got - want).abs() <= tol,
            "got {got}, want {want} (tol {tol})"
        );
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::new_fixed(0.5, 1.0).is_ok());
        assert!(ModelParams::new_fixed(0.5, -0.4).is_ok());
        assert!(ModelParams::new_fixed(0.5, -0.5).is_err());
        assert!(ModelParams::new_fixed(0.0, 0.0).is_err());
        assert!(ModelParams::new_fixed(1.0, 1.0).is_err());
        assert!(ModelParams::new_fixed(-0.1, 1.0).is_err());
        assert!(ModelParams::new_linear(0.0, 0.0).is_err());
        let p = ModelParams::new_linear(0.3, 2.0).unwrap();
        assert_eq!(p.theta_for(100), 200.0);
        assert_eq!(p.lambda(), Some(2.0));
    }

    #[test]
    fn transition_probabilities_small_state() {
        // Blocks {3, 1, 1} at alpha = 0.5, theta = 1: h = 5, K = 3.
        let counts = PartitionCounts::from_block_sizes(&[3, 1, 1]).unwrap();
        let t = transition_probabilities(0.5, 1.0, &counts).unwrap();
        assert_close(t.new_block, 5.0 / 12.0, 1e-15);
        assert_close(t.join_by_size[0], 1.0 / 6.0, 1e-15);
        assert_close(t.join_by_size[1], 0.0, 0.0);
        assert_close(t.join_by_size[2], 5.0 / 12.0, 1e-15);
        assert_close(t.total(), 1.0, 1e-15);
    }

    #[test]
    fn transition_probabilities_empty_state_with_zero_theta() {
        // The h = 0 ratio is 0/0 at theta = 0; the guard pins it to 1.
        let t = transition_probabilities(0.5, 0.0, &PartitionCounts::new()).unwrap();
        assert_eq!(t.new_block, 1.0);
        assert!(t.join_by_size.is_empty());
        assert_close(t.total(), 1.0, 0.0);
    }

    #[test]
    fn transition_mass_stays_one_along_a_trajectory() {
        let mut sim = Simulator::new(0.3, 2.5).unwrap();
        let mut rng = SeedSpec::replicate(7, 0).rng();
        for step in 0..5_000u32 {
            if step % 250 == 0 {
                let t = transition_probabilities(0.3, 2.5, sim.counts()).unwrap();
                assert_close(t.total(), 1.0, 1e-15);
            }
            sim.advance(&mut rng).unwrap();
        }
    }

    #[test]
    fn histogram_bookkeeping_stays_consistent() {
        let mut sim = Simulator::new(0.5, 3.0).unwrap();
        let mut rng = SeedSpec::replicate(11, 4).rng();
        for _ in 0..10_000 {
            sim.advance(&mut rng).unwrap();
        }
        let c = sim.counts();
        let items: u64 = (1..=c.max_size()).map(|r| r * c.count_of_size(r)).sum();
        let blocks: u64 = (1..=c.max_size()).map(|r| c.count_of_size(r)).sum();
        assert_eq!(items, c.num_items());
        assert_eq!(blocks, c.num_blocks());
        assert_eq!(c.num_items(), 10_000);
    }

    // Reference sampler: same uniform draw, linear scan over the exact
    // prefix weights. Must agree with the tree descent step by step.
    fn naive_step<R: Rng>(
        alpha: f64,
        theta: f64,
        counts: &mut PartitionCounts,
        rng: &mut R,
    ) -> StepOutcome {
        let h = counts.num_items();
        let u: f64 = rng.random();
        if h == 0 {
            counts.add_new_block();
            return StepOutcome::NewBlock;
        }
        let x = u * (theta + h as f64);
        let new_weight = theta + alpha * counts.num_blocks() as f64;
        if x < new_weight {
            counts.add_new_block();
            return StepOutcome::NewBlock;
        }
        let y = x - new_weight;
        let mut s_items = 0i64;
        let mut s_blocks = 0i64;
        let mut chosen = counts.max_size();
        for r in 1..=counts.max_size() {
            s_items += (r * counts.count_of_size(r)) as i64;
            s_blocks += counts.count_of_size(r) as i64;
            let w = s_items as f64 - alpha * s_blocks as f64;
            if w > y {
                chosen = r;
                break;
            }
        }
        counts.add_to_block_of_size(chosen).unwrap();
        StepOutcome::Joined {
            previous_size: chosen,
        }
    }

    #[test]
    fn tree_sampler_matches_linear_scan_exactly() {
        for &(alpha, theta) in &[(0.5, 3.0), (0.0, 1.0), (0.3, -0.2), (0.9, 50.0)] {
            let mut sim = Simulator::new(alpha, theta).unwrap();
            let mut naive = PartitionCounts::new();
            let mut rng_a = SeedSpec::replicate(99, 1).rng();
            let mut rng_b = SeedSpec::replicate(99, 1).rng();
            for step in 0..2_000u32 {
                let got = sim.advance(&mut rng_a).unwrap();
                let want = naive_step(alpha, theta, &mut naive, &mut rng_b);
                assert_eq!(got, want, "divergence at step {step} (a={alpha}, t={theta})");
            }
            assert_eq!(sim.counts(), &naive);
        }
    }

    #[test]
    fn tree_capacity_growth_preserves_state() {
        // Small theta at alpha = 0 grows one dominant block well past the
        // initial capacity of 8.
        let mut sim = Simulator::new(0.0, 0.1).unwrap();
        let mut rng = SeedSpec::replicate(5, 2).rng();
        for _ in 0..5_000 {
            sim.advance(&mut rng).unwrap();
        }
        assert!(sim.counts().max_size() > 8);
        let items: u64 = (1..=sim.counts().max_size())
            .map(|r| r * sim.counts().count_of_size(r))
            .sum();
        assert_eq!(items, 5_000);
    }

    #[test]
    fn from_state_resumes_cleanly() {
        let counts = PartitionCounts::from_block_sizes(&[3, 1, 1]).unwrap();
        let mut sim = Simulator::from_state(0.5, 1.0, counts).unwrap();
        let mut rng = SeedSpec::replicate(1, 0).rng();
        for _ in 0..100 {
            sim.advance(&mut rng).unwrap();
        }
        assert_eq!(sim.counts().num_items(), 105);
    }

    #[test]
    fn simulate_is_deterministic_per_stream() {
        let params = ModelParams::new_linear(0.5, 1.0).unwrap();
        let seed = SeedSpec::replicate(42, 3);
        let a = simulate(&params, 500, 3, &[0.25, 0.5, 1.0], &seed).unwrap();
        let b = simulate(&params, 500, 3, &[0.25, 0.5, 1.0], &seed).unwrap();
        assert_eq!(a, b);
        let c = simulate(&params, 500, 3, &[0.25, 0.5, 1.0], &SeedSpec::replicate(42, 4)).unwrap();
        assert_ne!(a, c);
        // Auxiliary streams never collide with replicate streams.
        assert_ne!(
            SeedSpec::auxiliary(42, 3).replicate_index,
            SeedSpec::replicate(42, 3).replicate_index
        );
    }

    #[test]
    fn simulate_checkpoints_land_on_floor() {
        let params = ModelParams::new_fixed(0.0, 1.0).unwrap();
        let seed = SeedSpec::replicate(8, 0);
        let cps = simulate(&params, 10, 2, &[0.55, 1.0], &seed).unwrap();
        assert_eq!(cps[0].items, 5);
        assert_eq!(cps[1].items, 10);
        let v = cps[1].counts.to_f64();
        assert_eq!(v.len(), 3);
        assert!(v[0] >= 1.0);
    }

    #[test]
    fn eppf_matches_hand_computation() {
        // Sizes {3, 1, 1} at alpha = 0.5, theta = 1:
        // (theta+alpha)(theta+2 alpha) * (0.5)(1.5) / [(theta+1)...(theta+4)]
        // = 3 * 0.75 / 120.
        let lp = eppf_log_prob(0.5, 1.0, &[3, 1, 1]).unwrap();
        assert_close(lp.exp(), 0.01875, 1e-16);
        // Two items, one block: (1 - alpha) / (theta + 1).
        let lp = eppf_log_prob(0.3, 0.7, &[2]).unwrap();
        assert_close(lp.exp(), 0.7 / 1.7, 1e-15);
    }

    #[test]
    fn eppf_negative_theta_is_finite() {
        let lp = eppf_log_prob(0.5, -0.2, &[2, 2, 1]).unwrap();
        assert!(lp.is_finite());
    }

    #[test]
    fn enumeration_normalizes_across_parameter_grid() {
        for &(alpha, theta) in &[
            (0.0, 1.0),
            (0.3, 0.7),
            (0.5, -0.2),
            (0.5, 2.0),
            (0.0, 5.0),
        ] {
            let e = enumerate_exact(alpha, theta, 4).unwrap();
            assert_eq!(e.partition_count, 15);
            assert_close(e.total_mass(), 1.0, 1e-12);
        }
        let e = enumerate_exact(0.5, 1.0, 8).unwrap();
        assert_eq!(e.partition_count, 4140);
        assert_close(e.total_mass(), 1.0, 1e-12);
    }

    #[test]
    fn enumeration_agrees_with_simulation_frequencies() {
        // Monte Carlo sanity on P(K_4 = k) at alpha = 0.5, theta = 1.
        let e = enumerate_exact(0.5, 1.0, 4).unwrap();
        let exact_singletons =
            e.expect(|shape| ExactEnumeration::count_of_size(shape, 1) as f64);
        let params = ModelParams::new_fixed(0.5, 1.0).unwrap();
        let reps = 40_000u64;
        let mut acc = 0.0;
        for i in 0..reps {
            let cp = simulate(&params, 4, 1, &[1.0], &SeedSpec::replicate(2024, i)).unwrap();
            acc += cp[0].counts.by_size[0] as f64;
        }
        let mc = acc / reps as f64;
        // Standard error is about 0.004; allow five of them.
        assert_close(mc, exact_singletons, 0.02);
    }

    #[test]
    fn enumerate_rejects_out_of_range_n() {
        assert!(enumerate_exact(0.5, 1.0, 0).is_err());
        assert!(enumerate_exact(0.5, 1.0, 13).is_err());
    }

    #[test]
    fn truncated_counts_layout() {
        let counts = PartitionCounts::from_block_sizes(&[5, 2, 2, 1]).unwrap();
        let t = counts.truncated(3);
        assert_eq!(t.total, 4);
        assert_eq!(t.by_size, vec![1, 2, 0]);
        assert_eq!(t.to_f64(), vec![4.0, 1.0, 2.0, 0.0]);
        assert_eq!(counts.block_sizes(), vec![5, 2, 2, 1]);
    }
}
