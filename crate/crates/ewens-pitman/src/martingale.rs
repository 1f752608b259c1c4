//! Martingale transform of the block-count vector: compensator
//! coefficients, the compensated vector process, its exact conditional
//! increment covariance, the increasing process, and the check that the
//! increasing process per unit population converges to the quadrature
//! covariance along simulated trajectories.

use crate::asymptotics::{gamma_matrix_quadrature, LimitProfile};
use crate::linalg::{Kahan, Matrix};
use crate::partition::{
    ModelParams, PartitionCounts, SeedSpec, Simulator, StepOutcome, TruncatedCounts,
};
use crate::specfun::{log_gamma, AccuracyPolicy};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// One-step conditional quantities at a truncated state: the new-block
/// probability, the join probabilities by size, and the derived gain and
/// mean-increment vectors for the tracked coordinates.
struct StepLaw {
    /// gain[r]: probability the coordinate-r count goes up (new block for
    /// r <= 1, a join into size r for r >= 2).
    gain: Vec<f64>,
    /// loss[r]: probability the coordinate-r count goes down (a join out
    /// of size r); zero for the total count.
    loss: Vec<f64>,
}

impl StepLaw {
    fn at(theta: f64, alpha: f64, items: u64, counts: &TruncatedCounts) -> Self {
        let d = counts.by_size.len();
        let denom = theta + items as f64;
        let new_block = (theta + alpha * counts.total as f64) / denom;
        let mut gain = vec![0.0; d + 1];
        let mut loss = vec![0.0; d + 1];
        gain[0] = new_block;
        for r in 1..=d {
            loss[r] = (r as f64 - alpha) * counts.by_size[r - 1] as f64 / denom;
            gain[r] = if r == 1 { new_block } else { loss[r - 1] };
        }
        Self { gain, loss }
    }

    fn mean(&self, r: usize) -> f64 {
        self.gain[r] - self.loss[r]
    }

    /// Conditional second moment E[Xi_r Xi_s] of the raw increment, from
    /// the case table: one step touches the total, at most one size it
    /// leaves, and at most one size it enters.
    fn second_moment(&self, r: usize, s: usize) -> f64 {
        let (r, s) = if r <= s { (r, s) } else { (s, r) };
        if r == s || (r, s) == (0, 1) {
            self.gain[r] + self.loss[r]
        } else if s == r + 1 && r >= 1 {
            -self.loss[r]
        } else {
            0.0
        }
    }

    fn covariance(&self, r: usize, s: usize) -> f64 {
        self.second_moment(r, s) - self.mean(r) * self.mean(s)
    }
}

/// Raw increment of the tracked count vector for one step outcome.
fn increment(outcome: StepOutcome, d: usize) -> Vec<f64> {
    let mut xi = vec![0.0; d + 1];
    match outcome {
        StepOutcome::NewBlock => {
            xi[0] = 1.0;
            if d >= 1 {
                xi[1] = 1.0;
            }
        }
        StepOutcome::Joined { previous_size } => {
            let g = previous_size as usize;
            if g <= d {
                xi[g] -= 1.0;
            }
            if g + 1 <= d {
                xi[g + 1] += 1.0;
            }
        }
    }
    xi
}

/// Compensated block-count vector along one trajectory.
///
/// The state starts at one seated item, where the count vector is
/// deterministic, and advances in lockstep with a sampler: snapshot the
/// truncated counts, step the sampler, then feed both here. The
/// compensator coefficients update multiplicatively, the compensated
/// vector and its offset accumulate in compensated summation, and the
/// increasing process gains the exact conditional covariance of each
/// compensated increment.
#[derive(Debug, Clone)]
pub struct MartingaleState {
    d: usize,
    h: u64,
    alpha: f64,
    theta: f64,
    /// Populated under the linearly growing concentration, where the
    /// normalization is tied to the horizon and steps beyond it are
    /// undefined.
    horizon: Option<u64>,
    a: Vec<f64>,
    offset: Vec<Kahan>,
    m: Vec<Kahan>,
    increasing: Vec<Kahan>,
}

impl MartingaleState {
    /// State after the first deterministic seat: unit coefficients, zero
    /// offset, and the compensated vector equal to the count vector.
    pub fn new(params: &ModelParams, n: u64, d: usize) -> Result<Self> {
        params.validate()?;
        if d < 1 {
            return Err(Error::Config(format!(
                "need at least the total and singleton counts, got d={d}"
            )));
        }
        if n < 1 {
            return Err(Error::Config("horizon must be positive".to_string()));
        }
        let mut m = vec![Kahan::new(0.0); d + 1];
        m[0] = Kahan::new(1.0);
        m[1] = Kahan::new(1.0);
        Ok(Self {
            d,
            h: 1,
            alpha: params.alpha,
            theta: params.theta_for(n),
            horizon: params.lambda().map(|_| n),
            a: vec![1.0; d + 1],
            offset: vec![Kahan::new(0.0); d + 1],
            m,
            increasing: vec![Kahan::new(0.0); (d + 1) * (d + 1)],
        })
    }

    /// Number of seated items the state has absorbed.
    pub fn items(&self) -> u64 {
        self.h
    }

    /// Largest tracked block size.
    pub fn dimension(&self) -> usize {
        self.d
    }

    /// Compensator coefficients a_r at the current step.
    pub fn coefficients(&self) -> &[f64] {
        &self.a
    }

    /// Accumulated compensator offset A_r.
    pub fn compensator(&self) -> Vec<f64> {
        self.offset.iter().map(|k| k.value()).collect()
    }

    /// The compensated vector M.
    pub fn martingale(&self) -> Vec<f64> {
        self.m.iter().map(|k| k.value()).collect()
    }

    /// The increasing process accumulated so far.
    pub fn increasing_process(&self) -> Matrix {
        Matrix::from_fn(self.d + 1, self.d + 1, |r, s| {
            self.increasing[r * (self.d + 1) + s].value()
        })
    }

    /// Absorbs one step: `pre` is the truncated count vector and
    /// `pre_items` the seated count before the step, `outcome` what the
    /// step did. Keeps M = a * K - A exact and adds the conditional
    /// covariance of the compensated increment to the increasing process.
    pub fn advance(
        &mut self,
        pre_items: u64,
        pre: &TruncatedCounts,
        outcome: StepOutcome,
    ) -> Result<()> {
        if pre_items != self.h {
            return Err(Error::State(format!(
                "state holds {} items but the pre-step counts hold {pre_items}",
                self.h
            )));
        }
        if pre.by_size.len() != self.d {
            return Err(Error::State(format!(
                "state tracks {} sizes but the counts track {}",
                self.d,
                pre.by_size.len()
            )));
        }
        if let Some(n) = self.horizon {
            if self.h >= n {
                return Err(Error::State(format!(
                    "normalization is tied to the horizon {n}; cannot step past it"
                )));
            }
        }
        let denom = self.theta + self.h as f64;
        // Validate every normalization ratio before touching the state, so
        // a failure leaves it usable.
        for r in 0..=self.d {
            if denom - r as f64 + self.alpha <= 0.0 {
                return Err(Error::State(format!(
                    "compensator normalization lost positivity at size {r}, {} items",
                    self.h
                )));
            }
        }
        let law = StepLaw::at(self.theta, self.alpha, self.h, pre);
        for r in 0..=self.d {
            self.a[r] /= (denom - r as f64 + self.alpha) / denom;
        }
        let xi = increment(outcome, self.d);
        for r in 0..=self.d {
            // The state-dependent part of the conditional mean lives in
            // the normalization; the offset absorbs only the remainder.
            let drift = if r == 0 {
                self.theta / denom
            } else {
                law.gain[r]
            };
            self.offset[r].add(self.a[r] * drift);
            self.m[r].add(self.a[r] * (xi[r] - law.mean(r)));
        }
        for r in 0..=self.d {
            for s in r..=self.d {
                let value = self.a[r] * self.a[s] * law.covariance(r, s);
                self.increasing[r * (self.d + 1) + s].add(value);
                if s != r {
                    self.increasing[s * (self.d + 1) + r].add(value);
                }
            }
        }
        self.h += 1;
        if cfg!(debug_assertions) {
            let mut post = pre.to_f64();
            for r in 0..=self.d {
                post[r] += xi[r];
            }
            for r in 0..=self.d {
                let direct = self.a[r] * post[r] - self.offset[r].value();
                let scale = (self.a[r] * post[r]).abs() + self.offset[r].value().abs();
                debug_assert!(
                    (self.m[r].value() - direct).abs() <= 1e-10 * scale.max(1.0),
                    "compensated vector drifted from its defining identity at size {r}"
                );
            }
        }
        Ok(())
    }

    /// Largest relative gap between the accumulated M and the identity
    /// a * K - A evaluated on the given post-step counts.
    pub fn identity_gap(&self, counts: &PartitionCounts) -> Result<f64> {
        if counts.num_items() != self.h {
            return Err(Error::State(format!(
                "state holds {} items but the counts hold {}",
                self.h,
                counts.num_items()
            )));
        }
        let k = counts.truncated(self.d).to_f64();
        let mut worst = 0.0f64;
        for r in 0..=self.d {
            let direct = self.a[r] * k[r] - self.offset[r].value();
            let scale = (self.a[r] * k[r]).abs() + self.offset[r].value().abs();
            worst = worst.max((self.m[r].value() - direct).abs() / scale.max(1.0));
        }
        Ok(worst)
    }
}

/// Coefficients a_r after h multiplicative updates, in closed form: an
/// exact product for short histories, a log-gamma combination otherwise.
/// The combination stays in log space until the final exponential because
/// the two gamma ratios overflow and underflow separately.
fn closed_form_coefficients(theta: f64, alpha: f64, h: u64, d: usize) -> Result<Vec<f64>> {
    let mut a = vec![1.0; d + 1];
    let hf = h as f64;
    for (r, coeff) in a.iter_mut().enumerate() {
        let base = theta + 1.0 - r as f64 + alpha;
        if base <= 0.0 {
            return Err(Error::State(format!(
                "compensator normalization lost positivity at size {r}, {h} items"
            )));
        }
        *coeff = if h <= 64 {
            let mut product = 1.0;
            for g in 1..=h {
                let gf = g as f64;
                product *= (theta + gf) / (theta + gf - r as f64 + alpha);
            }
            product
        } else {
            (log_gamma(theta + 1.0 + hf)? - log_gamma(theta + 1.0)? + log_gamma(base)?
                - log_gamma(base + hf)?)
            .exp()
        };
    }
    Ok(a)
}

/// Exact conditional covariance of the next compensated increment at a
/// partition state: entry (r,s) is a_r a_s Cov(Xi_r, Xi_s | state), with
/// the covariance assembled from the one-step case table and the
/// coefficients evaluated in closed form at the post-step index.
pub fn conditional_increment_cov(
    counts: &PartitionCounts,
    params: &ModelParams,
    n: u64,
    d: usize,
) -> Result<Matrix> {
    params.validate()?;
    if d < 1 {
        return Err(Error::Config(format!(
            "need at least the total and singleton counts, got d={d}"
        )));
    }
    let h = counts.num_items();
    if params.lambda().is_some() && h >= n {
        return Err(Error::State(format!(
            "normalization is tied to the horizon {n}; no step out of {h} items"
        )));
    }
    let theta = params.theta_for(n);
    let alpha = params.alpha;
    if h == 0 {
        // The first seat is deterministic.
        return Ok(Matrix::zeros(d + 1, d + 1));
    }
    let a = closed_form_coefficients(theta, alpha, h, d)?;
    let law = StepLaw::at(theta, alpha, h, &counts.truncated(d));
    Ok(Matrix::from_fn(d + 1, d + 1, |r, s| {
        a[r] * a[s] * law.covariance(r, s)
    }))
}

/// Convergence evidence from one trajectory seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LimitCheckRow {
    /// Seed that drove the trajectory.
    pub seed: u64,
    /// Largest entrywise relative deviation of the increasing process per
    /// unit population from the quadrature covariance.
    pub max_rel_deviation: f64,
    /// Largest deviation of the conditional increment covariance from the
    /// limit integrand over the checkpoint grid.
    pub sup_integrand_deviation: f64,
    /// Relative gap of the compensated-vector identity at the end.
    pub identity_gap: f64,
    /// Whether the relative deviation stayed within the tolerance.
    pub pass: bool,
}

/// Convergence report of the increasing process across seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LimitCheckReport {
    /// Population size of each trajectory.
    pub n: u64,
    /// Largest tracked block size.
    pub d: usize,
    /// Discount parameter.
    pub alpha: f64,
    /// Linear growth rate of the concentration.
    pub lambda: f64,
    /// Relative tolerance each seed was graded at.
    pub tolerance: f64,
    /// One row per seed, in input order.
    pub rows: Vec<LimitCheckRow>,
}

impl LimitCheckReport {
    /// Number of seeds within tolerance.
    pub fn pass_count(&self) -> usize {
        self.rows.iter().filter(|r| r.pass).count()
    }

    /// Whether every seed stayed within tolerance.
    pub fn all_pass(&self) -> bool {
        self.pass_count() == self.rows.len()
    }
}

fn run_limit_trajectory(
    params: &ModelParams,
    n: u64,
    d: usize,
    seed: u64,
    gamma_ref: &Matrix,
    profile: &LimitProfile,
    tolerance: f64,
) -> Result<LimitCheckRow> {
    let mut rng = SeedSpec::replicate(seed, 0).rng();
    let theta = params.theta_for(n);
    let mut sim = Simulator::new(params.alpha, theta)?;
    sim.advance(&mut rng)?;
    let mut mart = MartingaleState::new(params, n, d)?;
    let mut checkpoints: Vec<u64> = (1..=10)
        .map(|t| ((t as f64 / 10.0 * n as f64) as u64).clamp(1, n - 1))
        .collect();
    checkpoints.dedup();
    let mut next_checkpoint = 0;
    let mut sup_integrand = 0.0f64;
    for h in 1..n {
        if next_checkpoint < checkpoints.len() && h == checkpoints[next_checkpoint] {
            next_checkpoint += 1;
            let x = h as f64 / n as f64;
            let cond = conditional_increment_cov(sim.counts(), params, n, d)?;
            for i in 1..=d + 1 {
                for j in i..=d + 1 {
                    let dev = (cond[(i - 1, j - 1)] - profile.f(i, j, x)).abs();
                    if !dev.is_finite() {
                        return Err(Error::State(format!(
                            "conditional covariance lost finiteness at {h} items, entry ({i},{j})"
                        )));
                    }
                    sup_integrand = sup_integrand.max(dev);
                }
            }
        }
        let pre = sim.counts().truncated(d);
        let outcome = sim.advance(&mut rng)?;
        mart.advance(h, &pre, outcome)?;
    }
    let identity_gap = mart.identity_gap(sim.counts())?;
    let increasing = mart.increasing_process();
    let mut max_rel = 0.0f64;
    for r in 0..=d {
        for s in r..=d {
            let rate = increasing[(r, s)] / n as f64;
            max_rel = max_rel.max((rate - gamma_ref[(r, s)]).abs() / gamma_ref[(r, s)].abs());
        }
    }
    Ok(LimitCheckRow {
        seed,
        max_rel_deviation: max_rel,
        sup_integrand_deviation: sup_integrand,
        identity_gap,
        pass: max_rel <= tolerance,
    })
}

/// Grades the increasing process per unit population against the
/// quadrature covariance along one trajectory per seed, and the
/// conditional increment covariance against the limit integrand on a
/// ten-point checkpoint grid. Requires the linearly growing concentration;
/// trajectories run in parallel.
pub fn increasing_process_limit_check(
    params: &ModelParams,
    n: u64,
    d: usize,
    seeds: &[u64],
    tolerance: f64,
    policy: &AccuracyPolicy,
) -> Result<LimitCheckReport> {
    let lambda = params.lambda().ok_or_else(|| {
        Error::Config("convergence checks need the linearly growing concentration".to_string())
    })?;
    if n < 100 {
        return Err(Error::Config(format!(
            "population {n} too small for a meaningful convergence grade"
        )));
    }
    if !(tolerance > 0.0) {
        return Err(Error::Config("tolerance must be positive".to_string()));
    }
    let alpha = params.alpha;
    let gamma_ref = gamma_matrix_quadrature(d, alpha, lambda, policy)?;
    let profile = LimitProfile::new(alpha, lambda)?;
    let rows: Result<Vec<LimitCheckRow>> = seeds
        .par_iter()
        .map(|&seed| run_limit_trajectory(params, n, d, seed, &gamma_ref, &profile, tolerance))
        .collect();
    Ok(LimitCheckReport {
        n,
        d,
        alpha,
        lambda,
        tolerance,
        rows: rows?,
    })
}

/// Snapshots of the increasing process, scaled by the horizon, at the
/// given seated counts along one trajectory; feeds convergence plots
/// against the running integral of the limit integrand.
pub fn increasing_process_trace(
    params: &ModelParams,
    n: u64,
    d: usize,
    seed: u64,
    checkpoints: &[u64],
) -> Result<Vec<(u64, Matrix)>> {
    params.validate()?;
    let mut sorted: Vec<u64> = checkpoints.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.iter().any(|&h| h < 2 || h > n) {
        return Err(Error::Config(
            "checkpoints must lie between the second seat and the horizon".to_string(),
        ));
    }
    let mut rng = SeedSpec::replicate(seed, 0).rng();
    let mut sim = Simulator::new(params.alpha, params.theta_for(n))?;
    sim.advance(&mut rng)?;
    let mut mart = MartingaleState::new(params, n, d)?;
    let mut out = Vec::with_capacity(sorted.len());
    let mut next = 0;
    for h in 1..n {
        let pre = sim.counts().truncated(d);
        let outcome = sim.advance(&mut rng)?;
        mart.advance(h, &pre, outcome)?;
        if next < sorted.len() && h + 1 == sorted[next] {
            next += 1;
            let mut snapshot = mart.increasing_process();
            for r in 0..=d {
                for s in 0..=d {
                    snapshot[(r, s)] /= n as f64;
                }
            }
            out.push((h + 1, snapshot));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    const POLICY: AccuracyPolicy = AccuracyPolicy {
        abs_tol: 1e-12,
        rel_tol: 1e-12,
        max_series_terms: 10_000,
        quadrature_max_depth: 40,
    };

    fn drive(
        params: &ModelParams,
        n: u64,
        d: usize,
        seed: u64,
        steps: u64,
    ) -> (Simulator, MartingaleState) {
        let mut rng = SeedSpec::replicate(seed, 0).rng();
        let mut sim = Simulator::new(params.alpha, params.theta_for(n)).unwrap();
        sim.advance(&mut rng).unwrap();
        let mut mart = MartingaleState::new(params, n, d).unwrap();
        for h in 1..steps {
            let pre = sim.counts().truncated(d);
            let outcome = sim.advance(&mut rng).unwrap();
            mart.advance(h, &pre, outcome).unwrap();
        }
        (sim, mart)
    }

    #[test]
    fn initial_state_pins() {
        let params = ModelParams::new_linear(0.3, 1.0).unwrap();
        let mart = MartingaleState::new(&params, 100, 3).unwrap();
        assert_eq!(mart.items(), 1);
        assert_eq!(mart.coefficients(), &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(mart.martingale(), vec![1.0, 1.0, 0.0, 0.0]);
        assert_eq!(mart.compensator(), vec![0.0; 4]);
        let inc = mart.increasing_process();
        for r in 0..4 {
            for s in 0..4 {
                assert_eq!(inc[(r, s)], 0.0);
            }
        }
    }

    #[test]
    fn coefficients_match_closed_form() {
        // Zero discount at unit rate telescopes: a_1 at the horizon is
        // exactly 2 - 1/n, and a_0 stays at one.
        let n = 1000;
        let params = ModelParams::new_linear(0.0, 1.0).unwrap();
        let (_, mart) = drive(&params, n, 2, 7, n);
        assert_eq!(mart.items(), n);
        assert!((mart.coefficients()[0] - 1.0).abs() < 1e-12);
        assert!((mart.coefficients()[1] - (2.0 - 1.0 / n as f64)).abs() < 1e-12);
        // Fixed concentration, positive discount, against the log-gamma
        // closed form.
        let params = ModelParams::new_fixed(0.4, 7.5).unwrap();
        let h = 500u64;
        let (_, mart) = drive(&params, h, 3, 11, h);
        let closed = closed_form_coefficients(7.5, 0.4, h - 1, 3).unwrap();
        for r in 0..=3usize {
            let got = mart.coefficients()[r];
            assert!(
                ((got - closed[r]) / closed[r]).abs() < 1e-10,
                "r={r}: {got} vs {}",
                closed[r]
            );
        }
        // The total-count coefficient decreases once the discount is
        // positive.
        assert!(mart.coefficients()[0] < 1.0);
    }

    #[test]
    fn identity_holds_along_trajectory() {
        let params = ModelParams::new_linear(0.3, 1.0).unwrap();
        let n = 5000;
        let d = 3;
        let mut rng = SeedSpec::replicate(3, 0).rng();
        let mut sim = Simulator::new(params.alpha, params.theta_for(n)).unwrap();
        sim.advance(&mut rng).unwrap();
        let mut mart = MartingaleState::new(&params, n, d).unwrap();
        for h in 1..n {
            let pre = sim.counts().truncated(d);
            let outcome = sim.advance(&mut rng).unwrap();
            mart.advance(h, &pre, outcome).unwrap();
            if h % 500 == 0 || h == n - 1 {
                assert!(mart.identity_gap(sim.counts()).unwrap() <= 1e-10);
            }
        }
    }

    #[test]
    fn advance_rejects_bad_states() {
        let params = ModelParams::new_linear(0.3, 1.0).unwrap();
        let mut mart = MartingaleState::new(&params, 100, 2).unwrap();
        let counts = PartitionCounts::from_block_sizes(&[1]).unwrap();
        // Mismatched seated count.
        let err = mart
            .advance(5, &counts.truncated(2), StepOutcome::NewBlock)
            .unwrap_err();
        assert!(matches!(err, Error::State(_)));
        // Positivity failure under a small fixed concentration.
        let params = ModelParams::new_fixed(0.3, 0.4).unwrap();
        let mut mart = MartingaleState::new(&params, 100, 3).unwrap();
        let err = mart
            .advance(1, &counts.truncated(3), StepOutcome::NewBlock)
            .unwrap_err();
        assert!(matches!(err, Error::State(_)));
        // No step past the horizon when the concentration is tied to it.
        let params = ModelParams::new_linear(0.0, 1.0).unwrap();
        let n = 50;
        let (sim, mut mart) = drive(&params, n, 2, 9, n);
        let err = mart
            .advance(n, &sim.counts().truncated(2), StepOutcome::NewBlock)
            .unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn conditional_cov_pinned_values() {
        // One seated item, one singleton, zero discount, horizon two at
        // unit rate: entry (total, singletons) is (3/2)(2/3 - 2/9) = 2/3.
        let params = ModelParams::new_linear(0.0, 1.0).unwrap();
        let counts = PartitionCounts::from_block_sizes(&[1]).unwrap();
        let cov = conditional_increment_cov(&counts, &params, 2, 2).unwrap();
        assert!((cov[(0, 1)] - 2.0 / 3.0).abs() < 1e-14);
        for r in 0..3 {
            assert!(cov[(r, r)] >= 0.0);
        }
        // A lone block of size four leaves no tracked join source, so the
        // total count is uncorrelated with the empty size-two coordinate.
        let counts = PartitionCounts::from_block_sizes(&[4]).unwrap();
        let cov = conditional_increment_cov(&counts, &params, 100, 2).unwrap();
        assert_eq!(cov[(0, 2)], 0.0);
    }

    #[test]
    fn conditional_cov_matches_outcome_enumeration() {
        let mut rng = SeedSpec::auxiliary(99, 1).rng();
        let d = 4usize;
        let params_pool = [
            ModelParams::new_fixed(0.0, 10.0).unwrap(),
            ModelParams::new_fixed(0.3, 5.0).unwrap(),
            ModelParams::new_fixed(0.7, 10.0).unwrap(),
        ];
        for trial in 0..1000 {
            let blocks = rng.random_range(1..=6);
            let sizes: Vec<u64> = (0..blocks).map(|_| rng.random_range(1..=7)).collect();
            let counts = PartitionCounts::from_block_sizes(&sizes).unwrap();
            let params = &params_pool[trial % 3];
            let n = 1000;
            let table = conditional_increment_cov(&counts, params, n, d).unwrap();
            // Enumerate every outcome: a new block, or a join into each
            // size present.
            let theta = params.theta_for(n);
            let alpha = params.alpha;
            let h = counts.num_items();
            let denom = theta + h as f64;
            let mut outcomes: Vec<(f64, Vec<f64>)> = vec![(
                (theta + alpha * counts.num_blocks() as f64) / denom,
                increment(StepOutcome::NewBlock, d),
            )];
            for g in 1..=counts.max_size() {
                let k = counts.count_of_size(g);
                if k > 0 {
                    outcomes.push((
                        (g as f64 - alpha) * k as f64 / denom,
                        increment(StepOutcome::Joined { previous_size: g }, d),
                    ));
                }
            }
            let total: f64 = outcomes.iter().map(|(p, _)| p).sum();
            assert!((total - 1.0).abs() < 1e-12);
            let mut mean = vec![0.0; d + 1];
            for (p, xi) in &outcomes {
                for r in 0..=d {
                    mean[r] += p * xi[r];
                }
            }
            let a = closed_form_coefficients(theta, alpha, h, d).unwrap();
            for r in 0..=d {
                for s in 0..=d {
                    let mut cov = 0.0;
                    for (p, xi) in &outcomes {
                        cov += p * (xi[r] - mean[r]) * (xi[s] - mean[s]);
                    }
                    cov *= a[r] * a[s];
                    assert!(
                        (table[(r, s)] - cov).abs() <= 1e-12 * cov.abs().max(1.0),
                        "trial {trial} entry ({r},{s}): {} vs {cov}",
                        table[(r, s)]
                    );
                }
            }
        }
    }

    #[test]
    fn compensated_increments_center_at_zero() {
        // Replicated one-step increments grouped by exact pre-step state:
        // within each well-populated bin the mean compensated increment
        // must vanish to Monte Carlo accuracy.
        use std::collections::BTreeMap;
        let params = ModelParams::new_linear(0.4, 1.0).unwrap();
        let (n, h_star, d) = (60u64, 40u64, 2usize);
        let theta = params.theta_for(n);
        let a = closed_form_coefficients(theta, 0.4, h_star, d).unwrap();
        let mut bins: BTreeMap<(u64, Vec<u64>), (u64, Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for replicate in 0..10_000u64 {
            let mut rng = SeedSpec::replicate(17, replicate).rng();
            let mut sim = Simulator::new(params.alpha, theta).unwrap();
            for _ in 0..h_star {
                sim.advance(&mut rng).unwrap();
            }
            let pre = sim.counts().truncated(d);
            let law = StepLaw::at(theta, params.alpha, h_star, &pre);
            let outcome = sim.advance(&mut rng).unwrap();
            let xi = increment(outcome, d);
            let key = (pre.total, pre.by_size.clone());
            let entry = bins
                .entry(key)
                .or_insert_with(|| (0, vec![0.0; d + 1], vec![0.0; d + 1]));
            entry.0 += 1;
            for r in 0..=d {
                let delta = a[r] * (xi[r] - law.mean(r));
                entry.1[r] += delta;
                entry.2[r] += delta * delta;
            }
        }
        let mut checked = 0;
        for (count, sums, sq_sums) in bins.values() {
            if *count < 50 {
                continue;
            }
            checked += 1;
            let cf = *count as f64;
            for r in 0..=d {
                let mean = sums[r] / cf;
                let var = (sq_sums[r] / cf - mean * mean).max(0.0);
                let se = (var / cf).sqrt();
                assert!(
                    mean.abs() <= 4.0 * se + 1e-12,
                    "bin mean {mean} exceeds 4 standard errors {se} at size {r}"
                );
            }
        }
        assert!(checked >= 5, "only {checked} bins were populated enough");
    }

    #[test]
    fn coefficients_stay_under_lindeberg_envelope() {
        let params = ModelParams::new_linear(0.5, 1.0).unwrap();
        let (n, d) = (50_000u64, 3usize);
        let envelope = (2.0f64).powf(d as f64 - 0.5) * (1.0 + 1e-3);
        let mut rng = SeedSpec::replicate(23, 0).rng();
        let mut sim = Simulator::new(params.alpha, params.theta_for(n)).unwrap();
        sim.advance(&mut rng).unwrap();
        let mut mart = MartingaleState::new(&params, n, d).unwrap();
        for h in 1..n {
            let pre = sim.counts().truncated(d);
            let outcome = sim.advance(&mut rng).unwrap();
            mart.advance(h, &pre, outcome).unwrap();
            if h % 1000 == 0 {
                for &coeff in mart.coefficients() {
                    assert!(coeff > 0.0 && coeff <= envelope);
                    assert!(coeff.powi(4) <= envelope.powi(4));
                }
            }
        }
    }

    #[test]
    fn increasing_process_tracks_quadrature_covariance() {
        let params = ModelParams::new_linear(0.0, 1.0).unwrap();
        let report =
            increasing_process_limit_check(&params, 200_000, 1, &[11, 12, 13], 0.05, &POLICY)
                .unwrap();
        assert_eq!(report.rows.len(), 3);
        assert!(report.all_pass(), "{:?}", report.rows);
        for row in &report.rows {
            assert!(row.identity_gap <= 1e-10);
            assert!(row.sup_integrand_deviation < 0.05);
        }
        // Direct pins on the rate at the horizon for one seed.
        let trace =
            increasing_process_trace(&params, 200_000, 1, 11, &[200_000]).unwrap();
        let (_, rate) = &trace[0];
        let ln2 = std::f64::consts::LN_2;
        assert!((rate[(0, 0)] - (ln2 - 0.5)).abs() < 0.02 * 0.193);
        assert!((rate[(1, 1)] - 1.5).abs() < 0.02 * 1.5);
    }

    #[test]
    fn deviation_shrinks_with_population() {
        let params = ModelParams::new_linear(0.0, 1.0).unwrap();
        let seeds: Vec<u64> = (1..=10).collect();
        let small =
            increasing_process_limit_check(&params, 1000, 1, &seeds, 1.0, &POLICY).unwrap();
        let large =
            increasing_process_limit_check(&params, 100_000, 1, &seeds, 1.0, &POLICY).unwrap();
        let improved = small
            .rows
            .iter()
            .zip(&large.rows)
            .filter(|(s, l)| l.sup_integrand_deviation <= s.sup_integrand_deviation)
            .count();
        assert!(improved >= 8, "only {improved} of 10 seeds improved");
    }
}
