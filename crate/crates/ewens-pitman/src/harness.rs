//! Reproducible Monte Carlo experiments over the sampler: batched
//! replication with a streaming covariance accumulator, goodness-of-fit
//! grading of the scaled count vector against its limiting normal law,
//! bootstrap uncertainty for covariance entries, and a trajectory
//! diagnostic for the strong law of the count fractions.

use crate::asymptotics::{count_covariance_limit, mean_vector};
use crate::linalg::Matrix;
use crate::partition::{simulate, ModelParams, SeedSpec};
use crate::specfun::{log_gamma, AccuracyPolicy};
use crate::{Error, Result};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Report serialization format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    /// Comma-separated rows for plotting.
    Csv,
    /// Structured report.
    Json,
}

impl std::fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OutputFormat::Csv => write!(f, "csv"),
            OutputFormat::Json => write!(f, "json"),
        }
    }
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Config(format!(
                "unknown output format {other:?}, expected csv or json"
            ))),
        }
    }
}

/// Grading tolerances; the defaults are the acceptance thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Absolute bound on the constant-order mean residual.
    pub mean_residual_abs: f64,
    /// Sup-norm bound for count fractions against their limits.
    pub slln_sup: f64,
    /// Kolmogorov-Smirnov threshold factor; the cutoff is this over
    /// the square root of the sample size.
    pub ks_factor: f64,
    /// Relative slack for covariance entries against the limit matrix.
    pub cov_rel: f64,
    /// Bootstrap standard errors allowed on top of the relative slack.
    pub cov_se_multiplier: f64,
    /// Relative slack for the increasing process per unit population.
    pub martingale_rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            mean_residual_abs: 0.01,
            slln_sup: 0.02,
            ks_factor: 1.63,
            cov_rel: 0.10,
            cov_se_multiplier: 3.0,
            martingale_rel: 0.02,
        }
    }
}

/// One batched experiment: replicated trajectories of a single model at a
/// single population size, reduced to count vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Model parameters.
    pub params: ModelParams,
    /// Population size of every replicate.
    pub n: u64,
    /// Largest tracked block size.
    pub d: usize,
    /// Number of independent replicates.
    pub replicates: u64,
    /// Root of the replicate seed streams.
    pub master_seed: u64,
    /// Time fractions at which trajectories are snapshotted.
    pub checkpoints: Vec<f64>,
    /// Report format.
    pub format: OutputFormat,
    /// Grading tolerances.
    pub tolerances: Tolerances,
}

impl ExperimentConfig {
    /// Checks the admissible ranges; covariance estimation needs at least
    /// two replicates and checkpoints must be positive time fractions.
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.n == 0 {
            return Err(Error::Config("population size must be positive".into()));
        }
        if self.d == 0 {
            return Err(Error::Config(
                "need at least the total and singleton counts, got d=0".into(),
            ));
        }
        if self.replicates < 2 {
            return Err(Error::Config(format!(
                "covariance estimation needs at least 2 replicates, got {}",
                self.replicates
            )));
        }
        for &x in &self.checkpoints {
            if !(x > 0.0 && x <= 1.0) {
                return Err(Error::Config(format!(
                    "checkpoints must lie in (0, 1], got {x}"
                )));
            }
        }
        Ok(())
    }
}

/// Streaming mean and covariance of fixed-length vectors. Single-vector
/// pushes use the shifted-update form; partial accumulators merge with the
/// pairwise combination rule, so block-parallel reduction loses no
/// accuracy and stays deterministic when merge order is fixed.
#[derive(Debug, Clone)]
pub struct VectorAccumulator {
    dim: usize,
    count: u64,
    mean: Vec<f64>,
    comoment: Vec<f64>,
}

impl VectorAccumulator {
    /// Empty accumulator for vectors of the given length.
    pub fn new(dim: usize) -> Self {
        VectorAccumulator {
            dim,
            count: 0,
            mean: vec![0.0; dim],
            comoment: vec![0.0; dim * dim],
        }
    }

    /// Number of vectors absorbed.
    pub fn count(&self) -> u64 {
        self.count
    }

    /// Absorb one vector.
    pub fn push(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.dim, "vector length mismatch");
        self.count += 1;
        let cf = self.count as f64;
        let delta: Vec<f64> = (0..self.dim).map(|r| x[r] - self.mean[r]).collect();
        for r in 0..self.dim {
            self.mean[r] += delta[r] / cf;
        }
        for r in 0..self.dim {
            let post = x[r] - self.mean[r];
            for s in 0..self.dim {
                self.comoment[r * self.dim + s] += post * delta[s];
            }
        }
    }

    /// Combine two partial accumulators.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::Config("accumulator dimension mismatch".into()));
        }
        if self.count == 0 {
            return Ok(other.clone());
        }
        if other.count == 0 {
            return Ok(self.clone());
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        let mut merged = VectorAccumulator::new(self.dim);
        merged.count = self.count + other.count;
        let delta: Vec<f64> = (0..self.dim)
            .map(|r| other.mean[r] - self.mean[r])
            .collect();
        for r in 0..self.dim {
            merged.mean[r] = self.mean[r] + delta[r] * nb / n;
        }
        for r in 0..self.dim {
            for s in 0..self.dim {
                let idx = r * self.dim + s;
                merged.comoment[idx] = self.comoment[idx]
                    + other.comoment[idx]
                    + delta[r] * delta[s] * na * nb / n;
            }
        }
        Ok(merged)
    }

    /// Sample mean.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Sample covariance, symmetrized; needs at least two vectors.
    pub fn covariance(&self) -> Result<Matrix> {
        if self.count < 2 {
            return Err(Error::Config(format!(
                "covariance needs at least 2 vectors, got {}",
                self.count
            )));
        }
        let denom = (self.count - 1) as f64;
        let mut cov = Matrix::from_fn(self.dim, self.dim, |r, s| {
            self.comoment[r * self.dim + s] / denom
        });
        cov.symmetrize();
        Ok(cov)
    }
}

/// Reduction of one replicated batch: the sampled law of the count vector
/// at the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    /// Number of replicates absorbed.
    pub replicates: u64,
    /// Population size of each replicate.
    pub n: u64,
    /// Largest tracked block size.
    pub d: usize,
    /// Mean of the raw count vectors (K, K_1..K_d).
    pub empirical_mean: Vec<f64>,
    /// Sample covariance, by rows. Under the size-proportional regime this
    /// is the covariance of the scaled vectors (K - n m) / sqrt(n), the
    /// object with a limiting law; under a fixed concentration it is the
    /// covariance of the raw vectors.
    pub empirical_cov: Vec<Vec<f64>>,
    /// Standard errors of `empirical_mean`.
    pub standard_errors: Vec<f64>,
    /// Whether the per-replicate scaled vectors were retained.
    pub scaled_vectors_stored: bool,
    /// Scaled vectors, one per replicate, when retained.
    #[serde(skip)]
    pub scaled_vectors: Vec<Vec<f64>>,
}

impl BatchSummary {
    /// The covariance rows as a matrix.
    pub fn empirical_cov_matrix(&self) -> Matrix {
        Matrix::from_fn(self.d + 1, self.d + 1, |r, s| self.empirical_cov[r][s])
    }
}

/// Size of the replicate blocks reduced in parallel. The block partition
/// and the in-order merge of block accumulators are both fixed, so the
/// reduction is deterministic regardless of scheduling.
const ACCUMULATOR_BLOCK: usize = 256;

fn accumulate_in_blocks(dim: usize, vectors: &[Vec<f64>]) -> Result<VectorAccumulator> {
    let partials: Vec<VectorAccumulator> = vectors
        .par_chunks(ACCUMULATOR_BLOCK)
        .map(|block| {
            let mut acc = VectorAccumulator::new(dim);
            for v in block {
                acc.push(v);
            }
            acc
        })
        .collect();
    let mut total = VectorAccumulator::new(dim);
    for partial in &partials {
        total = total.merge(partial)?;
    }
    Ok(total)
}

/// Runs the replicates of a batched experiment and reduces them. Each
/// replicate draws its own seed stream from the master seed, trajectories
/// run in parallel, and the reduction is deterministic for a given
/// configuration.
pub fn run_batch(config: &ExperimentConfig) -> Result<BatchSummary> {
    config.validate()?;
    let d = config.d;
    let n = config.n;
    let raw: Result<Vec<Vec<f64>>> = (0..config.replicates)
        .into_par_iter()
        .map(|idx| {
            let seed = SeedSpec::replicate(config.master_seed, idx);
            let track = simulate(&config.params, n, d, &[1.0], &seed)?;
            Ok(track
                .last()
                .expect("one checkpoint was requested")
                .counts
                .to_f64())
        })
        .collect();
    let raw = raw?;
    let acc = accumulate_in_blocks(d + 1, &raw)?;
    let raw_cov = acc.covariance()?;
    let replicates_f = config.replicates as f64;
    let standard_errors: Vec<f64> = (0..=d)
        .map(|r| (raw_cov[(r, r)] / replicates_f).sqrt())
        .collect();
    // Centering by a constant and scaling by 1/sqrt(n) turn the raw
    // covariance into the scaled covariance exactly.
    let (cov, scaled_vectors, stored) = match config.params.lambda() {
        Some(lambda) => {
            let limit = mean_vector(d, config.params.alpha, lambda)?;
            let nf = n as f64;
            let sqrt_n = nf.sqrt();
            let scaled: Vec<Vec<f64>> = raw
                .iter()
                .map(|v| (0..=d).map(|r| (v[r] - nf * limit[r]) / sqrt_n).collect())
                .collect();
            let cov = Matrix::from_fn(d + 1, d + 1, |r, s| raw_cov[(r, s)] / nf);
            (cov, scaled, true)
        }
        None => (raw_cov, Vec::new(), false),
    };
    let min_eig = cov.min_sym_eigenvalue()?;
    if min_eig < -1e-9 {
        return Err(Error::Report(format!(
            "sample covariance lost positive semidefiniteness: min eigenvalue {min_eig}"
        )));
    }
    Ok(BatchSummary {
        replicates: config.replicates,
        n,
        d,
        empirical_mean: acc.mean().to_vec(),
        empirical_cov: (0..=d)
            .map(|r| (0..=d).map(|s| cov[(r, s)]).collect())
            .collect(),
        standard_errors,
        scaled_vectors_stored: stored,
        scaled_vectors,
    })
}

/// Standard normal distribution function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Chi-square distribution function with integer degrees of freedom,
/// assembled by the upward recurrence of the regularized incomplete gamma
/// function from its half-integer and integer base cases.
pub fn chi_square_cdf(dof: u32, x: f64) -> Result<f64> {
    if dof == 0 {
        return Err(Error::Config("degrees of freedom must be positive".into()));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    let y = 0.5 * x;
    let (mut a, mut p, steps) = if dof % 2 == 1 {
        (0.5, libm::erf(y.sqrt()), (dof - 1) / 2)
    } else {
        (1.0, -(-y).exp_m1(), dof / 2 - 1)
    };
    for _ in 0..steps {
        p -= (a * y.ln() - y - log_gamma(a + 1.0)?).exp();
        a += 1.0;
    }
    Ok(p.clamp(0.0, 1.0))
}

/// Two-sided Kolmogorov-Smirnov statistic of a sample against a
/// distribution function.
pub fn ks_statistic(values: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("sample contains NaN"));
    let n = sorted.len() as f64;
    let mut worst = 0.0f64;
    for (i, &v) in sorted.iter().enumerate() {
        let f = cdf(v);
        worst = worst
            .max(((i + 1) as f64 / n - f).abs())
            .max((f - i as f64 / n).abs());
    }
    worst
}

/// Outcome of one goodness-of-fit grading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofResult {
    /// Statistic family.
    pub statistic_name: String,
    /// Distribution the sample was graded against.
    pub reference: String,
    /// Observed statistic.
    pub statistic_value: f64,
    /// Number of sample points.
    pub sample_size: u64,
    /// Pass cutoff for the statistic.
    pub threshold: f64,
    /// Whether the statistic stayed below the cutoff.
    pub pass: bool,
}

/// Grades one component of the stored scaled vectors against its limiting
/// centered normal law, standardized by the limit covariance.
pub fn marginal_gof(
    summary: &BatchSummary,
    component: usize,
    sigma: &Matrix,
    ks_factor: f64,
) -> Result<GofResult> {
    if !summary.scaled_vectors_stored {
        return Err(Error::Config(
            "normality grading needs stored scaled vectors from the size-proportional regime"
                .into(),
        ));
    }
    if summary.replicates < 500 {
        return Err(Error::Config(format!(
            "normality grading needs at least 500 replicates, got {}",
            summary.replicates
        )));
    }
    if component > summary.d {
        return Err(Error::Config(format!(
            "component {component} outside the tracked range 0..={}",
            summary.d
        )));
    }
    let variance = sigma[(component, component)];
    if !(variance > 1e-12) {
        return Err(Error::Config(format!(
            "degenerate limit variance {variance} for component {component}"
        )));
    }
    let sd = variance.sqrt();
    let standardized: Vec<f64> = summary
        .scaled_vectors
        .iter()
        .map(|v| v[component] / sd)
        .collect();
    let statistic_value = ks_statistic(&standardized, normal_cdf);
    let threshold = ks_factor / (summary.replicates as f64).sqrt();
    Ok(GofResult {
        statistic_name: "KS".to_string(),
        reference: "standard normal".to_string(),
        statistic_value,
        sample_size: summary.replicates,
        threshold,
        pass: statistic_value < threshold,
    })
}

/// Grades the squared Mahalanobis norms of the stored scaled vectors, in
/// the metric of the limit covariance, against the chi-square law whose
/// degrees of freedom match the vector length.
pub fn joint_gof(summary: &BatchSummary, sigma: &Matrix, ks_factor: f64) -> Result<GofResult> {
    if !summary.scaled_vectors_stored {
        return Err(Error::Config(
            "normality grading needs stored scaled vectors from the size-proportional regime"
                .into(),
        ));
    }
    if summary.replicates < 500 {
        return Err(Error::Config(format!(
            "normality grading needs at least 500 replicates, got {}",
            summary.replicates
        )));
    }
    let dof = (summary.d + 1) as u32;
    let squared_norms: Result<Vec<f64>> = summary
        .scaled_vectors
        .iter()
        .map(|v| {
            let w = sigma.solve_spd(v)?;
            Ok(v.iter().zip(&w).map(|(a, b)| a * b).sum())
        })
        .collect();
    let squared_norms = squared_norms?;
    let statistic_value = ks_statistic(&squared_norms, |q| {
        chi_square_cdf(dof, q).expect("positive degrees of freedom")
    });
    let threshold = ks_factor / (summary.replicates as f64).sqrt();
    Ok(GofResult {
        statistic_name: "KS".to_string(),
        reference: format!("chi-square({dof})"),
        statistic_value,
        sample_size: summary.replicates,
        threshold,
        pass: statistic_value < threshold,
    })
}

/// Limit covariance of the scaled count vector for a configuration in the
/// size-proportional regime, from the fluctuation system.
pub fn limit_covariance(config: &ExperimentConfig, policy: &AccuracyPolicy) -> Result<Matrix> {
    let lambda = config.params.lambda().ok_or_else(|| {
        Error::Config("the limit covariance needs the size-proportional regime".into())
    })?;
    count_covariance_limit(config.d, config.params.alpha, lambda, policy)
}

/// Runs a batch and grades one component of the scaled count vector
/// against its limiting normal law.
pub fn clt_test(
    config: &ExperimentConfig,
    component: usize,
    policy: &AccuracyPolicy,
) -> Result<GofResult> {
    let sigma = limit_covariance(config, policy)?;
    let summary = run_batch(config)?;
    marginal_gof(&summary, component, &sigma, config.tolerances.ks_factor)
}

/// Runs a batch and grades the joint law of the scaled count vector
/// through its Mahalanobis norms.
pub fn mahalanobis_test(config: &ExperimentConfig, policy: &AccuracyPolicy) -> Result<GofResult> {
    let sigma = limit_covariance(config, policy)?;
    let summary = run_batch(config)?;
    joint_gof(&summary, &sigma, config.tolerances.ks_factor)
}

/// Bootstrap standard errors for the entries of the stored scaled-vector
/// covariance: resamples replicates with replacement and reports the
/// spread of the recomputed covariance entries. Deterministic given the
/// master seed; the resampling stream is disjoint from every replicate.
pub fn bootstrap_cov_se(
    summary: &BatchSummary,
    resamples: u32,
    master_seed: u64,
) -> Result<Matrix> {
    if !summary.scaled_vectors_stored {
        return Err(Error::Config(
            "bootstrap needs stored scaled vectors from the size-proportional regime".into(),
        ));
    }
    if resamples < 2 {
        return Err(Error::Config(format!(
            "bootstrap needs at least 2 resamples, got {resamples}"
        )));
    }
    let vectors = &summary.scaled_vectors;
    let r = vectors.len();
    if r < 2 {
        return Err(Error::Config(format!(
            "bootstrap needs at least 2 replicates, got {r}"
        )));
    }
    let dim = summary.d + 1;
    let mut rng = SeedSpec::auxiliary(master_seed, 1).rng();
    let mut sums = Matrix::zeros(dim, dim);
    let mut square_sums = Matrix::zeros(dim, dim);
    for _ in 0..resamples {
        let mut acc = VectorAccumulator::new(dim);
        for _ in 0..r {
            acc.push(&vectors[rng.random_range(0..r)]);
        }
        let cov = acc.covariance()?;
        for i in 0..dim {
            for j in 0..dim {
                sums[(i, j)] += cov[(i, j)];
                square_sums[(i, j)] += cov[(i, j)] * cov[(i, j)];
            }
        }
    }
    let b = resamples as f64;
    Ok(Matrix::from_fn(dim, dim, |i, j| {
        let mean = sums[(i, j)] / b;
        ((square_sums[(i, j)] / b - mean * mean).max(0.0) * b / (b - 1.0)).sqrt()
    }))
}

/// Sup-deviation of one count fraction from its limit along one
/// trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SllnRow {
    /// Population size of the trajectory.
    pub n: u64,
    /// Count coordinate: zero for the total, r for blocks of size r.
    pub component: usize,
    /// Sup over the checkpoint grid of the absolute deviation of the
    /// count fraction from its limit.
    pub sup_deviation: f64,
}

/// Strong-law diagnostic across a grid of population sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SllnReport {
    /// Discount parameter.
    pub alpha: f64,
    /// Linear growth rate of the concentration.
    pub lambda: f64,
    /// Largest tracked block size.
    pub d: usize,
    /// Time fractions at which every trajectory was snapshotted.
    pub checkpoints: Vec<f64>,
    /// One row per population size per component, grid-major.
    pub rows: Vec<SllnRow>,
}

impl SllnReport {
    /// Sup-deviations of one component along the population grid.
    pub fn deviations_for(&self, component: usize) -> Vec<(u64, f64)> {
        self.rows
            .iter()
            .filter(|row| row.component == component)
            .map(|row| (row.n, row.sup_deviation))
            .collect()
    }

    /// Number of consecutive population pairs whose sup-deviation did not
    /// increase, and the number of pairs, for one component.
    pub fn improving_pairs(&self, component: usize) -> (usize, usize) {
        let devs = self.deviations_for(component);
        let improved = devs
            .windows(2)
            .filter(|pair| pair[1].1 <= pair[0].1)
            .count();
        (improved, devs.len().saturating_sub(1))
    }
}

/// Runs one trajectory per population size and reports the sup-deviation
/// of every tracked count fraction from its limit over the checkpoint
/// grid. Each population size draws its own seed stream.
pub fn slln_diagnostic(
    params: &ModelParams,
    d: usize,
    n_grid: &[u64],
    checkpoints: &[f64],
    master_seed: u64,
) -> Result<SllnReport> {
    params.validate()?;
    let lambda = params.lambda().ok_or_else(|| {
        Error::Config("the strong-law diagnostic needs the size-proportional regime".into())
    })?;
    if n_grid.is_empty() || n_grid.windows(2).any(|pair| pair[1] <= pair[0]) {
        return Err(Error::Config(
            "population grid must be nonempty and strictly increasing".into(),
        ));
    }
    if checkpoints.is_empty() {
        return Err(Error::Config("checkpoint grid must be nonempty".into()));
    }
    for &x in checkpoints {
        if !(x > 0.0 && x <= 1.0) {
            return Err(Error::Config(format!(
                "checkpoints must lie in (0, 1], got {x}"
            )));
        }
    }
    let profile = crate::asymptotics::LimitProfile::new(params.alpha, lambda)?;
    let mut rows = Vec::with_capacity(n_grid.len() * (d + 1));
    for (index, &n) in n_grid.iter().enumerate() {
        let seed = SeedSpec::replicate(master_seed, index as u64);
        let track = simulate(params, n, d, checkpoints, &seed)?;
        for component in 0..=d {
            let mut sup = 0.0f64;
            for point in &track {
                let fraction = point.counts.to_f64()[component] / n as f64;
                sup = sup.max((fraction - profile.m(component as u32, point.fraction)).abs());
            }
            rows.push(SllnRow {
                n,
                component,
                sup_deviation: sup,
            });
        }
    }
    Ok(SllnReport {
        alpha: params.alpha,
        lambda,
        d,
        checkpoints: checkpoints.to_vec(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const POLICY: AccuracyPolicy = AccuracyPolicy {
        abs_tol: 1e-12,
        rel_tol: 1e-12,
        max_series_terms: 10_000,
        quadrature_max_depth: 40,
    };

    fn base_config(replicates: u64, n: u64, d: usize) -> ExperimentConfig {
        ExperimentConfig {
            params: ModelParams::new_linear(0.0, 1.0).unwrap(),
            n,
            d,
            replicates,
            master_seed: 42,
            checkpoints: vec![1.0],
            format: OutputFormat::Json,
            tolerances: Tolerances::default(),
        }
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let mut config = base_config(1, 100, 2);
        assert!(config.validate().is_err());
        config.replicates = 2;
        config.checkpoints = vec![0.0];
        assert!(config.validate().is_err());
        config.checkpoints = vec![1.5];
        assert!(config.validate().is_err());
        config.checkpoints = vec![0.5, 1.0];
        config.validate().unwrap();
    }

    #[test]
    fn one_pass_accumulator_matches_two_pass() {
        let mut rng = SeedSpec::auxiliary(7, 2).rng();
        let dim = 4;
        let vectors: Vec<Vec<f64>> = (0..1000)
            .map(|_| {
                (0..dim)
                    .map(|_| rng.random_range(-3.0..3.0) + 100.0)
                    .collect()
            })
            .collect();
        let acc = accumulate_in_blocks(dim, &vectors).unwrap();
        let n = vectors.len() as f64;
        let mut mean = vec![0.0; dim];
        for v in &vectors {
            for r in 0..dim {
                mean[r] += v[r] / n;
            }
        }
        let mut cov = Matrix::zeros(dim, dim);
        for v in &vectors {
            for r in 0..dim {
                for s in 0..dim {
                    cov[(r, s)] += (v[r] - mean[r]) * (v[s] - mean[s]) / (n - 1.0);
                }
            }
        }
        let one_pass = acc.covariance().unwrap();
        for r in 0..dim {
            assert!((acc.mean()[r] - mean[r]).abs() <= 1e-12 * mean[r].abs());
            for s in 0..dim {
                assert!(
                    (one_pass[(r, s)] - cov[(r, s)]).abs() <= 1e-12 * cov[(r, s)].abs().max(1.0)
                );
            }
        }
        // Different block partitions agree to rounding.
        let mut sequential = VectorAccumulator::new(dim);
        for v in &vectors {
            sequential.push(v);
        }
        let seq_cov = sequential.covariance().unwrap();
        for r in 0..dim {
            for s in 0..dim {
                assert!((one_pass[(r, s)] - seq_cov[(r, s)]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn batch_reduction_is_deterministic() {
        let config = base_config(64, 500, 2);
        let first = run_batch(&config).unwrap();
        let second = run_batch(&config).unwrap();
        assert_eq!(
            serde_json::to_string(&first).unwrap(),
            serde_json::to_string(&second).unwrap()
        );
    }

    #[test]
    fn batch_means_and_covariance_match_limits() {
        let config = base_config(1000, 10_000, 2);
        let summary = run_batch(&config).unwrap();
        let nf = config.n as f64;
        // Limit fractions at zero discount, unit rate: log 2 and 1/2.
        let mean_total = summary.empirical_mean[0] / nf;
        let se_total = summary.standard_errors[0] / nf;
        assert!(
            (mean_total - std::f64::consts::LN_2).abs() <= 3.0 * se_total,
            "total fraction {mean_total} vs log 2, SE {se_total}"
        );
        let mean_singletons = summary.empirical_mean[1] / nf;
        let se_singletons = summary.standard_errors[1] / nf;
        assert!(
            (mean_singletons - 0.5).abs() <= 3.0 * se_singletons,
            "singleton fraction {mean_singletons} vs 1/2, SE {se_singletons}"
        );
        // Scaled singleton variance against its limit, within bootstrap
        // uncertainty.
        assert!(summary.scaled_vectors_stored);
        let se = bootstrap_cov_se(&summary, 200, config.master_seed).unwrap();
        let var_singletons = summary.empirical_cov[1][1];
        assert!(
            (var_singletons - 0.375).abs() <= 3.0 * se[(1, 1)],
            "scaled singleton variance {var_singletons} vs 3/8, bootstrap SE {}",
            se[(1, 1)]
        );
        let min_eig = summary
            .empirical_cov_matrix()
            .min_sym_eigenvalue()
            .unwrap();
        assert!(min_eig >= -1e-9);
    }

    #[test]
    fn normal_cdf_pins() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.959964) - 0.975).abs() < 1e-6);
        for &z in &[-2.5, -0.3, 0.9, 3.1] {
            assert!((normal_cdf(z) + normal_cdf(-z) - 1.0).abs() < 1e-14);
        }
        assert!(normal_cdf(-1.0) < normal_cdf(-0.5));
    }

    #[test]
    fn chi_square_cdf_matches_density_quadrature() {
        use crate::specfun::integrate;
        for dof in 1..=6u32 {
            for &x in &[0.5f64, 2.0, 5.0] {
                let a = dof as f64 / 2.0;
                let norm = (a * std::f64::consts::LN_2 + log_gamma(a).unwrap()).exp();
                // Density integrated through t = u^2, which removes the
                // square-root singularity at zero for odd dof.
                let transformed =
                    |u: f64| 2.0 * u.powi(dof as i32 - 1) * (-u * u / 2.0).exp() / norm;
                let reference = integrate(transformed, 0.0, x.sqrt(), &POLICY).unwrap();
                let got = chi_square_cdf(dof, x).unwrap();
                assert!(
                    (got - reference).abs() < 1e-10,
                    "dof={dof} x={x}: {got} vs {reference}"
                );
            }
        }
        assert_eq!(chi_square_cdf(3, -1.0).unwrap(), 0.0);
        assert!(chi_square_cdf(0, 1.0).is_err());
    }

    #[test]
    fn ks_statistic_hand_value() {
        let values = [0.1, 0.3, 0.5, 0.7, 0.9];
        let stat = ks_statistic(&values, |x| x);
        assert!((stat - 0.1).abs() < 1e-15);
        // A gross shift is caught.
        let shifted = ks_statistic(&values, |x| normal_cdf(x - 5.0));
        assert!(shifted > 0.9);
    }

    #[test]
    fn marginal_and_joint_gof_pass_at_desk_scale() {
        let config = base_config(600, 10_000, 1);
        let sigma = limit_covariance(&config, &POLICY).unwrap();
        let summary = run_batch(&config).unwrap();
        for component in 0..=1 {
            let result =
                marginal_gof(&summary, component, &sigma, config.tolerances.ks_factor).unwrap();
            assert!(
                result.pass,
                "component {component}: {} vs {}",
                result.statistic_value, result.threshold
            );
        }
        let joint = joint_gof(&summary, &sigma, config.tolerances.ks_factor).unwrap();
        assert!(
            joint.pass,
            "joint: {} vs {}",
            joint.statistic_value, joint.threshold
        );
        // Negative control: the same data against a shifted unit normal
        // must fail decisively.
        let sd = sigma[(0, 0)].sqrt();
        let standardized: Vec<f64> = summary.scaled_vectors.iter().map(|v| v[0] / sd).collect();
        let shifted = ks_statistic(&standardized, |x| normal_cdf(x - 0.5));
        assert!(shifted >= joint.threshold, "control statistic {shifted}");
    }

    #[test]
    fn gof_preconditions_enforced() {
        let config = base_config(10, 200, 1);
        let sigma = limit_covariance(&config, &POLICY).unwrap();
        let summary = run_batch(&config).unwrap();
        assert!(matches!(
            marginal_gof(&summary, 0, &sigma, 1.63),
            Err(Error::Config(_))
        ));
        let mut fixed_config = base_config(600, 200, 1);
        fixed_config.params = ModelParams::new_fixed(0.0, 5.0).unwrap();
        let fixed_summary = run_batch(&fixed_config).unwrap();
        assert!(!fixed_summary.scaled_vectors_stored);
        assert!(matches!(
            marginal_gof(&fixed_summary, 0, &sigma, 1.63),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn slln_deviations_shrink_and_match_limit() {
        let params = ModelParams::new_linear(0.0, 1.0).unwrap();
        let checkpoints: Vec<f64> = (1..=10).map(|t| t as f64 / 10.0).collect();
        let report =
            slln_diagnostic(&params, 2, &[1000, 10_000, 100_000], &checkpoints, 5).unwrap();
        assert_eq!(report.rows.len(), 9);
        // The total count is the least noisy coordinate; its deviation
        // must shrink along the full grid.
        let (improved, pairs) = report.improving_pairs(0);
        assert_eq!(pairs, 2);
        assert_eq!(improved, 2, "{:?}", report.deviations_for(0));
        for component in 1..=2 {
            let (improved, _) = report.improving_pairs(component);
            assert!(improved >= 1, "{:?}", report.deviations_for(component));
        }
        // Size-two fraction at the horizon against its limit 1/8.
        let final_dev = report
            .rows
            .iter()
            .find(|row| row.n == 100_000 && row.component == 2)
            .unwrap();
        assert!(final_dev.sup_deviation < 0.01);
    }

    #[test]
    fn slln_requires_linear_regime() {
        let params = ModelParams::new_fixed(0.0, 5.0).unwrap();
        assert!(matches!(
            slln_diagnostic(&params, 2, &[1000], &[1.0], 5),
            Err(Error::Config(_))
        ));
    }
}
