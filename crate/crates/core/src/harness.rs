//! Monte Carlo experiments: power of the no-effect test, coverage of the
//! confidence intervals and RMSE of the point estimate.

use crate::dgp::{generate_sample, true_uqe, DgpSpec, Variant};
use crate::error::{Result, UqeError};
use crate::estimator::{EstimationConfig, FirstStage};
use crate::normal;
use crate::seeding::stream_seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Cells with a larger share of failed replications are flagged.
pub const FAILURE_FLAG_SHARE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Power,
    Coverage,
    Rmse,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Power => "power",
            ExperimentKind::Coverage => "coverage",
            ExperimentKind::Rmse => "rmse",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub kind: ExperimentKind,
    pub variant: Variant,
    pub beta_grid: Vec<f64>,
    pub rho_grid: Vec<f64>,
    pub tau_grid: Vec<f64>,
    /// Sample sizes; replication seeds do not depend on n, so results
    /// across sizes are paired.
    pub sizes: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    pub config: EstimationConfig,
}

/// 25 equally spaced values in [-1, 1], endpoints included.
pub fn power_beta_grid() -> Vec<f64> {
    (0..25).map(|i| -1.0 + i as f64 / 12.0).collect()
}

pub const TABLE_BETAS: [f64; 7] = [-1.0, -0.5, -0.25, 0.0, 0.25, 0.5, 1.0];
pub const TABLE_RHOS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 0.9];

impl ExperimentPlan {
    pub fn new(kind: ExperimentKind) -> Self {
        let (beta_grid, tau_grid) = match kind {
            ExperimentKind::Power => (power_beta_grid(), vec![0.2, 0.3, 0.4, 0.5]),
            ExperimentKind::Coverage => (TABLE_BETAS.to_vec(), vec![0.1, 0.5]),
            ExperimentKind::Rmse => (vec![1.0], vec![0.5]),
        };
        let sizes = match kind {
            ExperimentKind::Rmse => vec![500, 4000],
            _ => vec![1000],
        };
        Self {
            kind,
            variant: Variant::Plain,
            beta_grid,
            rho_grid: TABLE_RHOS.to_vec(),
            tau_grid,
            sizes,
            replications: 1000,
            seed: 1,
            config: EstimationConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(UqeError::InvalidInput("replications must be at least 1".into()));
        }
        if self.beta_grid.is_empty() || self.rho_grid.is_empty() || self.tau_grid.is_empty() || self.sizes.is_empty() {
            return Err(UqeError::InvalidInput("experiment grids must be nonempty".into()));
        }
        for &tau in &self.tau_grid {
            self.config.with_tau(tau).validate()?;
        }
        for &beta in &self.beta_grid {
            for &rho in &self.rho_grid {
                DgpSpec { variant: self.variant, beta, rho, seed: 0 }.validate()?;
            }
        }
        for &n in &self.sizes {
            if n < 10 {
                return Err(UqeError::InvalidInput(format!("sample size {n} is below 10")));
            }
        }
        Ok(())
    }
}

/// Outcome of one replication at one tau.
#[derive(Debug, Clone, PartialEq)]
enum Outcome {
    Done { pi_hat: f64, covers: bool, statistic: f64, reject: bool },
    Failed(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub beta: f64,
    pub rho: f64,
    pub tau: f64,
    pub n: usize,
    pub replications: usize,
    /// Replications that produced an estimate.
    pub completed: usize,
    pub failures: BTreeMap<String, usize>,
    pub flagged: bool,
    /// Rejection rate (power), coverage rate (coverage) or NaN (rmse).
    pub rate: f64,
    /// sqrt(r (1 - r) / R) over completed replications.
    pub rate_se: f64,
    /// Population effect, when the experiment needs it.
    pub truth: Option<f64>,
    pub mean_estimate: f64,
    pub sd_estimate: f64,
    pub rmse: Option<f64>,
    /// Test statistics (power) or estimates (coverage, rmse), in
    /// replication order, failures omitted.
    #[serde(skip)]
    pub draws: Vec<f64>,
}

impl CellResult {
    pub fn failed(&self) -> usize {
        self.failures.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub plan: ExperimentPlan,
    pub cells: Vec<CellResult>,
}

impl ExperimentResult {
    pub fn cell(&self, beta: f64, rho: f64, tau: f64, n: usize) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.beta == beta && c.rho == rho && c.tau == tau && c.n == n)
    }

    pub fn flagged(&self) -> Vec<&CellResult> {
        self.cells.iter().filter(|c| c.flagged).collect()
    }

    /// Failure counts summed over cells, by kind.
    pub fn failure_tally(&self) -> BTreeMap<String, usize> {
        let mut tally = BTreeMap::new();
        for c in &self.cells {
            for (k, v) in &c.failures {
                *tally.entry(k.clone()).or_insert(0) += v;
            }
        }
        tally
    }
}

/// Seed of the dataset for one (beta, rho, replication) coordinate.
pub fn replication_seed(seed: u64, beta_idx: usize, rho_idx: usize, rep: usize) -> u64 {
    stream_seed(seed, &[beta_idx as u64, rho_idx as u64, rep as u64])
}

fn replicate(plan: &ExperimentPlan, truths: &[Option<f64>], b: usize, r: usize, n: usize, rep: usize) -> Vec<Outcome> {
    let spec = DgpSpec {
        variant: plan.variant,
        beta: plan.beta_grid[b],
        rho: plan.rho_grid[r],
        seed: replication_seed(plan.seed, b, r, rep),
    };
    let fail_all = |kind: &'static str| vec![Outcome::Failed(kind); plan.tau_grid.len()];
    let data = match generate_sample(&spec, n) {
        Ok(d) => d,
        Err(e) => return fail_all(e.kind()),
    };
    let first = match FirstStage::fit(&data, &plan.config) {
        Ok(f) => f,
        Err(e) => return fail_all(e.kind()),
    };
    plan.tau_grid
        .iter()
        .enumerate()
        .map(|(t, &tau)| {
            let config = plan.config.with_tau(tau);
            let result = first.at_tau(&data, &config).and_then(|stage| {
                let est = stage.estimate()?;
                let test = stage.no_effect_test()?;
                Ok((est, test))
            });
            match result {
                Ok((est, test)) => Outcome::Done {
                    pi_hat: est.pi_hat,
                    covers: truths[t].map(|v| est.covers(v)).unwrap_or(false),
                    statistic: test.statistic,
                    reject: test.reject_5pct,
                },
                Err(e) => Outcome::Failed(e.kind()),
            }
        })
        .collect()
}

/// Population effects per (beta, rho, tau), beta-major.
fn oracle_truths(plan: &ExperimentPlan) -> Result<Vec<f64>> {
    let cells: Vec<(f64, f64, f64)> = plan
        .beta_grid
        .iter()
        .flat_map(|&b| plan.rho_grid.iter().flat_map(move |&r| plan.tau_grid.iter().map(move |&t| (b, r, t))))
        .collect();
    cells
        .par_iter()
        .map(|&(beta, rho, tau)| Ok(true_uqe(&DgpSpec { variant: plan.variant, beta, rho, seed: 0 }, tau)?.pi_tau))
        .collect()
}

/// Runs every (beta, rho, n, replication) task and reduces per cell in a
/// fixed order, so results do not depend on the number of workers.
pub fn run(plan: &ExperimentPlan) -> Result<ExperimentResult> {
    plan.validate()?;
    let nt = plan.tau_grid.len();
    let truths: Vec<f64> = match plan.kind {
        ExperimentKind::Power => Vec::new(),
        _ => oracle_truths(plan)?,
    };
    let mut cells = Vec::new();
    for (b, &beta) in plan.beta_grid.iter().enumerate() {
        for (r, &rho) in plan.rho_grid.iter().enumerate() {
            let cell_truths: Vec<Option<f64>> = (0..nt)
                .map(|t| truths.get((b * plan.rho_grid.len() + r) * nt + t).copied())
                .collect();
            for &n in &plan.sizes {
                let outcomes: Vec<Vec<Outcome>> = (0..plan.replications)
                    .into_par_iter()
                    .map(|rep| replicate(plan, &cell_truths, b, r, n, rep))
                    .collect();
                for (t, &tau) in plan.tau_grid.iter().enumerate() {
                    cells.push(reduce(plan, beta, rho, tau, n, cell_truths[t], outcomes.iter().map(|o| &o[t])));
                }
            }
        }
    }
    Ok(ExperimentResult { plan: plan.clone(), cells })
}

fn reduce<'a>(
    plan: &ExperimentPlan,
    beta: f64,
    rho: f64,
    tau: f64,
    n: usize,
    truth: Option<f64>,
    outcomes: impl Iterator<Item = &'a Outcome>,
) -> CellResult {
    let mut failures = BTreeMap::new();
    let mut estimates = Vec::new();
    let mut statistics = Vec::new();
    let mut hits = 0usize;
    for o in outcomes {
        match o {
            Outcome::Done { pi_hat, covers, statistic, reject } => {
                estimates.push(*pi_hat);
                statistics.push(*statistic);
                let hit = match plan.kind {
                    ExperimentKind::Power => *reject,
                    _ => *covers,
                };
                hits += hit as usize;
            }
            Outcome::Failed(kind) => *failures.entry(kind.to_string()).or_insert(0) += 1,
        }
    }
    let completed = estimates.len();
    let failed: usize = failures.values().sum();
    let (rate, rate_se) = if completed == 0 || plan.kind == ExperimentKind::Rmse {
        (f64::NAN, f64::NAN)
    } else {
        let r = hits as f64 / completed as f64;
        (r, (r * (1.0 - r) / completed as f64).sqrt())
    };
    let m = completed as f64;
    let mean = estimates.iter().sum::<f64>() / m;
    let sd = if completed > 1 {
        (estimates.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
    } else {
        f64::NAN
    };
    let rmse = truth.filter(|_| completed > 0).map(|t| (estimates.iter().map(|v| (v - t).powi(2)).sum::<f64>() / m).sqrt());
    CellResult {
        beta,
        rho,
        tau,
        n,
        replications: plan.replications,
        completed,
        flagged: failed as f64 > FAILURE_FLAG_SHARE * plan.replications as f64,
        failures,
        rate,
        rate_se,
        truth,
        mean_estimate: mean,
        sd_estimate: sd,
        rmse,
        draws: if plan.kind == ExperimentKind::Power { statistics } else { estimates },
    }
}

pub fn run_power(plan: &ExperimentPlan) -> Result<ExperimentResult> {
    expect_kind(plan, ExperimentKind::Power)?;
    run(plan)
}

pub fn run_coverage(plan: &ExperimentPlan) -> Result<ExperimentResult> {
    expect_kind(plan, ExperimentKind::Coverage)?;
    run(plan)
}

pub fn run_rmse(plan: &ExperimentPlan) -> Result<ExperimentResult> {
    expect_kind(plan, ExperimentKind::Rmse)?;
    run(plan)
}

fn expect_kind(plan: &ExperimentPlan, kind: ExperimentKind) -> Result<()> {
    if plan.kind != kind {
        return Err(UqeError::InvalidInput(format!(
            "plan is a {} experiment, expected {}",
            plan.kind.name(),
            kind.name()
        )));
    }
    Ok(())
}

/// Kolmogorov-Smirnov distance between the empirical law of `draws` and N(0, 1).
pub fn ks_distance_normal(draws: &[f64]) -> f64 {
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal::cdf(x);
            (f - i as f64 / n).abs().max((i as f64 + 1.0) / n - f)
        })
        .fold(0.0, f64::max)
}

/// Rejection rates at `tau` for beta >= 0, ordered by beta, with standard
/// errors; `None` if a cell is missing.
pub fn power_curve(result: &ExperimentResult, rho: f64, tau: f64, n: usize) -> Vec<(f64, f64, f64)> {
    let mut pts: Vec<(f64, f64, f64)> = result
        .cells
        .iter()
        .filter(|c| c.rho == rho && c.tau == tau && c.n == n)
        .map(|c| (c.beta, c.rate, c.rate_se))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts
}

/// Whether rejection rates increase in |beta| on [0, 1], allowing each step
/// to dip by at most `slack` combined standard errors.
pub fn power_increasing(curve: &[(f64, f64, f64)], slack: f64) -> bool {
    let pts: Vec<_> = curve.iter().filter(|p| p.0 >= 0.0 && p.0 <= 1.0).collect();
    pts.windows(2).all(|w| {
        let (a, b) = (w[0], w[1]);
        b.1 - a.1 >= -slack * (a.2 * a.2 + b.2 * b.2).sqrt()
    }) && pts.len() >= 2
        && pts.last().unwrap().1 > pts.first().unwrap().1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: ExperimentKind) -> ExperimentPlan {
        let mut plan = ExperimentPlan::new(kind);
        plan.beta_grid = vec![0.0, 1.0];
        plan.rho_grid = vec![0.5];
        plan.tau_grid = vec![0.3, 0.5];
        plan.sizes = vec![300];
        plan.replications = 40;
        plan
    }

    #[test]
    fn default_plans() {
        let p = ExperimentPlan::new(ExperimentKind::Power);
        assert_eq!(p.beta_grid.len(), 25);
        assert!((p.beta_grid[0] + 1.0).abs() < 1e-15 && (p.beta_grid[24] - 1.0).abs() < 1e-15);
        assert!(p.beta_grid.contains(&0.0));
        assert!(p.validate().is_ok());
        let mut bad = p.clone();
        bad.replications = 0;
        assert!(bad.validate().is_err());
        bad = p;
        bad.tau_grid = vec![1.2];
        assert!(bad.validate().is_err());
    }

    #[test]
    fn runs_are_reproducible_and_well_formed() {
        let plan = small(ExperimentKind::Coverage);
        let a = run_coverage(&plan).unwrap();
        let b = run_coverage(&plan).unwrap();
        assert_eq!(a.cells.len(), 4);
        for (x, y) in a.cells.iter().zip(&b.cells) {
            assert_eq!(x.draws, y.draws);
            assert_eq!(x.rate.to_bits(), y.rate.to_bits());
        }
        for c in &a.cells {
            assert!((0.0..=1.0).contains(&c.rate));
            let r = c.rate;
            assert!((c.rate_se - (r * (1.0 - r) / c.completed as f64).sqrt()).abs() < 1e-15);
            assert_eq!(c.completed + c.failed(), c.replications);
            assert!(c.truth.is_some());
        }
        // single-threaded execution gives the identical result
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool.install(|| run_coverage(&plan)).unwrap();
        assert_eq!(a, c);
        assert!(run_power(&plan).is_err());
    }

    #[test]
    fn power_and_rmse_shapes() {
        let power = run_power(&small(ExperimentKind::Power)).unwrap();
        assert!(power.cells.iter().all(|c| c.truth.is_none()));
        let null = power.cell(0.0, 0.5, 0.5, 300).unwrap();
        let alt = power.cell(1.0, 0.5, 0.5, 300).unwrap();
        assert!(alt.rate > null.rate);
        let mut plan = small(ExperimentKind::Rmse);
        plan.beta_grid = vec![0.0];
        plan.tau_grid = vec![0.5];
        let rmse = run_rmse(&plan).unwrap();
        let c = &rmse.cells[0];
        assert_eq!(c.truth, Some(0.0));
        // zero truth: rmse^2 = sd^2 (m-1)/m + mean^2
        let m = c.completed as f64;
        let want = (c.sd_estimate.powi(2) * (m - 1.0) / m + c.mean_estimate.powi(2)).sqrt();
        assert!((c.rmse.unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn failures_are_tallied_not_fatal() {
        let mut plan = small(ExperimentKind::Power);
        plan.sizes = vec![12];
        plan.config.basis.degree = 1;
        plan.replications = 30;
        let res = run(&plan).unwrap();
        for c in &res.cells {
            assert_eq!(c.completed + c.failed(), 30);
        }
    }

    #[test]
    fn ks_distance() {
        let grid: Vec<f64> = (1..1000).map(|i| normal::inverse_cdf(i as f64 / 1000.0)).collect();
        assert!(ks_distance_normal(&grid) < 0.002);
        let shifted: Vec<f64> = grid.iter().map(|v| v + 1.0).collect();
        assert!(ks_distance_normal(&shifted) > 0.3);
    }

    #[test]
    fn monotonicity_check() {
        let curve = vec![(-0.5, 0.9, 0.01), (0.0, 0.05, 0.007), (0.5, 0.6, 0.015), (1.0, 0.99, 0.003)];
        assert!(power_increasing(&curve, 2.0));
        let dip = vec![(0.0, 0.05, 0.007), (0.5, 0.6, 0.015), (1.0, 0.4, 0.015)];
        assert!(!power_increasing(&dip, 2.0));
    }
}
