//! Brute-force simulation of the population quantities, independent of the
//! quadrature oracle: only simulated draws, indicators and sorting.

use crate::dgp::{DgpSpec, Variant};
use crate::error::{Result, UqeError};
use crate::normal;
use crate::seeding::stream_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const DEFAULT_DRAWS: usize = 10_000_000;
const CHUNK: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McSettings {
    pub draws: usize,
    pub seed: u64,
}

impl Default for McSettings {
    fn default() -> Self {
        Self { draws: DEFAULT_DRAWS, seed: 20_240_917 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McOracleResult {
    pub beta: f64,
    pub rho: f64,
    pub tau: f64,
    pub y_tau: f64,
    pub f_y_tau: f64,
    pub pi_tau: f64,
    pub a_tau: f64,
    /// Monte Carlo standard errors with f_Y held fixed.
    pub pi_se: f64,
    pub a_se: f64,
}

/// One simulated unit: index, covariate part of the outcome, latent cost,
/// outcome noise and a uniform for truncated draws.
#[derive(Clone, Copy)]
struct Draw {
    mu: f64,
    x: f64,
    v: f64,
    e: f64,
    e1: f64,
    u: f64,
}

fn chunk_draws(variant: Variant, seed: u64, chunk: usize, len: usize) -> Vec<Draw> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &[chunk as u64]));
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            let x: f64 = match variant {
                Variant::Plain => 0.0,
                Variant::Covariate => StandardNormal.sample(&mut rng),
            };
            let v: f64 = StandardNormal.sample(&mut rng);
            let e: f64 = StandardNormal.sample(&mut rng);
            let e1: f64 = StandardNormal.sample(&mut rng);
            // open interval keeps the inverse cdf finite
            let u: f64 = (rng.random::<f64>() + 0.5 / (1u64 << 53) as f64).min(1.0 - 1e-16);
            Draw { mu: z + x, x, v, e, e1, u }
        })
        .collect()
}

fn chunks(draws: usize) -> Vec<(usize, usize)> {
    (0..draws.div_ceil(CHUNK)).map(|k| (k, CHUNK.min(draws - k * CHUNK))).collect()
}

/// Simulated Pi_tau, A_tau, y_tau and f_Y(y_tau) for each (beta, tau) at one
/// rho, rows ordered beta-major. Draws are shared across beta and tau.
pub fn mc_oracle(variant: Variant, rho: f64, betas: &[f64], taus: &[f64], settings: McSettings) -> Result<Vec<McOracleResult>> {
    for &beta in betas {
        DgpSpec { variant, beta, rho, seed: 0 }.validate()?;
    }
    for &tau in taus {
        crate::stats::check_tau(tau)?;
    }
    if settings.draws < 1000 {
        return Err(UqeError::InvalidInput("the simulation oracle needs at least 1000 draws".into()));
    }
    let n = settings.draws;
    let s = (1.0 - rho * rho).sqrt();
    let plan = chunks(n);
    let outcome = |d: &Draw, beta: f64| {
        let treated = d.v <= d.mu;
        d.x + rho * d.v + if treated { beta + s * d.e1 } else { s * d.e }
    };

    // sample quantiles of simulated outcomes
    let mut y_tau = vec![vec![0.0; taus.len()]; betas.len()];
    for (b, &beta) in betas.iter().enumerate() {
        let mut ys: Vec<f64> = plan
            .par_iter()
            .flat_map_iter(|&(k, len)| chunk_draws(variant, settings.seed, k, len).into_iter().map(move |d| (d, beta)))
            .map(|(d, beta)| outcome(&d, beta))
            .collect();
        for (t, &tau) in taus.iter().enumerate() {
            let k = ((tau * n as f64).ceil() as usize).clamp(1, n) - 1;
            let (_, v, _) = ys.select_nth_unstable_by(k, f64::total_cmp);
            y_tau[b][t] = *v;
        }
    }

    // density at each quantile: average conditional normal density of Y
    // given (mu, x, v)
    let nb = betas.len();
    let nt = taus.len();
    let sums: Vec<Vec<f64>> = plan
        .par_iter()
        .map(|&(k, len)| {
            let mut acc = vec![0.0; nb * nt * 5];
            for d in chunk_draws(variant, settings.seed, k, len) {
                let treated = d.v <= d.mu;
                let weight = normal::pdf(d.mu);
                // truncated cost draws on either side of the index
                let v_up = -normal::inverse_cdf(d.u * normal::cdf(-d.mu));
                let v_dn = normal::inverse_cdf(d.u * normal::cdf(d.mu));
                for (b, &beta) in betas.iter().enumerate() {
                    let mean = d.x + rho * d.v + if treated { beta } else { 0.0 };
                    // Pi: cost set to the index, common noise for both arms
                    let y0_m = d.x + rho * d.mu + s * d.e;
                    let y1_m = y0_m + beta;
                    // A: outcome of a unit with this index that stays out / takes part
                    let y0_d = d.x + rho * v_up + s * d.e;
                    let y1_d = d.x + beta + rho * v_dn + s * d.e;
                    for (t, &y) in y_tau[b].iter().enumerate() {
                        let at = (b * nt + t) * 5;
                        acc[at] += normal::pdf((y - mean) / s) / s;
                        let pi_term = ((y0_m <= y) as u8 as f64) - ((y1_m <= y) as u8 as f64);
                        acc[at + 1] += weight * pi_term;
                        acc[at + 2] += weight * pi_term * pi_term;
                        let a_term = ((y0_d <= y) as u8 as f64) - ((y1_d <= y) as u8 as f64);
                        acc[at + 3] += a_term;
                        acc[at + 4] += a_term * a_term;
                    }
                }
            }
            acc
        })
        .collect();
    let weight_sum: f64 = plan
        .par_iter()
        .map(|&(k, len)| chunk_draws(variant, settings.seed, k, len).iter().map(|d| normal::pdf(d.mu)).sum::<f64>())
        .collect::<Vec<_>>()
        .iter()
        .sum();
    let mut total = vec![0.0; nb * nt * 5];
    for part in &sums {
        for (t, v) in total.iter_mut().zip(part) {
            *t += v;
        }
    }
    let nf = n as f64;
    let mut out = Vec::with_capacity(nb * nt);
    for (b, &beta) in betas.iter().enumerate() {
        for (t, &tau) in taus.iter().enumerate() {
            let at = (b * nt + t) * 5;
            let f = total[at] / nf;
            let pi_f = total[at + 1] / weight_sum;
            let a_f = total[at + 3] / nf;
            // self-normalized weights: variance of sum w (x - mean) / sum w
            let mean_w = weight_sum / nf;
            let pi_var = (total[at + 2] / nf) / (mean_w * mean_w) - pi_f * pi_f;
            let a_var = total[at + 4] / nf - a_f * a_f;
            out.push(McOracleResult {
                beta,
                rho,
                tau,
                y_tau: y_tau[b][t],
                f_y_tau: f,
                pi_tau: pi_f / f,
                a_tau: a_f / f,
                pi_se: pi_var.max(0.0).sqrt() / nf.sqrt() / f,
                a_se: a_var.max(0.0).sqrt() / nf.sqrt() / f,
            });
        }
    }
    Ok(out)
}

/// Agreement rule between the two oracles: relative error at most 1%, or
/// absolute error at most 1e-3 near zero.
pub fn agrees(quadrature: f64, simulated: f64) -> bool {
    let diff = (quadrature - simulated).abs();
    diff <= 1e-3 || diff <= 0.01 * quadrature.abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::Oracle;

    #[test]
    fn agrees_with_quadrature_on_small_budget() {
        let settings = McSettings { draws: 400_000, seed: 3 };
        for (variant, rho) in [(Variant::Plain, 0.5), (Variant::Covariate, 0.0)] {
            let rows = mc_oracle(variant, rho, &[0.0, 1.0], &[0.25, 0.5], settings).unwrap();
            assert_eq!(rows.len(), 4);
            for r in rows {
                let q = Oracle::new(DgpSpec { variant, beta: r.beta, rho, seed: 0 }).unwrap().evaluate(r.tau).unwrap();
                assert!((r.y_tau - q.y_tau).abs() < 0.01, "{r:?} vs {q:?}");
                assert!((r.f_y_tau - q.f_y_tau).abs() < 0.005);
                assert!((r.pi_tau - q.pi_tau).abs() < 4.0 * r.pi_se + 0.005, "{r:?} vs {q:?}");
                assert!((r.a_tau - q.a_tau).abs() < 4.0 * r.a_se + 0.005, "{r:?} vs {q:?}");
                if r.beta == 0.0 {
                    assert_eq!(r.pi_tau, 0.0);
                }
            }
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let s = McSettings { draws: 50_000, seed: 9 };
        let a = mc_oracle(Variant::Plain, 0.25, &[1.0], &[0.5], s).unwrap();
        let b = mc_oracle(Variant::Plain, 0.25, &[1.0], &[0.5], s).unwrap();
        assert_eq!(a, b);
        assert!(mc_oracle(Variant::Plain, 1.0, &[1.0], &[0.5], s).is_err());
    }

    #[test]
    fn agreement_rule() {
        assert!(agrees(1.0, 1.009));
        assert!(!agrees(1.0, 1.02));
        assert!(agrees(0.0, 0.0009));
        assert!(!agrees(0.0, 0.002));
    }
}
