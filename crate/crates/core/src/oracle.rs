//! Monte-Carlo verification of the analytic bucket and truck moments.
//!
//! The oracle shares the geometry (sampled locations, volume fractions) and
//! the block covariance with the estimator but replaces the moment algebra
//! with explicit sampling: draw a location, draw a joint grade realization
//! for its intersecting blocks through a matrix square root, and dot with the
//! volume fractions. Truck draws share one grade realization across all the
//! truck's buckets, which is what carries the spatial correlation.
//!
//! Samples are split across a fixed number of partitions with seeds derived
//! from the master seed, and the per-partition moment accumulators are
//! combined in partition order, so results are identical for any worker
//! count.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::block_model::{BlockModel, CovarianceModel};
use crate::bucket::{collect_bucket_samples, BucketSamples};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::io::DigEvent;

const PARTITIONS: usize = 64;
const MIN_SAMPLES: usize = 10_000;

/// Empirical moments with their standard errors.
#[derive(Debug, Clone, Copy)]
pub struct OracleEstimate {
    pub mean: f64,
    pub std: f64,
    pub se_mean: f64,
    pub se_std: f64,
    pub n_samples: usize,
}

/// Monte-Carlo moments of one bucket's excavated material.
pub fn mc_oracle_bucket(
    dig: &DigEvent,
    model: &BlockModel,
    cov: &CovarianceModel,
    config: &PipelineConfig,
    n_samples: usize,
    seed: u64,
) -> Result<OracleEstimate> {
    let samples = collect_bucket_samples(dig, model, cov, config)?;
    let draws = prepare_draws(std::slice::from_ref(&samples), Some(samples.weights()), model, cov)?;
    run_sampler(&draws, n_samples, seed)
}

/// Monte-Carlo moments of a truck load built from the given dig events.
/// Mirrors the paired-simulation construction: draw j uniformly over the
/// shared simulation count, then one joint grade realization over the pooled
/// block set of simulation j.
pub fn mc_oracle_truck(
    digs: &[DigEvent],
    model: &BlockModel,
    cov: &CovarianceModel,
    config: &PipelineConfig,
    n_samples: usize,
    seed: u64,
) -> Result<OracleEstimate> {
    if digs.is_empty() {
        return Err(Error::InvalidArgument("truck oracle needs at least one dig".into()));
    }
    let buckets = digs
        .iter()
        .map(|d| collect_bucket_samples(d, model, cov, config))
        .collect::<Result<Vec<_>>>()?;
    let draws = prepare_draws(&buckets, None, model, cov)?;
    run_sampler(&draws, n_samples, seed)
}

/// One drawable configuration: pooled weights, prior means and a square-root
/// factor of the block covariance for a single (location or simulation)
/// index.
struct Draw {
    cumulative_weight: f64,
    weights: DVector<f64>,
    means: DVector<f64>,
    sqrt_factor: DMatrix<f64>,
}

/// Assemble the per-index draw tables. With one bucket and explicit mixture
/// weights this reproduces the bucket mixture; with several buckets the
/// indices are the paired simulations (equal weights over
/// M = min location count).
fn prepare_draws(
    buckets: &[BucketSamples],
    mixture_weights: Option<&[f64]>,
    model: &BlockModel,
    cov: &CovarianceModel,
) -> Result<Vec<Draw>> {
    let m = buckets
        .iter()
        .map(BucketSamples::len)
        .min()
        .ok_or_else(|| Error::InvalidArgument("no buckets".into()))?;
    let scale = 1.0 / buckets.len() as f64;
    let mut draws = Vec::with_capacity(m);
    let mut cumulative = 0.0;
    for j in 0..m {
        let mut pooled: std::collections::BTreeMap<u64, f64> = std::collections::BTreeMap::new();
        for samples in buckets {
            let (ids, fractions) = samples.location(j);
            for (&id, &f) in ids.iter().zip(fractions) {
                *pooled.entry(id).or_insert(0.0) += f * scale;
            }
        }
        let ids: Vec<u64> = pooled.keys().copied().collect();
        let weights = DVector::from_iterator(ids.len(), pooled.values().copied());
        let means = DVector::from_iterator(
            ids.len(),
            ids.iter().map(|&id| model.block_by_id(id).expect("resolved").mean_grade),
        );
        let sigma = model.block_covariance(cov, &ids)?;
        let sqrt_factor = sym_sqrt_factor(sigma)?;
        cumulative += match mixture_weights {
            Some(w) => w[j],
            None => 1.0 / m as f64,
        };
        draws.push(Draw {
            cumulative_weight: cumulative,
            weights,
            means,
            sqrt_factor,
        });
    }
    Ok(draws)
}

/// `B` with `B B' = sigma`, via symmetric eigendecomposition with small
/// negative eigenvalues clamped to zero. Eigenvalues below -1e-9 indicate a
/// broken covariance and are an error.
fn sym_sqrt_factor(sigma: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = sigma.symmetric_eigen();
    let mut factor = eig.eigenvectors;
    for (c, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -1e-9 {
            return Err(Error::Numerical(format!(
                "covariance eigenvalue {lambda} below tolerance"
            )));
        }
        let s = lambda.max(0.0).sqrt();
        factor.column_mut(c).scale_mut(s);
    }
    Ok(factor)
}

fn run_sampler(draws: &[Draw], n_samples: usize, seed: u64) -> Result<OracleEstimate> {
    if n_samples < MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "oracle needs at least {MIN_SAMPLES} samples, got {n_samples}"
        )));
    }
    let totals: Vec<Accumulator> = (0..PARTITIONS)
        .into_par_iter()
        .map(|p| {
            let count = n_samples / PARTITIONS + usize::from(p < n_samples % PARTITIONS);
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, p as u64));
            let mut acc = Accumulator::default();
            let mut z = DVector::zeros(0);
            for _ in 0..count {
                let u: f64 = rng.random();
                let k = draws.partition_point(|d| d.cumulative_weight < u).min(draws.len() - 1);
                let draw = &draws[k];
                let n = draw.means.len();
                if z.len() != n {
                    z = DVector::zeros(n);
                }
                for zi in z.iter_mut() {
                    *zi = rng.sample(StandardNormal);
                }
                // grades = means + B z; value = weights . grades
                let value = draw.weights.dot(&draw.means) + draw.weights.dot(&(&draw.sqrt_factor * &z));
                acc.push(value);
            }
            acc
        })
        .collect();

    let mut combined = Accumulator::default();
    for acc in totals {
        combined.merge(&acc);
    }
    let n = combined.count as f64;
    let variance = combined.m2 / (n - 1.0);
    let std = variance.sqrt();
    Ok(OracleEstimate {
        mean: combined.mean,
        std,
        se_mean: std / n.sqrt(),
        se_std: std / (2.0 * (n - 1.0)).sqrt(),
        n_samples: combined.count,
    })
}

/// Welford accumulator with Chan's pairwise combination.
#[derive(Debug, Default, Clone, Copy)]
struct Accumulator {
    count: usize,
    mean: f64,
    m2: f64,
}

impl Accumulator {
    fn push(&mut self, value: f64) {
        self.count += 1;
        let delta = value - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (value - self.mean);
    }

    fn merge(&mut self, other: &Accumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let delta = other.mean - self.mean;
        let total = na + nb;
        self.mean += delta * nb / total;
        self.m2 += other.m2 + delta * delta * na * nb / total;
        self.count += other.count;
    }
}

fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
