//! Propagation of bucket-level uncertainty to truck loads and dump
//! destinations.
//!
//! A truck built from N buckets is simulated M times, where M is the smallest
//! sampled-location count among its buckets: simulation j pairs the j-th
//! sampled location of every bucket (each sorted lexicographically, paired
//! positionally), pools the volume fractions into per-block weights scaled by
//! 1/N, and evaluates a single Gaussian from the correlated blocks. The M
//! simulated Gaussians are moment-matched with equal weights 1/M.
//!
//! Dumps are estimated two ways: a correlated replay that pools every
//! constituent bucket of every truck at the destination through the same
//! machinery, and an independence-mode aggregation that moment-matches the
//! truck moments arriving within a time window.

use std::collections::BTreeMap;

use crate::block_model::{BlockModel, CovarianceModel};
use crate::bucket::BucketSamples;
use crate::error::{Error, Result};
use crate::gmm::{moment_match, GaussianMixture, GaussianMoment};

/// One record of the load-haul cycle data: a bucket dig event loaded onto a
/// truck bound for a dump destination.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HaulCycle {
    pub dig_event_id: String,
    pub truck_id: String,
    pub dump_id: String,
    /// Seconds since epoch.
    pub timestamp: u64,
}

/// Matched moments for one truck load.
#[derive(Debug, Clone)]
pub struct TruckEstimate {
    pub truck_id: String,
    /// Moment-matched Gaussian (mean F_T, variance eps_T).
    pub matched: GaussianMoment,
    /// Buckets loaded onto the truck (N).
    pub n_buckets: usize,
    /// Simulations in the mixture (M = min over buckets' location counts).
    pub n_simulations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DumpMode {
    /// Pooled replay of all constituent buckets with spatial correlation.
    Correlated,
    /// Independence-mode aggregation of truck moments within a time window.
    Window,
}

impl DumpMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            DumpMode::Correlated => "correlated",
            DumpMode::Window => "window",
        }
    }
}

/// Matched moments for material arriving at one dump destination.
#[derive(Debug, Clone)]
pub struct DumpEstimate {
    pub dump_id: String,
    pub matched: GaussianMoment,
    pub n_trucks: usize,
    pub mode: DumpMode,
}

/// The j-th simulated value of a load built from the given buckets: each
/// bucket contributes its j-th location's fraction vector scaled by
/// 1/n_buckets, the per-block weights (summing to one) are dotted with the
/// prior means, and the variance is the quadratic form over the pooled block
/// set.
pub fn simulate_truck_value(
    sim_index: usize,
    buckets: &[BucketSamples],
    model: &BlockModel,
    cov: &CovarianceModel,
) -> Result<GaussianMoment> {
    if buckets.is_empty() {
        return Err(Error::InvalidArgument("no buckets to simulate".into()));
    }
    let scale = 1.0 / buckets.len() as f64;
    let mut pooled: BTreeMap<u64, f64> = BTreeMap::new();
    for samples in buckets {
        if sim_index >= samples.len() {
            return Err(Error::InvalidArgument(format!(
                "simulation index {sim_index} out of range for bucket {} ({} locations)",
                samples.dig_event_id,
                samples.len()
            )));
        }
        let (ids, fractions) = samples.location(sim_index);
        for (&id, &f) in ids.iter().zip(fractions) {
            *pooled.entry(id).or_insert(0.0) += f * scale;
        }
    }
    let mut mean = 0.0;
    let mut idx_weights = Vec::with_capacity(pooled.len());
    for (&id, &w) in &pooled {
        let block = model
            .block_by_id(id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown block id {id}")))?;
        mean += w * block.mean_grade;
        idx_weights.push((model.index_of(id).expect("resolved id"), w));
    }
    let variance = model.quadratic_form(cov, &idx_weights).max(0.0);
    GaussianMoment::new(mean, variance)
}

/// Moment match over the M paired simulations of a bucket group with equal
/// weights 1/M. Returns the matched moments and M.
fn matched_over_simulations(
    buckets: &[BucketSamples],
    model: &BlockModel,
    cov: &CovarianceModel,
) -> Result<(GaussianMoment, usize)> {
    let m = buckets
        .iter()
        .map(BucketSamples::len)
        .min()
        .ok_or_else(|| Error::InvalidArgument("no buckets to aggregate".into()))?;
    let moments = (0..m)
        .map(|j| simulate_truck_value(j, buckets, model, cov))
        .collect::<Result<Vec<_>>>()?;
    let mixture = GaussianMixture::equally_weighted(moments)?;
    Ok((moment_match(&mixture), m))
}

/// Matched moments for a truck from its constituent bucket samples.
pub fn estimate_truck(
    truck_id: &str,
    buckets: &[BucketSamples],
    model: &BlockModel,
    cov: &CovarianceModel,
) -> Result<TruckEstimate> {
    if buckets.is_empty() {
        return Err(Error::estimation("truck", truck_id, "no buckets assigned"));
    }
    let (matched, m) = matched_over_simulations(buckets, model, cov)?;
    Ok(TruckEstimate {
        truck_id: truck_id.to_owned(),
        matched,
        n_buckets: buckets.len(),
        n_simulations: m,
    })
}

/// Correlated dump estimate: pools all constituent buckets of every truck at
/// the destination (weights renormalized over the pooled set) and moment
/// matches over M' = the smallest location count among them.
pub fn estimate_dump_correlated(
    dump_id: &str,
    buckets: &[BucketSamples],
    n_trucks: usize,
    model: &BlockModel,
    cov: &CovarianceModel,
) -> Result<DumpEstimate> {
    if buckets.is_empty() || n_trucks == 0 {
        return Err(Error::estimation("dump", dump_id, "no trucks at destination"));
    }
    let (matched, _) = matched_over_simulations(buckets, model, cov)?;
    Ok(DumpEstimate {
        dump_id: dump_id.to_owned(),
        matched,
        n_trucks,
        mode: DumpMode::Correlated,
    })
}

/// Independence-mode dump estimate: moment match of the truck moments that
/// arrived within one time window, equal weights 1/N.
pub fn estimate_dump_window(dump_id: &str, truck_moments: &[GaussianMoment]) -> Result<DumpEstimate> {
    if truck_moments.is_empty() {
        return Err(Error::estimation("dump", dump_id, "empty window"));
    }
    let mixture = GaussianMixture::equally_weighted(truck_moments.to_vec())?;
    Ok(DumpEstimate {
        dump_id: dump_id.to_owned(),
        matched: moment_match(&mixture),
        n_trucks: truck_moments.len(),
        mode: DumpMode::Window,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block_model::Block;
    use crate::bucket::collect_bucket_samples;
    use crate::config::PipelineConfig;
    use crate::gmm::kahan_sum;
    use crate::io::DigEvent;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

    fn block(id: u64, centroid: [f64; 3], dims: [f64; 3], mean: f64, std: f64) -> Block {
        Block {
            id,
            centroid,
            dims,
            mean_grade: mean,
            std_grade: std,
            bench_id: "B1".into(),
        }
    }

    fn dig(id: &str, position: [f64; 3]) -> DigEvent {
        DigEvent {
            dig_event_id: id.into(),
            position,
            bench_id: "B1".into(),
            timestamp: 0,
        }
    }

    fn uniform_model(n: usize, mean: f64, std: f64) -> BlockModel {
        let mut blocks = Vec::new();
        for ix in 0..n {
            for iy in 0..n {
                for iz in 0..5 {
                    blocks.push(block(
                        (iz + 5 * (iy + n * ix)) as u64,
                        [
                            1.0 + 2.0 * ix as f64,
                            1.0 + 2.0 * iy as f64,
                            1.0 + 2.0 * iz as f64,
                        ],
                        [2.0; 3],
                        mean,
                        std,
                    ));
                }
            }
        }
        BlockModel::new(blocks).unwrap()
    }

    #[test]
    fn one_bucket_truck_matches_per_location_estimates() {
        let model = uniform_model(20, 58.0, 1.4);
        let cov = CovarianceModel::new([10.0, 10.0, 5.0], 1.0, 0.0, 0.0).unwrap();
        let config = PipelineConfig {
            kernel: cov.clone(),
            ..PipelineConfig::default()
        };
        let samples = collect_bucket_samples(&dig("d", [20.0, 20.0, 5.0]), &model, &cov, &config).unwrap();
        for j in [0usize, 3, samples.len() - 1] {
            let sim = simulate_truck_value(j, std::slice::from_ref(&samples), &model, &cov).unwrap();
            let expected = samples.moments()[j];
            assert_relative_eq!(sim.mean, expected.mean, max_relative = 1e-12);
            assert_relative_eq!(sim.variance, expected.variance, max_relative = 1e-9);
        }
    }

    #[test]
    fn two_buckets_inside_one_block_collapse_to_the_prior() {
        let model = BlockModel::new(vec![block(0, [0.0, 0.0, 5.0], [4000.0, 4000.0, 10.0], 60.0, 2.0)]).unwrap();
        let cov = CovarianceModel::new([10.0, 10.0, 5.0], 1.0, 0.0, 0.0).unwrap();
        let config = PipelineConfig {
            kernel: cov.clone(),
            ..PipelineConfig::default()
        };
        let a = collect_bucket_samples(&dig("a", [0.0, 0.0, 5.0]), &model, &cov, &config).unwrap();
        let b = collect_bucket_samples(&dig("b", [4.0, 0.0, 5.0]), &model, &cov, &config).unwrap();
        let sim = simulate_truck_value(0, &[a, b], &model, &cov).unwrap();
        assert_relative_eq!(sim.mean, 60.0, max_relative = 1e-12);
        assert_relative_eq!(sim.variance, 4.0, max_relative = 1e-12);
    }

    #[test]
    fn per_simulation_block_weights_sum_to_one() {
        let model = uniform_model(25, 55.0, 1.0);
        let cov = CovarianceModel::default();
        let config = PipelineConfig {
            kernel: cov.clone(),
            ..PipelineConfig::default()
        };
        let buckets: Vec<BucketSamples> = ["a", "b", "c"]
            .iter()
            .enumerate()
            .map(|(i, id)| {
                collect_bucket_samples(
                    &dig(id, [16.0 + 4.0 * i as f64, 20.0, 5.0]),
                    &model,
                    &cov,
                    &config,
                )
                .unwrap()
            })
            .collect();
        let m = buckets.iter().map(BucketSamples::len).min().unwrap();
        let scale = 1.0 / buckets.len() as f64;
        for j in (0..m).step_by(m / 7 + 1) {
            let mut pooled: BTreeMap<u64, f64> = BTreeMap::new();
            for samples in &buckets {
                let (ids, fr) = samples.location(j);
                for (&id, &f) in ids.iter().zip(fr) {
                    *pooled.entry(id).or_insert(0.0) += f * scale;
                }
            }
            let total = kahan_sum(pooled.values().copied());
            assert!((total - 1.0).abs() <= 1e-9, "sim {j}: weight sum {total}");
        }
    }

    /// Three buckets over four correlated blocks, checked against a dense
    /// hand-constructed covariance evaluation.
    #[test]
    fn truck_simulation_matches_dense_linear_algebra() {
        let blocks = vec![
            block(0, [1.0, 1.0, 5.0], [2.0, 2.0, 10.0], 61.0, 1.1),
            block(1, [3.0, 1.0, 5.0], [2.0, 2.0, 10.0], 58.0, 0.9),
            block(2, [5.0, 1.0, 5.0], [2.0, 2.0, 10.0], 49.0, 1.7),
            block(3, [7.0, 1.0, 5.0], [2.0, 2.0, 10.0], 52.0, 1.3),
        ];
        let model = BlockModel::new(blocks.clone()).unwrap();
        let cov = CovarianceModel::new([4.0, 4.0, 3.0], 1.0, 0.1, 0.0).unwrap();
        let config = PipelineConfig {
            r_xy_sampling: 2.5,
            r_xy_neighbor: 6.0,
            kernel: cov.clone(),
            ..PipelineConfig::default()
        };
        let buckets: Vec<BucketSamples> = [[2.0, 1.0, 5.0], [4.0, 1.0, 5.0], [6.0, 1.0, 5.0]]
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                collect_bucket_samples(&dig(&format!("d{i}"), p), &model, &cov, &config).unwrap()
            })
            .collect();

        let j = 0;
        let sim = simulate_truck_value(j, &buckets, &model, &cov).unwrap();

        // Dense oracle: accumulate pooled weights over the 4-block universe,
        // then evaluate with an explicitly constructed covariance matrix.
        let mut w = vec![0.0f64; 4];
        for samples in &buckets {
            let (ids, fr) = samples.location(j);
            for (&id, &f) in ids.iter().zip(fr) {
                w[id as usize] += f / buckets.len() as f64;
            }
        }
        let mut sigma = DMatrix::zeros(4, 4);
        for a in 0..4 {
            for b in 0..4 {
                let (ba, bb) = (&blocks[a], &blocks[b]);
                let rho = cov.correlation([
                    ba.centroid[0] - bb.centroid[0],
                    ba.centroid[1] - bb.centroid[1],
                    ba.centroid[2] - bb.centroid[2],
                ]);
                sigma[(a, b)] = ba.std_grade * bb.std_grade * rho;
                if a == b {
                    sigma[(a, b)] += cov.noise + cov.jitter;
                }
            }
        }
        let wv = DVector::from_vec(w.clone());
        let expected_var = (&sigma * &wv).dot(&wv);
        let expected_mean: f64 = w.iter().zip(&blocks).map(|(wi, b)| wi * b.mean_grade).sum();
        assert_relative_eq!(sim.mean, expected_mean, max_relative = 1e-12);
        assert_relative_eq!(sim.variance, expected_var, max_relative = 1e-9);
    }

    #[test]
    fn homogeneous_fully_correlated_truck_is_the_prior() {
        let model = uniform_model(20, 57.0, 1.2);
        let cov = CovarianceModel::new([1e12; 3], 1.0, 0.0, 0.0).unwrap();
        let config = PipelineConfig {
            kernel: cov.clone(),
            ..PipelineConfig::default()
        };
        let buckets: Vec<BucketSamples> = (0..4)
            .map(|i| {
                collect_bucket_samples(
                    &dig(&format!("d{i}"), [14.0 + 4.0 * i as f64, 20.0, 5.0]),
                    &model,
                    &cov,
                    &config,
                )
                .unwrap()
            })
            .collect();
        let truck = estimate_truck("t1", &buckets, &model, &cov).unwrap();
        assert_relative_eq!(truck.matched.mean, 57.0, max_relative = 1e-9);
        assert_relative_eq!(truck.matched.variance, 1.2 * 1.2, max_relative = 1e-9);
        assert_eq!(truck.n_buckets, 4);
        assert!(truck.n_simulations >= 1);
    }

    #[test]
    fn single_bucket_truck_equals_bucket_estimate() {
        let model = uniform_model(20, 58.0, 1.4);
        let cov = CovarianceModel::new([10.0, 10.0, 5.0], 1.0, 0.0, 0.0).unwrap();
        let config = PipelineConfig {
            kernel: cov.clone(),
            ..PipelineConfig::default()
        };
        let samples = collect_bucket_samples(&dig("d", [19.3, 21.1, 5.0]), &model, &cov, &config).unwrap();
        let bucket_matched = moment_match(&samples.mixture());
        let truck = estimate_truck("t1", std::slice::from_ref(&samples), &model, &cov).unwrap();
        assert!((truck.matched.mean - bucket_matched.mean).abs() < 1e-9);
        assert!((truck.matched.variance - bucket_matched.variance).abs() < 1e-9);
    }

    #[test]
    fn dump_correlated_over_one_truck_equals_the_truck() {
        let model = uniform_model(20, 58.0, 1.4);
        let cov = CovarianceModel::new([10.0, 10.0, 5.0], 1.0, 0.0, 0.0).unwrap();
        let config = PipelineConfig {
            kernel: cov.clone(),
            ..PipelineConfig::default()
        };
        let buckets: Vec<BucketSamples> = (0..3)
            .map(|i| {
                collect_bucket_samples(
                    &dig(&format!("d{i}"), [16.0 + 4.0 * i as f64, 20.0, 5.0]),
                    &model,
                    &cov,
                    &config,
                )
                .unwrap()
            })
            .collect();
        let truck = estimate_truck("t1", &buckets, &model, &cov).unwrap();
        let dump = estimate_dump_correlated("s1", &buckets, 1, &model, &cov).unwrap();
        assert_relative_eq!(dump.matched.mean, truck.matched.mean, max_relative = 1e-12);
        assert_relative_eq!(dump.matched.variance, truck.matched.variance, max_relative = 1e-12);
        assert_eq!(dump.mode, DumpMode::Correlated);
    }

    #[test]
    fn window_aggregation_examples() {
        let a = GaussianMoment::new(55.0, 1.0).unwrap();
        let b = GaussianMoment::new(65.0, 1.0).unwrap();

        let one = estimate_dump_window("s1", &[a]).unwrap();
        assert_eq!(one.matched.mean, 55.0);
        assert_eq!(one.matched.variance, 1.0);
        assert_eq!(one.mode, DumpMode::Window);

        let two = estimate_dump_window("s1", &[a, b]).unwrap();
        assert_relative_eq!(two.matched.mean, 60.0, max_relative = 1e-12);
        assert_relative_eq!(two.matched.variance, 26.0, max_relative = 1e-12);

        for n in [2usize, 5, 19] {
            let same = estimate_dump_window("s1", &vec![a; n]).unwrap();
            assert_relative_eq!(same.matched.mean, 55.0, max_relative = 1e-12);
            assert_relative_eq!(same.matched.variance, 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn empty_window_is_an_error() {
        assert!(matches!(
            estimate_dump_window("s1", &[]),
            Err(Error::Estimation { entity: "dump", .. })
        ));
    }

    #[test]
    fn window_mean_stays_within_truck_mean_hull() {
        let trucks = [
            GaussianMoment::new(47.0, 0.8).unwrap(),
            GaussianMoment::new(61.5, 1.1).unwrap(),
            GaussianMoment::new(58.9, 0.6).unwrap(),
        ];
        let dump = estimate_dump_window("s1", &trucks).unwrap();
        assert!(dump.matched.mean >= 47.0 && dump.matched.mean <= 61.5);
    }
}
