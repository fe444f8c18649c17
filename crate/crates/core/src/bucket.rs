//! Per-bucket estimation: one Gaussian per simulated dig location from the
//! correlated blocks it intersects, assembled into a mixture over all valid
//! locations and reduced by moment matching.

use crate::block_model::{BlockModel, CovarianceModel, NeighborCache};
use crate::config::{PipelineConfig, WeightMode};
use crate::error::{Error, Result};
use crate::geometry::{
    sample_dig_locations, volume_fractions_with, BucketShape, FractionCache, SampledLocation,
};
use crate::gmm::{kahan_sum, moment_match, GaussianMixture, GaussianMoment};
use crate::io::DigEvent;

/// Memoization shared across the batch stages: intersection fractions and
/// neighbor lists both repeat heavily on gridded models. Valid for one
/// model only.
#[derive(Default)]
pub(crate) struct EstimationCache {
    pub fractions: FractionCache,
    pub neighbors: NeighborCache,
}

/// Everything computed per valid sampled location of one dig event, kept in
/// flattened form because truck and dump estimation replay these fractions.
#[derive(Debug, Clone)]
pub struct BucketSamples {
    pub dig_event_id: String,
    weights: Vec<f64>,
    moments: Vec<GaussianMoment>,
    offsets: Vec<u32>,
    ids_flat: Vec<u64>,
    fracs_flat: Vec<f64>,
    /// Sampled locations whose sphere was only partially covered by modeled
    /// blocks (fractions renormalized); surfaced as a warning count.
    pub partial_coverage: u32,
}

impl BucketSamples {
    /// Number of valid sampled locations (mixture components, N_m).
    pub fn len(&self) -> usize {
        self.moments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moments.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn moments(&self) -> &[GaussianMoment] {
        &self.moments
    }

    /// Intersecting block ids and volume fractions of the j-th location.
    pub fn location(&self, j: usize) -> (&[u64], &[f64]) {
        let lo = self.offsets[j] as usize;
        let hi = self.offsets[j + 1] as usize;
        (&self.ids_flat[lo..hi], &self.fracs_flat[lo..hi])
    }

    pub fn mixture(&self) -> GaussianMixture {
        GaussianMixture::new(
            self.weights
                .iter()
                .zip(&self.moments)
                .map(|(&w, &m)| (w, m))
                .collect(),
        )
        .expect("non-empty validated samples")
    }
}

/// Matched moments for one dig event.
#[derive(Debug, Clone)]
pub struct BucketEstimate {
    pub dig_event_id: String,
    /// Moment-matched Gaussian (mean F_s, variance eps_s).
    pub matched: GaussianMoment,
    /// sqrt of the matched variance, Fe wt%.
    pub std: f64,
    /// Mixture component count (valid sampled locations).
    pub n_components: usize,
    /// The full mixture, retained only when plot emission asks for it.
    pub components: Option<GaussianMixture>,
    /// Per-location fractions, retained only when a caller replays them.
    pub samples: Option<BucketSamples>,
    pub partial_coverage: u32,
}

/// What [`estimate_bucket_detailed`] keeps in memory besides the moments.
/// Components can run to thousands per bucket, so batch runs retain nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct Retain {
    pub components: bool,
    pub samples: bool,
}

/// Moments of the excavated material for a bucket at one sampled location:
/// mean `v' F_b` and variance `v' Sigma v` over the intersecting blocks.
pub fn estimate_at_location(
    location: &SampledLocation,
    bucket: &BucketShape,
    model: &BlockModel,
    cov: &CovarianceModel,
    r_xy_neighbor: f64,
) -> Result<(GaussianMoment, Vec<u64>, Vec<f64>)> {
    let candidates = model.neighbor_indices(location.position, r_xy_neighbor)?;
    match location_estimate(location.position, &candidates, bucket, model, cov, None)? {
        Some(est) => {
            let ids = est
                .indices
                .iter()
                .map(|&i| model.blocks()[i as usize].id)
                .collect();
            Ok((est.moment, ids, est.fractions))
        }
        None => Err(Error::InvalidArgument(format!(
            "bucket outside model at {:?}",
            location.position
        ))),
    }
}

struct LocationEstimate {
    moment: GaussianMoment,
    indices: Vec<u32>,
    fractions: Vec<f64>,
    coverage: f64,
}

/// `Ok(None)` when the bucket intersects no modeled block at this location.
fn location_estimate(
    position: [f64; 3],
    candidates: &[u32],
    bucket: &BucketShape,
    model: &BlockModel,
    cov: &CovarianceModel,
    cache: Option<&FractionCache>,
) -> Result<Option<LocationEstimate>> {
    if candidates.is_empty() {
        return Ok(None);
    }
    let (indices, fractions, coverage) =
        match volume_fractions_with(position, bucket, model, candidates, cache) {
            Ok(v) => v,
            Err(Error::InvalidArgument(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
    let blocks = model.blocks();
    let mean = kahan_sum(
        indices
            .iter()
            .zip(&fractions)
            .map(|(&i, &f)| f * blocks[i as usize].mean_grade),
    );
    let idx_weights: Vec<(u32, f64)> = indices.iter().copied().zip(fractions.iter().copied()).collect();
    let variance = model.quadratic_form(cov, &idx_weights).max(0.0);
    Ok(Some(LocationEstimate {
        moment: GaussianMoment::new(mean, variance)?,
        indices,
        fractions,
        coverage,
    }))
}

/// Run the per-location estimation for every simulated dig location of one
/// recorded dig event. Locations where the bucket leaves the model are
/// dropped; at least one valid location must remain.
pub fn collect_bucket_samples(
    dig: &DigEvent,
    model: &BlockModel,
    cov: &CovarianceModel,
    config: &PipelineConfig,
) -> Result<BucketSamples> {
    collect_bucket_samples_cached(dig, model, cov, config, None)
}

pub(crate) fn collect_bucket_samples_cached(
    dig: &DigEvent,
    model: &BlockModel,
    cov: &CovarianceModel,
    config: &PipelineConfig,
    cache: Option<&EstimationCache>,
) -> Result<BucketSamples> {
    let fail = |message: String| Error::estimation("bucket", dig.dig_event_id.clone(), message);
    let bench = model
        .bench_extent(&dig.bench_id)
        .ok_or_else(|| fail(format!("unknown bench `{}`", dig.bench_id)))?;
    let bucket = BucketShape::from_volume(config.bucket_volume)?;
    let locations =
        sample_dig_locations(dig.position, config.grid_interval, config.r_xy_sampling, bench)
            .map_err(|e| fail(e.to_string()))?;

    let mut kept_distances = Vec::new();
    let mut moments = Vec::new();
    let mut offsets = vec![0u32];
    let mut ids_flat = Vec::new();
    let mut fracs_flat = Vec::new();
    let mut partial_coverage = 0u32;
    for location in &locations {
        let candidates = match cache {
            Some(cache) => model.neighbor_indices_cached(
                &cache.neighbors,
                &dig.bench_id,
                location.position,
                config.r_xy_neighbor,
            )?,
            None => std::sync::Arc::new(model.neighbor_indices_in_bench(
                &dig.bench_id,
                location.position,
                config.r_xy_neighbor,
            )?),
        };
        let fractions_cache = cache.map(|c| &c.fractions);
        let Some(est) =
            location_estimate(location.position, &candidates, &bucket, model, cov, fractions_cache)?
        else {
            continue;
        };
        if est.coverage < 0.999 {
            partial_coverage += 1;
        }
        kept_distances.push(location.distance_to_recorded);
        moments.push(est.moment);
        ids_flat.extend(est.indices.iter().map(|&i| model.blocks()[i as usize].id));
        fracs_flat.extend_from_slice(&est.fractions);
        offsets.push(ids_flat.len() as u32);
    }
    if moments.is_empty() {
        return Err(fail(format!(
            "no sampled location intersects the model (tried {})",
            locations.len()
        )));
    }

    let weights = mixture_weights(config, &kept_distances);
    Ok(BucketSamples {
        dig_event_id: dig.dig_event_id.clone(),
        weights,
        moments,
        offsets,
        ids_flat,
        fracs_flat,
        partial_coverage,
    })
}

/// Normalized mixture weights. In inverse-distance-squared mode a location
/// coinciding with the recorded position takes the nearest positive distance
/// in the set (falling back to the smallest distance overall), so the weight
/// stays finite.
fn mixture_weights(config: &PipelineConfig, distances: &[f64]) -> Vec<f64> {
    let n = distances.len();
    match config.weight_mode {
        WeightMode::Equal => vec![1.0 / n as f64; n],
        WeightMode::Idw2 => {
            let floor = distances
                .iter()
                .copied()
                .filter(|&d| d > 0.0)
                .fold(f64::INFINITY, f64::min);
            let floor = if floor.is_finite() {
                floor
            } else {
                config.grid_interval
            };
            let raw: Vec<f64> = distances
                .iter()
                .map(|&d| {
                    let d = if d > 0.0 { d } else { floor };
                    1.0 / (d * d)
                })
                .collect();
            let total = kahan_sum(raw.iter().copied());
            raw.into_iter().map(|w| w / total).collect()
        }
    }
}

/// Full bucket estimation for one dig event: sample locations, estimate each,
/// weight, moment match.
pub fn estimate_bucket(
    dig: &DigEvent,
    model: &BlockModel,
    cov: &CovarianceModel,
    config: &PipelineConfig,
) -> Result<BucketEstimate> {
    estimate_bucket_detailed(dig, model, cov, config, Retain::default())
}

pub fn estimate_bucket_detailed(
    dig: &DigEvent,
    model: &BlockModel,
    cov: &CovarianceModel,
    config: &PipelineConfig,
    retain: Retain,
) -> Result<BucketEstimate> {
    estimate_bucket_cached(dig, model, cov, config, retain, None)
}

pub(crate) fn estimate_bucket_cached(
    dig: &DigEvent,
    model: &BlockModel,
    cov: &CovarianceModel,
    config: &PipelineConfig,
    retain: Retain,
    cache: Option<&EstimationCache>,
) -> Result<BucketEstimate> {
    let samples = collect_bucket_samples_cached(dig, model, cov, config, cache)?;
    Ok(reduce_samples(samples, retain))
}

pub(crate) fn reduce_samples(samples: BucketSamples, retain: Retain) -> BucketEstimate {
    let mixture = samples.mixture();
    let matched = moment_match(&mixture);
    let partial_coverage = samples.partial_coverage;
    BucketEstimate {
        dig_event_id: samples.dig_event_id.clone(),
        matched,
        std: matched.variance.sqrt(),
        n_components: samples.len(),
        components: retain.components.then_some(mixture),
        samples: retain.samples.then_some(samples),
        partial_coverage,
    }
}
