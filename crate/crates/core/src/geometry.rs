//! Bucket geometry: spherical bucket shape, bucket-block volume-intersection
//! fractions and the simulated dig locations around a recorded position.
//!
//! Sphere-box intersection volumes have no convenient closed form, so the
//! fraction is estimated with a fixed 4096-point low-discrepancy set inside
//! the unit sphere (Halton bases 2/3/5 mapped to the ball). The point set is
//! fixed once per process, the evaluation works in coordinates relative to
//! the sphere center, and disjoint/contained configurations short-circuit to
//! exact 0 and 1, which makes fractions reproducible across runs and thread
//! counts.

use std::sync::OnceLock;

use dashmap::DashMap;

use crate::block_model::{Block, BlockModel};
use crate::error::{Error, Result};
use crate::gmm::kahan_sum;

const QMC_POINTS: usize = 4096;

/// Spherical bucket of a fixed volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BucketShape {
    /// Bucket volume, m^3.
    pub volume: f64,
    /// Sphere radius derived from the volume, meters.
    pub radius: f64,
}

impl BucketShape {
    pub fn from_volume(volume: f64) -> Result<Self> {
        if !volume.is_finite() || volume <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "bucket volume must be strictly positive, got {volume}"
            )));
        }
        let radius = (3.0 * volume / (4.0 * std::f64::consts::PI)).cbrt();
        Ok(Self { volume, radius })
    }
}

/// One simulated dig location on the sampling grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledLocation {
    /// Grid position, meters.
    pub position: [f64; 3],
    /// Euclidean distance to the recorded dig position, meters.
    pub distance_to_recorded: f64,
}

/// Fraction of the bucket sphere volume inside an axis-aligned block.
///
/// Deterministic: exact 0 when the sphere's bounding box misses the block,
/// exact 1 when the sphere lies wholly inside it, and the fixed-point-set
/// estimate otherwise. Degenerate zero-volume blocks yield 0.
pub fn intersection_fraction(bucket: &BucketShape, center: [f64; 3], block: &Block) -> f64 {
    if block.dims.iter().any(|&d| d <= 0.0) {
        return 0.0;
    }
    let delta = [
        block.centroid[0] - center[0],
        block.centroid[1] - center[1],
        block.centroid[2] - center[2],
    ];
    let half = [0.5 * block.dims[0], 0.5 * block.dims[1], 0.5 * block.dims[2]];
    fraction_relative(delta, half, bucket.radius)
}

fn fraction_relative(delta: [f64; 3], half: [f64; 3], radius: f64) -> f64 {
    let mut contained = true;
    for a in 0..3 {
        if delta[a].abs() >= half[a] + radius {
            return 0.0;
        }
        contained &= delta[a].abs() + radius <= half[a];
    }
    if contained {
        return 1.0;
    }
    let lo = [delta[0] - half[0], delta[1] - half[1], delta[2] - half[2]];
    let hi = [delta[0] + half[0], delta[1] + half[1], delta[2] + half[2]];
    let mut count = 0usize;
    for p in unit_ball_points() {
        let x = radius * p[0];
        let y = radius * p[1];
        let z = radius * p[2];
        if x >= lo[0] && x <= hi[0] && y >= lo[1] && y <= hi[1] && z >= lo[2] && z <= hi[2] {
            count += 1;
        }
    }
    count as f64 / QMC_POINTS as f64
}

/// Cache of intersection fractions keyed by the exact bit patterns of the
/// relative geometry. The cached value is a pure function of the key, so
/// concurrent insertion cannot change results. Pays off on regular block
/// grids where the same relative configurations repeat for every location.
#[derive(Default)]
pub(crate) struct FractionCache {
    map: DashMap<([u64; 3], [u64; 3], u64), f64>,
}

impl FractionCache {
    pub fn fraction(&self, bucket: &BucketShape, center: [f64; 3], block: &Block) -> f64 {
        let delta = [
            block.centroid[0] - center[0],
            block.centroid[1] - center[1],
            block.centroid[2] - center[2],
        ];
        let half = [0.5 * block.dims[0], 0.5 * block.dims[1], 0.5 * block.dims[2]];
        let key = (
            [delta[0].to_bits(), delta[1].to_bits(), delta[2].to_bits()],
            [half[0].to_bits(), half[1].to_bits(), half[2].to_bits()],
            bucket.radius.to_bits(),
        );
        if let Some(hit) = self.map.get(&key) {
            return *hit;
        }
        let value = fraction_relative(delta, half, bucket.radius);
        self.map.insert(key, value);
        value
    }
}

/// All origin-aligned grid points with spacing `grid_interval` whose XY
/// distance to `recorded` is strictly below `r_xy` and whose z lies within
/// the bench extent. Ordered lexicographically by (x, y, z); the length is
/// the component count of the location mixture.
pub fn sample_dig_locations(
    recorded: [f64; 3],
    grid_interval: f64,
    r_xy: f64,
    bench: (f64, f64),
) -> Result<Vec<SampledLocation>> {
    if !grid_interval.is_finite() || grid_interval <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "grid interval must be strictly positive, got {grid_interval}"
        )));
    }
    if !r_xy.is_finite() || r_xy <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "sampling radius must be strictly positive, got {r_xy}"
        )));
    }
    let (z_min, z_max) = bench;
    if !z_min.is_finite() || !z_max.is_finite() || z_min >= z_max {
        return Err(Error::InvalidArgument(format!(
            "bench extent must satisfy z_min < z_max, got ({z_min}, {z_max})"
        )));
    }
    if !recorded.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite recorded position {recorded:?}"
        )));
    }

    // Index bounds padded by one cell; the strict distance filter decides.
    let g = grid_interval;
    let ix_lo = ((recorded[0] - r_xy) / g).floor() as i64 - 1;
    let ix_hi = ((recorded[0] + r_xy) / g).ceil() as i64 + 1;
    let iy_lo = ((recorded[1] - r_xy) / g).floor() as i64 - 1;
    let iy_hi = ((recorded[1] + r_xy) / g).ceil() as i64 + 1;
    let iz_lo = (z_min / g).ceil() as i64;
    let iz_hi = (z_max / g).floor() as i64;

    let r2 = r_xy * r_xy;
    let mut out = Vec::new();
    for ix in ix_lo..=ix_hi {
        let x = ix as f64 * g;
        let dx = x - recorded[0];
        for iy in iy_lo..=iy_hi {
            let y = iy as f64 * g;
            let dy = y - recorded[1];
            if dx * dx + dy * dy >= r2 {
                continue;
            }
            for iz in iz_lo..=iz_hi {
                let z = iz as f64 * g;
                if z < z_min || z > z_max {
                    continue;
                }
                let dz = z - recorded[2];
                out.push(SampledLocation {
                    position: [x, y, z],
                    distance_to_recorded: (dx * dx + dy * dy + dz * dz).sqrt(),
                });
            }
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no sampled locations around {recorded:?}: grid interval {g} too coarse or radius {r_xy} too small for bench ({z_min}, {z_max})"
        )));
    }
    Ok(out)
}

/// Intersection fractions of the bucket at `center` against the candidate
/// blocks, restricted to blocks with positive intersection and renormalized
/// to sum to one. Returns the surviving ids (sorted, as the candidates were)
/// and their fractions.
pub fn volume_fractions(
    center: [f64; 3],
    bucket: &BucketShape,
    model: &BlockModel,
    candidate_ids: &[u64],
) -> Result<(Vec<u64>, Vec<f64>)> {
    let indices = candidate_ids
        .iter()
        .map(|&id| {
            model
                .index_of(id)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown block id {id}")))
        })
        .collect::<Result<Vec<u32>>>()?;
    let (kept, fractions, _) = volume_fractions_with(center, bucket, model, &indices, None)?;
    let ids = kept
        .into_iter()
        .map(|i| model.blocks()[i as usize].id)
        .collect();
    Ok((ids, fractions))
}

/// Index-based workhorse: optionally uses a fraction cache and also reports
/// the raw coverage (the fraction of the sphere volume inside the model
/// before renormalization), which the pipeline surfaces as a warning count
/// when the bucket pokes out of the modeled region.
pub(crate) fn volume_fractions_with(
    center: [f64; 3],
    bucket: &BucketShape,
    model: &BlockModel,
    candidates: &[u32],
    cache: Option<&FractionCache>,
) -> Result<(Vec<u32>, Vec<f64>, f64)> {
    let blocks = model.blocks();
    let mut kept = Vec::new();
    let mut fractions = Vec::new();
    for &index in candidates {
        let block = &blocks[index as usize];
        // Same disjointness arithmetic as the fraction evaluation; skipping
        // here only avoids hashing candidates whose fraction is exactly 0.
        if (0..3).any(|a| {
            (block.centroid[a] - center[a]).abs() >= 0.5 * block.dims[a] + bucket.radius
        }) {
            continue;
        }
        let f = match cache {
            Some(cache) => cache.fraction(bucket, center, block),
            None => intersection_fraction(bucket, center, block),
        };
        if f > 0.0 {
            kept.push(index);
            fractions.push(f);
        }
    }
    if kept.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "bucket outside model at {center:?}"
        )));
    }
    let coverage = kahan_sum(fractions.iter().copied());
    for f in &mut fractions {
        *f /= coverage;
    }
    Ok((kept, fractions, coverage))
}

/// Fixed low-discrepancy point set inside the unit ball: Halton sequence in
/// bases 2/3/5 pushed through the measure-preserving cube-to-ball map
/// (cbrt radius, uniform direction).
fn unit_ball_points() -> &'static [[f64; 3]] {
    static POINTS: OnceLock<Vec<[f64; 3]>> = OnceLock::new();
    POINTS.get_or_init(|| {
        (1..=QMC_POINTS as u64)
            .map(|k| {
                let r = radical_inverse(k, 2).cbrt();
                let z = 2.0 * radical_inverse(k, 3) - 1.0;
                let phi = 2.0 * std::f64::consts::PI * radical_inverse(k, 5);
                let s = (1.0 - z * z).max(0.0).sqrt();
                [r * s * phi.cos(), r * s * phi.sin(), r * z]
            })
            .collect()
    })
}

fn radical_inverse(mut n: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut result = 0.0;
    while n > 0 {
        result += (n % base) as f64 * f;
        n /= base;
        f *= inv;
    }
    result
}
