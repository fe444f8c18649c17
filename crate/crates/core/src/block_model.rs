//! Prior sub-block model, spatial covariance and radius-neighbor queries.
//!
//! Blocks are axis-aligned cuboids carrying prior grade moments estimated by
//! the site's ore-body model. The covariance between two blocks is their
//! prior standard deviations times an anisotropic squared-exponential
//! correlation evaluated at the centroid separation. Neighbor queries are
//! cylindrical: an XY radius with the full vertical column of the bench
//! included, since the excavator blends material across the bench height.

mod kdtree;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use dashmap::DashMap;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use kdtree::KdTree2;

/// One sub-block of the prior model.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub id: u64,
    /// Centroid, meters.
    pub centroid: [f64; 3],
    /// Edge lengths (dx, dy, dz), meters.
    pub dims: [f64; 3],
    /// Prior mean grade, Fe wt%.
    pub mean_grade: f64,
    /// Prior standard deviation of the grade, Fe wt%.
    pub std_grade: f64,
    pub bench_id: String,
}

impl Block {
    pub fn min_corner(&self) -> [f64; 3] {
        [
            self.centroid[0] - 0.5 * self.dims[0],
            self.centroid[1] - 0.5 * self.dims[1],
            self.centroid[2] - 0.5 * self.dims[2],
        ]
    }

    pub fn max_corner(&self) -> [f64; 3] {
        [
            self.centroid[0] + 0.5 * self.dims[0],
            self.centroid[1] + 0.5 * self.dims[1],
            self.centroid[2] + 0.5 * self.dims[2],
        ]
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let finite = self.centroid.iter().chain(self.dims.iter()).all(|v| v.is_finite())
            && self.mean_grade.is_finite()
            && self.std_grade.is_finite();
        if !finite {
            return Err(Error::InvalidData(format!("block {}: non-finite field", self.id)));
        }
        if self.dims.iter().any(|&d| d <= 0.0) {
            return Err(Error::InvalidData(format!(
                "block {}: dims must be strictly positive, got {:?}",
                self.id, self.dims
            )));
        }
        if self.std_grade < 0.0 {
            return Err(Error::InvalidData(format!(
                "block {}: negative std {}",
                self.id, self.std_grade
            )));
        }
        if !(0.0..=100.0).contains(&self.mean_grade) {
            return Err(Error::InvalidData(format!(
                "block {}: mean grade {} outside [0, 100]",
                self.id, self.mean_grade
            )));
        }
        Ok(())
    }
}

/// Anisotropic squared-exponential covariance kernel.
///
/// The correlation between blocks separated by `d` is
/// `amplitude * exp(-0.5 * sum_a (d_a / length_scales_a)^2)`; the covariance
/// scales it by both prior standard deviations, and `noise + jitter` is added
/// on the diagonal. With `amplitude > 0` the resulting matrix is positive
/// semi-definite for any block layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceModel {
    /// Correlation length per axis (lx, ly, lz), meters.
    pub length_scales: [f64; 3],
    /// Dimensionless kernel scale; 1.0 leaves the prior stds untouched.
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    /// Observation noise variance added on the diagonal, (Fe wt%)^2.
    #[serde(default)]
    pub noise: f64,
    /// Small diagonal stabilizer, (Fe wt%)^2.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

fn default_amplitude() -> f64 {
    1.0
}

fn default_jitter() -> f64 {
    1e-8
}

impl Default for CovarianceModel {
    fn default() -> Self {
        Self {
            length_scales: [10.0, 10.0, 5.0],
            amplitude: 1.0,
            noise: 0.0,
            jitter: default_jitter(),
        }
    }
}

impl CovarianceModel {
    pub fn new(length_scales: [f64; 3], amplitude: f64, noise: f64, jitter: f64) -> Result<Self> {
        let model = Self {
            length_scales,
            amplitude,
            noise,
            jitter,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.length_scales.iter().any(|&l| !l.is_finite() || l <= 0.0) {
            return Err(Error::InvalidData(format!(
                "length scales must be strictly positive, got {:?}",
                self.length_scales
            )));
        }
        if !self.amplitude.is_finite() || self.amplitude <= 0.0 {
            return Err(Error::InvalidData(format!(
                "amplitude must be strictly positive, got {}",
                self.amplitude
            )));
        }
        if self.noise < 0.0 || self.jitter < 0.0 || !self.noise.is_finite() || !self.jitter.is_finite() {
            return Err(Error::InvalidData(format!(
                "noise and jitter must be nonnegative, got {} / {}",
                self.noise, self.jitter
            )));
        }
        Ok(())
    }

    /// Kernel correlation at separation `delta` (includes the amplitude).
    #[inline]
    pub fn correlation(&self, delta: [f64; 3]) -> f64 {
        let mut q = 0.0;
        for (d, l) in delta.iter().zip(&self.length_scales) {
            let t = d / l;
            q += t * t;
        }
        self.amplitude * (-0.5 * q).exp()
    }
}

/// Regular-lattice view of the block layout, detected at construction when
/// all blocks share one cuboid size and their centroids sit on a grid with
/// that spacing. Enables a separable evaluation of covariance quadratic
/// forms that avoids materializing large matrices.
struct Lattice {
    step: [f64; 3],
    coords: Vec<[u32; 3]>,
}

/// Memo for cylindrical neighbor queries keyed by the exact bit patterns of
/// the query point and radius plus the bench. Valid only for the model it
/// was populated against.
#[derive(Default)]
pub(crate) struct NeighborCache {
    map: DashMap<(u64, u64, u64, usize), Arc<Vec<u32>>>,
}

fn validate_query(query: [f64; 3], r_xy: f64) -> Result<()> {
    if !r_xy.is_finite() || r_xy <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "neighbor radius must be strictly positive, got {r_xy}"
        )));
    }
    if !query.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite query {query:?}")));
    }
    Ok(())
}

/// The prior block model with its spatial index and per-bench z-extents.
///
/// Immutable after construction; all queries are read-only and safe to call
/// from many threads.
pub struct BlockModel {
    blocks: Vec<Block>,
    by_id: HashMap<u64, u32>,
    benches: BTreeMap<String, (f64, f64)>,
    index: KdTree2,
    lattice: Option<Lattice>,
}

impl BlockModel {
    pub fn new(blocks: Vec<Block>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(blocks.len());
        let mut benches: BTreeMap<String, (f64, f64)> = BTreeMap::new();
        for (i, block) in blocks.iter().enumerate() {
            block.validate()?;
            if by_id.insert(block.id, i as u32).is_some() {
                return Err(Error::InvalidData(format!("duplicate block id {}", block.id)));
            }
            let z_lo = block.centroid[2] - 0.5 * block.dims[2];
            let z_hi = block.centroid[2] + 0.5 * block.dims[2];
            benches
                .entry(block.bench_id.clone())
                .and_modify(|(lo, hi)| {
                    *lo = lo.min(z_lo);
                    *hi = hi.max(z_hi);
                })
                .or_insert((z_lo, z_hi));
        }
        let points: Vec<[f64; 2]> = blocks
            .iter()
            .map(|b| [b.centroid[0], b.centroid[1]])
            .collect();
        let index = KdTree2::build(&points);
        let lattice = detect_lattice(&blocks);
        Ok(Self {
            blocks,
            by_id,
            benches,
            index,
            lattice,
        })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn block_by_id(&self, id: u64) -> Option<&Block> {
        self.by_id.get(&id).map(|&i| &self.blocks[i as usize])
    }

    pub(crate) fn index_of(&self, id: u64) -> Option<u32> {
        self.by_id.get(&id).copied()
    }

    /// `(z_min, z_max)` of a bench, from the vertical extent of its blocks.
    pub fn bench_extent(&self, bench_id: &str) -> Option<(f64, f64)> {
        self.benches.get(bench_id).copied()
    }

    pub fn bench_ids(&self) -> impl Iterator<Item = &str> {
        self.benches.keys().map(String::as_str)
    }

    /// Ids of every block in the query's bench whose centroid lies within
    /// strict XY distance `r_xy` of the query, the full vertical column
    /// included. The bench is the one whose z-extent contains the query's z
    /// (nearest bench by z-distance otherwise). Result sorted ascending.
    pub fn radius_neighbors(&self, query: [f64; 3], r_xy: f64) -> Result<Vec<u64>> {
        Ok(self
            .neighbor_indices(query, r_xy)?
            .into_iter()
            .map(|i| self.blocks[i as usize].id)
            .collect())
    }

    /// Same cylindrical query with the bench fixed by the caller (dig events
    /// carry their bench id).
    pub fn radius_neighbors_in_bench(
        &self,
        bench_id: &str,
        query: [f64; 3],
        r_xy: f64,
    ) -> Result<Vec<u64>> {
        Ok(self
            .neighbor_indices_in_bench(bench_id, query, r_xy)?
            .into_iter()
            .map(|i| self.blocks[i as usize].id)
            .collect())
    }

    /// Index-based neighbor query with the bench resolved from the query's z.
    pub(crate) fn neighbor_indices(&self, query: [f64; 3], r_xy: f64) -> Result<Vec<u32>> {
        let bench = match self.resolve_bench(query[2]) {
            Some(b) => b.to_owned(),
            None => {
                // Still validate the arguments on an empty model.
                validate_query(query, r_xy)?;
                return Ok(Vec::new());
            }
        };
        self.neighbor_indices_in_bench(&bench, query, r_xy)
    }

    /// Core cylindrical query: block indices, sorted by block id (the batch
    /// stages work on indices to avoid id hashing on the hot path).
    pub(crate) fn neighbor_indices_in_bench(
        &self,
        bench_id: &str,
        query: [f64; 3],
        r_xy: f64,
    ) -> Result<Vec<u32>> {
        validate_query(query, r_xy)?;
        let mut hits = Vec::new();
        self.index.within_radius([query[0], query[1]], r_xy, &mut hits);
        let mut indices: Vec<u32> = hits
            .into_iter()
            .filter(|&i| self.blocks[i as usize].bench_id == bench_id)
            .collect();
        indices.sort_unstable_by_key(|&i| self.blocks[i as usize].id);
        Ok(indices)
    }

    /// Cached variant for the batch stages, where sampled locations sit on a
    /// shared grid and the same (x, y, bench, radius) query repeats for
    /// every nearby dig event. The cached list is a pure function of the key
    /// for a fixed model, so the cache is transparent.
    pub(crate) fn neighbor_indices_cached(
        &self,
        cache: &NeighborCache,
        bench_id: &str,
        query: [f64; 3],
        r_xy: f64,
    ) -> Result<Arc<Vec<u32>>> {
        let bench_index = match self.benches.keys().position(|b| b == bench_id) {
            Some(i) => i,
            None => {
                validate_query(query, r_xy)?;
                return Ok(Arc::new(Vec::new()));
            }
        };
        let key = (
            query[0].to_bits(),
            query[1].to_bits(),
            r_xy.to_bits(),
            bench_index,
        );
        if let Some(hit) = cache.map.get(&key) {
            return Ok(Arc::clone(&hit));
        }
        let indices = Arc::new(self.neighbor_indices_in_bench(bench_id, query, r_xy)?);
        cache.map.insert(key, Arc::clone(&indices));
        Ok(indices)
    }

    fn resolve_bench(&self, z: f64) -> Option<&str> {
        let mut best: Option<(&str, f64)> = None;
        for (bench, &(lo, hi)) in &self.benches {
            let dist = if z < lo {
                lo - z
            } else if z > hi {
                z - hi
            } else {
                0.0
            };
            match best {
                Some((_, d)) if d <= dist => {}
                _ => best = Some((bench, dist)),
            }
        }
        best.map(|(b, _)| b)
    }

    /// Covariance matrix of the listed blocks:
    /// `eps_ij = std_i * std_j * rho(centroid_i - centroid_j)` with
    /// `noise + jitter` added on the diagonal. Symmetric by construction.
    pub fn block_covariance(&self, cov: &CovarianceModel, ids: &[u64]) -> Result<DMatrix<f64>> {
        if ids.is_empty() {
            return Err(Error::InvalidArgument(
                "block_covariance needs at least one id".into(),
            ));
        }
        cov.validate()?;
        let idx = self.resolve_ids(ids)?;
        let n = idx.len();
        let mut m = DMatrix::zeros(n, n);
        for a in 0..n {
            let ba = &self.blocks[idx[a] as usize];
            m[(a, a)] = ba.std_grade * ba.std_grade * cov.amplitude + cov.noise + cov.jitter;
            for b in (a + 1)..n {
                let bb = &self.blocks[idx[b] as usize];
                let delta = [
                    ba.centroid[0] - bb.centroid[0],
                    ba.centroid[1] - bb.centroid[1],
                    ba.centroid[2] - bb.centroid[2],
                ];
                let v = ba.std_grade * bb.std_grade * cov.correlation(delta);
                m[(a, b)] = v;
                m[(b, a)] = v;
            }
        }
        Ok(m)
    }

    fn resolve_ids(&self, ids: &[u64]) -> Result<Vec<u32>> {
        ids.iter()
            .map(|&id| {
                self.index_of(id)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown block id {id}")))
            })
            .collect()
    }

    /// `w' Sigma w` over blocks given as (index, weight) pairs, without
    /// materializing Sigma. Uses the separable lattice evaluation when the
    /// model is a regular grid, a pairwise accumulation otherwise; both
    /// routes compute the same quantity.
    pub(crate) fn quadratic_form(&self, cov: &CovarianceModel, weights: &[(u32, f64)]) -> f64 {
        if weights.is_empty() {
            return 0.0;
        }
        let w2: f64 = weights.iter().map(|&(_, w)| w * w).sum();
        let kernel_part = match &self.lattice {
            Some(lat) => self.quad_form_lattice(lat, cov, weights),
            None => self.quad_form_pairwise(cov, weights),
        };
        cov.amplitude * kernel_part + (cov.noise + cov.jitter) * w2
    }

    fn quad_form_pairwise(&self, cov: &CovarianceModel, weights: &[(u32, f64)]) -> f64 {
        let inv = [
            1.0 / cov.length_scales[0],
            1.0 / cov.length_scales[1],
            1.0 / cov.length_scales[2],
        ];
        let mut acc = 0.0;
        for (a, &(ia, wa)) in weights.iter().enumerate() {
            let ba = &self.blocks[ia as usize];
            let ua = wa * ba.std_grade;
            acc += ua * ua;
            for &(ib, wb) in &weights[a + 1..] {
                let bb = &self.blocks[ib as usize];
                let ub = wb * bb.std_grade;
                let mut q = 0.0;
                for (axis, scale) in inv.iter().enumerate() {
                    let t = (ba.centroid[axis] - bb.centroid[axis]) * scale;
                    q += t * t;
                }
                acc += 2.0 * ua * ub * (-0.5 * q).exp();
            }
        }
        acc
    }

    /// Separable evaluation on the lattice: scatter `w * std` into a dense
    /// box around the support, convolve per axis with the 1D kernel taps and
    /// take the inner product with the support again.
    fn quad_form_lattice(&self, lat: &Lattice, cov: &CovarianceModel, weights: &[(u32, f64)]) -> f64 {
        let mut lo = [u32::MAX; 3];
        let mut hi = [0u32; 3];
        for &(idx, _) in weights {
            let c = lat.coords[idx as usize];
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
        }
        let bx = (hi[0] - lo[0] + 1) as usize;
        let by = (hi[1] - lo[1] + 1) as usize;
        let bz = (hi[2] - lo[2] + 1) as usize;
        let cell = |x: usize, y: usize, z: usize| (x * by + y) * bz + z;

        let mut u = vec![0.0f64; bx * by * bz];
        for &(idx, w) in weights {
            let c = lat.coords[idx as usize];
            let block = &self.blocks[idx as usize];
            u[cell(
                (c[0] - lo[0]) as usize,
                (c[1] - lo[1]) as usize,
                (c[2] - lo[2]) as usize,
            )] += w * block.std_grade;
        }

        let taps = |n: usize, axis: usize| -> Vec<f64> {
            (0..n)
                .map(|d| {
                    let t = d as f64 * lat.step[axis] / cov.length_scales[axis];
                    (-0.5 * t * t).exp()
                })
                .collect()
        };
        let tx = taps(bx, 0);
        let ty = taps(by, 1);
        let tz = taps(bz, 2);

        // Convolve along z, then y, then x.
        let mut v1 = vec![0.0f64; bx * by * bz];
        for x in 0..bx {
            for y in 0..by {
                for z0 in 0..bz {
                    let mut acc = 0.0;
                    for z in 0..bz {
                        acc += u[cell(x, y, z)] * tz[z.abs_diff(z0)];
                    }
                    v1[cell(x, y, z0)] = acc;
                }
            }
        }
        let mut v2 = vec![0.0f64; bx * by * bz];
        for x in 0..bx {
            for y0 in 0..by {
                for z in 0..bz {
                    let mut acc = 0.0;
                    for y in 0..by {
                        acc += v1[cell(x, y, z)] * ty[y.abs_diff(y0)];
                    }
                    v2[cell(x, y0, z)] = acc;
                }
            }
        }
        let mut quad = 0.0;
        for x0 in 0..bx {
            for y in 0..by {
                for z in 0..bz {
                    let target = u[cell(x0, y, z)];
                    if target == 0.0 {
                        continue;
                    }
                    let mut acc = 0.0;
                    for x in 0..bx {
                        acc += v2[cell(x, y, z)] * tx[x.abs_diff(x0)];
                    }
                    quad += target * acc;
                }
            }
        }
        quad
    }
}

fn detect_lattice(blocks: &[Block]) -> Option<Lattice> {
    let first = blocks.first()?;
    let step = first.dims;
    let same_dims = blocks.iter().all(|b| {
        (0..3).all(|a| (b.dims[a] - step[a]).abs() <= 1e-9 * step[a])
    });
    if !same_dims {
        return None;
    }
    let mut origin = first.centroid;
    for b in blocks {
        for (o, &c) in origin.iter_mut().zip(&b.centroid) {
            *o = o.min(c);
        }
    }
    let mut coords = Vec::with_capacity(blocks.len());
    for b in blocks {
        let mut c = [0u32; 3];
        for a in 0..3 {
            let f = (b.centroid[a] - origin[a]) / step[a];
            let i = f.round();
            if (f - i).abs() > 1e-6 || i < 0.0 || i > u32::MAX as f64 {
                return None;
            }
            c[a] = i as u32;
        }
        coords.push(c);
    }
    Some(Lattice { step, coords })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

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

    fn random_model(rng: &mut impl Rng, n: usize) -> BlockModel {
        let blocks: Vec<Block> = (0..n)
            .map(|i| {
                block(
                    i as u64,
                    [
                        rng.random_range(-100.0..100.0),
                        rng.random_range(-100.0..100.0),
                        rng.random_range(0.0..10.0),
                    ],
                    [2.0, 2.0, 2.0],
                    rng.random_range(30.0..70.0),
                    rng.random_range(0.1..3.0),
                )
            })
            .collect();
        BlockModel::new(blocks).unwrap()
    }

    #[test]
    fn vertical_column_is_included() {
        let model = BlockModel::new(vec![
            block(0, [5.0, 5.0, 1.0], [2.0; 3], 60.0, 1.0),
            block(1, [5.0, 5.0, 3.0], [2.0; 3], 60.0, 1.0),
            block(2, [5.0, 5.0, 5.0], [2.0; 3], 60.0, 1.0),
        ])
        .unwrap();
        let ids = model.radius_neighbors([5.0, 5.0, 1.0], 1.0).unwrap();
        assert_eq!(ids, vec![0, 1, 2]);
    }

    #[test]
    fn block_outside_radius_is_excluded() {
        let model = BlockModel::new(vec![block(7, [8.0, 0.0, 1.0], [2.0; 3], 60.0, 1.0)]).unwrap();
        let ids = model.radius_neighbors([0.0, 0.0, 1.0], 4.0).unwrap();
        assert!(ids.is_empty());
    }

    #[test]
    fn nonpositive_radius_is_an_error() {
        let model = BlockModel::new(vec![block(0, [0.0; 3], [1.0; 3], 60.0, 1.0)]).unwrap();
        assert!(model.radius_neighbors([0.0; 3], 0.0).is_err());
        assert!(model.radius_neighbors([0.0; 3], -2.0).is_err());
    }

    #[test]
    fn thousand_random_blocks_match_linear_scan() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let model = random_model(&mut rng, 1000);
        let query = [12.0, -3.0, 4.0];
        let r = 12.0;
        let got = model.radius_neighbors(query, r).unwrap();
        let mut expected: Vec<u64> = model
            .blocks()
            .iter()
            .filter(|b| {
                let dx = b.centroid[0] - query[0];
                let dy = b.centroid[1] - query[1];
                dx * dx + dy * dy < r * r
            })
            .map(|b| b.id)
            .collect();
        expected.sort_unstable();
        assert_eq!(got, expected);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = BlockModel::new(vec![
            block(1, [0.0; 3], [1.0; 3], 60.0, 1.0),
            block(1, [5.0, 0.0, 0.0], [1.0; 3], 60.0, 1.0),
        ]);
        assert!(err.is_err());
    }

    #[test]
    fn single_block_covariance_is_variance() {
        let model = BlockModel::new(vec![block(3, [0.0; 3], [1.0; 3], 60.0, 2.0)]).unwrap();
        let cov = CovarianceModel::new([10.0, 10.0, 5.0], 1.0, 0.0, 0.0).unwrap();
        let m = model.block_covariance(&cov, &[3]).unwrap();
        assert_eq!(m[(0, 0)], 4.0);
    }

    #[test]
    fn covariance_at_one_length_scale() {
        let model = BlockModel::new(vec![
            block(0, [0.0; 3], [1.0; 3], 60.0, 1.0),
            block(1, [10.0, 0.0, 0.0], [1.0; 3], 60.0, 1.0),
        ])
        .unwrap();
        let cov = CovarianceModel::new([10.0, 10.0, 5.0], 1.0, 0.0, 0.0).unwrap();
        let m = model.block_covariance(&cov, &[0, 1]).unwrap();
        assert_relative_eq!(m[(0, 1)], (-0.5f64).exp(), max_relative = 1e-12);
        assert_relative_eq!(m[(0, 1)], 0.6065306597, max_relative = 1e-9);
    }

    #[test]
    fn covariance_decays_past_length_scales() {
        let model = BlockModel::new(vec![
            block(0, [0.0; 3], [1.0; 3], 60.0, 1.5),
            block(1, [200.0, 0.0, 0.0], [1.0; 3], 60.0, 2.5),
        ])
        .unwrap();
        let cov = CovarianceModel::new([10.0, 10.0, 5.0], 1.0, 0.0, 0.0).unwrap();
        let m = model.block_covariance(&cov, &[0, 1]).unwrap();
        assert!(m[(0, 1)].abs() < 1e-8 * 1.5 * 2.5);
    }

    #[test]
    fn unknown_id_is_an_error() {
        let model = BlockModel::new(vec![block(0, [0.0; 3], [1.0; 3], 60.0, 1.0)]).unwrap();
        let cov = CovarianceModel::default();
        assert!(model.block_covariance(&cov, &[42]).is_err());
        assert!(model.block_covariance(&cov, &[]).is_err());
    }

    #[test]
    fn bench_resolution_picks_nearest() {
        let mut blocks = vec![block(0, [0.0, 0.0, 5.0], [2.0; 3], 60.0, 1.0)];
        let mut upper = block(1, [0.0, 0.0, 15.0], [2.0; 3], 60.0, 1.0);
        upper.bench_id = "B2".into();
        blocks.push(upper);
        let model = BlockModel::new(blocks).unwrap();
        // z = 13 is outside both benches but closer to B2's [14, 16].
        let ids = model.radius_neighbors([0.0, 0.0, 13.0], 1.0).unwrap();
        assert_eq!(ids, vec![1]);
    }

    #[test]
    fn quadratic_form_matches_explicit_matrix() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        // Lattice model.
        let blocks: Vec<Block> = (0..4)
            .flat_map(|ix| {
                (0..3).map(move |iz| {
                    block(
                        (ix * 3 + iz) as u64,
                        [1.0 + 2.0 * ix as f64, 1.0, 1.0 + 2.0 * iz as f64],
                        [2.0; 3],
                        55.0,
                        0.5 + 0.25 * ix as f64,
                    )
                })
            })
            .collect();
        let lattice_model = BlockModel::new(blocks).unwrap();
        assert!(lattice_model.lattice.is_some());
        // Irregular model.
        let irregular = random_model(&mut rng, 12);
        assert!(irregular.lattice.is_none());

        let cov = CovarianceModel::new([6.0, 7.0, 3.0], 0.8, 0.05, 1e-8).unwrap();
        for model in [&lattice_model, &irregular] {
            for _ in 0..20 {
                let k = rng.random_range(1..=model.len());
                let mut ids: Vec<u64> = (0..model.len() as u64).collect();
                ids.shuffle(&mut rng);
                ids.truncate(k);
                ids.sort_unstable();
                let weights: Vec<(u32, f64)> = ids
                    .iter()
                    .map(|&id| (model.index_of(id).unwrap(), rng.random_range(-1.0..1.0)))
                    .collect();
                let sigma = model.block_covariance(&cov, &ids).unwrap();
                let v = nalgebra::DVector::from_iterator(k, weights.iter().map(|&(_, w)| w));
                let expected = (&sigma * &v).dot(&v);
                let got = model.quadratic_form(&cov, &weights);
                assert_relative_eq!(got, expected, max_relative = 1e-9, epsilon = 1e-12);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn radius_neighbors_equals_linear_scan(seed in 0u64..10_000, r in 0.5f64..30.0) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let model = random_model(&mut rng, 120);
            let query = [
                rng.random_range(-110.0..110.0),
                rng.random_range(-110.0..110.0),
                rng.random_range(0.0..10.0),
            ];
            let got = model.radius_neighbors(query, r).unwrap();
            let mut expected: Vec<u64> = model
                .blocks()
                .iter()
                .filter(|b| {
                    let dx = b.centroid[0] - query[0];
                    let dy = b.centroid[1] - query[1];
                    dx * dx + dy * dy < r * r
                })
                .map(|b| b.id)
                .collect();
            expected.sort_unstable();
            prop_assert_eq!(got, expected);
        }

        /// Symmetry, PSD (to jitter tolerance) and permutation equivariance.
        #[test]
        fn covariance_matrix_is_symmetric_psd_and_equivariant(seed in 0u64..10_000) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let model = random_model(&mut rng, 30);
            let cov = CovarianceModel::new(
                [
                    rng.random_range(1.0..30.0),
                    rng.random_range(1.0..30.0),
                    rng.random_range(1.0..10.0),
                ],
                rng.random_range(0.2..2.0),
                rng.random_range(0.0..0.5),
                1e-8,
            )
            .unwrap();
            let k = rng.random_range(2..=20usize);
            let mut ids: Vec<u64> = (0..30u64).collect();
            ids.shuffle(&mut rng);
            ids.truncate(k);
            let m = model.block_covariance(&cov, &ids).unwrap();

            for i in 0..k {
                for j in 0..k {
                    prop_assert!((m[(i, j)] - m[(j, i)]).abs() <= 1e-12);
                }
            }
            let eig = m.clone().symmetric_eigen();
            prop_assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-9));

            // Reordering ids permutes rows and columns identically.
            let mut perm: Vec<usize> = (0..k).collect();
            perm.shuffle(&mut rng);
            let permuted_ids: Vec<u64> = perm.iter().map(|&p| ids[p]).collect();
            let mp = model.block_covariance(&cov, &permuted_ids).unwrap();
            for i in 0..k {
                for j in 0..k {
                    prop_assert_eq!(mp[(i, j)], m[(perm[i], perm[j])]);
                }
            }
        }
    }
}
