//! Synthetic bench generation: a regular block grid with a two-region grade
//! split, a south-to-north row sweep of dig events, and haul cycles grouping
//! consecutive buckets into trucks and consecutive trucks into dumps.
//!
//! Everything is derived deterministically from the spec and its seed, so a
//! fixed spec reproduces byte-identical CSV output. Dig coordinates are
//! quantized to millimeters, which keeps the write/read round trip exact at
//! the report precision.

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::block_model::{Block, BlockModel, CovarianceModel};
use crate::error::{Error, Result};
use crate::haul::HaulCycle;
use crate::io::DigEvent;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    /// Bench extent in x, meters (rounded to whole blocks).
    pub bench_x: f64,
    /// Bench extent in y, meters (rounded to whole blocks).
    pub bench_y: f64,
    /// Bench height, meters.
    pub bench_height: f64,
    /// Cubic sub-block edge length, meters.
    pub block_size: f64,
    pub bench_id: String,
    /// Grade split: blocks south of this y take the high-region values.
    pub split_y: f64,
    pub high_mean: f64,
    pub low_mean: f64,
    pub high_std: f64,
    pub low_std: f64,
    /// Width of an optional linear blend across the split, meters (0 = sharp).
    pub transition_band: f64,
    pub kernel: CovarianceModel,
    /// Dig spacing along a row (x) and between rows (y), meters.
    pub dig_spacing_x: f64,
    pub dig_spacing_y: f64,
    /// Uniform jitter applied to dig positions, meters.
    pub dig_jitter: f64,
    /// Seconds between consecutive dig events.
    pub dig_period_seconds: u64,
    pub buckets_per_truck: usize,
    pub trucks_per_dump: usize,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    /// The reference two-region scenario: a 200 x 200 x 10 m bench of 2 m
    /// blocks (50k blocks) split at y = 100 into 62 and 45 Fe wt% regions,
    /// swept by 3520 dig events (64 per row, 55 rows) grouped 8 per truck
    /// and 55 trucks per dump, so the 440 trucks fill 8 dumps evenly with
    /// the grade split falling on a dump boundary.
    fn default() -> Self {
        Self {
            bench_x: 200.0,
            bench_y: 200.0,
            bench_height: 10.0,
            block_size: 2.0,
            bench_id: "B1".into(),
            split_y: 100.0,
            high_mean: 62.0,
            low_mean: 45.0,
            high_std: 1.0,
            low_std: 1.2,
            transition_band: 0.0,
            kernel: CovarianceModel::default(),
            dig_spacing_x: 3.125,
            dig_spacing_y: 200.0 / 55.0,
            dig_jitter: 0.4,
            dig_period_seconds: 30,
            buckets_per_truck: 8,
            trucks_per_dump: 55,
            seed: 42,
        }
    }
}

impl ScenarioSpec {
    /// A shrunk variant (60 x 40 m bench, ~200 digs) for fast tests.
    pub fn small() -> Self {
        Self {
            bench_x: 60.0,
            bench_y: 40.0,
            split_y: 20.0,
            dig_spacing_x: 3.4,
            dig_spacing_y: 3.4,
            trucks_per_dump: 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("bench_x", self.bench_x),
            ("bench_y", self.bench_y),
            ("bench_height", self.bench_height),
            ("block_size", self.block_size),
            ("dig_spacing_x", self.dig_spacing_x),
            ("dig_spacing_y", self.dig_spacing_y),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidData(format!(
                    "scenario {name} must be strictly positive, got {v}"
                )));
            }
        }
        for (name, v) in [("high_mean", self.high_mean), ("low_mean", self.low_mean)] {
            if !(0.0..=100.0).contains(&v) {
                return Err(Error::InvalidData(format!(
                    "scenario {name} must lie in [0, 100], got {v}"
                )));
            }
        }
        if self.high_std < 0.0 || self.low_std < 0.0 || self.transition_band < 0.0 || self.dig_jitter < 0.0 {
            return Err(Error::InvalidData(
                "scenario stds, transition band and jitter must be nonnegative".into(),
            ));
        }
        if self.buckets_per_truck == 0 || self.trucks_per_dump == 0 {
            return Err(Error::InvalidData(
                "buckets_per_truck and trucks_per_dump must be at least 1".into(),
            ));
        }
        self.kernel.validate()
    }
}

/// A generated scenario: the block model plus the dig and haul records that
/// replay it.
pub struct Scenario {
    pub model: BlockModel,
    pub digs: Vec<DigEvent>,
    pub cycles: Vec<HaulCycle>,
}

pub fn generate_scenario(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let nx = (spec.bench_x / spec.block_size).round().max(1.0) as usize;
    let ny = (spec.bench_y / spec.block_size).round().max(1.0) as usize;
    let nz = (spec.bench_height / spec.block_size).round().max(1.0) as usize;
    let b = spec.block_size;

    let mut blocks = Vec::with_capacity(nx * ny * nz);
    let mut id = 0u64;
    for ix in 0..nx {
        for iy in 0..ny {
            for iz in 0..nz {
                let centroid = [
                    (ix as f64 + 0.5) * b,
                    (iy as f64 + 0.5) * b,
                    (iz as f64 + 0.5) * b,
                ];
                let (mean, std) = region_values(spec, centroid[1]);
                blocks.push(Block {
                    id,
                    centroid,
                    dims: [b; 3],
                    mean_grade: mean,
                    std_grade: std,
                    bench_id: spec.bench_id.clone(),
                });
                id += 1;
            }
        }
    }
    let model = BlockModel::new(blocks)?;

    // Dig events sweep row by row from south to north; positions carry a
    // small seeded jitter quantized to millimeters.
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let extent_x = nx as f64 * b;
    let extent_y = ny as f64 * b;
    let mid_z = 0.5 * spec.bench_height;
    let mut digs = Vec::new();
    let mut y = 0.5 * spec.dig_spacing_y;
    let mut k = 0u64;
    let base_time = 1_700_000_000u64;
    while y < extent_y {
        let mut x = 0.5 * spec.dig_spacing_x;
        while x < extent_x {
            let jx = rng.random_range(-spec.dig_jitter..=spec.dig_jitter);
            let jy = rng.random_range(-spec.dig_jitter..=spec.dig_jitter);
            let jz = rng.random_range(-spec.dig_jitter..=spec.dig_jitter);
            let z = (mid_z + jz).clamp(0.0, spec.bench_height);
            digs.push(DigEvent {
                dig_event_id: format!("dig_{:06}", k + 1),
                position: [quantize_mm(x + jx), quantize_mm(y + jy), quantize_mm(z)],
                bench_id: spec.bench_id.clone(),
                timestamp: base_time + k * spec.dig_period_seconds,
            });
            k += 1;
            x += spec.dig_spacing_x;
        }
        y += spec.dig_spacing_y;
    }

    let cycles = digs
        .iter()
        .enumerate()
        .map(|(i, dig)| {
            let truck = i / spec.buckets_per_truck;
            let dump = truck / spec.trucks_per_dump;
            HaulCycle {
                dig_event_id: dig.dig_event_id.clone(),
                truck_id: format!("truck_{:04}", truck + 1),
                dump_id: format!("dump_{:02}", dump + 1),
                timestamp: dig.timestamp,
            }
        })
        .collect();

    Ok(Scenario { model, digs, cycles })
}

fn region_values(spec: &ScenarioSpec, y: f64) -> (f64, f64) {
    if spec.transition_band > 0.0 {
        let t = ((y - (spec.split_y - 0.5 * spec.transition_band)) / spec.transition_band)
            .clamp(0.0, 1.0);
        (
            spec.high_mean + t * (spec.low_mean - spec.high_mean),
            spec.high_std + t * (spec.low_std - spec.high_std),
        )
    } else if y < spec.split_y {
        (spec.high_mean, spec.high_std)
    } else {
        (spec.low_mean, spec.low_std)
    }
}

fn quantize_mm(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_bench_block_count() {
        let spec = ScenarioSpec {
            bench_x: 10.0,
            bench_y: 10.0,
            bench_height: 10.0,
            block_size: 2.0,
            ..ScenarioSpec::default()
        };
        let scenario = generate_scenario(&spec).unwrap();
        assert_eq!(scenario.model.len(), 125);
    }

    #[test]
    fn two_region_split_assigns_region_means() {
        let spec = ScenarioSpec {
            bench_x: 20.0,
            bench_y: 20.0,
            split_y: 10.0,
            ..ScenarioSpec::default()
        };
        let scenario = generate_scenario(&spec).unwrap();
        for block in scenario.model.blocks() {
            let expected = if block.centroid[1] < 10.0 {
                spec.high_mean
            } else {
                spec.low_mean
            };
            assert_eq!(block.mean_grade, expected);
        }
    }

    #[test]
    fn same_seed_reproduces_identical_scenarios() {
        let spec = ScenarioSpec::small();
        let a = generate_scenario(&spec).unwrap();
        let b = generate_scenario(&spec).unwrap();
        assert_eq!(a.digs.len(), b.digs.len());
        for (da, db) in a.digs.iter().zip(&b.digs) {
            assert_eq!(da, db);
        }
        assert_eq!(a.cycles, b.cycles);
    }

    #[test]
    fn cycles_group_buckets_into_trucks_and_dumps() {
        let spec = ScenarioSpec::small();
        let scenario = generate_scenario(&spec).unwrap();
        assert_eq!(scenario.cycles.len(), scenario.digs.len());
        for chunk in scenario.cycles.chunks(spec.buckets_per_truck) {
            let truck = &chunk[0].truck_id;
            assert!(chunk.iter().all(|c| &c.truck_id == truck));
        }
        let n_trucks = scenario
            .cycles
            .iter()
            .map(|c| c.truck_id.as_str())
            .collect::<std::collections::BTreeSet<_>>()
            .len();
        assert_eq!(n_trucks, scenario.digs.len().div_ceil(spec.buckets_per_truck));
    }

    #[test]
    fn reference_scenario_matches_replay_scale() {
        let spec = ScenarioSpec::default();
        let scenario = generate_scenario(&spec).unwrap();
        assert_eq!(scenario.model.len(), 50_000);
        assert!(
            (3_000..4_000).contains(&scenario.digs.len()),
            "{} digs",
            scenario.digs.len()
        );
        let n_dumps = scenario
            .cycles
            .iter()
            .map(|c| c.dump_id.as_str())
            .collect::<std::collections::BTreeSet<_>>()
            .len();
        assert!(n_dumps >= 5, "{n_dumps} dumps");
    }

    #[test]
    fn dig_positions_stay_near_the_bench() {
        let spec = ScenarioSpec::small();
        let scenario = generate_scenario(&spec).unwrap();
        for d in &scenario.digs {
            assert!(d.position[2] >= 0.0 && d.position[2] <= spec.bench_height);
            assert!(d.position[0] > -1.0 && d.position[0] < spec.bench_x + 1.0);
        }
    }
}
