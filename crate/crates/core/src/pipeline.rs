//! Batch pipeline: estimate every bucket, truck and dump of a replay and
//! emit CSV/JSON reports.
//!
//! Entities are processed in parallel but every output is assembled in a
//! deterministic order (buckets by dig id, trucks and dumps by id, windows by
//! index), and all per-entity computations are pure functions of the inputs,
//! so identical inputs and config produce byte-identical report files for
//! any worker count. Per-entity estimation failures are collected into
//! `errors.csv` and never abort the batch.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bucket::{estimate_bucket_cached, BucketEstimate, Retain};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::bucket::EstimationCache;
use crate::gmm::{self, GaussianMixture, GaussianMoment};
use crate::haul::{
    estimate_dump_correlated, estimate_dump_window, estimate_truck, DumpMode, HaulCycle,
    TruckEstimate,
};
use crate::io::{fmt_float, DigEvent, Inputs};

pub const BUCKETS_REPORT_HEADER: &str = "dig_event_id,mean,std,n_components";
pub const TRUCKS_REPORT_HEADER: &str = "truck_id,mean,std,n_buckets,n_simulations";
pub const DUMPS_REPORT_HEADER: &str = "dump_id,mode,window_index,n_trucks,n_buckets,mean,std";
pub const ERRORS_REPORT_HEADER: &str = "entity,id,message";
pub const PLOT_HEADER: &str = "x,pdf,cdf,matched_pdf";

#[derive(Debug, Clone)]
pub struct BucketRow {
    pub dig_event_id: String,
    pub mean: f64,
    pub std: f64,
    pub n_components: usize,
}

#[derive(Debug, Clone)]
pub struct TruckRow {
    pub truck_id: String,
    pub mean: f64,
    pub std: f64,
    pub n_buckets: usize,
    pub n_simulations: usize,
}

#[derive(Debug, Clone)]
pub struct DumpRow {
    pub dump_id: String,
    pub mode: DumpMode,
    pub window_index: u64,
    pub n_trucks: usize,
    pub n_buckets: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone)]
pub struct ErrorRow {
    pub entity: String,
    pub id: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct StageSummary {
    pub count: usize,
    /// Mean of the per-entity matched means, Fe wt%.
    pub mean_grade: f64,
    /// Mean of the per-entity matched standard deviations, Fe wt%.
    pub mean_std: f64,
    pub min_std: f64,
    pub max_std: f64,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct WarningSummary {
    /// Sampled locations whose bucket sphere was only partially inside the
    /// modeled region (fractions renormalized).
    pub partial_coverage_locations: u64,
    pub failed_buckets: usize,
    pub failed_trucks: usize,
    pub failed_dumps: usize,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct Summary {
    pub buckets: StageSummary,
    pub trucks: StageSummary,
    pub dumps_correlated: StageSummary,
    pub dumps_window: StageSummary,
    pub warnings: WarningSummary,
}

#[derive(Debug, Clone, Copy)]
pub struct PlotRow {
    pub x: f64,
    pub pdf: f64,
    pub cdf: f64,
    pub matched_pdf: f64,
}

/// Everything one pipeline run produces.
pub struct ReportBundle {
    pub buckets: Vec<BucketRow>,
    pub trucks: Vec<TruckRow>,
    pub dumps: Vec<DumpRow>,
    pub errors: Vec<ErrorRow>,
    pub summary: Summary,
    pub plots: Vec<(String, Vec<PlotRow>)>,
}

/// A successful truck with the bookkeeping the window stage needs.
struct TruckArrival<'a> {
    truck_id: &'a str,
    arrival: u64,
    dump_id: &'a str,
    matched: GaussianMoment,
    n_buckets: usize,
}

/// Run the full chain on validated inputs. `config.workers` sizes a dedicated
/// thread pool (0 = all cores).
pub fn run_pipeline(config: &PipelineConfig, inputs: &Inputs) -> Result<ReportBundle> {
    config.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if config.workers > 0 {
        builder = builder.num_threads(config.workers);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| run_stages(config, inputs))
}

fn run_stages(config: &PipelineConfig, inputs: &Inputs) -> Result<ReportBundle> {
    let model = &inputs.model;
    let cov = &config.kernel;
    let cache = EstimationCache::default();
    let mut errors = Vec::new();

    // Bucket stage.
    let plot_requested: HashSet<&str> = config.plot_dig_ids.iter().map(String::as_str).collect();
    let mut digs: Vec<&DigEvent> = inputs.digs.iter().collect();
    digs.sort_by(|a, b| a.dig_event_id.cmp(&b.dig_event_id));
    let bucket_results: Vec<std::result::Result<BucketEstimate, Error>> = digs
        .par_iter()
        .map(|dig| {
            let retain = Retain {
                components: plot_requested.contains(dig.dig_event_id.as_str()),
                samples: false,
            };
            estimate_bucket_cached(dig, model, cov, config, retain, Some(&cache))
        })
        .collect();

    let mut bucket_rows = Vec::new();
    let mut partial_coverage_locations = 0u64;
    let mut retained: HashMap<String, BucketEstimate> = HashMap::new();
    for (dig, result) in digs.iter().zip(bucket_results) {
        match result {
            Ok(estimate) => {
                partial_coverage_locations += u64::from(estimate.partial_coverage);
                bucket_rows.push(BucketRow {
                    dig_event_id: estimate.dig_event_id.clone(),
                    mean: estimate.matched.mean,
                    std: estimate.std,
                    n_components: estimate.n_components,
                });
                if estimate.components.is_some() {
                    retained.insert(estimate.dig_event_id.clone(), estimate);
                }
            }
            Err(e) => errors.push(ErrorRow {
                entity: "bucket".into(),
                id: dig.dig_event_id.clone(),
                message: error_message(e),
            }),
        }
    }
    let failed_buckets = errors.len();

    // Plot emission for the requested dig ids.
    let mut plots = Vec::new();
    let mut seen_plot = HashSet::new();
    for dig_id in &config.plot_dig_ids {
        if !seen_plot.insert(dig_id.as_str()) {
            continue;
        }
        match retained.get(dig_id) {
            Some(estimate) => match emit_plot_data(estimate, 512) {
                Ok(rows) => plots.push((dig_id.clone(), rows)),
                Err(e) => errors.push(ErrorRow {
                    entity: "plot".into(),
                    id: dig_id.clone(),
                    message: error_message(e),
                }),
            },
            None => errors.push(ErrorRow {
                entity: "plot".into(),
                id: dig_id.clone(),
                message: "dig event not found or not estimated".into(),
            }),
        }
    }

    // Truck stage: recompute the constituent bucket samples per truck (the
    // retained-fraction footprint at full replay scale outweighs the
    // recomputation, which the fraction cache keeps cheap).
    let dig_by_id: HashMap<&str, &DigEvent> = inputs
        .digs
        .iter()
        .map(|d| (d.dig_event_id.as_str(), d))
        .collect();
    let mut trucks: BTreeMap<&str, Vec<&HaulCycle>> = BTreeMap::new();
    for cycle in &inputs.cycles {
        trucks.entry(cycle.truck_id.as_str()).or_default().push(cycle);
    }
    let truck_groups: Vec<(&str, Vec<&HaulCycle>)> = trucks
        .into_iter()
        .map(|(id, mut cycles)| {
            cycles.sort_by_key(|c| (c.timestamp, c.dig_event_id.as_str()));
            (id, cycles)
        })
        .collect();
    let truck_results: Vec<std::result::Result<TruckEstimate, Error>> = truck_groups
        .par_iter()
        .map(|(truck_id, cycles)| {
            let samples = gather_samples(truck_id, "truck", cycles, &dig_by_id, config, inputs, &cache)?;
            estimate_truck(truck_id, &samples, model, cov)
        })
        .collect();

    let mut truck_rows = Vec::new();
    // Arrival time and destination of each successful truck, for windowing.
    let mut truck_arrivals: Vec<TruckArrival> = Vec::new();
    let mut failed_trucks = 0usize;
    for ((truck_id, cycles), result) in truck_groups.iter().zip(truck_results) {
        match result {
            Ok(estimate) => {
                let last = cycles.last().expect("nonempty group");
                truck_arrivals.push(TruckArrival {
                    truck_id,
                    arrival: last.timestamp,
                    dump_id: last.dump_id.as_str(),
                    matched: estimate.matched,
                    n_buckets: estimate.n_buckets,
                });
                truck_rows.push(TruckRow {
                    truck_id: estimate.truck_id.clone(),
                    mean: estimate.matched.mean,
                    std: estimate.matched.std(),
                    n_buckets: estimate.n_buckets,
                    n_simulations: estimate.n_simulations,
                });
            }
            Err(e) => {
                failed_trucks += 1;
                errors.push(ErrorRow {
                    entity: "truck".into(),
                    id: (*truck_id).to_owned(),
                    message: error_message(e),
                });
            }
        }
    }

    // Correlated dump stage: pool every cycle at the destination.
    let mut dumps: BTreeMap<&str, Vec<&HaulCycle>> = BTreeMap::new();
    for cycle in &inputs.cycles {
        dumps.entry(cycle.dump_id.as_str()).or_default().push(cycle);
    }
    let dump_groups: Vec<(&str, Vec<&HaulCycle>)> = dumps
        .into_iter()
        .map(|(id, mut cycles)| {
            cycles.sort_by_key(|c| (c.timestamp, c.dig_event_id.as_str()));
            (id, cycles)
        })
        .collect();
    let dump_results: Vec<std::result::Result<(DumpRow, GaussianMoment), Error>> = dump_groups
        .par_iter()
        .map(|(dump_id, cycles)| {
            let n_trucks = cycles
                .iter()
                .map(|c| c.truck_id.as_str())
                .collect::<HashSet<_>>()
                .len();
            let samples = gather_samples(dump_id, "dump", cycles, &dig_by_id, config, inputs, &cache)?;
            let estimate = estimate_dump_correlated(dump_id, &samples, n_trucks, model, cov)?;
            Ok((
                DumpRow {
                    dump_id: estimate.dump_id.clone(),
                    mode: DumpMode::Correlated,
                    window_index: 0,
                    n_trucks,
                    n_buckets: cycles.len(),
                    mean: estimate.matched.mean,
                    std: estimate.matched.std(),
                },
                estimate.matched,
            ))
        })
        .collect();

    let mut dump_rows = Vec::new();
    let mut correlated_moments = Vec::new();
    let mut failed_dumps = 0usize;
    for ((dump_id, _), result) in dump_groups.iter().zip(dump_results) {
        match result {
            Ok((row, matched)) => {
                correlated_moments.push(matched);
                dump_rows.push(row);
            }
            Err(e) => {
                failed_dumps += 1;
                errors.push(ErrorRow {
                    entity: "dump".into(),
                    id: (*dump_id).to_owned(),
                    message: error_message(e),
                });
            }
        }
    }

    // Window dump stage over the successful trucks' moments.
    let mut windows: BTreeMap<(&str, u64), Vec<&TruckArrival>> = BTreeMap::new();
    let mut dump_t0: HashMap<&str, u64> = HashMap::new();
    for t in &truck_arrivals {
        dump_t0
            .entry(t.dump_id)
            .and_modify(|t0| *t0 = (*t0).min(t.arrival))
            .or_insert(t.arrival);
    }
    for t in &truck_arrivals {
        let index = match config.window_seconds {
            Some(dt) => ((t.arrival - dump_t0[t.dump_id]) as f64 / dt).floor() as u64,
            None => 0,
        };
        windows.entry((t.dump_id, index)).or_default().push(t);
    }
    let mut window_moments = Vec::new();
    for ((dump_id, index), mut members) in windows {
        members.sort_by_key(|t| (t.arrival, t.truck_id));
        let moments: Vec<GaussianMoment> = members.iter().map(|t| t.matched).collect();
        match estimate_dump_window(dump_id, &moments) {
            Ok(estimate) => {
                window_moments.push(estimate.matched);
                dump_rows.push(DumpRow {
                    dump_id: dump_id.to_owned(),
                    mode: DumpMode::Window,
                    window_index: index,
                    n_trucks: members.len(),
                    n_buckets: members.iter().map(|t| t.n_buckets).sum(),
                    mean: estimate.matched.mean,
                    std: estimate.matched.std(),
                });
            }
            Err(e) => errors.push(ErrorRow {
                entity: "dump".into(),
                id: format!("{dump_id}/window{index}"),
                message: error_message(e),
            }),
        }
    }

    let summary = Summary {
        buckets: stage_summary(bucket_rows.iter().map(|r| (r.mean, r.std))),
        trucks: stage_summary(truck_rows.iter().map(|r| (r.mean, r.std))),
        dumps_correlated: stage_summary(
            correlated_moments.iter().map(|m| (m.mean, m.std())),
        ),
        dumps_window: stage_summary(window_moments.iter().map(|m| (m.mean, m.std()))),
        warnings: WarningSummary {
            partial_coverage_locations,
            failed_buckets,
            failed_trucks,
            failed_dumps,
        },
    };

    Ok(ReportBundle {
        buckets: bucket_rows,
        trucks: truck_rows,
        dumps: dump_rows,
        errors,
        summary,
        plots,
    })
}

fn gather_samples(
    id: &str,
    entity: &'static str,
    cycles: &[&HaulCycle],
    dig_by_id: &HashMap<&str, &DigEvent>,
    config: &PipelineConfig,
    inputs: &Inputs,
    cache: &EstimationCache,
) -> Result<Vec<crate::bucket::BucketSamples>> {
    cycles
        .iter()
        .map(|cycle| {
            let dig = dig_by_id.get(cycle.dig_event_id.as_str()).ok_or_else(|| {
                Error::estimation(
                    entity,
                    id,
                    format!("cycle references unknown dig `{}`", cycle.dig_event_id),
                )
            })?;
            crate::bucket::collect_bucket_samples_cached(
                dig,
                &inputs.model,
                &config.kernel,
                config,
                Some(cache),
            )
            .map_err(|e| Error::estimation(entity, id, error_message(e)))
        })
        .collect()
}

fn error_message(e: Error) -> String {
    match e {
        Error::Estimation { message, .. } => message,
        other => other.to_string(),
    }
}

fn stage_summary(items: impl Iterator<Item = (f64, f64)>) -> StageSummary {
    let mut count = 0usize;
    let mut sum_mean = 0.0;
    let mut sum_std = 0.0;
    let mut min_std = f64::INFINITY;
    let mut max_std = f64::NEG_INFINITY;
    for (mean, std) in items {
        count += 1;
        sum_mean += mean;
        sum_std += std;
        min_std = min_std.min(std);
        max_std = max_std.max(std);
    }
    if count == 0 {
        return StageSummary::default();
    }
    StageSummary {
        count,
        mean_grade: sum_mean / count as f64,
        mean_std: sum_std / count as f64,
        min_std,
        max_std,
    }
}

/// pdf/cdf table of a retained bucket mixture on a 512-point grid spanning
/// the matched mean +/- 5 matched standard deviations, plus the matched
/// single-Gaussian pdf.
pub fn emit_plot_data(estimate: &BucketEstimate, points: usize) -> Result<Vec<PlotRow>> {
    let mixture = estimate.components.as_ref().ok_or_else(|| {
        Error::InvalidArgument(format!(
            "components not retained for dig {}",
            estimate.dig_event_id
        ))
    })?;
    if points < 2 {
        return Err(Error::InvalidArgument("plot grid needs at least 2 points".into()));
    }
    let matched_mix = GaussianMixture::new(vec![(1.0, estimate.matched)])?;
    let s = estimate.matched.std();
    let lo = estimate.matched.mean - 5.0 * s;
    let step = 10.0 * s / (points - 1) as f64;
    (0..points)
        .map(|i| {
            let x = lo + i as f64 * step;
            Ok(PlotRow {
                x,
                pdf: gmm::pdf(mixture, x)?,
                cdf: gmm::cdf(mixture, x),
                matched_pdf: gmm::pdf(&matched_mix, x)?,
            })
        })
        .collect()
}

/// Write the report bundle: `buckets.csv`, `trucks.csv`, `dumps.csv`,
/// `errors.csv`, `summary.json` and one `plot_<dig_id>.csv` per requested
/// plot. All files use LF line endings and 9-significant-digit floats.
pub fn write_reports(bundle: &ReportBundle, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = report_writer(&dir.join("buckets.csv"))?;
    writeln!(w, "{BUCKETS_REPORT_HEADER}")?;
    for r in &bundle.buckets {
        writeln!(
            w,
            "{},{},{},{}",
            r.dig_event_id,
            fmt_float(r.mean),
            fmt_float(r.std),
            r.n_components
        )?;
    }
    w.flush()?;

    let mut w = report_writer(&dir.join("trucks.csv"))?;
    writeln!(w, "{TRUCKS_REPORT_HEADER}")?;
    for r in &bundle.trucks {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.truck_id,
            fmt_float(r.mean),
            fmt_float(r.std),
            r.n_buckets,
            r.n_simulations
        )?;
    }
    w.flush()?;

    let mut w = report_writer(&dir.join("dumps.csv"))?;
    writeln!(w, "{DUMPS_REPORT_HEADER}")?;
    for r in &bundle.dumps {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.dump_id,
            r.mode.as_str(),
            r.window_index,
            r.n_trucks,
            r.n_buckets,
            fmt_float(r.mean),
            fmt_float(r.std)
        )?;
    }
    w.flush()?;

    let mut w = report_writer(&dir.join("errors.csv"))?;
    writeln!(w, "{ERRORS_REPORT_HEADER}")?;
    for r in &bundle.errors {
        writeln!(w, "{},{},{}", r.entity, r.id, csv_quote(&r.message))?;
    }
    w.flush()?;

    let summary_json = serde_json::to_string_pretty(&rounded_summary(&bundle.summary))
        .map_err(|e| Error::Numerical(e.to_string()))?;
    std::fs::write(dir.join("summary.json"), summary_json + "\n")?;

    for (dig_id, rows) in &bundle.plots {
        let mut w = report_writer(&dir.join(format!("plot_{dig_id}.csv")))?;
        writeln!(w, "{PLOT_HEADER}")?;
        for r in rows {
            writeln!(
                w,
                "{},{},{},{}",
                fmt_float(r.x),
                fmt_float(r.pdf),
                fmt_float(r.cdf),
                fmt_float(r.matched_pdf)
            )?;
        }
        w.flush()?;
    }
    Ok(())
}

fn report_writer(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}

/// Free-text messages may contain commas; standard CSV quoting.
fn csv_quote(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Round a summary's floats to the report precision so the JSON is stable.
fn rounded_summary(summary: &Summary) -> Summary {
    let round_stage = |s: StageSummary| StageSummary {
        count: s.count,
        mean_grade: round9(s.mean_grade),
        mean_std: round9(s.mean_std),
        min_std: round9(s.min_std),
        max_std: round9(s.max_std),
    };
    Summary {
        buckets: round_stage(summary.buckets),
        trucks: round_stage(summary.trucks),
        dumps_correlated: round_stage(summary.dumps_correlated),
        dumps_window: round_stage(summary.dumps_window),
        warnings: summary.warnings,
    }
}

fn round9(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    fmt_float(x).parse().expect("formatted float")
}
