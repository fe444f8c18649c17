//! Command-line driver: scenario synthesis, batch estimation, Monte-Carlo
//! verification and per-bucket plot data.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use oregrade::bucket::{estimate_bucket_detailed, Retain};
use oregrade::config::PipelineConfig;
use oregrade::error::Error;
use oregrade::io::{self, InputPaths};
use oregrade::oracle::{mc_oracle_bucket, mc_oracle_truck};
use oregrade::pipeline::{run_pipeline, write_reports};
use oregrade::synth::{generate_scenario, ScenarioSpec};

#[derive(Parser)]
#[command(
    name = "oregrade",
    version,
    about = "Grade uncertainty for excavated material: bucket, truck and dump moments from a prior block model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct InputArgs {
    /// Block model CSV (id,x,y,z,dx,dy,dz,mean_fe,std_fe,bench).
    #[arg(long)]
    blocks: PathBuf,
    /// Dig events CSV (dig_event_id,x,y,z,bench,timestamp).
    #[arg(long)]
    digs: PathBuf,
    /// Haul cycles CSV (dig_event_id,truck_id,dump_id,timestamp).
    #[arg(long)]
    cycles: PathBuf,
}

#[derive(Args, Default)]
struct ConfigArgs {
    /// JSON pipeline config; flags below override individual fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Mixture weighting: `equal` or `idw2`.
    #[arg(long)]
    weight_mode: Option<String>,
    /// Dump aggregation window in seconds (whole replay when omitted).
    #[arg(long)]
    window_seconds: Option<f64>,
    /// Bucket volume, m^3.
    #[arg(long)]
    bucket_volume: Option<f64>,
    /// Sampling grid interval, meters.
    #[arg(long)]
    grid_interval: Option<f64>,
    /// Sets both the neighbor and the sampling XY radius, meters.
    #[arg(long)]
    r_xy: Option<f64>,
}

impl ConfigArgs {
    fn build(&self) -> Result<PipelineConfig, Error> {
        let mut config = match &self.config {
            Some(path) => PipelineConfig::from_json_file(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(w) = self.workers {
            config.workers = w;
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(mode) = &self.weight_mode {
            config.weight_mode = mode.parse()?;
        }
        if let Some(w) = self.window_seconds {
            config.window_seconds = Some(w);
        }
        if let Some(v) = self.bucket_volume {
            config.bucket_volume = v;
        }
        if let Some(g) = self.grid_interval {
            config.grid_interval = g;
        }
        if let Some(r) = self.r_xy {
            config.r_xy_neighbor = r;
            config.r_xy_sampling = r;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario (blocks.csv, digs.csv, cycles.csv).
    Synth {
        /// Scenario spec JSON; the built-in reference scenario when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value = "scenario")]
        out_dir: PathBuf,
    },
    /// Run the full estimation pipeline and write the report bundle.
    Estimate {
        #[command(flatten)]
        inputs: InputArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "reports")]
        out_dir: PathBuf,
        /// Dig event ids to emit pdf/cdf plot data for (repeatable).
        #[arg(long = "plot-dig")]
        plot_digs: Vec<String>,
    },
    /// Monte-Carlo verification of selected buckets and trucks.
    Oracle {
        #[command(flatten)]
        inputs: InputArgs,
        #[command(flatten)]
        config: ConfigArgs,
        /// Dig event ids to verify (repeatable).
        #[arg(long = "dig-id")]
        dig_ids: Vec<String>,
        /// Truck ids to verify (repeatable).
        #[arg(long = "truck-id")]
        truck_ids: Vec<String>,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
    /// Emit pdf/cdf plot data for one bucket.
    Plot {
        /// Block model CSV.
        #[arg(long)]
        blocks: PathBuf,
        /// Dig events CSV.
        #[arg(long)]
        digs: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        dig_id: String,
        #[arg(long, default_value = "plot.csv")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e.downcast_ref::<Error>() {
                Some(Error::Config(_)) | Some(Error::InvalidArgument(_)) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth { spec, out_dir } => {
            let spec = match spec {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)?;
                    serde_json_from(&text)?
                }
                None => ScenarioSpec::default(),
            };
            let scenario = generate_scenario(&spec)?;
            std::fs::create_dir_all(&out_dir)?;
            io::write_blocks(&out_dir.join("blocks.csv"), scenario.model.blocks())?;
            io::write_digs(&out_dir.join("digs.csv"), &scenario.digs)?;
            io::write_cycles(&out_dir.join("cycles.csv"), &scenario.cycles)?;
            println!(
                "wrote {} blocks, {} digs, {} cycles to {}",
                scenario.model.len(),
                scenario.digs.len(),
                scenario.cycles.len(),
                out_dir.display()
            );
            Ok(())
        }
        Command::Estimate {
            inputs,
            config,
            out_dir,
            plot_digs,
        } => {
            let mut config = config.build()?;
            config.plot_dig_ids.extend(plot_digs);
            let loaded = io::load_inputs(&InputPaths {
                blocks: inputs.blocks,
                digs: inputs.digs,
                cycles: inputs.cycles,
            })?;
            let bundle = run_pipeline(&config, &loaded)?;
            write_reports(&bundle, &out_dir)?;
            println!(
                "estimated {} buckets, {} trucks, {} dump rows ({} errors) -> {}",
                bundle.buckets.len(),
                bundle.trucks.len(),
                bundle.dumps.len(),
                bundle.errors.len(),
                out_dir.display()
            );
            Ok(())
        }
        Command::Oracle {
            inputs,
            config,
            dig_ids,
            truck_ids,
            samples,
        } => {
            let config = config.build()?;
            let loaded = io::load_inputs(&InputPaths {
                blocks: inputs.blocks,
                digs: inputs.digs,
                cycles: inputs.cycles,
            })?;
            if dig_ids.is_empty() && truck_ids.is_empty() {
                anyhow::bail!("pass at least one --dig-id or --truck-id");
            }
            println!("entity,id,analytic_mean,analytic_std,oracle_mean,oracle_std,se_mean,n_samples");
            for dig_id in &dig_ids {
                let dig = loaded
                    .digs
                    .iter()
                    .find(|d| &d.dig_event_id == dig_id)
                    .ok_or_else(|| anyhow::anyhow!("unknown dig id `{dig_id}`"))?;
                let analytic =
                    oregrade::bucket::estimate_bucket(dig, &loaded.model, &config.kernel, &config)?;
                let oracle = mc_oracle_bucket(
                    dig,
                    &loaded.model,
                    &config.kernel,
                    &config,
                    samples,
                    config.seed,
                )?;
                println!(
                    "bucket,{dig_id},{},{},{},{},{},{}",
                    io::fmt_float(analytic.matched.mean),
                    io::fmt_float(analytic.std),
                    io::fmt_float(oracle.mean),
                    io::fmt_float(oracle.std),
                    io::fmt_float(oracle.se_mean),
                    oracle.n_samples
                );
            }
            for truck_id in &truck_ids {
                let dig_ids_of_truck: Vec<&str> = loaded
                    .cycles
                    .iter()
                    .filter(|c| &c.truck_id == truck_id)
                    .map(|c| c.dig_event_id.as_str())
                    .collect();
                if dig_ids_of_truck.is_empty() {
                    anyhow::bail!("unknown truck id `{truck_id}`");
                }
                let digs: Vec<oregrade::io::DigEvent> = loaded
                    .digs
                    .iter()
                    .filter(|d| dig_ids_of_truck.contains(&d.dig_event_id.as_str()))
                    .cloned()
                    .collect();
                let buckets = digs
                    .iter()
                    .map(|d| {
                        oregrade::bucket::collect_bucket_samples(
                            d,
                            &loaded.model,
                            &config.kernel,
                            &config,
                        )
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let analytic =
                    oregrade::haul::estimate_truck(truck_id, &buckets, &loaded.model, &config.kernel)?;
                let oracle = mc_oracle_truck(
                    &digs,
                    &loaded.model,
                    &config.kernel,
                    &config,
                    samples,
                    config.seed,
                )?;
                println!(
                    "truck,{truck_id},{},{},{},{},{},{}",
                    io::fmt_float(analytic.matched.mean),
                    io::fmt_float(analytic.matched.std()),
                    io::fmt_float(oracle.mean),
                    io::fmt_float(oracle.std),
                    io::fmt_float(oracle.se_mean),
                    oracle.n_samples
                );
            }
            Ok(())
        }
        Command::Plot {
            blocks,
            digs,
            config,
            dig_id,
            out,
        } => {
            let config = config.build()?;
            let model = oregrade::block_model::BlockModel::new(io::read_blocks(&blocks)?)?;
            let all_digs = io::read_digs(&digs)?;
            let dig = all_digs
                .iter()
                .find(|d| d.dig_event_id == dig_id)
                .ok_or_else(|| anyhow::anyhow!("unknown dig id `{dig_id}`"))?;
            let estimate = estimate_bucket_detailed(
                dig,
                &model,
                &config.kernel,
                &config,
                Retain {
                    components: true,
                    samples: false,
                },
            )?;
            let rows = oregrade::pipeline::emit_plot_data(&estimate, 512)?;
            let mut text = String::from("x,pdf,cdf,matched_pdf\n");
            for r in rows {
                text.push_str(&format!(
                    "{},{},{},{}\n",
                    io::fmt_float(r.x),
                    io::fmt_float(r.pdf),
                    io::fmt_float(r.cdf),
                    io::fmt_float(r.matched_pdf)
                ));
            }
            std::fs::write(&out, text)?;
            println!(
                "wrote plot data for {dig_id} (mean {}, std {}) to {}",
                io::fmt_float(estimate.matched.mean),
                io::fmt_float(estimate.std),
                out.display()
            );
            Ok(())
        }
    }
}

fn serde_json_from(text: &str) -> Result<ScenarioSpec, Error> {
    let spec: ScenarioSpec =
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}
