//! Input/output formats.
//!
//! Three fixed CSV schemas (UTF-8, LF, '.' decimal separator, header
//! required):
//!
//! - blocks: `id,x,y,z,dx,dy,dz,mean_fe,std_fe,bench`
//! - digs:   `dig_event_id,x,y,z,bench,timestamp`
//! - cycles: `dig_event_id,truck_id,dump_id,timestamp`
//!
//! Floats are serialized with 9 significant digits, which keeps report files
//! byte-stable and makes the write/read round trip exact for values that
//! carry at most 9 significant decimal digits (everything the synthetic
//! generator emits).

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::block_model::{Block, BlockModel};
use crate::error::{Error, Result};
use crate::haul::HaulCycle;

pub const BLOCKS_HEADER: &str = "id,x,y,z,dx,dy,dz,mean_fe,std_fe,bench";
pub const DIGS_HEADER: &str = "dig_event_id,x,y,z,bench,timestamp";
pub const CYCLES_HEADER: &str = "dig_event_id,truck_id,dump_id,timestamp";

/// A recorded bucket dig event: where the bucket engaged the ground.
#[derive(Debug, Clone, PartialEq)]
pub struct DigEvent {
    pub dig_event_id: String,
    /// Sensed position, meters.
    pub position: [f64; 3],
    pub bench_id: String,
    /// Seconds since epoch.
    pub timestamp: u64,
}

/// File locations of the three input tables.
#[derive(Debug, Clone)]
pub struct InputPaths {
    pub blocks: PathBuf,
    pub digs: PathBuf,
    pub cycles: PathBuf,
}

/// Validated in-memory inputs.
pub struct Inputs {
    pub model: BlockModel,
    pub digs: Vec<DigEvent>,
    pub cycles: Vec<HaulCycle>,
}

/// Load and cross-validate the three tables: schema and per-row value checks
/// with line numbers, duplicate-id detection, and foreign keys (cycle digs
/// must exist, dig benches must exist in the block model).
pub fn load_inputs(paths: &InputPaths) -> Result<Inputs> {
    let blocks = read_blocks(&paths.blocks)?;
    let model = BlockModel::new(blocks)?;
    let digs = read_digs(&paths.digs)?;
    for (i, dig) in digs.iter().enumerate() {
        if model.bench_extent(&dig.bench_id).is_none() {
            return Err(Error::Load {
                path: paths.digs.clone(),
                line: i + 2,
                message: format!(
                    "dig {} references bench `{}` with no blocks",
                    dig.dig_event_id, dig.bench_id
                ),
            });
        }
    }
    let cycles = read_cycles(&paths.cycles)?;
    let dig_ids: HashSet<&str> = digs.iter().map(|d| d.dig_event_id.as_str()).collect();
    for (i, cycle) in cycles.iter().enumerate() {
        if !dig_ids.contains(cycle.dig_event_id.as_str()) {
            return Err(Error::Load {
                path: paths.cycles.clone(),
                line: i + 2,
                message: format!("unknown dig_event_id `{}`", cycle.dig_event_id),
            });
        }
    }
    Ok(Inputs { model, digs, cycles })
}

pub fn read_blocks(path: &Path) -> Result<Vec<Block>> {
    let mut seen = HashSet::new();
    read_rows(path, BLOCKS_HEADER, 10, |fields, line| {
        let id = parse_u64(fields[0], "id", path, line)?;
        if !seen.insert(id) {
            return Err(load_err(path, line, format!("duplicate block id {id}")));
        }
        let block = Block {
            id,
            centroid: [
                parse_f64(fields[1], "x", path, line)?,
                parse_f64(fields[2], "y", path, line)?,
                parse_f64(fields[3], "z", path, line)?,
            ],
            dims: [
                parse_f64(fields[4], "dx", path, line)?,
                parse_f64(fields[5], "dy", path, line)?,
                parse_f64(fields[6], "dz", path, line)?,
            ],
            mean_grade: parse_f64(fields[7], "mean_fe", path, line)?,
            std_grade: parse_f64(fields[8], "std_fe", path, line)?,
            bench_id: require_nonempty(fields[9], "bench", path, line)?,
        };
        block
            .validate()
            .map_err(|e| load_err(path, line, e.to_string()))?;
        Ok(block)
    })
}

pub fn read_digs(path: &Path) -> Result<Vec<DigEvent>> {
    let mut seen = HashSet::new();
    read_rows(path, DIGS_HEADER, 6, |fields, line| {
        let id = require_nonempty(fields[0], "dig_event_id", path, line)?;
        if !seen.insert(id.clone()) {
            return Err(load_err(path, line, format!("duplicate dig_event_id `{id}`")));
        }
        Ok(DigEvent {
            dig_event_id: id,
            position: [
                parse_f64(fields[1], "x", path, line)?,
                parse_f64(fields[2], "y", path, line)?,
                parse_f64(fields[3], "z", path, line)?,
            ],
            bench_id: require_nonempty(fields[4], "bench", path, line)?,
            timestamp: parse_u64(fields[5], "timestamp", path, line)?,
        })
    })
}

pub fn read_cycles(path: &Path) -> Result<Vec<HaulCycle>> {
    read_rows(path, CYCLES_HEADER, 4, |fields, line| {
        Ok(HaulCycle {
            dig_event_id: require_nonempty(fields[0], "dig_event_id", path, line)?,
            truck_id: require_nonempty(fields[1], "truck_id", path, line)?,
            dump_id: require_nonempty(fields[2], "dump_id", path, line)?,
            timestamp: parse_u64(fields[3], "timestamp", path, line)?,
        })
    })
}

fn read_rows<T>(
    path: &Path,
    header: &str,
    columns: usize,
    mut parse: impl FnMut(&[&str], usize) -> Result<T>,
) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| load_err(path, 0, format!("cannot open: {e}")))?;
    let reader = BufReader::new(file);
    let mut rows = Vec::new();
    let mut lines = reader.lines();
    let first = lines
        .next()
        .transpose()
        .map_err(|e| load_err(path, 1, e.to_string()))?
        .ok_or_else(|| load_err(path, 1, format!("empty file, expected header `{header}`")))?;
    if first.trim_end_matches('\r') != header {
        return Err(load_err(
            path,
            1,
            format!("bad header `{first}`, expected `{header}`"),
        ));
    }
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|e| load_err(path, line_no, e.to_string()))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns {
            return Err(load_err(
                path,
                line_no,
                format!("expected {columns} fields, got {}", fields.len()),
            ));
        }
        rows.push(parse(&fields, line_no)?);
    }
    Ok(rows)
}

pub fn write_blocks(path: &Path, blocks: &[Block]) -> Result<()> {
    let mut w = writer(path)?;
    writeln!(w, "{BLOCKS_HEADER}")?;
    for b in blocks {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            b.id,
            fmt_float(b.centroid[0]),
            fmt_float(b.centroid[1]),
            fmt_float(b.centroid[2]),
            fmt_float(b.dims[0]),
            fmt_float(b.dims[1]),
            fmt_float(b.dims[2]),
            fmt_float(b.mean_grade),
            fmt_float(b.std_grade),
            b.bench_id,
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_digs(path: &Path, digs: &[DigEvent]) -> Result<()> {
    let mut w = writer(path)?;
    writeln!(w, "{DIGS_HEADER}")?;
    for d in digs {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            d.dig_event_id,
            fmt_float(d.position[0]),
            fmt_float(d.position[1]),
            fmt_float(d.position[2]),
            d.bench_id,
            d.timestamp,
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_cycles(path: &Path, cycles: &[HaulCycle]) -> Result<()> {
    let mut w = writer(path)?;
    writeln!(w, "{CYCLES_HEADER}")?;
    for c in cycles {
        writeln!(
            w,
            "{},{},{},{}",
            c.dig_event_id, c.truck_id, c.dump_id, c.timestamp
        )?;
    }
    w.flush()?;
    Ok(())
}

fn writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn load_err(path: &Path, line: usize, message: String) -> Error {
    Error::Load {
        path: path.to_path_buf(),
        line,
        message,
    }
}

fn parse_f64(field: &str, name: &str, path: &Path, line: usize) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| load_err(path, line, format!("{name}: cannot parse `{field}` as a number")))?;
    if !v.is_finite() {
        return Err(load_err(path, line, format!("{name}: non-finite value `{field}`")));
    }
    Ok(v)
}

fn parse_u64(field: &str, name: &str, path: &Path, line: usize) -> Result<u64> {
    field.parse().map_err(|_| {
        load_err(
            path,
            line,
            format!("{name}: cannot parse `{field}` as a nonnegative integer"),
        )
    })
}

fn require_nonempty(field: &str, name: &str, path: &Path, line: usize) -> Result<String> {
    if field.is_empty() {
        return Err(load_err(path, line, format!("{name}: empty field")));
    }
    Ok(field.to_string())
}

/// Format with 9 significant digits, shortest of fixed/scientific notation
/// (printf `%.9g` style, with an unpadded exponent).
pub fn fmt_float(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    debug_assert!(x.is_finite(), "refusing to serialize non-finite {x}");
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific notation");
    let exp: i32 = exp.parse().expect("exponent");
    let neg = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    debug_assert_eq!(digits.len(), 9);

    let body = if !(-4..9).contains(&exp) {
        let rest = trim_zeros(&digits[1..]);
        if rest.is_empty() {
            format!("{}e{exp}", &digits[..1])
        } else {
            format!("{}.{rest}e{exp}", &digits[..1])
        }
    } else if exp >= 0 {
        let split = exp as usize + 1;
        let frac = trim_zeros(&digits[split..]);
        if frac.is_empty() {
            digits[..split].to_string()
        } else {
            format!("{}.{frac}", &digits[..split])
        }
    } else {
        format!("0.{}{}", "0".repeat(-(exp + 1) as usize), trim_zeros(&digits))
    };
    if neg {
        format!("-{body}")
    } else {
        body
    }
}

fn trim_zeros(digits: &str) -> &str {
    digits.trim_end_matches('0')
}
