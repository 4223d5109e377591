//! Grid sweeps over config keys.
//!
//! A grid file maps dotted config keys to lists of values:
//!
//! ```toml
//! "agent.lambda" = [1.0, 5.0, 10.0]
//! agent.mebs_ratio = [0.5, 0.9]
//! ```
//!
//! Every point of the cross product runs in its own subdirectory.

use std::fs;
use std::path::{Path, PathBuf};

use toml::Value;

use super::config::{ExperimentConfig, ResolvedConfig};
use super::runner::{run_experiment, RunOutput};
use crate::{Error, Result};

pub const GRID_POINT_FILE: &str = "grid_point.toml";

/// One key assignment per grid axis, in key order.
pub type GridPoint = Vec<(String, Value)>;

fn flatten(prefix: &str, value: &Value, out: &mut Vec<(String, Vec<Value>)>) -> Result<()> {
    match value {
        Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out)?;
            }
            Ok(())
        }
        Value::Array(values) if !values.is_empty() => {
            out.push((prefix.to_string(), values.clone()));
            Ok(())
        }
        Value::Array(_) => Err(Error::config(format!("grid key {prefix:?} has no values"))),
        _ => Err(Error::config(format!(
            "grid key {prefix:?} must map to a list of values"
        ))),
    }
}

/// Cross product of the grid axes. An empty grid yields one empty point.
pub fn expand_grid(grid: &Value) -> Result<Vec<GridPoint>> {
    let mut axes = Vec::new();
    flatten("", grid, &mut axes)?;
    let mut points: Vec<GridPoint> = vec![Vec::new()];
    for (key, values) in &axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((key.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    Ok(points)
}

/// Sets a dotted key inside a config document, creating tables as needed.
pub fn set_dotted(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = doc;
    for (i, part) in parts.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("grid key {key:?}: {part:?} is not inside a table")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        cur = table
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Default::default()));
    }
    Err(Error::config("empty grid key"))
}

fn point_dir_name(index: usize, point: &GridPoint) -> String {
    let mut name = format!("p{index:03}");
    for (key, value) in point {
        let leaf = key.rsplit('.').next().unwrap_or(key);
        name.push('_');
        name.push_str(leaf);
        name.push('=');
        name.push_str(&value.to_string());
    }
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._=-".contains(c) {
                c
            } else {
                '-'
            }
        })
        .collect()
}

fn point_document(point: &GridPoint) -> String {
    let mut t = toml::Table::new();
    for (k, v) in point {
        t.insert(k.clone(), v.clone());
    }
    toml::to_string(&t).unwrap_or_default()
}

#[derive(Debug)]
pub struct SweepPoint {
    pub dir: PathBuf,
    pub point: GridPoint,
    pub config: ResolvedConfig,
}

/// Expands and resolves every grid point. Fails before anything runs if any
/// point is invalid.
pub fn plan_sweep(base: &Value, grid: &Value, out_dir: &Path) -> Result<Vec<SweepPoint>> {
    expand_grid(grid)?
        .into_iter()
        .enumerate()
        .map(|(i, point)| {
            let mut doc = base.clone();
            for (k, v) in &point {
                set_dotted(&mut doc, k, v.clone())?;
            }
            let config = ExperimentConfig::from_value(doc)
                .and_then(|c| c.resolve())
                .map_err(|e| Error::config(format!("grid point {}: {e}", point_document(&point).trim())))?;
            Ok(SweepPoint {
                dir: out_dir.join(point_dir_name(i, &point)),
                point,
                config,
            })
        })
        .collect()
}

/// Runs every grid point into its own subdirectory.
pub fn sweep(base: &Value, grid: &Value, out_dir: &Path) -> Result<Vec<(SweepPoint, Vec<RunOutput>)>> {
    let points = plan_sweep(base, grid, out_dir)?;
    let mut results = Vec::with_capacity(points.len());
    for p in points {
        fs::create_dir_all(&p.dir)?;
        fs::write(p.dir.join(GRID_POINT_FILE), point_document(&p.point))?;
        let outs = run_experiment(&p.config, &p.dir)?;
        results.push((p, outs));
    }
    Ok(results)
}

pub fn parse_toml(text: &str, what: &str) -> Result<Value> {
    text.parse::<toml::Table>()
        .map(Value::Table)
        .map_err(|e| Error::config(format!("invalid {what}: {e}")))
}

pub fn load_toml(path: &Path, what: &str) -> Result<Value> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {what} {}: {e}", path.display())))?;
    parse_toml(&text, what)
}
