//! Parameter sweeps: a base scenario plus axes of values substituted by
//! dot-path, executed in parallel, reported as a CSV table.

use serde::Deserialize;
use serde_json::Value;

use crate::scenario::{self, CliError, Execution, Scenario, SCHEMA};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub schema: String,
    /// Base scenario; axis values are written into it before parsing.
    pub scenario: Value,
    pub axes: Vec<Axis>,
    /// Metric columns. When absent, the sorted metric names of the first
    /// grid point are used.
    #[serde(default)]
    pub metrics: Option<Vec<String>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    /// Dot path into the scenario JSON, e.g. "protocol.params.beta".
    pub path: String,
    pub values: Vec<Value>,
}

const MAX_POINTS: usize = 1_000_000;

pub fn parse_sweep(text: &str) -> Result<SweepSpec, CliError> {
    let spec: SweepSpec =
        serde_json::from_str(text).map_err(|e| CliError::Input(format!("sweep: {e}")))?;
    if spec.schema != SCHEMA {
        return scenario::input_err(format!(
            "field schema: expected \"{SCHEMA}\", got \"{}\"",
            spec.schema
        ));
    }
    if spec.axes.is_empty() {
        return scenario::input_err("field axes: at least one axis required");
    }
    let mut points: usize = 1;
    for (i, axis) in spec.axes.iter().enumerate() {
        if axis.values.is_empty() {
            return scenario::input_err(format!("field axes[{i}].values: must be non-empty"));
        }
        points = points.saturating_mul(axis.values.len());
    }
    if points > MAX_POINTS {
        return scenario::input_err(format!(
            "field axes: grid has {points} points, limit is {MAX_POINTS}"
        ));
    }
    Ok(spec)
}

/// Write `value` at a dot path. Object keys may be created at the final
/// segment; intermediate segments and array indices must already exist.
fn set_path(root: &mut Value, path: &str, value: &Value) -> Result<(), CliError> {
    let mut cur = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        match cur {
            Value::Object(map) => {
                if last {
                    map.insert((*seg).to_string(), value.clone());
                    return Ok(());
                }
                cur = map.get_mut(*seg).ok_or_else(|| {
                    CliError::Input(format!("axis path \"{path}\": missing key \"{seg}\""))
                })?;
            }
            Value::Array(arr) => {
                let idx: usize = seg.parse().map_err(|_| {
                    CliError::Input(format!("axis path \"{path}\": \"{seg}\" is not an index"))
                })?;
                let len = arr.len();
                let slot = arr.get_mut(idx).ok_or_else(|| {
                    CliError::Input(format!(
                        "axis path \"{path}\": index {idx} out of range (len {len})"
                    ))
                })?;
                if last {
                    *slot = value.clone();
                    return Ok(());
                }
                cur = slot;
            }
            _ => {
                return scenario::input_err(format!(
                    "axis path \"{path}\": segment \"{seg}\" does not address an object or array"
                ))
            }
        }
    }
    unreachable!("empty axis path rejected by split");
}

/// One grid point: the chosen axis values in axis order.
fn grid(spec: &SweepSpec) -> Vec<Vec<&Value>> {
    let mut points: Vec<Vec<&Value>> = vec![Vec::new()];
    for axis in &spec.axes {
        let mut next = Vec::with_capacity(points.len() * axis.values.len());
        for p in &points {
            for v in &axis.values {
                let mut q = p.clone();
                q.push(v);
                next.push(q);
            }
        }
        points = next;
    }
    points
}

fn scenario_at(spec: &SweepSpec, point: &[&Value]) -> Result<Scenario, CliError> {
    let mut doc = spec.scenario.clone();
    for (axis, v) in spec.axes.iter().zip(point) {
        set_path(&mut doc, &axis.path, v)?;
    }
    let text = serde_json::to_string(&doc).expect("scenario value serializes");
    scenario::parse_scenario(&text)
}

fn csv_cell(v: &Value) -> String {
    match v {
        Value::Number(n) => match n.as_f64() {
            Some(x) => format!("{x:.16e}"),
            None => n.to_string(),
        },
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Execute the whole grid and render the CSV table. Point order and the
/// per-point RNG streams are fixed by the sweep file alone, so output does not
/// depend on the number of worker threads.
pub fn run_sweep(spec: &SweepSpec, jobs: Option<usize>) -> Result<String, CliError> {
    let points = grid(spec);
    let execute_point = |point: &Vec<&Value>| -> Result<Execution, CliError> {
        let sc = scenario_at(spec, point)?;
        scenario::execute(&sc)
    };
    let results: Vec<Result<Execution, CliError>> = match jobs {
        Some(n) if n <= 1 => points.iter().map(execute_point).collect(),
        _ => {
            use rayon::prelude::*;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs.unwrap_or(0))
                .build()
                .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
            pool.install(|| points.par_iter().map(execute_point).collect())
        }
    };
    let mut execs = Vec::with_capacity(results.len());
    for r in results {
        execs.push(r?);
    }

    let metric_names: Vec<String> = match &spec.metrics {
        Some(names) => names.clone(),
        None => {
            let first = execs.first().expect("non-empty grid");
            let mut names: Vec<String> =
                first.report.analytic.metrics.keys().cloned().collect();
            if let Some(s) = &first.report.sampled {
                for k in s.metric_means.keys() {
                    if !names.contains(k) {
                        names.push(k.clone());
                    }
                }
            }
            names.sort();
            names
        }
    };

    let mut out = String::new();
    let header: Vec<String> = spec
        .axes
        .iter()
        .map(|a| a.path.clone())
        .chain(metric_names.iter().cloned())
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for (point, exec) in points.iter().zip(&execs) {
        let mut row: Vec<String> = point.iter().map(|v| csv_cell(v)).collect();
        for name in &metric_names {
            match scenario::metric_value(exec, name) {
                Some(v) => row.push(format!("{v:.16e}")),
                None => {
                    return scenario::input_err(format!(
                        "field metrics: metric \"{name}\" not produced by the scenario"
                    ))
                }
            }
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    Ok(out)
}
