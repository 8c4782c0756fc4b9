//! Scenario schema (qubus/1) and single-scenario execution shared by the
//! `run` and `sweep` subcommands.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use qubus::measure::{measure, MeasurementModel, Outcome};
use qubus::protocols::{self, FinalState, ProtocolResult};
use qubus::state::{BusOp, HybridState, Trajectory};

type C64 = Complex64;

pub const SCHEMA: &str = "qubus/1";

/// Input error (exit 2) vs simulation error (exit 3).
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl From<qubus::error::QubusError> for CliError {
    fn from(e: qubus::error::QubusError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub fn input_err<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Input(msg.into()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: String,
    pub n_qubits: usize,
    pub initial: Initial,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ops: Option<Vec<BusOp>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<ProtocolSpec>,
    /// Measurement descriptor, "none", or absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<Value>,
    #[serde(default)]
    pub shots: u64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Initial {
    pub qubits: QubitInit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bus: Option<ComplexIn>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QubitInit {
    Preset(String),
    Amps(Vec<ComplexIn>),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexIn {
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

impl From<ComplexIn> for C64 {
    fn from(z: ComplexIn) -> C64 {
        C64::new(z.re, z.im)
    }
}

fn complex_out(z: C64) -> Value {
    serde_json::json!({ "re": z.re, "im": z.im })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    pub name: String,
    #[serde(default)]
    pub params: Value,
}

pub fn parse_scenario(text: &str) -> Result<Scenario, CliError> {
    let s: Scenario =
        serde_json::from_str(text).map_err(|e| CliError::Input(format!("scenario: {e}")))?;
    if s.schema != SCHEMA {
        return input_err(format!("field schema: expected \"{SCHEMA}\", got \"{}\"", s.schema));
    }
    if s.n_qubits == 0 || s.n_qubits > 12 {
        return input_err("field n_qubits: must be in 1..=12");
    }
    match (&s.ops, &s.protocol) {
        (Some(_), Some(_)) => return input_err("fields ops/protocol: exactly one must be present"),
        (None, None) => return input_err("fields ops/protocol: exactly one must be present"),
        _ => {}
    }
    if let QubitInit::Preset(name) = &s.initial.qubits {
        if name != "plus_all" {
            return input_err(format!("field initial.qubits: unknown preset \"{name}\""));
        }
    }
    if let QubitInit::Amps(v) = &s.initial.qubits {
        if v.len() != 1 << s.n_qubits {
            return input_err(format!(
                "field initial.qubits: expected {} amplitudes, got {}",
                1 << s.n_qubits,
                v.len()
            ));
        }
    }
    if let Some(p) = &s.protocol {
        if !KNOWN_PROTOCOLS.contains(&p.name.as_str()) {
            return input_err(format!("field protocol.name: unknown protocol \"{}\"", p.name));
        }
    }
    measure_model(&s)?;
    Ok(s)
}

pub const KNOWN_PROTOCOLS: &[&str] = &[
    "qnd",
    "parity_displacement",
    "bucket_purification",
    "cphase_displacement",
    "cnot_displacement",
    "rotation_parity_number",
    "rotation_parity_homodyne",
    "rotation_only_cphase",
    "rotation_displacement_parity",
];

fn measure_model(s: &Scenario) -> Result<Option<MeasurementModel>, CliError> {
    match &s.measure {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(t)) if t == "none" => Ok(None),
        Some(v) => {
            let m: MeasurementModel = serde_json::from_value(v.clone())
                .map_err(|e| CliError::Input(format!("field measure: {e}")))?;
            Ok(Some(m))
        }
    }
}

fn qubit_amps(s: &Scenario) -> Vec<C64> {
    match &s.initial.qubits {
        QubitInit::Preset(_) => {
            let dim = 1usize << s.n_qubits;
            vec![C64::new((dim as f64).powf(-0.5), 0.0); dim]
        }
        QubitInit::Amps(v) => {
            let mut amps: Vec<C64> = v.iter().map(|&z| z.into()).collect();
            let norm: f64 = amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            for a in &mut amps {
                *a /= norm;
            }
            amps
        }
    }
}

fn bus_alpha(s: &Scenario) -> C64 {
    s.initial.bus.map(Into::into).unwrap_or_else(|| C64::new(0.0, 0.0))
}

/// Per-shot generator: the key mixes the scenario seed with the shot index
/// so shot-level streams are independent of execution order.
pub fn shot_rng(seed: u64, shot: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&shot.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub generator: Generator,
    pub scenario: Scenario,
    pub analytic: Analytic,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampled: Option<Sampled>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Generator {
    pub name: &'static str,
    pub seeding: &'static str,
}

pub fn generator() -> Generator {
    Generator { name: "chacha8", seeding: "key bytes 0..8 = seed, 8..16 = shot index (LE)" }
}

#[derive(Debug, Clone, Serialize)]
pub struct Analytic {
    /// Final coherent branches (absent when the final state is a
    /// detector-induced mixture).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub branches: Option<Vec<BranchOut>>,
    pub reduced_density: Vec<Vec<Value>>,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchOut {
    pub label: usize,
    pub coeff: Value,
    pub bus: Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct Sampled {
    pub shots: u64,
    pub outcome_counts: BTreeMap<String, u64>,
    pub metric_means: BTreeMap<String, f64>,
    pub outcomes: Vec<Value>,
}

/// Per-stage bus amplitude per basis label, serialized for plotting.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryOut {
    pub schema: &'static str,
    pub stages: Vec<Vec<StagePoint>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StagePoint {
    pub label: usize,
    pub bus: Value,
}

pub fn trajectory_out(t: &Trajectory) -> TrajectoryOut {
    TrajectoryOut {
        schema: SCHEMA,
        stages: t
            .iter()
            .map(|stage| {
                let mut pts: Vec<StagePoint> = stage
                    .iter()
                    .map(|&(label, bus)| StagePoint { label, bus: complex_out(bus) })
                    .collect();
                pts.sort_by_key(|p| p.label);
                pts
            })
            .collect(),
    }
}

fn branches_out(s: &HybridState) -> Vec<BranchOut> {
    let mut out: Vec<BranchOut> = s
        .branches()
        .iter()
        .map(|b| BranchOut { label: b.label, coeff: complex_out(b.coeff), bus: complex_out(b.bus) })
        .collect();
    out.sort_by_key(|b| b.label);
    out
}

fn density_out(rho: &nalgebra::DMatrix<C64>) -> Vec<Vec<Value>> {
    (0..rho.nrows())
        .map(|i| (0..rho.ncols()).map(|j| complex_out(rho[(i, j)])).collect())
        .collect()
}

fn outcome_value(o: &Outcome) -> Value {
    serde_json::to_value(o).expect("outcome serializes")
}

fn outcome_key(o: &Outcome) -> Option<String> {
    match o {
        Outcome::Photons { n } => Some(format!("photons={n}")),
        Outcome::Click { click } => Some(if *click { "click" } else { "no_click" }.to_string()),
        Outcome::Quadrature { .. } => None,
    }
}

// metrics that do not depend on a sampled outcome; everything else is
// reported per shot
const ANALYTIC_KEYS: &[&str] = &[
    "error_exact",
    "error_quoted",
    "error_exact_overlap",
    "error_quoted_overlap",
    "separation",
    "concurrence",
    "phi_d",
    "gamma_gg",
    "gamma_ee",
    "bus_spread",
    "branch_phase",
];

fn param_f64(params: &Value, key: &str) -> Result<f64, CliError> {
    params
        .get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| CliError::Input(format!("field protocol.params.{key}: required number")))
}

fn param_f64_or(params: &Value, key: &str, default: f64) -> Result<f64, CliError> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(default),
        Some(v) => v
            .as_f64()
            .ok_or_else(|| CliError::Input(format!("field protocol.params.{key}: expected number"))),
    }
}

fn param_bool_or(params: &Value, key: &str, default: bool) -> Result<bool, CliError> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(default),
        Some(v) => v
            .as_bool()
            .ok_or_else(|| CliError::Input(format!("field protocol.params.{key}: expected bool"))),
    }
}

fn param_u64(params: &Value, key: &str) -> Result<u64, CliError> {
    params
        .get(key)
        .and_then(Value::as_u64)
        .ok_or_else(|| CliError::Input(format!("field protocol.params.{key}: required integer")))
}

fn need_qubits(s: &Scenario, n: usize) -> Result<(), CliError> {
    if s.n_qubits != n {
        return input_err(format!(
            "field n_qubits: protocol {} requires {n} qubit(s)",
            s.protocol.as_ref().map(|p| p.name.as_str()).unwrap_or("?")
        ));
    }
    Ok(())
}

fn run_protocol(
    s: &Scenario,
    rng: &mut ChaCha8Rng,
) -> Result<ProtocolResult, CliError> {
    let spec = s.protocol.as_ref().expect("protocol present");
    let p = &spec.params;
    let amps = qubit_amps(s);
    let r = match spec.name.as_str() {
        "qnd" => {
            need_qubits(s, 1)?;
            protocols::qnd_qubit_measurement(
                amps[0],
                amps[1],
                param_f64(p, "beta")?,
                param_f64_or(p, "excess_noise", 0.0)?,
                rng,
            )?
        }
        "parity_displacement" => {
            need_qubits(s, 2)?;
            let detector: MeasurementModel = match p.get("detector") {
                None | Some(Value::Null) => MeasurementModel::PhotonNumber,
                Some(v) => serde_json::from_value(v.clone()).map_err(|e| {
                    CliError::Input(format!("field protocol.params.detector: {e}"))
                })?,
            };
            protocols::parity_gate_displacement(
                &amps,
                param_f64(p, "beta")?,
                &detector,
                rng,
                param_bool_or(p, "worst_case_mixing", false)?,
            )?
        }
        "bucket_purification" => {
            need_qubits(s, 2)?;
            let mix = protocols::even_parity_mixture(param_f64_or(p, "even_plus_weight", 0.5)?)?;
            let run = protocols::bucket_purification(
                &mix,
                param_f64(p, "beta")?,
                param_u64(p, "iterations")? as usize,
                param_bool_or(p, "worst_case_mixing", true)?,
                rng,
            )?;
            let mut metrics = BTreeMap::new();
            metrics.insert("succeeded".to_string(), if run.succeeded { 1.0 } else { 0.0 });
            metrics.insert("rounds_used".to_string(), run.steps.len() as f64);
            if let Some(first) = run.steps.first() {
                metrics.insert("p_no_click_first".to_string(), first.p_no_click);
            }
            return Ok(ProtocolResult {
                outcome: Some(Outcome::Click { click: !run.succeeded }),
                final_state: FinalState::Mixed(run.final_state),
                metrics,
            });
        }
        "cphase_displacement" => {
            need_qubits(s, 2)?;
            protocols::cphase_displacement_gate(&amps, param_f64(p, "beta1")?, param_f64(p, "beta2")?)?
        }
        "cnot_displacement" => {
            need_qubits(s, 2)?;
            protocols::cnot_displacement_variant(&amps, param_f64(p, "beta1")?, param_f64(p, "beta2")?)?
        }
        "rotation_parity_number" => {
            need_qubits(s, 2)?;
            protocols::rotation_parity_number(
                &amps,
                param_f64(p, "alpha")?,
                param_f64(p, "theta")?,
                rng,
                None,
            )?
        }
        "rotation_parity_homodyne" => {
            need_qubits(s, 2)?;
            protocols::rotation_parity_homodyne(
                &amps,
                param_f64(p, "alpha")?,
                param_f64(p, "theta")?,
                param_f64_or(p, "excess_noise", 0.0)?,
                rng,
                None,
            )?
        }
        "rotation_only_cphase" => {
            need_qubits(s, 2)?;
            protocols::rotation_only_cphase(&amps, param_f64(p, "beta")?, param_f64(p, "theta")?)?
        }
        "rotation_displacement_parity" => {
            need_qubits(s, 2)?;
            protocols::rotation_displacement_parity(
                &amps,
                param_f64(p, "alpha")?,
                param_f64(p, "theta")?,
                param_f64_or(p, "excess_noise", 0.0)?,
                rng,
                None,
            )?
        }
        other => return input_err(format!("field protocol.name: unknown protocol \"{other}\"")),
    };
    Ok(r)
}

/// Known fixed op sequences behind the protocols, for trajectory emission.
fn protocol_ops(s: &Scenario) -> Result<Option<(Vec<BusOp>, C64)>, CliError> {
    let spec = s.protocol.as_ref().expect("protocol present");
    let p = &spec.params;
    let vac = C64::new(0.0, 0.0);
    Ok(match spec.name.as_str() {
        "qnd" => Some((
            vec![BusOp::cond_disp(0, C64::new(param_f64(p, "beta")?, 0.0))],
            vac,
        )),
        "parity_displacement" => {
            let beta = param_f64(p, "beta")?;
            Some((
                vec![
                    BusOp::cond_disp(0, C64::new(beta, 0.0)),
                    BusOp::cond_disp(1, C64::new(beta, 0.0)),
                ],
                vac,
            ))
        }
        "cphase_displacement" => Some((
            protocols::cphase_ops(param_f64(p, "beta1")?, param_f64(p, "beta2")?),
            vac,
        )),
        "cnot_displacement" => Some((
            protocols::cnot_ops(param_f64(p, "beta1")?, param_f64(p, "beta2")?),
            vac,
        )),
        "rotation_parity_number" => {
            let alpha = param_f64(p, "alpha")?;
            Some((
                protocols::rotation_parity_ops(alpha, param_f64(p, "theta")?),
                C64::new(alpha, 0.0),
            ))
        }
        "rotation_parity_homodyne" => {
            let alpha = param_f64(p, "alpha")?;
            Some((
                protocols::rotation_homodyne_ops(alpha, param_f64(p, "theta")?),
                C64::new(alpha, 0.0),
            ))
        }
        "rotation_only_cphase" => {
            let beta = param_f64(p, "beta")?;
            let theta = param_f64(p, "theta")?;
            let alpha = beta / 2.0f64.sqrt();
            let bus0 = C64::new(alpha, 0.0) * C64::new(0.0, std::f64::consts::FRAC_PI_4).exp();
            let ops = protocols::frozen_rotation_only_sequence()
                .iter()
                .map(|t| t.instantiate(theta, beta))
                .collect();
            Some((ops, bus0))
        }
        "rotation_displacement_parity" => {
            let alpha = param_f64(p, "alpha")?;
            let theta = param_f64(p, "theta")?;
            let beta = 0.5 * alpha * (2.0 * theta).sin();
            let ops = protocols::frozen_rotation_displacement_sequence()
                .iter()
                .map(|t| t.instantiate(theta, beta))
                .collect();
            Some((ops, C64::new(alpha, 0.0)))
        }
        // measurement steps interleave with the ops; no single trajectory
        "bucket_purification" => None,
        _ => None,
    })
}

pub struct Execution {
    pub report: Report,
    pub trajectory: Option<TrajectoryOut>,
}

pub fn execute(s: &Scenario) -> Result<Execution, CliError> {
    if s.ops.is_some() {
        execute_ops(s)
    } else {
        execute_protocol(s)
    }
}

fn execute_ops(s: &Scenario) -> Result<Execution, CliError> {
    let model = measure_model(s)?;
    let amps = qubit_amps(s);
    let initial = HybridState::product(&amps, bus_alpha(s))?;
    let ops = s.ops.as_ref().expect("ops present");
    let (state, trajectory) = initial.run_circuit(ops)?;
    let analytic = Analytic {
        branches: Some(branches_out(&state)),
        reduced_density: density_out(&state.reduced_qubit_density()),
        metrics: BTreeMap::from([
            ("bus_spread".to_string(), state.bus_spread()),
            ("branch_count".to_string(), state.branches().len() as f64),
        ]),
    };
    let sampled = match (&model, s.shots) {
        (Some(m), shots) if shots > 0 => {
            let mut counts = BTreeMap::new();
            let mut outcomes = Vec::with_capacity(shots as usize);
            for shot in 0..shots {
                let mut rng = shot_rng(s.seed, shot);
                let rec = measure(&state, m, &mut rng)?;
                if let Some(k) = outcome_key(&rec.outcome) {
                    *counts.entry(k).or_insert(0) += 1;
                }
                outcomes.push(outcome_value(&rec.outcome));
            }
            Some(Sampled { shots, outcome_counts: counts, metric_means: BTreeMap::new(), outcomes })
        }
        _ => None,
    };
    Ok(Execution {
        report: Report {
            schema: SCHEMA,
            generator: generator(),
            scenario: s.clone(),
            analytic,
            sampled,
        },
        trajectory: Some(trajectory_out(&trajectory)),
    })
}

fn execute_protocol(s: &Scenario) -> Result<Execution, CliError> {
    // analytic pass: one deterministic evaluation, outcome-independent
    // metrics only
    let mut rng0 = shot_rng(s.seed, 0);
    let base = run_protocol(s, &mut rng0)?;
    let analytic_metrics: BTreeMap<String, f64> = base
        .metrics
        .iter()
        .filter(|(k, _)| ANALYTIC_KEYS.contains(&k.as_str()))
        .map(|(k, v)| (k.clone(), *v))
        .collect();
    let analytic = Analytic {
        branches: match &base.final_state {
            FinalState::Pure(st) => Some(branches_out(st)),
            FinalState::Mixed(_) => None,
        },
        reduced_density: density_out(&base.final_state.reduced_qubit_density()),
        metrics: analytic_metrics,
    };
    let sampled = if s.shots > 0 {
        let mut counts = BTreeMap::new();
        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        let mut outcomes = Vec::with_capacity(s.shots as usize);
        for shot in 0..s.shots {
            let mut rng = shot_rng(s.seed, shot);
            let r = run_protocol(s, &mut rng)?;
            if let Some(o) = &r.outcome {
                if let Some(k) = outcome_key(o) {
                    *counts.entry(k).or_insert(0) += 1;
                }
                outcomes.push(outcome_value(o));
            }
            for (k, v) in &r.metrics {
                *sums.entry(k.clone()).or_insert(0.0) += v;
            }
        }
        let metric_means =
            sums.into_iter().map(|(k, v)| (k, v / s.shots as f64)).collect();
        Some(Sampled { shots: s.shots, outcome_counts: counts, metric_means, outcomes })
    } else {
        None
    };
    let trajectory = match protocol_ops(s)? {
        Some((ops, bus0)) => {
            let amps = qubit_amps(s);
            let initial = HybridState::product(&amps, bus0)?;
            let (_, t) = initial.run_circuit(&ops)?;
            Some(trajectory_out(&t))
        }
        None => None,
    };
    Ok(Execution {
        report: Report {
            schema: SCHEMA,
            generator: generator(),
            scenario: s.clone(),
            analytic,
            sampled,
        },
        trajectory,
    })
}

/// Fetch a named metric for sweep tables: analytic value when present,
/// otherwise the sampled mean.
pub fn metric_value(exec: &Execution, name: &str) -> Option<f64> {
    if let Some(v) = exec.report.analytic.metrics.get(name) {
        return Some(*v);
    }
    exec.report.sampled.as_ref().and_then(|s| s.metric_means.get(name).copied())
}
