//! Scenario configuration: strict JSON parsing with exhaustive validation,
//! deterministic artifact output, and the experiment dispatcher behind the
//! command-line surface.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::adiabatic::{
    medium_margins, single_atom_margins, Verdict, DEFAULT_MARGIN_THRESHOLD,
    DEFAULT_SMALL_THRESHOLD,
};
use crate::dynamics::{
    bstirap_experiment, integrate_tdse, project_onto_dressed, stirap_experiment, AtomState,
    DressedBranch, TransferOutcome,
};
use crate::eigen::track_eigenvectors;
use crate::error::Error;
use crate::medium::{adiabaton_experiment, FieldMap, MediumParams, ProbeMetric};
use crate::model::{Grid, PulseEnvelope, PulseSet, SchemeKind};
use crate::output::{write_json, CsvWriter};
use crate::storage::{
    coherence_map_error, double_storage_protocol, retrieve, stored_coherence_prediction,
    write_pulse, DoubleStorageScenario, RetrievalChannel, RetrievalMetric, Stage, StorageRecord,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Experiment {
    #[serde(rename = "eigen")]
    Eigen,
    #[serde(rename = "transfer")]
    Transfer,
    #[serde(rename = "btransfer")]
    BTransfer,
    #[serde(rename = "propagate")]
    Propagate,
    #[serde(rename = "store")]
    Store,
    #[serde(rename = "double-store")]
    DoubleStore,
    #[serde(rename = "check-adiabatic")]
    CheckAdiabatic,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub tau_min: f64,
    pub tau_max: f64,
    pub n_tau: usize,
    pub x_max: f64,
    pub n_x: usize,
}

impl GridConfig {
    fn build(&self) -> Result<Grid, Error> {
        Grid::new(self.tau_min, self.tau_max, self.n_tau, self.x_max, self.n_x)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum PulseConfig {
    #[serde(rename = "gaussian")]
    Gaussian {
        amplitude: f64,
        width_factor: f64,
        center: f64,
    },
    #[serde(rename = "tabulated")]
    Tabulated { samples: Vec<(f64, f64)> },
}

impl PulseConfig {
    pub fn build_envelope(&self) -> Result<PulseEnvelope, Error> {
        match self {
            PulseConfig::Gaussian {
                amplitude,
                width_factor,
                center,
            } => PulseEnvelope::gaussian(*amplitude, *width_factor, *center),
            PulseConfig::Tabulated { samples } => PulseEnvelope::tabulated(samples.clone()),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumConfig {
    pub q: [f64; 4],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    #[serde(default = "default_margin")]
    pub adiabatic_margin: f64,
    #[serde(default = "default_small")]
    pub medium_small: f64,
    #[serde(default = "default_safety")]
    pub step_safety: f64,
}

fn default_margin() -> f64 {
    DEFAULT_MARGIN_THRESHOLD
}
fn default_small() -> f64 {
    DEFAULT_SMALL_THRESHOLD
}
fn default_safety() -> f64 {
    crate::dynamics::STEP_SAFETY
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            adiabatic_margin: default_margin(),
            medium_small: default_small(),
            step_safety: default_safety(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Depths whose slices are written as CSV by the propagation runs.
    #[serde(default)]
    pub x_slices: Vec<f64>,
    /// Keep every n-th time node in series output.
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_stride() -> usize {
    1
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            x_slices: Vec::new(),
            stride: 1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub pulses: [PulseConfig; 4],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detunings: Option<[f64; 4]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectationConfig {
    /// JSON pointer into the run summary, e.g. "/transfer/fidelity".
    pub metric: String,
    /// "ge" or "le".
    pub op: String,
    pub bound: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub experiment: Experiment,
    pub scheme: SchemeKind,
    pub pulses: [PulseConfig; 4],
    pub detunings: [f64; 4],
    pub grid: GridConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub medium: Option<MediumConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Thresholds>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
    /// Retrieval stage for `store`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<StageConfig>,
    /// Second (three-level) write stage for `double-store`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub second_write: Option<StageConfig>,
    /// Three-level retrieval stage for `double-store`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retrieval_lambda: Option<StageConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub expectations: Vec<ExpectationConfig>,
}

// ---------------------------------------------------------------------------
// validation
// ---------------------------------------------------------------------------

const EXPERIMENTS: [&str; 7] = [
    "eigen",
    "transfer",
    "btransfer",
    "propagate",
    "store",
    "double-store",
    "check-adiabatic",
];

fn check_pulse(v: &Value, at: &str, errors: &mut Vec<String>) {
    let Some(obj) = v.as_object() else {
        errors.push(format!("{at}: pulse must be an object"));
        return;
    };
    match obj.get("kind").and_then(|k| k.as_str()) {
        Some("gaussian") => {
            for key in ["amplitude", "width_factor", "center"] {
                match obj.get(key).and_then(|x| x.as_f64()) {
                    None => errors.push(format!("{at}: missing or non-numeric '{key}'")),
                    Some(val) => {
                        if key == "amplitude" && val < 0.0 {
                            errors.push(format!("{at}: amplitude must be >= 0, got {val}"));
                        }
                        if key == "width_factor" && val <= 0.0 {
                            errors.push(format!("{at}: width_factor must be > 0, got {val}"));
                        }
                    }
                }
            }
            for key in obj.keys() {
                if !["kind", "amplitude", "width_factor", "center"].contains(&key.as_str()) {
                    errors.push(format!("{at}: unknown key '{key}'"));
                }
            }
        }
        Some("tabulated") => {
            match obj.get("samples").and_then(|s| s.as_array()) {
                None => errors.push(format!("{at}: tabulated pulse needs a 'samples' array")),
                Some(samples) => {
                    if samples.is_empty() {
                        errors.push(format!("{at}: samples must be non-empty"));
                    }
                    let mut prev = f64::NEG_INFINITY;
                    for (i, s) in samples.iter().enumerate() {
                        let pair = s.as_array().filter(|p| p.len() == 2).map(|p| {
                            (p[0].as_f64(), p[1].as_f64())
                        });
                        match pair {
                            Some((Some(t), Some(val))) => {
                                if t <= prev {
                                    errors.push(format!(
                                        "{at}: samples must be strictly increasing in time (index {i})"
                                    ));
                                }
                                prev = t;
                                if val < 0.0 {
                                    errors.push(format!(
                                        "{at}: sample values must be >= 0 (index {i})"
                                    ));
                                }
                            }
                            _ => errors.push(format!("{at}: sample {i} must be [time, value]")),
                        }
                    }
                }
            }
            for key in obj.keys() {
                if !["kind", "samples"].contains(&key.as_str()) {
                    errors.push(format!("{at}: unknown key '{key}'"));
                }
            }
        }
        Some(other) => errors.push(format!("{at}: unknown pulse kind '{other}'")),
        None => errors.push(format!("{at}: missing 'kind' (gaussian or tabulated)")),
    }
}

fn check_pulses(v: Option<&Value>, at: &str, errors: &mut Vec<String>) {
    match v.and_then(|p| p.as_array()) {
        None => errors.push(format!("{at}: missing required key 'pulses' (array of 4)")),
        Some(arr) if arr.len() != 4 => {
            errors.push(format!("{at}: 'pulses' must have exactly 4 entries, got {}", arr.len()))
        }
        Some(arr) => {
            for (i, p) in arr.iter().enumerate() {
                check_pulse(p, &format!("{at}.pulses[{i}]"), errors);
            }
        }
    }
}

fn check_detunings(v: Option<&Value>, at: &str, required: bool, errors: &mut Vec<String>) {
    match v {
        None => {
            if required {
                errors.push(format!("{at}: missing required key 'detunings' (array of 4)"));
            }
        }
        Some(d) => match d.as_array() {
            Some(arr) if arr.len() == 4 && arr.iter().all(|x| x.is_number()) => {}
            _ => errors.push(format!("{at}: 'detunings' must be an array of 4 numbers")),
        },
    }
}

fn check_grid(v: Option<&Value>, at: &str, required: bool, errors: &mut Vec<String>) {
    let Some(g) = v else {
        if required {
            errors.push(format!("{at}: missing required key 'grid'"));
        }
        return;
    };
    let Some(obj) = g.as_object() else {
        errors.push(format!("{at}: 'grid' must be an object"));
        return;
    };
    for key in ["tau_min", "tau_max", "n_tau", "x_max", "n_x"] {
        if !obj.contains_key(key) {
            errors.push(format!("{at}.grid: missing required key '{key}'"));
        }
    }
    for key in obj.keys() {
        if !["tau_min", "tau_max", "n_tau", "x_max", "n_x"].contains(&key.as_str()) {
            errors.push(format!("{at}.grid: unknown key '{key}'"));
        }
    }
    let num = |k: &str| obj.get(k).and_then(|x| x.as_f64());
    if let (Some(lo), Some(hi)) = (num("tau_min"), num("tau_max")) {
        if !(lo < hi) {
            errors.push(format!("{at}.grid: tau_min must be < tau_max"));
        }
    }
    if let Some(n) = obj.get("n_tau").and_then(|x| x.as_u64()) {
        if n < 2 {
            errors.push(format!("{at}.grid: n_tau must be >= 2"));
        }
    } else if obj.contains_key("n_tau") {
        errors.push(format!("{at}.grid: n_tau must be a positive integer"));
    }
    if let Some(n) = obj.get("n_x") {
        if n.as_u64().map(|v| v < 1).unwrap_or(true) {
            errors.push(format!("{at}.grid: n_x must be an integer >= 1"));
        }
    }
    if num("x_max").map(|v| v < 0.0).unwrap_or(false) {
        errors.push(format!("{at}.grid: x_max must be >= 0"));
    }
}

fn check_stage(v: &Value, at: &str, errors: &mut Vec<String>) {
    let Some(obj) = v.as_object() else {
        errors.push(format!("{at}: stage must be an object"));
        return;
    };
    check_pulses(obj.get("pulses"), at, errors);
    check_detunings(obj.get("detunings"), at, false, errors);
    check_grid(obj.get("grid"), at, false, errors);
    for key in obj.keys() {
        if !["pulses", "detunings", "grid"].contains(&key.as_str()) {
            errors.push(format!("{at}: unknown key '{key}'"));
        }
    }
}

/// Validate a raw config document, collecting every problem rather than
/// stopping at the first.
pub fn validate_config(doc: &Value) -> Vec<String> {
    let mut errors = Vec::new();
    let Some(obj) = doc.as_object() else {
        return vec!["config root must be a JSON object".to_string()];
    };

    let experiment = obj.get("experiment").and_then(|v| v.as_str());
    match experiment {
        None => errors.push("missing required key 'experiment'".to_string()),
        Some(e) if !EXPERIMENTS.contains(&e) => errors.push(format!(
            "unknown experiment '{e}' (expected one of {})",
            EXPERIMENTS.join(", ")
        )),
        _ => {}
    }
    match obj.get("scheme").and_then(|v| v.as_str()) {
        None => errors.push("missing required key 'scheme'".to_string()),
        Some(s) if !["m-type", "extended-lambda"].contains(&s) => {
            errors.push(format!("unknown scheme '{s}' (m-type or extended-lambda)"))
        }
        _ => {}
    }
    check_pulses(obj.get("pulses"), "config", &mut errors);
    check_detunings(obj.get("detunings"), "config", true, &mut errors);
    check_grid(obj.get("grid"), "config", true, &mut errors);

    if let Some(m) = obj.get("medium") {
        match m.get("q").and_then(|q| q.as_array()) {
            Some(arr) if arr.len() == 4 => {
                for (i, v) in arr.iter().enumerate() {
                    if v.as_f64().map(|x| x < 0.0).unwrap_or(true) {
                        errors.push(format!("medium.q[{i}] must be a number >= 0"));
                    }
                }
            }
            _ => errors.push("medium.q must be an array of 4 numbers".to_string()),
        }
        if let Some(mobj) = m.as_object() {
            for key in mobj.keys() {
                if key != "q" {
                    errors.push(format!("medium: unknown key '{key}'"));
                }
            }
        }
    }

    for (key, at) in [
        ("retrieval", "retrieval"),
        ("second_write", "second_write"),
        ("retrieval_lambda", "retrieval_lambda"),
    ] {
        if let Some(stage) = obj.get(key) {
            check_stage(stage, at, &mut errors);
        }
    }

    if let Some(exps) = obj.get("expectations") {
        match exps.as_array() {
            None => errors.push("expectations must be an array".to_string()),
            Some(arr) => {
                for (i, e) in arr.iter().enumerate() {
                    let at = format!("expectations[{i}]");
                    let ok = e.get("metric").and_then(|m| m.as_str()).is_some()
                        && e.get("bound").and_then(|b| b.as_f64()).is_some();
                    if !ok {
                        errors.push(format!("{at}: needs 'metric' (string) and 'bound' (number)"));
                    }
                    match e.get("op").and_then(|o| o.as_str()) {
                        Some("ge") | Some("le") => {}
                        _ => errors.push(format!("{at}: 'op' must be \"ge\" or \"le\"")),
                    }
                }
            }
        }
    }

    // experiment-specific required stages
    if let Some(e) = experiment {
        if e == "store" && !obj.contains_key("retrieval") {
            errors.push("store experiments require a 'retrieval' stage".to_string());
        }
        if e == "double-store" {
            for key in ["retrieval", "second_write", "retrieval_lambda"] {
                if !obj.contains_key(key) {
                    errors.push(format!("double-store experiments require a '{key}' stage"));
                }
            }
        }
    }

    const KNOWN: [&str; 13] = [
        "experiment",
        "scheme",
        "pulses",
        "detunings",
        "grid",
        "medium",
        "thresholds",
        "gamma",
        "output",
        "retrieval",
        "second_write",
        "retrieval_lambda",
        "expectations",
    ];
    for key in obj.keys() {
        if !KNOWN.contains(&key.as_str()) {
            errors.push(format!("unknown key '{key}'"));
        }
    }
    errors
}

/// Parse and validate a config document; on failure every validation error
/// is reported, not just the first.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, Error> {
    let doc: Value =
        serde_json::from_str(text).map_err(|e| Error::Config(vec![format!("invalid JSON: {e}")]))?;
    let errors = validate_config(&doc);
    if !errors.is_empty() {
        return Err(Error::Config(errors));
    }
    serde_json::from_value(doc).map_err(|e| Error::Config(vec![format!("schema error: {e}")]))
}

/// Canonical serialization of a config (fixed float formatting, insertion
/// order); parse -> serialize round-trips byte-identically.
pub fn config_to_canonical_json(config: &ScenarioConfig) -> Result<String, Error> {
    let v = serde_json::to_value(config)?;
    Ok(crate::output::canonical_json(&v))
}

// ---------------------------------------------------------------------------
// scenario execution
// ---------------------------------------------------------------------------

pub struct RunOutcome {
    pub summary: Value,
    pub expectations_met: bool,
    pub verdict: Option<Verdict>,
}

impl ScenarioConfig {
    pub fn build_pulses(&self) -> Result<PulseSet, Error> {
        let envelopes = [
            self.pulses[0].build_envelope()?,
            self.pulses[1].build_envelope()?,
            self.pulses[2].build_envelope()?,
            self.pulses[3].build_envelope()?,
        ];
        Ok(PulseSet::new(envelopes, self.detunings, self.scheme))
    }

    pub fn build_grid(&self) -> Result<Grid, Error> {
        self.grid.build()
    }

    pub fn build_stage(&self, stage: &StageConfig) -> Result<Stage, Error> {
        let envelopes = [
            stage.pulses[0].build_envelope()?,
            stage.pulses[1].build_envelope()?,
            stage.pulses[2].build_envelope()?,
            stage.pulses[3].build_envelope()?,
        ];
        let detunings = stage.detunings.unwrap_or(self.detunings);
        let grid = match &stage.grid {
            Some(g) => g.build()?,
            None => self.build_grid()?,
        };
        Ok(Stage {
            pulses: PulseSet::new(envelopes, detunings, self.scheme),
            grid,
        })
    }

    fn medium(&self) -> MediumParams {
        MediumParams {
            q: self.medium.as_ref().map(|m| m.q).unwrap_or([1.0; 4]),
            scheme: self.scheme,
        }
    }

    fn thresholds(&self) -> Thresholds {
        self.thresholds.clone().unwrap_or_default()
    }

    fn output_config(&self) -> OutputConfig {
        self.output.clone().unwrap_or_default()
    }
}

fn adiabaticity_value(pulses: &PulseSet, thresholds: &Thresholds) -> (Value, Verdict) {
    let t_short = pulses.shortest_fwhm();
    let delta = pulses.detunings[0];
    let report = single_atom_margins(pulses, t_short, delta, thresholds.adiabatic_margin);
    let verdict = report.verdict;
    (
        serde_json::to_value(&report).unwrap_or(Value::Null),
        verdict,
    )
}

fn evaluate_expectations(config: &ScenarioConfig, summary: &mut Value) -> bool {
    let mut results = Vec::new();
    let mut all_met = true;
    for exp in &config.expectations {
        let value = summary.pointer(&exp.metric).and_then(|v| v.as_f64());
        let met = match (value, exp.op.as_str()) {
            (Some(v), "ge") => v >= exp.bound,
            (Some(v), "le") => v <= exp.bound,
            _ => false,
        };
        all_met &= met;
        results.push(json!({
            "metric": exp.metric,
            "op": exp.op,
            "bound": exp.bound,
            "value": value.map(Value::from).unwrap_or(Value::Null),
            "met": met,
        }));
    }
    if let Value::Object(map) = summary {
        map.insert("expectations".to_string(), Value::Array(results));
        map.insert("expectations_met".to_string(), Value::Bool(all_met));
    }
    all_met
}

fn write_transfer_csv(
    path: &Path,
    outcome: &TransferOutcome,
    overlaps: &[f64],
    stride: usize,
) -> Result<(), Error> {
    let mut csv = CsvWriter::create(
        path,
        &[
            "tau", "p1", "p2", "p3", "p4", "p5", "re_rho51", "im_rho51", "re_rho31", "im_rho31",
            "overlap",
        ],
    )?;
    let traj = &outcome.trajectory;
    for k in (0..traj.tau.len()).step_by(stride.max(1)) {
        let s = &traj.states[k];
        let p = s.populations();
        let r51 = s.coherence(5, 1);
        let r31 = s.coherence(3, 1);
        csv.row(&[
            traj.tau[k], p[0], p[1], p[2], p[3], p[4], r51.re, r51.im, r31.re, r31.im, overlaps[k],
        ])?;
    }
    csv.finish()
}

fn write_slice_csv(path: &Path, map: &FieldMap, j: usize, stride: usize) -> Result<(), Error> {
    let mut csv = CsvWriter::create(
        path,
        &[
            "tau",
            "abs_omega1",
            "abs_omega2",
            "abs_omega3",
            "abs_omega4",
            "phase_omega1",
            "phase_omega2",
            "phase_omega3",
            "phase_omega4",
            "p1",
            "p2",
            "p3",
            "p4",
            "p5",
            "re_rho51",
            "im_rho51",
            "re_rho31",
            "im_rho31",
        ],
    )?;
    for k in (0..map.n_tau()).step_by(stride.max(1)) {
        let b = map.atom(j, k);
        let pop: Vec<f64> = b.iter().map(|c| c.norm_sqr()).collect();
        let r51 = b[4] * b[0].conj();
        let r31 = b[2] * b[0].conj();
        let f: Vec<_> = (0..4).map(|i| map.field(i, j, k)).collect();
        csv.row(&[
            map.tau[k],
            f[0].norm(),
            f[1].norm(),
            f[2].norm(),
            f[3].norm(),
            f[0].arg(),
            f[1].arg(),
            f[2].arg(),
            f[3].arg(),
            pop[0],
            pop[1],
            pop[2],
            pop[3],
            pop[4],
            r51.re,
            r51.im,
            r31.re,
            r31.im,
        ])?;
    }
    csv.finish()
}

fn write_record_csv(path: &Path, record: &StorageRecord) -> Result<(), Error> {
    let mut csv = CsvWriter::create(
        path,
        &["x", "re_rho51", "im_rho51", "re_rho31", "im_rho31", "xi"],
    )?;
    for j in 0..record.x.len() {
        let xi = record.xi.get(j).copied().flatten().unwrap_or(f64::NAN);
        csv.row(&[
            record.x[j],
            record.rho51[j].re,
            record.rho51[j].im,
            record.rho31[j].re,
            record.rho31[j].im,
            xi,
        ])?;
    }
    csv.finish()
}

fn write_retrieved_csv(
    path: &Path,
    pulse: &crate::storage::RetrievedPulse,
    stride: usize,
) -> Result<(), Error> {
    let mut csv = CsvWriter::create(path, &["tau", "abs", "re", "im"])?;
    for k in (0..pulse.tau.len()).step_by(stride.max(1)) {
        let c = pulse.envelope[k];
        csv.row(&[pulse.tau[k], c.norm(), c.re, c.im])?;
    }
    csv.finish()
}

fn probe_metric_value(m: &ProbeMetric) -> Value {
    json!({"x": m.x, "delay": m.delay, "correlation": m.correlation})
}

fn retrieval_metric_value(m: &RetrievalMetric) -> Value {
    json!({
        "delay": m.delay,
        "correlation": m.correlation,
        "crosstalk": m.crosstalk,
        "energy": m.pulse.energy,
    })
}

/// Execute a scenario, writing artifacts under `out_dir`. Outputs are
/// deterministic: a given config produces byte-identical files.
pub fn run_scenario(config: &ScenarioConfig, out_dir: &Path) -> Result<RunOutcome, Error> {
    fs::create_dir_all(out_dir)?;
    let pulses = config.build_pulses()?;
    let grid = config.build_grid()?;
    let thresholds = config.thresholds();
    let out_cfg = config.output_config();
    let (adiabaticity, verdict) = adiabaticity_value(&pulses, &thresholds);

    let mut summary = match config.experiment {
        Experiment::CheckAdiabatic => {
            let mut report = adiabaticity.clone();
            if config.medium.is_some() || grid.x_max > 0.0 {
                let medium = config.medium();
                let q = medium.q.iter().cloned().fold(0.0, f64::max);
                let omega_sq = pulses.envelopes[1].peak().powi(2) + pulses.envelopes[2].peak().powi(2);
                let m = medium_margins(
                    q,
                    grid.x_max,
                    pulses.detunings[0],
                    pulses.shortest_fwhm(),
                    omega_sq,
                    config.gamma,
                    thresholds.medium_small,
                );
                if let Value::Object(map) = &mut report {
                    map.insert(
                        "medium".to_string(),
                        serde_json::to_value(&m).unwrap_or(Value::Null),
                    );
                }
            }
            write_json(&out_dir.join("report.json"), &report)?;
            json!({ "experiment": "check-adiabatic", "report": report })
        }

        Experiment::Eigen => {
            grid.check_support(&pulses)?;
            let series = track_eigenvectors(&pulses, &grid)?;
            let mut header: Vec<String> = vec!["tau".into()];
            for b in 0..5 {
                header.push(format!("lambda{b}"));
            }
            for name in ["theta", "phi1", "phi2", "phi"] {
                header.push(name.into());
            }
            for b in 0..5 {
                for i in 1..=5 {
                    header.push(format!("v{b}_{i}"));
                }
            }
            let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
            let mut csv = CsvWriter::create(&out_dir.join("eigen.csv"), &header_refs)?;
            for sys in series.iter().step_by(out_cfg.stride.max(1)) {
                let mut row = vec![sys.tau];
                row.extend_from_slice(&sys.lambda);
                row.extend_from_slice(&[
                    sys.mixing.theta,
                    sys.mixing.phi1,
                    sys.mixing.phi2,
                    sys.mixing.phi,
                ]);
                for b in 0..5 {
                    row.extend_from_slice(&sys.vectors[b]);
                }
                csv.row(&row)?;
            }
            csv.finish()?;
            let first = series.first().expect("grid has at least two nodes");
            let last = series.last().expect("grid has at least two nodes");
            json!({
                "experiment": "eigen",
                "n_tau": grid.n_tau,
                "lambda_start": first.lambda.to_vec(),
                "lambda_end": last.lambda.to_vec(),
                "adiabaticity": adiabaticity,
            })
        }

        Experiment::Transfer | Experiment::BTransfer => {
            grid.check_support(&pulses)?;
            let (outcome, branch) = match config.experiment {
                Experiment::Transfer => (stirap_experiment(&pulses, &grid)?, DressedBranch::Lambda1),
                _ => (bstirap_experiment(&pulses, &grid)?, DressedBranch::Lambda2),
            };
            let overlaps = project_onto_dressed(&outcome.trajectory, &pulses, branch)?;
            write_transfer_csv(
                &out_dir.join("transfer.csv"),
                &outcome,
                &overlaps,
                out_cfg.stride,
            )?;
            // convergence indicator: final populations at half resolution
            let convergence = if (grid.n_tau - 1) % 2 == 0 {
                let half = Grid::new(
                    grid.tau_min,
                    grid.tau_max,
                    (grid.n_tau - 1) / 2 + 1,
                    grid.x_max,
                    grid.n_x,
                )?;
                let initial = match config.experiment {
                    Experiment::Transfer => AtomState::ground(),
                    _ => AtomState::basis(4),
                };
                match integrate_tdse(&pulses, &initial, &half) {
                    Ok(coarse) => {
                        let pf = outcome.trajectory.final_state().populations();
                        let pc = coarse.final_state().populations();
                        Some(
                            pf.iter()
                                .zip(pc.iter())
                                .map(|(a, b)| (a - b).abs())
                                .fold(0.0, f64::max),
                        )
                    }
                    Err(_) => None,
                }
            } else {
                None
            };
            json!({
                "experiment": if config.experiment == Experiment::Transfer { "transfer" } else { "btransfer" },
                "transfer": {
                    "fidelity": outcome.fidelity,
                    "max_p2": outcome.max_p2,
                    "max_p3": outcome.max_p3,
                    "max_p4": outcome.max_p4,
                    "norm_drift": outcome.norm_drift,
                    "min_overlap": overlaps.iter().cloned().fold(f64::INFINITY, f64::min),
                },
                "grid_convergence": convergence.map(Value::from).unwrap_or(Value::Null),
                "adiabaticity": adiabaticity,
            })
        }

        Experiment::Propagate => {
            grid.check_support(&pulses)?;
            let medium = config.medium();
            let depths = if out_cfg.x_slices.is_empty() {
                vec![grid.x_max]
            } else {
                out_cfg.x_slices.clone()
            };
            let outcome = adiabaton_experiment(&pulses, &medium, &grid, &depths)?;
            for m in &outcome.probes {
                let j = outcome.map.slice_index(m.x);
                write_slice_csv(
                    &out_dir.join(format!("slice_{:05}.csv", j)),
                    &outcome.map,
                    j,
                    out_cfg.stride,
                )?;
            }
            let q = medium.q.iter().cloned().fold(0.0, f64::max);
            json!({
                "experiment": "propagate",
                "probes": outcome.probes.iter().map(probe_metric_value).collect::<Vec<_>>(),
                "pair_conservation_residual": outcome.conservation_residual,
                "grid_convergence": outcome.map.max_truncation(),
                "detuning_shift_omega2": outcome.map.detuning_shift(1, 0.5),
                "detuning_shift_omega3": outcome.map.detuning_shift(2, 0.5),
                "theta_advection_residual": outcome.map.theta_advection_residual(q, 0.1),
                "adiabaticity": adiabaticity,
            })
        }

        Experiment::Store => {
            grid.check_support(&pulses)?;
            let medium = config.medium();
            let (record, map) = write_pulse(&pulses, &medium, &grid)?;
            write_record_csv(&out_dir.join("coherence.csv"), &record)?;
            let prediction = stored_coherence_prediction(
                &pulses,
                medium.q[1],
                &grid,
                RetrievalChannel::FiveLevel,
                &record.x,
            );
            let absolute_error = record
                .rho51
                .iter()
                .zip(prediction.iter())
                .map(|(r, p)| (r.norm() - p.abs()).abs())
                .fold(0.0, f64::max);
            let e_in = map.energy(1, 0);
            drop(map);

            let stage = config
                .retrieval
                .as_ref()
                .expect("validated: store requires a retrieval stage");
            let stage = config.build_stage(stage)?;
            let (retrieved, _rmap) = retrieve(
                &record,
                &stage.pulses,
                &medium,
                &stage.grid,
                RetrievalChannel::FiveLevel,
            )?;
            let shape: Vec<f64> = stage
                .grid
                .tau_values()
                .iter()
                .map(|&t| pulses.envelopes[1].value(t))
                .collect();
            let (delay, correlation) = retrieved.correlation_with_shape(&shape);
            write_retrieved_csv(&out_dir.join("retrieved.csv"), &retrieved, out_cfg.stride)?;
            json!({
                "experiment": "store",
                "storage": {
                    "x_max": record.x_max,
                    "partial": record.partial,
                    "residual_probe_fraction": record.residual_probe_fraction,
                    "max_abs_rho31": record.max_abs_rho31(),
                    "max_abs_rho51": record.max_abs_rho51(),
                    "map_error_absolute": absolute_error,
                    "map_error_relative": coherence_map_error(&record, &prediction),
                },
                "retrieval": {
                    "delay": delay,
                    "correlation": correlation,
                    "energy_ratio": if e_in > 0.0 { retrieved.energy / e_in } else { 0.0 },
                },
                "adiabaticity": adiabaticity,
            })
        }

        Experiment::DoubleStore => {
            let medium = config.medium();
            let retrieval_five = config
                .retrieval
                .as_ref()
                .expect("validated: double-store requires 'retrieval'");
            let second_write = config
                .second_write
                .as_ref()
                .expect("validated: double-store requires 'second_write'");
            let retrieval_lambda = config
                .retrieval_lambda
                .as_ref()
                .expect("validated: double-store requires 'retrieval_lambda'");
            let scenario = DoubleStorageScenario {
                medium,
                write_five: Stage {
                    pulses: pulses.clone(),
                    grid: grid.clone(),
                },
                write_lambda: config.build_stage(second_write)?,
                retrieve_five: config.build_stage(retrieval_five)?,
                retrieve_lambda: config.build_stage(retrieval_lambda)?,
            };
            let outcome = double_storage_protocol(&scenario)?;
            write_record_csv(&out_dir.join("coherence_write1.csv"), &outcome.record_after_write1)?;
            write_record_csv(&out_dir.join("coherence_write2.csv"), &outcome.record_after_write2)?;
            let (a1, a2) = &outcome.order_five_first;
            let (b1, b2) = &outcome.order_lambda_first;
            write_retrieved_csv(&out_dir.join("retrieved_five_first_five.csv"), &a1.pulse, out_cfg.stride)?;
            write_retrieved_csv(&out_dir.join("retrieved_five_first_lambda.csv"), &a2.pulse, out_cfg.stride)?;
            write_retrieved_csv(&out_dir.join("retrieved_lambda_first_lambda.csv"), &b1.pulse, out_cfg.stride)?;
            write_retrieved_csv(&out_dir.join("retrieved_lambda_first_five.csv"), &b2.pulse, out_cfg.stride)?;
            json!({
                "experiment": "double-store",
                "write1": {
                    "x_max": outcome.record_after_write1.x_max,
                    "max_abs_rho31": outcome.record_after_write1.max_abs_rho31(),
                    "min_p1": outcome.min_p1_after_write1,
                },
                "write2": {
                    "x_max": outcome.record_after_write2.x_max,
                    "max_abs_rho31": outcome.record_after_write2.max_abs_rho31(),
                    "max_abs_rho51": outcome.record_after_write2.max_abs_rho51(),
                },
                "order_five_first": {
                    "five": retrieval_metric_value(a1),
                    "lambda": retrieval_metric_value(a2),
                },
                "order_lambda_first": {
                    "lambda": retrieval_metric_value(b1),
                    "five": retrieval_metric_value(b2),
                },
                "adiabaticity": adiabaticity,
            })
        }
    };

    let expectations_met = evaluate_expectations(config, &mut summary);
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(RunOutcome {
        summary,
        expectations_met,
        verdict: Some(verdict),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_lists_all_required_keys() {
        let err = parse_config("{}").unwrap_err();
        let Error::Config(errors) = err else {
            panic!("expected config error");
        };
        let text = errors.join("\n");
        for key in ["experiment", "scheme", "pulses", "detunings", "grid"] {
            assert!(text.contains(key), "missing mention of {key}: {text}");
        }
        assert!(errors.len() >= 5);
    }

    #[test]
    fn negative_amplitude_rejected_with_other_errors() {
        let text = r#"{
            "experiment": "transfer",
            "scheme": "m-type",
            "pulses": [
                {"kind": "gaussian", "amplitude": -1.0, "width_factor": 1.0, "center": 0.0},
                {"kind": "gaussian", "amplitude": 1.0, "width_factor": 0.0, "center": 0.0},
                {"kind": "gaussian", "amplitude": 1.0, "width_factor": 1.0, "center": 0.0},
                {"kind": "gaussian", "amplitude": 1.0, "width_factor": 1.0, "center": 0.0}
            ],
            "detunings": [1, 1, 1, 1],
            "grid": {"tau_min": -1.0, "tau_max": 1.0, "n_tau": 10, "x_max": 0.0, "n_x": 1},
            "bogus": 1
        }"#;
        let Error::Config(errors) = parse_config(text).unwrap_err() else {
            panic!("expected config error");
        };
        let joined = errors.join("\n");
        assert!(joined.contains("amplitude must be >= 0"));
        assert!(joined.contains("width_factor must be > 0"));
        assert!(joined.contains("unknown key 'bogus'"));
        assert_eq!(errors.len(), 3, "{joined}");
    }

    #[test]
    fn canonical_round_trip_is_byte_identical() {
        let text = r#"{
            "experiment": "eigen",
            "scheme": "m-type",
            "pulses": [
                {"kind": "gaussian", "amplitude": 30.0, "width_factor": 0.25, "center": 0.0},
                {"kind": "gaussian", "amplitude": 30.0, "width_factor": 1.0, "center": -0.5},
                {"kind": "tabulated", "samples": [[0.0, 1.0], [1.0, 0.5]]},
                {"kind": "gaussian", "amplitude": 30.0, "width_factor": 0.25, "center": 0.0}
            ],
            "detunings": [10.0, 10.0, 10.0, 10.0],
            "grid": {"tau_min": -8.0, "tau_max": 8.0, "n_tau": 1201, "x_max": 0.0, "n_x": 1}
        }"#;
        let config = parse_config(text).unwrap();
        let canonical = config_to_canonical_json(&config).unwrap();
        let config2 = parse_config(&canonical).unwrap();
        let canonical2 = config_to_canonical_json(&config2).unwrap();
        assert_eq!(canonical, canonical2);
    }

    #[test]
    fn store_requires_retrieval_stage() {
        let text = r#"{
            "experiment": "store",
            "scheme": "m-type",
            "pulses": [
                {"kind": "gaussian", "amplitude": 1.0, "width_factor": 1.0, "center": 0.0},
                {"kind": "gaussian", "amplitude": 1.0, "width_factor": 1.0, "center": 0.0},
                {"kind": "gaussian", "amplitude": 1.0, "width_factor": 1.0, "center": 0.0},
                {"kind": "gaussian", "amplitude": 1.0, "width_factor": 1.0, "center": 0.0}
            ],
            "detunings": [1, 1, 1, 1],
            "grid": {"tau_min": -1.0, "tau_max": 1.0, "n_tau": 10, "x_max": 10.0, "n_x": 2}
        }"#;
        let Error::Config(errors) = parse_config(text).unwrap_err() else {
            panic!("expected config error");
        };
        assert!(errors.iter().any(|e| e.contains("retrieval")));
    }
}
