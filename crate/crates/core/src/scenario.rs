//! Scenario files: JSON, versioned, validated as a whole.
//!
//! Loading reports every problem found, not only the first. The hash is
//! SHA-256 over the canonical form (recursively sorted keys, compact), so
//! it does not depend on key order or whitespace in the source file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::apf::Obstacle;
use crate::error::{join_violations, Violation};
use crate::formation::{EstimatorConfig, FormationSpec, Point};
use crate::geom::Vec2;
use crate::sim::{ApfConfig, PidGains, VehicleLimits};
use crate::tactile::{config_violations, ClassifierThresholds, FormationReference, TactileConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Scenario names shipped with the crate.
pub const PRESETS: [&str; 3] = ["rhombus-4", "triangle-3-labyrinth", "triangle-3-avoidance"];

const RHOMBUS_4: &str = include_str!("../scenarios/rhombus-4.json");
const TRIANGLE_3_LABYRINTH: &str = include_str!("../scenarios/triangle-3-labyrinth.json");
const TRIANGLE_3_AVOIDANCE: &str = include_str!("../scenarios/triangle-3-avoidance.json");

/// Top-level keys a scenario must carry.
const REQUIRED: [&str; 4] = ["schema_version", "name", "formation", "start"];

const KNOWN: [&str; 17] = [
    "schema_version",
    "name",
    "sample_time",
    "formation",
    "obstacles",
    "layouts",
    "apf",
    "pid",
    "vehicle",
    "classifier",
    "tactile",
    "estimator",
    "start",
    "hand_trace",
    "finish",
    "duration_s",
    "workspace_size",
];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid scenario:\n{}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("unknown obstacle layout `{0}`")]
    UnknownLayout(String),
}

impl ScenarioError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            ScenarioError::Invalid(v) => v,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartPose {
    pub hand: Point,
}

/// Circle the formation centroid has to reach.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinishRegion {
    pub center: Vec2<f64>,
    pub radius: f64,
}

impl FinishRegion {
    pub fn contains(&self, p: Vec2<f64>) -> bool {
        (p - self.center).norm() <= self.radius
    }
}

/// Named alternative obstacle set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleLayout {
    pub name: String,
    pub obstacles: Vec<Obstacle<f64>>,
}

fn default_sample_time() -> f64 {
    1.0 / 60.0
}

fn default_workspace() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    #[serde(default = "default_sample_time")]
    pub sample_time: f64,
    pub formation: FormationSpec,
    /// Active obstacles.
    #[serde(default)]
    pub obstacles: Vec<Obstacle<f64>>,
    #[serde(default)]
    pub layouts: Vec<ObstacleLayout>,
    #[serde(default)]
    pub apf: ApfConfig,
    #[serde(default)]
    pub pid: PidGains,
    #[serde(default)]
    pub vehicle: VehicleLimits,
    #[serde(default)]
    pub classifier: ClassifierThresholds,
    #[serde(default)]
    pub tactile: TactileConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    pub start: StartPose,
    /// Hand trace CSV, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hand_trace: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish: Option<FinishRegion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    /// Side of the square operator workspace, m.
    #[serde(default = "default_workspace")]
    pub workspace_size: f64,
}

/// Recursively sorts object keys.
pub fn canonical_value(v: &Value) -> Value {
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let mut out = Map::new();
            for k in keys {
                out.insert(k.clone(), canonical_value(&map[k]));
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.iter().map(canonical_value).collect()),
        other => other.clone(),
    }
}

fn positive(path: &str, v: f64, out: &mut Vec<Violation>) {
    if !(v > 0.0 && v.is_finite()) {
        out.push(Violation::new(path, format!("must be positive and finite, got {v}")));
    }
}

fn obstacle_violations(path: &str, obstacles: &[Obstacle<f64>], out: &mut Vec<Violation>) {
    for (i, o) in obstacles.iter().enumerate() {
        let p = format!("{path}/{i}");
        if !o.center.is_finite() {
            out.push(Violation::new(format!("{p}/center"), "center must be finite"));
        }
        if !(o.radius > 0.0 && o.radius.is_finite()) {
            out.push(Violation::new(format!("{p}/radius"), "safety radius must be positive"));
        }
        if !(o.influence > o.radius && o.influence.is_finite()) {
            out.push(Violation::new(
                format!("{p}/influence"),
                format!(
                    "influence distance d0 = {} must exceed the safety radius r = {}",
                    o.influence, o.radius
                ),
            ));
        }
    }
}

fn formation_violations(f: &FormationSpec, out: &mut Vec<Violation>) {
    let v = f.violations();
    let clean = v.is_empty();
    out.extend(v);
    if clean {
        if let Err(e) = FormationReference::from_spec(f) {
            out.push(Violation::new("/formation", e.to_string()));
        }
    }
}

fn layout_violations(layouts: &[ObstacleLayout], out: &mut Vec<Violation>) {
    for (i, l) in layouts.iter().enumerate() {
        if l.name.trim().is_empty() {
            out.push(Violation::new(format!("/layouts/{i}/name"), "layout name is empty"));
        }
        if layouts[..i].iter().any(|o| o.name == l.name) {
            out.push(Violation::new(
                format!("/layouts/{i}/name"),
                format!("duplicate layout name `{}`", l.name),
            ));
        }
        obstacle_violations(&format!("/layouts/{i}/obstacles"), &l.obstacles, out);
    }
}

fn apf_violations(a: &ApfConfig, out: &mut Vec<Violation>) {
    if !a.gains.is_valid() {
        out.push(Violation::new("/apf/gains", "gains and speed cap must be positive"));
    }
}

fn pid_violations(p: &PidGains, out: &mut Vec<Violation>) {
    if !p.is_valid() {
        out.push(Violation::new(
            "/pid",
            "gains must be non-negative and limits positive",
        ));
    }
}

fn vehicle_violations(v: &VehicleLimits, out: &mut Vec<Violation>) {
    positive("/vehicle/max_speed", v.max_speed, out);
    if !(v.min_separation >= 0.0 && v.min_separation.is_finite()) {
        out.push(Violation::new("/vehicle/min_separation", "must be non-negative"));
    }
}

fn start_violations(s: &StartPose, out: &mut Vec<Violation>) {
    if !s.hand.is_finite() {
        out.push(Violation::new("/start/hand", "start pose must be finite"));
    }
}

fn finish_violations(f: &Option<FinishRegion>, out: &mut Vec<Violation>) {
    if let Some(f) = f {
        if !f.center.is_finite() {
            out.push(Violation::new("/finish/center", "center must be finite"));
        }
        positive("/finish/radius", f.radius, out);
    }
}

impl Scenario {
    /// Every semantic problem; file references are not checked here.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            out.push(Violation::new(
                "/schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        if self.name.trim().is_empty() {
            out.push(Violation::new("/name", "name is empty"));
        }
        positive("/sample_time", self.sample_time, &mut out);
        formation_violations(&self.formation, &mut out);
        obstacle_violations("/obstacles", &self.obstacles, &mut out);
        layout_violations(&self.layouts, &mut out);
        apf_violations(&self.apf, &mut out);
        pid_violations(&self.pid, &mut out);
        vehicle_violations(&self.vehicle, &mut out);
        out.extend(config_violations(&self.classifier, &self.tactile));
        out.extend(self.estimator.violations());
        start_violations(&self.start, &mut out);
        finish_violations(&self.finish, &mut out);
        if let Some(d) = self.duration_s {
            positive("/duration_s", d, &mut out);
        }
        positive("/workspace_size", self.workspace_size, &mut out);
        out
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(v))
        }
    }

    pub fn to_value(&self) -> Value {
        canonical_value(&serde_json::to_value(self).expect("scenario serializes"))
    }

    /// Compact canonical JSON.
    pub fn canonical_json(&self) -> String {
        self.to_value().to_string()
    }

    /// Indented canonical JSON for files.
    pub fn to_pretty_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_value()).expect("scenario serializes");
        s.push('\n');
        s
    }

    /// Lowercase hex SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Canonical value recorded in trace headers.
    pub fn parameters_json(&self) -> Value {
        self.to_value()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ScenarioError> {
        let path = path.as_ref();
        fs::write(path, self.to_pretty_json()).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Parses and validates scenario text; `base` resolves `hand_trace`.
    pub fn from_json_str(text: &str, base: Option<&Path>) -> Result<Self, ScenarioError> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| ScenarioError::Invalid(vec![Violation::new("", format!("not valid JSON: {e}"))]))?;
        from_value(&value, base)
    }

    /// Copy with the named layout as the active obstacle set.
    pub fn with_layout(&self, name: &str) -> Result<Self, ScenarioError> {
        let layout = self
            .layouts
            .iter()
            .find(|l| l.name == name)
            .ok_or_else(|| ScenarioError::UnknownLayout(name.to_string()))?;
        let mut s = self.clone();
        s.obstacles = layout.obstacles.clone();
        Ok(s)
    }

    /// Hand trace path resolved against `base`.
    pub fn hand_trace_path(&self, base: &Path) -> Option<PathBuf> {
        self.hand_trace.as_ref().map(|p| base.join(p))
    }
}

fn section<T: DeserializeOwned>(map: &Map<String, Value>, key: &str, out: &mut Vec<Violation>) -> Option<T> {
    let v = map.get(key)?;
    match serde_json::from_value::<T>(v.clone()) {
        Ok(t) => Some(t),
        Err(e) => {
            out.push(Violation::new(format!("/{key}"), e.to_string()));
            None
        }
    }
}

fn from_value(value: &Value, base: Option<&Path>) -> Result<Scenario, ScenarioError> {
    let Some(map) = value.as_object() else {
        return Err(ScenarioError::Invalid(vec![Violation::new("", "scenario must be a JSON object")]));
    };
    let mut out = Vec::new();
    for key in REQUIRED {
        if !map.contains_key(key) {
            out.push(Violation::new(format!("/{key}"), "missing required field"));
        }
    }
    for key in map.keys() {
        if !KNOWN.contains(&key.as_str()) {
            out.push(Violation::new(format!("/{key}"), "unknown field"));
        }
    }
    if let Some(v) = section::<u32>(map, "schema_version", &mut out) {
        if v != SCHEMA_VERSION {
            out.push(Violation::new(
                "/schema_version",
                format!("unsupported version {v}, expected {SCHEMA_VERSION}"),
            ));
        }
    }

    // Typed parse per section so one bad section does not hide the others.
    let _: Option<String> = section(map, "name", &mut out);
    if let Some(t) = section::<f64>(map, "sample_time", &mut out) {
        positive("/sample_time", t, &mut out);
    }
    if let Some(f) = section::<FormationSpec>(map, "formation", &mut out) {
        formation_violations(&f, &mut out);
    }
    if let Some(o) = section::<Vec<Obstacle<f64>>>(map, "obstacles", &mut out) {
        obstacle_violations("/obstacles", &o, &mut out);
    }
    if let Some(l) = section::<Vec<ObstacleLayout>>(map, "layouts", &mut out) {
        layout_violations(&l, &mut out);
    }
    if let Some(a) = section::<ApfConfig>(map, "apf", &mut out) {
        apf_violations(&a, &mut out);
    }
    if let Some(p) = section::<PidGains>(map, "pid", &mut out) {
        pid_violations(&p, &mut out);
    }
    if let Some(v) = section::<VehicleLimits>(map, "vehicle", &mut out) {
        vehicle_violations(&v, &mut out);
    }
    let classifier = section::<ClassifierThresholds>(map, "classifier", &mut out);
    let tactile = section::<TactileConfig>(map, "tactile", &mut out);
    out.extend(config_violations(
        &classifier.unwrap_or_default(),
        &tactile.unwrap_or_default(),
    ));
    if let Some(e) = section::<EstimatorConfig>(map, "estimator", &mut out) {
        out.extend(e.violations());
    }
    if let Some(s) = section::<StartPose>(map, "start", &mut out) {
        start_violations(&s, &mut out);
    }
    if let Some(h) = section::<String>(map, "hand_trace", &mut out) {
        if let Some(base) = base {
            if !base.join(&h).is_file() {
                out.push(Violation::new("/hand_trace", format!("file `{h}` not found")));
            }
        }
    }
    let finish = section::<FinishRegion>(map, "finish", &mut out);
    finish_violations(&finish, &mut out);
    if let Some(d) = section::<f64>(map, "duration_s", &mut out) {
        positive("/duration_s", d, &mut out);
    }
    if let Some(w) = section::<f64>(map, "workspace_size", &mut out) {
        positive("/workspace_size", w, &mut out);
    }

    if !out.is_empty() {
        return Err(ScenarioError::Invalid(out));
    }
    let scenario: Scenario = serde_json::from_value(value.clone())
        .map_err(|e| ScenarioError::Invalid(vec![Violation::new("", e.to_string())]))?;
    scenario.validate()?;
    Ok(scenario)
}

/// Reads, parses and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Scenario::from_json_str(&text, Some(path.parent().unwrap_or(Path::new("."))))
}

/// Source text of a shipped preset.
pub fn preset_json(name: &str) -> Option<&'static str> {
    match name {
        "rhombus-4" => Some(RHOMBUS_4),
        "triangle-3-labyrinth" => Some(TRIANGLE_3_LABYRINTH),
        "triangle-3-avoidance" => Some(TRIANGLE_3_AVOIDANCE),
        _ => None,
    }
}

/// Parses a shipped preset. Hand-trace references are not resolved.
pub fn preset(name: &str) -> Result<Scenario, ScenarioError> {
    let text = preset_json(name).ok_or_else(|| ScenarioError::UnknownPreset(name.to_string()))?;
    Scenario::from_json_str(text, None)
}

/// Directory holding the preset files and their hand traces.
pub fn preset_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}
