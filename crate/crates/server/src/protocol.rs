//! Wire protocol: JSON text frames tagged by `type`.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use swarmlink::apf::Obstacle;
use swarmlink::metrics::RunMetrics;
use swarmlink::tactile::{FormationLabel, PatternId, TactilePattern};
use swarmlink::trace::TraceEvent;
use swarmlink::Vec2;

/// Machine-readable description of every frame.
pub const PROTOCOL_SCHEMA: &str = include_str!("../protocol.schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Visual,
    Blind,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "visual" => Ok(Mode::Visual),
            "blind" => Ok(Mode::Blind),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ControlAction {
    Start,
    Pause,
    Reset,
    SetMode { mode: Mode },
    LoadScenario { name: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    /// Hand position in world metres; `t_client` is informational only.
    HandPose { t_client: f64, x: f64, y: f64 },
    Control {
        #[serde(flatten)]
        action: ControlAction,
    },
}

const CLIENT_TYPES: [&str; 2] = ["hand_pose", "control"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    MalformedFrame,
    UnknownType,
    InvalidValue,
    UnknownScenario,
    SimHalted,
}

/// Parses one text frame. Unknown types and malformed bodies become error
/// frames for the sender.
pub fn parse_client(text: &str) -> Result<ClientMessage, ServerMessage> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| ServerMessage::error(ErrorCode::MalformedFrame, format!("not JSON: {e}")))?;
    let kind = value
        .get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| ServerMessage::error(ErrorCode::MalformedFrame, "missing string field `type`"))?
        .to_string();
    if !CLIENT_TYPES.contains(&kind.as_str()) {
        return Err(ServerMessage::error(ErrorCode::UnknownType, format!("unknown message type `{kind}`")));
    }
    let msg: ClientMessage = serde_json::from_value(value)
        .map_err(|e| ServerMessage::error(ErrorCode::MalformedFrame, format!("bad `{kind}` frame: {e}")))?;
    if let ClientMessage::HandPose { t_client, x, y } = msg {
        if !(t_client.is_finite() && x.is_finite() && y.is_finite()) {
            return Err(ServerMessage::error(ErrorCode::InvalidValue, "hand pose must be finite"));
        }
    }
    Ok(msg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroneView {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub gx: f64,
    pub gy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XY {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    State {
        tick: u64,
        t_sim: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        drones: Option<Vec<DroneView>>,
        #[serde(skip_serializing_if = "Option::is_none")]
        centroid: Option<XY>,
        hand: XY,
        #[serde(skip_serializing_if = "Option::is_none")]
        formation_label: Option<FormationLabel>,
        active_pattern: Option<PatternId>,
        events: Vec<TraceEvent>,
    },
    Pattern {
        tick: u64,
        id: PatternId,
        timeline: TactilePattern,
    },
    Scenario {
        name: String,
        hash: String,
        mode: Mode,
        running: bool,
        sample_time: f64,
        decimation: u32,
        workspace_size: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        obstacles: Option<Vec<Obstacle<f64>>>,
        #[serde(skip_serializing_if = "Option::is_none")]
        finish: Option<FinishView>,
    },
    MetricsSummary {
        note: String,
        metrics: Option<RunMetrics>,
    },
    Error {
        code: ErrorCode,
        detail: String,
    },
    Heartbeat {
        tick: u64,
        running: bool,
        overruns: u64,
        dropped_frames: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinishView {
    pub center: Vec2,
    pub radius: f64,
}

impl ServerMessage {
    pub fn error(code: ErrorCode, detail: impl Into<String>) -> Self {
        ServerMessage::Error {
            code,
            detail: detail.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server frames serialize")
    }
}
