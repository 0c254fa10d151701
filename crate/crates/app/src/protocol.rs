//! Wire schema of the `/ws` endpoint.
//!
//! Every message is one JSON object terminated by a newline. The server
//! sends envelopes `{"v":1,"kind":…,"t":…,"payload":…}`; clients send
//! control messages `{"v":1,"cmd":…,"args":…}`. Messages with another `v`
//! are rejected.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use uwintent_core::mapper::ControlMode;

/// Schema version carried by every message.
pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    /// Superlimb feedback and the command in force.
    State,
    /// A classified segment and what it did.
    Token,
    /// Segment boundaries as found by endpoint detection.
    Segment,
    /// Latency statistics and session status.
    Health,
    /// Reply to a control message.
    Ack,
    /// Rejection of a control message.
    Error,
}

/// Server-to-client message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub v: u32,
    pub kind: Kind,
    /// Stream time, seconds.
    pub t: f64,
    pub payload: Value,
}

impl Envelope {
    pub fn new(kind: Kind, t: f64, payload: Value) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            kind,
            t,
            payload,
        }
    }

    pub fn error(t: f64, cmd: Option<&str>, message: impl Into<String>) -> Self {
        Self::new(Kind::Error, t, json!({ "cmd": cmd, "message": message.into() }))
    }

    /// One newline-terminated JSON line.
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("envelopes always serialize");
        s.push('\n');
        s
    }
}

/// A decoded client request.
#[derive(Debug, Clone, PartialEq)]
pub enum Control {
    Start,
    Stop,
    /// One or more gains, by name (`K1`…`K5`, `k`, `max_speed`, `reject_confidence`).
    SetGain(Vec<(String, f64)>),
    SetMode(ControlMode),
    LoadScenario(String),
}

impl Control {
    pub fn name(&self) -> &'static str {
        match self {
            Control::Start => "start",
            Control::Stop => "stop",
            Control::SetGain(_) => "set_gain",
            Control::SetMode(_) => "set_mode",
            Control::LoadScenario(_) => "load_scenario",
        }
    }
}

/// Why a client message was rejected, with the command name when known.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub cmd: Option<String>,
    pub message: String,
}

impl Rejection {
    fn new(cmd: Option<&str>, message: impl Into<String>) -> Self {
        Self {
            cmd: cmd.map(str::to_string),
            message: message.into(),
        }
    }
}

/// Parses one control line.
///
/// `set_gain` accepts `{"name":"K4","value":45}` or a map of gains such as
/// `{"K4":45}`; `set_mode` takes `{"mode":"servo_angle"|"thruster_speed"}`;
/// `load_scenario` takes `{"path":…}`.
pub fn parse_control(line: &str) -> Result<Control, Rejection> {
    let value: Value = serde_json::from_str(line).map_err(|e| Rejection::new(None, format!("invalid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Rejection::new(None, "control message must be a JSON object"))?;
    let cmd = obj.get("cmd").and_then(Value::as_str);
    match obj.get("v").and_then(Value::as_u64) {
        Some(v) if v == u64::from(PROTOCOL_VERSION) => {}
        Some(v) => return Err(Rejection::new(cmd, format!("unsupported protocol version {v}"))),
        None => return Err(Rejection::new(cmd, "missing protocol version \"v\"")),
    }
    let cmd = cmd.ok_or_else(|| Rejection::new(None, "missing \"cmd\""))?;
    let empty = serde_json::Map::new();
    let args = match obj.get("args") {
        None | Some(Value::Null) => &empty,
        Some(Value::Object(m)) => m,
        Some(_) => return Err(Rejection::new(Some(cmd), "\"args\" must be an object")),
    };
    let bad = |msg: &str| Rejection::new(Some(cmd), msg);
    match cmd {
        "start" => Ok(Control::Start),
        "stop" => Ok(Control::Stop),
        "set_gain" => {
            let gains: Vec<(String, f64)> = match (args.get("name"), args.get("value")) {
                (Some(name), Some(value)) => {
                    let name = name.as_str().ok_or_else(|| bad("gain name must be a string"))?;
                    let value = value.as_f64().ok_or_else(|| bad("gain value must be a number"))?;
                    vec![(name.to_string(), value)]
                }
                _ => args
                    .iter()
                    .map(|(k, v)| v.as_f64().map(|x| (k.clone(), x)).ok_or_else(|| bad("gain values must be numbers")))
                    .collect::<Result<_, _>>()?,
            };
            if gains.is_empty() {
                return Err(bad("set_gain needs at least one gain"));
            }
            Ok(Control::SetGain(gains))
        }
        "set_mode" => {
            let mode = args.get("mode").cloned().ok_or_else(|| bad("set_mode needs \"mode\""))?;
            serde_json::from_value(mode)
                .map(Control::SetMode)
                .map_err(|_| bad("mode must be \"servo_angle\" or \"thruster_speed\""))
        }
        "load_scenario" => args
            .get("path")
            .and_then(Value::as_str)
            .map(|p| Control::LoadScenario(p.to_string()))
            .ok_or_else(|| bad("load_scenario needs a string \"path\"")),
        other => Err(Rejection::new(Some(other), format!("unknown command {other:?}"))),
    }
}
