//! JSON text frames exchanged with teleoperation clients.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use wipsim::leg::{JointConfiguration, LegJoints};

/// Largest accepted speed command magnitude (m/s).
pub const MAX_COMMAND_SPEED: f64 = 1.0;

/// Client to server.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ClientFrame {
    Cmd {
        vx: f64,
        #[serde(default)]
        yaw_rate: f64,
        #[serde(default)]
        pose: Option<String>,
    },
}

/// Server to client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerFrame {
    State(StateFrame),
    Error {
        code: ErrorCode,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        detail: Option<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub t: f64,
    pub x: f64,
    pub xdot: f64,
    pub theta: f64,
    pub thetadot: f64,
    pub torque: f64,
    /// Joint angles per side, keyed by joint name (rad).
    pub joints: BTreeMap<String, LegJoints>,
    pub mode: String,
}

impl StateFrame {
    pub fn joints_of(pose: &JointConfiguration, wheel_angle: f64) -> BTreeMap<String, LegJoints> {
        let mut left = pose.left;
        let mut right = pose.right;
        left.wheel = wheel_angle;
        right.wheel = wheel_angle;
        BTreeMap::from([("left".to_string(), left), ("right".to_string(), right)])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Not valid JSON or not a known frame.
    Malformed,
    /// Another connection already holds the commander seat.
    CommanderOccupied,
    /// Command values outside the accepted range.
    OutOfRange,
    UnknownPose,
}

/// A validated setpoint.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Command {
    pub vx: f64,
    /// Carried through for clients; the planar model has no yaw.
    pub yaw_rate: f64,
    pub pose: Option<String>,
}

/// Parses and validates one client text frame.
pub fn parse_command(text: &str) -> Result<Command, (ErrorCode, String)> {
    let frame: ClientFrame =
        serde_json::from_str(text).map_err(|e| (ErrorCode::Malformed, e.to_string()))?;
    let ClientFrame::Cmd { vx, yaw_rate, pose } = frame;
    if !vx.is_finite() || vx.abs() > MAX_COMMAND_SPEED || !yaw_rate.is_finite() {
        return Err((
            ErrorCode::OutOfRange,
            format!("vx must be finite with |vx| <= {MAX_COMMAND_SPEED}"),
        ));
    }
    if let Some(p) = &pose {
        if JointConfiguration::preset(p).is_none() {
            return Err((ErrorCode::UnknownPose, format!("unknown pose preset '{p}'")));
        }
    }
    Ok(Command { vx, yaw_rate, pose })
}

pub fn error_text(code: ErrorCode, detail: Option<String>) -> String {
    serde_json::to_string(&ServerFrame::Error { code, detail }).expect("error frame serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_frames_parse() {
        let c = parse_command(r#"{"type":"cmd","vx":0.3,"yaw_rate":0.1,"pose":"squat"}"#).unwrap();
        assert_eq!(c.vx, 0.3);
        assert_eq!(c.pose.as_deref(), Some("squat"));
        let c = parse_command(r#"{"type":"cmd","vx":-0.5}"#).unwrap();
        assert_eq!((c.yaw_rate, c.pose), (0.0, None));
    }

    #[test]
    fn bad_frames_are_classified() {
        for (text, code) in [
            ("not json", ErrorCode::Malformed),
            (r#"{"type":"state"}"#, ErrorCode::Malformed),
            (r#"{"type":"cmd"}"#, ErrorCode::Malformed),
            (r#"{"type":"cmd","vx":"fast"}"#, ErrorCode::Malformed),
            (r#"{"type":"cmd","vx":0.1,"extra":1}"#, ErrorCode::Malformed),
            (r#"{"type":"cmd","vx":5.0}"#, ErrorCode::OutOfRange),
            (
                r#"{"type":"cmd","vx":0.1,"pose":"handstand"}"#,
                ErrorCode::UnknownPose,
            ),
        ] {
            assert_eq!(parse_command(text).unwrap_err().0, code, "{text}");
        }
    }

    #[test]
    fn server_frames_have_documented_shape() {
        let e: serde_json::Value =
            serde_json::from_str(&error_text(ErrorCode::CommanderOccupied, None)).unwrap();
        assert_eq!(
            e,
            serde_json::json!({"type": "error", "code": "commander_occupied"})
        );
        let frame = ServerFrame::State(StateFrame {
            t: 0.02,
            x: 0.0,
            xdot: 0.0,
            theta: 0.0,
            thetadot: 0.0,
            torque: 0.0,
            joints: StateFrame::joints_of(&JointConfiguration::straight(), 0.0),
            mode: "lqr".into(),
        });
        let v: serde_json::Value = serde_json::to_value(&frame).unwrap();
        assert_eq!(v["type"], "state");
        assert_eq!(v["mode"], "lqr");
        assert_eq!(v["joints"]["left"]["knee"], 0.0);
        for key in ["t", "x", "xdot", "theta", "thetadot", "torque"] {
            assert!(v[key].is_number(), "{key}");
        }
    }
}
