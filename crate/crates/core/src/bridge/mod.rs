//! Line-delimited JSON protocol for environments hosted in another process.
//!
//! Requests: `spec`, `reset{seed}`, `step{action}`, `close`. Every request
//! except `close` is answered by exactly one line: `spec{v, obs_dim, act_dim,
//! max_steps}`, `state{obs, reward, done}` or `error{code, message}`.
//! `close` is terminal and unanswered.

mod client;
mod server;
mod transport;

pub use client::BridgeEnv;
pub use server::{serve, serve_tcp, ServeSummary};
pub use transport::{ChildTransport, TcpTransport, Transport};

use std::time::Duration;

use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Request {
    Spec,
    Reset { seed: u64 },
    Step { action: Vec<f64> },
    Close,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Response {
    Spec { v: u32, obs_dim: usize, act_dim: usize, max_steps: usize },
    State { obs: Vec<f64>, reward: f64, done: bool },
    Error { code: String, message: String },
}

/// Error codes sent by the server side.
pub mod codes {
    pub const MALFORMED: &str = "malformed";
    pub const NOT_RESET: &str = "not_reset";
    pub const EPISODE_DONE: &str = "episode_done";
    pub const BAD_ACTION: &str = "bad_action";
    pub const NON_FINITE: &str = "non_finite";
    pub const ENV: &str = "env_error";
}

pub fn encode<T: Serialize>(msg: &T) -> String {
    serde_json::to_string(msg).expect("protocol messages always serialize")
}

pub fn decode_request(line: &str) -> Result<Request, serde_json::Error> {
    serde_json::from_str(line.trim_end())
}

pub fn decode_response(line: &str) -> Result<Response, serde_json::Error> {
    serde_json::from_str(line.trim_end())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_encodings() {
        assert_eq!(encode(&Request::Spec), r#"{"type":"spec"}"#);
        assert_eq!(encode(&Request::Reset { seed: 7 }), r#"{"type":"reset","seed":7}"#);
        assert_eq!(encode(&Request::Step { action: vec![0.1, -0.2] }), r#"{"type":"step","action":[0.1,-0.2]}"#);
        assert_eq!(
            encode(&Response::Spec { v: 1, obs_dim: 22, act_dim: 6, max_steps: 1000 }),
            r#"{"type":"spec","v":1,"obs_dim":22,"act_dim":6,"max_steps":1000}"#
        );
    }

    #[test]
    fn step_action_round_trip() {
        let line = encode(&Request::Step { action: vec![0.1, -0.2] });
        match decode_request(&line).unwrap() {
            Request::Step { action } => {
                assert!((action[0] - 0.1).abs() <= 1e-15 && (action[1] + 0.2).abs() <= 1e-15);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_fields_and_types_rejected() {
        assert!(decode_request(r#"{"type":"jump"}"#).is_err());
        assert!(decode_request(r#"{"type":"reset","seed":1,"x":2}"#).is_err());
        assert!(decode_request(r#"{"type":"reset","seed":-1}"#).is_err());
        assert!(decode_response("not json").is_err());
    }
}
