use std::time::{Duration, Instant};

use super::transport::{ChildTransport, TcpTransport, Transport};
use super::{codes, decode_response, encode, Request, Response, DEFAULT_TIMEOUT, PROTOCOL_VERSION};
use crate::envs::{EnvError, EnvSpec, Environment, StepInfo, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Idle,
    Active,
    Done,
    Failed,
}

/// An environment living in another process, driven one request at a time.
pub struct BridgeEnv {
    endpoint: String,
    transport: Box<dyn Transport>,
    spec: EnvSpec,
    timeout: Duration,
    phase: Phase,
}

impl std::fmt::Debug for BridgeEnv {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgeEnv").field("endpoint", &self.endpoint).field("spec", &self.spec).finish()
    }
}

impl BridgeEnv {
    /// `cmd:<program> [args...]` spawns a child over stdio; `tcp:<host:port>` connects.
    pub fn connect(endpoint: &str) -> Result<Self, EnvError> {
        Self::connect_with_timeout(endpoint, DEFAULT_TIMEOUT)
    }

    pub fn connect_with_timeout(endpoint: &str, timeout: Duration) -> Result<Self, EnvError> {
        let transport: Box<dyn Transport> = if let Some(cmd) = endpoint.strip_prefix("cmd:") {
            Box::new(ChildTransport::spawn(cmd)?)
        } else if let Some(addr) = endpoint.strip_prefix("tcp:") {
            Box::new(TcpTransport::connect(addr, timeout)?)
        } else {
            return Err(EnvError::Config(format!("bridge endpoint must start with cmd: or tcp:, got {endpoint:?}")));
        };
        Self::over(endpoint.to_string(), transport, timeout)
    }

    /// Handshake over an already-open transport.
    pub fn over(endpoint: String, transport: Box<dyn Transport>, timeout: Duration) -> Result<Self, EnvError> {
        let mut env = BridgeEnv { endpoint, transport, spec: EnvSpec::new(1, 1, 1)?, timeout, phase: Phase::Idle };
        match env.exchange(&Request::Spec)? {
            Response::Spec { v, obs_dim, act_dim, max_steps } => {
                if v != PROTOCOL_VERSION {
                    return Err(EnvError::Protocol(format!("server speaks protocol version {v}, expected {PROTOCOL_VERSION}")));
                }
                env.spec =
                    EnvSpec::new(obs_dim, act_dim, max_steps).map_err(|e| EnvError::Protocol(format!("invalid spec from server: {e}")))?;
            }
            other => return Err(EnvError::Protocol(format!("expected a spec response, got {other:?}"))),
        }
        Ok(env)
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// One request, one response. Transport and framing problems poison the
    /// connection; server-reported errors do not.
    fn exchange(&mut self, request: &Request) -> Result<Response, EnvError> {
        if self.phase == Phase::Failed {
            return Err(EnvError::Failed);
        }
        let result = self.transport.send_line(&encode(request)).and_then(|_| {
            let line = self.transport.recv_line(self.timeout)?;
            decode_response(&line).map_err(|e| EnvError::Protocol(format!("{e} in line {line:?}")))
        });
        match result {
            Ok(Response::Error { code, message }) => Err(EnvError::Remote { code, message }),
            Ok(r) => Ok(r),
            Err(e) => {
                self.phase = Phase::Failed;
                Err(e)
            }
        }
    }

    fn check_obs(&mut self, obs: &[f64]) -> Result<(), EnvError> {
        let problem = if obs.len() != self.spec.obs_dim {
            Some(format!("observation has {} components, spec says {}", obs.len(), self.spec.obs_dim))
        } else {
            obs.iter().position(|v| !v.is_finite()).map(|j| format!("observation component {j} is not finite"))
        };
        match problem {
            Some(p) => {
                self.phase = Phase::Failed;
                Err(EnvError::Protocol(p))
            }
            None => Ok(()),
        }
    }
}

impl Environment for BridgeEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>, EnvError> {
        match self.exchange(&Request::Reset { seed })? {
            Response::State { obs, done: false, .. } => {
                self.check_obs(&obs)?;
                self.phase = Phase::Active;
                Ok(obs)
            }
            Response::State { done: true, .. } => {
                self.phase = Phase::Failed;
                Err(EnvError::Protocol("reset returned a finished episode".into()))
            }
            other => {
                self.phase = Phase::Failed;
                Err(EnvError::Protocol(format!("expected a state response, got {other:?}")))
            }
        }
    }

    fn step(&mut self, action: &[f64]) -> Result<Transition, EnvError> {
        match self.phase {
            Phase::Idle => return Err(EnvError::NotReset),
            Phase::Done => return Err(EnvError::EpisodeDone),
            Phase::Failed => return Err(EnvError::Failed),
            Phase::Active => {}
        }
        let (action, clamped) = self.spec.clamp_action(action)?;
        let start = Instant::now();
        let response = self.exchange(&Request::Step { action });
        let latency = start.elapsed();
        match response {
            Ok(Response::State { obs, reward, done }) => {
                self.check_obs(&obs)?;
                if !reward.is_finite() {
                    self.phase = Phase::Failed;
                    return Err(EnvError::Protocol(format!("reward {reward} is not finite")));
                }
                if done {
                    self.phase = Phase::Done;
                }
                Ok(Transition {
                    obs,
                    reward,
                    done,
                    info: StepInfo { action_clamped: clamped, latency: Some(latency), ..StepInfo::default() },
                })
            }
            Ok(other) => {
                self.phase = Phase::Failed;
                Err(EnvError::Protocol(format!("expected a state response, got {other:?}")))
            }
            Err(EnvError::Remote { code, .. }) if code == codes::EPISODE_DONE => {
                self.phase = Phase::Done;
                Err(EnvError::EpisodeDone)
            }
            Err(e) => Err(e),
        }
    }

    fn name(&self) -> String {
        self.endpoint.clone()
    }
}

impl Drop for BridgeEnv {
    fn drop(&mut self) {
        if self.phase != Phase::Failed {
            let _ = self.transport.send_line(&encode(&Request::Close));
        }
        self.transport.close();
    }
}
