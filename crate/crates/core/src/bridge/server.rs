use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;

use serde::Serialize;

use super::{codes, decode_request, encode, Request, Response, PROTOCOL_VERSION};
use crate::envs::{EnvError, Environment};

/// What a server loop observed, for cross-checking against client logs.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ServeSummary {
    pub requests: usize,
    pub errors: usize,
    pub steps: usize,
    /// Cumulative reward per episode, in reset order.
    pub episode_rewards: Vec<f64>,
}

impl ServeSummary {
    pub fn total_reward(&self) -> f64 {
        self.episode_rewards.iter().sum()
    }
}

fn error_code(e: &EnvError) -> &'static str {
    match e {
        EnvError::NotReset => codes::NOT_RESET,
        EnvError::EpisodeDone => codes::EPISODE_DONE,
        EnvError::ActionDimension { .. } | EnvError::NonFiniteAction { .. } => codes::BAD_ACTION,
        _ => codes::ENV,
    }
}

fn sanitize(obs: Vec<f64>, reward: f64, done: bool) -> Response {
    if obs.iter().all(|v| v.is_finite()) && reward.is_finite() {
        Response::State { obs, reward, done }
    } else {
        Response::Error { code: codes::NON_FINITE.into(), message: "environment produced a non-finite value".into() }
    }
}

/// Answers requests from `input` until `close` or end of stream.
pub fn serve<R: BufRead, W: Write>(env: &mut dyn Environment, input: R, mut output: W) -> std::io::Result<ServeSummary> {
    let mut summary = ServeSummary::default();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        summary.requests += 1;
        let response = match decode_request(&line) {
            Err(e) => Response::Error { code: codes::MALFORMED.into(), message: format!("{e}: {line}") },
            Ok(Request::Close) => break,
            Ok(Request::Spec) => {
                let s = env.spec();
                Response::Spec { v: PROTOCOL_VERSION, obs_dim: s.obs_dim, act_dim: s.act_dim, max_steps: s.max_steps }
            }
            Ok(Request::Reset { seed }) => match env.reset(seed) {
                Ok(obs) => {
                    summary.episode_rewards.push(0.0);
                    sanitize(obs, 0.0, false)
                }
                Err(e) => Response::Error { code: error_code(&e).into(), message: e.to_string() },
            },
            Ok(Request::Step { action }) => match env.step(&action) {
                Ok(t) => {
                    summary.steps += 1;
                    if let Some(r) = summary.episode_rewards.last_mut() {
                        *r += t.reward;
                    }
                    sanitize(t.obs, t.reward, t.done)
                }
                Err(e) => Response::Error { code: error_code(&e).into(), message: e.to_string() },
            },
        };
        if matches!(response, Response::Error { .. }) {
            summary.errors += 1;
        }
        writeln!(output, "{}", encode(&response))?;
        output.flush()?;
    }
    Ok(summary)
}

/// Accepts one client on `listener` and serves it.
pub fn serve_tcp(env: &mut dyn Environment, listener: &TcpListener) -> std::io::Result<ServeSummary> {
    let (stream, _) = listener.accept()?;
    stream.set_nodelay(true).ok();
    let reader = BufReader::new(stream.try_clone()?);
    serve(env, reader, stream)
}
