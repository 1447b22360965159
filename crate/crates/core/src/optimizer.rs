//! Proposers of new metric definitions.
//!
//! [`MockOptimizer`] walks a fixed candidate pool. [`HttpOptimizer`] sends the
//! trial history to a chat-completion endpoint and reads back one new
//! definition.

use std::fmt;
use std::thread;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::codec::Dimension;
use crate::error::{Error, Result};
use crate::fdmpo::TrialRecord;
use crate::rng::{stream, stream_rng, SplitMix64};

/// Environment variable holding the endpoint credential.
pub const API_KEY_ENV: &str = "FDMPO_API_KEY";

/// Starting definition for a dimension when none is given.
pub fn default_definition(d: Dimension) -> &'static str {
    match d {
        Dimension::Visual => "Rate the visual quality of the edited image.",
        Dimension::Editing => "Rate how faithfully the edited image follows the editing instruction.",
        Dimension::Preservation => "Rate how well the edited image preserves the content of the original image.",
    }
}

/// Five candidate definitions per dimension for the mock optimizer.
pub fn default_pool(d: Dimension) -> Vec<String> {
    let pool: [&str; 5] = match d {
        Dimension::Visual => [
            "Judge only the edited image: sharpness, noise and compression artifacts lower the score.",
            "Score the perceptual quality of the edited image as a photograph, ignoring the instruction.",
            "Rate how natural and artifact-free the edited image looks, with blur and distortions weighing most.",
            "Focus on sharpness and artifacts.",
            "Compare the edited image with the original and penalize any loss of visual fidelity.",
        ],
        Dimension::Editing => [
            "Check whether every part of the instruction is carried out in the edited image.",
            "Score how precisely the requested change appears, penalizing missing or wrong edits.",
            "Rate instruction compliance: the edit must match the requested object, attribute and location.",
            "Focus on whether the requested edit is visible.",
            "Judge semantic agreement between the instruction and the difference between the two images.",
        ],
        Dimension::Preservation => [
            "Check that regions the instruction does not mention stay identical to the original.",
            "Score how much of the original identity, layout and background survives the edit.",
            "Penalize unrequested changes to content outside the edited region.",
            "Focus on unchanged background and identity.",
            "Rate structural consistency between the original and the edited image outside the edit.",
        ],
    };
    pool.iter().map(|s| s.to_string()).collect()
}

pub trait DefinitionProposer {
    /// Proposes the next definition given the history so far (sorted by
    /// iteration, never empty).
    fn propose_next(&mut self, history: &[TrialRecord]) -> Result<String>;
}

/// Returns the first pool entry not yet in the history, in pool order; once
/// every entry has been tried it cycles through the pool.
#[derive(Debug, Clone)]
pub struct MockOptimizer {
    pool: Vec<String>,
}

impl MockOptimizer {
    pub fn new(pool: Vec<String>) -> Result<Self> {
        if pool.is_empty() || pool.iter().any(|d| d.trim().is_empty()) {
            return Err(Error::Config(
                "mock candidate pool must hold non-empty definitions".into(),
            ));
        }
        Ok(MockOptimizer { pool })
    }
}

impl DefinitionProposer for MockOptimizer {
    fn propose_next(&mut self, history: &[TrialRecord]) -> Result<String> {
        if let Some(next) = self.pool.iter().find(|c| !history.iter().any(|r| &r.definition == *c)) {
            return Ok(next.clone());
        }
        Ok(self.pool[history.len() % self.pool.len()].clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpEndpoint {
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub timeout: Duration,
    /// Retries after the first attempt.
    pub max_retries: u32,
    /// First backoff delay; doubles per retry up to `backoff_max`.
    pub backoff_base: Duration,
    pub backoff_max: Duration,
}

impl Default for HttpEndpoint {
    fn default() -> Self {
        HttpEndpoint {
            base_url: String::new(),
            model: "gpt-4o".to_string(),
            temperature: 1.0,
            timeout: Duration::from_secs(60),
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
            backoff_max: Duration::from_secs(8),
        }
    }
}

impl HttpEndpoint {
    pub fn url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }

    /// Delay before retry number `retry` (0-based): exponential, capped, and
    /// scaled by a uniform factor in `[0.5, 1)`.
    pub fn backoff(&self, retry: u32, rng: &mut SplitMix64) -> Duration {
        let exp = self
            .backoff_base
            .saturating_mul(1u32.checked_shl(retry).unwrap_or(u32::MAX));
        exp.min(self.backoff_max).mul_f64(rng.random_range(0.5..1.0))
    }
}

/// Optimizer selection as configured by the user.
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerEndpoint {
    Mock { pool: Vec<String> },
    Http(HttpEndpoint),
}

impl OptimizerEndpoint {
    /// Checks configuration that must hold before any network traffic: a
    /// non-empty base URL and a credential in [`API_KEY_ENV`].
    pub fn preflight(&self) -> Result<()> {
        match self {
            OptimizerEndpoint::Mock { pool } => MockOptimizer::new(pool.clone()).map(|_| ()),
            OptimizerEndpoint::Http(ep) => {
                if ep.base_url.trim().is_empty() {
                    return Err(Error::Config("http optimizer needs a base URL".into()));
                }
                api_key().map(|_| ())
            }
        }
    }

    pub fn build(&self, dimension: Dimension, seed: u64) -> Result<Box<dyn DefinitionProposer>> {
        self.preflight()?;
        Ok(match self {
            OptimizerEndpoint::Mock { pool } => Box::new(MockOptimizer::new(pool.clone())?),
            OptimizerEndpoint::Http(ep) => Box::new(HttpOptimizer::new(ep.clone(), api_key()?, dimension, seed)),
        })
    }
}

fn api_key() -> Result<String> {
    match std::env::var(API_KEY_ENV) {
        Ok(k) if !k.trim().is_empty() => Ok(k),
        _ => Err(Error::Config(format!("{API_KEY_ENV} is not set"))),
    }
}

const SYSTEM_PROMPT: &str = "You refine metric definitions for an automatic image-editing quality \
assessor. The assessor reads a metric definition, looks at an original image, an edited image and \
the editing instruction, and outputs a score. Each definition is rated by its definition value: how \
much probability the assessor assigns to the human ground-truth score digits when prompted with that \
definition. Higher is better. Compare the rated definitions, infer which criteria align with the \
human raters, and write one improved definition. Reply with the definition text only: no preamble, \
no explanation, no quotes, no code fences.";

/// Renders the system and user messages for the history, listing trials
/// sorted ascending by definition value.
pub fn render_meta_prompt(history: &[TrialRecord], dimension: Dimension) -> (String, String) {
    let mut sorted: Vec<&TrialRecord> = history.iter().collect();
    sorted.sort_by(|a, b| a.v_d.total_cmp(&b.v_d).then(a.iter.cmp(&b.iter)));
    let mut user = format!(
        "Dimension: {}\n\nPrevious definitions and their definition values, from lowest to highest:\n\n",
        dimension.label()
    );
    for r in sorted {
        user.push_str(&format!("Definition: {}\nValue: {:.6}\n\n", r.definition, r.v_d));
    }
    user.push_str("Write a new definition that should score higher than all of the above.");
    (SYSTEM_PROMPT.to_string(), user)
}

/// Strips whitespace, a surrounding code fence and surrounding quotes.
pub fn clean_reply(text: &str) -> String {
    let mut s = text.trim();
    if let Some(rest) = s.strip_prefix("```") {
        // drop an optional language tag on the fence line
        let body = rest.split_once('\n').map_or("", |(_, b)| b);
        s = body.trim_end().strip_suffix("```").unwrap_or(body).trim();
    }
    for (open, close) in [('"', '"'), ('\'', '\''), ('\u{201c}', '\u{201d}'), ('`', '`')] {
        if s.len() >= 2 && s.starts_with(open) && s.ends_with(close) {
            s = s[open.len_utf8()..s.len() - close.len_utf8()].trim();
            break;
        }
    }
    s.to_string()
}

/// Chat-completion client with bounded, jittered retries.
pub struct HttpOptimizer {
    endpoint: HttpEndpoint,
    api_key: String,
    dimension: Dimension,
    agent: ureq::Agent,
    jitter: SplitMix64,
}

impl fmt::Debug for HttpOptimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpOptimizer")
            .field("endpoint", &self.endpoint)
            .field("dimension", &self.dimension)
            .finish_non_exhaustive()
    }
}

enum Attempt {
    Done(String),
    Retry { status: Option<u16>, message: String },
    Fatal(Error),
}

impl HttpOptimizer {
    pub fn new(endpoint: HttpEndpoint, api_key: String, dimension: Dimension, seed: u64) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(endpoint.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpOptimizer {
            endpoint,
            api_key,
            dimension,
            agent,
            jitter: stream_rng(seed, stream::JITTER, 0),
        }
    }

    pub fn request_body(&self, history: &[TrialRecord]) -> Value {
        let (system, user) = render_meta_prompt(history, self.dimension);
        json!({
            "model": self.endpoint.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": self.endpoint.temperature,
        })
    }

    fn attempt(&self, body: &Value) -> Attempt {
        let resp = self
            .agent
            .post(&self.endpoint.url())
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body);
        let mut resp = match resp {
            Ok(r) => r,
            Err(e) => {
                return Attempt::Retry {
                    status: None,
                    message: e.to_string(),
                }
            }
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => {
                return Attempt::Retry {
                    status: Some(status),
                    message: e.to_string(),
                }
            }
        };
        if status == 429 || status >= 500 {
            return Attempt::Retry {
                status: Some(status),
                message: format!("server returned {status}"),
            };
        }
        if !(200..300).contains(&status) {
            return Attempt::Fatal(Error::Endpoint {
                status: Some(status),
                attempts: 1,
                message: format!("server returned {status}"),
            });
        }
        let parsed: Value = match serde_json::from_str(&text) {
            Ok(v) => v,
            Err(e) => return Attempt::Fatal(Error::Protocol(format!("response is not JSON: {e}"))),
        };
        let content = parsed
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .unwrap_or_default();
        let cleaned = clean_reply(content);
        if cleaned.is_empty() {
            return Attempt::Fatal(Error::Protocol("endpoint returned an empty definition".into()));
        }
        Attempt::Done(cleaned)
    }
}

impl DefinitionProposer for HttpOptimizer {
    fn propose_next(&mut self, history: &[TrialRecord]) -> Result<String> {
        let body = self.request_body(history);
        let attempts = self.endpoint.max_retries + 1;
        let mut last = (None, String::new());
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(self.endpoint.backoff(attempt - 1, &mut self.jitter));
            }
            match self.attempt(&body) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fatal(Error::Endpoint { status, message, .. }) => {
                    return Err(Error::Endpoint {
                        status,
                        attempts: attempt + 1,
                        message,
                    })
                }
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry { status, message } => last = (status, message),
            }
        }
        Err(Error::Endpoint {
            status: last.0,
            attempts,
            message: last.1,
        })
    }
}
