//! Three-stage chain-of-thought VLM client with record/replay transports.

use std::collections::VecDeque;
use std::path::Path;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::render::GrayImage;
use super::{parse_axis, AxisReport, AxisSource, Role};
use crate::error::{Error, Result};

pub const DEFAULT_API_KEY_ENV: &str = "MATCHMAKER_VLM_KEY";
pub const MAX_ATTEMPTS: u32 = 3;

pub const PROMPT_DESCRIBE: &str = "Briefly describe the object shown in this image.";
pub const PROMPT_ROLE: &str = "Assembly parts come in pairs: a plug is inserted into its mate, \
a receptacle receives its mate. Think step by step about which one this object is. \
Finish your reply with a single line of the form `ANSWER: plug` or `ANSWER: receptacle`.";
pub const PROMPT_AXIS: &str = "The image is rendered with +z pointing up, and the camera sits \
on the +x/+y side looking towards the origin. Think step by step about how the mating part \
moves onto this object during assembly. Finish your reply with a single line of the form \
`AXIS: <d>` where <d> is the direction the mating part travels, one of +x, -x, +y, -y, +z, -z.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub prompt: String,
    pub response: String,
}

/// Loads a fixture: a JSON array of `{prompt, response}` objects.
pub fn load_fixture(path: &Path) -> Result<Vec<TranscriptEntry>> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&data)?)
}

pub fn save_transcript(entries: &[TranscriptEntry], path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(entries)?).map_err(|e| Error::io(path, e))
}

/// One request/response exchange with a model endpoint.
pub trait Transport: Send {
    /// Sends the request body and returns the assistant's reply text.
    fn send(&mut self, body: &Value) -> std::result::Result<String, String>;
}

/// JSON over HTTP POST. The key, if the variable is set, goes in both the
/// `Authorization: Bearer` and `x-api-key` headers.
pub struct HttpTransport {
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(endpoint: &str, api_key_env: &str, timeout: Duration) -> Self {
        let api_key = std::env::var(api_key_env).ok().filter(|k| !k.is_empty());
        if api_key.is_none() {
            log::warn!("{api_key_env} is not set; sending unauthenticated requests");
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .new_agent();
        Self {
            endpoint: endpoint.to_string(),
            api_key,
            agent,
        }
    }
}

impl Transport for HttpTransport {
    fn send(&mut self, body: &Value) -> std::result::Result<String, String> {
        let mut req = self.agent.post(&self.endpoint).header("content-type", "application/json");
        if let Some(k) = &self.api_key {
            req = req.header("authorization", &format!("Bearer {k}")).header("x-api-key", k);
        }
        let mut resp = req.send_json(body).map_err(|e| e.to_string())?;
        let text = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        let v: Value = serde_json::from_str(&text).map_err(|e| format!("response is not JSON: {e}"))?;
        reply_text(&v).ok_or_else(|| "response carries no reply text".to_string())
    }
}

/// Pulls the reply text out of the common chat-completion response shapes.
pub fn reply_text(v: &Value) -> Option<String> {
    if let Some(s) = v.as_str() {
        return Some(s.to_string());
    }
    if let Some(parts) = v.get("content").and_then(Value::as_array) {
        let text: Vec<&str> = parts.iter().filter_map(|p| p.get("text").and_then(Value::as_str)).collect();
        if !text.is_empty() {
            return Some(text.join("\n"));
        }
    }
    if let Some(c) = v.pointer("/choices/0/message/content") {
        return reply_text(c);
    }
    ["response", "content", "text", "output"]
        .iter()
        .find_map(|k| v.get(*k).and_then(Value::as_str).map(str::to_string))
}

/// Answers with recorded responses in order, ignoring the request.
pub struct ReplayTransport {
    responses: VecDeque<String>,
}

impl ReplayTransport {
    pub fn new(entries: &[TranscriptEntry]) -> Self {
        Self {
            responses: entries.iter().map(|e| e.response.clone()).collect(),
        }
    }
}

impl Transport for ReplayTransport {
    fn send(&mut self, _body: &Value) -> std::result::Result<String, String> {
        self.responses.pop_front().ok_or_else(|| "replay fixture exhausted".to_string())
    }
}

pub struct VlmSession {
    pub endpoint: String,
    pub model_name: String,
    pub api_key_env: String,
    transcript: Vec<TranscriptEntry>,
    transport: Box<dyn Transport>,
    /// Delay before the first retry; doubles after each failure.
    pub backoff: Duration,
}

impl std::fmt::Debug for VlmSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VlmSession")
            .field("endpoint", &self.endpoint)
            .field("model_name", &self.model_name)
            .field("api_key_env", &self.api_key_env)
            .field("transcript", &self.transcript)
            .finish()
    }
}

impl VlmSession {
    pub fn with_transport(endpoint: &str, model_name: &str, api_key_env: &str, transport: Box<dyn Transport>) -> Self {
        Self {
            endpoint: endpoint.to_string(),
            model_name: model_name.to_string(),
            api_key_env: api_key_env.to_string(),
            transcript: Vec::new(),
            transport,
            backoff: Duration::from_millis(500),
        }
    }

    pub fn http(endpoint: &str, model_name: &str, api_key_env: &str) -> Self {
        let t = HttpTransport::new(endpoint, api_key_env, Duration::from_secs(120));
        Self::with_transport(endpoint, model_name, api_key_env, Box::new(t))
    }

    pub fn replay(entries: &[TranscriptEntry]) -> Self {
        let mut s = Self::with_transport("replay", "replay", DEFAULT_API_KEY_ENV, Box::new(ReplayTransport::new(entries)));
        s.backoff = Duration::ZERO;
        s
    }

    pub fn from_fixture(path: &Path) -> Result<Self> {
        Ok(Self::replay(&load_fixture(path)?))
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    fn request_body(&self, prompt: &str, image_b64: &str) -> Value {
        let mut messages = Vec::new();
        let prompts = self.transcript.iter().map(|e| (e.prompt.as_str(), Some(e.response.as_str())));
        for (n, (p, reply)) in prompts.chain(std::iter::once((prompt, None))).enumerate() {
            let mut content = vec![json!({"type": "text", "text": p})];
            if n == 0 {
                content.push(json!({"type": "image", "media_type": "image/png", "data": image_b64}));
            }
            messages.push(json!({"role": "user", "content": content}));
            if let Some(r) = reply {
                messages.push(json!({"role": "assistant", "content": [{"type": "text", "text": r}]}));
            }
        }
        json!({"model": self.model_name, "messages": messages})
    }

    /// Sends one prompt, retrying transport failures with exponential backoff.
    fn ask(&mut self, prompt: &str, image_b64: &str) -> Result<String> {
        let body = self.request_body(prompt, image_b64);
        let mut delay = self.backoff;
        let mut last = String::new();
        for attempt in 1..=MAX_ATTEMPTS {
            match self.transport.send(&body) {
                Ok(reply) => {
                    self.transcript.push(TranscriptEntry {
                        prompt: prompt.to_string(),
                        response: reply.clone(),
                    });
                    return Ok(reply);
                }
                Err(e) => {
                    log::warn!("vlm request attempt {attempt}/{MAX_ATTEMPTS} failed: {e}");
                    last = e;
                    if attempt < MAX_ATTEMPTS {
                        std::thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(Error::Transport {
            attempts: MAX_ATTEMPTS,
            message: last,
        })
    }

    fn protocol_error(&self, message: String) -> Error {
        Error::Protocol {
            message,
            transcript: self.transcript.clone(),
        }
    }
}

/// Value of the last non-empty line when it reads `KEY: value`.
fn trailing_field<'a>(response: &'a str, key: &str) -> Option<&'a str> {
    let line = response.lines().map(str::trim).rfind(|l| !l.is_empty())?;
    let line = line.trim_matches(|c| c == '*' || c == '`' || c == '_').trim();
    let (k, v) = line.split_once(':')?;
    k.trim().eq_ignore_ascii_case(key).then(|| v.trim().trim_matches(|c| c == '*' || c == '`' || c == '.').trim())
}

/// Runs the describe / role / axis dialogue on a rendered preview.
pub fn query_vlm(session: &mut VlmSession, image: &GrayImage) -> Result<AxisReport> {
    let b64 = base64::engine::general_purpose::STANDARD.encode(image.to_png()?);
    session.ask(PROMPT_DESCRIBE, &b64)?;

    let reply = session.ask(PROMPT_ROLE, &b64)?;
    let role = trailing_field(&reply, "ANSWER")
        .and_then(|v| v.parse::<Role>().ok())
        .ok_or_else(|| session.protocol_error("role reply lacks a trailing `ANSWER: plug|receptacle` line".into()))?;

    let reply = session.ask(PROMPT_AXIS, &b64)?;
    let axis = trailing_field(&reply, "AXIS")
        .and_then(|v| parse_axis(v).ok().filter(|_| v.chars().count() == 2))
        .ok_or_else(|| session.protocol_error("axis reply lacks a trailing `AXIS: ±x|±y|±z` line".into()))?;

    AxisReport::new(role, axis, AxisSource::Vlm, None)
}
