//! HTTP node evaluator and the echo stub server used to test it.
//!
//! Wire format, one POST per node call:
//!
//! ```text
//! request:  {"node": int, "role": "entry"|"middle"|"end", "task_input": string,
//!            "prior": [{"node": int, "text": string}, ...], "prompt": string}
//! response: {"text": string}
//! ```

use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{Expert, Message, NodeContext, NodeEvaluator, Payload, PositionKind};

/// Environment variable that, when set, replaces every expert endpoint URL.
pub const ENDPOINT_ENV: &str = "HETEROSWARM_ENDPOINT";

pub const ENTRY_PROMPT: &str = "Please answer the following question.";
pub const MIDDLE_PROMPT: &str = "Please answer the following question with the help of previous responses, feel free to ignore wrong or unhelpful responses.";
pub const END_PROMPT: &str = "Please answer the following question with the help of previous responses, feel free to ignore wrong or unhelpful responses. Make sure to provide a final and definitive answer.";

pub fn preamble(kind: PositionKind) -> &'static str {
    match kind {
        PositionKind::Entry => ENTRY_PROMPT,
        PositionKind::Middle => MIDDLE_PROMPT,
        PositionKind::End => END_PROMPT,
    }
}

/// A remote expert: one model server.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoint {
    pub url: String,
}

impl Endpoint {
    pub fn new(url: impl Into<String>) -> Self {
        Self { url: url.into() }
    }
}

impl Expert for Endpoint {
    fn parameters(&self) -> Option<&[f64]> {
        None
    }

    fn with_parameters(&self, _: Vec<f64>) -> Option<Self> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorResponse {
    pub node: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRequest {
    pub node: usize,
    pub role: PositionKind,
    pub task_input: String,
    pub prior: Vec<PriorResponse>,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeResponse {
    pub text: String,
}

/// Prompt text: preamble, the question, then each prior response in order.
pub fn compose_prompt(kind: PositionKind, task_input: &str, prior: &[PriorResponse]) -> String {
    let mut prompt = format!("{}\n\nQuestion: {task_input}", preamble(kind));
    for (k, p) in prior.iter().enumerate() {
        prompt.push_str(&format!("\n\nPrevious response {} (node {}):\n{}", k + 1, p.node, p.text));
    }
    prompt
}

/// Builds the request a node sends.
pub fn build_request(ctx: &NodeContext, inputs: &[Message], task_input: &Message) -> Result<NodeRequest> {
    let question = task_input.as_text().ok_or_else(|| Error::contract("remote evaluator needs text payloads"))?;
    let prior = inputs
        .iter()
        .map(|m| {
            let text = m.as_text().ok_or_else(|| Error::contract("remote evaluator needs text payloads"))?;
            Ok(PriorResponse { node: m.origin.unwrap_or(usize::MAX), text: text.to_owned() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NodeRequest {
        node: ctx.node,
        role: ctx.kind,
        task_input: question.to_owned(),
        prompt: compose_prompt(ctx.kind, question, &prior),
        prior,
    })
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RemoteSettings {
    pub timeout_ms: u64,
    pub retries: u32,
    pub max_in_flight: usize,
}

impl Default for RemoteSettings {
    fn default() -> Self {
        Self { timeout_ms: 60_000, retries: 2, max_in_flight: 8 }
    }
}

/// Evaluates nodes by POSTing to each expert's endpoint.
#[derive(Debug)]
pub struct RemoteEvaluator {
    agent: ureq::Agent,
    settings: RemoteSettings,
    endpoint_override: Option<String>,
    gate: Gate,
}

impl RemoteEvaluator {
    pub fn new(settings: RemoteSettings) -> Result<Self> {
        if settings.max_in_flight == 0 {
            return Err(Error::config("max_in_flight", "must be >= 1"));
        }
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(settings.timeout_ms)))
            .http_status_as_error(false)
            .build();
        Ok(Self {
            agent: config.into(),
            settings,
            endpoint_override: None,
            gate: Gate { free: Mutex::new(settings.max_in_flight), cv: Condvar::new() },
        })
    }

    /// Reads the endpoint override from [`ENDPOINT_ENV`].
    pub fn with_env_override(mut self) -> Self {
        self.endpoint_override = std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.is_empty());
        self
    }

    pub fn with_endpoint_override(mut self, url: Option<String>) -> Self {
        self.endpoint_override = url;
        self
    }

    fn post(&self, url: &str, request: &NodeRequest) -> std::result::Result<NodeResponse, String> {
        let _slot = self.gate.acquire();
        let mut response = self.agent.post(url).send_json(request).map_err(|e| e.to_string())?;
        let status = response.status();
        if !status.is_success() {
            return Err(format!("http status {status}"));
        }
        response.body_mut().read_json::<NodeResponse>().map_err(|e| format!("malformed response: {e}"))
    }
}

impl NodeEvaluator for RemoteEvaluator {
    type Expert = Endpoint;

    fn evaluate(
        &self,
        ctx: &NodeContext,
        expert: &Endpoint,
        inputs: &[Message],
        task_input: &Message,
    ) -> Result<Message> {
        let request = build_request(ctx, inputs, task_input)?;
        let url = self.endpoint_override.as_deref().unwrap_or(&expert.url);
        let mut last = String::new();
        for _ in 0..=self.settings.retries {
            match self.post(url, &request) {
                Ok(resp) => return Ok(Message { payload: Payload::Text(resp.text), origin: Some(ctx.node) }),
                Err(e) => last = e,
            }
        }
        Err(Error::Remote { endpoint: url.to_owned(), node: ctx.node, message: last })
    }
}

/// Echo server: answers every valid request with `{"text": prompt}` and keeps
/// a log of the requests it saw.
pub struct StubServer {
    server: Arc<tiny_http::Server>,
    addr: String,
    log: Arc<Mutex<Vec<NodeRequest>>>,
    worker: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Binds `addr` (use port 0 for an ephemeral port) and starts serving.
    pub fn start(addr: &str) -> Result<Self> {
        let server = tiny_http::Server::http(addr).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        let server = Arc::new(server);
        let bound = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| Error::Io(std::io::Error::other("stub bound to a non-ip socket")))?;
        let log = Arc::new(Mutex::new(Vec::new()));
        let worker = {
            let server = Arc::clone(&server);
            let log = Arc::clone(&log);
            std::thread::spawn(move || {
                for mut request in server.incoming_requests() {
                    let mut body = String::new();
                    let parsed = std::io::Read::read_to_string(request.as_reader(), &mut body)
                        .ok()
                        .and_then(|_| serde_json::from_str::<NodeRequest>(&body).ok());
                    let response = match parsed {
                        Some(req) => {
                            let text =
                                serde_json::to_string(&NodeResponse { text: req.prompt.clone() }).unwrap_or_default();
                            log.lock().unwrap_or_else(|e| e.into_inner()).push(req);
                            tiny_http::Response::from_string(text).with_header(json_header())
                        }
                        None => tiny_http::Response::from_string(r#"{"error":"bad request"}"#)
                            .with_status_code(400)
                            .with_header(json_header()),
                    };
                    let _ = request.respond(response);
                }
            })
        };
        Ok(Self { server, addr: format!("http://{bound}"), log, worker: Some(worker) })
    }

    /// Base URL, e.g. `http://127.0.0.1:41234`.
    pub fn url(&self) -> &str {
        &self.addr
    }

    pub fn requests(&self) -> Vec<NodeRequest> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn clear(&self) {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clear();
    }

    /// Blocks until the server stops.
    pub fn join(mut self) {
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn json_header() -> tiny_http::Header {
    tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header is valid")
}
