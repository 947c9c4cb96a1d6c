//! Pluggable model transports: chat-completion HTTP, subprocess bridges for
//! locally hosted models, and a scripted table for deterministic testing.

use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

/// What the gateway hands a transport: the raw question, the fully rendered
/// prompt, and sampling controls.
#[derive(Debug, Clone)]
pub struct TransportRequest<'a> {
    pub question: &'a str,
    pub system: &'a str,
    pub prompt: &'a str,
    pub temperature: f64,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub enum TransportError {
    /// Worth retrying: connection trouble, 429, 5xx, interrupted subprocess.
    Transient(String),
    /// Not worth retrying: malformed request, bad auth, unparseable reply.
    Protocol(String),
}

impl std::fmt::Display for TransportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransportError::Transient(m) => write!(f, "transient: {m}"),
            TransportError::Protocol(m) => write!(f, "protocol: {m}"),
        }
    }
}

pub type TransportResult<T> = std::result::Result<T, TransportError>;

#[derive(Debug, Clone)]
pub struct RawResponse {
    pub text: String,
    /// Token count from the protocol's usage field, when the transport
    /// reports one.
    pub completion_tokens: Option<u64>,
}

pub trait Transport: Send + Sync {
    fn complete(&self, req: &TransportRequest) -> TransportResult<RawResponse>;

    fn fill_mask(&self, _masked_text: &str) -> TransportResult<Vec<(String, f64)>> {
        Err(TransportError::Protocol(
            "endpoint does not support mask filling".into(),
        ))
    }
}

// ---------------------------------------------------------------------------
// HTTP chat-completion transport
// ---------------------------------------------------------------------------

/// Speaks the de-facto chat-completion wire protocol:
/// `POST {base_url}/v1/chat/completions` with a JSON body carrying `model`,
/// `messages`, and `temperature`; reads `choices[0].message.content` and
/// `usage.completion_tokens`.
pub struct HttpChatTransport {
    base_url: String,
    model: String,
    bearer: Option<String>,
    agent: ureq::Agent,
}

impl HttpChatTransport {
    pub fn new(base_url: &str, model: &str, bearer: Option<String>) -> Self {
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            bearer,
            agent: ureq::AgentBuilder::new()
                .timeout(std::time::Duration::from_secs(600))
                .build(),
        }
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequestBody<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct ChatResponseBody {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: String,
}

#[derive(Deserialize)]
struct ChatUsage {
    #[serde(default)]
    completion_tokens: Option<u64>,
}

impl Transport for HttpChatTransport {
    fn complete(&self, req: &TransportRequest) -> TransportResult<RawResponse> {
        let url = format!("{}/v1/chat/completions", self.base_url);
        let body = ChatRequestBody {
            model: &self.model,
            messages: vec![
                ChatMessage {
                    role: "system",
                    content: req.system,
                },
                ChatMessage {
                    role: "user",
                    content: req.question,
                },
            ],
            temperature: req.temperature,
            seed: req.seed,
        };
        let mut http = self.agent.post(&url).set("content-type", "application/json");
        if let Some(token) = &self.bearer {
            http = http.set("authorization", &format!("Bearer {token}"));
        }
        let response = match http.send_json(&body) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, resp)) => {
                let text = resp.into_string().unwrap_or_default();
                let msg = format!("HTTP {code}: {text}");
                if code == 429 || code >= 500 {
                    return Err(TransportError::Transient(msg));
                }
                return Err(TransportError::Protocol(msg));
            }
            Err(ureq::Error::Transport(t)) => {
                return Err(TransportError::Transient(t.to_string()));
            }
        };
        let parsed: ChatResponseBody = response
            .into_json()
            .map_err(|e| TransportError::Protocol(format!("bad response body: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| TransportError::Protocol("empty choices".into()))?;
        Ok(RawResponse {
            text: choice.message.content,
            completion_tokens: parsed.usage.and_then(|u| u.completion_tokens),
        })
    }
}

// ---------------------------------------------------------------------------
// Subprocess bridge for locally hosted models
// ---------------------------------------------------------------------------

/// Runs a configured command per request. The request goes to stdin as one
/// JSON object; the reply is read from stdout:
///
/// - completion: `{"kind":"complete","question":..,"system":..,"prompt":..,
///   "temperature":..,"seed":..}` -> `{"text":"...","completion_tokens":N?}`
/// - mask fill: `{"kind":"fill_mask","masked_text":..}` -> `[["tok",p],...]`
pub struct SubprocessTransport {
    program: PathBuf,
    args: Vec<String>,
}

impl SubprocessTransport {
    pub fn new(program: PathBuf, args: Vec<String>) -> Self {
        Self { program, args }
    }

    fn run(&self, input: &str) -> TransportResult<String> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| TransportError::Transient(format!("spawn failed: {e}")))?;
        child
            .stdin
            .take()
            .expect("piped stdin")
            .write_all(input.as_bytes())
            .map_err(|e| TransportError::Transient(format!("stdin write failed: {e}")))?;
        let out = child
            .wait_with_output()
            .map_err(|e| TransportError::Transient(format!("wait failed: {e}")))?;
        if !out.status.success() {
            return Err(TransportError::Protocol(format!(
                "exit status {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr)
            )));
        }
        String::from_utf8(out.stdout)
            .map_err(|e| TransportError::Protocol(format!("non-UTF-8 output: {e}")))
    }
}

#[derive(Serialize)]
struct BridgeCompleteRequest<'a> {
    kind: &'a str,
    question: &'a str,
    system: &'a str,
    prompt: &'a str,
    temperature: f64,
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct BridgeCompleteResponse {
    text: String,
    #[serde(default)]
    completion_tokens: Option<u64>,
}

impl Transport for SubprocessTransport {
    fn complete(&self, req: &TransportRequest) -> TransportResult<RawResponse> {
        let input = serde_json::to_string(&BridgeCompleteRequest {
            kind: "complete",
            question: req.question,
            system: req.system,
            prompt: req.prompt,
            temperature: req.temperature,
            seed: req.seed,
        })
        .expect("serializable request");
        let stdout = self.run(&input)?;
        let parsed: BridgeCompleteResponse = serde_json::from_str(stdout.trim())
            .map_err(|e| TransportError::Protocol(format!("bad bridge reply: {e}")))?;
        Ok(RawResponse {
            text: parsed.text,
            completion_tokens: parsed.completion_tokens,
        })
    }

    fn fill_mask(&self, masked_text: &str) -> TransportResult<Vec<(String, f64)>> {
        let input = serde_json::json!({"kind": "fill_mask", "masked_text": masked_text});
        let stdout = self.run(&input.to_string())?;
        serde_json::from_str(stdout.trim())
            .map_err(|e| TransportError::Protocol(format!("bad bridge reply: {e}")))
    }
}

// ---------------------------------------------------------------------------
// Scripted transport for tests and offline demos
// ---------------------------------------------------------------------------

/// One scripted reply: the text, an optional token count, and an optional
/// number of leading calls that fail transiently (for retry testing).
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct ScriptedReply {
    pub text: String,
    #[serde(default)]
    pub completion_tokens: Option<u64>,
    #[serde(default)]
    pub fail_times: u32,
}

/// A deterministic answer table keyed by exact question text.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct ScriptedTable {
    #[serde(default)]
    pub responses: HashMap<String, ScriptedReply>,
    #[serde(default)]
    pub default_response: Option<ScriptedReply>,
    #[serde(default)]
    pub mask_distributions: HashMap<String, Vec<(String, f64)>>,
    #[serde(default)]
    pub default_mask: Option<Vec<(String, f64)>>,
}

pub struct ScriptedTransport {
    table: ScriptedTable,
    failures_seen: Mutex<HashMap<String, u32>>,
}

impl ScriptedTransport {
    pub fn new(table: ScriptedTable) -> Self {
        Self {
            table,
            failures_seen: Mutex::new(HashMap::new()),
        }
    }

    pub fn from_file(path: &std::path::Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let table: ScriptedTable = serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(Self::new(table))
    }
}

impl Transport for ScriptedTransport {
    fn complete(&self, req: &TransportRequest) -> TransportResult<RawResponse> {
        let reply = self
            .table
            .responses
            .get(req.question)
            .or(self.table.default_response.as_ref())
            .ok_or_else(|| {
                TransportError::Protocol(format!(
                    "no scripted response for question {:?}",
                    req.question
                ))
            })?;
        if reply.fail_times > 0 {
            let mut seen = self.failures_seen.lock().unwrap();
            let n = seen.entry(req.question.to_string()).or_insert(0);
            if *n < reply.fail_times {
                *n += 1;
                return Err(TransportError::Transient(format!(
                    "scripted failure {n} of {}",
                    reply.fail_times
                )));
            }
        }
        Ok(RawResponse {
            text: reply.text.clone(),
            completion_tokens: reply.completion_tokens,
        })
    }

    fn fill_mask(&self, masked_text: &str) -> TransportResult<Vec<(String, f64)>> {
        self.table
            .mask_distributions
            .get(masked_text)
            .or(self.table.default_mask.as_ref())
            .cloned()
            .ok_or_else(|| {
                TransportError::Protocol(format!(
                    "no scripted mask distribution for {masked_text:?}"
                ))
            })
    }
}
