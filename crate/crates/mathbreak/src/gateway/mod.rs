//! Uniform access to target models, the masked LM, and the judge model.
//!
//! The gateway wraps a per-endpoint transport with disk caching keyed on
//! (endpoint, prompt, temperature, seed), bounded retries with exponential
//! backoff, per-endpoint rate limiting, and an audit log of every issued
//! request. Replay mode serves exclusively from the cache and never touches
//! a transport.

pub mod audit;
pub mod cache;
pub mod extract;
pub mod transport;
pub mod wordpiece;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::candidates::MaskFill;
use crate::error::{Error, Result};

pub use audit::{issued_exchanges, read_audit_log, AuditLog, AuditRecord};
pub use cache::{cache_key, CachedExchange, CachedRequest, DiskCache};
pub use extract::extract_final_answer;
pub use transport::{
    HttpChatTransport, RawResponse, ScriptedReply, ScriptedTable, ScriptedTransport,
    SubprocessTransport, Transport, TransportError, TransportRequest,
};
pub use wordpiece::{count_tokens, WordPieceVocab};

/// Default solve-prompt system text; matches the boxed-answer convention the
/// extractor expects. Overridable per endpoint.
pub const DEFAULT_SOLVE_PROMPT: &str = "Solve the problem. Put the final answer in \\boxed{}.";

pub const DEFAULT_MASK_TOKEN: &str = "[MASK]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EndpointKind {
    ChatCompletionHttp,
    LocalCausal,
    LocalMasked,
    Scripted,
}

fn default_max_retries() -> u32 {
    3
}

fn default_mask_token() -> String {
    DEFAULT_MASK_TOKEN.to_string()
}

fn default_backoff_ms() -> u64 {
    250
}

/// One target, judge, or masked-LM endpoint.
///
/// Exactly one transport is configured: `base_url` (+ `model`) for HTTP
/// endpoints, or `asset` for subprocess bridges (`local-causal`,
/// `local-masked`) and scripted answer tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEndpoint {
    pub name: String,
    pub kind: EndpointKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub args: Vec<String>,
    /// Name of the environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_limit_rpm: Option<u32>,
    #[serde(default = "default_mask_token")]
    pub mask_token: String,
    /// System-text override for the solve prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve_prompt: Option<String>,
    /// WordPiece vocab used to count tokens when the transport reports none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokenizer_vocab: Option<PathBuf>,
    #[serde(default = "default_backoff_ms")]
    pub retry_backoff_ms: u64,
}

impl ModelEndpoint {
    /// A scripted endpoint backed by an answer-table file.
    pub fn scripted(name: &str, table: PathBuf) -> Self {
        Self {
            name: name.to_string(),
            kind: EndpointKind::Scripted,
            base_url: None,
            model: None,
            asset: Some(table),
            args: Vec::new(),
            auth_env: None,
            max_retries: default_max_retries(),
            rate_limit_rpm: None,
            mask_token: default_mask_token(),
            solve_prompt: None,
            tokenizer_vocab: None,
            retry_backoff_ms: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let http = self.base_url.is_some();
        let local = self.asset.is_some();
        let ok = match self.kind {
            EndpointKind::ChatCompletionHttp => http && !local && self.model.is_some(),
            EndpointKind::LocalCausal | EndpointKind::LocalMasked | EndpointKind::Scripted => {
                local && !http
            }
        };
        if !ok {
            return Err(Error::Config(format!(
                "endpoint {:?}: exactly one transport must be configured \
                 (base_url+model for chat-completion-http, asset otherwise)",
                self.name
            )));
        }
        if self.mask_token.is_empty() {
            return Err(Error::Config(format!(
                "endpoint {:?}: empty mask token",
                self.name
            )));
        }
        Ok(())
    }

    pub fn system_prompt(&self) -> &str {
        self.solve_prompt.as_deref().unwrap_or(DEFAULT_SOLVE_PROMPT)
    }
}

/// A completed exchange with a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub completion_tokens: u64,
    /// Seconds; replayed from the cache record for cached responses.
    pub latency: f64,
    pub cached: bool,
}

#[derive(Debug, Clone, Default)]
pub struct GatewayOptions {
    pub cache_dir: Option<PathBuf>,
    pub audit_path: Option<PathBuf>,
    /// Serve everything from the cache; a miss is an error and no network
    /// traffic is ever issued.
    pub replay: bool,
    /// Mask-fill distributions are truncated to this many entries.
    pub mask_top_n: Option<usize>,
}

pub struct Gateway {
    cache: Option<DiskCache>,
    audit: AuditLog,
    replay: bool,
    mask_top_n: usize,
    transports: Mutex<HashMap<String, Arc<dyn Transport>>>,
    next_slot: Mutex<HashMap<String, Instant>>,
    vocabs: Mutex<HashMap<PathBuf, Arc<WordPieceVocab>>>,
}

impl Gateway {
    pub fn new(options: GatewayOptions) -> Result<Self> {
        let cache = options.cache_dir.map(DiskCache::open).transpose()?;
        if options.replay && cache.is_none() {
            return Err(Error::Config("replay mode requires a cache dir".into()));
        }
        let audit = match &options.audit_path {
            Some(path) => AuditLog::to_file(path)?,
            None => AuditLog::disabled(),
        };
        Ok(Self {
            cache,
            audit,
            replay: options.replay,
            mask_top_n: options.mask_top_n.unwrap_or(50),
            transports: Mutex::new(HashMap::new()),
            next_slot: Mutex::new(HashMap::new()),
            vocabs: Mutex::new(HashMap::new()),
        })
    }

    pub fn audit_path(&self) -> Option<&std::path::Path> {
        self.audit.path()
    }

    fn transport_for(&self, endpoint: &ModelEndpoint) -> Result<Arc<dyn Transport>> {
        let mut transports = self.transports.lock().unwrap();
        if let Some(t) = transports.get(&endpoint.name) {
            return Ok(Arc::clone(t));
        }
        endpoint.validate()?;
        let transport: Arc<dyn Transport> = match endpoint.kind {
            EndpointKind::ChatCompletionHttp => {
                let bearer = endpoint
                    .auth_env
                    .as_ref()
                    .and_then(|var| std::env::var(var).ok());
                Arc::new(HttpChatTransport::new(
                    endpoint.base_url.as_ref().expect("validated"),
                    endpoint.model.as_ref().expect("validated"),
                    bearer,
                ))
            }
            EndpointKind::LocalCausal | EndpointKind::LocalMasked => {
                Arc::new(SubprocessTransport::new(
                    endpoint.asset.clone().expect("validated"),
                    endpoint.args.clone(),
                ))
            }
            EndpointKind::Scripted => Arc::new(
                ScriptedTransport::from_file(endpoint.asset.as_ref().expect("validated"))
                    .map_err(Error::Io)?,
            ),
        };
        transports.insert(endpoint.name.clone(), Arc::clone(&transport));
        Ok(transport)
    }

    /// Serialize per-endpoint dispatch through the configured rate limit by
    /// reserving the next slot and sleeping until it.
    fn throttle(&self, endpoint: &ModelEndpoint) {
        let Some(rpm) = endpoint.rate_limit_rpm else {
            return;
        };
        if rpm == 0 {
            return;
        }
        let interval = Duration::from_secs_f64(60.0 / f64::from(rpm));
        let wait = {
            let mut slots = self.next_slot.lock().unwrap();
            let now = Instant::now();
            let slot = match slots.get(&endpoint.name) {
                Some(prev) => (*prev + interval).max(now),
                None => now,
            };
            slots.insert(endpoint.name.clone(), slot);
            slot.saturating_duration_since(now)
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }

    fn with_retries<T>(
        &self,
        endpoint: &ModelEndpoint,
        key_hash: &str,
        dispatch: impl Fn() -> transport::TransportResult<T>,
    ) -> Result<T> {
        let max_attempts = endpoint.max_retries.saturating_add(1);
        let mut attempt = 1u32;
        loop {
            self.throttle(endpoint);
            self.audit.append(&endpoint.name, key_hash, attempt, "issued");
            match dispatch() {
                Ok(v) => {
                    self.audit.append(&endpoint.name, key_hash, attempt, "ok");
                    return Ok(v);
                }
                Err(TransportError::Transient(cause)) => {
                    self.audit
                        .append(&endpoint.name, key_hash, attempt, "transient-error");
                    if attempt >= max_attempts {
                        self.audit.append(&endpoint.name, key_hash, attempt, "exhausted");
                        return Err(Error::RetriesExhausted {
                            endpoint: endpoint.name.clone(),
                            attempts: attempt,
                            cause,
                        });
                    }
                    let backoff = endpoint
                        .retry_backoff_ms
                        .saturating_mul(1u64 << (attempt - 1).min(16));
                    std::thread::sleep(Duration::from_millis(backoff));
                    attempt += 1;
                }
                Err(TransportError::Protocol(cause)) => {
                    self.audit
                        .append(&endpoint.name, key_hash, attempt, "protocol-error");
                    return Err(Error::Protocol {
                        endpoint: endpoint.name.clone(),
                        cause,
                    });
                }
            }
        }
    }

    /// Count tokens for a response the transport did not size: the
    /// endpoint's WordPiece vocab when configured, else whitespace tokens.
    fn fallback_token_count(&self, endpoint: &ModelEndpoint, text: &str) -> Result<u64> {
        match &endpoint.tokenizer_vocab {
            Some(path) => {
                let vocab = {
                    let mut vocabs = self.vocabs.lock().unwrap();
                    match vocabs.get(path) {
                        Some(v) => Arc::clone(v),
                        None => {
                            let v = Arc::new(WordPieceVocab::load(path)?);
                            vocabs.insert(path.clone(), Arc::clone(&v));
                            v
                        }
                    }
                };
                Ok(vocab.count_tokens(text))
            }
            None => Ok(text.split_whitespace().count() as u64),
        }
    }

    /// Solve `question` on `endpoint`: wraps it in the endpoint's solve
    /// prompt, consults the cache, and dispatches with retries on a miss.
    pub fn complete(
        &self,
        endpoint: &ModelEndpoint,
        question: &str,
        temperature: f64,
        seed: Option<u64>,
    ) -> Result<ModelResponse> {
        let system = endpoint.system_prompt().to_string();
        let prompt = format!("{system}\n\n{question}");
        let key_hash = cache_key(&endpoint.name, &prompt, temperature, seed);

        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&key_hash) {
                return Ok(ModelResponse {
                    text: hit.response_text,
                    completion_tokens: hit.completion_tokens,
                    latency: hit.latency,
                    cached: true,
                });
            }
        }
        if self.replay {
            return Err(Error::ReplayMiss {
                endpoint: endpoint.name.clone(),
                key_hash,
            });
        }

        let transport = self.transport_for(endpoint)?;
        let request = TransportRequest {
            question,
            system: &system,
            prompt: &prompt,
            temperature,
            seed,
        };
        let started = Instant::now();
        let raw = self.with_retries(endpoint, &key_hash, || transport.complete(&request))?;
        let latency = started.elapsed().as_secs_f64();

        let counted = match raw.completion_tokens {
            Some(n) => n,
            None => self.fallback_token_count(endpoint, &raw.text)?,
        };
        // completion_tokens is zero exactly when the text is empty.
        let completion_tokens = if raw.text.trim().is_empty() {
            0
        } else {
            counted.max(1)
        };

        if let Some(cache) = &self.cache {
            cache.put(
                &key_hash,
                &CachedExchange {
                    request: CachedRequest {
                        endpoint: endpoint.name.clone(),
                        prompt: prompt.clone(),
                        temperature,
                        seed,
                    },
                    response_text: raw.text.clone(),
                    completion_tokens,
                    latency,
                    distribution: None,
                },
            )?;
        }

        Ok(ModelResponse {
            text: raw.text,
            completion_tokens,
            latency,
            cached: false,
        })
    }

    /// Vocabulary distribution at the single mask slot of `masked_text`,
    /// probabilities in (0, 1] sorted non-increasing, truncated to the
    /// configured top-N.
    pub fn fill_mask(
        &self,
        endpoint: &ModelEndpoint,
        masked_text: &str,
    ) -> Result<Vec<(String, f64)>> {
        let mask_count = masked_text.matches(&endpoint.mask_token).count();
        if mask_count != 1 {
            return Err(Error::Mask(format!(
                "expected exactly one {:?} token, found {mask_count}",
                endpoint.mask_token
            )));
        }
        if !matches!(
            endpoint.kind,
            EndpointKind::LocalMasked | EndpointKind::Scripted
        ) {
            return Err(Error::Protocol {
                endpoint: endpoint.name.clone(),
                cause: "endpoint kind does not support mask filling".into(),
            });
        }

        let pseudo_prompt = format!("fill-mask\u{0}{masked_text}");
        let key_hash = cache_key(&endpoint.name, &pseudo_prompt, 0.0, None);

        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&key_hash) {
                if let Some(dist) = hit.distribution {
                    return Ok(dist);
                }
            }
        }
        if self.replay {
            return Err(Error::ReplayMiss {
                endpoint: endpoint.name.clone(),
                key_hash,
            });
        }

        let transport = self.transport_for(endpoint)?;
        let raw = self.with_retries(endpoint, &key_hash, || transport.fill_mask(masked_text))?;

        let mut dist = raw;
        for (token, p) in &dist {
            if !(*p > 0.0 && *p <= 1.0 + 1e-6) {
                return Err(Error::Protocol {
                    endpoint: endpoint.name.clone(),
                    cause: format!("probability {p} for token {token:?} out of (0, 1]"),
                });
            }
        }
        dist.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        dist.truncate(self.mask_top_n);
        let sum: f64 = dist.iter().map(|(_, p)| p).sum();
        if sum > 1.0 + 1e-6 {
            return Err(Error::Protocol {
                endpoint: endpoint.name.clone(),
                cause: format!("probabilities sum to {sum}, not a distribution"),
            });
        }

        if let Some(cache) = &self.cache {
            cache.put(
                &key_hash,
                &CachedExchange {
                    request: CachedRequest {
                        endpoint: endpoint.name.clone(),
                        prompt: pseudo_prompt,
                        temperature: 0.0,
                        seed: None,
                    },
                    response_text: String::new(),
                    completion_tokens: 0,
                    latency: 0.0,
                    distribution: Some(dist.clone()),
                },
            )?;
        }
        Ok(dist)
    }
}

/// Adapter giving the candidates module mask-fill access through the gateway.
pub struct GatewayMaskFill<'a> {
    pub gateway: &'a Gateway,
    pub endpoint: &'a ModelEndpoint,
}

impl MaskFill for GatewayMaskFill<'_> {
    fn mask_token(&self) -> String {
        self.endpoint.mask_token.clone()
    }

    fn fill_mask(&self, masked_text: &str) -> Result<Vec<(String, f64)>> {
        self.gateway.fill_mask(self.endpoint, masked_text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn scripted_endpoint(dir: &std::path::Path, table: &ScriptedTable) -> ModelEndpoint {
        let path = dir.join("table.json");
        std::fs::write(&path, serde_json::to_string(table).unwrap()).unwrap();
        ModelEndpoint::scripted("mock", path)
    }

    fn simple_table() -> ScriptedTable {
        let mut table = ScriptedTable::default();
        table.responses.insert(
            "What is 6 times 7?".into(),
            ScriptedReply {
                text: "The answer is \\boxed{42}".into(),
                completion_tokens: Some(5),
                fail_times: 0,
            },
        );
        table
    }

    #[test]
    fn scripted_echo_contract() {
        let dir = tempfile::tempdir().unwrap();
        let ep = scripted_endpoint(dir.path(), &simple_table());
        let gw = Gateway::new(GatewayOptions::default()).unwrap();
        let r = gw.complete(&ep, "What is 6 times 7?", 0.6, None).unwrap();
        assert!(r.text.contains("\\boxed{42}"));
        assert_eq!(r.completion_tokens, 5);
        assert!(!r.cached);
    }

    #[test]
    fn cache_contract_byte_identical_and_flagged() {
        let dir = tempfile::tempdir().unwrap();
        let ep = scripted_endpoint(dir.path(), &simple_table());
        let gw = Gateway::new(GatewayOptions {
            cache_dir: Some(dir.path().join("cache")),
            ..Default::default()
        })
        .unwrap();
        let live = gw.complete(&ep, "What is 6 times 7?", 0.6, Some(1)).unwrap();
        assert!(!live.cached);

        // Replay mode: identical response, no transport traffic possible.
        let gw2 = Gateway::new(GatewayOptions {
            cache_dir: Some(dir.path().join("cache")),
            replay: true,
            ..Default::default()
        })
        .unwrap();
        let replayed = gw2.complete(&ep, "What is 6 times 7?", 0.6, Some(1)).unwrap();
        assert!(replayed.cached);
        assert_eq!(replayed.text, live.text);
        assert_eq!(replayed.completion_tokens, live.completion_tokens);

        // A different key misses and errors in replay mode.
        assert!(matches!(
            gw2.complete(&ep, "What is 6 times 7?", 0.7, Some(1)),
            Err(Error::ReplayMiss { .. })
        ));
    }

    #[test]
    fn retry_contract_three_attempts_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let mut table = ScriptedTable::default();
        table.responses.insert(
            "Q".into(),
            ScriptedReply {
                text: "ok".into(),
                completion_tokens: Some(1),
                fail_times: 2,
            },
        );
        let ep = scripted_endpoint(dir.path(), &table);
        let audit_path = dir.path().join("audit.jsonl");
        let gw = Gateway::new(GatewayOptions {
            audit_path: Some(audit_path.clone()),
            ..Default::default()
        })
        .unwrap();
        let r = gw.complete(&ep, "Q", 0.6, None).unwrap();
        assert_eq!(r.text, "ok");
        let records = read_audit_log(&audit_path).unwrap();
        let issued: Vec<&AuditRecord> =
            records.iter().filter(|r| r.outcome == "issued").collect();
        assert_eq!(issued.len(), 3);
        assert_eq!(issued[2].attempt, 3);
        assert_eq!(records.last().unwrap().outcome, "ok");
    }

    #[test]
    fn retries_exhausted_is_transport_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut table = ScriptedTable::default();
        table.responses.insert(
            "Q".into(),
            ScriptedReply {
                text: "ok".into(),
                completion_tokens: Some(1),
                fail_times: 10,
            },
        );
        let mut ep = scripted_endpoint(dir.path(), &table);
        ep.max_retries = 1;
        let gw = Gateway::new(GatewayOptions::default()).unwrap();
        assert!(matches!(
            gw.complete(&ep, "Q", 0.6, None),
            Err(Error::RetriesExhausted { attempts: 2, .. })
        ));
    }

    #[test]
    fn fill_mask_requires_exactly_one_mask() {
        let dir = tempfile::tempdir().unwrap();
        let mut table = ScriptedTable::default();
        table
            .mask_distributions
            .insert("[MASK] runs".into(), vec![("he".into(), 0.5)]);
        let ep = scripted_endpoint(dir.path(), &table);
        let gw = Gateway::new(GatewayOptions::default()).unwrap();
        assert!(matches!(
            gw.fill_mask(&ep, "no mask here"),
            Err(Error::Mask(_))
        ));
        assert!(matches!(
            gw.fill_mask(&ep, "[MASK] and [MASK]"),
            Err(Error::Mask(_))
        ));
        let dist = gw.fill_mask(&ep, "[MASK] runs").unwrap();
        assert_eq!(dist[0].0, "he");
    }

    #[test]
    fn fill_mask_distribution_is_validated_and_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let mut table = ScriptedTable::default();
        table.mask_distributions.insert(
            "[MASK] x".into(),
            vec![("a".into(), 0.2), ("b".into(), 0.5), ("c".into(), 0.1)],
        );
        table
            .mask_distributions
            .insert("[MASK] y".into(), vec![("bad".into(), 1.5)]);
        let ep = scripted_endpoint(dir.path(), &table);
        let gw = Gateway::new(GatewayOptions::default()).unwrap();
        let dist = gw.fill_mask(&ep, "[MASK] x").unwrap();
        assert_eq!(
            dist.iter().map(|(t, _)| t.as_str()).collect::<Vec<_>>(),
            vec!["b", "a", "c"]
        );
        let sum: f64 = dist.iter().map(|(_, p)| p).sum();
        assert!(sum <= 1.0 + 1e-6);
        assert!(gw.fill_mask(&ep, "[MASK] y").is_err());
    }

    #[test]
    fn token_fallback_uses_vocab_then_whitespace() {
        let dir = tempfile::tempdir().unwrap();
        let mut table = ScriptedTable::default();
        table.responses.insert(
            "Q".into(),
            ScriptedReply {
                text: "the cat sat".into(),
                completion_tokens: None,
                fail_times: 0,
            },
        );
        let mut ep = scripted_endpoint(dir.path(), &table);

        // Whitespace fallback.
        let gw = Gateway::new(GatewayOptions::default()).unwrap();
        assert_eq!(gw.complete(&ep, "Q", 0.6, None).unwrap().completion_tokens, 3);

        // Configured vocab splits differently.
        let vocab_path = dir.path().join("vocab.txt");
        let mut f = std::fs::File::create(&vocab_path).unwrap();
        for t in ["the", "ca", "##t", "sat"] {
            writeln!(f, "{t}").unwrap();
        }
        drop(f);
        ep.tokenizer_vocab = Some(vocab_path);
        ep.name = "mock2".into();
        let gw2 = Gateway::new(GatewayOptions::default()).unwrap();
        assert_eq!(
            gw2.complete(&ep, "Q", 0.6, None).unwrap().completion_tokens,
            4
        );
    }

    #[test]
    fn empty_text_zero_tokens() {
        let dir = tempfile::tempdir().unwrap();
        let mut table = ScriptedTable::default();
        table.responses.insert(
            "Q".into(),
            ScriptedReply {
                text: "".into(),
                completion_tokens: Some(9),
                fail_times: 0,
            },
        );
        let ep = scripted_endpoint(dir.path(), &table);
        let gw = Gateway::new(GatewayOptions::default()).unwrap();
        assert_eq!(gw.complete(&ep, "Q", 0.6, None).unwrap().completion_tokens, 0);
    }

    #[test]
    fn endpoint_validation_rejects_ambiguous_transport() {
        let mut ep = ModelEndpoint::scripted("x", PathBuf::from("t.json"));
        ep.base_url = Some("http://example".into());
        assert!(ep.validate().is_err());

        let http = ModelEndpoint {
            name: "api".into(),
            kind: EndpointKind::ChatCompletionHttp,
            base_url: Some("http://localhost:1".into()),
            model: Some("m".into()),
            asset: None,
            args: vec![],
            auth_env: None,
            max_retries: 0,
            rate_limit_rpm: None,
            mask_token: DEFAULT_MASK_TOKEN.into(),
            solve_prompt: None,
            tokenizer_vocab: None,
            retry_backoff_ms: 1,
        };
        http.validate().unwrap();
    }
}
