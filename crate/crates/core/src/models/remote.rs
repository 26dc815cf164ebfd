//! Client for an HTTP logit server.
//!
//! ```text
//! POST   /v1/next        {"cache_id": str|null, "tokens": [int]} -> {"logits": [float], "cache_id": str|null}
//! POST   /v1/fork        {"cache_id": str}                       -> {"cache_id": str}
//! DELETE /v1/cache/{id}                                          -> 204
//! ```
//!
//! 404 means an unknown cache, 422 a bad token id, 503 a busy server (retried
//! with exponential backoff). A server that answers `cache_id: null` does not
//! cache; the client then resends the whole prefix on every call.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use crate::codec::{TokenId, SEPARATOR, VOCAB_SIZE};

use super::{CacheHandle, CallCounter, ModelBackend, ModelError, Result, TokenDistribution};

/// Local token → server token id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VocabMap {
    ids: [u32; VOCAB_SIZE],
}

impl VocabMap {
    pub fn identity() -> Self {
        Self { ids: std::array::from_fn(|i| i as u32) }
    }

    pub fn new(ids: [u32; VOCAB_SIZE]) -> Result<Self> {
        let mut sorted = ids;
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(ModelError::Parameter(format!("vocabulary ids are not distinct: {ids:?}")));
        }
        Ok(Self { ids })
    }

    /// Parses `{"0": id, …, "9": id, ",": id}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: BTreeMap<String, u32> =
            serde_json::from_str(text).map_err(|e| ModelError::Parameter(format!("vocabulary map: {e}")))?;
        let mut ids = [0u32; VOCAB_SIZE];
        for (i, id) in ids.iter_mut().enumerate() {
            let key = if i == SEPARATOR as usize { ",".to_string() } else { i.to_string() };
            *id = *raw.get(&key).ok_or_else(|| ModelError::Parameter(format!("vocabulary map lacks {key:?}")))?;
        }
        if raw.len() != VOCAB_SIZE {
            return Err(ModelError::Parameter(format!("vocabulary map has {} keys, expected {VOCAB_SIZE}", raw.len())));
        }
        Self::new(ids)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Parameter(format!("reading {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let map: BTreeMap<String, u32> = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (if i == SEPARATOR as usize { ",".into() } else { i.to_string() }, id))
            .collect();
        serde_json::to_string(&map).expect("string map serializes")
    }

    pub fn server_id(&self, token: TokenId) -> u32 {
        self.ids[token as usize]
    }

    pub fn local_token(&self, server_id: u32) -> Option<TokenId> {
        self.ids.iter().position(|&id| id == server_id).map(|i| i as TokenId)
    }

    pub fn max_id(&self) -> u32 {
        self.ids.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
pub struct RemoteOptions {
    pub url: String,
    pub vocab: VocabMap,
    pub max_retries: u32,
    pub backoff: Duration,
    pub timeout: Duration,
}

impl RemoteOptions {
    pub fn new(url: impl Into<String>, vocab: VocabMap) -> Self {
        Self {
            url: url.into().trim_end_matches('/').to_string(),
            vocab,
            max_retries: 4,
            backoff: Duration::from_millis(20),
            timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Debug)]
struct PrefixNode {
    token: TokenId,
    prev: Option<Arc<PrefixNode>>,
}

/// Handle state: the server's cache id (if it caches) and the full prefix,
/// kept as a shared linked list so forks are O(1).
#[derive(Debug, Clone, Default)]
pub struct RemoteState {
    cache_id: Option<String>,
    prefix: Option<Arc<PrefixNode>>,
}

impl RemoteState {
    pub fn cache_id(&self) -> Option<&str> {
        self.cache_id.as_deref()
    }

    fn tokens(&self) -> Vec<TokenId> {
        let mut out = Vec::new();
        let mut node = self.prefix.as_ref();
        while let Some(n) = node {
            out.push(n.token);
            node = n.prev.as_ref();
        }
        out.reverse();
        out
    }
}

#[derive(Serialize)]
struct NextRequest<'a> {
    cache_id: Option<&'a str>,
    tokens: Vec<u32>,
}

#[derive(Deserialize)]
struct NextResponse {
    logits: Vec<Option<f64>>,
    cache_id: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct ForkBody {
    cache_id: String,
}

pub struct RemoteBackend {
    client: Client,
    options: RemoteOptions,
    calls: CallCounter,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend").field("url", &self.options.url).field("calls", &self.calls.get()).finish()
    }
}

impl RemoteBackend {
    pub fn new(options: RemoteOptions) -> Result<Self> {
        let client = Client::builder()
            .timeout(options.timeout)
            .build()
            .map_err(|e| ModelError::Transport(format!("building HTTP client: {e}")))?;
        Ok(Self { client, options, calls: CallCounter::default() })
    }

    pub fn url(&self) -> &str {
        &self.options.url
    }

    /// Sends a request, retrying on 503 and connection failures.
    fn send(&self, build: impl Fn() -> reqwest::blocking::RequestBuilder) -> Result<reqwest::blocking::Response> {
        let mut delay = self.options.backoff;
        let mut last = String::new();
        for attempt in 0..=self.options.max_retries {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            match build().send() {
                Ok(resp) if resp.status() == StatusCode::SERVICE_UNAVAILABLE => last = "server busy (503)".into(),
                Ok(resp) => return Ok(resp),
                Err(e) => last = e.to_string(),
            }
        }
        Err(ModelError::Transport(format!("{} after {} attempts: {last}", self.options.url, self.options.max_retries + 1)))
    }

    fn check_status(resp: &reqwest::blocking::Response) -> Result<()> {
        match resp.status() {
            s if s.is_success() => Ok(()),
            StatusCode::NOT_FOUND => Err(ModelError::Protocol("unknown cache id (404)".into())),
            StatusCode::UNPROCESSABLE_ENTITY => Err(ModelError::Protocol("server rejected a token id (422)".into())),
            s => Err(ModelError::Protocol(format!("unexpected status {s}"))),
        }
    }

    fn delete(&self, id: &str) {
        let url = format!("{}/v1/cache/{id}", self.options.url);
        // Best effort: a leaked server cache is not a correctness problem.
        let _ = self.client.delete(url).send();
    }

    fn parse_logits(&self, raw: Vec<Option<f64>>, position: usize) -> Result<TokenDistribution> {
        if raw.len() <= self.options.vocab.max_id() as usize {
            return Err(ModelError::Protocol(format!("{} logits do not cover the vocabulary map", raw.len())));
        }
        if let Some(i) = raw.iter().position(|l| !l.is_some_and(f64::is_finite)) {
            return Err(ModelError::Protocol(format!("non-finite logit at id {i}")));
        }
        let logits: [f64; VOCAB_SIZE] =
            std::array::from_fn(|t| raw[self.options.vocab.server_id(t as TokenId) as usize].unwrap_or(0.0));
        TokenDistribution::from_logits(logits, position).map_err(|e| ModelError::Protocol(e.to_string()))
    }
}

impl ModelBackend for RemoteBackend {
    type State = RemoteState;

    fn root(&self) -> Result<CacheHandle<RemoteState>> {
        Ok(CacheHandle { prefix_len: 0, state: RemoteState::default() })
    }

    fn next_distribution(
        &self,
        cache: CacheHandle<RemoteState>,
        token: TokenId,
    ) -> Result<(TokenDistribution, CacheHandle<RemoteState>)> {
        if token as usize >= VOCAB_SIZE {
            return Err(ModelError::Parameter(format!("token {token} outside the vocabulary")));
        }
        let state = cache.state;
        let local: Vec<TokenId> = match state.cache_id {
            Some(_) => vec![token],
            None => {
                let mut all = state.tokens();
                all.push(token);
                all
            }
        };
        let body = NextRequest {
            cache_id: state.cache_id.as_deref(),
            tokens: local.iter().map(|&t| self.options.vocab.server_id(t)).collect(),
        };
        let url = format!("{}/v1/next", self.options.url);
        let resp = self.send(|| self.client.post(&url).json(&body))?;
        Self::check_status(&resp)?;
        let parsed: NextResponse =
            resp.json().map_err(|e| ModelError::Protocol(format!("malformed /v1/next response: {e}")))?;
        let dist = self.parse_logits(parsed.logits, cache.prefix_len + 1)?;
        if let (Some(old), new) = (&state.cache_id, &parsed.cache_id) {
            if new.as_deref() != Some(old.as_str()) {
                self.delete(old);
            }
        }
        self.calls.incr();
        let next = RemoteState {
            cache_id: parsed.cache_id,
            prefix: Some(Arc::new(PrefixNode { token, prev: state.prefix })),
        };
        Ok((dist, CacheHandle { prefix_len: cache.prefix_len + 1, state: next }))
    }

    fn fork(&self, cache: &CacheHandle<RemoteState>) -> Result<CacheHandle<RemoteState>> {
        let Some(id) = &cache.state.cache_id else {
            return Ok(cache.clone());
        };
        let url = format!("{}/v1/fork", self.options.url);
        let body = ForkBody { cache_id: id.clone() };
        let resp = self.send(|| self.client.post(&url).json(&body))?;
        Self::check_status(&resp)?;
        let parsed: ForkBody = resp.json().map_err(|e| ModelError::Protocol(format!("malformed /v1/fork response: {e}")))?;
        Ok(CacheHandle {
            prefix_len: cache.prefix_len,
            state: RemoteState { cache_id: Some(parsed.cache_id), prefix: cache.state.prefix.clone() },
        })
    }

    fn release(&self, cache: CacheHandle<RemoteState>) {
        if let Some(id) = cache.state.cache_id {
            self.delete(&id);
        }
    }

    fn call_count(&self) -> u64 {
        self.calls.get()
    }
}
