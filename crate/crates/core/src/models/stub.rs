//! In-process logit server that serves any [`ModelBackend`] over the
//! `/v1/next` wire protocol. Used for conformance tests and for exercising
//! the remote client without a real model.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;

use crate::codec::VOCAB_SIZE;

use super::{CacheHandle, ModelBackend, ModelError, Result, VocabMap};

/// Logit reported for tokens with zero probability.
pub const ZERO_PROB_LOGIT: f64 = -1e4;

#[derive(Debug, Clone)]
pub struct StubOptions {
    pub vocab: VocabMap,
    /// Length of the logit vector; ids outside the map report 0.0.
    pub vocab_size: usize,
    /// Answer `cache_id: null` and require full prefixes.
    pub caching: bool,
    /// Extend caches in place instead of minting a new id per call.
    pub in_place: bool,
}

impl Default for StubOptions {
    fn default() -> Self {
        Self { vocab: VocabMap::identity(), vocab_size: VOCAB_SIZE, caching: true, in_place: false }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StubStats {
    /// Tokens the wrapped backend actually processed.
    pub forward_calls: u64,
    pub next_requests: u64,
    pub fork_requests: u64,
    pub delete_requests: u64,
    pub live_caches: usize,
}

struct Shared<B: ModelBackend> {
    backend: B,
    options: StubOptions,
    caches: Mutex<HashMap<String, CacheHandle<B::State>>>,
    next_id: AtomicU64,
    forward_calls: AtomicU64,
    next_requests: AtomicU64,
    fork_requests: AtomicU64,
    delete_requests: AtomicU64,
    busy: AtomicU32,
    non_finite: AtomicU32,
}

impl<B: ModelBackend> Shared<B> {
    fn mint(&self) -> String {
        format!("c{}", self.next_id.fetch_add(1, Ordering::Relaxed))
    }

    /// Consumes one pending 503 injection, if any.
    fn take(counter: &AtomicU32) -> bool {
        counter.fetch_update(Ordering::Relaxed, Ordering::Relaxed, |n| n.checked_sub(1)).is_ok()
    }
}

#[derive(Deserialize)]
struct NextRequest {
    cache_id: Option<String>,
    tokens: Vec<u32>,
}

#[derive(Serialize)]
struct NextResponse {
    logits: Vec<f64>,
    cache_id: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct ForkBody {
    cache_id: String,
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": msg.into() }))).into_response()
}

async fn next_handler<B: ModelBackend + 'static>(State(s): State<Arc<Shared<B>>>, Json(req): Json<NextRequest>) -> Response {
    s.next_requests.fetch_add(1, Ordering::Relaxed);
    if Shared::<B>::take(&s.busy) {
        return error(StatusCode::SERVICE_UNAVAILABLE, "busy");
    }
    let mut local = Vec::with_capacity(req.tokens.len());
    for &id in &req.tokens {
        match s.options.vocab.local_token(id) {
            Some(t) => local.push(t),
            None => return error(StatusCode::UNPROCESSABLE_ENTITY, format!("token id {id} is not in the vocabulary")),
        }
    }
    if local.is_empty() {
        return error(StatusCode::UNPROCESSABLE_ENTITY, "no tokens");
    }
    if req.cache_id.is_some() && !s.options.caching {
        return error(StatusCode::NOT_FOUND, "this server does not cache");
    }
    // Work on a fork so that a failed request leaves the stored cache intact.
    let start = match &req.cache_id {
        None => s.backend.root(),
        Some(id) => {
            let caches = s.caches.lock().expect("cache lock");
            match caches.get(id) {
                Some(h) => s.backend.fork(h),
                None => return error(StatusCode::NOT_FOUND, format!("unknown cache {id}")),
            }
        }
    };
    let mut handle = match start {
        Ok(h) => h,
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    };
    let mut dist = None;
    for t in local {
        match s.backend.next_distribution(handle, t) {
            Ok((d, h)) => {
                s.forward_calls.fetch_add(1, Ordering::Relaxed);
                dist = Some(d);
                handle = h;
            }
            Err(ModelError::Parameter(msg)) => return error(StatusCode::UNPROCESSABLE_ENTITY, msg),
            Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        }
    }
    let dist = dist.expect("at least one token");
    let mut logits = vec![0.0; s.options.vocab_size];
    for (t, &p) in dist.probs.iter().enumerate() {
        logits[s.options.vocab.server_id(t as u8) as usize] = if p > 0.0 { p.ln() } else { ZERO_PROB_LOGIT };
    }
    if Shared::<B>::take(&s.non_finite) {
        logits[s.options.vocab.server_id(0) as usize] = f64::NAN;
    }
    let cache_id = if !s.options.caching {
        None
    } else {
        let id = match (&req.cache_id, s.options.in_place) {
            (Some(id), true) => id.clone(),
            _ => s.mint(),
        };
        s.caches.lock().expect("cache lock").insert(id.clone(), handle);
        Some(id)
    };
    Json(NextResponse { logits, cache_id }).into_response()
}

async fn fork_handler<B: ModelBackend + 'static>(State(s): State<Arc<Shared<B>>>, Json(req): Json<ForkBody>) -> Response {
    s.fork_requests.fetch_add(1, Ordering::Relaxed);
    if Shared::<B>::take(&s.busy) {
        return error(StatusCode::SERVICE_UNAVAILABLE, "busy");
    }
    let mut caches = s.caches.lock().expect("cache lock");
    let Some(h) = caches.get(&req.cache_id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown cache {}", req.cache_id));
    };
    match s.backend.fork(h) {
        Ok(copy) => {
            let id = s.mint();
            caches.insert(id.clone(), copy);
            Json(ForkBody { cache_id: id }).into_response()
        }
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn delete_handler<B: ModelBackend + 'static>(State(s): State<Arc<Shared<B>>>, Path(id): Path<String>) -> Response {
    s.delete_requests.fetch_add(1, Ordering::Relaxed);
    match s.caches.lock().expect("cache lock").remove(&id) {
        Some(_) => StatusCode::NO_CONTENT.into_response(),
        None => error(StatusCode::NOT_FOUND, format!("unknown cache {id}")),
    }
}

/// Running stub server; shuts down when dropped.
pub struct StubServer<B: ModelBackend + 'static> {
    addr: SocketAddr,
    shared: Arc<Shared<B>>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl<B: ModelBackend + 'static> StubServer<B> {
    /// Binds an ephemeral loopback port and serves `backend` on a
    /// background thread.
    pub fn start(backend: B, options: StubOptions) -> Result<Self> {
        if (options.vocab.max_id() as usize) >= options.vocab_size {
            return Err(ModelError::Parameter("vocabulary map exceeds the logit vector".into()));
        }
        let shared = Arc::new(Shared {
            backend,
            options,
            caches: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(0),
            forward_calls: AtomicU64::new(0),
            next_requests: AtomicU64::new(0),
            fork_requests: AtomicU64::new(0),
            delete_requests: AtomicU64::new(0),
            busy: AtomicU32::new(0),
            non_finite: AtomicU32::new(0),
        });
        let listener = std::net::TcpListener::bind("127.0.0.1:0").map_err(|e| ModelError::Transport(e.to_string()))?;
        listener.set_nonblocking(true).map_err(|e| ModelError::Transport(e.to_string()))?;
        let addr = listener.local_addr().map_err(|e| ModelError::Transport(e.to_string()))?;
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_io()
            .build()
            .map_err(|e| ModelError::Transport(e.to_string()))?;
        let app = Router::new()
            .route("/v1/next", post(next_handler::<B>))
            .route("/v1/fork", post(fork_handler::<B>))
            .route("/v1/cache/{id}", delete(delete_handler::<B>))
            .with_state(Arc::clone(&shared));
        let (tx, rx) = oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener registers with runtime");
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        });
        Ok(Self { addr, shared, shutdown: Some(tx), thread: Some(thread) })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn backend(&self) -> &B {
        &self.shared.backend
    }

    /// The next `n` requests answer 503.
    pub fn inject_busy(&self, n: u32) {
        self.shared.busy.store(n, Ordering::Relaxed);
    }

    /// The next `n` `/v1/next` responses carry a non-finite logit.
    pub fn inject_non_finite(&self, n: u32) {
        self.shared.non_finite.store(n, Ordering::Relaxed);
    }

    pub fn stats(&self) -> StubStats {
        StubStats {
            forward_calls: self.shared.forward_calls.load(Ordering::Relaxed),
            next_requests: self.shared.next_requests.load(Ordering::Relaxed),
            fork_requests: self.shared.fork_requests.load(Ordering::Relaxed),
            delete_requests: self.shared.delete_requests.load(Ordering::Relaxed),
            live_caches: self.shared.caches.lock().expect("cache lock").len(),
        }
    }
}

impl<B: ModelBackend + 'static> Drop for StubServer<B> {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
