//! Client/server conformance checks for the `/v1` logit protocol, run
//! against the in-process stub server. Each check returns a short summary on
//! success and a description of the first violation otherwise.

use std::time::Duration;

use icl_core::codec::{serialize_values, RescaleMap, TokenSeq};
use icl_core::hpdf::{extract, ExtractOptions, HierarchyPdf, RefinePolicy};
use icl_core::models::{
    feed, ModelBackend, ModelError, OracleBackend, RemoteBackend, RemoteOptions, StubOptions, StubServer, TokenDistribution,
    VocabMap,
};
use icl_core::systems::TransitionKernel;

pub type Check = Result<String, String>;

/// Scrambled, sparse server ids so that an identity assumption anywhere in
/// the client shows up as wrong PDFs.
pub fn scrambled_vocab() -> VocabMap {
    VocabMap::new([40, 7, 33, 12, 90, 3, 61, 28, 75, 19, 2]).expect("valid map")
}

fn fixture() -> (Vec<TransitionKernel>, TokenSeq) {
    let values = [4.12, 5.3, 4.871, 6.02, 5.5, 3.95];
    let kernels = values[..values.len() - 1]
        .iter()
        .enumerate()
        .map(|(i, &x)| TransitionKernel::Gaussian { mean: x + 0.2, std: 0.25 + 0.1 * i as f64 })
        .collect();
    (kernels, serialize_values(&values, &RescaleMap::identity(), 3).expect("serializable"))
}

fn oracle(kernels: &[TransitionKernel]) -> OracleBackend {
    OracleBackend::for_series(kernels.to_vec(), 3).expect("oracle")
}

fn server(kernels: &[TransitionKernel], caching: bool) -> StubServer<OracleBackend> {
    let opts = StubOptions { vocab: scrambled_vocab(), vocab_size: 128, caching, in_place: false };
    StubServer::start(oracle(kernels), opts).expect("stub server starts")
}

fn client(url: String) -> RemoteBackend {
    let mut opts = RemoteOptions::new(url, scrambled_vocab());
    opts.backoff = Duration::from_millis(1);
    opts.max_retries = 3;
    RemoteBackend::new(opts).expect("client")
}

fn compare(remote: &[HierarchyPdf], local: &[HierarchyPdf]) -> Result<f64, String> {
    if remote.len() != local.len() {
        return Err(format!("{} remote PDFs vs {} local", remote.len(), local.len()));
    }
    let mut worst = 0.0f64;
    for (r, l) in remote.iter().zip(local) {
        if r.bins.len() != l.bins.len() {
            return Err(format!("state {}: {} bins vs {}", r.state_index, r.bins.len(), l.bins.len()));
        }
        for (a, b) in r.bins.iter().zip(&l.bins) {
            if (a.code, a.depth) != (b.code, b.depth) {
                return Err(format!("state {}: bin layout differs", r.state_index));
            }
            worst = worst.max((a.mass - b.mass).abs());
        }
    }
    if worst > 1e-12 {
        return Err(format!("max mass difference {worst:e}"));
    }
    Ok(worst)
}

/// Remote extraction through the scrambled vocabulary reproduces the local
/// backend bin for bin, with and without server-side caching.
pub fn pdfs_match_local_backend() -> Check {
    let (kernels, seq) = fixture();
    let policy = RefinePolicy::full(3);
    let local = extract(&oracle(&kernels), &seq, policy, &ExtractOptions::default()).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for caching in [true, false] {
        let srv = server(&kernels, caching);
        let remote = extract(&client(srv.url()), &seq, policy, &ExtractOptions::default()).map_err(|e| e.to_string())?;
        worst = worst.max(compare(&remote.pdfs, &local.pdfs)?);
        if remote.forward_calls != local.forward_calls {
            return Err(format!("caching={caching}: {} client calls vs {} local", remote.forward_calls, local.forward_calls));
        }
    }
    Ok(format!("{} states, max |Δmass| = {worst:.1e}", local.pdfs.len()))
}

/// With caching, the server processes each token the client sends exactly
/// once, every cache is released afterwards, and refinement uses forks.
/// Without caching the client resends prefixes and the server does more work.
pub fn caching_and_forking() -> Check {
    let (kernels, seq) = fixture();
    let srv = server(&kernels, true);
    let c = client(srv.url());
    let out = extract(&c, &seq, RefinePolicy::full(3), &ExtractOptions::default()).map_err(|e| e.to_string())?;
    let stats = srv.stats();
    if stats.forward_calls != c.call_count() || stats.forward_calls != out.forward_calls {
        return Err(format!("server processed {} tokens for {} client calls", stats.forward_calls, c.call_count()));
    }
    if stats.next_requests != out.forward_calls {
        return Err(format!("{} /v1/next requests for {} calls", stats.next_requests, out.forward_calls));
    }
    if stats.fork_requests == 0 {
        return Err("refinement issued no /v1/fork requests".into());
    }
    if stats.live_caches != 0 {
        return Err(format!("{} caches left alive after extraction", stats.live_caches));
    }

    let plain = server(&kernels, false);
    let c2 = client(plain.url());
    extract(&c2, &seq, RefinePolicy::full(3), &ExtractOptions::default()).map_err(|e| e.to_string())?;
    let p = plain.stats();
    if p.fork_requests != 0 || p.forward_calls <= stats.forward_calls {
        return Err(format!("non-caching server: {} forks, {} tokens processed", p.fork_requests, p.forward_calls));
    }
    Ok(format!(
        "{} tokens, {} forks, {} deletes with caching; {} tokens without",
        stats.forward_calls, stats.fork_requests, stats.delete_requests, p.forward_calls
    ))
}

/// A forked cache and its source evolve independently.
pub fn fork_isolation() -> Check {
    let (kernels, _) = fixture();
    let srv = server(&kernels, true);
    let c = client(srv.url());
    let err = |e: ModelError| e.to_string();
    let (_, h) = feed(&c, &[4, 1, 2, 10, 5]).map_err(err)?;
    let copy = c.fork(&h).map_err(err)?;
    let (a, ha) = c.next_distribution(h, 3).map_err(err)?;
    let (b, hb) = c.next_distribution(copy, 7).map_err(err)?;
    let (fresh_a, _) = feed(&oracle(&kernels), &[4, 1, 2, 10, 5, 3]).map_err(err)?;
    let (fresh_b, _) = feed(&oracle(&kernels), &[4, 1, 2, 10, 5, 7]).map_err(err)?;
    let close = |x: &TokenDistribution, y: &TokenDistribution| {
        x.probs.iter().zip(&y.probs).all(|(p, q)| (p - q).abs() < 1e-12)
    };
    if !close(&a, &fresh_a.expect("non-empty")) || !close(&b, &fresh_b.expect("non-empty")) {
        return Err("forked branches do not match independent evaluations".into());
    }
    c.release(ha);
    c.release(hb);
    match srv.stats().live_caches {
        0 => Ok("fork and source diverge independently; both released".into()),
        n => Err(format!("{n} caches alive after release")),
    }
}

/// Raw wire contract: 422 for unknown or missing tokens, 404 for unknown
/// caches and for cache ids sent to a non-caching server, 204/404 on delete.
pub fn error_statuses() -> Check {
    let (kernels, _) = fixture();
    let srv = server(&kernels, true);
    let plain = server(&kernels, false);
    let http = reqwest::blocking::Client::new();
    let post = |base: &str, body: serde_json::Value| -> Result<(u16, serde_json::Value), String> {
        let resp = http.post(format!("{base}/v1/next")).json(&body).send().map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        Ok((status, resp.json().unwrap_or(serde_json::Value::Null)))
    };
    let expect = |what: &str, got: u16, want: u16| -> Result<(), String> {
        if got == want {
            Ok(())
        } else {
            Err(format!("{what}: status {got}, expected {want}"))
        }
    };
    let base = srv.url();
    let vocab = scrambled_vocab();

    let (status, body) = post(&base, serde_json::json!({ "cache_id": null, "tokens": [vocab.server_id(4), vocab.server_id(1)] }))?;
    expect("valid request", status, 200)?;
    let logits = body["logits"].as_array().map(Vec::len).unwrap_or(0);
    if logits != 128 {
        return Err(format!("{logits} logits, expected the server vocabulary size 128"));
    }
    let id = body["cache_id"].as_str().ok_or("caching server returned no cache id")?.to_string();

    expect("unknown token id", post(&base, serde_json::json!({ "cache_id": null, "tokens": [999] }))?.0, 422)?;
    expect("empty tokens", post(&base, serde_json::json!({ "cache_id": null, "tokens": [] }))?.0, 422)?;
    expect("unknown cache", post(&base, serde_json::json!({ "cache_id": "nope", "tokens": [vocab.server_id(3)] }))?.0, 404)?;
    expect(
        "cache id on a non-caching server",
        post(&plain.url(), serde_json::json!({ "cache_id": "c0", "tokens": [vocab.server_id(3)] }))?.0,
        404,
    )?;
    let (status, body) = post(&plain.url(), serde_json::json!({ "cache_id": null, "tokens": [vocab.server_id(3)] }))?;
    expect("non-caching request", status, 200)?;
    if !body["cache_id"].is_null() {
        return Err("non-caching server returned a cache id".into());
    }

    let fork = http.post(format!("{base}/v1/fork")).json(&serde_json::json!({ "cache_id": "nope" })).send().map_err(|e| e.to_string())?;
    expect("fork of unknown cache", fork.status().as_u16(), 404)?;

    let delete = |id: &str| http.delete(format!("{base}/v1/cache/{id}")).send().map(|r| r.status().as_u16()).map_err(|e| e.to_string());
    expect("delete live cache", delete(&id)?, 204)?;
    expect("delete deleted cache", delete(&id)?, 404)?;
    Ok("200/204/404/422 as specified".into())
}

/// 503 is retried with backoff; persistent 503 surfaces as a retryable
/// transport error; non-finite logits and unknown caches are protocol errors.
pub fn retry_and_client_errors() -> Check {
    let (kernels, _) = fixture();
    let srv = server(&kernels, true);
    let c = client(srv.url());
    srv.inject_busy(2);
    let before = srv.stats().next_requests;
    feed(&c, &[4, 1]).map_err(|e| format!("two 503s should be retried: {e}"))?;
    let requests = srv.stats().next_requests - before;
    if requests != 4 {
        return Err(format!("{requests} requests for 2 tokens with 2 injected 503s"));
    }

    srv.inject_busy(100);
    match feed(&c, &[4]) {
        Err(e) if e.is_retryable() => {}
        other => return Err(format!("persistent 503 gave {other:?}")),
    }
    srv.inject_busy(0);

    srv.inject_non_finite(1);
    match feed(&c, &[4]) {
        Err(ModelError::Protocol(_)) => {}
        other => return Err(format!("NaN logit gave {other:?}")),
    }

    let (_, h) = feed(&c, &[4, 1]).map_err(|e| e.to_string())?;
    let stale = h.clone();
    c.release(h);
    match c.next_distribution(stale, 2) {
        Err(ModelError::Protocol(_)) => {}
        other => return Err(format!("released cache gave {other:?}")),
    }
    Ok("503 retried, exhaustion retryable, NaN and stale caches rejected".into())
}

pub const CHECKS: [(&str, fn() -> Check); 5] = [
    ("pdfs match local backend", pdfs_match_local_backend),
    ("caching and forking", caching_and_forking),
    ("fork isolation", fork_isolation),
    ("error statuses", error_statuses),
    ("retry and client errors", retry_and_client_errors),
];
