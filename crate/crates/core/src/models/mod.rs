//! Next-token probability backends.
//!
//! A backend consumes tokens one at a time through opaque [`CacheHandle`]s and
//! reports the distribution of the following token. Handles are single-owner:
//! [`ModelBackend::next_distribution`] consumes the handle it extends, and
//! [`ModelBackend::fork`] is the only way to branch a prefix.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{TokenId, SEPARATOR, VOCAB_SIZE};

pub mod ngram;
pub mod oracle;
#[cfg(feature = "remote")]
pub mod remote;
#[cfg(feature = "remote")]
pub mod stub;

pub use ngram::{fit_ngram, NgramBackend, NgramCounts, NgramModel};
pub use oracle::{oracle_digit_distribution, OracleBackend, OracleDigits};
#[cfg(feature = "remote")]
pub use remote::{RemoteBackend, RemoteOptions, VocabMap};
#[cfg(feature = "remote")]
pub use stub::{StubOptions, StubServer, StubStats};

/// Tolerance on the sum of a probability vector.
pub const SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("degenerate distribution: {0}")]
    Degenerate(String),
    /// Network-level failure; the request may succeed if retried.
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl ModelError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ModelError::Transport(_))
    }
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Probabilities over the 11-symbol vocabulary at one position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenDistribution {
    pub probs: [f64; VOCAB_SIZE],
    /// Index of the token this distribution predicts.
    pub context_position: usize,
}

impl TokenDistribution {
    /// Normalizes non-negative weights.
    pub fn from_weights(weights: [f64; VOCAB_SIZE], context_position: usize) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(ModelError::Parameter(format!("weights must be finite and non-negative: {weights:?}")));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(ModelError::Degenerate("all weights are zero".into()));
        }
        let mut probs = weights;
        probs.iter_mut().for_each(|p| *p /= total);
        Ok(Self { probs, context_position })
    }

    /// Softmax of logits.
    pub fn from_logits(logits: [f64; VOCAB_SIZE], context_position: usize) -> Result<Self> {
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(ModelError::Parameter("non-finite logit".into()));
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Self::from_weights(logits.map(|l| (l - max).exp()), context_position)
    }

    pub fn uniform_digits(context_position: usize) -> Self {
        let mut probs = [0.1; VOCAB_SIZE];
        probs[SEPARATOR as usize] = 0.0;
        Self { probs, context_position }
    }

    pub fn one_hot(token: TokenId, context_position: usize) -> Self {
        let mut probs = [0.0; VOCAB_SIZE];
        probs[token as usize] = 1.0;
        Self { probs, context_position }
    }

    pub fn prob(&self, token: TokenId) -> f64 {
        self.probs[token as usize]
    }

    pub fn digit_probs(&self) -> [f64; 10] {
        std::array::from_fn(|d| self.probs[d])
    }

    pub fn sum(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self.probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }

    /// Most probable token; ties go to the lower id.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best as TokenId
    }

    /// Zeroes every token outside `allowed` and renormalizes the rest.
    pub fn restrict_and_renormalize(&self, allowed: &[TokenId]) -> Result<Self> {
        if allowed.is_empty() {
            return Err(ModelError::Parameter("allowed token set is empty".into()));
        }
        let mut weights = [0.0; VOCAB_SIZE];
        for &t in allowed {
            let t = t as usize;
            if t >= VOCAB_SIZE {
                return Err(ModelError::Parameter(format!("token {t} outside the vocabulary")));
            }
            weights[t] = self.probs[t];
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            return Err(ModelError::Degenerate(format!("no mass on allowed tokens {allowed:?}")));
        }
        Self::from_weights(weights, self.context_position)
    }

    /// Rescales to `p^(1/T)`, renormalized. Zero entries stay zero.
    pub fn apply_temperature(&self, temperature: f64) -> Result<Self> {
        Ok(Self { probs: apply_temperature(&self.probs, temperature)?, context_position: self.context_position })
    }
}

/// `p_i^(1/T) / Σ_j p_j^(1/T)`, evaluated in log space relative to the
/// largest entry so that small temperatures do not underflow to all zeros.
pub fn apply_temperature<const N: usize>(probs: &[f64; N], temperature: f64) -> Result<[f64; N]> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(ModelError::Parameter(format!("temperature must be positive and finite, got {temperature}")));
    }
    if temperature == 1.0 {
        return Ok(*probs);
    }
    let max = probs.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(ModelError::Degenerate("all probabilities are zero".into()));
    }
    let lmax = max.ln();
    let mut out = probs.map(|p| if p > 0.0 { ((p.ln() - lmax) / temperature).exp() } else { 0.0 });
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    Ok(out)
}

/// A processed prefix of `prefix_len` tokens plus backend-specific state.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheHandle<S> {
    pub prefix_len: usize,
    pub state: S,
}

/// Backend-agnostic next-token model.
pub trait ModelBackend: Send + Sync {
    type State: Clone + Send + Sync;

    /// Handle for the empty prefix. Costs no forward call.
    fn root(&self) -> Result<CacheHandle<Self::State>>;

    /// Appends `token` to the prefix held by `cache` and returns the
    /// distribution of the token after it. One forward call.
    fn next_distribution(
        &self,
        cache: CacheHandle<Self::State>,
        token: TokenId,
    ) -> Result<(TokenDistribution, CacheHandle<Self::State>)>;

    /// Independent copy of a handle; extending either leaves the other intact.
    fn fork(&self, cache: &CacheHandle<Self::State>) -> Result<CacheHandle<Self::State>>;

    /// Hint that a handle will not be used again.
    fn release(&self, _cache: CacheHandle<Self::State>) {}

    /// Forward evaluations performed so far.
    fn call_count(&self) -> u64;
}

/// Monotone forward-call counter shared by backends.
#[derive(Debug, Default)]
pub struct CallCounter(AtomicU64);

impl CallCounter {
    pub fn incr(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// Feeds `tokens` from the root and returns the final distribution and handle.
pub fn feed<B: ModelBackend>(backend: &B, tokens: &[TokenId]) -> Result<(Option<TokenDistribution>, CacheHandle<B::State>)> {
    let mut handle = backend.root()?;
    let mut last = None;
    for &t in tokens {
        let (dist, next) = backend.next_distribution(handle, t)?;
        last = Some(dist);
        handle = next;
    }
    Ok((last, handle))
}
