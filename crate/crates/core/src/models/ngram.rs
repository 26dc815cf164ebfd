//! Count-based unigram and bigram predictors with add-α smoothing.

use crate::codec::{TokenId, VOCAB_SIZE};

use super::{CacheHandle, CallCounter, ModelBackend, ModelError, Result, TokenDistribution};

/// Jeffreys prior: half a pseudo-count per outcome.
pub const DEFAULT_ALPHA: f64 = 0.5;

/// Running unigram and transition counts over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramCounts {
    pub unigram: [u32; VOCAB_SIZE],
    pub transitions: [[u32; VOCAB_SIZE]; VOCAB_SIZE],
    pub last: Option<TokenId>,
    pub total: u32,
}

impl Default for NgramCounts {
    fn default() -> Self {
        Self { unigram: [0; VOCAB_SIZE], transitions: [[0; VOCAB_SIZE]; VOCAB_SIZE], last: None, total: 0 }
    }
}

impl NgramCounts {
    pub fn push(&mut self, token: TokenId) {
        let t = token as usize;
        self.unigram[t] += 1;
        self.total += 1;
        if let Some(prev) = self.last {
            self.transitions[prev as usize][t] += 1;
        }
        self.last = Some(token);
    }

    /// Smoothed prediction over `support`. Falls back to uniform when the
    /// estimate is undefined (no counts and α = 0).
    pub fn predict(&self, order: usize, alpha: f64, support: &[TokenId]) -> [f64; VOCAB_SIZE] {
        let (counts, total): (Vec<f64>, f64) = match (order, self.last) {
            (2, Some(prev)) => {
                let row = &self.transitions[prev as usize];
                let c: Vec<f64> = support.iter().map(|&j| row[j as usize] as f64).collect();
                let total = c.iter().sum();
                (c, total)
            }
            (2, None) => (vec![0.0; support.len()], 0.0),
            _ => {
                let c: Vec<f64> = support.iter().map(|&j| self.unigram[j as usize] as f64).collect();
                let total = c.iter().sum();
                (c, total)
            }
        };
        let denom = total + alpha * support.len() as f64;
        let mut probs = [0.0; VOCAB_SIZE];
        for (&j, c) in support.iter().zip(counts) {
            probs[j as usize] = if denom > 0.0 { (c + alpha) / denom } else { 1.0 / support.len() as f64 };
        }
        probs
    }
}

/// Fitted categorical model over states `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramModel {
    pub order: usize,
    pub n: usize,
    pub alpha: f64,
    /// One row for unigram, `n` rows (indexed by previous state) for bigram.
    pub rows: Vec<Vec<f64>>,
}

impl NgramModel {
    pub fn predict(&self, prev: usize) -> &[f64] {
        if self.order == 1 {
            &self.rows[0]
        } else {
            &self.rows[prev]
        }
    }
}

/// Maximum-likelihood n-gram fit with add-α smoothing:
/// `P̂(j|i) = (c(i→j) + α) / (c(i→·) + α n)`.
pub fn fit_ngram(states: &[usize], n: usize, order: usize, alpha: f64) -> Result<NgramModel> {
    if !(order == 1 || order == 2) {
        return Err(ModelError::Parameter(format!("order must be 1 or 2, got {order}")));
    }
    if !(1..=VOCAB_SIZE).contains(&n) {
        return Err(ModelError::Parameter(format!("state count {n} out of range")));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(ModelError::Parameter(format!("alpha must be non-negative, got {alpha}")));
    }
    if states.is_empty() || states.len() < order {
        return Err(ModelError::Parameter(format!("need at least {order} states, got {}", states.len())));
    }
    if let Some(s) = states.iter().find(|&&s| s >= n) {
        return Err(ModelError::Parameter(format!("state {s} outside 0..{n}")));
    }
    let support: Vec<TokenId> = (0..n as TokenId).collect();
    let mut counts = NgramCounts::default();
    states.iter().for_each(|&s| counts.push(s as TokenId));
    let rows = if order == 1 {
        vec![counts.predict(1, alpha, &support)[..n].to_vec()]
    } else {
        (0..n)
            .map(|i| {
                let mut c = counts.clone();
                c.last = Some(i as TokenId);
                c.predict(2, alpha, &support)[..n].to_vec()
            })
            .collect()
    };
    Ok(NgramModel { order, n, alpha, rows })
}

/// In-context n-gram learner: every token seen so far updates the counts
/// carried by the handle, so the prediction at position `p` uses exactly the
/// prefix before `p`.
#[derive(Debug)]
pub struct NgramBackend {
    order: usize,
    alpha: f64,
    support: Vec<TokenId>,
    calls: CallCounter,
}

impl NgramBackend {
    pub fn new(order: usize, alpha: f64, support: Vec<TokenId>) -> Result<Self> {
        if !(order == 1 || order == 2) {
            return Err(ModelError::Parameter(format!("order must be 1 or 2, got {order}")));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(ModelError::Parameter(format!("alpha must be non-negative, got {alpha}")));
        }
        if support.is_empty() || support.iter().any(|&t| t as usize >= VOCAB_SIZE) {
            return Err(ModelError::Parameter(format!("invalid support {support:?}")));
        }
        Ok(Self { order, alpha, support, calls: CallCounter::default() })
    }

    /// Learner over the states `0..n` of a discrete chain.
    pub fn for_chain(n: usize, order: usize, alpha: f64) -> Result<Self> {
        Self::new(order, alpha, (0..n as TokenId).collect())
    }

    /// Learner over the full vocabulary (serialized continuous series).
    pub fn for_tokens(order: usize, alpha: f64) -> Result<Self> {
        Self::new(order, alpha, (0..VOCAB_SIZE as TokenId).collect())
    }
}

impl ModelBackend for NgramBackend {
    type State = Box<NgramCounts>;

    fn root(&self) -> Result<CacheHandle<Self::State>> {
        Ok(CacheHandle { prefix_len: 0, state: Box::default() })
    }

    fn next_distribution(
        &self,
        cache: CacheHandle<Self::State>,
        token: TokenId,
    ) -> Result<(TokenDistribution, CacheHandle<Self::State>)> {
        if token as usize >= VOCAB_SIZE {
            return Err(ModelError::Parameter(format!("token {token} outside the vocabulary")));
        }
        let mut state = cache.state;
        state.push(token);
        self.calls.incr();
        let probs = state.predict(self.order, self.alpha, &self.support);
        let dist = TokenDistribution::from_weights(probs, cache.prefix_len + 1)?;
        Ok((dist, CacheHandle { prefix_len: cache.prefix_len + 1, state }))
    }

    fn fork(&self, cache: &CacheHandle<Self::State>) -> Result<CacheHandle<Self::State>> {
        Ok(cache.clone())
    }

    fn call_count(&self) -> u64 {
        self.calls.get()
    }
}
