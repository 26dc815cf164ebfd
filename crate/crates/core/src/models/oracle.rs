//! Exact backend: digit probabilities are conditional masses of the
//! ground-truth kernel, so an ideal learner's Hierarchy-PDF is known in
//! closed form.

use crate::codec::{bin_bounds, digits_code, TokenId, SEPARATOR, VOCAB_SIZE, WINDOW};
use crate::systems::TransitionKernel;

use super::{CacheHandle, CallCounter, ModelBackend, ModelError, Result, TokenDistribution};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleDigits {
    pub dist: TokenDistribution,
    /// The prefix interval had no kernel mass; `dist` is uniform over digits.
    pub degenerate: bool,
}

/// Distribution of the digit following `prefix` under `kernel` (rescaled
/// units, conditioned on `window`).
pub fn oracle_digit_distribution(
    kernel: &TransitionKernel,
    prefix: &[u8],
    window: (f64, f64),
    context_position: usize,
) -> OracleDigits {
    let depth = prefix.len() + 1;
    let base = digits_code(prefix) * 10;
    let mut weights = [0.0; VOCAB_SIZE];
    for (d, w) in weights.iter_mut().take(10).enumerate() {
        let (lo, hi) = bin_bounds(base + d as u64, depth);
        *w = kernel.mass_within(lo, hi, window);
    }
    match TokenDistribution::from_weights(weights, context_position) {
        Ok(dist) => OracleDigits { dist, degenerate: false },
        Err(_) => OracleDigits { dist: TokenDistribution::uniform_digits(context_position), degenerate: true },
    }
}

/// Digits of the state currently being written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PartialState {
    digits: [u8; crate::codec::MAX_DIGITS],
    len: u8,
}

impl PartialState {
    pub fn digits(&self) -> &[u8] {
        &self.digits[..self.len as usize]
    }
}

/// Backend answering from per-state ground-truth kernels.
///
/// `kernels[s]` is the law of state `s` given the history; state 0 has no
/// context and positions past the last kernel get uniform digits.
#[derive(Debug)]
pub struct OracleBackend {
    kernels: Vec<Option<TransitionKernel>>,
    n_digits: usize,
    separated: bool,
    window: (f64, f64),
    calls: CallCounter,
    degenerate: CallCounter,
}

impl OracleBackend {
    pub fn new(kernels: Vec<Option<TransitionKernel>>, n_digits: usize, separated: bool) -> Result<Self> {
        if !(1..=crate::codec::MAX_DIGITS).contains(&n_digits) {
            return Err(ModelError::Parameter(format!("n_digits {n_digits} out of range")));
        }
        if !separated && n_digits != 1 {
            return Err(ModelError::Parameter("unseparated sequences must use one digit per state".into()));
        }
        Ok(Self { kernels, n_digits, separated, window: WINDOW, calls: CallCounter::default(), degenerate: CallCounter::default() })
    }

    /// Overrides the conditioning window (categorical chains ignore it).
    pub fn with_window(mut self, window: (f64, f64)) -> Self {
        self.window = window;
        self
    }

    /// Ground truth for every state of a continuous series: `kernels[t - 1]`
    /// is the law of state `t`, already in rescaled units.
    pub fn for_series(kernels: Vec<TransitionKernel>, n_digits: usize) -> Result<Self> {
        Self::new(std::iter::once(None).chain(kernels.into_iter().map(Some)).collect(), n_digits, true)
    }

    /// Ground truth for a discrete chain serialized one token per state.
    pub fn for_chain(kernels: Vec<TransitionKernel>) -> Result<Self> {
        Self::new(std::iter::once(None).chain(kernels.into_iter().map(Some)).collect(), 1, false)
    }

    pub fn stride(&self) -> usize {
        if self.separated {
            self.n_digits + 1
        } else {
            self.n_digits
        }
    }

    /// Queries whose prefix interval carried no kernel mass.
    pub fn degenerate_count(&self) -> u64 {
        self.degenerate.get()
    }

    fn distribution_at(&self, position: usize, partial: &PartialState) -> TokenDistribution {
        let (state, j) = (position / self.stride(), position % self.stride());
        if j == self.n_digits {
            return TokenDistribution::one_hot(SEPARATOR, position);
        }
        match self.kernels.get(state) {
            Some(Some(kernel)) => {
                let prefix = if j == 0 { &[][..] } else { partial.digits() };
                let out = oracle_digit_distribution(kernel, prefix, self.window, position);
                if out.degenerate {
                    self.degenerate.incr();
                }
                out.dist
            }
            _ => TokenDistribution::uniform_digits(position),
        }
    }
}

impl ModelBackend for OracleBackend {
    type State = PartialState;

    fn root(&self) -> Result<CacheHandle<PartialState>> {
        Ok(CacheHandle { prefix_len: 0, state: PartialState::default() })
    }

    fn next_distribution(
        &self,
        cache: CacheHandle<PartialState>,
        token: TokenId,
    ) -> Result<(TokenDistribution, CacheHandle<PartialState>)> {
        let position = cache.prefix_len;
        let j = position % self.stride();
        let mut state = cache.state;
        if j == self.n_digits {
            if token != SEPARATOR {
                return Err(ModelError::Parameter(format!("expected separator at position {position}, got {token}")));
            }
            state = PartialState::default();
        } else {
            if token > 9 {
                return Err(ModelError::Parameter(format!("expected a digit at position {position}, got {token}")));
            }
            if j == 0 {
                state = PartialState::default();
            }
            state.digits[state.len as usize] = token;
            state.len += 1;
        }
        self.calls.incr();
        let next = CacheHandle { prefix_len: position + 1, state };
        Ok((self.distribution_at(position + 1, &next.state), next))
    }

    fn fork(&self, cache: &CacheHandle<PartialState>) -> Result<CacheHandle<PartialState>> {
        Ok(cache.clone())
    }

    fn call_count(&self) -> u64 {
        self.calls.get()
    }
}
