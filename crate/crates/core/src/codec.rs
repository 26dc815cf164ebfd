//! Digit serialization of trajectories.
//!
//! Continuous series are mapped affinely onto `[1.50, 8.50]` so every value
//! has one integer digit, then truncated to `n_digits` digits and joined with
//! a separator token. A digit prefix of length `d` names the half-open bin
//! `[v, v + 10^(1-d))`, where `v` is the prefix read with one integer digit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::systems::{TransitionKernel, Trajectory};

pub const RESCALE_LO: f64 = 1.5;
pub const RESCALE_HI: f64 = 8.5;
/// Support of every rescaled series; kernels are conditioned on it.
pub const WINDOW: (f64, f64) = (RESCALE_LO, RESCALE_HI);

pub type TokenId = u8;
pub const SEPARATOR: TokenId = 10;
pub const VOCAB_SIZE: usize = 11;
pub const MAX_DIGITS: usize = 8;

const RANGE_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("trajectory has a constant value; cannot fit a rescale map")]
    DegenerateRange,
    #[error("value {value} rescales to {rescaled}, outside [{RESCALE_LO}, {RESCALE_HI}]")]
    OutOfRange { value: f64, rescaled: f64 },
    #[error("invalid digits: {0}")]
    InvalidDigits(String),
    #[error("malformed token sequence: {0}")]
    Malformed(String),
}

type Result<T> = std::result::Result<T, CodecError>;

/// Affine map `y = scale·x + offset` sending the data range onto `[1.5, 8.5]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescaleMap {
    pub scale: f64,
    pub offset: f64,
}

impl RescaleMap {
    pub fn fit(traj: &Trajectory) -> Result<Self> {
        Self::fit_values(&traj.values)
    }

    pub fn fit_values(values: &[f64]) -> Result<Self> {
        let (min, max) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if !(max > min) || !(max - min).is_finite() {
            return Err(CodecError::DegenerateRange);
        }
        let scale = (RESCALE_HI - RESCALE_LO) / (max - min);
        Ok(Self { scale, offset: RESCALE_LO - scale * min })
    }

    pub fn identity() -> Self {
        Self { scale: 1.0, offset: 0.0 }
    }

    pub fn apply(&self, x: f64) -> f64 {
        self.scale * x + self.offset
    }

    pub fn invert(&self, y: f64) -> f64 {
        (y - self.offset) / self.scale
    }

    /// Kernel expressed in rescaled units.
    pub fn kernel(&self, kernel: &TransitionKernel) -> TransitionKernel {
        kernel.affine(self.scale, self.offset)
    }

    /// Rescaled value, clamped onto the window when within rounding slack.
    pub fn rescale_checked(&self, x: f64) -> Result<f64> {
        let y = self.apply(x);
        if !(y >= RESCALE_LO - RANGE_SLACK && y <= RESCALE_HI + RANGE_SLACK) {
            return Err(CodecError::OutOfRange { value: x, rescaled: y });
        }
        Ok(y.clamp(RESCALE_LO, RESCALE_HI))
    }
}

/// Bounds of the bin named by the integer `code` with `depth` digits.
pub fn bin_bounds(code: u64, depth: usize) -> (f64, f64) {
    let denom = 10f64.powi(depth as i32 - 1);
    (code as f64 / denom, (code + 1) as f64 / denom)
}

/// Leading digits of a number, with one integer digit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DigitPrefix(Vec<u8>);

impl DigitPrefix {
    pub fn new(digits: Vec<u8>) -> Result<Self> {
        if digits.is_empty() || digits.len() > MAX_DIGITS {
            return Err(CodecError::InvalidDigits(format!("prefix length {} outside 1..={MAX_DIGITS}", digits.len())));
        }
        if let Some(d) = digits.iter().find(|&&d| d > 9) {
            return Err(CodecError::InvalidDigits(format!("{d} is not a decimal digit")));
        }
        Ok(Self(digits))
    }

    pub fn digits(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn code(&self) -> u64 {
        digits_code(&self.0)
    }

    pub fn interval(&self) -> (f64, f64) {
        prefix_to_interval(self)
    }
}

pub(crate) fn digits_code(digits: &[u8]) -> u64 {
    digits.iter().fold(0u64, |acc, &d| acc * 10 + d as u64)
}

pub fn prefix_to_interval(prefix: &DigitPrefix) -> (f64, f64) {
    bin_bounds(prefix.code(), prefix.len())
}

/// Digits of the finest bin containing rescaled value `y`.
pub fn encode_rescaled(y: f64, n_digits: usize) -> Result<DigitPrefix> {
    if !(1..=MAX_DIGITS).contains(&n_digits) {
        return Err(CodecError::InvalidDigits(format!("n_digits {n_digits} outside 1..={MAX_DIGITS}")));
    }
    if !(0.0..10.0).contains(&y) {
        return Err(CodecError::OutOfRange { value: y, rescaled: y });
    }
    let max_code = 10u64.pow(n_digits as u32) - 1;
    let mut code = (y * 10f64.powi(n_digits as i32 - 1)).floor() as u64;
    // Nudge by one where the product rounded across a bin edge, so that the
    // bin returned by `bin_bounds` always contains `y`.
    while code > 0 && bin_bounds(code, n_digits).0 > y {
        code -= 1;
    }
    while code < max_code && bin_bounds(code, n_digits).1 <= y {
        code += 1;
    }
    let mut digits = vec![0u8; n_digits];
    let mut rest = code.min(max_code);
    for d in digits.iter_mut().rev() {
        *d = (rest % 10) as u8;
        rest /= 10;
    }
    DigitPrefix::new(digits)
}

pub fn encode_state(x: f64, map: &RescaleMap, n_digits: usize) -> Result<DigitPrefix> {
    encode_rescaled(map.rescale_checked(x)?, n_digits)
}

/// Serialized series over the 11-symbol vocabulary (digits 0–9, separator 10).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    tokens: Vec<TokenId>,
    n_digits: usize,
    separated: bool,
    state_offsets: Vec<usize>,
}

impl TokenSeq {
    /// Validates the layout of a raw token list.
    pub fn from_tokens(tokens: Vec<TokenId>, n_digits: usize, separated: bool) -> Result<Self> {
        if !(1..=MAX_DIGITS).contains(&n_digits) {
            return Err(CodecError::Malformed(format!("n_digits {n_digits} outside 1..={MAX_DIGITS}")));
        }
        let stride = if separated { n_digits + 1 } else { n_digits };
        if tokens.is_empty() || (tokens.len() + usize::from(separated)) % stride != 0 {
            return Err(CodecError::Malformed(format!("{} tokens do not form whole states", tokens.len())));
        }
        for (i, &t) in tokens.iter().enumerate() {
            let want_sep = separated && i % stride == n_digits;
            if want_sep != (t == SEPARATOR) || t as usize >= VOCAB_SIZE {
                return Err(CodecError::Malformed(format!("unexpected token {t} at position {i}")));
            }
        }
        let states = (tokens.len() + usize::from(separated)) / stride;
        let state_offsets = (0..states).map(|s| s * stride).collect();
        Ok(Self { tokens, n_digits, separated, state_offsets })
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn n_digits(&self) -> usize {
        self.n_digits
    }

    pub fn separated(&self) -> bool {
        self.separated
    }

    /// Tokens per state including its trailing separator.
    pub fn stride(&self) -> usize {
        if self.separated {
            self.n_digits + 1
        } else {
            self.n_digits
        }
    }

    pub fn state_offsets(&self) -> &[usize] {
        &self.state_offsets
    }

    pub fn num_states(&self) -> usize {
        self.state_offsets.len()
    }

    pub fn state_digits(&self, state: usize) -> &[TokenId] {
        let start = self.state_offsets[state];
        &self.tokens[start..start + self.n_digits]
    }

    /// Left bin edge of each state, in rescaled units.
    pub fn decode_rescaled(&self) -> Vec<f64> {
        (0..self.num_states())
            .map(|s| bin_bounds(digits_code(self.state_digits(s)), self.n_digits).0)
            .collect()
    }

    /// Wire ids of the remote protocol (identical to the local ids).
    pub fn to_wire(&self) -> Vec<u32> {
        self.tokens.iter().map(|&t| t as u32).collect()
    }
}

impl std::fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for &t in &self.tokens {
            let c = if t == SEPARATOR { ',' } else { (b'0' + t) as char };
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

pub fn serialize_trajectory(traj: &Trajectory, map: &RescaleMap, n_digits: usize) -> Result<TokenSeq> {
    serialize_values(&traj.values, map, n_digits)
}

pub fn serialize_values(values: &[f64], map: &RescaleMap, n_digits: usize) -> Result<TokenSeq> {
    let mut tokens = Vec::with_capacity(values.len() * (n_digits + 1));
    for (i, &x) in values.iter().enumerate() {
        if i > 0 {
            tokens.push(SEPARATOR);
        }
        tokens.extend_from_slice(encode_state(x, map, n_digits)?.digits());
    }
    TokenSeq::from_tokens(tokens, n_digits, true)
}

/// Discrete chains: one digit token per state, no separators.
pub fn serialize_states(states: &[usize]) -> Result<TokenSeq> {
    let tokens = states
        .iter()
        .map(|&s| {
            if s <= 9 {
                Ok(s as TokenId)
            } else {
                Err(CodecError::InvalidDigits(format!("state {s} does not fit one digit")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    TokenSeq::from_tokens(tokens, 1, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{simulate_map, MapParams, SystemTag};
    use proptest::prelude::*;

    fn traj(values: Vec<f64>) -> Trajectory {
        Trajectory::new(values, None, 0, SystemTag::Logistic).unwrap()
    }

    #[test]
    fn fit_examples() {
        let m = RescaleMap::fit(&traj(vec![0.0, 0.3, 1.0])).unwrap();
        assert!((m.scale - 7.0).abs() < 1e-15);
        assert!((m.offset - 1.5).abs() < 1e-15);

        let m = RescaleMap::fit(&traj(vec![1.5, 4.0, 8.5])).unwrap();
        assert_eq!(m, RescaleMap::identity());

        assert_eq!(RescaleMap::fit(&traj(vec![2.0, 2.0])), Err(CodecError::DegenerateRange));
    }

    #[test]
    fn noisy_logistic_rescales_into_window() {
        let t = simulate_map(&MapParams { r: 3.9, noise_sigma: 0.01, x0: 0.3 }, 1000, 5).unwrap();
        let m = RescaleMap::fit(&t).unwrap();
        assert!(t.values.iter().all(|&x| m.rescale_checked(x).is_ok()));
        let min = t.values.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((m.apply(min) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn encode_examples() {
        let id = RescaleMap::identity();
        assert_eq!(encode_state(5.25, &id, 3).unwrap().digits(), &[5, 2, 5]);
        assert_eq!(encode_state(1.50, &id, 3).unwrap().digits(), &[1, 5, 0]);
        assert_eq!(encode_state(8.50, &id, 3).unwrap().digits(), &[8, 5, 0]);
        assert_eq!(encode_state(1.5 + 0.9999 * 7.0, &id, 3).unwrap().digits(), &[8, 4, 9]);
        assert!(matches!(encode_state(8.6, &id, 3), Err(CodecError::OutOfRange { .. })));
        assert!(encode_state(1.4, &id, 3).is_err());
    }

    #[test]
    fn prefix_intervals() {
        let iv = |d: Vec<u8>| prefix_to_interval(&DigitPrefix::new(d).unwrap());
        assert_eq!(iv(vec![5]), (5.0, 6.0));
        assert_eq!(iv(vec![5, 2]), (5.2, 5.3));
        assert_eq!(iv(vec![5, 2, 5]), (5.25, 5.26));
        assert!(DigitPrefix::new(vec![]).is_err());
        assert!(DigitPrefix::new(vec![10]).is_err());
    }

    #[test]
    fn serialization_layout() {
        let m = RescaleMap::identity();
        let seq = serialize_values(&[1.5, 8.5], &m, 3).unwrap();
        assert_eq!(seq.len(), 7);
        assert_eq!(seq.to_string(), "150,850");
        assert_eq!(seq.state_offsets(), &[0, 4]);

        let seq = serialize_states(&[0, 3, 2, 2]).unwrap();
        assert_eq!(seq.tokens(), &[0, 3, 2, 2]);
        assert_eq!(seq.num_states(), 4);
        assert!(serialize_states(&[10]).is_err());
    }

    #[test]
    fn malformed_sequences_rejected() {
        assert!(TokenSeq::from_tokens(vec![1, 2, 3, 10, 4, 5], 3, true).is_err());
        assert!(TokenSeq::from_tokens(vec![1, 2, 10, 3, 10, 4, 5], 3, true).is_err());
        assert!(TokenSeq::from_tokens(vec![1, 2, 3, 10, 4, 5, 6], 3, true).is_ok());
    }

    proptest! {
        #[test]
        fn encoded_bin_contains_value(y in 1.5f64..=8.5, n in 1usize..=6) {
            let p = encode_rescaled(y, n).unwrap();
            let (lo, hi) = p.interval();
            prop_assert!(lo <= y && y < hi, "{y} not in [{lo}, {hi})");
            prop_assert_eq!(p.len(), n);
        }

        #[test]
        fn round_trip_within_finest_bin(values in proptest::collection::vec(-50.0f64..50.0, 2..40), n in 1usize..=5) {
            prop_assume!(values.iter().any(|&v| v != values[0]));
            let m = RescaleMap::fit_values(&values).unwrap();
            let seq = serialize_values(&values, &m, n).unwrap();
            prop_assert_eq!(seq.len(), values.len() * (n + 1) - 1);
            let width = 10f64.powi(1 - n as i32);
            for (x, edge) in values.iter().zip(seq.decode_rescaled()) {
                let y = m.apply(*x).clamp(RESCALE_LO, RESCALE_HI);
                prop_assert!(edge <= y && y - edge < width + 1e-12);
            }
        }
    }
}
