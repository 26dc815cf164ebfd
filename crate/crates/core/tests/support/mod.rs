#![allow(dead_code)]

#[cfg(feature = "remote")]
pub mod conformance;
