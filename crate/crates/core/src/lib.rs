pub mod baselines;
pub mod codec;
pub mod hpdf;
pub mod metrics;
pub mod models;
mod normal;
mod par;
pub mod runner;
pub mod scaling;
pub mod systems;
