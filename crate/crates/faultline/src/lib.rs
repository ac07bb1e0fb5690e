//! Cycle-accurate simulator of a fixed-point fully-connected NN inference
//! accelerator, with register-level fault injection, statistical fault
//! campaigns, and bit-masking mitigation.
//!
//! The crate is organized along the datapath:
//!
//! - [`fxp`]: two's-complement fixed-point words and their arithmetic.
//! - [`nn`]: float-side reference — datasets, training, activation
//!   functions, fixed-point calibration, and weight archives.
//! - [`accel`]: the accelerator itself — PE array, register file, cycle
//!   schedule, and the inference engine.
//! - [`faults`]: fault specifications, random generation, and application
//!   to register writes.
//! - [`mitigate`]: word/bit/hybrid masking applied to corrupted words.
//! - [`campaign`]: seeded multi-trial fault campaigns and sweeps.
//! - [`analysis`]: sparsity statistics and sweep tables.

pub mod accel;
pub mod analysis;
pub mod campaign;
pub mod faults;
pub mod fxp;
pub mod mitigate;
pub mod nn;

/// Number of worker threads to use for data-parallel campaign execution.
///
/// Reads the `FAULTLINE_THREADS` environment variable; unset, empty, zero,
/// or unparsable values mean "use all available cores". Builds without the
/// `parallel` feature always run on one thread.
pub fn configured_threads() -> Option<usize> {
    std::env::var("FAULTLINE_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}
