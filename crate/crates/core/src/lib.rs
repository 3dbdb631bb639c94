//! The k-subset mechanism for locally differentially private distribution
//! estimation, alongside multivariate and binary randomized response.
//!
//! The crate covers three layers:
//!
//! - **analysis**: closed-form mutual information of the k-subset channel
//!   ([`information`]), explicit channel matrices with a brute-force
//!   mutual-information oracle ([`channels`]), and the squared-ℓ₂ error of the
//!   remapping estimator ([`estimation`]);
//! - **mechanisms**: O(d) per-provider randomizers ([`sampling`]) and the
//!   frequency aggregator / unbiased remapping estimator ([`estimation`]);
//! - **experiments**: a reproducible Monte Carlo harness ([`simulation`]) and
//!   self-check suites ([`verify`]) that the `ksubset` binary exposes.
//!
//! All information quantities are in nats.
//!
//! ```
//! use ksubset::{information, PrivacyParams};
//!
//! let params = PrivacyParams::new(1.0, 16).unwrap();
//! let choice = information::kstar(&params);
//! assert_eq!(choice.k, 5);
//! ```

pub mod channels;
pub mod cli;
mod error;
pub mod estimation;
pub mod information;
pub mod io;
mod numeric;
mod params;
pub mod rng;
pub mod sampling;
pub mod simulation;
pub mod verify;

pub use error::{Error, Result};
pub use params::PrivacyParams;
