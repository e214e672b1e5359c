//! Central limit experiments for weighted sums of iterates of finite
//! Blaschke products.
//!
//! `f` maps the disc to itself with `f(0) = 0`, so its boundary map keeps
//! Lebesgue measure on the circle. This crate checks the martingale structure
//! behind `sum a_n f∘n` by quadrature, computes exact variances through a
//! coefficient transfer, evaluates the Berry-Esseen style bound, and measures
//! convergence to the complex normal by seeded Monte Carlo.
//!
//! ```
//! use inner_clt::experiments::{self, ExperimentConfig};
//!
//! let cfg = ExperimentConfig { n_grid: vec![10, 40], samples: 2000, ..ExperimentConfig::default() };
//! let report = experiments::clt_experiment(&cfg)?;
//! assert_eq!(report.rows.len(), 2);
//! assert!(report.rows.iter().all(|r| (0.0..=1.0).contains(&r.ks_sup)));
//! # Ok::<(), experiments::ExperimentError>(())
//! ```

pub mod blaschke;
pub mod cli;
pub mod experiments;
pub mod harmonic;
pub mod numeric;
pub mod report;
pub mod stats;
pub mod transfer;

// The guide's snippets run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/blaschke.md")]
    mod blaschke {}
    #[doc = include_str!("../../../book/src/martingales.md")]
    mod martingales {}
    #[doc = include_str!("../../../book/src/transfer.md")]
    mod transfer {}
    #[doc = include_str!("../../../book/src/statistics.md")]
    mod statistics {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
