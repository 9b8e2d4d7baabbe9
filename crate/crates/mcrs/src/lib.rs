//! Margin-closed regime-switching multivariate time series.
//!
//! A `d`-variate series is modeled with a hidden Markov regime sequence and,
//! within each regime, a stationary Gaussian-copula VAR whose correlation
//! structure is closed under margins: every sub-process of the series follows
//! the same kind of model with the same regime sequence and Markov order.
//! Dependence across a regime switch is carried by a single diagonal matrix
//! linking the last observation of the old regime to the first of the new one.
//!
//! The crate provides
//! * skew-t margins and probability integral transforms ([`margins`]),
//! * partial-autocorrelation parameterizations of Toeplitz correlation
//!   matrices ([`serialcorr`]) and the margin-closed VAR block assembly
//!   ([`mcvar`]),
//! * correlation matrices and conditional representations for observation
//!   windows that may span regime switches ([`window`]),
//! * exact complete-data and segment log-likelihoods ([`likelihood`]),
//! * forward-backward inference over regime tuples, smoothed run
//!   probabilities and regime dating ([`fbinfer`]),
//! * multi-stage and iterative estimation ([`estimate`]),
//! * exact simulation ([`simulate`]) and file formats ([`io`]).

pub mod error;
pub mod estimate;
pub mod fbinfer;
pub mod io;
pub mod likelihood;
pub mod margins;
pub mod mcvar;
pub mod model;
pub mod optim;
pub mod serialcorr;
pub mod simulate;
pub mod util;
pub mod window;

pub use error::{Error, Result};
pub use model::RegimeModel;
