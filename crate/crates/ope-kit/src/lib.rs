//! Operator product expansion (OPE) coefficients for the Euclidean scalar
//! field with quartic self-interaction in four dimensions.
//!
//! The library computes:
//!
//! * exact free-theory coefficients as perfect-matching (hafnian) sums over
//!   propagator derivatives ([`matchings`], [`coefficients`]),
//! * contractions of coefficient products organised by weighted rooted trees,
//!   including the Taylor-merged single-sum representation ([`trees`],
//!   [`matchings::merged_contraction`]),
//! * the first interacting order by stratified Monte Carlo integration of the
//!   renormalised recursion integrand, plus its massless finite-volume
//!   variant and the large-distance mixing matrix ([`recursion`]),
//! * evaluators for the explicit remainder and contraction bounds used to
//!   verify factorization numerically ([`bounds`]),
//! * the boundary operator `b` on truncated coefficient systems together with
//!   the first-order cocycle residual ([`hochschild`]),
//! * a self-contained verification suite wiring all of the above into
//!   pass/fail checks ([`verify`]).
//!
//! # Parallelism
//!
//! With the default `parallel` feature, matching enumeration and Monte Carlo
//! batches run on a rayon pool (sized by `OPE_KIT_THREADS` when set). Without
//! it every computation is sequential and produces byte-identical output run
//! to run; Monte Carlo results are reproducible for a fixed seed in both
//! modes because random streams are derived per batch, not per worker.

pub mod bounds;
pub mod coefficients;
pub mod hochschild;
pub mod matchings;
pub mod multiindex;
pub mod propagator;
pub mod recursion;
pub mod trees;
pub mod verify;

pub(crate) mod par;
pub(crate) mod special;

pub use par::configure_threads_from_env;
