//! Identification of Wiener-Hammerstein (WH) models from noisy symmetric
//! Volterra kernel tensors, via structured canonical polyadic decomposition
//! (CPD), together with the statistical machinery needed to evaluate the
//! estimators: an analytical Cramér-Rao bound (CRB) and a Monte Carlo
//! experiment harness.
//!
//! A WH model is the cascade `W(z) → g(·) → H(z)` of an FIR filter `w`
//! (length `L_w`), a static polynomial nonlinearity, and a second FIR filter
//! `h` (length `R`). Its order-`p` Volterra kernel is a symmetric tensor of
//! dimension `M = L_w + R − 1` admitting a CPD whose factors are banded
//! Toeplitz matrices built from `w`, one of them scaled by `diag(h)`.
//! Recovering `w` and `h` from a noisy kernel is therefore a structured
//! tensor decomposition problem.
//!
//! Module map:
//!
//! * [`multilinear`] — symmetric tensors, Kronecker/Khatri-Rao products,
//!   unfoldings, the non-redundant index domain and CPD reconstruction.
//! * [`whmodel`] — WH parameters, simulation, kernel synthesis, banded
//!   factor construction and identifiability checks.
//! * [`estimators`] — circulant-constrained ALS (CALS) with multi-start,
//!   the non-iterative CPTOEP estimator, and quasi-Newton refinement.
//! * [`crb`] — Jacobians of the vectorized model, the Slepian-Bangs CRB
//!   matrix, and per-parameter bounds via oblique projections.
//! * [`montecarlo`] — SNR sweeps with common random numbers, MSE
//!   estimation and report formatting.
//! * [`cli`] — the `synth` / `crb` / `estimate` / `mc` commands behind the
//!   `whcpd` binary, plus the config and kernel file formats.
//!
//! See the crate `examples/` directory for a runnable tour of each
//! capability.

pub mod cli;
pub mod config;
pub mod crb;
pub mod estimators;
pub mod montecarlo;
pub mod multilinear;
pub mod whmodel;

pub use crb::CrbReport;
pub use estimators::{CalsOptions, EstimateResult, Method, QnOptions};
pub use multilinear::{MultisetDomain, SymTensor};
pub use whmodel::{EtaVector, WhParams};
