//! Estimation of the size distribution of identically shaped convex
//! particles from the areas of their planar section profiles.
//!
//! The pipeline:
//!
//! 1. [`geometry`]: the reference particle `K` and IUR plane sections of it.
//! 2. [`refdist`]: Monte Carlo reference distribution of `√area(K ∩ T)`.
//! 3. [`bias`]: length-biased size laws and the forward model
//!    `√A = √Z · Λ_b`.
//! 4. [`unfold`]: nonparametric maximum likelihood for the length-biased
//!    size CDF `H^b` (EM, ICM, hybrid ICM-EM).
//! 5. [`regularize`]: truncation and de-biasing to estimate the size CDF `H`.
//! 6. [`harness`]: experiment runner and reports.

pub mod bias;
pub mod error;
pub mod geometry;
pub mod harness;

pub mod refdist;
pub mod regularize;
pub mod rng;
pub mod stats;
pub mod unfold;

pub use bias::{ParametricSize, SizeModel, StepCdf};
pub use error::{Error, Result};
pub use geometry::{Plane, Polyhedron, Vec3};
pub use refdist::{AnalyticBall, ReferenceDistribution, ReferenceSample};
pub use regularize::{estimate_h, Estimate, TruncationResult, TruncationRule};
pub use rng::SeedRng;
pub use unfold::{AlphaMatrix, Algorithm, FitState, SolverConfig};
