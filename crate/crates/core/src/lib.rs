//! Asynchronous fixed-point iterations with snapshot-based convergence detection.
//!
//! A fixed-point map `f : X -> X` over a product space `X = X_1 x ... x X_n`
//! is iterated by `n` processes, each owning one block and updating it from a
//! possibly stale view of the others. Detecting `||f(x) - x|| < eps` in that
//! setting requires assembling a *consistent* global vector out of the local
//! views without stopping the iterations. This crate provides:
//!
//! - [`math`]: block vectors, block norms, residuals, and blockwise
//!   sensitivity coefficients of a map.
//! - [`simnet`]: a deterministic, seedable discrete-event simulator of
//!   message-passing processes with configurable per-channel ordering
//!   (FIFO, bounded crossing, arbitrary bounded reordering, per-kind FIFO).
//! - [`engine`]: the per-process iteration state driven by the simulator.
//! - [`protocols`]: pluggable snapshot protocols that record a global vector
//!   on the fly and decide convergence with a single reduction.
//! - [`workloads`]: synthetic contraction maps with known contraction factor
//!   and a convection-diffusion problem solved by Jacobi-style relaxation.
//! - [`oracle`]: an offline verifier that replays a run history and checks
//!   snapshot consistency, error bounds, delivery-policy soundness, and
//!   causality of the realized delays.
//! - [`runner`]: glue that wires a workload, a schedule, and a protocol into
//!   a single reproducible run, plus a (optionally parallel) sweep driver.
//!
//! Every run is a pure function of its configuration and seed: identical
//! inputs give bitwise-identical event logs, which is what makes the replay
//! tooling and the oracle checks meaningful.

pub mod engine;
pub mod math;
pub mod oracle;
pub mod protocols;
pub mod runner;
pub mod simnet;
pub mod workloads;

pub use math::{
    adjusted_threshold, delta_coeffs, mixed_residual, norm, residual, BlockStructure, BlockVector,
    DeltaCoeffs, FixedPointMap, LinearMap, MathError, NormSpec, SparseBlockMatrix,
};
pub use oracle::{extract_delays, verify_run, RunHistory, VerificationReport, Verdict};
pub use protocols::{Decision, ProtocolKind, SnapshotResult};
pub use simnet::{ChannelPolicy, EventRecord, LatencyDist, Message, MessageKind};
