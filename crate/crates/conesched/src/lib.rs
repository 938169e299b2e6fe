//! Cone schedules for multi-queue processing systems in fluctuating
//! environments.
//!
//! A processing system serves `Q` queues under an environment process that
//! switches among a finite set of states, each offering its own set of
//! feasible service-rate vectors. A *cone schedule* picks, at workload `x`,
//! the feasible vector `S` maximizing `<S, B x>` for a fixed matrix `B` that
//! is symmetric, positive definite, and has nonpositive off-diagonal
//! entries. This crate provides:
//!
//! - [`model`]: service vectors, completeness closure, environment and
//!   system specifications, schedule-matrix validation, and the traffic /
//!   environment trace descriptions;
//! - [`region`]: the stability region — membership certificates, boundary
//!   scaling, drain deficits, and 2-D boundary sweeps;
//! - [`scheduler`]: the selection rule itself plus cone-boundary crossing
//!   prediction;
//! - [`sim`]: an exact event-driven fluid simulator (and a fixed-step
//!   reference integrator) for trajectories under traffic and environment
//!   traces;
//! - [`analysis`]: rate-stability verdicts, effective service rates,
//!   Lyapunov diagnostics, and flow-balance checks on simulated
//!   trajectories;
//! - [`config`] / [`repro`]: JSON run configurations and the packaged
//!   reproduction scenarios used by the CLI.

pub mod analysis;
pub mod config;
pub mod model;
pub mod region;
pub mod repro;
pub mod scheduler;
pub mod sim;
mod simplex;

pub use model::{
    complete_closure, validate_matrix, validate_system, EnvTraceKind, EnvironmentSpec,
    EnvironmentTrace, MatrixValidity, ModelError, ScheduleMatrix, ServiceVector, SystemSpec,
    TrafficKind, TrafficTrace, ValidationReport, DEFAULT_CLOSURE_CAP,
};
pub use region::{
    boundary_scale, margin, membership, min_drain_deficit, region_polygon_2d, RegionCertificate,
    RegionError,
};
pub use scheduler::{
    next_boundary_crossing, select, select_with, shares_maximizer, SchedulerError, SelectOptions,
    SelectionResult, TIE_TOLERANCE,
};
pub use sim::{
    simulate, simulate_fixed_step, EventCounts, SimError, SimOptions, Trajectory,
    DEFAULT_EVENT_CAP,
};
pub use config::{BuiltConfig, ConfigError, RunConfig};
pub use analysis::{
    effective_service_rates, flow_balance_check, lyapunov_series, rate_stability, tail_slopes,
    FlowBalanceReport, LyapunovSeries, StabilityVerdict, Verdict, VerdictOptions,
    FLOW_BALANCE_TOLERANCE,
};
