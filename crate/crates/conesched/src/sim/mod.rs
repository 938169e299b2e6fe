//! Event-driven simulation of cone-scheduled fluid systems.
//!
//! Between events the workload moves along exact straight lines, so the
//! engine advances from event to event instead of time-stepping: environment
//! switches, traffic rate changes and job jumps, queues hitting empty
//! (solved in closed form), and workload crossings of cone boundaries. At an
//! attracting boundary the literal schedule would switch infinitely often;
//! the engine instead resolves a sliding mode — the convex combination of
//! tied service vectors that keeps their scores tied — which reproduces the
//! limiting trajectory exactly with finitely many events. A micro-stepping
//! guard remains as a fallback for states the mode search cannot certify.
//!
//! Trajectories record two distinct things. Samples carry the *selected*
//! service vector, which is always an admissible member of the completed
//! service set (zeroed on empty queues). Cumulative totals carry the
//! *effective* service rates (capped by available work), so the flow balance
//! `X(T) = X(0) + arrivals - service` holds to machine precision.

mod engine;
mod envtrace;
mod fixed_step;
mod traffic;

pub use fixed_step::simulate_fixed_step;

use crate::model::{ScheduleMatrix, ServiceVector, SystemSpec, TrafficKind, TrafficTrace};
use crate::model::EnvironmentTrace;
use crate::scheduler::SchedulerError;
use serde::Serialize;
use thiserror::Error;

/// Hard ceiling on processed events (loop iterations) per run.
pub const DEFAULT_EVENT_CAP: u64 = 100_000_000;

/// Ceiling on recorded samples per run.
const SAMPLE_CAP: usize = 30_000_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("system spec is invalid: {0:?}")]
    InvalidSystem(Vec<String>),
    #[error("environment {0} is not completed; materialize the closure first")]
    NotCompleted(usize),
    #[error("{what} has length {got}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("event cap {cap} exhausted at simulated time {time}")]
    EventCapExceeded { cap: u64, time: f64 },
    #[error("sample budget exceeded; increase the sample stride")]
    SampleBudgetExceeded,
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
}

/// Simulation knobs beyond the system/traffic descriptors.
#[derive(Debug, Clone)]
pub struct SimOptions {
    /// Starting workload; `None` means all queues empty.
    pub initial_workload: Option<Vec<f64>>,
    /// Spacing of interior trajectory samples; `None` picks `horizon / 1024`.
    pub sample_stride: Option<f64>,
    /// The scheduler observes `X(t - info_lag)` instead of `X(t)`.
    pub info_lag: f64,
    /// Half-width of adversarial perturbation on selection scores. Realized
    /// as a widened deterministic tie band (see [`crate::scheduler::SelectOptions`]).
    pub selection_noise: f64,
    /// Abort the run after this many events.
    pub event_cap: u64,
    /// Also record a sample at every environment switch.
    pub record_switch_samples: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            initial_workload: None,
            sample_stride: None,
            info_lag: 0.0,
            selection_noise: 0.0,
            event_cap: DEFAULT_EVENT_CAP,
            record_switch_samples: true,
        }
    }
}

/// Events processed, by kind. Simultaneous triggers at one instant are each
/// counted under their own kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EventCounts {
    pub env_switch: u64,
    pub rate_change: u64,
    pub job_jump: u64,
    pub queue_empty: u64,
    pub cone_crossing: u64,
    pub horizon: u64,
}

impl EventCounts {
    pub fn total(&self) -> u64 {
        self.env_switch
            + self.rate_change
            + self.job_jump
            + self.queue_empty
            + self.cone_crossing
            + self.horizon
    }
}

/// A simulated trajectory: sampled states plus exact run totals.
#[derive(Debug, Clone)]
pub struct Trajectory {
    queues: usize,
    times: Vec<f64>,
    xs: Vec<f64>,       // row-major, `queues` per sample
    envs: Vec<usize>,   // 0-based environment index per sample
    services: Vec<f64>, // selected admissible vector per sample, row-major
    cum_a: Vec<f64>,    // cumulative arrivals per sample, row-major
    cum_s: Vec<f64>,    // cumulative effective service per sample, row-major
    initial_x: Vec<f64>,
    final_x: Vec<f64>,
    final_time: f64,
    total_arrival: Vec<f64>,
    total_service: Vec<f64>,
    occupancy: Vec<f64>,
    used: Vec<ServiceVector>,
    load: Vec<f64>,
    pub event_counts: EventCounts,
    /// Times the micro-stepping fallback had to fire (0 in healthy runs).
    pub guard_activations: u64,
    /// Total time spent in sliding modes (tied vectors or pinned axes).
    pub sliding_time: f64,
}

impl Trajectory {
    pub fn queues(&self) -> usize {
        self.queues
    }

    /// Number of recorded samples.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.queues..(i + 1) * self.queues]
    }

    pub fn env(&self, i: usize) -> usize {
        self.envs[i]
    }

    pub fn service(&self, i: usize) -> &[f64] {
        &self.services[i * self.queues..(i + 1) * self.queues]
    }

    pub fn cum_arrival(&self, i: usize) -> &[f64] {
        &self.cum_a[i * self.queues..(i + 1) * self.queues]
    }

    pub fn cum_service(&self, i: usize) -> &[f64] {
        &self.cum_s[i * self.queues..(i + 1) * self.queues]
    }

    /// Workload at `t`, linearly interpolated between bracketing samples
    /// (exact where no unsampled kink lies between them).
    pub fn x_at(&self, t: f64) -> Vec<f64> {
        let n = self.len();
        if n == 0 {
            return self.initial_x.clone();
        }
        // Last sample with time <= t, preferring the later of equal stamps
        // (right-continuity across jumps).
        let hi = self.times.partition_point(|&s| s <= t);
        if hi == 0 {
            return self.x(0).to_vec();
        }
        if hi == n {
            return self.x(n - 1).to_vec();
        }
        let (i, j) = (hi - 1, hi);
        let (ti, tj) = (self.times[i], self.times[j]);
        if tj <= ti {
            return self.x(j).to_vec();
        }
        let w = (t - ti) / (tj - ti);
        self.x(i)
            .iter()
            .zip(self.x(j))
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }

    pub fn initial_x(&self) -> &[f64] {
        &self.initial_x
    }

    pub fn final_x(&self) -> &[f64] {
        &self.final_x
    }

    pub fn final_time(&self) -> f64 {
        self.final_time
    }

    /// Exact cumulative arrivals over the whole run (rates plus jumps).
    pub fn total_arrival(&self) -> &[f64] {
        &self.total_arrival
    }

    /// Exact cumulative effective service over the whole run.
    pub fn total_service(&self) -> &[f64] {
        &self.total_service
    }

    /// Time spent in each environment.
    pub fn occupancy(&self) -> &[f64] {
        &self.occupancy
    }

    /// Every admissible service vector that was ever applied (alone or as
    /// part of a sliding combination), lexicographically sorted.
    pub fn used_vectors(&self) -> &[ServiceVector] {
        &self.used
    }

    /// Nominal long-run load of the traffic that drove the run.
    pub fn load(&self) -> &[f64] {
        &self.load
    }

    /// Assembles a trajectory from raw sample arrays; totals are derived
    /// from the last sample. Meant for tests of downstream analysis code.
    #[doc(hidden)]
    pub fn from_samples(
        queues: usize,
        times: Vec<f64>,
        xs: Vec<f64>,
        envs: Vec<usize>,
        services: Vec<f64>,
        cum_a: Vec<f64>,
        cum_s: Vec<f64>,
        load: Vec<f64>,
    ) -> Self {
        assert!(!times.is_empty());
        assert_eq!(xs.len(), times.len() * queues);
        let last = times.len() - 1;
        Trajectory {
            queues,
            initial_x: xs[..queues].to_vec(),
            final_x: xs[last * queues..].to_vec(),
            final_time: times[last],
            total_arrival: cum_a[last * queues..].to_vec(),
            total_service: cum_s[last * queues..].to_vec(),
            occupancy: Vec::new(),
            used: Vec::new(),
            load,
            event_counts: EventCounts::default(),
            guard_activations: 0,
            sliding_time: 0.0,
            times,
            xs,
            envs,
            services,
            cum_a,
            cum_s,
        }
    }
}

fn require_finite(name: &'static str, values: &[f64]) -> Result<(), SimError> {
    for &v in values {
        if !v.is_finite() {
            return Err(SimError::BadParameter(format!(
                "{name} has a non-finite component"
            )));
        }
    }
    Ok(())
}

fn require_nonnegative(name: &'static str, values: &[f64]) -> Result<(), SimError> {
    require_finite(name, values)?;
    for &v in values {
        if v < 0.0 {
            return Err(SimError::BadParameter(format!(
                "{name} has a negative component"
            )));
        }
    }
    Ok(())
}

fn check_len(what: &'static str, got: usize, expected: usize) -> Result<(), SimError> {
    if got != expected {
        return Err(SimError::DimensionMismatch {
            what,
            got,
            expected,
        });
    }
    Ok(())
}

pub(crate) fn validate_inputs(
    spec: &SystemSpec,
    matrix: &ScheduleMatrix,
    traffic: &TrafficTrace,
    envtrace: &EnvironmentTrace,
    horizon: f64,
    opts: &SimOptions,
) -> Result<(), SimError> {
    let report = spec.validate();
    if !report.is_clean() {
        return Err(SimError::InvalidSystem(report.violations));
    }
    for env in spec.environments() {
        if !env.completed() {
            return Err(SimError::NotCompleted(env.id));
        }
    }
    let q = spec.queues();
    check_len("schedule matrix", matrix.dim(), q)?;
    check_len("traffic load", traffic.load.len(), q)?;
    require_nonnegative("traffic load", &traffic.load)?;
    match &traffic.kind {
        TrafficKind::Fluid => {}
        TrafficKind::Jobs { sigma } => {
            check_len("job sizes", sigma.len(), q)?;
            require_nonnegative("job sizes", sigma)?;
        }
        TrafficKind::Stochastic {
            mean_job,
            window,
            burst,
        } => {
            check_len("mean job sizes", mean_job.len(), q)?;
            require_nonnegative("mean job sizes", mean_job)?;
            require_nonnegative("window", &[*window])?;
            require_nonnegative("burst", &[*burst])?;
        }
        TrafficKind::AdversarialEnv {
            target_env,
            window,
            burst,
        } => {
            if *target_env >= spec.environments().len() {
                return Err(SimError::BadParameter(format!(
                    "target environment index {target_env} out of range"
                )));
            }
            require_nonnegative("window", &[*window])?;
            require_nonnegative("burst", &[*burst])?;
        }
        TrafficKind::AdversarialSchedule {
            window,
            burst,
            info_lag,
        } => {
            if !(*window > 0.0) || !window.is_finite() {
                return Err(SimError::BadParameter(
                    "adversarial-schedule traffic needs a positive window".into(),
                ));
            }
            require_nonnegative("burst", &[*burst])?;
            require_nonnegative("traffic info lag", &[*info_lag])?;
        }
    }
    check_len(
        "environment trace proportions",
        envtrace.pi.len(),
        spec.environments().len(),
    )?;
    for (a, b) in envtrace.pi.iter().zip(spec.pi()) {
        if (a - b).abs() > 1e-12 {
            return Err(SimError::BadParameter(
                "environment trace proportions must match the system spec".into(),
            ));
        }
    }
    if spec.environments().len() > 1 {
        let scale = match envtrace.kind {
            crate::model::EnvTraceKind::Periodic { cycle_length } => cycle_length,
            crate::model::EnvTraceKind::RandomHolding { mean_cycle } => mean_cycle,
        };
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(SimError::BadParameter(
                "environment trace needs a positive cycle scale".into(),
            ));
        }
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(SimError::BadParameter("horizon must be positive".into()));
    }
    if let Some(x0) = &opts.initial_workload {
        check_len("initial workload", x0.len(), q)?;
        require_nonnegative("initial workload", x0)?;
    }
    if let Some(stride) = opts.sample_stride {
        if !(stride > 0.0) || !stride.is_finite() {
            return Err(SimError::BadParameter(
                "sample stride must be positive".into(),
            ));
        }
        if horizon / stride > SAMPLE_CAP as f64 {
            return Err(SimError::SampleBudgetExceeded);
        }
    }
    require_nonnegative("info lag", &[opts.info_lag])?;
    require_nonnegative("selection noise", &[opts.selection_noise])?;
    Ok(())
}

/// Runs the exact event-driven simulation.
pub fn simulate(
    spec: &SystemSpec,
    matrix: &ScheduleMatrix,
    traffic: &TrafficTrace,
    envtrace: &EnvironmentTrace,
    horizon: f64,
    seed: u64,
    opts: &SimOptions,
) -> Result<Trajectory, SimError> {
    validate_inputs(spec, matrix, traffic, envtrace, horizon, opts)?;
    engine::Engine::new(spec, matrix, traffic, envtrace, horizon, seed, opts).run()
}
