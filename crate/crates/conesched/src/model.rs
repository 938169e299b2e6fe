//! Core data model: service vectors, per-environment service sets, the system
//! specification, the schedule matrix `B`, and trace descriptors.
//!
//! Conventions used throughout the crate:
//!
//! * workloads and loads are `&[f64]` of length `queues`, componentwise >= 0;
//! * service vectors may carry negative components (a negative rate *feeds*
//!   its queue instead of draining it);
//! * an environment's service set should be *complete*: zeroing any one
//!   strictly positive component of a member yields another member. The
//!   closure is materialized by [`complete_closure`] / [`SystemSpec::completed`].

use serde::Serialize;
use std::collections::HashSet;
use std::fmt;
use thiserror::Error;

/// Hard cap on the size of a materialized completeness closure.
pub const DEFAULT_CLOSURE_CAP: usize = 100_000;

/// Relative tolerance used when checking that `B` is symmetric.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Leading principal minors must exceed this for `B` to count as positive
/// definite.
pub const MINOR_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("service rate {value} at component {index} is not finite")]
    NonFiniteRate { index: usize, value: f64 },
    #[error("matrix entry ({row},{col}) = {value} is not finite")]
    NonFiniteEntry { row: usize, col: usize, value: f64 },
    #[error("matrix is not square: row {row} has {len} entries, expected {expected}")]
    NotSquare { row: usize, len: usize, expected: usize },
    #[error("completeness closure needs more than {cap} vectors (reached {reached})")]
    ClosureCapExceeded { cap: usize, reached: usize },
    #[error("cannot close an empty service set")]
    EmptyServiceSet,
    #[error("{what} has length {got}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
}

/// One service configuration: per-queue rates applied while it is selected.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ServiceVector {
    rates: Vec<f64>,
}

impl ServiceVector {
    /// Builds a vector, rejecting non-finite entries. Negative zeros are
    /// normalized to `0.0` so closure deduplication can compare bit patterns.
    pub fn new(rates: Vec<f64>) -> Result<Self, ModelError> {
        for (index, &value) in rates.iter().enumerate() {
            if !value.is_finite() {
                return Err(ModelError::NonFiniteRate { index, value });
            }
        }
        let rates = rates
            .into_iter()
            .map(|v| if v == 0.0 { 0.0 } else { v })
            .collect();
        Ok(Self { rates })
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    pub(crate) fn bit_key(&self) -> Vec<u64> {
        self.rates.iter().map(|v| v.to_bits()).collect()
    }
}

impl std::ops::Index<usize> for ServiceVector {
    type Output = f64;
    fn index(&self, q: usize) -> &f64 {
        &self.rates[q]
    }
}

impl fmt::Display for ServiceVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.rates.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

/// Componentwise lexicographic order; used for deterministic tie-breaking.
pub(crate) fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    false
}

/// Smallest superset of `services` closed under zeroing any single strictly
/// positive component. Negative components are never modified. The input
/// order is preserved; generated sub-vectors follow in discovery order.
pub fn complete_closure(
    services: &[ServiceVector],
    cap: usize,
) -> Result<Vec<ServiceVector>, ModelError> {
    if services.is_empty() {
        return Err(ModelError::EmptyServiceSet);
    }
    let mut out: Vec<ServiceVector> = Vec::with_capacity(services.len());
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    for s in services {
        if seen.insert(s.bit_key()) {
            out.push(s.clone());
        }
    }
    let mut next = 0;
    while next < out.len() {
        let parent = out[next].clone();
        for q in 0..parent.len() {
            if parent[q] > 0.0 {
                let mut child = parent.rates().to_vec();
                child[q] = 0.0;
                let child = ServiceVector { rates: child };
                if seen.insert(child.bit_key()) {
                    if out.len() >= cap {
                        return Err(ModelError::ClosureCapExceeded {
                            cap,
                            reached: out.len() + 1,
                        });
                    }
                    out.push(child);
                }
            }
        }
        next += 1;
    }
    Ok(out)
}

/// Service options available while the system sits in one environment state.
#[derive(Debug, Clone)]
pub struct EnvironmentSpec {
    /// 1-based identifier, assigned positionally by [`SystemSpec::new`].
    pub id: usize,
    services: Vec<ServiceVector>,
    completed: bool,
}

impl EnvironmentSpec {
    pub fn new(id: usize, services: Vec<ServiceVector>) -> Self {
        Self {
            id,
            services,
            completed: false,
        }
    }

    pub fn services(&self) -> &[ServiceVector] {
        &self.services
    }

    pub fn completed(&self) -> bool {
        self.completed
    }

    /// Replaces the service set by its completeness closure.
    pub fn complete(mut self, cap: usize) -> Result<Self, ModelError> {
        self.services = complete_closure(&self.services, cap)?;
        self.completed = true;
        Ok(self)
    }
}

/// The whole system: queue count, environment states with their service sets,
/// and long-run environment proportions `pi`.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    queues: usize,
    environments: Vec<EnvironmentSpec>,
    pi: Vec<f64>,
}

impl SystemSpec {
    pub fn new(
        queues: usize,
        environments: Vec<EnvironmentSpec>,
        pi: Vec<f64>,
    ) -> Result<Self, ModelError> {
        if pi.len() != environments.len() {
            return Err(ModelError::DimensionMismatch {
                what: "pi",
                got: pi.len(),
                expected: environments.len(),
            });
        }
        Ok(Self {
            queues,
            environments,
            pi,
        })
    }

    pub fn queues(&self) -> usize {
        self.queues
    }

    pub fn environments(&self) -> &[EnvironmentSpec] {
        &self.environments
    }

    pub fn env(&self, index: usize) -> &EnvironmentSpec {
        &self.environments[index]
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    /// Closes every environment's service set.
    pub fn completed(mut self, cap: usize) -> Result<Self, ModelError> {
        self.environments = self
            .environments
            .into_iter()
            .map(|e| e.complete(cap))
            .collect::<Result<_, _>>()?;
        Ok(self)
    }

    pub fn validate(&self) -> ValidationReport {
        validate_system(self)
    }
}

/// Outcome of [`validate_system`]. `violations` break the model contract;
/// `warnings` flag constructions that are legal but deserve attention.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_clean() && self.warnings.is_empty() {
            return write!(f, "ok");
        }
        for v in &self.violations {
            writeln!(f, "violation: {v}")?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

/// Structural checks on a [`SystemSpec`]: dimensions, positivity and
/// normalization of `pi`, non-empty service sets, completeness flags.
pub fn validate_system(spec: &SystemSpec) -> ValidationReport {
    let mut report = ValidationReport::default();
    if spec.queues == 0 {
        report.violations.push("queue count is zero".into());
    }
    if spec.environments.is_empty() {
        report.violations.push("no environments".into());
    }
    let mut pi_sum = 0.0;
    for (e, &p) in spec.pi.iter().enumerate() {
        if !(p > 0.0) {
            report
                .violations
                .push(format!("pi[{}] = {} is not positive", e + 1, p));
        }
        pi_sum += p;
    }
    if !spec.pi.is_empty() && (pi_sum - 1.0).abs() > 1e-12 {
        report.violations.push(format!("pi sums to {pi_sum}"));
    }
    for env in &spec.environments {
        if env.services.is_empty() {
            report
                .violations
                .push(format!("environment {}: empty service set", env.id));
            continue;
        }
        for (i, s) in env.services.iter().enumerate() {
            if s.len() != spec.queues {
                report.violations.push(format!(
                    "environment {}: service vector {} has length {}, expected {}",
                    env.id,
                    i,
                    s.len(),
                    spec.queues
                ));
            }
        }
        if !env.completed {
            report.warnings.push(format!(
                "environment {}: service set not marked complete; region computations require the closure",
                env.id
            ));
        }
        // With every vector feeding some queue, the weight normalization in the
        // stability region forces service to be applied even when undesirable.
        let has_nonnegative = env
            .services
            .iter()
            .any(|s| s.rates().iter().all(|&v| v >= 0.0));
        if !has_nonnegative {
            report.warnings.push(format!(
                "environment {}: no service vector is componentwise nonnegative",
                env.id
            ));
        }
    }
    report
}

/// Which of the schedule-matrix hypotheses hold for a given `B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MatrixValidity {
    pub symmetric: bool,
    pub positive_definite: bool,
    pub offdiag_nonpositive: bool,
}

impl MatrixValidity {
    /// All three hypotheses hold, so the cone schedule induced by `B` is
    /// universally rate-stabilizing on the region interior.
    pub fn is_cone_valid(&self) -> bool {
        self.symmetric && self.positive_definite && self.offdiag_nonpositive
    }
}

impl fmt::Display for MatrixValidity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "symmetric={}, positive_definite={}, offdiag_nonpositive={}",
            self.symmetric, self.positive_definite, self.offdiag_nonpositive
        )
    }
}

/// The bias matrix defining the schedule: the selected vector maximizes
/// `<S, B.X>` over the active environment's service set.
#[derive(Debug, Clone)]
pub struct ScheduleMatrix {
    dim: usize,
    // row-major
    entries: Vec<f64>,
    validity: MatrixValidity,
}

impl ScheduleMatrix {
    /// Accepts any finite square matrix; validity flags are computed eagerly
    /// and an invalid matrix is kept as-is (never repaired) so its induced
    /// schedule can still be simulated.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        let dim = rows.len();
        let mut entries = Vec::with_capacity(dim * dim);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(ModelError::NotSquare {
                    row: r,
                    len: row.len(),
                    expected: dim,
                });
            }
            for (c, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(ModelError::NonFiniteEntry {
                        row: r,
                        col: c,
                        value: v,
                    });
                }
                entries.push(v);
            }
        }
        let validity = validity_of(&entries, dim);
        Ok(Self {
            dim,
            entries,
            validity,
        })
    }

    pub fn identity(dim: usize) -> Self {
        let mut entries = vec![0.0; dim * dim];
        for q in 0..dim {
            entries[q * dim + q] = 1.0;
        }
        Self {
            dim,
            entries,
            validity: MatrixValidity {
                symmetric: true,
                positive_definite: true,
                offdiag_nonpositive: true,
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.dim + col]
    }

    pub fn validity(&self) -> MatrixValidity {
        self.validity
    }

    /// `B.x`
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim, "workload length mismatch");
        let mut out = vec![0.0; self.dim];
        for r in 0..self.dim {
            let row = &self.entries[r * self.dim..(r + 1) * self.dim];
            out[r] = dot(row, x);
        }
        out
    }

    /// `<x, B.y>`
    pub fn quad(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.mul(y))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Checks the three schedule-matrix hypotheses. Positive definiteness is
/// decided by elimination without pivoting: the running product of pivots
/// equals the leading principal minor at each step and every minor must
/// exceed [`MINOR_TOLERANCE`].
pub fn validate_matrix(rows: &[Vec<f64>]) -> MatrixValidity {
    let dim = rows.len();
    let mut entries = Vec::with_capacity(dim * dim);
    for row in rows {
        assert_eq!(row.len(), dim, "matrix must be square");
        entries.extend_from_slice(row);
    }
    validity_of(&entries, dim)
}

fn validity_of(entries: &[f64], dim: usize) -> MatrixValidity {
    let at = |r: usize, c: usize| entries[r * dim + c];

    let mut symmetric = true;
    for r in 0..dim {
        for c in 0..dim {
            if (at(r, c) - at(c, r)).abs() > SYMMETRY_TOLERANCE * at(r, c).abs().max(1.0) {
                symmetric = false;
            }
        }
    }

    let mut offdiag_nonpositive = true;
    for r in 0..dim {
        for c in 0..dim {
            if r != c && at(r, c) > 0.0 {
                offdiag_nonpositive = false;
            }
        }
    }

    let mut work = entries.to_vec();
    let mut positive_definite = true;
    let mut minor = 1.0;
    'elim: for k in 0..dim {
        let pivot = work[k * dim + k];
        minor *= pivot;
        if !(minor > MINOR_TOLERANCE) {
            positive_definite = false;
            break 'elim;
        }
        for i in k + 1..dim {
            let f = work[i * dim + k] / pivot;
            for j in k..dim {
                work[i * dim + j] -= f * work[k * dim + j];
            }
        }
    }

    MatrixValidity {
        symmetric,
        positive_definite,
        offdiag_nonpositive,
    }
}

/// Traffic generator shapes. All kinds target the same long-run load `rho`;
/// bursty kinds are kept honest by a token budget (release never exceeds
/// `rho*t + burst` and is caught up to `rho*t - burst` on a window grid).
#[derive(Debug, Clone)]
pub enum TrafficKind {
    /// Constant fluid inflow at rate `rho`.
    Fluid,
    /// Deterministic jobs of size `sigma[q]` every `sigma[q]/rho[q]` time units.
    Jobs { sigma: Vec<f64> },
    /// Seeded pseudo-random arrivals with budget-enforced long-run rate.
    Stochastic {
        mean_job: Vec<f64>,
        window: f64,
        burst: f64,
    },
    /// Releases accrued work only while a designated environment state is
    /// active (the adversary knows the exogenous environment trace).
    AdversarialEnv {
        /// 0-based environment index targeted by the bursts.
        target_env: usize,
        window: f64,
        burst: f64,
    },
    /// At each window boundary, dumps the accrued budget of the queue that
    /// currently maximizes `(B.X)_q`, observing the workload with a lag.
    AdversarialSchedule {
        window: f64,
        burst: f64,
        info_lag: f64,
    },
}

/// A traffic descriptor: kind plus target long-run load vector.
#[derive(Debug, Clone)]
pub struct TrafficTrace {
    pub kind: TrafficKind,
    pub load: Vec<f64>,
}

/// Environment trace shapes; both honor the long-run proportions `pi`.
#[derive(Debug, Clone)]
pub enum EnvTraceKind {
    /// Deterministic cycle of length `cycle_length`; state `e` occupies a
    /// contiguous slice of length `pi[e] * cycle_length`, in order.
    Periodic { cycle_length: f64 },
    /// Round-robin over states with seeded exponential holding times of mean
    /// `pi[e] * mean_cycle`.
    RandomHolding { mean_cycle: f64 },
}

/// An environment trace descriptor.
#[derive(Debug, Clone)]
pub struct EnvironmentTrace {
    pub kind: EnvTraceKind,
    pub pi: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(v: &[f64]) -> ServiceVector {
        ServiceVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn closure_of_plane_pair_adds_origin() {
        let closed = complete_closure(&[sv(&[1.0, 0.0]), sv(&[0.0, 1.0])], 100).unwrap();
        let rates: Vec<&[f64]> = closed.iter().map(|s| s.rates()).collect();
        assert_eq!(rates, vec![&[1.0, 0.0][..], &[0.0, 1.0], &[0.0, 0.0]]);
    }

    #[test]
    fn closure_of_joint_vector_yields_all_subvectors() {
        let closed = complete_closure(&[sv(&[1.0, 1.0])], 100).unwrap();
        let rates: Vec<&[f64]> = closed.iter().map(|s| s.rates()).collect();
        assert_eq!(
            rates,
            vec![&[1.0, 1.0][..], &[0.0, 1.0], &[1.0, 0.0], &[0.0, 0.0]]
        );
    }

    #[test]
    fn closure_preserves_negative_components() {
        let closed = complete_closure(&[sv(&[1.2, -0.8])], 100).unwrap();
        let rates: Vec<&[f64]> = closed.iter().map(|s| s.rates()).collect();
        assert_eq!(rates, vec![&[1.2, -0.8][..], &[0.0, -0.8]]);
    }

    #[test]
    fn closure_is_idempotent() {
        let once = complete_closure(&[sv(&[2.0, 1.0, 0.5])], 1000).unwrap();
        let twice = complete_closure(&once, 1000).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn closure_respects_cap() {
        // 12 strictly positive components blow past a cap of 100.
        let v = sv(&[1.0; 12]);
        let err = complete_closure(&[v], 100).unwrap_err();
        assert!(matches!(err, ModelError::ClosureCapExceeded { cap: 100, .. }));
    }

    #[test]
    fn identity_matrix_is_cone_valid() {
        let v = validate_matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(v.symmetric && v.positive_definite && v.offdiag_nonpositive);
        assert!(v.is_cone_valid());
    }

    #[test]
    fn positive_offdiag_flips_exactly_one_flag() {
        let v = validate_matrix(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        assert!(v.symmetric);
        assert!(v.positive_definite); // minors 2, 3
        assert!(!v.offdiag_nonpositive);
    }

    #[test]
    fn indefinite_matrix_flips_exactly_one_flag() {
        let v = validate_matrix(&[vec![1.0, -2.0], vec![-2.0, 1.0]]);
        assert!(v.symmetric);
        assert!(!v.positive_definite); // minors 1, -3
        assert!(v.offdiag_nonpositive);
    }

    #[test]
    fn asymmetric_matrix_flips_exactly_one_flag() {
        let v = validate_matrix(&[vec![1.0, 0.0], vec![-0.5, 1.0]]);
        assert!(!v.symmetric);
        assert!(v.positive_definite);
        assert!(v.offdiag_nonpositive);
    }

    #[test]
    fn validate_system_reports_pi_sum() {
        let spec = SystemSpec::new(
            2,
            vec![
                EnvironmentSpec::new(1, vec![sv(&[1.0, 0.0])]),
                EnvironmentSpec::new(2, vec![sv(&[0.0, 1.0])]),
            ],
            vec![0.5, 0.4],
        )
        .unwrap();
        let report = spec.validate();
        assert!(report.violations.iter().any(|v| v.contains("pi sums to 0.9")));
    }

    #[test]
    fn validate_system_reports_empty_service_set() {
        let spec = SystemSpec::new(2, vec![EnvironmentSpec::new(1, vec![])], vec![1.0]).unwrap();
        let report = spec.validate();
        assert!(report
            .violations
            .iter()
            .any(|v| v.contains("empty service set")));
    }

    #[test]
    fn validate_system_reports_dimension_mismatch() {
        let spec = SystemSpec::new(
            2,
            vec![EnvironmentSpec::new(1, vec![sv(&[1.0, 0.0, 0.0])])],
            vec![1.0],
        )
        .unwrap();
        let report = spec.validate();
        assert!(!report.is_clean());
    }

    #[test]
    fn validate_system_warns_without_nonnegative_vector() {
        let spec = SystemSpec::new(
            2,
            vec![EnvironmentSpec::new(1, vec![sv(&[1.0, -0.5])])],
            vec![1.0],
        )
        .unwrap();
        let report = spec.validate();
        assert!(report
            .warnings
            .iter()
            .any(|w| w.contains("componentwise nonnegative")));
    }

    #[test]
    fn negative_zero_is_normalized() {
        let v = sv(&[-0.0, 1.0]);
        assert_eq!(v.rates()[0].to_bits(), 0.0_f64.to_bits());
    }
}
