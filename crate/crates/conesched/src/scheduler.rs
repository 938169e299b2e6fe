//! Cone-schedule selection.
//!
//! Given workload `x`, schedule matrix `B`, and a service set, the cone
//! schedule picks the vector maximizing the score `<S, B x>`. The positive
//! quadrant is partitioned into polyhedral cones, one per vector, and the
//! chosen vector switches exactly when the workload crosses a cone boundary
//! — hence the helpers here for locating those crossings along a linear
//! drift.
//!
//! Ties are resolved deterministically: every vector whose score falls
//! within a relative band of the maximum is reported as a maximizer, and the
//! lexicographically smallest of them is chosen. Queues that are empty get
//! their positive service components zeroed (the completed set always
//! contains that sub-vector), so no service capacity is pointed at work that
//! does not exist.

use crate::model::{dot, lex_less, ScheduleMatrix, ServiceVector};
use thiserror::Error;

/// Relative half-width of the score band treated as a tie.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SchedulerError {
    #[error("workload has a negative component: x[{index}] = {value}")]
    NegativeWorkload { index: usize, value: f64 },
    #[error("workload has a non-finite component at index {index}")]
    NonFiniteWorkload { index: usize },
    #[error("{what} has length {got}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("service set is empty")]
    EmptyServiceSet,
}

/// Knobs for [`select_with`]. `noise` is an absolute half-width added to the
/// tie band: with score perturbations in `[-noise, +noise]`, any vector
/// within `2 * noise` of the best could have been the argmax, so widening
/// the band by that much makes the maximizer set cover every realizable
/// outcome deterministically.
#[derive(Debug, Clone, Copy)]
pub struct SelectOptions {
    pub tie_tolerance: f64,
    pub noise: f64,
}

impl Default for SelectOptions {
    fn default() -> Self {
        SelectOptions {
            tie_tolerance: TIE_TOLERANCE,
            noise: 0.0,
        }
    }
}

impl SelectOptions {
    /// Score band half-width at a given best score.
    pub(crate) fn band(&self, best: f64) -> f64 {
        self.tie_tolerance * best.abs().max(1.0) + 2.0 * self.noise
    }
}

/// Outcome of one selection.
#[derive(Debug, Clone)]
pub struct SelectionResult {
    /// The service vector to apply: lexicographically smallest maximizer,
    /// with components on empty queues zeroed out.
    pub chosen: ServiceVector,
    /// Indices (into the service slice, ascending) of every vector scoring
    /// within the tie band of the maximum.
    pub maximizers: Vec<usize>,
    /// The maximal score, before the empty-queue adjustment.
    pub value: f64,
}

fn check_workload(x: &[f64], dim: usize) -> Result<(), SchedulerError> {
    if x.len() != dim {
        return Err(SchedulerError::DimensionMismatch {
            what: "workload",
            got: x.len(),
            expected: dim,
        });
    }
    for (index, &value) in x.iter().enumerate() {
        if !value.is_finite() {
            return Err(SchedulerError::NonFiniteWorkload { index });
        }
        if value < 0.0 {
            return Err(SchedulerError::NegativeWorkload { index, value });
        }
    }
    Ok(())
}

fn check_services(services: &[ServiceVector], dim: usize) -> Result<(), SchedulerError> {
    if services.is_empty() {
        return Err(SchedulerError::EmptyServiceSet);
    }
    for s in services {
        if s.len() != dim {
            return Err(SchedulerError::DimensionMismatch {
                what: "service vector",
                got: s.len(),
                expected: dim,
            });
        }
    }
    Ok(())
}

/// [`select_with`] under default options.
pub fn select(
    x: &[f64],
    services: &[ServiceVector],
    matrix: &ScheduleMatrix,
) -> Result<SelectionResult, SchedulerError> {
    select_with(x, services, matrix, &SelectOptions::default())
}

/// Scores every service vector against `B x`, collects the tie band, breaks
/// the tie to the lexicographically smallest vector, and zeroes components
/// aimed at empty queues.
pub fn select_with(
    x: &[f64],
    services: &[ServiceVector],
    matrix: &ScheduleMatrix,
    opts: &SelectOptions,
) -> Result<SelectionResult, SchedulerError> {
    check_workload(x, matrix.dim())?;
    check_services(services, matrix.dim())?;
    let bx = matrix.mul(x);
    let scores: Vec<f64> = services.iter().map(|s| dot(s.rates(), &bx)).collect();
    let value = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let band = opts.band(value);
    let maximizers: Vec<usize> = (0..services.len())
        .filter(|&i| value - scores[i] <= band)
        .collect();
    let mut pick = maximizers[0];
    for &i in &maximizers[1..] {
        if lex_less(services[i].rates(), services[pick].rates()) {
            pick = i;
        }
    }
    let mut rates = services[pick].rates().to_vec();
    for (q, r) in rates.iter_mut().enumerate() {
        if x[q] == 0.0 && *r > 0.0 {
            *r = 0.0;
        }
    }
    let chosen = ServiceVector::new(rates).expect("zeroing preserves finiteness");
    Ok(SelectionResult {
        chosen,
        maximizers,
        value,
    })
}

/// Checks whether one service vector (by value, not index) maximizes the
/// score in **every** environment at workload `x`; returns the
/// lexicographically smallest such vector. When this holds for all `x`, the
/// schedule is insensitive to which environment is active, a useful sanity
/// diagnostic for hand-built instances.
pub fn shares_maximizer(
    x: &[f64],
    env_services: &[Vec<ServiceVector>],
    matrix: &ScheduleMatrix,
    opts: &SelectOptions,
) -> Result<Option<ServiceVector>, SchedulerError> {
    use std::collections::HashSet;
    let mut shared: Option<Vec<ServiceVector>> = None;
    for services in env_services {
        let result = select_with(x, services, matrix, opts)?;
        let keys: HashSet<Vec<u64>> = result
            .maximizers
            .iter()
            .map(|&i| services[i].bit_key())
            .collect();
        shared = Some(match shared {
            None => result
                .maximizers
                .iter()
                .map(|&i| services[i].clone())
                .collect(),
            Some(prev) => prev
                .into_iter()
                .filter(|s| keys.contains(&s.bit_key()))
                .collect(),
        });
        if shared.as_ref().unwrap().is_empty() {
            return Ok(None);
        }
    }
    let mut shared = shared.unwrap_or_default();
    shared.sort_by(|a, b| {
        if lex_less(a.rates(), b.rates()) {
            std::cmp::Ordering::Less
        } else if lex_less(b.rates(), a.rates()) {
            std::cmp::Ordering::Greater
        } else {
            std::cmp::Ordering::Equal
        }
    });
    Ok(shared.into_iter().next())
}

/// Minimum separation of score *rates* for a crossing candidate to count;
/// slower approaches are numerically indistinguishable from parallel motion.
pub(crate) const CROSSING_RATE_FLOOR: f64 = 1e-10;

/// First time in `(0, t_max]` at which a currently non-maximal vector's
/// score catches up with the current maximum, assuming the workload moves
/// linearly as `x + t * drift`. Returns `None` when no vector catches up in
/// the window. Scores are linear in `t`, so each candidate yields at most
/// one crossing.
pub fn next_boundary_crossing(
    x: &[f64],
    drift: &[f64],
    services: &[ServiceVector],
    matrix: &ScheduleMatrix,
    t_max: f64,
) -> Result<Option<f64>, SchedulerError> {
    check_workload(x, matrix.dim())?;
    check_services(services, matrix.dim())?;
    if drift.len() != matrix.dim() {
        return Err(SchedulerError::DimensionMismatch {
            what: "drift",
            got: drift.len(),
            expected: matrix.dim(),
        });
    }
    if !(t_max > 0.0) {
        return Ok(None);
    }
    let bx = matrix.mul(x);
    let bdrift = matrix.mul(drift);
    let scores: Vec<f64> = services.iter().map(|s| dot(s.rates(), &bx)).collect();
    let rates: Vec<f64> = services.iter().map(|s| dot(s.rates(), &bdrift)).collect();
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let best_idx = scores.iter().position(|&v| v == best).unwrap();
    let mut first: Option<f64> = None;
    for i in 0..services.len() {
        if let Some(t) = crossing_time(
            scores[i] - best,
            rates[i] - rates[best_idx],
            rates[best_idx],
        ) {
            if t <= t_max && first.map_or(true, |f| t < f) {
                first = Some(t);
            }
        }
    }
    Ok(first)
}

/// Crossing time for one candidate given its score gap `g0 = score - best`
/// (strictly negative to count), the gap's rate of change `gdot`, and the
/// reference score rate used to scale the parallel-motion floor.
pub(crate) fn crossing_time(g0: f64, gdot: f64, ref_rate: f64) -> Option<f64> {
    if g0 >= 0.0 {
        return None; // already tied or ahead; not an upcoming crossing
    }
    let floor = CROSSING_RATE_FLOOR * (1.0 + ref_rate.abs());
    if gdot <= floor {
        return None;
    }
    Some(-g0 / gdot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::complete_closure;

    fn sv(v: &[f64]) -> ServiceVector {
        ServiceVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn picks_unique_maximizer() {
        let services = complete_closure(&[sv(&[1.0, 0.0]), sv(&[0.0, 1.0]), sv(&[1.0, 1.0])], 100)
            .unwrap();
        let m = ScheduleMatrix::identity(2);
        let r = select(&[2.0, 1.0], &services, &m).unwrap();
        assert_eq!(r.chosen.rates(), &[1.0, 1.0]);
        assert_eq!(r.maximizers.len(), 1);
        assert!((r.value - 3.0).abs() < 1e-12);
    }

    #[test]
    fn tie_breaks_to_lex_smallest() {
        let services = vec![sv(&[1.0, 0.0]), sv(&[0.0, 1.0])];
        let m = ScheduleMatrix::identity(2);
        let r = select(&[1.0, 1.0], &services, &m).unwrap();
        assert_eq!(r.chosen.rates(), &[0.0, 1.0]);
        assert_eq!(r.maximizers, vec![0, 1]);
        assert!((r.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_queue_gets_zeroed() {
        let services = complete_closure(&[sv(&[1.0, 1.0])], 100).unwrap();
        let m = ScheduleMatrix::identity(2);
        let r = select(&[2.0, 0.0], &services, &m).unwrap();
        // (1,1) and (1,0) tie at score 2; lex order picks (1,0) outright.
        assert_eq!(r.chosen.rates(), &[1.0, 0.0]);
        assert!((r.value - 2.0).abs() < 1e-12);

        // Force the zeroing path with a set lacking the tie.
        let services = vec![sv(&[1.0, 1.0])];
        let r = select(&[2.0, 0.0], &services, &m).unwrap();
        assert_eq!(r.chosen.rates(), &[1.0, 0.0]);
    }

    #[test]
    fn coupling_matrix_changes_the_pick() {
        let services = vec![sv(&[1.0, 0.0]), sv(&[0.0, 1.0])];
        let m = ScheduleMatrix::new(vec![vec![2.0, -1.0], vec![-1.0, 2.0]]).unwrap();
        // B x = (2*1 - 3, -1 + 6) = (-1, 5): queue 2 wins despite x1 > 0.
        let r = select(&[1.0, 3.0], &services, &m).unwrap();
        assert_eq!(r.chosen.rates(), &[0.0, 1.0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let services = vec![sv(&[1.0, 0.0])];
        let m = ScheduleMatrix::identity(2);
        assert!(matches!(
            select(&[-1.0, 0.0], &services, &m),
            Err(SchedulerError::NegativeWorkload { .. })
        ));
        assert!(matches!(
            select(&[1.0], &services, &m),
            Err(SchedulerError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            select(&[1.0, 1.0], &[], &m),
            Err(SchedulerError::EmptyServiceSet)
        ));
        assert!(matches!(
            select(&[f64::NAN, 0.0], &services, &m),
            Err(SchedulerError::NonFiniteWorkload { .. })
        ));
    }

    #[test]
    fn noise_widens_the_maximizer_band() {
        let services = vec![sv(&[1.0, 0.0]), sv(&[0.0, 1.0])];
        let m = ScheduleMatrix::identity(2);
        let x = [1.0, 1.0 - 1e-4]; // scores 1.0 and 0.9999
        let strict = select(&x, &services, &m).unwrap();
        assert_eq!(strict.maximizers, vec![0]);
        let noisy = select_with(
            &x,
            &services,
            &m,
            &SelectOptions {
                noise: 1e-3,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(noisy.maximizers, vec![0, 1]);
        assert_eq!(noisy.chosen.rates(), &[0.0, 1.0]);
    }

    #[test]
    fn crossing_fixture() {
        let services = vec![sv(&[1.0, 0.0]), sv(&[0.0, 1.0])];
        let m = ScheduleMatrix::identity(2);
        let t = next_boundary_crossing(&[2.0, 1.0], &[-1.0, 0.5], &services, &m, 10.0)
            .unwrap()
            .unwrap();
        assert!((t - 2.0 / 3.0).abs() < 1e-12, "t = {t}");
    }

    #[test]
    fn crossing_respects_window_and_direction() {
        let services = vec![sv(&[1.0, 0.0]), sv(&[0.0, 1.0])];
        let m = ScheduleMatrix::identity(2);
        // Crossing exists at t = 2/3 but outside a short window.
        assert!(
            next_boundary_crossing(&[2.0, 1.0], &[-1.0, 0.5], &services, &m, 0.5)
                .unwrap()
                .is_none()
        );
        // Diverging scores never cross.
        assert!(
            next_boundary_crossing(&[2.0, 1.0], &[1.0, -0.5], &services, &m, 10.0)
                .unwrap()
                .is_none()
        );
        // Parallel motion is ignored even with a tiny positive gap rate.
        assert!(crossing_time(-1.0, 1e-12, 1.0).is_none());
    }

    #[test]
    fn shared_maximizer_intersection() {
        let m = ScheduleMatrix::identity(2);
        let envs = vec![
            vec![sv(&[1.0, 0.0]), sv(&[0.0, 1.0]), sv(&[1.0, 1.0])],
            vec![sv(&[1.0, 1.0]), sv(&[2.0, 0.0])],
        ];
        // At (1,2): env 1 max is (1,1) with score 3; env 2 scores 3 vs 2.
        let shared = shares_maximizer(&[1.0, 2.0], &envs, &m, &Default::default()).unwrap();
        assert_eq!(shared.unwrap().rates(), &[1.0, 1.0]);
        // At (3,0.5): env 2 max is (2,0) (6 vs 3.5), absent from env 1.
        let shared = shares_maximizer(&[3.0, 0.5], &envs, &m, &Default::default()).unwrap();
        assert!(shared.is_none());
    }

    #[test]
    fn scale_invariance_when_gap_is_clear() {
        let services = complete_closure(&[sv(&[1.0, 0.0]), sv(&[0.0, 1.0]), sv(&[1.0, 1.0])], 100)
            .unwrap();
        let m = ScheduleMatrix::new(vec![vec![2.0, -1.0], vec![-1.0, 2.0]]).unwrap();
        let x = [0.7, 0.31];
        let base = select(&x, &services, &m).unwrap();
        for alpha in [0.5, 3.0, 100.0] {
            let scaled: Vec<f64> = x.iter().map(|v| v * alpha).collect();
            let r = select(&scaled, &services, &m).unwrap();
            assert_eq!(r.chosen.rates(), base.chosen.rates(), "alpha = {alpha}");
        }
    }
}
