//! Traffic sources.
//!
//! A source exposes a piecewise-constant arrival-rate vector plus a stream of
//! timed events (instantaneous jumps or rate changes). Every kind targets the
//! same long-run load `rho` and the bursty kinds are token-budgeted: released
//! work never exceeds `rho * t + burst`, and on a window grid it is caught up
//! to at least `rho * t - burst`, so no adversary can starve or flood its way
//! around the nominal load.

use crate::model::{ScheduleMatrix, TrafficKind, TrafficTrace};
use crate::sim::envtrace::EnvCursor;
use crate::model::EnvironmentTrace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Mixed into the run seed; see [`super::envtrace::ENV_SEED_TAG`].
pub(crate) const TRAFFIC_SEED_TAG: u64 = 0x7472_6166_6669_6373;

pub(crate) trait TrafficSource {
    /// Arrival-rate vector currently in force.
    fn rate(&self) -> &[f64];
    /// Absolute time of the next jump or rate change; infinite if none.
    fn next_change(&self) -> f64;
    /// Processes the event at `t == next_change()`. Returns the work added
    /// instantaneously per queue (all zeros for a pure rate change).
    /// `x_observed` is the workload as this source is allowed to see it.
    fn advance(&mut self, t: f64, x_observed: &[f64]) -> Vec<f64>;
    /// Observation lag of the source (0 for oblivious kinds).
    fn observe_lag(&self) -> f64 {
        0.0
    }
}

pub(crate) fn make_traffic(
    trace: &TrafficTrace,
    envtrace: &EnvironmentTrace,
    matrix: &ScheduleMatrix,
    seed: u64,
) -> Box<dyn TrafficSource> {
    let rho = trace.load.clone();
    match &trace.kind {
        TrafficKind::Fluid => Box::new(Fluid { rho }),
        TrafficKind::Jobs { sigma } => Box::new(Jobs::new(rho, sigma.clone())),
        TrafficKind::Stochastic {
            mean_job,
            window,
            burst,
        } => Box::new(Stochastic::new(
            rho,
            mean_job.clone(),
            *window,
            *burst,
            seed ^ TRAFFIC_SEED_TAG,
        )),
        TrafficKind::AdversarialEnv {
            target_env,
            window,
            burst,
        } => Box::new(AdversarialEnv::new(
            rho,
            *target_env,
            *window,
            *burst,
            EnvCursor::new(envtrace, seed),
        )),
        TrafficKind::AdversarialSchedule {
            window,
            burst,
            info_lag,
        } => Box::new(AdversarialSchedule {
            rho,
            window: *window,
            burst: *burst,
            lag: *info_lag,
            matrix: matrix.clone(),
            released: vec![0.0; matrix.dim()],
            lap: 0,
            zeros: vec![0.0; matrix.dim()],
        }),
    }
}

struct Fluid {
    rho: Vec<f64>,
}

impl TrafficSource for Fluid {
    fn rate(&self) -> &[f64] {
        &self.rho
    }
    fn next_change(&self) -> f64 {
        f64::INFINITY
    }
    fn advance(&mut self, _t: f64, _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.rho.len()]
    }
}

/// Deterministic jobs: queue `q` receives size-`sigma[q]` jumps at times
/// `k * sigma[q] / rho[q]`, so release tracks `rho * t` with gap < sigma.
/// Queues with `sigma[q] == 0` degrade to fluid inflow.
struct Jobs {
    rho: Vec<f64>,
    sigma: Vec<f64>,
    base_rate: Vec<f64>,
    next_k: Vec<u64>,
}

impl Jobs {
    fn new(rho: Vec<f64>, sigma: Vec<f64>) -> Self {
        let base_rate = rho
            .iter()
            .zip(&sigma)
            .map(|(&r, &s)| if s == 0.0 { r } else { 0.0 })
            .collect();
        let next_k = vec![1; rho.len()];
        Jobs {
            rho,
            sigma,
            base_rate,
            next_k,
        }
    }

    fn jump_time(&self, q: usize) -> f64 {
        if self.sigma[q] == 0.0 || self.rho[q] == 0.0 {
            f64::INFINITY
        } else {
            self.next_k[q] as f64 * self.sigma[q] / self.rho[q]
        }
    }
}

impl TrafficSource for Jobs {
    fn rate(&self) -> &[f64] {
        &self.base_rate
    }
    fn next_change(&self) -> f64 {
        (0..self.rho.len())
            .map(|q| self.jump_time(q))
            .fold(f64::INFINITY, f64::min)
    }
    fn advance(&mut self, t: f64, _x: &[f64]) -> Vec<f64> {
        let mut delta = vec![0.0; self.rho.len()];
        for q in 0..self.rho.len() {
            if self.jump_time(q) == t {
                delta[q] = self.sigma[q];
                self.next_k[q] += 1;
            }
        }
        delta
    }
}

/// Seeded pseudo-random arrivals: per-queue exponential interarrivals of
/// mean `mean_job[q] / rho[q]`, each delivering `mean_job[q]` work, clipped
/// to the `rho * t + burst` ceiling and topped up to the `rho * t - burst`
/// floor at each window boundary.
struct Stochastic {
    rho: Vec<f64>,
    mean_job: Vec<f64>,
    window: f64,
    burst: f64,
    rng: ChaCha8Rng,
    base_rate: Vec<f64>,
    next_jump: Vec<f64>,
    released: Vec<f64>,
    lap: u64,
}

impl Stochastic {
    fn new(rho: Vec<f64>, mean_job: Vec<f64>, window: f64, burst: f64, seed: u64) -> Self {
        let n = rho.len();
        let rng = ChaCha8Rng::seed_from_u64(seed);
        let base_rate: Vec<f64> = rho
            .iter()
            .zip(&mean_job)
            .map(|(&r, &m)| if m == 0.0 { r } else { 0.0 })
            .collect();
        let mut src = Stochastic {
            rho,
            mean_job,
            window,
            burst,
            rng,
            base_rate,
            next_jump: vec![f64::INFINITY; n],
            released: vec![0.0; n],
            lap: 0,
        };
        for q in 0..n {
            src.next_jump[q] = src.draw_gap(q);
        }
        src
    }

    fn draw_gap(&mut self, q: usize) -> f64 {
        if self.mean_job[q] == 0.0 || self.rho[q] == 0.0 {
            return f64::INFINITY;
        }
        let mean = self.mean_job[q] / self.rho[q];
        let u: f64 = self.rng.gen::<f64>();
        -mean * (1.0 - u).ln()
    }

    fn next_window(&self) -> f64 {
        if self.window > 0.0 {
            (self.lap + 1) as f64 * self.window
        } else {
            f64::INFINITY
        }
    }
}

impl TrafficSource for Stochastic {
    fn rate(&self) -> &[f64] {
        &self.base_rate
    }
    fn next_change(&self) -> f64 {
        self.next_jump
            .iter()
            .copied()
            .fold(self.next_window(), f64::min)
    }
    fn advance(&mut self, t: f64, _x: &[f64]) -> Vec<f64> {
        let n = self.rho.len();
        let mut delta = vec![0.0; n];
        for q in 0..n {
            if self.next_jump[q] == t {
                let ceiling = self.rho[q] * t + self.burst - self.released[q];
                delta[q] += self.mean_job[q].min(ceiling).max(0.0);
                let gap = self.draw_gap(q);
                self.next_jump[q] = t + gap;
            }
        }
        if self.next_window() == t {
            self.lap += 1;
            for q in 0..n {
                if self.mean_job[q] > 0.0 {
                    let floor = self.rho[q] * t - self.burst - self.released[q] - delta[q];
                    if floor > 0.0 {
                        delta[q] += floor;
                    }
                }
            }
        }
        for q in 0..n {
            self.released[q] += delta[q];
        }
        delta
    }
}

/// Withholds work while the target environment is inactive, dumps the whole
/// accrued budget (up to `rho * t + burst`) the moment the target state is
/// entered, and streams at full rate while it lasts. A clone of the engine's
/// environment cursor tells the source the exact switch schedule.
struct AdversarialEnv {
    rho: Vec<f64>,
    target: usize,
    window: f64,
    burst: f64,
    cursor: EnvCursor,
    in_target: bool,
    rate_now: Vec<f64>,
    released: Vec<f64>,
    last_t: f64,
    lap: u64,
}

impl AdversarialEnv {
    fn new(rho: Vec<f64>, target: usize, window: f64, burst: f64, cursor: EnvCursor) -> Self {
        let n = rho.len();
        let in_target = cursor.current() == target;
        let rate_now = if in_target {
            rho.clone()
        } else {
            vec![0.0; n]
        };
        AdversarialEnv {
            rho,
            target,
            window,
            burst,
            cursor,
            in_target,
            rate_now,
            released: vec![0.0; n],
            last_t: 0.0,
            lap: 0,
        }
    }

    fn next_window(&self) -> f64 {
        if self.window > 0.0 {
            (self.lap + 1) as f64 * self.window
        } else {
            f64::INFINITY
        }
    }
}

impl TrafficSource for AdversarialEnv {
    fn rate(&self) -> &[f64] {
        &self.rate_now
    }
    fn next_change(&self) -> f64 {
        self.cursor.next_switch().min(self.next_window())
    }
    fn advance(&mut self, t: f64, _x: &[f64]) -> Vec<f64> {
        let n = self.rho.len();
        for q in 0..n {
            self.released[q] += self.rate_now[q] * (t - self.last_t);
        }
        self.last_t = t;
        let mut delta = vec![0.0; n];
        if self.cursor.next_switch() == t {
            self.cursor.advance();
            let now_in = self.cursor.current() == self.target;
            if now_in && !self.in_target {
                for q in 0..n {
                    let budget = self.rho[q] * t + self.burst - self.released[q];
                    if budget > 0.0 {
                        delta[q] += budget;
                    }
                }
            }
            self.in_target = now_in;
            self.rate_now = if now_in {
                self.rho.clone()
            } else {
                vec![0.0; n]
            };
        }
        if self.next_window() == t {
            self.lap += 1;
            for q in 0..n {
                let floor = self.rho[q] * t - self.burst - self.released[q] - delta[q];
                if floor > 0.0 {
                    delta[q] += floor;
                }
            }
        }
        for q in 0..n {
            self.released[q] += delta[q];
        }
        delta
    }
}

/// At each window boundary, dumps the full budget of the queue that currently
/// maximizes `(B x)_q` — observed with a lag — and keeps every other queue as
/// starved as the floor allows.
struct AdversarialSchedule {
    rho: Vec<f64>,
    window: f64,
    burst: f64,
    lag: f64,
    matrix: ScheduleMatrix,
    released: Vec<f64>,
    lap: u64,
    zeros: Vec<f64>,
}

impl TrafficSource for AdversarialSchedule {
    fn rate(&self) -> &[f64] {
        &self.zeros
    }
    fn next_change(&self) -> f64 {
        (self.lap + 1) as f64 * self.window
    }
    fn advance(&mut self, t: f64, x_observed: &[f64]) -> Vec<f64> {
        self.lap += 1;
        let bx = self.matrix.mul(x_observed);
        let mut target = 0;
        for q in 1..bx.len() {
            if bx[q] > bx[target] {
                target = q;
            }
        }
        let n = self.rho.len();
        let mut delta = vec![0.0; n];
        for q in 0..n {
            let bound = if q == target {
                self.rho[q] * t + self.burst // full budget at the victim
            } else {
                self.rho[q] * t - self.burst // bare floor everywhere else
            };
            if bound > self.released[q] {
                delta[q] = bound - self.released[q];
            }
        }
        for q in 0..n {
            self.released[q] += delta[q];
        }
        delta
    }
    fn observe_lag(&self) -> f64 {
        self.lag
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EnvTraceKind;

    fn drive(
        src: &mut dyn TrafficSource,
        horizon: f64,
        x: &[f64],
    ) -> (Vec<f64>, usize) {
        // Integrates rate and jumps the way the engine does, returning
        // cumulative release per queue and the number of events fired.
        let n = src.rate().len();
        let mut released = vec![0.0; n];
        let mut t = 0.0;
        let mut events = 0;
        loop {
            let tn = src.next_change().min(horizon);
            for q in 0..n {
                released[q] += src.rate()[q] * (tn - t);
            }
            t = tn;
            if t >= horizon && src.next_change() > horizon {
                break;
            }
            let delta = src.advance(t, x);
            for q in 0..n {
                released[q] += delta[q];
            }
            events += 1;
            if events > 2_000_000 {
                panic!("runaway source");
            }
        }
        (released, events)
    }

    fn assert_budget(released: &[f64], rho: &[f64], t: f64, slack_lo: f64, slack_hi: f64) {
        for q in 0..rho.len() {
            let lo = rho[q] * t - slack_lo;
            let hi = rho[q] * t + slack_hi;
            assert!(
                released[q] >= lo - 1e-9 && released[q] <= hi + 1e-9,
                "queue {q}: released {} outside [{lo}, {hi}]",
                released[q]
            );
        }
    }

    #[test]
    fn jobs_release_matches_load() {
        let mut src = Jobs::new(vec![0.5, 0.25], vec![1.0, 0.5]);
        let (released, events) = drive(&mut src, 100.0, &[0.0, 0.0]);
        assert_budget(&released, &[0.5, 0.25], 100.0, 1.0, 0.0);
        // Both queues jump at t = 2k; coincident jumps share one event.
        assert_eq!(events, 50);
    }

    #[test]
    fn jobs_jump_times_are_exact() {
        let src = Jobs::new(vec![0.5], vec![1.0]);
        assert_eq!(src.next_change(), 2.0);
    }

    #[test]
    fn stochastic_respects_token_budget() {
        let rho = vec![0.6, 0.3];
        let mut src = Stochastic::new(rho.clone(), vec![0.5, 0.5], 5.0, 1.0, 99);
        let (released, _) = drive(&mut src, 200.0, &[0.0, 0.0]);
        // Ceiling rho*t + burst; floor rho*t - burst - rho*window at any t.
        assert_budget(&released, &rho, 200.0, 1.0 + 0.6 * 5.0, 1.0);
    }

    #[test]
    fn stochastic_is_seed_deterministic() {
        let mk = |seed| {
            let mut s = Stochastic::new(vec![0.6], vec![0.5], 5.0, 1.0, seed);
            drive(&mut s, 50.0, &[0.0]).0
        };
        assert_eq!(mk(7), mk(7));
        assert_ne!(mk(7), mk(8));
    }

    #[test]
    fn adversarial_env_dumps_on_target_entry() {
        let trace = EnvironmentTrace {
            kind: EnvTraceKind::Periodic { cycle_length: 10.0 },
            pi: vec![0.5, 0.5],
        };
        let cursor = EnvCursor::new(&trace, 1);
        let rho = vec![0.4];
        let mut src = AdversarialEnv::new(rho.clone(), 1, 20.0, 0.5, cursor);
        // Nothing flows during env 0 (t < 5); at t = 5 the backlog plus the
        // burst allowance lands at once.
        assert_eq!(src.rate(), &[0.0]);
        assert_eq!(src.next_change(), 5.0);
        let delta = src.advance(5.0, &[0.0]);
        assert!((delta[0] - (0.4 * 5.0 + 0.5)).abs() < 1e-12);
        assert_eq!(src.rate(), &[0.4]);
        let (released, _) = drive(&mut src, 95.0, &[0.0]);
        let total = released[0] + delta[0];
        assert_budget(&[total], &rho, 100.0, 0.5 + 0.4 * 20.0, 0.5);
    }

    #[test]
    fn adversarial_schedule_targets_lagged_argmax() {
        let matrix = ScheduleMatrix::identity(2);
        let mut src = AdversarialSchedule {
            rho: vec![0.5, 0.5],
            window: 10.0,
            burst: 2.0,
            lag: 1.0,
            matrix,
            released: vec![0.0; 2],
            lap: 0,
            zeros: vec![0.0; 2],
        };
        assert_eq!(src.observe_lag(), 1.0);
        assert_eq!(src.next_change(), 10.0);
        // Queue 2 looks longest: it gets pace + burst, queue 1 the floor.
        let delta = src.advance(10.0, &[1.0, 3.0]);
        assert!((delta[1] - 7.0).abs() < 1e-12);
        assert!((delta[0] - 3.0).abs() < 1e-12);
        // Next boundary, queue 1 looks longest and catches all the way up;
        // queue 2 is still dragged up to the new floor 0.5*20 - 2 = 8.
        let delta = src.advance(20.0, &[5.0, 1.0]);
        assert!((delta[0] - (0.5 * 20.0 + 2.0 - 3.0)).abs() < 1e-12);
        assert!((delta[1] - 1.0).abs() < 1e-12);
    }
}
