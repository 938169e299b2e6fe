//! The event-driven engine.
//!
//! Each loop iteration resolves the dynamics in force at the current state —
//! a *mode* — then advances to the earliest of: environment switch, traffic
//! event, a queue draining to empty (closed-form root), a score crossing
//! that changes the maximizer set, the horizon, or (under information lag) a
//! breakpoint of the lagged view.
//!
//! A mode is a convex combination of tied service vectors whose weights keep
//! their scores tied, together with an *axis pinning* set: queues sitting at
//! zero whose available service exceeds their arrivals are held at zero with
//! effective service equal to the arrival rate. This is the limiting
//! dynamics of ever-faster switching between the tied vectors (and between a
//! vector and its zeroed variant at an empty queue), so the piecewise-linear
//! trajectory it produces is the exact limit of the literal schedule. A mode
//! is accepted only if its weights are a true convex combination, pinning is
//! self-consistent, and no tied-but-unserved vector's score would overtake
//! the served ones; otherwise the engine falls back to literal selection
//! advanced by a forced micro-step.

use super::envtrace::EnvCursor;
use super::traffic::{make_traffic, TrafficSource};
use super::{EventCounts, SimError, SimOptions, Trajectory};
use crate::model::{dot, lex_less, EnvironmentTrace, ScheduleMatrix, ServiceVector, SystemSpec, TrafficTrace};
use crate::scheduler::{crossing_time, SelectOptions};
use std::collections::HashSet;

/// Events closer together than this count toward a chattering burst.
const BURST_WINDOW: f64 = 1e-12;
/// Consecutive burst events tolerated before the guard trips.
const BURST_LIMIT: u32 = 64;
/// Forced time advance used by the micro-stepping guard.
const GUARD_STEP: f64 = 1e-9;
/// Candidate support subsets examined per mode resolution.
const SUBSET_BUDGET: usize = 5_000;
/// Relative tolerance on score-rate comparisons.
const RATE_TOLERANCE: f64 = 1e-9;
/// Weights this far below zero disqualify a support subset.
const WEIGHT_TOLERANCE: f64 = 1e-9;

/// Resolved dynamics for one segment.
struct Mode {
    /// Indices into the environment's service list, sorted so the
    /// lexicographically smallest vector comes first.
    support: Vec<usize>,
    /// Effective service rate per queue (arrival rate on pinned queues).
    eff: Vec<f64>,
    /// `arrivals - eff`, exactly zero on pinned queues.
    drift: Vec<f64>,
    /// Reported service vector: the lex-smallest support member, zeroed on
    /// empty queues. Always a member of the completed service set.
    selected: ServiceVector,
    /// Score of every service vector at the selection state.
    scores: Vec<f64>,
    /// Score rate of every service vector under `drift`.
    rates: Vec<f64>,
    /// Common score rate of the support.
    support_rate: f64,
    /// Full tie band frozen at segment start (numerical tolerance plus the
    /// adversarial noise width).
    band: f64,
    /// Numerical part of the band alone: scores this close count as exactly
    /// tied for veto and crossing purposes.
    band_num: f64,
    sliding: bool,
}

/// Where the lagged observation point sits and how it moves.
struct LagSeg {
    ydrift: Vec<f64>,
    /// Absolute time (in observation coordinates) where its segment ends.
    seg_end: f64,
}

/// Breakpoints of the physical trajectory, kept while any observer needs a
/// lagged view. Jumps appear as two entries with equal times. Consecutive
/// segments that share a drift are coalesced: a breakpoint where the
/// velocity does not change is invisible to every lagged observer, and
/// keeping it would let each replayed breakpoint spawn a fresh one `lag`
/// later, forever.
struct History {
    times: Vec<f64>,
    xs: Vec<f64>, // row-major
    queues: usize,
    head: usize,
    /// Drift of the segment ending at the last breakpoint, when it is known
    /// to be a pure linear continuation (no jump or snap at its start).
    last_drift: Option<Vec<f64>>,
}

impl History {
    fn new(queues: usize, t: f64, x: &[f64]) -> Self {
        History {
            times: vec![t],
            xs: x.to_vec(),
            queues,
            head: 0,
            last_drift: None,
        }
    }

    /// Records a breakpoint that may carry a discontinuity (jump or snap).
    fn push(&mut self, t: f64, x: &[f64]) {
        self.times.push(t);
        self.xs.extend_from_slice(x);
        self.last_drift = None;
    }

    /// Records the end of a linear segment with the given drift. If the
    /// previous segment had the identical drift the last breakpoint simply
    /// advances, so uneventful re-resolutions leave no mark.
    fn push_linear(&mut self, t: f64, x: &[f64], drift: &[f64]) {
        if self.len() >= 2 && self.last_drift.as_deref() == Some(drift) {
            let last = self.times.len() - 1;
            self.times[last] = t;
            self.xs[last * self.queues..].copy_from_slice(x);
        } else {
            self.times.push(t);
            self.xs.extend_from_slice(x);
            self.last_drift = Some(drift.to_vec());
        }
    }

    fn len(&self) -> usize {
        self.times.len() - self.head
    }

    fn time(&self, i: usize) -> f64 {
        self.times[self.head + i]
    }

    fn x(&self, i: usize) -> &[f64] {
        let r = self.head + i;
        &self.xs[r * self.queues..(r + 1) * self.queues]
    }

    /// Drops segments that end at or before `keep_after`, retaining the one
    /// containing it.
    fn prune(&mut self, keep_after: f64) {
        while self.len() >= 2 && self.time(1) <= keep_after {
            self.head += 1;
        }
        if self.head > 4096 {
            self.times.drain(..self.head);
            self.xs.drain(..self.head * self.queues);
            self.head = 0;
        }
    }

    /// State, drift, and segment end at observation time `tau`. Before the
    /// first breakpoint the view is frozen at the initial state. Equal-time
    /// breakpoint pairs make the view right-continuous across jumps.
    fn view(&self, tau: f64) -> (Vec<f64>, Vec<f64>, f64) {
        let n = self.len();
        if tau < self.time(0) || n == 1 {
            return (self.x(0).to_vec(), vec![0.0; self.queues], self.time(0));
        }
        // First index with time > tau.
        let mut lo = 0;
        let mut hi = n;
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.time(mid) <= tau {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        if lo >= n {
            return (
                self.x(n - 1).to_vec(),
                vec![0.0; self.queues],
                f64::INFINITY,
            );
        }
        let i = lo - 1;
        let (t0, t1) = (self.time(i), self.time(lo));
        let (x0, x1) = (self.x(i), self.x(lo));
        let inv = 1.0 / (t1 - t0);
        let mut y = Vec::with_capacity(self.queues);
        let mut d = Vec::with_capacity(self.queues);
        for q in 0..self.queues {
            let slope = (x1[q] - x0[q]) * inv;
            d.push(slope);
            y.push((x0[q] + slope * (tau - t0)).max(0.0));
        }
        (y, d, t1)
    }
}

pub(super) struct Engine<'a> {
    spec: &'a SystemSpec,
    matrix: &'a ScheduleMatrix,
    opts: &'a SimOptions,
    horizon: f64,
    stride: f64,
    next_mark: f64,
    select: SelectOptions,
    t: f64,
    x: Vec<f64>,
    cursor: EnvCursor,
    source: Box<dyn TrafficSource>,
    max_lag: f64,
    history: History,
    counts: EventCounts,
    guards: u64,
    sliding_time: f64,
    occupancy: Vec<f64>,
    cum_a: Vec<f64>,
    cum_s: Vec<f64>,
    used_keys: HashSet<Vec<u64>>,
    used: Vec<ServiceVector>,
    s_times: Vec<f64>,
    s_xs: Vec<f64>,
    s_envs: Vec<usize>,
    s_services: Vec<f64>,
    s_cum_a: Vec<f64>,
    s_cum_s: Vec<f64>,
    burst: u32,
    last_event_t: f64,
    force_guard: bool,
    load: Vec<f64>,
    initial_x: Vec<f64>,
}

impl<'a> Engine<'a> {
    pub fn new(
        spec: &'a SystemSpec,
        matrix: &'a ScheduleMatrix,
        traffic: &TrafficTrace,
        envtrace: &EnvironmentTrace,
        horizon: f64,
        seed: u64,
        opts: &'a SimOptions,
    ) -> Self {
        let q = spec.queues();
        let x0 = opts
            .initial_workload
            .clone()
            .unwrap_or_else(|| vec![0.0; q]);
        let source = make_traffic(traffic, envtrace, matrix, seed);
        let max_lag = opts.info_lag.max(source.observe_lag());
        let stride = opts.sample_stride.unwrap_or(horizon / 1024.0);
        Engine {
            spec,
            matrix,
            opts,
            horizon,
            stride,
            next_mark: stride,
            select: SelectOptions {
                noise: opts.selection_noise,
                ..SelectOptions::default()
            },
            t: 0.0,
            x: x0.clone(),
            cursor: EnvCursor::new(envtrace, seed),
            source,
            max_lag,
            history: History::new(q, 0.0, &x0),
            counts: EventCounts::default(),
            guards: 0,
            sliding_time: 0.0,
            occupancy: vec![0.0; spec.environments().len()],
            cum_a: vec![0.0; q],
            cum_s: vec![0.0; q],
            used_keys: HashSet::new(),
            used: Vec::new(),
            s_times: Vec::new(),
            s_xs: Vec::new(),
            s_envs: Vec::new(),
            s_services: Vec::new(),
            s_cum_a: Vec::new(),
            s_cum_s: Vec::new(),
            burst: 0,
            last_event_t: f64::NEG_INFINITY,
            force_guard: false,
            load: traffic.load.clone(),
            initial_x: x0,
        }
    }

    fn q(&self) -> usize {
        self.spec.queues()
    }

    fn services(&self, env: usize) -> &'a [ServiceVector] {
        self.spec.env(env).services()
    }

    pub fn run(mut self) -> Result<Trajectory, SimError> {
        let mut iterations: u64 = 0;
        let mut pending_sample = true;
        loop {
            iterations += 1;
            if iterations > self.opts.event_cap {
                return Err(SimError::EventCapExceeded {
                    cap: self.opts.event_cap,
                    time: self.t,
                });
            }
            let env = self.cursor.current();
            let services = self.services(env);
            let a: Vec<f64> = self.source.rate().to_vec();

            let resolved = if self.force_guard {
                self.force_guard = false;
                None
            } else {
                self.resolve(env, &a)
            };
            let (mode, lag_seg, guarded) = match resolved {
                Some((m, l)) => (m, l, false),
                None => {
                    self.guards += 1;
                    (self.guard_mode(env, &a), None, true)
                }
            };
            self.note_used(services, &mode);

            if pending_sample {
                self.record_sample(self.t, env, &mode);
                pending_sample = false;
            }

            // Candidate event times for this segment.
            let t_env = self.cursor.next_switch();
            let t_traffic = self.source.next_change();
            let mut t_empty = f64::INFINITY;
            let mut empty_roots = vec![f64::INFINITY; self.q()];
            for q in 0..self.q() {
                if self.x[q] > 0.0 && mode.drift[q] < 0.0 {
                    let root = self.t + self.x[q] / (-mode.drift[q]);
                    empty_roots[q] = root;
                    t_empty = t_empty.min(root);
                }
            }
            let mut t_cross = if guarded {
                f64::INFINITY
            } else {
                self.crossing_candidate(&mode, lag_seg.as_ref(), services)
            };
            // A score tie caused by a queue draining lands at the same ideal
            // instant as the empty event; rounding can place it a few ulps
            // earlier, which would re-resolve forever on a shrinking sliver.
            // Let the empty event (which snaps exactly) subsume it.
            if t_cross < t_empty && t_empty - t_cross <= 1e-12 * (1.0 + t_empty.abs()) {
                t_cross = f64::INFINITY;
            }
            let t_hist = lag_seg
                .as_ref()
                .map_or(f64::INFINITY, |l| l.seg_end + self.opts.info_lag);

            let mut t_next = self
                .horizon
                .min(t_env)
                .min(t_traffic)
                .min(t_empty)
                .min(t_cross)
                .min(t_hist);
            if guarded {
                t_next = t_next.min(self.t + GUARD_STEP);
            }
            if t_next < self.t {
                t_next = self.t;
            }

            // Interior stride samples over (t, t_next].
            while self.next_mark <= t_next {
                let mark = self.next_mark;
                if mark > self.t {
                    self.record_interp(mark, env, &mode, &a);
                }
                self.next_mark += self.stride;
            }

            // Advance the linear segment.
            let dt = t_next - self.t;
            for q in 0..self.q() {
                self.cum_a[q] += a[q] * dt;
                self.cum_s[q] += mode.eff[q] * dt;
                self.x[q] += mode.drift[q] * dt;
            }
            if mode.sliding {
                self.sliding_time += dt;
            }
            self.occupancy[env] += dt;
            // Snap queues whose drain root is this instant; sweep any
            // floating-point undershoot into the service total so the flow
            // balance stays exact.
            let mut fired_empty = false;
            let mut snapped = false;
            for q in 0..self.q() {
                if empty_roots[q] == t_next {
                    fired_empty = true;
                    snapped = true;
                    self.cum_s[q] += self.x[q];
                    self.x[q] = 0.0;
                }
                if self.x[q] < 0.0 {
                    snapped = true;
                    self.cum_s[q] += self.x[q];
                    self.x[q] = 0.0;
                }
            }
            self.t = t_next;
            if self.max_lag > 0.0 {
                if snapped {
                    self.history.push(t_next, &self.x.clone());
                } else {
                    self.history.push_linear(t_next, &self.x.clone(), &mode.drift);
                }
            }

            // Process whatever fired, in kind-priority order; the horizon is
            // processed last so a coinciding jump still lands inside the run.
            let fired_horizon = t_next >= self.horizon;
            if t_env == t_next {
                self.cursor.advance();
                self.counts.env_switch += 1;
                if self.opts.record_switch_samples {
                    pending_sample = true;
                }
            }
            if t_traffic == t_next {
                let x_obs = if self.source.observe_lag() > 0.0 {
                    self.history.view(t_next - self.source.observe_lag()).0
                } else {
                    self.x.clone()
                };
                let delta = self.source.advance(t_next, &x_obs);
                if delta.iter().any(|&d| d != 0.0) {
                    self.counts.job_jump += 1;
                    self.record_sample(t_next, env, &mode); // pre-jump state
                    for q in 0..self.q() {
                        self.x[q] += delta[q];
                        self.cum_a[q] += delta[q];
                    }
                    if self.max_lag > 0.0 {
                        self.history.push(t_next, &self.x.clone());
                    }
                    pending_sample = true;
                } else if self.source.rate() != a.as_slice() {
                    self.counts.rate_change += 1;
                    pending_sample = true;
                }
            }
            if fired_empty {
                self.counts.queue_empty += 1;
                pending_sample = true;
            }
            if t_cross == t_next || t_hist == t_next {
                self.counts.cone_crossing += 1;
                pending_sample = true;
            }
            if fired_horizon {
                self.counts.horizon += 1;
                self.record_sample(self.t, env, &mode);
                break;
            }

            if self.max_lag > 0.0 {
                self.history.prune(self.t - self.max_lag);
            }
            if self.t - self.last_event_t < BURST_WINDOW {
                self.burst += 1;
                if self.burst > BURST_LIMIT {
                    self.force_guard = true;
                    self.burst = 0;
                }
            } else {
                self.burst = 0;
            }
            self.last_event_t = self.t;

            if self.s_times.len() > super::SAMPLE_CAP {
                return Err(SimError::SampleBudgetExceeded);
            }
        }
        Ok(self.finish())
    }

    // ----- mode resolution -------------------------------------------------

    fn resolve(&self, env: usize, a: &[f64]) -> Option<(Mode, Option<LagSeg>)> {
        let services = self.services(env);
        if self.opts.info_lag > 0.0 {
            let (y, ydrift, seg_end) = self.history.view(self.t - self.opts.info_lag);
            let mode = self.lag_mode(&y, services, a);
            mode.map(|m| (m, Some(LagSeg { ydrift, seg_end })))
        } else {
            self.full_mode(services, a).map(|m| (m, None))
        }
    }

    /// Numerical tie tolerance for a score vector: relative both to the
    /// scores themselves and to the magnitude of the terms that formed them
    /// (so that heavy cancellation at large workloads is still covered),
    /// but vanishing near the origin where tiny scores are exact.
    ///
    /// A time-resolution term is added on top: score gaps so small that
    /// closing them takes less than a few ulps of the current simulation
    /// time are unreachable — the crossing instant would round back onto
    /// `t` and the event loop would spin without advancing — so they must
    /// be treated as ties. The term bounds `gap-closing-rate * ulp(t)`
    /// with a conservative product of the matrix, service, and arrival
    /// magnitudes.
    fn numeric_band(&self, scores: &[f64], bx: &[f64], services: &[ServiceVector], a: &[f64]) -> f64 {
        let mut m: f64 = 0.0;
        for &s in scores {
            m = m.max(s.abs());
        }
        let bx_inf = bx.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        let s_inf = services
            .iter()
            .flat_map(|s| s.rates())
            .fold(0.0_f64, |acc, v| acc.max(v.abs()));
        m = m.max(bx_inf * s_inf);
        let q = self.q() as f64;
        let b_inf = (0..self.q())
            .flat_map(|i| (0..self.q()).map(move |j| (i, j)))
            .fold(0.0_f64, |acc, (i, j)| acc.max(self.matrix.entry(i, j).abs()));
        let a_inf = a.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        let rate_scale = q * b_inf * s_inf * (a_inf + s_inf);
        let time_band = 4.0 * q * f64::EPSILON * (1.0 + self.t.abs()) * rate_scale;
        crate::scheduler::TIE_TOLERANCE * m + time_band
    }

    /// Sliding-mode search at the physical state: try support subsets of the
    /// tie band, smallest (and lexicographically earliest) first, and accept
    /// the first self-consistent one.
    fn full_mode(&self, services: &[ServiceVector], a: &[f64]) -> Option<Mode> {
        let bx = self.matrix.mul(&self.x);
        let scores: Vec<f64> = services.iter().map(|s| dot(s.rates(), &bx)).collect();
        let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let band_num = self.numeric_band(&scores, &bx, services, a);
        let band = band_num + 2.0 * self.select.noise;
        let mut active: Vec<usize> = (0..services.len())
            .filter(|&i| best - scores[i] <= band)
            .collect();
        active.sort_by(|&i, &j| {
            if lex_less(services[i].rates(), services[j].rates()) {
                std::cmp::Ordering::Less
            } else {
                std::cmp::Ordering::Greater
            }
        });
        let max_size = active.len().min(self.q() + 1);
        let mut budget = SUBSET_BUDGET;
        for size in 1..=max_size {
            let mut found = None;
            combinations(active.len(), size, &mut budget, |combo| {
                let support: Vec<usize> = combo.iter().map(|&k| active[k]).collect();
                match self.try_mode(&support, services, a, &scores, band, band_num) {
                    Some(m) => {
                        found = Some(m);
                        true
                    }
                    None => false,
                }
            });
            if found.is_some() {
                return found;
            }
            if budget == 0 {
                return None;
            }
        }
        None
    }

    /// Under information lag the selection is frozen between observation
    /// events, so the mode is always a singleton (plus axis pinning): the
    /// lex-smallest maximizer at the lagged state.
    fn lag_mode(&self, y: &[f64], services: &[ServiceVector], a: &[f64]) -> Option<Mode> {
        let by = self.matrix.mul(y);
        let scores: Vec<f64> = services.iter().map(|s| dot(s.rates(), &by)).collect();
        let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let band_num = self.numeric_band(&scores, &by, services, a);
        let band = band_num + 2.0 * self.select.noise;
        let mut pick = None;
        for (i, s) in services.iter().enumerate() {
            if best - scores[i] <= band {
                let is_smaller = match pick {
                    None => true,
                    Some(p) => lex_less(s.rates(), services[p as usize].rates()),
                };
                if is_smaller {
                    pick = Some(i);
                }
            }
        }
        let pick = pick?;
        let mut mode = self.pinned_singleton(pick, services, a)?;
        mode.scores = scores;
        mode.band = band;
        mode.band_num = band_num;
        Some(mode)
    }

    /// Builds the singleton mode for `pick` with axis pinning on the
    /// physical state; used by both the lag path and `try_mode`'s size-1
    /// case (which adds outsider checks on top).
    fn pinned_singleton(
        &self,
        pick: usize,
        services: &[ServiceVector],
        a: &[f64],
    ) -> Option<Mode> {
        let nq = self.q();
        let cap = services[pick].rates();
        let mut pinned = vec![false; nq];
        let mut eff = vec![0.0; nq];
        let mut drift = vec![0.0; nq];
        for q in 0..nq {
            let served = if self.x[q] == 0.0 { cap[q].max(0.0) } else { cap[q] };
            if self.x[q] == 0.0 && a[q] - served < 0.0 {
                pinned[q] = true;
                eff[q] = a[q];
                drift[q] = 0.0;
            } else {
                eff[q] = served;
                drift[q] = a[q] - served;
            }
        }
        let bdrift = self.matrix.mul(&drift);
        let rates: Vec<f64> = services.iter().map(|s| dot(s.rates(), &bdrift)).collect();
        let selected = self.zeroed(services[pick].rates());
        let sliding = pinned.iter().any(|&p| p);
        Some(Mode {
            support: vec![pick],
            support_rate: rates[pick],
            rates,
            scores: Vec::new(),
            eff,
            drift,
            selected,
            band: 0.0,
            band_num: 0.0,
            sliding,
        })
    }

    fn try_mode(
        &self,
        support: &[usize],
        services: &[ServiceVector],
        a: &[f64],
        scores: &[f64],
        band: f64,
        band_num: f64,
    ) -> Option<Mode> {
        let nq = self.q();
        let m = support.len();
        if m == 1 {
            let mut mode = self.pinned_singleton(support[0], services, a)?;
            mode.scores = scores.to_vec();
            mode.band = band;
            mode.band_num = band_num;
            return self.check_outsiders(mode, support, scores, band_num);
        }
        let mut pinned = vec![false; nq];
        for _ in 0..(2 * nq + 2) {
            let weights = self.solve_weights(support, &pinned, services, a)?;
            let mut cap = vec![0.0; nq];
            for (j, &i) in support.iter().enumerate() {
                for q in 0..nq {
                    cap[q] += weights[j] * services[i][q];
                }
            }
            let want: Vec<bool> = (0..nq)
                .map(|q| self.x[q] == 0.0 && a[q] - cap[q] < 0.0)
                .collect();
            if want != pinned {
                pinned = want;
                continue;
            }
            let mut eff = vec![0.0; nq];
            let mut drift = vec![0.0; nq];
            for q in 0..nq {
                if pinned[q] {
                    eff[q] = a[q];
                    drift[q] = 0.0;
                } else {
                    eff[q] = cap[q];
                    drift[q] = a[q] - cap[q];
                    if self.x[q] == 0.0 && drift[q] < -1e-12 {
                        return None;
                    }
                }
            }
            let bdrift = self.matrix.mul(&drift);
            let rates: Vec<f64> = services.iter().map(|s| dot(s.rates(), &bdrift)).collect();
            let support_rate = rates[support[0]];
            let selected = self.zeroed(services[support[0]].rates());
            let mode = Mode {
                support: support.to_vec(),
                eff,
                drift,
                selected,
                scores: scores.to_vec(),
                support_rate,
                rates,
                band,
                band_num,
                sliding: true,
            };
            return self.check_outsiders(mode, support, scores, band_num);
        }
        None
    }

    /// A mode is rejected if a vector outside the support whose score
    /// already ties or exceeds the support's would see its score grow
    /// strictly faster: the literal argmax would abandon the support at
    /// once. Strictly-behind vectors never veto; their overtaking instants
    /// become crossing events instead.
    fn check_outsiders(
        &self,
        mode: Mode,
        support: &[usize],
        scores: &[f64],
        band_num: f64,
    ) -> Option<Mode> {
        let s_sup = support
            .iter()
            .map(|&i| scores[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let tol = RATE_TOLERANCE * (1.0 + mode.support_rate.abs());
        for i in 0..scores.len() {
            if support.contains(&i) {
                continue;
            }
            if scores[i] >= s_sup - band_num && mode.rates[i] > mode.support_rate + tol {
                return None;
            }
        }
        Some(mode)
    }

    /// Convex weights making every support member's score rate equal, given
    /// the pinned-queue mask. Returns `None` when the linear system is
    /// singular or the solution is not a convex combination.
    fn solve_weights(
        &self,
        support: &[usize],
        pinned: &[bool],
        services: &[ServiceVector],
        a: &[f64],
    ) -> Option<Vec<f64>> {
        let m = support.len();
        let nq = self.q();
        let mask = |v: &[f64]| -> Vec<f64> {
            (0..nq)
                .map(|q| if pinned[q] { 0.0 } else { v[q] })
                .collect()
        };
        let bma = self.matrix.mul(&mask(a));
        let c: Vec<f64> = support
            .iter()
            .map(|&i| dot(services[i].rates(), &bma))
            .collect();
        let mut g = vec![vec![0.0; m]; m];
        for (j, &sj) in support.iter().enumerate() {
            let bmsj = self.matrix.mul(&mask(services[sj].rates()));
            for (i, &si) in support.iter().enumerate() {
                g[i][j] = dot(services[si].rates(), &bmsj);
            }
        }
        // Rows 0..m-1: rate(i) == rate(0); last row: weights sum to one.
        let mut lhs = vec![vec![0.0; m]; m];
        let mut rhs = vec![0.0; m];
        for i in 1..m {
            for j in 0..m {
                lhs[i - 1][j] = g[i][j] - g[0][j];
            }
            rhs[i - 1] = c[i] - c[0];
        }
        for j in 0..m {
            lhs[m - 1][j] = 1.0;
        }
        rhs[m - 1] = 1.0;
        let mut w = match solve_dense(lhs, rhs) {
            Some(w) => w,
            None => {
                // Degenerate system (e.g. every queue pinned): the weights
                // are underdetermined. Uniform weights are valid whenever
                // they actually equalize the score rates.
                let u = vec![1.0 / m as f64; m];
                let rate = |i: usize| c[i] - (0..m).map(|j| g[i][j] * u[j]).sum::<f64>();
                let r0 = rate(0);
                let tol = RATE_TOLERANCE * (1.0 + r0.abs());
                if (1..m).all(|i| (rate(i) - r0).abs() <= tol) {
                    return Some(u);
                }
                return None;
            }
        };
        let mut sum = 0.0;
        for v in &mut w {
            if *v < -WEIGHT_TOLERANCE {
                return None;
            }
            if *v < 0.0 {
                *v = 0.0;
            }
            sum += *v;
        }
        if !(0.5..=1.5).contains(&sum) {
            return None;
        }
        for v in &mut w {
            *v /= sum;
        }
        Some(w)
    }

    /// Literal selection used by the guard: lex-smallest band member at the
    /// observed state, zeroed on empty queues, no pinning. Always succeeds;
    /// only ever applied for a micro-step.
    fn guard_mode(&self, env: usize, a: &[f64]) -> Mode {
        let services = self.services(env);
        let y;
        let x_sel: &[f64] = if self.opts.info_lag > 0.0 {
            y = self.history.view(self.t - self.opts.info_lag).0;
            &y
        } else {
            &self.x
        };
        let bx = self.matrix.mul(x_sel);
        let scores: Vec<f64> = services.iter().map(|s| dot(s.rates(), &bx)).collect();
        let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let band = self.select.band(best);
        let mut pick = 0;
        let mut have = false;
        for (i, s) in services.iter().enumerate() {
            if best - scores[i] <= band
                && (!have || lex_less(s.rates(), services[pick].rates()))
            {
                pick = i;
                have = true;
            }
        }
        let selected = self.zeroed(services[pick].rates());
        let nq = self.q();
        let eff: Vec<f64> = selected.rates().to_vec();
        let drift: Vec<f64> = (0..nq).map(|q| a[q] - eff[q]).collect();
        Mode {
            support: vec![pick],
            eff,
            drift,
            selected,
            support_rate: 0.0,
            rates: vec![0.0; services.len()],
            scores,
            band,
            band_num: 0.0,
            sliding: false,
        }
    }

    fn zeroed(&self, rates: &[f64]) -> ServiceVector {
        let mut z = rates.to_vec();
        for (q, v) in z.iter_mut().enumerate() {
            if self.x[q] == 0.0 && *v > 0.0 {
                *v = 0.0;
            }
        }
        ServiceVector::new(z).expect("zeroing keeps rates finite")
    }

    // ----- crossing prediction ---------------------------------------------

    /// Earliest future time the resolved mode stops being valid because of
    /// score motion: a strictly-behind vector catching up to the support
    /// (physical feedback), or the lagged selection set changing (lagged
    /// feedback).
    fn crossing_candidate(
        &self,
        mode: &Mode,
        lag_seg: Option<&LagSeg>,
        services: &[ServiceVector],
    ) -> f64 {
        let mut first = f64::INFINITY;
        match lag_seg {
            None => {
                let s_sup = mode
                    .support
                    .iter()
                    .map(|&i| mode.scores[i])
                    .fold(f64::NEG_INFINITY, f64::max);
                for i in 0..services.len() {
                    if mode.support.contains(&i) {
                        continue;
                    }
                    let gap = mode.scores[i] - s_sup;
                    if gap >= -mode.band_num {
                        continue; // tied or ahead: vetted when the mode was built
                    }
                    if let Some(tau) = crossing_time(
                        gap,
                        mode.rates[i] - mode.support_rate,
                        mode.support_rate,
                    ) {
                        first = first.min(self.t + tau);
                    }
                }
            }
            Some(seg) => {
                // Score motion of the lagged observation point. The frozen
                // selection is the lex-smallest vector within `band` of the
                // best; it can only change when some vector crosses the
                // band edge below the best (membership), or crosses the
                // best itself (the reference point moves).
                let brates = self.matrix.mul(&seg.ydrift);
                let mut best_i = 0;
                for i in 1..services.len() {
                    if mode.scores[i] > mode.scores[best_i] {
                        best_i = i;
                    }
                }
                let r_best = dot(services[best_i].rates(), &brates);
                for (i, s) in services.iter().enumerate() {
                    if i == best_i {
                        continue;
                    }
                    let gap = mode.scores[i] - mode.scores[best_i];
                    let dr = dot(s.rates(), &brates) - r_best;
                    for target in [-mode.band, 0.0] {
                        let diff = target - gap;
                        let tau = if diff > 0.0 {
                            crossing_time(gap - target, dr, r_best)
                        } else if diff < 0.0 {
                            crossing_time(target - gap, -dr, r_best)
                        } else {
                            None
                        };
                        if let Some(tau) = tau {
                            first = first.min(self.t + tau);
                        }
                    }
                }
            }
        }
        first
    }

    // ----- recording ---------------------------------------------------------

    fn note_used(&mut self, services: &[ServiceVector], mode: &Mode) {
        for &i in &mode.support {
            let z = self.zeroed(services[i].rates());
            if self.used_keys.insert(z.bit_key()) {
                self.used.push(z);
            }
        }
    }

    fn record_sample(&mut self, t: f64, env: usize, mode: &Mode) {
        self.s_times.push(t);
        self.s_xs.extend_from_slice(&self.x);
        self.s_envs.push(env);
        self.s_services.extend_from_slice(mode.selected.rates());
        self.s_cum_a.extend_from_slice(&self.cum_a);
        self.s_cum_s.extend_from_slice(&self.cum_s);
    }

    /// Sample at an interior stride mark, interpolated along the current
    /// linear segment (exact, since the segment is linear).
    fn record_interp(&mut self, mark: f64, env: usize, mode: &Mode, a: &[f64]) {
        let w = mark - self.t;
        self.s_times.push(mark);
        for q in 0..self.q() {
            self.s_xs.push(self.x[q] + mode.drift[q] * w);
        }
        self.s_envs.push(env);
        self.s_services.extend_from_slice(mode.selected.rates());
        for q in 0..self.q() {
            self.s_cum_a.push(self.cum_a[q] + a[q] * w);
        }
        for q in 0..self.q() {
            self.s_cum_s.push(self.cum_s[q] + mode.eff[q] * w);
        }
    }

    fn finish(mut self) -> Trajectory {
        self.used.sort_by(|a, b| {
            if lex_less(a.rates(), b.rates()) {
                std::cmp::Ordering::Less
            } else {
                std::cmp::Ordering::Greater
            }
        });
        Trajectory {
            queues: self.q(),
            times: self.s_times,
            xs: self.s_xs,
            envs: self.s_envs,
            services: self.s_services,
            cum_a: self.s_cum_a,
            cum_s: self.s_cum_s,
            initial_x: self.initial_x,
            final_x: self.x,
            final_time: self.t,
            total_arrival: self.cum_a,
            total_service: self.cum_s,
            occupancy: self.occupancy,
            used: self.used,
            load: self.load,
            event_counts: self.counts,
            guard_activations: self.guards,
            sliding_time: self.sliding_time,
        }
    }
}

/// Lexicographic index combinations of `size` out of `n`, invoking `visit`
/// until it returns true or the shared budget runs out.
fn combinations(
    n: usize,
    size: usize,
    budget: &mut usize,
    mut visit: impl FnMut(&[usize]) -> bool,
) -> bool {
    if size > n || size == 0 {
        return false;
    }
    let mut idx: Vec<usize> = (0..size).collect();
    loop {
        if *budget == 0 {
            return false;
        }
        *budget -= 1;
        if visit(&idx) {
            return true;
        }
        // Advance to the next combination.
        let mut i = size;
        while i > 0 {
            i -= 1;
            if idx[i] != i + n - size {
                idx[i] += 1;
                for j in i + 1..size {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
            if i == 0 {
                return false;
            }
        }
    }
}

/// Dense Gauss-Jordan solve with partial pivoting; `None` on (near-)singular
/// systems. Sized for the tiny systems of the weight solver.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        if a[piv][col].abs() <= 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                let v = a[col][c];
                a[r][c] -= f * v;
            }
            b[r] -= f * b[col];
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}
