//! Fixed-step reference integrator.
//!
//! A deliberately simple forward-Euler discretization used to cross-check
//! the event-driven engine: it re-runs the selection rule every `dt`, serves
//! `min(s_q * dt, x_q + a_q * dt)` on each queue, and quantizes environment
//! switches and traffic events to step boundaries. Its trajectories converge
//! to the exact ones at rate O(dt). Information lag is *not* modeled here
//! (selection always sees the current state), so compare against lag-free
//! runs only. Flow balance is exact by construction.

use super::envtrace::EnvCursor;
use super::traffic::make_traffic;
use super::{validate_inputs, SimError, SimOptions, Trajectory};
use crate::model::{lex_less, EnvironmentTrace, ScheduleMatrix, ServiceVector, SystemSpec, TrafficTrace};
use crate::scheduler::{select_with, SelectOptions};
use std::collections::HashSet;

/// Simulates with a fixed step `dt`; see the module docs for the exact
/// discretization. Events are counted when their quantized boundary is
/// processed; empty-queue and crossing instants are not events here.
#[allow(clippy::too_many_arguments)]
pub fn simulate_fixed_step(
    spec: &SystemSpec,
    matrix: &ScheduleMatrix,
    traffic: &TrafficTrace,
    envtrace: &EnvironmentTrace,
    horizon: f64,
    seed: u64,
    dt: f64,
    opts: &SimOptions,
) -> Result<Trajectory, SimError> {
    validate_inputs(spec, matrix, traffic, envtrace, horizon, opts)?;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(SimError::BadParameter("step size must be positive".into()));
    }
    if horizon / dt > super::SAMPLE_CAP as f64 {
        return Err(SimError::SampleBudgetExceeded);
    }

    let q = spec.queues();
    let x0 = opts
        .initial_workload
        .clone()
        .unwrap_or_else(|| vec![0.0; q]);
    let select = SelectOptions {
        noise: opts.selection_noise,
        ..SelectOptions::default()
    };

    let mut cursor = EnvCursor::new(envtrace, seed);
    let mut source = make_traffic(traffic, envtrace, matrix, seed);
    let mut x = x0.clone();
    let mut cum_a = vec![0.0; q];
    let mut cum_s = vec![0.0; q];
    let mut occupancy = vec![0.0; spec.environments().len()];
    let mut counts = super::EventCounts::default();
    let mut used_keys: HashSet<Vec<u64>> = HashSet::new();
    let mut used: Vec<ServiceVector> = Vec::new();

    let steps = (horizon / dt).ceil() as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut xs = Vec::with_capacity((steps + 1) * q);
    let mut envs = Vec::with_capacity(steps + 1);
    let mut services_out = Vec::with_capacity((steps + 1) * q);
    let mut s_cum_a = Vec::with_capacity((steps + 1) * q);
    let mut s_cum_s = Vec::with_capacity((steps + 1) * q);

    let mut t = 0.0;
    for step in 0..=steps {
        // Quantized events: everything due by the boundary fires now.
        while cursor.next_switch() <= t {
            cursor.advance();
            counts.env_switch += 1;
        }
        while source.next_change() <= t {
            let before = source.rate().to_vec();
            let delta = source.advance(t, &x);
            if delta.iter().any(|&d| d != 0.0) {
                counts.job_jump += 1;
                for i in 0..q {
                    x[i] += delta[i];
                    cum_a[i] += delta[i];
                }
            } else if source.rate() != before.as_slice() {
                counts.rate_change += 1;
            }
        }

        let env = cursor.current();
        let selection = select_with(&x, spec.env(env).services(), matrix, &select)?;
        let chosen = selection.chosen;
        if used_keys.insert(chosen.bit_key()) {
            used.push(chosen.clone());
        }

        times.push(t);
        xs.extend_from_slice(&x);
        envs.push(env);
        services_out.extend_from_slice(chosen.rates());
        s_cum_a.extend_from_slice(&cum_a);
        s_cum_s.extend_from_slice(&cum_s);

        if step == steps {
            counts.horizon += 1;
            break;
        }
        let h = dt.min(horizon - t);
        for i in 0..q {
            let inflow = source.rate()[i] * h;
            let served = (chosen[i] * h).min(x[i] + inflow);
            cum_a[i] += inflow;
            cum_s[i] += served;
            x[i] += inflow - served;
        }
        occupancy[env] += h;
        t = if step + 1 == steps {
            horizon
        } else {
            (step + 1) as f64 * dt
        };
    }

    used.sort_by(|a, b| {
        if lex_less(a.rates(), b.rates()) {
            std::cmp::Ordering::Less
        } else {
            std::cmp::Ordering::Greater
        }
    });
    Ok(Trajectory {
        queues: q,
        times,
        xs,
        envs,
        services: services_out,
        cum_a: s_cum_a,
        cum_s: s_cum_s,
        initial_x: x0,
        final_x: x,
        final_time: horizon,
        total_arrival: cum_a,
        total_service: cum_s,
        occupancy,
        used,
        load: traffic.load.clone(),
        event_counts: counts,
        guard_activations: 0,
        sliding_time: 0.0,
    })
}
