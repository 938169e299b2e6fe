//! Trajectory diagnostics: rate-stability verdicts, effective service
//! rates, Lyapunov series, and flow-balance checks.
//!
//! Rate stability (`X(t)/t -> 0`) is asymptotic, so any finite-horizon
//! judgment is a thresholded one; the thresholds live in
//! [`VerdictOptions`] rather than being buried in the code. A verdict
//! combines two views of the run: the endpoint slope `X(T)/T` and a
//! least-squares slope fitted over the tail window, which filters out an
//! initial transient.

use crate::model::ScheduleMatrix;
use crate::sim::Trajectory;
use serde::Serialize;

/// Relative tolerance for the flow-balance identity.
pub const FLOW_BALANCE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Stable,
    Unstable,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Stable => "stable",
            Verdict::Unstable => "unstable",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

/// Thresholds for [`rate_stability`].
#[derive(Debug, Clone, Copy)]
pub struct VerdictOptions {
    /// Fraction of the horizon, counted from the end, used for the tail fit.
    pub tail_fraction: f64,
    /// Stable when the growth metric is below `stable_rel * max(1, max load)`.
    pub stable_rel: f64,
    /// With a known drain deficit `d`, unstable requires growth at least
    /// `unstable_factor * d`.
    pub unstable_factor: f64,
}

impl Default for VerdictOptions {
    fn default() -> Self {
        VerdictOptions {
            tail_fraction: 0.5,
            stable_rel: 0.01,
            unstable_factor: 0.5,
        }
    }
}

/// Outcome of [`rate_stability`].
#[derive(Debug, Clone, Serialize)]
pub struct StabilityVerdict {
    pub verdict: Verdict,
    /// `X_q(T) / T` per queue.
    pub endpoint_slope: Vec<f64>,
    /// Least-squares slope of `X_q(t)` over the tail window, per queue.
    pub tail_slope: Vec<f64>,
    /// `max_q max(endpoint, tail, 0)` — the growth rate the thresholds see.
    pub growth: f64,
    /// Growth at or below this is stable.
    pub stable_threshold: f64,
    /// Growth at or above this is unstable.
    pub unstable_threshold: f64,
}

/// Classifies a trajectory as rate-stable, unstable, or inconclusive.
///
/// `deficit`, when known (from the region computations), sharpens the
/// unstable threshold to `unstable_factor * deficit`; otherwise a growth
/// of five stable-bands is required before the run is called unstable.
pub fn rate_stability(
    traj: &Trajectory,
    deficit: Option<f64>,
    opts: &VerdictOptions,
) -> StabilityVerdict {
    let q = traj.queues();
    let t_final = traj.final_time().max(f64::MIN_POSITIVE);
    let endpoint: Vec<f64> = traj.final_x().iter().map(|x| x / t_final).collect();
    let tail = tail_slopes(traj, opts.tail_fraction);
    let mut growth = 0.0_f64;
    for i in 0..q {
        growth = growth.max(endpoint[i]).max(tail[i]);
    }
    let rho_max = traj.load().iter().fold(0.0_f64, |a, &b| a.max(b));
    let stable_threshold = opts.stable_rel * rho_max.max(1.0);
    let unstable_threshold = match deficit {
        Some(d) if d > 0.0 => opts.unstable_factor * d,
        _ => 5.0 * stable_threshold,
    };
    let verdict = if growth <= stable_threshold {
        Verdict::Stable
    } else if growth >= unstable_threshold {
        Verdict::Unstable
    } else {
        Verdict::Inconclusive
    };
    StabilityVerdict {
        verdict,
        endpoint_slope: endpoint,
        tail_slope: tail,
        growth,
        stable_threshold,
        unstable_threshold,
    }
}

/// Per-queue least-squares slope of the sampled workload over the window
/// `[(1 - fraction) * T, T]`. Falls back to the endpoint slope when the
/// window holds fewer than two distinct sample times.
pub fn tail_slopes(traj: &Trajectory, fraction: f64) -> Vec<f64> {
    let q = traj.queues();
    let t_final = traj.final_time();
    let start = t_final * (1.0 - fraction.clamp(0.0, 1.0));
    let n = traj.len();
    let mut lo = 0;
    while lo < n && traj.time(lo) < start {
        lo += 1;
    }
    let count = n - lo;
    let distinct = count >= 2 && traj.time(n - 1) > traj.time(lo);
    if !distinct {
        let t = t_final.max(f64::MIN_POSITIVE);
        return traj.final_x().iter().map(|x| x / t).collect();
    }
    // Standard least squares, centered for conditioning.
    let inv = 1.0 / count as f64;
    let mut t_mean = 0.0;
    for i in lo..n {
        t_mean += traj.time(i);
    }
    t_mean *= inv;
    let mut denom = 0.0;
    for i in lo..n {
        let dt = traj.time(i) - t_mean;
        denom += dt * dt;
    }
    let mut slopes = vec![0.0; q];
    for (k, slope) in slopes.iter_mut().enumerate() {
        let mut x_mean = 0.0;
        for i in lo..n {
            x_mean += traj.x(i)[k];
        }
        x_mean *= inv;
        let mut num = 0.0;
        for i in lo..n {
            num += (traj.time(i) - t_mean) * (traj.x(i)[k] - x_mean);
        }
        *slope = num / denom;
    }
    slopes
}

/// Long-run effective service rate per queue: exact served work over the
/// horizon.
pub fn effective_service_rates(traj: &Trajectory) -> Vec<f64> {
    let t = traj.final_time().max(f64::MIN_POSITIVE);
    traj.total_service().iter().map(|s| s / t).collect()
}

/// The quadratic Lyapunov function `V(x) = <x, B x>` evaluated along the
/// samples, plus the fraction of consecutive sample steps on which it did
/// not increase.
#[derive(Debug, Clone, Serialize)]
pub struct LyapunovSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Fraction of sample-to-sample steps with `V` non-increasing (within a
    /// relative tolerance).
    pub decrease_fraction: f64,
}

pub fn lyapunov_series(traj: &Trajectory, matrix: &ScheduleMatrix) -> LyapunovSeries {
    let n = traj.len();
    let mut times = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        times.push(traj.time(i));
        values.push(matrix.quad(traj.x(i), traj.x(i)));
    }
    let mut steps = 0_usize;
    let mut down = 0_usize;
    for i in 1..n {
        if times[i] <= times[i - 1] {
            continue; // jump pair: not a time step
        }
        steps += 1;
        if values[i] <= values[i - 1] * (1.0 + 1e-12) + 1e-12 {
            down += 1;
        }
    }
    let decrease_fraction = if steps == 0 {
        1.0
    } else {
        down as f64 / steps as f64
    };
    LyapunovSeries {
        times,
        values,
        decrease_fraction,
    }
}

/// Result of [`flow_balance_check`]: the per-queue residual of
/// `X(T) = X(0) + arrivals - service` and whether all of them sit within
/// the relative tolerance.
#[derive(Debug, Clone, Serialize)]
pub struct FlowBalanceReport {
    pub residuals: Vec<f64>,
    pub ok: bool,
}

pub fn flow_balance_check(traj: &Trajectory) -> FlowBalanceReport {
    let q = traj.queues();
    let mut residuals = Vec::with_capacity(q);
    let mut ok = true;
    for i in 0..q {
        let r = traj.final_x()[i]
            - (traj.initial_x()[i] + traj.total_arrival()[i] - traj.total_service()[i]);
        let tol = FLOW_BALANCE_TOLERANCE * (1.0 + traj.total_arrival()[i].abs());
        if r.abs() > tol {
            ok = false;
        }
        residuals.push(r);
    }
    FlowBalanceReport { residuals, ok }
}
