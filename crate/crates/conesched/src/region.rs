//! The stability region and its certificates.
//!
//! A load vector `rho` is inside the region when there are per-environment
//! convex weights `phi` over the service vectors whose `pi`-weighted average
//! service dominates `rho` componentwise:
//!
//! ```text
//!     rho_q  <=  sum_e pi_e * sum_S phi[e][S] * S_q        for every q,
//!     sum_S phi[e][S] = 1,  phi >= 0                        for every e.
//! ```
//!
//! Everything in this module reduces to small linear programs over the
//! weights, solved by the in-repo simplex. Service sets must be completed
//! before calling in; sub-vectors are dominated so they never enlarge the
//! region, but the certificates are stated over the closed sets.

use crate::model::SystemSpec;
use crate::simplex::{solve_standard, LpError, LpSolution, FEASIBILITY_TOLERANCE};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegionError {
    #[error("load vector has a negative component: rho[{index}] = {value}")]
    NegativeLoad { index: usize, value: f64 },
    #[error("direction must be nonnegative and nonzero")]
    BadDirection,
    #[error("{what} has length {got}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("system spec is invalid: {0:?}")]
    InvalidSystem(Vec<String>),
    #[error("environment {0} is not completed; materialize the closure first")]
    NotCompleted(usize),
    #[error("polygon sweep requires exactly 2 queues, spec has {0}")]
    NotTwoQueues(usize),
    #[error("polygon sweep needs at least 2 directions")]
    TooFewAngles,
    #[error("linear program failed: {0:?}")]
    Lp(LpError),
}

/// Witness for a membership query. When `member` is true the weights `phi`
/// reproduce a dominating service mix and `slack` is the componentwise
/// surplus; when false, `phi` is the deficit-minimizing mix and `deficit`
/// bounds how far `rho` sits outside the region.
#[derive(Debug, Clone, Serialize)]
pub struct RegionCertificate {
    pub member: bool,
    /// `phi[e][i]` weighs `spec.env(e).services()[i]`; rows sum to 1.
    pub phi: Vec<Vec<f64>>,
    /// `cover_q - rho_q` for the certified mix (nonnegative iff member).
    pub slack: Vec<f64>,
    /// Present when `member` is false: the minimax drain deficit.
    pub deficit: Option<f64>,
}

impl RegionCertificate {
    /// Recomputes the `pi`-weighted cover of the certified weights; tests
    /// replay this against `rho + slack`.
    pub fn cover(&self, spec: &SystemSpec) -> Vec<f64> {
        let q = spec.queues();
        let mut cover = vec![0.0; q];
        for (e, env) in spec.environments().iter().enumerate() {
            for (i, s) in env.services().iter().enumerate() {
                let w = spec.pi()[e] * self.phi[e][i];
                for k in 0..q {
                    cover[k] += w * s[k];
                }
            }
        }
        cover
    }
}

fn check_spec(spec: &SystemSpec) -> Result<(), RegionError> {
    let report = spec.validate();
    if !report.is_clean() {
        return Err(RegionError::InvalidSystem(report.violations));
    }
    for env in spec.environments() {
        if !env.completed() {
            return Err(RegionError::NotCompleted(env.id));
        }
    }
    Ok(())
}

fn check_load(rho: &[f64], spec: &SystemSpec) -> Result<(), RegionError> {
    if rho.len() != spec.queues() {
        return Err(RegionError::DimensionMismatch {
            what: "rho",
            got: rho.len(),
            expected: spec.queues(),
        });
    }
    for (index, &value) in rho.iter().enumerate() {
        if !(value >= 0.0) {
            return Err(RegionError::NegativeLoad { index, value });
        }
    }
    Ok(())
}

/// Column layout shared by all the LPs: one weight per (environment, service)
/// pair, then any extra scalars, then one slack per queue.
struct Layout {
    offsets: Vec<usize>,
    nphi: usize,
}

fn layout(spec: &SystemSpec) -> Layout {
    let mut offsets = Vec::with_capacity(spec.environments().len());
    let mut nphi = 0;
    for env in spec.environments() {
        offsets.push(nphi);
        nphi += env.services().len();
    }
    Layout { offsets, nphi }
}

/// Rows common to every LP here: the simplex row per environment and, per
/// queue, the weighted cover terms. Extra columns are appended by callers.
fn cover_rows(spec: &SystemSpec, lay: &Layout, ncols: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let nq = spec.queues();
    let ne = spec.environments().len();
    let mut a = vec![vec![0.0; ncols]; ne + nq];
    let b = vec![0.0; ne + nq];
    for (e, env) in spec.environments().iter().enumerate() {
        for i in 0..env.services().len() {
            a[e][lay.offsets[e] + i] = 1.0;
        }
        for (q, row) in a[ne..].iter_mut().enumerate() {
            for (i, s) in env.services().iter().enumerate() {
                row[lay.offsets[e] + i] = spec.pi()[e] * s[q];
            }
        }
    }
    (a, b)
}

fn extract_phi(spec: &SystemSpec, lay: &Layout, x: &[f64]) -> Vec<Vec<f64>> {
    spec.environments()
        .iter()
        .enumerate()
        .map(|(e, env)| {
            (0..env.services().len())
                .map(|i| x[lay.offsets[e] + i].max(0.0))
                .collect()
        })
        .collect()
}

/// Decides `rho in R` and returns a replayable certificate either way.
pub fn membership(rho: &[f64], spec: &SystemSpec) -> Result<RegionCertificate, RegionError> {
    check_spec(spec)?;
    check_load(rho, spec)?;
    let lay = layout(spec);
    let nq = spec.queues();
    let ne = spec.environments().len();
    let ncols = lay.nphi + nq;
    let (mut a, mut b) = cover_rows(spec, &lay, ncols);
    for e in 0..ne {
        b[e] = 1.0;
    }
    for q in 0..nq {
        a[ne + q][lay.nphi + q] = -1.0; // cover - slack = rho
        b[ne + q] = rho[q];
    }
    let c = vec![0.0; ncols];
    match solve_standard(&a, &b, &c) {
        Ok(sol) => {
            let phi = extract_phi(spec, &lay, &sol.x);
            let cert = RegionCertificate {
                member: true,
                slack: sol.x[lay.nphi..lay.nphi + nq].to_vec(),
                phi,
                deficit: None,
            };
            Ok(cert)
        }
        Err(LpError::Infeasible) => {
            let (deficit, phi) = deficit_with_weights(rho, spec)?;
            let mut cert = RegionCertificate {
                member: false,
                phi,
                slack: vec![0.0; nq],
                deficit: Some(deficit),
            };
            let cover = cert.cover(spec);
            cert.slack = cover.iter().zip(rho).map(|(c, r)| c - r).collect();
            Ok(cert)
        }
        Err(e) => Err(RegionError::Lp(e)),
    }
}

/// Largest `theta` with `theta * direction` still inside the region. Returns
/// 0 when not even the origin is coverable (possible only with service sets
/// that force negative rates).
pub fn boundary_scale(direction: &[f64], spec: &SystemSpec) -> Result<f64, RegionError> {
    check_spec(spec)?;
    if direction.len() != spec.queues() {
        return Err(RegionError::DimensionMismatch {
            what: "direction",
            got: direction.len(),
            expected: spec.queues(),
        });
    }
    if direction.iter().any(|&d| !(d >= 0.0)) || direction.iter().all(|&d| d == 0.0) {
        return Err(RegionError::BadDirection);
    }
    let lay = layout(spec);
    let nq = spec.queues();
    let ne = spec.environments().len();
    let theta_col = lay.nphi;
    let ncols = lay.nphi + 1 + nq;
    let (mut a, mut b) = cover_rows(spec, &lay, ncols);
    for e in 0..ne {
        b[e] = 1.0;
    }
    for q in 0..nq {
        a[ne + q][theta_col] = -direction[q]; // cover - theta*d - slack = 0
        a[ne + q][lay.nphi + 1 + q] = -1.0;
    }
    let mut c = vec![0.0; ncols];
    c[theta_col] = -1.0;
    match solve_standard(&a, &b, &c) {
        Ok(sol) => Ok(sol.x[theta_col]),
        Err(LpError::Infeasible) => Ok(0.0),
        Err(e) => Err(RegionError::Lp(e)),
    }
}

/// Minimax drain deficit: the smallest `u` such that some service mix leaves
/// every queue short by at most `u`. Zero exactly on the region; positive
/// outside, where it lower-bounds the achievable growth rate of the longest
/// queue under any schedule.
pub fn min_drain_deficit(rho: &[f64], spec: &SystemSpec) -> Result<f64, RegionError> {
    check_spec(spec)?;
    check_load(rho, spec)?;
    Ok(deficit_with_weights(rho, spec)?.0)
}

fn deficit_with_weights(
    rho: &[f64],
    spec: &SystemSpec,
) -> Result<(f64, Vec<Vec<f64>>), RegionError> {
    let lay = layout(spec);
    let nq = spec.queues();
    let ne = spec.environments().len();
    let u_col = lay.nphi;
    let ncols = lay.nphi + 1 + nq;
    let (mut a, mut b) = cover_rows(spec, &lay, ncols);
    for e in 0..ne {
        b[e] = 1.0;
    }
    for q in 0..nq {
        a[ne + q][u_col] = 1.0; // cover + u - t = rho
        a[ne + q][lay.nphi + 1 + q] = -1.0;
        b[ne + q] = rho[q];
    }
    let mut c = vec![0.0; ncols];
    c[u_col] = 1.0;
    let sol: LpSolution = solve_standard(&a, &b, &c).map_err(RegionError::Lp)?;
    let deficit = if sol.x[u_col] < FEASIBILITY_TOLERANCE {
        0.0
    } else {
        sol.x[u_col]
    };
    Ok((deficit, extract_phi(spec, &lay, &sol.x)))
}

/// Signed distance to the region boundary in load units: the largest uniform
/// increment keeping `rho` inside (nonnegative on the region), or minus the
/// drain deficit outside. Useful for banding membership comparisons.
pub fn margin(rho: &[f64], spec: &SystemSpec) -> Result<f64, RegionError> {
    check_spec(spec)?;
    check_load(rho, spec)?;
    let lay = layout(spec);
    let nq = spec.queues();
    let ne = spec.environments().len();
    let eps_col = lay.nphi;
    let ncols = lay.nphi + 1 + nq;
    let (mut a, mut b) = cover_rows(spec, &lay, ncols);
    for e in 0..ne {
        b[e] = 1.0;
    }
    for q in 0..nq {
        a[ne + q][eps_col] = -1.0; // cover - eps - slack = rho
        a[ne + q][lay.nphi + 1 + q] = -1.0;
        b[ne + q] = rho[q];
    }
    let mut c = vec![0.0; ncols];
    c[eps_col] = -1.0;
    match solve_standard(&a, &b, &c) {
        // The objective is -eps, so the margin is its negation.
        Ok(sol) => Ok(-sol.objective),
        Err(LpError::Infeasible) => Ok(-min_drain_deficit(rho, spec)?),
        Err(e) => Err(RegionError::Lp(e)),
    }
}

/// Boundary points `theta*(d) * d` for `n_angles` directions sweeping the
/// closed positive quadrant, evenly spaced in angle from `(1,0)` to `(0,1)`.
pub fn region_polygon_2d(
    spec: &SystemSpec,
    n_angles: usize,
) -> Result<Vec<[f64; 2]>, RegionError> {
    check_spec(spec)?;
    if spec.queues() != 2 {
        return Err(RegionError::NotTwoQueues(spec.queues()));
    }
    if n_angles < 2 {
        return Err(RegionError::TooFewAngles);
    }
    let mut points = Vec::with_capacity(n_angles);
    for i in 0..n_angles {
        let angle = std::f64::consts::FRAC_PI_2 * i as f64 / (n_angles - 1) as f64;
        // Snap the axis directions exactly so the endpoints are clean.
        let mut d = [angle.cos(), angle.sin()];
        for v in &mut d {
            if v.abs() < 1e-12 {
                *v = 0.0;
            }
        }
        let theta = boundary_scale(&d, spec)?;
        points.push([theta * d[0], theta * d[1]]);
    }
    Ok(points)
}

/// Max componentwise shortfall of the certificate replay: `|cover - slack - rho|`.
pub fn certificate_residual(cert: &RegionCertificate, rho: &[f64], spec: &SystemSpec) -> f64 {
    let cover = cert.cover(spec);
    let mut worst: f64 = 0.0;
    for q in 0..spec.queues() {
        worst = worst.max((cover[q] - cert.slack[q] - rho[q]).abs());
    }
    // Row sums of phi must be 1 as well.
    for row in &cert.phi {
        worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
    }
    worst
}
