//! A small dense simplex solver for the standard form
//!
//! ```text
//!     minimize  c'x   subject to   A x = b,  x >= 0
//! ```
//!
//! Phase one drives a full artificial basis to zero, phase two optimizes the
//! real objective. Bland's rule (lowest index enters, lowest-index basic
//! variable leaves on ratio ties) prevents cycling. The instances built by the
//! region module have a few dozen variables at most, so no effort is spent on
//! sparsity or factorization.

/// Feasibility / optimality tolerance shared with the region module.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum LpError {
    Infeasible,
    Unbounded,
    /// Iteration cap hit; with Bland's rule this indicates numerical trouble.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

/// Solves `min c'x : A x = b, x >= 0`. `a` is row-major with `b.len()` rows of
/// `c.len()` entries each.
pub fn solve_standard(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Result<LpSolution, LpError> {
    let m = b.len();
    let n = c.len();
    debug_assert!(a.len() == m && a.iter().all(|row| row.len() == n));

    // Tableau over n structural + m artificial columns, rhs flipped
    // nonnegative so the artificial basis is feasible.
    let width = n + m;
    let mut t: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut rhs: Vec<f64> = Vec::with_capacity(m);
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        let mut row = vec![0.0; width];
        for j in 0..n {
            row[j] = sign * a[i][j];
        }
        row[n + i] = 1.0;
        t.push(row);
        rhs.push(sign * b[i]);
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    // Phase-one reduced costs: cost 1 on artificials, 0 elsewhere.
    let mut cost = vec![0.0; width];
    for j in 0..n {
        cost[j] = -t.iter().map(|row| row[j]).sum::<f64>();
    }
    let mut objective: f64 = -rhs.iter().sum::<f64>();

    let limit = 200 * (width + 10);
    iterate(&mut t, &mut rhs, &mut basis, &mut cost, &mut objective, width, limit)?;
    if -objective > FEASIBILITY_TOLERANCE {
        return Err(LpError::Infeasible);
    }

    // Pivot leftover artificials out of the basis where possible; a row with
    // no structural entry is redundant and can stay (the artificial sits at
    // zero and is barred from re-entering).
    for i in 0..m {
        if basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| t[i][j].abs() > FEASIBILITY_TOLERANCE) {
                pivot(&mut t, &mut rhs, &mut cost, &mut objective, i, j);
                basis[i] = j;
            }
        }
    }

    // Phase two: rebuild reduced costs for the real objective.
    for j in 0..width {
        cost[j] = if j < n { c[j] } else { 0.0 };
    }
    objective = 0.0;
    for i in 0..m {
        if basis[i] < n {
            let cb = c[basis[i]];
            if cb != 0.0 {
                objective -= cb * rhs[i];
                for j in 0..width {
                    cost[j] -= cb * t[i][j];
                }
            }
        }
    }
    // Bar artificial columns from entering.
    for j in n..width {
        if !basis.contains(&j) {
            cost[j] = f64::INFINITY;
        } else {
            cost[j] = 0.0;
        }
    }
    iterate(&mut t, &mut rhs, &mut basis, &mut cost, &mut objective, n, limit)?;

    let mut x = vec![0.0; n];
    for i in 0..m {
        if basis[i] < n {
            x[basis[i]] = rhs[i];
        }
    }
    let objective = x.iter().zip(c).map(|(xi, ci)| xi * ci).sum();
    Ok(LpSolution { x, objective })
}

/// Runs simplex iterations until optimal. `enter_width` restricts which
/// columns may enter (structural only in phase two).
fn iterate(
    t: &mut [Vec<f64>],
    rhs: &mut [f64],
    basis: &mut [usize],
    cost: &mut [f64],
    objective: &mut f64,
    enter_width: usize,
    limit: usize,
) -> Result<(), LpError> {
    for _ in 0..limit {
        // Bland: lowest-index improving column.
        let entering = (0..enter_width).find(|&j| cost[j] < -FEASIBILITY_TOLERANCE);
        let Some(e) = entering else {
            return Ok(());
        };
        // Ratio test; ties resolved toward the lowest basic variable index.
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..t.len() {
            let coeff = t[i][e];
            if coeff > FEASIBILITY_TOLERANCE {
                let ratio = rhs[i] / coeff;
                match leave {
                    None => leave = Some((i, ratio)),
                    Some((li, lr)) => {
                        if ratio < lr - 1e-12
                            || (ratio < lr + 1e-12 && basis[i] < basis[li])
                        {
                            leave = Some((i, ratio));
                        }
                    }
                }
            }
        }
        let Some((row, _)) = leave else {
            return Err(LpError::Unbounded);
        };
        pivot(t, rhs, cost, objective, row, e);
        basis[row] = e;
    }
    Err(LpError::Stalled)
}

fn pivot(
    t: &mut [Vec<f64>],
    rhs: &mut [f64],
    cost: &mut [f64],
    objective: &mut f64,
    row: usize,
    col: usize,
) {
    let p = t[row][col];
    for v in t[row].iter_mut() {
        *v /= p;
    }
    rhs[row] /= p;
    for i in 0..t.len() {
        if i != row {
            let f = t[i][col];
            if f != 0.0 {
                for j in 0..t[row].len() {
                    let delta = f * t[row][j];
                    t[i][j] -= delta;
                }
                rhs[i] -= f * rhs[row];
                if rhs[i] < 0.0 && rhs[i] > -1e-12 {
                    rhs[i] = 0.0;
                }
            }
        }
    }
    let f = cost[col];
    if f != 0.0 {
        for j in 0..t[row].len() {
            if cost[j].is_finite() {
                cost[j] -= f * t[row][j];
            }
        }
        *objective -= f * rhs[row];
    }
}
