//! Stateful cursors over environment traces.
//!
//! A cursor exposes the active environment and the absolute time of the next
//! switch, and is advanced one switch at a time by the simulation loop.
//! Cursors are cheap to clone, which lets the environment-aware adversarial
//! traffic source run an identical replica of the engine's cursor instead of
//! coupling to engine state.

use crate::model::{EnvTraceKind, EnvironmentTrace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Mixed into the run seed so the environment stream and the traffic stream
/// draw from unrelated generators.
pub(crate) const ENV_SEED_TAG: u64 = 0x656e_7674_7261_6365;

#[derive(Debug, Clone)]
enum CursorKind {
    /// Never switches (single state, or a degenerate trace).
    Constant,
    /// Deterministic cycle: state `e` holds `pi[e] * cycle` starting at
    /// cumulative offset `prefix[e] * cycle` into each cycle. Switch times
    /// are recomputed from the cycle index so no drift accumulates.
    Periodic { cycle: f64, prefix: Vec<f64>, lap: u64 },
    /// Round-robin with exponential holding times of mean `pi[e] * mean`.
    RandomHolding {
        mean: f64,
        rng: ChaCha8Rng,
        next_switch: f64,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct EnvCursor {
    n_envs: usize,
    pi: Vec<f64>,
    current: usize,
    kind: CursorKind,
}

impl EnvCursor {
    pub fn new(trace: &EnvironmentTrace, seed: u64) -> Self {
        let n_envs = trace.pi.len();
        let pi = trace.pi.clone();
        let kind = if n_envs <= 1 {
            CursorKind::Constant
        } else {
            match trace.kind {
                EnvTraceKind::Periodic { cycle_length } => {
                    let mut prefix = Vec::with_capacity(n_envs + 1);
                    let mut acc = 0.0;
                    prefix.push(0.0);
                    for &p in &pi {
                        acc += p;
                        prefix.push(acc);
                    }
                    // Close the cycle exactly even when pi sums to 1 - ulp.
                    prefix[n_envs] = 1.0;
                    CursorKind::Periodic {
                        cycle: cycle_length,
                        prefix,
                        lap: 0,
                    }
                }
                EnvTraceKind::RandomHolding { mean_cycle } => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ENV_SEED_TAG);
                    let first = exp_sample(&mut rng, pi[0] * mean_cycle);
                    CursorKind::RandomHolding {
                        mean: mean_cycle,
                        rng,
                        next_switch: first,
                    }
                }
            }
        };
        EnvCursor {
            n_envs,
            pi,
            current: 0,
            kind,
        }
    }

    /// 0-based index of the active environment.
    pub fn current(&self) -> usize {
        self.current
    }

    /// Absolute time of the next switch; infinite when none is coming.
    pub fn next_switch(&self) -> f64 {
        match &self.kind {
            CursorKind::Constant => f64::INFINITY,
            CursorKind::Periodic { cycle, prefix, lap } => {
                (*lap as f64 + prefix[self.current + 1]) * cycle
            }
            CursorKind::RandomHolding { next_switch, .. } => *next_switch,
        }
    }

    /// Moves past the pending switch into the next environment.
    pub fn advance(&mut self) {
        match &mut self.kind {
            CursorKind::Constant => {}
            CursorKind::Periodic { lap, .. } => {
                if self.current + 1 == self.n_envs {
                    self.current = 0;
                    *lap += 1;
                } else {
                    self.current += 1;
                }
            }
            CursorKind::RandomHolding {
                mean,
                rng,
                next_switch,
            } => {
                self.current = (self.current + 1) % self.n_envs;
                *next_switch += exp_sample(rng, self.pi[self.current] * *mean);
            }
        }
    }
}

fn exp_sample(rng: &mut ChaCha8Rng, mean: f64) -> f64 {
    let u: f64 = rng.gen::<f64>();
    -mean * (1.0 - u).ln()
}
