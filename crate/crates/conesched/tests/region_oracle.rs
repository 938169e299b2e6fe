//! Cross-checks the LP region operations against an independent brute-force
//! oracle, and freezes the known values of the shipped example systems.
//!
//! The oracle here is intentionally naive: it enumerates per-environment
//! mixing weights on a fixed simplex grid, combines environments by their
//! proportions, and asks whether any combination covers the load. It shares
//! no code with the LP path.

use conesched::model::{EnvironmentSpec, ServiceVector, SystemSpec};
use conesched::region::{
    boundary_scale, certificate_residual, margin, membership, min_drain_deficit,
    region_polygon_2d,
};
use conesched::repro::{balanced_system, blowup_example, skewed_system};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRID: usize = 50; // weight step 0.02
const BAND: f64 = 0.03; // skip loads this close to the boundary

/// All ways to split `GRID` units across `parts` weights.
fn compositions(parts: usize) -> Vec<Vec<usize>> {
    fn rec(parts: usize, left: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts == 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for take in 0..=left {
            prefix.push(take);
            rec(parts - 1, left - take, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(parts, GRID, &mut Vec::new(), &mut out);
    out
}

/// Per-environment pi-weighted cover vectors for every grid mix.
fn env_covers(spec: &SystemSpec, env: usize) -> Vec<Vec<f64>> {
    let services = spec.env(env).services();
    let pi = spec.pi()[env];
    compositions(services.len())
        .into_iter()
        .map(|mix| {
            let mut cover = vec![0.0; spec.queues()];
            for (i, &units) in mix.iter().enumerate() {
                let w = pi * units as f64 / GRID as f64;
                for (q, c) in cover.iter_mut().enumerate() {
                    *c += w * services[i].rates()[q];
                }
            }
            cover
        })
        .collect()
}

/// True when some grid combination of per-environment mixes covers `rho`.
/// No pruning, no shortcuts: every combination is tried.
fn grid_member(spec: &SystemSpec, rho: &[f64]) -> bool {
    let mut partials: Vec<Vec<f64>> = vec![vec![0.0; spec.queues()]];
    for env in 0..spec.environments().len() {
        let covers = env_covers(spec, env);
        let mut next = Vec::with_capacity(partials.len() * covers.len());
        for p in &partials {
            for c in &covers {
                next.push(p.iter().zip(c).map(|(a, b)| a + b).collect());
            }
        }
        partials = next;
    }
    partials
        .iter()
        .any(|c| c.iter().zip(rho).all(|(ci, ri)| *ci >= ri - 1e-9))
}

fn sv(v: &[f64]) -> ServiceVector {
    ServiceVector::new(v.to_vec()).unwrap()
}

/// A small random instance: 2 queues, 1-2 environments, up to 3 integer
/// service vectors each. Returned uncompleted; the closure only adds
/// dominated vectors, so both sides see the same region.
fn random_instance(rng: &mut ChaCha8Rng) -> SystemSpec {
    let ne = rng.gen_range(1..=2);
    let pis = if ne == 1 {
        vec![1.0]
    } else {
        let p = [0.25, 0.5, 0.75][rng.gen_range(0..3)];
        vec![p, 1.0 - p]
    };
    let envs = (0..ne)
        .map(|e| {
            let k = rng.gen_range(1..=3);
            let services = (0..k)
                .map(|_| {
                    sv(&[
                        rng.gen_range(-1..=2) as f64,
                        rng.gen_range(-1..=2) as f64,
                    ])
                })
                .collect();
            EnvironmentSpec::new(e + 1, services)
        })
        .collect();
    SystemSpec::new(2, envs, pis).unwrap()
}

#[test]
fn lp_membership_agrees_with_bruteforce_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x09AC1E);
    let mut checked = 0;
    let mut skipped = 0;
    for _ in 0..40 {
        let raw = random_instance(&mut rng);
        let completed = raw.clone().completed(64).unwrap();
        for _ in 0..4 {
            let rho = [rng.gen_range(0.0..2.2), rng.gen_range(0.0..2.2)];
            let m = margin(&rho, &completed).unwrap();
            if m.abs() <= BAND {
                skipped += 1;
                continue;
            }
            let lp = membership(&rho, &completed).unwrap().member;
            let grid = grid_member(&raw, &rho);
            assert_eq!(
                lp, grid,
                "disagreement at rho {rho:?} (margin {m}) on {raw:?}"
            );
            checked += 1;
        }
    }
    assert!(checked >= 100, "only {checked} informative checks ({skipped} in band)");
}

#[test]
fn balanced_system_frozen_values() {
    let spec = balanced_system();
    assert!((boundary_scale(&[1.0, 0.0], &spec).unwrap() - 1.0).abs() <= 1e-9);
    assert!((boundary_scale(&[0.0, 1.0], &spec).unwrap() - 1.0).abs() <= 1e-9);
    assert!((boundary_scale(&[1.0, 1.0], &spec).unwrap() - 0.75).abs() <= 1e-9);
    assert!(membership(&[1.0, 0.5], &spec).unwrap().member);
    assert!(!membership(&[1.0, 0.6], &spec).unwrap().member);

    // The whole boundary polygon: corners of {rho_1 <= 1, rho_1+rho_2 <= 1.5,
    // rho_2 <= 1} swept from (1,0) to (0,1).
    let poly = region_polygon_2d(&spec, 5).unwrap();
    let expected = [[1.0, 0.0], [1.0, 0.41421356237309515], [0.75, 0.75]];
    for (got, want) in poly.iter().zip(expected.iter()) {
        for q in 0..2 {
            assert!((got[q] - want[q]).abs() <= 1e-9, "{got:?} vs {want:?}");
        }
    }
    // Symmetric system: the sweep is symmetric around 45 degrees.
    for (lo, hi) in poly.iter().zip(poly.iter().rev()) {
        assert!((lo[0] - hi[1]).abs() <= 1e-9);
    }
}

#[test]
fn skewed_system_frozen_values() {
    let spec = skewed_system();
    assert!((boundary_scale(&[0.0, 1.0], &spec).unwrap() - 0.5).abs() <= 1e-9);
    assert!((boundary_scale(&[1.0, 0.0], &spec).unwrap() - 1.0).abs() <= 1e-9);
    assert!(membership(&[1.0, 0.5], &spec).unwrap().member);
    assert!(!membership(&[0.9, 0.6], &spec).unwrap().member);
}

#[test]
fn restricted_set_deficit_frozen_value() {
    // Dropping the joint vector from the blowup system leaves only the
    // split pair; at load (0.7, 0.7) each queue is short by 0.2 under the
    // best split, and the LP finds exactly that.
    let spec = SystemSpec::new(
        2,
        vec![EnvironmentSpec::new(
            1,
            vec![sv(&[1.0, 0.0]), sv(&[0.0, 1.0]), sv(&[0.0, 0.0])],
        )],
        vec![1.0],
    )
    .unwrap()
    .completed(64)
    .unwrap();
    let d = min_drain_deficit(&[0.7, 0.7], &spec).unwrap();
    assert!((d - 0.2).abs() <= 1e-9, "deficit {d}");
    assert!(!membership(&[0.7, 0.7], &spec).unwrap().member);

    // With the joint vector available the same load is covered.
    let (full, _) = blowup_example();
    assert!(membership(&[0.7, 0.7], &full).unwrap().member);
    assert!((min_drain_deficit(&[0.7, 0.7], &full).unwrap()).abs() <= 1e-9);
}

#[test]
fn certificates_replay_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xCE87);
    for _ in 0..60 {
        let spec = random_instance(&mut rng).completed(64).unwrap();
        let rho = [rng.gen_range(0.0..1.5), rng.gen_range(0.0..1.5)];
        let cert = membership(&rho, &spec).unwrap();
        // The certified mix must reproduce rho + slack exactly (up to fp).
        assert!(certificate_residual(&cert, &rho, &spec) <= 1e-7);
        for (e, phi) in cert.phi.iter().enumerate() {
            let sum: f64 = phi.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-7, "phi row {e} sums to {sum}");
            assert!(phi.iter().all(|&w| w >= -1e-12));
        }
        if cert.member {
            assert!(cert.slack.iter().all(|&s| s >= -1e-9));
            assert!(min_drain_deficit(&rho, &spec).unwrap() <= 1e-9);
        } else {
            let d = cert.deficit.expect("outside certificates carry a deficit");
            assert!(d > 0.0);
            assert!((margin(&rho, &spec).unwrap() + d).abs() <= 1e-7);
        }
    }
}

#[test]
fn boundary_scale_is_the_membership_threshold() {
    let spec = balanced_system();
    let mut rng = ChaCha8Rng::seed_from_u64(0xB0);
    for _ in 0..25 {
        let dir = [rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0)];
        let theta = boundary_scale(&dir, &spec).unwrap();
        let inside: Vec<f64> = dir.iter().map(|d| 0.999 * theta * d).collect();
        let outside: Vec<f64> = dir.iter().map(|d| 1.001 * theta * d).collect();
        assert!(membership(&inside, &spec).unwrap().member);
        assert!(!membership(&outside, &spec).unwrap().member);
    }
}
