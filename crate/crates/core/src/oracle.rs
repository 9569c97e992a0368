//! Brute-force reference solutions for small all-integer instances, used by
//! the self-test suite and by tests that cross-check the branch-and-bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mip::{MipInstance, Sense, VarKind};

/// Random all-integer instance with `n` variables bounded within `[0, 3]`.
///
/// Rows are built around a random lattice point so the instance is always
/// feasible.
pub fn random_instance(seed: u64, n: usize) -> MipInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = MipInstance::new(format!("oracle-{seed}"), "oracle", seed);
    let mut anchor = Vec::with_capacity(n);
    for j in 0..n {
        let ub = rng.random_range(1..=3) as f64;
        let kind = if ub == 1.0 { VarKind::Binary } else { VarKind::GeneralInteger };
        let obj = rng.random_range(-9..=5) as f64;
        m.add_var(format!("x{j}"), kind, 0.0, ub, obj);
        anchor.push(rng.random_range(0..=ub as i64) as f64);
    }
    let rows = rng.random_range(2..=n.max(2));
    for _ in 0..rows {
        let mut terms = Vec::new();
        for j in 0..n {
            if rng.random_bool(0.5) {
                let a = rng.random_range(-4..=6);
                if a != 0 {
                    terms.push((j, a as f64));
                }
            }
        }
        if terms.is_empty() {
            terms.push((rng.random_range(0..n), 1.0));
        }
        let act: f64 = terms.iter().map(|&(j, a)| a * anchor[j]).sum();
        let (sense, rhs) = match rng.random_range(0..10) {
            0 => (Sense::EQ, act),
            1..=2 => (Sense::GE, act - rng.random_range(0..=3) as f64),
            _ => (Sense::LE, act + rng.random_range(0..=4) as f64),
        };
        m.add_row(terms, sense, rhs);
    }
    m
}

/// Five mixed variables (binary, integer, continuous) and one row of each
/// sense, with real-valued coefficients; a model-check fixture, not always
/// feasible.
pub fn tiny_mixed_instance(seed: u64) -> MipInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = MipInstance::new(format!("tiny-{seed}"), "oracle", seed);
    let kinds = [VarKind::Binary, VarKind::GeneralInteger, VarKind::Continuous, VarKind::GeneralInteger, VarKind::Binary];
    for (j, k) in kinds.iter().enumerate() {
        let ub = if *k == VarKind::Binary { 1.0 } else { rng.random_range(2..6) as f64 };
        m.add_var(format!("x{j}"), *k, 0.0, ub, rng.random_range(-3.0..3.0));
    }
    for s in [Sense::LE, Sense::GE, Sense::EQ] {
        let mut terms = Vec::new();
        for j in 0..5 {
            if rng.random_bool(0.6) {
                terms.push((j, rng.random_range(-2.0..4.0)));
            }
        }
        if terms.is_empty() {
            terms.push((0, 1.0));
        }
        m.add_row(terms, s, rng.random_range(0.0..5.0));
    }
    m
}

/// Exact optimum of an all-integer instance with finite bounds by depth-first
/// enumeration of the lattice, pruning partial assignments whose rows can no
/// longer be satisfied. Ties keep the lexicographically first point.
///
/// Panics if any variable is continuous or unbounded.
pub fn enumerate_optimum(inst: &MipInstance) -> Option<(f64, Vec<f64>)> {
    let n = inst.num_vars();
    assert!(inst.kind.iter().all(|k| k.is_integer()), "enumeration needs all-integer instances");
    assert!(inst.lower.iter().chain(&inst.upper).all(|b| b.is_finite()));
    // suffix_min[i][j] / suffix_max[i][j]: extreme contribution of vars j.. to row i
    let m = inst.num_rows();
    let mut dense = vec![vec![0.0; n]; m];
    for (i, r) in inst.rows.iter().enumerate() {
        for &(j, a) in &r.terms {
            dense[i][j] = a;
        }
    }
    let mut smin = vec![vec![0.0; n + 1]; m];
    let mut smax = vec![vec![0.0; n + 1]; m];
    for i in 0..m {
        for j in (0..n).rev() {
            let a = dense[i][j];
            let (lo, hi) = (a * inst.lower[j], a * inst.upper[j]);
            smin[i][j] = smin[i][j + 1] + lo.min(hi);
            smax[i][j] = smax[i][j + 1] + lo.max(hi);
        }
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut x = vec![0.0; n];
    let mut act = vec![0.0; m];
    fn rec(
        j: usize,
        inst: &MipInstance,
        dense: &[Vec<f64>],
        smin: &[Vec<f64>],
        smax: &[Vec<f64>],
        x: &mut Vec<f64>,
        act: &mut Vec<f64>,
        obj: f64,
        best: &mut Option<(f64, Vec<f64>)>,
    ) {
        const TOL: f64 = 1e-9;
        for (i, r) in inst.rows.iter().enumerate() {
            let (lo, hi) = (act[i] + smin[i][j], act[i] + smax[i][j]);
            let ok = match r.sense {
                Sense::LE => lo <= r.rhs + TOL,
                Sense::GE => hi >= r.rhs - TOL,
                Sense::EQ => lo <= r.rhs + TOL && hi >= r.rhs - TOL,
            };
            if !ok {
                return;
            }
        }
        if j == x.len() {
            if best.as_ref().is_none_or(|b| obj < b.0) {
                *best = Some((obj, x.clone()));
            }
            return;
        }
        let (lo, hi) = (inst.lower[j] as i64, inst.upper[j] as i64);
        for v in lo..=hi {
            let v = v as f64;
            x[j] = v;
            for i in 0..act.len() {
                act[i] += dense[i][j] * v;
            }
            rec(j + 1, inst, dense, smin, smax, x, act, obj + inst.objective[j] * v, best);
            for i in 0..act.len() {
                act[i] -= dense[i][j] * v;
            }
        }
        x[j] = 0.0;
    }
    rec(0, inst, &dense, &smin, &smax, &mut x, &mut act, 0.0, &mut best);
    best
}

/// Every feasible lattice point of a small all-integer instance.
pub fn enumerate_feasible(inst: &MipInstance) -> Vec<Vec<f64>> {
    let n = inst.num_vars();
    let mut out = Vec::new();
    let mut x: Vec<f64> = inst.lower.clone();
    loop {
        if inst.check_feasibility(&x, 1e-9).map(|r| r.feasible).unwrap_or(false) {
            out.push(x.clone());
        }
        let mut j = 0;
        loop {
            if j == n {
                return out;
            }
            if x[j] < inst.upper[j] {
                x[j] += 1.0;
                break;
            }
            x[j] = inst.lower[j];
            j += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pruned_enumeration_matches_plain_enumeration() {
        for seed in 0..20 {
            let inst = random_instance(seed, 5);
            let all = enumerate_feasible(&inst);
            assert!(!all.is_empty(), "generator guarantees a feasible anchor");
            let brute = all
                .iter()
                .map(|x| inst.evaluate_objective(x).unwrap())
                .fold(f64::INFINITY, f64::min);
            let (v, x) = enumerate_optimum(&inst).unwrap();
            assert_eq!(v, brute);
            assert!(inst.check_feasibility(&x, 1e-9).unwrap().feasible);
        }
    }
}
