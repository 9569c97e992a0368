//! Built-in oracle suites: gradient check, enumeration equivalence of the
//! branch-and-bound, and soundness of the search neighborhoods.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gat::{bce_loss, forward, loss_and_grad, GatDims, GatParams, Prediction};
use crate::graph::encode_with_identity;
use crate::milp::{solve_mip, SolveStatus, SolverConfig};
use crate::mip::MipInstance;
use crate::oracle::{enumerate_optimum, random_instance, tiny_mixed_instance};
use crate::pas::{run_pas_scored, zero_eligible, PasSettings, PasVariant, ScoredInstance};
use crate::util::derive_seed;

const EXACT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, failures: Vec<String>, ok: String) -> SuiteOutcome {
    match failures.first() {
        None => SuiteOutcome { name, passed: true, detail: ok },
        Some(f) => SuiteOutcome { name, passed: false, detail: format!("{} failure(s), first: {f}", failures.len()) },
    }
}

/// Exhaustive solver settings for tiny instances.
pub fn exact_config() -> SolverConfig {
    SolverConfig { time_limit: 1e6, node_limit: 10_000_000, ..SolverConfig::default() }
}

/// Largest relative error between analytic and central-difference
/// gradients (step `1e-4`) over every coordinate with `|g| > 1e-8`, on a
/// perturbed L=4, H=2 model over a 5-variable, 3-constraint instance.
pub fn gradient_error(seed: u64) -> f64 {
    let inst = tiny_mixed_instance(seed);
    let g = encode_with_identity(&inst, 3).expect("encodes");
    let mut params = GatParams::init(GatDims::for_graphs(4, 2, 3), seed).expect("valid dims");
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "selftest-grad", 0));
    for v in &mut params.values {
        *v += rng.random_range(-0.3..0.3);
    }
    let labels: Vec<Vec<u8>> = (0..2).map(|_| (0..4).map(|_| rng.random_range(0..2u8)).collect()).collect();
    let (_, an) = loss_and_grad(&params, &g, &labels).expect("gradient");
    let h = 1e-4;
    let mut worst = 0.0f64;
    for i in 0..params.values.len() {
        if an.values[i].abs() <= 1e-8 {
            continue;
        }
        let mut p = params.clone();
        p.values[i] += h;
        let up = bce_loss(&forward(&p, &g).expect("forward"), &labels).expect("loss");
        p.values[i] -= 2.0 * h;
        let dn = bce_loss(&forward(&p, &g).expect("forward"), &labels).expect("loss");
        let fd = (up - dn) / (2.0 * h);
        worst = worst.max((an.values[i] - fd).abs() / an.values[i].abs().max(fd.abs()));
    }
    worst
}

pub fn gradient_suite(seeds: u64) -> SuiteOutcome {
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for s in 0..seeds {
        let e = gradient_error(s);
        worst = worst.max(e);
        if !(e < 1e-4) {
            failures.push(format!("seed {s}: relative error {e:.2e}"));
        }
    }
    outcome("gradient", failures, format!("{seeds} models, max relative error {worst:.2e}"))
}

/// Compares the branch-and-bound optimum with enumeration on `count`
/// random instances with 4 to 12 integer variables in `[0, 3]`.
pub fn enumeration_suite(count: u64, seed: u64) -> SuiteOutcome {
    let cfg = exact_config();
    let mut failures = Vec::new();
    for k in 0..count {
        let n = 4 + (k as usize % 9);
        let inst = random_instance(derive_seed(seed, "selftest-enum", k), n);
        let want = enumerate_optimum(&inst).map(|(v, _)| v);
        let got = match solve_mip(&inst, &cfg) {
            Ok(r) if r.status == SolveStatus::Optimal || r.status == SolveStatus::Infeasible => r.best_objective(),
            Ok(r) => {
                failures.push(format!("{}: stopped with {:?}", inst.name, r.status));
                continue;
            }
            Err(e) => {
                failures.push(format!("{}: {e}", inst.name));
                continue;
            }
        };
        let same = match (want, got) {
            (Some(a), Some(b)) => (a - b).abs() <= EXACT_TOL,
            (None, None) => true,
            _ => false,
        };
        if !same {
            failures.push(format!("{}: solver {got:?}, enumeration {want:?}", inst.name));
        }
    }
    outcome("enumeration", failures, format!("{count} instances match enumeration"))
}

fn scored(inst: &MipInstance, scores: Vec<f64>) -> ScoredInstance {
    let valid = inst.kind.iter().map(|k| k.is_integer()).collect();
    ScoredInstance { prediction: Prediction { scores, valid }, inference_work: 0.0 }
}

/// Neighborhood optimum, `None` when the neighborhood is infeasible.
/// Checks every returned incumbent against the original instance.
pub fn neighborhood_optimum(inst: &MipInstance, sc: &ScoredInstance, k0: usize, delta: usize) -> Result<Option<f64>, String> {
    let cfg = exact_config();
    let s = PasSettings { variant: PasVariant::IdPas, k0, k1: 0, delta };
    let r = run_pas_scored(inst, sc, &s, &cfg).map_err(|e| e.to_string())?;
    if r.result.status != SolveStatus::Optimal && r.result.status != SolveStatus::Infeasible {
        return Err(format!("sub-MIP stopped with {:?}", r.result.status));
    }
    for sol in r.result.pool.iter().chain(&r.result.best_solution) {
        let rep = inst.check_feasibility(&sol.values, cfg.feas_tol).map_err(|e| e.to_string())?;
        if !rep.feasible {
            return Err(format!("infeasible incumbent (row violation {:e})", rep.max_row_violation));
        }
    }
    Ok(r.result.best_objective())
}

/// On `count` enumerable instances: incumbents are feasible, `delta = |X0|`
/// and the oracle zero set with `delta = 0` both reproduce the optimum, and
/// the neighborhood optimum does not increase with `delta`.
pub fn neighborhood_suite(count: u64, seed: u64) -> SuiteOutcome {
    let mut failures = Vec::new();
    for k in 0..count {
        let n = 5 + (k as usize % 6);
        let inst = random_instance(derive_seed(seed, "selftest-nbhd", k), n);
        if let Err(e) = check_neighborhoods(&inst, derive_seed(seed, "selftest-scores", k)) {
            failures.push(format!("{}: {e}", inst.name));
        }
    }
    outcome("neighborhood", failures, format!("{count} instances sound and exact"))
}

pub fn check_neighborhoods(inst: &MipInstance, score_seed: u64) -> Result<(), String> {
    let (opt, x) = enumerate_optimum(inst).ok_or("oracle instance is infeasible")?;
    let elig = zero_eligible(inst);
    let n_elig = elig.iter().filter(|b| **b).count();
    if n_elig == 0 {
        return Ok(());
    }
    let eq = |v: Option<f64>, what: &str| match v {
        Some(v) if (v - opt).abs() <= EXACT_TOL => Ok(()),
        other => Err(format!("{what}: {other:?} vs optimum {opt}")),
    };

    // oracle scores: zeros of the optimum score 0, the rest 1
    let oracle: Vec<f64> = x.iter().map(|v| if v.abs() < 0.5 { 0.0 } else { 1.0 }).collect();
    let zeros = (0..inst.num_vars()).filter(|&i| elig[i] && oracle[i] == 0.0).count();
    if zeros > 0 {
        eq(neighborhood_optimum(inst, &scored(inst, oracle), zeros, 0)?, "oracle X0 with delta 0")?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(score_seed);
    let random: Vec<f64> = (0..inst.num_vars()).map(|_| rng.random_range(0.0..1.0)).collect();
    let sc = scored(inst, random);
    let mut prev = f64::INFINITY;
    for delta in 0..=n_elig {
        let v = neighborhood_optimum(inst, &sc, n_elig, delta)?;
        let val = v.unwrap_or(f64::INFINITY);
        if val > prev + EXACT_TOL {
            return Err(format!("optimum rose from {prev} to {val} at delta {delta}"));
        }
        prev = val;
        if delta == n_elig {
            eq(v, "delta = |X0|")?;
        }
    }
    Ok(())
}

/// All suites with the sizes used by the `selftest` command.
pub fn run_all() -> Vec<SuiteOutcome> {
    vec![gradient_suite(3), enumeration_suite(50, 0), neighborhood_suite(20, 0)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass_at_small_size() {
        assert!(gradient_suite(1).passed);
        let e = enumeration_suite(10, 7);
        assert!(e.passed, "{}", e.detail);
        let n = neighborhood_suite(4, 7);
        assert!(n.passed, "{}", n.detail);
    }
}
