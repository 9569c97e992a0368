//! Acceptance suite: one pass/fail line per criterion.
//!
//! Runs the full desk pipeline (about 1.5 to 2 hours on one core), so it
//! uses its own harness and prints its verdicts unconditionally.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use common::permute;
use idpas::dataset::{load_dataset, Split};
use idpas::eval::{primal_gap, primal_integral, wilcoxon_signed_rank, wilcoxon_with};
use idpas::gat::{adam_step, bce_loss, forward, loss_and_grad, GatDims, GatParams, Prediction, TrainState};
use idpas::graph::{encode_bipartite, encode_with_identity};
use idpas::milp::{solve_mip, SolveStatus, SolverConfig};
use idpas::mip::{MipInstance, Sense, VarKind};
use idpas::oracle::{random_instance, tiny_mixed_instance};
use idpas::pas::{run_pas_scored, zero_eligible, PasSettings, PasVariant, ScoredInstance};
use idpas::pipeline::{self, RunConfig, ID_PAS, PLAIN};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

/// Brute-force optimum over the integer lattice of an all-integer instance
/// with bounds in [0, 3]. Ties keep the first point in odometer order.
fn brute_force(inst: &MipInstance) -> Option<(f64, Vec<f64>)> {
    let n = inst.num_vars();
    let mut x: Vec<f64> = inst.lower.clone();
    let mut best: Option<(f64, Vec<f64>)> = None;
    loop {
        let feasible = inst.rows.iter().all(|r| {
            let a: f64 = r.terms.iter().map(|&(j, c)| c * x[j]).sum();
            match r.sense {
                Sense::LE => a <= r.rhs + 1e-9,
                Sense::GE => a >= r.rhs - 1e-9,
                Sense::EQ => (a - r.rhs).abs() <= 1e-9,
            }
        });
        if feasible {
            let obj: f64 = inst.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
            if best.as_ref().is_none_or(|b| obj < b.0 - 1e-12) {
                best = Some((obj, x.clone()));
            }
        }
        let mut j = 0;
        loop {
            if j == n {
                return best;
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

fn exact() -> SolverConfig {
    SolverConfig { time_limit: 1e6, node_limit: 50_000_000, ..SolverConfig::default() }
}

// 1 -------------------------------------------------------------------------

fn solver_correctness() -> Check {
    let start = Instant::now();
    for k in 0..50u64 {
        let n = 4 + (k as usize % 9);
        let inst = random_instance(90_000 + k, n);
        ensure(inst.lower.iter().chain(&inst.upper).all(|b| (0.0..=3.0).contains(b)), "bounds outside [0, 3]")?;
        let (want, _) = brute_force(&inst).ok_or(format!("instance {k} infeasible"))?;
        let r = solve_mip(&inst, &exact()).map_err(|e| e.to_string())?;
        ensure(r.status == SolveStatus::Optimal, format!("instance {k}: status {:?}", r.status))?;
        let got = r.best_objective().unwrap();
        ensure((got - want).abs() <= 1e-6, format!("instance {k} (n={n}): solver {got}, enumeration {want}"))?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, format!("took {secs:.1} s"))?;
    Ok(format!("50/50 optima equal enumeration, {secs:.1} s"))
}

// 2 -------------------------------------------------------------------------

fn gradient_fidelity() -> Check {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut worst_at = 0.0f64;
    let mut worst_abs = 0.0f64;
    let mut largest_over = 0.0f64;
    let mut over = 0;
    let mut checked = 0;
    for seed in 0..3u64 {
        let inst = tiny_mixed_instance(seed + 40);
        ensure(inst.num_vars() == 5 && inst.num_rows() == 3, "fixture size")?;
        let g = encode_bipartite(&inst);
        let params = GatParams::init(GatDims::for_graphs(4, 2, 0), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_int = inst.kind.iter().filter(|k| k.is_integer()).count();
        let labels: Vec<Vec<u8>> = (0..3).map(|_| (0..n_int).map(|_| rng.random_range(0..2)).collect()).collect();
        let loss = |p: &GatParams| bce_loss(&forward(p, &g).unwrap(), &labels).unwrap();
        let (_, an) = loss_and_grad(&params, &g, &labels).unwrap();
        for i in 0..params.values.len() {
            let a = an.values[i];
            if a.abs() <= 1e-8 {
                continue;
            }
            let central = |h: f64| {
                let mut p = params.clone();
                p.values[i] += h;
                let up = loss(&p);
                p.values[i] -= 2.0 * h;
                (up - loss(&p)) / (2.0 * h)
            };
            let fd = central(1e-4);
            let rel = (a - fd).abs() / a.abs().max(fd.abs());
            if rel >= 1e-4 {
                over += 1;
                largest_over = largest_over.max(a.abs());
            }
            worst_abs = worst_abs.max((a - fd).abs());
            if rel > worst {
                worst = rel;
                worst_at = a.abs();
            }
            checked += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "{checked} coordinates, max relative error {worst:.2e} at |g| = {worst_at:.1e}, max absolute error {worst_abs:.1e}, \
         {over} at or above 1e-4 (largest |g| among them {largest_over:.1e}); {secs:.1} s"
    );
    ensure(worst < 1e-4, detail.clone())?;
    ensure(secs < 30.0, detail.clone())?;
    Ok(detail)
}

// 3 -------------------------------------------------------------------------

fn separation_instance() -> MipInstance {
    let mut m = MipInstance::new("sep", "acceptance", 0);
    let costs = [3.0, -1.0, 2.5, -2.0, 1.0, -3.5, 0.5, -0.5];
    for (j, c) in costs.iter().enumerate() {
        let kind = if j % 2 == 0 { VarKind::Binary } else { VarKind::GeneralInteger };
        let ub = if kind == VarKind::Binary { 1.0 } else { 2.0 + j as f64 };
        m.add_var(format!("x{j}"), kind, 0.0, ub, *c);
    }
    m.add_row((0..8).map(|j| (j, 1.0 + j as f64)).collect(), Sense::LE, 20.0);
    m.add_row(vec![(0, 1.0), (3, 2.0), (5, -1.0)], Sense::GE, 1.0);
    m.add_row(vec![(1, 1.0), (2, 1.0), (6, 3.0), (7, 1.0)], Sense::EQ, 4.0);
    m.add_row(vec![(4, 2.0), (5, 1.0), (7, -1.0)], Sense::LE, 6.0);
    m
}

fn joint_loss(p: &GatParams, graphs: &[idpas::graph::BipartiteGraph], labels: &[Vec<Vec<u8>>]) -> f64 {
    graphs.iter().zip(labels).map(|(g, l)| bce_loss(&forward(p, g).unwrap(), l).unwrap()).sum()
}

fn train_jointly(dims: GatDims, graphs: &[idpas::graph::BipartiteGraph], labels: &[Vec<Vec<u8>>], steps: usize) -> (f64, f64, GatParams) {
    let mut params = GatParams::init(dims, 17).unwrap();
    let initial = joint_loss(&params, graphs, labels);
    let mut state = TrainState::new(&params, 17);
    let mut best = initial;
    for _ in 0..steps {
        let mut total = GatParams::zeros_like(&params);
        for (g, l) in graphs.iter().zip(labels) {
            let (_, gr) = loss_and_grad(&params, g, l).unwrap();
            for (t, v) in total.values.iter_mut().zip(&gr.values) {
                *t += v;
            }
        }
        params = adam_step(&params, &total, &mut state, 5e-3).unwrap();
        best = best.min(joint_loss(&params, graphs, labels));
    }
    (initial, best, params)
}

fn max_matched_diff(a: &Prediction, b: &Prediction, perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(k, &old)| (a.scores[old] - b.scores[k]).abs()).fold(0.0, f64::max)
}

fn identity_separation() -> Check {
    let start = Instant::now();
    let a = separation_instance();
    let n = a.num_vars();
    let perm: Vec<usize> = (0..n).rev().collect();
    let b = permute(&a, &perm);
    let y_a: Vec<u8> = vec![1, 0, 0, 1, 1, 0, 1, 0];
    // every permutation-matched pair carries opposite labels
    let y_b: Vec<u8> = perm.iter().map(|&old| 1 - y_a[old]).collect();
    let labels = vec![vec![y_a], vec![y_b]];
    let bound = 0.6 * n as f64 * std::f64::consts::LN_2;

    let plain = [encode_bipartite(&a), encode_bipartite(&b)];
    let dims0 = GatDims::for_graphs(16, 4, 0);
    let p0 = GatParams::init(dims0, 17).unwrap();
    let d0 = max_matched_diff(&forward(&p0, &plain[0]).unwrap(), &forward(&p0, &plain[1]).unwrap(), &perm);
    ensure(d0 <= 1e-6, format!("scores not permutation-matched at init: {d0:e}"))?;
    let (_, best0, trained0) = train_jointly(dims0, &plain, &labels, 2000);
    let d1 = max_matched_diff(&forward(&trained0, &plain[0]).unwrap(), &forward(&trained0, &plain[1]).unwrap(), &perm);
    ensure(d1 <= 1e-6, format!("scores not permutation-matched after training: {d1:e}"))?;
    ensure(best0 >= bound, format!("no-identity loss {best0:.4} fell below {bound:.4}"))?;

    let ident = [encode_with_identity(&a, 4).unwrap(), encode_with_identity(&b, 4).unwrap()];
    let (init4, best4, _) = train_jointly(GatDims::for_graphs(16, 4, 4), &ident, &labels, 2000);
    ensure(best4 < 0.1 * init4, format!("identity loss {best4:.4} not below 0.1 x {init4:.4}"))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 300.0, format!("took {secs:.1} s"))?;
    Ok(format!(
        "matched diff {:.1e}; without bits min loss {best0:.3} >= {bound:.3}; with B=4 {init4:.3} -> {best4:.4}; {secs:.1} s",
        d0.max(d1)
    ))
}

// 4 -------------------------------------------------------------------------

fn sub_optimum(inst: &MipInstance, scores: &[f64], k0: usize, delta: usize) -> Result<Option<f64>, String> {
    let sc = ScoredInstance {
        prediction: Prediction { scores: scores.to_vec(), valid: inst.kind.iter().map(|k| k.is_integer()).collect() },
        inference_work: 0.0,
    };
    let s = PasSettings { variant: PasVariant::IdPas, k0, k1: 0, delta };
    let r = run_pas_scored(inst, &sc, &s, &exact()).map_err(|e| e.to_string())?;
    ensure(matches!(r.result.status, SolveStatus::Optimal | SolveStatus::Infeasible), format!("status {:?}", r.result.status))?;
    for sol in r.result.pool.iter().chain(&r.result.best_solution) {
        ensure(sol.values.len() == inst.num_vars(), "projection length")?;
        let rep = inst.check_feasibility(&sol.values, 1e-6).unwrap();
        ensure(rep.feasible, format!("incumbent infeasible for the original instance (k0 {k0}, delta {delta})"))?;
    }
    Ok(r.result.best_objective())
}

fn neighborhood_soundness() -> Check {
    let mut runs = 0;
    for k in 0..20u64 {
        let inst = random_instance(70_000 + k, 5 + (k as usize % 5));
        let (opt, x) = brute_force(&inst).ok_or("oracle instance infeasible")?;
        let elig = zero_eligible(&inst);
        let ne = elig.iter().filter(|b| **b).count();
        let tag = |m: &str| format!("instance {k}: {m}");

        let mut rng = ChaCha8Rng::seed_from_u64(k);
        let scores: Vec<f64> = (0..inst.num_vars()).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut prev = f64::INFINITY;
        for delta in 0..=ne {
            let v = sub_optimum(&inst, &scores, ne, delta).map_err(|e| tag(&e))?.unwrap_or(f64::INFINITY);
            ensure(v <= prev + 1e-6, tag(&format!("optimum rose from {prev} to {v} at delta {delta}")))?;
            ensure(v >= opt - 1e-6, tag("restriction beat the optimum"))?;
            prev = v;
            runs += 1;
        }
        ensure((prev - opt).abs() <= 1e-6, tag(&format!("delta = |X0| gives {prev}, optimum {opt}")))?;

        let zero_scores: Vec<f64> = x.iter().map(|v| if *v == 0.0 { 0.0 } else { 1.0 }).collect();
        let zeros = (0..inst.num_vars()).filter(|&i| elig[i] && x[i] == 0.0).count();
        let v = sub_optimum(&inst, &zero_scores, zeros, 0).map_err(|e| tag(&e))?;
        ensure(v.is_some_and(|v| (v - opt).abs() <= 1e-6), tag(&format!("oracle X0 with delta 0 gives {v:?}, optimum {opt}")))?;
        runs += 1;
    }
    Ok(format!("20 instances, {runs} sub-MIPs: feasible, exact at delta = |X0| and oracle delta = 0, monotone"))
}

// 5 -------------------------------------------------------------------------

fn metric_correctness() -> Check {
    ensure(primal_gap(Some(100.0), 100.0) == 0.0, "PG(100, 100)")?;
    ensure(primal_gap(Some(0.5), 0.0) == 0.5 / 1e-8, "raw PG(0.5, 0)")?;
    ensure(primal_gap(Some(0.5), 0.0).min(1.0) == 1.0, "capped PG(0.5, 0)")?;
    ensure((primal_gap(Some(103.0), 100.0) - 0.03).abs() < 1e-15, "PG(103, 100)")?;
    ensure(primal_integral(&[], 100.0, 10.0).unwrap() == 10.0, "PI of empty trace")?;
    ensure(primal_integral(&[(0.0, 100.0)], 100.0, 10.0).unwrap() == 0.0, "PI of optimal start")?;
    // PG 0.5 from t = 2 on: 2 * 1 + 8 * 0.5
    ensure(primal_integral(&[(2.0, 150.0)], 100.0, 10.0).unwrap() == 2.0 * 1.0 + 8.0 * 0.5, "PI step example")?;
    ensure(primal_integral(&[(3.0, 1.0), (2.0, 1.0)], 1.0, 10.0).is_err(), "unsorted trace accepted")?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for t in 0..100 {
        let mut trace: Vec<(f64, f64)> = (0..rng.random_range(0..6)).map(|_| (rng.random_range(0.0..5.0), rng.random_range(90.0..200.0))).collect();
        trace.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut last = 0.0;
        for k in 0..=10 {
            let pi = primal_integral(&trace, 90.0, 5.0 + k as f64).unwrap();
            ensure(pi >= last - 1e-12 && pi <= 5.0 + k as f64 + 1e-12, format!("trace {t}: PI not monotone in T"))?;
            last = pi;
        }
    }

    // all 32 sign patterns; W+ = 15 is reached only by the all-positive one
    let w = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 5]).unwrap();
    ensure(w.exact && (w.p - 2.0 / 32.0).abs() < 1e-15, format!("n=5 exact p {}", w.p))?;
    ensure(wilcoxon_signed_rank(&[1.0; 6], &[1.0; 6]).unwrap().p == 1.0, "a = b")?;

    let pairs: Vec<(f64, f64)> = (0..30).map(|_| {
        let a = rng.random_range(0.0..1.0);
        (a + 0.5 + rng.random_range(-1.0..1.0), a)
    }).collect();
    let mut worst = 0.0f64;
    for s in 0..16 {
        let mut idx: Vec<usize> = (0..30).collect();
        for i in 0..15 {
            let j = rng.random_range(i..30);
            idx.swap(i, j);
        }
        let sub = if s == 0 { (0..15).collect() } else { idx[..15].to_vec() };
        let a: Vec<f64> = sub.iter().map(|&i| pairs[i].0).collect();
        let b: Vec<f64> = sub.iter().map(|&i| pairs[i].1).collect();
        let ex = wilcoxon_with(&a, &b, 20).unwrap();
        let ap = wilcoxon_with(&a, &b, 0).unwrap();
        ensure(ex.exact && !ap.exact, "test modes")?;
        worst = worst.max((ex.p - ap.p).abs());
    }
    ensure(worst <= 0.01, format!("exact vs approximate differ by {worst:.4}"))?;
    Ok(format!("examples exact, PI monotone on 100 traces, n=5 p = 0.0625, n=15 max |exact - approx| = {worst:.4}"))
}

// 6, 7 ---------------------------------------------------------------------

fn desk_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::from_toml(include_str!("../../../configs/mmcnp-desk.toml")).expect("desk config parses");
    cfg.out_dir = out.to_path_buf();
    cfg
}

fn end_to_end(cfg: &RunConfig) -> Check {
    let start = Instant::now();
    let report = pipeline::run_all(cfg).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let plain = report.row(PLAIN).ok_or("no Plain row")?;
    let id = report.row(ID_PAS).ok_or("no ID-PaS row")?;

    // independent recomputation from metrics.csv
    let mut rdr = csv::Reader::from_path(cfg.dir("report").join("metrics.csv")).map_err(|e| e.to_string())?;
    let mut by: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        by.entry(rec[0].to_string()).or_default().insert(rec[1].to_string(), rec[2].parse().unwrap());
    }
    let n = by.len();
    ensure(n == cfg.splits.test, format!("{n} test instances in metrics.csv"))?;
    let mean = |a: &str| by.values().map(|m| m[a]).sum::<f64>() / n as f64;
    let wins = by.values().filter(|m| m[ID_PAS] <= m.values().cloned().fold(f64::INFINITY, f64::min) + 1e-12).count();
    ensure((mean(ID_PAS) - id.pg_mean).abs() < 1e-9 && (mean(PLAIN) - plain.pg_mean).abs() < 1e-9, "summary disagrees with metrics")?;
    ensure(wins == id.pg_wins, "win count disagrees with metrics")?;

    let summary = fs::read_to_string(cfg.dir("report").join("summary.csv")).map_err(|e| e.to_string())?;
    ensure(summary.contains("pg_mean_improvement") && summary.contains("pg_wilcoxon_p"), "summary lacks improvement or p-value columns")?;
    let p = id.pg_p.ok_or("no Wilcoxon p-value for ID-PaS")?;
    let detail = format!(
        "ID-PaS PG {:.4} ({:.1}%) vs Plain {:.4}, PG wins {}/{}, p = {:.4}; PI {:.3} vs {:.3}; {:.0} min",
        id.pg_mean,
        id.pg_improvement,
        plain.pg_mean,
        id.pg_wins,
        n,
        p,
        id.pi_mean,
        plain.pi_mean,
        secs / 60.0
    );
    ensure(id.pg_mean <= plain.pg_mean, format!("mean PG worse than Plain: {detail}"))?;
    ensure(2 * id.pg_wins >= n, format!("fewer than half the PG wins: {detail}"))?;
    ensure(secs < 4.0 * 3600.0, format!("runtime over 4 h: {detail}"))?;
    Ok(detail)
}

fn sparsity(cfg: &RunConfig) -> Check {
    let (_, data) = load_dataset(&pipeline::dataset_manifest(cfg, Split::Train), 1e-6).map_err(|e| e.to_string())?;
    let (mut zeros, mut total) = (0usize, 0usize);
    for (_, s) in &data {
        for l in &s.labels {
            zeros += l.iter().filter(|&&b| b == 0).count();
            total += l.len();
        }
    }
    ensure(total > 0, "empty training pools")?;
    let frac = zeros as f64 / total as f64;
    ensure(frac > 0.5, format!("zero-label fraction {frac:.3}"))?;
    Ok(format!("zero-label fraction {frac:.3} over {} pools", data.len()))
}

// 8 -------------------------------------------------------------------------

fn small_config(out: &Path) -> RunConfig {
    let text = r#"
        master_seed = 11
        u_p = 8
        pool_restarts = 1
        [splits]
        train = 6
        validation = 3
        test = 5
        [budgets]
        collect = 1.0
        tune = 0.5
        test = 1.0
        reference = 2.0
        [train]
        epochs = 5
        [grid]
        deltas = [1, 5]
        k0_fractions = [0.6, 0.8]
    "#;
    let mut cfg = RunConfig::from_toml(text).unwrap();
    cfg.out_dir = out.to_path_buf();
    cfg
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism(root: &Path) -> Check {
    let (a, b) = (root.join("det-a"), root.join("det-b"));
    for d in [&a, &b] {
        let _ = fs::remove_dir_all(d);
        pipeline::run_all(&small_config(d)).map_err(|e| e.to_string())?;
    }
    let (ta, tb) = (tree(&a), tree(&b));
    ensure(ta.keys().eq(tb.keys()), "different file sets")?;
    let mut counts = BTreeMap::new();
    for (k, v) in &ta {
        ensure(&tb[k] == v, format!("{} differs", k.display()))?;
        *counts.entry(k.components().next().unwrap().as_os_str().to_string_lossy().into_owned()).or_insert(0) += 1;
    }
    for need in ["datasets", "models", "report"] {
        ensure(counts.get(need).copied().unwrap_or(0) > 0, format!("no {need} files"))?;
    }
    Ok(format!("{} files byte-identical across two runs ({counts:?})", ta.len()))
}

// ---------------------------------------------------------------------------

fn run(id: usize, name: &str, f: impl FnOnce() -> Check) -> bool {
    // ACCEPTANCE_CRITERIA=1,2,5 runs a subset while iterating locally
    if let Ok(only) = std::env::var("ACCEPTANCE_CRITERIA") {
        if !only.split(',').any(|c| c.trim() == id.to_string()) {
            println!("criterion {id} ({name}): SKIPPED");
            return true;
        }
    }
    let start = Instant::now();
    let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
    });
    let secs = start.elapsed().as_secs_f64();
    match res {
        Ok(d) => {
            println!("criterion {id} ({name}): PASS [{secs:.1} s] {d}");
            true
        }
        Err(d) => {
            println!("criterion {id} ({name}): FAIL [{secs:.1} s] {d}");
            false
        }
    }
}

fn main() {
    // `cargo test -- --list` and filters from other targets must not start the suite
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    if let Some(filter) = args.iter().find(|a| !a.starts_with('-')) {
        if !"acceptance".contains(filter.as_str()) {
            return;
        }
    }
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let desk = desk_config(&root.join("desk"));
    let mut ok = true;
    ok &= run(1, "solver correctness", solver_correctness);
    ok &= run(2, "gradient fidelity", gradient_fidelity);
    ok &= run(3, "identity-awareness separation", identity_separation);
    ok &= run(4, "neighborhood soundness and equivalence", neighborhood_soundness);
    ok &= run(5, "metric correctness", metric_correctness);
    ok &= run(6, "end-to-end directional result", || end_to_end(&desk));
    ok &= run(7, "sparsity premise", || sparsity(&desk));
    ok &= run(8, "determinism", || determinism(&root));
    println!("acceptance: {}", if ok { "all criteria passed" } else { "FAILED" });
    if !ok {
        std::process::exit(1);
    }
}
