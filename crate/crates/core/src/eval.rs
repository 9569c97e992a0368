//! Primal gap, primal integral, Wilcoxon signed-rank test, grid selection
//! and the summary report.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::util::write_atomic;

pub const GAP_EPS: f64 = 1e-8;
pub const CURVE_POINTS: usize = 64;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("trace is not sorted by time at entry {0}")]
    UnsortedTrace(usize),
    #[error("horizon must be positive, got {0}")]
    Horizon(f64),
    #[error("trace time {0} exceeds horizon {1}")]
    BeyondHorizon(f64, f64),
    #[error("samples have different lengths ({0} vs {1})")]
    Length(usize, usize),
    #[error("{0} nonzero differences; at least 5 are required")]
    TooFew(usize),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `|v - v*| / max(|v*|, eps)`, or 1.0 when there is no value or the signs
/// of `v` and `v*` differ.
pub fn primal_gap(v: Option<f64>, v_star: f64) -> f64 {
    match v {
        Some(v) if v * v_star >= 0.0 => (v - v_star).abs() / v_star.abs().max(GAP_EPS),
        _ => 1.0,
    }
}

pub fn capped_gap(v: Option<f64>, v_star: f64) -> f64 {
    primal_gap(v, v_star).min(1.0)
}

/// Integral of the capped gap over `[0, horizon]` for an incumbent trace of
/// `(time, objective)` pairs: gap 1 before the first incumbent, then the gap
/// of the latest incumbent.
pub fn primal_integral(trace: &[(f64, f64)], v_star: f64, horizon: f64) -> Result<f64, EvalError> {
    if !(horizon > 0.0) {
        return Err(EvalError::Horizon(horizon));
    }
    for (k, w) in trace.windows(2).enumerate() {
        if w[1].0 < w[0].0 {
            return Err(EvalError::UnsortedTrace(k + 1));
        }
    }
    if let Some(&(t, _)) = trace.iter().find(|(t, _)| *t > horizon) {
        return Err(EvalError::BeyondHorizon(t, horizon));
    }
    let mut total = 0.0;
    let mut t_prev = 0.0;
    let mut gap = 1.0;
    for &(t, v) in trace {
        let t = t.max(0.0);
        total += gap * (t - t_prev);
        t_prev = t;
        gap = capped_gap(Some(v), v_star);
    }
    Ok(total + gap * (horizon - t_prev))
}

/// Capped gap of the latest incumbent at time `t`.
pub fn gap_at(trace: &[(f64, f64)], v_star: f64, t: f64) -> f64 {
    trace.iter().take_while(|(ti, _)| *ti <= t).last().map_or(1.0, |&(_, v)| capped_gap(Some(v), v_star))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Wilcoxon {
    /// Two-sided p-value.
    pub p: f64,
    /// Sum of ranks of positive differences `a - b`.
    pub w_plus: f64,
    /// Number of nonzero differences.
    pub n: usize,
    pub exact: bool,
}

/// Two-sided Wilcoxon signed-rank test on paired samples. Zero differences
/// are dropped and tied magnitudes get mid-ranks. For `n <= 20` the null
/// distribution of `W+` is computed exactly over all `2^n` sign patterns;
/// above that the normal approximation with tie and continuity corrections
/// is used.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<Wilcoxon, EvalError> {
    wilcoxon_with(a, b, 20)
}

/// As [`wilcoxon_signed_rank`] with an explicit exact-test size limit.
pub fn wilcoxon_with(a: &[f64], b: &[f64], exact_max: usize) -> Result<Wilcoxon, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::Length(a.len(), b.len()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        log::warn!("all paired differences are zero; reporting p = 1");
        return Ok(Wilcoxon { p: 1.0, w_plus: 0.0, n: 0, exact: true });
    }
    if n < 5 {
        return Err(EvalError::TooFew(n));
    }
    // doubled mid-ranks keep every rank an integer
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].abs().total_cmp(&d[j].abs()));
    let mut rank2 = vec![0usize; n];
    let mut tie_term = 0.0;
    let mut k = 0;
    while k < n {
        let mut e = k;
        while e + 1 < n && d[order[e + 1]].abs() == d[order[k]].abs() {
            e += 1;
        }
        let t = (e - k + 1) as f64;
        tie_term += t * t * t - t;
        for &i in &order[k..=e] {
            rank2[i] = k + e + 2;
        }
        k = e + 1;
    }
    let w2: usize = (0..n).filter(|&i| d[i] > 0.0).map(|i| rank2[i]).sum();
    let w_plus = w2 as f64 / 2.0;
    if n <= exact_max {
        let total2: usize = rank2.iter().sum();
        // counts[s] = number of sign patterns with doubled W+ equal to s
        let mut counts = vec![0f64; total2 + 1];
        counts[0] = 1.0;
        for &r in &rank2 {
            for s in (r..=total2).rev() {
                counts[s] += counts[s - r];
            }
        }
        let all = 2f64.powi(n as i32);
        let lower: f64 = counts[..=w2].iter().sum::<f64>() / all;
        let upper: f64 = counts[w2..].iter().sum::<f64>() / all;
        let p = (2.0 * lower.min(upper)).min(1.0);
        return Ok(Wilcoxon { p, w_plus, n, exact: true });
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let p = (2.0 * (1.0 - normal.cdf(z))).min(1.0);
    Ok(Wilcoxon { p, w_plus, n, exact: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub instance: String,
    pub approach: String,
    /// `(seconds, objective)` improvements.
    pub trace: Vec<(f64, f64)>,
    pub final_objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub instance: String,
    pub approach: String,
    /// Capped primal gap of the final objective.
    pub pg: f64,
    /// Uncapped primal gap.
    pub pg_raw: f64,
    pub pi: f64,
    pub final_objective: Option<f64>,
    pub v_star: f64,
}

/// Best-known value per instance: the minimum final objective over all runs
/// and the optional reference values.
pub fn best_known(runs: &[RunRecord], reference: &BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    let mut out: BTreeMap<String, f64> = reference.clone();
    for r in runs {
        if let Some(v) = r.final_objective {
            let e = out.entry(r.instance.clone()).or_insert(v);
            *e = e.min(v);
        }
    }
    out
}

pub fn compute_metrics(runs: &[RunRecord], v_star: &BTreeMap<String, f64>, horizon: f64) -> Result<Vec<MetricsRecord>, EvalError> {
    runs.iter()
        .map(|r| {
            // an instance nobody solved gets gap 1 everywhere
            let vs = v_star.get(&r.instance).copied();
            let (pg_raw, pi) = match vs {
                Some(vs) => (primal_gap(r.final_objective, vs), primal_integral(&r.trace, vs, horizon)?),
                None => (1.0, horizon),
            };
            Ok(MetricsRecord {
                instance: r.instance.clone(),
                approach: r.approach.clone(),
                pg: pg_raw.min(1.0),
                pg_raw,
                pi,
                final_objective: r.final_objective,
                v_star: vs.unwrap_or(f64::NAN),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub approach: String,
    pub instances: usize,
    pub pg_mean: f64,
    pub pg_std: f64,
    pub pg_wins: usize,
    /// Percentage reduction of the mean relative to the baseline.
    pub pg_improvement: f64,
    pub pg_p: Option<f64>,
    pub pi_mean: f64,
    pub pi_std: f64,
    pub pi_wins: usize,
    pub pi_improvement: f64,
    pub pi_p: Option<f64>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

/// Per-approach means, sample standard deviations, win counts (every
/// approach tied for the best value on an instance gets a win), improvement
/// over `baseline`, and Wilcoxon p-values against it. Rows follow
/// `approaches`; instances missing a run for some approach are skipped
/// for all of them.
pub fn summarize(records: &[MetricsRecord], approaches: &[String], baseline: &str) -> Result<Vec<SummaryRow>, EvalError> {
    let mut by: BTreeMap<&str, BTreeMap<&str, &MetricsRecord>> = BTreeMap::new();
    for r in records {
        by.entry(r.instance.as_str()).or_default().insert(r.approach.as_str(), r);
    }
    let complete: Vec<&BTreeMap<&str, &MetricsRecord>> =
        by.values().filter(|m| approaches.iter().all(|a| m.contains_key(a.as_str()))).collect();
    if complete.is_empty() {
        return Err(EvalError::Empty("metrics"));
    }
    let col = |a: &str, f: fn(&MetricsRecord) -> f64| -> Vec<f64> { complete.iter().map(|m| f(m[a])).collect() };
    let wins = |a: &str, f: fn(&MetricsRecord) -> f64| -> usize {
        complete
            .iter()
            .filter(|m| {
                let best = approaches.iter().map(|b| f(m[b.as_str()])).fold(f64::INFINITY, f64::min);
                f(m[a]) <= best + 1e-12
            })
            .count()
    };
    let pg = |r: &MetricsRecord| r.pg;
    let pi = |r: &MetricsRecord| r.pi;
    let base_pg = mean_std(&col(baseline, pg)).0;
    let base_pi = mean_std(&col(baseline, pi)).0;
    let improvement = |base: f64, m: f64| if base > 0.0 { 100.0 * (base - m) / base } else { 0.0 };
    let p_value = |a: &str, f: fn(&MetricsRecord) -> f64| -> Option<f64> {
        if a == baseline {
            return None;
        }
        wilcoxon_signed_rank(&col(a, f), &col(baseline, f)).ok().map(|w| w.p)
    };
    Ok(approaches
        .iter()
        .map(|a| {
            let (pg_mean, pg_std) = mean_std(&col(a, pg));
            let (pi_mean, pi_std) = mean_std(&col(a, pi));
            SummaryRow {
                approach: a.clone(),
                instances: complete.len(),
                pg_mean,
                pg_std,
                pg_wins: wins(a, pg),
                pg_improvement: improvement(base_pg, pg_mean),
                pg_p: p_value(a, pg),
                pi_mean,
                pi_std,
                pi_wins: wins(a, pi),
                pi_improvement: improvement(base_pi, pi_mean),
                pi_p: p_value(a, pi),
            }
        })
        .collect())
}

/// Mean capped gap per approach at `CURVE_POINTS` evenly spaced times in
/// `[0, horizon]`. Returns the time grid and one column per approach.
pub fn gap_curves(runs: &[RunRecord], v_star: &BTreeMap<String, f64>, approaches: &[String], horizon: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let times: Vec<f64> = (0..CURVE_POINTS).map(|k| horizon * k as f64 / (CURVE_POINTS - 1) as f64).collect();
    let cols = approaches
        .iter()
        .map(|a| {
            let mine: Vec<&RunRecord> = runs.iter().filter(|r| &r.approach == a).collect();
            times
                .iter()
                .map(|&t| {
                    let s: f64 = mine.iter().map(|r| v_star.get(&r.instance).map_or(1.0, |&vs| gap_at(&r.trace, vs, t))).sum();
                    if mine.is_empty() {
                        f64::NAN
                    } else {
                        s / mine.len() as f64
                    }
                })
                .collect()
        })
        .collect();
    (times, cols)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub k0_fraction: f64,
    pub delta: usize,
    pub mean_pg: f64,
    pub mean_pi: f64,
    /// Validation instances whose sub-MIP was proven infeasible.
    pub infeasible: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
    pub selected: usize,
    pub metric: String,
}

impl GridResult {
    pub fn selected_row(&self) -> &GridRow {
        &self.rows[self.selected]
    }
}

/// Picks the row with the smallest mean PI, then mean PG, then smaller k0.
pub fn select_grid(rows: Vec<GridRow>) -> Result<GridResult, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::Empty("grid"));
    }
    let key = |r: &GridRow| (r.mean_pi, r.mean_pg, r.k0_fraction);
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        let (a, b) = (key(r), key(&rows[best]));
        if a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2)).is_lt() {
            best = i;
        }
    }
    Ok(GridResult { rows, selected: best, metric: "mean_pi".into() })
}

fn csv_bytes(write: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> Result<(), csv::Error>) -> Result<Vec<u8>, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    write(&mut w)?;
    w.into_inner().map_err(|e| EvalError::Io(e.into_error()))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x}"))
}

/// `instance,approach,pg,pg_raw,pi,final_objective,v_star`.
pub fn write_metrics_csv(records: &[MetricsRecord], path: &Path) -> Result<(), EvalError> {
    let bytes = csv_bytes(|w| {
        w.write_record(["instance", "approach", "pg", "pg_raw", "pi", "final_objective", "v_star"])?;
        for r in records {
            w.write_record([
                r.instance.clone(),
                r.approach.clone(),
                r.pg.to_string(),
                r.pg_raw.to_string(),
                r.pi.to_string(),
                fmt_opt(r.final_objective),
                r.v_star.to_string(),
            ])?;
        }
        Ok(())
    })?;
    Ok(write_atomic(path, &bytes)?)
}

/// One row per approach in the layout `mean (improvement%) | std | wins`
/// for PG and PI, plus the raw numbers and Wilcoxon p-values.
pub fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<(), EvalError> {
    let bytes = csv_bytes(|w| {
        w.write_record([
            "approach", "instances", "pg_mean", "pg_mean_improvement", "pg_std", "pg_wins", "pg_wilcoxon_p", "pi_mean",
            "pi_mean_improvement", "pi_std", "pi_wins", "pi_wilcoxon_p", "pg_cell", "pi_cell",
        ])?;
        for r in rows {
            w.write_record([
                r.approach.clone(),
                r.instances.to_string(),
                format!("{:.4}", r.pg_mean),
                format!("{:.1}", r.pg_improvement),
                format!("{:.4}", r.pg_std),
                r.pg_wins.to_string(),
                r.pg_p.map_or("NA".into(), |p| format!("{p:.4}")),
                format!("{:.4}", r.pi_mean),
                format!("{:.1}", r.pi_improvement),
                format!("{:.4}", r.pi_std),
                r.pi_wins.to_string(),
                r.pi_p.map_or("NA".into(), |p| format!("{p:.4}")),
                format!("{:.2} ({:.1}%)", r.pg_mean, r.pg_improvement),
                format!("{:.2} ({:.1}%)", r.pi_mean, r.pi_improvement),
            ])?;
        }
        Ok(())
    })?;
    Ok(write_atomic(path, &bytes)?)
}

/// `time` followed by one mean-capped-gap column per approach.
pub fn write_curves_csv(times: &[f64], approaches: &[String], cols: &[Vec<f64>], path: &Path) -> Result<(), EvalError> {
    let bytes = csv_bytes(|w| {
        let mut header = vec!["time".to_string()];
        header.extend(approaches.iter().cloned());
        w.write_record(&header)?;
        for (k, t) in times.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(cols.iter().map(|c| c[k].to_string()));
            w.write_record(&row)?;
        }
        Ok(())
    })?;
    Ok(write_atomic(path, &bytes)?)
}

/// `approach,k0_fraction,delta,mean_pg,mean_pi,infeasible,selected`.
pub fn write_grid_csv(grids: &[(String, GridResult)], path: &Path) -> Result<(), EvalError> {
    let bytes = csv_bytes(|w| {
        w.write_record(["approach", "k0_fraction", "delta", "mean_pg", "mean_pi", "infeasible", "selected"])?;
        for (name, grid) in grids {
            for (i, r) in grid.rows.iter().enumerate() {
                w.write_record([
                    name.clone(),
                    r.k0_fraction.to_string(),
                    r.delta.to_string(),
                    r.mean_pg.to_string(),
                    r.mean_pi.to_string(),
                    r.infeasible.to_string(),
                    (i == grid.selected).to_string(),
                ])?;
            }
        }
        Ok(())
    })?;
    Ok(write_atomic(path, &bytes)?)
}
