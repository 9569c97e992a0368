//! Training data: solve instances, binarize the solution pools, and persist
//! the labels.
//!
//! Label file layout (little endian): magic `IDPASLBL`, u32 version, u32
//! label length `|I|`, u32 `u_p`, u32 row count, u32-length-prefixed
//! instance hash (hex), then one packed bitset per row (`ceil(|I|/8)` bytes,
//! bit `k` of byte `b` is label `8b + k`), then one f64 objective per row.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::milp::{collect_solution_pool, SolveError, SolverConfig};
use crate::mip::{load_instance, MipError, MipInstance};
use crate::util::{derive_seed, write_atomic};

const MAGIC: &[u8; 8] = b"IDPASLBL";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no instances to collect")]
    Empty,
    #[error("u_p must be at least 1")]
    PoolSize,
    #[error("label file {path}: {msg}")]
    Format { path: String, msg: String },
    #[error("stored solution {index} for {instance} is infeasible")]
    Unverified { instance: String, index: usize },
    #[error("label lengths differ across samples ({0} vs {1})")]
    Ragged(usize, usize),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Mip(#[from] MipError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub instance: String,
    pub instance_hash: String,
    pub u_p: usize,
    /// Distinct binarized solutions over the integer variables.
    pub labels: Vec<Vec<u8>>,
    /// Objective of the best solution producing each label, ascending.
    pub objectives: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRef {
    pub instance: String,
    /// Paths relative to the manifest directory.
    pub instance_file: String,
    pub label_file: String,
    pub solution_file: String,
    pub instance_hash: String,
    pub labels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub family: String,
    pub split: Split,
    pub u_p: usize,
    pub restarts: usize,
    pub solver: SolverConfig,
    /// Seed from which the per-instance solver seeds are derived.
    pub seed: u64,
    pub samples: Vec<SampleRef>,
    /// Instances that yielded no feasible solution.
    pub excluded: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SolutionFile {
    instance_hash: String,
    solutions: Vec<Vec<f64>>,
}

/// Keeps the first occurrence of each label vector; the input is ordered by
/// ascending objective, so each label keeps its best objective.
pub fn dedup_labels(labels: Vec<(Vec<u8>, f64, Vec<f64>)>) -> Vec<(Vec<u8>, f64, Vec<f64>)> {
    let mut seen = std::collections::HashSet::new();
    labels.into_iter().filter(|(l, _, _)| seen.insert(l.clone())).collect()
}

/// Solves one instance in pool mode and binarizes the pool.
pub fn sample_for(inst: &MipInstance, u_p: usize, cfg: &SolverConfig, restarts: usize) -> Result<(TrainingSample, Vec<Vec<f64>>), DatasetError> {
    if u_p == 0 {
        return Err(DatasetError::PoolSize);
    }
    let (pool, _) = collect_solution_pool(inst, u_p, cfg, restarts)?;
    let mut rows = Vec::with_capacity(pool.len());
    for s in pool {
        let label = inst.binarize_solution(&s.values, cfg.integrality_tol.max(1e-6))?;
        rows.push((label, s.objective, s.values));
    }
    let rows = dedup_labels(rows);
    let mut labels = Vec::with_capacity(rows.len());
    let mut objectives = Vec::with_capacity(rows.len());
    let mut solutions = Vec::with_capacity(rows.len());
    for (l, o, v) in rows {
        labels.push(l);
        objectives.push(o);
        solutions.push(v);
    }
    let sample = TrainingSample { instance: inst.name.clone(), instance_hash: inst.content_hash(), u_p, labels, objectives };
    Ok((sample, solutions))
}

/// Solves every instance (in parallel), writes label and solution files
/// under `out_dir`, and writes `manifest.json` there.
pub fn collect_dataset(
    instance_files: &[PathBuf],
    split: Split,
    u_p: usize,
    cfg: &SolverConfig,
    restarts: usize,
    out_dir: &Path,
) -> Result<(DatasetManifest, Vec<TrainingSample>), DatasetError> {
    if instance_files.is_empty() {
        return Err(DatasetError::Empty);
    }
    if u_p == 0 {
        return Err(DatasetError::PoolSize);
    }
    let instances: Vec<MipInstance> = instance_files.iter().map(|p| load_instance(p)).collect::<Result<_, _>>()?;
    let results: Vec<Result<(TrainingSample, Vec<Vec<f64>>), DatasetError>> = instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let c = SolverConfig { rng_seed: derive_seed(cfg.rng_seed, "collect", i as u64), ..cfg.clone() };
            sample_for(inst, u_p, &c, restarts)
        })
        .collect();

    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let mut samples = Vec::new();
    let mut refs = Vec::new();
    let mut excluded = Vec::new();
    for ((inst, file), res) in instances.iter().zip(instance_files).zip(results) {
        let (sample, solutions) = res?;
        if sample.labels.is_empty() {
            log::warn!("{}: no feasible solution found, excluded from the dataset", inst.name);
            excluded.push(inst.name.clone());
            continue;
        }
        let label_file = format!("{}.labels", inst.name);
        let solution_file = format!("{}.solutions.json", inst.name);
        save_sample(&sample, &out_dir.join(&label_file))?;
        let sf = SolutionFile { instance_hash: sample.instance_hash.clone(), solutions };
        let text = serde_json::to_string(&sf)? + "\n";
        let sp = out_dir.join(&solution_file);
        write_atomic(&sp, text.as_bytes()).map_err(|e| io_err(&sp, e))?;
        refs.push(SampleRef {
            instance: inst.name.clone(),
            instance_file: relative_to(file, out_dir),
            label_file,
            solution_file,
            instance_hash: sample.instance_hash.clone(),
            labels: sample.labels.len(),
        });
        samples.push(sample);
    }
    let manifest = DatasetManifest {
        family: instances[0].family.clone(),
        split,
        u_p,
        restarts,
        solver: cfg.clone(),
        seed: cfg.rng_seed,
        samples: refs,
        excluded,
    };
    save_manifest(&manifest, &out_dir.join("manifest.json"))?;
    Ok((manifest, samples))
}

/// `path` relative to `base` when it lies below it, otherwise as given.
fn relative_to(path: &Path, base: &Path) -> String {
    let abs = |p: &Path| fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    let (p, b) = (abs(path), abs(base));
    if let Ok(rel) = p.strip_prefix(&b) {
        return rel.display().to_string();
    }
    // one level up is the common layout: <out>/instances and <out>/datasets
    let mut up = PathBuf::new();
    let mut cur = b.as_path();
    while let Some(parent) = cur.parent() {
        up.push("..");
        if let Ok(rel) = p.strip_prefix(parent) {
            return up.join(rel).display().to_string();
        }
        cur = parent;
    }
    path.display().to_string()
}

pub fn save_manifest(m: &DatasetManifest, path: &Path) -> Result<(), DatasetError> {
    let text = serde_json::to_string_pretty(m)? + "\n";
    write_atomic(path, text.as_bytes()).map_err(|e| io_err(path, e))
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DatasetError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn sample_bytes(s: &TrainingSample) -> Vec<u8> {
    let n = s.labels.first().map_or(0, |l| l.len());
    let mut b = Vec::new();
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&VERSION.to_le_bytes());
    for v in [n, s.u_p, s.labels.len(), s.instance_hash.len()] {
        b.extend_from_slice(&(v as u32).to_le_bytes());
    }
    b.extend_from_slice(s.instance_hash.as_bytes());
    for l in &s.labels {
        let mut packed = vec![0u8; n.div_ceil(8)];
        for (k, &bit) in l.iter().enumerate() {
            if bit != 0 {
                packed[k / 8] |= 1 << (k % 8);
            }
        }
        b.extend_from_slice(&packed);
    }
    for o in &s.objectives {
        b.extend_from_slice(&o.to_le_bytes());
    }
    b
}

pub fn sample_from_bytes(instance: &str, bytes: &[u8]) -> Result<TrainingSample, String> {
    let mut at = 0usize;
    let mut take = |n: usize| -> Result<&[u8], String> {
        let s = bytes.get(at..at + n).ok_or_else(|| format!("truncated at byte {at}"))?;
        at += n;
        Ok(s)
    };
    if take(8)? != MAGIC {
        return Err("bad magic".into());
    }
    let mut u32s = [0usize; 5];
    for v in &mut u32s {
        *v = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    }
    let [version, n, u_p, rows, hash_len] = u32s;
    if version != VERSION as usize {
        return Err(format!("unsupported version {version}"));
    }
    let instance_hash = std::str::from_utf8(take(hash_len)?).map_err(|e| e.to_string())?.to_string();
    let mut labels = Vec::with_capacity(rows);
    for _ in 0..rows {
        let packed = take(n.div_ceil(8))?;
        labels.push((0..n).map(|k| (packed[k / 8] >> (k % 8)) & 1).collect());
    }
    let mut objectives = Vec::with_capacity(rows);
    for _ in 0..rows {
        objectives.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
    }
    if at != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - at));
    }
    Ok(TrainingSample { instance: instance.to_string(), instance_hash, u_p, labels, objectives })
}

pub fn save_sample(s: &TrainingSample, path: &Path) -> Result<(), DatasetError> {
    write_atomic(path, &sample_bytes(s)).map_err(|e| io_err(path, e))
}

pub fn load_sample(instance: &str, path: &Path) -> Result<TrainingSample, DatasetError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    sample_from_bytes(instance, &bytes).map_err(|msg| DatasetError::Format { path: path.display().to_string(), msg })
}

/// Loads every sample of a manifest together with its instance. Each stored
/// solution is re-checked against the instance and must reproduce its label.
pub fn load_dataset(manifest_path: &Path, feas_tol: f64) -> Result<(DatasetManifest, Vec<(MipInstance, TrainingSample)>), DatasetError> {
    let m = load_manifest(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::with_capacity(m.samples.len());
    for r in &m.samples {
        let inst = load_instance(&dir.join(&r.instance_file))?;
        let sample = load_sample(&r.instance, &dir.join(&r.label_file))?;
        let sp = dir.join(&r.solution_file);
        let sf: SolutionFile = serde_json::from_str(&fs::read_to_string(&sp).map_err(|e| io_err(&sp, e))?)?;
        let hash = inst.content_hash();
        if hash != sample.instance_hash || hash != sf.instance_hash {
            return Err(DatasetError::Format {
                path: sp.display().to_string(),
                msg: "instance hash does not match the stored labels".into(),
            });
        }
        if sf.solutions.len() != sample.labels.len() {
            return Err(DatasetError::Format { path: sp.display().to_string(), msg: "solution count differs from label count".into() });
        }
        for (k, (x, l)) in sf.solutions.iter().zip(&sample.labels).enumerate() {
            let ok = inst.check_feasibility(x, feas_tol)?.feasible && inst.binarize_solution(x, 1e-6)? == *l;
            if !ok {
                return Err(DatasetError::Unverified { instance: inst.name.clone(), index: k });
            }
        }
        out.push((inst, sample));
    }
    Ok((m, out))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelStatistics {
    /// Fraction of label vectors in which each integer variable is zero.
    pub zero_frequency: Vec<f64>,
    /// Fraction of zero entries over all label vectors.
    pub zero_fraction: f64,
    pub label_vectors: usize,
}

pub fn label_statistics(samples: &[TrainingSample]) -> Result<LabelStatistics, DatasetError> {
    let n = samples.iter().flat_map(|s| &s.labels).map(|l| l.len()).next().ok_or(DatasetError::Empty)?;
    let mut zeros = vec![0usize; n];
    let mut rows = 0usize;
    for l in samples.iter().flat_map(|s| &s.labels) {
        if l.len() != n {
            return Err(DatasetError::Ragged(n, l.len()));
        }
        rows += 1;
        for (z, &b) in zeros.iter_mut().zip(l) {
            *z += usize::from(b == 0);
        }
    }
    let total: usize = zeros.iter().sum();
    Ok(LabelStatistics {
        zero_frequency: zeros.iter().map(|&z| z as f64 / rows as f64).collect(),
        zero_fraction: if n == 0 { 1.0 } else { total as f64 / (rows * n) as f64 },
        label_vectors: rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mip::{save_instance, Sense, VarKind};

    fn sample(labels: Vec<Vec<u8>>) -> TrainingSample {
        let objectives = (0..labels.len()).map(|k| k as f64).collect();
        TrainingSample { instance: "s".into(), instance_hash: "ab".into(), u_p: 5, labels, objectives }
    }

    #[test]
    fn statistics_examples() {
        let s = label_statistics(&[sample(vec![vec![0, 0, 0]])]).unwrap();
        assert_eq!(s.zero_fraction, 1.0);
        let s = label_statistics(&[sample(vec![vec![0, 1]])]).unwrap();
        assert_eq!(s.zero_frequency, vec![1.0, 0.0]);
        assert!(label_statistics(&[]).is_err());
        assert!(matches!(label_statistics(&[sample(vec![vec![0, 1], vec![1]])]), Err(DatasetError::Ragged(2, 1))));
    }

    #[test]
    fn label_file_round_trip() {
        let s = sample(vec![vec![1, 0, 1, 1, 0, 0, 0, 0, 1, 1], vec![0; 10]]);
        let b = sample_bytes(&s);
        assert_eq!(b.len(), 8 + 20 + 2 + 2 * 2 + 2 * 8);
        assert_eq!(sample_from_bytes("s", &b).unwrap(), s);
        assert!(sample_from_bytes("s", &b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[1] = 0;
        assert!(sample_from_bytes("s", &bad).is_err());
    }

    #[test]
    fn dedup_keeps_first() {
        let rows = vec![(vec![1, 0], 1.0, vec![1.0, 0.0]), (vec![1, 0], 2.0, vec![2.0, 0.0]), (vec![0, 1], 3.0, vec![0.0, 1.0])];
        let d = dedup_labels(rows);
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].1, 1.0);
    }

    fn small() -> MipInstance {
        let mut m = MipInstance::new("small", "test", 0);
        m.add_var("a", VarKind::GeneralInteger, 0.0, 3.0, 1.0);
        m.add_var("b", VarKind::GeneralInteger, 0.0, 3.0, 2.0);
        m.add_var("c", VarKind::Continuous, 0.0, 5.0, 0.5);
        m.add_row(vec![(0, 1.0), (1, 1.0), (2, 1.0)], Sense::GE, 2.0);
        m
    }

    #[test]
    fn single_solution_pool_is_the_optimum() {
        let (s, sols) = sample_for(&small(), 1, &SolverConfig::default(), 0).unwrap();
        assert_eq!(s.labels, vec![vec![0, 0]]);
        assert_eq!(s.objectives, vec![1.0]);
        assert_eq!(sols.len(), 1);
    }

    #[test]
    fn collected_labels_are_distinct_and_verified() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("instances/small.json");
        save_instance(&small(), &ip).unwrap();
        let out = dir.path().join("data");
        let (m, samples) = collect_dataset(&[ip.clone()], Split::Train, 20, &SolverConfig::default(), 0, &out).unwrap();
        assert_eq!(m.samples[0].instance_file, "../instances/small.json");
        let s = &samples[0];
        assert!(s.objectives.windows(2).all(|w| w[0] <= w[1]));
        let set: std::collections::HashSet<_> = s.labels.iter().collect();
        assert_eq!(set.len(), s.labels.len());
        assert_eq!(s.labels.len(), 4);
        let (_, loaded) = load_dataset(&out.join("manifest.json"), 1e-6).unwrap();
        assert_eq!(&loaded[0].1, s);
        let first = fs::read(out.join("small.labels")).unwrap();
        collect_dataset(&[ip], Split::Train, 20, &SolverConfig::default(), 0, &out).unwrap();
        assert_eq!(fs::read(out.join("small.labels")).unwrap(), first);
        assert!(collect_dataset(&[], Split::Train, 2, &SolverConfig::default(), 0, &out).is_err());
    }
}
