//! Shift-only BBOB functions and anytime (AOCC) scoring.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const IMPLEMENTED: [u32; 10] = [1, 2, 3, 5, 8, 13, 14, 17, 20, 23];
pub const LOWER_BOUND: f64 = -5.0;
pub const UPPER_BOUND: f64 = 5.0;
pub const AOCC_LB: f64 = 1e-8;
pub const AOCC_UB: f64 = 1e2;
pub const DEFAULT_BUDGET: usize = 10_000;

const SCHWEFEL_OPT: f64 = 4.2096874633 / 2.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BbobError {
    #[error("function f{0} is not implemented")]
    UnknownFunction(u32),
    #[error("expected {expected} coordinates, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("missing AOCC for f{function_id} instance {instance_id} seed {seed}")]
    IncompleteGrid { function_id: u32, instance_id: u32, seed: u64 },
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("{path}: {reason}")]
    TrajectoryFile { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkFunction {
    pub function_id: u32,
    pub instance_id: u32,
    pub dim: usize,
    pub x_opt: Vec<f64>,
    pub f_opt: f64,
    pub eval_count: u64,
    raw_at_opt: f64,
}

fn instance_rng(function_id: u32, instance_id: u32, dim: usize) -> ChaCha8Rng {
    let digest = Sha256::digest(format!("bbob:{function_id}:{instance_id}:{dim}").as_bytes());
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}

/// `(i - 1) / (D - 1)` with 0-based `i`, defined as 0 in one dimension.
fn frac(i: usize, d: usize) -> f64 {
    if d <= 1 {
        0.0
    } else {
        i as f64 / (d - 1) as f64
    }
}

fn t_osz(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let xh = x.abs().ln();
    let (c1, c2) = if x > 0.0 { (10.0, 7.9) } else { (5.5, 3.1) };
    x.signum() * (xh + 0.049 * ((c1 * xh).sin() + (c2 * xh).sin())).exp()
}

fn t_asy(z: &mut [f64], beta: f64) {
    let d = z.len();
    for (i, v) in z.iter_mut().enumerate() {
        if *v > 0.0 {
            *v = v.powf(1.0 + beta * frac(i, d) * v.sqrt());
        }
    }
}

fn lambda(z: &mut [f64], alpha: f64) {
    let d = z.len();
    for (i, v) in z.iter_mut().enumerate() {
        *v *= alpha.powf(0.5 * frac(i, d));
    }
}

fn f_pen(x: &[f64]) -> f64 {
    x.iter().map(|v| (v.abs() - 5.0).max(0.0).powi(2)).sum()
}

impl BenchmarkFunction {
    pub fn new(function_id: u32, instance_id: u32, dim: usize) -> Result<Self, BbobError> {
        if !IMPLEMENTED.contains(&function_id) {
            return Err(BbobError::UnknownFunction(function_id));
        }
        let mut rng = instance_rng(function_id, instance_id, dim);
        let x_opt: Vec<f64> = (0..dim)
            .map(|_| {
                let u: f64 = rng.random_range(-4.0..=4.0);
                match function_id {
                    5 => 5.0 * if u < 0.0 { -1.0 } else { 1.0 },
                    8 => 0.75 * u,
                    20 => SCHWEFEL_OPT * if u < 0.0 { -1.0 } else { 1.0 },
                    _ => u,
                }
            })
            .collect();
        let n1: f64 = rng.sample(StandardNormal);
        let n2: f64 = rng.sample(StandardNormal);
        let f_opt = ((100.0 * n1 / n2 * 100.0).round() / 100.0).clamp(-1000.0, 1000.0);
        let mut f = Self { function_id, instance_id, dim, x_opt, f_opt, eval_count: 0, raw_at_opt: 0.0 };
        f.raw_at_opt = f.raw(&f.x_opt.clone());
        Ok(f)
    }

    /// Test fixture: an instance with the given optimum.
    pub fn with_optimum(function_id: u32, x_opt: Vec<f64>, f_opt: f64) -> Result<Self, BbobError> {
        let mut f = Self::new(function_id, 0, x_opt.len())?;
        f.x_opt = x_opt;
        f.f_opt = f_opt;
        f.raw_at_opt = f.raw(&f.x_opt.clone());
        Ok(f)
    }

    pub fn evaluate(&mut self, x: &[f64]) -> Result<f64, BbobError> {
        if x.len() != self.dim {
            return Err(BbobError::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        self.eval_count += 1;
        Ok(self.value(x))
    }

    /// Function value without touching the evaluation counter.
    pub fn value(&self, x: &[f64]) -> f64 {
        self.raw(x) - self.raw_at_opt + self.f_opt
    }

    fn raw(&self, x: &[f64]) -> f64 {
        let d = self.dim;
        let shifted: Vec<f64> = x.iter().zip(&self.x_opt).map(|(a, b)| a - b).collect();
        match self.function_id {
            1 => shifted.iter().map(|z| z * z).sum(),
            2 => shifted
                .iter()
                .enumerate()
                .map(|(i, &v)| 10f64.powf(6.0 * frac(i, d)) * t_osz(v).powi(2))
                .sum(),
            3 => {
                let mut z: Vec<f64> = shifted.iter().map(|&v| t_osz(v)).collect();
                t_asy(&mut z, 0.2);
                lambda(&mut z, 10.0);
                10.0 * (d as f64 - z.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>())
                    + z.iter().map(|v| v * v).sum::<f64>()
            }
            5 => x
                .iter()
                .zip(&self.x_opt)
                .enumerate()
                .map(|(i, (&xi, &oi))| {
                    let s = oi.signum() * 10f64.powf(frac(i, d));
                    let z = if oi * xi < 25.0 { xi } else { oi };
                    5.0 * s.abs() - s * z
                })
                .sum(),
            8 => {
                let scale = (d as f64).sqrt() / 8.0;
                let z: Vec<f64> = shifted.iter().map(|v| scale.max(1.0) * v + 1.0).collect();
                z.windows(2)
                    .map(|w| 100.0 * (w[0] * w[0] - w[1]).powi(2) + (w[0] - 1.0).powi(2))
                    .sum()
            }
            13 => {
                let mut z = shifted;
                lambda(&mut z, 10.0);
                z[0] * z[0] + 100.0 * z[1..].iter().map(|v| v * v).sum::<f64>().sqrt()
            }
            14 => shifted
                .iter()
                .enumerate()
                .map(|(i, v)| v.abs().powf(2.0 + 4.0 * frac(i, d)))
                .sum::<f64>()
                .sqrt(),
            17 => {
                let mut z = shifted;
                t_asy(&mut z, 0.5);
                lambda(&mut z, 10.0);
                let s: Vec<f64> = z.windows(2).map(|w| (w[0] * w[0] + w[1] * w[1]).sqrt()).collect();
                let inner = if s.is_empty() {
                    0.0
                } else {
                    s.iter().map(|&si| si.sqrt() + si.sqrt() * (50.0 * si.powf(0.2)).sin().powi(2)).sum::<f64>()
                        / s.len() as f64
                };
                inner * inner + 10.0 * f_pen(x)
            }
            20 => {
                let signs: Vec<f64> = self.x_opt.iter().map(|v| v.signum()).collect();
                let xh: Vec<f64> = x.iter().zip(&signs).map(|(v, s)| 2.0 * s * v).collect();
                let two_opt = 2.0 * SCHWEFEL_OPT;
                let mut zh = xh.clone();
                for i in 1..d {
                    zh[i] = xh[i] + 0.25 * (xh[i - 1] - two_opt);
                }
                let mut z: Vec<f64> = zh.iter().map(|v| v - two_opt).collect();
                lambda(&mut z, 10.0);
                let z: Vec<f64> = z.iter().map(|v| 100.0 * (v + two_opt)).collect();
                let scaled: Vec<f64> = z.iter().map(|v| v / 100.0).collect();
                -z.iter().map(|v| v * v.abs().sqrt().sin()).sum::<f64>() / (100.0 * d as f64)
                    + 4.189828872724339
                    + 100.0 * f_pen(&scaled)
            }
            23 => {
                let mut z = shifted;
                lambda(&mut z, 100.0);
                let df = d as f64;
                let exponent = 10.0 / df.powf(1.2);
                let prod: f64 = z
                    .iter()
                    .enumerate()
                    .map(|(i, &zi)| {
                        let sum: f64 = (1..=32)
                            .map(|j| {
                                let p = 2f64.powi(j);
                                (p * zi - (p * zi).round()).abs() / p
                            })
                            .sum();
                        (1.0 + (i + 1) as f64 * sum).powf(exponent)
                    })
                    .product();
                10.0 / (df * df) * prod - 10.0 / (df * df) + f_pen(x)
            }
            _ => unreachable!("checked at construction"),
        }
    }

    /// Hex SHA-256 over the little-endian bytes of `x_opt`.
    pub fn x_opt_digest(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.x_opt {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RunSlot {
    pub function_id: u32,
    pub instance_id: u32,
    pub seed: u64,
}

impl RunSlot {
    pub fn file_stem(&self) -> String {
        format!("f{}_i{}_s{}", self.function_id, self.instance_id, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Suite {
    pub dim: usize,
    pub functions: Vec<BenchmarkFunction>,
    pub seeds: Vec<u64>,
}

/// Instances are numbered from 1 and seeds from 0.
pub fn make_suite(function_ids: &[u32], dim: usize, instances_per_fn: u32, seeds: u64) -> Result<Suite, BbobError> {
    let mut functions = Vec::new();
    for &fid in function_ids {
        for iid in 1..=instances_per_fn {
            functions.push(BenchmarkFunction::new(fid, iid, dim)?);
        }
    }
    Ok(Suite { dim, functions, seeds: (0..seeds).collect() })
}

impl Suite {
    /// Every (function, instance, seed) combination, seed-major within each
    /// function instance.
    pub fn slots(&self) -> Vec<RunSlot> {
        self.functions
            .iter()
            .flat_map(|f| {
                self.seeds.iter().map(move |&seed| RunSlot { function_id: f.function_id, instance_id: f.instance_id, seed })
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.functions.len() * self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn function(&self, slot: &RunSlot) -> Option<&BenchmarkFunction> {
        self.functions.iter().find(|f| f.function_id == slot.function_id && f.instance_id == slot.instance_id)
    }

    pub fn manifest(&self) -> serde_json::Value {
        let entries: Vec<_> = self
            .functions
            .iter()
            .map(|f| {
                serde_json::json!({
                    "function_id": f.function_id,
                    "instance_id": f.instance_id,
                    "dim": f.dim,
                    "x_opt_digest": f.x_opt_digest(),
                    "f_opt": f.f_opt,
                })
            })
            .collect();
        serde_json::json!({ "dim": self.dim, "seeds": self.seeds, "functions": entries })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Entry `i` is the best precision after evaluation `i + 1`.
    pub best_precision: Vec<f64>,
}

impl Trajectory {
    /// Builds the running minimum of raw precision values.
    pub fn from_precisions(precisions: impl IntoIterator<Item = f64>) -> Self {
        let mut best = f64::INFINITY;
        let best_precision = precisions
            .into_iter()
            .map(|p| {
                best = best.min(p);
                best
            })
            .collect();
        Self { best_precision }
    }

    /// Best precision after `evals` evaluations; shorter runs hold their final value.
    pub fn at(&self, evals: usize) -> Option<f64> {
        let last = self.best_precision.len().checked_sub(1)?;
        Some(self.best_precision[evals.saturating_sub(1).min(last)])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("eval_index,best_precision\n");
        for (i, p) in self.best_precision.iter().enumerate() {
            let _ = writeln!(out, "{},{:e}", i + 1, p);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut best_precision = Vec::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let (_, value) = line.split_once(',').ok_or_else(|| format!("line {}: expected two columns", n + 1))?;
            let v: f64 = value.trim().parse().map_err(|e| format!("line {}: {e}", n + 1))?;
            best_precision.push(v);
        }
        Ok(Self { best_precision })
    }

    pub fn save_csv(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv())
    }
}

/// Reads every `f<fid>_i<iid>_s<seed>.csv` in `dir`, grouped by function id
/// in file-name order. Other files are ignored.
pub fn load_trajectory_dir(dir: &Path) -> Result<BTreeMap<u32, Vec<Trajectory>>, BbobError> {
    let err = |path: &Path, reason: String| BbobError::TrajectoryFile { path: path.display().to_string(), reason };
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| err(dir, e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    paths.sort();
    let mut out: BTreeMap<u32, Vec<Trajectory>> = BTreeMap::new();
    for path in paths {
        let Some(fid) = path.file_name().and_then(|n| n.to_str()).and_then(parse_stem) else {
            continue;
        };
        let text = std::fs::read_to_string(&path).map_err(|e| err(&path, e.to_string()))?;
        let traj = Trajectory::from_csv(&text).map_err(|e| err(&path, e))?;
        if traj.best_precision.is_empty() {
            return Err(err(&path, "no rows".into()));
        }
        out.entry(fid).or_default().push(traj);
    }
    if out.is_empty() {
        return Err(err(dir, "no trajectory files".into()));
    }
    Ok(out)
}

fn parse_stem(name: &str) -> Option<u32> {
    let stem = name.strip_suffix(".csv")?;
    let mut parts = stem.split('_');
    let fid = parts.next()?.strip_prefix('f')?.parse().ok()?;
    parts.next()?.strip_prefix('i')?.parse::<u32>().ok()?;
    parts.next()?.strip_prefix('s')?.parse::<u64>().ok()?;
    parts.next().is_none().then_some(fid)
}

/// Area over the convergence curve with clamp-then-log normalization.
pub fn aocc_with_bounds(traj: &Trajectory, budget: usize, lb: f64, ub: f64) -> Result<f64, BbobError> {
    if traj.best_precision.is_empty() {
        return Err(BbobError::EmptyTrajectory);
    }
    let (llb, lub) = (lb.log10(), ub.log10());
    let contribution = |p: f64| 1.0 - (p.clamp(lb, ub).log10() - llb) / (lub - llb);
    let n = traj.best_precision.len().min(budget);
    let observed: f64 = traj.best_precision[..n].iter().map(|&p| contribution(p)).sum();
    let padded = (budget - n) as f64 * contribution(traj.best_precision[n - 1]);
    Ok((observed + padded) / budget as f64)
}

pub fn aocc(traj: &Trajectory, budget: usize) -> Result<f64, BbobError> {
    aocc_with_bounds(traj, budget, AOCC_LB, AOCC_UB)
}

/// One grid cell of a candidate's evaluation: an AOCC value or a failure.
pub type Cell = Result<f64, String>;

/// Mean over functions and instances per seed, then mean over seeds. Any
/// failed cell makes the whole score 0.
pub fn aggregate_aocc(per_run: &BTreeMap<RunSlot, Cell>, suite: &Suite) -> Result<f64, BbobError> {
    let mut per_seed = Vec::with_capacity(suite.seeds.len());
    let mut failed = false;
    for &seed in &suite.seeds {
        let mut sum = 0.0;
        for f in &suite.functions {
            let slot = RunSlot { function_id: f.function_id, instance_id: f.instance_id, seed };
            match per_run.get(&slot) {
                None => {
                    return Err(BbobError::IncompleteGrid {
                        function_id: f.function_id,
                        instance_id: f.instance_id,
                        seed,
                    })
                }
                Some(Err(_)) => failed = true,
                Some(Ok(v)) => sum += v,
            }
        }
        per_seed.push(sum / suite.functions.len() as f64);
    }
    if failed {
        return Ok(0.0);
    }
    Ok(per_seed.iter().sum::<f64>() / per_seed.len() as f64)
}

/// Population standard deviation of the per-seed means (0 when any cell failed).
pub fn seed_std(per_run: &BTreeMap<RunSlot, Cell>, suite: &Suite) -> f64 {
    let mut means = Vec::new();
    for &seed in &suite.seeds {
        let vals: Option<Vec<f64>> = suite
            .functions
            .iter()
            .map(|f| {
                per_run
                    .get(&RunSlot { function_id: f.function_id, instance_id: f.instance_id, seed })
                    .and_then(|c| c.as_ref().ok().copied())
            })
            .collect();
        match vals {
            Some(v) if !v.is_empty() => means.push(v.iter().sum::<f64>() / v.len() as f64),
            _ => return 0.0,
        }
    }
    if means.is_empty() {
        return 0.0;
    }
    let m = means.iter().sum::<f64>() / means.len() as f64;
    (means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / means.len() as f64).sqrt()
}
