//! Euclidean TSP with guided local search around best-improvement 2-opt.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sandbox::SandboxError;

pub const HELD_KARP_MAX: usize = 13;
const IMPROVEMENT_EPS: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum TspError {
    #[error("instance needs at least 3 cities, got {0}")]
    TooFew(usize),
    #[error("exact solver supports at most {HELD_KARP_MAX} cities, got {0}")]
    TooLarge(usize),
    #[error("updater failed: {0}")]
    Updater(#[from] SandboxError),
    #[error("updated matrix invalid: {0}")]
    MatrixInvalid(String),
    #[error("TSPLIB file: {0}")]
    Tsplib(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TspInstance {
    pub name: String,
    pub coords: Vec<(f64, f64)>,
    #[serde(skip)]
    pub dist: Vec<Vec<f64>>,
    pub optimum_length: Option<f64>,
}

impl TspInstance {
    pub fn from_coords(name: impl Into<String>, coords: Vec<(f64, f64)>) -> Self {
        let dist = coords
            .iter()
            .map(|a| coords.iter().map(|b| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()).collect())
            .collect();
        Self { name: name.into(), coords, dist, optimum_length: None }
    }

    /// Reads the JSON form written by `gen-instances`.
    pub fn from_json(text: &str) -> Result<Self, TspError> {
        let raw: Self = serde_json::from_str(text).map_err(|e| TspError::Tsplib(format!("instance JSON: {e}")))?;
        let mut inst = Self::from_coords(raw.name, raw.coords);
        inst.optimum_length = raw.optimum_length;
        Ok(inst)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Reads a TSPLIB file with `EDGE_WEIGHT_TYPE: EUC_2D`. Distances are
    /// kept as unrounded Euclidean lengths.
    pub fn from_tsplib(text: &str) -> Result<Self, TspError> {
        let mut name = String::from("tsplib");
        let mut in_coords = false;
        let mut coords = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line == "EOF" {
                break;
            }
            if in_coords {
                let parts: Vec<&str> = line.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(TspError::Tsplib(format!("bad coordinate line `{line}`")));
                }
                let parse = |s: &str| s.parse::<f64>().map_err(|e| TspError::Tsplib(format!("`{s}`: {e}")));
                coords.push((parse(parts[1])?, parse(parts[2])?));
                continue;
            }
            if line.starts_with("NODE_COORD_SECTION") {
                in_coords = true;
                continue;
            }
            if let Some((key, value)) = line.split_once(':') {
                let (key, value) = (key.trim(), value.trim());
                match key {
                    "NAME" => name = value.to_string(),
                    "EDGE_WEIGHT_TYPE" if value != "EUC_2D" => {
                        return Err(TspError::Tsplib(format!("unsupported EDGE_WEIGHT_TYPE {value}")))
                    }
                    _ => {}
                }
            }
        }
        if coords.len() < 3 {
            return Err(TspError::TooFew(coords.len()));
        }
        Ok(Self::from_coords(name, coords))
    }

    pub fn load_tsplib(path: &Path) -> Result<Self, TspError> {
        let text = std::fs::read_to_string(path).map_err(|e| TspError::Tsplib(format!("{}: {e}", path.display())))?;
        Self::from_tsplib(&text)
    }
}

/// `n` points uniform in the unit square.
pub fn gen_instance<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<TspInstance, TspError> {
    if n < 3 {
        return Err(TspError::TooFew(n));
    }
    let coords = (0..n).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
    Ok(TspInstance::from_coords(format!("uniform{n}"), coords))
}

pub fn random_tour<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut tour: Vec<usize> = (0..n).collect();
    tour.shuffle(rng);
    tour
}

/// Closed tour length. The sum always starts at the smallest node and runs
/// towards its smaller neighbour, so rotations and reversals of one tour give
/// bit-identical lengths on a symmetric matrix.
pub fn tour_length(matrix: &[Vec<f64>], tour: &[usize]) -> f64 {
    let n = tour.len();
    if n == 0 {
        return 0.0;
    }
    let start = (0..n).min_by_key(|&k| tour[k]).expect("tour is non-empty");
    let forward = tour[(start + 1) % n] <= tour[(start + n - 1) % n];
    let at = |k: usize| if forward { tour[(start + k) % n] } else { tour[(start + n - k % n) % n] };
    (0..n).map(|k| matrix[at(k)][at(k + 1)]).sum()
}

fn weight(m: &[Vec<f64>], a: usize, b: usize) -> f64 {
    0.5 * (m[a][b] + m[b][a])
}

/// Best-improvement 2-opt under `matrix`, scanning moves in lexicographic
/// order and applying the single best strict improvement per pass.
pub fn local_search_2opt(matrix: &[Vec<f64>], start: &[usize]) -> Vec<usize> {
    let mut tour = start.to_vec();
    let n = tour.len();
    if n < 4 {
        return tour;
    }
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n - 1 {
            let (a, b) = (tour[i], tour[i + 1]);
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let (c, d) = (tour[j], tour[(j + 1) % n]);
                let delta = weight(matrix, a, c) + weight(matrix, b, d) - weight(matrix, a, b) - weight(matrix, c, d);
                if delta < -IMPROVEMENT_EPS && best.is_none_or(|(bd, _, _)| delta < bd) {
                    best = Some((delta, i, j));
                }
            }
        }
        match best {
            Some((_, i, j)) => tour[i + 1..=j].reverse(),
            None => return tour,
        }
    }
}

/// Proposes the working matrix for the next local search.
pub trait EdgeUpdater {
    fn update(
        &mut self,
        edge_distance: &[Vec<f64>],
        local_opt_tour: &[usize],
        edge_n_used: &[Vec<u64>],
    ) -> Result<Vec<Vec<f64>>, SandboxError>;
}

pub struct FnUpdater<F>(pub F);

impl<F> EdgeUpdater for FnUpdater<F>
where
    F: FnMut(&[Vec<f64>], &[usize], &[Vec<u64>]) -> Vec<Vec<f64>>,
{
    fn update(&mut self, d: &[Vec<f64>], tour: &[usize], used: &[Vec<u64>]) -> Result<Vec<Vec<f64>>, SandboxError> {
        Ok((self.0)(d, tour, used))
    }
}

pub fn identity_updater() -> impl EdgeUpdater {
    FnUpdater(|d: &[Vec<f64>], _: &[usize], _: &[Vec<u64>]| d.to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlsRun {
    pub best_tour: Vec<usize>,
    /// Length of `best_tour` on the true distance matrix.
    pub best_length: f64,
    /// Best length after each local search.
    pub history: Vec<f64>,
    pub iterations: usize,
    #[serde(skip)]
    pub edge_n_used: Vec<Vec<u64>>,
}

fn check_matrix(m: &[Vec<f64>], n: usize) -> Result<(), TspError> {
    if m.len() != n || m.iter().any(|r| r.len() != n) {
        return Err(TspError::MatrixInvalid(format!("expected {n}x{n}")));
    }
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(TspError::MatrixInvalid("non-finite entry".into()));
    }
    Ok(())
}

/// Guided local search: 2-opt on the working matrix, scoring on the true one,
/// with the updater reshaping the working matrix between local searches. The
/// updater always receives the true distances.
pub fn gls_run<R: Rng + ?Sized>(
    instance: &TspInstance,
    updater: &mut dyn EdgeUpdater,
    budget_iterations: usize,
    wall_limit: Option<Duration>,
    rng: &mut R,
) -> Result<GlsRun, TspError> {
    let start = random_tour(instance.len(), rng);
    gls_run_from(instance, &start, updater, budget_iterations, wall_limit)
}

/// [`gls_run`] from a given starting permutation.
pub fn gls_run_from(
    instance: &TspInstance,
    start: &[usize],
    updater: &mut dyn EdgeUpdater,
    budget_iterations: usize,
    wall_limit: Option<Duration>,
) -> Result<GlsRun, TspError> {
    let n = instance.len();
    if n < 3 {
        return Err(TspError::TooFew(n));
    }
    let started = Instant::now();
    let mut tour = start.to_vec();
    let mut working = instance.dist.clone();
    let mut used = vec![vec![0u64; n]; n];
    let mut best_tour = tour.clone();
    let mut best_length = f64::INFINITY;
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < budget_iterations.max(1) {
        tour = local_search_2opt(&working, &tour);
        iterations += 1;
        let length = tour_length(&instance.dist, &tour);
        if length < best_length {
            best_length = length;
            best_tour = tour.clone();
        }
        history.push(best_length);
        for k in 0..n {
            let (a, b) = (tour[k], tour[(k + 1) % n]);
            used[a][b] += 1;
            used[b][a] += 1;
        }
        let out_of_time = wall_limit.is_some_and(|w| started.elapsed() >= w);
        if iterations >= budget_iterations || out_of_time {
            break;
        }
        working = updater.update(&instance.dist, &tour, &used)?;
        check_matrix(&working, n)?;
    }
    Ok(GlsRun { best_tour, best_length, history, iterations, edge_n_used: used })
}

/// Exact optimum by dynamic programming over subsets.
pub fn optimal_tour(instance: &TspInstance) -> Result<(Vec<usize>, f64), TspError> {
    let n = instance.len();
    if n > HELD_KARP_MAX {
        return Err(TspError::TooLarge(n));
    }
    if n <= 3 {
        let tour: Vec<usize> = (0..n).collect();
        let len = if n < 2 { 0.0 } else { tour_length(&instance.dist, &tour) };
        return Ok((tour, len));
    }
    let d = &instance.dist;
    let m = n - 1;
    let full = 1usize << m;
    let mut cost = vec![f64::INFINITY; full * m];
    let mut parent = vec![usize::MAX; full * m];
    for j in 0..m {
        cost[(1 << j) * m + j] = d[0][j + 1];
    }
    for set in 1..full {
        for j in 0..m {
            if set & (1 << j) == 0 {
                continue;
            }
            let here = cost[set * m + j];
            if !here.is_finite() {
                continue;
            }
            for k in 0..m {
                if set & (1 << k) != 0 {
                    continue;
                }
                let next = set | (1 << k);
                let c = here + d[j + 1][k + 1];
                if c < cost[next * m + k] {
                    cost[next * m + k] = c;
                    parent[next * m + k] = j;
                }
            }
        }
    }
    let last_set = full - 1;
    let (mut last, mut best) = (0, f64::INFINITY);
    for j in 0..m {
        let c = cost[last_set * m + j] + d[j + 1][0];
        if c < best {
            best = c;
            last = j;
        }
    }
    let mut tour = Vec::with_capacity(n);
    let mut set = last_set;
    let mut j = last;
    while j != usize::MAX {
        tour.push(j + 1);
        let p = parent[set * m + j];
        set &= !(1 << j);
        j = p;
    }
    tour.push(0);
    tour.reverse();
    let best = tour_length(d, &tour);
    Ok((tour, best))
}

/// Best length over `starts` random-start 2-opt runs.
pub fn reference_length<R: Rng + ?Sized>(instance: &TspInstance, starts: usize, rng: &mut R) -> f64 {
    (0..starts.max(1))
        .map(|_| {
            let t = local_search_2opt(&instance.dist, &random_tour(instance.len(), rng));
            tour_length(&instance.dist, &t)
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn gap_percent(tour_length: f64, optimum_length: f64) -> f64 {
    100.0 * (tour_length - optimum_length) / optimum_length
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TspResult {
    pub instance: String,
    pub tour: Vec<usize>,
    pub length: f64,
    pub gap: f64,
    /// `optimal` when the reference is exact, `reference` otherwise.
    pub gap_kind: String,
    pub time_s: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn square() -> TspInstance {
        TspInstance::from_coords("square", vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)])
    }

    #[test]
    fn square_perimeter() {
        let s = square();
        assert_eq!(tour_length(&s.dist, &[0, 1, 2, 3]), 4.0);
        let (_, len) = optimal_tour(&s).unwrap();
        assert_eq!(len, 4.0);
    }

    #[test]
    fn two_opt_uncrosses_the_square() {
        let s = square();
        let t = local_search_2opt(&s.dist, &[0, 2, 1, 3]);
        assert_eq!(tour_length(&s.dist, &t), 4.0);
        assert_eq!(local_search_2opt(&s.dist, &t), t);
    }

    #[test]
    fn two_opt_never_lengthens() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let inst = gen_instance(30, &mut rng).unwrap();
            let start = random_tour(30, &mut rng);
            let out = local_search_2opt(&inst.dist, &start);
            assert!(tour_length(&inst.dist, &out) <= tour_length(&inst.dist, &start));
            let mut sorted = out.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..30).collect::<Vec<_>>());
        }
    }

    #[test]
    fn generated_instances_are_reproducible_and_bounded() {
        let a = gen_instance(100, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = gen_instance(100, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a.dist, b.dist);
        assert!(a.dist.iter().flatten().all(|&d| d <= 2f64.sqrt()));
        assert!(matches!(gen_instance(2, &mut ChaCha8Rng::seed_from_u64(0)), Err(TspError::TooFew(2))));
    }

    #[test]
    fn held_karp_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let big = gen_instance(14, &mut rng).unwrap();
        assert!(matches!(optimal_tour(&big), Err(TspError::TooLarge(14))));
        let ok = gen_instance(13, &mut rng).unwrap();
        let (tour, len) = optimal_tour(&ok).unwrap();
        assert_eq!(tour.len(), 13);
        assert!((tour_length(&ok.dist, &tour) - len).abs() < 1e-12);
    }

    #[test]
    fn wrong_shaped_update_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inst = gen_instance(8, &mut rng).unwrap();
        let mut bad = FnUpdater(|d: &[Vec<f64>], _: &[usize], _: &[Vec<u64>]| d[1..].to_vec());
        assert!(matches!(gls_run(&inst, &mut bad, 3, None, &mut rng), Err(TspError::MatrixInvalid(_))));
    }

    #[test]
    fn edge_usage_counts_every_local_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let inst = gen_instance(10, &mut rng).unwrap();
        let run = gls_run(&inst, &mut identity_updater(), 4, None, &mut rng).unwrap();
        let total: u64 = run.edge_n_used.iter().flatten().sum();
        assert_eq!(total, 4 * 10 * 2);
        assert!(run.history.windows(2).all(|w| w[1] <= w[0]));
        assert!((tour_length(&inst.dist, &run.best_tour) - run.best_length).abs() < 1e-12);
    }

    #[test]
    fn penalties_escape_a_two_opt_trap() {
        let coords = vec![(0.044, 0.759), (0.344, 0.074), (0.232, 0.989), (0.083, 0.249), (0.780, 0.767), (0.958, 0.419), (0.334, 0.522)];
        let inst = TspInstance::from_coords("trap", coords);
        let start = [1, 3, 5, 0, 2, 6, 4];
        let (_, opt) = optimal_tour(&inst).unwrap();
        let trapped = tour_length(&inst.dist, &local_search_2opt(&inst.dist, &start));
        assert!(trapped > opt + 0.1, "{trapped} vs {opt}");
        let delta = 0.3 * trapped / 7.0;
        let mut penalize = FnUpdater(move |d: &[Vec<f64>], _: &[usize], used: &[Vec<u64>]| {
            d.iter()
                .zip(used)
                .map(|(row, u)| row.iter().zip(u).map(|(v, c)| v + delta * *c as f64).collect())
                .collect()
        });
        let run = gls_run_from(&inst, &start, &mut penalize, 5, None).unwrap();
        assert!((run.best_length - opt).abs() < 1e-12, "{:?} vs {opt}", run.history);
    }

    #[test]
    fn equivalent_tours_have_identical_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inst = gen_instance(9, &mut rng).unwrap();
        let tour = random_tour(9, &mut rng);
        let len = tour_length(&inst.dist, &tour);
        for r in 0..9 {
            let mut t = tour.clone();
            t.rotate_left(r);
            assert_eq!(tour_length(&inst.dist, &t).to_bits(), len.to_bits());
            t.reverse();
            assert_eq!(tour_length(&inst.dist, &t).to_bits(), len.to_bits());
        }
    }

    #[test]
    fn gap_arithmetic() {
        assert_eq!(gap_percent(1.0, 1.0), 0.0);
        assert!((gap_percent(1.05, 1.0) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn reads_tsplib_euc2d() {
        let text = "NAME : tiny\nTYPE : TSP\nDIMENSION : 4\nEDGE_WEIGHT_TYPE : EUC_2D\nNODE_COORD_SECTION\n1 0 0\n2 3 0\n3 3 4\n4 0 4\nEOF\n";
        let inst = TspInstance::from_tsplib(text).unwrap();
        assert_eq!(inst.name, "tiny");
        assert_eq!(inst.dist[0][2], 5.0);
        let geo = text.replace("EUC_2D", "GEO");
        assert!(matches!(TspInstance::from_tsplib(&geo), Err(TspError::Tsplib(_))));
    }
}
