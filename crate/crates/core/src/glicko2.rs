//! Glicko-2 ratings and the fixed-budget trajectory tournament.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::bbob::Trajectory;

/// Conversion factor between the display scale and the internal scale.
pub const SCALE: f64 = 173.7178;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingState {
    pub rating: f64,
    pub deviation: f64,
    pub volatility: f64,
}

impl Default for RatingState {
    fn default() -> Self {
        Self { rating: 1500.0, deviation: 350.0, volatility: 0.06 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Glicko2Config {
    /// System constant constraining volatility change.
    pub tau: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
}

impl Default for Glicko2Config {
    fn default() -> Self {
        Self { tau: 0.5, epsilon: 1e-6, max_iterations: 100 }
    }
}

/// One game from the rated player's point of view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameResult {
    pub opponent_rating: f64,
    pub opponent_deviation: f64,
    /// 1 for a win, 0.5 for a draw, 0 for a loss.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GlickoError {
    #[error("volatility iteration did not converge within {0} iterations")]
    NonConvergence(usize),
    #[error("algorithm `{algorithm}` has no trajectory for function {function_id}")]
    MissingTrajectory { algorithm: String, function_id: u32 },
    #[error("tournament needs at least one algorithm")]
    NoPlayers,
}

fn g(phi: f64) -> f64 {
    1.0 / (1.0 + 3.0 * phi * phi / (std::f64::consts::PI * std::f64::consts::PI)).sqrt()
}

fn expected(mu: f64, mu_j: f64, phi_j: f64) -> f64 {
    1.0 / (1.0 + (-g(phi_j) * (mu - mu_j)).exp())
}

/// Rates one player over a single rating period.
pub fn glicko2_update(state: RatingState, results: &[GameResult], cfg: &Glicko2Config) -> Result<RatingState, GlickoError> {
    let mu = (state.rating - 1500.0) / SCALE;
    let phi = state.deviation / SCALE;
    let sigma = state.volatility;
    if results.is_empty() {
        let phi_star = (phi * phi + sigma * sigma).sqrt();
        return Ok(RatingState { deviation: phi_star * SCALE, ..state });
    }

    let mut sorted = results.to_vec();
    sorted.sort_by(|a, b| {
        a.opponent_rating
            .total_cmp(&b.opponent_rating)
            .then(a.opponent_deviation.total_cmp(&b.opponent_deviation))
            .then(a.score.total_cmp(&b.score))
    });
    let games: Vec<(f64, f64, f64)> = sorted
        .iter()
        .map(|r| ((r.opponent_rating - 1500.0) / SCALE, r.opponent_deviation / SCALE, r.score))
        .collect();

    let v = 1.0
        / games
            .iter()
            .map(|&(mu_j, phi_j, _)| {
                let e = expected(mu, mu_j, phi_j);
                g(phi_j).powi(2) * e * (1.0 - e)
            })
            .sum::<f64>();
    let improvement_sum: f64 = games.iter().map(|&(mu_j, phi_j, s)| g(phi_j) * (s - expected(mu, mu_j, phi_j))).sum();
    let delta = v * improvement_sum;

    let sigma_new = new_volatility(phi, sigma, v, delta, cfg)?;
    let phi_star = (phi * phi + sigma_new * sigma_new).sqrt();
    let phi_new = 1.0 / (1.0 / (phi_star * phi_star) + 1.0 / v).sqrt();
    let mu_new = mu + phi_new * phi_new * improvement_sum;
    Ok(RatingState { rating: SCALE * mu_new + 1500.0, deviation: SCALE * phi_new, volatility: sigma_new })
}

/// Illinois-style regula falsi on the volatility equation.
fn new_volatility(phi: f64, sigma: f64, v: f64, delta: f64, cfg: &Glicko2Config) -> Result<f64, GlickoError> {
    let tau = cfg.tau;
    let a = (sigma * sigma).ln();
    let f = |x: f64| {
        let ex = x.exp();
        ex * (delta * delta - phi * phi - v - ex) / (2.0 * (phi * phi + v + ex).powi(2)) - (x - a) / (tau * tau)
    };
    let mut big_a = a;
    let mut big_b = if delta * delta > phi * phi + v {
        (delta * delta - phi * phi - v).ln()
    } else {
        let mut k = 1.0;
        let mut steps = 0;
        while f(a - k * tau) < 0.0 {
            k += 1.0;
            steps += 1;
            if steps > cfg.max_iterations {
                return Err(GlickoError::NonConvergence(cfg.max_iterations));
            }
        }
        a - k * tau
    };
    let mut f_a = f(big_a);
    let mut f_b = f(big_b);
    let mut iterations = 0;
    while (big_b - big_a).abs() > cfg.epsilon {
        iterations += 1;
        if iterations > cfg.max_iterations {
            return Err(GlickoError::NonConvergence(cfg.max_iterations));
        }
        let c = big_a + (big_a - big_b) * f_a / (f_b - f_a);
        let f_c = f(c);
        if f_c * f_b <= 0.0 {
            big_a = big_b;
            f_a = f_b;
        } else {
            f_a /= 2.0;
        }
        big_b = c;
        f_b = f_c;
    }
    Ok((big_a / 2.0).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub function_id: u32,
    pub budget_sampled: usize,
    pub player_a: String,
    pub player_b: String,
    pub score_a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TournamentConfig {
    pub games_per_function: usize,
    pub max_budget: usize,
    pub seed: u64,
    pub glicko: Glicko2Config,
}

impl Default for TournamentConfig {
    fn default() -> Self {
        Self { games_per_function: 200, max_budget: 10_000, seed: 0, glicko: Glicko2Config::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standing {
    pub id: String,
    pub rating: f64,
    pub deviation: f64,
    pub volatility: f64,
    pub games: usize,
    pub wins: usize,
    pub draws: usize,
    pub losses: usize,
}

/// Trajectories per algorithm, grouped by function id.
pub type TrajectorySets = BTreeMap<String, BTreeMap<u32, Vec<Trajectory>>>;

/// Plays every pair of algorithms `games_per_function` times on every
/// function at a random budget, then rates everyone in one period against
/// the opponents' starting ratings. Standings are sorted by rating.
pub fn tournament(sets: &TrajectorySets, cfg: &TournamentConfig) -> Result<(Vec<Standing>, Vec<MatchOutcome>), GlickoError> {
    if sets.is_empty() {
        return Err(GlickoError::NoPlayers);
    }
    let functions: Vec<u32> = {
        let mut all: Vec<u32> = sets.values().flat_map(|m| m.keys().copied()).collect();
        all.sort_unstable();
        all.dedup();
        all
    };
    for (name, per_fn) in sets {
        for &fid in &functions {
            if per_fn.get(&fid).is_none_or(|runs| runs.iter().all(|t| t.best_precision.is_empty())) {
                return Err(GlickoError::MissingTrajectory { algorithm: name.clone(), function_id: fid });
            }
        }
    }
    let names: Vec<&String> = sets.keys().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut outcomes = Vec::new();
    for &fid in &functions {
        for _ in 0..cfg.games_per_function {
            for i in 0..names.len() {
                for j in i + 1..names.len() {
                    let u = rng.random_range(1..=cfg.max_budget.max(1));
                    let runs_a = &sets[names[i]][&fid];
                    let runs_b = &sets[names[j]][&fid];
                    let ta = &runs_a[rng.random_range(0..runs_a.len())];
                    let tb = &runs_b[rng.random_range(0..runs_b.len())];
                    let (pa, pb) = (ta.at(u).unwrap_or(f64::INFINITY), tb.at(u).unwrap_or(f64::INFINITY));
                    let score_a = if pa < pb {
                        1.0
                    } else if pa > pb {
                        0.0
                    } else {
                        0.5
                    };
                    outcomes.push(MatchOutcome {
                        function_id: fid,
                        budget_sampled: u,
                        player_a: names[i].clone(),
                        player_b: names[j].clone(),
                        score_a,
                    });
                }
            }
        }
    }

    let initial = RatingState::default();
    let mut results: BTreeMap<&str, Vec<GameResult>> = names.iter().map(|n| (n.as_str(), Vec::new())).collect();
    for o in &outcomes {
        let game = |score| GameResult {
            opponent_rating: initial.rating,
            opponent_deviation: initial.deviation,
            score,
        };
        results.get_mut(o.player_a.as_str()).expect("known player").push(game(o.score_a));
        results.get_mut(o.player_b.as_str()).expect("known player").push(game(1.0 - o.score_a));
    }
    let mut standings = Vec::with_capacity(names.len());
    for (name, games) in results {
        let rated = glicko2_update(initial, &games, &cfg.glicko)?;
        let count = |s: f64| games.iter().filter(|g| g.score == s).count();
        standings.push(Standing {
            id: name.to_string(),
            rating: rated.rating,
            deviation: rated.deviation,
            volatility: rated.volatility,
            games: games.len(),
            wins: count(1.0),
            draws: count(0.5),
            losses: count(0.0),
        });
    }
    standings.sort_by(|a, b| b.rating.total_cmp(&a.rating).then(a.id.cmp(&b.id)));
    Ok((standings, outcomes))
}

pub fn standings_csv(standings: &[Standing]) -> String {
    let mut out = String::from("ID,Rating,Deviation,Volatility,Games,Win,Draw,Loss\n");
    for s in standings {
        let _ = writeln!(
            out,
            "{},{:.2},{:.2},{:.6},{},{},{},{}",
            s.id, s.rating, s.deviation, s.volatility, s.games, s.wins, s.draws, s.losses
        );
    }
    out
}

pub fn standings_table(standings: &[Standing]) -> String {
    let width = standings.iter().map(|s| s.id.len()).max().unwrap_or(2).max(2);
    let mut out = format!(
        "{:<width$}  {:>8}  {:>9}  {:>10}  {:>6}  {:>5}  {:>5}  {:>5}\n",
        "ID", "Rating", "Deviation", "Volatility", "Games", "Win", "Draw", "Loss"
    );
    for s in standings {
        let _ = writeln!(
            out,
            "{:<width$}  {:>8.2}  {:>9.2}  {:>10.6}  {:>6}  {:>5}  {:>5}  {:>5}",
            s.id, s.rating, s.deviation, s.volatility, s.games, s.wins, s.draws, s.losses
        );
    }
    out
}
