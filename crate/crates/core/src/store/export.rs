//! Convergence series for plotting: best fitness against LLM queries and
//! against full benchmark evaluations.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use num_rational::Ratio;

use super::events::read_events;
use super::replay::replay;
use super::StoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Series {
    FitnessVsLlmQueries,
    FitnessVsFullEvals,
}

impl FromStr for Series {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fitness-vs-llm-queries" => Ok(Series::FitnessVsLlmQueries),
            "fitness-vs-full-evals" => Ok(Series::FitnessVsFullEvals),
            other => Err(format!("unknown series `{other}` (fitness-vs-llm-queries or fitness-vs-full-evals)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergencePoint {
    pub llm_queries: u64,
    pub full_benchmark_evals: Ratio<u64>,
    pub best_fitness: f64,
    pub best_raw: Option<f64>,
}

pub fn convergence_points(run_dir: &Path) -> Result<Vec<ConvergencePoint>, StoreError> {
    let events = read_events(&run_dir.join("events.jsonl"))?;
    let r = replay(&events)?;
    Ok(r.selections
        .iter()
        .map(|s| ConvergencePoint {
            llm_queries: s.llm_queries,
            full_benchmark_evals: Ratio::new(s.instance_evals_total, s.full_set_size.max(1)),
            best_fitness: s.best_fitness,
            best_raw: s.best_raw,
        })
        .collect())
}

fn raw_cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn render(points: &[ConvergencePoint], series: Series) -> String {
    let mut out = match series {
        Series::FitnessVsLlmQueries => String::from("llm_queries,best_fitness,best_raw\n"),
        Series::FitnessVsFullEvals => String::from("full_benchmark_evals,full_benchmark_evals_exact,best_fitness,best_raw\n"),
    };
    for p in points {
        let _ = match series {
            Series::FitnessVsLlmQueries => writeln!(out, "{},{},{}", p.llm_queries, p.best_fitness, raw_cell(p.best_raw)),
            Series::FitnessVsFullEvals => {
                let r = p.full_benchmark_evals;
                writeln!(
                    out,
                    "{},{},{},{}",
                    *r.numer() as f64 / *r.denom() as f64,
                    r,
                    p.best_fitness,
                    raw_cell(p.best_raw)
                )
            }
        };
    }
    out
}

/// Both series as CSV text: (by LLM queries, by full benchmark evaluations).
pub fn export_convergence(run_dir: &Path) -> Result<(String, String), StoreError> {
    let points = convergence_points(run_dir)?;
    Ok((render(&points, Series::FitnessVsLlmQueries), render(&points, Series::FitnessVsFullEvals)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_column_is_exact() {
        let p = ConvergencePoint {
            llm_queries: 1,
            full_benchmark_evals: Ratio::new(2216, 216),
            best_fitness: 0.5,
            best_raw: Some(0.5),
        };
        let csv = render(&[p], Series::FitnessVsFullEvals);
        assert_eq!(csv.lines().nth(1).unwrap().split(',').nth(1).unwrap(), "277/27");
    }

    #[test]
    fn series_names_parse() {
        assert_eq!("fitness-vs-llm-queries".parse::<Series>().unwrap(), Series::FitnessVsLlmQueries);
        assert!("fitness".parse::<Series>().is_err());
    }
}
