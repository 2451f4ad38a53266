//! Task prompts and the mutation feedback prompt.

use std::fmt::Write as _;

use crate::bench::{Problem, UnknownProblem};

const BINPACK: &str = include_str!("../templates/binpack.txt");
const TSP: &str = include_str!("../templates/tsp.txt");
const BBOB: &str = include_str!("../templates/bbob.txt");

pub const REFINE_INSTRUCTION: &str =
    "Either refine or redesign to improve the algorithm and provide both the code and a new configuration space.";

pub fn task_prompt(problem: Problem) -> &'static str {
    match problem {
        Problem::Binpack => BINPACK,
        Problem::Tsp => TSP,
        Problem::Bbob => BBOB,
    }
}

pub fn build_task_prompt(problem: &str) -> Result<&'static str, UnknownProblem> {
    Ok(task_prompt(problem.parse()?))
}

/// The algorithm the next mutation starts from.
#[derive(Debug, Clone, Copy)]
pub struct SelectedAlgorithm<'a> {
    pub name: &'a str,
    pub code: &'a str,
    pub score: f64,
    pub space_text: &'a str,
    /// Tuned hyper-parameters as a dictionary literal.
    pub hyper_parameters: Option<&'a str>,
    pub error: Option<&'a str>,
}

pub fn build_feedback_prompt(task: &str, history: &[(String, f64)], best: &SelectedAlgorithm<'_>) -> String {
    let mut out = String::with_capacity(task.len() + best.code.len() + 512);
    out.push_str(task);
    if !task.ends_with('\n') {
        out.push('\n');
    }
    out.push_str("\nList of previously generated algorithm names with their score:\n");
    for (name, score) in history {
        let _ = writeln!(out, "- {name}: {score:.6}");
    }
    let _ = writeln!(out, "\nSelected algorithm to refine:\nName: {}\nScore: {:.6}", best.name, best.score);
    if let Some(h) = best.hyper_parameters {
        let _ = writeln!(out, "Optimal hyper-parameters: {h}");
    }
    let _ = writeln!(out, "Configuration space:\n```python\n{}\n```", best.space_text.trim_end());
    let _ = writeln!(out, "Code:\n```python\n{}\n```", best.code.trim_end());
    if let Some(e) = best.error.filter(|e| !e.is_empty()) {
        let _ = writeln!(out, "The algorithm raised the following error:\n```\n{}\n```", e.trim_end());
    }
    out.push('\n');
    out.push_str(REFINE_INSTRUCTION);
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_prompts_name_the_expected_entry_points() {
        assert!(build_task_prompt("binpack").unwrap().contains("score(self, item, bins)"));
        assert!(build_task_prompt("tsp").unwrap().contains("update_edge_distance"));
        assert!(build_task_prompt("bbob").unwrap().contains("__init__(self, budget, dim)"));
        assert!(build_task_prompt("maxsat").is_err());
    }

    #[test]
    fn task_prompts_end_with_the_response_format() {
        for p in Problem::ALL {
            let text = task_prompt(p);
            assert!(text.ends_with("# Name: <name>\n# Code: <code>\n# Space: <configuration_space>\n"));
            assert!(text.contains("\"categoral_parameter\": [\"mouse\", \"cat\", \"dog\"]"));
        }
    }

    fn selected<'a>(error: Option<&'a str>) -> SelectedAlgorithm<'a> {
        SelectedAlgorithm {
            name: "B",
            code: "class B:\n    pass\n",
            score: 0.2,
            space_text: "{\"s1\": (0.1, 1.5)}",
            hyper_parameters: Some("{\"s1\": 0.75}"),
            error,
        }
    }

    #[test]
    fn feedback_lists_history_and_embeds_the_selected_algorithm() {
        let history = vec![("A".to_string(), 0.1), ("B".to_string(), 0.2)];
        let p = build_feedback_prompt("TASK\n", &history, &selected(None));
        assert!(p.starts_with("TASK\n"));
        let a = p.find("- A: 0.100000").unwrap();
        let b = p.find("- B: 0.200000").unwrap();
        assert!(a < b);
        assert!(p.contains("class B:\n    pass\n"));
        assert!(p.contains("Optimal hyper-parameters: {\"s1\": 0.75}"));
        assert!(!p.contains("error"));
        assert!(p.trim_end().ends_with(REFINE_INSTRUCTION));
    }

    #[test]
    fn feedback_quotes_tracebacks_verbatim() {
        let tb = "Traceback (most recent call last):\n  File \"x\", line 3\nZeroDivisionError: division by zero";
        let p = build_feedback_prompt("TASK", &[], &selected(Some(tb)));
        assert!(p.contains(tb));
    }
}
