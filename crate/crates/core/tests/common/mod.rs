#![allow(dead_code)]

use std::path::Path;

use evohpo::bench::binpack::BinPackInstance;
use evohpo::bench::{BinPackBenchmark, SandboxRunner};
use evohpo::sandbox::ShimCommand;

pub fn native_child() -> ShimCommand {
    ShimCommand::new(env!("CARGO_BIN_EXE_evohpo-native-child"))
}

pub fn runner() -> SandboxRunner {
    SandboxRunner::new(native_child())
}

/// A response in the task prompt's format whose code selects a native behaviour.
pub fn response(name: &str, behaviours: &[&str], space: &str) -> String {
    let natives: String = behaviours.iter().map(|b| format!("# native: {b}\n")).collect();
    format!(
        "Here is my design.\n# Name: {name}\n# Code:\n```python\n{natives}import numpy as np\n\nclass {name}:\n    def __init__(self, alpha=0.5):\n        self.alpha = alpha\n\n    def score(self, item, bins):\n        return bins - item\n```\n# Space:\n```python\n{space}\n```\n"
    )
}

pub fn scorer_response(name: &str, behaviour: &str) -> String {
    response(name, &[behaviour], "{\"alpha\": (0.0, 1.0)}")
}

pub const BROKEN: &str = "# Name: Broken\n# Code:\n```python\nclass Broken:\n    pass\n```\nno space section here";

/// Ten capacity-10 instances on which first fit scores 0.8, worst fit 0.7
/// and best fit 0.9.
pub fn elitism_instances() -> Vec<BinPackInstance> {
    let mut v = vec![BinPackInstance { capacity: 10, items: vec![7] }; 4];
    v.extend(vec![BinPackInstance { capacity: 10, items: vec![2, 5, 7, 4] }; 3]);
    v.extend(vec![BinPackInstance { capacity: 10, items: vec![5, 7, 3, 4] }; 3]);
    v
}

pub fn elitism_bench() -> BinPackBenchmark {
    BinPackBenchmark::new(runner(), elitism_instances())
}

pub fn write_script(dir: &Path, responses: &[String]) {
    std::fs::create_dir_all(dir).unwrap();
    for (i, r) in responses.iter().enumerate() {
        std::fs::write(dir.join(format!("{i:03}.txt")), r).unwrap();
    }
}
