//! Protocol-compatible child that runs built-in heuristics instead of
//! interpreting candidate source. The candidate code selects a behaviour with
//! a `# native: <behaviour>` line, which lets the orchestrator be exercised
//! end to end without an interpreter.

use std::io::{self, BufRead, Write};
use std::process::ExitCode;
use std::thread;
use std::time::Duration;

use evohpo::configspace::{parse_assignment, ConfigAssignment, ParamValue};
use evohpo::sandbox::{Message, Role};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Behaviour {
    name: String,
    arg: Option<String>,
}

impl Behaviour {
    fn arg_usize(&self) -> usize {
        self.arg.as_deref().and_then(|a| a.parse().ok()).unwrap_or(0)
    }
}

struct Candidate {
    behaviours: Vec<Behaviour>,
    config: ConfigAssignment,
    rng: ChaCha8Rng,
    requests: usize,
}

impl Candidate {
    fn has(&self, name: &str) -> Option<&Behaviour> {
        self.behaviours.iter().find(|b| b.name == name)
    }

    fn main_behaviour(&self) -> &Behaviour {
        self.behaviours
            .iter()
            .find(|b| !matches!(b.name.as_str(), "require_param" | "sleep" | "raise_after" | "garbage" | "die_after"))
            .unwrap_or(&self.behaviours[0])
    }

    fn param(&self, name: &str, default: f64) -> f64 {
        self.config.get(name).and_then(ParamValue::as_f64).unwrap_or(default)
    }
}

fn traceback(method: &str, exception: &str) -> String {
    format!("Traceback (most recent call last):\n  File \"<candidate>\", line 1, in {method}\n{exception}")
}

fn send(out: &mut impl Write, msg: &Message) -> io::Result<()> {
    writeln!(out, "{}", msg.to_line())?;
    out.flush()
}

fn behaviours(code: &str) -> Vec<Behaviour> {
    code.lines()
        .filter_map(|l| l.trim().strip_prefix('#'))
        .filter_map(|l| l.trim().strip_prefix("native:"))
        .map(|spec| {
            let spec = spec.trim();
            match spec.split_once(':') {
                Some((name, arg)) => Behaviour { name: name.trim().into(), arg: Some(arg.trim().into()) },
                None => Behaviour { name: spec.into(), arg: None },
            }
        })
        .collect()
}

fn construct(role: Role, code: &str, config: &str, seed: u64) -> Result<Candidate, String> {
    let classes = code.lines().filter(|l| l.starts_with("class ")).count();
    if classes > 1 {
        return Err("ambiguous candidate: multiple classes".into());
    }
    let behaviours = behaviours(code);
    if behaviours.is_empty() {
        return Err(traceback("<module>", "NameError: no `# native:` behaviour declared"));
    }
    if behaviours.iter().any(|b| b.name == "syntax_error") {
        return Err("  File \"<candidate>\", line 2\n    def score(self item, bins):\n                   ^\nSyntaxError: invalid syntax".into());
    }
    let config = parse_assignment(config).map_err(|e| traceback("<module>", &format!("ValueError: bad config: {e}")))?;
    for b in behaviours.iter().filter(|b| b.name == "require_param") {
        let name = b.arg.clone().unwrap_or_default();
        if config.get(&name).is_none() {
            return Err(traceback(
                "__init__",
                &format!("TypeError: __init__() missing 1 required positional argument: '{name}'"),
            ));
        }
    }
    let candidate = Candidate { behaviours, config, rng: ChaCha8Rng::seed_from_u64(seed), requests: 0 };
    let main = candidate.main_behaviour().name.as_str();
    let supported = match role {
        Role::Score => matches!(
            main,
            "best_fit" | "first_fit" | "worst_fit" | "bins_minus_item" | "param_fit" | "random_scores" | "raise_on_score"
        ),
        Role::UpdateMatrix => matches!(main, "identity" | "penalize_used" | "wrong_shape" | "nan"),
        Role::Optimize => {
            matches!(main, "random_search" | "gaussian_walk" | "overbudget" | "crash_after" | "exit_silently_after")
        }
    };
    if !supported {
        return Err(traceback("<module>", &format!("AttributeError: behaviour `{main}` has no {role} method")));
    }
    Ok(candidate)
}

fn score(c: &mut Candidate, item: i64, bins: &[i64]) -> Result<Vec<f64>, String> {
    let item = item as f64;
    let scores = match c.main_behaviour().name.as_str() {
        "best_fit" => bins.iter().map(|&b| -(b as f64 - item)).collect(),
        "first_fit" => vec![0.0; bins.len()],
        "worst_fit" | "bins_minus_item" => bins.iter().map(|&b| b as f64 - item).collect(),
        "param_fit" => {
            let target = c.param("target", 0.0);
            bins.iter().map(|&b| -((b as f64 - item) - target).abs()).collect()
        }
        "random_scores" => bins.iter().map(|_| c.rng.random::<f64>()).collect(),
        _ => return Err(traceback("score", "ZeroDivisionError: division by zero")),
    };
    Ok(scores)
}

fn update_matrix(c: &Candidate, d: Vec<Vec<f64>>, tour: &[usize], used: &[Vec<u64>]) -> Vec<Vec<f64>> {
    match c.main_behaviour().name.as_str() {
        "penalize_used" => {
            let delta = c.param("delta", 0.1);
            let mut out = d.clone();
            let n = tour.len();
            for k in 0..n {
                let (a, b) = (tour[k], tour[(k + 1) % n]);
                let bump = delta * used[a][b] as f64;
                out[a][b] += bump;
                out[b][a] += bump;
            }
            out
        }
        "wrong_shape" => d.into_iter().skip(1).collect(),
        "nan" => d.into_iter().map(|row| row.into_iter().map(|_| f64::NAN).collect()).collect(),
        _ => d,
    }
}

enum Exit {
    Clean,
    Crash(String),
}

fn optimize(
    c: &mut Candidate,
    budget: u64,
    dim: usize,
    lb: f64,
    ub: f64,
    lines: &mut impl Iterator<Item = io::Result<String>>,
    out: &mut impl Write,
) -> io::Result<Option<Exit>> {
    let name = c.main_behaviour().name.clone();
    let arg = c.main_behaviour().arg_usize();
    let calls = match name.as_str() {
        "overbudget" => budget + 1,
        "crash_after" | "exit_silently_after" => arg as u64,
        _ => budget,
    };
    let sigma = c.param("sigma", 0.5);
    let mut best_f = f64::INFINITY;
    let mut best_x = vec![0.0; dim];
    for _ in 0..calls {
        let x: Vec<f64> = if name == "gaussian_walk" && best_f.is_finite() {
            best_x.iter().map(|&v| (v + sigma * gaussian(&mut c.rng)).clamp(lb, ub)).collect()
        } else {
            (0..dim).map(|_| c.rng.random_range(lb..=ub)).collect()
        };
        send(out, &Message::EvalQuery { x: x.clone() })?;
        let Some(line) = lines.next().transpose()? else { return Ok(Some(Exit::Clean)) };
        match Message::from_line(&line) {
            Ok(Message::EvalReply { f }) => {
                if f < best_f {
                    best_f = f;
                    best_x = x;
                }
            }
            Ok(Message::ErrorReport { traceback: t }) => {
                return Ok(Some(Exit::Crash(traceback("__call__", &format!("RuntimeError: {t}")))))
            }
            _ => return Ok(Some(Exit::Crash(traceback("__call__", "RuntimeError: unexpected reply")))),
        }
    }
    match name.as_str() {
        "crash_after" => Ok(Some(Exit::Crash(traceback("__call__", "IndexError: list index out of range")))),
        "exit_silently_after" => Ok(Some(Exit::Clean)),
        _ => {
            send(out, &Message::OptimizeDone { f_opt: best_f, x_opt: best_x })?;
            Ok(None)
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn serve() -> io::Result<Exit> {
    let stdin = io::stdin();
    let mut lines = stdin.lock().lines();
    let stdout = io::stdout();
    let mut out = stdout.lock();

    let Some(first) = lines.next().transpose()? else { return Ok(Exit::Clean) };
    let (role, mut candidate) = match Message::from_line(&first) {
        Ok(Message::Init { role, code, config, seed }) => match construct(role, &code, &config, seed) {
            Ok(c) => (role, c),
            Err(tb) => {
                send(&mut out, &Message::ErrorReport { traceback: tb })?;
                return Ok(Exit::Clean);
            }
        },
        _ => return Ok(Exit::Crash("first message must be Init".into())),
    };
    send(&mut out, &Message::Ready {})?;

    while let Some(line) = lines.next().transpose()? {
        let request = match Message::from_line(&line) {
            Ok(m) => m,
            Err(e) => return Ok(Exit::Crash(format!("unreadable request: {e}"))),
        };
        candidate.requests += 1;
        if let Some(b) = candidate.has("sleep") {
            thread::sleep(Duration::from_millis(b.arg_usize() as u64));
        }
        if candidate.has("garbage").is_some() {
            writeln!(out, "this is not a protocol line")?;
            out.flush()?;
            continue;
        }
        if let Some(b) = candidate.has("die_after") {
            if candidate.requests > b.arg_usize() {
                return Ok(Exit::Crash(traceback("score", "MemoryError")));
            }
        }
        if let Some(b) = candidate.has("raise_after") {
            if candidate.requests > b.arg_usize() {
                send(&mut out, &Message::ErrorReport { traceback: traceback("score", "ValueError: raised mid-run") })?;
                return Ok(Exit::Clean);
            }
        }
        let reply = match (role, request) {
            (_, Message::Shutdown {}) => return Ok(Exit::Clean),
            (Role::Score, Message::ScoreRequest { item, bins }) => match score(&mut candidate, item, &bins) {
                Ok(scores) => Message::ScoreReply { scores },
                Err(tb) => Message::ErrorReport { traceback: tb },
            },
            (Role::UpdateMatrix, Message::UpdateMatrixRequest { edge_distance, local_opt_tour, edge_n_used }) => {
                Message::UpdateMatrixReply { updated: update_matrix(&candidate, edge_distance, &local_opt_tour, &edge_n_used) }
            }
            (Role::Optimize, Message::OptimizeRequest { budget, dim, lb, ub }) => {
                match optimize(&mut candidate, budget, dim, lb, ub, &mut lines, &mut out)? {
                    Some(exit) => return Ok(exit),
                    None => continue,
                }
            }
            (_, other) => Message::ErrorReport {
                traceback: format!("unexpected {} for a {role} candidate", other.type_name()),
            },
        };
        let is_error = matches!(reply, Message::ErrorReport { .. });
        if reply.all_finite() {
            send(&mut out, &reply)?;
        } else {
            let text = reply.to_line().replace("null", "NaN");
            writeln!(out, "{text}")?;
            out.flush()?;
        }
        if is_error {
            return Ok(Exit::Clean);
        }
    }
    Ok(Exit::Clean)
}

fn main() -> ExitCode {
    match serve() {
        Ok(Exit::Clean) => ExitCode::SUCCESS,
        Ok(Exit::Crash(tb)) => {
            eprintln!("{tb}");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("native child I/O error: {e}");
            ExitCode::FAILURE
        }
    }
}
