//! The JSON-lines wire format shared with the child process.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Score,
    UpdateMatrix,
    Optimize,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::Score => "score",
            Role::UpdateMatrix => "update_matrix",
            Role::Optimize => "optimize",
        })
    }
}

/// One protocol line. Serialized as a single JSON object whose `type` field
/// names the variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum Message {
    Init {
        role: Role,
        code: String,
        /// Serialized configuration assignment, e.g. `{"s1": 0.5}`.
        config: String,
        seed: u64,
    },
    Ready {},
    ScoreRequest {
        item: i64,
        bins: Vec<i64>,
    },
    ScoreReply {
        scores: Vec<f64>,
    },
    UpdateMatrixRequest {
        edge_distance: Vec<Vec<f64>>,
        local_opt_tour: Vec<usize>,
        edge_n_used: Vec<Vec<u64>>,
    },
    UpdateMatrixReply {
        updated: Vec<Vec<f64>>,
    },
    OptimizeRequest {
        budget: u64,
        dim: usize,
        lb: f64,
        ub: f64,
    },
    EvalQuery {
        x: Vec<f64>,
    },
    EvalReply {
        f: f64,
    },
    OptimizeDone {
        f_opt: f64,
        x_opt: Vec<f64>,
    },
    ErrorReport {
        traceback: String,
    },
    Shutdown {},
}

impl Message {
    pub fn type_name(&self) -> &'static str {
        match self {
            Message::Init { .. } => "Init",
            Message::Ready {} => "Ready",
            Message::ScoreRequest { .. } => "ScoreRequest",
            Message::ScoreReply { .. } => "ScoreReply",
            Message::UpdateMatrixRequest { .. } => "UpdateMatrixRequest",
            Message::UpdateMatrixReply { .. } => "UpdateMatrixReply",
            Message::OptimizeRequest { .. } => "OptimizeRequest",
            Message::EvalQuery { .. } => "EvalQuery",
            Message::EvalReply { .. } => "EvalReply",
            Message::OptimizeDone { .. } => "OptimizeDone",
            Message::ErrorReport { .. } => "ErrorReport",
            Message::Shutdown {} => "Shutdown",
        }
    }

    /// The role a request is addressed to, for requests the orchestrator sends.
    pub fn request_role(&self) -> Option<Role> {
        match self {
            Message::ScoreRequest { .. } => Some(Role::Score),
            Message::UpdateMatrixRequest { .. } => Some(Role::UpdateMatrix),
            Message::OptimizeRequest { .. } => Some(Role::Optimize),
            _ => None,
        }
    }

    /// Encodes the message as one line, without the trailing newline.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("protocol messages always serialize")
    }

    pub fn from_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line.trim_end_matches(['\n', '\r']))
    }

    /// True when every real number carried by the message is finite.
    pub fn all_finite(&self) -> bool {
        let row_ok = |r: &Vec<f64>| r.iter().all(|v| v.is_finite());
        match self {
            Message::ScoreReply { scores } => row_ok(scores),
            Message::UpdateMatrixReply { updated } => updated.iter().all(row_ok),
            Message::UpdateMatrixRequest { edge_distance, .. } => edge_distance.iter().all(row_ok),
            Message::OptimizeRequest { lb, ub, .. } => lb.is_finite() && ub.is_finite(),
            Message::EvalQuery { x } => row_ok(x),
            Message::EvalReply { f } => f.is_finite(),
            Message::OptimizeDone { f_opt, x_opt } => f_opt.is_finite() && row_ok(x_opt),
            _ => true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_format_is_flat_and_tagged() {
        let m = Message::ScoreRequest { item: 5, bins: vec![10, 7] };
        assert_eq!(m.to_line(), r#"{"type":"ScoreRequest","item":5,"bins":[10,7]}"#);
        assert_eq!(Message::Ready {}.to_line(), r#"{"type":"Ready"}"#);
        let init = Message::Init { role: Role::UpdateMatrix, code: "x".into(), config: "{}".into(), seed: 3 };
        assert_eq!(init.to_line(), r#"{"type":"Init","role":"update_matrix","code":"x","config":"{}","seed":3}"#);
    }

    #[test]
    fn every_variant_round_trips() {
        let all = vec![
            Message::Init { role: Role::Optimize, code: "class A:\n  pass".into(), config: "{\"a\": 1}".into(), seed: 9 },
            Message::Ready {},
            Message::ScoreRequest { item: 1, bins: vec![] },
            Message::ScoreReply { scores: vec![0.5, -1.0] },
            Message::UpdateMatrixRequest {
                edge_distance: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
                local_opt_tour: vec![0, 1],
                edge_n_used: vec![vec![0, 2], vec![2, 0]],
            },
            Message::UpdateMatrixReply { updated: vec![vec![0.0]] },
            Message::OptimizeRequest { budget: 10, dim: 2, lb: -5.0, ub: 5.0 },
            Message::EvalQuery { x: vec![0.1, 0.2] },
            Message::EvalReply { f: 3.5 },
            Message::OptimizeDone { f_opt: 1.0, x_opt: vec![0.0, 0.0] },
            Message::ErrorReport { traceback: "Traceback\n  boom".into() },
            Message::Shutdown {},
        ];
        for m in all {
            let line = m.to_line();
            assert!(!line.contains('\n'));
            assert_eq!(Message::from_line(&line).unwrap(), m);
        }
    }

    #[test]
    fn rejects_unknown_types_and_fields() {
        assert!(Message::from_line(r#"{"type":"Hello"}"#).is_err());
        assert!(Message::from_line(r#"{"type":"EvalReply","f":1.0,"extra":1}"#).is_err());
        assert!(Message::from_line(r#"{"f":1.0}"#).is_err());
        assert!(Message::from_line("NaN").is_err());
    }

    #[test]
    fn non_finite_payloads_are_detected() {
        assert!(!Message::UpdateMatrixReply { updated: vec![vec![0.0, f64::NAN]] }.all_finite());
        assert!(!Message::EvalReply { f: f64::INFINITY }.all_finite());
        assert!(Message::ScoreReply { scores: vec![1.0] }.all_finite());
    }
}
