use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("horizon must be positive, got {0}")]
    NonPositiveHorizon(f64),
    #[error("a control plan needs at least 2 knots, got {0}")]
    TooFewKnots(usize),
    #[error("knot times must be strictly increasing and match the knot count")]
    BadKnotTimes,
    #[error("rollout step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("smoothing parameter must be positive, got {0}")]
    NonPositiveDelta(f64),
    #[error("non-finite state or control in task `{0}`")]
    NonFinite(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("rewards contain NaN")]
    NanReward,
    #[error("all {0} rollouts failed")]
    AllRolloutsFailed(usize),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("unknown field `{path}` in {config} config")]
    UnknownField { config: String, path: String },
    #[error("bad value for field `{path}`: {reason}")]
    FieldType { path: String, reason: String },
    #[error("`{0}` is already registered")]
    Duplicate(String),
    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },
    #[error("unknown keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("failed to build thread pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    Yaml(#[from] serde_yaml::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
