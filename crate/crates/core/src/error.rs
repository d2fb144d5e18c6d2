use thiserror::Error;

/// Every failure mode of the library. Each variant carries enough context to
/// name the offending quantity without a debugger.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("control {u} outside admissible box [{lo}, {hi}]")]
    ControlBounds { u: f64, lo: f64, hi: f64 },
    #[error("coefficient error: {0}")]
    Coefficient(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("flow domain exit: {0}")]
    DomainExit(String),
    #[error("padding error: {0}")]
    Padding(String),
    #[error("divergence: particle {particle} non-finite at step {step}")]
    Divergence { particle: usize, step: usize },
    #[error("stability error: {0}")]
    Stability(String),
    #[error("conservation error: {0}")]
    Conservation(String),
    #[error("dependency error: {0}")]
    Dependency(String),
    #[error("config error: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
