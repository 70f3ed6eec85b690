use thiserror::Error;

/// A client message that is not allowed in the current session state. The
/// session is left unchanged.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("{command} is not allowed while {state}")]
    OutOfOrder { command: &'static str, state: String },
    #[error("only one correction per trajectory")]
    AlreadyCorrected,
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("invalid teleop action: {0}")]
    InvalidAction(String),
}

impl ProtocolError {
    /// Stable machine-readable code sent in `error` messages.
    pub fn code(&self) -> &'static str {
        match self {
            Self::Malformed(_) => "malformed",
            Self::OutOfOrder { .. } => "out_of_order",
            Self::AlreadyCorrected => "already_corrected",
            Self::UnknownTask(_) => "unknown_task",
            Self::InvalidAction(_) => "invalid_action",
        }
    }
}

#[derive(Debug, Error)]
pub enum HitlError {
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: std::net::SocketAddr, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] olaf_core::CoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
