//! Live session service: a human watches a policy roll out, stops it,
//! types a correction, optionally teleoperates, and releases control back.
//! Every finished rollout is persisted as an event-annotated trajectory in
//! the same archive format the scripted pipeline uses.

pub mod error;
pub mod live;
pub mod protocol;
pub mod server;

pub use error::{HitlError, ProtocolError};
pub use live::{infer_style, LiveSession, PolicySource, SessionConfig, SessionPhase, SessionStatus};
pub use protocol::{ActionSchema, AckEvent, ClientMessage, Frame, Mode, ServerMessage, TaskSchema};
pub use server::{serve, RunningServer, ServerConfig};
