//! Service layer: an in-process engine hosting runs, the versioned wire
//! protocol derived from run events, and a WebSocket transport.

mod engine;
pub mod protocol;
mod ws;

pub use engine::{Backends, Engine, EngineConfig, ServiceError, Subscription, SUBSCRIBER_BUFFER};
pub use protocol::{
    expand_event, narration_chunks, ActionView, Boundary, ClientCommand, ClientMessage, FocusBundle, ServerBody,
    ServerMessage, UnitView, PROTOCOL_SCHEMA, PROTOCOL_VERSION,
};
pub use ws::{router, serve};
