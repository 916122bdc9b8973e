//! Live guidance over websockets: clients stream hand poses, the server answers
//! with guidance events and final metrics.
//!
//! The session logic lives in [`SessionHandler`] and knows nothing about the
//! transport, so recorded pose traces can be replayed without a socket.

pub mod handler;
pub mod server;
pub mod wire;

pub use handler::{hand_speed, ProtocolError, SceneConfig, ServiceConfig, SessionHandler};
pub use server::{router, serve, AppState};
pub use wire::{ClientMessage, SceneInstance, ServerMessage, Workspace, PROTOCOL_VERSION};
