//! Real-time websocket bridge between an operator and the simulator.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{ClientMessage, ControlAction, ErrorCode, Mode, ServerMessage, PROTOCOL_SCHEMA};
pub use server::{serve, ServerConfig, ServerHandle};
pub use session::{Phase, Session};
