//! Live teleoperation session: a 1 ms physics loop on its own thread, a latest-value
//! command mailbox, and 50 Hz state frames fanned out to every WebSocket client.
//!
//! The first connection to send a valid `cmd` frame becomes the commander; the seat is
//! freed when it disconnects. Other connections observe and get a `commander_occupied`
//! error frame if they try to command.

pub mod protocol;
mod server;

use std::net::SocketAddr;

pub use server::{serve, LoopStats, TeleopConfig, TeleopHandle};

#[derive(Debug, thiserror::Error)]
pub enum TeleopError {
    #[error(transparent)]
    Sim(#[from] wipsim::Error),
    #[error("cannot listen on {0}: {1}")]
    Bind(SocketAddr, #[source] std::io::Error),
    #[error("cannot start the physics thread: {0}")]
    Thread(#[source] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TeleopError>;
