//! The login service: a persistent account store, request handling and a
//! length-prefixed JSON protocol over TCP.

pub mod client;
pub mod config;
pub mod protocol;
pub mod server;
pub mod store;

pub use client::Client;
pub use config::ServiceConfig;
pub use protocol::{
    ErrorKind, Request, RequestBody, Response, ResponseBody, Status, WireTrajectory, PROTOCOL_VERSION, UNIDENTIFIED,
};
pub use server::{serve, spawn_server, IdentifyOutcome, Service};
pub use store::{AccountRecord, Enrollment, IndexModel, Store};
