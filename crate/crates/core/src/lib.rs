//! In-air-handwriting login: signal preprocessing, DTW templates, SVM-ensemble
//! authentication, a CNN account index, a synthetic corpus generator, the
//! evaluation harness and the login service.

pub mod align;
pub mod auth;
pub mod error;
pub mod eval;
pub mod features;
pub mod ident;
pub mod matrix;
pub mod rng;
pub mod service;
pub mod signal;
pub mod synth;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use signal::{DeviceKind, RawTrajectory, Signal};
