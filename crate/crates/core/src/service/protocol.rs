//! Wire protocol.
//!
//! Each message is a big-endian `u32` byte length followed by that many
//! bytes of UTF-8 JSON. Requests carry the protocol version and a client
//! nonce; the response echoes both. Signal payloads are decimal JSON
//! numbers written in shortest round-trip form, so they parse back to the
//! same `f64` bits.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::signal::{DeviceKind, RawTrajectory};

pub const PROTOCOL_VERSION: u32 = 1;

/// Largest accepted frame body.
pub const MAX_FRAME: usize = 32 << 20;

/// A captured trajectory: one `[t, x, y(, z)]` row per sample, `t` in
/// seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireTrajectory {
    pub device: DeviceKind,
    pub samples: Vec<Vec<f64>>,
}

impl WireTrajectory {
    pub fn from_raw(raw: &RawTrajectory) -> Self {
        let samples = raw
            .times
            .iter()
            .zip(raw.points.iter_rows())
            .map(|(&t, p)| std::iter::once(t).chain(p.iter().copied()).collect())
            .collect();
        Self {
            device: raw.device,
            samples,
        }
    }

    pub fn to_raw(&self) -> Result<RawTrajectory> {
        let width = self.samples.first().map_or(0, Vec::len);
        if width < 2 {
            return Err(Error::Malformed(
                "samples need a time and at least one coordinate".into(),
            ));
        }
        if let Some(i) = self.samples.iter().position(|r| r.len() != width) {
            return Err(Error::Malformed(format!(
                "sample {i} has {} values, expected {width}",
                self.samples[i].len()
            )));
        }
        let times = self.samples.iter().map(|r| r[0]).collect();
        let data = self.samples.iter().flat_map(|r| r[1..].iter().copied()).collect();
        RawTrajectory::new(
            self.device,
            times,
            Matrix::from_vec(self.samples.len(), width - 1, data),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RequestBody {
    Register {
        id_signals: Vec<WireTrajectory>,
        passcode_signals: Vec<WireTrajectory>,
    },
    Authenticate {
        account_number: String,
        passcode_signal: WireTrajectory,
    },
    Identify {
        id_signal: WireTrajectory,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k: Option<usize>,
    },
    Status,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub version: u32,
    pub nonce: String,
    #[serde(flatten)]
    pub body: RequestBody,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Validation,
    NotFound,
    Locked,
    Protocol,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ResponseBody {
    Registered {
        account_number: String,
        /// The index does not cover the new account until retraining ends.
        index_stale: bool,
    },
    Authenticated {
        accept: bool,
        score: f64,
    },
    Identified {
        /// An account number, or `"unidentified"`.
        result: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        score: Option<f64>,
        /// The index was out of date and every account was searched.
        stale: bool,
    },
    Status {
        accounts: usize,
        index_accounts: usize,
        index_stale: bool,
    },
    Error {
        kind: ErrorKind,
        message: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        details: Vec<String>,
    },
}

pub const UNIDENTIFIED: &str = "unidentified";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub version: u32,
    pub nonce: String,
    pub status: Status,
    #[serde(flatten)]
    pub body: ResponseBody,
}

impl Response {
    pub fn new(nonce: String, body: ResponseBody) -> Self {
        let status = match body {
            ResponseBody::Error { .. } => Status::Error,
            _ => Status::Ok,
        };
        Self {
            version: PROTOCOL_VERSION,
            nonce,
            status,
            body,
        }
    }

    pub fn error(nonce: String, kind: ErrorKind, message: impl Into<String>, details: Vec<String>) -> Self {
        Self::new(
            nonce,
            ResponseBody::Error {
                kind,
                message: message.into(),
                details,
            },
        )
    }
}

pub fn write_frame<W: Write, T: Serialize>(w: &mut W, msg: &T) -> Result<()> {
    let body = serde_json::to_vec(msg)?;
    if body.len() > MAX_FRAME {
        return Err(Error::Protocol(format!(
            "frame of {} bytes exceeds {MAX_FRAME}",
            body.len()
        )));
    }
    w.write_all(&(body.len() as u32).to_be_bytes())?;
    w.write_all(&body)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame body. `Ok(None)` means the peer closed the stream
/// cleanly before a new frame began.
pub fn read_frame_bytes<R: Read>(r: &mut R) -> Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_FRAME {
        return Err(Error::Protocol(format!("frame of {n} bytes exceeds {MAX_FRAME}")));
    }
    let mut body = vec![0u8; n];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj() -> WireTrajectory {
        WireTrajectory {
            device: DeviceKind::Pointer2d,
            samples: vec![vec![0.0, 0.1, 0.2], vec![0.016, 0.1 + 1e-17, -3.3e-5]],
        }
    }

    #[test]
    fn frame_round_trip() {
        let req = Request {
            version: PROTOCOL_VERSION,
            nonce: "n-1".into(),
            body: RequestBody::Identify {
                id_signal: traj(),
                k: Some(3),
            },
        };
        let mut buf = Vec::new();
        write_frame(&mut buf, &req).unwrap();
        assert_eq!(u32::from_be_bytes(buf[..4].try_into().unwrap()) as usize, buf.len() - 4);
        let body = read_frame_bytes(&mut buf.as_slice()).unwrap().unwrap();
        let back: Request = serde_json::from_slice(&body).unwrap();
        assert_eq!(back, req);
        assert!(read_frame_bytes(&mut [].as_slice()).unwrap().is_none());
    }

    #[test]
    fn json_shape() {
        let resp = Response::new(
            "x".into(),
            ResponseBody::Authenticated {
                accept: true,
                score: -0.5,
            },
        );
        let v: serde_json::Value = serde_json::to_value(&resp).unwrap();
        assert_eq!(v["type"], "authenticated");
        assert_eq!(v["status"], "ok");
        assert_eq!(v["nonce"], "x");
        let req: Request = serde_json::from_str(r#"{"version":1,"nonce":"a","type":"status"}"#).unwrap();
        assert_eq!(req.body, RequestBody::Status);
    }

    #[test]
    fn trajectory_conversion() {
        let raw = traj().to_raw().unwrap();
        assert_eq!(raw.points.cols(), 2);
        assert_eq!(WireTrajectory::from_raw(&raw), traj());
        let mut bad = traj();
        bad.samples[1].pop();
        assert!(bad.to_raw().is_err());
    }

    #[test]
    fn oversized_frame_is_refused() {
        let mut buf = ((MAX_FRAME + 1) as u32).to_be_bytes().to_vec();
        buf.extend_from_slice(b"{}");
        assert!(matches!(read_frame_bytes(&mut buf.as_slice()), Err(Error::Protocol(_))));
    }
}
