use std::io::{BufReader, BufWriter};
use std::net::{TcpStream, ToSocketAddrs};

use crate::error::{Error, Result};

use super::protocol::{read_frame_bytes, write_frame, Request, RequestBody, Response, PROTOCOL_VERSION};

/// Blocking client for the framed TCP protocol. Each request carries a
/// fresh nonce that the response must echo.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    prefix: String,
    counter: u64,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        let prefix = format!("{:x}", std::process::id());
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
            prefix,
            counter: 0,
        })
    }

    pub fn send(&mut self, body: RequestBody) -> Result<Response> {
        self.counter += 1;
        let nonce = format!("{}-{}", self.prefix, self.counter);
        let req = Request {
            version: PROTOCOL_VERSION,
            nonce: nonce.clone(),
            body,
        };
        write_frame(&mut self.writer, &req)?;
        let bytes = read_frame_bytes(&mut self.reader)?
            .ok_or_else(|| Error::Protocol("server closed the connection".into()))?;
        let resp: Response = serde_json::from_slice(&bytes)?;
        if resp.nonce != nonce {
            return Err(Error::Protocol(format!(
                "response nonce {} does not match {nonce}",
                resp.nonce
            )));
        }
        Ok(resp)
    }
}
