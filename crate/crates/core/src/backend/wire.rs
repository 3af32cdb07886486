//! Process-boundary protocol for out-of-process denoisers.
//!
//! Each request and response is one frame on a byte stream:
//!
//! ```text
//! magic     4 bytes   b"PDRQ" (request) or b"PDRS" (response)
//! hlen      u32 LE    length of the JSON header
//! header    hlen      UTF-8 JSON
//! plen      u64 LE    payload length in bytes (4 · c · h · w)
//! payload   plen      f32 little-endian, C order (channel, row, column)
//! ```
//!
//! Request header: `{"version":1,"t_index":..,"prompt":..,"context":{..},"shape":{..}}`.
//! Response header: `{"version":1,"ok":true,"shape":{..}}` or
//! `{"version":1,"ok":false,"error":".."}` with an empty payload.
//! A TCP connection may carry any number of request/response pairs.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{DenoiseContext, Denoiser, LatentTensor, Shape};
use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: u32 = 1;
pub const REQUEST_MAGIC: &[u8; 4] = b"PDRQ";
pub const RESPONSE_MAGIC: &[u8; 4] = b"PDRS";
const MAX_HEADER: u32 = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestHeader {
    pub version: u32,
    pub t_index: usize,
    pub prompt: String,
    pub context: DenoiseContext,
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseHeader {
    pub version: u32,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<Shape>,
}

fn wire_err(e: std::io::Error) -> Error {
    Error::Backend(format!("adapter i/o: {e}"))
}

fn write_frame<W: Write, H: Serialize>(w: &mut W, magic: &[u8; 4], header: &H, payload: &[u8]) -> Result<()> {
    let h = serde_json::to_vec(header)?;
    let mut buf = Vec::with_capacity(16 + h.len() + payload.len());
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&(h.len() as u32).to_le_bytes());
    buf.extend_from_slice(&h);
    buf.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    buf.extend_from_slice(payload);
    w.write_all(&buf).map_err(wire_err)?;
    w.flush().map_err(wire_err)
}

fn read_frame<R: Read, H: for<'de> Deserialize<'de>>(r: &mut R, magic: &[u8; 4]) -> Result<(H, Vec<u8>)> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m).map_err(wire_err)?;
    if &m != magic {
        return Err(Error::Backend(format!("bad frame magic {m:?}")));
    }
    let mut n4 = [0u8; 4];
    r.read_exact(&mut n4).map_err(wire_err)?;
    let hlen = u32::from_le_bytes(n4);
    if hlen > MAX_HEADER {
        return Err(Error::Backend(format!("header of {hlen} bytes is too large")));
    }
    let mut h = vec![0u8; hlen as usize];
    r.read_exact(&mut h).map_err(wire_err)?;
    let mut n8 = [0u8; 8];
    r.read_exact(&mut n8).map_err(wire_err)?;
    let plen = u64::from_le_bytes(n8) as usize;
    let mut payload = vec![0u8; plen];
    r.read_exact(&mut payload).map_err(wire_err)?;
    Ok((serde_json::from_slice(&h)?, payload))
}

pub fn write_request<W: Write>(
    w: &mut W,
    latent: &LatentTensor,
    t_index: usize,
    prompt: &str,
    context: &DenoiseContext,
) -> Result<()> {
    let header = RequestHeader {
        version: PROTOCOL_VERSION,
        t_index,
        prompt: prompt.to_owned(),
        context: context.clone(),
        shape: latent.shape(),
    };
    write_frame(w, REQUEST_MAGIC, &header, &latent.to_le_bytes())
}

pub fn read_request<R: Read>(r: &mut R) -> Result<(RequestHeader, LatentTensor)> {
    let (h, payload): (RequestHeader, _) = read_frame(r, REQUEST_MAGIC)?;
    if h.version != PROTOCOL_VERSION {
        return Err(Error::Backend(format!("unsupported protocol version {}", h.version)));
    }
    let latent = LatentTensor::from_le_bytes(h.shape, &payload)?;
    Ok((h, latent))
}

pub fn write_response<W: Write>(w: &mut W, result: &Result<LatentTensor>) -> Result<()> {
    match result {
        Ok(t) => write_frame(
            w,
            RESPONSE_MAGIC,
            &ResponseHeader {
                version: PROTOCOL_VERSION,
                ok: true,
                error: None,
                shape: Some(t.shape()),
            },
            &t.to_le_bytes(),
        ),
        Err(e) => write_frame(
            w,
            RESPONSE_MAGIC,
            &ResponseHeader {
                version: PROTOCOL_VERSION,
                ok: false,
                error: Some(e.to_string()),
                shape: None,
            },
            &[],
        ),
    }
}

pub fn read_response<R: Read>(r: &mut R) -> Result<LatentTensor> {
    let (h, payload): (ResponseHeader, _) = read_frame(r, RESPONSE_MAGIC)?;
    if !h.ok {
        return Err(Error::Backend(h.error.unwrap_or_else(|| "remote error".into())));
    }
    let shape = h
        .shape
        .ok_or_else(|| Error::Backend("response without shape".into()))?;
    LatentTensor::from_le_bytes(shape, &payload)
}

/// Client side: forwards every prediction to a server at `host:port`.
///
/// Opens one connection per call so the adapter can be shared across threads.
#[derive(Debug, Clone)]
pub struct AdapterDenoiser {
    endpoint: String,
}

impl AdapterDenoiser {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl Denoiser for AdapterDenoiser {
    fn predict(
        &self,
        latent: &LatentTensor,
        t_index: usize,
        prompt: &str,
        ctx: &DenoiseContext,
    ) -> Result<LatentTensor> {
        let mut s = TcpStream::connect(&self.endpoint)
            .map_err(|e| Error::Backend(format!("connect {}: {e}", self.endpoint)))?;
        s.set_nodelay(true).ok();
        write_request(&mut s, latent, t_index, prompt, ctx)?;
        let out = read_response(&mut s)?;
        out.ensure_shape(latent.shape(), "adapter residual")?;
        Ok(out)
    }
}

/// Answers requests on one connection until the peer hangs up.
pub fn serve_connection(mut stream: TcpStream, denoiser: &dyn Denoiser) -> Result<()> {
    loop {
        let mut peek = [0u8; 1];
        match stream.peek(&mut peek) {
            Ok(0) => return Ok(()),
            Ok(_) => {}
            Err(e) => return Err(wire_err(e)),
        }
        let (h, latent) = read_request(&mut stream)?;
        let result = denoiser.predict(&latent, h.t_index, &h.prompt, &h.context);
        write_response(&mut stream, &result)?;
    }
}

/// Serves connections sequentially, forever or until `max_connections` are handled.
pub fn serve(listener: TcpListener, denoiser: Arc<dyn Denoiser>, max_connections: Option<usize>) -> Result<()> {
    for (i, stream) in listener.incoming().enumerate() {
        let stream = stream.map_err(wire_err)?;
        let d = Arc::clone(&denoiser);
        std::thread::spawn(move || {
            let _ = serve_connection(stream, d.as_ref());
        });
        if max_connections.is_some_and(|m| i + 1 >= m) {
            break;
        }
    }
    Ok(())
}
