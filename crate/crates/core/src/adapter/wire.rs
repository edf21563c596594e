//! Frame layout: a 4-byte big-endian length `L`, then `L` bytes made of a
//! 1-byte opcode followed by a UTF-8 JSON body.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::SutError;
use crate::records::Query;

pub const OP_INSERT: u8 = 0x01;
pub const OP_QUERY: u8 = 0x02;
pub const OP_RESULT: u8 = 0x03;
pub const OP_ACK: u8 = 0x04;
pub const OP_ERROR: u8 = 0x05;

/// Largest accepted value of the length prefix.
pub const MAX_FRAME_LEN: u32 = 64 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub opcode: u8,
    pub body: Vec<u8>,
}

impl Frame {
    pub fn json<T: Serialize>(opcode: u8, value: &T) -> Self {
        Frame {
            opcode,
            body: serde_json::to_vec(value).expect("wire types serialize"),
        }
    }

    pub fn decode<'a, T: Deserialize<'a>>(&'a self) -> Result<T, SutError> {
        serde_json::from_slice(&self.body).map_err(|e| SutError::Protocol(format!("bad body for opcode {:#04x}: {e}", self.opcode)))
    }

    pub fn encode(&self) -> Result<Vec<u8>, SutError> {
        let len = self.body.len() + 1;
        if len > MAX_FRAME_LEN as usize {
            return Err(SutError::Protocol(format!("frame of {len} bytes exceeds limit")));
        }
        let mut buf = Vec::with_capacity(4 + len);
        buf.extend_from_slice(&(len as u32).to_be_bytes());
        buf.push(self.opcode);
        buf.extend_from_slice(&self.body);
        Ok(buf)
    }
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> Result<(), SutError> {
    w.write_all(&frame.encode()?)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame; `Ok(None)` on a clean end of stream before any byte.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Frame>, SutError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(SutError::Protocol("truncated length prefix".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(len);
    if len == 0 {
        return Err(SutError::Protocol("empty frame".into()));
    }
    if len > MAX_FRAME_LEN {
        return Err(SutError::Protocol(format!("frame length {len} exceeds limit")));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => SutError::Protocol("truncated frame".into()),
        _ => SutError::Io(e),
    })?;
    let opcode = buf[0];
    buf.remove(0);
    Ok(Some(Frame { opcode, body: buf }))
}

/// Body of a QUERY frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRequest {
    #[serde(flatten)]
    pub query: Query,
    #[serde(default = "yes")]
    pub materialize: bool,
}

fn yes() -> bool {
    true
}

/// Body of an ERROR frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub message: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::QueryKind;

    #[test]
    fn layout_is_length_opcode_body() {
        let f = Frame { opcode: OP_ACK, body: b"{}".to_vec() };
        assert_eq!(f.encode().unwrap(), vec![0, 0, 0, 3, 0x04, b'{', b'}']);
    }

    #[test]
    fn round_trip() {
        let q = QueryRequest {
            query: Query {
                query_id: 9,
                client_id: 1,
                kind: QueryKind::Recent1h,
                issue_time: 5,
                interval: Some(crate::records::Interval { start: 0, end: 5 }),
                threshold: None,
                lookback_start: None,
            },
            materialize: false,
        };
        let frame = Frame::json(OP_QUERY, &q);
        let text = String::from_utf8(frame.body.clone()).unwrap();
        assert!(text.contains("\"kind\":\"recent_1h\"") && text.contains("\"issue_time\":5"), "{text}");
        let mut buf = Vec::new();
        write_frame(&mut buf, &frame).unwrap();
        let back = read_frame(&mut buf.as_slice()).unwrap().unwrap();
        assert_eq!(back, frame);
        assert_eq!(back.decode::<QueryRequest>().unwrap(), q);
    }

    #[test]
    fn malformed_input_is_a_protocol_error() {
        assert!(read_frame(&mut [].as_slice()).unwrap().is_none());
        assert!(matches!(read_frame(&mut [0, 0].as_slice()), Err(SutError::Protocol(_))));
        assert!(matches!(read_frame(&mut [0, 0, 0, 9, 1].as_slice()), Err(SutError::Protocol(_))));
        assert!(matches!(read_frame(&mut [0xff, 0, 0, 0].as_slice()), Err(SutError::Protocol(_))));
        let bad = Frame { opcode: OP_RESULT, body: b"not json".to_vec() };
        assert!(matches!(bad.decode::<ErrorBody>(), Err(SutError::Protocol(_))));
    }
}
