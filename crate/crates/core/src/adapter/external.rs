use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::Duration;

use log::debug;

use crate::error::SutError;
use crate::records::{Query, QueryResult};
use crate::store::InsertAck;

use super::wire::{self, ErrorBody, Frame, QueryRequest, OP_ACK, OP_ERROR, OP_INSERT, OP_QUERY, OP_RESULT};
use super::{Capabilities, IngestItem, SutBinding};

/// Client for a SUT speaking the wire protocol, one request in flight.
/// After a timeout or transport error the connection is discarded and
/// re-established on the next call.
#[derive(Debug)]
pub struct ExternalBinding {
    addr: SocketAddr,
    timeout: Duration,
    caps: Capabilities,
    stream: Option<TcpStream>,
}

fn resolve(endpoint: &str) -> Result<SocketAddr, SutError> {
    endpoint
        .to_socket_addrs()
        .map_err(|e| SutError::Unreachable(endpoint.into(), e.to_string()))?
        .next()
        .ok_or_else(|| SutError::Unreachable(endpoint.into(), "no address".into()))
}

fn is_timeout(e: &SutError) -> bool {
    matches!(e, SutError::Io(io) if matches!(io.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut))
}

impl ExternalBinding {
    /// Connects eagerly so that an unreachable endpoint fails here.
    pub fn connect(endpoint: &str, timeout: Duration, caps: Capabilities) -> Result<Self, SutError> {
        let addr = resolve(endpoint)?;
        let mut b = ExternalBinding {
            addr,
            timeout,
            caps,
            stream: None,
        };
        b.stream()?;
        Ok(b)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    fn stream(&mut self) -> Result<&mut TcpStream, SutError> {
        if self.stream.is_none() {
            let s = TcpStream::connect_timeout(&self.addr, self.timeout)
                .map_err(|e| SutError::Unreachable(self.addr.to_string(), e.to_string()))?;
            s.set_read_timeout(Some(self.timeout))?;
            s.set_write_timeout(Some(self.timeout))?;
            s.set_nodelay(true)?;
            self.stream = Some(s);
        }
        Ok(self.stream.as_mut().expect("just connected"))
    }

    fn call(&mut self, req: &Frame) -> Result<Frame, SutError> {
        let timeout = self.timeout;
        let result = (|| {
            let s = self.stream()?;
            wire::write_frame(s, req)?;
            wire::read_frame(s)?.ok_or_else(|| SutError::Protocol("connection closed before reply".into()))
        })();
        match result {
            Ok(f) if f.opcode == OP_ERROR => {
                let msg = f.decode::<ErrorBody>().map(|b| b.message).unwrap_or_else(|_| "unparseable error".into());
                Err(SutError::Remote(msg))
            }
            Ok(f) => Ok(f),
            Err(e) => {
                debug!("dropping connection to {}: {e}", self.addr);
                self.stream = None;
                if is_timeout(&e) {
                    Err(SutError::Timeout(timeout))
                } else {
                    Err(e)
                }
            }
        }
    }
}

impl SutBinding for ExternalBinding {
    fn capabilities(&self) -> Capabilities {
        self.caps
    }

    fn ingest(&mut self, item: &IngestItem) -> Result<InsertAck, SutError> {
        if matches!(item, IngestItem::EventReport(_)) && !self.caps.supports_event_reports {
            return Err(SutError::Unsupported("event reports"));
        }
        let reply = self.call(&Frame::json(OP_INSERT, item))?;
        if reply.opcode != OP_ACK {
            return Err(SutError::Protocol(format!("expected ACK, got opcode {:#04x}", reply.opcode)));
        }
        reply.decode()
    }

    fn query(&mut self, q: &Query, materialize: bool) -> Result<QueryResult, SutError> {
        if q.kind == crate::records::QueryKind::ScanFilter && !self.caps.supports_scan {
            return Err(SutError::Unsupported("scan queries"));
        }
        let req = QueryRequest {
            query: q.clone(),
            materialize,
        };
        let reply = self.call(&Frame::json(OP_QUERY, &req))?;
        if reply.opcode != OP_RESULT {
            return Err(SutError::Protocol(format!("expected RESULT, got opcode {:#04x}", reply.opcode)));
        }
        let result: QueryResult = reply.decode()?;
        if result.query_id != q.query_id {
            return Err(SutError::Protocol(format!(
                "reply for query {} answered query {}",
                q.query_id, result.query_id
            )));
        }
        Ok(result)
    }
}
