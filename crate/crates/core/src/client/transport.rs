use std::io::{self, BufReader, BufWriter};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use thiserror::Error;

use crate::codec::DecodeError;
use crate::shardserver::{Frame, Reply, Request, Service};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("shard unreachable: {0}")]
    Io(#[from] io::Error),
    #[error("undecodable reply: {0}")]
    Decode(#[from] DecodeError),
    #[error("reply for request {got}, expected {expected}")]
    Mismatch { expected: u64, got: u64 },
}

/// A way to reach one shard.
pub trait Transport: Send + Sync {
    fn call(&self, req: Request) -> Result<Reply, TransportError>;
}

static NEXT_CONN: AtomicU64 = AtomicU64::new(0);

/// Calls a service in the same process. Each instance is its own
/// connection, which matters to services that tell connections apart.
pub struct InProcess {
    service: Arc<dyn Service>,
    conn: u64,
}

impl InProcess {
    pub fn new(service: Arc<dyn Service>) -> InProcess {
        InProcess {
            service,
            conn: NEXT_CONN.fetch_add(1, Ordering::SeqCst),
        }
    }

    /// Pins the connection id, e.g. to pick a side of an equivocating shard.
    pub fn with_conn(service: Arc<dyn Service>, conn: u64) -> InProcess {
        InProcess { service, conn }
    }
}

impl Transport for InProcess {
    fn call(&self, req: Request) -> Result<Reply, TransportError> {
        Ok(self.service.handle(self.conn, req))
    }
}

struct Conn {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

/// One TCP connection, reopened after any failure. Calls are serialized.
pub struct TcpTransport {
    addr: String,
    timeout: Duration,
    conn: Mutex<Option<Conn>>,
    next: AtomicU64,
}

impl TcpTransport {
    pub fn new(addr: impl Into<String>, timeout: Duration) -> TcpTransport {
        TcpTransport {
            addr: addr.into(),
            timeout,
            conn: Mutex::new(None),
            next: AtomicU64::new(1),
        }
    }

    fn connect(&self) -> io::Result<Conn> {
        let addr = self
            .addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, format!("no address for {}", self.addr)))?;
        let s = TcpStream::connect_timeout(&addr, self.timeout)?;
        s.set_nodelay(true)?;
        s.set_read_timeout(Some(self.timeout))?;
        s.set_write_timeout(Some(self.timeout))?;
        Ok(Conn {
            reader: BufReader::new(s.try_clone()?),
            writer: BufWriter::new(s),
        })
    }
}

impl Transport for TcpTransport {
    fn call(&self, req: Request) -> Result<Reply, TransportError> {
        let mut guard = self.conn.lock();
        if guard.is_none() {
            *guard = Some(self.connect()?);
        }
        let c = guard.as_mut().unwrap();
        let id = self.next.fetch_add(1, Ordering::SeqCst);
        let result = (|| {
            Frame::request(id, &req).write_to(&mut c.writer)?;
            let frame = Frame::read_from(&mut c.reader)?
                .ok_or_else(|| io::Error::new(io::ErrorKind::UnexpectedEof, "connection closed"))?;
            if frame.correlation != id {
                return Err(TransportError::Mismatch {
                    expected: id,
                    got: frame.correlation,
                });
            }
            Ok(Reply::decode_payload(frame.kind, &frame.payload)?)
        })();
        if result.is_err() {
            *guard = None;
        }
        result
    }
}
