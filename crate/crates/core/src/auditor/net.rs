use std::io::{self, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{AuditError, Auditor, AuditorLink, Verdict};
use crate::ledger::LedgerDigest;
use crate::shardserver::{read_frames, Frame};

/// Frame kinds of the auditor protocol; payloads are JSON.
const AUDIT_REQUEST: u8 = 0x40;
const AUDIT_REPLY: u8 = 0xC0;

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum AuditRequest {
    Register { client_id: u64, public_key: String },
    Submit { digest: LedgerDigest, source: String },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
enum AuditReply {
    Ok,
    Verdict { verdict: Verdict },
    Error { message: String },
}

fn handle(auditor: &Auditor, req: AuditRequest) -> AuditReply {
    let result = match req {
        AuditRequest::Register { client_id, public_key } => {
            match hex::decode(&public_key).ok().and_then(|b| <[u8; 32]>::try_from(b).ok()) {
                Some(k) => auditor.register_key(client_id, k).map(|_| AuditReply::Ok),
                None => Err(AuditError::Remote("public key must be 32 hex-encoded bytes".into())),
            }
        }
        AuditRequest::Submit { digest, source } => auditor.submit(digest, &source).map(|verdict| AuditReply::Verdict { verdict }),
    };
    result.unwrap_or_else(|e| AuditReply::Error { message: e.to_string() })
}

/// Serves an auditor over TCP, one thread per connection.
pub struct AuditorServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl AuditorServer {
    pub fn start(auditor: Arc<Auditor>, listen: impl ToSocketAddrs) -> io::Result<AuditorServer> {
        let listener = TcpListener::bind(listen)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let accept_stop = stop.clone();
        let accept = std::thread::Builder::new().name("audit-accept".into()).spawn(move || {
            while !accept_stop.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let (auditor, stop) = (auditor.clone(), accept_stop.clone());
                        let _ = std::thread::Builder::new().name("audit-conn".into()).spawn(move || {
                            if let Err(e) = serve(stream, &auditor, &stop) {
                                log::debug!("auditor connection closed: {e}");
                            }
                        });
                    }
                    Err(e) if e.kind() == io::ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(5)),
                    Err(e) => log::warn!("accept failed: {e}"),
                }
            }
        })?;
        Ok(AuditorServer {
            addr,
            stop,
            accept: Some(accept),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(self) {}
}

impl Drop for AuditorServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.accept.take() {
            let _ = t.join();
        }
    }
}

fn serve(stream: TcpStream, auditor: &Auditor, stop: &AtomicBool) -> io::Result<()> {
    let mut out = BufWriter::new(stream.try_clone()?);
    let mut failure = None;
    read_frames(stream, stop, |frame| {
        let reply = if frame.kind != AUDIT_REQUEST {
            AuditReply::Error {
                message: format!("unknown frame kind {:#x}", frame.kind),
            }
        } else {
            match serde_json::from_slice(&frame.payload) {
                Ok(req) => handle(auditor, req),
                Err(e) => AuditReply::Error {
                    message: format!("malformed request: {e}"),
                },
            }
        };
        let payload = serde_json::to_vec(&reply).expect("reply serializes");
        let sent = Frame {
            kind: AUDIT_REPLY,
            correlation: frame.correlation,
            payload,
        }
        .write_to(&mut out)
        .and_then(|_| out.flush());
        match sent {
            Ok(()) => true,
            Err(e) => {
                failure = Some(e);
                false
            }
        }
    })?;
    failure.map_or(Ok(()), Err)
}

struct Conn {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

/// An auditor reached over TCP. Reconnects after any failure.
pub struct RemoteAuditor {
    addr: String,
    timeout: Duration,
    conn: Mutex<Option<Conn>>,
    next: AtomicU64,
}

impl RemoteAuditor {
    pub fn new(addr: impl Into<String>, timeout: Duration) -> RemoteAuditor {
        RemoteAuditor {
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

    fn call(&self, req: &AuditRequest) -> Result<AuditReply, AuditError> {
        let mut guard = self.conn.lock();
        if guard.is_none() {
            *guard = Some(self.connect()?);
        }
        let c = guard.as_mut().unwrap();
        let id = self.next.fetch_add(1, Ordering::SeqCst);
        let result = (|| {
            Frame {
                kind: AUDIT_REQUEST,
                correlation: id,
                payload: serde_json::to_vec(req)?,
            }
            .write_to(&mut c.writer)?;
            let frame = Frame::read_from(&mut c.reader)?
                .ok_or_else(|| io::Error::new(io::ErrorKind::UnexpectedEof, "connection closed"))?;
            if frame.kind != AUDIT_REPLY || frame.correlation != id {
                return Err(AuditError::Remote("reply does not match the request".into()));
            }
            Ok(serde_json::from_slice(&frame.payload)?)
        })();
        if result.is_err() {
            *guard = None;
        }
        result
    }
}

impl AuditorLink for RemoteAuditor {
    fn register(&self, client_id: u64, public_key: [u8; 32]) -> Result<(), AuditError> {
        match self.call(&AuditRequest::Register {
            client_id,
            public_key: hex::encode(public_key),
        })? {
            AuditReply::Ok => Ok(()),
            AuditReply::Error { message } => Err(AuditError::Remote(message)),
            other => Err(AuditError::Remote(format!("unexpected reply {other:?}"))),
        }
    }

    fn submit(&self, digest: LedgerDigest, source: &str) -> Result<Verdict, AuditError> {
        match self.call(&AuditRequest::Submit {
            digest,
            source: source.to_string(),
        })? {
            AuditReply::Verdict { verdict } => Ok(verdict),
            AuditReply::Error { message } => Err(AuditError::Remote(message)),
            other => Err(AuditError::Remote(format!("unexpected reply {other:?}"))),
        }
    }
}
