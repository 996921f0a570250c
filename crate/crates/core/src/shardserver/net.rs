use std::io::{self, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_channel::{bounded, Receiver, RecvTimeoutError};
use parking_lot::Mutex;

use super::node::Service;
use super::protocol::{ErrorCode, Frame, Reply, Request};

const IDLE_POLL: Duration = Duration::from_millis(200);
const FRAME_TIMEOUT: Duration = Duration::from_secs(30);

struct Job {
    conn: u64,
    frame: Frame,
    out: Arc<Mutex<BufWriter<TcpStream>>>,
}

/// A running TCP front end. Connections may pipeline requests; replies
/// come back in completion order, matched by correlation id.
pub struct ShardServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl ShardServer {
    /// Binds `listen` and serves `service` with `workers` handler threads.
    pub fn start(service: Arc<dyn Service>, listen: impl ToSocketAddrs, workers: usize) -> io::Result<ShardServer> {
        let listener = TcpListener::bind(listen)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let (tx, rx) = bounded::<Job>(1024);
        let mut threads = Vec::new();
        for i in 0..workers.max(1) {
            let (rx, service, stop) = (rx.clone(), service.clone(), stop.clone());
            threads.push(
                std::thread::Builder::new()
                    .name(format!("shard-worker-{i}"))
                    .spawn(move || worker(rx, service, stop))?,
            );
        }
        let accept_stop = stop.clone();
        threads.push(std::thread::Builder::new().name("shard-accept".into()).spawn(move || {
            let next_conn = AtomicU64::new(0);
            while !accept_stop.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, peer)) => {
                        let conn = next_conn.fetch_add(1, Ordering::SeqCst);
                        log::debug!("connection {conn} from {peer}");
                        let tx = tx.clone();
                        let stop = accept_stop.clone();
                        let _ = std::thread::Builder::new()
                            .name(format!("shard-conn-{conn}"))
                            .spawn(move || {
                                if let Err(e) = read_loop(conn, stream, tx, stop) {
                                    log::debug!("connection {conn} closed: {e}");
                                }
                            });
                    }
                    Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(5));
                    }
                    Err(e) => log::warn!("accept failed: {e}"),
                }
            }
        })?);
        Ok(ShardServer { addr, stop, threads })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting and waits for the workers to finish their jobs.
    pub fn shutdown(mut self) {
        self.stop_all();
    }

    fn stop_all(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for ShardServer {
    fn drop(&mut self) {
        self.stop_all();
    }
}

fn read_loop(
    conn: u64,
    stream: TcpStream,
    tx: crossbeam_channel::Sender<Job>,
    stop: Arc<AtomicBool>,
) -> io::Result<()> {
    let out = Arc::new(Mutex::new(BufWriter::new(stream.try_clone()?)));
    let bad_frame = out.clone();
    let result = read_frames(stream, &stop, |frame| {
        tx.send(Job {
            conn,
            frame,
            out: out.clone(),
        })
        .is_ok()
    });
    if let Err(e) = &result {
        if e.kind() == io::ErrorKind::InvalidData {
            // The stream can no longer be framed; say why and hang up.
            let reply = Reply::error(ErrorCode::BadRequest, e.to_string());
            let _ = Frame::reply(0, &reply).write_to(&mut *bad_frame.lock());
        }
    }
    result
}

/// Feeds each frame read from `stream` to `on_frame` until the peer hangs
/// up, `on_frame` returns false or `stop` is set. Idle connections are
/// polled so `stop` is noticed; a frame once started is read whole.
pub(crate) fn read_frames(
    stream: TcpStream,
    stop: &AtomicBool,
    mut on_frame: impl FnMut(Frame) -> bool,
) -> io::Result<()> {
    stream.set_nodelay(true)?;
    stream.set_nonblocking(false)?;
    let mut input = BufReader::new(stream);
    let mut probe = [0u8; 1];
    loop {
        if stop.load(Ordering::SeqCst) {
            return Ok(());
        }
        if input.buffer().is_empty() {
            input.get_ref().set_read_timeout(Some(IDLE_POLL))?;
            match input.get_ref().peek(&mut probe) {
                Ok(0) => return Ok(()),
                Ok(_) => {}
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => continue,
                Err(e) => return Err(e),
            }
            input.get_ref().set_read_timeout(Some(FRAME_TIMEOUT))?;
        }
        match Frame::read_from(&mut input)? {
            Some(frame) => {
                if !on_frame(frame) {
                    return Ok(());
                }
            }
            None => return Ok(()),
        }
    }
}

fn worker(rx: Receiver<Job>, service: Arc<dyn Service>, stop: Arc<AtomicBool>) {
    loop {
        let job = match rx.recv_timeout(Duration::from_millis(50)) {
            Ok(j) => j,
            Err(RecvTimeoutError::Timeout) if !stop.load(Ordering::SeqCst) => continue,
            Err(_) => return,
        };
        let reply = match Request::decode_payload(job.frame.kind, &job.frame.payload) {
            Ok(req) => service.handle(job.conn, req),
            Err(e) => Reply::error(ErrorCode::BadRequest, format!("malformed request: {e}")),
        };
        let mut out = job.out.lock();
        if let Err(e) = Frame::reply(job.frame.correlation, &reply).write_to(&mut *out) {
            log::debug!("reply to connection {} lost: {e}", job.conn);
        }
        let _ = out.flush();
    }
}
