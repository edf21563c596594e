use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use log::{debug, warn};

use crate::error::SutError;
use crate::store::TimeSeriesStore;

use super::wire::{self, ErrorBody, Frame, QueryRequest, OP_ACK, OP_ERROR, OP_INSERT, OP_QUERY, OP_RESULT};
use super::{apply_ingest, IngestItem};

pub struct ServerHandle {
    pub addr: SocketAddr,
    pub store: Arc<Mutex<TimeSeriesStore>>,
    pub thread: JoinHandle<()>,
    stop: Arc<AtomicBool>,
}

impl ServerHandle {
    /// Stops accepting connections and joins the accept loop. Open
    /// connections finish on their own when their clients disconnect.
    pub fn shutdown(self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        let _ = self.thread.join();
    }
}

fn reply(store: &Mutex<TimeSeriesStore>, req: &Frame) -> Frame {
    let result = match req.opcode {
        OP_INSERT => req.decode::<IngestItem>().map(|item| {
            let ack = apply_ingest(&mut store.lock().expect("store lock"), &item);
            Frame::json(OP_ACK, &ack)
        }),
        OP_QUERY => req.decode::<QueryRequest>().map(|r| {
            let res = store.lock().expect("store lock").query(&r.query, r.materialize);
            Frame::json(OP_RESULT, &res)
        }),
        op => Err(SutError::Protocol(format!("unexpected opcode {op:#04x}"))),
    };
    result.unwrap_or_else(|e| Frame::json(OP_ERROR, &ErrorBody { message: e.to_string() }))
}

fn handle(stream: TcpStream, store: Arc<Mutex<TimeSeriesStore>>) {
    let peer = stream.peer_addr().ok();
    let _ = stream.set_nodelay(true);
    let mut reader = BufReader::new(match stream.try_clone() {
        Ok(s) => s,
        Err(e) => return warn!("cannot clone stream: {e}"),
    });
    let mut writer = BufWriter::new(stream);
    loop {
        let frame = match wire::read_frame(&mut reader) {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(e) => {
                debug!("closing {peer:?}: {e}");
                let _ = wire::write_frame(&mut writer, &Frame::json(OP_ERROR, &ErrorBody { message: e.to_string() }));
                break;
            }
        };
        if let Err(e) = wire::write_frame(&mut writer, &reply(&store, &frame)) {
            debug!("closing {peer:?}: {e}");
            break;
        }
    }
}

/// Serves the store on `listener` forever, one thread per connection.
pub fn serve(listener: TcpListener, store: Arc<Mutex<TimeSeriesStore>>) {
    serve_until(listener, store, &AtomicBool::new(false));
}

fn serve_until(listener: TcpListener, store: Arc<Mutex<TimeSeriesStore>>, stop: &AtomicBool) {
    for conn in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        match conn {
            Ok(stream) => {
                let store = Arc::clone(&store);
                thread::spawn(move || handle(stream, store));
            }
            Err(e) => warn!("accept failed: {e}"),
        }
    }
}

/// Binds `addr` (port 0 picks a free port) and serves in the background.
pub fn spawn_server(addr: &str, store: TimeSeriesStore) -> std::io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    let addr = listener.local_addr()?;
    let store = Arc::new(Mutex::new(store));
    let shared = Arc::clone(&store);
    let stop = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&stop);
    let thread = thread::spawn(move || serve_until(listener, shared, &flag));
    Ok(ServerHandle {
        addr,
        store,
        thread,
        stop,
    })
}
