//! TCP transport.
//!
//! Workers connect to the master and announce themselves with a handshake
//! frame (`EVAL_REPLY`, round 0, empty payload, their worker id). After that
//! every round is one `EVAL_REQ` per worker followed by one `EVAL_REPLY`
//! each, on a persistent connection.

use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::objective::ObjectiveShard;
use crate::wire::{read_message, write_message, Message, Tag};

pub(crate) struct TcpMaster {
    conns: Vec<TcpStream>,
    local: Vec<JoinHandle<Result<()>>>,
    addr: Option<SocketAddr>,
}

impl TcpMaster {
    pub(crate) fn spawn_local(addr: &str, shards: Vec<ObjectiveShard>, timeout: Duration) -> Result<Self> {
        let listener = TcpListener::bind(addr).map_err(|e| Error::Transport(format!("bind {addr}: {e}")))?;
        let bound = listener.local_addr()?;
        let m = shards.len();
        let mut local = Vec::with_capacity(m);
        for (i, shard) in shards.into_iter().enumerate() {
            let id = (i + 1) as u32;
            let target = bound.to_string();
            let handle = thread::Builder::new()
                .name(format!("acn-worker-{id}"))
                .spawn(move || run_worker(&target, id, &shard, timeout))?;
            local.push(handle);
        }
        let conns = accept_workers(&listener, m, timeout)?;
        Ok(Self { conns, local, addr: Some(bound) })
    }

    pub(crate) fn accept_remote(addr: &str, m: usize, timeout: Duration) -> Result<Self> {
        let listener = TcpListener::bind(addr).map_err(|e| Error::Transport(format!("bind {addr}: {e}")))?;
        let bound = listener.local_addr()?;
        log::info!("waiting for {m} workers on {bound}");
        let conns = accept_workers(&listener, m, timeout)?;
        Ok(Self { conns, local: Vec::new(), addr: Some(bound) })
    }

    pub(crate) fn local_addr(&self) -> Option<SocketAddr> {
        self.addr
    }

    pub(crate) fn gather(&mut self, round: u64, x: &[f64], d: usize) -> Result<Vec<(DVector<f64>, f64)>> {
        for (i, conn) in self.conns.iter_mut().enumerate() {
            let id = (i + 1) as u32;
            write_message(conn, &Message::eval_request(round, id, x))
                .map_err(|e| Error::Transport(format!("send to worker {id}: {e}")))?;
        }
        let mut replies = Vec::with_capacity(self.conns.len());
        for (i, conn) in self.conns.iter_mut().enumerate() {
            let id = (i + 1) as u32;
            let msg = read_message(conn).map_err(|e| match e {
                Error::Io(io) if matches!(io.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    Error::Timeout { worker: id, round }
                }
                Error::Io(io) => Error::Transport(format!("receive from worker {id}: {io}")),
                other => other,
            })?;
            if msg.tag != Tag::EvalReply || msg.round_id != round || msg.worker_id != id {
                return Err(Error::Malformed(format!(
                    "expected reply to round {round} from worker {id}, got {:?} round {} from {}",
                    msg.tag, msg.round_id, msg.worker_id
                )));
            }
            if msg.payload.len() != d + 1 {
                return Err(Error::Malformed(format!(
                    "worker {id} replied with {} values, expected {}",
                    msg.payload.len(),
                    d + 1
                )));
            }
            let value = msg.payload[d];
            replies.push((DVector::from_column_slice(&msg.payload[..d]), value));
        }
        Ok(replies)
    }

    pub(crate) fn shutdown(&mut self, round: u64) {
        for (i, conn) in self.conns.iter_mut().enumerate() {
            let id = (i + 1) as u32;
            if let Err(e) = write_message(conn, &Message::shutdown(round, id)) {
                log::debug!("shutdown to worker {id}: {e}");
            }
        }
        for handle in self.local.drain(..) {
            match handle.join() {
                Ok(Ok(())) => {}
                Ok(Err(e)) => log::warn!("worker exited with error: {e}"),
                Err(_) => log::warn!("worker thread panicked"),
            }
        }
        self.conns.clear();
    }
}

fn accept_workers(listener: &TcpListener, m: usize, timeout: Duration) -> Result<Vec<TcpStream>> {
    listener.set_nonblocking(true)?;
    let deadline = Instant::now() + timeout;
    let mut slots: Vec<Option<TcpStream>> = (0..m).map(|_| None).collect();
    let mut connected = 0;
    while connected < m {
        match listener.accept() {
            Ok((stream, peer)) => {
                stream.set_nonblocking(false)?;
                stream.set_nodelay(true)?;
                stream.set_read_timeout(Some(timeout))?;
                let mut stream = stream;
                let hello =
                    read_message(&mut stream).map_err(|e| Error::Transport(format!("handshake from {peer}: {e}")))?;
                let id = hello.worker_id as usize;
                if hello.tag != Tag::EvalReply || hello.round_id != 0 || !hello.payload.is_empty() {
                    return Err(Error::Malformed(format!("bad handshake from {peer}")));
                }
                if id == 0 || id > m {
                    return Err(Error::Malformed(format!("worker id {id} outside 1..={m}")));
                }
                if slots[id - 1].is_some() {
                    return Err(Error::Malformed(format!("worker id {id} connected twice")));
                }
                slots[id - 1] = Some(stream);
                connected += 1;
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(Error::Transport(format!(
                        "only {connected} of {m} workers connected within {timeout:?}"
                    )));
                }
                thread::sleep(Duration::from_millis(1));
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(slots.into_iter().map(|s| s.expect("every slot filled")).collect())
}

/// Worker loop: connect, announce `worker_id`, then answer evaluation
/// requests until the master sends `SHUTDOWN`.
pub fn run_worker(addr: &str, worker_id: u32, shard: &ObjectiveShard, connect_timeout: Duration) -> Result<()> {
    let targets: Vec<SocketAddr> =
        addr.to_socket_addrs().map_err(|e| Error::Transport(format!("resolve {addr}: {e}")))?.collect();
    let mut last_err = None;
    let mut stream = None;
    for sa in &targets {
        match TcpStream::connect_timeout(sa, connect_timeout) {
            Ok(s) => {
                stream = Some(s);
                break;
            }
            Err(e) => last_err = Some(e),
        }
    }
    let mut stream = stream.ok_or_else(|| {
        Error::Transport(format!(
            "connect {addr}: {}",
            last_err.map_or_else(|| "no addresses".to_string(), |e| e.to_string())
        ))
    })?;
    stream.set_nodelay(true)?;
    write_message(&mut stream, &Message { tag: Tag::EvalReply, round_id: 0, worker_id, payload: Vec::new() })?;

    let d = shard.dim();
    loop {
        let msg = read_message(&mut stream).map_err(|e| match e {
            Error::Io(io) if io.kind() == ErrorKind::UnexpectedEof => {
                Error::Transport("master closed the connection".into())
            }
            other => other,
        })?;
        match msg.tag {
            Tag::Shutdown => return Ok(()),
            Tag::EvalReply => return Err(Error::Malformed("worker received a reply frame".into())),
            Tag::EvalReq => {
                if msg.payload.len() != d {
                    return Err(Error::DimensionMismatch { expected: d, got: msg.payload.len() });
                }
                let x = DVector::from_column_slice(&msg.payload);
                let (value, grad) = shard.value_and_gradient(&x)?;
                write_message(&mut stream, &Message::eval_reply(msg.round_id, worker_id, grad.as_slice(), value))?;
            }
        }
    }
}
