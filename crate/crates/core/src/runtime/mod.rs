//! Master/workers execution substrate.
//!
//! A [`DistRuntime`] owns `m` workers, each holding one shard, and exposes a
//! single collective: [`DistRuntime::gather`] broadcasts a point and collects
//! every worker's gradient and value. Each gather is one communication round.
//! Replies are reduced by the master in ascending worker-id order, so the
//! floating-point result does not depend on the transport or arrival order.

mod tcp;

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::objective::ObjectiveShard;
use crate::saa::SaaProblem;
use crate::wire;

pub use tcp::run_worker;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transport {
    InProc,
    /// Master listens on this address; workers run as local threads that
    /// connect over TCP.
    Tcp(String),
}

#[derive(Debug, Clone)]
pub struct RuntimeOptions {
    /// Zero-based index of the shard whose Hessian the master uses.
    pub master_shard: usize,
    pub timeout: Duration,
}

impl Default for RuntimeOptions {
    fn default() -> Self {
        Self { master_shard: 0, timeout: DEFAULT_TIMEOUT }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatherResult {
    pub grad_mean: DVector<f64>,
    pub f_mean: f64,
    pub round_id: u64,
}

enum Backend {
    InProc(Arc<Vec<ObjectiveShard>>),
    Tcp(tcp::TcpMaster),
}

pub struct DistRuntime {
    backend: Backend,
    master: ObjectiveShard,
    m: usize,
    d: usize,
    rounds: u64,
    closed: bool,
}

impl DistRuntime {
    pub fn start(problem: &SaaProblem, transport: Transport) -> Result<Self> {
        Self::start_with(problem.shards.clone(), transport, RuntimeOptions::default())
    }

    pub fn start_with(shards: Vec<ObjectiveShard>, transport: Transport, opts: RuntimeOptions) -> Result<Self> {
        let m = shards.len();
        if m == 0 {
            return Err(Error::InvalidParameter("runtime needs at least one shard".into()));
        }
        if opts.master_shard >= m {
            return Err(Error::InvalidParameter(format!(
                "master shard {} out of range for {m} shards",
                opts.master_shard
            )));
        }
        let d = shards[0].dim();
        if let Some(bad) = shards.iter().find(|s| s.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: bad.dim() });
        }
        let master = shards[opts.master_shard].clone();
        let backend = match transport {
            Transport::InProc => Backend::InProc(Arc::new(shards)),
            Transport::Tcp(addr) => Backend::Tcp(tcp::TcpMaster::spawn_local(&addr, shards, opts.timeout)?),
        };
        Ok(Self { backend, master, m, d, rounds: 0, closed: false })
    }

    /// Waits on `addr` for `m` external worker processes. The master keeps
    /// its own copy of the preconditioning shard.
    pub fn listen(addr: &str, m: usize, master: ObjectiveShard, timeout: Duration) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidParameter("runtime needs at least one worker".into()));
        }
        let d = master.dim();
        let backend = Backend::Tcp(tcp::TcpMaster::accept_remote(addr, m, timeout)?);
        Ok(Self { backend, master, m, d, rounds: 0, closed: false })
    }

    pub fn workers(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn comm_rounds(&self) -> u64 {
        self.rounds
    }

    /// Address the TCP master listens on, if any.
    pub fn local_addr(&self) -> Option<std::net::SocketAddr> {
        match &self.backend {
            Backend::Tcp(t) => t.local_addr(),
            Backend::InProc(_) => None,
        }
    }

    /// One communication round: mean gradient and mean value at `x`.
    pub fn gather(&mut self, x: &DVector<f64>) -> Result<GatherResult> {
        if self.closed {
            return Err(Error::RuntimeClosed);
        }
        if x.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: x.len() });
        }
        let round_id = self.rounds + 1;
        let replies = match &mut self.backend {
            Backend::InProc(shards) => {
                shards.par_iter().map(|s| s.value_and_gradient(x).map(|(f, g)| (g, f))).collect::<Result<Vec<_>>>()?
            }
            Backend::Tcp(t) => t.gather(round_id, x.as_slice(), self.d)?,
        };
        self.rounds = round_id;
        let (grad_mean, f_mean) = reduce(&replies, self.d);
        Ok(GatherResult { grad_mean, f_mean, round_id })
    }

    /// Hessian of the master's local shard; computed locally, no round.
    pub fn master_hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.master.hessian(x)
    }

    pub fn master_shard(&self) -> &ObjectiveShard {
        &self.master
    }

    /// Stops all workers. Idempotent; failures are logged, not returned.
    pub fn shutdown(&mut self) {
        if self.closed {
            return;
        }
        self.closed = true;
        if let Backend::Tcp(t) = &mut self.backend {
            t.shutdown(self.rounds + 1);
        }
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }
}

impl Drop for DistRuntime {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Sums replies in the given (worker-id) order, then divides by their count.
pub fn reduce(replies: &[(DVector<f64>, f64)], d: usize) -> (DVector<f64>, f64) {
    let mut g = DVector::zeros(d);
    let mut f = 0.0;
    for (gk, fk) in replies {
        g += gk;
        f += fk;
    }
    let m = replies.len() as f64;
    (g / m, f / m)
}

/// Shard file: length-prefixed f64 block `[worker_id, shard values…]`.
pub fn write_shard_file(path: &Path, worker_id: u32, shard: &ObjectiveShard) -> Result<()> {
    let mut values = vec![worker_id as f64];
    values.extend(shard.to_values());
    std::fs::write(path, wire::encode_values(&values))?;
    Ok(())
}

pub fn read_shard_file(path: &Path) -> Result<(u32, ObjectiveShard)> {
    let values = wire::decode_values(&std::fs::read(path)?)?;
    let (&id, rest) = values.split_first().ok_or_else(|| Error::Malformed("empty shard file".into()))?;
    let id = crate::objective::as_count(id)?;
    let id = u32::try_from(id).map_err(|_| Error::Malformed(format!("worker id {id} out of range")))?;
    Ok((id, ObjectiveShard::from_values(rest)?))
}
