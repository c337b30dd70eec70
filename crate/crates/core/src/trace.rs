//! Per-iterate records shared by all methods.

use std::time::Instant;

use nalgebra::DVector;

use crate::error::Result;
use crate::saa::SaaProblem;

/// Offline knowledge about the solution, used only for logging and
/// stopping. Evaluating it never costs a communication round.
#[derive(Debug, Clone, Copy)]
pub struct Reference<'a> {
    pub problem: &'a SaaProblem,
    pub f_star: f64,
    pub x_star: &'a DVector<f64>,
    /// Stop as soon as an iterate's gap falls to this level.
    pub target_gap: Option<f64>,
    /// Stop once the runtime counter reaches this many rounds.
    pub max_rounds: Option<u64>,
    /// When set, trace points carry elapsed milliseconds since this instant.
    pub clock: Option<Instant>,
}

impl<'a> Reference<'a> {
    pub fn new(problem: &'a SaaProblem, f_star: f64, x_star: &'a DVector<f64>) -> Self {
        Self { problem, f_star, x_star, target_gap: None, max_rounds: None, clock: None }
    }

    pub fn with_target_gap(mut self, gap: f64) -> Self {
        self.target_gap = Some(gap);
        self
    }

    pub fn with_max_rounds(mut self, rounds: u64) -> Self {
        self.max_rounds = Some(rounds);
        self
    }

    pub fn with_clock(mut self, start: Instant) -> Self {
        self.clock = Some(start);
        self
    }

    pub fn gap(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.problem.objective(x)? - self.f_star)
    }

    pub fn distance(&self, x: &DVector<f64>) -> f64 {
        (x - self.x_star).norm()
    }

    pub fn should_stop(&self, p: &TracePoint) -> bool {
        let hit = matches!((self.target_gap, p.f_gap), (Some(t), Some(g)) if g <= t);
        let spent = matches!(self.max_rounds, Some(r) if p.comm_rounds >= r);
        hit || spent
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    /// Iterate index within the method's own numbering.
    pub t: usize,
    /// Runtime round counter after this iterate became available.
    pub comm_rounds: u64,
    pub x: DVector<f64>,
    pub f_gap: Option<f64>,
    pub dist_to_opt: Option<f64>,
    /// Zero unless the reference carries a clock.
    pub wall_ms: f64,
}

impl TracePoint {
    pub fn record(t: usize, comm_rounds: u64, x: &DVector<f64>, reference: Option<&Reference<'_>>) -> Result<Self> {
        let (f_gap, dist_to_opt) = match reference {
            Some(r) => (Some(r.gap(x)?), Some(r.distance(x))),
            None => (None, None),
        };
        let wall_ms = reference.and_then(|r| r.clock).map_or(0.0, |c| c.elapsed().as_secs_f64() * 1e3);
        Ok(Self { t, comm_rounds, x: x.clone(), f_gap, dist_to_opt, wall_ms })
    }
}

/// Final point plus the iterates visited on the way.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub x: DVector<f64>,
    pub trajectory: Vec<TracePoint>,
}

impl MethodRun {
    /// Rounds spent when the gap first fell to `target`, if it did.
    pub fn rounds_to_gap(&self, target: f64) -> Option<u64> {
        self.trajectory.iter().find(|p| matches!(p.f_gap, Some(g) if g <= target)).map(|p| p.comm_rounds)
    }
}
