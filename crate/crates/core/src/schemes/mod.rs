//! Error-detection schemes over the execution engine.
//!
//! Three detectors plus the unprotected baseline:
//!
//! * [`dmr`] — spatial dual modular redundancy: two identical cores in
//!   cycle lockstep comparing every commit.
//! * [`rsmt`] — redundant SMT: primary and redundant hardware threads
//!   share one commit port; results meet in a bounded comparison buffer.
//! * [`pardet`] — parallel error detection: the main core's execution is
//!   segmented between architectural checkpoints and re-executed on slow
//!   checker cores fed by a load-store log.
//!
//! Every scheme replays the same fault at the same absolute cycle, halts
//! at its first detection, and reports per-core activity so the cost
//! models can compare energy downstream.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fault::FaultError;
use crate::machine::{CommitRecord, CrashReason, SetupError};

pub mod dmr;
pub mod pardet;
pub mod rsmt;

mod unprotected;

pub use unprotected::run_unprotected;

/// Scheme selection with its knobs; serializes as the JSON configuration
/// block (`{"scheme":"rsmt","buffer_capacity":10,...}`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "lowercase", deny_unknown_fields)]
pub enum SchemeConfig {
    Unprotected,
    Dmr,
    Rsmt {
        #[serde(default = "defaults::buffer_capacity")]
        buffer_capacity: usize,
        #[serde(default = "defaults::commit_width")]
        commit_width: u32,
    },
    Pardet {
        #[serde(default = "defaults::n_checkers")]
        n_checkers: usize,
        #[serde(default = "defaults::segment_insns")]
        segment_insns: u64,
        #[serde(default = "defaults::speed_ratio")]
        speed_ratio: f64,
        #[serde(default = "defaults::checkpoint_cost")]
        checkpoint_cost: u64,
        #[serde(default = "defaults::log_entries_per_segment")]
        log_entries_per_segment: usize,
    },
}

mod defaults {
    pub fn buffer_capacity() -> usize {
        10
    }
    pub fn commit_width() -> u32 {
        1
    }
    pub fn n_checkers() -> usize {
        3
    }
    pub fn segment_insns() -> u64 {
        1000
    }
    pub fn speed_ratio() -> f64 {
        0.25
    }
    pub fn checkpoint_cost() -> u64 {
        32
    }
    pub fn log_entries_per_segment() -> usize {
        1024
    }
}

impl SchemeConfig {
    pub fn rsmt_default() -> Self {
        SchemeConfig::Rsmt {
            buffer_capacity: defaults::buffer_capacity(),
            commit_width: defaults::commit_width(),
        }
    }

    pub fn pardet_default() -> Self {
        SchemeConfig::Pardet {
            n_checkers: defaults::n_checkers(),
            segment_insns: defaults::segment_insns(),
            speed_ratio: defaults::speed_ratio(),
            checkpoint_cost: defaults::checkpoint_cost(),
            log_entries_per_segment: defaults::log_entries_per_segment(),
        }
    }

    /// Short human label carrying the swept knob.
    pub fn label(&self) -> String {
        match self {
            SchemeConfig::Unprotected => "unprotected".to_string(),
            SchemeConfig::Dmr => "dmr".to_string(),
            SchemeConfig::Rsmt { buffer_capacity, .. } => format!("rsmt(cap={buffer_capacity})"),
            SchemeConfig::Pardet { n_checkers, .. } => format!("pardet(checkers={n_checkers})"),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SchemeConfig::Unprotected => "unprotected",
            SchemeConfig::Dmr => "dmr",
            SchemeConfig::Rsmt { .. } => "rsmt",
            SchemeConfig::Pardet { .. } => "pardet",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DetectionCause {
    /// A committed result disagreed between redundant executions.
    ResultMismatch,
    /// Architectural states disagreed at a segment boundary.
    StateMismatch,
}

/// One detection. `seq` is the mismatching dynamic instruction for the
/// result-comparing schemes and the segment index for state comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub cycle: u64,
    pub seq: u64,
    pub cause: DetectionCause,
}

/// Terminal state of a scheme run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchemeStatus {
    /// Ran to completion with every pending check passed.
    Completed,
    /// Halted at the first detection event.
    Detected,
    Crashed(CrashReason),
    TimedOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoreKind {
    Main,
    Checker,
}

/// Activity of one core over a run, the input to the power model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreActivity {
    pub kind: CoreKind,
    pub active_cycles: u64,
    pub commits: u64,
    /// Hardware threads resident on the core (2 for the SMT pair).
    pub threads: u32,
}

/// Per-instruction slack samples taken at each redundant-thread commit.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlackTrace {
    /// Instructions the primary had retired beyond the one being
    /// validated, at validation time. Bounded by the buffer capacity.
    pub insns: Vec<u32>,
    /// Cycles between primary and redundant retirement of the same
    /// instruction.
    pub cycles: Vec<u64>,
}

/// Checker-core occupancy collected from a parallel-detection run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckerStats {
    pub segments: u64,
    pub busy_cycles: Vec<u64>,
    /// Peak number of simultaneously busy checkers.
    pub max_concurrent: u32,
}

/// Outcome of one scheme run, for one (benchmark, fault) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeRunResult {
    pub status: SchemeStatus,
    /// Last cycle of the run on the shared timeline, including
    /// verification tails.
    pub cycles: u64,
    /// Cycle at which the program itself finished on the main/primary
    /// path; the basis for IPC and slowdown.
    pub program_cycles: u64,
    /// Instructions the main program committed.
    pub main_commits: u64,
    /// Output-region bytes, present only for completed runs.
    pub output: Option<Vec<u8>>,
    pub detections: Vec<DetectionEvent>,
    pub activity: Vec<CoreActivity>,
    /// First cycle the fault visibly corrupted a register read.
    pub first_manifest_cycle: Option<u64>,
    pub slack: Option<SlackTrace>,
    pub checker: Option<CheckerStats>,
}

impl SchemeRunResult {
    pub fn ipc(&self) -> Option<f64> {
        (self.program_cycles > 0).then(|| self.main_commits as f64 / self.program_cycles as f64)
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Setup(#[from] SetupError),
    #[error(transparent)]
    Fault(#[from] FaultError),
    #[error("invalid scheme configuration: {0}")]
    BadConfig(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

/// Commit comparison shared by DMR and R-SMT: two records for the same
/// dynamic instruction mismatch when either the static instruction or
/// its result differs. Comparing records for different sequence numbers
/// is a driver bug, not a detection.
pub fn compare_commits(
    a: &CommitRecord,
    b: &CommitRecord,
) -> Result<Option<Mismatch>, SimError> {
    if a.seq != b.seq {
        return Err(SimError::Invariant(format!(
            "commit comparison misaligned: seq {} vs {}",
            a.seq, b.seq
        )));
    }
    if a.static_index != b.static_index || a.result != b.result {
        return Ok(Some(Mismatch { seq: a.seq, a: *a, b: *b }));
    }
    Ok(None)
}

/// Evidence of a result mismatch between redundant executions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mismatch {
    pub seq: u64,
    pub a: CommitRecord,
    pub b: CommitRecord,
}

/// Runs a fault (or fault-free baseline) under the given scheme.
pub fn run_scheme(
    program: &std::sync::Arc<crate::isa::Program>,
    limits: &crate::machine::MachineLimits,
    fault: Option<crate::fault::FaultSpec>,
    config: &SchemeConfig,
) -> Result<SchemeRunResult, SimError> {
    match *config {
        SchemeConfig::Unprotected => run_unprotected(program, limits, fault),
        SchemeConfig::Dmr => dmr::run_dmr(program, limits, fault),
        SchemeConfig::Rsmt { buffer_capacity, commit_width } => {
            rsmt::run_rsmt(program, limits, fault, buffer_capacity, commit_width)
        }
        SchemeConfig::Pardet {
            n_checkers,
            segment_insns,
            speed_ratio,
            checkpoint_cost,
            log_entries_per_segment,
        } => pardet::run_pardet(
            program,
            limits,
            fault,
            &pardet::PardetParams {
                n_checkers,
                segment_insns,
                speed_ratio,
                checkpoint_cost,
                log_entries_per_segment,
            },
        ),
    }
}
