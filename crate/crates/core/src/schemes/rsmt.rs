//! Redundant simultaneous multithreading.
//!
//! Primary and redundant hardware threads run the same program on one
//! core and share its commit port. Each primary commit pushes the
//! instruction's result record into a bounded FIFO comparison buffer;
//! the redundant thread pops the head when it commits the same dynamic
//! instruction and compares. A full buffer stalls the primary (the slot
//! goes to the redundant thread), an empty buffer stalls the redundant
//! thread; otherwise arbitration is round-robin.
//!
//! The redundant thread takes load values from the popped records rather
//! than live memory, so primary stores that landed ahead of a trailing
//! redundant load cannot fabricate mismatches; its load addresses are
//! still computed from its own registers and compared. Only the primary
//! thread's register file is fault-injectable.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::fault::FaultSpec;
use crate::isa::{Inst, Program};
use crate::machine::{CommitValue, Machine, MachineLimits, Memory, StepCtx, StepOutcome};

use super::{
    compare_commits, CoreActivity, CoreKind, DetectionCause, DetectionEvent, SchemeRunResult,
    SchemeStatus, SimError, SlackTrace,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Grant {
    Primary,
    Redundant,
}

/// Commit-slot arbitration: stall overrides first, round-robin otherwise.
fn arbitrate(occupancy: usize, capacity: usize, prefer_primary: bool) -> Grant {
    if occupancy >= capacity {
        Grant::Redundant
    } else if occupancy == 0 {
        Grant::Primary
    } else if prefer_primary {
        Grant::Primary
    } else {
        Grant::Redundant
    }
}

pub fn run_rsmt(
    program: &Arc<Program>,
    limits: &MachineLimits,
    fault: Option<FaultSpec>,
    buffer_capacity: usize,
    commit_width: u32,
) -> Result<SchemeRunResult, SimError> {
    if buffer_capacity == 0 {
        return Err(SimError::BadConfig("comparison buffer capacity must be >= 1".into()));
    }
    if commit_width == 0 {
        return Err(SimError::BadConfig("commit width must be >= 1".into()));
    }
    let mut mem = Memory::for_program(program, limits)?;
    let mut primary = Machine::new(program.clone());
    let mut redundant = Machine::new(program.clone());
    if let Some(spec) = fault {
        primary.attach_fault(spec)?;
    }

    let mut buffer: VecDeque<crate::machine::CommitRecord> =
        VecDeque::with_capacity(buffer_capacity);
    let mut slack = SlackTrace::default();
    let mut detections = Vec::new();
    let mut prefer_primary = true;
    let mut now = 0u64;

    let status = 'run: loop {
        if primary.done() && redundant.done() {
            break SchemeStatus::Completed;
        }
        if now >= limits.max_cycles {
            break SchemeStatus::TimedOut;
        }
        now += 1;
        primary.begin_cycle(now);

        for _ in 0..commit_width {
            let grant = match (primary.done(), redundant.done()) {
                (true, true) => break,
                (false, true) => {
                    return Err(SimError::Invariant(
                        "redundant thread finished ahead of the primary".into(),
                    ));
                }
                (true, false) => Grant::Redundant,
                (false, false) => arbitrate(buffer.len(), buffer_capacity, prefer_primary),
            };
            match grant {
                Grant::Primary => {
                    match primary.step(now, &mut StepCtx::direct(&mut mem)) {
                        StepOutcome::Committed(rec) => buffer.push_back(rec),
                        StepOutcome::Crashed(reason) => break 'run SchemeStatus::Crashed(reason),
                        StepOutcome::Halted => {}
                    }
                }
                Grant::Redundant => {
                    let head = *buffer.front().ok_or_else(|| {
                        SimError::Invariant("redundant granted with empty buffer".into())
                    })?;
                    // Load value queue: a trailing load adopts the
                    // primary's loaded value; only when the next record
                    // really is a load for this instruction.
                    let load_override = match (redundant.next_inst(), head.result) {
                        (Some(Inst::Load { .. }), CommitValue::Load { value, .. }) => Some(value),
                        _ => None,
                    };
                    let occupancy_before = buffer.len();
                    match redundant.step(
                        now,
                        &mut StepCtx { mem: &mut mem, store_through: false, load_override },
                    ) {
                        StepOutcome::Committed(rec) => {
                            let pushed = buffer.pop_front().expect("head checked above");
                            slack.insns.push(occupancy_before as u32);
                            slack.cycles.push(now - pushed.cycle);
                            if let Some(mismatch) = compare_commits(&pushed, &rec)? {
                                detections.push(DetectionEvent {
                                    cycle: now,
                                    seq: mismatch.seq,
                                    cause: DetectionCause::ResultMismatch,
                                });
                                break 'run SchemeStatus::Detected;
                            }
                        }
                        StepOutcome::Crashed(reason) => break 'run SchemeStatus::Crashed(reason),
                        StepOutcome::Halted => {}
                    }
                }
            }
        }
        prefer_primary = !prefer_primary;
    };

    let output = (status == SchemeStatus::Completed)
        .then(|| mem.region_bytes(program.output_region));
    let total_commits = primary.commits() + redundant.commits();
    Ok(SchemeRunResult {
        status,
        cycles: now,
        program_cycles: now,
        main_commits: primary.commits(),
        output,
        detections,
        activity: vec![CoreActivity {
            kind: CoreKind::Main,
            active_cycles: now,
            commits: total_commits,
            threads: 2,
        }],
        first_manifest_cycle: primary.fault().and_then(|f| f.first_manifest_cycle),
        slack: Some(slack),
        checker: None,
    })
}

/// Distribution summary of per-instruction slack samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlackSummary {
    pub samples: usize,
    pub min: u32,
    pub mean: f64,
    pub median: f64,
    pub max: u32,
    /// Exact-value histogram: (slack, count).
    pub histogram: Vec<(u32, u64)>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("cannot summarize an empty slack trace")]
pub struct EmptySlackTrace;

/// Summarizes the instruction-slack samples of a run.
pub fn measure_slack(trace: &SlackTrace) -> Result<SlackSummary, EmptySlackTrace> {
    if trace.insns.is_empty() {
        return Err(EmptySlackTrace);
    }
    let mut sorted = trace.insns.clone();
    sorted.sort_unstable();
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0
    };
    let mut histogram: Vec<(u32, u64)> = Vec::new();
    for &s in &sorted {
        match histogram.last_mut() {
            Some((v, c)) if *v == s => *c += 1,
            _ => histogram.push((s, 1)),
        }
    }
    Ok(SlackSummary {
        samples: n,
        min: sorted[0],
        mean: sorted.iter().map(|&s| s as f64).sum::<f64>() / n as f64,
        median,
        max: sorted[n - 1],
        histogram,
    })
}
