//! Parallel error detection with heterogeneous checker cores.
//!
//! The main core's execution is cut into segments of consecutive
//! instructions. At each boundary the architectural state is
//! checkpointed (stalling the main core for the checkpoint cost) and the
//! finished segment — start state, end state and its slice of the
//! load-store log — is offloaded to a checker core that replays it at a
//! fraction of the main core's speed. Errors are detected by comparing
//! the replayed architectural state against the checkpointed ending
//! state; checker loads are served from the log, never from live memory,
//! and checker stores are validated against the logged ones.
//!
//! The log is split into one slice per checker, so segment `k` belongs
//! to checker `k mod n`: the main core may only enter a new segment once
//! that segment's checker has retired its previous assignment, which is
//! what stalls the main core when verification cannot keep up.
//!
//! Replays execute out of band; their completion cycles come from the
//! timing model (handoff plus instructions divided by checker speed), so
//! a detection is attributed to the cycle its checker finishes.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::fault::FaultSpec;
use crate::isa::{Inst, Program, Word};
use crate::machine::{
    diff_state, ArchState, CommitValue, CrashReason, Machine, MachineLimits, Memory, StateDiff,
    StepCtx, StepOutcome,
};

use super::{
    CheckerStats, CoreActivity, CoreKind, DetectionCause, DetectionEvent, SchemeRunResult,
    SchemeStatus, SimError,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PardetParams {
    pub n_checkers: usize,
    pub segment_insns: u64,
    /// Checker commits per main-core cycle, in (0, 1].
    pub speed_ratio: f64,
    pub checkpoint_cost: u64,
    pub log_entries_per_segment: usize,
}

/// One entry of the load-store log: all memory traffic of the main core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub addr: u64,
    pub value: Word,
    pub is_load: bool,
}

/// A snapshot of architectural state delimiting a segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: ArchState,
    /// Dynamic instructions committed when the snapshot was taken.
    pub seq: u64,
    pub created_cycle: u64,
}

/// A finished segment as handed to a checker core.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub index: u64,
    pub start: Checkpoint,
    pub end: Checkpoint,
    pub log: Vec<LogEntry>,
}

impl Segment {
    pub fn insn_count(&self) -> u64 {
        self.end.seq - self.start.seq
    }
}

/// Divergence evidence from replaying one segment.
#[derive(Debug, Clone, PartialEq)]
pub enum SegmentMismatch {
    /// Replayed end state disagrees with the checkpointed one.
    State(Vec<StateDiff>),
    /// A replayed store disagrees with the logged one (or the counts differ).
    StoreDivergence { at: u64 },
    /// The checker issued more loads than the log holds.
    LogUnderrun,
    /// The replay crashed; the checkpointed path never did.
    ReplayCrash(CrashReason),
    /// The replay halted before reaching the segment's instruction count.
    EarlyHalt,
}

/// Re-executes a segment from its starting state and compares the result
/// against the checkpointed ending state and the logged memory traffic.
pub fn verify_segment(program: &Arc<Program>, segment: &Segment) -> Option<SegmentMismatch> {
    let mut checker = Machine::from_state(program.clone(), &segment.start.state);
    // The checker never touches live memory: loads come from the log and
    // stores are compare-only. A scratch image only provides bounds.
    let mut scratch = Memory::for_program(program, &MachineLimits::default())
        .expect("program validated by the main run");
    let mut loads = segment.log.iter().filter(|e| e.is_load);
    let mut stores = segment.log.iter().filter(|e| !e.is_load);

    for step_index in 0..segment.insn_count() {
        if checker.done() {
            return Some(SegmentMismatch::EarlyHalt);
        }
        let load_override = match checker.next_inst() {
            Some(Inst::Load { .. }) => match loads.next() {
                Some(entry) => Some(entry.value),
                None => return Some(SegmentMismatch::LogUnderrun),
            },
            _ => None,
        };
        let outcome = checker.step(
            // Replay timing is modeled arithmetically; the cycle stamp
            // is irrelevant here.
            segment.start.created_cycle + step_index + 1,
            &mut StepCtx { mem: &mut scratch, store_through: false, load_override },
        );
        match outcome {
            StepOutcome::Committed(rec) => {
                if let CommitValue::Store { addr, value } = rec.result {
                    match stores.next() {
                        Some(logged) if logged.addr == addr && logged.value == value => {}
                        _ => return Some(SegmentMismatch::StoreDivergence { at: step_index }),
                    }
                }
            }
            StepOutcome::Crashed(reason) => return Some(SegmentMismatch::ReplayCrash(reason)),
            StepOutcome::Halted => return Some(SegmentMismatch::EarlyHalt),
        }
    }
    if stores.next().is_some() {
        // The main core stored more often than the replay did.
        return Some(SegmentMismatch::StoreDivergence { at: segment.insn_count() });
    }
    let diffs = diff_state(&checker.arch_state(), &segment.end.state)
        .expect("checkpoints share the machine's register file size");
    if diffs.is_empty() {
        None
    } else {
        Some(SegmentMismatch::State(diffs))
    }
}

pub fn run_pardet(
    program: &Arc<Program>,
    limits: &MachineLimits,
    fault: Option<FaultSpec>,
    params: &PardetParams,
) -> Result<SchemeRunResult, SimError> {
    if params.n_checkers == 0 {
        return Err(SimError::BadConfig("at least one checker core is required".into()));
    }
    if params.segment_insns == 0 {
        return Err(SimError::BadConfig("segments must hold at least one instruction".into()));
    }
    if !(params.speed_ratio > 0.0 && params.speed_ratio <= 1.0) {
        return Err(SimError::BadConfig(format!(
            "checker speed ratio must lie in (0, 1], got {}",
            params.speed_ratio
        )));
    }
    if params.log_entries_per_segment == 0 {
        return Err(SimError::BadConfig("log segments must hold at least one entry".into()));
    }

    let mut mem = Memory::for_program(program, limits)?;
    let mut main = Machine::new(program.clone());
    if let Some(spec) = fault {
        main.attach_fault(spec)?;
    }

    let n = params.n_checkers;
    let mut checker_free_at = vec![0u64; n];
    let mut busy_cycles = vec![0u64; n];
    let mut checker_commits = vec![0u64; n];
    let mut busy_intervals: Vec<(u64, u64)> = Vec::new();
    let mut pending: Vec<DetectionEvent> = Vec::new();

    let mut seg_index = 0u64;
    let mut seg_start = Checkpoint { state: main.arch_state(), seq: 0, created_cycle: 0 };
    let mut seg_log: Vec<LogEntry> = Vec::new();
    let mut seg_commits = 0u64;
    let mut stall_until = 0u64;
    let mut now = 0u64;

    enum MainEnd {
        Halted(u64),
        Crashed(CrashReason, u64),
        TimedOut(u64),
    }

    let main_end = 'main: loop {
        if now >= limits.max_cycles {
            break MainEnd::TimedOut(now);
        }
        now += 1;
        main.begin_cycle(now);
        if now <= stall_until {
            continue;
        }
        match main.step(now, &mut StepCtx::direct(&mut mem)) {
            StepOutcome::Committed(rec) => {
                seg_commits += 1;
                match rec.result {
                    CommitValue::Load { addr, value } => {
                        seg_log.push(LogEntry { seq: rec.seq, addr, value, is_load: true });
                    }
                    CommitValue::Store { addr, value } => {
                        seg_log.push(LogEntry { seq: rec.seq, addr, value, is_load: false });
                    }
                    _ => {}
                }
                let halted = main.done();
                if halted
                    || seg_commits >= params.segment_insns
                    || seg_log.len() >= params.log_entries_per_segment
                {
                    // Close the segment: checkpoint, hand off, replay.
                    let boundary = now;
                    let end = Checkpoint {
                        state: main.observed_state(boundary),
                        seq: seg_start.seq + seg_commits,
                        created_cycle: boundary,
                    };
                    let segment = Segment {
                        index: seg_index,
                        start: seg_start.clone(),
                        end: end.clone(),
                        log: std::mem::take(&mut seg_log),
                    };
                    let checker = (seg_index % n as u64) as usize;
                    debug_assert!(
                        checker_free_at[checker] <= boundary,
                        "segment started before its checker freed"
                    );
                    let handoff = boundary + params.checkpoint_cost;
                    let replay_cycles =
                        (segment.insn_count() as f64 / params.speed_ratio).ceil() as u64;
                    let completion = handoff + replay_cycles;
                    checker_free_at[checker] = completion;
                    busy_cycles[checker] += replay_cycles;
                    checker_commits[checker] += segment.insn_count();
                    busy_intervals.push((handoff, completion));
                    if verify_segment(program, &segment).is_some() {
                        pending.push(DetectionEvent {
                            cycle: completion,
                            seq: seg_index,
                            cause: DetectionCause::StateMismatch,
                        });
                    }
                    if halted {
                        break 'main MainEnd::Halted(boundary);
                    }
                    seg_index += 1;
                    let next_checker = (seg_index % n as u64) as usize;
                    stall_until = handoff.max(checker_free_at[next_checker]);
                    seg_start = end;
                    seg_commits = 0;
                }
            }
            StepOutcome::Crashed(reason) => break MainEnd::Crashed(reason, now),
            StepOutcome::Halted => break MainEnd::Halted(now - 1),
        }
    };

    let segments_issued = busy_intervals.len() as u64;
    let first_detection = pending.iter().map(|e| e.cycle).min();
    let (status, end_cycle, program_cycles) = match main_end {
        MainEnd::Crashed(reason, at) => match first_detection {
            Some(d) if d <= at => (SchemeStatus::Detected, d, at.min(d)),
            _ => (SchemeStatus::Crashed(reason), at, at),
        },
        MainEnd::TimedOut(at) => match first_detection {
            Some(d) if d <= at => (SchemeStatus::Detected, d, at.min(d)),
            _ => (SchemeStatus::TimedOut, at, at),
        },
        MainEnd::Halted(at) => match first_detection {
            Some(d) => (SchemeStatus::Detected, d, at.min(d)),
            None => {
                // Remaining replays must pass before the run reports
                // completion; the run ends at the last verification.
                let tail = checker_free_at.iter().copied().max().unwrap_or(at);
                (SchemeStatus::Completed, at.max(tail), at)
            }
        },
    };
    let detections = match status {
        SchemeStatus::Detected => {
            let first = pending
                .iter()
                .copied()
                .min_by_key(|e| e.cycle)
                .expect("detected status implies a pending event");
            vec![first]
        }
        _ => Vec::new(),
    };

    let output = (status == SchemeStatus::Completed)
        .then(|| mem.region_bytes(program.output_region));
    let mut activity = vec![CoreActivity {
        kind: CoreKind::Main,
        active_cycles: program_cycles,
        commits: main.commits(),
        threads: 1,
    }];
    for c in 0..n {
        activity.push(CoreActivity {
            kind: CoreKind::Checker,
            active_cycles: busy_cycles[c],
            commits: checker_commits[c],
            threads: 1,
        });
    }

    Ok(SchemeRunResult {
        status,
        cycles: end_cycle,
        program_cycles,
        main_commits: main.commits(),
        output,
        detections,
        activity,
        first_manifest_cycle: main.fault().and_then(|f| f.first_manifest_cycle),
        slack: None,
        checker: Some(CheckerStats {
            segments: segments_issued,
            busy_cycles,
            max_concurrent: max_concurrent(&busy_intervals),
        }),
    })
}

fn max_concurrent(intervals: &[(u64, u64)]) -> u32 {
    let mut events: Vec<(u64, i32)> = Vec::with_capacity(intervals.len() * 2);
    for &(start, end) in intervals {
        events.push((start, 1));
        events.push((end, -1));
    }
    // Ends sort before starts at the same cycle: a checker freeing this
    // cycle is not concurrent with one starting now.
    events.sort_by_key(|&(cycle, delta)| (cycle, delta));
    let mut live = 0i32;
    let mut peak = 0i32;
    for (_, delta) in events {
        live += delta;
        peak = peak.max(live);
    }
    peak.max(0) as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;
    use crate::fault::{FaultKind, FaultSpec};
    use crate::machine;

    fn params() -> PardetParams {
        PardetParams {
            n_checkers: 3,
            segment_insns: 1000,
            speed_ratio: 0.25,
            checkpoint_cost: 32,
            log_entries_per_segment: 1024,
        }
    }

    /// Loop committing roughly `iters * 7` instructions with steady
    /// memory traffic.
    fn looping_program(iters: u64) -> Arc<Program> {
        let src = format!(
            "
                LOADI r1, 0
                LOADI r2, 100
                LOADI r3, 0
            loop:
                ADD r1, r1, 3
                STORE r1, r2, 0
                LOAD r4, r2, 0
                ADD r5, r4, r1
                ADD r3, r3, 1
                BLT r3, {iters}, loop
                HALT
                .output 100 1
            "
        );
        Arc::new(assemble(&src).unwrap())
    }

    #[test]
    fn fault_free_run_verifies_all_segments() {
        let p = looping_program(500);
        let run = run_pardet(&p, &MachineLimits::default(), None, &params()).unwrap();
        assert_eq!(run.status, SchemeStatus::Completed);
        assert!(run.detections.is_empty());
        let stats = run.checker.unwrap();
        assert!(stats.segments >= 3, "expected several segments, got {}", stats.segments);
        // The run is not complete until the last replay finished.
        assert!(run.cycles > run.program_cycles);
        let golden = machine::run(&p, &MachineLimits::default(), None, false).unwrap();
        assert_eq!(run.output, golden.output);
        assert_eq!(run.main_commits, golden.commits);
    }

    #[test]
    fn detection_latency_dominated_by_replay_speed() {
        // A flip in a dead register differs at the first segment
        // boundary; the checker needs segment_insns / speed_ratio cycles
        // to replay, so latency is at least that.
        let p = looping_program(500);
        let spec =
            FaultSpec { id: 0, kind: FaultKind::TransientFlip, reg: 20, bit: 7, inject_cycle: 400 };
        let run = run_pardet(&p, &MachineLimits::default(), Some(spec), &params()).unwrap();
        assert_eq!(run.status, SchemeStatus::Detected);
        let event = run.detections[0];
        assert_eq!(event.cause, DetectionCause::StateMismatch);
        let replay = (1000.0 / 0.25) as u64;
        assert!(
            event.cycle - spec.inject_cycle >= replay,
            "latency {} below replay floor {replay}",
            event.cycle - spec.inject_cycle
        );
    }

    #[test]
    fn dead_register_flip_is_overdetected() {
        // The same fault DMR masks (never read) is visible to
        // architectural state comparison.
        let p = looping_program(300);
        let spec =
            FaultSpec { id: 0, kind: FaultKind::TransientFlip, reg: 21, bit: 3, inject_cycle: 50 };
        let pardet = run_pardet(&p, &MachineLimits::default(), Some(spec), &params()).unwrap();
        assert_eq!(pardet.status, SchemeStatus::Detected);
        let dmr = super::super::dmr::run_dmr(&p, &MachineLimits::default(), Some(spec)).unwrap();
        assert_eq!(dmr.status, SchemeStatus::Completed);
        assert!(dmr.detections.is_empty());
    }

    #[test]
    fn flip_overwritten_within_segment_is_masked() {
        // r4 is rewritten every iteration by the LOAD; a flip in r4
        // right after its last read disappears before the boundary.
        let p = looping_program(300);
        // Cycle 8 is mid-iteration, right after `ADD r5, r4, r1` read r4.
        let spec =
            FaultSpec { id: 0, kind: FaultKind::TransientFlip, reg: 4, bit: 60, inject_cycle: 8 };
        let run = run_pardet(&p, &MachineLimits::default(), Some(spec), &params()).unwrap();
        assert_eq!(run.status, SchemeStatus::Completed, "{:?}", run.detections);
        let golden = machine::run(&p, &MachineLimits::default(), None, false).unwrap();
        assert_eq!(run.output, golden.output);
    }

    #[test]
    fn verify_segment_identity_and_single_divergence() {
        let p = looping_program(10);
        // Build a real segment by running the machine for a few commits.
        let limits = MachineLimits::default();
        let mut mem = Memory::for_program(&p, &limits).unwrap();
        let mut m = Machine::new(p.clone());
        let start = Checkpoint { state: m.arch_state(), seq: 0, created_cycle: 0 };
        let mut log = Vec::new();
        for now in 1..=20 {
            m.begin_cycle(now);
            if let StepOutcome::Committed(rec) = m.step(now, &mut StepCtx::direct(&mut mem)) {
                match rec.result {
                    CommitValue::Load { addr, value } => {
                        log.push(LogEntry { seq: rec.seq, addr, value, is_load: true })
                    }
                    CommitValue::Store { addr, value } => {
                        log.push(LogEntry { seq: rec.seq, addr, value, is_load: false })
                    }
                    _ => {}
                }
            }
        }
        let end = Checkpoint { state: m.arch_state(), seq: 20, created_cycle: 20 };
        let seg = Segment { index: 0, start, end, log };
        assert_eq!(verify_segment(&p, &seg), None);

        let mut tampered = seg.clone();
        tampered.end.state.regs[5] ^= 1;
        match verify_segment(&p, &tampered) {
            Some(SegmentMismatch::State(diffs)) => {
                assert_eq!(diffs.len(), 1);
                assert_eq!(diffs[0].index, 5);
            }
            other => panic!("expected state mismatch, got {other:?}"),
        }
    }

    #[test]
    fn log_underrun_is_a_mismatch() {
        let p = looping_program(10);
        let mut m = Machine::new(p.clone());
        let limits = MachineLimits::default();
        let mut mem = Memory::for_program(&p, &limits).unwrap();
        let start = Checkpoint { state: m.arch_state(), seq: 0, created_cycle: 0 };
        for now in 1..=10 {
            m.begin_cycle(now);
            m.step(now, &mut StepCtx::direct(&mut mem));
        }
        let end = Checkpoint { state: m.arch_state(), seq: 10, created_cycle: 10 };
        // Drop the log entirely: the replay's first load underruns.
        let seg = Segment { index: 0, start, end, log: Vec::new() };
        assert_eq!(verify_segment(&p, &seg), Some(SegmentMismatch::LogUnderrun));
    }

    #[test]
    fn full_log_segment_forces_early_boundary() {
        let p = looping_program(200);
        let mut small_log = params();
        small_log.log_entries_per_segment = 8;
        let run = run_pardet(&p, &MachineLimits::default(), None, &small_log).unwrap();
        assert_eq!(run.status, SchemeStatus::Completed);
        let stats = run.checker.unwrap();
        // ~2 log entries per 7-instruction iteration: boundaries arrive
        // long before the 1000-instruction segment limit.
        assert!(stats.segments > run.main_commits / 1000 + 1);
    }

    #[test]
    fn checkers_verify_in_parallel() {
        let p = looping_program(500);
        let mut small_segments = params();
        small_segments.segment_insns = 100;
        let run = run_pardet(&p, &MachineLimits::default(), None, &small_segments).unwrap();
        let stats = run.checker.unwrap();
        assert!(stats.max_concurrent >= 2, "max concurrent {}", stats.max_concurrent);
    }

    #[test]
    fn more_checkers_do_not_slow_the_main_core() {
        let p = looping_program(1500);
        let mut cycles = Vec::new();
        for n in [2usize, 3, 4, 6] {
            let mut cfg = params();
            cfg.n_checkers = n;
            let run = run_pardet(&p, &MachineLimits::default(), None, &cfg).unwrap();
            assert_eq!(run.status, SchemeStatus::Completed);
            cycles.push(run.program_cycles);
        }
        for pair in cycles.windows(2) {
            assert!(pair[1] <= pair[0], "slowdown increased across checker counts: {cycles:?}");
        }
        // With few checkers the main core must stall waiting for
        // verification; the floor is the unprotected run length.
        let golden = machine::run(&p, &MachineLimits::default(), None, false).unwrap();
        assert!(cycles[0] > golden.cycles);
        assert!(*cycles.last().unwrap() >= golden.cycles);
    }

    #[test]
    fn main_crash_before_verification_counts_as_crash() {
        // Corrupt the store pointer: the main core crashes quickly,
        // before the first segment's replay would have completed.
        let p = looping_program(500);
        let spec = FaultSpec { id: 0, kind: FaultKind::StuckAt1, reg: 2, bit: 62, inject_cycle: 5 };
        let run = run_pardet(&p, &MachineLimits::default(), Some(spec), &params()).unwrap();
        assert!(matches!(run.status, SchemeStatus::Crashed(_)), "{:?}", run.status);
        assert!(run.detections.is_empty());
    }

    #[test]
    fn max_concurrent_counts_overlaps() {
        assert_eq!(max_concurrent(&[(0, 10), (5, 15), (20, 30)]), 2);
        assert_eq!(max_concurrent(&[(0, 10), (10, 20)]), 1);
        assert_eq!(max_concurrent(&[]), 0);
    }
}
