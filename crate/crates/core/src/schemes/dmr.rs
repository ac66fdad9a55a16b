//! Spatial dual modular redundancy.
//!
//! Two identical cores execute the same instructions in strict cycle
//! lockstep and every commit is compared the cycle it retires, so a
//! corrupted architectural result can never reach program output: the
//! run halts at the first mismatch. Only the main core is
//! fault-injectable; the shadow core is fault-free and its stores are
//! compare-only, keeping the main core's memory image authoritative.

use std::sync::Arc;

use crate::fault::FaultSpec;
use crate::isa::Program;
use crate::machine::{Machine, MachineLimits, Memory, StepCtx, StepOutcome};

use super::{
    compare_commits, CoreActivity, CoreKind, DetectionCause, DetectionEvent, SchemeRunResult,
    SchemeStatus, SimError,
};

pub fn run_dmr(
    program: &Arc<Program>,
    limits: &MachineLimits,
    fault: Option<FaultSpec>,
) -> Result<SchemeRunResult, SimError> {
    let mut mem = Memory::for_program(program, limits)?;
    let mut main = Machine::new(program.clone());
    let mut shadow = Machine::new(program.clone());
    if let Some(spec) = fault {
        main.attach_fault(spec)?;
    }

    let mut detections = Vec::new();
    let mut now = 0u64;
    let status = loop {
        if main.done() && shadow.done() {
            break SchemeStatus::Completed;
        }
        if now >= limits.max_cycles {
            break SchemeStatus::TimedOut;
        }
        now += 1;
        main.begin_cycle(now);
        let main_out = main.step(now, &mut StepCtx::direct(&mut mem));
        let shadow_out = shadow.step(
            now,
            &mut StepCtx { mem: &mut mem, store_through: false, load_override: None },
        );
        match (main_out, shadow_out) {
            (StepOutcome::Committed(a), StepOutcome::Committed(b)) => {
                if let Some(mismatch) = compare_commits(&a, &b)? {
                    detections.push(DetectionEvent {
                        cycle: now,
                        seq: mismatch.seq,
                        cause: DetectionCause::ResultMismatch,
                    });
                    break SchemeStatus::Detected;
                }
            }
            (StepOutcome::Crashed(reason), _) | (_, StepOutcome::Crashed(reason)) => {
                break SchemeStatus::Crashed(reason);
            }
            (StepOutcome::Halted, StepOutcome::Halted) => {
                now -= 1;
                break SchemeStatus::Completed;
            }
            (a, b) => {
                // Divergent halt without a preceding mismatch breaks lockstep.
                return Err(SimError::Invariant(format!(
                    "lockstep desync at cycle {now}: main {a:?}, shadow {b:?}"
                )));
            }
        }
        debug_assert_eq!(main.commits(), shadow.commits());
    };

    let output = (status == SchemeStatus::Completed)
        .then(|| mem.region_bytes(program.output_region));
    let commits = main.commits();
    Ok(SchemeRunResult {
        status,
        cycles: now,
        program_cycles: now,
        main_commits: commits,
        output,
        detections,
        activity: vec![
            CoreActivity { kind: CoreKind::Main, active_cycles: now, commits, threads: 1 },
            CoreActivity {
                kind: CoreKind::Main,
                active_cycles: now,
                commits: shadow.commits(),
                threads: 1,
            },
        ],
        first_manifest_cycle: main.fault().and_then(|f| f.first_manifest_cycle),
        slack: None,
        checker: None,
    })
}
