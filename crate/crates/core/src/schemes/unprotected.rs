//! Baseline without any detector: one core, no comparison.

use std::sync::Arc;

use crate::fault::FaultSpec;
use crate::isa::Program;
use crate::machine::{self, MachineLimits, RunStatus};

use super::{CoreActivity, CoreKind, SchemeRunResult, SchemeStatus, SimError};

pub fn run_unprotected(
    program: &Arc<Program>,
    limits: &MachineLimits,
    fault: Option<FaultSpec>,
) -> Result<SchemeRunResult, SimError> {
    let mut mem = machine::Memory::for_program(program, limits)?;
    let mut m = machine::Machine::new(program.clone());
    if let Some(spec) = fault {
        m.attach_fault(spec)?;
    }
    let mut now = 0u64;
    let status = loop {
        if m.done() {
            break SchemeStatus::Completed;
        }
        if now >= limits.max_cycles {
            break SchemeStatus::TimedOut;
        }
        now += 1;
        m.begin_cycle(now);
        match m.step(now, &mut machine::StepCtx::direct(&mut mem)) {
            machine::StepOutcome::Committed(_) => {}
            machine::StepOutcome::Crashed(reason) => break SchemeStatus::Crashed(reason),
            machine::StepOutcome::Halted => {
                now -= 1;
                break SchemeStatus::Completed;
            }
        }
    };
    let output = (status == SchemeStatus::Completed)
        .then(|| mem.region_bytes(program.output_region));
    Ok(SchemeRunResult {
        status,
        cycles: now,
        program_cycles: now,
        main_commits: m.commits(),
        output,
        detections: Vec::new(),
        activity: vec![CoreActivity {
            kind: CoreKind::Main,
            active_cycles: now,
            commits: m.commits(),
            threads: 1,
        }],
        first_manifest_cycle: m.fault().and_then(|f| f.first_manifest_cycle),
        slack: None,
        checker: None,
    })
}

/// Converts a plain [`machine::RunResult`] status into the scheme vocabulary.
pub fn status_of(run: &machine::RunResult) -> SchemeStatus {
    match run.status {
        RunStatus::Halted => SchemeStatus::Completed,
        RunStatus::Crashed(r) => SchemeStatus::Crashed(r),
        RunStatus::TimedOut => SchemeStatus::TimedOut,
    }
}
