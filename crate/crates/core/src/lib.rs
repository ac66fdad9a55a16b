//! Desk-scale simulator and fault-injection harness for hardware
//! error-detection schemes.
//!
//! A deterministic 17-opcode toy ISA and cycle-stepped scalar engine
//! carry three detectors — spatial dual modular redundancy, redundant
//! SMT with a bounded comparison buffer, and parallel error detection on
//! slow checker cores — plus an unprotected baseline. Statistical
//! fault-injection campaigns replay identical single-bit register faults
//! under every scheme and evaluate detection efficiency, detection
//! latency, performance, area and power.

pub mod asm;
pub mod campaign;
pub mod fault;
pub mod isa;
pub mod machine;
pub mod metrics;
pub mod report;
pub mod schemes;

pub use asm::{assemble, assemble_with_regs, AsmError};
pub use fault::{
    margin_of_error, plan_campaign, CampaignPlan, FaultKind, FaultSpec, InjectTimeParams,
};
pub use isa::{Inst, Program, Word};
pub use machine::{
    diff_state, run, ArchState, CommitRecord, CommitValue, CrashReason, Machine, MachineLimits,
    Memory, RunResult, RunStatus, StepCtx, StepOutcome,
};
pub use metrics::{
    aggregate, area_overhead, classify, latency_stats, power_overhead, EfficiencyBreakdown,
    LatencyStats, Outcome, OutcomeClass, PowerParams,
};
pub use schemes::{
    compare_commits, run_scheme, DetectionEvent, SchemeConfig, SchemeRunResult, SchemeStatus,
    SimError,
};
