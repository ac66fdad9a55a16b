//! Cycle-stepped execution engine.
//!
//! The timing model is a 1-cycle in-order scalar commit: each hardware
//! thread commits at most one instruction per cycle, and every
//! instruction takes exactly one cycle. Timeline cycles are numbered
//! from 1; the first committed instruction carries commit cycle 1.
//!
//! Machines do not own the cycle counter. A driver owns the timeline and
//! passes the current cycle into [`Machine::begin_cycle`] /
//! [`Machine::step`], which lets several machines (lockstep cores, SMT
//! threads, checker cores) share one clock while stepping at different
//! rates. All register reads pass through the machine's fault hook, so
//! stuck-at forcing and transient flips are visible to whichever scheme
//! drives the machine.
//!
//! Crash channels are out-of-bounds memory accesses, unsigned division
//! by zero and a program counter leaving the program. Falling off the
//! end of the program is a clean halt.

use std::sync::Arc;

use thiserror::Error;

use crate::fault::{FaultError, FaultKind, FaultSpec, FaultState};
use crate::isa::{AluOp, BranchCond, Inst, Operand, OutputRegion, Program, Word};

/// Hard resource limits for one run.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MachineLimits {
    pub max_cycles: u64,
    pub memory_words: u64,
    /// A run is declared hung once it exceeds this multiple of the
    /// golden run length. Must be greater than 1.
    pub hang_multiplier: f64,
}

impl Default for MachineLimits {
    fn default() -> Self {
        MachineLimits { max_cycles: 2_000_000, memory_words: 4096, hang_multiplier: 3.0 }
    }
}

impl MachineLimits {
    pub fn validate(&self) -> Result<(), SetupError> {
        if self.hang_multiplier <= 1.0 {
            return Err(SetupError::BadHangMultiplier(self.hang_multiplier));
        }
        if self.memory_words == 0 {
            return Err(SetupError::NoMemory);
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SetupError {
    #[error("hang multiplier must be > 1, got {0}")]
    BadHangMultiplier(f64),
    #[error("memory size must be non-zero")]
    NoMemory,
    #[error("output region [{start}, {end}) exceeds memory size {memory_words}")]
    OutputRegionOutOfBounds { start: u64, end: u64, memory_words: u64 },
    #[error("data initializer at address {addr} exceeds memory size {memory_words}")]
    DataInitOutOfBounds { addr: u64, memory_words: u64 },
    #[error(transparent)]
    Fault(#[from] FaultError),
}

/// Why a machine crashed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CrashReason {
    OutOfBoundsLoad { addr: u64 },
    OutOfBoundsStore { addr: u64 },
    DivideByZero,
    InvalidJump { pc: usize },
}

impl std::fmt::Display for CrashReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CrashReason::OutOfBoundsLoad { addr } => write!(f, "out-of-bounds load at {addr}"),
            CrashReason::OutOfBoundsStore { addr } => write!(f, "out-of-bounds store at {addr}"),
            CrashReason::DivideByZero => write!(f, "division by zero"),
            CrashReason::InvalidJump { pc } => write!(f, "program counter left program at {pc}"),
        }
    }
}

/// Committed result of one instruction. This is the unit the
/// result-comparing schemes validate: ALU and immediate loads record the
/// destination value, memory operations record effective address and
/// value, control flow records direction and target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommitValue {
    Write(Word),
    Load { addr: u64, value: Word },
    Store { addr: u64, value: Word },
    Branch { taken: bool, target: usize },
    Halt,
}

/// One retired instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommitRecord {
    /// Dynamic sequence number, per hardware thread, from 0.
    pub seq: u64,
    /// Index of the instruction in the program.
    pub static_index: usize,
    pub result: CommitValue,
    /// Commit cycle on the driving timeline.
    pub cycle: u64,
}

/// Architectural state: program counter plus register file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchState {
    pub pc: usize,
    pub regs: Vec<Word>,
}

/// One differing slot between two architectural states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateDiff {
    /// Register index, or `regs.len()` for the program counter.
    pub index: usize,
    pub a: Word,
    pub b: Word,
}

#[derive(Debug, Error, PartialEq)]
#[error("register file sizes differ: {a} vs {b}")]
pub struct StateSizeMismatch {
    pub a: usize,
    pub b: usize,
}

/// Registers (and pc, encoded as index `regs.len()`) on which two states
/// disagree. Empty exactly when the states are identical.
pub fn diff_state(a: &ArchState, b: &ArchState) -> Result<Vec<StateDiff>, StateSizeMismatch> {
    if a.regs.len() != b.regs.len() {
        return Err(StateSizeMismatch { a: a.regs.len(), b: b.regs.len() });
    }
    let mut diffs = Vec::new();
    for (i, (&va, &vb)) in a.regs.iter().zip(&b.regs).enumerate() {
        if va != vb {
            diffs.push(StateDiff { index: i, a: va, b: vb });
        }
    }
    if a.pc != b.pc {
        diffs.push(StateDiff { index: a.regs.len(), a: a.pc as Word, b: b.pc as Word });
    }
    Ok(diffs)
}

/// Word-addressed memory image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Memory {
    words: Vec<Word>,
}

impl Memory {
    /// Builds the initial memory image for a program, validating that
    /// the data image and output region fit.
    pub fn for_program(program: &Program, limits: &MachineLimits) -> Result<Memory, SetupError> {
        limits.validate()?;
        let n = limits.memory_words;
        let region = program.output_region;
        if region.len > 0 && region.end() > n {
            return Err(SetupError::OutputRegionOutOfBounds {
                start: region.start,
                end: region.end(),
                memory_words: n,
            });
        }
        let mut words = vec![0; n as usize];
        for (&addr, &value) in &program.data_init {
            if addr >= n {
                return Err(SetupError::DataInitOutOfBounds { addr, memory_words: n });
            }
            words[addr as usize] = value;
        }
        Ok(Memory { words })
    }

    pub fn len(&self) -> u64 {
        self.words.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn read(&self, addr: u64) -> Result<Word, CrashReason> {
        self.words.get(addr as usize).copied().ok_or(CrashReason::OutOfBoundsLoad { addr })
    }

    pub fn write(&mut self, addr: u64, value: Word) -> Result<(), CrashReason> {
        match self.words.get_mut(addr as usize) {
            Some(slot) => {
                *slot = value;
                Ok(())
            }
            None => Err(CrashReason::OutOfBoundsStore { addr }),
        }
    }

    /// Little-endian bytes of an output region.
    pub fn region_bytes(&self, region: OutputRegion) -> Vec<u8> {
        let start = region.start as usize;
        let end = region.end() as usize;
        self.words[start..end].iter().flat_map(|w| w.to_le_bytes()).collect()
    }
}

/// How one step interacts with memory. Shadow and redundant threads run
/// with `store_through` off so the main core's image stays
/// authoritative; replay threads supply load values out of a log or the
/// primary's commit records via `load_override`.
pub struct StepCtx<'m> {
    pub mem: &'m mut Memory,
    pub store_through: bool,
    pub load_override: Option<Word>,
}

impl<'m> StepCtx<'m> {
    pub fn direct(mem: &'m mut Memory) -> Self {
        StepCtx { mem, store_through: true, load_override: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Committed(CommitRecord),
    Crashed(CrashReason),
    /// The machine had already halted (or fell off the end of the
    /// program); no cycle was consumed.
    Halted,
}

/// Final status of a complete run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum RunStatus {
    Halted,
    Crashed(CrashReason),
    TimedOut,
}

/// Result of driving one machine to completion.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub status: RunStatus,
    pub cycles: u64,
    pub commits: u64,
    /// Output-region bytes; populated exactly when the run halted.
    pub output: Option<Vec<u8>>,
    pub trace: Option<Vec<CommitRecord>>,
}

impl RunResult {
    pub fn ipc(&self) -> Option<f64> {
        (self.cycles > 0).then(|| self.commits as f64 / self.cycles as f64)
    }
}

/// One in-order scalar hardware thread: program counter, register file
/// and an optional attached fault. Memory lives outside the machine and
/// is passed into each step, so independent machines can share an image.
#[derive(Debug, Clone)]
pub struct Machine {
    program: Arc<Program>,
    pc: usize,
    regs: Vec<Word>,
    seq: u64,
    halted: bool,
    started: bool,
    fault: Option<FaultState>,
}

impl Machine {
    pub fn new(program: Arc<Program>) -> Machine {
        let regs = vec![0; program.reg_count];
        Machine { program, pc: 0, regs, seq: 0, halted: false, started: false, fault: None }
    }

    /// Starts a machine from a captured architectural state (checker
    /// cores replaying a segment).
    pub fn from_state(program: Arc<Program>, state: &ArchState) -> Machine {
        Machine {
            program,
            pc: state.pc,
            regs: state.regs.clone(),
            seq: 0,
            halted: false,
            started: false,
            fault: None,
        }
    }

    pub fn program(&self) -> &Arc<Program> {
        &self.program
    }

    /// Installs the fault hook. Must happen before the machine executes
    /// its first cycle.
    pub fn attach_fault(&mut self, spec: FaultSpec) -> Result<(), FaultError> {
        if self.started {
            return Err(FaultError::MachineAlreadyStarted);
        }
        if (spec.reg as usize) >= self.program.reg_count {
            return Err(FaultError::RegisterOutOfRange {
                reg: spec.reg,
                reg_count: self.program.reg_count,
            });
        }
        if spec.bit >= 64 {
            return Err(FaultError::BitOutOfRange { bit: spec.bit });
        }
        self.fault = Some(FaultState::new(spec));
        Ok(())
    }

    pub fn fault(&self) -> Option<&FaultState> {
        self.fault.as_ref()
    }

    /// True when the machine can no longer commit: it executed HALT or
    /// ran off the end of the program.
    pub fn done(&self) -> bool {
        self.halted || self.pc >= self.program.insts.len()
    }

    pub fn commits(&self) -> u64 {
        self.seq
    }

    /// Instruction the machine will execute next, if any.
    pub fn next_inst(&self) -> Option<Inst> {
        if self.halted {
            None
        } else {
            self.program.insts.get(self.pc).copied()
        }
    }

    /// Raw architectural state (stored register values).
    pub fn arch_state(&self) -> ArchState {
        ArchState { pc: self.pc, regs: self.regs.clone() }
    }

    /// Architectural state as reads observe it at `cycle`: a live
    /// stuck-at fault forces its bit in the copied value. Checkpointing
    /// copies the register file through its read ports, so it sees the
    /// same forced values instructions do.
    pub fn observed_state(&self, cycle: u64) -> ArchState {
        let mut state = self.arch_state();
        if let Some(f) = &self.fault {
            state.regs[f.spec.reg as usize] = f.apply_read(state.regs[f.spec.reg as usize], cycle);
        }
        state
    }

    /// Clock-edge housekeeping for cycle `now`. A due transient fires
    /// here: the stored bit is XOR-flipped exactly once, whether or not
    /// the thread commits this cycle.
    pub fn begin_cycle(&mut self, now: u64) {
        self.started = true;
        if let Some(f) = &mut self.fault {
            if f.spec.kind == FaultKind::TransientFlip && !f.fired && now >= f.spec.inject_cycle {
                let reg = f.spec.reg as usize;
                f.original = Some(self.regs[reg]);
                self.regs[reg] ^= 1 << f.spec.bit;
                f.fired = true;
                f.flip_live = true;
            }
        }
    }

    fn read_reg(&mut self, r: u8, now: u64) -> Word {
        let stored = self.regs[r as usize];
        if let Some(f) = &mut self.fault {
            if f.spec.reg == r && now >= f.spec.inject_cycle {
                let seen = f.apply_read(stored, now);
                let corrupted = seen != stored || f.flip_live;
                if corrupted {
                    if f.first_manifest_cycle.is_none() {
                        f.first_manifest_cycle = Some(now);
                    }
                    if f.original.is_none() {
                        f.original = Some(stored);
                    }
                }
                return seen;
            }
        }
        stored
    }

    fn write_reg(&mut self, r: u8, value: Word) {
        self.regs[r as usize] = value;
        if let Some(f) = &mut self.fault {
            if f.spec.reg == r {
                // Overwriting the register extinguishes a live flip.
                f.flip_live = false;
            }
        }
    }

    fn operand(&mut self, op: Operand, now: u64) -> Word {
        match op {
            Operand::Reg(r) => self.read_reg(r, now),
            Operand::Imm(v) => v as Word,
        }
    }

    /// Executes exactly one instruction at timeline cycle `now`.
    pub fn step(&mut self, now: u64, ctx: &mut StepCtx) -> StepOutcome {
        self.started = true;
        if self.done() {
            self.halted = true;
            return StepOutcome::Halted;
        }
        let static_index = self.pc;
        let inst = self.program.insts[static_index];
        let result = match inst {
            Inst::Alu { op, dst, src1, src2 } => {
                let a = self.read_reg(src1, now);
                let b = self.operand(src2, now);
                let value = match op {
                    AluOp::Add => a.wrapping_add(b),
                    AluOp::Sub => a.wrapping_sub(b),
                    AluOp::Mul => a.wrapping_mul(b),
                    AluOp::Divu => {
                        if b == 0 {
                            return StepOutcome::Crashed(CrashReason::DivideByZero);
                        }
                        a / b
                    }
                    AluOp::And => a & b,
                    AluOp::Or => a | b,
                    AluOp::Xor => a ^ b,
                    AluOp::Shl => a << (b & 63),
                    AluOp::Shr => a >> (b & 63),
                };
                self.write_reg(dst, value);
                self.pc += 1;
                CommitValue::Write(value)
            }
            Inst::Loadi { dst, imm } => {
                let value = imm as Word;
                self.write_reg(dst, value);
                self.pc += 1;
                CommitValue::Write(value)
            }
            Inst::Load { dst, base, offset } => {
                let addr = self.read_reg(base, now).wrapping_add(offset as Word);
                let value = match ctx.load_override {
                    Some(v) => v,
                    None => match ctx.mem.read(addr) {
                        Ok(v) => v,
                        Err(reason) => return StepOutcome::Crashed(reason),
                    },
                };
                self.write_reg(dst, value);
                self.pc += 1;
                CommitValue::Load { addr, value }
            }
            Inst::Store { src, base, offset } => {
                let addr = self.read_reg(base, now).wrapping_add(offset as Word);
                let value = self.read_reg(src, now);
                if addr >= ctx.mem.len() {
                    return StepOutcome::Crashed(CrashReason::OutOfBoundsStore { addr });
                }
                if ctx.store_through {
                    ctx.mem.write(addr, value).expect("bounds checked above");
                }
                self.pc += 1;
                CommitValue::Store { addr, value }
            }
            Inst::Branch { cond, src1, src2, target } => {
                let a = self.read_reg(src1, now);
                let b = self.operand(src2, now);
                let taken = match cond {
                    BranchCond::Eq => a == b,
                    BranchCond::Ne => a != b,
                    BranchCond::Lt => (a as i64) < (b as i64),
                };
                if taken {
                    if target > self.program.insts.len() {
                        return StepOutcome::Crashed(CrashReason::InvalidJump { pc: target });
                    }
                    self.pc = target;
                } else {
                    self.pc += 1;
                }
                CommitValue::Branch { taken, target }
            }
            Inst::Jump { target } => {
                if target > self.program.insts.len() {
                    return StepOutcome::Crashed(CrashReason::InvalidJump { pc: target });
                }
                self.pc = target;
                CommitValue::Branch { taken: true, target }
            }
            Inst::Halt => {
                self.halted = true;
                CommitValue::Halt
            }
        };
        let record = CommitRecord { seq: self.seq, static_index, result, cycle: now };
        self.seq += 1;
        StepOutcome::Committed(record)
    }
}

/// Drives one machine to completion: the fault-free form of this is the
/// golden-run baseline every classification compares against.
pub fn run(
    program: &Arc<Program>,
    limits: &MachineLimits,
    fault: Option<FaultSpec>,
    want_trace: bool,
) -> Result<RunResult, SetupError> {
    let mut mem = Memory::for_program(program, limits)?;
    let mut machine = Machine::new(program.clone());
    if let Some(spec) = fault {
        machine.attach_fault(spec)?;
    }
    let mut trace = want_trace.then(Vec::new);
    let mut commits = 0u64;
    let mut now = 0u64;
    let (status, cycles) = loop {
        if machine.done() {
            break (RunStatus::Halted, now);
        }
        if now >= limits.max_cycles {
            break (RunStatus::TimedOut, now);
        }
        now += 1;
        machine.begin_cycle(now);
        match machine.step(now, &mut StepCtx::direct(&mut mem)) {
            StepOutcome::Committed(record) => {
                commits += 1;
                if let Some(t) = &mut trace {
                    t.push(record);
                }
            }
            StepOutcome::Crashed(reason) => break (RunStatus::Crashed(reason), now),
            StepOutcome::Halted => break (RunStatus::Halted, now - 1),
        }
    };
    let output =
        (status == RunStatus::Halted).then(|| mem.region_bytes(program.output_region));
    Ok(RunResult { status, cycles, commits, output, trace })
}
