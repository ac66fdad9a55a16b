//! Instruction set and program representation.
//!
//! The ISA is a small 17-opcode, 64-bit register machine: nine ALU
//! operations, immediate/memory moves, three conditional branches, an
//! unconditional jump and HALT. Memory is word-addressed. Programs carry
//! their initial data image and an output region whose final contents
//! define the program result.

use std::collections::BTreeMap;
use std::fmt;

/// Machine word. Registers and memory cells are 64 bits wide.
pub type Word = u64;

/// Default register-file size used by the assembler and campaign planner.
pub const DEFAULT_REG_COUNT: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AluOp {
    Add,
    Sub,
    Mul,
    /// Unsigned division. A zero divisor crashes the machine.
    Divu,
    And,
    Or,
    Xor,
    /// Logical shift left; shift amount is taken modulo 64.
    Shl,
    /// Logical shift right; shift amount is taken modulo 64.
    Shr,
}

impl AluOp {
    pub fn mnemonic(self) -> &'static str {
        match self {
            AluOp::Add => "ADD",
            AluOp::Sub => "SUB",
            AluOp::Mul => "MUL",
            AluOp::Divu => "DIVU",
            AluOp::And => "AND",
            AluOp::Or => "OR",
            AluOp::Xor => "XOR",
            AluOp::Shl => "SHL",
            AluOp::Shr => "SHR",
        }
    }
}

/// Second source of ALU and branch instructions: register or immediate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operand {
    Reg(u8),
    Imm(i64),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => write!(f, "r{r}"),
            Operand::Imm(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchCond {
    /// Equal (bitwise).
    Eq,
    /// Not equal (bitwise).
    Ne,
    /// Signed less-than.
    Lt,
}

impl BranchCond {
    pub fn mnemonic(self) -> &'static str {
        match self {
            BranchCond::Eq => "BEQ",
            BranchCond::Ne => "BNE",
            BranchCond::Lt => "BLT",
        }
    }
}

/// One decoded instruction. Branch and jump targets are instruction
/// indices, resolved by the assembler; they always lie in
/// `[0, program length]` (an index equal to the program length falls off
/// the end and halts).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Inst {
    Alu { op: AluOp, dst: u8, src1: u8, src2: Operand },
    /// `dst = imm`
    Loadi { dst: u8, imm: i64 },
    /// `dst = mem[base + offset]`
    Load { dst: u8, base: u8, offset: i64 },
    /// `mem[base + offset] = src`
    Store { src: u8, base: u8, offset: i64 },
    Branch { cond: BranchCond, src1: u8, src2: Operand, target: usize },
    Jump { target: usize },
    Halt,
}

impl fmt::Display for Inst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Inst::Alu { op, dst, src1, src2 } => {
                write!(f, "{} r{}, r{}, {}", op.mnemonic(), dst, src1, src2)
            }
            Inst::Loadi { dst, imm } => write!(f, "LOADI r{dst}, {imm}"),
            Inst::Load { dst, base, offset } => write!(f, "LOAD r{dst}, r{base}, {offset}"),
            Inst::Store { src, base, offset } => write!(f, "STORE r{src}, r{base}, {offset}"),
            Inst::Branch { cond, src1, src2, target } => {
                write!(f, "{} r{}, {}, @{}", cond.mnemonic(), src1, src2, target)
            }
            Inst::Jump { target } => write!(f, "JUMP @{target}"),
            Inst::Halt => write!(f, "HALT"),
        }
    }
}

/// Word range in memory whose final contents are the program output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OutputRegion {
    pub start: u64,
    pub len: u64,
}

impl OutputRegion {
    pub fn end(&self) -> u64 {
        self.start + self.len
    }
}

/// An assembled program: instructions, initial memory image, output
/// region and the register universe it was assembled against.
///
/// Programs are immutable once assembled; execution is deterministic, so
/// two fault-free runs of the same program produce identical traces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub insts: Vec<Inst>,
    pub data_init: BTreeMap<u64, Word>,
    pub output_region: OutputRegion,
    pub reg_count: usize,
}

impl Program {
    pub fn len(&self) -> usize {
        self.insts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.insts.is_empty()
    }
}
