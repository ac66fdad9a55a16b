//! Two-pass assembler for the toy ISA.
//!
//! Grammar, one statement per line:
//!
//! ```text
//! # comment to end of line
//! label:                  # labels may precede a statement on the same line
//!     LOADI r1, 5
//!     ADD   r2, r1, r1    # ALU src2 may be a register or an immediate
//!     LOAD  r3, r1, 8     # r3 = mem[r1 + 8]; offset defaults to 0
//!     STORE r3, r1, 8     # mem[r1 + 8] = r3
//!     BEQ   r1, r2, loop  # branch targets are labels or instruction indices
//!     JUMP  done
//!     HALT
//! .data 100 1 2 0xff      # memory words starting at address 100
//! .output 100 3           # output region: start, length (words)
//! ```
//!
//! Numbers are decimal or `0x` hex, optionally negative, with `_`
//! separators allowed. Register names are `r0` through `r{R-1}`.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::isa::{
    AluOp, BranchCond, Inst, Operand, OutputRegion, Program, Word, DEFAULT_REG_COUNT,
};

#[derive(Debug, Error, PartialEq)]
pub enum AsmError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: register r{reg} out of range (register file has {limit} registers)")]
    RegisterOutOfRange { line: usize, reg: u64, limit: usize },
    #[error("line {line}: undefined label '{label}'")]
    UndefinedLabel { line: usize, label: String },
}

fn syntax(line: usize, msg: impl Into<String>) -> AsmError {
    AsmError::Syntax { line, msg: msg.into() }
}

/// Branch/jump target before label resolution.
#[derive(Debug, Clone)]
enum RawTarget {
    Label(String),
    Index(usize),
}

#[derive(Debug, Clone)]
enum RawInst {
    Alu { op: AluOp, dst: u8, src1: u8, src2: Operand },
    Loadi { dst: u8, imm: i64 },
    Load { dst: u8, base: u8, offset: i64 },
    Store { src: u8, base: u8, offset: i64 },
    Branch { cond: BranchCond, src1: u8, src2: Operand, target: RawTarget },
    Jump { target: RawTarget },
    Halt,
}

/// Assembles with the default 32-register file.
pub fn assemble(source: &str) -> Result<Program, AsmError> {
    assemble_with_regs(source, DEFAULT_REG_COUNT)
}

pub fn assemble_with_regs(source: &str, reg_count: usize) -> Result<Program, AsmError> {
    Assembler { reg_count }.assemble(source)
}

struct Assembler {
    reg_count: usize,
}

impl Assembler {
    fn assemble(&self, source: &str) -> Result<Program, AsmError> {
        let mut labels: BTreeMap<String, usize> = BTreeMap::new();
        let mut raw: Vec<(usize, RawInst)> = Vec::new();
        let mut data_init: BTreeMap<u64, Word> = BTreeMap::new();
        let mut output_region: Option<OutputRegion> = None;

        for (idx, full_line) in source.lines().enumerate() {
            let line_no = idx + 1;
            let mut text = match full_line.find('#') {
                Some(pos) => &full_line[..pos],
                None => full_line,
            }
            .trim();

            // Peel any leading labels off the statement.
            while let Some(pos) = text.find(':') {
                let candidate = text[..pos].trim();
                if !is_identifier(candidate) {
                    break;
                }
                if labels.insert(candidate.to_string(), raw.len()).is_some() {
                    return Err(syntax(line_no, format!("duplicate label '{candidate}'")));
                }
                text = text[pos + 1..].trim();
            }
            if text.is_empty() {
                continue;
            }

            if let Some(rest) = text.strip_prefix(".data") {
                let nums = self.number_list(line_no, rest)?;
                if nums.len() < 2 {
                    return Err(syntax(line_no, ".data needs an address and at least one value"));
                }
                let base = nums[0] as u64;
                for (i, &v) in nums[1..].iter().enumerate() {
                    data_init.insert(base + i as u64, v as Word);
                }
                continue;
            }
            if let Some(rest) = text.strip_prefix(".output") {
                let nums = self.number_list(line_no, rest)?;
                if nums.len() != 2 {
                    return Err(syntax(line_no, ".output takes exactly start and length"));
                }
                if output_region.is_some() {
                    return Err(syntax(line_no, "duplicate .output directive"));
                }
                output_region = Some(OutputRegion { start: nums[0] as u64, len: nums[1] as u64 });
                continue;
            }
            if text.starts_with('.') {
                return Err(syntax(line_no, format!("unknown directive '{text}'")));
            }

            raw.push((line_no, self.parse_inst(line_no, text)?));
        }

        let len = raw.len();
        let resolve = |line: usize, target: &RawTarget| -> Result<usize, AsmError> {
            let index = match target {
                RawTarget::Label(name) => *labels
                    .get(name)
                    .ok_or_else(|| AsmError::UndefinedLabel { line, label: name.clone() })?,
                RawTarget::Index(i) => *i,
            };
            if index > len {
                return Err(syntax(line, format!("target {index} outside program of length {len}")));
            }
            Ok(index)
        };

        let mut insts = Vec::with_capacity(len);
        for (line, r) in &raw {
            let inst = match r {
                RawInst::Alu { op, dst, src1, src2 } => {
                    Inst::Alu { op: *op, dst: *dst, src1: *src1, src2: *src2 }
                }
                RawInst::Loadi { dst, imm } => Inst::Loadi { dst: *dst, imm: *imm },
                RawInst::Load { dst, base, offset } => {
                    Inst::Load { dst: *dst, base: *base, offset: *offset }
                }
                RawInst::Store { src, base, offset } => {
                    Inst::Store { src: *src, base: *base, offset: *offset }
                }
                RawInst::Branch { cond, src1, src2, target } => Inst::Branch {
                    cond: *cond,
                    src1: *src1,
                    src2: *src2,
                    target: resolve(*line, target)?,
                },
                RawInst::Jump { target } => Inst::Jump { target: resolve(*line, target)? },
                RawInst::Halt => Inst::Halt,
            };
            insts.push(inst);
        }

        Ok(Program {
            insts,
            data_init,
            output_region: output_region.unwrap_or_default(),
            reg_count: self.reg_count,
        })
    }

    fn parse_inst(&self, line: usize, text: &str) -> Result<RawInst, AsmError> {
        let (op, rest) = match text.find(char::is_whitespace) {
            Some(pos) => (&text[..pos], text[pos..].trim()),
            None => (text, ""),
        };
        let args: Vec<&str> = if rest.is_empty() {
            Vec::new()
        } else {
            rest.split(',').map(str::trim).collect()
        };
        let opcode = op.to_ascii_uppercase();

        let alu = |aop: AluOp| -> Result<RawInst, AsmError> {
            self.expect_args(line, &opcode, &args, 3)?;
            Ok(RawInst::Alu {
                op: aop,
                dst: self.reg(line, args[0])?,
                src1: self.reg(line, args[1])?,
                src2: self.operand(line, args[2])?,
            })
        };
        let branch = |cond: BranchCond| -> Result<RawInst, AsmError> {
            self.expect_args(line, &opcode, &args, 3)?;
            Ok(RawInst::Branch {
                cond,
                src1: self.reg(line, args[0])?,
                src2: self.operand(line, args[1])?,
                target: self.target(line, args[2])?,
            })
        };

        match opcode.as_str() {
            "ADD" => alu(AluOp::Add),
            "SUB" => alu(AluOp::Sub),
            "MUL" => alu(AluOp::Mul),
            "DIVU" => alu(AluOp::Divu),
            "AND" => alu(AluOp::And),
            "OR" => alu(AluOp::Or),
            "XOR" => alu(AluOp::Xor),
            "SHL" => alu(AluOp::Shl),
            "SHR" => alu(AluOp::Shr),
            "LOADI" => {
                self.expect_args(line, &opcode, &args, 2)?;
                Ok(RawInst::Loadi {
                    dst: self.reg(line, args[0])?,
                    imm: self.number(line, args[1])?,
                })
            }
            "LOAD" | "STORE" => {
                if args.len() != 2 && args.len() != 3 {
                    return Err(syntax(
                        line,
                        format!("{opcode} takes 2 or 3 operands, got {}", args.len()),
                    ));
                }
                let offset = if args.len() == 3 { self.number(line, args[2])? } else { 0 };
                let a = self.reg(line, args[0])?;
                let base = self.reg(line, args[1])?;
                if opcode == "LOAD" {
                    Ok(RawInst::Load { dst: a, base, offset })
                } else {
                    Ok(RawInst::Store { src: a, base, offset })
                }
            }
            "BEQ" => branch(BranchCond::Eq),
            "BNE" => branch(BranchCond::Ne),
            "BLT" => branch(BranchCond::Lt),
            "JUMP" => {
                self.expect_args(line, &opcode, &args, 1)?;
                Ok(RawInst::Jump { target: self.target(line, args[0])? })
            }
            "HALT" => {
                self.expect_args(line, &opcode, &args, 0)?;
                Ok(RawInst::Halt)
            }
            _ => Err(syntax(line, format!("unknown opcode '{op}'"))),
        }
    }

    fn expect_args(
        &self,
        line: usize,
        op: &str,
        args: &[&str],
        want: usize,
    ) -> Result<(), AsmError> {
        if args.len() != want {
            return Err(syntax(line, format!("{op} takes {want} operands, got {}", args.len())));
        }
        Ok(())
    }

    fn reg(&self, line: usize, text: &str) -> Result<u8, AsmError> {
        let body = text
            .strip_prefix('r')
            .or_else(|| text.strip_prefix('R'))
            .ok_or_else(|| syntax(line, format!("expected register, got '{text}'")))?;
        let index: u64 = body
            .parse()
            .map_err(|_| syntax(line, format!("expected register, got '{text}'")))?;
        if index as usize >= self.reg_count {
            return Err(AsmError::RegisterOutOfRange { line, reg: index, limit: self.reg_count });
        }
        Ok(index as u8)
    }

    fn number(&self, line: usize, text: &str) -> Result<i64, AsmError> {
        parse_number(text).ok_or_else(|| syntax(line, format!("expected number, got '{text}'")))
    }

    fn operand(&self, line: usize, text: &str) -> Result<Operand, AsmError> {
        if text.starts_with('r') || text.starts_with('R') {
            if let Ok(r) = self.reg(line, text) {
                return Ok(Operand::Reg(r));
            }
            // `r` followed by digits is always a register reference;
            // surface its range error rather than misreading a label.
            if text[1..].chars().all(|c| c.is_ascii_digit()) && text.len() > 1 {
                return self.reg(line, text).map(Operand::Reg);
            }
        }
        Ok(Operand::Imm(self.number(line, text)?))
    }

    fn target(&self, line: usize, text: &str) -> Result<RawTarget, AsmError> {
        if let Some(n) = parse_number(text) {
            if n < 0 {
                return Err(syntax(line, format!("negative branch target {n}")));
            }
            return Ok(RawTarget::Index(n as usize));
        }
        if is_identifier(text) {
            return Ok(RawTarget::Label(text.to_string()));
        }
        Err(syntax(line, format!("expected label or instruction index, got '{text}'")))
    }

    fn number_list(&self, line: usize, rest: &str) -> Result<Vec<i64>, AsmError> {
        rest.split_whitespace().map(|t| self.number(line, t)).collect()
    }
}

fn is_identifier(text: &str) -> bool {
    let mut chars = text.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn parse_number(text: &str) -> Option<i64> {
    let cleaned = text.replace('_', "");
    let (neg, body) = match cleaned.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, cleaned.as_str()),
    };
    let magnitude = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X"))
    {
        u64::from_str_radix(hex, 16).ok()?
    } else {
        if body.is_empty() || !body.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        body.parse::<u64>().ok()?
    };
    if neg {
        (magnitude <= (i64::MAX as u64) + 1).then(|| (magnitude as i64).wrapping_neg())
    } else {
        // Large unsigned constants (e.g. 0xffff_ffff_ffff_ffff) map onto
        // the signed immediate bit pattern.
        Some(magnitude as i64)
    }
}
