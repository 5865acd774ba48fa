//! EVM runtime bytecode decoding.
//!
//! The opcode table targets the Shanghai instruction set (PUSH0 included).
//! Unassigned byte values decode as `INVALID` terminators so that metadata
//! trailers appended by compilers never make decoding fail.

use std::fmt;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("EmptyInput: bytecode is empty")]
    EmptyInput,
    #[error("TruncatedPush({offset}): push immediate runs past the end of the bytecode")]
    TruncatedPush { offset: usize },
    #[error("InvalidHex: {0}")]
    InvalidHex(String),
}

/// Static description of one opcode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpcodeSpec {
    pub byte_value: u8,
    pub mnemonic: &'static str,
    pub immediate_bytes: u8,
    pub stack_inputs: u8,
    pub stack_outputs: u8,
    pub is_terminator: bool,
    pub is_jump: bool,
    pub is_branch: bool,
    pub is_jumpdest: bool,
}

impl OpcodeSpec {
    const fn plain(byte_value: u8, mnemonic: &'static str, inputs: u8, outputs: u8) -> Self {
        Self {
            byte_value,
            mnemonic,
            immediate_bytes: 0,
            stack_inputs: inputs,
            stack_outputs: outputs,
            is_terminator: false,
            is_jump: false,
            is_branch: false,
            is_jumpdest: false,
        }
    }

    const fn terminator(byte_value: u8, mnemonic: &'static str, inputs: u8) -> Self {
        let mut spec = Self::plain(byte_value, mnemonic, inputs, 0);
        spec.is_terminator = true;
        spec
    }

    /// Looks up the spec for a byte. Unassigned bytes yield the `INVALID` spec.
    pub fn lookup(byte: u8) -> &'static OpcodeSpec {
        match &OPCODES[byte as usize] {
            Some(spec) => spec,
            None => &INVALID,
        }
    }

    /// Returns true when `byte` has its own entry in the instruction set.
    pub fn is_assigned(byte: u8) -> bool {
        OPCODES[byte as usize].is_some()
    }

    pub fn is_push(&self) -> bool {
        (0x5f..=0x7f).contains(&self.byte_value)
    }

    /// Ends a basic block: JUMP, JUMPI, or a terminator.
    pub fn ends_block(&self) -> bool {
        self.is_terminator || self.is_jump || self.is_branch
    }
}

const INVALID: OpcodeSpec = OpcodeSpec::terminator(0xfe, "INVALID", 0);

const PUSH_NAMES: [&str; 32] = [
    "PUSH1", "PUSH2", "PUSH3", "PUSH4", "PUSH5", "PUSH6", "PUSH7", "PUSH8", "PUSH9", "PUSH10",
    "PUSH11", "PUSH12", "PUSH13", "PUSH14", "PUSH15", "PUSH16", "PUSH17", "PUSH18", "PUSH19",
    "PUSH20", "PUSH21", "PUSH22", "PUSH23", "PUSH24", "PUSH25", "PUSH26", "PUSH27", "PUSH28",
    "PUSH29", "PUSH30", "PUSH31", "PUSH32",
];
const DUP_NAMES: [&str; 16] = [
    "DUP1", "DUP2", "DUP3", "DUP4", "DUP5", "DUP6", "DUP7", "DUP8", "DUP9", "DUP10", "DUP11",
    "DUP12", "DUP13", "DUP14", "DUP15", "DUP16",
];
const SWAP_NAMES: [&str; 16] = [
    "SWAP1", "SWAP2", "SWAP3", "SWAP4", "SWAP5", "SWAP6", "SWAP7", "SWAP8", "SWAP9", "SWAP10",
    "SWAP11", "SWAP12", "SWAP13", "SWAP14", "SWAP15", "SWAP16",
];
const LOG_NAMES: [&str; 5] = ["LOG0", "LOG1", "LOG2", "LOG3", "LOG4"];

// (byte, mnemonic, stack inputs, stack outputs) for the fixed-arity opcodes.
const SIMPLE: [(u8, &str, u8, u8); 67] = [
    (0x01, "ADD", 2, 1),
    (0x02, "MUL", 2, 1),
    (0x03, "SUB", 2, 1),
    (0x04, "DIV", 2, 1),
    (0x05, "SDIV", 2, 1),
    (0x06, "MOD", 2, 1),
    (0x07, "SMOD", 2, 1),
    (0x08, "ADDMOD", 3, 1),
    (0x09, "MULMOD", 3, 1),
    (0x0a, "EXP", 2, 1),
    (0x0b, "SIGNEXTEND", 2, 1),
    (0x10, "LT", 2, 1),
    (0x11, "GT", 2, 1),
    (0x12, "SLT", 2, 1),
    (0x13, "SGT", 2, 1),
    (0x14, "EQ", 2, 1),
    (0x15, "ISZERO", 1, 1),
    (0x16, "AND", 2, 1),
    (0x17, "OR", 2, 1),
    (0x18, "XOR", 2, 1),
    (0x19, "NOT", 1, 1),
    (0x1a, "BYTE", 2, 1),
    (0x1b, "SHL", 2, 1),
    (0x1c, "SHR", 2, 1),
    (0x1d, "SAR", 2, 1),
    (0x20, "SHA3", 2, 1),
    (0x30, "ADDRESS", 0, 1),
    (0x31, "BALANCE", 1, 1),
    (0x32, "ORIGIN", 0, 1),
    (0x33, "CALLER", 0, 1),
    (0x34, "CALLVALUE", 0, 1),
    (0x35, "CALLDATALOAD", 1, 1),
    (0x36, "CALLDATASIZE", 0, 1),
    (0x37, "CALLDATACOPY", 3, 0),
    (0x38, "CODESIZE", 0, 1),
    (0x39, "CODECOPY", 3, 0),
    (0x3a, "GASPRICE", 0, 1),
    (0x3b, "EXTCODESIZE", 1, 1),
    (0x3c, "EXTCODECOPY", 4, 0),
    (0x3d, "RETURNDATASIZE", 0, 1),
    (0x3e, "RETURNDATACOPY", 3, 0),
    (0x3f, "EXTCODEHASH", 1, 1),
    (0x40, "BLOCKHASH", 1, 1),
    (0x41, "COINBASE", 0, 1),
    (0x42, "TIMESTAMP", 0, 1),
    (0x43, "NUMBER", 0, 1),
    (0x44, "PREVRANDAO", 0, 1),
    (0x45, "GASLIMIT", 0, 1),
    (0x46, "CHAINID", 0, 1),
    (0x47, "SELFBALANCE", 0, 1),
    (0x48, "BASEFEE", 0, 1),
    (0x50, "POP", 1, 0),
    (0x51, "MLOAD", 1, 1),
    (0x52, "MSTORE", 2, 0),
    (0x53, "MSTORE8", 2, 0),
    (0x54, "SLOAD", 1, 1),
    (0x55, "SSTORE", 2, 0),
    (0x58, "PC", 0, 1),
    (0x59, "MSIZE", 0, 1),
    (0x5a, "GAS", 0, 1),
    (0xf0, "CREATE", 3, 1),
    (0xf1, "CALL", 7, 1),
    (0xf2, "CALLCODE", 7, 1),
    (0xf4, "DELEGATECALL", 6, 1),
    (0xf5, "CREATE2", 4, 1),
    (0xfa, "STATICCALL", 6, 1),
    (0x5b, "JUMPDEST", 0, 0),
];

const fn build_table() -> [Option<OpcodeSpec>; 256] {
    let mut table: [Option<OpcodeSpec>; 256] = [None; 256];

    let mut i = 0;
    while i < SIMPLE.len() {
        let (byte, name, inputs, outputs) = SIMPLE[i];
        let mut spec = OpcodeSpec::plain(byte, name, inputs, outputs);
        if byte == 0x5b {
            spec.is_jumpdest = true;
        }
        table[byte as usize] = Some(spec);
        i += 1;
    }

    table[0x00] = Some(OpcodeSpec::terminator(0x00, "STOP", 0));
    table[0xf3] = Some(OpcodeSpec::terminator(0xf3, "RETURN", 2));
    table[0xfd] = Some(OpcodeSpec::terminator(0xfd, "REVERT", 2));
    table[0xfe] = Some(INVALID);
    table[0xff] = Some(OpcodeSpec::terminator(0xff, "SELFDESTRUCT", 1));

    let mut jump = OpcodeSpec::plain(0x56, "JUMP", 1, 0);
    jump.is_jump = true;
    table[0x56] = Some(jump);
    let mut jumpi = OpcodeSpec::plain(0x57, "JUMPI", 2, 0);
    jumpi.is_branch = true;
    table[0x57] = Some(jumpi);

    table[0x5f] = Some(OpcodeSpec::plain(0x5f, "PUSH0", 0, 1));
    let mut n = 0;
    while n < 32 {
        let byte = 0x60 + n as u8;
        let mut spec = OpcodeSpec::plain(byte, PUSH_NAMES[n], 0, 1);
        spec.immediate_bytes = n as u8 + 1;
        table[byte as usize] = Some(spec);
        n += 1;
    }
    let mut n = 0;
    while n < 16 {
        let depth = n as u8 + 1;
        table[0x80 + n] = Some(OpcodeSpec::plain(0x80 + n as u8, DUP_NAMES[n], depth, depth + 1));
        table[0x90 + n] =
            Some(OpcodeSpec::plain(0x90 + n as u8, SWAP_NAMES[n], depth + 1, depth + 1));
        n += 1;
    }
    let mut n = 0;
    while n < 5 {
        table[0xa0 + n] = Some(OpcodeSpec::plain(0xa0 + n as u8, LOG_NAMES[n], n as u8 + 2, 0));
        n += 1;
    }
    table
}

static OPCODES: [Option<OpcodeSpec>; 256] = build_table();

/// One decoded instruction. `opcode` keeps the raw byte so unassigned
/// opcodes re-encode faithfully even though they share the `INVALID` spec.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub offset: usize,
    pub opcode: u8,
    pub immediate: Vec<u8>,
}

impl Instruction {
    pub fn spec(&self) -> &'static OpcodeSpec {
        OpcodeSpec::lookup(self.opcode)
    }

    pub fn mnemonic(&self) -> &'static str {
        self.spec().mnemonic
    }

    /// Encoded size in bytes, opcode included.
    pub fn size(&self) -> usize {
        1 + self.immediate.len()
    }

    /// Offset just past this instruction.
    pub fn next_offset(&self) -> usize {
        self.offset + self.size()
    }

    /// The pushed constant, if this is a PUSH. PUSH0 yields an empty slice.
    pub fn push_value(&self) -> Option<&[u8]> {
        self.spec().is_push().then_some(self.immediate.as_slice())
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())?;
        if !self.immediate.is_empty() {
            write!(f, " 0x{}", hex::encode(&self.immediate))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionStream {
    /// Hex SHA-256 of the raw bytes.
    pub bytecode_hash: String,
    pub instructions: Vec<Instruction>,
}

impl InstructionStream {
    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    /// Re-encodes the stream into its raw bytes.
    pub fn encode(&self) -> Vec<u8> {
        encode(&self.instructions)
    }
}

pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Decodes raw runtime bytecode. Every byte is consumed exactly once.
pub fn decode(bytecode: &[u8]) -> Result<InstructionStream, DecodeError> {
    if bytecode.is_empty() {
        return Err(DecodeError::EmptyInput);
    }
    let mut instructions = Vec::with_capacity(bytecode.len());
    let mut offset = 0;
    while offset < bytecode.len() {
        let opcode = bytecode[offset];
        let width = OpcodeSpec::lookup(opcode).immediate_bytes as usize;
        let start = offset + 1;
        let end = start + width;
        if end > bytecode.len() {
            return Err(DecodeError::TruncatedPush { offset });
        }
        instructions.push(Instruction { offset, opcode, immediate: bytecode[start..end].to_vec() });
        offset = end;
    }
    Ok(InstructionStream { bytecode_hash: content_hash(bytecode), instructions })
}

pub fn encode(instructions: &[Instruction]) -> Vec<u8> {
    let mut out = Vec::with_capacity(instructions.iter().map(Instruction::size).sum());
    for ins in instructions {
        out.push(ins.opcode);
        out.extend_from_slice(&ins.immediate);
    }
    out
}

/// Space-separated mnemonics with PUSH immediates as `0x`-prefixed
/// lowercase hex at full byte width.
pub fn render_sentence(block_instructions: &[Instruction]) -> String {
    let mut out = String::new();
    for (i, ins) in block_instructions.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        use fmt::Write;
        let _ = write!(out, "{ins}");
    }
    out
}

/// Parses hex text: optional `0x` prefix, mixed case, surrounding whitespace.
pub fn parse_hex(text: &str) -> Result<Vec<u8>, DecodeError> {
    let trimmed = text.trim();
    let body = trimmed
        .strip_prefix("0x")
        .or_else(|| trimmed.strip_prefix("0X"))
        .unwrap_or(trimmed);
    let compact: String = body.chars().filter(|c| !c.is_whitespace()).collect();
    hex::decode(&compact).map_err(|e| DecodeError::InvalidHex(e.to_string()))
}

/// Unhexes (when the text is hex) and decodes.
pub fn decode_hex(text: &str) -> Result<InstructionStream, DecodeError> {
    let bytes = parse_hex(text)?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ins(offset: usize, opcode: u8, immediate: &[u8]) -> Instruction {
        Instruction { offset, opcode, immediate: immediate.to_vec() }
    }

    #[test]
    fn decodes_solc_preamble() {
        let stream = decode_hex("6080604052").unwrap();
        assert_eq!(
            stream.instructions,
            vec![ins(0, 0x60, &[0x80]), ins(2, 0x60, &[0x40]), ins(4, 0x52, &[])]
        );
        assert_eq!(render_sentence(&stream.instructions), "PUSH1 0x80 PUSH1 0x40 MSTORE");
    }

    #[test]
    fn single_stop() {
        let stream = decode_hex("00").unwrap();
        assert_eq!(stream.instructions, vec![ins(0, 0x00, &[])]);
        assert!(stream.instructions[0].spec().is_terminator);
    }

    #[test]
    fn truncated_push_reports_offset() {
        assert_eq!(decode_hex("60"), Err(DecodeError::TruncatedPush { offset: 0 }));
        assert_eq!(decode_hex("00617f"), Err(DecodeError::TruncatedPush { offset: 1 }));
    }

    #[test]
    fn empty_input() {
        assert_eq!(decode(&[]), Err(DecodeError::EmptyInput));
        assert_eq!(decode_hex("0x"), Err(DecodeError::EmptyInput));
    }

    #[test]
    fn fe_and_unassigned_are_invalid_terminators() {
        let stream = decode_hex("fe0c").unwrap();
        assert_eq!(stream.instructions[0].mnemonic(), "INVALID");
        assert_eq!(stream.instructions[1].mnemonic(), "INVALID");
        assert!(stream.instructions[1].spec().is_terminator);
        assert_eq!(stream.encode(), vec![0xfe, 0x0c]);
    }

    #[test]
    fn hex_normalization() {
        assert_eq!(parse_hex("0X60aB\n").unwrap(), vec![0x60, 0xab]);
        assert!(matches!(parse_hex("0x6"), Err(DecodeError::InvalidHex(_))));
        assert!(matches!(parse_hex("zz"), Err(DecodeError::InvalidHex(_))));
    }

    #[test]
    fn sentences() {
        assert_eq!(render_sentence(&[]), "");
        assert_eq!(
            render_sentence(&[ins(0, 0x5b, &[]), ins(1, 0x34, &[])]),
            "JUMPDEST CALLVALUE"
        );
        // Leading zero bytes are kept at full width.
        assert_eq!(render_sentence(&[ins(0, 0x61, &[0x00, 0x04])]), "PUSH2 0x0004");
        assert_eq!(render_sentence(&[ins(0, 0x5f, &[])]), "PUSH0");
    }

    #[test]
    fn table_invariants() {
        let mut seen = std::collections::HashSet::new();
        for b in 0..=255u8 {
            let spec = OpcodeSpec::lookup(b);
            if OpcodeSpec::is_assigned(b) {
                assert_eq!(spec.byte_value, b);
                assert!(seen.insert(spec.mnemonic), "duplicate mnemonic {}", spec.mnemonic);
            } else {
                assert_eq!(spec.mnemonic, "INVALID");
            }
            if (0x60..=0x7f).contains(&b) {
                assert_eq!(spec.immediate_bytes, b - 0x5f);
            } else {
                assert_eq!(spec.immediate_bytes, 0);
            }
        }
        let terminators: Vec<_> = [0x00u8, 0xf3, 0xfd, 0xfe, 0xff]
            .iter()
            .map(|b| OpcodeSpec::lookup(*b).mnemonic)
            .collect();
        assert_eq!(terminators, ["STOP", "RETURN", "REVERT", "INVALID", "SELFDESTRUCT"]);
        assert!(OpcodeSpec::lookup(0x56).is_jump);
        assert!(OpcodeSpec::lookup(0x57).is_branch);
        assert!(OpcodeSpec::lookup(0x5b).is_jumpdest);
        assert_eq!(OpcodeSpec::lookup(0x5f).mnemonic, "PUSH0");
    }

    proptest! {
        #[test]
        fn decode_is_total_and_round_trips(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            match decode(&bytes) {
                Ok(stream) => {
                    prop_assert_eq!(stream.encode(), bytes);
                    for pair in stream.instructions.windows(2) {
                        prop_assert_eq!(
                            pair[1].offset - pair[0].offset,
                            1 + pair[0].spec().immediate_bytes as usize
                        );
                    }
                }
                Err(DecodeError::EmptyInput) => prop_assert!(bytes.is_empty()),
                Err(DecodeError::TruncatedPush { offset }) => {
                    let spec = OpcodeSpec::lookup(bytes[offset]);
                    prop_assert!(offset + 1 + spec.immediate_bytes as usize > bytes.len());
                }
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }
}
