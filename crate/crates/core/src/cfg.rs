//! Basic-block splitting, static jump resolution, dispatcher scanning and
//! per-function CFG extraction.
//!
//! Jump targets are resolved by emulating PUSH/DUP/SWAP/POP over constants
//! inside a single block. There is no dataflow across blocks, so a return
//! jump whose target was pushed by a caller block stays unresolved and is
//! counted in [`ContractCfg::unresolved_jump_count`].

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize, Serializer};

use crate::disasm::{render_sentence, Instruction, InstructionStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Selector {
    Fixed([u8; 4]),
    Fallback,
}

impl Selector {
    pub fn from_hex(text: &str) -> Option<Selector> {
        if text.eq_ignore_ascii_case("FALLBACK") {
            return Some(Selector::Fallback);
        }
        let body = text.strip_prefix("0x").unwrap_or(text);
        let bytes = hex::decode(body).ok()?;
        let fixed: [u8; 4] = bytes.try_into().ok()?;
        Some(Selector::Fixed(fixed))
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Selector::Fixed(bytes) => write!(f, "0x{}", hex::encode(bytes)),
            Selector::Fallback => f.write_str("FALLBACK"),
        }
    }
}

impl Serialize for Selector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Selector {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        Selector::from_hex(&text)
            .ok_or_else(|| serde::de::Error::custom(format!("bad selector {text:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BasicBlock {
    pub id: usize,
    pub start_offset: usize,
    /// Offset one past the last byte of the block.
    pub end_offset: usize,
    #[serde(skip)]
    pub instructions: Vec<Instruction>,
    pub sentence: String,
    pub successors: BTreeSet<usize>,
    /// Resolved JUMP/JUMPI destination, when the block ends in one.
    #[serde(skip)]
    pub jump_target: Option<usize>,
}

impl BasicBlock {
    fn new(id: usize, instructions: Vec<Instruction>) -> Self {
        let start_offset = instructions.first().map_or(0, |i| i.offset);
        let end_offset = instructions.last().map_or(start_offset, Instruction::next_offset);
        let sentence = render_sentence(&instructions);
        BasicBlock {
            id,
            start_offset,
            end_offset,
            instructions,
            sentence,
            successors: BTreeSet::new(),
            jump_target: None,
        }
    }

    pub fn last(&self) -> &Instruction {
        self.instructions.last().expect("blocks are never empty")
    }

    pub fn starts_with_jumpdest(&self) -> bool {
        self.instructions.first().is_some_and(|i| i.spec().is_jumpdest)
    }

    /// True when control can continue into the next block in address order.
    pub fn falls_through(&self) -> bool {
        let spec = self.last().spec();
        !(spec.is_terminator || spec.is_jump)
    }

    /// Raw bytes of the block's instructions.
    pub fn bytes(&self) -> Vec<u8> {
        crate::disasm::encode(&self.instructions)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FunctionCfg {
    pub selector: Selector,
    pub name: Option<String>,
    pub entry: usize,
    pub node_count: usize,
    pub blocks: Vec<BasicBlock>,
}

impl FunctionCfg {
    /// Directed edges as `(from, to)` pairs in block order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.blocks
            .iter()
            .flat_map(|b| b.successors.iter().map(move |&s| (b.id, s)))
            .collect()
    }

    /// `name` when known, else the selector.
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.selector.to_string())
    }

    /// Instruction bytes of every block, concatenated in block order.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        self.blocks.iter().flat_map(BasicBlock::bytes).collect()
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "digraph \"{}\" {{", escape_dot(&self.label()));
        let _ = writeln!(out, "  node [shape=box, fontname=monospace];");
        for block in &self.blocks {
            let _ = writeln!(
                out,
                "  b{} [label=\"{}@0x{:x}: {}\"];",
                block.id,
                block.id,
                block.start_offset,
                escape_dot(&block.sentence)
            );
        }
        for (from, to) in self.edges() {
            let _ = writeln!(out, "  b{from} -> b{to};");
        }
        out.push_str("}\n");
        out
    }
}

fn escape_dot(text: &str) -> String {
    text.replace('\\', "\\\\").replace('"', "\\\"")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ContractCfg {
    pub bytecode_hash: String,
    pub functions: Vec<FunctionCfg>,
    pub unresolved_jump_count: usize,
}

impl ContractCfg {
    pub fn to_dot(&self) -> String {
        self.functions.iter().map(FunctionCfg::to_dot).collect::<Vec<_>>().join("\n")
    }

    pub fn function(&self, selector: Selector) -> Option<&FunctionCfg> {
        self.functions.iter().find(|f| f.selector == selector)
    }
}

/// Splits a stream into basic blocks. Leaders are offset 0, every JUMPDEST,
/// and every instruction following a JUMP, JUMPI or terminator.
pub fn split_blocks(stream: &InstructionStream) -> Vec<BasicBlock> {
    let mut blocks = Vec::new();
    let mut current: Vec<Instruction> = Vec::new();
    for ins in &stream.instructions {
        if ins.spec().is_jumpdest && !current.is_empty() {
            blocks.push(BasicBlock::new(blocks.len(), std::mem::take(&mut current)));
        }
        current.push(ins.clone());
        if ins.spec().ends_block() {
            blocks.push(BasicBlock::new(blocks.len(), std::mem::take(&mut current)));
        }
    }
    if !current.is_empty() {
        blocks.push(BasicBlock::new(blocks.len(), current));
    }
    blocks
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StackValue {
    Const(u64),
    Unknown,
}

/// Abstract stack for one block. Slots below the emulated window are
/// unknown values pushed by predecessors.
struct ConstStack(Vec<StackValue>);

impl ConstStack {
    fn pop(&mut self) -> StackValue {
        self.0.pop().unwrap_or(StackValue::Unknown)
    }

    fn ensure_depth(&mut self, depth: usize) {
        if self.0.len() < depth {
            let missing = depth - self.0.len();
            self.0.splice(0..0, std::iter::repeat(StackValue::Unknown).take(missing));
        }
    }

    fn step(&mut self, ins: &Instruction) {
        let spec = ins.spec();
        match ins.opcode {
            0x5f..=0x7f => self.0.push(push_constant(&ins.immediate)),
            0x80..=0x8f => {
                let depth = (ins.opcode - 0x7f) as usize;
                self.ensure_depth(depth);
                let value = self.0[self.0.len() - depth];
                self.0.push(value);
            }
            0x90..=0x9f => {
                let depth = (ins.opcode - 0x8f) as usize;
                self.ensure_depth(depth + 1);
                let top = self.0.len() - 1;
                self.0.swap(top, top - depth);
            }
            0x50 => {
                self.pop();
            }
            _ => {
                for _ in 0..spec.stack_inputs {
                    self.pop();
                }
                for _ in 0..spec.stack_outputs {
                    self.0.push(StackValue::Unknown);
                }
            }
        }
    }
}

fn push_constant(immediate: &[u8]) -> StackValue {
    let significant: Vec<u8> = immediate.iter().copied().skip_while(|b| *b == 0).collect();
    if significant.len() > 8 {
        return StackValue::Unknown;
    }
    StackValue::Const(significant.iter().fold(0u64, |acc, b| (acc << 8) | *b as u64))
}

/// Emulates the block up to (not including) its final JUMP/JUMPI and returns
/// the stack top, which is the jump destination.
fn jump_destination(block: &BasicBlock) -> StackValue {
    let mut stack = ConstStack(Vec::new());
    let body = &block.instructions[..block.instructions.len() - 1];
    for ins in body {
        stack.step(ins);
    }
    stack.pop()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedBlocks {
    pub blocks: Vec<BasicBlock>,
    pub unresolved_jump_count: usize,
}

/// Adds fallthrough and statically resolvable jump edges.
pub fn resolve_jumps(mut blocks: Vec<BasicBlock>) -> ResolvedBlocks {
    let jumpdests: HashMap<usize, usize> = blocks
        .iter()
        .filter(|b| b.starts_with_jumpdest())
        .map(|b| (b.start_offset, b.id))
        .collect();
    let count = blocks.len();
    let mut unresolved = 0;
    for block in &mut blocks {
        block.successors.clear();
        block.jump_target = None;
        let spec = block.last().spec();
        if spec.is_jump || spec.is_branch {
            let target = match jump_destination(block) {
                StackValue::Const(dest) => usize::try_from(dest)
                    .ok()
                    .and_then(|d| jumpdests.get(&d).copied()),
                StackValue::Unknown => None,
            };
            match target {
                Some(id) => {
                    block.successors.insert(id);
                    block.jump_target = Some(id);
                }
                None => unresolved += 1,
            }
        }
        if block.falls_through() && block.id + 1 < count {
            block.successors.insert(block.id + 1);
        }
    }
    ResolvedBlocks { blocks, unresolved_jump_count: unresolved }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DispatchStatus {
    Found,
    /// No selector comparison was found; the whole reachable program is a
    /// single FALLBACK function.
    NoDispatcher,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dispatch {
    pub entries: Vec<(Selector, usize)>,
    pub status: DispatchStatus,
}

/// Matches `PUSH4 s … EQ … PUSH target JUMPI` inside one block.
fn selector_comparison(block: &BasicBlock) -> Option<([u8; 4], usize)> {
    let target = block.jump_target?;
    if !block.last().spec().is_branch {
        return None;
    }
    let body = &block.instructions;
    let eq_pos = body.iter().rposition(|i| i.opcode == 0x14)?;
    let selector = body[..eq_pos].iter().rev().find(|i| i.opcode == 0x63)?;
    let has_target_push = body[eq_pos + 1..body.len() - 1].iter().any(|i| i.spec().is_push());
    if !has_target_push {
        return None;
    }
    let bytes: [u8; 4] = selector.immediate.as_slice().try_into().ok()?;
    Some((bytes, target))
}

/// Walks the dispatcher from block 0. Selector targets are function entries
/// and are not walked into.
pub fn identify_functions(blocks: &[BasicBlock]) -> Dispatch {
    let mut entries: Vec<(Selector, usize)> = Vec::new();
    if blocks.is_empty() {
        return Dispatch { entries, status: DispatchStatus::NoDispatcher };
    }
    let mut seen = vec![false; blocks.len()];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut last_dispatch_block: Option<usize> = None;
    let mut targets = BTreeSet::new();
    while let Some(id) = queue.pop_front() {
        let block = &blocks[id];
        let matched = selector_comparison(block);
        if let Some((selector, target)) = matched {
            if !entries.iter().any(|(s, _)| *s == Selector::Fixed(selector)) {
                entries.push((Selector::Fixed(selector), target));
                targets.insert(target);
            }
            if last_dispatch_block.is_none_or(|prev| prev < id) {
                last_dispatch_block = Some(id);
            }
        }
        for &succ in &block.successors {
            let is_target = matched.is_some_and(|(_, t)| t == succ);
            if !is_target && !seen[succ] {
                seen[succ] = true;
                queue.push_back(succ);
            }
        }
    }

    match last_dispatch_block {
        None => Dispatch {
            entries: vec![(Selector::Fallback, 0)],
            status: DispatchStatus::NoDispatcher,
        },
        Some(last) => {
            let fallthrough = last + 1;
            let is_dispatcher = selector_comparison(&blocks[last]).is_some();
            if is_dispatcher && fallthrough < blocks.len() && !targets.contains(&fallthrough) {
                entries.push((Selector::Fallback, fallthrough));
            }
            Dispatch { entries, status: DispatchStatus::Found }
        }
    }
}

/// Subgraph reachable from `entry`, renumbered densely in breadth-first
/// order (entry becomes block 0, successors visited in ascending id order).
pub fn extract_function_cfg(
    blocks: &[BasicBlock],
    entry: usize,
    selector: Selector,
    name: Option<String>,
) -> FunctionCfg {
    let mut order = Vec::new();
    let mut new_id = HashMap::new();
    let mut queue = VecDeque::from([entry]);
    new_id.insert(entry, 0usize);
    while let Some(id) = queue.pop_front() {
        order.push(id);
        for &succ in &blocks[id].successors {
            if !new_id.contains_key(&succ) {
                new_id.insert(succ, new_id.len());
                queue.push_back(succ);
            }
        }
    }
    let function_blocks: Vec<BasicBlock> = order
        .iter()
        .map(|&old| {
            let src = &blocks[old];
            let mut block = src.clone();
            block.id = new_id[&old];
            block.successors = src.successors.iter().map(|s| new_id[s]).collect();
            block.jump_target = src.jump_target.map(|t| new_id[&t]);
            block
        })
        .collect();
    FunctionCfg {
        selector,
        name,
        entry: 0,
        node_count: function_blocks.len(),
        blocks: function_blocks,
    }
}

/// Full pipeline from a decoded stream to per-function CFGs. `names` maps
/// selectors to human-readable signatures, usually derived from an ABI.
pub fn build_contract_cfg(
    stream: &InstructionStream,
    names: Option<&HashMap<[u8; 4], String>>,
) -> ContractCfg {
    let resolved = resolve_jumps(split_blocks(stream));
    let dispatch = identify_functions(&resolved.blocks);
    let functions = dispatch
        .entries
        .iter()
        .map(|&(selector, entry)| {
            let name = match selector {
                Selector::Fixed(bytes) => names.and_then(|n| n.get(&bytes).cloned()),
                Selector::Fallback => None,
            };
            extract_function_cfg(&resolved.blocks, entry, selector, name)
        })
        .collect();
    ContractCfg {
        bytecode_hash: stream.bytecode_hash.clone(),
        functions,
        unresolved_jump_count: resolved.unresolved_jump_count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disasm::decode_hex;

    fn blocks_of(hex: &str) -> Vec<BasicBlock> {
        split_blocks(&decode_hex(hex).unwrap())
    }

    fn resolved(hex: &str) -> ResolvedBlocks {
        resolve_jumps(blocks_of(hex))
    }

    fn succs(r: &ResolvedBlocks) -> Vec<Vec<usize>> {
        r.blocks.iter().map(|b| b.successors.iter().copied().collect()).collect()
    }

    #[test]
    fn linear_code_is_one_block() {
        let blocks = blocks_of("6080604052600000");
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].sentence, "PUSH1 0x80 PUSH1 0x40 MSTORE PUSH1 0x00 STOP");
    }

    #[test]
    fn branch_fallthrough_and_target() {
        // 0: PUSH1 0x04  2: JUMPI  3: STOP  4: JUMPDEST  5: STOP
        let r = resolved("600457005b00");
        assert_eq!(r.blocks.len(), 3);
        assert_eq!(succs(&r), vec![vec![1, 2], vec![], vec![]]);
        assert_eq!(r.blocks[2].start_offset, 4);
        assert_eq!(r.unresolved_jump_count, 0);
    }

    #[test]
    fn consecutive_jumpdests_are_separate_blocks() {
        let r = resolved("5b5b");
        assert_eq!(r.blocks.len(), 2);
        assert_eq!(succs(&r), vec![vec![1], vec![]]);
    }

    #[test]
    fn constant_jump_resolves() {
        // 0: PUSH1 0x04  2: JUMP  3: INVALID  4: JUMPDEST  5: STOP
        let r = resolved("600456fe5b00");
        assert_eq!(succs(&r), vec![vec![2], vec![], vec![]]);
        assert_eq!(r.blocks[0].jump_target, Some(2));
    }

    #[test]
    fn jump_through_swap_and_pop() {
        // 0: PUSH1 0x05  2: PUSH1 0x09  4: SWAP1  5: POP  6: JUMP  7: INVALID  8: INVALID
        // 9: JUMPDEST  10: STOP
        let r = resolved("6005600990505 6fefe5b00".replace(' ', "").as_str());
        assert_eq!(r.blocks[3].start_offset, 9);
        assert_eq!(r.blocks[0].jump_target, Some(3));
        assert_eq!(r.unresolved_jump_count, 0);
    }

    #[test]
    fn jump_through_dup() {
        // 0: PUSH1 0x05  2: DUP1  3: POP  4: JUMP  5: JUMPDEST  6: STOP
        let r = resolved("60058050565b00");
        assert_eq!(r.blocks[0].jump_target, Some(1));
    }

    #[test]
    fn computed_jump_is_unresolved() {
        // PUSH1 0 CALLDATALOAD JUMP JUMPDEST STOP
        let r = resolved("600035565b00");
        assert_eq!(r.unresolved_jump_count, 1);
        assert!(r.blocks[0].successors.is_empty());
    }

    #[test]
    fn jump_to_non_jumpdest_is_dropped() {
        // PUSH1 0x03 JUMP STOP -- offset 3 is STOP, not a JUMPDEST
        let r = resolved("60035600");
        assert_eq!(r.unresolved_jump_count, 1);
        assert!(r.blocks[0].successors.is_empty());
    }

    #[test]
    fn no_dispatcher_yields_fallback_only() {
        let r = resolved("6080604052600000");
        let d = identify_functions(&r.blocks);
        assert_eq!(d.status, DispatchStatus::NoDispatcher);
        assert_eq!(d.entries, vec![(Selector::Fallback, 0)]);
    }

    #[test]
    fn diamond_extracts_four_nodes() {
        // 0: PUSH1 1  2: PUSH1 0x09  4: JUMPI            entry
        // 5: PUSH1 0x0a  7: JUMP                        A
        // 8: INVALID                                    dead
        // 9: JUMPDEST (falls through)                   B
        // 10: JUMPDEST  11: STOP                        join
        let r = resolved("600160095760 0a56fe5b5b00".replace(' ', "").as_str());
        let f = extract_function_cfg(&r.blocks, 0, Selector::Fallback, None);
        assert_eq!(f.node_count, 4);
        let mut edges = f.edges();
        edges.sort();
        assert_eq!(edges, vec![(0, 1), (0, 2), (1, 3), (2, 3)]);
    }

    #[test]
    fn isolated_entry_is_one_node() {
        let r = resolved("00");
        let f = extract_function_cfg(&r.blocks, 0, Selector::Fallback, None);
        assert_eq!(f.node_count, 1);
        assert!(f.edges().is_empty());
    }

    #[test]
    fn selector_round_trip() {
        let s = Selector::from_hex("0xd0e30db0").unwrap();
        assert_eq!(s.to_string(), "0xd0e30db0");
        assert_eq!(Selector::from_hex("FALLBACK"), Some(Selector::Fallback));
        assert_eq!(Selector::from_hex("0x1234"), None);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<Selector>(&json).unwrap(), s);
    }
}
