//! Evasion transforms.
//!
//! | kind | binary-level model |
//! |------|--------------------|
//! | RR   | per-function bijection over the general-purpose registers |
//! | RV   | alias of RR: a renamed variable surfaces as a renamed register |
//! | IR   | peephole substitution from [`REWRITES`] |
//! | DCI  | insertion of instructions with no effect |
//! | FCF  | every edge routed through one dispatcher block |
//! | NM   | an instruction window extracted into a new function and called |
//! | MM   | a function relocated to the end of the module, call sites re-pointed |
//!
//! Selection is per function (RR, RV, FCF, NM, MM) or per site (IR, DCI)
//! with probability `intensity`; any positive intensity changes at least one
//! function or site when one is eligible. Intensity 0 is the identity.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{mix_seed, rng_for, ForgeError, GPRS};
use crate::model::{BasicBlock, EdgeKind, Function, Instruction, MemoryRef, Operand, Program};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TransformKind {
    RR,
    IR,
    DCI,
    FCF,
    NM,
    MM,
    RV,
}

impl TransformKind {
    pub const ALL: [TransformKind; 7] = [
        TransformKind::RR,
        TransformKind::IR,
        TransformKind::DCI,
        TransformKind::FCF,
        TransformKind::NM,
        TransformKind::MM,
        TransformKind::RV,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TransformKind::RR => "RR",
            TransformKind::IR => "IR",
            TransformKind::DCI => "DCI",
            TransformKind::FCF => "FCF",
            TransformKind::NM => "NM",
            TransformKind::MM => "MM",
            TransformKind::RV => "RV",
        }
    }
}

impl FromStr for TransformKind {
    type Err = ForgeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TransformKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| ForgeError::UnknownTransform(s.to_string()))
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub kind: TransformKind,
    pub intensity: f64,
}

impl Transform {
    pub fn new(kind: TransformKind, intensity: f64) -> Result<Self, ForgeError> {
        if !(0.0..=1.0).contains(&intensity) {
            return Err(ForgeError::Intensity(intensity));
        }
        Ok(Transform { kind, intensity })
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind, self.intensity)
    }
}

/// `KIND` or `KIND:intensity`; a bare kind means intensity 1.
impl FromStr for Transform {
    type Err = ForgeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, intensity) = match s.split_once(':') {
            Some((k, i)) => (
                k,
                i.parse::<f64>()
                    .map_err(|_| ForgeError::UnknownTransform(s.to_string()))?,
            ),
            None => (s, 1.0),
        };
        Transform::new(kind.parse()?, intensity)
    }
}

/// One semantics-preserving peephole rewrite over `width` instructions.
pub struct Rewrite {
    pub name: &'static str,
    pub width: usize,
    rule: fn(&[Instruction]) -> Option<Vec<(&'static str, Vec<Operand>)>>,
}

impl Rewrite {
    /// Replacement for the window starting at `window[0]`, if the rule fires.
    pub fn apply(&self, window: &[Instruction]) -> Option<Vec<(&'static str, Vec<Operand>)>> {
        if window.len() < self.width {
            return None;
        }
        (self.rule)(&window[..self.width])
    }
}

fn regs2(i: &Instruction, m: &str) -> Option<(Operand, Operand)> {
    match (i.mnemonic.as_str(), &i.operands[..]) {
        (mn, [a @ Operand::Register(_), b @ Operand::Register(_)]) if mn == m => {
            Some((a.clone(), b.clone()))
        }
        _ => None,
    }
}

fn self_op(i: &Instruction, m: &str) -> Option<Operand> {
    regs2(i, m).filter(|(a, b)| a == b).map(|(a, _)| a)
}

fn rename_mnemonic(i: &Instruction, from: &str, to: &'static str) -> Option<Vec<(&'static str, Vec<Operand>)>> {
    (i.mnemonic == from).then(|| vec![(to, i.operands.clone())])
}

/// The instruction-replacement equivalence table.
pub const REWRITES: &[Rewrite] = &[
    Rewrite {
        name: "mov-to-push-pop",
        width: 1,
        rule: |w| regs2(&w[0], "mov").map(|(a, b)| vec![("push", vec![b]), ("pop", vec![a])]),
    },
    Rewrite {
        name: "push-pop-to-mov",
        width: 2,
        rule: |w| match (&w[0].mnemonic[..], &w[0].operands[..], &w[1].mnemonic[..], &w[1].operands[..]) {
            ("push", [b @ Operand::Register(_)], "pop", [a @ Operand::Register(_)]) if a != b => {
                Some(vec![("mov", vec![a.clone(), b.clone()])])
            }
            _ => None,
        },
    },
    Rewrite {
        name: "xor-zero-to-sub",
        width: 1,
        rule: |w| self_op(&w[0], "xor").map(|a| vec![("sub", vec![a.clone(), a])]),
    },
    Rewrite {
        name: "sub-zero-to-xor",
        width: 1,
        rule: |w| self_op(&w[0], "sub").map(|a| vec![("xor", vec![a.clone(), a])]),
    },
    Rewrite {
        name: "test-self-to-or",
        width: 1,
        rule: |w| self_op(&w[0], "test").map(|a| vec![("or", vec![a.clone(), a])]),
    },
    Rewrite {
        name: "or-self-to-test",
        width: 1,
        rule: |w| self_op(&w[0], "or").map(|a| vec![("test", vec![a.clone(), a])]),
    },
    Rewrite {
        name: "xchg-swap",
        width: 1,
        rule: |w| regs2(&w[0], "xchg").filter(|(a, b)| a != b).map(|(a, b)| vec![("xchg", vec![b, a])]),
    },
    Rewrite {
        name: "shl-to-sal",
        width: 1,
        rule: |w| rename_mnemonic(&w[0], "shl", "sal"),
    },
    Rewrite {
        name: "sal-to-shl",
        width: 1,
        rule: |w| rename_mnemonic(&w[0], "sal", "shl"),
    },
    Rewrite {
        name: "je-to-jz",
        width: 1,
        rule: |w| rename_mnemonic(&w[0], "je", "jz"),
    },
    Rewrite {
        name: "jz-to-je",
        width: 1,
        rule: |w| rename_mnemonic(&w[0], "jz", "je"),
    },
    Rewrite {
        name: "jne-to-jnz",
        width: 1,
        rule: |w| rename_mnemonic(&w[0], "jne", "jnz"),
    },
    Rewrite {
        name: "jnz-to-jne",
        width: 1,
        rule: |w| rename_mnemonic(&w[0], "jnz", "jne"),
    },
    Rewrite {
        name: "jb-to-jc",
        width: 1,
        rule: |w| rename_mnemonic(&w[0], "jb", "jc"),
    },
    Rewrite {
        name: "jae-to-jnb",
        width: 1,
        rule: |w| rename_mnemonic(&w[0], "jae", "jnb"),
    },
    Rewrite {
        name: "mov-zero-to-and",
        width: 1,
        rule: |w| match (&w[0].mnemonic[..], &w[0].operands[..]) {
            ("mov", [a @ Operand::Register(_), Operand::Immediate(0)]) => {
                Some(vec![("and", vec![a.clone(), Operand::Immediate(0)])])
            }
            _ => None,
        },
    },
];

fn program_rng(p: &Program, t: &Transform, seed: u64) -> rand_chacha::ChaCha8Rng {
    let id = p.id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    });
    rng_for(&[seed, t.kind as u64, t.intensity.to_bits(), mix_seed(&[id])])
}

/// Indices chosen with probability `intensity`, at least one when possible.
fn select(eligible: &[usize], intensity: f64, rng: &mut impl Rng) -> Vec<usize> {
    if intensity <= 0.0 || eligible.is_empty() {
        return Vec::new();
    }
    let mut chosen: Vec<usize> = eligible
        .iter()
        .copied()
        .filter(|_| rng.gen::<f64>() < intensity)
        .collect();
    if chosen.is_empty() {
        chosen.push(*eligible.choose(rng).unwrap());
    }
    chosen
}

/// Position of the trailing control-transfer instruction, or the block
/// length when there is none.
fn body_end(block: &BasicBlock) -> usize {
    match block.instructions.last() {
        Some(i) if i.is_jump() || i.mnemonic == "ret" => block.instructions.len() - 1,
        _ => block.instructions.len(),
    }
}

fn derangement(rng: &mut impl Rng) -> Vec<(&'static str, &'static str)> {
    loop {
        let mut image = GPRS.to_vec();
        image.shuffle(rng);
        if GPRS.iter().zip(&image).all(|(a, b)| a != b) {
            return GPRS.iter().copied().zip(image).collect();
        }
    }
}

fn rename_registers(f: &mut Function, map: &[(&str, &'static str)]) {
    let rename = |r: &mut String| {
        if let Some((_, to)) = map.iter().find(|(from, _)| *from == r.as_str()) {
            *r = to.to_string();
        }
    };
    for b in &mut f.blocks {
        for i in &mut b.instructions {
            for op in &mut i.operands {
                match op {
                    Operand::Register(r) => rename(r),
                    Operand::Memory(m) => {
                        m.base.as_mut().map(rename);
                        m.index.as_mut().map(rename);
                    }
                    _ => {}
                }
            }
        }
    }
}

fn register_rename(p: &mut Program, intensity: f64, rng: &mut impl Rng) {
    let all: Vec<usize> = (0..p.functions.len()).collect();
    for i in select(&all, intensity, rng) {
        let map = derangement(rng);
        rename_registers(&mut p.functions[i], &map);
    }
}

fn instruction_replace(p: &mut Program, intensity: f64, rng: &mut impl Rng) {
    let mut sites = Vec::new();
    for (fi, f) in p.functions.iter().enumerate() {
        for (bi, b) in f.blocks.iter().enumerate() {
            for ii in 0..b.instructions.len() {
                if REWRITES.iter().any(|r| r.apply(&b.instructions[ii..]).is_some()) {
                    sites.push((fi, bi, ii));
                }
            }
        }
    }
    let idx: Vec<usize> = (0..sites.len()).collect();
    let mut chosen: Vec<(usize, usize, usize)> = select(&idx, intensity, rng).into_iter().map(|i| sites[i]).collect();
    chosen.sort();
    // Apply back to front so earlier indices stay valid; overlapping
    // two-instruction windows are skipped.
    let mut last: Option<(usize, usize, usize)> = None;
    let mut touched = Vec::new();
    for &(fi, bi, ii) in chosen.iter().rev() {
        if let Some((lf, lb, li)) = last {
            if lf == fi && lb == bi && ii + 1 >= li {
                continue;
            }
        }
        let block = &mut p.functions[fi].blocks[bi];
        let window = &block.instructions[ii..];
        let rules: Vec<&Rewrite> = REWRITES.iter().filter(|r| r.apply(window).is_some()).collect();
        let rule = rules[rng.gen_range(0..rules.len())];
        let replacement = rule.apply(window).unwrap();
        let addr = block.instructions[ii].address;
        let new: Vec<Instruction> = replacement
            .into_iter()
            .map(|(m, ops)| Instruction::new(addr, m, ops))
            .collect();
        block.instructions.splice(ii..ii + rule.width, new);
        last = Some((fi, bi, ii));
        touched.push(fi);
    }
    touched.dedup();
    for fi in touched {
        p.functions[fi].relayout(4);
    }
}

fn dead_code(reg: &str, choice: usize) -> Vec<(&'static str, Vec<Operand>)> {
    let r = Operand::reg(reg);
    match choice {
        0 => vec![("nop", vec![])],
        1 => vec![("mov", vec![r.clone(), r])],
        2 => vec![("xchg", vec![r.clone(), r])],
        3 => vec![(
            "lea",
            vec![
                r,
                Operand::Memory(MemoryRef {
                    base: Some(reg.to_string()),
                    index: None,
                    disp: None,
                }),
            ],
        )],
        _ => vec![("push", vec![r.clone()]), ("pop", vec![r])],
    }
}

fn dead_code_insert(p: &mut Program, intensity: f64, rng: &mut impl Rng) {
    let mut slots = Vec::new();
    for (fi, f) in p.functions.iter().enumerate() {
        for (bi, b) in f.blocks.iter().enumerate() {
            for s in 0..=body_end(b) {
                slots.push((fi, bi, s));
            }
        }
    }
    let idx: Vec<usize> = (0..slots.len()).collect();
    let mut chosen: Vec<(usize, usize, usize)> = select(&idx, intensity, rng).into_iter().map(|i| slots[i]).collect();
    chosen.sort();
    let mut touched = Vec::new();
    for &(fi, bi, s) in chosen.iter().rev() {
        let block = &mut p.functions[fi].blocks[bi];
        let reg = GPRS[rng.gen_range(0..GPRS.len())];
        let addr = block.instructions.get(s).or(block.instructions.last()).map_or(0, |i| i.address);
        let new: Vec<Instruction> = dead_code(reg, rng.gen_range(0..5))
            .into_iter()
            .map(|(m, ops)| Instruction::new(addr, m, ops))
            .collect();
        block.instructions.splice(s..s, new);
        touched.push(fi);
    }
    touched.dedup();
    for fi in touched {
        p.functions[fi].relayout(4);
    }
}

/// Name of the dispatcher block added by FCF.
pub const DISPATCHER: &str = "fcf_dispatch";

fn flatten(f: &mut Function) {
    let mut id = DISPATCHER.to_string();
    while f.block(&id).is_some() {
        id.push('_');
    }
    let mut targets: Vec<String> = Vec::new();
    for b in &f.blocks {
        for e in &b.successors {
            if !targets.contains(&e.target) {
                targets.push(e.target.clone());
            }
        }
    }
    let order: Vec<&str> = f.blocks.iter().map(|b| b.id.as_str()).collect();
    targets.sort_by_key(|t| order.iter().position(|o| o == t));
    for b in &mut f.blocks {
        if !b.successors.is_empty() {
            b.successors.clear();
            b.successors.push(crate::model::Edge {
                target: id.clone(),
                kind: EdgeKind::Uncond,
            });
        }
    }
    let next = f.instructions().map(|i| i.address).max().unwrap_or(0) + 1;
    let mut dispatcher = BasicBlock::new(
        &id,
        vec![
            Instruction::new(
                next,
                "mov",
                vec![
                    Operand::reg("edx"),
                    Operand::Memory(MemoryRef {
                        base: Some("ebp".into()),
                        index: None,
                        disp: Some(-64),
                    }),
                ],
            ),
            Instruction::new(
                next + 4,
                "jmp",
                vec![Operand::Memory(MemoryRef {
                    base: Some("edx".into()),
                    index: None,
                    disp: None,
                })],
            ),
        ],
    );
    for t in targets {
        dispatcher = dispatcher.with_edge(&t, EdgeKind::Uncond);
    }
    f.blocks.push(dispatcher);
}

fn flatten_control_flow(p: &mut Program, intensity: f64, rng: &mut impl Rng) {
    let eligible: Vec<usize> = (0..p.functions.len())
        .filter(|&i| p.functions[i].blocks.len() > 1)
        .collect();
    for i in select(&eligible, intensity, rng) {
        flatten(&mut p.functions[i]);
    }
}

fn next_free_address(p: &Program) -> u64 {
    let max = p.functions.iter().flat_map(|f| f.instructions()).map(|i| i.address).max().unwrap_or(0);
    (max + 0x100) & !0xFF
}

fn unique_name(p: &Program, base: &str) -> String {
    (0..)
        .map(|k| format!("{base}_nm{k}"))
        .find(|n| p.function(n).is_none())
        .unwrap()
}

/// Extractable window bounds `[lo, hi)` in a block: body instructions minus
/// a compare feeding the terminator.
fn extractable(b: &BasicBlock) -> (usize, usize) {
    let mut hi = body_end(b);
    if hi < b.instructions.len() && hi > 0 {
        let m = &b.instructions[hi - 1].mnemonic;
        if m == "cmp" || m == "test" {
            hi -= 1;
        }
    }
    (0, hi)
}

fn new_method(p: &mut Program, intensity: f64, rng: &mut impl Rng) {
    let eligible: Vec<usize> = (0..p.functions.len())
        .filter(|&i| p.functions[i].blocks.iter().any(|b| extractable(b).1 >= 2))
        .collect();
    for fi in select(&eligible, intensity, rng) {
        let f = &p.functions[fi];
        let blocks: Vec<usize> = (0..f.blocks.len()).filter(|&b| extractable(&f.blocks[b]).1 >= 2).collect();
        let bi = *blocks.choose(rng).unwrap();
        let (_, hi) = extractable(&f.blocks[bi]);
        let len = rng.gen_range(2..=hi.min(4));
        let start = rng.gen_range(0..=hi - len);
        let name = unique_name(p, &p.functions[fi].name);
        let mut addr = next_free_address(p);
        let block = &mut p.functions[fi].blocks[bi];
        let call_addr = block.instructions[start].address;
        let window: Vec<Instruction> = block
            .instructions
            .splice(
                start..start + len,
                [Instruction::new(call_addr, "call", vec![Operand::Label(name.clone())])],
            )
            .collect();
        let mut body = Vec::with_capacity(len + 1);
        for mut i in window {
            i.address = addr;
            addr += 4;
            body.push(i);
        }
        body.push(Instruction::new(addr, "ret", vec![]));
        p.functions.push(Function::new(&name, vec![BasicBlock::new("b0", body)]));
    }
}

fn move_method(p: &mut Program, intensity: f64, rng: &mut impl Rng) {
    let all: Vec<usize> = (0..p.functions.len()).collect();
    let mut chosen = select(&all, intensity, rng);
    chosen.sort_unstable_by(|a, b| b.cmp(a));
    let mut moved = Vec::new();
    for fi in chosen {
        moved.push(p.functions.remove(fi));
    }
    moved.reverse();
    for mut f in moved {
        let base = next_free_address(p).max(
            (f.instructions().map(|i| i.address).max().unwrap_or(0) + 0x100) & !0xFF,
        );
        let first = f.entry().instructions[0].address;
        for b in &mut f.blocks {
            for i in &mut b.instructions {
                i.address = i.address - first + base;
            }
        }
        if crate::model::is_generated_name(&f.name) {
            let new_name = format!("sub_{base:X}");
            let old = std::mem::replace(&mut f.name, new_name.clone());
            let rename = |funcs: &mut [Function]| {
                for g in funcs {
                    for b in &mut g.blocks {
                        for i in &mut b.instructions {
                            if i.is_call() {
                                for op in &mut i.operands {
                                    if matches!(op, Operand::Label(l) if *l == old) {
                                        *op = Operand::Label(new_name.clone());
                                    }
                                }
                            }
                        }
                    }
                }
            };
            rename(&mut p.functions);
            rename(std::slice::from_mut(&mut f));
        }
        p.functions.push(f);
    }
}

/// Applies `t` to a copy of `p` and appends `KIND:intensity` to its
/// transform history (`:noop` is added when nothing was eligible).
pub fn apply_transform(p: &Program, t: &Transform, seed: u64) -> Result<Program, ForgeError> {
    let t = Transform::new(t.kind, t.intensity)?;
    p.validate()?;
    if t.intensity == 0.0 {
        return Ok(p.clone());
    }
    let mut rng = program_rng(p, &t, seed);
    let mut out = p.clone();
    match t.kind {
        TransformKind::RR | TransformKind::RV => register_rename(&mut out, t.intensity, &mut rng),
        TransformKind::IR => instruction_replace(&mut out, t.intensity, &mut rng),
        TransformKind::DCI => dead_code_insert(&mut out, t.intensity, &mut rng),
        TransformKind::FCF => flatten_control_flow(&mut out, t.intensity, &mut rng),
        TransformKind::NM => new_method(&mut out, t.intensity, &mut rng),
        TransformKind::MM => move_method(&mut out, t.intensity, &mut rng),
    }
    let mut entry = t.to_string();
    if out.functions == p.functions {
        entry.push_str(":noop");
    }
    out.meta.transforms.push(entry);
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_listing, write_listing};

    fn ins(a: u64, m: &str, ops: Vec<Operand>) -> Instruction {
        Instruction::new(a, m, ops)
    }

    fn r(n: &str) -> Operand {
        Operand::reg(n)
    }

    fn operand_multiset(is: &[Instruction]) -> Vec<Operand> {
        let mut v: Vec<Operand> = is.iter().flat_map(|i| i.operands.clone()).collect();
        v.sort();
        v
    }

    fn sample() -> Program {
        let f = Function::new(
            "main",
            vec![
                BasicBlock::new(
                    "b0",
                    vec![
                        ins(0, "push", vec![r("ebp")]),
                        ins(1, "mov", vec![r("ebp"), r("esp")]),
                        ins(2, "mov", vec![r("eax"), r("ebx")]),
                        ins(3, "xor", vec![r("ecx"), r("ecx")]),
                        ins(4, "cmp", vec![r("eax"), Operand::Immediate(3)]),
                        ins(5, "je", vec![Operand::Label("b2".into())]),
                    ],
                )
                .with_edge("b2", EdgeKind::True)
                .with_edge("b1", EdgeKind::False),
                BasicBlock::new(
                    "b1",
                    vec![
                        ins(6, "add", vec![r("eax"), r("edx")]),
                        ins(7, "call", vec![Operand::Label("sub_500".into())]),
                    ],
                )
                .with_edge("b2", EdgeKind::Uncond),
                BasicBlock::new("b2", vec![ins(8, "pop", vec![r("ebp")]), ins(9, "ret", vec![])]),
            ],
        );
        let g = Function::new("sub_500", vec![BasicBlock::new("b0", vec![ins(0x500, "ret", vec![])])]);
        Program::new("p", Some("alice"), vec![f, g])
    }

    #[test]
    fn rewrite_table_preserves_operands() {
        assert!(REWRITES.len() >= 10);
        let probes: Vec<Vec<Instruction>> = vec![
            vec![ins(0, "mov", vec![r("eax"), r("ebx")])],
            vec![ins(0, "push", vec![r("ebx")]), ins(1, "pop", vec![r("eax")])],
            vec![ins(0, "xor", vec![r("eax"), r("eax")])],
            vec![ins(0, "sub", vec![r("eax"), r("eax")])],
            vec![ins(0, "test", vec![r("eax"), r("eax")])],
            vec![ins(0, "or", vec![r("eax"), r("eax")])],
            vec![ins(0, "xchg", vec![r("eax"), r("esi")])],
            vec![ins(0, "shl", vec![r("eax"), Operand::Immediate(2)])],
            vec![ins(0, "sal", vec![r("eax"), Operand::Immediate(2)])],
            vec![ins(0, "je", vec![Operand::Label("x".into())])],
            vec![ins(0, "jz", vec![Operand::Label("x".into())])],
            vec![ins(0, "jne", vec![Operand::Label("x".into())])],
            vec![ins(0, "jnz", vec![Operand::Label("x".into())])],
            vec![ins(0, "jb", vec![Operand::Label("x".into())])],
            vec![ins(0, "jae", vec![Operand::Label("x".into())])],
            vec![ins(0, "mov", vec![r("eax"), Operand::Immediate(0)])],
        ];
        for rule in REWRITES {
            let fired: Vec<&Vec<Instruction>> = probes.iter().filter(|p| rule.apply(p).is_some()).collect();
            assert!(!fired.is_empty(), "rule {} never fires", rule.name);
            for probe in fired {
                let out = rule.apply(probe).unwrap();
                let out: Vec<Instruction> = out.into_iter().map(|(m, o)| ins(0, m, o)).collect();
                assert_eq!(
                    operand_multiset(&probe[..rule.width]),
                    operand_multiset(&out),
                    "rule {}",
                    rule.name
                );
                let jumps_in = probe[..rule.width].iter().filter(|i| i.is_jump()).count();
                assert_eq!(jumps_in, out.iter().filter(|i| i.is_jump()).count(), "rule {}", rule.name);
            }
        }
    }

    #[test]
    fn parse_transform_spec() {
        let t: Transform = "dci:0.3".parse().unwrap();
        assert_eq!(t.kind, TransformKind::DCI);
        assert_eq!(t.to_string(), "DCI:0.3");
        assert_eq!("RR".parse::<Transform>().unwrap().intensity, 1.0);
        assert!("RR:1.5".parse::<Transform>().is_err());
        assert!("XX:1".parse::<Transform>().is_err());
    }

    #[test]
    fn zero_intensity_is_identity() {
        let p = sample();
        for kind in TransformKind::ALL {
            let t = Transform::new(kind, 0.0).unwrap();
            assert_eq!(apply_transform(&p, &t, 1).unwrap(), p);
        }
    }

    #[test]
    fn rr_renames_every_general_register() {
        let p = sample();
        let out = apply_transform(&p, &Transform::new(TransformKind::RR, 1.0).unwrap(), 3).unwrap();
        let before: Vec<&Instruction> = p.functions[0].instructions().collect();
        let after: Vec<&Instruction> = out.functions[0].instructions().collect();
        for (a, b) in before.iter().zip(&after) {
            assert_eq!(a.mnemonic, b.mnemonic);
            for (x, y) in a.operands.iter().zip(&b.operands) {
                if let (Some(x), Some(y)) = (x.as_register(), y.as_register()) {
                    if GPRS.contains(&x) {
                        assert_ne!(x, y);
                    } else {
                        assert_eq!(x, y);
                    }
                }
            }
        }
        assert_eq!(out.meta.transforms, vec!["RR:1".to_string()]);
    }

    #[test]
    fn dci_grows_program() {
        let p = sample();
        let out = apply_transform(&p, &Transform::new(TransformKind::DCI, 0.1).unwrap(), 4).unwrap();
        assert!(out.instruction_count() > p.instruction_count());
        for (a, b) in p.functions.iter().zip(&out.functions) {
            assert_eq!(a.blocks.len(), b.blocks.len());
            assert_eq!(b.blocks.last().unwrap().instructions.last().unwrap().mnemonic, "ret");
        }
    }

    #[test]
    fn fcf_single_block_is_noop() {
        let g = Function::new("f", vec![BasicBlock::new("b0", vec![ins(0, "ret", vec![])])]);
        let p = Program::new("q", None, vec![g]);
        let out = apply_transform(&p, &Transform::new(TransformKind::FCF, 1.0).unwrap(), 1).unwrap();
        assert_eq!(out.functions, p.functions);
        assert_eq!(out.meta.transforms, vec!["FCF:1:noop".to_string()]);
    }

    #[test]
    fn fcf_five_blocks_has_one_hub() {
        let blocks: Vec<BasicBlock> = (0..5)
            .map(|i| {
                let b = BasicBlock::new(&format!("b{i}"), vec![ins(i, "nop", vec![])]);
                if i < 4 {
                    b.with_edge(&format!("b{}", i + 1), EdgeKind::Uncond)
                } else {
                    b
                }
            })
            .collect();
        let p = Program::new("q", None, vec![Function::new("f", blocks)]);
        let out = apply_transform(&p, &Transform::new(TransformKind::FCF, 1.0).unwrap(), 1).unwrap();
        let f = &out.functions[0];
        assert_eq!(f.blocks.len(), 6);
        let mut indeg = vec![0; f.blocks.len()];
        for s in f.adjacency() {
            for t in s {
                indeg[t] += 1;
            }
        }
        assert_eq!(indeg.iter().filter(|&&d| d >= 4).count(), 1);
    }

    #[test]
    fn nm_extracts_call() {
        let p = sample();
        let out = apply_transform(&p, &Transform::new(TransformKind::NM, 1.0).unwrap(), 2).unwrap();
        assert_eq!(out.functions.len(), 3);
        let new = &out.functions[2];
        assert!(new.name.starts_with("main_nm"));
        assert!(out.functions[0]
            .instructions()
            .any(|i| i.is_call() && i.operands == vec![Operand::Label(new.name.clone())]));
        assert_eq!(
            out.instruction_count(),
            p.instruction_count() + 2,
            "window replaced by one call, body gains a ret"
        );
    }

    #[test]
    fn mm_repoints_calls() {
        let p = sample();
        let out = apply_transform(&p, &Transform::new(TransformKind::MM, 1.0).unwrap(), 2).unwrap();
        let moved = out.functions.iter().find(|f| f.name.starts_with("sub_")).unwrap();
        assert_ne!(moved.name, "sub_500");
        assert!(out
            .functions
            .iter()
            .flat_map(|f| f.instructions())
            .any(|i| i.is_call() && i.operands == vec![Operand::Label(moved.name.clone())]));
    }

    #[test]
    fn outputs_round_trip() {
        let p = sample();
        for kind in TransformKind::ALL {
            for seed in 0..5 {
                let out = apply_transform(&p, &Transform::new(kind, 0.5).unwrap(), seed).unwrap();
                assert_eq!(parse_listing(&write_listing(&out)).unwrap(), out);
                assert_eq!(out.author, p.author);
            }
        }
    }
}
