//! Register flow graphs anchored at compare instructions.

use std::collections::{BTreeMap, BTreeSet};

use super::{Family, FeatureVector};
use crate::model::{Function, Instruction, Operand};

/// Value flow between registers around one compare instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegisterFlowGraph {
    pub anchor: u64,
    pub compare: String,
    pub nodes: BTreeSet<String>,
    pub edges: BTreeSet<(String, String)>,
    anchor_operands: Vec<Operand>,
}

fn writes_destination(ins: &Instruction, compares: &[String]) -> bool {
    !(compares.contains(&ins.mnemonic)
        || ins.is_jump()
        || ins.is_call()
        || matches!(ins.mnemonic.as_str(), "push" | "ret" | "nop"))
}

impl RegisterFlowGraph {
    /// Builds the graph for the compare at `pos` over `window` instructions on
    /// each side, clipped to the block. Returns `None` when no register is
    /// involved.
    pub fn build(
        block: &[Instruction],
        pos: usize,
        window: usize,
        compares: &[String],
    ) -> Option<Self> {
        let anchor = &block[pos];
        let lo = pos.saturating_sub(window);
        let hi = (pos + window).min(block.len() - 1);
        let mut nodes: BTreeSet<String> = anchor
            .operands
            .iter()
            .flat_map(|o| o.registers())
            .map(str::to_string)
            .collect();
        let mut edges = BTreeSet::new();
        for ins in &block[lo..=hi] {
            if !writes_destination(ins, compares) || ins.operands.len() < 2 {
                continue;
            }
            let Some(dst) = ins.operands[0].as_register() else {
                continue;
            };
            for src in ins.operands[1..].iter().flat_map(|o| o.registers()) {
                edges.insert((src.to_string(), dst.to_string()));
                nodes.insert(src.to_string());
                nodes.insert(dst.to_string());
            }
        }
        if nodes.is_empty() {
            return None;
        }
        Some(RegisterFlowGraph {
            anchor: anchor.address,
            compare: anchor.mnemonic.clone(),
            nodes,
            edges,
            anchor_operands: anchor.operands.clone(),
        })
    }

    /// Canonical code with registers abstracted to roles: compare operands are
    /// `A0, A1, ..` in operand order, other registers `R0, R1, ..` in order of
    /// first appearance within the window.
    pub fn descriptor(&self, block: &[Instruction], pos: usize, window: usize) -> String {
        let mut roles: BTreeMap<&str, String> = BTreeMap::new();
        let mut anchors = 0;
        for reg in self.anchor_operands.iter().flat_map(|o| o.registers()) {
            if !roles.contains_key(reg) {
                roles.insert(reg, format!("A{anchors}"));
                anchors += 1;
            }
        }
        let lo = pos.saturating_sub(window);
        let hi = (pos + window).min(block.len() - 1);
        let mut others = 0;
        for ins in &block[lo..=hi] {
            for reg in ins.operands.iter().flat_map(|o| o.registers()) {
                if self.nodes.contains(reg) && !roles.contains_key(reg) {
                    roles.insert(reg, format!("R{others}"));
                    others += 1;
                }
            }
        }
        let operand_roles: Vec<String> = self
            .anchor_operands
            .iter()
            .map(|o| match o {
                Operand::Register(r) => roles[r.as_str()].clone(),
                Operand::Memory(m) => {
                    let regs: Vec<&str> = m.registers().map(|r| roles[r].as_str()).collect();
                    format!("m[{}]", regs.join("+"))
                }
                Operand::Immediate(_) => "i".into(),
                Operand::Label(_) => "l".into(),
                Operand::StringRef(_) => "s".into(),
            })
            .collect();
        let edges: BTreeSet<String> = self
            .edges
            .iter()
            .map(|(a, b)| format!("{}>{}", roles[a.as_str()], roles[b.as_str()]))
            .collect();
        format!(
            "{}:{}|{}",
            self.compare,
            operand_roles.join(","),
            edges.into_iter().collect::<Vec<_>>().join(",")
        )
    }
}

pub fn extract_rfg_features(function: &Function, window: usize, compares: &[String]) -> FeatureVector {
    assert!(window >= 1, "register-flow window must be at least 1");
    let mut out = FeatureVector::new(function.name.clone());
    for block in &function.blocks {
        let ins = &block.instructions;
        for pos in 0..ins.len() {
            if !compares.contains(&ins[pos].mnemonic) {
                continue;
            }
            if let Some(g) = RegisterFlowGraph::build(ins, pos, window, compares) {
                out.bump(Family::Rfg, g.descriptor(ins, pos, window));
            }
        }
    }
    out
}
