use super::{Family, FeatureVector};
use crate::model::{Function, Instruction};

/// Operand wildcarding applied to idiom windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IdiomPolicy {
    /// Only the fully concrete triple.
    ConcreteOnly,
    /// The concrete triple plus the triple with every operand replaced by `*`.
    #[default]
    WithWildcards,
}

fn wildcard(ins: &Instruction) -> String {
    let mut s = ins.mnemonic.clone();
    for i in 0..ins.operands.len() {
        s.push_str(if i == 0 { " *" } else { ",*" });
    }
    s
}

/// Idioms: every window of three consecutive instructions within a block.
///
/// A window without operands has identical concrete and wildcard renderings
/// and is counted once.
pub fn extract_idioms(function: &Function, policy: IdiomPolicy) -> FeatureVector {
    let mut out = FeatureVector::new(function.name.clone());
    for block in &function.blocks {
        for w in block.instructions.windows(3) {
            let concrete = w.iter().map(Instruction::render).collect::<Vec<_>>().join("|");
            if policy == IdiomPolicy::WithWildcards {
                let wild = w.iter().map(wildcard).collect::<Vec<_>>().join("|");
                if wild != concrete {
                    out.bump(Family::Idiom, wild);
                }
            }
            out.bump(Family::Idiom, concrete);
        }
    }
    out
}
