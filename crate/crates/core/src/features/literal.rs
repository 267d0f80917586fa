use super::{Family, FeatureVector};
use crate::model::{Function, Operand};

/// Referenced strings (`s:<text>`) and data immediates (`i:<value>`). Jump
/// displacements are not data and are skipped.
pub fn extract_strings_constants(function: &Function) -> FeatureVector {
    let mut out = FeatureVector::new(function.name.clone());
    for ins in function.instructions() {
        for op in &ins.operands {
            match op {
                Operand::StringRef(s) => out.bump(Family::StrConst, format!("s:{s}")),
                Operand::Immediate(v) if !ins.is_jump() => {
                    out.bump(Family::StrConst, format!("i:{v}"))
                }
                _ => {}
            }
        }
    }
    out
}

/// Call targets by symbol; anything but a label target is `indirect`.
pub fn extract_call_features(function: &Function) -> FeatureVector {
    let mut out = FeatureVector::new(function.name.clone());
    for ins in function.instructions().filter(|i| i.is_call()) {
        match ins.operands.first() {
            Some(Operand::Label(sym)) => out.bump(Family::Call, sym.as_str()),
            _ => out.bump(Family::Call, "indirect"),
        }
    }
    out
}
