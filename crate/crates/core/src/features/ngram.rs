use super::{Family, FeatureVector};
use crate::model::Function;

/// Opcode n-grams: windows of `n` consecutive mnemonics inside one block.
pub fn extract_opcode_ngrams(function: &Function, n: usize) -> FeatureVector {
    assert!((1..=8).contains(&n), "n-gram length {n} outside 1..=8");
    let mut out = FeatureVector::new(function.name.clone());
    for block in &function.blocks {
        let mnemonics: Vec<&str> = block
            .instructions
            .iter()
            .map(|i| i.mnemonic.as_str())
            .collect();
        for window in mnemonics.windows(n) {
            out.bump(Family::Ngram, window.join("|"));
        }
    }
    out
}

/// Single-mnemonic frequencies.
pub fn extract_opcodes(function: &Function) -> FeatureVector {
    let mut out = FeatureVector::new(function.name.clone());
    for ins in function.instructions() {
        out.bump(Family::Opcode, ins.mnemonic.as_str());
    }
    out
}

/// Character n-gram slices of a string, in order of appearance.
pub fn slice_ngrams(s: &str, n: usize) -> Vec<String> {
    let chars: Vec<char> = s.chars().collect();
    chars.windows(n).map(|w| w.iter().collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BasicBlock, EdgeKind, Instruction};

    fn block(id: &str, start: u64, mnemonics: &[&str]) -> BasicBlock {
        BasicBlock::new(
            id,
            mnemonics
                .iter()
                .enumerate()
                .map(|(i, m)| Instruction::new(start + i as u64, m, vec![]))
                .collect(),
        )
    }

    #[test]
    fn malware_four_grams() {
        assert_eq!(slice_ngrams("MALWARE", 4), vec!["MALW", "ALWA", "LWAR", "WARE"]);
    }

    #[test]
    fn single_window() {
        let f = Function::new("f", vec![block("b", 0, &["push", "mov", "sub"])]);
        let v = extract_opcode_ngrams(&f, 3);
        assert_eq!(v.len(), 1);
        assert_eq!(v.count(Family::Ngram, "push|mov|sub"), 1);
    }

    #[test]
    fn repeated_mnemonic_windows() {
        let f = Function::new("f", vec![block("b", 0, &["mov", "mov", "mov", "mov"])]);
        let v = extract_opcode_ngrams(&f, 2);
        assert_eq!(v.count(Family::Ngram, "mov|mov"), 3);
        assert_eq!(v.len(), 1);
    }

    #[test]
    fn windows_stop_at_block_boundary() {
        let f = Function::new(
            "f",
            vec![
                block("a", 0, &["push", "mov"]).with_edge("b", EdgeKind::Uncond),
                block("b", 2, &["pop", "ret"]),
            ],
        );
        let v = extract_opcode_ngrams(&f, 3);
        assert!(v.is_empty());
        assert_eq!(extract_opcode_ngrams(&f, 2).len(), 2);
    }

    #[test]
    fn opcode_unigrams() {
        let f = Function::new("f", vec![block("b", 0, &["mov", "mov", "ret"])]);
        let v = extract_opcodes(&f);
        assert_eq!(v.count(Family::Opcode, "mov"), 2);
        assert_eq!(v.count(Family::Opcode, "ret"), 1);
    }
}
