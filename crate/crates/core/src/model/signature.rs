//! Prefix signatures over leading mnemonics, used to separate compiler and
//! library scaffolding from user code.

use std::fmt;

use super::{Function, Program, Provenance};

/// Longest supported signature pattern.
pub const MAX_PATTERN_LEN: usize = 8;

/// Signatures shipped with the crate; they recognise the helper functions the
/// corpus forge injects for its compiler profiles and library stubs.
pub const DEFAULT_SIGNATURES: &str = include_str!("../../data/default.sig");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    /// Mnemonic tokens; `None` is the `*` wildcard.
    pub pattern: Vec<Option<String>>,
    pub class: Provenance,
}

impl Signature {
    pub fn matches(&self, function: &Function) -> bool {
        let lead = function.leading_mnemonics(self.pattern.len());
        lead.len() == self.pattern.len()
            && self
                .pattern
                .iter()
                .zip(lead)
                .all(|(p, m)| p.as_deref().is_none_or(|p| p == m))
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({})", self.class)?;
        for tok in &self.pattern {
            write!(f, " {}", tok.as_deref().unwrap_or("*"))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("signature line {line}: {message}")]
pub struct SignatureError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SignatureSet {
    pub signatures: Vec<Signature>,
}

impl SignatureSet {
    /// Parses `(class) <pat1> <pat2> ...` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, SignatureError> {
        let mut signatures = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| SignatureError {
                line: i + 1,
                message,
            };
            let mut tokens = line.split_whitespace();
            let class_tok = tokens.next().unwrap_or_default();
            let class = class_tok
                .strip_prefix('(')
                .and_then(|c| c.strip_suffix(')'))
                .ok_or_else(|| err(format!("expected `(class)`, found `{class_tok}`")))?;
            let class = match class {
                "library" => Provenance::Library,
                "compiler" => Provenance::Compiler,
                other => return Err(err(format!("class must be library or compiler, not `{other}`"))),
            };
            let pattern: Vec<Option<String>> = tokens
                .map(|t| (t != "*").then(|| t.to_ascii_lowercase()))
                .collect();
            if pattern.is_empty() {
                return Err(err("empty pattern".into()));
            }
            if pattern.len() > MAX_PATTERN_LEN {
                return Err(err(format!("pattern longer than {MAX_PATTERN_LEN} tokens")));
            }
            signatures.push(Signature { pattern, class });
        }
        Ok(SignatureSet { signatures })
    }

    pub fn default_set() -> Self {
        Self::parse(DEFAULT_SIGNATURES).expect("bundled signature file parses")
    }

    /// First signature in file order that matches the function.
    pub fn classify(&self, function: &Function) -> Option<Provenance> {
        self.signatures
            .iter()
            .find(|s| s.matches(function))
            .map(|s| s.class)
    }
}

/// True for disassembler-generated names: `sub_` followed by hex digits.
pub fn is_generated_name(name: &str) -> bool {
    name.strip_prefix("sub_")
        .is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_hexdigit()))
}

/// Annotates every function with its provenance. Re-running is a no-op.
pub fn classify_provenance(mut program: Program, sigs: &SignatureSet) -> Program {
    for f in &mut program.functions {
        f.provenance = match sigs.classify(f) {
            Some(class) => class,
            None if is_generated_name(&f.name) => Provenance::Unknown,
            None => Provenance::User,
        };
    }
    program
}

pub fn user_functions(program: &Program) -> Vec<&Function> {
    program
        .functions
        .iter()
        .filter(|f| f.provenance == Provenance::User)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BasicBlock, Instruction};

    fn func(name: &str, mnemonics: &[&str]) -> Function {
        let ins = mnemonics
            .iter()
            .enumerate()
            .map(|(i, m)| Instruction::new(i as u64, m, vec![]))
            .collect();
        Function::new(name, vec![BasicBlock::new("b0", ins)])
    }

    #[test]
    fn compiler_signature_match() {
        let sigs = SignatureSet::parse("(compiler) endbr32 xor pop\n").unwrap();
        let p = Program::new("p", None, vec![func("start", &["endbr32", "xor", "pop", "ret"])]);
        let p = classify_provenance(p, &sigs);
        assert_eq!(p.functions[0].provenance, Provenance::Compiler);
    }

    #[test]
    fn generated_name_is_unknown() {
        let p = Program::new("p", None, vec![func("sub_4011A0", &["push", "ret"])]);
        let p = classify_provenance(p, &SignatureSet::default());
        assert_eq!(p.functions[0].provenance, Provenance::Unknown);
        assert!(!is_generated_name("sub_"));
        assert!(!is_generated_name("sub_xyz"));
        assert!(!is_generated_name("subroutine"));
    }

    #[test]
    fn wildcard_and_first_match_wins() {
        let sigs = SignatureSet::parse("(library) cld * mov\n(compiler) cld\n").unwrap();
        let p = Program::new(
            "p",
            None,
            vec![func("a", &["cld", "rep", "mov"]), func("b", &["cld", "nop"])],
        );
        let p = classify_provenance(p, &sigs);
        assert_eq!(p.functions[0].provenance, Provenance::Library);
        assert_eq!(p.functions[1].provenance, Provenance::Compiler);
    }

    #[test]
    fn pattern_longer_than_function_does_not_match() {
        let sigs = SignatureSet::parse("(compiler) push mov sub\n").unwrap();
        let f = func("f", &["push", "mov"]);
        assert_eq!(sigs.classify(&f), None);
    }

    #[test]
    fn user_functions_in_order() {
        let sigs = SignatureSet::parse("(library) cld\n(compiler) cpuid\n").unwrap();
        let p = Program::new(
            "p",
            None,
            vec![
                func("u1", &["push"]),
                func("l1", &["cld"]),
                func("u2", &["mov"]),
                func("c1", &["cpuid"]),
                func("l2", &["cld"]),
                func("u3", &["ret"]),
            ],
        );
        let p = classify_provenance(p, &sigs);
        let names: Vec<&str> = user_functions(&p).iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, vec!["u1", "u2", "u3"]);
    }

    #[test]
    fn all_user_and_all_compiler() {
        let sigs = SignatureSet::parse("(compiler) cpuid\n").unwrap();
        let users = Program::new("p", None, vec![func("a", &["push"]), func("b", &["mov"])]);
        let users = classify_provenance(users, &sigs);
        assert_eq!(user_functions(&users).len(), 2);
        let comp = Program::new("p", None, vec![func("a", &["cpuid"]), func("b", &["cpuid"])]);
        let comp = classify_provenance(comp, &sigs);
        assert!(user_functions(&comp).is_empty());
    }

    #[test]
    fn bad_signature_lines() {
        assert_eq!(SignatureSet::parse("(user) push\n").unwrap_err().line, 1);
        assert!(SignatureSet::parse("(compiler)\n").is_err());
        assert!(SignatureSet::parse("compiler push\n").is_err());
        assert!(SignatureSet::parse("(compiler) a b c d e f g h i\n").is_err());
    }

    #[test]
    fn default_set_loads() {
        assert!(!SignatureSet::default_set().signatures.is_empty());
    }
}
