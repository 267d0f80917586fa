//! Stylometric feature families over the program model.
//!
//! Every extractor is a pure function from a [`Function`] to a sparse
//! [`FeatureVector`] of occurrence counts. [`extract_all`] runs the families
//! selected by a [`FeatureConfig`] over the functions that survive provenance
//! filtration and sums them into a program-level vector.

mod graphlet;
mod idiom;
mod literal;
mod ngram;
mod rfg;

use std::collections::btree_map;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::model::{Function, Program, Provenance};

pub use graphlet::{canonical_code, connected_subsets, extract_graphlets};
pub use idiom::{extract_idioms, IdiomPolicy};
pub use literal::{extract_call_features, extract_strings_constants};
pub use ngram::{extract_opcode_ngrams, extract_opcodes, slice_ngrams};
pub use rfg::{extract_rfg_features, RegisterFlowGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Ngram,
    Opcode,
    Idiom,
    Graphlet,
    Rfg,
    StrConst,
    Call,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::Ngram,
        Family::Opcode,
        Family::Idiom,
        Family::Graphlet,
        Family::Rfg,
        Family::StrConst,
        Family::Call,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Ngram => "ngram",
            Family::Opcode => "opcode",
            Family::Idiom => "idiom",
            Family::Graphlet => "graphlet",
            Family::Rfg => "rfg",
            Family::StrConst => "strconst",
            Family::Call => "call",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| FeatureError::UnknownFamily(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureId {
    pub family: Family,
    pub descriptor: String,
}

impl FeatureId {
    pub fn new(family: Family, descriptor: impl Into<String>) -> Self {
        FeatureId {
            family,
            descriptor: descriptor.into(),
        }
    }
}

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}", self.family, escape_field(&self.descriptor))
    }
}

/// Sparse count vector. Zero counts are never stored.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct FeatureVector {
    pub subject: String,
    counts: BTreeMap<FeatureId, u64>,
}

impl FeatureVector {
    pub fn new(subject: impl Into<String>) -> Self {
        FeatureVector {
            subject: subject.into(),
            counts: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, id: FeatureId, count: u64) {
        if count > 0 {
            *self.counts.entry(id).or_insert(0) += count;
        }
    }

    pub fn bump(&mut self, family: Family, descriptor: impl Into<String>) {
        self.add(FeatureId::new(family, descriptor), 1);
    }

    pub fn get(&self, id: &FeatureId) -> u64 {
        self.counts.get(id).copied().unwrap_or(0)
    }

    pub fn count(&self, family: Family, descriptor: &str) -> u64 {
        self.get(&FeatureId::new(family, descriptor))
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> btree_map::Iter<'_, FeatureId, u64> {
        self.counts.iter()
    }

    pub fn ids(&self) -> btree_map::Keys<'_, FeatureId, u64> {
        self.counts.keys()
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Entrywise sum.
    pub fn merge(&mut self, other: &FeatureVector) {
        for (id, &c) in &other.counts {
            self.add(id.clone(), c);
        }
    }

    /// Restriction to one family.
    pub fn family(&self, family: Family) -> FeatureVector {
        FeatureVector {
            subject: self.subject.clone(),
            counts: self
                .counts
                .iter()
                .filter(|(id, _)| id.family == family)
                .map(|(id, &c)| (id.clone(), c))
                .collect(),
        }
    }

    /// Same counts, ignoring the subject id.
    pub fn same_counts(&self, other: &FeatureVector) -> bool {
        self.counts == other.counts
    }
}

impl FromIterator<(FeatureId, u64)> for FeatureVector {
    fn from_iter<T: IntoIterator<Item = (FeatureId, u64)>>(iter: T) -> Self {
        let mut v = FeatureVector::default();
        for (id, c) in iter {
            v.add(id, c);
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FeatureError {
    #[error("unknown feature family `{0}`")]
    UnknownFamily(String),
    #[error("n-gram length {0} outside 1..=8")]
    NgramLength(usize),
    #[error("graphlet size {0} outside 2..=5")]
    GraphletSize(usize),
    #[error("register-flow window must be at least 1")]
    RfgWindow,
}

/// Which functions contribute to program-level vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Filtration {
    /// Only functions classified as user code.
    #[default]
    UserOnly,
    /// User code plus unnamed (`sub_`) functions; drops library and compiler.
    DropLibraryCompiler,
    /// Every function, as an unfiltered extractor would.
    Off,
}

impl Filtration {
    pub fn keeps(self, provenance: Provenance) -> bool {
        match self {
            Filtration::UserOnly => provenance == Provenance::User,
            Filtration::DropLibraryCompiler => {
                matches!(provenance, Provenance::User | Provenance::Unknown)
            }
            Filtration::Off => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureConfig {
    pub families: BTreeSet<Family>,
    pub ngram_n: usize,
    pub graphlet_k: usize,
    pub rfg_window: usize,
    pub idiom_policy: IdiomPolicy,
    pub compare_mnemonics: Vec<String>,
    pub filtration: Filtration,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            families: Family::ALL.into_iter().collect(),
            ngram_n: 4,
            graphlet_k: 3,
            rfg_window: 4,
            idiom_policy: IdiomPolicy::WithWildcards,
            compare_mnemonics: vec!["cmp".into(), "test".into()],
            filtration: Filtration::UserOnly,
        }
    }
}

impl FeatureConfig {
    pub fn only(families: &[Family]) -> Self {
        FeatureConfig {
            families: families.iter().copied().collect(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if !(1..=8).contains(&self.ngram_n) {
            return Err(FeatureError::NgramLength(self.ngram_n));
        }
        if !(2..=5).contains(&self.graphlet_k) {
            return Err(FeatureError::GraphletSize(self.graphlet_k));
        }
        if self.rfg_window == 0 {
            return Err(FeatureError::RfgWindow);
        }
        Ok(())
    }
}

/// Runs every configured family over one function.
pub fn extract_function(function: &Function, config: &FeatureConfig) -> FeatureVector {
    let mut out = FeatureVector::new(function.name.clone());
    for family in &config.families {
        let part = match family {
            Family::Ngram => extract_opcode_ngrams(function, config.ngram_n),
            Family::Opcode => extract_opcodes(function),
            Family::Idiom => extract_idioms(function, config.idiom_policy),
            Family::Graphlet => extract_graphlets(function, config.graphlet_k),
            Family::Rfg => {
                extract_rfg_features(function, config.rfg_window, &config.compare_mnemonics)
            }
            Family::StrConst => extract_strings_constants(function),
            Family::Call => extract_call_features(function),
        };
        out.merge(&part);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionFeatures {
    pub name: String,
    pub provenance: Provenance,
    pub vector: FeatureVector,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgramFeatures {
    pub program: String,
    pub author: Option<String>,
    /// Per-function vectors for the functions kept by filtration, in program order.
    pub functions: Vec<FunctionFeatures>,
    pub merged: FeatureVector,
}

/// Subject id used for function-level vectors.
pub fn function_subject(program: &str, function: &str) -> String {
    format!("{program}::{function}")
}

/// Extracts per-function vectors and their sum for one classified program.
pub fn extract_all(program: &Program, config: &FeatureConfig) -> ProgramFeatures {
    let mut merged = FeatureVector::new(program.id.clone());
    let mut functions = Vec::new();
    for f in &program.functions {
        if !config.filtration.keeps(f.provenance) {
            continue;
        }
        let mut vector = extract_function(f, config);
        vector.subject = function_subject(&program.id, &f.name);
        merged.merge(&vector);
        functions.push(FunctionFeatures {
            name: f.name.clone(),
            provenance: f.provenance,
            vector,
        });
    }
    ProgramFeatures {
        program: program.id.clone(),
        author: program.author.clone(),
        functions,
        merged,
    }
}

/// Percent-escapes `%`, tab, newline and carriage return.
pub fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '%' => out.push_str("%25"),
            '\t' => out.push_str("%09"),
            '\n' => out.push_str("%0A"),
            '\r' => out.push_str("%0D"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape_field(s: &str) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(pos) = rest.find('%') {
        out.push_str(&rest[..pos]);
        let code = rest.get(pos + 1..pos + 3)?;
        out.push(match code {
            "25" => '%',
            "09" => '\t',
            "0A" => '\n',
            "0D" => '\r',
            _ => return None,
        });
        rest = &rest[pos + 3..];
    }
    out.push_str(rest);
    Some(out)
}

/// `<subject>\t<family>\t<descriptor>\t<count>` lines for one vector.
pub fn dump_vector(vector: &FeatureVector) -> String {
    let subject = escape_field(&vector.subject);
    let mut out = String::new();
    for (id, c) in vector.iter() {
        out.push_str(&format!("{subject}\t{id}\t{c}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{classify_provenance, parse_listing, SignatureSet};

    const THREE: &str = "\
program p author=a
function main
block b0
  0 push r:ebp
  1 mov r:ebp, r:esp
  2 cmp r:eax, i:3
  3 jne l:b2
block b1
  4 call l:puts
  5 push s:\"hello\"
block b2
  6 mov r:eax, i:42
  7 ret
edge b0 b2 true
edge b0 b1 false
edge b1 b2 uncond
end
function helper
block h0
  10 xor r:eax, r:eax
  11 test r:ecx, r:ecx
  12 ret
end
function _start
block s0
  20 endbr32
  21 xor r:ebp, r:ebp
  22 pop r:esi
  23 ret
end
";

    fn classified() -> Program {
        classify_provenance(parse_listing(THREE).unwrap(), &SignatureSet::default_set())
    }

    #[test]
    fn escape_round_trip() {
        for s in ["plain", "a\tb", "100%", "x\ny\r", "%09"] {
            assert_eq!(unescape_field(&escape_field(s)).unwrap(), s);
        }
        assert!(unescape_field("%zz").is_none());
        assert!(!escape_field("a\tb\nc").contains(['\t', '\n']));
    }

    #[test]
    fn filtration_drops_compiler_function() {
        let p = classified();
        let feats = extract_all(&p, &FeatureConfig::default());
        let names: Vec<&str> = feats.functions.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, vec!["main", "helper"]);
    }

    #[test]
    fn merged_equals_independent_sum() {
        let p = classified();
        let cfg = FeatureConfig::default();
        let feats = extract_all(&p, &cfg);
        let mut oracle = FeatureVector::default();
        for f in p.functions.iter().filter(|f| f.provenance == Provenance::User) {
            oracle.merge(&extract_opcode_ngrams(f, 4));
            oracle.merge(&extract_opcodes(f));
            oracle.merge(&extract_idioms(f, IdiomPolicy::WithWildcards));
            oracle.merge(&extract_graphlets(f, 3));
            oracle.merge(&extract_rfg_features(f, 4, &["cmp".into(), "test".into()]));
            oracle.merge(&extract_strings_constants(f));
            oracle.merge(&extract_call_features(f));
        }
        assert!(feats.merged.same_counts(&oracle));
        assert!(!oracle.is_empty());
    }

    #[test]
    fn one_user_one_compiler_merged_is_user_vector() {
        let mut p = classified();
        p.functions.remove(1);
        let cfg = FeatureConfig::default();
        let feats = extract_all(&p, &cfg);
        assert!(feats
            .merged
            .same_counts(&extract_function(&p.functions[0], &cfg)));
    }

    #[test]
    fn duplicate_user_functions_double() {
        let mut p = classified();
        p.functions.truncate(1);
        let cfg = FeatureConfig::default();
        let single = extract_all(&p, &cfg).merged;
        let mut twin = p.functions[0].clone();
        twin.name = "main2".into();
        p.functions.push(twin);
        let double = extract_all(&p, &cfg).merged;
        for (id, c) in single.iter() {
            assert_eq!(double.get(id), 2 * c);
        }
        assert_eq!(double.len(), single.len());
    }

    #[test]
    fn config_validation() {
        let mut cfg = FeatureConfig {
            ngram_n: 9,
            ..FeatureConfig::default()
        };
        assert_eq!(cfg.validate(), Err(FeatureError::NgramLength(9)));
        cfg.ngram_n = 4;
        cfg.graphlet_k = 6;
        assert_eq!(cfg.validate(), Err(FeatureError::GraphletSize(6)));
        cfg.graphlet_k = 3;
        cfg.rfg_window = 0;
        assert_eq!(cfg.validate(), Err(FeatureError::RfgWindow));
    }

    #[test]
    fn zero_counts_not_stored() {
        let mut v = FeatureVector::new("s");
        v.add(FeatureId::new(Family::Call, "x"), 0);
        assert!(v.is_empty());
    }
}
