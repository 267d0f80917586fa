//! Assembly-level program model.
//!
//! A [`Program`] is a list of [`Function`]s, each a control-flow graph of
//! [`BasicBlock`]s holding [`Instruction`]s. Programs are read from and written
//! to a line-oriented listing format (see [`parse_listing`] and
//! [`write_listing`]) and annotated with function provenance by
//! [`classify_provenance`].

mod listing;
mod signature;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

pub use listing::{parse_listing, parse_listings, write_listing, ListingError};
pub use signature::{
    classify_provenance, is_generated_name, user_functions, Signature, SignatureError,
    SignatureSet, DEFAULT_SIGNATURES,
};

/// Maximum number of operands an instruction may carry.
pub const MAX_OPERANDS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MemoryRef {
    pub base: Option<String>,
    pub index: Option<String>,
    pub disp: Option<i64>,
}

impl MemoryRef {
    pub fn registers(&self) -> impl Iterator<Item = &str> {
        self.base.iter().chain(self.index.iter()).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Operand {
    Register(String),
    Immediate(i64),
    Memory(MemoryRef),
    Label(String),
    StringRef(String),
}

impl Operand {
    pub fn reg(name: &str) -> Self {
        Operand::Register(name.to_ascii_lowercase())
    }

    pub fn as_register(&self) -> Option<&str> {
        match self {
            Operand::Register(r) => Some(r),
            _ => None,
        }
    }

    /// Registers read or written through this operand, including address
    /// registers of memory operands.
    pub fn registers(&self) -> Vec<&str> {
        match self {
            Operand::Register(r) => vec![r.as_str()],
            Operand::Memory(m) => m.registers().collect(),
            _ => Vec::new(),
        }
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Register(r) => write!(f, "r:{r}"),
            Operand::Immediate(v) => write!(f, "i:{v}"),
            Operand::Memory(m) => {
                f.write_str("m:[")?;
                let mut first = true;
                for reg in m.registers() {
                    if !first {
                        f.write_str("+")?;
                    }
                    f.write_str(reg)?;
                    first = false;
                }
                if let Some(d) = m.disp {
                    if first {
                        write!(f, "{d}")?;
                    } else if d < 0 {
                        write!(f, "-{}", d.unsigned_abs())?;
                    } else {
                        write!(f, "+{d}")?;
                    }
                }
                f.write_str("]")
            }
            Operand::Label(s) => write!(f, "l:{s}"),
            Operand::StringRef(s) => {
                f.write_str("s:\"")?;
                for c in s.chars() {
                    match c {
                        '"' => f.write_str("\\\"")?,
                        '\\' => f.write_str("\\\\")?,
                        '\n' => f.write_str("\\n")?,
                        '\t' => f.write_str("\\t")?,
                        '\r' => f.write_str("\\r")?,
                        c => write!(f, "{c}")?,
                    }
                }
                f.write_str("\"")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub address: u64,
    pub mnemonic: String,
    pub operands: Vec<Operand>,
}

impl Instruction {
    pub fn new(address: u64, mnemonic: &str, operands: Vec<Operand>) -> Self {
        Instruction {
            address,
            mnemonic: mnemonic.to_ascii_lowercase(),
            operands,
        }
    }

    /// True for control transfers whose immediate operands are displacements
    /// rather than data (`j*` and `loop*` mnemonics).
    pub fn is_jump(&self) -> bool {
        self.mnemonic.starts_with('j') || self.mnemonic.starts_with("loop")
    }

    pub fn is_call(&self) -> bool {
        self.mnemonic == "call"
    }

    /// Operand text without the address, e.g. `mov r:eax,i:1`.
    pub fn render(&self) -> String {
        let mut s = self.mnemonic.clone();
        for (i, op) in self.operands.iter().enumerate() {
            s.push(if i == 0 { ' ' } else { ',' });
            s.push_str(&op.to_string());
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeKind {
    True,
    False,
    Uncond,
}

impl EdgeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::True => "true",
            EdgeKind::False => "false",
            EdgeKind::Uncond => "uncond",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "true" => Some(EdgeKind::True),
            "false" => Some(EdgeKind::False),
            "uncond" => Some(EdgeKind::Uncond),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Edge {
    pub target: String,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BasicBlock {
    pub id: String,
    pub instructions: Vec<Instruction>,
    pub successors: Vec<Edge>,
}

impl BasicBlock {
    pub fn new(id: &str, instructions: Vec<Instruction>) -> Self {
        BasicBlock {
            id: id.to_string(),
            instructions,
            successors: Vec::new(),
        }
    }

    pub fn with_edge(mut self, target: &str, kind: EdgeKind) -> Self {
        self.successors.push(Edge {
            target: target.to_string(),
            kind,
        });
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum Provenance {
    User,
    Library,
    Compiler,
    #[default]
    Unknown,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::User => "user",
            Provenance::Library => "library",
            Provenance::Compiler => "compiler",
            Provenance::Unknown => "unknown",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "user" => Some(Provenance::User),
            "library" => Some(Provenance::Library),
            "compiler" => Some(Provenance::Compiler),
            "unknown" => Some(Provenance::Unknown),
            _ => None,
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Function {
    pub name: String,
    /// Blocks in layout order. The first block is the entry.
    pub blocks: Vec<BasicBlock>,
    pub provenance: Provenance,
}

impl Function {
    pub fn new(name: &str, blocks: Vec<BasicBlock>) -> Self {
        Function {
            name: name.to_string(),
            blocks,
            provenance: Provenance::Unknown,
        }
    }

    pub fn entry(&self) -> &BasicBlock {
        &self.blocks[0]
    }

    pub fn block(&self, id: &str) -> Option<&BasicBlock> {
        self.blocks.iter().find(|b| b.id == id)
    }

    pub fn instructions(&self) -> impl Iterator<Item = &Instruction> {
        self.blocks.iter().flat_map(|b| b.instructions.iter())
    }

    pub fn instruction_count(&self) -> usize {
        self.blocks.iter().map(|b| b.instructions.len()).sum()
    }

    /// Mnemonics in layout order starting at the entry block.
    pub fn leading_mnemonics(&self, n: usize) -> Vec<&str> {
        self.instructions()
            .take(n)
            .map(|i| i.mnemonic.as_str())
            .collect()
    }

    /// Distinct strings and immediate constants referenced by the function.
    pub fn string_table(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for ins in self.instructions() {
            for op in &ins.operands {
                match op {
                    Operand::StringRef(s) => {
                        out.insert(s.clone());
                    }
                    Operand::Immediate(v) if !ins.is_jump() => {
                        out.insert(v.to_string());
                    }
                    _ => {}
                }
            }
        }
        out
    }

    /// Directed adjacency over block indices with edge labels dropped and
    /// parallel edges collapsed.
    pub fn adjacency(&self) -> Vec<BTreeSet<usize>> {
        let index: BTreeMap<&str, usize> = self
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id.as_str(), i))
            .collect();
        self.blocks
            .iter()
            .map(|b| {
                b.successors
                    .iter()
                    .filter_map(|e| index.get(e.target.as_str()).copied())
                    .collect()
            })
            .collect()
    }

    /// Reassigns instruction addresses in layout order, keeping the first
    /// address and a fixed stride.
    pub fn relayout(&mut self, stride: u64) {
        let mut addr = self
            .blocks
            .first()
            .and_then(|b| b.instructions.first())
            .map_or(0, |i| i.address);
        for block in &mut self.blocks {
            for ins in &mut block.instructions {
                ins.address = addr;
                addr += stride;
            }
        }
    }

    /// Checks the structural invariants of a well-formed function.
    pub fn validate(&self) -> Result<(), ModelError> {
        let fname = || self.name.clone();
        if self.blocks.is_empty() {
            return Err(ModelError::EmptyFunction(fname()));
        }
        let mut ids = BTreeSet::new();
        for b in &self.blocks {
            if !ids.insert(b.id.as_str()) {
                return Err(ModelError::DuplicateBlock {
                    function: fname(),
                    block: b.id.clone(),
                });
            }
        }
        for b in &self.blocks {
            if b.instructions.is_empty() {
                return Err(ModelError::EmptyBlock {
                    function: fname(),
                    block: b.id.clone(),
                });
            }
            for w in b.instructions.windows(2) {
                if w[1].address <= w[0].address {
                    return Err(ModelError::AddressOrder {
                        function: fname(),
                        block: b.id.clone(),
                        address: w[1].address,
                    });
                }
            }
            for ins in &b.instructions {
                if ins.mnemonic.is_empty() {
                    return Err(ModelError::EmptyMnemonic {
                        function: fname(),
                        block: b.id.clone(),
                    });
                }
                if ins.operands.len() > MAX_OPERANDS {
                    return Err(ModelError::TooManyOperands {
                        function: fname(),
                        address: ins.address,
                    });
                }
            }
            let mut seen_true = false;
            let mut seen_false = false;
            for e in &b.successors {
                if !ids.contains(e.target.as_str()) {
                    return Err(ModelError::DanglingEdge {
                        function: fname(),
                        from: b.id.clone(),
                        target: e.target.clone(),
                    });
                }
                let seen = match e.kind {
                    EdgeKind::True => &mut seen_true,
                    EdgeKind::False => &mut seen_false,
                    EdgeKind::Uncond => continue,
                };
                if *seen {
                    return Err(ModelError::DuplicateBranchEdge {
                        function: fname(),
                        block: b.id.clone(),
                        kind: e.kind,
                    });
                }
                *seen = true;
            }
        }
        let adj = self.adjacency();
        let mut reached = vec![false; self.blocks.len()];
        let mut queue = VecDeque::from([0usize]);
        reached[0] = true;
        while let Some(n) = queue.pop_front() {
            for &m in &adj[n] {
                if !reached[m] {
                    reached[m] = true;
                    queue.push_back(m);
                }
            }
        }
        if let Some(i) = reached.iter().position(|r| !r) {
            return Err(ModelError::UnreachableBlock {
                function: fname(),
                block: self.blocks[i].id.clone(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct ProgramMeta {
    pub source: Option<String>,
    pub compiler: Option<String>,
    /// Applied transforms, oldest first, e.g. `RR:1`.
    pub transforms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Program {
    pub id: String,
    pub author: Option<String>,
    pub functions: Vec<Function>,
    pub meta: ProgramMeta,
}

impl Program {
    pub fn new(id: &str, author: Option<&str>, functions: Vec<Function>) -> Self {
        Program {
            id: id.to_string(),
            author: author.map(str::to_string),
            functions,
            meta: ProgramMeta::default(),
        }
    }

    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn instruction_count(&self) -> usize {
        self.functions.iter().map(Function::instruction_count).sum()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.functions.is_empty() {
            return Err(ModelError::NoFunctions(self.id.clone()));
        }
        let mut names = BTreeSet::new();
        for f in &self.functions {
            if !names.insert(f.name.as_str()) {
                return Err(ModelError::DuplicateFunction(f.name.clone()));
            }
            f.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("program `{0}` has no functions")]
    NoFunctions(String),
    #[error("duplicate function name `{0}`")]
    DuplicateFunction(String),
    #[error("function `{0}` has no blocks")]
    EmptyFunction(String),
    #[error("function `{function}`: duplicate block id `{block}`")]
    DuplicateBlock { function: String, block: String },
    #[error("function `{function}`: block `{block}` has no instructions")]
    EmptyBlock { function: String, block: String },
    #[error("function `{function}`: block `{block}` has an empty mnemonic")]
    EmptyMnemonic { function: String, block: String },
    #[error("function `{function}`: address {address:#x} in block `{block}` does not increase")]
    AddressOrder {
        function: String,
        block: String,
        address: u64,
    },
    #[error("function `{function}`: instruction at {address:#x} has more than 4 operands")]
    TooManyOperands { function: String, address: u64 },
    #[error("function `{function}`: edge from `{from}` targets undeclared block `{target}`")]
    DanglingEdge {
        function: String,
        from: String,
        target: String,
    },
    #[error("function `{function}`: block `{block}` has more than one {} edge", kind.as_str())]
    DuplicateBranchEdge {
        function: String,
        block: String,
        kind: EdgeKind,
    },
    #[error("function `{function}`: block `{block}` is unreachable from the entry")]
    UnreachableBlock { function: String, block: String },
}
