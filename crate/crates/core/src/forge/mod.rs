//! Synthetic author-styled corpora.
//!
//! Each author is a [`StyleProfile`]: weighted preferences over mnemonics,
//! registers, three-instruction habits, branch shapes, strings, constants,
//! call targets and function prologues. A profile is a mixture of a shared
//! baseline and the author's own preferences; `style_strength` is the weight
//! of the author's own part, so at strength 0 every author draws from the
//! same distribution.
//!
//! Programs are emitted directly in the program model and can be written
//! out as listings. [`transform`] holds the evasion rewrites and
//! [`compiler`] the compiler-profile emulation.

pub mod compiler;
mod manifest;
pub mod transform;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{BasicBlock, EdgeKind, Function, Instruction, MemoryRef, ModelError, Operand, Program};

pub use compiler::{apply_compiler_profile, library_function, CompilerProfile};
pub use manifest::{CorpusManifest, ManifestEntry};
pub use transform::{apply_transform, Transform, TransformKind};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ForgeError {
    #[error("profile `{author}` is degenerate: {reason}")]
    DegenerateProfile { author: String, reason: String },
    #[error("at least 2 style profiles are required, got {0}")]
    TooFewProfiles(usize),
    #[error("at least 2 programs per author are required, got {0}")]
    TooFewPrograms(usize),
    #[error("invalid size range {name}: {lo}..={hi}")]
    Range { name: &'static str, lo: usize, hi: usize },
    #[error("intensity {0} outside [0, 1]")]
    Intensity(f64),
    #[error("unknown transform `{0}`")]
    UnknownTransform(String),
    #[error("unknown compiler profile `{0}`")]
    UnknownProfile(String),
    #[error("transform produced an invalid program: {0}")]
    Invalid(#[from] ModelError),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
}

pub(crate) const BODY_MNEMONICS: [&str; 24] = [
    "mov", "add", "sub", "xor", "and", "or", "lea", "push", "pop", "inc", "dec", "shl", "shr", "sar",
    "imul", "movzx", "neg", "not", "adc", "sbb", "xchg", "bt", "rol", "ror",
];

pub(crate) const GPRS: [&str; 6] = ["eax", "ebx", "ecx", "edx", "esi", "edi"];

const JUMPS: [&str; 10] = ["je", "jne", "jl", "jg", "jle", "jge", "jb", "ja", "jz", "jnz"];

const COMPARES: [&str; 2] = ["cmp", "test"];

const APIS: [&str; 48] = [
    "CreateFileA", "ReadFile", "WriteFile", "CloseHandle", "GetProcAddress", "LoadLibraryA",
    "VirtualAlloc", "VirtualFree", "GetModuleHandleA", "Sleep", "GetTickCount", "CreateThread",
    "WaitForSingleObject", "RegOpenKeyExA", "RegSetValueExA", "RegCloseKey", "InternetOpenA",
    "InternetReadFile", "send", "recv", "socket", "connect", "malloc", "free", "calloc", "realloc",
    "memcpy", "memset", "strlen", "strcmp", "strcpy", "sprintf", "printf", "fopen", "fclose",
    "fread", "fwrite", "qsort", "atoi", "rand", "srand", "time", "exit", "puts", "getenv",
    "MessageBoxA", "ExitProcess", "lstrcatA",
];

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "ze", "qu", "ba", "do", "fi", "gu", "he", "ju",
];

fn mnemonic_arity(m: &str) -> usize {
    match m {
        "push" | "pop" | "inc" | "dec" | "neg" | "not" => 1,
        _ => 2,
    }
}

/// Deterministic 64-bit mixer used to derive independent RNG streams.
pub(crate) fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        // splitmix64 finalizer
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

pub(crate) fn rng_for(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(parts))
}

pub(crate) fn pick<'a, T>(items: &'a [(T, f64)], rng: &mut impl Rng) -> &'a T {
    let total: f64 = items.iter().map(|(_, w)| w).sum();
    let mut x = rng.gen::<f64>() * total;
    for (item, w) in items {
        if x < *w {
            return item;
        }
        x -= w;
    }
    &items[items.len() - 1].0
}

fn normalize<T>(items: &mut [(T, f64)]) {
    let total: f64 = items.iter().map(|(_, w)| w).sum();
    if total > 0.0 {
        items.iter_mut().for_each(|(_, w)| *w /= total);
    }
}

/// `(1 - s) * shared + s * own`, merging equal items.
fn mixture<T: Clone + PartialEq>(shared: &[(T, f64)], own: &[(T, f64)], s: f64) -> Vec<(T, f64)> {
    let mut out: Vec<(T, f64)> = Vec::new();
    for (items, weight) in [(shared, 1.0 - s), (own, s)] {
        if weight <= 0.0 {
            continue;
        }
        let total: f64 = items.iter().map(|(_, w)| w).sum();
        for (item, w) in items {
            let w = weight * w / total;
            match out.iter_mut().find(|(i, _)| i == item) {
                Some((_, acc)) => *acc += w,
                None => out.push((item.clone(), w)),
            }
        }
    }
    normalize(&mut out);
    out
}

/// A concrete instruction shape without an address.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub mnemonic: String,
    pub operands: Vec<Operand>,
}

impl Template {
    fn new(mnemonic: &str, operands: Vec<Operand>) -> Self {
        Template {
            mnemonic: mnemonic.to_string(),
            operands,
        }
    }

    fn at(&self, address: u64) -> Instruction {
        Instruction::new(address, &self.mnemonic, self.operands.clone())
    }
}

/// Prologue and matching epilogue shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameStyle {
    EbpFrame,
    EbpSaveRegs,
    EspOnly,
    SaveRegs,
    AlignedFrame,
    Enter,
}

impl FrameStyle {
    const ALL: [FrameStyle; 6] = [
        FrameStyle::EbpFrame,
        FrameStyle::EbpSaveRegs,
        FrameStyle::EspOnly,
        FrameStyle::SaveRegs,
        FrameStyle::AlignedFrame,
        FrameStyle::Enter,
    ];

    fn prologue(self, frame: i64) -> Vec<Template> {
        let r = Operand::reg;
        let i = Operand::Immediate;
        match self {
            FrameStyle::EbpFrame => vec![
                Template::new("push", vec![r("ebp")]),
                Template::new("mov", vec![r("ebp"), r("esp")]),
                Template::new("sub", vec![r("esp"), i(frame)]),
            ],
            FrameStyle::EbpSaveRegs => vec![
                Template::new("push", vec![r("ebp")]),
                Template::new("mov", vec![r("ebp"), r("esp")]),
                Template::new("push", vec![r("ebx")]),
                Template::new("push", vec![r("esi")]),
            ],
            FrameStyle::EspOnly => vec![
                Template::new("sub", vec![r("esp"), i(frame)]),
                Template::new("push", vec![r("ebx")]),
            ],
            FrameStyle::SaveRegs => vec![
                Template::new("push", vec![r("ebx")]),
                Template::new("push", vec![r("esi")]),
                Template::new("push", vec![r("edi")]),
            ],
            FrameStyle::AlignedFrame => vec![
                Template::new("push", vec![r("ebp")]),
                Template::new("mov", vec![r("ebp"), r("esp")]),
                Template::new("and", vec![r("esp"), i(-8)]),
                Template::new("sub", vec![r("esp"), i(frame)]),
            ],
            FrameStyle::Enter => vec![Template::new("enter", vec![i(frame), i(0)])],
        }
    }

    fn epilogue(self, frame: i64) -> Vec<Template> {
        let r = Operand::reg;
        match self {
            FrameStyle::EbpFrame => vec![
                Template::new("mov", vec![r("esp"), r("ebp")]),
                Template::new("pop", vec![r("ebp")]),
                Template::new("ret", vec![]),
            ],
            FrameStyle::EbpSaveRegs => vec![
                Template::new("pop", vec![r("esi")]),
                Template::new("pop", vec![r("ebx")]),
                Template::new("pop", vec![r("ebp")]),
                Template::new("ret", vec![]),
            ],
            FrameStyle::EspOnly => vec![
                Template::new("pop", vec![r("ebx")]),
                Template::new("add", vec![r("esp"), Operand::Immediate(frame)]),
                Template::new("ret", vec![]),
            ],
            FrameStyle::SaveRegs => vec![
                Template::new("pop", vec![r("edi")]),
                Template::new("pop", vec![r("esi")]),
                Template::new("pop", vec![r("ebx")]),
                Template::new("ret", vec![]),
            ],
            FrameStyle::AlignedFrame | FrameStyle::Enter => {
                vec![Template::new("leave", vec![]), Template::new("ret", vec![])]
            }
        }
    }
}

/// Generative parameters of one synthetic author.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleProfile {
    pub author: String,
    pub mnemonics: Vec<(String, f64)>,
    pub registers: Vec<(String, f64)>,
    /// Favored three-instruction sequences.
    pub habits: Vec<([Template; 3], f64)>,
    /// Chance that a body step emits a habit instead of a single instruction.
    pub habit_rate: f64,
    /// Chance that a non-final block ends in a conditional branch.
    pub cond_branch: f64,
    pub compares: Vec<(String, f64)>,
    pub jumps: Vec<(String, f64)>,
    pub strings: Vec<(String, f64)>,
    pub constants: Vec<(i64, f64)>,
    pub calls: Vec<(String, f64)>,
    pub frames: Vec<(FrameStyle, f64)>,
    pub frame_sizes: Vec<(i64, f64)>,
    /// Author-specific constant planted in unnamed functions when the corpus
    /// asks for a naming artifact.
    pub marker: i64,
}

fn weights<T: Clone>(items: &[T], rng: &mut impl Rng, sharpness: f64) -> Vec<(T, f64)> {
    let mut out: Vec<(T, f64)> = items
        .iter()
        .map(|x| (x.clone(), rng.gen::<f64>().powf(sharpness) + 1e-3))
        .collect();
    normalize(&mut out);
    out
}

fn uniform<T: Clone>(items: &[T]) -> Vec<(T, f64)> {
    let w = 1.0 / items.len() as f64;
    items.iter().map(|x| (x.clone(), w)).collect()
}

fn word(rng: &mut impl Rng, syllables: usize) -> String {
    (0..syllables).map(|_| *SYLLABLES.choose(rng).unwrap()).collect()
}

/// Raw ingredients of one side of the mixture.
struct Palette {
    mnemonics: Vec<(String, f64)>,
    registers: Vec<(String, f64)>,
    habits: Vec<([Template; 3], f64)>,
    cond_branch: f64,
    compares: Vec<(String, f64)>,
    jumps: Vec<(String, f64)>,
    strings: Vec<(String, f64)>,
    constants: Vec<(i64, f64)>,
    calls: Vec<(String, f64)>,
    frames: Vec<(FrameStyle, f64)>,
    frame_sizes: Vec<(i64, f64)>,
}

fn sample_template(
    mnemonics: &[(String, f64)],
    registers: &[(String, f64)],
    constants: &[(i64, f64)],
    rng: &mut impl Rng,
) -> Template {
    let m = pick(mnemonics, rng).clone();
    let reg = |rng: &mut ChaCha8Rng| Operand::Register(pick(registers, rng).clone());
    let mut local = ChaCha8Rng::seed_from_u64(rng.gen());
    let operands = match (m.as_str(), mnemonic_arity(&m)) {
        (_, 1) => vec![reg(&mut local)],
        ("lea", _) => vec![
            reg(&mut local),
            Operand::Memory(MemoryRef {
                base: Some(pick(registers, &mut local).clone()),
                index: None,
                disp: Some(4 * local.gen_range(1..16)),
            }),
        ],
        _ => {
            let dst = reg(&mut local);
            let src = match local.gen_range(0..10) {
                0..=4 => reg(&mut local),
                5..=7 => Operand::Immediate(*pick(constants, &mut local)),
                _ => Operand::Memory(MemoryRef {
                    base: Some("ebp".into()),
                    index: None,
                    disp: Some(-4 * local.gen_range(1..12)),
                }),
            };
            vec![dst, src]
        }
    };
    Template { mnemonic: m, operands }
}

impl Palette {
    fn shared(seed: u64) -> Palette {
        let mut rng = rng_for(&[seed, 0x5AA5]);
        let mnemonics = uniform(&BODY_MNEMONICS.map(String::from));
        let registers = uniform(&GPRS.map(String::from));
        let constants: Vec<(i64, f64)> = uniform(&[0, 1, 2, 4, 8, 16, 255, -1]);
        let habits = (0..16)
            .map(|_| {
                let t = [(); 3].map(|_| sample_template(&mnemonics, &registers, &constants, &mut rng));
                (t, 1.0 / 16.0)
            })
            .collect();
        let strings: Vec<String> = (0..12).map(|_| word(&mut rng, 3)).collect();
        Palette {
            mnemonics,
            registers,
            habits,
            cond_branch: 0.5,
            compares: uniform(&COMPARES.map(String::from)),
            jumps: uniform(&JUMPS.map(String::from)),
            strings: uniform(&strings),
            constants,
            calls: uniform(&APIS.map(String::from)),
            frames: uniform(&FrameStyle::ALL),
            frame_sizes: uniform(&[16, 32, 64]),
        }
    }

    fn own(seed: u64, index: u64) -> Palette {
        let mut rng = rng_for(&[seed, 0xA17, index]);
        let mnemonics = weights(&BODY_MNEMONICS.map(String::from), &mut rng, 4.0);
        let registers = weights(&GPRS.map(String::from), &mut rng, 3.0);
        let constants: Vec<(i64, f64)> = (0..5)
            .map(|_| (rng.gen_range(2..5000) as i64, 0.2))
            .collect();
        let habits = (0..6)
            .map(|_| {
                let t = [(); 3].map(|_| sample_template(&mnemonics, &registers, &constants, &mut rng));
                (t, 1.0 / 6.0)
            })
            .collect();
        let strings: Vec<(String, f64)> = (0..5)
            .map(|_| (format!("{}_{}", word(&mut rng, 2), word(&mut rng, 3)), 0.2))
            .collect();
        let mut apis = APIS.to_vec();
        apis.shuffle(&mut rng);
        let calls = weights(&apis[..6].iter().map(|s| s.to_string()).collect::<Vec<_>>(), &mut rng, 1.0);
        let frame = *FrameStyle::ALL.choose(&mut rng).unwrap();
        let size = 4 * rng.gen_range(3..40) as i64;
        Palette {
            mnemonics,
            registers,
            habits,
            cond_branch: rng.gen_range(0.2..0.8),
            compares: weights(&COMPARES.map(String::from), &mut rng, 3.0),
            jumps: weights(&JUMPS.map(String::from), &mut rng, 3.0),
            strings,
            constants,
            calls,
            frames: vec![(frame, 1.0)],
            frame_sizes: vec![(size, 1.0)],
        }
    }
}

impl StyleProfile {
    /// Mixes the corpus-wide baseline with the author's own palette.
    pub fn derive(author: &str, index: u64, strength: f64, seed: u64) -> StyleProfile {
        let s = strength.clamp(0.0, 1.0);
        let shared = Palette::shared(seed);
        let own = Palette::own(seed, index);
        StyleProfile {
            author: author.to_string(),
            mnemonics: mixture(&shared.mnemonics, &own.mnemonics, s),
            registers: mixture(&shared.registers, &own.registers, s),
            habits: mixture(&shared.habits, &own.habits, s),
            habit_rate: 0.3,
            cond_branch: (1.0 - s) * shared.cond_branch + s * own.cond_branch,
            compares: mixture(&shared.compares, &own.compares, s),
            jumps: mixture(&shared.jumps, &own.jumps, s),
            strings: mixture(&shared.strings, &own.strings, s),
            constants: mixture(&shared.constants, &own.constants, s),
            calls: mixture(&shared.calls, &own.calls, s),
            frames: mixture(&shared.frames, &own.frames, s),
            frame_sizes: mixture(&shared.frame_sizes, &own.frame_sizes, s),
            marker: 100_000 + 7919 * index as i64,
        }
    }

    pub fn validate(&self) -> Result<(), ForgeError> {
        let bad = |reason: &str| ForgeError::DegenerateProfile {
            author: self.author.clone(),
            reason: reason.to_string(),
        };
        if self.habits.is_empty() {
            return Err(bad("habit set is empty"));
        }
        fn sums_to_one<T>(items: &[(T, f64)]) -> bool {
            !items.is_empty()
                && items.iter().all(|(_, w)| *w >= 0.0)
                && (items.iter().map(|(_, w)| w).sum::<f64>() - 1.0).abs() < 1e-9
        }
        let dists = [
            ("mnemonics", sums_to_one(&self.mnemonics)),
            ("registers", sums_to_one(&self.registers)),
            ("habits", sums_to_one(&self.habits)),
            ("compares", sums_to_one(&self.compares)),
            ("jumps", sums_to_one(&self.jumps)),
            ("strings", sums_to_one(&self.strings)),
            ("constants", sums_to_one(&self.constants)),
            ("calls", sums_to_one(&self.calls)),
            ("frames", sums_to_one(&self.frames)),
            ("frame sizes", sums_to_one(&self.frame_sizes)),
        ];
        if let Some((name, _)) = dists.iter().find(|(_, ok)| !ok) {
            return Err(bad(&format!("{name} distribution does not sum to 1")));
        }
        for (p, name) in [(self.habit_rate, "habit rate"), (self.cond_branch, "branch probability")] {
            if !(0.0..=1.0).contains(&p) {
                return Err(bad(&format!("{name} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Author labels `a000`, `a001`, ...
pub fn author_label(index: usize) -> String {
    format!("a{index:03}")
}

/// `count` profiles sharing one baseline.
pub fn forge_profiles(count: usize, style_strength: f64, seed: u64) -> Vec<StyleProfile> {
    (0..count)
        .map(|i| StyleProfile::derive(&author_label(i), i as u64, style_strength, seed))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForgeParams {
    pub programs_per_author: usize,
    /// When set, extra programs beyond `authors * programs_per_author` are
    /// dealt round-robin over authors.
    pub total_programs: Option<usize>,
    pub functions: (usize, usize),
    pub blocks: (usize, usize),
    pub instructions: (usize, usize),
    /// Share of functions given disassembler-style `sub_XXXX` names.
    pub unnamed_fraction: f64,
    /// Plant each author's marker constant in their unnamed functions.
    pub unnamed_marker: bool,
    pub seed: u64,
}

impl Default for ForgeParams {
    fn default() -> Self {
        ForgeParams {
            programs_per_author: 8,
            total_programs: None,
            functions: (3, 6),
            blocks: (1, 6),
            instructions: (2, 8),
            unnamed_fraction: 0.0,
            unnamed_marker: false,
            seed: 0,
        }
    }
}

impl ForgeParams {
    /// Large corpus shape: 179 authors, 736 programs and about 46k functions.
    pub fn large_scale(seed: u64) -> (usize, ForgeParams) {
        (
            179,
            ForgeParams {
                programs_per_author: 4,
                total_programs: Some(736),
                functions: (40, 85),
                blocks: (1, 4),
                instructions: (2, 6),
                seed,
                ..ForgeParams::default()
            },
        )
    }

    fn validate(&self) -> Result<(), ForgeError> {
        if self.programs_per_author < 2 {
            return Err(ForgeError::TooFewPrograms(self.programs_per_author));
        }
        for (name, (lo, hi)) in [
            ("functions", self.functions),
            ("blocks", self.blocks),
            ("instructions", self.instructions),
        ] {
            if lo == 0 || lo > hi {
                return Err(ForgeError::Range { name, lo, hi });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub programs: Vec<Program>,
    pub manifest: CorpusManifest,
}

struct Emitter<'a, R: Rng> {
    profile: &'a StyleProfile,
    rng: &'a mut R,
    address: u64,
}

impl<R: Rng> Emitter<'_, R> {
    fn emit(&mut self, t: &Template) -> Instruction {
        let ins = t.at(self.address);
        self.address += self.rng.gen_range(1..=6);
        ins
    }

    fn body_step(&mut self, out: &mut Vec<Instruction>, marker: Option<i64>) {
        let p = self.profile;
        let roll = self.rng.gen::<f64>();
        if let Some(m) = marker.filter(|_| roll < 0.25) {
            let t = Template::new("mov", vec![Operand::reg("eax"), Operand::Immediate(m)]);
            out.push(self.emit(&t));
        } else if roll < 0.25 + p.habit_rate {
            let habit = pick(&p.habits, self.rng).clone();
            for t in &habit {
                out.push(self.emit(t));
            }
        } else if roll < 0.33 + p.habit_rate {
            let t = Template::new("call", vec![Operand::Label(pick(&p.calls, self.rng).clone())]);
            out.push(self.emit(&t));
        } else if roll < 0.40 + p.habit_rate {
            let t = Template::new("push", vec![Operand::StringRef(pick(&p.strings, self.rng).clone())]);
            out.push(self.emit(&t));
        } else {
            let t = sample_template(&p.mnemonics, &p.registers, &p.constants, self.rng);
            out.push(self.emit(&t));
        }
    }
}

fn span(rng: &mut impl Rng, (lo, hi): (usize, usize)) -> usize {
    rng.gen_range(lo..=hi)
}

/// One function drawn from a profile.
pub fn generate_function(
    profile: &StyleProfile,
    name: &str,
    base: u64,
    params: &ForgeParams,
    marker: Option<i64>,
    rng: &mut impl Rng,
) -> Function {
    let n_blocks = span(rng, params.blocks);
    let frame = *pick(&profile.frames, rng);
    let frame_size = *pick(&profile.frame_sizes, rng);
    let mut em = Emitter {
        profile,
        rng,
        address: base,
    };
    let mut blocks = Vec::with_capacity(n_blocks);
    for b in 0..n_blocks {
        let id = format!("b{b}");
        let mut ins = Vec::new();
        if b == 0 {
            for t in frame.prologue(frame_size) {
                ins.push(em.emit(&t));
            }
        }
        let steps = span(em.rng, params.instructions);
        for _ in 0..steps {
            em.body_step(&mut ins, marker);
        }
        let mut block = if b + 1 == n_blocks {
            for t in frame.epilogue(frame_size) {
                ins.push(em.emit(&t));
            }
            BasicBlock::new(&id, ins)
        } else {
            let next = format!("b{}", b + 1);
            if em.rng.gen::<f64>() < profile.cond_branch {
                let target = if b > 0 && em.rng.gen::<f64>() < 0.3 {
                    em.rng.gen_range(0..=b)
                } else {
                    em.rng.gen_range(b + 1..n_blocks)
                };
                let target = format!("b{target}");
                let cmp = pick(&profile.compares, em.rng).clone();
                let lhs = Operand::Register(pick(&profile.registers, em.rng).clone());
                let rhs = if cmp == "test" {
                    lhs.clone()
                } else {
                    Operand::Immediate(*pick(&profile.constants, em.rng))
                };
                ins.push(em.emit(&Template::new(&cmp, vec![lhs, rhs])));
                let jcc = pick(&profile.jumps, em.rng).clone();
                ins.push(em.emit(&Template::new(&jcc, vec![Operand::Label(target.clone())])));
                BasicBlock::new(&id, ins)
                    .with_edge(&target, EdgeKind::True)
                    .with_edge(&next, EdgeKind::False)
            } else {
                if em.rng.gen::<bool>() {
                    ins.push(em.emit(&Template::new("jmp", vec![Operand::Label(next.clone())])));
                }
                BasicBlock::new(&id, ins).with_edge(&next, EdgeKind::Uncond)
            }
        };
        if block.instructions.is_empty() {
            block.instructions.push(em.emit(&Template::new("nop", vec![])));
        }
        blocks.push(block);
    }
    Function::new(name, blocks)
}

fn generate_program(
    profile: &StyleProfile,
    id: &str,
    params: &ForgeParams,
    rng: &mut impl Rng,
) -> Program {
    let n_funcs = span(rng, params.functions);
    let mut unnamed: Vec<bool> = (0..n_funcs)
        .map(|_| rng.gen::<f64>() < params.unnamed_fraction)
        .collect();
    if params.unnamed_fraction > 0.0 && !unnamed.iter().any(|&u| u) {
        let i = rng.gen_range(0..n_funcs);
        unnamed[i] = true;
    }
    let mut functions = Vec::with_capacity(n_funcs);
    let mut base: u64 = 0x401000;
    for (i, &is_unnamed) in unnamed.iter().enumerate() {
        let name = if is_unnamed {
            format!("sub_{base:X}")
        } else {
            format!("{}_{i}", word(rng, 2))
        };
        let marker = (is_unnamed && params.unnamed_marker).then_some(profile.marker);
        let f = generate_function(profile, &name, base, params, marker, rng);
        let end = f.instructions().last().map_or(base, |i| i.address);
        base = (end + 0x10) & !0xF;
        functions.push(f);
    }
    let mut p = Program::new(id, Some(&profile.author), functions);
    p.meta.source = Some("forge".into());
    p
}

/// Draws `programs_per_author` programs from every profile. Output order is
/// author-major and fully determined by `params.seed`.
pub fn generate_corpus(profiles: &[StyleProfile], params: &ForgeParams) -> Result<Corpus, ForgeError> {
    if profiles.len() < 2 {
        return Err(ForgeError::TooFewProfiles(profiles.len()));
    }
    params.validate()?;
    for p in profiles {
        p.validate()?;
    }
    let mut counts = vec![params.programs_per_author; profiles.len()];
    if let Some(total) = params.total_programs {
        let base: usize = counts.iter().sum();
        for i in 0..total.saturating_sub(base) {
            counts[i % profiles.len()] += 1;
        }
    }
    let mut programs = Vec::new();
    for (a, (profile, &count)) in profiles.iter().zip(&counts).enumerate() {
        for j in 0..count {
            let mut rng = rng_for(&[params.seed, a as u64, j as u64]);
            let id = format!("{}-p{j:02}", profile.author);
            programs.push(generate_program(profile, &id, params, &mut rng));
        }
    }
    let manifest = CorpusManifest::for_corpus(params, profiles.len(), &programs);
    Ok(Corpus { programs, manifest })
}

/// Author label of every program.
pub fn ground_truth(programs: &[Program]) -> BTreeMap<String, String> {
    programs
        .iter()
        .filter_map(|p| p.author.clone().map(|a| (p.id.clone(), a)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_listing, write_listing};

    #[test]
    fn profiles_are_valid_distributions() {
        for s in [0.0, 0.5, 1.0] {
            for p in forge_profiles(4, s, 11) {
                p.validate().unwrap();
            }
        }
    }

    #[test]
    fn zero_strength_profiles_identical() {
        let ps = forge_profiles(3, 0.0, 5);
        assert_eq!(ps[0].mnemonics, ps[1].mnemonics);
        assert_eq!(ps[1].habits, ps[2].habits);
        assert_eq!(ps[0].calls, ps[2].calls);
        let strong = forge_profiles(2, 1.0, 5);
        assert_ne!(strong[0].mnemonics, strong[1].mnemonics);
    }

    #[test]
    fn degenerate_profile_rejected() {
        let mut p = forge_profiles(2, 0.5, 1);
        p[0].habits.clear();
        let err = generate_corpus(&p, &ForgeParams::default()).unwrap_err();
        assert!(matches!(err, ForgeError::DegenerateProfile { .. }));
    }

    #[test]
    fn parameter_checks() {
        let p = forge_profiles(2, 0.5, 1);
        assert_eq!(
            generate_corpus(&p[..1], &ForgeParams::default()).unwrap_err(),
            ForgeError::TooFewProfiles(1)
        );
        let params = ForgeParams {
            programs_per_author: 1,
            ..ForgeParams::default()
        };
        assert_eq!(generate_corpus(&p, &params).unwrap_err(), ForgeError::TooFewPrograms(1));
    }

    #[test]
    fn generated_programs_validate_and_round_trip() {
        let corpus = generate_corpus(&forge_profiles(3, 0.7, 2), &ForgeParams::default()).unwrap();
        assert_eq!(corpus.programs.len(), 24);
        for p in &corpus.programs {
            p.validate().unwrap();
            assert_eq!(&parse_listing(&write_listing(p)).unwrap(), p);
        }
    }

    #[test]
    fn seed_determinism() {
        let params = ForgeParams {
            seed: 99,
            ..ForgeParams::default()
        };
        let a = generate_corpus(&forge_profiles(2, 0.5, 99), &params).unwrap();
        let b = generate_corpus(&forge_profiles(2, 0.5, 99), &params).unwrap();
        assert_eq!(a, b);
        let c = generate_corpus(
            &forge_profiles(2, 0.5, 99),
            &ForgeParams {
                seed: 100,
                ..params
            },
        )
        .unwrap();
        assert_ne!(a.programs, c.programs);
    }

    #[test]
    fn unnamed_functions_carry_marker() {
        let params = ForgeParams {
            unnamed_fraction: 0.3,
            unnamed_marker: true,
            instructions: (6, 10),
            ..ForgeParams::default()
        };
        let profiles = forge_profiles(2, 0.5, 3);
        let corpus = generate_corpus(&profiles, &params).unwrap();
        for p in &corpus.programs {
            assert!(p.functions.iter().any(|f| crate::model::is_generated_name(&f.name)));
        }
        let marker = Operand::Immediate(profiles[0].marker);
        let named_with_marker = corpus.programs.iter().flat_map(|p| &p.functions).any(|f| {
            !crate::model::is_generated_name(&f.name)
                && f.instructions().any(|i| i.operands.contains(&marker))
        });
        assert!(!named_with_marker);
    }

    #[test]
    fn total_programs_distributed() {
        let params = ForgeParams {
            programs_per_author: 2,
            total_programs: Some(7),
            functions: (1, 1),
            ..ForgeParams::default()
        };
        let corpus = generate_corpus(&forge_profiles(3, 0.5, 1), &params).unwrap();
        assert_eq!(corpus.programs.len(), 7);
    }
}
