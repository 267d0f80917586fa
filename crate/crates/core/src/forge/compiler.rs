//! Compiler-profile emulation: injected runtime helpers, prologue and
//! epilogue rewrites, and peephole substitutions.
//!
//! | tag | helpers | rewrites |
//! |-----|---------|----------|
//! | `profile-a` | `_start`, `__libc_csu_init` | none |
//! | `profile-b` | `__security_init_cookie`, `__chkstk`, `_RTC_CheckEsp` | aligned frames, `leave` epilogues |
//! | `profile-c` | `__intel_cpu_features_init`, `__intel_fast_memset` | zeroing and self-test peepholes |

use rand::Rng;

use super::transform::REWRITES;
use super::{rng_for, ForgeError, Template};
use crate::model::{BasicBlock, Function, Instruction, MemoryRef, Operand, Program};

/// Replaces `find` with `replace` at the start of the entry block, or, for
/// epilogue rules, immediately before a trailing `ret`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRule {
    pub name: &'static str,
    pub epilogue: bool,
    pub find: Vec<Template>,
    pub replace: Vec<Template>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompilerProfile {
    pub tag: String,
    /// Helper bodies; addresses are offsets and are rebased on injection.
    pub helpers: Vec<Function>,
    pub frame_rules: Vec<FrameRule>,
    /// Names of [`REWRITES`] entries applied at every site.
    pub peepholes: Vec<&'static str>,
}

fn t(m: &str, ops: Vec<Operand>) -> Template {
    Template::new(m, ops)
}

fn r(n: &str) -> Operand {
    Operand::reg(n)
}

fn i(v: i64) -> Operand {
    Operand::Immediate(v)
}

fn l(n: &str) -> Operand {
    Operand::Label(n.to_string())
}

fn mem(base: &str, disp: i64) -> Operand {
    Operand::Memory(MemoryRef {
        base: Some(base.to_string()),
        index: None,
        disp: Some(disp),
    })
}

fn helper(name: &str, body: Vec<Template>) -> Function {
    let ins = body.iter().enumerate().map(|(k, t)| t.at(4 * k as u64)).collect();
    Function::new(name, vec![BasicBlock::new("b0", ins)])
}

fn ebp_frame() -> Vec<Template> {
    vec![t("push", vec![r("ebp")]), t("mov", vec![r("ebp"), r("esp")])]
}

impl CompilerProfile {
    pub const TAGS: [&'static str; 3] = ["profile-a", "profile-b", "profile-c"];

    pub fn preset(tag: &str) -> Result<CompilerProfile, ForgeError> {
        let tag = tag.to_ascii_lowercase();
        let p = match tag.as_str() {
            "profile-a" => CompilerProfile {
                tag,
                helpers: vec![
                    helper(
                        "_start",
                        vec![
                            t("endbr32", vec![]),
                            t("xor", vec![r("ebp"), r("ebp")]),
                            t("pop", vec![r("esi")]),
                            t("mov", vec![r("ecx"), r("esp")]),
                            t("and", vec![r("esp"), i(-16)]),
                            t("push", vec![r("eax")]),
                            t("call", vec![l("__libc_start_main")]),
                            t("hlt", vec![]),
                        ],
                    ),
                    helper(
                        "__libc_csu_init",
                        vec![
                            t("endbr32", vec![]),
                            t("push", vec![r("ebp")]),
                            t("push", vec![r("edi")]),
                            t("push", vec![r("esi")]),
                            t("push", vec![r("ebx")]),
                            t("call", vec![l("_init")]),
                            t("pop", vec![r("ebx")]),
                            t("pop", vec![r("esi")]),
                            t("pop", vec![r("edi")]),
                            t("pop", vec![r("ebp")]),
                            t("ret", vec![]),
                        ],
                    ),
                ],
                frame_rules: vec![],
                peepholes: vec![],
            },
            "profile-b" => CompilerProfile {
                tag,
                helpers: vec![
                    helper(
                        "__security_init_cookie",
                        vec![
                            t("rdtsc", vec![]),
                            t("xor", vec![r("eax"), r("edx")]),
                            t("mov", vec![mem("ebp", -4), r("eax")]),
                            t("ret", vec![]),
                        ],
                    ),
                    helper(
                        "__chkstk",
                        vec![
                            t("lfence", vec![]),
                            t("sub", vec![r("esp"), r("eax")]),
                            t("test", vec![mem("esp", 0), r("eax")]),
                            t("ret", vec![]),
                        ],
                    ),
                    helper(
                        "_RTC_CheckEsp",
                        vec![t("int3", vec![]), t("ret", vec![])],
                    ),
                ],
                frame_rules: vec![
                    FrameRule {
                        name: "aligned-frame",
                        epilogue: false,
                        find: ebp_frame(),
                        replace: {
                            let mut v = ebp_frame();
                            v.push(t("and", vec![r("esp"), i(-16)]));
                            v
                        },
                    },
                    FrameRule {
                        name: "leave-epilogue",
                        epilogue: true,
                        find: vec![t("mov", vec![r("esp"), r("ebp")]), t("pop", vec![r("ebp")])],
                        replace: vec![t("leave", vec![])],
                    },
                ],
                peepholes: vec![],
            },
            "profile-c" => CompilerProfile {
                tag,
                helpers: vec![
                    helper(
                        "__intel_cpu_features_init",
                        vec![
                            t("cpuid", vec![]),
                            t("mov", vec![mem("ebp", -8), r("ebx")]),
                            t("ret", vec![]),
                        ],
                    ),
                    helper(
                        "__intel_fast_memset",
                        vec![
                            t("stmxcsr", vec![mem("esp", 4)]),
                            t("mov", vec![r("edi"), mem("esp", 8)]),
                            t("ret", vec![]),
                        ],
                    ),
                ],
                frame_rules: vec![],
                peepholes: vec!["xor-zero-to-sub", "test-self-to-or", "shl-to-sal"],
            },
            _ => return Err(ForgeError::UnknownProfile(tag)),
        };
        Ok(p)
    }
}

fn matches(window: &[Instruction], find: &[Template]) -> bool {
    window.len() == find.len()
        && window
            .iter()
            .zip(find)
            .all(|(i, t)| i.mnemonic == t.mnemonic && i.operands == t.operands)
}

fn splice_templates(block: &mut BasicBlock, at: usize, len: usize, replace: &[Template]) {
    let addr = block.instructions[at].address;
    let new: Vec<Instruction> = replace.iter().map(|t| t.at(addr)).collect();
    block.instructions.splice(at..at + len, new);
}

fn apply_frame_rule(f: &mut Function, rule: &FrameRule) -> bool {
    let n = rule.find.len();
    let mut changed = false;
    if rule.epilogue {
        for b in &mut f.blocks {
            let len = b.instructions.len();
            if len > n && b.instructions[len - 1].mnemonic == "ret" && matches(&b.instructions[len - 1 - n..len - 1], &rule.find) {
                splice_templates(b, len - 1 - n, n, &rule.replace);
                changed = true;
            }
        }
    } else {
        let entry = &mut f.blocks[0];
        if entry.instructions.len() >= n && matches(&entry.instructions[..n], &rule.find) {
            splice_templates(entry, 0, n, &rule.replace);
            changed = true;
        }
    }
    changed
}

fn apply_peepholes(f: &mut Function, names: &[&str]) -> bool {
    let rules: Vec<_> = REWRITES.iter().filter(|r| names.contains(&r.name)).collect();
    let mut changed = false;
    for b in &mut f.blocks {
        let mut k = 0;
        while k < b.instructions.len() {
            let hit = rules.iter().find_map(|r| r.apply(&b.instructions[k..]).map(|out| (r.width, out)));
            match hit {
                Some((width, out)) => {
                    let addr = b.instructions[k].address;
                    let n = out.len();
                    let new: Vec<Instruction> = out.into_iter().map(|(m, ops)| Instruction::new(addr, m, ops)).collect();
                    b.instructions.splice(k..k + width, new);
                    k += n;
                    changed = true;
                }
                None => k += 1,
            }
        }
    }
    changed
}

/// Emulates compiling `p` under `cp`: rewrites every existing function, then
/// injects the helpers (skipping names already present) at seeded positions.
pub fn apply_compiler_profile(p: &Program, cp: &CompilerProfile, seed: u64) -> Program {
    let mut out = p.clone();
    for f in &mut out.functions {
        let mut changed = false;
        for rule in &cp.frame_rules {
            changed |= apply_frame_rule(f, rule);
        }
        changed |= apply_peepholes(f, &cp.peepholes);
        if changed {
            f.relayout(4);
        }
    }
    let mut rng = rng_for(&[seed, cp.tag.len() as u64, out.functions.len() as u64]);
    let mut base = out
        .functions
        .iter()
        .flat_map(|f| f.instructions())
        .map(|i| i.address)
        .max()
        .map_or(0x1000, |m| (m + 0x100) & !0xFF);
    for h in &cp.helpers {
        if out.function(&h.name).is_some() {
            continue;
        }
        let mut h = h.clone();
        for b in &mut h.blocks {
            for ins in &mut b.instructions {
                ins.address += base;
            }
        }
        base = (h.instructions().map(|i| i.address).max().unwrap_or(base) + 0x100) & !0xFF;
        let pos = rng.gen_range(0..=out.functions.len());
        out.functions.insert(pos, h);
    }
    out.meta.compiler = Some(cp.tag.clone());
    out
}

/// A statically linked library routine recognized by the default signatures.
pub fn library_function(name: &str, variant: usize) -> Function {
    let body = if variant % 2 == 0 {
        vec![
            t("cld", vec![]),
            t("mov", vec![r("esi"), mem("esp", 8)]),
            t("mov", vec![r("edi"), mem("esp", 4)]),
            t("rep movsb", vec![]),
            t("ret", vec![]),
        ]
    } else {
        vec![
            t("fninit", vec![]),
            t("fld", vec![mem("esp", 4)]),
            t("fsqrt", vec![]),
            t("ret", vec![]),
        ]
    };
    helper(name, body)
}
