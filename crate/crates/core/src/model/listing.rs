//! Line-oriented listing format.
//!
//! ```text
//! program <id> [author=<label>] [compiler=<tag>] [source=<tag>] [transforms=<t1>,<t2>]
//! function <name> [provenance=<class>]
//! block <block-id>
//!   <addr> <mnemonic> [operand{, operand}]
//! edge <src-block> <dst-block> (true|false|uncond)
//! end
//! ```
//!
//! `#` starts a comment outside string literals. Operands are `r:<reg>`,
//! `i:<int>`, `m:[base+index+disp]`, `l:<sym>` and `s:"text"`.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::{
    BasicBlock, Edge, EdgeKind, Function, Instruction, MemoryRef, ModelError, Operand, Program,
    ProgramMeta, Provenance, MAX_OPERANDS,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {kind}")]
pub struct ListingError {
    pub line: usize,
    pub kind: ListingErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ListingErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("edge targets undeclared block `{0}`")]
    DanglingEdge(String),
    #[error("edge source `{0}` is not a declared block")]
    UnknownEdgeSource(String),
    #[error("duplicate function name `{0}`")]
    DuplicateFunction(String),
    #[error("function `{0}` has no blocks")]
    EmptyFunction(String),
    #[error(transparent)]
    Invalid(#[from] ModelError),
}

fn syntax(line: usize, msg: impl Into<String>) -> ListingError {
    ListingError {
        line,
        kind: ListingErrorKind::Syntax(msg.into()),
    }
}

/// Parses a document holding exactly one program.
pub fn parse_listing(text: &str) -> Result<Program, ListingError> {
    let mut programs = parse_listings(text)?;
    match programs.len() {
        1 => Ok(programs.pop().unwrap()),
        0 => Err(syntax(1, "document contains no program")),
        _ => Err(syntax(
            line_of_second_program(text),
            "document contains more than one program",
        )),
    }
}

fn line_of_second_program(text: &str) -> usize {
    text.lines()
        .enumerate()
        .filter(|(_, l)| strip_comment(l).trim_start().starts_with("program"))
        .nth(1)
        .map_or(1, |(i, _)| i + 1)
}

/// Parses a document holding any number of consecutive programs.
pub fn parse_listings(text: &str) -> Result<Vec<Program>, ListingError> {
    let mut parser = Parser::default();
    for (i, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        parser.line(i + 1, line)?;
    }
    parser.finish(text.lines().count().max(1))
}

/// Removes a trailing `#` comment, ignoring `#` inside string literals.
fn strip_comment(line: &str) -> &str {
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        if in_str {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_str = false;
            }
        } else if c == '"' {
            in_str = true;
        } else if c == '#' {
            return &line[..i];
        }
    }
    line
}

struct OpenFunction {
    function: Function,
    line: usize,
    edges: Vec<(usize, String, Edge)>,
}

#[derive(Default)]
struct Parser {
    done: Vec<Program>,
    program: Option<(Program, BTreeSet<String>)>,
    function: Option<OpenFunction>,
}

impl Parser {
    fn line(&mut self, no: usize, line: &str) -> Result<(), ListingError> {
        let (keyword, rest) = match line.split_once(char::is_whitespace) {
            Some((k, r)) => (k, r.trim()),
            None => (line, ""),
        };
        match keyword {
            "program" => self.program_line(no, rest),
            "function" => self.function_line(no, rest),
            "block" => self.block_line(no, rest),
            "edge" => self.edge_line(no, rest),
            "end" => {
                if !rest.is_empty() {
                    return Err(syntax(no, "unexpected tokens after `end`"));
                }
                self.end_function(no)
            }
            k if k.starts_with(|c: char| c.is_ascii_digit()) => self.instruction_line(no, line),
            k => Err(syntax(no, format!("unknown directive `{k}`"))),
        }
    }

    fn program_line(&mut self, no: usize, rest: &str) -> Result<(), ListingError> {
        if self.function.is_some() {
            return Err(syntax(no, "`program` inside an unterminated function"));
        }
        self.close_program(no)?;
        let mut tokens = rest.split_whitespace();
        let id = tokens
            .next()
            .ok_or_else(|| syntax(no, "`program` requires an id"))?;
        let mut program = Program::new(id, None, Vec::new());
        let mut meta = ProgramMeta::default();
        for tok in tokens {
            let (key, value) = tok
                .split_once('=')
                .ok_or_else(|| syntax(no, format!("expected key=value, found `{tok}`")))?;
            if value.is_empty() {
                return Err(syntax(no, format!("empty value for `{key}`")));
            }
            match key {
                "author" => program.author = Some(value.to_string()),
                "compiler" => meta.compiler = Some(value.to_string()),
                "source" => meta.source = Some(value.to_string()),
                "transforms" => {
                    meta.transforms = value.split(',').map(str::to_string).collect();
                    if meta.transforms.iter().any(String::is_empty) {
                        return Err(syntax(no, "empty transform entry"));
                    }
                }
                _ => return Err(syntax(no, format!("unknown program attribute `{key}`"))),
            }
        }
        program.meta = meta;
        self.program = Some((program, BTreeSet::new()));
        Ok(())
    }

    fn function_line(&mut self, no: usize, rest: &str) -> Result<(), ListingError> {
        if self.function.is_some() {
            return Err(syntax(no, "`function` before `end` of previous function"));
        }
        let Some((_, names)) = self.program.as_mut() else {
            return Err(syntax(no, "`function` outside a program"));
        };
        let mut tokens = rest.split_whitespace();
        let name = tokens
            .next()
            .ok_or_else(|| syntax(no, "`function` requires a name"))?;
        let mut function = Function::new(name, Vec::new());
        for tok in tokens {
            match tok.split_once('=') {
                Some(("provenance", v)) => {
                    function.provenance = Provenance::parse(v)
                        .ok_or_else(|| syntax(no, format!("unknown provenance `{v}`")))?;
                }
                _ => return Err(syntax(no, format!("unexpected token `{tok}`"))),
            }
        }
        if !names.insert(name.to_string()) {
            return Err(ListingError {
                line: no,
                kind: ListingErrorKind::DuplicateFunction(name.to_string()),
            });
        }
        self.function = Some(OpenFunction {
            function,
            line: no,
            edges: Vec::new(),
        });
        Ok(())
    }

    fn open(&mut self, no: usize, what: &str) -> Result<&mut OpenFunction, ListingError> {
        self.function
            .as_mut()
            .ok_or_else(|| syntax(no, format!("`{what}` outside a function")))
    }

    fn block_line(&mut self, no: usize, rest: &str) -> Result<(), ListingError> {
        let open = self.open(no, "block")?;
        let mut tokens = rest.split_whitespace();
        let id = tokens
            .next()
            .ok_or_else(|| syntax(no, "`block` requires an id"))?;
        if tokens.next().is_some() {
            return Err(syntax(no, "unexpected tokens after block id"));
        }
        if open.function.blocks.iter().any(|b| b.id == id) {
            return Err(syntax(no, format!("duplicate block id `{id}`")));
        }
        open.function.blocks.push(BasicBlock::new(id, Vec::new()));
        Ok(())
    }

    fn edge_line(&mut self, no: usize, rest: &str) -> Result<(), ListingError> {
        let open = self.open(no, "edge")?;
        let tokens: Vec<&str> = rest.split_whitespace().collect();
        let [src, dst, kind] = tokens[..] else {
            return Err(syntax(no, "`edge` expects <src> <dst> <true|false|uncond>"));
        };
        let kind = EdgeKind::parse(kind)
            .ok_or_else(|| syntax(no, format!("unknown edge label `{kind}`")))?;
        open.edges.push((
            no,
            src.to_string(),
            Edge {
                target: dst.to_string(),
                kind,
            },
        ));
        Ok(())
    }

    fn instruction_line(&mut self, no: usize, line: &str) -> Result<(), ListingError> {
        let open = self.open(no, "instruction")?;
        let Some(block) = open.function.blocks.last_mut() else {
            return Err(syntax(no, "instruction before any `block`"));
        };
        let (addr, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let address = parse_address(addr).ok_or_else(|| syntax(no, format!("bad address `{addr}`")))?;
        let rest = rest.trim_start();
        if rest.is_empty() {
            return Err(syntax(no, "missing mnemonic"));
        }
        let (mnemonic, ops) = rest
            .split_once(char::is_whitespace)
            .map_or((rest, ""), |(m, o)| (m, o.trim()));
        if mnemonic.contains([':', ',', '"']) {
            return Err(syntax(no, format!("bad mnemonic `{mnemonic}`")));
        }
        let operands = if ops.is_empty() {
            Vec::new()
        } else {
            split_operands(ops)
                .map_err(|m| syntax(no, m))?
                .into_iter()
                .map(|o| parse_operand(o.trim()))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|m| syntax(no, m))?
        };
        if operands.len() > MAX_OPERANDS {
            return Err(syntax(no, "more than 4 operands"));
        }
        if let Some(prev) = block.instructions.last() {
            if address <= prev.address {
                return Err(syntax(
                    no,
                    format!("address {address:#x} does not increase within block"),
                ));
            }
        }
        block
            .instructions
            .push(Instruction::new(address, mnemonic, operands));
        Ok(())
    }

    fn end_function(&mut self, no: usize) -> Result<(), ListingError> {
        let Some(OpenFunction {
            mut function,
            line,
            edges,
        }) = self.function.take()
        else {
            return Err(syntax(no, "`end` without an open function"));
        };
        if function.blocks.is_empty() {
            return Err(ListingError {
                line,
                kind: ListingErrorKind::EmptyFunction(function.name),
            });
        }
        for (eline, src, edge) in edges {
            if function.block(&edge.target).is_none() {
                return Err(ListingError {
                    line: eline,
                    kind: ListingErrorKind::DanglingEdge(edge.target),
                });
            }
            let Some(block) = function.blocks.iter_mut().find(|b| b.id == src) else {
                return Err(ListingError {
                    line: eline,
                    kind: ListingErrorKind::UnknownEdgeSource(src),
                });
            };
            block.successors.push(edge);
        }
        function
            .validate()
            .map_err(|e| ListingError { line, kind: e.into() })?;
        let (program, _) = self.program.as_mut().expect("function implies program");
        program.functions.push(function);
        Ok(())
    }

    fn close_program(&mut self, no: usize) -> Result<(), ListingError> {
        if let Some((program, _)) = self.program.take() {
            if program.functions.is_empty() {
                return Err(ListingError {
                    line: no,
                    kind: ModelError::NoFunctions(program.id).into(),
                });
            }
            self.done.push(program);
        }
        Ok(())
    }

    fn finish(mut self, last_line: usize) -> Result<Vec<Program>, ListingError> {
        if let Some(open) = &self.function {
            return Err(syntax(
                last_line,
                format!("function `{}` is missing `end`", open.function.name),
            ));
        }
        self.close_program(last_line)?;
        Ok(self.done)
    }
}

fn parse_address(s: &str) -> Option<u64> {
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16).ok(),
        None => s.parse().ok(),
    }
}

fn parse_int(s: &str) -> Option<i64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let magnitude = match body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        Some(hex) => i128::from_str_radix(hex, 16).ok()?,
        None => {
            if body.is_empty() || !body.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            body.parse::<i128>().ok()?
        }
    };
    i64::try_from(if neg { -magnitude } else { magnitude }).ok()
}

/// Splits on commas outside string literals and memory brackets.
fn split_operands(s: &str) -> Result<Vec<&str>, String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut in_str = false;
    let mut escaped = false;
    let mut depth = 0u32;
    for (i, c) in s.char_indices() {
        if in_str {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_str = false;
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '[' => depth += 1,
            ']' => depth = depth.checked_sub(1).ok_or("unbalanced `]`")?,
            ',' if depth == 0 => {
                out.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    if in_str {
        return Err("unterminated string literal".into());
    }
    if depth != 0 {
        return Err("unbalanced `[`".into());
    }
    out.push(&s[start..]);
    Ok(out)
}

fn is_symbol(s: &str) -> bool {
    !s.is_empty()
        && !s
            .chars()
            .any(|c| c.is_whitespace() || matches!(c, ',' | '"' | '#' | '[' | ']'))
}

fn parse_operand(s: &str) -> Result<Operand, String> {
    let (kind, body) = s
        .split_once(':')
        .ok_or_else(|| format!("operand `{s}` lacks a kind prefix"))?;
    match kind {
        "r" if is_symbol(body) && !body.contains(['+', '-', ':']) => Ok(Operand::reg(body)),
        "i" => parse_int(body)
            .map(Operand::Immediate)
            .ok_or_else(|| format!("bad immediate `{body}`")),
        "m" => parse_memory(body).map(Operand::Memory),
        "l" if is_symbol(body) => Ok(Operand::Label(body.to_string())),
        "s" => parse_string(body).map(Operand::StringRef),
        _ => Err(format!("bad operand `{s}`")),
    }
}

fn parse_memory(body: &str) -> Result<MemoryRef, String> {
    let inner = body
        .strip_prefix('[')
        .and_then(|b| b.strip_suffix(']'))
        .ok_or_else(|| format!("memory operand `{body}` must be bracketed"))?
        .trim();
    if inner.is_empty() {
        return Err("empty memory operand".into());
    }
    let mut mem = MemoryRef {
        base: None,
        index: None,
        disp: None,
    };
    // split into signed terms
    let mut terms: Vec<(bool, &str)> = Vec::new();
    let mut neg = false;
    let mut start = 0;
    for (i, c) in inner.char_indices() {
        if c == '+' || c == '-' {
            let term = inner[start..i].trim();
            if !term.is_empty() {
                terms.push((neg, term));
            } else if i != 0 {
                return Err(format!("empty term in `{inner}`"));
            }
            neg = c == '-';
            start = i + 1;
        }
    }
    let last = inner[start..].trim();
    if last.is_empty() {
        return Err(format!("trailing operator in `{inner}`"));
    }
    terms.push((neg, last));
    for (neg, term) in terms {
        if term.starts_with(|c: char| c.is_ascii_digit()) {
            if mem.disp.is_some() {
                return Err("more than one displacement".into());
            }
            let v = parse_int(term).ok_or_else(|| format!("bad displacement `{term}`"))?;
            mem.disp = Some(if neg {
                v.checked_neg().ok_or("displacement overflow")?
            } else {
                v
            });
        } else {
            if neg || !is_symbol(term) || term.contains(':') {
                return Err(format!("bad register term `{term}`"));
            }
            let reg = term.to_ascii_lowercase();
            if mem.base.is_none() {
                mem.base = Some(reg);
            } else if mem.index.is_none() {
                mem.index = Some(reg);
            } else {
                return Err("more than two registers in memory operand".into());
            }
        }
    }
    Ok(mem)
}

fn parse_string(body: &str) -> Result<String, String> {
    let inner = body
        .strip_prefix('"')
        .and_then(|b| b.strip_suffix('"'))
        .ok_or_else(|| format!("string operand `{body}` must be quoted"))?;
    let mut out = String::with_capacity(inner.len());
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => match chars.next() {
                Some('n') => out.push('\n'),
                Some('t') => out.push('\t'),
                Some('r') => out.push('\r'),
                Some('"') => out.push('"'),
                Some('\\') => out.push('\\'),
                other => return Err(format!("bad escape `\\{}`", other.unwrap_or(' '))),
            },
            '"' => return Err("unescaped quote in string".into()),
            c => out.push(c),
        }
    }
    Ok(out)
}

/// Serializes a program back to the listing format.
pub fn write_listing(program: &Program) -> String {
    let mut out = String::new();
    write!(out, "program {}", program.id).unwrap();
    if let Some(a) = &program.author {
        write!(out, " author={a}").unwrap();
    }
    if let Some(c) = &program.meta.compiler {
        write!(out, " compiler={c}").unwrap();
    }
    if let Some(s) = &program.meta.source {
        write!(out, " source={s}").unwrap();
    }
    if !program.meta.transforms.is_empty() {
        write!(out, " transforms={}", program.meta.transforms.join(",")).unwrap();
    }
    out.push('\n');
    for f in &program.functions {
        write!(out, "function {}", f.name).unwrap();
        if f.provenance != Provenance::Unknown {
            write!(out, " provenance={}", f.provenance).unwrap();
        }
        out.push('\n');
        for b in &f.blocks {
            writeln!(out, "block {}", b.id).unwrap();
            for ins in &b.instructions {
                write!(out, "  {:#x} {}", ins.address, ins.mnemonic).unwrap();
                for (i, op) in ins.operands.iter().enumerate() {
                    out.push_str(if i == 0 { " " } else { ", " });
                    write!(out, "{op}").unwrap();
                }
                out.push('\n');
            }
        }
        for b in &f.blocks {
            for e in &b.successors {
                writeln!(out, "edge {} {} {}", b.id, e.target, e.kind.as_str()).unwrap();
            }
        }
        out.push_str("end\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "program p1\nfunction main\nblock b0\n  0 ret\nend\n";

    #[test]
    fn minimal_document() {
        let p = parse_listing(MINIMAL).unwrap();
        assert_eq!(p.functions.len(), 1);
        assert_eq!(p.functions[0].blocks.len(), 1);
        assert!(p.functions[0].blocks[0].successors.is_empty());
    }

    #[test]
    fn conditional_edges_carry_labels() {
        let text = "\
program p author=alice compiler=gcc
function f
block b0
  0x10 cmp r:EAX, i:0   # compare
  0x12 je l:b2
block b1
  0x14 ret
block b2
  0x15 ret
edge b0 b2 true
edge b0 b1 false
end
";
        let p = parse_listing(text).unwrap();
        assert_eq!(p.author.as_deref(), Some("alice"));
        assert_eq!(p.meta.compiler.as_deref(), Some("gcc"));
        let b0 = &p.functions[0].blocks[0];
        assert_eq!(
            b0.successors,
            vec![
                Edge {
                    target: "b2".into(),
                    kind: EdgeKind::True
                },
                Edge {
                    target: "b1".into(),
                    kind: EdgeKind::False
                }
            ]
        );
        assert_eq!(b0.instructions[0].operands[0], Operand::reg("eax"));
    }

    #[test]
    fn dangling_edge_names_target() {
        let text = "program p\nfunction f\nblock b0\n  0 jmp l:nowhere\nedge b0 nowhere uncond\nend\n";
        let err = parse_listing(text).unwrap_err();
        assert_eq!(err.line, 5);
        assert_eq!(err.kind, ListingErrorKind::DanglingEdge("nowhere".into()));
        assert!(err.to_string().contains("nowhere"));
    }

    #[test]
    fn duplicate_function_rejected() {
        let text = "program p\nfunction f\nblock a\n 0 ret\nend\nfunction f\nblock a\n 0 ret\nend\n";
        let err = parse_listing(text).unwrap_err();
        assert_eq!(err.line, 6);
        assert_eq!(err.kind, ListingErrorKind::DuplicateFunction("f".into()));
    }

    #[test]
    fn empty_function_rejected() {
        let err = parse_listing("program p\nfunction f\nend\n").unwrap_err();
        assert_eq!(err.kind, ListingErrorKind::EmptyFunction("f".into()));
    }

    #[test]
    fn syntax_error_reports_line() {
        let err = parse_listing("program p\nfunction f\nblock a\n  0 mov q:1\nend\n").unwrap_err();
        assert_eq!(err.line, 4);
        assert!(matches!(err.kind, ListingErrorKind::Syntax(_)));
    }

    #[test]
    fn operands_are_normalized() {
        let text = "program p\nfunction f\nblock a\n  0 MOV r:EBX, m:[EBP+ESI-0x10]\n  1 push i:0x20\n  2 push s:\"a, b # \\\"q\\\"\"\n  3 ret\nend\n";
        let p = parse_listing(text).unwrap();
        let ins = &p.functions[0].blocks[0].instructions;
        assert_eq!(ins[0].mnemonic, "mov");
        assert_eq!(
            ins[0].operands[1],
            Operand::Memory(MemoryRef {
                base: Some("ebp".into()),
                index: Some("esi".into()),
                disp: Some(-16)
            })
        );
        assert_eq!(ins[1].operands[0], Operand::Immediate(32));
        assert_eq!(ins[2].operands[0], Operand::StringRef("a, b # \"q\"".into()));
    }

    #[test]
    fn too_many_operands() {
        let text = "program p\nfunction f\nblock a\n  0 x i:1,i:2,i:3,i:4,i:5\nend\n";
        assert!(parse_listing(text).is_err());
    }

    #[test]
    fn non_increasing_address() {
        let text = "program p\nfunction f\nblock a\n  4 nop\n  4 ret\nend\n";
        assert_eq!(parse_listing(text).unwrap_err().line, 5);
    }

    #[test]
    fn missing_end() {
        let err = parse_listing("program p\nfunction f\nblock a\n  0 ret\n").unwrap_err();
        assert!(err.to_string().contains("missing `end`"));
    }

    #[test]
    fn multiple_programs() {
        let doc = format!("{MINIMAL}{}", MINIMAL.replace("p1", "p2"));
        assert_eq!(parse_listings(&doc).unwrap().len(), 2);
        assert!(parse_listing(&doc).is_err());
    }

    #[test]
    fn write_then_parse() {
        let text = "\
program p author=bob transforms=RR:1,DCI:0.3
function f provenance=user
block b0
  0 cmp r:eax, i:-3
  2 jne l:b1
block b1
  4 lea r:eax, m:[ebx+8]
  5 call l:puts
  6 push s:\"x\\ty\"
  7 ret
edge b0 b1 false
edge b0 b1 true
end
";
        let p = parse_listing(text).unwrap();
        let again = parse_listing(&write_listing(&p)).unwrap();
        assert_eq!(p, again);
    }
}
