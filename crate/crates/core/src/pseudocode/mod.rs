//! Statement-level model of decompiled pseudo-C.
//!
//! A statement is a physical line. Each line is classified into the eight
//! construct kinds used for semantic-intensity scoring, and the function's
//! variables are recovered from declarations, assignment targets and
//! decompiler-style local names (`v12`, `a1`).

pub mod lexer;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use lexer::{tokenize, Token};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("function text is empty")]
    EmptyFunction,
}

/// Syntactic construct kinds. The declaration order is the tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ConstructKind {
    Assignment,
    Addition,
    VariableDefinition,
    Return,
    Loop,
    Conditional,
    FunctionCall,
    TypeMention,
}

impl ConstructKind {
    pub const ALL: [ConstructKind; 8] = [
        ConstructKind::Assignment,
        ConstructKind::Addition,
        ConstructKind::VariableDefinition,
        ConstructKind::Return,
        ConstructKind::Loop,
        ConstructKind::Conditional,
        ConstructKind::FunctionCall,
        ConstructKind::TypeMention,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ConstructKind::Assignment => "assignment",
            ConstructKind::Addition => "addition",
            ConstructKind::VariableDefinition => "variable definition",
            ConstructKind::Return => "return",
            ConstructKind::Loop => "loop",
            ConstructKind::Conditional => "conditional",
            ConstructKind::FunctionCall => "function call",
            ConstructKind::TypeMention => "type",
        }
    }
}

impl fmt::Display for ConstructKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub type ConstructSet = BTreeSet<ConstructKind>;

/// C base types plus the synthetic types emitted by IDA and Ghidra.
pub const DEFAULT_TYPE_KEYWORDS: &[&str] = &[
    "int", "char", "unsigned", "signed", "void", "float", "double", "long", "short", "bool",
    "_Bool", "__int8", "__int16", "__int32", "__int64", "__int128", "_BYTE", "_WORD", "_DWORD",
    "_QWORD", "_OWORD", "_BOOL1", "_BOOL2", "_BOOL4", "_BOOL8", "BYTE", "WORD", "DWORD", "QWORD",
    "size_t", "ssize_t", "uint8_t", "uint16_t", "uint32_t", "uint64_t", "int8_t", "int16_t",
    "int32_t", "int64_t", "uintptr_t", "intptr_t", "wchar_t", "FILE", "undefined", "undefined1",
    "undefined2", "undefined4", "undefined8", "uint", "ulong", "ushort", "uchar", "byte", "dword",
    "qword", "word", "longlong", "ulonglong", "code",
];

const TYPE_INTRODUCERS: &[&str] = &["struct", "union", "enum"];

const QUALIFIERS: &[&str] = &[
    "const", "volatile", "static", "register", "extern", "inline", "restrict", "__fastcall",
    "__cdecl", "__stdcall", "__thiscall", "__usercall", "__userpurge", "__noreturn", "__far",
    "__near", "__unaligned", "__ptr32", "__ptr64", "__spoils",
];

const CONTROL_KEYWORDS: &[&str] = &[
    "if", "else", "for", "while", "do", "switch", "case", "default", "return", "goto", "break",
    "continue", "sizeof", "typedef",
];

/// Set of words that name types. Extensible from configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    types: BTreeSet<String>,
}

impl Default for Lexicon {
    fn default() -> Self {
        Self {
            types: DEFAULT_TYPE_KEYWORDS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl Lexicon {
    pub fn with_extra_types<I, S>(extra: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut lex = Self::default();
        lex.types.extend(extra.into_iter().map(Into::into));
        lex
    }

    pub fn is_type(&self, word: &str) -> bool {
        self.types.contains(word)
    }

    fn is_type_start(&self, tok: &Token) -> bool {
        tok.ident()
            .is_some_and(|w| self.is_type(w) || TYPE_INTRODUCERS.contains(&w))
    }

    fn is_reserved(&self, word: &str) -> bool {
        self.is_type(word)
            || CONTROL_KEYWORDS.contains(&word)
            || QUALIFIERS.contains(&word)
            || TYPE_INTRODUCERS.contains(&word)
    }

    /// Classifies one line of text.
    pub fn detect_constructs(&self, line_text: &str) -> ConstructSet {
        self.analyze_tokens(&tokenize(line_text)).constructs
    }

    fn analyze_tokens(&self, toks: &[Token]) -> LineAnalysis {
        let mut a = LineAnalysis::default();
        let mut decl_name_positions = BTreeSet::new();
        let mut func_declarators = BTreeSet::new();

        // Declarations: a type run followed by an identifier.
        let mut i = 0;
        while i < toks.len() {
            if !self.is_type_start(&toks[i]) || (i > 0 && self.continues_type(&toks[i - 1])) {
                i += 1;
                continue;
            }
            let mut j = i;
            while j < toks.len() {
                match &toks[j] {
                    Token::Ident(w) if self.is_type(w) || QUALIFIERS.contains(&w.as_str()) => {
                        j += 1
                    }
                    Token::Ident(w) if TYPE_INTRODUCERS.contains(&w.as_str()) => {
                        j += 1;
                        // tag name, unless the tag is anonymous (`struct {`)
                        if matches!(toks.get(j), Some(Token::Ident(_)))
                            && !matches!(toks.get(j + 1), Some(t) if t.is_punct("("))
                        {
                            j += 1;
                        }
                    }
                    Token::Punct("*") => j += 1,
                    _ => break,
                }
            }
            if let Some(Token::Ident(name)) = toks.get(j) {
                if !self.is_reserved(name) {
                    if toks.get(j + 1).is_some_and(|t| t.is_punct("(")) {
                        func_declarators.insert(j);
                    } else {
                        a.constructs.insert(ConstructKind::VariableDefinition);
                        decl_name_positions.insert(j);
                        // further declarators: `int a, *b = 0, c[4];`
                        let mut k = j + 1;
                        let mut depth = 0i32;
                        while k < toks.len() {
                            match &toks[k] {
                                Token::Punct("(") | Token::Punct("[") | Token::Punct("{") => {
                                    depth += 1
                                }
                                Token::Punct(")") | Token::Punct("]") | Token::Punct("}") => {
                                    depth -= 1;
                                    if depth < 0 {
                                        break;
                                    }
                                }
                                Token::Punct(";") if depth == 0 => break,
                                Token::Punct(",") if depth == 0 => {
                                    let mut m = k + 1;
                                    while toks.get(m).is_some_and(|t| t.is_punct("*")) {
                                        m += 1;
                                    }
                                    match toks.get(m) {
                                        Some(Token::Ident(n))
                                            if !self.is_reserved(n)
                                                && !toks
                                                    .get(m + 1)
                                                    .is_some_and(|t| t.is_punct("(")) =>
                                        {
                                            decl_name_positions.insert(m);
                                            k = m;
                                        }
                                        _ => break,
                                    }
                                }
                                _ => {}
                            }
                            k += 1;
                        }
                    }
                }
            }
            i = j.max(i + 1);
        }

        for (idx, tok) in toks.iter().enumerate() {
            match tok {
                Token::Punct(p) => match *p {
                    "=" | "-=" | "*=" | "/=" | "%=" | "&=" | "|=" | "^=" | "<<=" | ">>=" => {
                        a.constructs.insert(ConstructKind::Assignment);
                    }
                    "+=" => {
                        a.constructs.insert(ConstructKind::Assignment);
                        a.constructs.insert(ConstructKind::Addition);
                    }
                    "+" | "++" => {
                        a.constructs.insert(ConstructKind::Addition);
                    }
                    "?" => {
                        a.constructs.insert(ConstructKind::Conditional);
                    }
                    _ => {}
                },
                Token::Ident(w) => {
                    let next_is_paren = toks.get(idx + 1).is_some_and(|t| t.is_punct("("));
                    match w.as_str() {
                        "return" => {
                            a.constructs.insert(ConstructKind::Return);
                        }
                        "for" | "while" | "do" => {
                            a.constructs.insert(ConstructKind::Loop);
                        }
                        "if" | "else" | "switch" | "case" => {
                            a.constructs.insert(ConstructKind::Conditional);
                        }
                        _ if self.is_type(w) || TYPE_INTRODUCERS.contains(&w.as_str()) => {
                            a.constructs.insert(ConstructKind::TypeMention);
                        }
                        _ if next_is_paren
                            && !self.is_reserved(w)
                            && !func_declarators.contains(&idx)
                            && !is_member(toks, idx) =>
                        {
                            a.constructs.insert(ConstructKind::FunctionCall);
                            a.callees.insert(w.clone());
                        }
                        _ => {}
                    }
                }
                _ => {}
            }
        }

        // Identifier occurrences and their def/use roles.
        let mut strong_def_positions = BTreeSet::new();
        for &pos in &decl_name_positions {
            if let Some(name) = toks[pos].ident() {
                a.decl_targets.insert(name.to_string());
                a.strong_defs.insert(name.to_string());
                strong_def_positions.insert(pos);
            }
        }
        for (p, tok) in toks.iter().enumerate() {
            let Token::Punct(op) = tok else { continue };
            match *op {
                "=" | "+=" | "-=" | "*=" | "/=" | "%=" | "&=" | "|=" | "^=" | "<<=" | ">>=" => {
                    if let Some(lhs) = assignment_root(toks, p) {
                        let name = toks[lhs.pos].ident().unwrap_or_default().to_string();
                        if self.is_reserved(&name) {
                            continue;
                        }
                        a.lhs_roots.insert(name.clone());
                        if lhs.direct {
                            a.strong_defs.insert(name);
                            if *op == "=" {
                                strong_def_positions.insert(lhs.pos);
                            }
                        } else {
                            a.weak_defs.insert(name);
                        }
                    }
                }
                "++" | "--" => {
                    let target = if p > 0 && toks[p - 1].ident().is_some() {
                        Some(p - 1)
                    } else if toks.get(p + 1).and_then(Token::ident).is_some() {
                        Some(p + 1)
                    } else {
                        None
                    };
                    if let Some(t) = target {
                        let name = toks[t].ident().unwrap_or_default();
                        if !self.is_reserved(name) && !is_member(toks, t) {
                            a.lhs_roots.insert(name.to_string());
                            a.strong_defs.insert(name.to_string());
                        }
                    }
                }
                _ => {}
            }
        }
        for (idx, tok) in toks.iter().enumerate() {
            let Some(w) = tok.ident() else { continue };
            if self.is_reserved(w) || is_member(toks, idx) || func_declarators.contains(&idx) {
                continue;
            }
            if toks.get(idx + 1).is_some_and(|t| t.is_punct(":"))
                && idx == 0
                && toks.len() == 2
            {
                // `LABEL_12:`
                continue;
            }
            if idx > 0 && toks[idx - 1].ident() == Some("goto") {
                continue;
            }
            a.occurrences.insert(w.to_string());
            if !strong_def_positions.contains(&idx) {
                a.uses.insert(w.to_string());
            }
        }
        a
    }

    fn continues_type(&self, prev: &Token) -> bool {
        prev.ident()
            .is_some_and(|w| self.is_type(w) || QUALIFIERS.contains(&w) || TYPE_INTRODUCERS.contains(&w))
    }

    pub fn parse_function(&self, text: &str) -> Result<DecompiledFunction, ParseError> {
        if text.trim().is_empty() {
            return Err(ParseError::EmptyFunction);
        }
        let mut lines: Vec<SourceLine> = text
            .lines()
            .enumerate()
            .map(|(i, t)| {
                let tokens = tokenize(t);
                let analysis = self.analyze_tokens(&tokens);
                SourceLine {
                    index: i + 1,
                    text: t.to_string(),
                    constructs: analysis.constructs.clone(),
                    tokens,
                    analysis,
                    facts: LineFacts::default(),
                }
            })
            .collect();
        let variables = collect_variables(&lines);
        for line in &mut lines {
            line.facts = line.analysis.facts(&variables);
        }
        Ok(DecompiledFunction {
            raw_text: text.to_string(),
            lines,
            variables,
        })
    }
}

fn is_member(toks: &[Token], idx: usize) -> bool {
    idx > 0 && (toks[idx - 1].is_punct(".") || toks[idx - 1].is_punct("->"))
}

struct LhsRoot {
    pos: usize,
    /// `x = ...` as opposed to `*x = ...`, `x[i] = ...`, `x->f = ...`.
    direct: bool,
}

fn assignment_root(toks: &[Token], op: usize) -> Option<LhsRoot> {
    let mut p = op.checked_sub(1)?;
    let mut direct = true;
    loop {
        match &toks[p] {
            Token::Ident(_) => {
                if p >= 2 && (toks[p - 1].is_punct(".") || toks[p - 1].is_punct("->")) {
                    direct = false;
                    p -= 2;
                    continue;
                }
                if p >= 1 && toks[p - 1].is_punct("*") {
                    let unary = p < 2
                        || matches!(&toks[p - 2], Token::Punct(q) if *q != ")" && *q != "]");
                    if unary {
                        direct = false;
                    }
                }
                return Some(LhsRoot { pos: p, direct });
            }
            Token::Punct("]") => {
                let mut depth = 0;
                loop {
                    if toks[p].is_punct("]") {
                        depth += 1;
                    } else if toks[p].is_punct("[") {
                        depth -= 1;
                        if depth == 0 {
                            break;
                        }
                    }
                    p = p.checked_sub(1)?;
                }
                direct = false;
                p = p.checked_sub(1)?;
            }
            _ => return None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct LineAnalysis {
    constructs: ConstructSet,
    decl_targets: BTreeSet<String>,
    lhs_roots: BTreeSet<String>,
    callees: BTreeSet<String>,
    strong_defs: BTreeSet<String>,
    weak_defs: BTreeSet<String>,
    occurrences: BTreeSet<String>,
    uses: BTreeSet<String>,
}

impl LineAnalysis {
    fn facts(&self, vars: &BTreeSet<String>) -> LineFacts {
        let keep = |s: &BTreeSet<String>| -> BTreeSet<String> {
            s.iter().filter(|v| vars.contains(*v)).cloned().collect()
        };
        LineFacts {
            mentions: keep(&self.occurrences),
            kills: keep(&self.strong_defs),
            defs: keep(&self.strong_defs)
                .union(&keep(&self.weak_defs))
                .cloned()
                .collect(),
            uses: keep(&self.uses),
        }
    }
}

/// Per-line variable roles, restricted to the function's variables.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LineFacts {
    /// Variables occurring anywhere on the line.
    pub mentions: BTreeSet<String>,
    /// Variables (possibly partially) written on the line.
    pub defs: BTreeSet<String>,
    /// Variables overwritten as a whole; these kill earlier definitions.
    pub kills: BTreeSet<String>,
    /// Variables read on the line.
    pub uses: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceLine {
    /// 1-based line number within the function.
    pub index: usize,
    pub text: String,
    pub constructs: ConstructSet,
    pub facts: LineFacts,
    pub(crate) tokens: Vec<Token>,
    analysis: LineAnalysis,
}

impl SourceLine {
    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn is_blank(&self) -> bool {
        self.text.trim().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompiledFunction {
    pub raw_text: String,
    pub lines: Vec<SourceLine>,
    pub variables: BTreeSet<String>,
}

impl DecompiledFunction {
    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    /// Line by 1-based index.
    pub fn line(&self, index: usize) -> Option<&SourceLine> {
        index.checked_sub(1).and_then(|i| self.lines.get(i))
    }

    pub fn line_texts(&self) -> Vec<&str> {
        self.lines.iter().map(|l| l.text.as_str()).collect()
    }
}

fn is_decompiler_local(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some('v') | Some('a'))
        && name.len() > 1
        && chars.all(|c| c.is_ascii_digit())
}

fn collect_variables(lines: &[SourceLine]) -> BTreeSet<String> {
    let mut declared = BTreeSet::new();
    let mut assigned = BTreeSet::new();
    let mut callees = BTreeSet::new();
    let mut patterned = BTreeSet::new();
    for line in lines {
        declared.extend(line.analysis.decl_targets.iter().cloned());
        assigned.extend(line.analysis.lhs_roots.iter().cloned());
        callees.extend(line.analysis.callees.iter().cloned());
        patterned.extend(
            line.analysis
                .occurrences
                .iter()
                .filter(|w| is_decompiler_local(w))
                .cloned(),
        );
    }
    let mut vars = declared.clone();
    vars.extend(
        assigned
            .into_iter()
            .chain(patterned)
            .filter(|v| !callees.contains(v)),
    );
    vars
}

/// Classifies one line using the default lexicon.
pub fn detect_constructs(line_text: &str) -> ConstructSet {
    Lexicon::default().detect_constructs(line_text)
}

/// Parses a function with the default lexicon.
pub fn parse_function(text: &str) -> Result<DecompiledFunction, ParseError> {
    Lexicon::default().parse_function(text)
}

/// The variable set of an already parsed function.
pub fn extract_variables(function: &DecompiledFunction) -> BTreeSet<String> {
    collect_variables(&function.lines)
}
