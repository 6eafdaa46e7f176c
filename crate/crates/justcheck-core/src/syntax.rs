//! Abstract syntax, concrete notation and static checks.
//!
//! Threads send with `q!label; cont`, receive with `q?label; cont`, and
//! combine alternatives with `(+)` (internal choice between sends) or `+`
//! (external choice between receives). Recursion is written `rec X. body`
//! and must be guarded: `rec X. X` and `rec X. rec Y. body` are rejected.
//! A network groups threads under named locations. Global types use
//! `p -> q: label; cont` prefixes combined with `[+]`, plus the constant
//! `deadlock` that synthesis emits for stuck protocols.
//!
//! Precedence: `;` binds tighter than either choice operator, and a
//! continuation never extends a surrounding choice. A choice or a `rec`
//! used as a continuation is written in parentheses. At binding position
//! `rec` is greedy, so `rec X. p!a; X (+) p!b; X` puts the whole choice
//! under the binder.

use std::collections::BTreeSet;
use std::fmt;

use indexmap::IndexMap;

/// Identity of one instruction occurrence inside a network.
///
/// Ids are assigned in source order, walking locations in declaration order
/// and each thread top down. Substitution copies ids verbatim, so unfolding
/// a recursive thread keeps pointing at the instructions it unfolded from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InstrId(pub u32);

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Thread {
    End,
    /// Internal choice between send prefixes. A single send is a one-branch choice.
    Internal(Vec<SendBranch>),
    /// External choice between receive prefixes.
    External(Vec<RecvBranch>),
    Var(String),
    Rec {
        var: String,
        id: InstrId,
        body: Box<Thread>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SendBranch {
    pub target: String,
    pub label: String,
    pub id: InstrId,
    pub cont: Thread,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RecvBranch {
    pub source: String,
    pub label: String,
    pub id: InstrId,
    pub cont: Thread,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum GlobalType {
    End,
    /// The synthesised marker for a protocol state with no way forward.
    Deadlock,
    /// Choice of communications, all emitted by the same sender.
    Comm {
        sender: String,
        branches: Vec<GBranch>,
    },
    Var(String),
    Rec {
        var: String,
        body: Box<GlobalType>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GBranch {
    pub receiver: String,
    pub label: String,
    pub cont: GlobalType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    pub name: String,
    pub locations: IndexMap<String, Thread>,
}

#[derive(Debug, Clone)]
pub struct GlobalDef {
    pub name: String,
    pub gtype: GlobalType,
}

/// Result of parsing one source file: the networks and global types it
/// defines, plus non-fatal warnings such as a thread addressing itself.
#[derive(Debug, Clone, Default)]
pub struct SourceFile {
    pub networks: Vec<Network>,
    pub globals: Vec<GlobalDef>,
    pub warnings: Vec<String>,
}

impl SourceFile {
    pub fn network(&self, name: &str) -> Option<&Network> {
        self.networks.iter().find(|n| n.name == name)
    }

    pub fn global(&self, name: &str) -> Option<&GlobalType> {
        self.globals.iter().find(|g| g.name == name).map(|g| &g.gtype)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SyntaxError {
    #[error("line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
    #[error("network '{net}': duplicate location '{loc}'")]
    DuplicateLocation { net: String, loc: String },
    #[error("network '{net}', location '{loc}': unbound variable '{var}'")]
    UnboundVar { net: String, loc: String, var: String },
    #[error("network '{net}', location '{loc}': unguarded recursion at 'rec {var}'")]
    UnguardedRecursion { net: String, loc: String, var: String },
    #[error("network '{net}', location '{loc}': prefix addresses '{peer}', which is not a location of this network")]
    UnknownPeer { net: String, loc: String, peer: String },
    #[error("global type '{name}': unbound variable '{var}'")]
    GlobalUnboundVar { name: String, var: String },
    #[error("global type '{name}': unguarded recursion at 'rec {var}'")]
    GlobalUnguardedRecursion { name: String, var: String },
    #[error("global type '{name}': '{loc}' sends to itself")]
    SelfCommunication { name: String, loc: String },
    #[error("duplicate definition of '{name}'")]
    DuplicateItem { name: String },
}

fn perr<T>(line: usize, col: usize, msg: impl Into<String>) -> Result<T, SyntaxError> {
    Err(SyntaxError::Parse {
        line,
        col,
        msg: msg.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    KwNet,
    KwGlobal,
    KwLoc,
    KwRec,
    KwEnd,
    LBrace,
    RBrace,
    LParen,
    RParen,
    Eq,
    Dot,
    Semi,
    Bang,
    Query,
    Colon,
    Arrow,
    Plus,
    IPlus,
    GPlus,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "'{s}'"),
            Tok::KwNet => write!(f, "'net'"),
            Tok::KwGlobal => write!(f, "'global'"),
            Tok::KwLoc => write!(f, "'loc'"),
            Tok::KwRec => write!(f, "'rec'"),
            Tok::KwEnd => write!(f, "'end'"),
            Tok::LBrace => write!(f, "'{{'"),
            Tok::RBrace => write!(f, "'}}'"),
            Tok::LParen => write!(f, "'('"),
            Tok::RParen => write!(f, "')'"),
            Tok::Eq => write!(f, "'='"),
            Tok::Dot => write!(f, "'.'"),
            Tok::Semi => write!(f, "';'"),
            Tok::Bang => write!(f, "'!'"),
            Tok::Query => write!(f, "'?'"),
            Tok::Colon => write!(f, "':'"),
            Tok::Arrow => write!(f, "'->'"),
            Tok::Plus => write!(f, "'+'"),
            Tok::IPlus => write!(f, "'(+)'"),
            Tok::GPlus => write!(f, "'[+]'"),
            Tok::Eof => write!(f, "end of input"),
        }
    }
}

struct Lexed {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(src: &str) -> Result<Vec<Lexed>, SyntaxError> {
    let chars: Vec<char> = src.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    let mut line = 1;
    let mut col = 1;
    let mut push = |tok, line, col| toks.push(Lexed { tok, line, col });
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let (tline, tcol) = (line, col);
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
                col += 1;
            }
            let word: String = chars[start..i].iter().collect();
            let tok = match word.as_str() {
                "net" => Tok::KwNet,
                "global" => Tok::KwGlobal,
                "loc" => Tok::KwLoc,
                "rec" => Tok::KwRec,
                "end" => Tok::KwEnd,
                _ => Tok::Ident(word),
            };
            push(tok, tline, tcol);
            continue;
        }
        let two = |a: char| i + 1 < chars.len() && chars[i + 1] == a;
        let three = |a: char, b: char| i + 2 < chars.len() && chars[i + 1] == a && chars[i + 2] == b;
        match c {
            '(' if three('+', ')') => {
                push(Tok::IPlus, tline, tcol);
                i += 3;
                col += 3;
            }
            '[' if three('+', ']') => {
                push(Tok::GPlus, tline, tcol);
                i += 3;
                col += 3;
            }
            '-' if two('>') => {
                push(Tok::Arrow, tline, tcol);
                i += 2;
                col += 2;
            }
            '(' => {
                push(Tok::LParen, tline, tcol);
                i += 1;
                col += 1;
            }
            ')' => {
                push(Tok::RParen, tline, tcol);
                i += 1;
                col += 1;
            }
            '{' => {
                push(Tok::LBrace, tline, tcol);
                i += 1;
                col += 1;
            }
            '}' => {
                push(Tok::RBrace, tline, tcol);
                i += 1;
                col += 1;
            }
            '=' => {
                push(Tok::Eq, tline, tcol);
                i += 1;
                col += 1;
            }
            '.' => {
                push(Tok::Dot, tline, tcol);
                i += 1;
                col += 1;
            }
            ';' => {
                push(Tok::Semi, tline, tcol);
                i += 1;
                col += 1;
            }
            '!' => {
                push(Tok::Bang, tline, tcol);
                i += 1;
                col += 1;
            }
            '?' => {
                push(Tok::Query, tline, tcol);
                i += 1;
                col += 1;
            }
            ':' => {
                push(Tok::Colon, tline, tcol);
                i += 1;
                col += 1;
            }
            '+' => {
                push(Tok::Plus, tline, tcol);
                i += 1;
                col += 1;
            }
            _ => return perr(tline, tcol, format!("unexpected character '{c}'")),
        }
    }
    toks.push(Lexed {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(toks)
}

struct Parser {
    toks: Vec<Lexed>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek2(&self) -> &Tok {
        let i = (self.pos + 1).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn here(&self) -> (usize, usize) {
        (self.toks[self.pos].line, self.toks[self.pos].col)
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok) -> Result<(), SyntaxError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            let (l, c) = self.here();
            perr(l, c, format!("expected {want}, found {}", self.peek()))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, SyntaxError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            other => {
                let (l, c) = self.here();
                perr(l, c, format!("expected {what}, found {other}"))
            }
        }
    }

    /// Parses a thread. With `choice` set, `(+)` and `+` may join prefixes at
    /// this level; continuations after `;` are always parsed without it.
    fn thread(&mut self, choice: bool) -> Result<Thread, SyntaxError> {
        match self.peek().clone() {
            Tok::KwEnd => {
                self.bump();
                self.no_choice_after("'end'", choice)?;
                Ok(Thread::End)
            }
            Tok::KwRec => {
                self.bump();
                let var = self.ident("a recursion variable")?;
                self.expect(Tok::Dot)?;
                let body = self.thread(choice)?;
                Ok(Thread::Rec {
                    var,
                    id: InstrId(u32::MAX),
                    body: Box::new(body),
                })
            }
            Tok::LParen => {
                self.bump();
                let t = self.thread(true)?;
                self.expect(Tok::RParen)?;
                self.no_choice_after("a parenthesised thread", choice)?;
                Ok(t)
            }
            Tok::Ident(name) => match self.peek2() {
                Tok::Bang => {
                    let mut branches = vec![self.send()?];
                    if choice {
                        while *self.peek() == Tok::IPlus {
                            self.bump();
                            branches.push(self.send()?);
                        }
                        if *self.peek() == Tok::Plus {
                            let (l, c) = self.here();
                            return perr(l, c, "cannot mix '(+)' and '+' in the same choice");
                        }
                    }
                    Ok(Thread::Internal(branches))
                }
                Tok::Query => {
                    let mut branches = vec![self.recv()?];
                    if choice {
                        while *self.peek() == Tok::Plus {
                            self.bump();
                            branches.push(self.recv()?);
                        }
                        if *self.peek() == Tok::IPlus {
                            let (l, c) = self.here();
                            return perr(l, c, "cannot mix '(+)' and '+' in the same choice");
                        }
                    }
                    Ok(Thread::External(branches))
                }
                _ => {
                    self.bump();
                    self.no_choice_after("a variable", choice)?;
                    Ok(Thread::Var(name))
                }
            },
            other => {
                let (l, c) = self.here();
                perr(l, c, format!("expected a thread, found {other}"))
            }
        }
    }

    /// A choice operand must be a bare send or receive prefix, so a choice
    /// operator directly after any other form is an error at binding level.
    fn no_choice_after(&self, what: &str, choice: bool) -> Result<(), SyntaxError> {
        if choice && matches!(self.peek(), Tok::Plus | Tok::IPlus) {
            let (l, c) = self.here();
            return perr(
                l,
                c,
                format!("a choice operand must be a send or receive prefix, not {what}"),
            );
        }
        Ok(())
    }

    fn send(&mut self) -> Result<SendBranch, SyntaxError> {
        let target = self.ident("a location")?;
        self.expect(Tok::Bang)?;
        let label = self.ident("a label")?;
        self.expect(Tok::Semi)?;
        let cont = self.thread(false)?;
        Ok(SendBranch {
            target,
            label,
            id: InstrId(u32::MAX),
            cont,
        })
    }

    fn recv(&mut self) -> Result<RecvBranch, SyntaxError> {
        let source = self.ident("a location")?;
        self.expect(Tok::Query)?;
        let label = self.ident("a label")?;
        self.expect(Tok::Semi)?;
        let cont = self.thread(false)?;
        Ok(RecvBranch {
            source,
            label,
            id: InstrId(u32::MAX),
            cont,
        })
    }

    fn gtype(&mut self, choice: bool) -> Result<GlobalType, SyntaxError> {
        match self.peek().clone() {
            Tok::KwEnd => {
                self.bump();
                Ok(GlobalType::End)
            }
            Tok::KwRec => {
                self.bump();
                let var = self.ident("a recursion variable")?;
                self.expect(Tok::Dot)?;
                let body = self.gtype(choice)?;
                Ok(GlobalType::Rec {
                    var,
                    body: Box::new(body),
                })
            }
            Tok::LParen => {
                self.bump();
                let g = self.gtype(true)?;
                self.expect(Tok::RParen)?;
                Ok(g)
            }
            Tok::Ident(name) if name == "deadlock" => {
                self.bump();
                Ok(GlobalType::Deadlock)
            }
            Tok::Ident(name) => match self.peek2() {
                Tok::Arrow => {
                    let (sline, scol) = self.here();
                    let (sender, first) = self.comm()?;
                    let mut branches = vec![first];
                    if choice {
                        while *self.peek() == Tok::GPlus {
                            self.bump();
                            let (l, c) = self.here();
                            let (s, b) = self.comm()?;
                            if s != sender {
                                return perr(
                                    l,
                                    c,
                                    format!(
                                        "all branches of a global choice must have the same sender, found '{s}' after '{sender}'"
                                    ),
                                );
                            }
                            branches.push(b);
                        }
                    }
                    let _ = (sline, scol);
                    Ok(GlobalType::Comm { sender, branches })
                }
                _ => {
                    self.bump();
                    Ok(GlobalType::Var(name))
                }
            },
            other => {
                let (l, c) = self.here();
                perr(l, c, format!("expected a global type, found {other}"))
            }
        }
    }

    fn comm(&mut self) -> Result<(String, GBranch), SyntaxError> {
        let sender = self.ident("a location")?;
        self.expect(Tok::Arrow)?;
        let receiver = self.ident("a location")?;
        self.expect(Tok::Colon)?;
        let label = self.ident("a label")?;
        self.expect(Tok::Semi)?;
        let cont = self.gtype(false)?;
        Ok((
            sender,
            GBranch {
                receiver,
                label,
                cont,
            },
        ))
    }

    fn file(&mut self) -> Result<SourceFile, SyntaxError> {
        let mut out = SourceFile::default();
        let mut names = BTreeSet::new();
        loop {
            match self.peek().clone() {
                Tok::Eof => break,
                Tok::KwNet => {
                    self.bump();
                    let name = self.ident("a network name")?;
                    if !names.insert(name.clone()) {
                        return Err(SyntaxError::DuplicateItem { name });
                    }
                    self.expect(Tok::LBrace)?;
                    let mut locations = IndexMap::new();
                    while *self.peek() == Tok::KwLoc {
                        self.bump();
                        let loc = self.ident("a location name")?;
                        self.expect(Tok::Eq)?;
                        let t = self.thread(true)?;
                        if locations.insert(loc.clone(), t).is_some() {
                            return Err(SyntaxError::DuplicateLocation { net: name, loc });
                        }
                    }
                    if locations.is_empty() {
                        let (l, c) = self.here();
                        return perr(l, c, "a network needs at least one 'loc' entry");
                    }
                    self.expect(Tok::RBrace)?;
                    let mut net = Network { name, locations };
                    assign_ids(&mut net);
                    validate_network(&net, &mut out.warnings)?;
                    out.networks.push(net);
                }
                Tok::KwGlobal => {
                    self.bump();
                    let name = self.ident("a global type name")?;
                    if !names.insert(name.clone()) {
                        return Err(SyntaxError::DuplicateItem { name });
                    }
                    self.expect(Tok::Eq)?;
                    let gtype = self.gtype(true)?;
                    validate_gtype(&name, &gtype)?;
                    out.globals.push(GlobalDef { name, gtype });
                }
                other => {
                    let (l, c) = self.here();
                    return perr(l, c, format!("expected 'net' or 'global', found {other}"));
                }
            }
        }
        Ok(out)
    }
}

/// Parses a whole source file and validates every definition in it.
pub fn parse_file(src: &str) -> Result<SourceFile, SyntaxError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0 };
    p.file()
}

/// Parses a single network definition, `net name { loc p = ... }`.
pub fn parse_network(src: &str) -> Result<Network, SyntaxError> {
    let file = parse_file(src)?;
    match file.networks.len() {
        1 if file.globals.is_empty() => Ok(file.networks.into_iter().next().unwrap()),
        _ => perr(1, 1, "expected exactly one network definition"),
    }
}

/// Parses a bare thread. No validation is applied, so the result may be open.
pub fn parse_thread(src: &str) -> Result<Thread, SyntaxError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0 };
    let mut t = p.thread(true)?;
    if *p.peek() != Tok::Eof {
        let (l, c) = p.here();
        return perr(l, c, format!("trailing input, found {}", p.peek()));
    }
    let mut next = 0;
    number_thread(&mut t, &mut next);
    Ok(t)
}

/// Parses a bare global type. No validation is applied.
pub fn parse_global_type(src: &str) -> Result<GlobalType, SyntaxError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0 };
    let g = p.gtype(true)?;
    if *p.peek() != Tok::Eof {
        let (l, c) = p.here();
        return perr(l, c, format!("trailing input, found {}", p.peek()));
    }
    Ok(g)
}

fn assign_ids(net: &mut Network) {
    let mut next = 0;
    for t in net.locations.values_mut() {
        number_thread(t, &mut next);
    }
}

fn number_thread(t: &mut Thread, next: &mut u32) {
    match t {
        Thread::End | Thread::Var(_) => {}
        Thread::Internal(branches) => {
            for b in branches {
                b.id = InstrId(*next);
                *next += 1;
                number_thread(&mut b.cont, next);
            }
        }
        Thread::External(branches) => {
            for b in branches {
                b.id = InstrId(*next);
                *next += 1;
                number_thread(&mut b.cont, next);
            }
        }
        Thread::Rec { id, body, .. } => {
            *id = InstrId(*next);
            *next += 1;
            number_thread(body, next);
        }
    }
}

fn validate_network(net: &Network, warnings: &mut Vec<String>) -> Result<(), SyntaxError> {
    for (loc, t) in &net.locations {
        let mut scope = Vec::new();
        check_thread(net, loc, t, &mut scope, warnings)?;
    }
    Ok(())
}

fn check_thread(
    net: &Network,
    loc: &str,
    t: &Thread,
    scope: &mut Vec<String>,
    warnings: &mut Vec<String>,
) -> Result<(), SyntaxError> {
    match t {
        Thread::End => Ok(()),
        Thread::Var(x) => {
            if scope.iter().any(|v| v == x) {
                Ok(())
            } else {
                Err(SyntaxError::UnboundVar {
                    net: net.name.clone(),
                    loc: loc.to_string(),
                    var: x.clone(),
                })
            }
        }
        Thread::Rec { var, body, .. } => {
            if matches!(**body, Thread::Var(_) | Thread::Rec { .. }) {
                return Err(SyntaxError::UnguardedRecursion {
                    net: net.name.clone(),
                    loc: loc.to_string(),
                    var: var.clone(),
                });
            }
            scope.push(var.clone());
            let r = check_thread(net, loc, body, scope, warnings);
            scope.pop();
            r
        }
        Thread::Internal(branches) => {
            for b in branches {
                check_peer(net, loc, &b.target, warnings)?;
                check_thread(net, loc, &b.cont, scope, warnings)?;
            }
            Ok(())
        }
        Thread::External(branches) => {
            for b in branches {
                check_peer(net, loc, &b.source, warnings)?;
                check_thread(net, loc, &b.cont, scope, warnings)?;
            }
            Ok(())
        }
    }
}

fn check_peer(
    net: &Network,
    loc: &str,
    peer: &str,
    warnings: &mut Vec<String>,
) -> Result<(), SyntaxError> {
    if !net.locations.contains_key(peer) {
        return Err(SyntaxError::UnknownPeer {
            net: net.name.clone(),
            loc: loc.to_string(),
            peer: peer.to_string(),
        });
    }
    if peer == loc {
        warnings.push(format!(
            "network '{}': location '{}' has a prefix addressing itself",
            net.name, loc
        ));
    }
    Ok(())
}

fn validate_gtype(name: &str, g: &GlobalType) -> Result<(), SyntaxError> {
    let mut scope = Vec::new();
    check_gtype(name, g, &mut scope)
}

fn check_gtype(name: &str, g: &GlobalType, scope: &mut Vec<String>) -> Result<(), SyntaxError> {
    match g {
        GlobalType::End | GlobalType::Deadlock => Ok(()),
        GlobalType::Var(x) => {
            if scope.iter().any(|v| v == x) {
                Ok(())
            } else {
                Err(SyntaxError::GlobalUnboundVar {
                    name: name.to_string(),
                    var: x.clone(),
                })
            }
        }
        GlobalType::Rec { var, body } => {
            if matches!(**body, GlobalType::Var(_) | GlobalType::Rec { .. }) {
                return Err(SyntaxError::GlobalUnguardedRecursion {
                    name: name.to_string(),
                    var: var.clone(),
                });
            }
            scope.push(var.clone());
            let r = check_gtype(name, body, scope);
            scope.pop();
            r
        }
        GlobalType::Comm { sender, branches } => {
            for b in branches {
                if b.receiver == *sender {
                    return Err(SyntaxError::SelfCommunication {
                        name: name.to_string(),
                        loc: sender.clone(),
                    });
                }
                check_gtype(name, &b.cont, scope)?;
            }
            Ok(())
        }
    }
}

/// Capture-free substitution of `rep` for the free variable `var`.
/// All callers substitute closed terms, and instruction ids in `rep`
/// are copied as they are.
pub fn subst(t: &Thread, var: &str, rep: &Thread) -> Thread {
    match t {
        Thread::End => Thread::End,
        Thread::Var(x) => {
            if x == var {
                rep.clone()
            } else {
                t.clone()
            }
        }
        Thread::Rec { var: v, id, body } => {
            if v == var {
                t.clone()
            } else {
                Thread::Rec {
                    var: v.clone(),
                    id: *id,
                    body: Box::new(subst(body, var, rep)),
                }
            }
        }
        Thread::Internal(branches) => Thread::Internal(
            branches
                .iter()
                .map(|b| SendBranch {
                    target: b.target.clone(),
                    label: b.label.clone(),
                    id: b.id,
                    cont: subst(&b.cont, var, rep),
                })
                .collect(),
        ),
        Thread::External(branches) => Thread::External(
            branches
                .iter()
                .map(|b| RecvBranch {
                    source: b.source.clone(),
                    label: b.label.clone(),
                    id: b.id,
                    cont: subst(&b.cont, var, rep),
                })
                .collect(),
        ),
    }
}

pub fn subst_g(g: &GlobalType, var: &str, rep: &GlobalType) -> GlobalType {
    match g {
        GlobalType::End | GlobalType::Deadlock => g.clone(),
        GlobalType::Var(x) => {
            if x == var {
                rep.clone()
            } else {
                g.clone()
            }
        }
        GlobalType::Rec { var: v, body } => {
            if v == var {
                g.clone()
            } else {
                GlobalType::Rec {
                    var: v.clone(),
                    body: Box::new(subst_g(body, var, rep)),
                }
            }
        }
        GlobalType::Comm { sender, branches } => GlobalType::Comm {
            sender: sender.clone(),
            branches: branches
                .iter()
                .map(|b| GBranch {
                    receiver: b.receiver.clone(),
                    label: b.label.clone(),
                    cont: subst_g(&b.cont, var, rep),
                })
                .collect(),
        },
    }
}

/// One unfolding step of a recursive thread; other forms are returned as is.
pub fn unfold(t: &Thread) -> Thread {
    match t {
        Thread::Rec { var, body, .. } => subst(body, var, t),
        _ => t.clone(),
    }
}

/// One unfolding step of a recursive global type; other forms are returned as is.
pub fn unfold_g(g: &GlobalType) -> GlobalType {
    match g {
        GlobalType::Rec { var, body } => subst_g(body, var, g),
        _ => g.clone(),
    }
}

pub fn free_vars(t: &Thread) -> BTreeSet<String> {
    fn walk(t: &Thread, scope: &mut Vec<String>, out: &mut BTreeSet<String>) {
        match t {
            Thread::End => {}
            Thread::Var(x) => {
                if !scope.iter().any(|v| v == x) {
                    out.insert(x.clone());
                }
            }
            Thread::Rec { var, body, .. } => {
                scope.push(var.clone());
                walk(body, scope, out);
                scope.pop();
            }
            Thread::Internal(bs) => {
                for b in bs {
                    walk(&b.cont, scope, out);
                }
            }
            Thread::External(bs) => {
                for b in bs {
                    walk(&b.cont, scope, out);
                }
            }
        }
    }
    let mut out = BTreeSet::new();
    walk(t, &mut Vec::new(), &mut out);
    out
}

pub fn free_vars_g(g: &GlobalType) -> BTreeSet<String> {
    fn walk(g: &GlobalType, scope: &mut Vec<String>, out: &mut BTreeSet<String>) {
        match g {
            GlobalType::End | GlobalType::Deadlock => {}
            GlobalType::Var(x) => {
                if !scope.iter().any(|v| v == x) {
                    out.insert(x.clone());
                }
            }
            GlobalType::Rec { var, body } => {
                scope.push(var.clone());
                walk(body, scope, out);
                scope.pop();
            }
            GlobalType::Comm { branches, .. } => {
                for b in branches {
                    walk(&b.cont, scope, out);
                }
            }
        }
    }
    let mut out = BTreeSet::new();
    walk(g, &mut Vec::new(), &mut out);
    out
}

impl Thread {
    pub fn is_closed(&self) -> bool {
        free_vars(self).is_empty()
    }

    /// Structural equality that ignores instruction ids.
    pub fn eq_mod_ids(&self, other: &Thread) -> bool {
        match (self, other) {
            (Thread::End, Thread::End) => true,
            (Thread::Var(a), Thread::Var(b)) => a == b,
            (
                Thread::Rec { var: va, body: ba, .. },
                Thread::Rec { var: vb, body: bb, .. },
            ) => va == vb && ba.eq_mod_ids(bb),
            (Thread::Internal(xs), Thread::Internal(ys)) => {
                xs.len() == ys.len()
                    && xs.iter().zip(ys).all(|(x, y)| {
                        x.target == y.target && x.label == y.label && x.cont.eq_mod_ids(&y.cont)
                    })
            }
            (Thread::External(xs), Thread::External(ys)) => {
                xs.len() == ys.len()
                    && xs.iter().zip(ys).all(|(x, y)| {
                        x.source == y.source && x.label == y.label && x.cont.eq_mod_ids(&y.cont)
                    })
            }
            _ => false,
        }
    }
}

impl GlobalType {
    pub fn is_closed(&self) -> bool {
        free_vars_g(self).is_empty()
    }

    pub fn mentions_deadlock(&self) -> bool {
        match self {
            GlobalType::Deadlock => true,
            GlobalType::End | GlobalType::Var(_) => false,
            GlobalType::Rec { body, .. } => body.mentions_deadlock(),
            GlobalType::Comm { branches, .. } => {
                branches.iter().any(|b| b.cont.mentions_deadlock())
            }
        }
    }
}

/// Equality of global types up to consistent renaming of bound variables.
pub fn alpha_eq_g(a: &GlobalType, b: &GlobalType) -> bool {
    fn go(a: &GlobalType, b: &GlobalType, env: &mut Vec<(String, String)>) -> bool {
        match (a, b) {
            (GlobalType::End, GlobalType::End) => true,
            (GlobalType::Deadlock, GlobalType::Deadlock) => true,
            (GlobalType::Var(x), GlobalType::Var(y)) => {
                for (vx, vy) in env.iter().rev() {
                    if vx == x || vy == y {
                        return vx == x && vy == y;
                    }
                }
                x == y
            }
            (GlobalType::Rec { var: va, body: ba }, GlobalType::Rec { var: vb, body: bb }) => {
                env.push((va.clone(), vb.clone()));
                let r = go(ba, bb, env);
                env.pop();
                r
            }
            (
                GlobalType::Comm { sender: sa, branches: xs },
                GlobalType::Comm { sender: sb, branches: ys },
            ) => {
                sa == sb
                    && xs.len() == ys.len()
                    && xs.iter().zip(ys).all(|(x, y)| {
                        x.receiver == y.receiver && x.label == y.label && go(&x.cont, &y.cont, env)
                    })
            }
            _ => false,
        }
    }
    go(a, b, &mut Vec::new())
}

pub(crate) fn fmt_thread(t: &Thread, seq: bool, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match t {
        Thread::End => write!(f, "end"),
        Thread::Var(x) => write!(f, "{x}"),
        Thread::Rec { var, body, .. } => {
            if seq {
                write!(f, "(rec {var}. ")?;
                fmt_thread(body, false, f)?;
                write!(f, ")")
            } else {
                write!(f, "rec {var}. ")?;
                fmt_thread(body, false, f)
            }
        }
        Thread::Internal(branches) => {
            let wrap = seq && branches.len() > 1;
            if wrap {
                write!(f, "(")?;
            }
            for (i, b) in branches.iter().enumerate() {
                if i > 0 {
                    write!(f, " (+) ")?;
                }
                write!(f, "{}!{}; ", b.target, b.label)?;
                fmt_thread(&b.cont, true, f)?;
            }
            if wrap {
                write!(f, ")")?;
            }
            Ok(())
        }
        Thread::External(branches) => {
            let wrap = seq && branches.len() > 1;
            if wrap {
                write!(f, "(")?;
            }
            for (i, b) in branches.iter().enumerate() {
                if i > 0 {
                    write!(f, " + ")?;
                }
                write!(f, "{}?{}; ", b.source, b.label)?;
                fmt_thread(&b.cont, true, f)?;
            }
            if wrap {
                write!(f, ")")?;
            }
            Ok(())
        }
    }
}

impl fmt::Display for Thread {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_thread(self, false, f)
    }
}

fn fmt_gtype(g: &GlobalType, seq: bool, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match g {
        GlobalType::End => write!(f, "end"),
        GlobalType::Deadlock => write!(f, "deadlock"),
        GlobalType::Var(x) => write!(f, "{x}"),
        GlobalType::Rec { var, body } => {
            if seq {
                write!(f, "(rec {var}. ")?;
                fmt_gtype(body, false, f)?;
                write!(f, ")")
            } else {
                write!(f, "rec {var}. ")?;
                fmt_gtype(body, false, f)
            }
        }
        GlobalType::Comm { sender, branches } => {
            let wrap = seq && branches.len() > 1;
            if wrap {
                write!(f, "(")?;
            }
            for (i, b) in branches.iter().enumerate() {
                if i > 0 {
                    write!(f, " [+] ")?;
                }
                write!(f, "{} -> {}: {}; ", sender, b.receiver, b.label)?;
                fmt_gtype(&b.cont, true, f)?;
            }
            if wrap {
                write!(f, ")")?;
            }
            Ok(())
        }
    }
}

impl fmt::Display for GlobalType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_gtype(self, false, f)
    }
}

impl fmt::Display for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "net {} {{", self.name)?;
        for (loc, t) in &self.locations {
            writeln!(f, "  loc {loc} = {t}")?;
        }
        write!(f, "}}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(src: &str) -> Result<Network, SyntaxError> {
        parse_network(src)
    }

    #[test]
    fn single_location_end() {
        let n = net("net n { loc p = end }").unwrap();
        assert_eq!(n.locations.len(), 1);
        assert_eq!(n.locations["p"], Thread::End);
    }

    #[test]
    fn unguarded_recursion_rejected() {
        let e = net("net n { loc p = rec X. X }").unwrap_err();
        assert!(matches!(e, SyntaxError::UnguardedRecursion { .. }));
        let e = net("net n { loc p = rec X. rec Y. q!a; Y loc q = p?a; end }").unwrap_err();
        assert!(matches!(e, SyntaxError::UnguardedRecursion { .. }));
    }

    #[test]
    fn duplicate_location_rejected() {
        let e = net("net n { loc p = end loc p = end }").unwrap_err();
        assert!(matches!(e, SyntaxError::DuplicateLocation { .. }));
    }

    #[test]
    fn unbound_variable_rejected() {
        let e = net("net n { loc p = rec X. q!a; Y loc q = p?a; end }").unwrap_err();
        assert!(matches!(e, SyntaxError::UnboundVar { ref var, .. } if var == "Y"));
    }

    #[test]
    fn unknown_peer_rejected() {
        let e = net("net n { loc p = q!a; end }").unwrap_err();
        assert!(matches!(e, SyntaxError::UnknownPeer { ref peer, .. } if peer == "q"));
    }

    #[test]
    fn self_addressing_warns_but_parses() {
        let src = "net n { loc p = p!a; end }";
        let file = parse_file(src).unwrap();
        assert_eq!(file.networks.len(), 1);
        assert_eq!(file.warnings.len(), 1);
        assert!(file.warnings[0].contains("addressing itself"));
    }

    #[test]
    fn self_communication_in_global_type_rejected() {
        let e = parse_file("global G = p -> p: a; end").unwrap_err();
        assert!(matches!(e, SyntaxError::SelfCommunication { .. }));
    }

    #[test]
    fn mixed_choice_operators_rejected() {
        let e = net("net n { loc p = q!a; end + q?b; end loc q = end }").unwrap_err();
        assert!(matches!(e, SyntaxError::Parse { ref msg, .. } if msg.contains("mix")));
        let e = net("net n { loc p = q?a; end (+) q!b; end loc q = end }").unwrap_err();
        assert!(matches!(e, SyntaxError::Parse { ref msg, .. } if msg.contains("mix")));
    }

    #[test]
    fn ids_follow_source_order() {
        let n = net("net n { loc p = rec X. q!a; X loc q = rec Y. p?a; Y }").unwrap();
        match &n.locations["p"] {
            Thread::Rec { id, body, .. } => {
                assert_eq!(*id, InstrId(0));
                match &**body {
                    Thread::Internal(bs) => assert_eq!(bs[0].id, InstrId(1)),
                    other => panic!("unexpected body {other:?}"),
                }
            }
            other => panic!("unexpected thread {other:?}"),
        }
        match &n.locations["q"] {
            Thread::Rec { id, body, .. } => {
                assert_eq!(*id, InstrId(2));
                match &**body {
                    Thread::External(bs) => assert_eq!(bs[0].id, InstrId(3)),
                    other => panic!("unexpected body {other:?}"),
                }
            }
            other => panic!("unexpected thread {other:?}"),
        }
    }

    #[test]
    fn substitution_keeps_ids() {
        let t = parse_thread("rec X. q!a; X").unwrap();
        let (var, body) = match &t {
            Thread::Rec { var, body, .. } => (var.clone(), (**body).clone()),
            other => panic!("unexpected thread {other:?}"),
        };
        let unfolded = subst(&body, &var, &t);
        match &unfolded {
            Thread::Internal(bs) => {
                assert_eq!(bs[0].id, InstrId(1));
                match &bs[0].cont {
                    Thread::Rec { id, .. } => assert_eq!(*id, InstrId(0)),
                    other => panic!("unexpected continuation {other:?}"),
                }
            }
            other => panic!("unexpected unfolding {other:?}"),
        }
    }

    #[test]
    fn choice_binds_looser_than_sequencing() {
        let t = parse_thread("q!a; rec X. q!b; X (+) q!c; end").unwrap();
        match &t {
            Thread::Internal(bs) => {
                assert_eq!(bs.len(), 2);
                assert!(matches!(bs[0].cont, Thread::Rec { .. }));
                assert_eq!(bs[1].label, "c");
            }
            other => panic!("unexpected thread {other:?}"),
        }
        let greedy = parse_thread("rec X. q!b; X (+) q!c; X").unwrap();
        match &greedy {
            Thread::Rec { body, .. } => match &**body {
                Thread::Internal(bs) => assert_eq!(bs.len(), 2),
                other => panic!("unexpected body {other:?}"),
            },
            other => panic!("unexpected thread {other:?}"),
        }
    }

    #[test]
    fn parenthesised_choice_as_continuation() {
        let t = parse_thread("q!a; (q!b; end (+) q!c; end)").unwrap();
        match &t {
            Thread::Internal(bs) => {
                assert_eq!(bs.len(), 1);
                match &bs[0].cont {
                    Thread::Internal(inner) => assert_eq!(inner.len(), 2),
                    other => panic!("unexpected continuation {other:?}"),
                }
            }
            other => panic!("unexpected thread {other:?}"),
        }
    }

    #[test]
    fn thread_round_trips() {
        let samples = [
            "end",
            "q!a; end",
            "q!a; end (+) q!b; end",
            "rec X. q!a; X (+) q!b; (rec Y. q?c; Y)",
            "p?a; (q!b; end (+) q!c; end) + p?d; end",
            "rec X. p?a; p?d; X + p?b; (r!c; X)",
            "q!a; (rec X. q!b; X) (+) q!c; end",
        ];
        for src in samples {
            let t = match parse_thread(src) {
                Ok(t) => t,
                Err(e) => panic!("{src}: {e}"),
            };
            let printed = t.to_string();
            let back = parse_thread(&printed).unwrap_or_else(|e| panic!("{printed}: {e}"));
            assert_eq!(t, back, "round trip of {src} via {printed}");
        }
    }

    #[test]
    fn gtype_round_trips() {
        let samples = [
            "end",
            "deadlock",
            "rec X. p -> q: a; X [+] p -> r: b; end",
            "p -> q: a; (rec X. q -> r: b; X)",
            "rec X. p -> q: a; (q -> r: b; X [+] q -> r: c; end)",
        ];
        for src in samples {
            let g = parse_global_type(src).unwrap_or_else(|e| panic!("{src}: {e}"));
            let printed = g.to_string();
            let back = parse_global_type(&printed).unwrap_or_else(|e| panic!("{printed}: {e}"));
            assert_eq!(g, back, "round trip of {src} via {printed}");
        }
    }

    #[test]
    fn network_round_trips() {
        let src = "net shop {
            loc buyer = rec X. seller!talk; X (+) seller!buy; (rec Z. shipper?box; end)
            loc seller = rec Y. buyer?talk; Y + buyer?buy; (shipper!order; end)
            loc shipper = seller?order; buyer!box; end
        }";
        let n = net(src).unwrap();
        let printed = n.to_string();
        let back = net(&printed).unwrap_or_else(|e| panic!("{printed}: {e}"));
        assert_eq!(n, back);
    }

    #[test]
    fn deadlock_is_contextual() {
        let g = parse_global_type("deadlock").unwrap();
        assert_eq!(g, GlobalType::Deadlock);
        let e = net("net n { loc p = deadlock }").unwrap_err();
        assert!(matches!(e, SyntaxError::UnboundVar { ref var, .. } if var == "deadlock"));
    }

    #[test]
    fn duplicate_branches_are_allowed() {
        let t = parse_thread("q!a; end (+) q!a; r!c; end").unwrap();
        match &t {
            Thread::Internal(bs) => {
                assert_eq!(bs.len(), 2);
                assert_eq!(bs[0].id, InstrId(0));
                assert_eq!(bs[1].id, InstrId(1));
            }
            other => panic!("unexpected thread {other:?}"),
        }
    }

    #[test]
    fn comments_and_positions() {
        let src = "# heading\nnet n { # inline\n  loc p = end\n}\n";
        let file = parse_file(src).unwrap();
        assert_eq!(file.networks.len(), 1);
        let e = parse_file("net n {\n  loc p = q!\n}").unwrap_err();
        match e {
            SyntaxError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn mixed_sender_global_choice_rejected() {
        let e = parse_file("global G = p -> q: a; end [+] r -> q: b; end").unwrap_err();
        assert!(matches!(e, SyntaxError::Parse { ref msg, .. } if msg.contains("same sender")));
    }

    #[test]
    fn alpha_equivalence() {
        let a = parse_global_type("rec X. p -> q: a; X [+] p -> q: b; (rec Y. p -> q: c; Y)")
            .unwrap();
        let b = parse_global_type("rec Z. p -> q: a; Z [+] p -> q: b; (rec W. p -> q: c; W)")
            .unwrap();
        assert!(alpha_eq_g(&a, &b));
        let c = parse_global_type("rec Z. p -> q: a; Z [+] p -> q: b; (rec W. p -> q: c; Z)")
            .unwrap();
        assert!(!alpha_eq_g(&a, &c));
    }
}
