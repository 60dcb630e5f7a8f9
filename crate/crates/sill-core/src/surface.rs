//! Concrete syntax for `.sill` programs: lexer, parser, pretty-printer, and
//! the parse-time linearity lint.
//!
//! Grammar sketch (normative for this artifact):
//!
//! ```text
//! item    ::= "level" ID ";" | "order" ID "<=" ID ";"
//!           | "type" ID "=" type ";"?
//!           | "proc" ID constraints? "(" params? ")" "@" sec "::" ID ":" type "[" sec "]" "=" proc
//!           | "exec" ID
//! type    ::= type1 ("-o" type)?            (right associative, lowest)
//! type1   ::= type2 ("*" type1)?            (right associative)
//! type2   ::= "1" | "+{" branches "}" | "&{" branches "}" | "(" type ")" | ID
//! sec     ::= sec1 ("\/" sec)? ; sec1 ::= sec2 ("/\" sec1)? ; sec2 ::= ID | "(" sec ")"
//! proc    ::= "close" ID | "wait" ID ";" proc | "send" ID ID ";" proc
//!           | "fwd" ID ID | "case" ID "(" ID "=>" proc ("|" ID "=>" proc)* ")"
//!           | ID "." ID ";" proc | ID "<-" "recv" ID ";" proc
//!           | ID ":" type "[" sec "]" "<-" ID "@" sec "<-" "(" args ")" (";" proc)?
//!           | "(" proc ")"
//! ```
//!
//! A spawn without a continuation is a tail call: it behaves as the spawn of
//! a fresh channel followed by a forward of the offered channel.
//!
//! Secrecy variables of a definition are the non-level identifiers mentioned
//! in its constraint list; a non-level identifier used in an annotation but
//! absent from the constraints is an unbound-variable error (this catches
//! misspelled level names).

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::ast::{
    CRef, CtxEntry, Pos, ProcDef, ProcKind, ProcTerm, SessionType, Signature,
};
use crate::lattice::{ExtendedLattice, LatticeError, SecTerm, SecurityLattice};

/// Errors raised while parsing or elaborating surface programs.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SurfaceError {
    #[error("{pos}: syntax error: {msg}")]
    Syntax { pos: Pos, msg: String },
    #[error("{pos}: duplicate {what} `{name}`")]
    Duplicate { pos: Pos, what: &'static str, name: String },
    #[error("{pos}: unbound {what} `{name}`")]
    Unbound { pos: Pos, what: &'static str, name: String },
    #[error("{pos}: linearity violation on `{var}`: {msg}")]
    Linearity { pos: Pos, var: String, msg: String },
    #[error("lattice error: {0}")]
    Lattice(#[from] LatticeError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    One,
    // Punctuation and operators.
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Colon,
    ColonColon,
    Semi,
    Comma,
    Dot,
    Pipe,
    At,
    Eq,
    Plus,
    Amp,
    Star,
    Lolli,
    Leq,
    Arrow,   // =>
    LArrow,  // <-
    Join,    // \/
    Meet,    // /\
    Eof,
}

impl std::fmt::Display for Tok {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Tok::Ident(i) => return write!(f, "`{i}`"),
            Tok::One => "`1`",
            Tok::LParen => "`(`",
            Tok::RParen => "`)`",
            Tok::LBrace => "`{`",
            Tok::RBrace => "`}`",
            Tok::LBracket => "`[`",
            Tok::RBracket => "`]`",
            Tok::Colon => "`:`",
            Tok::ColonColon => "`::`",
            Tok::Semi => "`;`",
            Tok::Comma => "`,`",
            Tok::Dot => "`.`",
            Tok::Pipe => "`|`",
            Tok::At => "`@`",
            Tok::Eq => "`=`",
            Tok::Plus => "`+`",
            Tok::Amp => "`&`",
            Tok::Star => "`*`",
            Tok::Lolli => "`-o`",
            Tok::Leq => "`<=`",
            Tok::Arrow => "`=>`",
            Tok::LArrow => "`<-`",
            Tok::Join => "`\\/`",
            Tok::Meet => "`/\\`",
            Tok::Eof => "end of input",
        };
        f.write_str(s)
    }
}

struct Lexer<'a> {
    src: &'a [u8],
    i: usize,
    line: u32,
    col: u32,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            i: 0,
            line: 1,
            col: 1,
        }
    }

    fn pos(&self) -> Pos {
        Pos {
            line: self.line,
            col: self.col,
        }
    }

    fn bump(&mut self) -> u8 {
        let c = self.src[self.i];
        self.i += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        c
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.i).copied()
    }

    fn peek2(&self) -> Option<u8> {
        self.src.get(self.i + 1).copied()
    }

    fn tokens(mut self) -> Result<Vec<(Tok, Pos)>, SurfaceError> {
        let mut out = Vec::new();
        loop {
            while let Some(c) = self.peek() {
                if c.is_ascii_whitespace() {
                    self.bump();
                } else if c == b'/' && self.peek2() == Some(b'/') {
                    while let Some(c) = self.peek() {
                        if c == b'\n' {
                            break;
                        }
                        self.bump();
                    }
                } else {
                    break;
                }
            }
            let pos = self.pos();
            let Some(c) = self.peek() else {
                out.push((Tok::Eof, pos));
                return Ok(out);
            };
            let tok = match c {
                b'(' => {
                    self.bump();
                    Tok::LParen
                }
                b')' => {
                    self.bump();
                    Tok::RParen
                }
                b'{' => {
                    self.bump();
                    Tok::LBrace
                }
                b'}' => {
                    self.bump();
                    Tok::RBrace
                }
                b'[' => {
                    self.bump();
                    Tok::LBracket
                }
                b']' => {
                    self.bump();
                    Tok::RBracket
                }
                b';' => {
                    self.bump();
                    Tok::Semi
                }
                b',' => {
                    self.bump();
                    Tok::Comma
                }
                b'.' => {
                    self.bump();
                    Tok::Dot
                }
                b'|' => {
                    self.bump();
                    Tok::Pipe
                }
                b'@' => {
                    self.bump();
                    Tok::At
                }
                b'+' => {
                    self.bump();
                    Tok::Plus
                }
                b'&' => {
                    self.bump();
                    Tok::Amp
                }
                b'*' => {
                    self.bump();
                    Tok::Star
                }
                b':' => {
                    self.bump();
                    if self.peek() == Some(b':') {
                        self.bump();
                        Tok::ColonColon
                    } else {
                        Tok::Colon
                    }
                }
                b'=' => {
                    self.bump();
                    if self.peek() == Some(b'>') {
                        self.bump();
                        Tok::Arrow
                    } else {
                        Tok::Eq
                    }
                }
                b'<' => {
                    self.bump();
                    match self.peek() {
                        Some(b'=') => {
                            self.bump();
                            Tok::Leq
                        }
                        Some(b'-') => {
                            self.bump();
                            Tok::LArrow
                        }
                        _ => {
                            return Err(SurfaceError::Syntax {
                                pos,
                                msg: "expected `<=` or `<-`".into(),
                            })
                        }
                    }
                }
                b'-' => {
                    self.bump();
                    if self.peek() == Some(b'o') {
                        self.bump();
                        Tok::Lolli
                    } else {
                        return Err(SurfaceError::Syntax {
                            pos,
                            msg: "expected `-o`".into(),
                        });
                    }
                }
                b'\\' => {
                    self.bump();
                    if self.peek() == Some(b'/') {
                        self.bump();
                        Tok::Join
                    } else {
                        return Err(SurfaceError::Syntax {
                            pos,
                            msg: "expected `\\/`".into(),
                        });
                    }
                }
                b'/' => {
                    self.bump();
                    if self.peek() == Some(b'\\') {
                        self.bump();
                        Tok::Meet
                    } else {
                        return Err(SurfaceError::Syntax {
                            pos,
                            msg: "expected `/\\` or `//` comment".into(),
                        });
                    }
                }
                b'1' => {
                    self.bump();
                    Tok::One
                }
                c if c.is_ascii_alphabetic() || c == b'_' => {
                    let mut s = String::new();
                    while let Some(c) = self.peek() {
                        if c.is_ascii_alphanumeric() || c == b'_' || c == b'\'' {
                            s.push(self.bump() as char);
                        } else {
                            break;
                        }
                    }
                    Tok::Ident(s)
                }
                other => {
                    return Err(SurfaceError::Syntax {
                        pos,
                        msg: format!("unexpected character `{}`", other as char),
                    })
                }
            };
            out.push((tok, pos));
        }
    }
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    i: usize,
}

/// Raw top-level items in source order, assembled after parsing.
enum Item {
    Level(String, Pos),
    Order(String, String),
    TypeDef(String, SessionType, Pos),
    ProcDef(RawProc),
    Exec(String, Pos),
}

struct RawProc {
    name: String,
    pos: Pos,
    /// Bare variable declarations from the constraint list, e.g. `[psi]`.
    var_decls: Vec<String>,
    constraints: Vec<(SecTerm, SecTerm, bool)>, // (lhs, rhs, is_equality)
    params: Vec<(String, SessionType, SecTerm, Pos)>,
    running: SecTerm,
    offer_var: String,
    offer_type: SessionType,
    offer_sec: SecTerm,
    body: ProcTerm,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.i].0
    }

    fn pos(&self) -> Pos {
        self.toks[self.i].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.i].0.clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }

    fn expect(&mut self, t: Tok) -> Result<Pos, SurfaceError> {
        let pos = self.pos();
        if *self.peek() == t {
            self.bump();
            Ok(pos)
        } else {
            Err(SurfaceError::Syntax {
                pos,
                msg: format!("expected {t}, found {}", self.peek()),
            })
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, Pos), SurfaceError> {
        let pos = self.pos();
        match self.bump() {
            Tok::Ident(s) => Ok((s, pos)),
            other => Err(SurfaceError::Syntax {
                pos,
                msg: format!("expected {what}, found {other}"),
            }),
        }
    }

    fn items(&mut self) -> Result<Vec<Item>, SurfaceError> {
        let mut items = Vec::new();
        loop {
            let pos = self.pos();
            match self.peek() {
                Tok::Eof => return Ok(items),
                Tok::Ident(kw) if kw == "level" => {
                    self.bump();
                    let (name, _) = self.ident("level name")?;
                    self.expect(Tok::Semi)?;
                    items.push(Item::Level(name, pos));
                }
                Tok::Ident(kw) if kw == "order" => {
                    self.bump();
                    let (a, _) = self.ident("level name")?;
                    self.expect(Tok::Leq)?;
                    let (b, _) = self.ident("level name")?;
                    self.expect(Tok::Semi)?;
                    items.push(Item::Order(a, b));
                }
                Tok::Ident(kw) if kw == "type" => {
                    self.bump();
                    let (name, _) = self.ident("type name")?;
                    self.expect(Tok::Eq)?;
                    let ty = self.session_type()?;
                    if *self.peek() == Tok::Semi {
                        self.bump();
                    }
                    items.push(Item::TypeDef(name, ty, pos));
                }
                Tok::Ident(kw) if kw == "proc" => {
                    items.push(Item::ProcDef(self.proc_def()?));
                }
                Tok::Ident(kw) if kw == "exec" => {
                    self.bump();
                    let (name, _) = self.ident("process name")?;
                    if *self.peek() == Tok::Semi {
                        self.bump();
                    }
                    items.push(Item::Exec(name, pos));
                }
                other => {
                    return Err(SurfaceError::Syntax {
                        pos,
                        msg: format!(
                            "expected `level`, `order`, `type`, `proc`, or `exec`, found {other}"
                        ),
                    })
                }
            }
        }
    }

    fn session_type(&mut self) -> Result<SessionType, SurfaceError> {
        let lhs = self.session_type1()?;
        if *self.peek() == Tok::Lolli {
            self.bump();
            let rhs = self.session_type()?;
            Ok(SessionType::lolli(lhs, rhs))
        } else {
            Ok(lhs)
        }
    }

    fn session_type1(&mut self) -> Result<SessionType, SurfaceError> {
        let lhs = self.session_type2()?;
        if *self.peek() == Tok::Star {
            self.bump();
            let rhs = self.session_type1()?;
            Ok(SessionType::tensor(lhs, rhs))
        } else {
            Ok(lhs)
        }
    }

    fn session_type2(&mut self) -> Result<SessionType, SurfaceError> {
        let pos = self.pos();
        match self.bump() {
            Tok::One => Ok(SessionType::One),
            Tok::Plus => {
                self.expect(Tok::LBrace)?;
                Ok(SessionType::Plus(self.branches_ty()?))
            }
            Tok::Amp => {
                self.expect(Tok::LBrace)?;
                Ok(SessionType::With(self.branches_ty()?))
            }
            Tok::LParen => {
                let t = self.session_type()?;
                self.expect(Tok::RParen)?;
                Ok(t)
            }
            Tok::Ident(n) => Ok(SessionType::Named(n)),
            other => Err(SurfaceError::Syntax {
                pos,
                msg: format!("expected a session type, found {other}"),
            }),
        }
    }

    fn branches_ty(
        &mut self,
    ) -> Result<std::collections::BTreeMap<String, SessionType>, SurfaceError> {
        let mut out = std::collections::BTreeMap::new();
        loop {
            let (l, pos) = self.ident("branch label")?;
            self.expect(Tok::Colon)?;
            let t = self.session_type()?;
            if out.insert(l.clone(), t).is_some() {
                return Err(SurfaceError::Duplicate {
                    pos,
                    what: "branch label",
                    name: l,
                });
            }
            match self.bump() {
                Tok::Comma => continue,
                Tok::RBrace => return Ok(out),
                other => {
                    return Err(SurfaceError::Syntax {
                        pos: self.pos(),
                        msg: format!("expected `,` or `}}` in branches, found {other}"),
                    })
                }
            }
        }
    }

    fn sec_term(&mut self) -> Result<SecTerm, SurfaceError> {
        let lhs = self.sec_term1()?;
        if *self.peek() == Tok::Join {
            self.bump();
            let rhs = self.sec_term()?;
            Ok(SecTerm::join(lhs, rhs))
        } else {
            Ok(lhs)
        }
    }

    fn sec_term1(&mut self) -> Result<SecTerm, SurfaceError> {
        let lhs = self.sec_term2()?;
        if *self.peek() == Tok::Meet {
            self.bump();
            let rhs = self.sec_term1()?;
            Ok(SecTerm::meet(lhs, rhs))
        } else {
            Ok(lhs)
        }
    }

    fn sec_term2(&mut self) -> Result<SecTerm, SurfaceError> {
        let pos = self.pos();
        match self.bump() {
            // Levels vs variables are resolved during assembly; parse as Var.
            Tok::Ident(n) => Ok(SecTerm::Var(n)),
            Tok::LParen => {
                let t = self.sec_term()?;
                self.expect(Tok::RParen)?;
                Ok(t)
            }
            other => Err(SurfaceError::Syntax {
                pos,
                msg: format!("expected a secrecy term, found {other}"),
            }),
        }
    }

    fn proc_def(&mut self) -> Result<RawProc, SurfaceError> {
        let pos = self.expect(Tok::Ident("proc".into()))?;
        let (name, _) = self.ident("process name")?;
        let mut var_decls = Vec::new();
        let mut constraints = Vec::new();
        if *self.peek() == Tok::LBracket {
            self.bump();
            if *self.peek() != Tok::RBracket {
                loop {
                    let lhs = self.sec_term()?;
                    match self.peek() {
                        Tok::Leq => {
                            self.bump();
                            let rhs = self.sec_term()?;
                            constraints.push((lhs, rhs, false));
                        }
                        Tok::Eq => {
                            self.bump();
                            let rhs = self.sec_term()?;
                            constraints.push((lhs, rhs, true));
                        }
                        _ => match lhs {
                            // A bare identifier declares a secrecy variable
                            // without constraining it.
                            SecTerm::Var(v) | SecTerm::Lit(v) => var_decls.push(v),
                            other => {
                                return Err(SurfaceError::Syntax {
                                    pos: self.pos(),
                                    msg: format!(
                                        "expected `<=` or `=` after `{other}` in constraints"
                                    ),
                                })
                            }
                        },
                    }
                    match self.peek() {
                        Tok::Comma => {
                            self.bump();
                        }
                        _ => break,
                    }
                }
            }
            self.expect(Tok::RBracket)?;
        }
        self.expect(Tok::LParen)?;
        let mut params = Vec::new();
        if *self.peek() != Tok::RParen {
            loop {
                let (v, vpos) = self.ident("parameter channel")?;
                self.expect(Tok::Colon)?;
                let ty = self.session_type()?;
                self.expect(Tok::LBracket)?;
                let sec = self.sec_term()?;
                self.expect(Tok::RBracket)?;
                params.push((v, ty, sec, vpos));
                match self.peek() {
                    Tok::Comma => {
                        self.bump();
                    }
                    _ => break,
                }
            }
        }
        self.expect(Tok::RParen)?;
        self.expect(Tok::At)?;
        let running = self.sec_term()?;
        self.expect(Tok::ColonColon)?;
        let (offer_var, _) = self.ident("offered channel")?;
        self.expect(Tok::Colon)?;
        let offer_type = self.session_type()?;
        self.expect(Tok::LBracket)?;
        let offer_sec = self.sec_term()?;
        self.expect(Tok::RBracket)?;
        self.expect(Tok::Eq)?;
        let body = self.proc_term()?;
        Ok(RawProc {
            name,
            pos,
            var_decls,
            constraints,
            params,
            running,
            offer_var,
            offer_type,
            offer_sec,
            body,
        })
    }

    fn proc_term(&mut self) -> Result<ProcTerm, SurfaceError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::LParen => {
                self.bump();
                let p = self.proc_term()?;
                self.expect(Tok::RParen)?;
                Ok(p)
            }
            Tok::Ident(kw) if kw == "close" => {
                self.bump();
                let (x, _) = self.ident("channel")?;
                Ok(ProcTerm::new(pos, ProcKind::Close(CRef::Var(x))))
            }
            Tok::Ident(kw) if kw == "wait" => {
                self.bump();
                let (x, _) = self.ident("channel")?;
                self.expect(Tok::Semi)?;
                let p = self.proc_term()?;
                Ok(ProcTerm::new(pos, ProcKind::Wait(CRef::Var(x), Box::new(p))))
            }
            Tok::Ident(kw) if kw == "send" => {
                self.bump();
                let (w, _) = self.ident("payload channel")?;
                let (x, _) = self.ident("carrier channel")?;
                self.expect(Tok::Semi)?;
                let p = self.proc_term()?;
                Ok(ProcTerm::new(
                    pos,
                    ProcKind::SendChan {
                        payload: CRef::Var(w),
                        carrier: CRef::Var(x),
                        cont: Box::new(p),
                    },
                ))
            }
            Tok::Ident(kw) if kw == "fwd" => {
                self.bump();
                let (y, _) = self.ident("offered channel")?;
                let (x, _) = self.ident("source channel")?;
                Ok(ProcTerm::new(
                    pos,
                    ProcKind::Fwd {
                        offer: CRef::Var(y),
                        from: CRef::Var(x),
                    },
                ))
            }
            Tok::Ident(kw) if kw == "case" => {
                self.bump();
                let (x, _) = self.ident("channel")?;
                self.expect(Tok::LParen)?;
                let mut branches = Vec::new();
                loop {
                    let (l, lpos) = self.ident("branch label")?;
                    self.expect(Tok::Arrow)?;
                    let p = self.proc_term()?;
                    if branches.iter().any(|(l2, _)| *l2 == l) {
                        return Err(SurfaceError::Duplicate {
                            pos: lpos,
                            what: "case branch",
                            name: l,
                        });
                    }
                    branches.push((l, p));
                    match self.bump() {
                        Tok::Pipe => continue,
                        Tok::RParen => break,
                        other => {
                            return Err(SurfaceError::Syntax {
                                pos: self.pos(),
                                msg: format!("expected `|` or `)` after branch, found {other}"),
                            })
                        }
                    }
                }
                Ok(ProcTerm::new(pos, ProcKind::Case(CRef::Var(x), branches)))
            }
            Tok::Ident(x) => {
                self.bump();
                match self.peek().clone() {
                    Tok::Dot => {
                        self.bump();
                        let (k, _) = self.ident("label")?;
                        self.expect(Tok::Semi)?;
                        let p = self.proc_term()?;
                        Ok(ProcTerm::new(
                            pos,
                            ProcKind::Select(CRef::Var(x), k, Box::new(p)),
                        ))
                    }
                    Tok::LArrow => {
                        self.bump();
                        match self.bump() {
                            Tok::Ident(kw) if kw == "recv" => {
                                let (c, _) = self.ident("carrier channel")?;
                                self.expect(Tok::Semi)?;
                                let p = self.proc_term()?;
                                Ok(ProcTerm::new(
                                    pos,
                                    ProcKind::RecvChan {
                                        bind: x,
                                        carrier: CRef::Var(c),
                                        cont: Box::new(p),
                                    },
                                ))
                            }
                            other => Err(SurfaceError::Syntax {
                                pos: self.pos(),
                                msg: format!(
                                    "expected `recv` after `{x} <-` (spawns require a type \
                                     annotation `x : T [s] <- …`), found {other}"
                                ),
                            }),
                        }
                    }
                    Tok::Colon => {
                        self.bump();
                        let decl_type = self.session_type()?;
                        self.expect(Tok::LBracket)?;
                        let decl_max = self.sec_term()?;
                        self.expect(Tok::RBracket)?;
                        self.expect(Tok::LArrow)?;
                        let (callee, _) = self.ident("process name")?;
                        self.expect(Tok::At)?;
                        let decl_run = self.sec_term()?;
                        self.expect(Tok::LArrow)?;
                        self.expect(Tok::LParen)?;
                        let mut args = Vec::new();
                        if *self.peek() != Tok::RParen {
                            loop {
                                let (a, _) = self.ident("argument channel")?;
                                args.push(CRef::Var(a));
                                match self.peek() {
                                    Tok::Comma => {
                                        self.bump();
                                    }
                                    _ => break,
                                }
                            }
                        }
                        self.expect(Tok::RParen)?;
                        let cont = if *self.peek() == Tok::Semi {
                            self.bump();
                            Some(Box::new(self.proc_term()?))
                        } else {
                            None
                        };
                        Ok(ProcTerm::new(
                            pos,
                            ProcKind::Spawn {
                                newchan: x,
                                decl_type,
                                decl_max,
                                decl_run,
                                proc_name: callee,
                                args,
                                cont,
                            },
                        ))
                    }
                    other => Err(SurfaceError::Syntax {
                        pos,
                        msg: format!("expected `.`, `<-`, or `:` after `{x}`, found {other}"),
                    }),
                }
            }
            other => Err(SurfaceError::Syntax {
                pos,
                msg: format!("expected a process term, found {other}"),
            }),
        }
    }
}

/// Parses a complete `.sill` program into a [`Signature`].
pub fn parse_program(source: &str) -> Result<Signature, SurfaceError> {
    let toks = Lexer::new(source).tokens()?;
    let mut parser = Parser { toks, i: 0 };
    let items = parser.items()?;
    assemble(items)
}

fn assemble(items: Vec<Item>) -> Result<Signature, SurfaceError> {
    let mut levels: Vec<String> = Vec::new();
    let mut orders: Vec<(String, String)> = Vec::new();
    let mut typedefs: Vec<(String, SessionType)> = Vec::new();
    let mut exec: Option<String> = None;
    for item in &items {
        match item {
            Item::Level(name, pos) => {
                if levels.contains(name) {
                    return Err(SurfaceError::Duplicate {
                        pos: *pos,
                        what: "level",
                        name: name.clone(),
                    });
                }
                levels.push(name.clone());
            }
            Item::Order(a, b) => orders.push((a.clone(), b.clone())),
            Item::TypeDef(name, ty, pos) => {
                if typedefs.iter().any(|(n, _)| n == name) {
                    return Err(SurfaceError::Duplicate {
                        pos: *pos,
                        what: "type definition",
                        name: name.clone(),
                    });
                }
                typedefs.push((name.clone(), ty.clone()));
            }
            Item::ProcDef(_) => {}
            Item::Exec(name, pos) => {
                if exec.is_some() {
                    return Err(SurfaceError::Duplicate {
                        pos: *pos,
                        what: "exec declaration",
                        name: name.clone(),
                    });
                }
                exec = Some(name.clone());
            }
        }
    }
    // Programs without lattice declarations still need a lattice; a single
    // bottom level keeps the empty program well-formed.
    if levels.is_empty() {
        levels.push("bot".to_string());
    }
    let lattice = SecurityLattice::new(levels, orders)?;
    let tyname_set: BTreeSet<String> = typedefs.iter().map(|(n, _)| n.clone()).collect();
    let mut procdefs: Vec<ProcDef> = Vec::new();
    for item in items {
        let Item::ProcDef(raw) = item else { continue };
        if procdefs.iter().any(|d| d.name == raw.name) {
            return Err(SurfaceError::Duplicate {
                pos: raw.pos,
                what: "process definition",
                name: raw.name,
            });
        }
        let def = assemble_proc(raw, &lattice, &tyname_set)?;
        procdefs.push(def);
    }
    if let Some(name) = &exec {
        if !procdefs.iter().any(|d| d.name == *name) {
            return Err(SurfaceError::Unbound {
                pos: Pos::default(),
                what: "process name in exec",
                name: name.clone(),
            });
        }
    }
    let sig = Signature {
        lattice,
        typedefs,
        procdefs,
        exec,
    };
    check_type_names(&sig)?;
    for def in &sig.procdefs {
        lint_linear(def)?;
        check_spawn_names(&sig, &def.body, def.pos)?;
    }
    Ok(sig)
}

/// Re-tags identifiers in a secrecy term as levels or variables; variables
/// must be declared by the constraint list.
fn resolve_sec(
    t: &SecTerm,
    lattice: &SecurityLattice,
    vars: &BTreeSet<String>,
    pos: Pos,
) -> Result<SecTerm, SurfaceError> {
    match t {
        SecTerm::Var(n) | SecTerm::Lit(n) => {
            if lattice.has_level(n) {
                Ok(SecTerm::Lit(n.clone()))
            } else if vars.contains(n) {
                Ok(SecTerm::Var(n.clone()))
            } else {
                Err(SurfaceError::Unbound {
                    pos,
                    what: "secrecy variable",
                    name: n.clone(),
                })
            }
        }
        SecTerm::Join(a, b) => Ok(SecTerm::join(
            resolve_sec(a, lattice, vars, pos)?,
            resolve_sec(b, lattice, vars, pos)?,
        )),
        SecTerm::Meet(a, b) => Ok(SecTerm::meet(
            resolve_sec(a, lattice, vars, pos)?,
            resolve_sec(b, lattice, vars, pos)?,
        )),
    }
}

fn assemble_proc(
    raw: RawProc,
    lattice: &SecurityLattice,
    _tynames: &BTreeSet<String>,
) -> Result<ProcDef, SurfaceError> {
    // Secrecy variables are the bare declarations plus the non-level
    // identifiers in the constraints.
    let mut vars: BTreeSet<String> = BTreeSet::new();
    for v in &raw.var_decls {
        if lattice.has_level(v) {
            return Err(SurfaceError::Duplicate {
                pos: raw.pos,
                what: "secrecy variable (clashes with a level)",
                name: v.clone(),
            });
        }
        vars.insert(v.clone());
    }
    for (lhs, rhs, _) in &raw.constraints {
        for side in [lhs, rhs] {
            let mut names = BTreeSet::new();
            side.vars(&mut names);
            for n in names {
                if !lattice.has_level(&n) {
                    vars.insert(n);
                }
            }
        }
    }
    let mut constraints = Vec::new();
    for (lhs, rhs, eq) in &raw.constraints {
        let l = resolve_sec(lhs, lattice, &vars, raw.pos)?;
        let r = resolve_sec(rhs, lattice, &vars, raw.pos)?;
        constraints.push((l.clone(), r.clone()));
        if *eq {
            constraints.push((r, l));
        }
    }
    let psi = ExtendedLattice::new(lattice.clone(), vars.clone(), constraints)?;
    let mut ctx = Vec::new();
    for (v, ty, sec, vpos) in &raw.params {
        if ctx.iter().any(|e: &CtxEntry| e.var == *v) || *v == raw.offer_var {
            return Err(SurfaceError::Duplicate {
                pos: *vpos,
                what: "channel parameter",
                name: v.clone(),
            });
        }
        ctx.push(CtxEntry {
            var: v.clone(),
            ty: ty.clone(),
            sec: resolve_sec(sec, lattice, &vars, *vpos)?,
        });
    }
    let running = resolve_sec(&raw.running, lattice, &vars, raw.pos)?;
    let offer_sec = resolve_sec(&raw.offer_sec, lattice, &vars, raw.pos)?;
    let body = resolve_body_sec(&raw.body, lattice, &vars)?;
    Ok(ProcDef {
        name: raw.name,
        pos: raw.pos,
        psi,
        ctx,
        offer_var: raw.offer_var,
        offer_type: raw.offer_type,
        offer_sec,
        running,
        body,
    })
}

/// Resolves level/variable identifiers in spawn annotations, the only
/// secrecy positions inside process bodies.
fn resolve_body_sec(
    body: &ProcTerm,
    lattice: &SecurityLattice,
    vars: &BTreeSet<String>,
) -> Result<ProcTerm, SurfaceError> {
    fn walk(
        p: &ProcTerm,
        lattice: &SecurityLattice,
        vars: &BTreeSet<String>,
    ) -> Result<ProcTerm, SurfaceError> {
        let kind = match &p.kind {
            ProcKind::Spawn {
                newchan,
                decl_type,
                decl_max,
                decl_run,
                proc_name,
                args,
                cont,
            } => ProcKind::Spawn {
                newchan: newchan.clone(),
                decl_type: decl_type.clone(),
                decl_max: resolve_sec(decl_max, lattice, vars, p.pos)?,
                decl_run: resolve_sec(decl_run, lattice, vars, p.pos)?,
                proc_name: proc_name.clone(),
                args: args.clone(),
                cont: match cont {
                    Some(q) => Some(Box::new(walk(q, lattice, vars)?)),
                    None => None,
                },
            },
            ProcKind::Wait(x, q) => {
                ProcKind::Wait(x.clone(), Box::new(walk(q, lattice, vars)?))
            }
            ProcKind::Select(x, k, q) => {
                ProcKind::Select(x.clone(), k.clone(), Box::new(walk(q, lattice, vars)?))
            }
            ProcKind::Case(x, branches) => ProcKind::Case(
                x.clone(),
                branches
                    .iter()
                    .map(|(l, q)| Ok((l.clone(), walk(q, lattice, vars)?)))
                    .collect::<Result<Vec<_>, SurfaceError>>()?,
            ),
            ProcKind::SendChan {
                payload,
                carrier,
                cont,
            } => ProcKind::SendChan {
                payload: payload.clone(),
                carrier: carrier.clone(),
                cont: Box::new(walk(cont, lattice, vars)?),
            },
            ProcKind::RecvChan {
                bind,
                carrier,
                cont,
            } => ProcKind::RecvChan {
                bind: bind.clone(),
                carrier: carrier.clone(),
                cont: Box::new(walk(cont, lattice, vars)?),
            },
            other => other.clone(),
        };
        Ok(ProcTerm { pos: p.pos, kind })
    }
    walk(body, lattice, vars)
}

fn check_type_names(sig: &Signature) -> Result<(), SurfaceError> {
    fn check(t: &SessionType, sig: &Signature, pos: Pos) -> Result<(), SurfaceError> {
        match t {
            SessionType::Named(n) => {
                if sig.typedef(n).is_none() {
                    return Err(SurfaceError::Unbound {
                        pos,
                        what: "type name",
                        name: n.clone(),
                    });
                }
                Ok(())
            }
            SessionType::Plus(bs) | SessionType::With(bs) => {
                for b in bs.values() {
                    check(b, sig, pos)?;
                }
                Ok(())
            }
            SessionType::Tensor(a, b) | SessionType::Lolli(a, b) => {
                check(a, sig, pos)?;
                check(b, sig, pos)
            }
            SessionType::One => Ok(()),
        }
    }
    for (_, t) in &sig.typedefs {
        check(t, sig, Pos::default())?;
    }
    for def in &sig.procdefs {
        check(&def.offer_type, sig, def.pos)?;
        for e in &def.ctx {
            check(&e.ty, sig, def.pos)?;
        }
        fn body_types(p: &ProcTerm, sig: &Signature) -> Result<(), SurfaceError> {
            match &p.kind {
                ProcKind::Spawn {
                    decl_type, cont, ..
                } => {
                    check(decl_type, sig, p.pos)?;
                    if let Some(q) = cont {
                        body_types(q, sig)?;
                    }
                    Ok(())
                }
                ProcKind::Wait(_, q)
                | ProcKind::Select(_, _, q)
                | ProcKind::SendChan { cont: q, .. }
                | ProcKind::RecvChan { cont: q, .. } => body_types(q, sig),
                ProcKind::Case(_, branches) => {
                    for (_, q) in branches {
                        body_types(q, sig)?;
                    }
                    Ok(())
                }
                ProcKind::Close(_) | ProcKind::Fwd { .. } => Ok(()),
            }
        }
        body_types(&def.body, sig)?;
    }
    Ok(())
}

fn check_spawn_names(sig: &Signature, body: &ProcTerm, _pos: Pos) -> Result<(), SurfaceError> {
    match &body.kind {
        ProcKind::Spawn {
            proc_name,
            args,
            cont,
            ..
        } => {
            match sig.procdef(proc_name) {
                None => Err(SurfaceError::Unbound {
                    pos: body.pos,
                    what: "process name",
                    name: proc_name.clone(),
                }),
                Some(def) if def.ctx.len() != args.len() => Err(SurfaceError::Syntax {
                    pos: body.pos,
                    msg: format!(
                        "`{}` takes {} argument channels, {} given",
                        proc_name,
                        def.ctx.len(),
                        args.len()
                    ),
                }),
                Some(_) => match cont {
                    Some(q) => check_spawn_names(sig, q, body.pos),
                    None => Ok(()),
                },
            }
        }
        ProcKind::Wait(_, q)
        | ProcKind::Select(_, _, q)
        | ProcKind::SendChan { cont: q, .. }
        | ProcKind::RecvChan { cont: q, .. } => check_spawn_names(sig, q, body.pos),
        ProcKind::Case(_, branches) => {
            for (_, q) in branches {
                check_spawn_names(sig, q, body.pos)?;
            }
            Ok(())
        }
        ProcKind::Close(_) | ProcKind::Fwd { .. } => Ok(()),
    }
}

/// The linearity lint: every context channel (and the offered channel) is
/// used exactly once along each continuation path.
fn lint_linear(def: &ProcDef) -> Result<(), SurfaceError> {
    let live: BTreeSet<String> = def.ctx.iter().map(|e| e.var.clone()).collect();
    lint_term(&def.body, live, &def.offer_var)
}

fn var_of(c: &CRef) -> &str {
    match c {
        CRef::Var(v) => v,
        CRef::Chan(ch) => &ch.base,
    }
}

fn lint_term(
    p: &ProcTerm,
    mut live: BTreeSet<String>,
    offer: &str,
) -> Result<(), SurfaceError> {
    let use_ctx = |c: &CRef, live: &BTreeSet<String>, pos: Pos| -> Result<(), SurfaceError> {
        let v = var_of(c);
        if v == offer || live.contains(v) {
            Ok(())
        } else {
            Err(SurfaceError::Linearity {
                pos,
                var: v.to_string(),
                msg: "channel is not available here (already consumed or never bound)".into(),
            })
        }
    };
    match &p.kind {
        ProcKind::Close(x) => {
            if var_of(x) != offer {
                return Err(SurfaceError::Linearity {
                    pos: p.pos,
                    var: var_of(x).to_string(),
                    msg: "close must terminate the offered channel".into(),
                });
            }
            if let Some(leftover) = live.iter().next() {
                return Err(SurfaceError::Linearity {
                    pos: p.pos,
                    var: leftover.clone(),
                    msg: "channel is dropped without being consumed".into(),
                });
            }
            Ok(())
        }
        ProcKind::Fwd { offer: y, from } => {
            if var_of(y) != offer {
                return Err(SurfaceError::Linearity {
                    pos: p.pos,
                    var: var_of(y).to_string(),
                    msg: "fwd must offer the offered channel".into(),
                });
            }
            use_ctx(from, &live, p.pos)?;
            live.remove(var_of(from));
            if let Some(leftover) = live.iter().next() {
                return Err(SurfaceError::Linearity {
                    pos: p.pos,
                    var: leftover.clone(),
                    msg: "channel is dropped without being consumed".into(),
                });
            }
            Ok(())
        }
        ProcKind::Wait(x, q) => {
            use_ctx(x, &live, p.pos)?;
            if var_of(x) == offer {
                return Err(SurfaceError::Linearity {
                    pos: p.pos,
                    var: offer.to_string(),
                    msg: "cannot wait on the offered channel".into(),
                });
            }
            live.remove(var_of(x));
            lint_term(q, live, offer)
        }
        ProcKind::Select(x, _, q) => {
            use_ctx(x, &live, p.pos)?;
            lint_term(q, live, offer)
        }
        ProcKind::Case(x, branches) => {
            use_ctx(x, &live, p.pos)?;
            for (_, q) in branches {
                lint_term(q, live.clone(), offer)?;
            }
            Ok(())
        }
        ProcKind::SendChan {
            payload,
            carrier,
            cont,
        } => {
            use_ctx(payload, &live, p.pos)?;
            use_ctx(carrier, &live, p.pos)?;
            if var_of(payload) == offer {
                return Err(SurfaceError::Linearity {
                    pos: p.pos,
                    var: offer.to_string(),
                    msg: "cannot send the offered channel".into(),
                });
            }
            live.remove(var_of(payload));
            lint_term(cont, live, offer)
        }
        ProcKind::RecvChan {
            bind,
            carrier,
            cont,
        } => {
            use_ctx(carrier, &live, p.pos)?;
            if live.contains(bind) || bind == offer {
                return Err(SurfaceError::Linearity {
                    pos: p.pos,
                    var: bind.clone(),
                    msg: "received channel shadows a live channel".into(),
                });
            }
            live.insert(bind.clone());
            lint_term(cont, live, offer)
        }
        ProcKind::Spawn {
            newchan,
            args,
            cont,
            ..
        } => {
            for a in args {
                use_ctx(a, &live, p.pos)?;
                if var_of(a) == offer {
                    return Err(SurfaceError::Linearity {
                        pos: p.pos,
                        var: offer.to_string(),
                        msg: "cannot pass the offered channel to a spawn".into(),
                    });
                }
            }
            let mut seen = BTreeSet::new();
            for a in args {
                if !seen.insert(var_of(a).to_string()) {
                    return Err(SurfaceError::Linearity {
                        pos: p.pos,
                        var: var_of(a).to_string(),
                        msg: "channel passed twice to one spawn".into(),
                    });
                }
            }
            for a in args {
                live.remove(var_of(a));
            }
            match cont {
                Some(q) => {
                    if live.contains(newchan) {
                        return Err(SurfaceError::Linearity {
                            pos: p.pos,
                            var: newchan.clone(),
                            msg: "spawned channel shadows a live channel".into(),
                        });
                    }
                    live.insert(newchan.clone());
                    lint_term(q, live, offer)
                }
                None => {
                    // Tail call: the implicit forward consumes the fresh
                    // channel and the offered channel; nothing may remain.
                    if let Some(leftover) = live.iter().next() {
                        return Err(SurfaceError::Linearity {
                            pos: p.pos,
                            var: leftover.clone(),
                            msg: "channel is dropped by the tail call".into(),
                        });
                    }
                    Ok(())
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Pretty-printing
// ---------------------------------------------------------------------------

/// Renders a session type with minimal parentheses.
pub fn pretty_type(t: &SessionType) -> String {
    fn go(t: &SessionType, prec: u8, out: &mut String) {
        match t {
            SessionType::One => out.push('1'),
            SessionType::Named(n) => out.push_str(n),
            SessionType::Plus(bs) | SessionType::With(bs) => {
                out.push(if matches!(t, SessionType::Plus(_)) {
                    '+'
                } else {
                    '&'
                });
                out.push('{');
                for (i, (l, b)) in bs.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    out.push_str(l);
                    out.push_str(": ");
                    go(b, 0, out);
                }
                out.push('}');
            }
            SessionType::Tensor(a, b) => {
                if prec > 1 {
                    out.push('(');
                }
                go(a, 2, out);
                out.push_str(" * ");
                go(b, 1, out);
                if prec > 1 {
                    out.push(')');
                }
            }
            SessionType::Lolli(a, b) => {
                if prec > 0 {
                    out.push('(');
                }
                go(a, 1, out);
                out.push_str(" -o ");
                go(b, 0, out);
                if prec > 0 {
                    out.push(')');
                }
            }
        }
    }
    let mut s = String::new();
    go(t, 0, &mut s);
    s
}

/// Renders a secrecy term (fully parenthesized joins/meets).
pub fn pretty_sec(t: &SecTerm) -> String {
    t.to_string()
}

/// Renders a process term on one logical line with nested cases indented.
pub fn pretty_term(p: &ProcTerm, indent: usize) -> String {
    let pad = "  ".repeat(indent);
    match &p.kind {
        ProcKind::Close(x) => format!("close {x}"),
        ProcKind::Wait(x, q) => format!("wait {x}; {}", pretty_term(q, indent)),
        ProcKind::Select(x, k, q) => format!("{x}.{k}; {}", pretty_term(q, indent)),
        ProcKind::Case(x, branches) => {
            let mut s = format!("case {x} (");
            for (i, (l, q)) in branches.iter().enumerate() {
                if i > 0 {
                    s.push_str(&format!("\n{pad}  | "));
                } else {
                    s.push_str(&format!("\n{pad}    "));
                }
                s.push_str(&format!("{l} => {}", pretty_term(q, indent + 2)));
            }
            s.push_str(&format!("\n{pad}  )"));
            s
        }
        ProcKind::SendChan {
            payload,
            carrier,
            cont,
        } => format!("send {payload} {carrier}; {}", pretty_term(cont, indent)),
        ProcKind::RecvChan {
            bind,
            carrier,
            cont,
        } => format!("{bind} <- recv {carrier}; {}", pretty_term(cont, indent)),
        ProcKind::Fwd { offer, from } => format!("fwd {offer} {from}"),
        ProcKind::Spawn {
            newchan,
            decl_type,
            decl_max,
            decl_run,
            proc_name,
            args,
            cont,
        } => {
            let args_s = args
                .iter()
                .map(|a| a.to_string())
                .collect::<Vec<_>>()
                .join(", ");
            let head = format!(
                "{newchan} : {} [{}] <- {proc_name} @ {} <- ({args_s})",
                pretty_type(decl_type),
                pretty_sec(decl_max),
                pretty_sec(decl_run),
            );
            match cont {
                Some(q) => format!("{head}; {}", pretty_term(q, indent)),
                None => head,
            }
        }
    }
}

/// Renders a whole signature back to concrete syntax; parsing the result
/// yields a structurally equal signature.
pub fn pretty_signature(sig: &Signature) -> String {
    let mut out = String::new();
    for l in sig.lattice.levels() {
        let _ = writeln!(out, "level {l};");
    }
    // The generating edges are reconstructed from the closed order's
    // covering relation to keep the printer independent of declaration
    // details; re-parsing yields the same closure.
    for a in sig.lattice.levels() {
        for b in sig.lattice.levels() {
            if a != b && sig.lattice.leq(a, b).unwrap_or(false) {
                let covering = sig.lattice.levels().iter().all(|m| {
                    m == a
                        || m == b
                        || !(sig.lattice.leq(a, m).unwrap_or(false)
                            && sig.lattice.leq(m, b).unwrap_or(false))
                });
                if covering {
                    let _ = writeln!(out, "order {a} <= {b};");
                }
            }
        }
    }
    if !sig.typedefs.is_empty() {
        out.push('\n');
    }
    for (n, t) in &sig.typedefs {
        let _ = writeln!(out, "type {n} = {};", pretty_type(t));
    }
    for def in &sig.procdefs {
        out.push('\n');
        let _ = write!(out, "proc {}", def.name);
        let mut constrained = BTreeSet::new();
        for (a, b) in &def.psi.constraints {
            a.vars(&mut constrained);
            b.vars(&mut constrained);
        }
        let mut entries: Vec<String> = def
            .psi
            .vars
            .iter()
            .filter(|v| !constrained.contains(*v))
            .cloned()
            .collect();
        entries.extend(
            def.psi
                .constraints
                .iter()
                .map(|(a, b)| format!("{} <= {}", pretty_sec(a), pretty_sec(b))),
        );
        if !entries.is_empty() {
            let _ = write!(out, " [{}]", entries.join(", "));
        }
        let params = def
            .ctx
            .iter()
            .map(|e| format!("{} : {} [{}]", e.var, pretty_type(&e.ty), pretty_sec(&e.sec)))
            .collect::<Vec<_>>()
            .join(", ");
        let _ = writeln!(
            out,
            " ({params}) @ {} :: {} : {} [{}] =",
            pretty_sec(&def.running),
            def.offer_var,
            pretty_type(&def.offer_type),
            pretty_sec(&def.offer_sec),
        );
        let _ = writeln!(out, "  {}", pretty_term(&def.body, 1));
    }
    if let Some(e) = &sig.exec {
        out.push('\n');
        let _ = writeln!(out, "exec {e}");
    }
    out
}
