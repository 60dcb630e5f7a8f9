//! Abstract syntax shared by the surface language, the checker, and the
//! runtime: session types, process terms, definitions, and signatures.
//!
//! Channel references are either surface variables or runtime channels
//! (generation-indexed base names); the parser only produces variables, the
//! interpreter substitutes channels for them as processes are instantiated.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::lattice::{ExtendedLattice, SecTerm, SecurityLattice};

/// A source position. Positions are diagnostic metadata: they do not
/// participate in equality or hashing, so structural AST comparison (e.g. the
/// parse/print round-trip) ignores them.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl PartialEq for Pos {
    fn eq(&self, _other: &Pos) -> bool {
        true
    }
}

impl Eq for Pos {}

impl std::hash::Hash for Pos {
    fn hash<H: std::hash::Hasher>(&self, _state: &mut H) {}
}

impl PartialOrd for Pos {
    fn partial_cmp(&self, other: &Pos) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pos {
    fn cmp(&self, _other: &Pos) -> std::cmp::Ordering {
        std::cmp::Ordering::Equal
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

/// A session type: the protocol algebra over labels and channels.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SessionType {
    /// Termination: close/wait.
    One,
    /// Internal choice ⊕{ℓ:Aℓ}: provider sends a label.
    Plus(BTreeMap<String, SessionType>),
    /// External choice &{ℓ:Aℓ}: provider receives a label.
    With(BTreeMap<String, SessionType>),
    /// A ⊗ B: provider sends a channel of type A, continues as B.
    Tensor(Box<SessionType>, Box<SessionType>),
    /// A ⊸ B: provider receives a channel of type A, continues as B.
    Lolli(Box<SessionType>, Box<SessionType>),
    /// Reference to a named (equi-recursive) type definition.
    Named(String),
}

impl SessionType {
    pub fn named(n: &str) -> Self {
        SessionType::Named(n.to_string())
    }

    pub fn tensor(a: SessionType, b: SessionType) -> Self {
        SessionType::Tensor(Box::new(a), Box::new(b))
    }

    pub fn lolli(a: SessionType, b: SessionType) -> Self {
        SessionType::Lolli(Box::new(a), Box::new(b))
    }

    pub fn plus(branches: Vec<(&str, SessionType)>) -> Self {
        SessionType::Plus(
            branches
                .into_iter()
                .map(|(l, t)| (l.to_string(), t))
                .collect(),
        )
    }

    pub fn with(branches: Vec<(&str, SessionType)>) -> Self {
        SessionType::With(
            branches
                .into_iter()
                .map(|(l, t)| (l.to_string(), t))
                .collect(),
        )
    }
}

/// A runtime channel: a base name with a generation counter. The generation
/// is bumped once per message sent along the base.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Chan {
    pub base: String,
    pub gen: u32,
}

impl Chan {
    pub fn new(base: &str, gen: u32) -> Self {
        Chan {
            base: base.to_string(),
            gen,
        }
    }

    /// The next generation of the same base.
    pub fn bump(&self) -> Chan {
        Chan {
            base: self.base.clone(),
            gen: self.gen + 1,
        }
    }
}

impl fmt::Display for Chan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}`{}", self.base, self.gen)
    }
}

/// A channel reference: a surface variable or an instantiated runtime channel.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CRef {
    Var(String),
    Chan(Chan),
}

impl CRef {
    pub fn var(name: &str) -> Self {
        CRef::Var(name.to_string())
    }
}

impl fmt::Display for CRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CRef::Var(v) => write!(f, "{v}"),
            CRef::Chan(c) => write!(f, "{c}"),
        }
    }
}

/// A process term with its source position.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProcTerm {
    pub pos: Pos,
    pub kind: ProcKind,
}

/// Process term constructors. Select/Case cover both the right rules (on the
/// offered channel) and the left rules (on a context channel); the checker
/// dispatches on which side the subject channel is.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProcKind {
    /// close x — terminate, offering 1.
    Close(CRef),
    /// wait x; P — synchronize on a client's termination.
    Wait(CRef, Box<ProcTerm>),
    /// x.k; P — send label k along x.
    Select(CRef, String, Box<ProcTerm>),
    /// case x (ℓ ⇒ Pℓ | …) — receive a label along x.
    Case(CRef, Vec<(String, ProcTerm)>),
    /// send w x; P — send channel w along x.
    SendChan {
        payload: CRef,
        carrier: CRef,
        cont: Box<ProcTerm>,
    },
    /// z ← recv x; P — receive a channel along x, binding z.
    RecvChan {
        bind: String,
        carrier: CRef,
        cont: Box<ProcTerm>,
    },
    /// fwd y x — offer y by forwarding to x.
    Fwd { offer: CRef, from: CRef },
    /// (x^{d'} ← X ← args @d₂); P — spawn X offering a fresh channel bound
    /// to `newchan`. `cont` is `None` for a tail call, which behaves as the
    /// spawn followed by a forward of the caller's offered channel.
    Spawn {
        newchan: String,
        decl_type: SessionType,
        decl_max: SecTerm,
        decl_run: SecTerm,
        proc_name: String,
        args: Vec<CRef>,
        cont: Option<Box<ProcTerm>>,
    },
}

impl ProcTerm {
    pub fn new(pos: Pos, kind: ProcKind) -> Self {
        ProcTerm { pos, kind }
    }

    /// All channel references occurring free in the term. Binders
    /// (`RecvChan.bind`, `Spawn.newchan`) shadow variables in continuations.
    pub fn free_chans(&self) -> Vec<CRef> {
        let mut out = Vec::new();
        self.collect_free(&mut Vec::new(), &mut out);
        out
    }

    fn collect_free(&self, bound: &mut Vec<String>, out: &mut Vec<CRef>) {
        let push = |c: &CRef, bound: &Vec<String>, out: &mut Vec<CRef>| {
            if let CRef::Var(v) = c {
                if bound.contains(v) {
                    return;
                }
            }
            if !out.contains(c) {
                out.push(c.clone());
            }
        };
        match &self.kind {
            ProcKind::Close(x) => push(x, bound, out),
            ProcKind::Wait(x, p) => {
                push(x, bound, out);
                p.collect_free(bound, out);
            }
            ProcKind::Select(x, _, p) => {
                push(x, bound, out);
                p.collect_free(bound, out);
            }
            ProcKind::Case(x, branches) => {
                push(x, bound, out);
                for (_, p) in branches {
                    p.collect_free(bound, out);
                }
            }
            ProcKind::SendChan {
                payload,
                carrier,
                cont,
            } => {
                push(payload, bound, out);
                push(carrier, bound, out);
                cont.collect_free(bound, out);
            }
            ProcKind::RecvChan {
                bind,
                carrier,
                cont,
            } => {
                push(carrier, bound, out);
                bound.push(bind.clone());
                cont.collect_free(bound, out);
                bound.pop();
            }
            ProcKind::Fwd { offer, from } => {
                push(offer, bound, out);
                push(from, bound, out);
            }
            ProcKind::Spawn {
                newchan,
                args,
                cont,
                ..
            } => {
                for a in args {
                    push(a, bound, out);
                }
                if let Some(q) = cont {
                    bound.push(newchan.clone());
                    q.collect_free(bound, out);
                    bound.pop();
                }
            }
        }
    }

    /// Substitutes a channel reference for a free variable.
    pub fn subst_var(&self, var: &str, with: &CRef) -> ProcTerm {
        let kind = match &self.kind {
            ProcKind::Close(x) => ProcKind::Close(sub_ref(x, var, with)),
            ProcKind::Wait(x, p) => {
                ProcKind::Wait(sub_ref(x, var, with), Box::new(p.subst_var(var, with)))
            }
            ProcKind::Select(x, k, p) => ProcKind::Select(
                sub_ref(x, var, with),
                k.clone(),
                Box::new(p.subst_var(var, with)),
            ),
            ProcKind::Case(x, branches) => ProcKind::Case(
                sub_ref(x, var, with),
                branches
                    .iter()
                    .map(|(l, p)| (l.clone(), p.subst_var(var, with)))
                    .collect(),
            ),
            ProcKind::SendChan {
                payload,
                carrier,
                cont,
            } => ProcKind::SendChan {
                payload: sub_ref(payload, var, with),
                carrier: sub_ref(carrier, var, with),
                cont: Box::new(cont.subst_var(var, with)),
            },
            ProcKind::RecvChan {
                bind,
                carrier,
                cont,
            } => ProcKind::RecvChan {
                bind: bind.clone(),
                carrier: sub_ref(carrier, var, with),
                cont: if bind == var {
                    cont.clone()
                } else {
                    Box::new(cont.subst_var(var, with))
                },
            },
            ProcKind::Fwd { offer, from } => ProcKind::Fwd {
                offer: sub_ref(offer, var, with),
                from: sub_ref(from, var, with),
            },
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
                decl_max: decl_max.clone(),
                decl_run: decl_run.clone(),
                proc_name: proc_name.clone(),
                args: args.iter().map(|a| sub_ref(a, var, with)).collect(),
                cont: cont.as_ref().map(|q| {
                    if newchan == var {
                        q.clone()
                    } else {
                        Box::new(q.subst_var(var, with))
                    }
                }),
            },
        };
        ProcTerm {
            pos: self.pos,
            kind,
        }
    }

    /// Renames every occurrence of a runtime channel (global substitution,
    /// used by the forwarding rule).
    pub fn rename_chan(&self, from: &Chan, to: &Chan) -> ProcTerm {
        let map = |c: &CRef| match c {
            CRef::Chan(ch) if ch == from => CRef::Chan(to.clone()),
            other => other.clone(),
        };
        self.map_refs(&map)
    }

    /// Applies a function to every channel reference position.
    pub fn map_refs(&self, f: &dyn Fn(&CRef) -> CRef) -> ProcTerm {
        let kind = match &self.kind {
            ProcKind::Close(x) => ProcKind::Close(f(x)),
            ProcKind::Wait(x, p) => ProcKind::Wait(f(x), Box::new(p.map_refs(f))),
            ProcKind::Select(x, k, p) => {
                ProcKind::Select(f(x), k.clone(), Box::new(p.map_refs(f)))
            }
            ProcKind::Case(x, branches) => ProcKind::Case(
                f(x),
                branches
                    .iter()
                    .map(|(l, p)| (l.clone(), p.map_refs(f)))
                    .collect(),
            ),
            ProcKind::SendChan {
                payload,
                carrier,
                cont,
            } => ProcKind::SendChan {
                payload: f(payload),
                carrier: f(carrier),
                cont: Box::new(cont.map_refs(f)),
            },
            ProcKind::RecvChan {
                bind,
                carrier,
                cont,
            } => ProcKind::RecvChan {
                bind: bind.clone(),
                carrier: f(carrier),
                cont: Box::new(cont.map_refs(f)),
            },
            ProcKind::Fwd { offer, from } => ProcKind::Fwd {
                offer: f(offer),
                from: f(from),
            },
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
                decl_max: decl_max.clone(),
                decl_run: decl_run.clone(),
                proc_name: proc_name.clone(),
                args: args.iter().map(|a| f(a)).collect(),
                cont: cont.as_ref().map(|q| Box::new(q.map_refs(f))),
            },
        };
        ProcTerm {
            pos: self.pos,
            kind,
        }
    }

    /// Applies a secrecy substitution to every secrecy annotation (spawn
    /// sites are the only carriers of secrecy terms inside process bodies).
    pub fn map_sec(&self, f: &dyn Fn(&SecTerm) -> SecTerm) -> ProcTerm {
        let kind = match &self.kind {
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
                decl_max: f(decl_max),
                decl_run: f(decl_run),
                proc_name: proc_name.clone(),
                args: args.clone(),
                cont: cont.as_ref().map(|q| Box::new(q.map_sec(f))),
            },
            ProcKind::Wait(x, p) => ProcKind::Wait(x.clone(), Box::new(p.map_sec(f))),
            ProcKind::Select(x, k, p) => {
                ProcKind::Select(x.clone(), k.clone(), Box::new(p.map_sec(f)))
            }
            ProcKind::Case(x, branches) => ProcKind::Case(
                x.clone(),
                branches
                    .iter()
                    .map(|(l, p)| (l.clone(), p.map_sec(f)))
                    .collect(),
            ),
            ProcKind::SendChan {
                payload,
                carrier,
                cont,
            } => ProcKind::SendChan {
                payload: payload.clone(),
                carrier: carrier.clone(),
                cont: Box::new(cont.map_sec(f)),
            },
            ProcKind::RecvChan {
                bind,
                carrier,
                cont,
            } => ProcKind::RecvChan {
                bind: bind.clone(),
                carrier: carrier.clone(),
                cont: Box::new(cont.map_sec(f)),
            },
            other => other.clone(),
        };
        ProcTerm {
            pos: self.pos,
            kind,
        }
    }
}

fn sub_ref(c: &CRef, var: &str, with: &CRef) -> CRef {
    match c {
        CRef::Var(v) if v == var => with.clone(),
        other => other.clone(),
    }
}

/// One context channel declaration `y : T [s]` of a process definition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CtxEntry {
    pub var: String,
    pub ty: SessionType,
    pub sec: SecTerm,
}

/// A secrecy-polymorphic process definition
/// `Ψ; y₁:A₁[ψ₁], … ⊢ X = P @ψ' :: x:B[ψ]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcDef {
    pub name: String,
    pub pos: Pos,
    pub psi: ExtendedLattice,
    pub ctx: Vec<CtxEntry>,
    pub offer_var: String,
    pub offer_type: SessionType,
    pub offer_sec: SecTerm,
    pub running: SecTerm,
    pub body: ProcTerm,
}

/// A program signature: type definitions, process definitions, the declared
/// security lattice, and an optional top-level `exec` entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature {
    pub lattice: SecurityLattice,
    /// Type definitions in declaration order.
    pub typedefs: Vec<(String, SessionType)>,
    /// Process definitions in declaration order.
    pub procdefs: Vec<ProcDef>,
    /// Name of the process to execute as the top-level configuration.
    pub exec: Option<String>,
}

impl Signature {
    pub fn typedef(&self, name: &str) -> Option<&SessionType> {
        self.typedefs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn procdef(&self, name: &str) -> Option<&ProcDef> {
        self.procdefs.iter().find(|d| d.name == name)
    }
}
