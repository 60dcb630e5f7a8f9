//! The asynchronous small-step interpreter: configurations of process and
//! message nodes, the twelve rewrite rules, channel generations, poisedness,
//! and the fifo/random/exhaustive schedulers.
//!
//! A configuration is a forest: every node provides exactly one runtime
//! channel and uses zero or more. Sends are asynchronous; each send along a
//! channel bumps its generation, the message node carrying the old
//! generation and the sender continuing at the new one. Forwarding removes
//! the forwarding process and renames its offered channel globally,
//! recording the renaming in a log.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::hash::{Hash, Hasher};

use rand::Rng;
use rand::SeedableRng;
use serde::Serialize;
use thiserror::Error;

use crate::ast::{CRef, Chan, ProcKind, ProcTerm, SessionType, Signature};
use crate::lattice::{LatticeError, SecLevel, SecTerm, SecurityLattice, Substitution};
use crate::types::{TypeTable, TypesError};

/// Errors raised while instantiating or stepping configurations.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuntimeError {
    #[error("process `{0}` is not defined")]
    UndefinedProcess(String),
    #[error("channel `{0}` has no type entry in the configuration")]
    UnknownChannel(Chan),
    #[error("secrecy term `{0}` is not concrete at runtime")]
    NonConcreteSecrecy(SecTerm),
    #[error("cannot instantiate secrecy variable `{0}` of `{1}` from the spawn site")]
    NoInstantiation(String, String),
    #[error("unresolved channel variable `{0}` in a runtime term")]
    UnresolvedVariable(String),
    #[error("node {0} is not a redex for rule {1}")]
    NotARedex(NodeId, Rule),
    #[error("`{0}` expects {1} argument channels, {2} given")]
    BadArity(String, usize, usize),
    #[error("lattice error: {0}")]
    Lattice(#[from] LatticeError),
    #[error("type error: {0}")]
    Types(#[from] TypesError),
}

pub type NodeId = u64;

/// A process node: a running process term providing one channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProcNode {
    pub offer: Chan,
    pub run: SecLevel,
    pub term: ProcTerm,
    /// Per-process counter for deterministic fresh spawn names.
    pub spawns: u32,
}

/// A message node in flight. Positive messages travel from provider to
/// user and provide the old generation of the carrier; negative messages
/// travel from user to provider and provide the new generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum MsgNode {
    /// close y: provides `provided`, uses nothing.
    Close { provided: Chan },
    /// y.k with y positive: provides y (old gen), uses `cont` (new gen).
    SelPos {
        provided: Chan,
        cont: Chan,
        label: String,
    },
    /// x.k with x negative: uses `carrier` (old gen), provides the new gen.
    SelNeg {
        carrier: Chan,
        provided: Chan,
        label: String,
    },
    /// send w y with y positive: provides y (old gen), uses `cont` and the
    /// payload.
    SendPos {
        provided: Chan,
        cont: Chan,
        payload: Chan,
    },
    /// send w u with u negative: uses `carrier` (old gen) and the payload,
    /// provides the new gen.
    SendNeg {
        carrier: Chan,
        provided: Chan,
        payload: Chan,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Node {
    Proc(ProcNode),
    Msg(MsgNode),
}

impl Node {
    /// The single channel this node provides.
    pub fn provides(&self) -> &Chan {
        match self {
            Node::Proc(p) => &p.offer,
            Node::Msg(m) => match m {
                MsgNode::Close { provided }
                | MsgNode::SelPos { provided, .. }
                | MsgNode::SelNeg { provided, .. }
                | MsgNode::SendPos { provided, .. }
                | MsgNode::SendNeg { provided, .. } => provided,
            },
        }
    }

    /// The channels this node uses.
    pub fn uses(&self) -> Vec<Chan> {
        match self {
            Node::Proc(p) => {
                let mut out = Vec::new();
                for c in p.term.free_chans() {
                    if let CRef::Chan(ch) = c {
                        if ch != p.offer {
                            out.push(ch);
                        }
                    }
                }
                out
            }
            Node::Msg(m) => match m {
                MsgNode::Close { .. } => Vec::new(),
                MsgNode::SelPos { cont, .. } => vec![cont.clone()],
                MsgNode::SelNeg { carrier, .. } => vec![carrier.clone()],
                MsgNode::SendPos { cont, payload, .. } => {
                    vec![cont.clone(), payload.clone()]
                }
                MsgNode::SendNeg {
                    carrier, payload, ..
                } => vec![carrier.clone(), payload.clone()],
            },
        }
    }

    /// True for close/⊕/⊗ messages (traveling provider to user).
    pub fn is_positive_msg(&self) -> bool {
        matches!(
            self,
            Node::Msg(MsgNode::Close { .. })
                | Node::Msg(MsgNode::SelPos { .. })
                | Node::Msg(MsgNode::SendPos { .. })
        )
    }

    /// True for &/⊸ messages (traveling user to provider).
    pub fn is_negative_msg(&self) -> bool {
        matches!(
            self,
            Node::Msg(MsgNode::SelNeg { .. }) | Node::Msg(MsgNode::SendNeg { .. })
        )
    }
}

/// The twelve rewrite rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Rule {
    Fwd,
    Spawn,
    CloseSnd,
    CloseRcv,
    PlusSnd,
    PlusRcv,
    WithSnd,
    WithRcv,
    TensorSnd,
    TensorRcv,
    LolliSnd,
    LolliRcv,
}

impl Rule {
    pub fn name(&self) -> &'static str {
        match self {
            Rule::Fwd => "fwd",
            Rule::Spawn => "spawn",
            Rule::CloseSnd => "close-snd",
            Rule::CloseRcv => "close-rcv",
            Rule::PlusSnd => "plus-snd",
            Rule::PlusRcv => "plus-rcv",
            Rule::WithSnd => "with-snd",
            Rule::WithRcv => "with-rcv",
            Rule::TensorSnd => "tensor-snd",
            Rule::TensorRcv => "tensor-rcv",
            Rule::LolliSnd => "lolli-snd",
            Rule::LolliRcv => "lolli-rcv",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An enabled rewrite: the acting process node, the consumed message (for
/// receive rules), and the subject channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Redex {
    pub rule: Rule,
    pub proc_id: NodeId,
    pub msg_id: Option<NodeId>,
    pub channel: Chan,
}

/// The record of one applied step, with enough structure to slice
/// executions by dependency.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepRecord {
    pub rule: Rule,
    pub channel: Chan,
    pub proc_id: NodeId,
    pub msg_id: Option<NodeId>,
    /// Node ids created by this step.
    pub produced: Vec<NodeId>,
    /// Node ids whose contents were rewritten in place (forward renaming).
    pub rewritten: Vec<NodeId>,
    /// Node ids removed by this step.
    pub removed: Vec<NodeId>,
    pub run_before: Option<SecLevel>,
    pub run_after: Option<SecLevel>,
}

/// Per-channel protocol state: the current session type of this generation
/// and the channel's (maximal) secrecy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChanInfo {
    pub ty: SessionType,
    pub sec: SecLevel,
}

/// A runtime configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Configuration {
    pub lattice: SecurityLattice,
    pub table: TypeTable,
    /// The signature the configuration's processes were instantiated from.
    pub sig: Signature,
    pub nodes: BTreeMap<NodeId, Node>,
    /// Protocol state of every live channel generation.
    pub types: BTreeMap<Chan, ChanInfo>,
    /// Channels visible to an external observer: internal forwarding never
    /// renames them away (the boundary semantics handles those).
    pub interface: BTreeSet<Chan>,
    /// Forward renamings applied so far, in order (old, new).
    pub renames: Vec<(Chan, Chan)>,
    next_id: NodeId,
}

/// Evaluates a concrete secrecy term to a level.
pub fn eval_sec(lattice: &SecurityLattice, t: &SecTerm) -> Result<SecLevel, RuntimeError> {
    match t {
        SecTerm::Lit(l) => Ok(l.clone()),
        SecTerm::Var(_) => Err(RuntimeError::NonConcreteSecrecy(t.clone())),
        SecTerm::Join(a, b) => {
            Ok(lattice.join(&eval_sec(lattice, a)?, &eval_sec(lattice, b)?)?)
        }
        SecTerm::Meet(a, b) => {
            Ok(lattice.meet(&eval_sec(lattice, a)?, &eval_sec(lattice, b)?)?)
        }
    }
}

fn as_chan(c: &CRef) -> Result<Chan, RuntimeError> {
    match c {
        CRef::Chan(ch) => Ok(ch.clone()),
        CRef::Var(v) => Err(RuntimeError::UnresolvedVariable(v.clone())),
    }
}

impl Configuration {
    /// An empty configuration over a signature's lattice, types, and
    /// definitions.
    pub fn empty(sig: &Signature) -> Result<Self, RuntimeError> {
        Ok(Configuration {
            lattice: sig.lattice.clone(),
            table: TypeTable::from_pairs(&sig.typedefs)?,
            sig: sig.clone(),
            nodes: BTreeMap::new(),
            types: BTreeMap::new(),
            interface: BTreeSet::new(),
            renames: Vec::new(),
            next_id: 0,
        })
    }

    /// Instantiates the signature's `exec` process as a closed
    /// configuration offering one root channel.
    pub fn from_signature(sig: &Signature, root_base: &str) -> Result<Self, RuntimeError> {
        let name = sig
            .exec
            .clone()
            .ok_or_else(|| RuntimeError::UndefinedProcess("<exec>".into()))?;
        let mut cfg = Configuration::empty(sig)?;
        let def = cfg
            .sig
            .procdef(&name)
            .ok_or_else(|| RuntimeError::UndefinedProcess(name.clone()))?
            .clone();
        let root = Chan::new(root_base, 0);
        let offer_sec = eval_sec(&cfg.lattice, &def.offer_sec)?;
        let run = eval_sec(&cfg.lattice, &def.running)?;
        cfg.add_instance(&name, root, &offer_sec, &run, &[])?;
        Ok(cfg)
    }

    fn fresh_id(&mut self) -> NodeId {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// Inserts an externally built node under a fresh id (used when messages
    /// cross between the components of a split configuration).
    pub fn adopt(&mut self, node: Node) -> NodeId {
        let id = self.fresh_id();
        self.nodes.insert(id, node);
        id
    }

    /// Instantiates a definition as a new process node. The offered
    /// channel's secrecy and the running secrecy instantiate the
    /// definition's annotations; argument channels must already have type
    /// entries.
    pub fn add_instance(
        &mut self,
        name: &str,
        offer: Chan,
        offer_sec: &SecLevel,
        run: &SecLevel,
        args: &[Chan],
    ) -> Result<NodeId, RuntimeError> {
        let def = self
            .sig
            .procdef(name)
            .ok_or_else(|| RuntimeError::UndefinedProcess(name.to_string()))?
            .clone();
        if def.ctx.len() != args.len() {
            return Err(RuntimeError::BadArity(
                name.to_string(),
                def.ctx.len(),
                args.len(),
            ));
        }
        let mut actual_secs = Vec::new();
        for a in args {
            let info = self
                .types
                .get(a)
                .ok_or_else(|| RuntimeError::UnknownChannel(a.clone()))?;
            actual_secs.push(info.sec.clone());
        }
        let subst = runtime_subst(&def, &actual_secs, offer_sec, run)?;
        let mut term = def.body.map_sec(&|t| subst.apply(t));
        term = term.subst_var(&def.offer_var, &CRef::Chan(offer.clone()));
        for (entry, a) in def.ctx.iter().zip(args) {
            term = term.subst_var(&entry.var, &CRef::Chan(a.clone()));
        }
        self.types.insert(
            offer.clone(),
            ChanInfo {
                ty: def.offer_type.clone(),
                sec: offer_sec.clone(),
            },
        );
        let id = self.fresh_id();
        self.nodes.insert(
            id,
            Node::Proc(ProcNode {
                offer,
                run: run.clone(),
                term,
                spawns: 0,
            }),
        );
        Ok(id)
    }

    /// Channels used by some node but provided by none: the configuration's
    /// free inputs Δ.
    pub fn free_inputs(&self) -> BTreeSet<Chan> {
        let provided: BTreeSet<&Chan> = self.nodes.values().map(|n| n.provides()).collect();
        let mut out = BTreeSet::new();
        for n in self.nodes.values() {
            for u in n.uses() {
                if !provided.contains(&u) {
                    out.insert(u);
                }
            }
        }
        out
    }

    /// Channels provided by some node but used by none: the roots of the
    /// forest.
    pub fn roots(&self) -> BTreeSet<Chan> {
        let mut used: BTreeSet<Chan> = BTreeSet::new();
        for n in self.nodes.values() {
            used.extend(n.uses());
        }
        self.nodes
            .values()
            .map(|n| n.provides().clone())
            .filter(|c| !used.contains(c))
            .collect()
    }

    fn msg_providing(&self, c: &Chan) -> Option<NodeId> {
        self.nodes.iter().find_map(|(id, n)| match n {
            Node::Msg(m)
                if matches!(
                    m,
                    MsgNode::Close { provided } | MsgNode::SelPos { provided, .. }
                        | MsgNode::SendPos { provided, .. } if provided == c
                ) =>
            {
                Some(*id)
            }
            _ => None,
        })
    }

    fn neg_msg_on(&self, carrier: &Chan) -> Option<NodeId> {
        self.nodes.iter().find_map(|(id, n)| match n {
            Node::Msg(MsgNode::SelNeg { carrier: c, .. })
            | Node::Msg(MsgNode::SendNeg { carrier: c, .. })
                if c == carrier =>
            {
                Some(*id)
            }
            _ => None,
        })
    }

    /// All enabled internal redexes, in a deterministic order.
    pub fn enabled(&self) -> Vec<Redex> {
        let mut out = Vec::new();
        for (id, node) in &self.nodes {
            let Node::Proc(p) = node else { continue };
            let offer_ref = CRef::Chan(p.offer.clone());
            match &p.term.kind {
                ProcKind::Fwd { offer, from: _ } => {
                    if *offer == offer_ref && !self.interface.contains(&p.offer) {
                        out.push(Redex {
                            rule: Rule::Fwd,
                            proc_id: *id,
                            msg_id: None,
                            channel: p.offer.clone(),
                        });
                    }
                }
                ProcKind::Spawn { .. } => out.push(Redex {
                    rule: Rule::Spawn,
                    proc_id: *id,
                    msg_id: None,
                    channel: p.offer.clone(),
                }),
                ProcKind::Close(x) => {
                    if *x == offer_ref {
                        out.push(Redex {
                            rule: Rule::CloseSnd,
                            proc_id: *id,
                            msg_id: None,
                            channel: p.offer.clone(),
                        });
                    }
                }
                ProcKind::Wait(x, _) => {
                    if let Ok(ch) = as_chan(x) {
                        if let Some(mid) = self.msg_providing(&ch) {
                            if matches!(self.nodes[&mid], Node::Msg(MsgNode::Close { .. })) {
                                out.push(Redex {
                                    rule: Rule::CloseRcv,
                                    proc_id: *id,
                                    msg_id: Some(mid),
                                    channel: ch,
                                });
                            }
                        }
                    }
                }
                ProcKind::Select(x, _, _) => {
                    if *x == offer_ref {
                        out.push(Redex {
                            rule: Rule::PlusSnd,
                            proc_id: *id,
                            msg_id: None,
                            channel: p.offer.clone(),
                        });
                    } else if let Ok(ch) = as_chan(x) {
                        out.push(Redex {
                            rule: Rule::WithSnd,
                            proc_id: *id,
                            msg_id: None,
                            channel: ch,
                        });
                    }
                }
                ProcKind::Case(x, _) => {
                    if *x == offer_ref {
                        if let Some(mid) = self.neg_msg_on(&p.offer) {
                            if matches!(self.nodes[&mid], Node::Msg(MsgNode::SelNeg { .. })) {
                                out.push(Redex {
                                    rule: Rule::WithRcv,
                                    proc_id: *id,
                                    msg_id: Some(mid),
                                    channel: p.offer.clone(),
                                });
                            }
                        }
                    } else if let Ok(ch) = as_chan(x) {
                        if let Some(mid) = self.msg_providing(&ch) {
                            if matches!(self.nodes[&mid], Node::Msg(MsgNode::SelPos { .. })) {
                                out.push(Redex {
                                    rule: Rule::PlusRcv,
                                    proc_id: *id,
                                    msg_id: Some(mid),
                                    channel: ch,
                                });
                            }
                        }
                    }
                }
                ProcKind::SendChan { carrier, .. } => {
                    if *carrier == offer_ref {
                        out.push(Redex {
                            rule: Rule::TensorSnd,
                            proc_id: *id,
                            msg_id: None,
                            channel: p.offer.clone(),
                        });
                    } else if let Ok(ch) = as_chan(carrier) {
                        out.push(Redex {
                            rule: Rule::LolliSnd,
                            proc_id: *id,
                            msg_id: None,
                            channel: ch,
                        });
                    }
                }
                ProcKind::RecvChan { carrier, .. } => {
                    if *carrier == offer_ref {
                        if let Some(mid) = self.neg_msg_on(&p.offer) {
                            if matches!(self.nodes[&mid], Node::Msg(MsgNode::SendNeg { .. })) {
                                out.push(Redex {
                                    rule: Rule::LolliRcv,
                                    proc_id: *id,
                                    msg_id: Some(mid),
                                    channel: p.offer.clone(),
                                });
                            }
                        }
                    } else if let Ok(ch) = as_chan(carrier) {
                        if let Some(mid) = self.msg_providing(&ch) {
                            if matches!(self.nodes[&mid], Node::Msg(MsgNode::SendPos { .. })) {
                                out.push(Redex {
                                    rule: Rule::TensorRcv,
                                    proc_id: *id,
                                    msg_id: Some(mid),
                                    channel: ch,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn unfold_branches(
        &self,
        ty: &SessionType,
    ) -> Result<Option<BTreeMap<String, SessionType>>, RuntimeError> {
        match self.table.unfold_head(ty)? {
            SessionType::Plus(bs) | SessionType::With(bs) => Ok(Some(bs)),
            _ => Ok(None),
        }
    }

    fn unfold_pair(
        &self,
        ty: &SessionType,
    ) -> Result<Option<(SessionType, SessionType)>, RuntimeError> {
        match self.table.unfold_head(ty)? {
            SessionType::Tensor(a, b) | SessionType::Lolli(a, b) => Ok(Some((*a, *b))),
            _ => Ok(None),
        }
    }

    fn chan_info(&self, c: &Chan) -> Result<ChanInfo, RuntimeError> {
        self.types
            .get(c)
            .cloned()
            .ok_or_else(|| RuntimeError::UnknownChannel(c.clone()))
    }

    /// Renames `from` to `to` across all nodes, the interface, and the
    /// types map, returning the ids of rewritten nodes. The renaming
    /// covers the whole future of the channel: every generation of
    /// `from`'s base at or above `from.gen` maps to `to`'s base with the
    /// generation offset preserved, so that a user that has already
    /// advanced the session keeps talking to the forwarded-to provider.
    pub fn rename_everywhere(&mut self, from: &Chan, to: &Chan) -> Vec<NodeId> {
        let map = |c: &Chan| -> Option<Chan> {
            if c.base == from.base && c.gen >= from.gen {
                Some(Chan::new(&to.base, to.gen + (c.gen - from.gen)))
            } else {
                None
            }
        };
        let mut touched = Vec::new();
        let rename = |c: &mut Chan, hit: &mut bool| {
            if let Some(n) = map(c) {
                *c = n;
                *hit = true;
            }
        };
        let ids: Vec<NodeId> = self.nodes.keys().copied().collect();
        for id in ids {
            let mut hit = false;
            match self.nodes.get_mut(&id).unwrap() {
                Node::Proc(p) => {
                    rename(&mut p.offer, &mut hit);
                    let renamed = p.term.map_refs(&|r| match r {
                        CRef::Chan(c) => match map(c) {
                            Some(n) => CRef::Chan(n),
                            None => r.clone(),
                        },
                        CRef::Var(_) => r.clone(),
                    });
                    if renamed != p.term {
                        p.term = renamed;
                        hit = true;
                    }
                }
                Node::Msg(m) => match m {
                    MsgNode::Close { provided } => rename(provided, &mut hit),
                    MsgNode::SelPos { provided, cont, .. } => {
                        rename(provided, &mut hit);
                        rename(cont, &mut hit);
                    }
                    MsgNode::SelNeg {
                        carrier, provided, ..
                    } => {
                        rename(carrier, &mut hit);
                        rename(provided, &mut hit);
                    }
                    MsgNode::SendPos {
                        provided,
                        cont,
                        payload,
                    } => {
                        rename(provided, &mut hit);
                        rename(cont, &mut hit);
                        rename(payload, &mut hit);
                    }
                    MsgNode::SendNeg {
                        carrier,
                        provided,
                        payload,
                    } => {
                        rename(carrier, &mut hit);
                        rename(provided, &mut hit);
                        rename(payload, &mut hit);
                    }
                },
            }
            if hit {
                touched.push(id);
            }
        }
        let iface: Vec<Chan> = self.interface.iter().filter(|c| map(c).is_some()).cloned().collect();
        for c in iface {
            self.interface.remove(&c);
            self.interface.insert(map(&c).unwrap());
        }
        let keys: Vec<Chan> = self.types.keys().filter(|c| map(c).is_some()).cloned().collect();
        for c in keys {
            if let Some(info) = self.types.remove(&c) {
                self.types.entry(map(&c).unwrap()).or_insert(info);
            }
        }
        touched
    }

    /// Applies one enabled redex.
    pub fn apply(&mut self, r: &Redex) -> Result<StepRecord, RuntimeError> {
        let node = self
            .nodes
            .get(&r.proc_id)
            .ok_or(RuntimeError::NotARedex(r.proc_id, r.rule))?;
        let Node::Proc(p) = node.clone() else {
            return Err(RuntimeError::NotARedex(r.proc_id, r.rule));
        };
        let mut rec = StepRecord {
            rule: r.rule,
            channel: r.channel.clone(),
            proc_id: r.proc_id,
            msg_id: r.msg_id,
            produced: Vec::new(),
            rewritten: Vec::new(),
            removed: Vec::new(),
            run_before: Some(p.run.clone()),
            run_after: None,
        };
        match (r.rule, &p.term.kind) {
            (Rule::Fwd, ProcKind::Fwd { offer: _, from }) => {
                let from = as_chan(from)?;
                let offer = p.offer.clone();
                self.nodes.remove(&r.proc_id);
                rec.removed.push(r.proc_id);
                rec.rewritten = self.rename_everywhere(&offer, &from);
                self.types.remove(&offer);
                self.renames.push((offer, from));
                rec.run_after = None;
            }
            (Rule::Spawn, ProcKind::Spawn { .. }) => {
                let ProcKind::Spawn {
                    newchan,
                    decl_type,
                    decl_max,
                    decl_run,
                    proc_name,
                    args,
                    cont,
                } = p.term.kind.clone()
                else {
                    unreachable!()
                };
                let arg_chans: Vec<Chan> =
                    args.iter().map(as_chan).collect::<Result<_, _>>()?;
                let fresh = Chan::new(&format!("{}.{}", p.offer.base, p.spawns), 0);
                let max = eval_sec(&self.lattice, &decl_max)?;
                let run = eval_sec(&self.lattice, &decl_run)?;
                // Record the declared type (which may differ syntactically
                // from the callee's) so the caller-side view is preserved.
                let callee_id =
                    self.add_instance(&proc_name, fresh.clone(), &max, &run, &arg_chans)?;
                self.types.get_mut(&fresh).unwrap().ty = decl_type;
                rec.produced.push(callee_id);
                let caller = match self.nodes.get_mut(&r.proc_id).unwrap() {
                    Node::Proc(c) => c,
                    Node::Msg(_) => unreachable!(),
                };
                caller.spawns += 1;
                caller.term = match cont {
                    Some(q) => q.subst_var(&newchan, &CRef::Chan(fresh)),
                    None => ProcTerm::new(
                        p.term.pos,
                        ProcKind::Fwd {
                            offer: CRef::Chan(caller.offer.clone()),
                            from: CRef::Chan(fresh),
                        },
                    ),
                };
                rec.run_after = Some(p.run.clone());
            }
            (Rule::CloseSnd, ProcKind::Close(_)) => {
                let offer = p.offer.clone();
                self.nodes.remove(&r.proc_id);
                rec.removed.push(r.proc_id);
                let mid = self.fresh_id();
                self.nodes
                    .insert(mid, Node::Msg(MsgNode::Close { provided: offer }));
                rec.produced.push(mid);
            }
            (Rule::CloseRcv, ProcKind::Wait(x, q)) => {
                let ch = as_chan(x)?;
                let mid = r.msg_id.ok_or(RuntimeError::NotARedex(r.proc_id, r.rule))?;
                self.nodes.remove(&mid);
                rec.removed.push(mid);
                let info = self.chan_info(&ch)?;
                self.types.remove(&ch);
                let raised = self.lattice.join(&p.run, &info.sec)?;
                let proc = match self.nodes.get_mut(&r.proc_id).unwrap() {
                    Node::Proc(c) => c,
                    Node::Msg(_) => unreachable!(),
                };
                proc.term = (**q).clone();
                proc.run = raised.clone();
                rec.run_after = Some(raised);
            }
            (Rule::PlusSnd, ProcKind::Select(_, k, q)) => {
                let old = p.offer.clone();
                let new = old.bump();
                let info = self.chan_info(&old)?;
                let branches = self.unfold_branches(&info.ty)?.ok_or(
                    RuntimeError::NotARedex(r.proc_id, r.rule),
                )?;
                let cont_ty = branches
                    .get(k)
                    .ok_or(RuntimeError::NotARedex(r.proc_id, r.rule))?
                    .clone();
                self.types.insert(
                    new.clone(),
                    ChanInfo {
                        ty: cont_ty,
                        sec: info.sec,
                    },
                );
                let mid = self.fresh_id();
                self.nodes.insert(
                    mid,
                    Node::Msg(MsgNode::SelPos {
                        provided: old.clone(),
                        cont: new.clone(),
                        label: k.clone(),
                    }),
                );
                rec.produced.push(mid);
                let proc = match self.nodes.get_mut(&r.proc_id).unwrap() {
                    Node::Proc(c) => c,
                    Node::Msg(_) => unreachable!(),
                };
                proc.offer = new.clone();
                proc.term = q.rename_chan(&old, &new);
                rec.run_after = Some(p.run.clone());
            }
            (Rule::PlusRcv, ProcKind::Case(x, branches)) => {
                let ch = as_chan(x)?;
                let mid = r.msg_id.ok_or(RuntimeError::NotARedex(r.proc_id, r.rule))?;
                let Node::Msg(MsgNode::SelPos { cont, label, .. }) =
                    self.nodes.get(&mid).unwrap().clone()
                else {
                    return Err(RuntimeError::NotARedex(r.proc_id, r.rule));
                };
                let body = branches
                    .iter()
                    .find(|(l, _)| *l == label)
                    .map(|(_, b)| b.clone())
                    .ok_or(RuntimeError::NotARedex(r.proc_id, r.rule))?;
                self.nodes.remove(&mid);
                rec.removed.push(mid);
                let info = self.chan_info(&ch)?;
                self.types.remove(&ch);
                let raised = self.lattice.join(&p.run, &info.sec)?;
                let proc = match self.nodes.get_mut(&r.proc_id).unwrap() {
                    Node::Proc(c) => c,
                    Node::Msg(_) => unreachable!(),
                };
                proc.term = body.rename_chan(&ch, &cont);
                proc.run = raised.clone();
                rec.run_after = Some(raised);
            }
            (Rule::WithSnd, ProcKind::Select(x, k, q)) => {
                let old = as_chan(x)?;
                let new = old.bump();
                let info = self.chan_info(&old)?;
                let branches = self.unfold_branches(&info.ty)?.ok_or(
                    RuntimeError::NotARedex(r.proc_id, r.rule),
                )?;
                let cont_ty = branches
                    .get(k)
                    .ok_or(RuntimeError::NotARedex(r.proc_id, r.rule))?
                    .clone();
                self.types.insert(
                    new.clone(),
                    ChanInfo {
                        ty: cont_ty,
                        sec: info.sec,
                    },
                );
                let mid = self.fresh_id();
                self.nodes.insert(
                    mid,
                    Node::Msg(MsgNode::SelNeg {
                        carrier: old.clone(),
                        provided: new.clone(),
                        label: k.clone(),
                    }),
                );
                rec.produced.push(mid);
                let proc = match self.nodes.get_mut(&r.proc_id).unwrap() {
                    Node::Proc(c) => c,
                    Node::Msg(_) => unreachable!(),
                };
                proc.term = q.rename_chan(&old, &new);
                rec.run_after = Some(p.run.clone());
            }
            (Rule::WithRcv, ProcKind::Case(_, branches)) => {
                let mid = r.msg_id.ok_or(RuntimeError::NotARedex(r.proc_id, r.rule))?;
                let Node::Msg(MsgNode::SelNeg {
                    carrier,
                    provided,
                    label,
                }) = self.nodes.get(&mid).unwrap().clone()
                else {
                    return Err(RuntimeError::NotARedex(r.proc_id, r.rule));
                };
                let body = branches
                    .iter()
                    .find(|(l, _)| *l == label)
                    .map(|(_, b)| b.clone())
                    .ok_or(RuntimeError::NotARedex(r.proc_id, r.rule))?;
                self.nodes.remove(&mid);
                rec.removed.push(mid);
                let info = self.chan_info(&carrier)?;
                self.types.remove(&carrier);
                let proc = match self.nodes.get_mut(&r.proc_id).unwrap() {
                    Node::Proc(c) => c,
                    Node::Msg(_) => unreachable!(),
                };
                proc.offer = provided.clone();
                proc.term = body.rename_chan(&carrier, &provided);
                proc.run = info.sec.clone();
                rec.run_after = Some(info.sec);
            }
            (Rule::TensorSnd, ProcKind::SendChan { payload, cont, .. }) => {
                let payload = as_chan(payload)?;
                let old = p.offer.clone();
                let new = old.bump();
                let info = self.chan_info(&old)?;
                let (_, cont_ty) = self.unfold_pair(&info.ty)?.ok_or(
                    RuntimeError::NotARedex(r.proc_id, r.rule),
                )?;
                self.types.insert(
                    new.clone(),
                    ChanInfo {
                        ty: cont_ty,
                        sec: info.sec,
                    },
                );
                let mid = self.fresh_id();
                self.nodes.insert(
                    mid,
                    Node::Msg(MsgNode::SendPos {
                        provided: old.clone(),
                        cont: new.clone(),
                        payload,
                    }),
                );
                rec.produced.push(mid);
                let cont = (**cont).clone();
                let proc = match self.nodes.get_mut(&r.proc_id).unwrap() {
                    Node::Proc(c) => c,
                    Node::Msg(_) => unreachable!(),
                };
                proc.offer = new.clone();
                proc.term = cont.rename_chan(&old, &new);
                rec.run_after = Some(p.run.clone());
            }
            (Rule::TensorRcv, ProcKind::RecvChan { bind, cont, .. }) => {
                let ch = r.channel.clone();
                let mid = r.msg_id.ok_or(RuntimeError::NotARedex(r.proc_id, r.rule))?;
                let Node::Msg(MsgNode::SendPos {
                    cont: next,
                    payload,
                    ..
                }) = self.nodes.get(&mid).unwrap().clone()
                else {
                    return Err(RuntimeError::NotARedex(r.proc_id, r.rule));
                };
                self.nodes.remove(&mid);
                rec.removed.push(mid);
                let info = self.chan_info(&ch)?;
                self.types.remove(&ch);
                let raised = self.lattice.join(&p.run, &info.sec)?;
                let body = cont
                    .subst_var(bind, &CRef::Chan(payload))
                    .rename_chan(&ch, &next);
                let proc = match self.nodes.get_mut(&r.proc_id).unwrap() {
                    Node::Proc(c) => c,
                    Node::Msg(_) => unreachable!(),
                };
                proc.term = body;
                proc.run = raised.clone();
                rec.run_after = Some(raised);
            }
            (Rule::LolliSnd, ProcKind::SendChan { payload, cont, .. }) => {
                let payload = as_chan(payload)?;
                let old = r.channel.clone();
                let new = old.bump();
                let info = self.chan_info(&old)?;
                let (_, cont_ty) = self.unfold_pair(&info.ty)?.ok_or(
                    RuntimeError::NotARedex(r.proc_id, r.rule),
                )?;
                self.types.insert(
                    new.clone(),
                    ChanInfo {
                        ty: cont_ty,
                        sec: info.sec,
                    },
                );
                let mid = self.fresh_id();
                self.nodes.insert(
                    mid,
                    Node::Msg(MsgNode::SendNeg {
                        carrier: old.clone(),
                        provided: new.clone(),
                        payload,
                    }),
                );
                rec.produced.push(mid);
                let cont = (**cont).clone();
                let proc = match self.nodes.get_mut(&r.proc_id).unwrap() {
                    Node::Proc(c) => c,
                    Node::Msg(_) => unreachable!(),
                };
                proc.term = cont.rename_chan(&old, &new);
                rec.run_after = Some(p.run.clone());
            }
            (Rule::LolliRcv, ProcKind::RecvChan { bind, cont, .. }) => {
                let mid = r.msg_id.ok_or(RuntimeError::NotARedex(r.proc_id, r.rule))?;
                let Node::Msg(MsgNode::SendNeg {
                    carrier,
                    provided,
                    payload,
                }) = self.nodes.get(&mid).unwrap().clone()
                else {
                    return Err(RuntimeError::NotARedex(r.proc_id, r.rule));
                };
                self.nodes.remove(&mid);
                rec.removed.push(mid);
                let info = self.chan_info(&carrier)?;
                self.types.remove(&carrier);
                let body = cont
                    .subst_var(bind, &CRef::Chan(payload))
                    .rename_chan(&carrier, &provided);
                let proc = match self.nodes.get_mut(&r.proc_id).unwrap() {
                    Node::Proc(c) => c,
                    Node::Msg(_) => unreachable!(),
                };
                proc.offer = provided.clone();
                proc.term = body;
                proc.run = info.sec.clone();
                rec.run_after = Some(info.sec);
            }
            _ => return Err(RuntimeError::NotARedex(r.proc_id, r.rule)),
        }
        Ok(rec)
    }

    /// The poisedness predicate: every nonempty tree of the forest contains
    /// a node interacting with the environment, i.e. one of
    /// - a negative message toward a free input,
    /// - a process receiving along a free input,
    /// - a positive message at a root,
    /// - a process receiving along its own offered root.
    pub fn is_poised(&self) -> bool {
        if self.nodes.is_empty() {
            return true;
        }
        let delta = self.free_inputs();
        let roots = self.roots();
        // Union-find over nodes by shared channels.
        let ids: Vec<NodeId> = self.nodes.keys().copied().collect();
        let mut comp: BTreeMap<NodeId, usize> =
            ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let mut chan_owner: BTreeMap<Chan, Vec<NodeId>> = BTreeMap::new();
        for (id, n) in &self.nodes {
            chan_owner.entry(n.provides().clone()).or_default().push(*id);
            for u in n.uses() {
                chan_owner.entry(u).or_default().push(*id);
            }
        }
        loop {
            let mut changed = false;
            for owners in chan_owner.values() {
                if let Some(min) = owners.iter().map(|id| comp[id]).min() {
                    for id in owners {
                        if comp[id] != min {
                            comp.insert(*id, min);
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let mut poised_comps: BTreeSet<usize> = BTreeSet::new();
        for (id, n) in &self.nodes {
            let ok = match n {
                Node::Msg(_) if n.is_negative_msg() => {
                    n.uses().iter().any(|c| delta.contains(c))
                }
                Node::Msg(_) => roots.contains(n.provides()),
                Node::Proc(p) => match &p.term.kind {
                    ProcKind::Wait(x, _) | ProcKind::Case(x, _) => match x {
                        CRef::Chan(c) => {
                            delta.contains(c) || (*c == p.offer && roots.contains(c))
                        }
                        CRef::Var(_) => false,
                    },
                    ProcKind::RecvChan { carrier, .. } => match carrier {
                        CRef::Chan(c) => {
                            delta.contains(c) || (*c == p.offer && roots.contains(c))
                        }
                        CRef::Var(_) => false,
                    },
                    _ => false,
                },
            };
            if ok {
                poised_comps.insert(comp[id]);
            }
        }
        let all_comps: BTreeSet<usize> = comp.values().copied().collect();
        all_comps.is_subset(&poised_comps)
    }

    /// A canonical, id-independent key identifying the configuration up to
    /// node numbering: nodes sorted by provided channel, plus channel types
    /// and the interface.
    pub fn canonical_key(&self) -> String {
        let mut nodes: Vec<(&Chan, &Node)> = self
            .nodes
            .values()
            .map(|n| (n.provides(), n))
            .collect();
        nodes.sort_by(|a, b| a.0.cmp(b.0));
        let mut s = String::new();
        for (c, n) in nodes {
            s.push_str(&format!("{c}=>{n:?};"));
        }
        s.push_str(&format!("types={:?};iface={:?}", self.types, self.interface));
        s
    }

    /// A 64-bit hash of the canonical key.
    pub fn canonical_hash(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.canonical_key().hash(&mut h);
        h.finish()
    }
}

/// Scheduling policies for `run`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheduler {
    /// Fair rounds: every redex enabled at the start of a round is applied
    /// (revalidated) before the next round begins.
    Fifo,
    /// Uniformly random redex selection from the given seed.
    Random(u64),
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StopReason {
    Quiescent,
    StepLimit,
}

/// The outcome of a run: the steps taken and why it stopped.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub steps: Vec<StepRecord>,
    pub stopped: StopReason,
}

/// Applies one fair round: every redex enabled at the start of the round is
/// revalidated and applied once, up to `max_steps` steps in total.
pub fn fair_round(
    cfg: &mut Configuration,
    max_steps: usize,
) -> Result<Vec<StepRecord>, RuntimeError> {
    let mut steps = Vec::new();
    let round: Vec<NodeId> = cfg.enabled().iter().map(|r| r.proc_id).collect();
    for pid in round {
        if steps.len() >= max_steps {
            break;
        }
        let now = cfg.enabled();
        if let Some(r) = now.iter().find(|r| r.proc_id == pid) {
            steps.push(cfg.apply(r)?);
        }
    }
    Ok(steps)
}

/// Runs a configuration under a scheduler for at most `max_steps` steps.
pub fn run(
    cfg: &mut Configuration,
    sched: Scheduler,
    max_steps: usize,
) -> Result<RunResult, RuntimeError> {
    let mut steps = Vec::new();
    match sched {
        Scheduler::Fifo => loop {
            if cfg.enabled().is_empty() {
                return Ok(RunResult {
                    steps,
                    stopped: StopReason::Quiescent,
                });
            }
            if steps.len() >= max_steps {
                return Ok(RunResult {
                    steps,
                    stopped: StopReason::StepLimit,
                });
            }
            let mut round = fair_round(cfg, max_steps - steps.len())?;
            steps.append(&mut round);
        },
        Scheduler::Random(seed) => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            loop {
                if steps.len() >= max_steps {
                    return Ok(RunResult {
                        steps,
                        stopped: StopReason::StepLimit,
                    });
                }
                let now = cfg.enabled();
                if now.is_empty() {
                    return Ok(RunResult {
                        steps,
                        stopped: StopReason::Quiescent,
                    });
                }
                let r = &now[rng.gen_range(0..now.len())];
                steps.push(cfg.apply(r)?);
            }
        }
    }
}

/// The outcome of exhaustive exploration.
#[derive(Debug, Clone)]
pub struct ExploreResult {
    /// Number of distinct configurations visited.
    pub states: usize,
    /// Canonical keys of quiescent configurations.
    pub quiescent: Vec<Configuration>,
    /// Quiescent configurations that are not poised (progress violations).
    pub stuck_not_poised: Vec<Configuration>,
    /// True if the frontier was truncated at the depth bound.
    pub truncated: bool,
}

/// Breadth-first exploration of every schedule up to `depth` steps.
pub fn explore(cfg: &Configuration, depth: usize) -> Result<ExploreResult, RuntimeError> {
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut frontier = vec![cfg.clone()];
    seen.insert(cfg.canonical_key());
    let mut quiescent = Vec::new();
    let mut stuck_not_poised = Vec::new();
    let mut truncated = false;
    for _ in 0..=depth {
        let mut next = Vec::new();
        for c in &frontier {
            let redexes = c.enabled();
            if redexes.is_empty() {
                if !c.is_poised() {
                    stuck_not_poised.push(c.clone());
                }
                quiescent.push(c.clone());
                continue;
            }
            for r in &redexes {
                let mut child = c.clone();
                child.apply(r)?;
                let key = child.canonical_key();
                if seen.insert(key) {
                    next.push(child);
                }
            }
        }
        frontier = next;
        if frontier.is_empty() {
            break;
        }
    }
    if !frontier.is_empty() {
        truncated = true;
    }
    Ok(ExploreResult {
        states: seen.len(),
        quiescent,
        stuck_not_poised,
        truncated,
    })
}

/// Computes the concrete secrecy substitution instantiating a definition's
/// variables from the actuals at an instantiation site.
pub fn runtime_subst(
    def: &crate::ast::ProcDef,
    actual_param_secs: &[SecLevel],
    actual_offer_sec: &SecLevel,
    actual_run: &SecLevel,
) -> Result<Substitution, RuntimeError> {
    let mut positions: Vec<(&SecTerm, &SecLevel)> = Vec::new();
    for (entry, actual) in def.ctx.iter().zip(actual_param_secs) {
        positions.push((&entry.sec, actual));
    }
    positions.push((&def.offer_sec, actual_offer_sec));
    positions.push((&def.running, actual_run));
    let mut subst = Substitution::identity();
    for (anno, actual) in &positions {
        if let SecTerm::Var(v) = anno {
            if def.psi.vars.contains(v) && !subst.map.contains_key(v) {
                subst.bind(v, SecTerm::Lit((*actual).clone()));
            }
        }
    }
    for v in &def.psi.vars {
        if !subst.map.contains_key(v) {
            return Err(RuntimeError::NoInstantiation(v.clone(), def.name.clone()));
        }
    }
    Ok(subst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::parse_program;

    fn cfg_of(src: &str) -> Configuration {
        let sig = parse_program(src).unwrap_or_else(|e| panic!("parse failed: {e}"));
        Configuration::from_signature(&sig, "root").unwrap()
    }

    const LATTICE: &str = "
        level guest; level alice; level bob; level bank;
        order guest <= alice; order guest <= bob;
        order alice <= bank; order bob <= bank;
    ";

    #[test]
    fn close_wait_terminates() {
        let mut cfg = cfg_of(&format!(
            "{LATTICE}
            proc Sub () @ guest :: y : 1 [alice] = close y
            proc Main () @ guest :: x : 1 [alice] =
                y : 1 [alice] <- Sub @ guest <- ();
                wait y; close x
            exec Main
        "));
        let res = run(&mut cfg, Scheduler::Fifo, 100).unwrap();
        assert_eq!(res.stopped, StopReason::Quiescent);
        // Remaining: exactly the close message at the root.
        assert_eq!(cfg.nodes.len(), 1);
        let n = cfg.nodes.values().next().unwrap();
        assert!(matches!(n, Node::Msg(MsgNode::Close { provided }) if provided == &Chan::new("root", 0)));
        assert!(cfg.is_poised());
        // Steps: spawn, close-snd (sub), close-rcv (main, raising run to
        // alice), close-snd (main).
        let rules: Vec<Rule> = res.steps.iter().map(|s| s.rule).collect();
        assert_eq!(
            rules,
            vec![Rule::Spawn, Rule::CloseSnd, Rule::CloseRcv, Rule::CloseSnd]
        );
        assert_eq!(res.steps[2].run_after.as_deref(), Some("alice"));
    }

    #[test]
    fn spawn_names_are_deterministic() {
        let mut cfg = cfg_of(&format!(
            "{LATTICE}
            proc Sub () @ guest :: y : 1 [guest] = close y
            proc Main () @ guest :: x : 1 [guest] =
                y : 1 [guest] <- Sub @ guest <- ();
                z : 1 [guest] <- Sub @ guest <- ();
                wait y; wait z; close x
            exec Main
        "));
        let res = run(&mut cfg, Scheduler::Fifo, 100).unwrap();
        assert_eq!(res.stopped, StopReason::Quiescent);
        let spawned: Vec<Chan> = res
            .steps
            .iter()
            .filter(|s| s.rule == Rule::Spawn)
            .map(|_| Chan::new("", 0))
            .collect();
        assert_eq!(spawned.len(), 2);
        // The fresh names derive from the caller's offer base and counter.
        let renames: Vec<String> = res
            .steps
            .iter()
            .filter(|s| s.rule == Rule::CloseRcv)
            .map(|s| s.channel.base.clone())
            .collect();
        assert_eq!(renames, vec!["root.0".to_string(), "root.1".to_string()]);
    }

    #[test]
    fn select_bumps_generation() {
        let mut cfg = cfg_of(&format!(
            "{LATTICE}
            type bits = +{{b0: bits, b1: bits}};
            proc Emit () @ guest :: t : bits [guest] =
                t.b0; t.b1; t2 : bits [guest] <- Emit @ guest <- ()
            proc Main () @ guest :: x : 1 [guest] =
                t : bits [guest] <- Emit @ guest <- ();
                case t (b0 => case t (b0 => w : 1 [guest] <- Done @ guest <- (t)
                                    | b1 => w : 1 [guest] <- Done @ guest <- (t))
                      | b1 => case t (b0 => w : 1 [guest] <- Done @ guest <- (t)
                                    | b1 => w : 1 [guest] <- Done @ guest <- (t)))
            proc Done (t : bits [guest]) @ guest :: w : 1 [guest] =
                case t (b0 => w2 : 1 [guest] <- Done @ guest <- (t)
                      | b1 => w2 : 1 [guest] <- Done @ guest <- (t))
            exec Main
        "));
        let res = run(&mut cfg, Scheduler::Fifo, 12).unwrap();
        assert_eq!(res.stopped, StopReason::StepLimit);
        // Generations on the bits channel climb as labels are consumed.
        let gens: Vec<u32> = res
            .steps
            .iter()
            .filter(|s| s.rule == Rule::PlusRcv)
            .map(|s| s.channel.gen)
            .collect();
        assert!(gens.len() >= 2);
        assert_eq!(gens[0], 0);
        assert_eq!(gens[1], 1);
    }

    #[test]
    fn fwd_renames_globally_and_logs() {
        let mut cfg = cfg_of(&format!(
            "{LATTICE}
            proc Sub () @ guest :: y : 1 [guest] = close y
            proc Mid () @ guest :: z : 1 [guest] =
                y : 1 [guest] <- Sub @ guest <- ();
                fwd z y
            proc Main () @ guest :: x : 1 [guest] =
                z : 1 [guest] <- Mid @ guest <- ();
                wait z; close x
            exec Main
        "));
        let res = run(&mut cfg, Scheduler::Fifo, 100).unwrap();
        assert_eq!(res.stopped, StopReason::Quiescent);
        assert_eq!(cfg.renames.len(), 1);
        let (old, new) = &cfg.renames[0];
        assert_eq!(old.base, "root.0");
        assert_eq!(new.base, "root.0.0");
        assert!(res.steps.iter().any(|s| s.rule == Rule::Fwd));
    }

    #[test]
    fn tensor_and_lolli_transfer_payloads() {
        let mut cfg = cfg_of(&format!(
            "{LATTICE}
            proc One () @ guest :: c : 1 [guest] = close c
            proc Prod () @ guest :: p : 1 * 1 [guest] =
                c : 1 [guest] <- One @ guest <- ();
                send c p; close p
            proc Main () @ guest :: x : 1 [guest] =
                p : 1 * 1 [guest] <- Prod @ guest <- ();
                c <- recv p; wait c; wait p; close x
            exec Main
        "));
        let res = run(&mut cfg, Scheduler::Fifo, 100).unwrap();
        assert_eq!(res.stopped, StopReason::Quiescent);
        assert!(res.steps.iter().any(|s| s.rule == Rule::TensorSnd));
        assert!(res.steps.iter().any(|s| s.rule == Rule::TensorRcv));
        let mut cfg2 = cfg_of(&format!(
            "{LATTICE}
            proc One () @ guest :: c : 1 [guest] = close c
            proc Cons () @ guest :: p : 1 -o 1 [guest] =
                c <- recv p; wait c; close p
            proc Main () @ guest :: x : 1 [guest] =
                p : 1 -o 1 [guest] <- Cons @ guest <- ();
                c : 1 [guest] <- One @ guest <- ();
                send c p; wait p; close x
            exec Main
        "));
        let res2 = run(&mut cfg2, Scheduler::Fifo, 100).unwrap();
        assert_eq!(res2.stopped, StopReason::Quiescent);
        assert!(res2.steps.iter().any(|s| s.rule == Rule::LolliSnd));
        assert!(res2.steps.iter().any(|s| s.rule == Rule::LolliRcv));
    }

    #[test]
    fn with_rcv_sets_run_to_channel_secrecy() {
        let mut cfg = cfg_of(&format!(
            "{LATTICE}
            type sink = &{{go: sink}};
            proc Sink () @ guest :: s : sink [alice] =
                case s (go => s2 : sink [alice] <- Sink @ alice <- ())
            proc Main () @ guest :: x : 1 [bank] =
                s : sink [alice] <- Sink @ guest <- ();
                s.go;
                m : 1 [bank] <- Rest @ alice <- (s)
            proc Rest [psi] (s : sink [psi]) @ psi :: m : 1 [bank] =
                s.go;
                m2 : 1 [bank] <- Rest @ psi <- (s)
            exec Main
        "));
        let res = run(&mut cfg, Scheduler::Fifo, 20).unwrap();
        let with_rcv = res
            .steps
            .iter()
            .find(|s| s.rule == Rule::WithRcv)
            .expect("with-rcv step");
        assert_eq!(with_rcv.run_before.as_deref(), Some("guest"));
        assert_eq!(with_rcv.run_after.as_deref(), Some("alice"));
    }

    #[test]
    fn schedulers_reach_the_same_quiescent_configuration() {
        let src = format!(
            "{LATTICE}
            proc One () @ guest :: c : 1 [guest] = close c
            proc Pair () @ guest :: p : 1 * 1 [guest] =
                c : 1 [guest] <- One @ guest <- ();
                send c p; close p
            proc Main () @ guest :: x : 1 [guest] =
                p : 1 * 1 [guest] <- Pair @ guest <- ();
                q : 1 * 1 [guest] <- Pair @ guest <- ();
                c <- recv p; d <- recv q;
                wait c; wait d; wait p; wait q; close x
            exec Main
        ");
        let mut a = cfg_of(&src);
        let ra = run(&mut a, Scheduler::Fifo, 1000).unwrap();
        assert_eq!(ra.stopped, StopReason::Quiescent);
        for seed in [1u64, 7, 42] {
            let mut b = cfg_of(&src);
            let rb = run(&mut b, Scheduler::Random(seed), 1000).unwrap();
            assert_eq!(rb.stopped, StopReason::Quiescent);
            assert_eq!(a.canonical_key(), b.canonical_key());
        }
    }

    #[test]
    fn explore_counts_diamond() {
        // Two independent producers: interleavings commute, so exploration
        // closes the diamond instead of forking.
        let src = format!(
            "{LATTICE}
            proc One () @ guest :: c : 1 [guest] = close c
            proc Main () @ guest :: x : 1 [guest] =
                c : 1 [guest] <- One @ guest <- ();
                d : 1 [guest] <- One @ guest <- ();
                wait c; wait d; close x
            exec Main
        ");
        let res = explore(&cfg_of(&src), 20).unwrap();
        assert!(!res.truncated);
        assert_eq!(res.quiescent.len(), 1);
        assert!(res.stuck_not_poised.is_empty());
        // Frozen state count for this program under the canonical engine.
        assert_eq!(res.states, 11);
    }

    #[test]
    fn poisedness_on_free_inputs() {
        // A single process waiting on a channel nobody provides is poised.
        let sig = parse_program(&format!(
            "{LATTICE}
            proc Use (y : 1 [guest]) @ guest :: x : 1 [guest] = wait y; close x
        "))
        .unwrap();
        let mut cfg = Configuration::empty(&sig).unwrap();
        let y = Chan::new("y", 0);
        cfg.types.insert(
            y.clone(),
            ChanInfo {
                ty: SessionType::One,
                sec: "guest".into(),
            },
        );
        cfg.add_instance("Use", Chan::new("x", 0), &"guest".into(), &"guest".into(), &[y])
            .unwrap();
        assert!(cfg.enabled().is_empty());
        assert!(cfg.is_poised());
    }
}
