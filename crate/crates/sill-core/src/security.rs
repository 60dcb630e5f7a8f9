//! Observer-relative views of configurations: quasi running secrecy,
//! relevance of nodes and channels to an observer level, the projection of
//! a configuration to its relevant part, and equality of projections up to
//! renaming of unobservable channels.
//!
//! The observer sits at a level ξ of the security lattice and sees exactly
//! the channels whose maximal secrecy is at or below ξ. A node is relevant
//! when its quasi running secrecy is observable and it touches a channel
//! the observer can reach from the interface; two configurations look the
//! same to the observer when their relevant parts agree up to a bijective,
//! generation-coherent renaming of the unobservable channels.

use std::collections::{BTreeMap, BTreeSet};

use crate::ast::{CRef, Chan};
use crate::lattice::SecLevel;
use crate::runtime::{Configuration, MsgNode, Node, NodeId, RuntimeError};

/// Computes the quasi running secrecy of every node.
///
/// - A process about to receive along `y[c]` is at `d₁ ⊔ c`, anticipating
///   the raise the receive will perform.
/// - Any other process is at its running secrecy `d₁`.
/// - A negative message along `y[c]` is at `c`.
/// - A positive message along `y[c]` is at the quasi secrecy of its user
///   joined with `c`, or at `c` when nothing uses it yet.
pub fn quasi_secrecy(cfg: &Configuration) -> Result<BTreeMap<NodeId, SecLevel>, RuntimeError> {
    let mut user_of: BTreeMap<&Chan, NodeId> = BTreeMap::new();
    let mut uses_cache: BTreeMap<NodeId, Vec<Chan>> = BTreeMap::new();
    for (id, n) in &cfg.nodes {
        uses_cache.insert(*id, n.uses());
    }
    for (id, us) in &uses_cache {
        for u in us {
            user_of.insert(u, *id);
        }
    }
    let sec = |c: &Chan| -> Result<SecLevel, RuntimeError> {
        cfg.types
            .get(c)
            .map(|i| i.sec.clone())
            .ok_or_else(|| RuntimeError::UnknownChannel(c.clone()))
    };
    let mut out: BTreeMap<NodeId, SecLevel> = BTreeMap::new();
    // Positive messages depend on their user's quasi secrecy; resolve by
    // iterating until stable (the user relation is acyclic).
    let mut pending: Vec<NodeId> = Vec::new();
    for (id, n) in &cfg.nodes {
        match n {
            Node::Proc(p) => {
                let subject = match &p.term.kind {
                    crate::ast::ProcKind::Wait(x, _) | crate::ast::ProcKind::Case(x, _) => {
                        Some(x)
                    }
                    crate::ast::ProcKind::RecvChan { carrier, .. } => Some(carrier),
                    _ => None,
                };
                let q = match subject {
                    Some(CRef::Chan(c)) => cfg.lattice.join(&p.run, &sec(c)?)?,
                    _ => p.run.clone(),
                };
                out.insert(*id, q);
            }
            Node::Msg(m) => match m {
                MsgNode::SelNeg { carrier, .. } | MsgNode::SendNeg { carrier, .. } => {
                    out.insert(*id, sec(carrier)?);
                }
                MsgNode::Close { .. } | MsgNode::SelPos { .. } | MsgNode::SendPos { .. } => {
                    pending.push(*id);
                }
            },
        }
    }
    while !pending.is_empty() {
        let mut next = Vec::new();
        let mut progressed = false;
        for id in pending {
            let n = &cfg.nodes[&id];
            let c = sec(n.provides())?;
            match user_of.get(n.provides()) {
                None => {
                    out.insert(id, c);
                    progressed = true;
                }
                Some(uid) => match out.get(uid) {
                    Some(uq) => {
                        let q = cfg.lattice.join(uq, &c)?;
                        out.insert(id, q);
                        progressed = true;
                    }
                    None => next.push(id),
                },
            }
        }
        if !progressed && !next.is_empty() {
            // A cycle of messages cannot occur in a well-formed forest;
            // fall back to the channel secrecy alone.
            for id in &next {
                let c = sec(cfg.nodes[id].provides())?;
                out.insert(*id, c);
            }
            break;
        }
        pending = next;
    }
    Ok(out)
}

/// The observer-relevant channels and nodes at level `xi`.
///
/// A channel is relevant when its secrecy is at or below `xi` and it is an
/// interface channel or shares an observable node with another relevant
/// channel; a node is relevant when its quasi secrecy is at or below `xi`
/// and it touches a relevant channel. Both sets are the least fixpoint.
pub fn relevant(
    cfg: &Configuration,
    xi: &SecLevel,
) -> Result<(BTreeSet<Chan>, BTreeSet<NodeId>), RuntimeError> {
    let quasi = quasi_secrecy(cfg)?;
    let low_chan = |c: &Chan| -> Result<bool, RuntimeError> {
        match cfg.types.get(c) {
            Some(i) => Ok(cfg.lattice.leq(&i.sec, xi)?),
            None => Ok(false),
        }
    };
    let mut chans: BTreeSet<Chan> = BTreeSet::new();
    for c in &cfg.interface {
        if low_chan(c)? {
            chans.insert(c.clone());
        }
    }
    let mut nodes: BTreeSet<NodeId> = BTreeSet::new();
    loop {
        let mut changed = false;
        for (id, n) in &cfg.nodes {
            if !cfg.lattice.leq(&quasi[id], xi)? {
                continue;
            }
            let touched: Vec<Chan> = std::iter::once(n.provides().clone())
                .chain(n.uses())
                .collect();
            if !touched.iter().any(|c| chans.contains(c)) {
                continue;
            }
            if nodes.insert(*id) {
                changed = true;
            }
            for c in &touched {
                if low_chan(c)? && chans.insert(c.clone()) {
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    Ok((chans, nodes))
}

/// The projection of a configuration to its relevant nodes, sorted by
/// provided channel.
pub fn projection(
    cfg: &Configuration,
    xi: &SecLevel,
) -> Result<Vec<(NodeId, Node)>, RuntimeError> {
    let (_, nodes) = relevant(cfg, xi)?;
    let mut out: Vec<(NodeId, Node)> = nodes
        .iter()
        .map(|id| (*id, cfg.nodes[id].clone()))
        .collect();
    out.sort_by(|a, b| a.1.provides().cmp(b.1.provides()));
    Ok(out)
}

/// All channel occurrences of a node, in a deterministic order, plus a
/// skeleton string with every occurrence replaced by a placeholder.
fn node_shape(n: &Node) -> (String, Vec<Chan>) {
    let occs = std::cell::RefCell::new(Vec::new());
    let shape = match n {
        Node::Proc(p) => {
            occs.borrow_mut().push(p.offer.clone());
            let skel = p.term.map_refs(&|c| match c {
                CRef::Chan(ch) => {
                    occs.borrow_mut().push(ch.clone());
                    CRef::Var("\u{25a1}".to_string())
                }
                other => other.clone(),
            });
            format!("proc@{}:{:?}", p.run, skel)
        }
        Node::Msg(m) => {
            let (tag, cs, label): (&str, Vec<&Chan>, &str) = match m {
                MsgNode::Close { provided } => ("close", vec![provided], ""),
                MsgNode::SelPos {
                    provided,
                    cont,
                    label,
                } => ("sel+", vec![provided, cont], label),
                MsgNode::SelNeg {
                    carrier,
                    provided,
                    label,
                } => ("sel-", vec![carrier, provided], label),
                MsgNode::SendPos {
                    provided,
                    cont,
                    payload,
                } => ("send+", vec![provided, cont, payload], ""),
                MsgNode::SendNeg {
                    carrier,
                    provided,
                    payload,
                } => ("send-", vec![carrier, provided, payload], ""),
            };
            for c in cs {
                occs.borrow_mut().push(c.clone());
            }
            format!("msg:{tag}:{label}")
        }
    };
    (shape, occs.into_inner())
}

/// A partial generation-coherent renaming of unobservable channel bases.
#[derive(Debug, Clone, Default)]
struct BaseMap {
    fwd: BTreeMap<String, (String, i64)>,
    used: BTreeSet<String>,
}

impl BaseMap {
    fn unify(&mut self, a: &Chan, b: &Chan) -> bool {
        match self.fwd.get(&a.base) {
            Some((tb, off)) => {
                tb == &b.base && i64::from(a.gen) + off == i64::from(b.gen)
            }
            None => {
                if self.used.contains(&b.base) {
                    return false;
                }
                let off = i64::from(b.gen) - i64::from(a.gen);
                self.fwd.insert(a.base.clone(), (b.base.clone(), off));
                self.used.insert(b.base.clone());
                true
            }
        }
    }
}

/// Tests whether two configurations are observationally equal at `xi`:
/// their projections agree up to a bijective, generation-coherent renaming
/// of the channels the observer cannot see.
pub fn proj_eq(
    a: &Configuration,
    b: &Configuration,
    xi: &SecLevel,
) -> Result<bool, RuntimeError> {
    let pa = projection(a, xi)?;
    let pb = projection(b, xi)?;
    if pa.len() != pb.len() {
        return Ok(false);
    }
    let low = |cfg: &Configuration, c: &Chan| -> Result<bool, RuntimeError> {
        match cfg.types.get(c) {
            Some(i) => Ok(cfg.lattice.leq(&i.sec, xi)?),
            None => Ok(false),
        }
    };
    let sa: Vec<(String, Vec<Chan>)> = pa.iter().map(|(_, n)| node_shape(n)).collect();
    let sb: Vec<(String, Vec<Chan>)> = pb.iter().map(|(_, n)| node_shape(n)).collect();
    // Backtracking match: pair every node of `a` with a distinct node of
    // `b` of the same skeleton under one consistent renaming.
    fn go(
        i: usize,
        sa: &[(String, Vec<Chan>)],
        sb: &[(String, Vec<Chan>)],
        taken: &mut Vec<bool>,
        map: &BaseMap,
        a: &Configuration,
        b: &Configuration,
        low: &dyn Fn(&Configuration, &Chan) -> Result<bool, RuntimeError>,
    ) -> Result<bool, RuntimeError> {
        if i == sa.len() {
            return Ok(true);
        }
        for j in 0..sb.len() {
            if taken[j] || sa[i].0 != sb[j].0 || sa[i].1.len() != sb[j].1.len() {
                continue;
            }
            let mut m = map.clone();
            let mut ok = true;
            for (ca, cb) in sa[i].1.iter().zip(&sb[j].1) {
                let la = low(a, ca)?;
                let lb = low(b, cb)?;
                if la != lb {
                    ok = false;
                    break;
                }
                if la {
                    if ca != cb {
                        ok = false;
                        break;
                    }
                } else if !m.unify(ca, cb) {
                    ok = false;
                    break;
                }
            }
            if ok {
                taken[j] = true;
                if go(i + 1, sa, sb, taken, &m, a, b, low)? {
                    return Ok(true);
                }
                taken[j] = false;
            }
        }
        Ok(false)
    }
    let mut taken = vec![false; sb.len()];
    go(0, &sa, &sb, &mut taken, &BaseMap::default(), a, b, &low)
}
