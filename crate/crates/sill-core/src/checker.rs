//! The information-flow session type checker: flow-sensitive process typing
//! with a running secrecy, secrecy-polymorphic spawn instantiation, and
//! whole-signature checking.
//!
//! A judgment `Ψ; Δ ⊢ P @d₁ :: x:A[c]` types process `P` offering channel
//! `x` of type `A` at maximal secrecy `c`, using the channels in `Δ`, with
//! running secrecy `d₁`. Receiving raises the running secrecy to the join of
//! the carrier's secrecy; sending along a channel of secrecy `c` demands
//! `d₁ ⊑ c` when the send is observable to lower-secrecy parties (external
//! choice and channel output on a context channel); forwarding and spawning
//! are similarly guarded.

use std::collections::BTreeMap;
use std::fmt;

use crate::ast::{CRef, Pos, ProcDef, ProcKind, ProcTerm, SessionType, Signature};
use crate::lattice::{ExtendedLattice, SecTerm, Substitution};
use crate::runtime::{Configuration, MsgNode, Node, NodeId};
use crate::types::{TypeTable, TypesError};

/// A typing error with its source position, a diagnostic kind, and the
/// violated entailment when the error is a secrecy-constraint failure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeError {
    pub pos: Pos,
    pub kind: &'static str,
    pub message: String,
    pub constraint: Option<(SecTerm, SecTerm)>,
}

impl fmt::Display for TypeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}: {}", self.pos, self.kind, self.message)?;
        if let Some((a, b)) = &self.constraint {
            write!(f, " (constraint: {a} <= {b})")?;
        }
        Ok(())
    }
}

impl std::error::Error for TypeError {}

impl TypeError {
    fn new(pos: Pos, kind: &'static str, message: impl Into<String>) -> Self {
        TypeError {
            pos,
            kind,
            message: message.into(),
            constraint: None,
        }
    }

    fn internal(pos: Pos, err: impl fmt::Display) -> Self {
        TypeError::new(pos, "internal", err.to_string())
    }
}

/// The linear typing context: channels in use mapped to their session type
/// and maximal secrecy.
pub type TypingCtx = BTreeMap<CRef, (SessionType, SecTerm)>;

/// Shared state for checking one process body.
pub struct Checker<'a> {
    pub psi: &'a ExtendedLattice,
    pub table: &'a TypeTable,
    pub sig: &'a Signature,
}

impl<'a> Checker<'a> {
    pub fn new(psi: &'a ExtendedLattice, table: &'a TypeTable, sig: &'a Signature) -> Self {
        Checker { psi, table, sig }
    }

    fn guard(
        &self,
        pos: Pos,
        a: &SecTerm,
        b: &SecTerm,
        kind: &'static str,
        msg: impl Into<String>,
    ) -> Result<(), TypeError> {
        let holds = self
            .psi
            .entails(a, b)
            .map_err(|e| TypeError::internal(pos, e))?;
        if holds {
            Ok(())
        } else {
            Err(TypeError {
                pos,
                kind,
                message: msg.into(),
                constraint: Some((a.clone(), b.clone())),
            })
        }
    }

    fn sec_eq(
        &self,
        pos: Pos,
        a: &SecTerm,
        b: &SecTerm,
        kind: &'static str,
        msg: impl Into<String>,
    ) -> Result<(), TypeError> {
        let holds = self
            .psi
            .entails_eq(a, b)
            .map_err(|e| TypeError::internal(pos, e))?;
        if holds {
            Ok(())
        } else {
            Err(TypeError {
                pos,
                kind,
                message: msg.into(),
                constraint: Some((a.clone(), b.clone())),
            })
        }
    }

    fn type_eq(
        &self,
        pos: Pos,
        a: &SessionType,
        b: &SessionType,
        msg: impl Into<String>,
    ) -> Result<(), TypeError> {
        let eq = self
            .table
            .type_equal(a, b)
            .map_err(|e| TypeError::internal(pos, e))?;
        if eq {
            Ok(())
        } else {
            Err(TypeError::new(pos, "type-mismatch", msg.into()))
        }
    }

    fn head(&self, pos: Pos, t: &SessionType) -> Result<SessionType, TypeError> {
        self.table
            .unfold_head(t)
            .map_err(|e: TypesError| TypeError::internal(pos, e))
    }

    fn take(
        &self,
        ctx: &mut TypingCtx,
        c: &CRef,
        pos: Pos,
    ) -> Result<(SessionType, SecTerm), TypeError> {
        ctx.remove(c).ok_or_else(|| {
            TypeError::new(
                pos,
                "unbound-channel",
                format!("channel `{c}` is not available in the context"),
            )
        })
    }

    /// Checks `Ψ; ctx ⊢ p @running :: offer:offer_ty[offer_sec]`.
    pub fn check_term(
        &self,
        mut ctx: TypingCtx,
        running: SecTerm,
        offer: &CRef,
        offer_ty: &SessionType,
        offer_sec: &SecTerm,
        p: &ProcTerm,
    ) -> Result<(), TypeError> {
        let pos = p.pos;
        match &p.kind {
            ProcKind::Close(x) => {
                if x != offer {
                    return Err(TypeError::new(
                        pos,
                        "bad-subject",
                        format!("close on `{x}`, but the offered channel is `{offer}`"),
                    ));
                }
                match self.head(pos, offer_ty)? {
                    SessionType::One => {}
                    other => {
                        return Err(TypeError::new(
                            pos,
                            "type-mismatch",
                            format!("close requires offer type 1, found {other:?}"),
                        ))
                    }
                }
                if let Some((leftover, _)) = ctx.iter().next() {
                    return Err(TypeError::new(
                        pos,
                        "linearity",
                        format!("close leaves channel `{leftover}` unconsumed"),
                    ));
                }
                Ok(())
            }
            ProcKind::Wait(x, q) => {
                let (ty, c) = self.take(&mut ctx, x, pos)?;
                match self.head(pos, &ty)? {
                    SessionType::One => {}
                    other => {
                        return Err(TypeError::new(
                            pos,
                            "type-mismatch",
                            format!("wait requires channel type 1, found {other:?}"),
                        ))
                    }
                }
                let raised = SecTerm::join(c, running);
                self.check_term(ctx, raised, offer, offer_ty, offer_sec, q)
            }
            ProcKind::Select(x, k, q) => {
                if x == offer {
                    // Internal choice on the offered channel: no guard.
                    let branches = match self.head(pos, offer_ty)? {
                        SessionType::Plus(bs) => bs,
                        other => {
                            return Err(TypeError::new(
                                pos,
                                "type-mismatch",
                                format!(
                                    "select on the offered channel requires an internal \
                                     choice type, found {other:?}"
                                ),
                            ))
                        }
                    };
                    let cont_ty = branches.get(k).ok_or_else(|| {
                        TypeError::new(
                            pos,
                            "unknown-label",
                            format!("label `{k}` is not offered by the choice"),
                        )
                    })?;
                    self.check_term(ctx, running, offer, cont_ty, offer_sec, q)
                } else {
                    // External choice on a context channel: the send is
                    // observable at the channel's secrecy, so d₁ ⊑ c.
                    let (ty, c) = self.take(&mut ctx, x, pos)?;
                    let branches = match self.head(pos, &ty)? {
                        SessionType::With(bs) => bs,
                        other => {
                            return Err(TypeError::new(
                                pos,
                                "type-mismatch",
                                format!(
                                    "select on a context channel requires an external \
                                     choice type, found {other:?}"
                                ),
                            ))
                        }
                    };
                    let cont_ty = branches.get(k).cloned().ok_or_else(|| {
                        TypeError::new(
                            pos,
                            "unknown-label",
                            format!("label `{k}` is not offered by the choice"),
                        )
                    })?;
                    self.guard(
                        pos,
                        &running,
                        &c,
                        "secrecy-violation",
                        format!("selecting on `{x}` leaks the running secrecy"),
                    )?;
                    ctx.insert(x.clone(), (cont_ty, c));
                    self.check_term(ctx, running, offer, offer_ty, offer_sec, q)
                }
            }
            ProcKind::Case(x, branches) => {
                if x == offer {
                    // External choice on the offered channel: receiving sets
                    // the running secrecy to the offer's secrecy.
                    let tys = match self.head(pos, offer_ty)? {
                        SessionType::With(bs) => bs,
                        other => {
                            return Err(TypeError::new(
                                pos,
                                "type-mismatch",
                                format!(
                                    "case on the offered channel requires an external \
                                     choice type, found {other:?}"
                                ),
                            ))
                        }
                    };
                    self.check_branches(branches, &tys, pos)?;
                    for (l, q) in branches {
                        self.check_term(
                            ctx.clone(),
                            offer_sec.clone(),
                            offer,
                            &tys[l],
                            offer_sec,
                            q,
                        )?;
                    }
                    Ok(())
                } else {
                    // Internal choice on a context channel: receiving raises
                    // the running secrecy by the channel's secrecy.
                    let (ty, c) = self.take(&mut ctx, x, pos)?;
                    let tys = match self.head(pos, &ty)? {
                        SessionType::Plus(bs) => bs,
                        other => {
                            return Err(TypeError::new(
                                pos,
                                "type-mismatch",
                                format!(
                                    "case on a context channel requires an internal \
                                     choice type, found {other:?}"
                                ),
                            ))
                        }
                    };
                    self.check_branches(branches, &tys, pos)?;
                    let raised = SecTerm::join(c.clone(), running);
                    for (l, q) in branches {
                        let mut ctx2 = ctx.clone();
                        ctx2.insert(x.clone(), (tys[l].clone(), c.clone()));
                        self.check_term(ctx2, raised.clone(), offer, offer_ty, offer_sec, q)?;
                    }
                    Ok(())
                }
            }
            ProcKind::SendChan {
                payload,
                carrier,
                cont,
            } => {
                if carrier == offer {
                    // Channel output on the offered channel: no guard, the
                    // payload's secrecy must match the carrier's.
                    let (pay_a, pay_b) = match self.head(pos, offer_ty)? {
                        SessionType::Tensor(a, b) => (*a, *b),
                        other => {
                            return Err(TypeError::new(
                                pos,
                                "type-mismatch",
                                format!(
                                    "send on the offered channel requires a tensor type, \
                                     found {other:?}"
                                ),
                            ))
                        }
                    };
                    let (pty, psec) = self.take(&mut ctx, payload, pos)?;
                    self.type_eq(
                        pos,
                        &pty,
                        &pay_a,
                        format!("payload `{payload}` has the wrong type"),
                    )?;
                    self.sec_eq(
                        pos,
                        &psec,
                        offer_sec,
                        "secrecy-violation",
                        format!("payload `{payload}` must match the carrier's secrecy"),
                    )?;
                    self.check_term(ctx, running, offer, &pay_b, offer_sec, cont)
                } else {
                    // Channel output on a context channel: guarded send.
                    let (ty, c) = self.take(&mut ctx, carrier, pos)?;
                    let (pay_a, pay_b) = match self.head(pos, &ty)? {
                        SessionType::Lolli(a, b) => (*a, *b),
                        other => {
                            return Err(TypeError::new(
                                pos,
                                "type-mismatch",
                                format!(
                                    "send on a context channel requires a lolli type, \
                                     found {other:?}"
                                ),
                            ))
                        }
                    };
                    self.guard(
                        pos,
                        &running,
                        &c,
                        "secrecy-violation",
                        format!("sending on `{carrier}` leaks the running secrecy"),
                    )?;
                    let (pty, psec) = self.take(&mut ctx, payload, pos)?;
                    self.type_eq(
                        pos,
                        &pty,
                        &pay_a,
                        format!("payload `{payload}` has the wrong type"),
                    )?;
                    self.sec_eq(
                        pos,
                        &psec,
                        &c,
                        "secrecy-violation",
                        format!("payload `{payload}` must match the carrier's secrecy"),
                    )?;
                    ctx.insert(carrier.clone(), (pay_b, c));
                    self.check_term(ctx, running, offer, offer_ty, offer_sec, cont)
                }
            }
            ProcKind::RecvChan {
                bind,
                carrier,
                cont,
            } => {
                if carrier == offer {
                    // Channel input on the offered channel: the running
                    // secrecy becomes the offer's secrecy.
                    let (pay_a, cont_b) = match self.head(pos, offer_ty)? {
                        SessionType::Lolli(a, b) => (*a, *b),
                        other => {
                            return Err(TypeError::new(
                                pos,
                                "type-mismatch",
                                format!(
                                    "recv on the offered channel requires a lolli type, \
                                     found {other:?}"
                                ),
                            ))
                        }
                    };
                    ctx.insert(CRef::Var(bind.clone()), (pay_a, offer_sec.clone()));
                    self.check_term(ctx, offer_sec.clone(), offer, &cont_b, offer_sec, cont)
                } else {
                    // Channel input on a context channel: raise by the
                    // carrier's secrecy.
                    let (ty, c) = self.take(&mut ctx, carrier, pos)?;
                    let (pay_a, cont_b) = match self.head(pos, &ty)? {
                        SessionType::Tensor(a, b) => (*a, *b),
                        other => {
                            return Err(TypeError::new(
                                pos,
                                "type-mismatch",
                                format!(
                                    "recv on a context channel requires a tensor type, \
                                     found {other:?}"
                                ),
                            ))
                        }
                    };
                    ctx.insert(CRef::Var(bind.clone()), (pay_a, c.clone()));
                    ctx.insert(carrier.clone(), (cont_b, c.clone()));
                    let raised = SecTerm::join(c, running);
                    self.check_term(ctx, raised, offer, offer_ty, offer_sec, cont)
                }
            }
            ProcKind::Fwd { offer: y, from } => {
                if y != offer {
                    return Err(TypeError::new(
                        pos,
                        "bad-subject",
                        format!("fwd offers `{y}`, but the offered channel is `{offer}`"),
                    ));
                }
                let (ty, c) = self.take(&mut ctx, from, pos)?;
                if let Some((leftover, _)) = ctx.iter().next() {
                    return Err(TypeError::new(
                        pos,
                        "linearity",
                        format!("fwd leaves channel `{leftover}` unconsumed"),
                    ));
                }
                self.type_eq(
                    pos,
                    &ty,
                    offer_ty,
                    format!("fwd requires `{from}` and `{offer}` to have equal types"),
                )?;
                self.sec_eq(
                    pos,
                    &c,
                    offer_sec,
                    "secrecy-violation",
                    format!("fwd requires `{from}` and `{offer}` to have equal secrecy"),
                )?;
                self.guard(
                    pos,
                    &running,
                    offer_sec,
                    "secrecy-violation",
                    "fwd requires the running secrecy below the channel secrecy",
                )
            }
            ProcKind::Spawn {
                newchan,
                decl_type,
                decl_max,
                decl_run,
                proc_name,
                args,
                cont,
            } => {
                let callee = self.sig.procdef(proc_name).ok_or_else(|| {
                    TypeError::new(
                        pos,
                        "unbound-process",
                        format!("process `{proc_name}` is not defined"),
                    )
                })?;
                if callee.ctx.len() != args.len() {
                    return Err(TypeError::new(
                        pos,
                        "arity",
                        format!(
                            "`{proc_name}` takes {} argument channels, {} given",
                            callee.ctx.len(),
                            args.len()
                        ),
                    ));
                }
                let mut actual_secs = Vec::new();
                let mut actual_tys = Vec::new();
                for a in args {
                    let (ty, c) = self.take(&mut ctx, a, pos)?;
                    actual_tys.push(ty);
                    actual_secs.push(c);
                }
                for (i, (entry, aty)) in callee.ctx.iter().zip(&actual_tys).enumerate() {
                    self.type_eq(
                        pos,
                        aty,
                        &entry.ty,
                        format!(
                            "argument {} (`{}`) has the wrong type for `{proc_name}`",
                            i + 1,
                            args[i]
                        ),
                    )?;
                }
                self.type_eq(
                    pos,
                    decl_type,
                    &callee.offer_type,
                    format!("declared type of `{newchan}` differs from what `{proc_name}` offers"),
                )?;
                let subst = self.infer_spawn_subst(
                    pos, callee, &actual_secs, decl_max, decl_run,
                )?;
                // Instantiated callee constraints must be entailed here.
                for (a, b) in &callee.psi.constraints {
                    self.guard(
                        pos,
                        &subst.apply(a),
                        &subst.apply(b),
                        "secrecy-violation",
                        format!("constraint of `{proc_name}` is not satisfied at this spawn"),
                    )?;
                }
                // The caller's running secrecy flows into the callee.
                self.guard(
                    pos,
                    &running,
                    decl_run,
                    "secrecy-violation",
                    format!("spawning `{proc_name}` leaks the running secrecy"),
                )?;
                // The fresh channel cannot exceed the caller's offered secrecy.
                self.guard(
                    pos,
                    decl_max,
                    offer_sec,
                    "secrecy-violation",
                    format!("`{newchan}` exceeds the secrecy of the offered channel"),
                )?;
                match cont {
                    Some(q) => {
                        ctx.insert(
                            CRef::Var(newchan.clone()),
                            (decl_type.clone(), decl_max.clone()),
                        );
                        self.check_term(ctx, running, offer, offer_ty, offer_sec, q)
                    }
                    None => {
                        // Tail call: the implicit forward of the offered
                        // channel from the fresh channel.
                        let fwd = ProcTerm::new(
                            pos,
                            ProcKind::Fwd {
                                offer: offer.clone(),
                                from: CRef::Var(newchan.clone()),
                            },
                        );
                        ctx.insert(
                            CRef::Var(newchan.clone()),
                            (decl_type.clone(), decl_max.clone()),
                        );
                        self.check_term(ctx, running, offer, offer_ty, offer_sec, &fwd)
                    }
                }
            }
        }
    }

    fn check_branches(
        &self,
        branches: &[(String, ProcTerm)],
        tys: &BTreeMap<String, SessionType>,
        pos: Pos,
    ) -> Result<(), TypeError> {
        for (l, _) in branches {
            if !tys.contains_key(l) {
                return Err(TypeError::new(
                    pos,
                    "unknown-label",
                    format!("branch label `{l}` is not part of the choice"),
                ));
            }
        }
        for l in tys.keys() {
            if !branches.iter().any(|(b, _)| b == l) {
                return Err(TypeError::new(
                    pos,
                    "missing-branch",
                    format!("case is missing a branch for label `{l}`"),
                ));
            }
        }
        Ok(())
    }

    /// Infers the secrecy substitution γ̂ instantiating a callee's variables
    /// from the actuals at a spawn site: callee-side atomic variable
    /// annotations bind directly; every annotation is then checked equal to
    /// its actual under γ̂.
    pub fn infer_spawn_subst(
        &self,
        pos: Pos,
        callee: &ProcDef,
        actual_param_secs: &[SecTerm],
        actual_offer_sec: &SecTerm,
        actual_run: &SecTerm,
    ) -> Result<Substitution, TypeError> {
        let mut positions: Vec<(&SecTerm, &SecTerm)> = Vec::new();
        for (entry, actual) in callee.ctx.iter().zip(actual_param_secs) {
            positions.push((&entry.sec, actual));
        }
        positions.push((&callee.offer_sec, actual_offer_sec));
        positions.push((&callee.running, actual_run));
        let mut subst = Substitution::identity();
        for (anno, actual) in &positions {
            if let SecTerm::Var(v) = anno {
                if callee.psi.vars.contains(v) {
                    match subst.map.get(v) {
                        None => subst.bind(v, (*actual).clone()),
                        Some(existing) => {
                            let same = self
                                .psi
                                .entails_eq(existing, actual)
                                .map_err(|e| TypeError::internal(pos, e))?;
                            if !same {
                                return Err(TypeError::new(
                                    pos,
                                    "spawn-instantiation",
                                    format!(
                                        "variable `{v}` of `{}` is instantiated with \
                                         conflicting secrecies `{existing}` and `{actual}`",
                                        callee.name
                                    ),
                                ));
                            }
                        }
                    }
                }
            }
        }
        for v in &callee.psi.vars {
            if !subst.map.contains_key(v) {
                return Err(TypeError::new(
                    pos,
                    "spawn-instantiation",
                    format!(
                        "cannot infer an instantiation for variable `{v}` of `{}`",
                        callee.name
                    ),
                ));
            }
        }
        for (anno, actual) in &positions {
            self.sec_eq(
                pos,
                &subst.apply(anno),
                actual,
                "spawn-instantiation",
                format!(
                    "annotation `{anno}` of `{}` does not match the actual `{actual}`",
                    callee.name
                ),
            )?;
        }
        Ok(subst)
    }
}

/// Checks one process definition against its declared interface.
pub fn check_def(sig: &Signature, table: &TypeTable, def: &ProcDef) -> Result<(), TypeError> {
    let agrees = def
        .psi
        .concrete_agrees()
        .map_err(|e| TypeError::internal(def.pos, e))?;
    if !agrees {
        return Err(TypeError::new(
            def.pos,
            "lattice-violation",
            format!(
                "constraints of `{}` strengthen the concrete security order",
                def.name
            ),
        ));
    }
    let checker = Checker::new(&def.psi, table, sig);
    checker.guard(
        def.pos,
        &def.running,
        &def.offer_sec,
        "secrecy-violation",
        format!(
            "running secrecy of `{}` must be below the offered channel's secrecy",
            def.name
        ),
    )?;
    for entry in &def.ctx {
        checker.guard(
            def.pos,
            &entry.sec,
            &def.offer_sec,
            "secrecy-violation",
            format!(
                "secrecy of parameter `{}` of `{}` must be below the offered \
                 channel's secrecy",
                entry.var, def.name
            ),
        )?;
    }
    let ctx: TypingCtx = def
        .ctx
        .iter()
        .map(|e| (CRef::Var(e.var.clone()), (e.ty.clone(), e.sec.clone())))
        .collect();
    checker.check_term(
        ctx,
        def.running.clone(),
        &CRef::Var(def.offer_var.clone()),
        &def.offer_type,
        &def.offer_sec,
        &def.body,
    )
}

/// Checks a whole signature: builds the type table and checks every process
/// definition. The empty signature is well-typed.
pub fn check_signature(sig: &Signature) -> Result<TypeTable, TypeError> {
    let table = TypeTable::from_pairs(&sig.typedefs)
        .map_err(|e| TypeError::internal(Pos::default(), e))?;
    for def in &sig.procdefs {
        check_def(sig, &table, def)?;
    }
    Ok(table)
}

/// Checks a runtime configuration against its channel typing: the node
/// forest is well-wired, every process node re-typechecks at its recorded
/// running secrecy, and every message node has one of the five message
/// shapes at the right protocol state.
///
/// A process or message node providing `x:A[d]` must satisfy `d₁ ⊑ d` for
/// its running secrecy `d₁` and `d' ⊑ d` for every used channel of secrecy
/// `d'`; a message's running secrecy is its channel's secrecy, so only the
/// usage condition is checked for messages.
pub fn check_config(cfg: &Configuration) -> Result<(), TypeError> {
    let pos = Pos::default();
    let psi0 = ExtendedLattice::concrete_only(cfg.lattice.clone());
    let checker = Checker::new(&psi0, &cfg.table, &cfg.sig);

    let mut providers: BTreeMap<&crate::ast::Chan, NodeId> = BTreeMap::new();
    let mut users: BTreeMap<crate::ast::Chan, NodeId> = BTreeMap::new();
    for (id, node) in &cfg.nodes {
        if providers.insert(node.provides(), *id).is_some() {
            return Err(TypeError::new(
                pos,
                "config-violation",
                format!("channel `{}` has two providers", node.provides()),
            ));
        }
        for u in node.uses() {
            if users.insert(u.clone(), *id).is_some() {
                return Err(TypeError::new(
                    pos,
                    "config-violation",
                    format!("channel `{u}` has two users"),
                ));
            }
        }
    }

    for (id, node) in &cfg.nodes {
        for c in std::iter::once(node.provides().clone()).chain(node.uses()) {
            if !cfg.types.contains_key(&c) {
                return Err(TypeError::new(
                    pos,
                    "config-violation",
                    format!("node {id} mentions channel `{c}` with no type entry"),
                ));
            }
        }
    }

    // Acyclicity: following user-to-provider edges must terminate.
    for start in cfg.nodes.keys() {
        let mut seen = std::collections::BTreeSet::new();
        let mut stack = vec![*start];
        while let Some(id) = stack.pop() {
            if !seen.insert(id) {
                if id == *start {
                    return Err(TypeError::new(
                        pos,
                        "config-violation",
                        format!("node {start} lies on a channel cycle"),
                    ));
                }
                continue;
            }
            for u in cfg.nodes[&id].uses() {
                if let Some(p) = providers.get(&u) {
                    stack.push(*p);
                }
            }
        }
    }

    let info = |c: &crate::ast::Chan| -> Result<&crate::runtime::ChanInfo, TypeError> {
        cfg.types.get(c).ok_or_else(|| {
            TypeError::new(
                pos,
                "config-violation",
                format!("channel `{c}` has no type entry"),
            )
        })
    };

    for (id, node) in &cfg.nodes {
        let provided = node.provides().clone();
        let pinfo = info(&provided)?;
        let offer_sec = SecTerm::Lit(pinfo.sec.clone());
        for u in node.uses() {
            let uinfo = info(&u)?;
            checker.guard(
                pos,
                &SecTerm::Lit(uinfo.sec.clone()),
                &offer_sec,
                "secrecy-violation",
                format!("node {id} uses `{u}` above the secrecy of `{provided}`"),
            )?;
        }
        match node {
            Node::Proc(p) => {
                checker.guard(
                    pos,
                    &SecTerm::Lit(p.run.clone()),
                    &offer_sec,
                    "secrecy-violation",
                    format!("node {id} runs above the secrecy of `{provided}`"),
                )?;
                let mut ctx = TypingCtx::new();
                for u in node.uses() {
                    let uinfo = info(&u)?;
                    ctx.insert(
                        CRef::Chan(u.clone()),
                        (uinfo.ty.clone(), SecTerm::Lit(uinfo.sec.clone())),
                    );
                }
                checker.check_term(
                    ctx,
                    SecTerm::Lit(p.run.clone()),
                    &CRef::Chan(provided.clone()),
                    &pinfo.ty,
                    &offer_sec,
                    &p.term,
                )?;
            }
            Node::Msg(m) => check_msg(&checker, &cfg.types, m)?,
        }
    }
    Ok(())
}

fn check_msg(
    checker: &Checker<'_>,
    types: &BTreeMap<crate::ast::Chan, crate::runtime::ChanInfo>,
    m: &MsgNode,
) -> Result<(), TypeError> {
    let pos = Pos::default();
    let info = |c: &crate::ast::Chan| -> Result<&crate::runtime::ChanInfo, TypeError> {
        types.get(c).ok_or_else(|| {
            TypeError::new(
                pos,
                "config-violation",
                format!("message channel `{c}` has no type entry"),
            )
        })
    };
    let sec_same = |a: &crate::runtime::ChanInfo,
                    b: &crate::runtime::ChanInfo,
                    what: &str|
     -> Result<(), TypeError> {
        if a.sec == b.sec {
            Ok(())
        } else {
            Err(TypeError {
                pos,
                kind: "secrecy-violation",
                message: format!("message {what} changes channel secrecy"),
                constraint: Some((SecTerm::Lit(a.sec.clone()), SecTerm::Lit(b.sec.clone()))),
            })
        }
    };
    match m {
        MsgNode::Close { provided } => {
            let i = info(provided)?;
            match checker.head(pos, &i.ty)? {
                SessionType::One => Ok(()),
                other => Err(TypeError::new(
                    pos,
                    "type-mismatch",
                    format!("close message on `{provided}` of type {other:?}"),
                )),
            }
        }
        MsgNode::SelPos {
            provided,
            cont,
            label,
        } => {
            let i = info(provided)?;
            let c = info(cont)?;
            sec_same(i, c, "label")?;
            match checker.head(pos, &i.ty)? {
                SessionType::Plus(bs) => {
                    let t = bs.get(label).ok_or_else(|| {
                        TypeError::new(
                            pos,
                            "unknown-label",
                            format!("label `{label}` not offered by `{provided}`"),
                        )
                    })?;
                    checker.type_eq(pos, t, &c.ty, "label continuation type mismatch")
                }
                other => Err(TypeError::new(
                    pos,
                    "type-mismatch",
                    format!("internal-choice message on `{provided}` of type {other:?}"),
                )),
            }
        }
        MsgNode::SelNeg {
            carrier,
            provided,
            label,
        } => {
            let i = info(carrier)?;
            let c = info(provided)?;
            sec_same(i, c, "label")?;
            match checker.head(pos, &i.ty)? {
                SessionType::With(bs) => {
                    let t = bs.get(label).ok_or_else(|| {
                        TypeError::new(
                            pos,
                            "unknown-label",
                            format!("label `{label}` not accepted by `{carrier}`"),
                        )
                    })?;
                    checker.type_eq(pos, t, &c.ty, "label continuation type mismatch")
                }
                other => Err(TypeError::new(
                    pos,
                    "type-mismatch",
                    format!("external-choice message on `{carrier}` of type {other:?}"),
                )),
            }
        }
        MsgNode::SendPos {
            provided,
            cont,
            payload,
        } => {
            let i = info(provided)?;
            let c = info(cont)?;
            let w = info(payload)?;
            sec_same(i, c, "channel-output")?;
            sec_same(i, w, "channel-output payload")?;
            match checker.head(pos, &i.ty)? {
                SessionType::Tensor(a, b) => {
                    checker.type_eq(pos, &a, &w.ty, "payload type mismatch")?;
                    checker.type_eq(pos, &b, &c.ty, "continuation type mismatch")
                }
                other => Err(TypeError::new(
                    pos,
                    "type-mismatch",
                    format!("channel-output message on `{provided}` of type {other:?}"),
                )),
            }
        }
        MsgNode::SendNeg {
            carrier,
            provided,
            payload,
        } => {
            let i = info(carrier)?;
            let c = info(provided)?;
            let w = info(payload)?;
            sec_same(i, c, "channel-input")?;
            sec_same(i, w, "channel-input payload")?;
            match checker.head(pos, &i.ty)? {
                SessionType::Lolli(a, b) => {
                    checker.type_eq(pos, &a, &w.ty, "payload type mismatch")?;
                    checker.type_eq(pos, &b, &c.ty, "continuation type mismatch")
                }
                other => Err(TypeError::new(
                    pos,
                    "type-mismatch",
                    format!("channel-input message on `{carrier}` of type {other:?}"),
                )),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::parse_program;

    fn accept(src: &str) {
        let sig = parse_program(src).unwrap_or_else(|e| panic!("parse failed: {e}"));
        check_signature(&sig).unwrap_or_else(|e| panic!("expected accept, got: {e}"));
    }

    fn reject(src: &str) -> TypeError {
        let sig = parse_program(src).unwrap_or_else(|e| panic!("parse failed: {e}"));
        check_signature(&sig).expect_err("expected a typing error")
    }

    const LATTICE: &str = "
        level guest; level alice; level bob; level bank;
        order guest <= alice; order guest <= bob;
        order alice <= bank; order bob <= bank;
    ";

    #[test]
    fn empty_signature_is_well_typed() {
        accept("");
    }

    #[test]
    fn close_and_wait() {
        accept(&format!(
            "{LATTICE}
            proc Done () @ guest :: x : 1 [guest] = close x
            proc Use (y : 1 [guest]) @ guest :: x : 1 [alice] = wait y; close x
        "));
    }

    #[test]
    fn wait_raises_running_secrecy() {
        // After waiting on an alice channel the running secrecy is alice, so
        // a later guarded send on a guest channel must be rejected.
        let err = reject(&format!(
            "{LATTICE}
            type sink = &{{go: sink}};
            proc P (y : 1 [alice], s : sink [guest]) @ guest :: x : sink [bank] =
                wait y; s.go; fwd x s
        "));
        assert_eq!(err.kind, "secrecy-violation");
        assert_eq!(
            err.constraint,
            Some((
                SecTerm::join(SecTerm::lit("alice"), SecTerm::lit("guest")),
                SecTerm::lit("guest")
            ))
        );
    }

    #[test]
    fn select_on_offer_needs_no_guard() {
        accept(&format!(
            "{LATTICE}
            type bits = +{{b0: bits, b1: bits}};
            proc Emit (y : 1 [alice]) @ guest :: t : bits [alice] =
                wait y; t.b0; t2 : bits [alice] <- Emit2 @ alice <- ()
            proc Emit2 () @ alice :: t : bits [alice] =
                t.b1; t2 : bits [alice] <- Emit2 @ alice <- ()
        "));
    }

    #[test]
    fn case_on_context_raises() {
        // Receiving a label on an alice channel raises the running secrecy;
        // selecting afterwards on a guest external choice is rejected.
        let err = reject(&format!(
            "{LATTICE}
            type bits = +{{b0: bits, b1: bits}};
            type sink = &{{go: sink}};
            proc P (t : bits [alice], s : sink [guest]) @ guest :: x : 1 [bank] =
                case t (b0 => s.go; q : 1 [bank] <- P @ guest <- (t, s)
                      | b1 => s.go; q : 1 [bank] <- P @ guest <- (t, s))
        "));
        assert_eq!(err.kind, "secrecy-violation");
    }

    #[test]
    fn payload_secrecy_must_match_carrier() {
        let err = reject(&format!(
            "{LATTICE}
            proc P (w : 1 [guest]) @ guest :: x : 1 * 1 [alice] =
                send w x; close x
        "));
        assert_eq!(err.kind, "secrecy-violation");
        assert_eq!(
            err.constraint,
            Some((SecTerm::lit("guest"), SecTerm::lit("alice")))
        );
    }

    #[test]
    fn recv_on_offer_sets_running() {
        // After receiving on the alice offer, running is alice; spawning a
        // guest-running process is rejected.
        let err = reject(&format!(
            "{LATTICE}
            proc Low () @ guest :: z : 1 [guest] = close z
            proc P () @ guest :: x : 1 -o 1 [alice] =
                w <- recv x;
                z : 1 [guest] <- Low @ guest <- ();
                wait z; wait w; close x
        "));
        assert_eq!(err.kind, "secrecy-violation");
        assert_eq!(
            err.constraint,
            Some((SecTerm::lit("alice"), SecTerm::lit("guest")))
        );
    }

    #[test]
    fn fwd_requires_equal_secrecy() {
        let err = reject(&format!(
            "{LATTICE}
            proc P (y : 1 [guest]) @ guest :: x : 1 [alice] = fwd x y
        "));
        assert_eq!(err.kind, "secrecy-violation");
        accept(&format!(
            "{LATTICE}
            proc P (y : 1 [alice]) @ guest :: x : 1 [alice] = fwd x y
        "));
    }

    #[test]
    fn spawn_infers_polymorphic_instantiation() {
        accept(&format!(
            "{LATTICE}
            proc Id [psi' <= psi] (y : 1 [psi]) @ psi' :: x : 1 [psi] = fwd x y
            proc Main (y : 1 [alice]) @ guest :: x : 1 [alice] =
                z : 1 [alice] <- Id @ guest <- (y); fwd x z
        "));
    }

    #[test]
    fn spawn_constraint_violation_is_rejected() {
        // Id demands psi' <= psi; instantiating psi' = bank, psi = alice
        // violates it.
        let err = reject(&format!(
            "{LATTICE}
            proc Id [psi' <= psi] (y : 1 [psi]) @ psi' :: x : 1 [psi] = fwd x y
            proc Main (y : 1 [alice], w : 1 [bank]) @ guest :: x : 1 [bank] =
                wait w;
                z : 1 [alice] <- Id @ bank <- (y); fwd x z
        "));
        assert_eq!(err.kind, "secrecy-violation");
    }

    #[test]
    fn spawn_running_guard() {
        // A bank-running caller cannot spawn a guest-running callee.
        let err = reject(&format!(
            "{LATTICE}
            proc Low () @ guest :: z : 1 [guest] = close z
            proc Main (w : 1 [bank]) @ guest :: x : 1 [bank] =
                wait w;
                z : 1 [guest] <- Low @ guest <- ();
                wait z; close x
        "));
        assert_eq!(err.kind, "secrecy-violation");
        assert_eq!(
            err.constraint,
            Some((
                SecTerm::join(SecTerm::lit("bank"), SecTerm::lit("guest")),
                SecTerm::lit("guest")
            ))
        );
    }

    #[test]
    fn spawned_channel_bounded_by_offer() {
        let err = reject(&format!(
            "{LATTICE}
            proc High () @ guest :: z : 1 [bank] = close z
            proc Main () @ guest :: x : 1 [guest] =
                z : 1 [bank] <- High @ guest <- ();
                wait z; close x
        "));
        assert_eq!(err.kind, "secrecy-violation");
        assert_eq!(
            err.constraint,
            Some((SecTerm::lit("bank"), SecTerm::lit("guest")))
        );
    }

    #[test]
    fn param_secrecy_bounded_by_offer() {
        let err = reject(&format!(
            "{LATTICE}
            proc P (y : 1 [bank]) @ guest :: x : 1 [guest] = wait y; close x
        "));
        assert_eq!(err.kind, "secrecy-violation");
    }

    #[test]
    fn running_bounded_by_offer() {
        let err = reject(&format!(
            "{LATTICE}
            proc P () @ alice :: x : 1 [guest] = close x
        "));
        assert_eq!(err.kind, "secrecy-violation");
    }

    #[test]
    fn constraints_may_not_strengthen_concrete_order() {
        let err = reject(&format!(
            "{LATTICE}
            proc P [bank <= guest] () @ guest :: x : 1 [guest] = close x
        "));
        assert_eq!(err.kind, "lattice-violation");
    }

    #[test]
    fn missing_branch_is_rejected() {
        let err = reject(&format!(
            "{LATTICE}
            type bits = +{{b0: bits, b1: bits}};
            proc P (t : bits [guest]) @ guest :: x : 1 [guest] =
                case t (b0 => q : 1 [guest] <- P @ guest <- (t))
        "));
        assert_eq!(err.kind, "missing-branch");
    }

    #[test]
    fn select_unknown_label_is_rejected() {
        let err = reject(&format!(
            "{LATTICE}
            type bits = +{{b0: bits, b1: bits}};
            proc P () @ guest :: t : bits [guest] =
                t.b7; t2 : bits [guest] <- P @ guest <- ()
        "));
        assert_eq!(err.kind, "unknown-label");
    }

    #[test]
    fn configuration_typing_is_preserved_by_steps() {
        use crate::runtime::{run, Configuration, Scheduler};
        let src = format!(
            "{LATTICE}
            type prot = +{{go: 1 * prot, stop: 1}};
            proc One [psi' <= psi] () @ psi' :: c : 1 [psi] = close c
            proc Srv () @ guest :: p : prot [alice] =
                c : 1 [alice] <- One @ guest <- ();
                p.go; send c p;
                p.stop; close p
            proc Drain [psi' <= alice] (p : prot [alice]) @ psi' :: x : 1 [bank] =
                case p (go => c <- recv p; wait c;
                              x2 : 1 [bank] <- Drain @ alice <- (p)
                      | stop => wait p; close x)
            proc Main () @ guest :: x : 1 [bank] =
                p : prot [alice] <- Srv @ guest <- ();
                x2 : 1 [bank] <- Drain @ guest <- (p)
            exec Main
        ");
        let sig = parse_program(&src).unwrap();
        check_signature(&sig).unwrap();
        let mut cfg = Configuration::from_signature(&sig, "root").unwrap();
        check_config(&cfg).unwrap_or_else(|e| panic!("initial config ill-typed: {e}"));
        loop {
            let redexes = cfg.enabled();
            if redexes.is_empty() {
                break;
            }
            cfg.apply(&redexes[0]).unwrap();
            check_config(&cfg).unwrap_or_else(|e| panic!("step broke typing: {e}"));
        }
        assert!(cfg.is_poised());
        // Quiescent configuration: run was closed.
        let _ = run(&mut cfg, Scheduler::Fifo, 1).unwrap();
    }

    #[test]
    fn config_with_payload_secrecy_mismatch_is_rejected() {
        use crate::ast::Chan;
        use crate::runtime::{ChanInfo, Configuration, MsgNode, Node};
        let sig = parse_program(LATTICE).unwrap();
        let mut cfg = Configuration::empty(&sig).unwrap();
        let y = Chan::new("y", 0);
        let w = Chan::new("w", 0);
        cfg.types.insert(
            y.clone(),
            ChanInfo {
                ty: SessionType::tensor(SessionType::One, SessionType::One),
                sec: "guest".into(),
            },
        );
        cfg.types.insert(
            y.bump(),
            ChanInfo {
                ty: SessionType::One,
                sec: "guest".into(),
            },
        );
        cfg.types.insert(
            w.clone(),
            ChanInfo {
                ty: SessionType::One,
                sec: "alice".into(),
            },
        );
        cfg.nodes.insert(
            0,
            Node::Msg(MsgNode::SendPos {
                provided: y.clone(),
                cont: y.bump(),
                payload: w,
            }),
        );
        let err = check_config(&cfg).expect_err("payload above carrier secrecy");
        assert_eq!(err.kind, "secrecy-violation");
    }
}
