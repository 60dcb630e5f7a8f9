//! Equi-recursive type algebra: unfolding, contractiveness, and coinductive
//! type equality over the regular trees denoted by named definitions.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use thiserror::Error;

use crate::ast::SessionType;

/// Errors raised by the type algebra.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TypesError {
    #[error("unbound type name `{0}`")]
    UnboundName(String),
    #[error("type definitions are not contractive: `{0}` recurs without a constructor")]
    NotContractive(String),
}

/// The table of named type definitions extracted from a signature.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TypeTable {
    defs: BTreeMap<String, SessionType>,
}

impl TypeTable {
    /// Builds a table, checking closedness and contractiveness.
    pub fn new(defs: BTreeMap<String, SessionType>) -> Result<Self, TypesError> {
        let table = TypeTable { defs };
        for body in table.defs.values() {
            table.check_closed(body)?;
        }
        if let Some(offender) = table.alias_cycle() {
            return Err(TypesError::NotContractive(offender));
        }
        Ok(table)
    }

    pub fn from_pairs(defs: &[(String, SessionType)]) -> Result<Self, TypesError> {
        TypeTable::new(defs.iter().cloned().collect())
    }

    fn check_closed(&self, t: &SessionType) -> Result<(), TypesError> {
        match t {
            SessionType::One => Ok(()),
            SessionType::Named(n) => {
                if self.defs.contains_key(n) {
                    Ok(())
                } else {
                    Err(TypesError::UnboundName(n.clone()))
                }
            }
            SessionType::Plus(bs) | SessionType::With(bs) => {
                for b in bs.values() {
                    self.check_closed(b)?;
                }
                Ok(())
            }
            SessionType::Tensor(a, b) | SessionType::Lolli(a, b) => {
                self.check_closed(a)?;
                self.check_closed(b)
            }
        }
    }

    /// Finds a cycle in the alias graph (edges `name = Named(name')` only);
    /// such a cycle recurs without demanding a message exchange.
    fn alias_cycle(&self) -> Option<String> {
        for start in self.defs.keys() {
            let mut seen = BTreeSet::new();
            let mut cur = start.clone();
            loop {
                if !seen.insert(cur.clone()) {
                    return Some(start.clone());
                }
                match self.defs.get(&cur) {
                    Some(SessionType::Named(next)) => cur = next.clone(),
                    _ => break,
                }
            }
        }
        None
    }

    /// One-step unfolding: a Named type is replaced by its definition,
    /// everything else is returned unchanged.
    pub fn unfold(&self, t: &SessionType) -> Result<SessionType, TypesError> {
        match t {
            SessionType::Named(n) => self
                .defs
                .get(n)
                .cloned()
                .ok_or_else(|| TypesError::UnboundName(n.clone())),
            other => Ok(other.clone()),
        }
    }

    /// Unfolds until the head is a constructor. Terminates on contractive
    /// tables (the alias graph is acyclic).
    pub fn unfold_head(&self, t: &SessionType) -> Result<SessionType, TypesError> {
        let mut cur = t.clone();
        while let SessionType::Named(_) = cur {
            cur = self.unfold(&cur)?;
        }
        Ok(cur)
    }

    /// Coinductive equality of regular trees: assumes pairs already under
    /// consideration are equal, unfolds Named heads, and matches
    /// constructors, branch label sets, and components.
    pub fn type_equal(&self, a: &SessionType, b: &SessionType) -> Result<bool, TypesError> {
        let mut assumed = HashSet::new();
        self.equal_rec(a, b, &mut assumed)
    }

    fn equal_rec(
        &self,
        a: &SessionType,
        b: &SessionType,
        assumed: &mut HashSet<(SessionType, SessionType)>,
    ) -> Result<bool, TypesError> {
        let key = (a.clone(), b.clone());
        if !assumed.insert(key) {
            return Ok(true);
        }
        let ha = self.unfold_head(a)?;
        let hb = self.unfold_head(b)?;
        match (&ha, &hb) {
            (SessionType::One, SessionType::One) => Ok(true),
            (SessionType::Plus(ba), SessionType::Plus(bb))
            | (SessionType::With(ba), SessionType::With(bb)) => {
                if ba.len() != bb.len() {
                    return Ok(false);
                }
                for (l, ta) in ba {
                    match bb.get(l) {
                        Some(tb) => {
                            if !self.equal_rec(ta, tb, assumed)? {
                                return Ok(false);
                            }
                        }
                        None => return Ok(false),
                    }
                }
                Ok(true)
            }
            (SessionType::Tensor(pa, ca), SessionType::Tensor(pb, cb))
            | (SessionType::Lolli(pa, ca), SessionType::Lolli(pb, cb)) => {
                Ok(self.equal_rec(pa, pb, assumed)? && self.equal_rec(ca, cb, assumed)?)
            }
            _ => Ok(false),
        }
    }
}

/// Builds the banking type definitions used across the test suite.
#[cfg(test)]
pub(crate) fn banking_typedefs() -> BTreeMap<String, SessionType> {
    use SessionType as S;
    let mut defs = BTreeMap::new();
    defs.insert(
        "customer".into(),
        S::lolli(S::named("pin"), S::lolli(S::named("auth_out"), S::One)),
    );
    defs.insert(
        "pin".into(),
        S::plus(vec![
            ("tok1", S::named("pin")),
            ("tok2", S::named("pin")),
        ]),
    );
    defs.insert(
        "auth_out".into(),
        S::lolli(
            S::named("pin"),
            S::plus(vec![
                (
                    "succ",
                    S::tensor(S::named("account"), S::named("auth_in")),
                ),
                ("fail", S::tensor(S::named("pin"), S::named("auth_out"))),
            ]),
        ),
    );
    defs.insert(
        "auth_in".into(),
        S::lolli(
            S::named("account"),
            S::tensor(S::named("pin"), S::named("auth_out")),
        ),
    );
    defs.insert(
        "ver".into(),
        S::lolli(
            S::named("pin"),
            S::plus(vec![
                ("succ", S::tensor(S::named("pin"), S::named("ver"))),
                ("fail", S::tensor(S::named("pin"), S::named("ver"))),
            ]),
        ),
    );
    defs.insert(
        "account".into(),
        S::plus(vec![
            ("high", S::named("account")),
            ("med", S::named("account")),
            ("low", S::named("account")),
        ]),
    );
    defs.insert(
        "attacker".into(),
        S::with(vec![
            ("s", S::named("attacker")),
            ("f", S::named("attacker")),
        ]),
    );
    defs
}
