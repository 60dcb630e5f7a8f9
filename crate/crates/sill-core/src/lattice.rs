//! Security lattices, extended lattices with secrecy variables, entailment,
//! and order-preserving substitutions.
//!
//! A [`SecurityLattice`] holds the concrete levels and their order; an
//! [`ExtendedLattice`] adds secrecy variables and inequality constraints for
//! polymorphic process definitions. Entailment between [`SecTerm`]s is decided
//! by saturation over the finite universe of subterms mentioned in the query
//! and the constraints.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A concrete security level, identified by name.
pub type SecLevel = String;

/// Errors raised while constructing or querying lattices.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LatticeError {
    #[error("undeclared security level `{0}`")]
    UndeclaredLevel(String),
    #[error("undeclared secrecy variable or level `{0}`")]
    UndeclaredName(String),
    #[error("declared order is not antisymmetric: `{0}` and `{1}` are equivalent but distinct")]
    NotAntisymmetric(String, String),
    #[error("levels `{0}` and `{1}` have no {2}")]
    NoBound(String, String, &'static str),
    #[error("secrecy variable `{0}` clashes with a declared level name")]
    VarLevelClash(String),
    #[error("missing substitution binding for variable `{0}`")]
    MissingBinding(String),
    #[error("empty lattice: at least one level is required")]
    Empty,
}

/// A term over the extended lattice: a concrete level, a secrecy variable, or
/// a join/meet of terms.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SecTerm {
    Lit(SecLevel),
    Var(String),
    Join(Box<SecTerm>, Box<SecTerm>),
    Meet(Box<SecTerm>, Box<SecTerm>),
}

impl SecTerm {
    pub fn lit(name: &str) -> Self {
        SecTerm::Lit(name.to_string())
    }

    pub fn var(name: &str) -> Self {
        SecTerm::Var(name.to_string())
    }

    pub fn join(a: SecTerm, b: SecTerm) -> Self {
        SecTerm::Join(Box::new(a), Box::new(b))
    }

    pub fn meet(a: SecTerm, b: SecTerm) -> Self {
        SecTerm::Meet(Box::new(a), Box::new(b))
    }

    /// Free variables of the term.
    pub fn vars(&self, out: &mut BTreeSet<String>) {
        match self {
            SecTerm::Lit(_) => {}
            SecTerm::Var(v) => {
                out.insert(v.clone());
            }
            SecTerm::Join(a, b) | SecTerm::Meet(a, b) => {
                a.vars(out);
                b.vars(out);
            }
        }
    }

    /// True if the term is a bare variable or a concrete level.
    pub fn is_atomic(&self) -> bool {
        matches!(self, SecTerm::Lit(_) | SecTerm::Var(_))
    }
}

impl fmt::Display for SecTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SecTerm::Lit(l) => write!(f, "{l}"),
            SecTerm::Var(v) => write!(f, "{v}"),
            SecTerm::Join(a, b) => write!(f, "({a} \\/ {b})"),
            SecTerm::Meet(a, b) => write!(f, "({a} /\\ {b})"),
        }
    }
}

/// A concrete security lattice: declared levels plus generating order edges.
///
/// Load-time validation closes the order reflexively and transitively, checks
/// antisymmetry, and checks that every pair of levels has a least upper bound
/// and a greatest lower bound.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecurityLattice {
    levels: Vec<SecLevel>,
    /// Generating edges as declared.
    edges: Vec<(SecLevel, SecLevel)>,
    /// Closed order: leq[(a, b)] holds iff a ⊑ b.
    closed: BTreeSet<(SecLevel, SecLevel)>,
    joins: BTreeMap<(SecLevel, SecLevel), SecLevel>,
    meets: BTreeMap<(SecLevel, SecLevel), SecLevel>,
}

impl SecurityLattice {
    /// Builds and validates a lattice from declared levels and order edges.
    pub fn new(
        levels: Vec<SecLevel>,
        edges: Vec<(SecLevel, SecLevel)>,
    ) -> Result<Self, LatticeError> {
        if levels.is_empty() {
            return Err(LatticeError::Empty);
        }
        let declared: BTreeSet<&SecLevel> = levels.iter().collect();
        for (a, b) in &edges {
            for side in [a, b] {
                if !declared.contains(side) {
                    return Err(LatticeError::UndeclaredLevel(side.clone()));
                }
            }
        }
        let mut closed: BTreeSet<(SecLevel, SecLevel)> = BTreeSet::new();
        for l in &levels {
            closed.insert((l.clone(), l.clone()));
        }
        for (a, b) in &edges {
            closed.insert((a.clone(), b.clone()));
        }
        // Transitive closure by fixpoint; lattices here are small.
        loop {
            let mut added = Vec::new();
            for (a, b) in &closed {
                for (b2, c) in &closed {
                    if b == b2 && !closed.contains(&(a.clone(), c.clone())) {
                        added.push((a.clone(), c.clone()));
                    }
                }
            }
            if added.is_empty() {
                break;
            }
            closed.extend(added);
        }
        for a in &levels {
            for b in &levels {
                if a != b
                    && closed.contains(&(a.clone(), b.clone()))
                    && closed.contains(&(b.clone(), a.clone()))
                {
                    return Err(LatticeError::NotAntisymmetric(a.clone(), b.clone()));
                }
            }
        }
        let mut joins = BTreeMap::new();
        let mut meets = BTreeMap::new();
        for a in &levels {
            for b in &levels {
                let ubs: Vec<&SecLevel> = levels
                    .iter()
                    .filter(|u| {
                        closed.contains(&(a.clone(), (*u).clone()))
                            && closed.contains(&(b.clone(), (*u).clone()))
                    })
                    .collect();
                let lub = ubs
                    .iter()
                    .find(|u| {
                        ubs.iter()
                            .all(|v| closed.contains(&((*u).to_string(), (*v).to_string())))
                    })
                    .copied();
                match lub {
                    Some(u) => {
                        joins.insert((a.clone(), b.clone()), u.clone());
                    }
                    None => {
                        return Err(LatticeError::NoBound(
                            a.clone(),
                            b.clone(),
                            "least upper bound",
                        ))
                    }
                }
                let lbs: Vec<&SecLevel> = levels
                    .iter()
                    .filter(|l| {
                        closed.contains(&((*l).clone(), a.clone()))
                            && closed.contains(&((*l).clone(), b.clone()))
                    })
                    .collect();
                let glb = lbs
                    .iter()
                    .find(|l| {
                        lbs.iter()
                            .all(|v| closed.contains(&((*v).to_string(), (*l).to_string())))
                    })
                    .copied();
                match glb {
                    Some(l) => {
                        meets.insert((a.clone(), b.clone()), l.clone());
                    }
                    None => {
                        return Err(LatticeError::NoBound(
                            a.clone(),
                            b.clone(),
                            "greatest lower bound",
                        ))
                    }
                }
            }
        }
        Ok(SecurityLattice {
            levels,
            edges,
            closed,
            joins,
            meets,
        })
    }

    /// The banking lattice used throughout the examples:
    /// guest ⊑ alice ⊑ bank, guest ⊑ bob ⊑ bank.
    pub fn banking() -> Self {
        SecurityLattice::new(
            vec![
                "guest".into(),
                "alice".into(),
                "bob".into(),
                "bank".into(),
            ],
            vec![
                ("guest".into(), "alice".into()),
                ("guest".into(), "bob".into()),
                ("alice".into(), "bank".into()),
                ("bob".into(), "bank".into()),
            ],
        )
        .expect("banking lattice is a lattice")
    }

    pub fn levels(&self) -> &[SecLevel] {
        &self.levels
    }

    pub fn has_level(&self, name: &str) -> bool {
        self.levels.iter().any(|l| l == name)
    }

    /// True iff (a, b) is in the reflexive-transitive closure of the order.
    pub fn leq(&self, a: &str, b: &str) -> Result<bool, LatticeError> {
        for side in [a, b] {
            if !self.has_level(side) {
                return Err(LatticeError::UndeclaredLevel(side.to_string()));
            }
        }
        Ok(self.closed.contains(&(a.to_string(), b.to_string())))
    }

    /// Least upper bound of two levels.
    pub fn join(&self, a: &str, b: &str) -> Result<SecLevel, LatticeError> {
        self.joins
            .get(&(a.to_string(), b.to_string()))
            .cloned()
            .ok_or_else(|| LatticeError::UndeclaredLevel(format!("{a} or {b}")))
    }

    /// Greatest lower bound of two levels.
    pub fn meet(&self, a: &str, b: &str) -> Result<SecLevel, LatticeError> {
        self.meets
            .get(&(a.to_string(), b.to_string()))
            .cloned()
            .ok_or_else(|| LatticeError::UndeclaredLevel(format!("{a} or {b}")))
    }

    /// Least upper bound of a nonempty list of levels.
    pub fn join_all<'a, I: IntoIterator<Item = &'a SecLevel>>(
        &self,
        levels: I,
    ) -> Result<SecLevel, LatticeError> {
        let mut it = levels.into_iter();
        let first = it.next().ok_or(LatticeError::Empty)?;
        let mut acc = first.clone();
        for l in it {
            acc = self.join(&acc, l)?;
        }
        Ok(acc)
    }
}

/// An extended lattice Ψ: a concrete lattice plus secrecy variables and
/// inequality constraints over terms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtendedLattice {
    pub base: SecurityLattice,
    pub vars: BTreeSet<String>,
    pub constraints: Vec<(SecTerm, SecTerm)>,
}

/// Normal form of a term used during saturation: joins and meets are
/// flattened into sorted, deduplicated operand sets.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Norm {
    Atom(SecTerm),
    Join(Vec<Norm>),
    Meet(Vec<Norm>),
}

fn normalize(t: &SecTerm) -> Norm {
    match t {
        SecTerm::Lit(_) | SecTerm::Var(_) => Norm::Atom(t.clone()),
        SecTerm::Join(a, b) => {
            let mut parts = Vec::new();
            flatten_join(a, &mut parts);
            flatten_join(b, &mut parts);
            parts.sort();
            parts.dedup();
            if parts.len() == 1 {
                parts.pop().unwrap()
            } else {
                Norm::Join(parts)
            }
        }
        SecTerm::Meet(a, b) => {
            let mut parts = Vec::new();
            flatten_meet(a, &mut parts);
            flatten_meet(b, &mut parts);
            parts.sort();
            parts.dedup();
            if parts.len() == 1 {
                parts.pop().unwrap()
            } else {
                Norm::Meet(parts)
            }
        }
    }
}

fn flatten_join(t: &SecTerm, out: &mut Vec<Norm>) {
    match t {
        SecTerm::Join(a, b) => {
            flatten_join(a, out);
            flatten_join(b, out);
        }
        _ => out.push(normalize(t)),
    }
}

fn flatten_meet(t: &SecTerm, out: &mut Vec<Norm>) {
    match t {
        SecTerm::Meet(a, b) => {
            flatten_meet(a, out);
            flatten_meet(b, out);
        }
        _ => out.push(normalize(t)),
    }
}

impl ExtendedLattice {
    /// An extended lattice with no variables and no constraints (just Ψ₀).
    pub fn concrete_only(base: SecurityLattice) -> Self {
        ExtendedLattice {
            base,
            vars: BTreeSet::new(),
            constraints: Vec::new(),
        }
    }

    pub fn new(
        base: SecurityLattice,
        vars: BTreeSet<String>,
        constraints: Vec<(SecTerm, SecTerm)>,
    ) -> Result<Self, LatticeError> {
        for v in &vars {
            if base.has_level(v) {
                return Err(LatticeError::VarLevelClash(v.clone()));
            }
        }
        let psi = ExtendedLattice {
            base,
            vars,
            constraints,
        };
        for (a, b) in &psi.constraints {
            psi.check_wf(a)?;
            psi.check_wf(b)?;
        }
        Ok(psi)
    }

    /// Checks that a term mentions only declared variables and levels.
    pub fn check_wf(&self, t: &SecTerm) -> Result<(), LatticeError> {
        match t {
            SecTerm::Lit(l) => {
                if self.base.has_level(l) {
                    Ok(())
                } else {
                    Err(LatticeError::UndeclaredName(l.clone()))
                }
            }
            SecTerm::Var(v) => {
                if self.vars.contains(v) {
                    Ok(())
                } else {
                    Err(LatticeError::UndeclaredName(v.clone()))
                }
            }
            SecTerm::Join(a, b) | SecTerm::Meet(a, b) => {
                self.check_wf(a)?;
                self.check_wf(b)
            }
        }
    }

    /// Decides Ψ ⊩ lhs ⊑ rhs by saturation.
    ///
    /// The universe is the set of normalized subterms of the query and the
    /// constraints plus all concrete levels. The relation is seeded with the
    /// closed concrete order and the constraints, then closed under
    /// reflexivity, transitivity, and the lattice laws for joins
    /// (each operand is below the join; a join is below any common upper
    /// bound in the universe) and meets (dually).
    pub fn entails(&self, lhs: &SecTerm, rhs: &SecTerm) -> Result<bool, LatticeError> {
        self.check_wf(lhs)?;
        self.check_wf(rhs)?;
        let mut universe: BTreeSet<Norm> = BTreeSet::new();
        let add_subterms = |t: &SecTerm, universe: &mut BTreeSet<Norm>| {
            fn go(t: &SecTerm, universe: &mut BTreeSet<Norm>) {
                universe.insert(normalize(t));
                if let SecTerm::Join(a, b) | SecTerm::Meet(a, b) = t {
                    go(a, universe);
                    go(b, universe);
                }
            }
            go(t, universe);
        };
        add_subterms(lhs, &mut universe);
        add_subterms(rhs, &mut universe);
        for (a, b) in &self.constraints {
            add_subterms(a, &mut universe);
            add_subterms(b, &mut universe);
        }
        for l in self.base.levels() {
            universe.insert(Norm::Atom(SecTerm::Lit(l.clone())));
        }
        let elems: Vec<Norm> = universe.into_iter().collect();
        let index: BTreeMap<&Norm, usize> = elems.iter().zip(0..).collect();
        let n = elems.len();
        let mut rel = vec![false; n * n];
        let set = |rel: &mut Vec<bool>, i: usize, j: usize| {
            rel[i * n + j] = true;
        };
        for i in 0..n {
            set(&mut rel, i, i);
        }
        for (i, a) in elems.iter().enumerate() {
            for (j, b) in elems.iter().enumerate() {
                if let (Norm::Atom(SecTerm::Lit(la)), Norm::Atom(SecTerm::Lit(lb))) = (a, b) {
                    if self.base.leq(la, lb)? {
                        set(&mut rel, i, j);
                    }
                }
            }
        }
        for (a, b) in &self.constraints {
            let i = index[&normalize(a)];
            let j = index[&normalize(b)];
            set(&mut rel, i, j);
        }
        // Operand laws: each operand is below its join, each meet is below
        // its operands (operands of a universe term are in the universe).
        for (i, e) in elems.iter().enumerate() {
            match e {
                Norm::Join(parts) => {
                    for p in parts {
                        set(&mut rel, index[p], i);
                    }
                }
                Norm::Meet(parts) => {
                    for p in parts {
                        set(&mut rel, i, index[p]);
                    }
                }
                Norm::Atom(_) => {}
            }
        }
        // Saturate: transitivity plus the bound laws (a join is below any
        // common upper bound; a meet is above any common lower bound).
        loop {
            let mut changed = false;
            for i in 0..n {
                for j in 0..n {
                    if !rel[i * n + j] {
                        continue;
                    }
                    for k in 0..n {
                        if rel[j * n + k] && !rel[i * n + k] {
                            rel[i * n + k] = true;
                            changed = true;
                        }
                    }
                }
            }
            for (i, e) in elems.iter().enumerate() {
                match e {
                    Norm::Join(parts) => {
                        for j in 0..n {
                            if !rel[i * n + j]
                                && parts.iter().all(|p| rel[index[p] * n + j])
                            {
                                rel[i * n + j] = true;
                                changed = true;
                            }
                        }
                    }
                    Norm::Meet(parts) => {
                        for j in 0..n {
                            if !rel[j * n + i]
                                && parts.iter().all(|p| rel[j * n + index[p]])
                            {
                                rel[j * n + i] = true;
                                changed = true;
                            }
                        }
                    }
                    Norm::Atom(_) => {}
                }
            }
            if !changed {
                break;
            }
        }
        let i = index[&normalize(lhs)];
        let j = index[&normalize(rhs)];
        Ok(rel[i * n + j])
    }

    /// Decides Ψ ⊩ a = b as entailment in both directions.
    pub fn entails_eq(&self, a: &SecTerm, b: &SecTerm) -> Result<bool, LatticeError> {
        Ok(self.entails(a, b)? && self.entails(b, a)?)
    }

    /// True iff the constraints do not strengthen the concrete order:
    /// for all concrete levels c, d, Ψ ⊩ c ⊑ d iff Ψ₀ ⊩ c ⊑ d.
    pub fn concrete_agrees(&self) -> Result<bool, LatticeError> {
        for c in self.base.levels() {
            for d in self.base.levels() {
                let ext = self.entails(&SecTerm::Lit(c.clone()), &SecTerm::Lit(d.clone()))?;
                if ext != self.base.leq(c, d)? {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

/// An order-preserving substitution of secrecy variables by terms.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Substitution {
    pub map: BTreeMap<String, SecTerm>,
}

impl Substitution {
    pub fn identity() -> Self {
        Substitution::default()
    }

    pub fn bind(&mut self, var: &str, term: SecTerm) {
        self.map.insert(var.to_string(), term);
    }

    /// Capture-free simultaneous replacement in a term. Unbound variables
    /// are an error when `total` demands a binding; here unbound variables
    /// are left in place so that identity extensions behave as identities.
    pub fn apply(&self, t: &SecTerm) -> SecTerm {
        match t {
            SecTerm::Lit(_) => t.clone(),
            SecTerm::Var(v) => self.map.get(v).cloned().unwrap_or_else(|| t.clone()),
            SecTerm::Join(a, b) => SecTerm::join(self.apply(a), self.apply(b)),
            SecTerm::Meet(a, b) => SecTerm::meet(self.apply(a), self.apply(b)),
        }
    }

    /// Requires a binding for every free variable of `t`.
    pub fn apply_total(&self, t: &SecTerm) -> Result<SecTerm, LatticeError> {
        let mut vs = BTreeSet::new();
        t.vars(&mut vs);
        for v in &vs {
            if !self.map.contains_key(v) {
                return Err(LatticeError::MissingBinding(v.clone()));
            }
        }
        Ok(self.apply(t))
    }

    /// Maps an extended lattice's constraints pointwise; the result ranges
    /// over the variables remaining free after substitution.
    pub fn apply_lattice(&self, psi: &ExtendedLattice) -> Result<ExtendedLattice, LatticeError> {
        let constraints: Vec<(SecTerm, SecTerm)> = psi
            .constraints
            .iter()
            .map(|(a, b)| (self.apply(a), self.apply(b)))
            .collect();
        let mut vars = BTreeSet::new();
        for (a, b) in &constraints {
            a.vars(&mut vars);
            b.vars(&mut vars);
        }
        ExtendedLattice::new(psi.base.clone(), vars, constraints)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn banking() -> SecurityLattice {
        SecurityLattice::banking()
    }

    #[test]
    fn leq_concrete_banking() {
        let l = banking();
        assert!(l.leq("guest", "alice").unwrap());
        assert!(l.leq("alice", "alice").unwrap());
        assert!(!l.leq("alice", "bob").unwrap());
        assert!(!l.leq("bob", "alice").unwrap());
        assert!(l.leq("guest", "bank").unwrap());
        assert!(!l.leq("bank", "guest").unwrap());
    }

    #[test]
    fn join_meet_banking() {
        let l = banking();
        assert_eq!(l.join("alice", "bob").unwrap(), "bank");
        assert_eq!(l.join("guest", "alice").unwrap(), "alice");
        assert_eq!(l.meet("alice", "bob").unwrap(), "guest");
        assert_eq!(l.meet("bank", "alice").unwrap(), "alice");
        assert_eq!(l.join("guest", "guest").unwrap(), "guest");
    }

    #[test]
    fn rejects_non_lattice_order() {
        // Two maximal elements: {a, b} with no order has no lub for (a, b).
        let err = SecurityLattice::new(vec!["a".into(), "b".into()], vec![]).unwrap_err();
        assert!(matches!(err, LatticeError::NoBound(..)));
    }

    #[test]
    fn rejects_order_cycle() {
        let err = SecurityLattice::new(
            vec!["a".into(), "b".into()],
            vec![("a".into(), "b".into()), ("b".into(), "a".into())],
        )
        .unwrap_err();
        assert!(matches!(err, LatticeError::NotAntisymmetric(..)));
    }

    fn psi_with(constraints: Vec<(SecTerm, SecTerm)>, vars: &[&str]) -> ExtendedLattice {
        ExtendedLattice::new(
            banking(),
            vars.iter().map(|v| v.to_string()).collect(),
            constraints,
        )
        .unwrap()
    }

    #[test]
    fn entails_equated_vars() {
        // Ψ = {ψ₁ = guest, ψ = alice}: entails(ψ₁ ⊑ ψ).
        let psi = psi_with(
            vec![
                (SecTerm::var("psi1"), SecTerm::lit("guest")),
                (SecTerm::lit("guest"), SecTerm::var("psi1")),
                (SecTerm::var("psi"), SecTerm::lit("alice")),
                (SecTerm::lit("alice"), SecTerm::var("psi")),
            ],
            &["psi1", "psi"],
        );
        assert!(psi.entails(&SecTerm::var("psi1"), &SecTerm::var("psi")).unwrap());
        assert!(!psi.entails(&SecTerm::var("psi"), &SecTerm::var("psi1")).unwrap());
    }

    #[test]
    fn entails_reflexive_on_compound_terms() {
        let psi = psi_with(vec![], &["x", "y"]);
        let t = SecTerm::join(SecTerm::var("x"), SecTerm::meet(SecTerm::var("y"), SecTerm::lit("alice")));
        assert!(psi.entails(&t, &t).unwrap());
        // Join commutes under normalization.
        let u = SecTerm::join(SecTerm::var("y"), SecTerm::var("x"));
        let v = SecTerm::join(SecTerm::var("x"), SecTerm::var("y"));
        assert!(psi.entails(&u, &v).unwrap());
        assert!(psi.entails(&v, &u).unwrap());
    }

    #[test]
    fn entails_chain_refutation() {
        // Ψ = {ψ' ⊑ ψ₁, ψ₁ = guest, ψ = alice}: alice has no path below guest.
        let psi = psi_with(
            vec![
                (SecTerm::var("psi'"), SecTerm::var("psi1")),
                (SecTerm::var("psi1"), SecTerm::lit("guest")),
                (SecTerm::lit("guest"), SecTerm::var("psi1")),
                (SecTerm::var("psi"), SecTerm::lit("alice")),
                (SecTerm::lit("alice"), SecTerm::var("psi")),
            ],
            &["psi'", "psi1", "psi"],
        );
        assert!(!psi.entails(&SecTerm::var("psi"), &SecTerm::var("psi'")).unwrap());
        assert!(psi.entails(&SecTerm::var("psi'"), &SecTerm::lit("guest")).unwrap());
    }

    #[test]
    fn entails_join_laws() {
        let psi = psi_with(vec![], &["x"]);
        let x = SecTerm::var("x");
        let a = SecTerm::lit("alice");
        // x ⊑ x ⊔ alice and alice ⊑ x ⊔ alice.
        assert!(psi.entails(&x, &SecTerm::join(x.clone(), a.clone())).unwrap());
        assert!(psi.entails(&a, &SecTerm::join(x.clone(), a.clone())).unwrap());
        // x ⊓ alice ⊑ x.
        assert!(psi.entails(&SecTerm::meet(x.clone(), a.clone()), &x).unwrap());
        // guest ⊔ alice ⊑ alice (lub law over concrete seeds).
        assert!(psi
            .entails(&SecTerm::join(SecTerm::lit("guest"), a.clone()), &a)
            .unwrap());
    }

    #[test]
    fn constrained_join_can_collapse() {
        // With a ⊑ b as a constraint, a ⊔ b ≡ b even though the concrete
        // join of two incomparable levels would be higher.
        let psi = psi_with(
            vec![(SecTerm::lit("alice"), SecTerm::var("b"))],
            &["b"],
        );
        let j = SecTerm::join(SecTerm::lit("alice"), SecTerm::var("b"));
        assert!(psi.entails(&j, &SecTerm::var("b")).unwrap());
        assert!(psi.entails(&SecTerm::var("b"), &j).unwrap());
    }

    #[test]
    fn concrete_agrees_examples() {
        // Variable-only constraints cannot relate concretes.
        let psi = psi_with(vec![(SecTerm::var("psi'"), SecTerm::var("psi"))], &["psi'", "psi"]);
        assert!(psi.concrete_agrees().unwrap());
        // bank ⊑ guest contradicts Ψ₀.
        let bad = psi_with(vec![(SecTerm::lit("bank"), SecTerm::lit("guest"))], &[]);
        assert!(!bad.concrete_agrees().unwrap());
        // ψ = alice adds no new concrete-concrete facts.
        let eq = psi_with(
            vec![
                (SecTerm::var("psi"), SecTerm::lit("alice")),
                (SecTerm::lit("alice"), SecTerm::var("psi")),
            ],
            &["psi"],
        );
        assert!(eq.concrete_agrees().unwrap());
        // Ψ₀ alone trivially agrees.
        assert!(ExtendedLattice::concrete_only(banking()).concrete_agrees().unwrap());
    }

    #[test]
    fn substitution_examples() {
        let mut g = Substitution::identity();
        g.bind("psi", SecTerm::lit("alice"));
        let t = SecTerm::join(SecTerm::var("psi"), SecTerm::lit("guest"));
        assert_eq!(
            g.apply(&t),
            SecTerm::join(SecTerm::lit("alice"), SecTerm::lit("guest"))
        );
        let mut g2 = Substitution::identity();
        g2.bind("psi", SecTerm::lit("alice"));
        g2.bind("psi'", SecTerm::lit("guest"));
        let psi1 = psi_with(vec![(SecTerm::var("psi'"), SecTerm::var("psi"))], &["psi'", "psi"]);
        let inst = g2.apply_lattice(&psi1).unwrap();
        assert_eq!(
            inst.constraints,
            vec![(SecTerm::lit("guest"), SecTerm::lit("alice"))]
        );
        assert!(inst.vars.is_empty());
        // Identity substitution leaves Ψ unchanged.
        let id = Substitution::identity();
        assert_eq!(id.apply_lattice(&psi1).unwrap().constraints, psi1.constraints);
    }

    #[test]
    fn apply_total_requires_bindings() {
        let g = Substitution::identity();
        let err = g.apply_total(&SecTerm::var("psi")).unwrap_err();
        assert!(matches!(err, LatticeError::MissingBinding(_)));
    }
}
