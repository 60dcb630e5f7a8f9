//! Core library for the sill language: a linear session-typed concurrent
//! calculus with flow-sensitive information-flow control.
//!
//! Modules:
//! - [`lattice`]: security lattices, extended lattices, entailment,
//!   substitutions.
//! - [`ast`]: shared abstract syntax (types, terms, definitions, signatures).
//! - [`types`]: equi-recursive type algebra (unfolding, coinductive equality).
//! - [`surface`]: concrete syntax (parser, pretty-printer, linearity lint).

pub mod ast;
pub mod checker;
pub mod harness;
pub mod lattice;
pub mod runtime;
pub mod security;
pub mod surface;
pub mod types;

pub use ast::{
    CRef, Chan, CtxEntry, Pos, ProcDef, ProcKind, ProcTerm, SessionType, Signature,
};
pub use lattice::{
    ExtendedLattice, LatticeError, SecLevel, SecTerm, SecurityLattice, Substitution,
};
pub use checker::{check_config, check_def, check_signature, Checker, TypeError, TypingCtx};
pub use harness::{
    bank_split, bfs_minimal, bisim, lemma_response, merge_defs, minimal_sending, ni_test,
    ready_bases, BisimResult, ChannelReport, ContextGen, Counterexample, Event, Obs, Split,
    Verdict, VerifierKind,
};
pub use runtime::{
    explore, fair_round, run, ChanInfo, Configuration, ExploreResult, MsgNode, Node, NodeId,
    ProcNode, Redex, Rule, RunResult, RuntimeError, Scheduler, StepRecord, StopReason,
};
pub use security::{proj_eq, projection, quasi_secrecy, relevant};
pub use surface::{parse_program, pretty_signature, SurfaceError};
pub use types::{TypeTable, TypesError};
