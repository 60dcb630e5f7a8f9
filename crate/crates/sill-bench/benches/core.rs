//! Benchmarks for the core algorithms: lattice entailment, coinductive
//! type equality, signature checking, state-space exploration, and the
//! end-to-end bounded bisimulation check.

use criterion::{criterion_group, criterion_main, Criterion};

use sill_core::harness::{bank_split, bisim, VerifierKind};
use sill_core::{
    check_signature, explore, parse_program, Configuration, SessionType, Signature, TypeTable,
};

fn load(name: &str) -> String {
    let path = format!("{}/../../examples/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(path).unwrap()
}

fn banking() -> Signature {
    parse_program(&load("banking.sill")).unwrap()
}

fn bench_entailment(c: &mut Criterion) {
    let lat = banking().lattice;
    let levels: Vec<_> = lat.levels().to_vec();
    c.bench_function("lattice_leq_join", |b| {
        b.iter(|| {
            let mut acc = 0usize;
            for a in &levels {
                for z in &levels {
                    if lat.leq(a, z).unwrap() {
                        acc += 1;
                    }
                    lat.join(a, z).unwrap();
                }
            }
            acc
        })
    });
}

fn bench_type_equal(c: &mut Criterion) {
    let sig = banking();
    let table = TypeTable::from_pairs(&sig.typedefs).unwrap();
    let auth = SessionType::named("auth_out");
    let unfolded = table.unfold_head(&auth).unwrap();
    c.bench_function("type_equal_recursive", |b| {
        b.iter(|| table.type_equal(&auth, &unfolded).unwrap())
    });
}

fn bench_check_signature(c: &mut Criterion) {
    let sig = banking();
    c.bench_function("check_signature_banking", |b| {
        b.iter(|| check_signature(&sig).unwrap())
    });
}

fn bench_explore(c: &mut Criterion) {
    let sig = parse_program(&load("banking_exec.sill")).unwrap();
    let cfg = Configuration::from_signature(&sig, "root").unwrap();
    c.bench_function("explore_depth_4", |b| {
        b.iter(|| explore(&cfg, 4).unwrap().states)
    });
}

fn bench_bisim(c: &mut Criterion) {
    let sig = parse_program(&load("banking_variants.sill")).unwrap();
    let kind = VerifierKind::Typed("aVerifier".into());
    let s1 = bank_split(&sig, "apin", &kind).unwrap();
    let s2 = bank_split(&sig, "apin_tok2", &kind).unwrap();
    c.bench_function("bisim_banking_guest", |b| {
        b.iter(|| bisim(&s1, &s2, &"guest".to_string(), 4, 64).unwrap().verdict)
    });
}

criterion_group!(
    benches,
    bench_entailment,
    bench_type_equal,
    bench_check_signature,
    bench_explore,
    bench_bisim
);
criterion_main!(benches);
