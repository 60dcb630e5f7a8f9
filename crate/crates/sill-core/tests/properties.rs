//! Property-based tests over the core algebra and the runtime: lattice
//! entailment is a preorder, type equality is an equivalence, printing
//! round-trips, traces never produce the same channel twice, projection is
//! idempotent, bounded bisimulation is symmetric and downward closed in its
//! bound, and trace slicing is witness-independent.

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;

use sill_core::harness::{
    bank_split, bisim, compare_events, minimal_sending, Verdict, VerifierKind,
};
use sill_core::{
    parse_program, pretty_signature, relevant, Chan, Configuration, Scheduler, SecLevel,
    SessionType, Signature,
};

const LATTICE: &str = "
    level guest; level alice; level bob; level bank;
    order guest <= alice; order guest <= bob;
    order alice <= bank; order bob <= bank;
";

fn lattice_sig() -> Signature {
    parse_program(LATTICE).unwrap()
}

fn variants_sig() -> Signature {
    let path = format!(
        "{}/../../examples/banking_variants.sill",
        env!("CARGO_MANIFEST_DIR")
    );
    parse_program(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn level() -> impl Strategy<Value = SecLevel> {
    prop_oneof![
        Just("guest".to_string()),
        Just("alice".to_string()),
        Just("bob".to_string()),
        Just("bank".to_string()),
    ]
}

proptest! {
    #[test]
    fn entailment_is_a_preorder(a in level(), b in level(), c in level()) {
        let lat = lattice_sig().lattice;
        prop_assert!(lat.leq(&a, &a).unwrap());
        if lat.leq(&a, &b).unwrap() && lat.leq(&b, &c).unwrap() {
            prop_assert!(lat.leq(&a, &c).unwrap());
        }
        let j = lat.join(&a, &b).unwrap();
        prop_assert!(lat.leq(&a, &j).unwrap());
        prop_assert!(lat.leq(&b, &j).unwrap());
        let m = lat.meet(&a, &b).unwrap();
        prop_assert!(lat.leq(&m, &a).unwrap());
        prop_assert!(lat.leq(&m, &b).unwrap());
    }
}

fn session_type() -> impl Strategy<Value = SessionType> {
    let leaf = prop_oneof![Just(SessionType::One), Just(SessionType::named("loop"))];
    leaf.prop_recursive(3, 12, 3, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone())
                .prop_map(|(a, b)| SessionType::tensor(a, b)),
            (inner.clone(), inner.clone())
                .prop_map(|(a, b)| SessionType::lolli(a, b)),
            prop::collection::btree_map("[a-c]", inner.clone(), 1..3)
                .prop_map(|m| SessionType::plus(m.iter().map(|(k, v)| (k.as_str(), v.clone())).collect::<Vec<_>>())),
            prop::collection::btree_map("[a-c]", inner, 1..3)
                .prop_map(|m| SessionType::with(m.iter().map(|(k, v)| (k.as_str(), v.clone())).collect::<Vec<_>>())),
        ]
    })
}

proptest! {
    #[test]
    fn type_equality_is_reflexive_and_respects_unfolding(t in session_type()) {
        let mut sig = lattice_sig();
        sig.typedefs.push(("loop".to_string(), SessionType::plus(vec![
            ("go", SessionType::named("loop")),
            ("stop", SessionType::One),
        ])));
        sig.typedefs.push(("root".to_string(), t.clone()));
        let table = sill_core::TypeTable::from_pairs(&sig.typedefs).unwrap();
        prop_assert!(table.type_equal(&t, &t).unwrap());
        let named = SessionType::named("root");
        prop_assert!(table.type_equal(&named, &t).unwrap());
        prop_assert!(table.type_equal(&t, &named).unwrap());
        let unfolded = table.unfold_head(&t).unwrap();
        prop_assert!(table.type_equal(&t, &unfolded).unwrap());
    }

    #[test]
    fn typedefs_round_trip_through_the_printer(t in session_type()) {
        let mut sig = lattice_sig();
        sig.typedefs.push(("loop".to_string(), SessionType::One));
        sig.typedefs.push(("root".to_string(), t));
        let printed = pretty_signature(&sig);
        let reparsed = parse_program(&printed).unwrap();
        prop_assert_eq!(sig, reparsed);
    }
}

fn banking_config() -> Configuration {
    let path = format!(
        "{}/../../examples/banking_exec.sill",
        env!("CARGO_MANIFEST_DIR")
    );
    let sig = parse_program(&std::fs::read_to_string(path).unwrap()).unwrap();
    Configuration::from_signature(&sig, "root").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn no_channel_is_produced_twice_along_a_trace(seed in 0u64..1000) {
        let mut cfg = banking_config();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut seen: BTreeSet<(Chan, &str)> = BTreeSet::new();
        for _ in 0..200 {
            let en = cfg.enabled();
            if en.is_empty() {
                break;
            }
            let r = en[rng.gen_range(0..en.len())].clone();
            let rec = cfg.apply(&r).unwrap();
            for id in &rec.produced {
                let node = &cfg.nodes[id];
                let kind = match node {
                    sill_core::Node::Proc(_) => "proc",
                    n if n.is_positive_msg() => "pos-msg",
                    _ => "neg-msg",
                };
                let key = (node.provides().clone(), kind);
                prop_assert!(seen.insert(key.clone()), "{key:?} produced twice");
            }
        }
    }

    #[test]
    fn projection_is_idempotent(seed in 0u64..1000, xi in level(), rounds in 0usize..6) {
        let sig = variants_sig();
        let mut d = bank_split(&sig, "apin", &VerifierKind::Typed("aVerifier".into()))
            .unwrap()
            .parts[1]
            .clone();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..rounds {
            let en = d.enabled();
            if en.is_empty() {
                break;
            }
            let r = en[rng.gen_range(0..en.len())].clone();
            d.apply(&r).unwrap();
        }
        let (_, nodes) = relevant(&d, &xi).unwrap();
        let mut sub = d.clone();
        sub.nodes.retain(|id, _| nodes.contains(id));
        sub.interface.retain(|c| {
            sub.types
                .get(c)
                .map(|i| sub.lattice.leq(&i.sec, &xi).unwrap())
                .unwrap_or(false)
        });
        let (_, again) = relevant(&sub, &xi).unwrap();
        prop_assert_eq!(again, sub.nodes.keys().copied().collect::<BTreeSet<_>>());
    }

    #[test]
    fn slicing_is_witness_independent(seed in 0u64..10_000) {
        let src = "
            level guest; level alice; order guest <= alice;
            type stream = +{a: stream, done: 1};
            proc Stop () @ guest :: s : 1 [guest] = close s
            proc Side () @ guest :: w : 1 [guest] =
              s : 1 [guest] <- Stop @ guest <- (); wait s; close w
            proc Emit () @ guest :: t : stream [guest] =
              t.a; t.a; t.done; close t
        ";
        let sig = parse_program(src).unwrap();
        let mut cfg = Configuration::empty(&sig).unwrap();
        let guest = "guest".to_string();
        cfg.add_instance("Emit", Chan::new("t", 0), &guest, &guest, &[]).unwrap();
        cfg.add_instance("Side", Chan::new("w", 0), &guest, &guest, &[]).unwrap();
        cfg.interface.insert(Chan::new("t", 0));
        cfg.interface.insert(Chan::new("w", 0));
        let targets: BTreeSet<String> = ["t".to_string()].into();
        let fifo = minimal_sending(&cfg, &targets, 200, Scheduler::Fifo)
            .unwrap()
            .unwrap();
        let random = minimal_sending(&cfg, &targets, 200, Scheduler::Random(seed))
            .unwrap()
            .unwrap();
        prop_assert_eq!(fifo.canonical_key(), random.canonical_key());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn bisim_is_symmetric_and_downward_closed(m in 0usize..6) {
        let sig = variants_sig();
        let kind = VerifierKind::Typed("aVerifier".into());
        let s1 = bank_split(&sig, "apin", &kind).unwrap();
        let s2 = bank_split(&sig, "apin_tok2", &kind).unwrap();
        let xi = "guest".to_string();
        let ab = bisim(&s1, &s2, &xi, m, 64).unwrap();
        let ba = bisim(&s2, &s1, &xi, m, 64).unwrap();
        prop_assert_eq!(ab.verdict, ba.verdict);
        for smaller in 0..m {
            let v = bisim(&s1, &s2, &xi, smaller, 64).unwrap().verdict;
            if ab.verdict == Verdict::True {
                prop_assert_eq!(v, Verdict::True);
            }
        }
    }

    #[test]
    fn event_comparison_is_reflexive(seed in 0u64..100) {
        let sig = variants_sig();
        let kind = VerifierKind::Typed("aVerifier".into());
        let mut s = bank_split(&sig, "apin", &kind).unwrap();
        let run = s.run(32 + (seed as usize % 32)).unwrap();
        let lat = variants_sig().lattice;
        let r = compare_events(&lat, &"guest".to_string(), 4, &run, &run).unwrap();
        prop_assert_eq!(r.verdict, Verdict::True);
    }
}
