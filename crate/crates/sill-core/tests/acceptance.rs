//! Acceptance suite: one test per criterion, each printing a single
//! pass/fail line. Run with `--nocapture` to see the lines.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;

use sill_core::harness::{
    bank_split, bfs_minimal, bisim, lemma_response, merge_defs, minimal_sending, ni_test,
    ContextGen, Verdict, VerifierKind,
};
use sill_core::{
    check_config, check_signature, explore, fair_round, parse_program, proj_eq, Chan,
    Configuration, MsgNode, Node, Scheduler, SecLevel, Signature,
};

fn load(name: &str) -> String {
    let path = format!("{}/../../examples/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("cannot read {path}: {e}"))
}

fn sig(name: &str) -> Signature {
    parse_program(&load(name)).unwrap_or_else(|e| panic!("{name}: parse failed: {e}"))
}

fn lvl(s: &str) -> SecLevel {
    s.to_string()
}

fn report(n: u32, name: &str, start: Instant, result: Result<(), String>) {
    let ms = start.elapsed().as_millis();
    match &result {
        Ok(()) => println!("criterion {n} ({name}): PASS [{ms} ms]"),
        Err(e) => println!("criterion {n} ({name}): FAIL [{ms} ms]: {e}"),
    }
    if let Err(e) = result {
        panic!("criterion {n} failed: {e}");
    }
}

#[test]
fn criterion_1_typechecking_corpus() {
    let start = Instant::now();
    let result = (|| {
        let banking = sig("banking.sill");
        check_signature(&banking).map_err(|e| format!("banking.sill rejected: {e}"))?;
        let expected = [
            "Bank",
            "New_Customer",
            "Customer",
            "Auth_out",
            "Auth_in",
            "aVerifier",
            "apin",
            "aAccount",
        ];
        for name in expected {
            if banking.procdef(name).is_none() {
                return Err(format!("missing definition {name}"));
            }
        }
        for name in ["sneaky0.sill", "sneaky1.sill", "sneaky2.sill", "sneaky3.sill"] {
            let s = sig(name);
            let err = check_signature(&s)
                .err()
                .ok_or_else(|| format!("{name} was accepted"))?;
            if err.constraint.is_none() {
                return Err(format!("{name}: rejection does not name a constraint"));
            }
        }
        if start.elapsed().as_secs() >= 1 {
            return Err("exceeded 1 s".into());
        }
        Ok(())
    })();
    report(1, "typechecking corpus", start, result);
}

fn banking_config() -> Configuration {
    Configuration::from_signature(&sig("banking_exec.sill"), "root").unwrap()
}

#[test]
fn criterion_2_preservation() {
    let start = Instant::now();
    let result = (|| {
        for seed in [None, Some(7u64)] {
            let mut cfg = banking_config();
            let mut rng = seed.map(rand_chacha::ChaCha8Rng::seed_from_u64);
            for step in 0..1000usize {
                let en = cfg.enabled();
                if en.is_empty() {
                    return Err(format!("quiescent after {step} steps"));
                }
                let r = match &mut rng {
                    Some(rng) => en[rng.gen_range(0..en.len())].clone(),
                    None => en[step % en.len()].clone(),
                };
                cfg.apply(&r).map_err(|e| e.to_string())?;
                check_config(&cfg).map_err(|e| format!("step {step}: {e}"))?;
            }
        }
        if start.elapsed().as_secs() >= 10 {
            return Err("exceeded 10 s".into());
        }
        Ok(())
    })();
    report(2, "preservation over 2000 steps", start, result);
}

#[test]
fn criterion_3_progress() {
    let start = Instant::now();
    let result = (|| {
        let cfg = banking_config();
        let res = explore(&cfg, 6).map_err(|e| e.to_string())?;
        if !res.stuck_not_poised.is_empty() {
            return Err(format!(
                "{} stuck non-poised states among {}",
                res.stuck_not_poised.len(),
                res.states
            ));
        }
        if start.elapsed().as_secs() >= 30 {
            return Err("exceeded 30 s".into());
        }
        Ok(())
    })();
    report(3, "progress to depth 6", start, result);
}

/// Observable identity of a channel after replaying the renaming log:
/// (original base, offset-corrected generation).
fn obs_identity(cfg: &Configuration, c: &Chan) -> (String, i64) {
    let mut map: BTreeMap<String, (String, i64)> = BTreeMap::new();
    for (offer, from) in &cfg.renames {
        let (ob, off) = map
            .get(&offer.base)
            .cloned()
            .unwrap_or((offer.base.clone(), 0));
        let new_off = off + i64::from(offer.gen) - i64::from(from.gen);
        map.insert(from.base.clone(), (ob, new_off));
    }
    let (ob, off) = map.get(&c.base).cloned().unwrap_or((c.base.clone(), 0));
    (ob, i64::from(c.gen) + off)
}

fn boundary_payloads(cfg: &Configuration) -> Vec<((String, i64), String)> {
    let used: BTreeSet<Chan> = cfg.nodes.values().flat_map(|n| n.uses()).collect();
    let mut out = Vec::new();
    for node in cfg.nodes.values() {
        let Node::Msg(m) = node else { continue };
        let (chan, tag) = match m {
            MsgNode::Close { provided } => (provided, "close".to_string()),
            MsgNode::SelPos {
                provided, label, ..
            } => (provided, format!(".{label}")),
            MsgNode::SendPos { provided, .. } => (provided, "send".to_string()),
            _ => continue,
        };
        if !used.contains(chan) {
            out.push((obs_identity(cfg, chan), tag));
        }
    }
    out
}

fn reachable_to_depth(cfg: &Configuration, depth: usize) -> Vec<Configuration> {
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut out = Vec::new();
    let mut frontier = vec![cfg.clone()];
    seen.insert(cfg.canonical_key());
    out.push(cfg.clone());
    for _ in 0..depth {
        let mut next = Vec::new();
        for c in &frontier {
            for r in c.enabled() {
                let mut child = c.clone();
                child.apply(&r).unwrap();
                if seen.insert(child.canonical_key()) {
                    out.push(child.clone());
                    next.push(child);
                }
            }
        }
        frontier = next;
    }
    out
}

/// Finds `r`'s image in `c` after a possible forward renaming and applies it.
fn apply_matching(
    c: &mut Configuration,
    rule: sill_core::Rule,
    channel: &Chan,
    renames_before: usize,
) -> Result<(), String> {
    let mut target = channel.clone();
    for (offer, from) in c.renames.iter().skip(renames_before) {
        if target == *offer {
            target = from.clone();
        }
    }
    let r = c
        .enabled()
        .into_iter()
        .find(|r| r.rule == rule && r.channel == target)
        .ok_or_else(|| format!("no matching redex {rule} on {target}"))?;
    c.apply(&r).map_err(|e| e.to_string())?;
    Ok(())
}

#[test]
fn criterion_4_diamond_and_confluence() {
    let start = Instant::now();
    let result = (|| {
        let variants = sig("banking_variants.sill");
        let split = bank_split(&variants, "apin", &VerifierKind::Typed("aVerifier".into()))
            .map_err(|e| e.to_string())?;
        let d = split.parts[1].clone();
        let states = reachable_to_depth(&d, 5);
        let mut checked = 0usize;
        for s in &states {
            let en = s.enabled();
            for i in 0..en.len() {
                for j in (i + 1)..en.len() {
                    let base = s.renames.len();
                    let mut c1 = s.clone();
                    c1.apply(&en[i]).map_err(|e| e.to_string())?;
                    let mut c2 = s.clone();
                    c2.apply(&en[j]).map_err(|e| e.to_string())?;
                    if c1.canonical_key() == c2.canonical_key() {
                        continue;
                    }
                    apply_matching(&mut c1, en[j].rule, &en[j].channel, base)?;
                    apply_matching(&mut c2, en[i].rule, &en[i].channel, base)?;
                    if c1.canonical_key() != c2.canonical_key() {
                        return Err(format!(
                            "no convergence after {} / {}",
                            en[i].rule, en[j].rule
                        ));
                    }
                    checked += 1;
                }
            }
        }
        if checked == 0 {
            return Err("no redex pairs found".into());
        }
        // Confluence corollary: every boundary message observed anywhere in
        // the exploration carries the same payload per (channel, generation).
        let mut seen: BTreeMap<(String, i64), String> = BTreeMap::new();
        for s in &states {
            for (key, tag) in boundary_payloads(s) {
                if key.0 != "y" && key.0 != "t" {
                    continue;
                }
                if let Some(prev) = seen.get(&key) {
                    if *prev != tag {
                        return Err(format!(
                            "channel {}`{} carries {prev} and {tag} under different schedules",
                            key.0, key.1
                        ));
                    }
                } else {
                    seen.insert(key, tag);
                }
            }
        }
        Ok(())
    })();
    report(4, "diamond and payload confluence", start, result);
}

fn instance_program(k: usize, emitters: usize, sides: usize) -> (Configuration, BTreeSet<String>) {
    let mut src = String::from(
        "level guest; level alice; order guest <= alice;\n\
         type stream = +{a: stream, done: 1};\n\
         proc Stop () @ guest :: s : 1 [guest] = close s\n\
         proc Side () @ guest :: w : 1 [guest] =\n\
           s : 1 [guest] <- Stop @ guest <- (); wait s; close w\n",
    );
    src.push_str("proc Emit () @ guest :: t : stream [guest] =\n");
    for _ in 0..k {
        src.push_str("  t.a;\n");
    }
    src.push_str("  t.done; close t\n");
    let s = parse_program(&src).unwrap();
    let mut cfg = Configuration::empty(&s).unwrap();
    let mut targets = BTreeSet::new();
    for e in 0..emitters {
        let base = format!("t{e}");
        cfg.add_instance("Emit", Chan::new(&base, 0), &lvl("guest"), &lvl("guest"), &[])
            .unwrap();
        cfg.interface.insert(Chan::new(&base, 0));
        targets.insert(base);
    }
    for w in 0..sides {
        cfg.add_instance("Side", Chan::new(&format!("w{w}"), 0), &lvl("guest"), &lvl("guest"), &[])
            .unwrap();
        cfg.interface.insert(Chan::new(&format!("w{w}"), 0));
    }
    (cfg, targets)
}

#[test]
fn criterion_5_minimal_sending_vs_oracle() {
    let start = Instant::now();
    let result = (|| {
        let mut instances = Vec::new();
        for k in 1..=4 {
            for sides in 1..=2 {
                instances.push((k, 1, sides));
            }
        }
        instances.push((2, 2, 1));
        instances.push((3, 2, 2));
        assert!(instances.len() >= 10);
        for (k, emitters, sides) in instances {
            let (cfg, targets) = instance_program(k, emitters, sides);
            let oracle = bfs_minimal(&cfg, &targets, 2000)
                .map_err(|e| e.to_string())?
                .ok_or("oracle found no minimal configuration")?;
            let fifo = minimal_sending(&cfg, &targets, 500, Scheduler::Fifo)
                .map_err(|e| e.to_string())?
                .ok_or("no fifo witness")?;
            if fifo.canonical_key() != oracle.canonical_key() {
                return Err(format!("fifo mismatch on instance k={k} sides={sides}"));
            }
            for seed in [1u64, 13, 97] {
                let got = minimal_sending(&cfg, &targets, 500, Scheduler::Random(seed))
                    .map_err(|e| e.to_string())?
                    .ok_or("no random witness")?;
                if got.canonical_key() != oracle.canonical_key() {
                    return Err(format!(
                        "witness dependence: seed {seed} on k={k} emitters={emitters} sides={sides}"
                    ));
                }
            }
        }
        Ok(())
    })();
    report(5, "minimal sending vs oracle on 10 instances", start, result);
}

#[test]
fn criterion_6_simulation_response() {
    let start = Instant::now();
    let result = (|| {
        let variants = sig("banking_variants.sill");
        let mut triples = 0usize;
        let mut run_pair =
            |d1: &Configuration, d2: &Configuration, xi: &SecLevel, quota: usize| -> Result<(), String> {
                let mut d1 = d1.clone();
                let mut d2 = d2.clone();
                let mut taken = 0usize;
                while taken < quota {
                    if !proj_eq(&d1, &d2, xi).map_err(|e| e.to_string())? {
                        return Err(format!("projections diverged at {xi} before sampling"));
                    }
                    for r in d1.enabled() {
                        let mut d1n = d1.clone();
                        d1n.apply(&r).map_err(|e| e.to_string())?;
                        if !lemma_response(&d1n, &d2, xi).map_err(|e| e.to_string())? {
                            return Err(format!("no 0/1-step response at {xi} for {r:?}"));
                        }
                        taken += 1;
                        triples += 1;
                        if taken >= quota {
                            break;
                        }
                    }
                    // Mirror one fair round on both sides.
                    fair_round(&mut d1, 32).map_err(|e| e.to_string())?;
                    fair_round(&mut d2, 32).map_err(|e| e.to_string())?;
                }
                Ok(())
            };
        let build = |pin: &str, probe: Option<&str>| -> Result<Configuration, String> {
            let mut d = bank_split(&variants, pin, &VerifierKind::Typed("aVerifier".into()))
                .map_err(|e| e.to_string())?
                .parts[1]
                .clone();
            if let Some(p) = probe {
                d.add_instance(p, Chan::new("bp", 0), &lvl("bank"), &lvl("guest"), &[])
                    .map_err(|e| e.to_string())?;
                d.interface.insert(Chan::new("bp", 0));
            }
            Ok(d)
        };
        run_pair(&build("apin", None)?, &build("apin_tok2", None)?, &lvl("guest"), 100)?;
        run_pair(
            &build("apin", Some("BankProbe0"))?,
            &build("apin", Some("BankProbe1"))?,
            &lvl("alice"),
            100,
        )?;
        if triples < 200 {
            return Err(format!("only {triples} triples sampled"));
        }
        Ok(())
    })();
    report(6, "simulation response on 200 triples", start, result);
}

#[test]
fn criterion_7_noninterference_end_to_end() {
    let start = Instant::now();
    let result = (|| {
        let variants = sig("banking_variants.sill");
        let r = ni_test(
            &variants,
            &ContextGen::Bank,
            ("apin", "apin_tok2"),
            &lvl("guest"),
            4,
            64,
        )
        .map_err(|e| e.to_string())?;
        if r.verdict != Verdict::True {
            return Err(format!("typed variants distinguished: {r:?}"));
        }
        let sneaky = merge_defs(&variants, &parse_program(&load("sneaky0.sill")).unwrap());
        let kind = VerifierKind::Signaling("SneakyVerifier".into());
        let s1 = bank_split(&sneaky, "apin", &kind).map_err(|e| e.to_string())?;
        let s2 = bank_split(&sneaky, "apin_tok2", &kind).map_err(|e| e.to_string())?;
        let r = bisim(&s1, &s2, &lvl("guest"), 4, 64).map_err(|e| e.to_string())?;
        if r.verdict != Verdict::False {
            return Err(format!("leaky configuration not refuted: {r:?}"));
        }
        if r.counterexample.is_none() {
            return Err("refutation lacks a counterexample action".into());
        }
        if start.elapsed().as_secs() >= 60 {
            return Err("exceeded 60 s".into());
        }
        Ok(())
    })();
    report(7, "noninterference end to end", start, result);
}

#[test]
fn criterion_8_divergence_is_inconclusive() {
    let start = Instant::now();
    let result = (|| {
        let variants = sig("banking_variants.sill");
        let sneaky = merge_defs(&variants, &parse_program(&load("sneaky2.sill")).unwrap());
        let kind = VerifierKind::Diverging("Sneaky_Verifier_2".into());
        let s1 = bank_split(&sneaky, "apin", &kind).map_err(|e| e.to_string())?;
        let s2 = bank_split(&sneaky, "apin_tok2", &kind).map_err(|e| e.to_string())?;
        let r = bisim(&s1, &s2, &lvl("guest"), 4, 128).map_err(|e| e.to_string())?;
        if r.verdict != Verdict::Inconclusive {
            return Err(format!("expected inconclusive, got {r:?}"));
        }
        let inconclusive: Vec<_> = r
            .channels
            .iter()
            .filter(|c| c.verdict == Verdict::Inconclusive)
            .collect();
        if inconclusive.len() != 1 {
            return Err(format!(
                "expected exactly one inconclusive channel, got {}",
                inconclusive.len()
            ));
        }
        Ok(())
    })();
    report(8, "divergence yields inconclusive", start, result);
}
