//! Command-line front end for the sill language.
//!
//! Subcommands: `check` (typecheck a program), `run` (interpret with a
//! trace), `project` (observer projection listing), `ni` (noninterference
//! test of program variants), and `corpus` (golden example suite).
//!
//! Exit codes: 0 success; 1 type error from `check`; 2 refuted and 3
//! inconclusive-only from `ni`; 64 usage error; 65 parse error; 70
//! internal error.

use std::collections::BTreeSet;
use std::io::Write as _;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use rand::SeedableRng;
use serde_json::json;

use sill_core::harness::merge_defs;
use sill_core::{
    check_signature, ni_test, parse_program, projection, quasi_secrecy, relevant, ContextGen,
    Configuration, MsgNode, Node, Signature, Verdict,
};

const SCHEMA_VERSION: u32 = 1;

const EXIT_OK: i32 = 0;
const EXIT_TYPE_ERROR: i32 = 1;
const EXIT_NI_FALSE: i32 = 2;
const EXIT_NI_INCONCLUSIVE: i32 = 3;
const EXIT_USAGE: i32 = 64;
const EXIT_PARSE: i32 = 65;
const EXIT_INTERNAL: i32 = 70;

#[derive(Parser)]
#[command(name = "sill", version, about = "Session-typed language with information-flow control")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Typecheck a program.
    Check(CheckArgs),
    /// Run a program's exec configuration, writing a step trace.
    Run(RunArgs),
    /// Print the observer projection of a program's exec configuration.
    Project(ProjectArgs),
    /// Compare program variants for noninterference at an observer level.
    Ni(NiArgs),
    /// Run the golden example suite.
    Corpus(CorpusArgs),
}

#[derive(Args)]
struct CheckArgs {
    /// Program file.
    file: PathBuf,
    /// Dump the parsed program as JSON instead of checking.
    #[arg(long)]
    ast: bool,
}

#[derive(ValueEnum, Clone, Copy)]
enum ScheduleArg {
    Fifo,
    Random,
}

#[derive(Args)]
struct RunArgs {
    /// Program file with an `exec` declaration.
    file: PathBuf,
    /// Scheduling policy.
    #[arg(long, value_enum, default_value = "fifo")]
    schedule: ScheduleArg,
    /// Seed for the random scheduler.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Step budget.
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    /// Trace output file (JSON lines); stdout when omitted.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct ProjectArgs {
    /// Program file with an `exec` declaration.
    file: PathBuf,
    /// Observer secrecy level.
    #[arg(long)]
    observer: String,
}

#[derive(ValueEnum, Clone, Copy)]
enum ContextsArg {
    Paper,
    Random,
}

#[derive(Args)]
struct NiArgs {
    /// Base program file providing the environment definitions.
    file: PathBuf,
    /// Observer secrecy level.
    #[arg(long)]
    observer: String,
    /// Generation bound per observable channel.
    #[arg(long, default_value_t = 4)]
    bound: usize,
    /// Internal step budget.
    #[arg(long, default_value_t = 64)]
    depth: usize,
    /// Context generator.
    #[arg(long, value_enum, default_value = "paper")]
    contexts: ContextsArg,
    /// Seed for the random context generator.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated variant files, each defining one pin-source process.
    #[arg(long, value_delimiter = ',', required = true)]
    variants: Vec<PathBuf>,
}

#[derive(Args)]
struct CorpusArgs {
    /// Directory with the example programs.
    #[arg(long, default_value = "examples")]
    dir: PathBuf,
}

enum CliError {
    Usage(String),
    Parse(String),
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Parse(_) => EXIT_PARSE,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Parse(m) | CliError::Internal(m) => m,
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let code = match cli.cmd {
        Cmd::Check(a) => cmd_check(&a),
        Cmd::Run(a) => cmd_run(&a),
        Cmd::Project(a) => cmd_project(&a),
        Cmd::Ni(a) => cmd_ni(&a),
        Cmd::Corpus(a) => cmd_corpus(&a),
    };
    let code = match code {
        Ok(c) => c,
        Err(e) => {
            eprintln!("sill: {}", e.message());
            e.exit_code()
        }
    };
    std::process::exit(code);
}

fn load(path: &PathBuf) -> Result<Signature, CliError> {
    let src = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    parse_program(&src).map_err(|e| CliError::Parse(format!("{}:{e}", path.display())))
}

fn exec_config(path: &PathBuf) -> Result<Configuration, CliError> {
    let sig = load(path)?;
    if sig.exec.is_none() {
        return Err(CliError::Usage(format!(
            "{}: program has no exec declaration",
            path.display()
        )));
    }
    Configuration::from_signature(&sig, "root").map_err(|e| CliError::Internal(e.to_string()))
}

fn cmd_check(a: &CheckArgs) -> Result<i32, CliError> {
    let sig = load(&a.file)?;
    if a.ast {
        let doc = json!({
            "schemaVersion": SCHEMA_VERSION,
            "program": serde_json::to_value(&sig)
                .map_err(|e| CliError::Internal(e.to_string()))?,
        });
        println!("{doc}");
        return Ok(EXIT_OK);
    }
    match check_signature(&sig) {
        Ok(_) => Ok(EXIT_OK),
        Err(e) => {
            eprintln!("{}:{e}", a.file.display());
            Ok(EXIT_TYPE_ERROR)
        }
    }
}

fn cmd_run(a: &RunArgs) -> Result<i32, CliError> {
    let mut cfg = exec_config(&a.file)?;
    let mut rng = match a.schedule {
        ScheduleArg::Random => Some(rand_chacha::ChaCha8Rng::seed_from_u64(a.seed)),
        ScheduleArg::Fifo => None,
    };
    let mut lines = Vec::new();
    for step in 0..a.steps {
        let en = cfg.enabled();
        if en.is_empty() {
            break;
        }
        let r = match &mut rng {
            Some(rng) => en[rng.gen_range(0..en.len())].clone(),
            None => en[step % en.len()].clone(),
        };
        let rec = cfg.apply(&r).map_err(|e| CliError::Internal(e.to_string()))?;
        lines.push(json!({
            "step": step,
            "rule": rec.rule.name(),
            "channel": rec.channel.base,
            "gen": rec.channel.gen,
            "runSecBefore": rec.run_before,
            "runSecAfter": rec.run_after,
            "configHash": format!("{:016x}", cfg.canonical_hash()),
        }));
    }
    let mut out = String::new();
    for l in &lines {
        out.push_str(&l.to_string());
        out.push('\n');
    }
    match &a.trace {
        Some(path) => {
            let mut f = std::fs::File::create(path)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            f.write_all(out.as_bytes())
                .map_err(|e| CliError::Internal(e.to_string()))?;
        }
        None => print!("{out}"),
    }
    Ok(EXIT_OK)
}

fn node_summary(n: &Node) -> String {
    match n {
        Node::Proc(p) => format!("proc {} @ {}", p.offer, p.run),
        Node::Msg(MsgNode::Close { provided }) => format!("msg close {provided}"),
        Node::Msg(MsgNode::SelPos {
            provided, label, ..
        }) => format!("msg {provided}.{label}"),
        Node::Msg(MsgNode::SelNeg { carrier, label, .. }) => format!("msg {carrier}.{label}"),
        Node::Msg(MsgNode::SendPos {
            provided, payload, ..
        }) => format!("msg send {payload} {provided}"),
        Node::Msg(MsgNode::SendNeg {
            carrier, payload, ..
        }) => format!("msg send {payload} {carrier}"),
    }
}

fn cmd_project(a: &ProjectArgs) -> Result<i32, CliError> {
    let mut cfg = exec_config(&a.file)?;
    // The exec configuration is closed; observe it at its root channels.
    cfg.interface = cfg.roots();
    if !cfg.lattice.levels().contains(&a.observer) {
        return Err(CliError::Usage(format!(
            "unknown secrecy level `{}`",
            a.observer
        )));
    }
    let quasi = quasi_secrecy(&cfg).map_err(|e| CliError::Internal(e.to_string()))?;
    let (chans, _) = relevant(&cfg, &a.observer).map_err(|e| CliError::Internal(e.to_string()))?;
    let proj = projection(&cfg, &a.observer).map_err(|e| CliError::Internal(e.to_string()))?;
    println!("projection at observer {} ({} nodes):", a.observer, proj.len());
    for (id, node) in proj {
        let q = quasi.get(&id).cloned().unwrap_or_default();
        let mut parts = Vec::new();
        for c in std::iter::once(node.provides().clone()).chain(node.uses()) {
            let mark = if chans.contains(&c) { "<=" } else { "!<=" };
            parts.push(format!("{c} {mark} {}", a.observer));
        }
        println!("  #{id}: {} [quasi {q}] ({})", node_summary(&node), parts.join(", "));
    }
    Ok(EXIT_OK)
}

/// Picks the variant's pin-source definition: the file's exec name when
/// present, otherwise its last process definition.
fn variant_name(sig: &Signature, path: &PathBuf) -> Result<String, CliError> {
    if let Some(name) = &sig.exec {
        return Ok(name.clone());
    }
    sig.procdefs
        .last()
        .map(|d| d.name.clone())
        .ok_or_else(|| CliError::Usage(format!("{}: no process definitions", path.display())))
}

fn cmd_ni(a: &NiArgs) -> Result<i32, CliError> {
    let mut sig = load(&a.file)?;
    if !sig.lattice.levels().contains(&a.observer) {
        return Err(CliError::Usage(format!(
            "unknown secrecy level `{}`",
            a.observer
        )));
    }
    if a.variants.len() < 2 {
        return Err(CliError::Usage("at least two variant files required".into()));
    }
    let mut names = Vec::new();
    for path in &a.variants {
        let vsig = load(path)?;
        let name = variant_name(&vsig, path)?;
        sig = merge_defs(&sig, &vsig);
        names.push(name);
    }
    for name in &names {
        if sig.procdef(name).is_none() {
            return Err(CliError::Usage(format!("variant `{name}` is not defined")));
        }
    }
    let gen = match a.contexts {
        ContextsArg::Paper => ContextGen::Bank,
        ContextsArg::Random => ContextGen::Random {
            seed: a.seed,
            n: 3,
        },
    };
    let mut pairs = Vec::new();
    let mut inconclusive = Vec::new();
    let mut any_false = false;
    let mut all_true = true;
    for i in 0..names.len() {
        for j in (i + 1)..names.len() {
            let r = ni_test(
                &sig,
                &gen,
                (&names[i], &names[j]),
                &a.observer,
                a.bound,
                a.depth,
            )
            .map_err(|e| CliError::Internal(e.to_string()))?;
            let pair_name = format!("{},{}", names[i], names[j]);
            let mut entry = json!({
                "variants": [names[i], names[j]],
                "verdict": match r.verdict {
                    Verdict::True => "true",
                    Verdict::False => "false",
                    Verdict::Inconclusive => "inconclusive",
                },
            });
            if let Some(cex) = &r.counterexample {
                entry["counterexample"] = serde_json::to_value(cex)
                    .map_err(|e| CliError::Internal(e.to_string()))?;
            }
            pairs.push(entry);
            match r.verdict {
                Verdict::True => {}
                Verdict::False => {
                    any_false = true;
                    all_true = false;
                }
                Verdict::Inconclusive => {
                    inconclusive.push(json!(pair_name));
                    all_true = false;
                }
            }
        }
    }
    let doc = json!({
        "schemaVersion": SCHEMA_VERSION,
        "observer": a.observer,
        "bound": a.bound,
        "pairs": pairs,
        "inconclusive": inconclusive,
    });
    println!("{doc}");
    if any_false {
        Ok(EXIT_NI_FALSE)
    } else if !all_true {
        Ok(EXIT_NI_INCONCLUSIVE)
    } else {
        Ok(EXIT_OK)
    }
}

fn cmd_corpus(a: &CorpusArgs) -> Result<i32, CliError> {
    let accepted = ["banking.sill", "banking_exec.sill", "banking_variants.sill"];
    let rejected = ["sneaky0.sill", "sneaky1.sill", "sneaky2.sill", "sneaky3.sill"];
    let mut failures = 0usize;
    let known: BTreeSet<&str> = accepted.iter().chain(&rejected).copied().collect();
    for name in known {
        let path = a.dir.join(name);
        let sig = load(&path)?;
        let expect_ok = accepted.contains(&name);
        let result = check_signature(&sig);
        let ok = result.is_ok() == expect_ok;
        let status = if ok { "ok" } else { "FAIL" };
        let expected = if expect_ok { "accept" } else { "reject" };
        println!("{status}: {name} ({expected})");
        if let (false, Err(e)) = (expect_ok, &result) {
            println!("      {e}");
        }
        if !ok {
            failures += 1;
        }
    }
    if failures > 0 {
        Err(CliError::Internal(format!("{failures} corpus failures")))
    } else {
        Ok(EXIT_OK)
    }
}
