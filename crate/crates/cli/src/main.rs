use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use pikachu_core::bench::{dkg_bench, sign_bench};
use pikachu_core::crypto::{GroupPoint, Hash32};
use pikachu_core::ledger::SimChain;
use pikachu_core::orchestrator::ProtocolParams;
use pikachu_core::pos::ContentStore;
use pikachu_core::scenario::Scenario;
use pikachu_core::sim::{self, PosDump, RunReport, TrustAnchor};
use pikachu_core::verifier::{verify, Verdict};

const EXIT_OK: u8 = 0;
const EXIT_REJECTED: u8 = 1;
const EXIT_VIOLATION: u8 = 2;
const EXIT_INPUT: u8 = 3;

#[derive(Parser)]
#[command(name = "pikachu", version, about = "PoS checkpointing onto a simulated PoW ledger")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Scenario file (TOML).
    scenario: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// TOML file replacing the scenario's `[params]` table.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Directory receiving the log and the ledger, store and chain dumps.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and print its event log.
    Simulate(RunArgs),
    /// Run only the initialization and funding protocol of a scenario.
    InitFunding(RunArgs),
    /// Standalone distributed key generation.
    Dkg {
        #[arg(long)]
        n: u32,
        #[arg(long)]
        t: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Key generation followed by one threshold signature under a tweaked key.
    Sign {
        #[arg(long)]
        n: u32,
        #[arg(long)]
        t: u32,
        #[arg(long, default_value = "checkpoint")]
        message: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check a served PoS chain against ledger and store dumps.
    Verify {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        store: PathBuf,
        /// PoS chain dump served to the verifier.
        #[arg(long)]
        served: PathBuf,
        /// anchor.json written by `simulate --out`.
        #[arg(long, conflicts_with_all = ["q0", "h0", "genesis_cid"])]
        anchor: Option<PathBuf>,
        #[arg(long, requires = "h0")]
        q0: Option<String>,
        #[arg(long, requires = "q0")]
        h0: Option<u64>,
        #[arg(long)]
        genesis_cid: Option<String>,
    },
}

/// Distinguishes bad input from failures of the run itself.
enum Failure {
    Input(anyhow::Error),
    Run(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Input(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => simulate(&args, false),
        Command::InitFunding(args) => simulate(&args, true),
        Command::Dkg { n, t, seed } => dkg(n, t, seed),
        Command::Sign { n, t, message, seed } => sign(n, t, &message, seed),
        Command::Verify {
            ledger,
            store,
            served,
            anchor,
            q0,
            h0,
            genesis_cid,
        } => verify_cmd(&ledger, &store, &served, anchor.as_deref(), q0, h0, genesis_cid),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_VIOLATION)
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_scenario(args: &RunArgs) -> Result<Scenario> {
    let text = read(&args.scenario)?;
    let mut scenario = Scenario::parse(&text).with_context(|| format!("{}", args.scenario.display()))?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if let Some(path) = &args.params {
        let params: ProtocolParams =
            toml::from_str(&read(path)?).with_context(|| format!("{}", path.display()))?;
        scenario.params = params;
        scenario.validate().with_context(|| format!("{}", path.display()))?;
    }
    Ok(scenario)
}

fn simulate(args: &RunArgs, init_only: bool) -> Result<u8, Failure> {
    let scenario = load_scenario(args)?;
    let report = if init_only {
        sim::run_init(&scenario)
    } else {
        sim::run(&scenario)
    }
    .map_err(|e| Failure::Run(e.into()))?;
    print!("{}", report.log.text());
    if let Some(dir) = &args.out {
        write_artifacts(dir, &report)?;
    }
    for v in &report.violations {
        eprintln!("violation: {v}");
    }
    Ok(if report.ok() { EXIT_OK } else { EXIT_VIOLATION })
}

fn write_artifacts(dir: &Path, report: &RunReport) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let write = |name: &str, body: String| {
        let path = dir.join(name);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
    };
    write("log.jsonl", report.log.text())?;
    write("ledger.json", report.ledger.to_json())?;
    write("store.json", report.store.to_json())?;
    write("pos_chain.json", PosDump::new(report.pos_blocks.clone()).to_json())?;
    if let Some(forged) = &report.forged_chain {
        write("forged_chain.json", PosDump::new(forged.clone()).to_json())?;
    }
    write("anchor.json", serde_json::to_string_pretty(&report.anchor)?)?;
    Ok(())
}

fn dkg(n: u32, t: u32, seed: u64) -> Result<u8, Failure> {
    let b = dkg_bench(n, t, seed)?;
    let out = json!({
        "n": n,
        "t": t,
        "group_key": b.group_key,
        "qualified": b.run.results.values().next().map(|r| r.qualified.clone()),
        "messages": b.counts,
        "broadcasts": b.counts.broadcasts(),
        "elapsed_ms": b.elapsed.as_secs_f64() * 1e3,
    });
    println!("{}", serde_json::to_string_pretty(&out).map_err(|e| Failure::Run(e.into()))?);
    Ok(EXIT_OK)
}

fn sign(n: u32, t: u32, message: &str, seed: u64) -> Result<u8, Failure> {
    let b = sign_bench(n, t, message.as_bytes(), seed)?;
    let signers = &b.run.signer_sets[b.run.signer_sets.len() - 1];
    let out = json!({
        "n": n,
        "t": t,
        "internal_key": b.taproot.internal,
        "output_key": b.taproot.output,
        "signature": hex::encode(b.signature.to_bytes()),
        "valid": b.valid,
        "rounds": b.run.rounds,
        "signers": signers,
        "broadcasts_per_signer": signers.iter().map(|i| b.run.broadcasts[i]).collect::<Vec<_>>(),
        "dkg_elapsed_ms": b.dkg_elapsed.as_secs_f64() * 1e3,
        "sign_elapsed_ms": b.sign_elapsed.as_secs_f64() * 1e3,
    });
    println!("{}", serde_json::to_string_pretty(&out).map_err(|e| Failure::Run(e.into()))?);
    Ok(if b.valid { EXIT_OK } else { EXIT_VIOLATION })
}

fn verify_cmd(
    ledger: &Path,
    store: &Path,
    served: &Path,
    anchor: Option<&Path>,
    q0: Option<String>,
    h0: Option<u64>,
    genesis_cid: Option<String>,
) -> Result<u8, Failure> {
    let ledger = SimChain::from_json(&read(ledger)?).context("ledger dump")?;
    let store = ContentStore::from_json(&read(store)?).context("store dump")?;
    let served = PosDump::from_json(&read(served)?)
        .map_err(|e| anyhow!(e))
        .context("served chain")?;
    let anchor = match (anchor, q0, h0) {
        (Some(path), _, _) => serde_json::from_str::<TrustAnchor>(&read(path)?).context("anchor")?,
        (None, Some(q0), Some(h0)) => TrustAnchor {
            q0: GroupPoint::from_hex(&q0).context("--q0")?,
            h0,
            genesis_cid: match genesis_cid {
                Some(c) => Hash32::from_hex(&c).context("--genesis-cid")?,
                None => Hash32::default(),
            },
        },
        _ => return Err(Failure::Input(anyhow!("either --anchor or --q0 with --h0 is required"))),
    };
    let outcome = verify(
        &ledger,
        &store,
        &served.blocks,
        &anchor.q0,
        anchor.h0,
        Some(&anchor.genesis_cid),
    )
    .map_err(|e| Failure::Run(e.into()))?;
    println!("{}", serde_json::to_string_pretty(&outcome).map_err(|e| Failure::Run(e.into()))?);
    Ok(match outcome.verdict {
        Verdict::Accepted => EXIT_OK,
        Verdict::RejectedNoValidState => EXIT_REJECTED,
    })
}
