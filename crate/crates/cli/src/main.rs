mod store;

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ledgerguard::consensus::{sweep, Behavior, QuorumRule, SweepConfig};
use ledgerguard::costmodel::{cost_table, load_profiles, reference_profiles, WORKFLOW_GAS};
use ledgerguard::datagen::{self, sample_row, GeneratorConfig, RowKind};
use ledgerguard::harness::{
    audit_ledger, bench, replay_workload, run_insider_attack, run_sensitivity, AttackMode, Detector,
};
use ledgerguard::ledger::{load_ledger, verify_against_head, verify_chain, verify_inclusion, HeadReceipt};
use ledgerguard::workflow::{Action, PaymentRequest, Role};
use serde_json::json;

use store::{now_ms, scheme, Config, Workspace, SNAPSHOT};

#[derive(Parser)]
#[command(name = "ledgerguard", version, about = "Tamper-evident payment approval with attested fraud scoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Markdown,
    Json,
}

#[derive(Args)]
struct Output {
    #[arg(long, value_enum, default_value = "markdown")]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Output {
    fn emit(&self, markdown: impl FnOnce() -> String, json: impl FnOnce() -> String) -> Result<()> {
        let text = match self.format {
            Format::Markdown => markdown(),
            Format::Json => json(),
        };
        match &self.out {
            Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
            None => Ok(io::stdout().write_all(text.as_bytes())?),
        }
    }
}

#[derive(Args)]
struct Model {
    /// Seed of the synthetic training set and of training itself.
    #[arg(long, default_value_t = 42)]
    train_seed: u64,
}

impl Model {
    fn detector(&self) -> Result<Arc<Detector>> {
        Ok(Arc::new(Detector::standard(self.train_seed)?))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Verify snapshots and produce inclusion proofs.
    Audit {
        #[command(subcommand)]
        command: AuditCommand,
    },
    /// Commit-protocol simulation.
    Consensus {
        #[command(subcommand)]
        command: ConsensusCommand,
    },
    /// Gas and USD cost model.
    Cost {
        #[command(subcommand)]
        command: CostCommand,
    },
    /// Write a synthetic enterprise payments CSV.
    Datagen {
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 0.047)]
        fraud_rate: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Attack scenarios.
    Attack {
        #[command(subcommand)]
        command: AttackCommand,
    },
    /// Drive a simulated workload through the full pipeline.
    Replay {
        #[arg(long, default_value_t = 30)]
        days: u32,
        /// Transactions per day.
        #[arg(long, default_value_t = 267)]
        rate: u32,
        #[arg(long, default_value_t = 0.047)]
        anomaly_rate: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        model: Model,
        #[command(flatten)]
        output: Output,
    },
    /// Precision and recall as the fraud rate varies.
    Sensitivity {
        #[arg(long, value_delimiter = ',', default_value = "0.001,0.005,0.05")]
        rates: Vec<f64>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[command(flatten)]
        output: Output,
    },
    /// Predict and explanation latency.
    Bench {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        model: Model,
        #[command(flatten)]
        output: Output,
    },
    /// Create a workflow workspace and register its model.
    Init {
        #[arg(long, default_value = "ledgerguard-data")]
        dir: PathBuf,
        #[arg(long, default_value_t = 4)]
        validators: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// `actor:role[+role...]`; defaults to alice (requester), bob
        /// (manager), carol (finance) and erp-system (system).
        #[arg(long = "actor")]
        actors: Vec<String>,
        /// `budget=usd`; defaults to ops=100000.
        #[arg(long = "budget")]
        budgets: Vec<String>,
    },
    /// Score a payment and record it with its assessment.
    Submit {
        #[arg(long, default_value = "ledgerguard-data")]
        dir: PathBuf,
        #[arg(long)]
        id: String,
        #[arg(long, default_value = "alice")]
        requester: String,
        #[arg(long)]
        vendor: String,
        /// US dollars.
        #[arg(long)]
        amount: f64,
        #[arg(long, default_value = "ops")]
        budget: String,
        /// Comma-separated feature vector in schema order. Without it a row
        /// is drawn from the generator.
        #[arg(long, value_delimiter = ',')]
        features: Option<Vec<f64>>,
        /// Draw a fraudulent row instead of a legitimate one.
        #[arg(long)]
        suspicious: bool,
        #[arg(long, default_value_t = 0)]
        row_seed: u64,
    },
    /// Manager or finance approval.
    Approve {
        #[arg(long, default_value = "ledgerguard-data")]
        dir: PathBuf,
        id: String,
        #[arg(long, value_enum)]
        role: ApproverRole,
        #[arg(long)]
        actor: Option<String>,
    },
    /// Budget check and execution by the system actor.
    Execute {
        #[arg(long, default_value = "ledgerguard-data")]
        dir: PathBuf,
        id: String,
        #[arg(long, default_value = "erp-system")]
        actor: String,
    },
    /// Reject a payment.
    Reject {
        #[arg(long, default_value = "ledgerguard-data")]
        dir: PathBuf,
        id: String,
        #[arg(long, value_enum, default_value = "manager")]
        role: ApproverRole,
        #[arg(long)]
        actor: Option<String>,
    },
    /// Every ledger entry about a payment, with inclusion proofs.
    Trail {
        #[arg(long, default_value = "ledgerguard-data")]
        dir: PathBuf,
        id: String,
        #[arg(long, value_enum, default_value = "markdown")]
        format: Format,
    },
}

#[derive(Subcommand)]
enum AuditCommand {
    /// Verify a snapshot; exits non-zero on failure.
    Verify {
        snapshot: PathBuf,
        /// JSON head receipt `{height, head_digest}` to detect truncation.
        #[arg(long)]
        head: Option<PathBuf>,
    },
    /// Inclusion proof for one entry.
    Prove { snapshot: PathBuf, entry_id: u64 },
    /// Alerts, approvals and approver clusters, each proof-checked.
    Report {
        snapshot: PathBuf,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Subcommand)]
enum ConsensusCommand {
    Sweep {
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        f: usize,
        #[arg(long, default_value_t = 1000)]
        seeds: u64,
        #[arg(long, value_enum, default_value = "equivocate")]
        behavior: FaultBehavior,
        /// Use an n − f quorum instead of ⌊2n/3⌋ + 1.
        #[arg(long)]
        n_minus_f: bool,
    },
}

#[derive(Subcommand)]
enum CostCommand {
    Table {
        #[arg(long, default_value_t = WORKFLOW_GAS)]
        gas: u64,
        /// Profiles JSON; the reference networks when omitted.
        #[arg(long)]
        profiles: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Subcommand)]
enum AttackCommand {
    Run {
        #[arg(value_enum)]
        scenario: Scenario,
        #[arg(long, value_enum, default_value = "ledger")]
        mode: Mode,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[command(flatten)]
        model: Model,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    Insider,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Traditional,
    Ledger,
    LedgerTamper,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultBehavior {
    Equivocate,
    Withhold,
    Censor,
}

#[derive(Clone, Copy, ValueEnum)]
enum ApproverRole {
    Manager,
    Finance,
}

fn parse_role(s: &str) -> Result<Role> {
    Ok(match s {
        "requester" => Role::Requester,
        "manager" => Role::Manager,
        "finance" => Role::Finance,
        "system" => Role::System,
        other => bail!("unknown role {other:?}"),
    })
}

fn parse_actors(specs: &[String]) -> Result<BTreeMap<String, Vec<Role>>> {
    if specs.is_empty() {
        return Ok([
            ("alice", Role::Requester),
            ("bob", Role::Manager),
            ("carol", Role::Finance),
            ("erp-system", Role::System),
        ]
        .into_iter()
        .map(|(a, r)| (a.to_string(), vec![r]))
        .collect());
    }
    specs
        .iter()
        .map(|s| {
            let (actor, roles) = s.split_once(':').ok_or_else(|| anyhow!("expected actor:role, got {s:?}"))?;
            let roles = roles.split('+').map(parse_role).collect::<Result<_>>()?;
            Ok((actor.to_string(), roles))
        })
        .collect()
}

fn parse_budgets(specs: &[String]) -> Result<BTreeMap<String, u64>> {
    if specs.is_empty() {
        return Ok(BTreeMap::from([("ops".to_string(), 100_000 * 100)]));
    }
    specs
        .iter()
        .map(|s| {
            let (name, usd) = s.split_once('=').ok_or_else(|| anyhow!("expected budget=usd, got {s:?}"))?;
            let usd: f64 = usd.parse().with_context(|| format!("budget amount {usd:?}"))?;
            Ok((name.to_string(), (usd * 100.0).round() as u64))
        })
        .collect()
}

fn read_snapshot(path: &Path) -> Result<Vec<u8>> {
    let path = if path.is_dir() { path.join(SNAPSHOT) } else { path.to_path_buf() };
    fs::read(&path).with_context(|| format!("reading {}", path.display()))
}

fn run_audit(cmd: AuditCommand) -> Result<ExitCode> {
    match cmd {
        AuditCommand::Verify { snapshot, head } => {
            let ledger = load_ledger(&read_snapshot(&snapshot)?, scheme())?;
            let report = match head {
                Some(p) => {
                    let receipt: HeadReceipt = serde_json::from_str(&fs::read_to_string(p)?)?;
                    verify_against_head(&ledger, &receipt)
                }
                None => verify_chain(&ledger),
            };
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(if report.is_clean() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        AuditCommand::Prove { snapshot, entry_id } => {
            let ledger = load_ledger(&read_snapshot(&snapshot)?, scheme())?;
            let (entry, height) = ledger.entry(entry_id).ok_or_else(|| anyhow!("no entry {entry_id}"))?;
            let block = ledger.block(height).expect("entry height exists");
            let proof = ledger.prove_inclusion(entry_id)?;
            let verified = verify_inclusion(&block.merkle_root, &proof, entry);
            let out = json!({
                "entry_id": entry_id,
                "block_height": height,
                "merkle_root": block.merkle_root,
                "leaf_hash": entry.leaf_hash(),
                "proof": proof,
                "verified": verified,
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(if verified { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        AuditCommand::Report { snapshot, output } => {
            let ledger = load_ledger(&read_snapshot(&snapshot)?, scheme())?;
            let report = audit_ledger(&ledger, None, now_ms());
            output.emit(|| report.to_markdown(), || report.to_json())?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn approver(ws: &Workspace, role: Role, given: Option<String>) -> Result<String> {
    if let Some(a) = given {
        return Ok(a);
    }
    ws.config
        .actors
        .iter()
        .find(|(_, roles)| roles.contains(&role))
        .map(|(a, _)| a.clone())
        .ok_or_else(|| anyhow!("no actor holds {role:?}; pass --actor"))
}

fn role_of(r: ApproverRole) -> (Role, Action) {
    match r {
        ApproverRole::Manager => (Role::Manager, Action::ManagerApprove),
        ApproverRole::Finance => (Role::Finance, Action::FinanceApprove),
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Audit { command } => return run_audit(command),
        Command::Consensus {
            command:
                ConsensusCommand::Sweep {
                    n,
                    f,
                    seeds,
                    behavior,
                    n_minus_f,
                },
        } => {
            let behavior = match behavior {
                FaultBehavior::Equivocate => Behavior::Equivocate,
                FaultBehavior::Withhold => Behavior::Withhold,
                FaultBehavior::Censor => Behavior::Censor,
            };
            let mut cfg = SweepConfig::new(n, f, behavior, seeds);
            if n_minus_f {
                cfg.rule = QuorumRule::NMinusF(f);
            }
            println!("{}", serde_json::to_string_pretty(&sweep(&cfg, scheme()))?);
        }
        Command::Cost {
            command: CostCommand::Table { gas, profiles, output },
        } => {
            let profiles = match profiles {
                Some(p) => load_profiles(&fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?)?,
                None => reference_profiles(),
            };
            let table = cost_table(&profiles, gas);
            output.emit(|| table.to_markdown(), || table.to_json())?;
        }
        Command::Datagen {
            n,
            fraud_rate,
            seed,
            out,
        } => {
            let generated = datagen::generate(&GeneratorConfig {
                n_rows: n,
                fraud_rate,
                seed,
                ..GeneratorConfig::default()
            })?;
            let file = fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            datagen::write_csv(&generated.dataset, io::BufWriter::new(file))?;
            eprintln!(
                "wrote {} rows ({} fraud) to {}",
                generated.dataset.len(),
                generated.dataset.positives(),
                out.display()
            );
        }
        Command::Attack {
            command:
                AttackCommand::Run {
                    scenario: Scenario::Insider,
                    mode,
                    seed,
                    model,
                    output,
                },
        } => {
            let mode = match mode {
                Mode::Traditional => AttackMode::Traditional,
                Mode::Ledger => AttackMode::Ledger,
                Mode::LedgerTamper => AttackMode::LedgerTamper,
            };
            let outcome = run_insider_attack(&model.detector()?, mode, seed)?;
            output.emit(|| outcome.to_markdown(), || outcome.to_json())?;
        }
        Command::Replay {
            days,
            rate,
            anomaly_rate,
            seed,
            model,
            output,
        } => {
            let report = replay_workload(&model.detector()?, days, rate, anomaly_rate, seed)?;
            output.emit(|| report.to_markdown(), || report.to_json())?;
        }
        Command::Sensitivity { rates, seed, output } => {
            let report = run_sensitivity(&rates, seed)?;
            output.emit(|| report.to_markdown(), || report.to_json())?;
        }
        Command::Bench { n, seed, model, output } => {
            let report = bench(&model.detector()?, n, seed)?;
            output.emit(|| report.to_markdown(), || report.to_json())?;
        }
        Command::Init {
            dir,
            validators,
            seed,
            actors,
            budgets,
        } => {
            let config = Config {
                validators,
                seed,
                inference_signer: "inference-1".into(),
                actors: parse_actors(&actors)?,
                budgets: parse_budgets(&budgets)?,
            };
            let detector = Detector::standard(seed)?;
            let ws = Workspace::init(&dir, config, detector)?;
            println!(
                "initialized {} with model {}",
                dir.display(),
                ws.server.detector.model_hash.to_hex()
            );
        }
        Command::Submit {
            dir,
            id,
            requester,
            vendor,
            amount,
            budget,
            features,
            suspicious,
            row_seed,
        } => {
            let mut ws = Workspace::open(&dir)?;
            let x = match features {
                Some(x) => x,
                None if suspicious => datagen::suspicious_vendor_payment(amount, row_seed, 0),
                None => sample_row(RowKind::Legit, row_seed, 0),
            };
            let assessment = ws.server.assess(&id, &x)?;
            let score = assessment.score_bps;
            let now = now_ms();
            let state = ws.contract.create_payment(
                PaymentRequest {
                    payment_id: id.clone(),
                    requester,
                    vendor,
                    amount_cents: (amount * 100.0).round() as u64,
                    budget_line: budget,
                    submitted_at: now,
                },
                Some(assessment),
            )?;
            ws.save()?;
            println!("{id}: {state} (fraud score {score} bps)");
        }
        Command::Approve { dir, id, role, actor } => {
            let mut ws = Workspace::open(&dir)?;
            let (role, action) = role_of(role);
            let actor = approver(&ws, role, actor)?;
            let state = ws.contract.transition(&actor, role, &id, action)?;
            ws.save()?;
            println!("{id}: {state}");
        }
        Command::Execute { dir, id, actor } => {
            let mut ws = Workspace::open(&dir)?;
            let result = ws
                .contract
                .transition(&actor, Role::System, &id, Action::BudgetCheck)
                .and_then(|_| ws.contract.transition(&actor, Role::System, &id, Action::Execute));
            // A failed budget check still commits the rejection.
            ws.save()?;
            println!("{id}: {}", result?);
        }
        Command::Reject { dir, id, role, actor } => {
            let mut ws = Workspace::open(&dir)?;
            let (role, _) = role_of(role);
            let actor = approver(&ws, role, actor)?;
            let state = ws.contract.transition(&actor, role, &id, Action::Reject)?;
            ws.save()?;
            println!("{id}: {state}");
        }
        Command::Trail { dir, id, format } => {
            let ws = Workspace::open(&dir)?;
            let trail = ws.contract.decision_trail(&id)?;
            match format {
                Format::Markdown => print!("{}", trail.to_markdown()),
                Format::Json => println!("{}", trail.to_json()),
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn actor_specs() {
        let a = parse_actors(&["mallory:manager+finance".into()]).unwrap();
        assert_eq!(a["mallory"], vec![Role::Manager, Role::Finance]);
        assert!(parse_actors(&["x:boss".into()]).is_err());
        assert_eq!(parse_actors(&[]).unwrap().len(), 4);
    }

    #[test]
    fn budget_specs() {
        assert_eq!(parse_budgets(&["ops=12.5".into()]).unwrap()["ops"], 1250);
        assert!(parse_budgets(&["ops".into()]).is_err());
    }

    #[test]
    fn cli_parses() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
        Cli::try_parse_from(["ledgerguard", "attack", "run", "insider", "--mode", "ledger", "--seed", "7", "--out", "r.md"])
            .unwrap();
        Cli::try_parse_from(["ledgerguard", "sensitivity", "--rates", "0.001,0.047,0.05"]).unwrap();
        Cli::try_parse_from(["ledgerguard", "replay", "--days", "30", "--rate", "267", "--seed", "1"]).unwrap();
        Cli::try_parse_from(["ledgerguard", "consensus", "sweep", "--n", "4", "--f", "1", "--seeds", "1000"]).unwrap();
    }
}
