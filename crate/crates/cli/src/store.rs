//! A workflow workspace on disk: the ledger snapshot, its JSON-lines
//! sidecar, the deployment config and the attested model.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use ledgerguard::consensus::Consortium;
use ledgerguard::crypto::{KeyedHashScheme, SignatureScheme};
use ledgerguard::detector::TreeEnsemble;
use ledgerguard::explain::Background;
use ledgerguard::harness::{Detector, InferenceServer};
use ledgerguard::ledger::{encode_snapshot, load_ledger, sidecar_jsonl};
use ledgerguard::workflow::{PaymentContract, Role};
use serde::{Deserialize, Serialize};

pub const SNAPSHOT: &str = "ledger.snap";
const SIDECAR: &str = "ledger.jsonl";
const CONFIG: &str = "config.json";
const MODEL: &str = "model.json";
const BACKGROUND: &str = "background.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Config {
    pub validators: usize,
    pub seed: u64,
    pub inference_signer: String,
    pub actors: BTreeMap<String, Vec<Role>>,
    /// Budget limits in cents.
    pub budgets: BTreeMap<String, u64>,
}

pub fn scheme() -> Arc<dyn SignatureScheme> {
    Arc::new(KeyedHashScheme::simulation())
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

pub struct Workspace {
    dir: PathBuf,
    pub config: Config,
    pub contract: PaymentContract,
    pub server: InferenceServer,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

impl Workspace {
    /// Creates a workspace, trains the model and registers it on a fresh
    /// ledger.
    pub fn init(dir: &Path, config: Config, detector: Detector) -> Result<Self> {
        if dir.join(SNAPSHOT).exists() {
            bail!("{} already holds a ledger", dir.display());
        }
        fs::create_dir_all(dir)?;
        fs::write(dir.join(CONFIG), serde_json::to_string_pretty(&config)?)?;
        fs::write(dir.join(MODEL), detector.model.to_canonical_json())?;
        fs::write(dir.join(BACKGROUND), serde_json::to_string(&detector.background)?)?;
        let mut contract = PaymentContract::new(scheme(), config.validators, config.seed);
        contract.set_time(now_ms());
        let server = InferenceServer::new(Arc::new(detector), &config.inference_signer, scheme());
        let mut ws = Workspace {
            dir: dir.to_path_buf(),
            config,
            contract,
            server,
        };
        ws.apply_config();
        ws.server.register(&mut ws.contract)?;
        ws.save()?;
        Ok(ws)
    }

    pub fn open(dir: &Path) -> Result<Self> {
        let config: Config = read_json(&dir.join(CONFIG))?;
        let model = TreeEnsemble::from_json(&fs::read_to_string(dir.join(MODEL))?)?;
        let background: Background = read_json(&dir.join(BACKGROUND))?;
        let bytes = fs::read(dir.join(SNAPSHOT)).context("no ledger here; run `init` first")?;
        let ledger = load_ledger(&bytes, scheme())?;
        let consortium = Consortium::honest(scheme(), config.validators, config.seed);
        let contract = PaymentContract::with_parts(ledger, consortium);
        let server = InferenceServer::new(
            Arc::new(Detector::from_parts(model, background)),
            &config.inference_signer,
            scheme(),
        );
        let mut ws = Workspace {
            dir: dir.to_path_buf(),
            config,
            contract,
            server,
        };
        ws.apply_config();
        ws.contract.rebuild()?;
        ws.contract.set_time(now_ms());
        Ok(ws)
    }

    fn apply_config(&mut self) {
        for (actor, roles) in &self.config.actors {
            self.contract.add_actor(actor, roles);
        }
        for (budget, limit) in &self.config.budgets {
            self.contract.add_budget(budget, *limit);
        }
    }

    pub fn save(&self) -> Result<()> {
        let ledger = self.contract.ledger();
        let tmp = self.dir.join(format!("{SNAPSHOT}.tmp"));
        fs::write(&tmp, encode_snapshot(ledger))?;
        fs::rename(&tmp, self.dir.join(SNAPSHOT))?;
        fs::write(self.dir.join(SIDECAR), sidecar_jsonl(ledger))?;
        Ok(())
    }
}
