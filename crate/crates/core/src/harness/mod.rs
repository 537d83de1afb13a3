//! Executable experiments: the insider attack and its audit, workload
//! replay, fraud-rate sensitivity, and latency benchmarks.

mod attack;
mod audit;
mod experiments;
mod replay;

use std::sync::Arc;

use thiserror::Error;

use crate::crypto::{Digest32, SignatureScheme};
use crate::datagen::{self, DatagenError, GeneratorConfig};
use crate::detector::{self, Dataset, DetectorError, TrainParams, TreeEnsemble};
use crate::explain::{self, Background, ExplainError, Explanation};
use crate::ledger::SnapshotError;
use crate::workflow::{FraudAssessment, PaymentContract, WorkflowError};

pub use attack::{run_insider_attack, AttackMode, AttackOutcome, ATTACK_AMOUNT_USD, ATTACK_PAYMENTS, FLAG_BPS, MAX_DRAWS};
pub use audit::{
    audit_ledger, audit_log, audit_snapshot, AlertFact, ApprovalFact, ApproverCluster, AuditReport, AuditSource,
    LogKind, LogRecord, MutableLogStore, VerificationStatus,
};
pub use experiments::{
    bench, run_sensitivity, sensitivity_rows, BenchReport, SensitivityReport, SensitivityRow, END_TO_END_REFERENCE_PER_MIN,
    PREDICT_GATE_MS,
};
pub use replay::{replay_workload, ReplayReport, ReplaySummary, Timings};

/// Alerts are assessments at or above this score.
pub const ALERT_BPS: u16 = 5_000;
/// Rows in the Shapley background.
pub const BACKGROUND_SIZE: usize = 100;
/// Published latency references (milliseconds).
pub const PREDICT_REFERENCE_MS: f64 = 1.2;
pub const SHAPLEY_REFERENCE_MS: f64 = 18.5;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("could not construct a flagged payment {payment} after {draws} draws")]
    ScenarioUnsatisfiable { payment: usize, draws: u32 },
    #[error("benchmark needs at least 100 instances, got {0}")]
    TooFewInstances(usize),
    #[error("fraud rate {0} outside (0, 1)")]
    InvalidRate(f64),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
}

/// A trained model with the background its explanations are computed
/// against.
#[derive(Debug, Clone)]
pub struct Detector {
    pub model: TreeEnsemble,
    pub background: Background,
    pub model_hash: Digest32,
}

impl Detector {
    pub fn train(data: &Dataset, params: &TrainParams, seed: u64) -> Result<Self, HarnessError> {
        let model = detector::train(data, params, seed)?;
        let background = Background::sample(data, BACKGROUND_SIZE, seed);
        let model_hash = model.model_hash();
        Ok(Detector {
            model,
            background,
            model_hash,
        })
    }

    /// Reassembles a persisted model and background.
    pub fn from_parts(model: TreeEnsemble, background: Background) -> Self {
        let model_hash = model.model_hash();
        Detector {
            model,
            background,
            model_hash,
        }
    }

    /// Default parameters on the default synthetic set drawn with `seed`.
    pub fn standard(seed: u64) -> Result<Self, HarnessError> {
        let generated = datagen::generate(&GeneratorConfig {
            seed,
            ..GeneratorConfig::default()
        })?;
        Self::train(&generated.dataset, &TrainParams::default(), seed)
    }

    pub fn score(&self, x: &[f64]) -> Result<f64, HarnessError> {
        Ok(self.model.predict(x)?)
    }

    pub fn explain(&self, x: &[f64]) -> Result<Explanation, HarnessError> {
        Ok(explain::shapley_exact(&self.model, x, &self.background)?)
    }
}

/// Scores and explains payments and signs the result with its key.
#[derive(Debug, Clone)]
pub struct InferenceServer {
    pub detector: Arc<Detector>,
    pub signer: String,
    scheme: Arc<dyn SignatureScheme>,
}

impl InferenceServer {
    pub fn new(detector: Arc<Detector>, signer: &str, scheme: Arc<dyn SignatureScheme>) -> Self {
        InferenceServer {
            detector,
            signer: signer.to_string(),
            scheme,
        }
    }

    /// Commits this server's key for its model on the contract.
    pub fn register(&self, contract: &mut PaymentContract) -> Result<u64, WorkflowError> {
        contract.register_model(self.detector.model_hash, &self.signer, self.scheme.public_key(&self.signer))
    }

    /// A signed assessment of `x` for `payment_id`.
    pub fn assess(&self, payment_id: &str, x: &[f64]) -> Result<FraudAssessment, HarnessError> {
        let score = self.detector.score(x)?;
        let explanation = self.detector.explain(x)?;
        Ok(self.sign(payment_id, &explanation, score)?)
    }

    /// Signs a precomputed explanation.
    pub fn sign(&self, payment_id: &str, explanation: &Explanation, score: f64) -> Result<FraudAssessment, ExplainError> {
        let fixed = explain::encode_fixed_point(explanation, score)?;
        Ok(FraudAssessment::new(
            payment_id,
            self.detector.model_hash,
            &fixed,
            explanation.background_ref,
            explanation.instance_ref,
        )
        .sign(&self.signer, self.scheme.as_ref()))
    }

    /// Adds this server's signature to an assessment another committee
    /// member produced.
    pub fn cosign(&self, assessment: FraudAssessment) -> FraudAssessment {
        assessment.sign(&self.signer, self.scheme.as_ref())
    }
}
