use serde::{Deserialize, Serialize};

use super::{Action, Role, WorkflowState};
use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::crypto::{Digest32, PublicKey, Signature, SignatureScheme};
use crate::explain::{FeatureContribution, FixedPointExplanation, TOP_FEATURES};
use crate::ledger::{EntryKind, LedgerEntry};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaymentRequest {
    pub payment_id: String,
    pub requester: String,
    pub vendor: String,
    /// US cents.
    pub amount_cents: u64,
    pub budget_line: String,
    /// Unix milliseconds.
    pub submitted_at: u64,
}

impl Canonical for PaymentRequest {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(&self.payment_id)
            .str(&self.requester)
            .str(&self.vendor)
            .u64(self.amount_cents)
            .str(&self.budget_line)
            .u64(self.submitted_at);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(PaymentRequest {
            payment_id: dec.string()?,
            requester: dec.string()?,
            vendor: dec.string()?,
            amount_cents: dec.u64()?,
            budget_line: dec.string()?,
            submitted_at: dec.u64()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceSignature {
    pub signer: String,
    pub signature: Signature,
}

/// A model's verdict on one payment, in the integer form stored on-chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FraudAssessment {
    pub payment_id: String,
    pub model_hash: Digest32,
    pub score_bps: u16,
    /// Micro-units of margin.
    pub base_value: i64,
    pub top_features: Vec<FeatureContribution>,
    pub background_ref: Digest32,
    pub instance_ref: Digest32,
    pub inference_signatures: Vec<InferenceSignature>,
}

impl FraudAssessment {
    /// An unsigned assessment.
    pub fn new(
        payment_id: impl Into<String>,
        model_hash: Digest32,
        fixed: &FixedPointExplanation,
        background_ref: Digest32,
        instance_ref: Digest32,
    ) -> Self {
        FraudAssessment {
            payment_id: payment_id.into(),
            model_hash,
            score_bps: fixed.score_bps,
            base_value: fixed.base_value,
            top_features: fixed.top_features.clone(),
            background_ref,
            instance_ref,
            inference_signatures: Vec::new(),
        }
    }

    /// The bytes an inference server signs: everything except the
    /// signatures themselves.
    pub fn signed_body(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.raw(b"ledgerguard/assessment/v1");
        self.encode_body(&mut enc);
        enc.finish()
    }

    fn encode_body(&self, enc: &mut Encoder) {
        enc.str(&self.payment_id);
        self.model_hash.encode(enc);
        enc.u16(self.score_bps).i64(self.base_value).seq(&self.top_features, |e, f| {
            e.u16(f.feature_id).i64(f.contribution);
        });
        self.background_ref.encode(enc);
        self.instance_ref.encode(enc);
    }

    /// Appends `signer`'s signature over the body.
    pub fn sign(mut self, signer: &str, scheme: &dyn SignatureScheme) -> Self {
        let signature = scheme.sign(signer, &self.signed_body());
        self.inference_signatures.push(InferenceSignature {
            signer: signer.to_string(),
            signature,
        });
        self
    }

    /// Shape checks: score range, exactly five features in descending
    /// magnitude with no repeated feature.
    pub fn validate(&self) -> Result<(), String> {
        if self.score_bps > 10_000 {
            return Err(format!("score_bps {} above 10000", self.score_bps));
        }
        if self.top_features.len() != TOP_FEATURES {
            return Err(format!("{} top features, expected {TOP_FEATURES}", self.top_features.len()));
        }
        for w in self.top_features.windows(2) {
            if w[0].contribution.unsigned_abs() < w[1].contribution.unsigned_abs() {
                return Err("top features not in descending magnitude".into());
            }
        }
        let mut ids: Vec<u16> = self.top_features.iter().map(|f| f.feature_id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != TOP_FEATURES {
            return Err("repeated feature in top features".into());
        }
        Ok(())
    }

    pub fn probability(&self) -> f64 {
        f64::from(self.score_bps) / 10_000.0
    }
}

impl Canonical for FraudAssessment {
    fn encode(&self, enc: &mut Encoder) {
        self.encode_body(enc);
        enc.seq(&self.inference_signatures, |e, s| {
            e.str(&s.signer);
            s.signature.encode(e);
        });
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(FraudAssessment {
            payment_id: dec.string()?,
            model_hash: Digest32::decode(dec)?,
            score_bps: dec.u16()?,
            base_value: dec.i64()?,
            top_features: dec.seq(|d| {
                Ok(FeatureContribution {
                    feature_id: d.u16()?,
                    contribution: d.i64()?,
                })
            })?,
            background_ref: Digest32::decode(dec)?,
            instance_ref: Digest32::decode(dec)?,
            inference_signatures: dec.seq(|d| {
                Ok(InferenceSignature {
                    signer: d.string()?,
                    signature: Signature::decode(d)?,
                })
            })?,
        })
    }
}

/// One state change. `from` and `action` are `None` for the submission that
/// creates the payment, which also carries the request itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub payment_id: String,
    pub from: Option<WorkflowState>,
    pub to: WorkflowState,
    pub action: Option<Action>,
    pub actor: String,
    pub role: Role,
    pub timestamp: u64,
    pub gas: u64,
    pub reason: Option<String>,
    pub request: Option<PaymentRequest>,
}

impl Canonical for TransitionRecord {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(&self.payment_id)
            .option(self.from.as_ref(), |e, s| {
                e.u8(*s as u8);
            })
            .u8(self.to as u8)
            .option(self.action.as_ref(), |e, a| {
                e.u8(*a as u8);
            })
            .str(&self.actor)
            .u8(self.role as u8)
            .u64(self.timestamp)
            .u64(self.gas)
            .option(self.reason.as_ref(), |e, r| {
                e.str(r);
            })
            .option(self.request.as_ref(), |e, r| r.encode(e));
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(TransitionRecord {
            payment_id: dec.string()?,
            from: dec.option(|d| WorkflowState::from_tag(d.u8()?))?,
            to: WorkflowState::from_tag(dec.u8()?)?,
            action: dec.option(|d| Action::from_tag(d.u8()?))?,
            actor: dec.string()?,
            role: Role::from_tag(dec.u8()?)?,
            timestamp: dec.u64()?,
            gas: dec.u64()?,
            reason: dec.option(|d| d.string())?,
            request: dec.option(PaymentRequest::decode)?,
        })
    }
}

/// An inference key bound to a model hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttestationRecord {
    pub model_hash: Digest32,
    pub signer: String,
    pub public_key: PublicKey,
    pub registered_at: u64,
}

impl Canonical for AttestationRecord {
    fn encode(&self, enc: &mut Encoder) {
        self.model_hash.encode(enc);
        enc.str(&self.signer);
        self.public_key.encode(enc);
        enc.u64(self.registered_at);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(AttestationRecord {
            model_hash: Digest32::decode(dec)?,
            signer: dec.string()?,
            public_key: PublicKey::decode(dec)?,
            registered_at: dec.u64()?,
        })
    }
}

/// Decoded payload of a contract ledger entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LedgerRecord {
    Assessment(FraudAssessment),
    Transition(TransitionRecord),
    Attestation(AttestationRecord),
}

impl LedgerRecord {
    pub fn kind(&self) -> EntryKind {
        match self {
            LedgerRecord::Assessment(_) => EntryKind::AssessmentRecorded,
            LedgerRecord::Transition(_) => EntryKind::StateTransition,
            LedgerRecord::Attestation(_) => EntryKind::AttestationRegistered,
        }
    }

    pub fn payload(&self) -> Vec<u8> {
        match self {
            LedgerRecord::Assessment(a) => a.to_canonical_bytes(),
            LedgerRecord::Transition(t) => t.to_canonical_bytes(),
            LedgerRecord::Attestation(a) => a.to_canonical_bytes(),
        }
    }

    pub fn from_entry(entry: &LedgerEntry) -> Result<Self, DecodeError> {
        let p = &entry.payload;
        Ok(match entry.kind {
            EntryKind::AssessmentRecorded => LedgerRecord::Assessment(FraudAssessment::from_canonical_bytes(p)?),
            EntryKind::StateTransition => LedgerRecord::Transition(TransitionRecord::from_canonical_bytes(p)?),
            EntryKind::AttestationRegistered => {
                LedgerRecord::Attestation(AttestationRecord::from_canonical_bytes(p)?)
            }
            EntryKind::ApprovalCast => {
                return Err(DecodeError::InvalidTag {
                    what: "contract record kind",
                    tag: entry.kind as u8,
                })
            }
        })
    }

    pub fn payment_id(&self) -> Option<&str> {
        match self {
            LedgerRecord::Assessment(a) => Some(&a.payment_id),
            LedgerRecord::Transition(t) => Some(&t.payment_id),
            LedgerRecord::Attestation(_) => None,
        }
    }
}
