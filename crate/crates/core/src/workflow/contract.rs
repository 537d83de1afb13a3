use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::records::{AttestationRecord, FraudAssessment, LedgerRecord, PaymentRequest, TransitionRecord};
use super::{Action, GasSchedule, Role, WorkflowError, WorkflowState};
use crate::codec::DecodeError;
use crate::consensus::Consortium;
use crate::crypto::{Digest32, PublicKey, SignatureScheme};
use crate::ledger::{CrashPoint, Ledger, LedgerEntry, TrustConfig};

/// Author of entries the contract writes on its own behalf (assessments and
/// attestations). Transitions are signed by the acting user.
pub const CONTRACT_AUTHOR: &str = "contract";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetLine {
    pub budget_id: String,
    pub limit: u64,
    pub spent: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Approval {
    pub actor: String,
    pub action: Action,
    pub timestamp: u64,
}

/// A payment and everything the contract knows about it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaymentRecord {
    pub request: PaymentRequest,
    pub state: WorkflowState,
    pub assessment: FraudAssessment,
    /// Ledger entries touching this payment, in commit order.
    pub entry_ids: Vec<u64>,
    pub gas_used: u64,
    pub approvals: Vec<Approval>,
    pub reason: Option<String>,
}

impl PaymentRecord {
    /// Actors who gave both the manager and the finance approval.
    pub fn dual_role_approvers(&self) -> Vec<String> {
        let by = |a: Action| -> BTreeSet<&str> {
            self.approvals
                .iter()
                .filter(|x| x.action == a)
                .map(|x| x.actor.as_str())
                .collect()
        };
        by(Action::ManagerApprove)
            .intersection(&by(Action::FinanceApprove))
            .map(|s| s.to_string())
            .collect()
    }
}

pub struct PaymentContract {
    ledger: Ledger,
    consortium: Consortium,
    gas: GasSchedule,
    actors: BTreeMap<String, BTreeSet<Role>>,
    budgets: BTreeMap<String, BudgetLine>,
    models: BTreeMap<Digest32, BTreeMap<String, PublicKey>>,
    current_model: Option<Digest32>,
    inference_quorum: usize,
    payments: BTreeMap<String, PaymentRecord>,
    now: u64,
}

impl PaymentContract {
    /// A fresh contract on an empty ledger with `n_validators` honest
    /// validators.
    pub fn new(scheme: Arc<dyn SignatureScheme>, n_validators: usize, seed: u64) -> Self {
        let trust = TrustConfig::with_simulated_validators(scheme.clone(), n_validators);
        Self::with_parts(Ledger::new(trust), Consortium::honest(scheme, n_validators, seed))
    }

    /// Wraps an existing ledger. Call [`PaymentContract::rebuild`] after
    /// adding actors and budgets to load committed state.
    pub fn with_parts(mut ledger: Ledger, consortium: Consortium) -> Self {
        let key = ledger.scheme().public_key(CONTRACT_AUTHOR);
        ledger.register_author(CONTRACT_AUTHOR, key);
        PaymentContract {
            ledger,
            consortium,
            gas: GasSchedule::STANDARD,
            actors: BTreeMap::new(),
            budgets: BTreeMap::new(),
            models: BTreeMap::new(),
            current_model: None,
            inference_quorum: 1,
            payments: BTreeMap::new(),
            now: 0,
        }
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn into_ledger(self) -> Ledger {
        self.ledger
    }

    pub fn gas_schedule(&self) -> &GasSchedule {
        &self.gas
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    /// Sets the simulated clock (unix milliseconds). Never moves backwards.
    pub fn set_time(&mut self, ms: u64) {
        self.now = self.now.max(ms);
    }

    pub fn add_actor(&mut self, id: &str, roles: &[Role]) {
        let key = self.ledger.scheme().public_key(id);
        self.ledger.register_author(id, key);
        self.actors.entry(id.to_string()).or_default().extend(roles);
    }

    pub fn roles(&self, id: &str) -> Option<&BTreeSet<Role>> {
        self.actors.get(id)
    }

    pub fn add_budget(&mut self, budget_id: &str, limit: u64) {
        self.budgets.insert(
            budget_id.to_string(),
            BudgetLine {
                budget_id: budget_id.to_string(),
                limit,
                spent: 0,
            },
        );
    }

    pub fn budget(&self, budget_id: &str) -> Option<&BudgetLine> {
        self.budgets.get(budget_id)
    }

    pub fn budgets(&self) -> impl Iterator<Item = &BudgetLine> {
        self.budgets.values()
    }

    /// Distinct registered signatures required on an assessment. 1 for a
    /// single inference server, 2 for a 2-of-3 committee.
    pub fn set_inference_quorum(&mut self, k: usize) {
        self.inference_quorum = k.max(1);
    }

    pub fn current_model(&self) -> Option<Digest32> {
        self.current_model
    }

    pub fn payment(&self, payment_id: &str) -> Option<&PaymentRecord> {
        self.payments.get(payment_id)
    }

    pub fn payments(&self) -> impl Iterator<Item = &PaymentRecord> {
        self.payments.values()
    }

    /// Arms a one-shot crash inside the next ledger append.
    pub fn arm_crash(&mut self, point: CrashPoint) {
        self.ledger.arm_crash(point);
    }

    fn commit(&mut self, entries: Vec<LedgerEntry>) -> Result<(), WorkflowError> {
        self.consortium.commit(&mut self.ledger, entries, self.now)?;
        Ok(())
    }

    fn entry(&self, offset: u64, record: &LedgerRecord, author: &str) -> LedgerEntry {
        LedgerEntry::new_signed(
            self.ledger.next_entry_id() + offset,
            record.kind(),
            record.payload(),
            author,
            self.now,
            self.ledger.scheme(),
        )
    }

    /// Binds `signer`'s key to `model_hash` and makes that model current.
    pub fn register_model(
        &mut self,
        model_hash: Digest32,
        signer: &str,
        key: PublicKey,
    ) -> Result<u64, WorkflowError> {
        if self.models.get(&model_hash).is_some_and(|m| m.contains_key(signer)) {
            return Err(WorkflowError::DuplicateRegistration {
                model: model_hash.to_hex(),
                signer: signer.to_string(),
            });
        }
        let record = LedgerRecord::Attestation(AttestationRecord {
            model_hash,
            signer: signer.to_string(),
            public_key: key,
            registered_at: self.now,
        });
        let entry = self.entry(0, &record, CONTRACT_AUTHOR);
        let id = entry.entry_id;
        self.commit(vec![entry])?;
        self.models.entry(model_hash).or_default().insert(signer.to_string(), key);
        self.current_model = Some(model_hash);
        Ok(id)
    }

    fn check_assessment(&self, request: &PaymentRequest, a: &FraudAssessment) -> Result<(), WorkflowError> {
        if a.payment_id != request.payment_id {
            return Err(WorkflowError::InvalidAssessment(format!(
                "assessment is for {}, request is {}",
                a.payment_id, request.payment_id
            )));
        }
        a.validate().map_err(WorkflowError::InvalidAssessment)?;
        if self.current_model != Some(a.model_hash) {
            return Err(WorkflowError::UnregisteredModel(a.model_hash.to_hex()));
        }
        let keys = &self.models[&a.model_hash];
        let body = a.signed_body();
        let mut valid = BTreeSet::new();
        for s in &a.inference_signatures {
            let ok = keys
                .get(&s.signer)
                .is_some_and(|k| self.ledger.scheme().verify(&s.signer, k, &body, &s.signature));
            if !ok {
                return Err(WorkflowError::BadInferenceSignature);
            }
            valid.insert(s.signer.as_str());
        }
        if valid.len() < self.inference_quorum {
            return Err(WorkflowError::InsufficientInferenceQuorum {
                valid: valid.len(),
                required: self.inference_quorum,
            });
        }
        Ok(())
    }

    /// Records the assessment and the creation in one block.
    pub fn create_payment(
        &mut self,
        request: PaymentRequest,
        assessment: Option<FraudAssessment>,
    ) -> Result<WorkflowState, WorkflowError> {
        let assessment = assessment.ok_or(WorkflowError::MissingAssessment)?;
        if request.amount_cents == 0 {
            return Err(WorkflowError::InvalidRequest("amount must be positive".into()));
        }
        if !self
            .actors
            .get(&request.requester)
            .is_some_and(|r| r.contains(&Role::Requester))
        {
            return Err(WorkflowError::InvalidRequest(format!(
                "{} is not a registered requester",
                request.requester
            )));
        }
        if self.payments.contains_key(&request.payment_id) {
            return Err(WorkflowError::DuplicatePayment(request.payment_id));
        }
        if !self.budgets.contains_key(&request.budget_line) {
            return Err(WorkflowError::UnknownBudget(request.budget_line));
        }
        self.check_assessment(&request, &assessment)?;

        let gas = self.gas.submission();
        let transition = TransitionRecord {
            payment_id: request.payment_id.clone(),
            from: None,
            to: WorkflowState::Created,
            action: None,
            actor: request.requester.clone(),
            role: Role::Requester,
            timestamp: self.now,
            gas,
            reason: None,
            request: Some(request.clone()),
        };
        let e0 = self.entry(0, &LedgerRecord::Assessment(assessment.clone()), CONTRACT_AUTHOR);
        let e1 = self.entry(1, &LedgerRecord::Transition(transition), &request.requester);
        let ids = vec![e0.entry_id, e1.entry_id];
        self.commit(vec![e0, e1])?;
        self.payments.insert(
            request.payment_id.clone(),
            PaymentRecord {
                request,
                state: WorkflowState::Created,
                assessment,
                entry_ids: ids,
                gas_used: gas,
                approvals: Vec::new(),
                reason: None,
            },
        );
        Ok(WorkflowState::Created)
    }

    /// Applies `action` by `actor` acting as `role`. A failed budget check
    /// (at BudgetCheck or again at Execute) commits a rejection and returns
    /// [`WorkflowError::BudgetExceeded`].
    pub fn transition(
        &mut self,
        actor: &str,
        role: Role,
        payment_id: &str,
        action: Action,
    ) -> Result<WorkflowState, WorkflowError> {
        let record = self
            .payments
            .get(payment_id)
            .ok_or_else(|| WorkflowError::UnknownPayment(payment_id.to_string()))?;
        let holds_role = self.actors.get(actor).is_some_and(|r| r.contains(&role));
        let is_requester = action != Action::Cancel || record.request.requester == actor;
        if !(holds_role && action.permits(role) && is_requester) {
            return Err(WorkflowError::NotAuthorized {
                actor: actor.to_string(),
                role,
                action,
            });
        }
        let from = record.state;
        let mut to = from.next(action).ok_or(WorkflowError::InvalidTransition { from, action })?;

        let amount = record.request.amount_cents;
        let budget = &self.budgets[&record.request.budget_line];
        let mut overdraft = None;
        if matches!(action, Action::BudgetCheck | Action::Execute) && budget.spent + amount > budget.limit {
            to = WorkflowState::Rejected;
            overdraft = Some(WorkflowError::BudgetExceeded {
                budget: budget.budget_id.clone(),
                spent: budget.spent,
                amount,
                limit: budget.limit,
            });
        }

        let gas = self.gas.of(action);
        let transition = TransitionRecord {
            payment_id: payment_id.to_string(),
            from: Some(from),
            to,
            action: Some(action),
            actor: actor.to_string(),
            role,
            timestamp: self.now,
            gas,
            reason: overdraft.as_ref().map(|e| e.to_string()),
            request: None,
        };
        let entry = self.entry(0, &LedgerRecord::Transition(transition.clone()), actor);
        let id = entry.entry_id;
        self.commit(vec![entry])?;

        // Committed; now mirror it in memory.
        let record = self.payments.get_mut(payment_id).expect("checked above");
        apply(record, &transition, id);
        if to == WorkflowState::Executed {
            let line = self.budgets.get_mut(&record.request.budget_line).expect("checked at create");
            line.spent += amount;
        }
        match overdraft {
            Some(e) => Err(e),
            None => Ok(to),
        }
    }

    /// Reloads payments, spend and model registrations from the ledger.
    pub fn rebuild(&mut self) -> Result<(), ReplayError> {
        let state = replay(&self.ledger)?;
        for line in self.budgets.values_mut() {
            line.spent = state.spent.get(&line.budget_id).copied().unwrap_or(0);
        }
        self.payments = state.payments;
        self.models = state.models;
        self.current_model = state.current_model;
        if let Some(last) = self.ledger.blocks().last() {
            self.now = self.now.max(last.block_time);
        }
        Ok(())
    }
}

fn apply(record: &mut PaymentRecord, t: &TransitionRecord, entry_id: u64) {
    record.state = t.to;
    record.gas_used += t.gas;
    record.entry_ids.push(entry_id);
    if t.reason.is_some() {
        record.reason = t.reason.clone();
    }
    if let Some(a @ (Action::ManagerApprove | Action::FinanceApprove)) = t.action {
        record.approvals.push(Approval {
            actor: t.actor.clone(),
            action: a,
            timestamp: t.timestamp,
        });
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("entry {entry_id}: {source}")]
    Decode { entry_id: u64, source: DecodeError },
    #[error("entry {entry_id}: {reason}")]
    Inconsistent { entry_id: u64, reason: String },
}

/// Contract state reconstructed purely from committed blocks.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayedState {
    pub payments: BTreeMap<String, PaymentRecord>,
    /// Executed amounts per budget line.
    pub spent: BTreeMap<String, u64>,
    pub models: BTreeMap<Digest32, BTreeMap<String, PublicKey>>,
    pub current_model: Option<Digest32>,
    /// StateTransition entries applied, creations included.
    pub transitions: usize,
}

/// Rebuilds contract state from the ledger, checking that every recorded
/// transition is legal from the state the previous entries left behind.
pub fn replay(ledger: &Ledger) -> Result<ReplayedState, ReplayError> {
    let mut st = ReplayedState::default();
    let mut pending: BTreeMap<String, (u64, FraudAssessment)> = BTreeMap::new();
    for entry in ledger.blocks().iter().flat_map(|b| &b.entries) {
        let id = entry.entry_id;
        let bad = |reason: String| ReplayError::Inconsistent { entry_id: id, reason };
        let record = LedgerRecord::from_entry(entry).map_err(|source| ReplayError::Decode { entry_id: id, source })?;
        match record {
            LedgerRecord::Attestation(a) => {
                st.models.entry(a.model_hash).or_default().insert(a.signer, a.public_key);
                st.current_model = Some(a.model_hash);
            }
            LedgerRecord::Assessment(a) => {
                pending.insert(a.payment_id.clone(), (id, a));
            }
            LedgerRecord::Transition(t) => {
                st.transitions += 1;
                if entry.author != t.actor {
                    return Err(bad(format!("signed by {} but records actor {}", entry.author, t.actor)));
                }
                match (t.from, t.action) {
                    (None, None) => {
                        let request = t.request.clone().ok_or_else(|| bad("creation without request".into()))?;
                        if t.to != WorkflowState::Created || st.payments.contains_key(&t.payment_id) {
                            return Err(bad(format!("invalid creation of {}", t.payment_id)));
                        }
                        let (aid, assessment) = pending
                            .remove(&t.payment_id)
                            .ok_or_else(|| bad(format!("{} created without assessment", t.payment_id)))?;
                        st.payments.insert(
                            t.payment_id.clone(),
                            PaymentRecord {
                                request,
                                state: WorkflowState::Created,
                                assessment,
                                entry_ids: vec![aid, id],
                                gas_used: t.gas,
                                approvals: Vec::new(),
                                reason: None,
                            },
                        );
                    }
                    (Some(from), Some(action)) => {
                        let p = st
                            .payments
                            .get_mut(&t.payment_id)
                            .ok_or_else(|| bad(format!("transition of unknown payment {}", t.payment_id)))?;
                        let budget_failure = matches!(action, Action::BudgetCheck | Action::Execute)
                            && t.to == WorkflowState::Rejected
                            && t.reason.is_some();
                        if p.state != from || (from.next(action) != Some(t.to) && !budget_failure) {
                            return Err(bad(format!("{action} from {} to {} is not legal", p.state, t.to)));
                        }
                        if !action.permits(t.role) {
                            return Err(bad(format!("{action} recorded with role {:?}", t.role)));
                        }
                        apply(p, &t, id);
                        if t.to == WorkflowState::Executed {
                            *st.spent.entry(p.request.budget_line.clone()).or_default() += p.request.amount_cents;
                        }
                    }
                    _ => return Err(bad("malformed transition".into())),
                }
            }
        }
    }
    if let Some((payment_id, (entry_id, _))) = pending.into_iter().next() {
        return Err(ReplayError::Inconsistent {
            entry_id,
            reason: format!("assessment for {payment_id} has no creation"),
        });
    }
    Ok(st)
}
