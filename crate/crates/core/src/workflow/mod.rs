//! The payment-approval contract.
//!
//! A seven-state machine over payment requests. Creation requires a signed
//! fraud assessment from a registered model, every state change is a signed
//! ledger entry committed through the validator consortium, and each step is
//! metered in gas. In-memory state is only updated after the ledger commit
//! succeeds, and [`replay`] rebuilds the same state from committed blocks.

mod contract;
mod records;
mod trail;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::DecodeError;
use crate::consensus::ConsensusError;

pub use contract::{replay, Approval, BudgetLine, ReplayError, PaymentContract, PaymentRecord, ReplayedState, CONTRACT_AUTHOR};
pub use records::{
    AttestationRecord, FraudAssessment, InferenceSignature, LedgerRecord, PaymentRequest, TransitionRecord,
};
pub use trail::{DecisionTrail, TrailEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum WorkflowState {
    Created = 1,
    ManagerApproved = 2,
    FinanceApproved = 3,
    BudgetChecked = 4,
    Executed = 5,
    Rejected = 6,
    Cancelled = 7,
}

impl WorkflowState {
    pub const ALL: [WorkflowState; 7] = [
        WorkflowState::Created,
        WorkflowState::ManagerApproved,
        WorkflowState::FinanceApproved,
        WorkflowState::BudgetChecked,
        WorkflowState::Executed,
        WorkflowState::Rejected,
        WorkflowState::Cancelled,
    ];

    pub fn from_tag(tag: u8) -> Result<Self, DecodeError> {
        Self::ALL
            .get(usize::from(tag).wrapping_sub(1))
            .copied()
            .ok_or(DecodeError::InvalidTag { what: "workflow state", tag })
    }

    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            WorkflowState::Executed | WorkflowState::Rejected | WorkflowState::Cancelled
        )
    }

    /// The transition table. `None` when the action is not admitted here.
    pub fn next(self, action: Action) -> Option<WorkflowState> {
        use Action as A;
        use WorkflowState as S;
        match (self, action) {
            (S::Created, A::ManagerApprove) => Some(S::ManagerApproved),
            (S::ManagerApproved, A::FinanceApprove) => Some(S::FinanceApproved),
            (S::FinanceApproved, A::BudgetCheck) => Some(S::BudgetChecked),
            (S::BudgetChecked, A::Execute) => Some(S::Executed),
            (S::Created | S::ManagerApproved | S::FinanceApproved | S::BudgetChecked, A::Reject) => {
                Some(S::Rejected)
            }
            (S::Created | S::ManagerApproved, A::Cancel) => Some(S::Cancelled),
            _ => None,
        }
    }
}

impl fmt::Display for WorkflowState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Actions on an existing payment. Creation is a separate operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum Action {
    ManagerApprove = 1,
    FinanceApprove = 2,
    BudgetCheck = 3,
    Execute = 4,
    Reject = 5,
    Cancel = 6,
}

impl Action {
    pub const ALL: [Action; 6] = [
        Action::ManagerApprove,
        Action::FinanceApprove,
        Action::BudgetCheck,
        Action::Execute,
        Action::Reject,
        Action::Cancel,
    ];

    pub fn from_tag(tag: u8) -> Result<Self, DecodeError> {
        Self::ALL
            .get(usize::from(tag).wrapping_sub(1))
            .copied()
            .ok_or(DecodeError::InvalidTag { what: "action", tag })
    }

    /// Whether `role` may perform this action. Cancel additionally requires
    /// the acting id to be the payment's requester.
    pub fn permits(self, role: Role) -> bool {
        match self {
            Action::ManagerApprove => role == Role::Manager,
            Action::FinanceApprove => role == Role::Finance,
            Action::BudgetCheck | Action::Execute => role == Role::System,
            Action::Reject => matches!(role, Role::Manager | Role::Finance),
            Action::Cancel => role == Role::Requester,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum Role {
    Requester = 1,
    Manager = 2,
    Finance = 3,
    /// The automated budget checker and payment executor.
    System = 4,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Requester, Role::Manager, Role::Finance, Role::System];

    pub fn from_tag(tag: u8) -> Result<Self, DecodeError> {
        Self::ALL
            .get(usize::from(tag).wrapping_sub(1))
            .copied()
            .ok_or(DecodeError::InvalidTag { what: "role", tag })
    }
}

/// Gas units per metered step. The happy path sums to 751,000.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GasSchedule {
    pub create: u64,
    pub assessment_storage: u64,
    pub manager_approve: u64,
    pub finance_approve: u64,
    pub budget_check: u64,
    pub execute: u64,
    pub reject: u64,
    pub cancel: u64,
}

impl GasSchedule {
    pub const STANDARD: GasSchedule = GasSchedule {
        create: 251_000,
        assessment_storage: 120_000,
        manager_approve: 90_000,
        finance_approve: 90_000,
        budget_check: 80_000,
        execute: 120_000,
        reject: 45_000,
        cancel: 45_000,
    };

    /// Create plus on-chain storage of the assessment.
    pub fn submission(&self) -> u64 {
        self.create + self.assessment_storage
    }

    pub fn of(&self, action: Action) -> u64 {
        match action {
            Action::ManagerApprove => self.manager_approve,
            Action::FinanceApprove => self.finance_approve,
            Action::BudgetCheck => self.budget_check,
            Action::Execute => self.execute,
            Action::Reject => self.reject,
            Action::Cancel => self.cancel,
        }
    }

    pub fn happy_path(&self) -> u64 {
        self.submission()
            + [
                Action::ManagerApprove,
                Action::FinanceApprove,
                Action::BudgetCheck,
                Action::Execute,
            ]
            .iter()
            .map(|a| self.of(*a))
            .sum::<u64>()
    }
}

impl Default for GasSchedule {
    fn default() -> Self {
        Self::STANDARD
    }
}

/// Gas for `action` under the standard schedule.
pub fn gas_of(action: Action) -> u64 {
    GasSchedule::STANDARD.of(action)
}

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error("payment submitted without a fraud assessment")]
    MissingAssessment,
    #[error("assessment model {0} is not the registered model")]
    UnregisteredModel(String),
    #[error("inference signature does not verify")]
    BadInferenceSignature,
    #[error("{valid} valid inference signatures, {required} required")]
    InsufficientInferenceQuorum { valid: usize, required: usize },
    #[error("invalid assessment: {0}")]
    InvalidAssessment(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("payment {0} already exists")]
    DuplicatePayment(String),
    #[error("unknown payment {0}")]
    UnknownPayment(String),
    #[error("unknown budget line {0}")]
    UnknownBudget(String),
    #[error("actor {actor} may not {action} as {role:?}")]
    NotAuthorized { actor: String, role: Role, action: Action },
    #[error("{action} is not admitted from {from}")]
    InvalidTransition { from: WorkflowState, action: Action },
    #[error("budget {budget} exceeded: spent {spent} + {amount} > limit {limit}; payment rejected")]
    BudgetExceeded { budget: String, spent: u64, amount: u64, limit: u64 },
    #[error("key for {signer} already registered for model {model}")]
    DuplicateRegistration { model: String, signer: String },
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;

    #[test]
    fn happy_path_gas_is_751k() {
        assert_eq!(GasSchedule::STANDARD.happy_path(), 751_000);
        assert_eq!(GasSchedule::STANDARD.submission(), 371_000);
        assert_eq!(GasSchedule::STANDARD.submission() + gas_of(Action::Reject), 416_000);
        assert_eq!(gas_of(Action::Execute), 120_000);
    }

    #[test]
    fn terminal_states_admit_nothing() {
        for s in WorkflowState::ALL.into_iter().filter(|s| s.is_terminal()) {
            for a in Action::ALL {
                assert_eq!(s.next(a), None, "{s} {a}");
            }
        }
    }

    #[test]
    fn cancel_is_closed_after_finance_approval() {
        assert_eq!(WorkflowState::Created.next(Action::Cancel), Some(WorkflowState::Cancelled));
        assert_eq!(
            WorkflowState::ManagerApproved.next(Action::Cancel),
            Some(WorkflowState::Cancelled)
        );
        assert_eq!(WorkflowState::FinanceApproved.next(Action::Cancel), None);
        assert_eq!(WorkflowState::BudgetChecked.next(Action::Cancel), None);
    }

    /// Every action sequence up to depth 8 from Created; any that ends in
    /// Executed must pass through the four approval states in order.
    #[test]
    fn executed_only_via_the_approval_chain() {
        fn walk(state: WorkflowState, path: &mut Vec<WorkflowState>, depth: usize, hits: &mut usize) {
            if state == WorkflowState::Executed {
                *hits += 1;
                assert_eq!(
                    path,
                    &[
                        WorkflowState::Created,
                        WorkflowState::ManagerApproved,
                        WorkflowState::FinanceApproved,
                        WorkflowState::BudgetChecked,
                        WorkflowState::Executed,
                    ]
                );
            }
            if depth == 8 {
                return;
            }
            for a in Action::ALL {
                if let Some(next) = state.next(a) {
                    path.push(next);
                    walk(next, path, depth + 1, hits);
                    path.pop();
                }
            }
        }
        let mut hits = 0;
        walk(WorkflowState::Created, &mut vec![WorkflowState::Created], 0, &mut hits);
        assert_eq!(hits, 1);
    }

    #[test]
    fn roles_per_action() {
        let allowed: BTreeSet<(Action, Role)> = Action::ALL
            .iter()
            .flat_map(|a| Role::ALL.iter().map(move |r| (*a, *r)))
            .filter(|(a, r)| a.permits(*r))
            .collect();
        let expected: BTreeSet<(Action, Role)> = [
            (Action::ManagerApprove, Role::Manager),
            (Action::FinanceApprove, Role::Finance),
            (Action::BudgetCheck, Role::System),
            (Action::Execute, Role::System),
            (Action::Reject, Role::Manager),
            (Action::Reject, Role::Finance),
            (Action::Cancel, Role::Requester),
        ]
        .into();
        assert_eq!(allowed, expected);
    }

    #[test]
    fn tags_roundtrip() {
        for s in WorkflowState::ALL {
            assert_eq!(WorkflowState::from_tag(s as u8).unwrap(), s);
        }
        for a in Action::ALL {
            assert_eq!(Action::from_tag(a as u8).unwrap(), a);
        }
        assert!(WorkflowState::from_tag(0).is_err());
        assert!(Action::from_tag(7).is_err());
    }
}
