//! The critic: given a state, the policy's action and a verbal correction,
//! decide the gripper command and pick (or write) a better action.
//!
//! Every critic answers two queries, gripper first; the action query then
//! sees candidates that carry the resolved grip.

pub mod backend;
pub mod llm;
pub mod oracle;
pub mod prompts;
pub mod summarize;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use backend::{ChatBackend, ChatRequest, Message, ReplayBackend, Role, ScriptedBackend, Slot};
pub use llm::LlmCritic;
pub use oracle::OracleCritic;
pub use prompts::{build_prompts, format_int_array, PromptBundle};

use crate::env::Env;
use crate::error::Result;
use crate::language::GripDirective;
use crate::proposal::{propose_with, resolve_final_action, CandidateSet, Choice, ProposalMethod, DEFAULT_MAGNITUDE};
use crate::types::{Action, FeedbackStyle, Observation, VerbalCorrection};

/// One prompt/reply pair kept for audit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub purpose: String,
    pub prompt: String,
    pub reply: String,
}

/// Everything a critic may look at for one query.
#[derive(Debug, Clone, Copy)]
pub struct CriticQuery<'a> {
    pub env: &'a Env,
    pub obs: &'a Observation,
    pub correction: &'a VerbalCorrection,
    /// Whether prompts carry the correction at all (off in the no-feedback
    /// ablation).
    pub include_feedback: bool,
    /// The policy's action at the queried state.
    pub original_action: Action,
}

impl CriticQuery<'_> {
    /// True when the query carries usable correction text.
    pub fn has_feedback(&self) -> bool {
        self.include_feedback && self.correction.style != FeedbackStyle::None && !self.correction.text.trim().is_empty()
    }
}

/// A critic's answer to one query plus its audit trail.
#[derive(Debug, Clone, PartialEq)]
pub struct Answer<T> {
    pub value: T,
    pub exchanges: Vec<Exchange>,
    /// Summarization attempts used (zero when no summarization ran).
    pub attempts: usize,
}

impl<T> Answer<T> {
    pub fn direct(value: T) -> Self {
        Self { value, exchanges: Vec::new(), attempts: 0 }
    }
}

pub trait Critic: Send + Sync {
    fn id(&self) -> String;

    /// Reads the gripper decision carried by the correction.
    fn query_gripper(&self, q: &CriticQuery) -> Result<Answer<GripDirective>>;

    /// Picks a candidate (one-dimensional methods) or writes a full action.
    fn query_action(&self, q: &CriticQuery, set: &CandidateSet) -> Result<Answer<Choice>>;
}

impl<C: Critic + ?Sized> Critic for Arc<C> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn query_gripper(&self, q: &CriticQuery) -> Result<Answer<GripDirective>> {
        (**self).query_gripper(q)
    }

    fn query_action(&self, q: &CriticQuery, set: &CandidateSet) -> Result<Answer<Choice>> {
        (**self).query_action(q, set)
    }
}

/// How candidates are generated for the action query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposalConfig {
    pub method: ProposalMethod,
    pub magnitude: i32,
    /// Adds roll and pitch candidates (12 instead of 8).
    pub include_roll_pitch: bool,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self { method: ProposalMethod::OnedimPlusOriginal, magnitude: DEFAULT_MAGNITUDE, include_roll_pitch: false }
    }
}

/// Result of the full two-query workflow at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticVerdict {
    /// Gripper query outcome.
    pub grip: GripDirective,
    /// Grip used for the candidates and the final action.
    pub resolved_grip: i32,
    pub choice: Choice,
    pub candidates: CandidateSet,
    /// Final action for the queried state.
    pub action: Action,
    pub exchanges: Vec<Exchange>,
    pub backend: String,
    /// Summarization attempts of the gripper and action queries.
    pub attempts: [usize; 2],
    /// Whether a gripper query was actually issued.
    pub gripper_queried: bool,
}

impl CriticVerdict {
    /// Applies this verdict to another step's original action.
    pub fn resolve_for(&self, original: &Action) -> Result<Action> {
        resolve_final_action(&self.candidates, original, &self.choice, self.resolved_grip)
    }
}

/// Runs the gripper query (unless `pinned_grip` is given or the query has
/// no correction text) and then the action query.
pub fn critique(
    critic: &dyn Critic,
    q: &CriticQuery,
    proposal: &ProposalConfig,
    pinned_grip: Option<GripDirective>,
) -> Result<CriticVerdict> {
    let mut exchanges = Vec::new();
    let (grip, grip_attempts, gripper_queried) = match pinned_grip {
        Some(g) => (g, 0, false),
        None if !q.has_feedback() => (GripDirective::Unchanged, 0, false),
        None => {
            let a = critic.query_gripper(q)?;
            exchanges.extend(a.exchanges);
            (a.value, a.attempts, true)
        }
    };
    let resolved_grip = grip.value().unwrap_or(q.original_action.grip);
    let candidates = propose_with(
        proposal.method,
        q.original_action,
        resolved_grip,
        proposal.magnitude,
        proposal.include_roll_pitch,
    )?;
    let answer = critic.query_action(q, &candidates)?;
    exchanges.extend(answer.exchanges);
    let action = resolve_final_action(&candidates, &q.original_action, &answer.value, resolved_grip)?;
    Ok(CriticVerdict {
        grip,
        resolved_grip,
        choice: answer.value,
        candidates,
        action,
        exchanges,
        backend: critic.id(),
        attempts: [grip_attempts, answer.attempts],
        gripper_queried,
    })
}

/// Shared tallies of critic invocations.
#[derive(Debug, Default)]
pub struct QueryCounter {
    gripper: AtomicUsize,
    selection: AtomicUsize,
}

impl QueryCounter {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn gripper(&self) -> usize {
        self.gripper.load(Ordering::SeqCst)
    }

    pub fn selection(&self) -> usize {
        self.selection.load(Ordering::SeqCst)
    }
}

/// Counts gripper and action-selection invocations of an inner critic.
pub struct CountingCritic<C> {
    inner: C,
    counter: Arc<QueryCounter>,
}

impl<C: Critic> CountingCritic<C> {
    pub fn new(inner: C, counter: Arc<QueryCounter>) -> Self {
        Self { inner, counter }
    }

    pub fn counter(&self) -> &Arc<QueryCounter> {
        &self.counter
    }
}

impl<C: Critic> Critic for CountingCritic<C> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn query_gripper(&self, q: &CriticQuery) -> Result<Answer<GripDirective>> {
        self.counter.gripper.fetch_add(1, Ordering::SeqCst);
        self.inner.query_gripper(q)
    }

    fn query_action(&self, q: &CriticQuery, set: &CandidateSet) -> Result<Answer<Choice>> {
        self.counter.selection.fetch_add(1, Ordering::SeqCst);
        self.inner.query_action(q, set)
    }
}
