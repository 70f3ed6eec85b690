//! Critic backed by a chat model: a free-text reasoning query followed by a
//! JSON summarization conversation, once for the gripper and once for the
//! action.

use super::backend::{ChatBackend, ChatRequest, Message, Slot};
use super::prompts::{build_prompts, gripper_prompt, GRIPPER_CORRECTIVE_TEXT, GRIPPER_SUMMARIZE_TEXT, GRIPPER_SYSTEM};
use super::summarize::{summarize, Expect, Summary};
use super::{Answer, Critic, CriticQuery, Exchange};
use crate::error::{CoreError, Result};
use crate::language::GripDirective;
use crate::proposal::{CandidateSet, Choice};

pub const DEFAULT_TEMPERATURE: f64 = 0.5;

pub struct LlmCritic<B> {
    backend: B,
    temperature: f64,
}

impl<B: ChatBackend> LlmCritic<B> {
    pub fn new(backend: B) -> Self {
        Self { backend, temperature: DEFAULT_TEMPERATURE }
    }

    pub fn with_temperature(backend: B, temperature: f64) -> Self {
        Self { backend, temperature }
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    fn ask(&self, system: &str, prompt: &str, purpose: &str, exchanges: &mut Vec<Exchange>) -> Result<Vec<Message>> {
        let messages = vec![Message::system(system), Message::user(prompt)];
        let request = ChatRequest { slot: Slot::Selection, messages: messages.clone(), temperature: self.temperature };
        let reply = self.backend.complete(&request)?;
        exchanges.push(Exchange { purpose: purpose.to_string(), prompt: prompt.to_string(), reply: reply.clone() });
        let mut conversation = messages;
        conversation.push(Message::assistant(reply));
        Ok(conversation)
    }
}

impl<B: ChatBackend> Critic for LlmCritic<B> {
    fn id(&self) -> String {
        self.backend.id()
    }

    fn query_gripper(&self, q: &CriticQuery) -> Result<Answer<GripDirective>> {
        if !q.has_feedback() {
            return Ok(Answer::direct(GripDirective::Unchanged));
        }
        let mut exchanges = Vec::new();
        let conversation = self.ask(GRIPPER_SYSTEM, &gripper_prompt(&q.correction.text)?, "gripper", &mut exchanges)?;
        let s = summarize(
            &self.backend,
            conversation,
            GRIPPER_SUMMARIZE_TEXT,
            GRIPPER_CORRECTIVE_TEXT,
            Expect::Grip,
            self.temperature,
            "gripper_summary",
            &mut exchanges,
        )?;
        match s.value {
            Summary::Grip(g) => Ok(Answer { value: g, exchanges, attempts: s.attempts }),
            other => Err(CoreError::Relabel(format!("gripper summary has the wrong shape: {other:?}"))),
        }
    }

    fn query_action(&self, q: &CriticQuery, set: &CandidateSet) -> Result<Answer<Choice>> {
        let bundle = build_prompts(q.env.task(), q.obs, set, q.correction, q.has_feedback())?;
        let mut exchanges = Vec::new();
        let conversation = self.ask(&bundle.system_text, &bundle.action_prompt, "action", &mut exchanges)?;
        let expect =
            if set.method.is_onedim() { Expect::Index { count: set.candidates.len() } } else { Expect::List };
        let s = summarize(
            &self.backend,
            conversation,
            &bundle.summarize_prompt,
            &bundle.corrective_prompt,
            expect,
            self.temperature,
            "action_summary",
            &mut exchanges,
        )?;
        let value = match s.value {
            Summary::Index(i) => Choice::Index(i),
            Summary::Action(a) => Choice::Action(a),
            Summary::Grip(_) => return Err(CoreError::Relabel("action summary has the wrong shape".into())),
        };
        Ok(Answer { value, exchanges, attempts: s.attempts })
    }
}
