//! Prompt rendering. Every text sent to a critic comes from a committed
//! template under `templates/`, filled by `{{name}}` placeholder
//! substitution.

use serde::{Deserialize, Serialize};

use crate::env::TaskSpec;
use crate::error::{CoreError, Result};
use crate::proposal::{CandidateSet, ProposalMethod};
use crate::types::{Action, Observation, VerbalCorrection};

macro_rules! template {
    ($name:literal) => {
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/templates/", $name))
    };
}

pub const GRIPPER_SYSTEM: &str = template!("gripper_system.txt");
pub const ACTION_SYSTEM: &str = template!("action_system.txt");
const MANUAL: &str = template!("manual.txt");
const POINTERS: &str = template!("pointers.txt");
const GRIPPER_QUERY: &str = template!("gripper_query.txt");
const GRIPPER_SUMMARIZE: &str = template!("gripper_summarize.txt");
const GRIPPER_CORRECTIVE: &str = template!("gripper_corrective.txt");
/// Follow-up asking for the gripper decision as JSON.
pub const GRIPPER_SUMMARIZE_TEXT: &str = GRIPPER_SUMMARIZE;
/// Follow-up sent after a malformed gripper summary.
pub const GRIPPER_CORRECTIVE_TEXT: &str = GRIPPER_CORRECTIVE;
const ACTION_CONTEXT: &str = template!("action_context.txt");
const OUTPUT_ONEDIM: &str = template!("output_onedim.txt");
const OUTPUT_LLM_GIVES: &str = template!("output_llm_gives.txt");
const OUTPUT_LLM_EDITS: &str = template!("output_llm_edits.txt");
const FEEDBACK_INSTRUCTIONS: &str = template!("feedback_instructions.txt");
const TASK_CONTEXT: &str = template!("task_context.txt");
const STATE_INPUT: &str = template!("state_input.txt");
const CHOICES_ONEDIM: &str = template!("choices_onedim.txt");
const CHOICES_LLM_EDITS: &str = template!("choices_llm_edits.txt");
const CORRECTION_BLOCK: &str = template!("correction_block.txt");
const SUMMARIZE_INDEX: &str = template!("summarize_index.txt");
const CORRECTIVE_INDEX: &str = template!("corrective_index.txt");
const SUMMARIZE_LIST: &str = template!("summarize_list.txt");
const CORRECTIVE_LIST: &str = template!("corrective_list.txt");

/// Formats integers the way numpy prints an integer array: every element
/// right-aligned to the widest one, separated by single spaces.
pub fn format_int_array(values: &[i32]) -> String {
    let width = values.iter().map(|v| v.to_string().len()).max().unwrap_or(0);
    let cells: Vec<String> = values.iter().map(|v| format!("{v:>width$}")).collect();
    format!("[{}]", cells.join(" "))
}

/// Substitutes `{{key}}` placeholders. Every placeholder in the template
/// must be supplied and every supplied value must be used; substituted
/// values are never rescanned.
pub fn render(template: &str, values: &[(&str, &str)]) -> Result<String> {
    let mut out = String::with_capacity(template.len() + 256);
    let mut used = vec![false; values.len()];
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        let close = after
            .find("}}")
            .ok_or_else(|| CoreError::Template("unterminated placeholder".to_string()))?;
        let key = &after[..close];
        let (i, (_, value)) = values
            .iter()
            .enumerate()
            .find(|(_, (k, _))| *k == key)
            .ok_or_else(|| CoreError::Template(format!("no value for placeholder {key:?}")))?;
        used[i] = true;
        out.push_str(value);
        rest = &after[close + 2..];
    }
    out.push_str(rest);
    if let Some(i) = used.iter().position(|u| !u) {
        return Err(CoreError::Template(format!("unused value for {:?}", values[i].0)));
    }
    Ok(out)
}

/// Template body without its trailing newline, for nesting.
fn body(t: &str) -> &str {
    t.strip_suffix('\n').unwrap_or(t)
}

fn fill(t: &str, values: &[(&str, &str)]) -> Result<String> {
    render(body(t), values)
}

/// Joins rendered sections with blank lines and terminates with a newline.
fn document(sections: &[String]) -> String {
    let mut s = sections.iter().filter(|s| !s.is_empty()).cloned().collect::<Vec<_>>().join("\n\n");
    s.push('\n');
    s
}

/// Title-cases an object name for the state block ("pea can" → "Pea Can").
fn title(name: &str) -> String {
    name.split(' ')
        .map(|w| {
            let mut c = w.chars();
            match c.next() {
                Some(f) => f.to_uppercase().chain(c).collect(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Every text used for one critic query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub gripper_system: String,
    pub system_text: String,
    /// Empty when the prompt carries no correction.
    pub gripper_prompt: String,
    pub gripper_summarize_prompt: String,
    pub gripper_corrective_prompt: String,
    pub action_prompt: String,
    pub summarize_prompt: String,
    pub corrective_prompt: String,
}

impl PromptBundle {
    /// System text followed by the action prompt, as one document.
    pub fn action_document(&self) -> String {
        format!("{}\n\n{}", body(&self.system_text), self.action_prompt)
    }
}

/// The gripper query for a correction.
pub fn gripper_prompt(correction: &str) -> Result<String> {
    Ok(document(&[fill(
        GRIPPER_QUERY,
        &[("manual", body(MANUAL)), ("pointers", body(POINTERS)), ("correction", correction.trim())],
    )?]))
}

/// Lines of the "Input:" block.
pub fn state_lines(task: &TaskSpec, obs: &Observation) -> Result<Vec<String>> {
    let mut lines = vec![
        format!("Robot Position: {}", format_int_array(&obs.ee_position)),
        format!("Robot Angles: {}", format_int_array(&obs.ee_angles)),
    ];
    for spec in &task.objects {
        let pose = obs
            .object(&spec.name)
            .ok_or_else(|| CoreError::Template(format!("observation has no object {:?}", spec.name)))?;
        lines.push(format!("{} Position: {}", title(&spec.name), format_int_array(&pose.position)));
        lines.push(format!("{} Angles: {}", title(&spec.name), format_int_array(&pose.angles)));
    }
    lines.push(format!("Gripper State: {}", format_int_array(&[obs.gripper_state])));
    Ok(lines)
}

/// Renders all prompts for a query at `obs`.
///
/// The "Gripper State" line always shows the observed gripper; the grip
/// resolved by the gripper query reaches the action prompt through the
/// candidates, each of which carries it.
pub fn build_prompts(
    task: &TaskSpec,
    obs: &Observation,
    candidates: &CandidateSet,
    correction: &VerbalCorrection,
    include_feedback: bool,
) -> Result<PromptBundle> {
    let manual = body(MANUAL);
    let pointers = body(POINTERS);
    let include_feedback = include_feedback && !correction.text.trim().is_empty();

    let gripper_prompt = if include_feedback {
        gripper_prompt(&correction.text)?
    } else {
        String::new()
    };

    let output = match candidates.method {
        ProposalMethod::Onedim | ProposalMethod::OnedimPlusOriginal => body(OUTPUT_ONEDIM),
        ProposalMethod::LlmGives => body(OUTPUT_LLM_GIVES),
        ProposalMethod::LlmEdits => body(OUTPUT_LLM_EDITS),
    };
    let context = fill(ACTION_CONTEXT, &[("manual", manual), ("output_instructions", output)])?;
    let feedback = if include_feedback { fill(FEEDBACK_INSTRUCTIONS, &[("pointers", pointers)])? } else { String::new() };

    let stages: Vec<String> =
        task.prompt.stages.iter().enumerate().map(|(i, s)| format!("{}. {s}", i + 1)).collect();
    let task_block = fill(TASK_CONTEXT, &[("summary", &task.prompt.summary), ("stages", &stages.join("\n\n"))])?;
    let state = fill(STATE_INPUT, &[("state", &state_lines(task, obs)?.join("\n\n"))])?;

    let choices = match candidates.method {
        ProposalMethod::Onedim | ProposalMethod::OnedimPlusOriginal => {
            if candidates.candidates.is_empty() {
                return Err(CoreError::Template("one-dimensional method with no candidates".into()));
            }
            let rows: Vec<String> = candidates
                .candidates
                .iter()
                .enumerate()
                .map(|(i, a)| format!("Action {i}: {}", format_int_array(&a.to_array())))
                .collect();
            fill(CHOICES_ONEDIM, &[("choices", &rows.join("\n\n"))])?
        }
        ProposalMethod::LlmGives => String::new(),
        ProposalMethod::LlmEdits => fill(
            CHOICES_LLM_EDITS,
            &[("original", &format_int_array(&candidates.original_action.to_array()))],
        )?,
    };
    let correction_block = if include_feedback {
        fill(CORRECTION_BLOCK, &[("correction", correction.text.trim())])?
    } else {
        String::new()
    };

    let action_prompt = document(&[context, feedback, task_block, state, choices, correction_block]);
    let (summarize, corrective) = if candidates.method.is_onedim() {
        (SUMMARIZE_INDEX, CORRECTIVE_INDEX)
    } else {
        (SUMMARIZE_LIST, CORRECTIVE_LIST)
    };
    Ok(PromptBundle {
        gripper_system: GRIPPER_SYSTEM.to_string(),
        system_text: ACTION_SYSTEM.to_string(),
        gripper_prompt,
        gripper_summarize_prompt: GRIPPER_SUMMARIZE.to_string(),
        gripper_corrective_prompt: GRIPPER_CORRECTIVE.to_string(),
        action_prompt,
        summarize_prompt: summarize.to_string(),
        corrective_prompt: corrective.to_string(),
    })
}

/// Text form of an action for the edit prompt and logs.
pub fn format_action(a: &Action) -> String {
    format_int_array(&a.to_array())
}
