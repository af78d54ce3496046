//! Zero-shot, few-shot and instruction prompts rendered as chat messages.
//!
//! Retrieved passages go into the final user message as a numbered
//! `<documents>` block labelled with chunk ids, in retrieval rank order,
//! followed by the question. Without context the final user message is the
//! question itself.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Chunk, QaPair};
use crate::sampling::sample_indices;
use crate::store::IndexEntry;

/// Default number of few-shot exemplars.
pub const DEFAULT_FEW_SHOT_K: usize = 3;

const DEFAULT_INSTRUCTION: &str = include_str!("../assets/prompts/instruction.txt");
const DEFAULT_CONTEXT_PREAMBLE: &str = include_str!("../assets/prompts/context_preamble.txt");
const DEFAULT_QUESTION_LABEL: &str = include_str!("../assets/prompts/question_label.txt");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("few-shot prompting needs at least one exemplar")]
    NoExemplars,
    #[error("instruction prompting needs a non-empty instruction")]
    EmptyInstruction,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("exemplar pool is empty")]
    EmptyPool,
    #[error("cannot draw {k} exemplars from a pool of {pool}")]
    PoolTooSmall { k: usize, pool: usize },
    #[error("exemplar '{0}' is part of the evaluation set")]
    Leakage(String),
    #[error("malformed prompt: {0}")]
    Malformed(String),
    #[error("cannot read template {path}: {source}")]
    Template {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = PromptError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

/// A complete message list for one chat-completion call.
///
/// `question` keeps the user's original question next to the messages, since
/// the final user message may also carry retrieved context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub messages: Vec<Message>,
    pub question: String,
}

impl RenderedPrompt {
    pub fn final_user_message(&self) -> Option<&str> {
        self.messages
            .last()
            .filter(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }

    /// Non-empty, an optional leading system message, then strictly
    /// alternating user/assistant turns ending on a user turn.
    pub fn validate(&self) -> Result<()> {
        let body = match self.messages.first() {
            None => return Err(PromptError::Malformed("no messages".into())),
            Some(m) if m.role == Role::System => &self.messages[1..],
            Some(_) => &self.messages[..],
        };
        if body.is_empty() {
            return Err(PromptError::Malformed("no user message".into()));
        }
        for (i, m) in body.iter().enumerate() {
            let want = if i % 2 == 0 { Role::User } else { Role::Assistant };
            if m.role != want {
                return Err(PromptError::Malformed(format!(
                    "message {} should be {want:?}, found {:?}",
                    i + 1,
                    m.role
                )));
            }
        }
        if body.len() % 2 == 0 {
            return Err(PromptError::Malformed("last message must come from the user".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PromptMethod {
    ZeroShot,
    FewShot { exemplars: Vec<QaPair> },
    Instruction { instruction_text: String },
}

impl PromptMethod {
    /// Instruction prompting with the shipped persona text.
    pub fn default_instruction() -> Self {
        PromptMethod::Instruction {
            instruction_text: PromptTemplates::default().instruction,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            PromptMethod::ZeroShot => "Zero-shot",
            PromptMethod::FewShot { .. } => "Few-shot",
            PromptMethod::Instruction { .. } => "Instruction-based",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PromptMethod::FewShot { exemplars } if exemplars.is_empty() => Err(PromptError::NoExemplars),
            PromptMethod::Instruction { instruction_text } if instruction_text.trim().is_empty() => {
                Err(PromptError::EmptyInstruction)
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for PromptMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A retrieved passage as shown to the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextPassage {
    pub chunk_id: String,
    pub text: String,
}

impl From<&Chunk> for ContextPassage {
    fn from(c: &Chunk) -> Self {
        Self {
            chunk_id: c.chunk_id.clone(),
            text: c.text.clone(),
        }
    }
}

impl From<&IndexEntry> for ContextPassage {
    fn from(e: &IndexEntry) -> Self {
        Self {
            chunk_id: e.chunk_id.clone(),
            text: e.text.clone(),
        }
    }
}

/// Overridable prompt text. A template directory may hold any of
/// `instruction.txt`, `context_preamble.txt` and `question_label.txt`;
/// missing files keep the shipped defaults.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub instruction: String,
    pub context_preamble: String,
    pub question_label: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            instruction: DEFAULT_INSTRUCTION.trim_end().to_string(),
            context_preamble: DEFAULT_CONTEXT_PREAMBLE.trim_end().to_string(),
            question_label: DEFAULT_QUESTION_LABEL.trim_end().to_string(),
        }
    }
}

impl PromptTemplates {
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut t = Self::default();
        for (name, slot) in [
            ("instruction.txt", &mut t.instruction),
            ("context_preamble.txt", &mut t.context_preamble),
            ("question_label.txt", &mut t.question_label),
        ] {
            let path = dir.join(name);
            if path.exists() {
                *slot = std::fs::read_to_string(&path)
                    .map_err(|source| PromptError::Template {
                        path: path.display().to_string(),
                        source,
                    })?
                    .trim_end()
                    .to_string();
            }
        }
        Ok(t)
    }

    fn final_user_content(&self, question: &str, context: &[ContextPassage]) -> String {
        if context.is_empty() {
            return question.to_string();
        }
        let mut out = String::new();
        out.push_str(&self.context_preamble);
        out.push_str("\n<documents>\n");
        for (i, passage) in context.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&format!("[{}] chunk_id={}\n{}\n", i + 1, passage.chunk_id, passage.text));
        }
        out.push_str("</documents>\n\n");
        out.push_str(&self.question_label);
        out.push(' ');
        out.push_str(question);
        out
    }
}

/// Renders with the shipped templates.
pub fn render(method: &PromptMethod, question: &str, context: &[ContextPassage]) -> Result<RenderedPrompt> {
    render_with(&PromptTemplates::default(), method, question, context)
}

pub fn render_with(
    templates: &PromptTemplates,
    method: &PromptMethod,
    question: &str,
    context: &[ContextPassage],
) -> Result<RenderedPrompt> {
    if question.trim().is_empty() {
        return Err(PromptError::EmptyQuestion);
    }
    method.validate()?;
    let mut messages = Vec::new();
    match method {
        PromptMethod::ZeroShot => {}
        PromptMethod::FewShot { exemplars } => {
            for ex in exemplars {
                messages.push(Message::new(Role::User, &ex.question));
                messages.push(Message::new(Role::Assistant, &ex.reference_answer));
            }
        }
        PromptMethod::Instruction { instruction_text } => {
            messages.push(Message::new(Role::System, instruction_text));
        }
    }
    messages.push(Message::new(Role::User, templates.final_user_content(question, context)));
    Ok(RenderedPrompt {
        messages,
        question: question.to_string(),
    })
}

/// Draws `k` exemplars from `pool` without replacement.
///
/// Fails if any pool entry shares a `qa_id` with `held_out`, so evaluation
/// questions can never leak into a prompt.
pub fn exemplar_select(pool: &[QaPair], k: usize, seed: u64, held_out: &HashSet<String>) -> Result<Vec<QaPair>> {
    if k == 0 {
        return Err(PromptError::ZeroK);
    }
    if pool.is_empty() {
        return Err(PromptError::EmptyPool);
    }
    if let Some(leak) = pool.iter().find(|p| held_out.contains(&p.qa_id)) {
        return Err(PromptError::Leakage(leak.qa_id.clone()));
    }
    if k > pool.len() {
        return Err(PromptError::PoolTooSmall { k, pool: pool.len() });
    }
    Ok(sample_indices(pool.len(), k, seed)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect())
}

/// Pool entries whose ids are not held out.
pub fn disjoint_pool(pool: &[QaPair], held_out: &HashSet<String>) -> Vec<QaPair> {
    pool.iter().filter(|p| !held_out.contains(&p.qa_id)).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qa(id: &str) -> QaPair {
        QaPair {
            qa_id: id.into(),
            question: format!("question {id}?"),
            reference_answer: format!("answer {id}."),
            source_url: None,
        }
    }

    #[test]
    fn zero_shot_is_question_alone() {
        let p = render(&PromptMethod::ZeroShot, "What is sabr?", &[]).unwrap();
        assert_eq!(p.messages, vec![Message::new(Role::User, "What is sabr?")]);
        p.validate().unwrap();
    }

    #[test]
    fn few_shot_pairs_in_order() {
        let method = PromptMethod::FewShot {
            exemplars: vec![qa("1"), qa("2")],
        };
        let p = render(&method, "What is sabr?", &[]).unwrap();
        let roles: Vec<_> = p.messages.iter().map(|m| m.role).collect();
        assert_eq!(
            roles,
            vec![Role::User, Role::Assistant, Role::User, Role::Assistant, Role::User]
        );
        assert_eq!(p.messages[0].content, "question 1?");
        assert_eq!(p.messages[3].content, "answer 2.");
        assert_eq!(p.final_user_message(), Some("What is sabr?"));
        p.validate().unwrap();
    }

    #[test]
    fn instruction_uses_persona_system_message() {
        let p = render(&PromptMethod::default_instruction(), "What is sabr?", &[]).unwrap();
        assert_eq!(p.messages[0].role, Role::System);
        assert!(p.messages[0]
            .content
            .starts_with("As an empathetic, intelligent chatbot"));
        assert!(p.messages[0]
            .content
            .ends_with("Present your structured response employing Islamic principles."));
    }

    #[test]
    fn context_block_in_rank_order() {
        let ctx = vec![
            ContextPassage {
                chunk_id: "h#2".into(),
                text: "second-best".into(),
            },
            ContextPassage {
                chunk_id: "h#1".into(),
                text: "worse".into(),
            },
        ];
        let p = render(&PromptMethod::ZeroShot, "Why  pray?", &ctx).unwrap();
        let last = p.final_user_message().unwrap();
        let first = last.find("[1] chunk_id=h#2").unwrap();
        let second = last.find("[2] chunk_id=h#1").unwrap();
        assert!(first < second);
        assert!(last.contains("<documents>") && last.contains("</documents>"));
        assert!(last.ends_with("Question: Why  pray?"));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            render(&PromptMethod::ZeroShot, "  ", &[]),
            Err(PromptError::EmptyQuestion)
        ));
        assert!(matches!(
            render(&PromptMethod::FewShot { exemplars: vec![] }, "q", &[]),
            Err(PromptError::NoExemplars)
        ));
        assert!(matches!(
            render(
                &PromptMethod::Instruction {
                    instruction_text: " ".into()
                },
                "q",
                &[]
            ),
            Err(PromptError::EmptyInstruction)
        ));
    }

    #[test]
    fn validate_rejects_bad_shapes() {
        let bad = RenderedPrompt {
            messages: vec![Message::new(Role::User, "a"), Message::new(Role::User, "b")],
            question: "b".into(),
        };
        assert!(bad.validate().is_err());
        let ends_assistant = RenderedPrompt {
            messages: vec![Message::new(Role::User, "a"), Message::new(Role::Assistant, "b")],
            question: "a".into(),
        };
        assert!(ends_assistant.validate().is_err());
    }

    #[test]
    fn exemplar_selection_is_seeded() {
        let pool: Vec<_> = (0..10).map(|i| qa(&i.to_string())).collect();
        let none = HashSet::new();
        let a = exemplar_select(&pool, 3, 1, &none).unwrap();
        let b = exemplar_select(&pool, 3, 1, &none).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert!(matches!(
            exemplar_select(&pool, 11, 1, &none),
            Err(PromptError::PoolTooSmall { k: 11, pool: 10 })
        ));
        assert!(matches!(exemplar_select(&pool, 0, 1, &none), Err(PromptError::ZeroK)));
    }

    #[test]
    fn leakage_is_rejected_and_filtered_pools_stay_disjoint() {
        let pool: Vec<_> = (0..30).map(|i| qa(&i.to_string())).collect();
        for seed in 0..100u64 {
            let held_out: HashSet<String> = sample_indices(30, 10, seed + 1000)
                .into_iter()
                .map(|i| i.to_string())
                .collect();
            assert!(matches!(
                exemplar_select(&pool, 3, seed, &held_out),
                Err(PromptError::Leakage(_))
            ));
            let clean = disjoint_pool(&pool, &held_out);
            let picked = exemplar_select(&clean, 3, seed, &held_out).unwrap();
            assert!(picked.iter().all(|p| !held_out.contains(&p.qa_id)));
        }
    }

    #[test]
    fn templates_override_from_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("question_label.txt"), "Q:\n").unwrap();
        let t = PromptTemplates::from_dir(dir.path()).unwrap();
        assert_eq!(t.question_label, "Q:");
        assert_eq!(t.instruction, PromptTemplates::default().instruction);
        let ctx = [ContextPassage {
            chunk_id: "c".into(),
            text: "t".into(),
        }];
        let p = render_with(&t, &PromptMethod::ZeroShot, "why?", &ctx).unwrap();
        assert!(p.final_user_message().unwrap().ends_with("Q: why?"));
    }
}
